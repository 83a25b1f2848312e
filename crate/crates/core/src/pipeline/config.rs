use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::depth::DepthConfig;
use crate::par::Parallelism;
use crate::trackopt::OptimizerConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackConfig {
    /// Query points closer than this to a retained track are duplicates.
    pub dedup_radius_px: f64,
}

impl Default for TrackConfig {
    fn default() -> Self {
        Self { dedup_radius_px: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    /// Fraction of each source video excluded at both ends.
    pub trim_frac: f64,
    /// Trail length above which a track counts as moving, pixels.
    pub m_threshold: f64,
    pub min_matches: u32,
    /// Time between the frames compared by the cross-fade test.
    pub cross_fade_gap_s: f64,
    pub static_translation_m: f64,
    pub static_rotation_deg: f64,
    /// Banned semantic classes, one per line. Built-in list when absent.
    pub banned_classes: Option<PathBuf>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            trim_frac: 0.05,
            m_threshold: 20.0,
            min_matches: 5,
            cross_fade_gap_s: 5.0,
            static_translation_m: 0.05,
            static_rotation_deg: 1.0,
            banned_classes: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportConfig {
    /// Tracks before optimization, next to the optimized ones.
    pub raw_tracks: bool,
    /// One CSV of per-step objective values per track.
    pub loss_traces: bool,
    /// Point cloud of the visible points at `ply_frame`.
    pub ply: bool,
    pub ply_frame: u32,
    /// Polylines of all tracks.
    pub trajectories_ply: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    /// Worker threads; 0 means all cores. Falls back to the environment.
    pub threads: Option<usize>,
    /// Clips processed concurrently by a corpus run.
    pub clip_workers: Option<usize>,
    pub export: ExportConfig,
}

/// Every tunable of a pipeline run. Serialized as TOML with one table per
/// section; missing keys take their defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub depth: DepthConfig,
    pub tracks: TrackConfig,
    pub optimizer: OptimizerConfig,
    pub filters: FilterConfig,
    pub pipeline: RunConfig,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        let cfg = Self::from_toml_str(&text).map_err(|source| ConfigError::Parse { path: path.into(), source })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn parallelism(&self) -> Parallelism {
        match self.pipeline.threads {
            Some(n) => Parallelism::from_threads(n),
            None => Parallelism::from_env(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let d = &self.depth;
        for (name, v) in [
            ("depth.baseline_m", d.baseline_m),
            ("depth.max_depth_m", d.max_depth_m),
            ("depth.grad_threshold", d.grad_threshold),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [
            ("depth.max_vertical_flow_px", d.flow.max_vertical_flow_px),
            ("depth.max_cycle_error_px", d.flow.max_cycle_error_px),
        ] {
            if !(v >= 0.0) {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        if !(self.tracks.dedup_radius_px >= 0.0) {
            return bad("tracks.dedup_radius_px must be non-negative".into());
        }
        self.optimizer.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let f = &self.filters;
        if !(0.0..0.5).contains(&f.trim_frac) {
            return bad(format!("filters.trim_frac must be in [0, 0.5), got {}", f.trim_frac));
        }
        if !(f.m_threshold >= 0.0
            && f.cross_fade_gap_s > 0.0
            && f.static_translation_m > 0.0
            && f.static_rotation_deg > 0.0)
        {
            return bad("filter thresholds must be positive".into());
        }
        let paths = [
            ("filters.banned_classes", f.banned_classes.as_ref()),
            ("pipeline.input_dir", self.pipeline.input_dir.as_ref()),
        ];
        for (name, p) in paths {
            if let Some(p) = p {
                if !p.exists() {
                    return bad(format!("{name}: {} does not exist", p.display()));
                }
            }
        }
        Ok(())
    }
}
