use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::geometry::CameraModel;

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("manifest {clip_id}: {reason}")]
    Invalid { clip_id: String, reason: String },
}

/// Per-frame depth inputs of one view, one file per clip frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DepthInput {
    /// Rectified disparity grids, pixels.
    Disparity { files: Vec<PathBuf> },
    /// Stereo flow components and the producer's cycle error.
    Flow { flow_x: Vec<PathBuf>, flow_y: Vec<PathBuf>, cycle_error: Vec<PathBuf> },
}

impl DepthInput {
    fn lists(&self) -> Vec<(&'static str, &[PathBuf])> {
        match self {
            DepthInput::Disparity { files } => vec![("disparity", files)],
            DepthInput::Flow { flow_x, flow_y, cycle_error } => {
                vec![("flow_x", flow_x), ("flow_y", flow_y), ("cycle_error", cycle_error)]
            }
        }
    }
}

/// One perspective view of the clip: its camera, its 2D tracks and its depth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewInput {
    pub model: CameraModel,
    pub tracks: PathBuf,
    pub depth: DepthInput,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelInput {
    /// Class names, one per line, indexed by label id.
    pub classes: PathBuf,
    /// Camera the label maps were computed in.
    pub model: CameraModel,
    /// One label map per frame; `null` where none exists.
    pub files: Vec<Option<PathBuf>>,
}

/// Inputs of one clip. Relative paths are resolved against the manifest's
/// directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipManifest {
    pub clip_id: String,
    /// Half-open frame range of the clip within its source video.
    pub frame_range: [u32; 2],
    pub frame_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_frame_count: Option<u32>,
    pub poses: PathBuf,
    pub views: Vec<ViewInput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<LabelInput>,
    /// `frame_a,frame_b,count` rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matches: Option<PathBuf>,
    /// Grayscale frames for the built-in matcher, used when `matches` is absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames: Option<Vec<PathBuf>>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ClipManifest {
    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let text = std::fs::read_to_string(path).map_err(|source| ManifestError::Io { path: path.into(), source })?;
        let mut m: Self =
            serde_json::from_str(&text).map_err(|source| ManifestError::Json { path: path.into(), source })?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), ManifestError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n").map_err(|source| ManifestError::Io { path: path.into(), source })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    pub fn n_frames(&self) -> usize {
        self.frame_range[1].saturating_sub(self.frame_range[0]) as usize
    }

    fn invalid(&self, reason: String) -> ManifestError {
        ManifestError::Invalid { clip_id: self.clip_id.clone(), reason }
    }

    /// Structural checks that need no file access, except for depth inputs,
    /// which [`Self::validate_depth`] covers.
    pub fn validate(&self) -> Result<(), ManifestError> {
        let id_ok = !self.clip_id.is_empty()
            && self.clip_id != "."
            && self.clip_id != ".."
            && !self.clip_id.starts_with('.')
            && !self.clip_id.contains(['/', '\\']);
        if !id_ok {
            return Err(self.invalid("clip_id must be a plain, non-hidden file name".into()));
        }
        if self.n_frames() < 2 {
            return Err(self.invalid(format!("frame range {:?} has fewer than 2 frames", self.frame_range)));
        }
        if !(self.frame_rate > 0.0 && self.frame_rate.is_finite()) {
            return Err(self.invalid("frame_rate must be positive".into()));
        }
        if let Some(total) = self.source_frame_count {
            if self.frame_range[1] > total {
                return Err(self.invalid(format!("frame range ends past the source length {total}")));
            }
        }
        if self.views.is_empty() {
            return Err(self.invalid("no views".into()));
        }
        let n = self.n_frames();
        if let Some(labels) = &self.labels {
            if labels.files.len() != n {
                return Err(self.invalid(format!("{} label entries for {n} frames", labels.files.len())));
            }
        }
        if let Some(frames) = &self.frames {
            if frames.len() != n {
                return Err(self.invalid(format!("{} frame images for {n} frames", frames.len())));
            }
        }
        Ok(())
    }

    /// Every view lists one existing depth file per frame for each input.
    pub fn validate_depth(&self) -> Result<(), ManifestError> {
        let n = self.n_frames();
        for (vi, view) in self.views.iter().enumerate() {
            for (kind, files) in view.depth.lists() {
                if files.len() != n {
                    return Err(self.invalid(format!("view {vi}: {} {kind} files for {n} frames", files.len())));
                }
                if let Some(missing) = files.iter().map(|f| self.resolve(f)).find(|f| !f.is_file()) {
                    return Err(self.invalid(format!("view {vi}: missing {kind} file {}", missing.display())));
                }
            }
        }
        Ok(())
    }
}

/// Manifests of a corpus: `dir/manifest.json` and `dir/*/manifest.json`,
/// sorted by path.
pub fn find_manifests(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    let direct = dir.join("manifest.json");
    if direct.is_file() {
        found.push(direct);
    }
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path().join("manifest.json");
        if path.is_file() {
            found.push(path);
        }
    }
    found.sort();
    Ok(found)
}
