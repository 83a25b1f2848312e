use serde::{Deserialize, Serialize};
use std::cell::Cell;
use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use super::{export_pointcloud, export_trajectories, ClipManifest, DepthInput, PipelineConfig, PlyOptions, ViewInput};
use crate::depth::{depth_from_disparity, depth_from_flow, DepthMap, DisparityMap, StereoFlowField};
use crate::filters::{
    camera_static_test, clip_stats, detect_cross_fade, gap_frames, load_class_table, looks_like_static_image,
    majority_banned, violates_boundary_trim, BannedClasses, ClipStats, ClipVerdict, LabelMap, LabelSequence,
    MatchCountSeries, RejectReason,
};
use crate::geometry::{CameraModel, PoseSet, ProjectionKind};
use crate::grid::Grid;
use crate::io::{read_grid, read_label_map, read_tracks2d, write_tracks3d};
use crate::par;
use crate::trackopt::{loss_trace_csv, optimize_tracks, trail_motion_magnitude, MotionMagnitude};
use crate::tracks::{dedup_query_indices, lift_with_samples, sample_track_depths, union_views, Track2D, Track3D};

/// Pipeline stages in execution order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Load,
    Depth,
    Dedup,
    Lift,
    Trail,
    Optimize,
    Filter,
    Stats,
    Export,
}

impl Stage {
    pub const ORDER: [Stage; 9] = [
        Stage::Load,
        Stage::Depth,
        Stage::Dedup,
        Stage::Lift,
        Stage::Trail,
        Stage::Optimize,
        Stage::Filter,
        Stage::Stats,
        Stage::Export,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Load => "load",
            Stage::Depth => "depth",
            Stage::Dedup => "dedup",
            Stage::Lift => "lift",
            Stage::Trail => "trail",
            Stage::Optimize => "optimize",
            Stage::Filter => "filter",
            Stage::Stats => "stats",
            Stage::Export => "export",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("clip {clip_id} failed in stage {stage}: {message}")]
pub struct ClipFailure {
    pub clip_id: String,
    pub stage: Stage,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ViewReport {
    pub fov_h_deg: f64,
    pub tracks_in: usize,
    pub after_dedup: usize,
    /// Tracks with at least two frames of valid depth.
    pub lifted: usize,
    pub depth_valid_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipReport {
    pub clip_id: String,
    pub frames: usize,
    pub stages: Vec<Stage>,
    pub views: Vec<ViewReport>,
    pub union_tracks: usize,
    pub semantic_pruned: usize,
    pub diverged: usize,
    pub camera_static: bool,
    /// Number of frame pairs the cross-fade test looked at.
    pub match_pairs: usize,
    pub min_match_count: Option<u32>,
    pub stats: ClipStats,
    pub verdict: ClipVerdict,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClipOutputs {
    pub dir: PathBuf,
    pub report: ClipReport,
}

struct Tracker<'a> {
    clip_id: &'a str,
    current: &'a Cell<Stage>,
    stages: Vec<Stage>,
}

impl Tracker<'_> {
    fn enter(&mut self, stage: Stage) {
        log::info!("clip {}: stage {stage}", self.clip_id);
        self.current.set(stage);
        self.stages.push(stage);
    }

    fn fail<E: fmt::Display>(&self) -> impl Fn(E) -> ClipFailure + '_ {
        move |e| ClipFailure { clip_id: self.clip_id.to_string(), stage: self.current.get(), message: e.to_string() }
    }
}

/// Focal length in pixels of a grid stored at a different width than the model.
fn grid_focal(model: &CameraModel, grid_width: usize) -> f64 {
    model.focal * grid_width as f64 / model.width as f64
}

fn read_frame_grid(manifest: &ClipManifest, file: &Path, frame: u32) -> Result<Grid<f64>, String> {
    let path = manifest.resolve(file);
    let (g, stored) = read_grid(&path).map_err(|e| e.to_string())?;
    if stored != frame {
        return Err(format!("{}: holds frame {stored}, expected {frame}", path.display()));
    }
    Ok(g.map(|v| *v as f64))
}

fn load_depth(manifest: &ClipManifest, view: &ViewInput, frame: u32, cfg: &PipelineConfig) -> Result<DepthMap, String> {
    let f = frame as usize;
    match &view.depth {
        DepthInput::Disparity { files } => {
            let g = read_frame_grid(manifest, &files[f], frame)?;
            let focal = grid_focal(&view.model, g.width());
            depth_from_disparity(&DisparityMap::from_grid(g, frame), focal, &cfg.depth).map_err(|e| e.to_string())
        }
        DepthInput::Flow { flow_x, flow_y, cycle_error } => {
            let flow = StereoFlowField {
                flow_x: read_frame_grid(manifest, &flow_x[f], frame)?,
                flow_y: read_frame_grid(manifest, &flow_y[f], frame)?,
                cycle_error: read_frame_grid(manifest, &cycle_error[f], frame)?,
                frame_index: frame,
            };
            let focal = grid_focal(&view.model, flow.flow_x.width());
            depth_from_flow(&flow, focal, &cfg.depth).map_err(|e| e.to_string())
        }
    }
}

type LoadedLabels = (Vec<Option<LabelMap>>, CameraModel);

fn load_labels(manifest: &ClipManifest) -> Result<Option<LoadedLabels>, String> {
    let Some(input) = &manifest.labels else { return Ok(None) };
    let classes: Arc<[String]> = load_class_table(&manifest.resolve(&input.classes)).map_err(|e| e.to_string())?.into();
    let mut maps = Vec::with_capacity(input.files.len());
    for (f, file) in input.files.iter().enumerate() {
        maps.push(match file {
            None => None,
            Some(file) => {
                let path = manifest.resolve(file);
                let (ids, stored) = read_label_map(&path).map_err(|e| e.to_string())?;
                if stored as usize != f {
                    return Err(format!("{}: holds frame {stored}, expected {f}", path.display()));
                }
                Some(LabelMap::new(ids, classes.clone(), f as u32).map_err(|e| e.to_string())?)
            }
        });
    }
    Ok(Some((maps, input.model.clone())))
}

fn match_series(manifest: &ClipManifest, gap: u32) -> Result<Option<MatchCountSeries>, String> {
    if let Some(csv) = &manifest.matches {
        return MatchCountSeries::load_csv(&manifest.resolve(csv), gap).map(Some).map_err(|e| e.to_string());
    }
    let Some(frames) = &manifest.frames else { return Ok(None) };
    if frames.len() <= gap as usize {
        return Ok(Some(MatchCountSeries { gap, pairs: Vec::new() }));
    }
    let grids = frames
        .iter()
        .enumerate()
        .map(|(f, p)| read_frame_grid(manifest, p, f as u32).map(|g| g.map(|v| *v as f32)))
        .collect::<Result<Vec<_>, _>>()?;
    MatchCountSeries::from_frames(&grids, gap).map(Some).map_err(|e| e.to_string())
}

struct Survivor {
    raw: Track3D,
    optimized: Track3D,
    magnitude: MotionMagnitude,
    loss_trace: Vec<f64>,
}

fn run_stages(
    manifest: &ClipManifest,
    cfg: &PipelineConfig,
    out_root: &Path,
    current: &Cell<Stage>,
) -> Result<ClipOutputs, ClipFailure> {
    let mut t = Tracker { clip_id: &manifest.clip_id, current, stages: Vec::new() };
    let par = cfg.parallelism();
    let radius = cfg.tracks.dedup_radius_px;

    t.enter(Stage::Load);
    cfg.validate().map_err(t.fail())?;
    manifest.validate().map_err(t.fail())?;
    let n = manifest.n_frames();
    let poses = PoseSet::load_json(&manifest.resolve(&manifest.poses)).map_err(t.fail())?;
    if let Some(f) = (0..n as u32).find(|&f| poses.get(f).is_none()) {
        return Err(t.fail()(format!("no pose for frame {f}")));
    }
    let mut inputs: Vec<Vec<Track2D>> = Vec::with_capacity(manifest.views.len());
    for (vi, view) in manifest.views.iter().enumerate() {
        view.model.validate().map_err(t.fail())?;
        if view.model.kind != ProjectionKind::Perspective {
            return Err(t.fail()(format!("view {vi}: tracks must be given in a perspective view")));
        }
        let (tracks, frames) = read_tracks2d(&manifest.resolve(&view.tracks)).map_err(t.fail())?;
        if frames != n {
            return Err(t.fail()(format!("view {vi}: track table has {frames} frames, clip has {n}")));
        }
        inputs.push(tracks);
    }

    t.enter(Stage::Depth);
    manifest.validate_depth().map_err(t.fail())?;
    let mut view_reports = Vec::with_capacity(inputs.len());
    let mut samples = Vec::with_capacity(inputs.len());
    for (view, tracks) in manifest.views.iter().zip(&inputs) {
        let valid = AtomicUsize::new(0);
        let total = AtomicUsize::new(0);
        let s = sample_track_depths(
            tracks,
            &view.model,
            |f| load_depth(manifest, view, f, cfg),
            |d| {
                valid.fetch_add(d.valid_count(), Ordering::Relaxed);
                total.fetch_add(d.valid.data().len(), Ordering::Relaxed);
            },
            par,
        )
        .map_err(t.fail())?;
        let total = total.into_inner();
        view_reports.push(ViewReport {
            fov_h_deg: view.model.fov_h_deg,
            tracks_in: tracks.len(),
            depth_valid_fraction: if total == 0 { 0.0 } else { valid.into_inner() as f64 / total as f64 },
            ..ViewReport::default()
        });
        samples.push(s);
    }

    t.enter(Stage::Dedup);
    let kept: Vec<Vec<usize>> = inputs.iter().map(|tracks| dedup_query_indices(tracks, radius)).collect();
    for (r, k) in view_reports.iter_mut().zip(&kept) {
        r.after_dedup = k.len();
    }

    t.enter(Stage::Lift);
    let mut per_view = Vec::with_capacity(inputs.len());
    for (vi, view) in manifest.views.iter().enumerate() {
        let lifted = par::map(par, &kept[vi], |&k| {
            lift_with_samples(&inputs[vi][k], &samples[vi][k], &poses, &view.model, vi as u8)
        });
        let lifted: Vec<Track3D> = lifted
            .into_iter()
            .collect::<Result<Vec<_>, _>>()
            .map_err(t.fail())?
            .into_iter()
            .filter(|tr| tr.visible_frames().nth(1).is_some())
            .collect();
        view_reports[vi].lifted = lifted.len();
        per_view.push(lifted);
    }
    drop(samples);
    let reference = manifest.views.iter().enumerate().fold(0, |best, (i, v)| {
        if v.model.fov_h_deg > manifest.views[best].model.fov_h_deg {
            i
        } else {
            best
        }
    });
    let tracks = union_views(per_view, &poses, &manifest.views[reference].model, radius);
    let mut ids = HashSet::with_capacity(tracks.len());
    if let Some(dup) = tracks.iter().find(|tr| !ids.insert(tr.track_id)) {
        return Err(t.fail()(format!("track id {} occurs in more than one view", dup.track_id)));
    }
    let union_tracks = tracks.len();

    t.enter(Stage::Trail);
    let w_o = cfg.optimizer.trail_window;
    let magnitudes =
        par::map(par, &tracks, |tr| trail_motion_magnitude(tr, &poses, &manifest.views[tr.view as usize].model, w_o));

    t.enter(Stage::Optimize);
    let optimized = optimize_tracks(&tracks, &magnitudes, &cfg.optimizer, par)
        .into_iter()
        .collect::<Result<Vec<_>, _>>()
        .map_err(t.fail())?;
    let diverged = optimized.iter().filter(|o| o.diverged).count();
    if diverged > 0 {
        log::warn!("clip {}: {diverged} tracks ended above their starting objective", manifest.clip_id);
    }
    let mut survivors: Vec<Survivor> = tracks
        .into_iter()
        .zip(optimized)
        .zip(magnitudes)
        .map(|((raw, o), magnitude)| Survivor { raw, optimized: o.track, magnitude, loss_trace: o.loss_trace })
        .collect();

    t.enter(Stage::Filter);
    let f = &cfg.filters;
    let before = survivors.len();
    if let Some((maps, label_model)) = load_labels(manifest).map_err(t.fail())? {
        let banned = match &f.banned_classes {
            Some(p) => BannedClasses::load(p).map_err(t.fail())?,
            None => BannedClasses::default(),
        };
        let labels = LabelSequence { maps: &maps, model: &label_model };
        let drop = par::map(par, &survivors, |s| {
            s.magnitude.m > f.m_threshold && majority_banned(&s.optimized, &labels, &poses, &banned)
        });
        let mut drop = drop.into_iter();
        survivors.retain(|_| !drop.next().expect("one flag per track"));
    }
    let semantic_pruned = before - survivors.len();
    let camera_static = camera_static_test(poses.as_slice(), f.static_translation_m, f.static_rotation_deg);
    let mut reasons = Vec::new();
    let gap = gap_frames(f.cross_fade_gap_s, manifest.frame_rate);
    let series = match_series(manifest, gap).map_err(t.fail())?;
    if series.is_none() {
        log::warn!("clip {}: no match counts or frames, cross-fade test skipped", manifest.clip_id);
    }
    let (match_pairs, min_match_count) =
        series.as_ref().map_or((0, None), |s| (s.pairs.len(), s.pairs.iter().map(|p| p.count).min()));
    if series.as_ref().is_some_and(|s| detect_cross_fade(s, camera_static, f.min_matches)) {
        reasons.push(RejectReason::CrossFade);
    }
    let mags: Vec<MotionMagnitude> = survivors.iter().map(|s| s.magnitude.clone()).collect();
    if looks_like_static_image(camera_static, &mags, f.m_threshold) {
        reasons.push(RejectReason::StaticImage);
    }
    if let Some(total) = manifest.source_frame_count {
        if violates_boundary_trim(manifest.frame_range, total, f.trim_frac) {
            reasons.push(RejectReason::BoundaryTrim);
        }
    }
    let verdict = ClipVerdict::from_reasons(reasons);

    t.enter(Stage::Stats);
    let final_tracks: Vec<Track3D> = survivors.iter().map(|s| s.optimized.clone()).collect();
    let stats = clip_stats(&final_tracks, &mags, &poses);

    t.enter(Stage::Export);
    let report = ClipReport {
        clip_id: manifest.clip_id.clone(),
        frames: n,
        stages: t.stages.clone(),
        views: view_reports,
        union_tracks,
        semantic_pruned,
        diverged,
        camera_static,
        match_pairs,
        min_match_count,
        stats,
        verdict,
    };
    let dir = export(manifest, cfg, out_root, &survivors, &final_tracks, &report).map_err(t.fail())?;
    Ok(ClipOutputs { dir, report })
}

fn export(
    manifest: &ClipManifest,
    cfg: &PipelineConfig,
    out_root: &Path,
    survivors: &[Survivor],
    final_tracks: &[Track3D],
    report: &ClipReport,
) -> Result<PathBuf, String> {
    fn io(p: &Path) -> impl Fn(std::io::Error) -> String + '_ {
        move |e| format!("{}: {e}", p.display())
    }
    let n = manifest.n_frames();
    let dir = out_root.join(&manifest.clip_id);
    let tmp = out_root.join(format!(".{}.partial", manifest.clip_id));
    if tmp.exists() {
        std::fs::remove_dir_all(&tmp).map_err(io(&tmp))?;
    }
    std::fs::create_dir_all(&tmp).map_err(io(&tmp))?;
    let ex = &cfg.pipeline.export;
    write_tracks3d(&tmp.join("tracks3d.bin"), final_tracks, n).map_err(|e| e.to_string())?;
    if ex.raw_tracks {
        let raw: Vec<Track3D> = survivors.iter().map(|s| s.raw.clone()).collect();
        write_tracks3d(&tmp.join("tracks3d_raw.bin"), &raw, n).map_err(|e| e.to_string())?;
    }
    let json = |name: &str, text: String| {
        let p = tmp.join(name);
        std::fs::write(&p, text + "\n").map_err(io(&p))
    };
    json("verdict.json", serde_json::to_string_pretty(&report.verdict).expect("serializable"))?;
    json("stats.json", serde_json::to_string_pretty(report).expect("serializable"))?;
    if ex.loss_traces {
        let loss_dir = tmp.join("loss");
        std::fs::create_dir_all(&loss_dir).map_err(io(&loss_dir))?;
        for s in survivors {
            let p = loss_dir.join(format!("{}.csv", s.optimized.track_id));
            std::fs::write(&p, loss_trace_csv(&s.loss_trace)).map_err(io(&p))?;
        }
    }
    let opts = PlyOptions { color: true, track_ids: true };
    if ex.ply {
        let p = tmp.join(format!("points_{:04}.ply", ex.ply_frame));
        export_pointcloud(final_tracks, ex.ply_frame, &p, opts).map_err(|e| e.to_string())?;
    }
    if ex.trajectories_ply {
        export_trajectories(final_tracks, &tmp.join("trajectories.ply"), opts).map_err(|e| e.to_string())?;
    }
    if dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(io(&dir))?;
    }
    std::fs::rename(&tmp, &dir).map_err(io(&dir))?;
    Ok(dir)
}

fn panic_message(payload: &(dyn std::any::Any + Send)) -> String {
    payload
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| payload.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown panic".into())
}

/// Runs every stage for one clip and writes `out_root/<clip_id>/`.
///
/// Outputs are assembled in a hidden sibling directory and moved into place
/// at the end, so a failed clip leaves no partial results. Any error, panics
/// included, is reported with the stage it happened in.
pub fn run_clip(manifest: &ClipManifest, cfg: &PipelineConfig, out_root: &Path) -> Result<ClipOutputs, ClipFailure> {
    let current = Cell::new(Stage::Load);
    let result =
        std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| run_stages(manifest, cfg, out_root, &current)));
    let result = match result {
        Ok(r) => r,
        Err(payload) => Err(ClipFailure {
            clip_id: manifest.clip_id.clone(),
            stage: current.get(),
            message: format!("panic: {}", panic_message(payload.as_ref())),
        }),
    };
    if let Err(e) = &result {
        log::error!("{e}");
        let partial = out_root.join(format!(".{}.partial", manifest.clip_id));
        if partial.exists() && !manifest.clip_id.is_empty() {
            let _ = std::fs::remove_dir_all(partial);
        }
    }
    result
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub clips: usize,
    pub succeeded: Vec<String>,
    pub accepted: Vec<String>,
    pub failed: Vec<ClipFailure>,
}

fn fallback_id(path: &Path) -> String {
    path.parent()
        .and_then(|p| p.file_name())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Runs many clips through a shared work queue. One clip failing never
/// stops the others; failures are collected into `failures.json` and the
/// overall result into `summary.json` under `out_root`.
pub fn run_corpus(manifests: &[PathBuf], cfg: &PipelineConfig, out_root: &Path) -> std::io::Result<CorpusSummary> {
    std::fs::create_dir_all(out_root)?;
    let workers = cfg.pipeline.clip_workers.unwrap_or(1).clamp(1, manifests.len().max(1));
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<ClipOutputs, ClipFailure>>>> = Mutex::new(vec![None; manifests.len()]);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(path) = manifests.get(i) else { break };
                let r = match ClipManifest::load(path) {
                    Ok(m) => run_clip(&m, cfg, out_root),
                    Err(e) => {
                        Err(ClipFailure { clip_id: fallback_id(path), stage: Stage::Load, message: e.to_string() })
                    }
                };
                results.lock().expect("no poisoned workers")[i] = Some(r);
            });
        }
    });
    let mut summary = CorpusSummary { clips: manifests.len(), ..CorpusSummary::default() };
    for r in results.into_inner().expect("workers joined") {
        match r.expect("every clip ran") {
            Ok(out) => {
                if out.report.verdict.accepted {
                    summary.accepted.push(out.report.clip_id.clone());
                }
                summary.succeeded.push(out.report.clip_id);
            }
            Err(e) => summary.failed.push(e),
        }
    }
    std::fs::write(out_root.join("failures.json"), serde_json::to_string_pretty(&summary.failed)? + "\n")?;
    std::fs::write(out_root.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(summary)
}
