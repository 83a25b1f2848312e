//! Parametric dynamic scenes with known ground truth.
//!
//! A [`SceneSpec`] describes static and moving world points and a camera
//! path. [`render_scene`] projects every point into each requested view,
//! writes its disparity into a small pixel block, and emits noisy 2D tracks.
//! All randomness comes from a `ChaCha8Rng` seeded with `noise.seed`, drawn
//! in a fixed order, so a spec always renders to the same bundle.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::depth::DisparityMap;
use crate::geometry::{CameraModel, CameraPose, GeometryError, PoseSet, ProjectionKind};
use crate::grid::Grid;
use crate::trackopt::dynamic_loss;
use crate::tracks::{Track2D, Track3D, TrackPoints, Trajectory};

/// Side length of the pixel block a point's disparity is written into.
pub const SPLAT_SIZE: usize = 4;

/// Track ids of view `k` are `k * VIEW_ID_STRIDE + point index`.
pub const VIEW_ID_STRIDE: u32 = 1_000_000;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid scene: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("track {0} has no ground truth")]
    UnknownTrack(u32),
    #[error("track {0} appears twice")]
    DuplicateTrack(u32),
    #[error("track {0}: lifted and optimized tracks do not line up")]
    Mismatch(u32),
    #[error(transparent)]
    Format(#[from] crate::io::FormatError),
    #[error("{path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Motion {
    /// `start + velocity * t`, velocity in meters per frame.
    Linear { velocity: [f64; 3] },
    /// `start + amplitude * sin(2 pi t / period_frames + phase_rad)`.
    Sinusoid { amplitude: [f64; 3], period_frames: f64, phase_rad: f64 },
    /// Offsets from `start` at key frames, linearly interpolated and held
    /// constant outside the key range.
    Piecewise { keyframes: Vec<Keyframe> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Keyframe {
    pub frame: f64,
    pub offset: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MovingPoint {
    pub start: [f64; 3],
    pub motion: Motion,
}

/// Camera translating at constant velocity while yawing about the world y
/// axis. World axes match the camera at zero yaw: x right, y down, z forward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraPath {
    pub start: [f64; 3],
    /// Meters per frame.
    pub velocity: [f64; 3],
    pub initial_yaw_deg: f64,
    pub yaw_deg_per_frame: f64,
}

impl Default for CameraPath {
    fn default() -> Self {
        Self { start: [0.0; 3], velocity: [0.0; 3], initial_yaw_deg: 0.0, yaw_deg_per_frame: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub disparity_std_px: f64,
    pub track_std_px: f64,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { disparity_std_px: 0.0, track_std_px: 0.0, seed: 0 }
    }
}

impl NoiseSpec {
    /// Noise levels used by the denoising experiments.
    pub fn standard(seed: u64) -> Self {
        Self { disparity_std_px: 0.5, track_std_px: 0.25, seed }
    }
}

fn default_frame_rate() -> f64 {
    30.0
}

fn default_baseline() -> f64 {
    crate::geometry::RigCalibration::NOMINAL_BASELINE_M
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub frames: usize,
    #[serde(default = "default_frame_rate")]
    pub frame_rate: f64,
    /// Views rendered from the same camera; tracks and disparity are produced
    /// for each.
    pub views: Vec<CameraModel>,
    #[serde(default = "default_baseline")]
    pub baseline_m: f64,
    #[serde(default)]
    pub camera: CameraPath,
    #[serde(default)]
    pub static_points: Vec<[f64; 3]>,
    #[serde(default)]
    pub moving_points: Vec<MovingPoint>,
    #[serde(default)]
    pub noise: NoiseSpec,
}

fn v3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::from(a)
}

impl Motion {
    pub fn offset(&self, t: f64) -> Vector3<f64> {
        match self {
            Motion::Linear { velocity } => v3(*velocity) * t,
            Motion::Sinusoid { amplitude, period_frames, phase_rad } => {
                v3(*amplitude) * (TAU * t / period_frames + phase_rad).sin()
            }
            Motion::Piecewise { keyframes } => {
                let Some(first) = keyframes.first() else { return Vector3::zeros() };
                if t <= first.frame {
                    return v3(first.offset);
                }
                for pair in keyframes.windows(2) {
                    let (a, b) = (&pair[0], &pair[1]);
                    if t <= b.frame {
                        let s = (t - a.frame) / (b.frame - a.frame);
                        return v3(a.offset) * (1.0 - s) + v3(b.offset) * s;
                    }
                }
                v3(keyframes.last().expect("non-empty").offset)
            }
        }
    }
}

impl CameraPath {
    pub fn pose(&self, frame: u32) -> CameraPose {
        let t = frame as f64;
        let yaw = (self.initial_yaw_deg + self.yaw_deg_per_frame * t).to_radians();
        let (s, c) = yaw.sin_cos();
        let r = Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c);
        CameraPose { frame_index: frame, position: v3(self.start) + v3(self.velocity) * t, orientation: r }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionClass {
    Static,
    Dynamic,
}

impl SceneSpec {
    pub fn point_count(&self) -> usize {
        self.static_points.len() + self.moving_points.len()
    }

    pub fn class_of(&self, point: usize) -> MotionClass {
        if point < self.static_points.len() {
            MotionClass::Static
        } else {
            MotionClass::Dynamic
        }
    }

    /// World position of point `point` at frame `frame`.
    pub fn position(&self, point: usize, frame: u32) -> Vector3<f64> {
        let ns = self.static_points.len();
        if point < ns {
            v3(self.static_points[point])
        } else {
            let mp = &self.moving_points[point - ns];
            v3(mp.start) + mp.motion.offset(frame as f64)
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidSpec(m.to_string()));
        if self.frames < 2 {
            return bad("at least 2 frames required");
        }
        if self.views.is_empty() {
            return bad("at least one view required");
        }
        if self.views.len() as u64 * VIEW_ID_STRIDE as u64 > u32::MAX as u64
            || self.point_count() >= VIEW_ID_STRIDE as usize
        {
            return bad("too many views or points");
        }
        for m in &self.views {
            m.validate()?;
        }
        let n = &self.noise;
        if !(n.disparity_std_px >= 0.0 && n.track_std_px >= 0.0)
            || !n.disparity_std_px.is_finite()
            || !n.track_std_px.is_finite()
        {
            return bad("noise standard deviations must be finite and non-negative");
        }
        if !(self.baseline_m > 0.0 && self.baseline_m.is_finite()) {
            return bad("baseline must be positive");
        }
        if !(self.frame_rate > 0.0) {
            return bad("frame rate must be positive");
        }
        for mp in &self.moving_points {
            match &mp.motion {
                Motion::Sinusoid { period_frames, .. } if !(*period_frames > 0.0) => {
                    return bad("sinusoid period must be positive")
                }
                Motion::Piecewise { keyframes }
                    if keyframes.is_empty() || keyframes.windows(2).any(|w| !(w[1].frame > w[0].frame)) =>
                {
                    return bad("piecewise key frames must be non-empty and strictly increasing");
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn poses(&self) -> PoseSet {
        PoseSet::new((0..self.frames as u32).map(|f| self.camera.pose(f)).collect()).expect("distinct frames")
    }

    /// Scene with `n_static` static and `n_moving` laterally oscillating
    /// points at 1 to 5 m, a single 512x512 60 degree view, 150 frames, a
    /// slow sideways camera dolly and the standard noise levels. Point
    /// placement is drawn from its own stream derived from `seed`.
    pub fn standard(seed: u64, n_static: usize, n_moving: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5CE7_E5EE_D000_0001);
        let place = |rng: &mut ChaCha8Rng| {
            let z = rng.random_range(1.0..5.0);
            [z * rng.random_range(-0.3..0.3), z * rng.random_range(-0.3..0.3), z]
        };
        let static_points = (0..n_static).map(|_| place(&mut rng)).collect();
        let moving_points = (0..n_moving)
            .map(|_| {
                let start = place(&mut rng);
                let z = start[2];
                MovingPoint {
                    start,
                    motion: Motion::Sinusoid {
                        amplitude: [0.1 * z, 0.05 * z, 0.0],
                        period_frames: rng.random_range(50.0..90.0),
                        phase_rad: rng.random_range(0.0..TAU),
                    },
                }
            })
            .collect();
        Self {
            frames: 150,
            frame_rate: 30.0,
            views: vec![CameraModel::perspective(512, 512, 60.0).expect("valid model")],
            baseline_m: default_baseline(),
            camera: CameraPath { velocity: [0.002, 0.0, 0.0], ..CameraPath::default() },
            static_points,
            moving_points,
            noise: NoiseSpec::standard(seed),
        }
    }
}

/// Disparity written into a `SPLAT_SIZE` square starting at `(x0, y0)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Splat {
    pub x0: u32,
    pub y0: u32,
    /// Value written to the pixels, noise included.
    pub disparity: f64,
    /// Noise-free disparity, used for the depth test.
    pub true_disparity: f64,
    pub point: u32,
}

/// One camera model's share of a rendered scene.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedView {
    pub model: CameraModel,
    pub tracks: Vec<Track2D>,
    /// Splats per frame in point order.
    pub splats: Vec<Vec<Splat>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TruthTrack {
    pub class: MotionClass,
    /// True world positions; visible where the point was observed.
    pub trajectory: Trajectory,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthBundle {
    pub spec: SceneSpec,
    pub poses: PoseSet,
    pub views: Vec<RenderedView>,
    /// One entry per emitted 2D track, same id.
    pub truth: Vec<TruthTrack>,
}

/// Depth convention of a model: z for perspective, range otherwise.
fn model_depth(model: &CameraModel, q: &Vector3<f64>) -> f64 {
    match model.kind {
        ProjectionKind::Perspective => q.z,
        _ => q.norm(),
    }
}

fn block_origin(u: f64, v: f64, model: &CameraModel) -> Option<(u32, u32)> {
    let x0 = u.floor() - 1.0;
    let y0 = v.floor() - 1.0;
    let max_x = model.width as f64 - SPLAT_SIZE as f64;
    let max_y = model.height as f64 - SPLAT_SIZE as f64;
    (x0 >= 0.0 && y0 >= 0.0 && x0 <= max_x && y0 <= max_y).then_some((x0 as u32, y0 as u32))
}

fn owners(splats: &[Splat], width: usize, height: usize) -> Grid<Option<usize>> {
    let mut owner: Grid<Option<usize>> = Grid::filled(width, height, None);
    for (k, s) in splats.iter().enumerate() {
        for y in s.y0 as usize..s.y0 as usize + SPLAT_SIZE {
            for x in s.x0 as usize..s.x0 as usize + SPLAT_SIZE {
                let wins = match owner[(x, y)] {
                    None => true,
                    Some(j) => s.true_disparity > splats[j].true_disparity,
                };
                if wins {
                    owner.set(x, y, Some(k));
                }
            }
        }
    }
    owner
}

/// Rasterizes a frame's splats with a depth test; pixels no point covers are
/// invalid.
pub fn rasterize(splats: &[Splat], model: &CameraModel, frame_index: u32) -> DisparityMap {
    let (w, h) = (model.width as usize, model.height as usize);
    let owner = owners(splats, w, h);
    let disparity = owner.map(|o| o.map_or(f64::NAN, |k| splats[k].disparity));
    let valid = owner.map(|o| o.is_some());
    DisparityMap { disparity, valid, frame_index }
}

struct Observation {
    pixel: [f64; 2],
}

pub fn render_scene(spec: &SceneSpec) -> Result<GroundTruthBundle, SynthError> {
    spec.validate()?;
    let poses = spec.poses();
    let n_points = spec.point_count();
    let n = spec.frames;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.noise.seed);
    let disp_noise = Normal::new(0.0, spec.noise.disparity_std_px).expect("validated std");
    let track_noise = Normal::new(0.0, spec.noise.track_std_px).expect("validated std");

    let mut views = Vec::with_capacity(spec.views.len());
    let mut truth = Vec::new();
    for (vi, model) in spec.views.iter().enumerate() {
        let bf = spec.baseline_m * model.focal;
        // obs[point][frame]
        let mut obs: Vec<Vec<Option<Observation>>> = (0..n_points).map(|_| Vec::with_capacity(n)).collect();
        let mut splats: Vec<Vec<Splat>> = vec![Vec::new(); n];
        for f in 0..n as u32 {
            let pose = poses.get(f).expect("every frame has a pose");
            for (p, per_point) in obs.iter_mut().enumerate() {
                // Draw unconditionally so visibility never shifts the stream.
                let dn: f64 = disp_noise.sample(&mut rng);
                let un: f64 = track_noise.sample(&mut rng);
                let vn: f64 = track_noise.sample(&mut rng);
                let q = pose.world_to_camera(&spec.position(p, f));
                let proj = model.project_camera(&q, f);
                if !proj.in_bounds {
                    per_point.push(None);
                    continue;
                }
                let depth = model_depth(model, &q);
                let pixel = [proj.pixel.u + un, proj.pixel.v + vn];
                let splat = block_origin(pixel[0], pixel[1], model).map(|(x0, y0)| Splat {
                    x0,
                    y0,
                    disparity: bf / depth + dn,
                    true_disparity: bf / depth,
                    point: p as u32,
                });
                if let Some(s) = splat {
                    splats[f as usize].push(s);
                }
                per_point.push(Some(Observation { pixel }));
            }
        }

        // A point is observed only where it owns its whole block.
        let mut visible = vec![vec![false; n]; n_points];
        for (f, frame_splats) in splats.iter().enumerate() {
            let owner = owners(frame_splats, model.width as usize, model.height as usize);
            for (k, s) in frame_splats.iter().enumerate() {
                let whole = (s.y0 as usize..s.y0 as usize + SPLAT_SIZE)
                    .all(|y| (s.x0 as usize..s.x0 as usize + SPLAT_SIZE).all(|x| owner[(x, y)] == Some(k)));
                visible[s.point as usize][f] = whole;
            }
        }

        let mut tracks = Vec::new();
        for p in 0..n_points {
            let vis = &visible[p];
            let Some(query) = vis.iter().position(|v| *v) else { continue };
            if vis.iter().filter(|v| **v).count() < 2 {
                continue;
            }
            let id = vi as u32 * VIEW_ID_STRIDE + p as u32;
            let positions = obs[p]
                .iter()
                .zip(vis)
                .map(|(o, &v)| match o {
                    Some(o) if v => o.pixel,
                    _ => [f64::NAN; 2],
                })
                .collect();
            let track = Track2D::new(id, query as u32, positions, vis.clone()).expect("two visible frames");
            tracks.push(track);
            let points = (0..n as u32).map(|f| spec.position(p, f)).collect();
            truth.push(TruthTrack {
                class: spec.class_of(p),
                trajectory: Trajectory { track_id: id, query_frame: query as u32, points, visible: vis.clone() },
            });
        }
        views.push(RenderedView { model: model.clone(), tracks, splats });
    }
    Ok(GroundTruthBundle { spec: spec.clone(), poses, views, truth })
}

impl GroundTruthBundle {
    pub fn n_frames(&self) -> usize {
        self.spec.frames
    }

    pub fn disparity_map(&self, view: usize, frame: u32) -> DisparityMap {
        let v = &self.views[view];
        rasterize(&v.splats[frame as usize], &v.model, frame)
    }

    pub fn truth_for(&self, track_id: u32) -> Option<&TruthTrack> {
        self.truth.binary_search_by_key(&track_id, |t| t.trajectory.track_id).ok().map(|i| &self.truth[i])
    }

    /// All 2D tracks of all views.
    pub fn tracks2d(&self) -> impl Iterator<Item = &Track2D> {
        self.views.iter().flat_map(|v| v.tracks.iter())
    }
}

/// How depth is handed to the pipeline when a bundle is written to disk.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DepthFormat {
    #[default]
    Disparity,
    /// Horizontal flow equal to the disparity, zero vertical flow and cycle
    /// error.
    Flow,
}

/// Writes a bundle as a clip directory the pipeline can ingest:
/// `manifest.json`, `poses.json`, per-view track tables and per-frame depth
/// grids, plus `scene.json` and the ground truth in `truth.bin`. Returns the
/// manifest path.
pub fn write_bundle(
    bundle: &GroundTruthBundle,
    dir: &std::path::Path,
    clip_id: &str,
    format: DepthFormat,
) -> Result<std::path::PathBuf, SynthError> {
    use crate::io::{write_grid, write_tracks2d, write_tracks3d};
    use crate::pipeline::{ClipManifest, DepthInput, ViewInput};
    use std::path::PathBuf;

    let io = |path: &std::path::Path| {
        let path = path.to_path_buf();
        move |source| SynthError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let n = bundle.n_frames();
    bundle.poses.save_json(&dir.join("poses.json"))?;
    let scene = serde_json::to_string_pretty(&bundle.spec).expect("scene serializes");
    std::fs::write(dir.join("scene.json"), scene + "\n").map_err(io(&dir.join("scene.json")))?;
    let truth: Vec<Trajectory> = bundle.truth.iter().map(|t| t.trajectory.clone()).collect();
    write_tracks3d(&dir.join("truth.bin"), &truth, n)?;

    let mut views = Vec::with_capacity(bundle.views.len());
    for (vi, view) in bundle.views.iter().enumerate() {
        let vdir = PathBuf::from(format!("view{vi}"));
        let tracks = vdir.join("tracks.bin");
        write_tracks2d(&dir.join(&tracks), &view.tracks, n)?;
        let name = |kind: &str, f: usize| vdir.join(kind).join(format!("{f:04}.grid"));
        let depth = match format {
            DepthFormat::Disparity => DepthInput::Disparity { files: (0..n).map(|f| name("disparity", f)).collect() },
            DepthFormat::Flow => DepthInput::Flow {
                flow_x: (0..n).map(|f| name("flow_x", f)).collect(),
                flow_y: (0..n).map(|f| name("flow_y", f)).collect(),
                cycle_error: (0..n).map(|f| name("cycle_error", f)).collect(),
            },
        };
        for f in 0..n {
            let disp = bundle.disparity_map(vi, f as u32).to_f32_grid();
            match format {
                DepthFormat::Disparity => write_grid(&dir.join(name("disparity", f)), &disp, f as u32)?,
                DepthFormat::Flow => {
                    let zero = disp.map(|d| if d.is_nan() { f32::NAN } else { 0.0 });
                    write_grid(&dir.join(name("flow_x", f)), &disp, f as u32)?;
                    write_grid(&dir.join(name("flow_y", f)), &zero, f as u32)?;
                    write_grid(&dir.join(name("cycle_error", f)), &zero, f as u32)?;
                }
            }
        }
        views.push(ViewInput { model: view.model.clone(), tracks, depth });
    }
    let manifest = ClipManifest {
        clip_id: clip_id.to_string(),
        frame_range: [0, n as u32],
        frame_rate: bundle.spec.frame_rate,
        source_frame_count: None,
        poses: "poses.json".into(),
        views,
        labels: None,
        matches: None,
        frames: None,
        base_dir: dir.to_path_buf(),
    };
    let path = dir.join("manifest.json");
    manifest.save(&path).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
    Ok(path)
}

/// Draws `count` standard normal samples from a seeded stream; used by tests
/// that need noise independent of a scene.
pub fn normal_samples(seed: u64, count: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| StandardNormal.sample(&mut rng)).collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrackReport {
    pub track_id: u32,
    pub class: Option<MotionClass>,
    pub rmse_pre: f64,
    pub rmse_post: f64,
    /// Root mean squared distance of the visible points from their centroid.
    pub std_pre: f64,
    pub std_post: f64,
    /// Dynamic loss of the track against its own rays, at zero offset.
    pub accel_pre: f64,
    pub accel_post: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub tracks: usize,
    pub mean_rmse_pre: f64,
    pub mean_rmse_post: f64,
    /// Fraction of tracks whose RMSE strictly decreased.
    pub rmse_improved_fraction: f64,
    pub mean_std_pre: f64,
    pub mean_std_post: f64,
    /// `mean_std_pre / mean_std_post`.
    pub jitter_ratio: f64,
    pub mean_accel_pre: f64,
    pub mean_accel_post: f64,
    /// Fraction of tracks whose acceleration energy strictly decreased.
    pub accel_decreased_fraction: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DenoisingReport {
    pub static_tracks: ClassReport,
    pub dynamic_tracks: ClassReport,
    pub per_track: Vec<TrackReport>,
}

fn rmse_to(truth: &Trajectory, t: &Track3D) -> f64 {
    let mut acc = 0.0;
    let mut count = 0usize;
    for i in t.visible_frames() {
        if truth.visible.get(i).copied().unwrap_or(false) {
            acc += (t.points[i] - truth.points[i]).norm_squared();
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        (acc / count as f64).sqrt()
    }
}

fn spread<T: TrackPoints>(t: &T) -> f64 {
    let pts: Vec<&Vector3<f64>> = t.points().iter().zip(t.visible()).filter(|(_, v)| **v).map(|(p, _)| p).collect();
    if pts.is_empty() {
        return 0.0;
    }
    let mean = pts.iter().fold(Vector3::zeros(), |a, p| a + *p) / pts.len() as f64;
    (pts.iter().map(|p| (*p - mean).norm_squared()).sum::<f64>() / pts.len() as f64).sqrt()
}

fn ray_energy(t: &Track3D, windows: &[usize]) -> f64 {
    let zeros = crate::trackopt::OffsetVector::zeros(t.visible_frames().count());
    dynamic_loss(t, &zeros, windows).unwrap_or(0.0)
}

fn summarize(rows: &[&TrackReport]) -> ClassReport {
    if rows.is_empty() {
        return ClassReport::default();
    }
    let n = rows.len() as f64;
    let mean = |f: fn(&TrackReport) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
    let frac = |f: fn(&TrackReport) -> bool| rows.iter().filter(|r| f(r)).count() as f64 / n;
    let std_pre = mean(|r| r.std_pre);
    let std_post = mean(|r| r.std_post);
    ClassReport {
        tracks: rows.len(),
        mean_rmse_pre: mean(|r| r.rmse_pre),
        mean_rmse_post: mean(|r| r.rmse_post),
        rmse_improved_fraction: frac(|r| r.rmse_post < r.rmse_pre),
        mean_std_pre: std_pre,
        mean_std_post: std_post,
        jitter_ratio: if std_post > 0.0 { std_pre / std_post } else { f64::INFINITY },
        mean_accel_pre: mean(|r| r.accel_pre),
        mean_accel_post: mean(|r| r.accel_post),
        accel_decreased_fraction: frac(|r| r.accel_post < r.accel_pre),
    }
}

/// Compares lifted tracks before and after optimization against the ground
/// truth. `lifted[k]` and `optimized[k]` must be the same track.
pub fn evaluate_denoising(
    bundle: &GroundTruthBundle,
    lifted: &[Track3D],
    optimized: &[Track3D],
    windows: &[usize],
) -> Result<DenoisingReport, SynthError> {
    let mut seen = std::collections::HashSet::new();
    let mut per_track = Vec::with_capacity(lifted.len());
    if lifted.len() != optimized.len() {
        let id = lifted.get(optimized.len()).or(optimized.get(lifted.len())).map_or(0, |t| t.track_id);
        return Err(SynthError::Mismatch(id));
    }
    for (pre, post) in lifted.iter().zip(optimized) {
        if pre.track_id != post.track_id || pre.visible != post.visible {
            return Err(SynthError::Mismatch(pre.track_id));
        }
        if !seen.insert(pre.track_id) {
            return Err(SynthError::DuplicateTrack(pre.track_id));
        }
        let truth = bundle.truth_for(pre.track_id).ok_or(SynthError::UnknownTrack(pre.track_id))?;
        per_track.push(TrackReport {
            track_id: pre.track_id,
            class: Some(truth.class),
            rmse_pre: rmse_to(&truth.trajectory, pre),
            rmse_post: rmse_to(&truth.trajectory, post),
            std_pre: spread(pre),
            std_post: spread(post),
            accel_pre: ray_energy(pre, windows),
            accel_post: ray_energy(post, windows),
        });
    }
    let of = |c| per_track.iter().filter(|r| r.class == Some(c)).collect::<Vec<_>>();
    Ok(DenoisingReport {
        static_tracks: summarize(&of(MotionClass::Static)),
        dynamic_tracks: summarize(&of(MotionClass::Dynamic)),
        per_track,
    })
}

/// Ground-truth trajectories as Track3D against the bundle's camera centers,
/// for feeding the truth through the same evaluation as lifted tracks.
pub fn truth_as_tracks(bundle: &GroundTruthBundle) -> Vec<Track3D> {
    bundle
        .truth
        .iter()
        .map(|t| {
            let tr = &t.trajectory;
            let centers = (0..tr.points.len())
                .map(|f| bundle.poses.get(f as u32).map_or(Vector3::zeros(), |p| p.position))
                .collect();
            Track3D::from_points(tr.track_id, tr.query_frame, tr.points.clone(), tr.visible.clone(), centers)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::depth::{depth_from_disparity, DepthConfig};
    use crate::tracks::lift_track;

    fn lift_all(bundle: &GroundTruthBundle, view: usize) -> Vec<Track3D> {
        let v = &bundle.views[view];
        let cfg = DepthConfig { baseline_m: bundle.spec.baseline_m, ..DepthConfig::default() };
        let depths: Vec<_> = (0..bundle.n_frames() as u32)
            .map(|f| depth_from_disparity(&bundle.disparity_map(view, f), v.model.focal, &cfg).unwrap())
            .collect();
        v.tracks.iter().map(|t| lift_track(t, &bundle.poses, &depths, &v.model).unwrap()).collect()
    }

    fn noiseless(mut spec: SceneSpec) -> SceneSpec {
        spec.noise = NoiseSpec { seed: spec.noise.seed, ..NoiseSpec::default() };
        spec
    }

    fn max_truth_error(bundle: &GroundTruthBundle, lifted: &[Track3D]) -> f64 {
        let mut worst: f64 = 0.0;
        for t in lifted {
            let truth = bundle.truth_for(t.track_id).unwrap();
            for i in t.visible_frames() {
                worst = worst.max((t.points[i] - truth.trajectory.points[i]).norm());
            }
        }
        worst
    }

    #[test]
    fn noiseless_render_lifts_to_truth() {
        let mut spec = noiseless(SceneSpec::standard(7, 30, 30));
        spec.camera.yaw_deg_per_frame = 0.05;
        spec.moving_points
            .push(MovingPoint { start: [0.2, 0.1, 2.5], motion: Motion::Linear { velocity: [0.003, -0.001, 0.004] } });
        spec.moving_points.push(MovingPoint {
            start: [-0.3, 0.0, 3.0],
            motion: Motion::Piecewise {
                keyframes: vec![
                    Keyframe { frame: 10.0, offset: [0.0; 3] },
                    Keyframe { frame: 60.0, offset: [0.3, 0.1, -0.5] },
                    Keyframe { frame: 120.0, offset: [-0.1, 0.0, 0.2] },
                ],
            },
        });
        spec.views.push(CameraModel::perspective(512, 512, 120.0).unwrap());
        let bundle = render_scene(&spec).unwrap();
        for view in 0..2 {
            let lifted = lift_all(&bundle, view);
            assert!(lifted.len() > 50);
            let visible: usize = lifted.iter().map(|t| t.visible_frames().count()).sum();
            let input: usize = bundle.views[view].tracks.iter().map(|t| t.visible_count()).sum();
            assert_eq!(visible, input, "noiseless samples are never rejected");
            assert!(max_truth_error(&bundle, &lifted) < 1e-6);
        }
    }

    #[test]
    fn seeded_render_is_reproducible() {
        let spec = SceneSpec::standard(3, 10, 10);
        // Debug output compares NaN placeholders too.
        let a = format!("{:?}", render_scene(&spec).unwrap());
        assert_eq!(a, format!("{:?}", render_scene(&spec).unwrap()));
        let mut other = spec.clone();
        other.noise.seed += 1;
        assert_ne!(a, format!("{:?}", render_scene(&other).unwrap()));
    }

    #[test]
    fn spec_json_round_trip() {
        let mut spec = SceneSpec::standard(1, 2, 2);
        spec.moving_points.push(MovingPoint {
            start: [0.0, 0.0, 2.0],
            motion: Motion::Piecewise { keyframes: vec![Keyframe { frame: 0.0, offset: [0.0; 3] }] },
        });
        let text = serde_json::to_string_pretty(&spec).unwrap();
        assert!(text.contains("\"kind\": \"sinusoid\""));
        let back: SceneSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = SceneSpec::standard(1, 1, 0);
        spec.frames = 1;
        assert!(render_scene(&spec).is_err());
        let mut spec = SceneSpec::standard(1, 1, 0);
        spec.noise.track_std_px = -1.0;
        assert!(render_scene(&spec).is_err());
    }

    #[test]
    fn point_behind_camera_is_invisible_there() {
        let spec = SceneSpec {
            frames: 20,
            frame_rate: 30.0,
            views: vec![CameraModel::perspective(128, 128, 60.0).unwrap()],
            baseline_m: 0.063,
            camera: CameraPath::default(),
            static_points: vec![],
            moving_points: vec![MovingPoint {
                start: [0.0, 0.0, 1.0],
                motion: Motion::Linear { velocity: [0.0, 0.0, -0.1] },
            }],
            noise: NoiseSpec::default(),
        };
        let bundle = render_scene(&spec).unwrap();
        let t = &bundle.views[0].tracks[0];
        assert!(t.visible[..10].iter().all(|v| *v));
        assert!(t.visible[10..].iter().all(|v| !*v));
    }

    #[test]
    fn nearer_point_occludes() {
        let spec = SceneSpec {
            frames: 3,
            frame_rate: 30.0,
            views: vec![CameraModel::perspective(64, 64, 60.0).unwrap()],
            baseline_m: 0.063,
            camera: CameraPath::default(),
            static_points: vec![[0.0, 0.0, 4.0], [0.0, 0.0, 2.0]],
            moving_points: vec![],
            noise: NoiseSpec::default(),
        };
        let bundle = render_scene(&spec).unwrap();
        let ids: Vec<u32> = bundle.views[0].tracks.iter().map(|t| t.track_id).collect();
        assert_eq!(ids, vec![1]);
        let disp = bundle.disparity_map(0, 0);
        let bf = 0.063 * spec.views[0].focal;
        assert_eq!(disp.disparity[(32, 32)], bf / 2.0);
        assert_eq!(disp.valid_count(), SPLAT_SIZE * SPLAT_SIZE);
    }

    #[test]
    fn depth_noise_matches_first_order_propagation() {
        let model = CameraModel::perspective_with_focal(64, 64, 1000.0).unwrap();
        let spec = SceneSpec {
            frames: 1000,
            frame_rate: 30.0,
            views: vec![model],
            baseline_m: 0.063,
            camera: CameraPath::default(),
            static_points: vec![[0.0, 0.0, 2.0]],
            moving_points: vec![],
            noise: NoiseSpec { disparity_std_px: 0.5, track_std_px: 0.0, seed: 11 },
        };
        let bundle = render_scene(&spec).unwrap();
        let lifted = lift_all(&bundle, 0);
        let errs: Vec<f64> = lifted[0].visible_frames().map(|i| lifted[0].points[i].z - 2.0).collect();
        assert_eq!(errs.len(), 1000);
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        let std = (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (errs.len() - 1) as f64).sqrt();
        let expected = 0.5 * 4.0 / (0.063 * 1000.0);
        assert!((std / expected - 1.0).abs() < 0.2, "std {std} expected {expected}");
    }

    #[test]
    fn evaluation_identities() {
        let bundle = render_scene(&SceneSpec::standard(5, 10, 10)).unwrap();
        let lifted = lift_all(&bundle, 0);
        let same = evaluate_denoising(&bundle, &lifted, &lifted, &[1, 3, 5]).unwrap();
        for r in &same.per_track {
            assert_eq!(r.rmse_pre, r.rmse_post);
        }
        let truth: Vec<Track3D> = truth_as_tracks(&bundle)
            .into_iter()
            .zip(&lifted)
            .map(|(mut t, l)| {
                // restrict truth to the lifted visibility
                for i in 0..t.visible.len() {
                    t.visible[i] &= l.visible[i];
                }
                t
            })
            .collect();
        let exact = evaluate_denoising(&bundle, &truth, &truth, &[1, 3, 5]).unwrap();
        assert!(exact.per_track.iter().all(|r| r.rmse_post == 0.0));
        assert!(matches!(evaluate_denoising(&bundle, &lifted[..1], &lifted[1..2], &[1]), Err(SynthError::Mismatch(_))));
    }
}
