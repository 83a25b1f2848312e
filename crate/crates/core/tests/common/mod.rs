//! Reference implementations used as oracles by the integration tests.
//! Deliberately naive: every loss is written out from its definition.
#![allow(dead_code)]

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use trackfuse::depth::{depth_from_disparity, DepthConfig};
use trackfuse::synth::{render_scene, GroundTruthBundle, SceneSpec};
use trackfuse::trackopt::{trail_motion_magnitude, MotionMagnitude, OptimizerConfig};
use trackfuse::tracks::lift_track;
use trackfuse::Track3D;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random lifted track: a moving camera, points 1 to 5 m away jittering along
/// their rays, roughly 15% of frames hidden (at least three stay visible).
pub fn random_track(rng: &mut ChaCha8Rng, id: u32, n_frames: usize, moving: bool) -> Track3D {
    let base = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-0.5..0.5), rng.random_range(1.0..5.0));
    let vel = if moving {
        Vector3::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05))
    } else {
        Vector3::zeros()
    };
    let mut centers = Vec::with_capacity(n_frames);
    let mut points = Vec::with_capacity(n_frames);
    let mut visible = Vec::with_capacity(n_frames);
    for i in 0..n_frames {
        let c = Vector3::new(0.01 * i as f64, 0.02 * (i as f64 * 0.3).sin(), 0.0);
        let truth = base + vel * i as f64;
        let ray = (truth - c).normalize();
        points.push(truth + ray * rng.random_range(-0.1..0.1));
        centers.push(c);
        visible.push(rng.random_bool(0.85));
    }
    for i in [0, n_frames / 2, n_frames - 1] {
        visible[i] = true;
    }
    Track3D::from_points(id, 0, points, visible, centers)
}

/// Offsets bounded well inside the depth singularity.
pub fn random_deltas(rng: &mut ChaCha8Rng, track: &Track3D, scale: f64) -> Vec<f64> {
    track.visible_frames().map(|_| rng.random_range(-scale..scale)).collect()
}

fn moved(track: &Track3D, deltas: &[f64]) -> Vec<(usize, Vector3<f64>)> {
    track.visible_frames().zip(deltas).map(|(i, d)| (i, track.points[i] + track.rays[i] * *d)).collect()
}

/// Mean norm of the offset points.
pub fn mean_norm(track: &Track3D, deltas: &[f64]) -> f64 {
    let pts = moved(track, deltas);
    pts.iter().map(|(_, p)| p.norm()).sum::<f64>() / pts.len() as f64
}

/// All-pairs static loss. `normaliser` defaults to the mean norm at `deltas`.
pub fn brute_static(track: &Track3D, deltas: &[f64], normaliser: Option<f64>) -> f64 {
    let pts = moved(track, deltas);
    let np = normaliser.unwrap_or_else(|| mean_norm(track, deltas));
    let mut acc = 0.0;
    for (_, a) in &pts {
        for (_, b) in &pts {
            acc += (a - b).norm_squared();
        }
    }
    acc / (np * np)
}

/// Ray-projected acceleration energy, summed over visible triples.
pub fn brute_dynamic(track: &Track3D, deltas: &[f64], windows: &[usize]) -> f64 {
    let n = track.n_frames();
    let mut at = vec![None; n];
    for (i, p) in moved(track, deltas) {
        at[i] = Some(p);
    }
    let mut ws = windows.to_vec();
    ws.sort_unstable();
    ws.dedup();
    let mut acc = 0.0;
    for i in 0..n {
        for &w in &ws {
            if i < w || i + w >= n {
                continue;
            }
            if let (Some(prev), Some(cur), Some(next)) = (at[i - w], at[i], at[i + w]) {
                let a = track.rays[i].dot(&(next - 2.0 * cur + prev));
                acc += a * a;
            }
        }
    }
    acc
}

pub fn brute_reg(track: &Track3D, deltas: &[f64], lambda: f64) -> f64 {
    let mut acc = 0.0;
    for (i, d) in track.visible_frames().zip(deltas) {
        let dist = (track.points[i] - track.camera_centers[i]).norm();
        let e = 1.0 / (dist + d) - 1.0 / dist;
        acc += e * e;
    }
    lambda * acc
}

pub fn logistic(m: f64, m0: f64) -> f64 {
    1.0 / (1.0 + (m - m0).exp())
}

/// Objective with the static normaliser pinned to `normaliser`.
pub fn frozen_objective(track: &Track3D, deltas: &[f64], m: f64, cfg: &OptimizerConfig, normaliser: f64) -> f64 {
    let s = logistic(m, cfg.m0);
    s * brute_static(track, deltas, Some(normaliser))
        + (1.0 - s) * brute_dynamic(track, deltas, &cfg.windows)
        + brute_reg(track, deltas, cfg.lambda_reg)
}

/// Central differences of [`frozen_objective`], normaliser fixed at `deltas`.
pub fn fd_gradient(track: &Track3D, deltas: &[f64], m: f64, cfg: &OptimizerConfig, h: f64) -> Vec<f64> {
    let np = mean_norm(track, deltas);
    (0..deltas.len())
        .map(|k| {
            let mut up = deltas.to_vec();
            let mut down = deltas.to_vec();
            up[k] += h;
            down[k] -= h;
            (frozen_objective(track, &up, m, cfg, np) - frozen_objective(track, &down, m, cfg, np)) / (2.0 * h)
        })
        .collect()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// Renders `spec`, lifts view 0 straight from the in-memory disparity and
/// computes motion magnitudes. Tracks with fewer than three lifted frames
/// are dropped.
pub fn lift_scene(spec: &SceneSpec) -> (GroundTruthBundle, Vec<Track3D>, Vec<MotionMagnitude>) {
    let bundle = render_scene(spec).expect("scene renders");
    let view = &bundle.views[0];
    let cfg = DepthConfig { baseline_m: spec.baseline_m, ..DepthConfig::default() };
    let depths: Vec<_> = (0..bundle.n_frames() as u32)
        .map(|f| depth_from_disparity(&bundle.disparity_map(0, f), view.model.focal, &cfg).unwrap())
        .collect();
    let lifted: Vec<Track3D> = view
        .tracks
        .iter()
        .map(|t| lift_track(t, &bundle.poses, &depths, &view.model).unwrap())
        .filter(|t| t.visible_frames().count() >= 3)
        .collect();
    let ocfg = OptimizerConfig::default();
    let mags =
        lifted.iter().map(|t| trail_motion_magnitude(t, &bundle.poses, &view.model, ocfg.trail_window)).collect();
    (bundle, lifted, mags)
}

/// Every file under `root`, keyed by path relative to it.
pub fn snapshot(root: &std::path::Path) -> std::collections::BTreeMap<std::path::PathBuf, Vec<u8>> {
    fn walk(
        root: &std::path::Path,
        dir: &std::path::Path,
        out: &mut std::collections::BTreeMap<std::path::PathBuf, Vec<u8>>,
    ) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = std::collections::BTreeMap::new();
    walk(root, root, &mut out);
    out
}
