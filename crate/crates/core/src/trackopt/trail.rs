use serde::{Deserialize, Serialize};

use crate::geometry::{CameraModel, PoseSet};
use crate::tracks::TrackPoints;

/// 2D motion magnitude of a track: the 90th nearest-rank percentile of its
/// per-frame trail lengths.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MotionMagnitude {
    /// Pixels.
    pub m: f64,
    /// Trail length per frame, `None` where undefined.
    pub trails: Vec<Option<f64>>,
    /// No frame had a defined trail; `m` is then 0.
    pub empty: bool,
}

/// Nearest-rank percentile (the `ceil(p/100 * n)`-th smallest value) for an
/// integer percentage `p` in `1..=100`. `None` for an empty slice.
pub fn nearest_rank_percentile(values: &[f64], percent: u32) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = (percent as usize * n).div_ceil(100).clamp(1, n);
    Some(sorted[rank - 1])
}

/// Trail length at frame `i` is the largest pixel distance, in frame `i`'s
/// camera, between the track's position at `i` and its positions at
/// `i - 1 ..= i - trail_window`. Projecting both with the same camera makes
/// pure camera motion contribute nothing. Earlier frames with fewer than
/// `trail_window` predecessors use the ones available.
pub fn trail_motion_magnitude<T: TrackPoints + ?Sized>(
    track: &T,
    poses: &PoseSet,
    model: &CameraModel,
    trail_window: usize,
) -> MotionMagnitude {
    let points = track.points();
    let visible = track.visible();
    let mut trails = vec![None; points.len()];
    for i in 0..points.len() {
        if !visible[i] {
            continue;
        }
        let Some(pose) = poses.get(i as u32) else { continue };
        let here = model.project_camera(&pose.world_to_camera(&points[i]), pose.frame_index);
        if !here.in_front {
            continue;
        }
        let mut best: Option<f64> = None;
        for w in 1..=trail_window.min(i) {
            if !visible[i - w] {
                continue;
            }
            let there = model.project_camera(&pose.world_to_camera(&points[i - w]), pose.frame_index);
            if !there.in_front {
                continue;
            }
            let d = (here.pixel.u - there.pixel.u).hypot(here.pixel.v - there.pixel.v);
            best = Some(best.map_or(d, |b: f64| b.max(d)));
        }
        trails[i] = best;
    }
    let defined: Vec<f64> = trails.iter().flatten().copied().collect();
    match nearest_rank_percentile(&defined, 90) {
        Some(m) => MotionMagnitude { m, trails, empty: false },
        None => MotionMagnitude { m: 0.0, trails, empty: true },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{project, CameraPose};
    use crate::tracks::Track3D;
    use nalgebra::{Matrix3, Vector3};

    #[test]
    fn percentile_is_nearest_rank() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(nearest_rank_percentile(&v, 90), Some(9.0));
        let v: Vec<f64> = (1..=30).map(f64::from).collect();
        assert_eq!(nearest_rank_percentile(&v, 90), Some(27.0));
        assert_eq!(nearest_rank_percentile(&[4.0], 90), Some(4.0));
        assert_eq!(nearest_rank_percentile(&[], 90), None);
        let v: Vec<f64> = (1..=11).map(f64::from).collect();
        assert_eq!(nearest_rank_percentile(&v, 90), Some(10.0));
    }

    fn scene(camera_step: f64) -> (Track3D, PoseSet, CameraModel) {
        let model = CameraModel::perspective(512, 512, 60.0).unwrap();
        let n = 100;
        let z = 4.0;
        // 2 px per frame at depth z under a static camera.
        let step = 2.0 * z / model.focal;
        let poses = PoseSet::new(
            (0..n)
                .map(|i| {
                    CameraPose::new(i, Vector3::new(camera_step * i as f64, 0.0, 0.0), Matrix3::identity()).unwrap()
                })
                .collect(),
        )
        .unwrap();
        let pts: Vec<Vector3<f64>> = (0..n).map(|i| Vector3::new(-1.0 + step * i as f64, 0.2, z)).collect();
        let centers = poses.iter().map(|p| p.position).collect();
        (Track3D::from_points(0, 0, pts, vec![true; n as usize], centers), poses, model)
    }

    #[test]
    fn constant_lateral_motion() {
        let (t, poses, model) = scene(0.0);
        let mm = trail_motion_magnitude(&t, &poses, &model, 16);
        assert!((mm.m - 32.0).abs() < 1e-9, "m = {}", mm.m);
        assert!(mm.trails[0].is_none());
        assert!((mm.trails[5].unwrap() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn camera_motion_does_not_change_magnitude() {
        let (a, pa, model) = scene(0.0);
        let (b, pb, _) = scene(0.03);
        let ma = trail_motion_magnitude(&a, &pa, &model, 16);
        let mb = trail_motion_magnitude(&b, &pb, &model, 16);
        assert!((ma.m - mb.m).abs() < 1e-9);
        // The camera motion does move the point across the image.
        let first = project(&b.points[0], pb.get(0).unwrap(), &model).unwrap().pixel.u;
        let last = project(&b.points[99], pb.get(99).unwrap(), &model).unwrap().pixel.u;
        assert!((last - first).abs() > 1.0);
    }

    #[test]
    fn static_point_under_moving_camera() {
        let (mut t, poses, model) = scene(0.05);
        for p in &mut t.points {
            *p = Vector3::new(0.3, 0.1, 5.0);
        }
        assert_eq!(trail_motion_magnitude(&t, &poses, &model, 16).m, 0.0);
    }

    #[test]
    fn no_defined_trail() {
        let (mut t, poses, model) = scene(0.0);
        for (i, v) in t.visible.iter_mut().enumerate() {
            *v = i % 20 == 0;
        }
        let mm = trail_motion_magnitude(&t, &poses, &model, 16);
        assert!(mm.empty);
        assert_eq!(mm.m, 0.0);
    }
}
