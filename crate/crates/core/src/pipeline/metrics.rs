//! Scene-flow and depth metrics between predicted and reference tracks.
//!
//! Points are expected in a camera-centred frame (z forward), so the `z`
//! coordinate is the depth used by the depth metrics.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::tracks::TrackPoints;

/// Positions at t0 and t1.
type Endpoints = [Vector3<f64>; 2];

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("no track is visible at frames {0} and {1} in both sets")]
    NoCorrespondence(u32, u32),
    #[error("duplicate track id {0}")]
    DuplicateId(u32),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneFlowMetrics {
    pub matched: usize,
    /// Factor applied to the predictions before comparison.
    pub scale: f64,
    /// Mean end-point error of the motion vectors, meters.
    pub epe3d: f64,
    /// Percent of motion vectors with error below 5 cm.
    pub delta_005: f64,
    /// Percent below 10 cm.
    pub delta_010: f64,
    pub abs_rel: f64,
    /// Percent of depths with `max(p/g, g/p) < 1.25`.
    pub delta_125: f64,
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Compares predicted and reference motion between frames `t0` and `t1`.
///
/// Tracks correspond by id and must be visible at both frames in both sets.
/// Predictions are first scaled by the median of `|g0| / |p0|` over the
/// matched points at `t0`.
pub fn eval_metrics<P: TrackPoints, G: TrackPoints>(
    pred: &[P],
    truth: &[G],
    t0: u32,
    t1: u32,
) -> Result<SceneFlowMetrics, MetricsError> {
    let mut by_id: HashMap<u32, &G> = HashMap::with_capacity(truth.len());
    for g in truth {
        if by_id.insert(g.track_id(), g).is_some() {
            return Err(MetricsError::DuplicateId(g.track_id()));
        }
    }
    let mut seen = std::collections::HashSet::new();
    let mut pairs: Vec<(Endpoints, Endpoints)> = Vec::new();
    for p in pred {
        if !seen.insert(p.track_id()) {
            return Err(MetricsError::DuplicateId(p.track_id()));
        }
        let Some(g) = by_id.get(&p.track_id()) else { continue };
        let (Some(p0), Some(p1), Some(g0), Some(g1)) =
            (p.point(t0 as usize), p.point(t1 as usize), g.point(t0 as usize), g.point(t1 as usize))
        else {
            continue;
        };
        pairs.push(([*p0, *p1], [*g0, *g1]));
    }
    let ratios: Vec<f64> =
        pairs.iter().filter(|(p, _)| p[0].norm() > 0.0).map(|(p, g)| g[0].norm() / p[0].norm()).collect();
    let scale = median(ratios).ok_or(MetricsError::NoCorrespondence(t0, t1))?;

    let n = pairs.len() as f64;
    let mut epe = 0.0;
    let (mut d5, mut d10) = (0usize, 0usize);
    let (mut abs_rel, mut d125, mut depths) = (0.0, 0usize, 0usize);
    for (p, g) in &pairs {
        let err = ((p[1] - p[0]) * scale - (g[1] - g[0])).norm();
        epe += err;
        d5 += (err < 0.05) as usize;
        d10 += (err < 0.10) as usize;
        for k in 0..2 {
            let (pz, gz) = (p[k].z * scale, g[k].z);
            if gz > 0.0 && pz > 0.0 {
                depths += 1;
                abs_rel += (pz - gz).abs() / gz;
                d125 += ((pz / gz).max(gz / pz) < 1.25) as usize;
            }
        }
    }
    let pct = |k: usize, of: usize| if of == 0 { 0.0 } else { 100.0 * k as f64 / of as f64 };
    Ok(SceneFlowMetrics {
        matched: pairs.len(),
        scale,
        epe3d: epe / n,
        delta_005: pct(d5, pairs.len()),
        delta_010: pct(d10, pairs.len()),
        abs_rel: if depths == 0 { 0.0 } else { abs_rel / depths as f64 },
        delta_125: pct(d125, depths),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracks::Trajectory;

    fn traj(id: u32, a: [f64; 3], b: [f64; 3]) -> Trajectory {
        Trajectory { track_id: id, query_frame: 0, points: vec![a.into(), b.into()], visible: vec![true, true] }
    }

    fn scene() -> Vec<Trajectory> {
        (0..9)
            .map(|i| {
                let x = i as f64 * 0.3 - 1.2;
                traj(i, [x, 0.5, 2.0 + i as f64 * 0.2], [x + 0.1, 0.45, 2.1 + i as f64 * 0.2])
            })
            .collect()
    }

    #[test]
    fn identical_sets() {
        let s = scene();
        let m = eval_metrics(&s, &s, 0, 1).unwrap();
        assert_eq!(m.matched, 9);
        assert_eq!(m.scale, 1.0);
        assert_eq!(m.epe3d, 0.0);
        assert_eq!((m.delta_005, m.delta_010, m.delta_125), (100.0, 100.0, 100.0));
        assert_eq!(m.abs_rel, 0.0);
    }

    #[test]
    fn empty_correspondence_is_an_error() {
        let s = scene();
        let other: Vec<Trajectory> = s.iter().map(|t| Trajectory { track_id: t.track_id + 100, ..t.clone() }).collect();
        assert_eq!(eval_metrics(&s, &other, 0, 1), Err(MetricsError::NoCorrespondence(0, 1)));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut s = scene();
        s.push(s[0].clone());
        assert_eq!(eval_metrics(&s, &scene(), 0, 1), Err(MetricsError::DuplicateId(0)));
    }
}
