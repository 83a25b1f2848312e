//! Stereo flow to disparity to pseudo-metric depth.
//!
//! Rejection stages run in a fixed order: flow checks, depth conversion with
//! range cutoff, then the occlusion-boundary gradient test on metric depth.
//! Every stage can only shrink the valid set.

use serde::{Deserialize, Serialize};

use crate::grid::{bilinear_footprint, Grid};

#[derive(Debug, thiserror::Error)]
pub enum DepthError {
    #[error("grid shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("{name} must be positive and finite, got {value}")]
    NonPositive { name: &'static str, value: f64 },
}

/// Dense left-to-right flow from the stereo matcher plus its cycle error.
/// NaN marks pixels the producer could not estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct StereoFlowField {
    pub flow_x: Grid<f64>,
    pub flow_y: Grid<f64>,
    /// Left-right-left cycle consistency error, pixels.
    pub cycle_error: Grid<f64>,
    pub frame_index: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DisparityMap {
    pub disparity: Grid<f64>,
    pub valid: Grid<bool>,
    pub frame_index: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    /// Z-depth in meters.
    pub depth: Grid<f64>,
    pub valid: Grid<bool>,
    pub baseline_m: f64,
    pub focal_px: f64,
    pub frame_index: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowThresholds {
    pub max_vertical_flow_px: f64,
    pub max_cycle_error_px: f64,
}

impl Default for FlowThresholds {
    fn default() -> Self {
        Self { max_vertical_flow_px: 1.0, max_cycle_error_px: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DepthConfig {
    pub baseline_m: f64,
    pub max_depth_m: f64,
    pub grad_threshold: f64,
    #[serde(flatten)]
    pub flow: FlowThresholds,
}

impl Default for DepthConfig {
    fn default() -> Self {
        Self {
            baseline_m: crate::geometry::RigCalibration::NOMINAL_BASELINE_M,
            max_depth_m: 20.0,
            grad_threshold: 0.3,
            flow: FlowThresholds::default(),
        }
    }
}

impl DisparityMap {
    /// Disparity grid where non-finite or non-positive samples are invalid.
    pub fn from_grid(disparity: Grid<f64>, frame_index: u32) -> Self {
        let valid = disparity.map(|d| d.is_finite() && *d > 0.0);
        Self { disparity, valid, frame_index }
    }

    /// Storage form with NaN for invalid pixels.
    pub fn to_f32_grid(&self) -> Grid<f32> {
        masked_f32(&self.disparity, &self.valid)
    }

    pub fn valid_count(&self) -> usize {
        self.valid.data().iter().filter(|v| **v).count()
    }
}

impl DepthMap {
    pub fn to_f32_grid(&self) -> Grid<f32> {
        masked_f32(&self.depth, &self.valid)
    }

    pub fn valid_count(&self) -> usize {
        self.valid.data().iter().filter(|v| **v).count()
    }

    /// Inverse of [`disparity_to_depth`] on the valid set.
    pub fn to_disparity(&self) -> DisparityMap {
        let bf = self.baseline_m * self.focal_px;
        let disparity = Grid::from_fn(self.depth.width(), self.depth.height(), |x, y| {
            if self.valid[(x, y)] {
                bf / self.depth[(x, y)]
            } else {
                f64::NAN
            }
        });
        DisparityMap { disparity, valid: self.valid.clone(), frame_index: self.frame_index }
    }
}

fn masked_f32(values: &Grid<f64>, valid: &Grid<bool>) -> Grid<f32> {
    Grid::from_fn(values.width(), values.height(), |x, y| if valid[(x, y)] { values[(x, y)] as f32 } else { f32::NAN })
}

/// Keeps `flow_x` as disparity where the vertical flow and cycle error are
/// within threshold and the horizontal flow is positive.
pub fn flow_to_disparity(flow: &StereoFlowField, thresholds: &FlowThresholds) -> Result<DisparityMap, DepthError> {
    if !flow.flow_x.same_dims(&flow.flow_y) || !flow.flow_x.same_dims(&flow.cycle_error) {
        return Err(DepthError::ShapeMismatch(format!(
            "flow_x {:?}, flow_y {:?}, cycle_error {:?}",
            flow.flow_x.dims(),
            flow.flow_y.dims(),
            flow.cycle_error.dims()
        )));
    }
    let (w, h) = flow.flow_x.dims();
    let valid = Grid::from_fn(w, h, |x, y| {
        let fx = flow.flow_x[(x, y)];
        let fy = flow.flow_y[(x, y)];
        let cyc = flow.cycle_error[(x, y)];
        fx.is_finite()
            && fy.is_finite()
            && cyc.is_finite()
            && fy.abs() <= thresholds.max_vertical_flow_px
            && cyc <= thresholds.max_cycle_error_px
            && fx > 0.0
    });
    let disparity = Grid::from_fn(w, h, |x, y| if valid[(x, y)] { flow.flow_x[(x, y)] } else { f64::NAN });
    Ok(DisparityMap { disparity, valid, frame_index: flow.frame_index })
}

/// `depth = baseline * focal / disparity`; depths beyond `max_depth_m` are invalid.
pub fn disparity_to_depth(
    disp: &DisparityMap,
    baseline_m: f64,
    focal_px: f64,
    max_depth_m: f64,
) -> Result<DepthMap, DepthError> {
    for (name, value) in [("baseline_m", baseline_m), ("focal_px", focal_px), ("max_depth_m", max_depth_m)] {
        if !(value > 0.0 && value.is_finite()) {
            return Err(DepthError::NonPositive { name, value });
        }
    }
    let bf = baseline_m * focal_px;
    let (w, h) = disp.disparity.dims();
    let mut depth = Grid::filled(w, h, f64::NAN);
    let mut valid = Grid::filled(w, h, false);
    for y in 0..h {
        for x in 0..w {
            let d = disp.disparity[(x, y)];
            if disp.valid[(x, y)] && d > 0.0 && d.is_finite() {
                let z = bf / d;
                if z <= max_depth_m {
                    depth.set(x, y, z);
                    valid.set(x, y, true);
                }
            }
        }
    }
    Ok(DepthMap { depth, valid, baseline_m, focal_px, frame_index: disp.frame_index })
}

/// Invalidates pixels whose central-difference depth gradient exceeds
/// `threshold * depth` in x or y.
///
/// A direction whose two neighbours are not both valid (image border or
/// already rejected pixel) is not tested. All tests read the input validity,
/// so the result does not depend on scan order.
pub fn reject_occlusion_boundaries(depth: &DepthMap, threshold: f64) -> DepthMap {
    let (w, h) = depth.depth.dims();
    let d = &depth.depth;
    let ok = &depth.valid;
    let both = |a: Option<(usize, usize)>, b: Option<(usize, usize)>| match (a, b) {
        (Some(a), Some(b)) if ok[a] && ok[b] => Some((d[a] - d[b]).abs()),
        _ => None,
    };
    let valid = Grid::from_fn(w, h, |x, y| {
        if !ok[(x, y)] {
            return false;
        }
        let limit = threshold * d[(x, y)];
        let left = x.checked_sub(1).map(|xm| (xm, y));
        let right = (x + 1 < w).then_some((x + 1, y));
        let up = y.checked_sub(1).map(|ym| (x, ym));
        let down = (y + 1 < h).then_some((x, y + 1));
        let gx = both(right, left);
        let gy = both(down, up);
        !(gx.is_some_and(|g| g > limit) || gy.is_some_and(|g| g > limit))
    });
    let depth_grid = Grid::from_fn(w, h, |x, y| if valid[(x, y)] { d[(x, y)] } else { f64::NAN });
    DepthMap {
        depth: depth_grid,
        valid,
        baseline_m: depth.baseline_m,
        focal_px: depth.focal_px,
        frame_index: depth.frame_index,
    }
}

/// Bilinear depth lookup at continuous pixel `(u, v)` in grid coordinates.
///
/// Any contributing neighbour that is invalid (or outside the grid) makes the
/// sample invalid, so depths are never blended across rejected pixels.
pub fn sample_depth(depth: &DepthMap, u: f64, v: f64) -> Option<f64> {
    let corners = bilinear_footprint(u, v, depth.depth.width(), depth.depth.height())?;
    let mut acc = 0.0;
    for (x, y, w) in corners {
        if w == 0.0 {
            continue;
        }
        if !depth.valid[(x, y)] {
            return None;
        }
        acc += w * depth.depth[(x, y)];
    }
    Some(acc)
}

/// Full per-frame chain for one flow field.
pub fn depth_from_flow(flow: &StereoFlowField, focal_px: f64, cfg: &DepthConfig) -> Result<DepthMap, DepthError> {
    let disp = flow_to_disparity(flow, &cfg.flow)?;
    depth_from_disparity(&disp, focal_px, cfg)
}

/// Depth conversion, range cutoff and boundary rejection.
pub fn depth_from_disparity(disp: &DisparityMap, focal_px: f64, cfg: &DepthConfig) -> Result<DepthMap, DepthError> {
    let depth = disparity_to_depth(disp, cfg.baseline_m, focal_px, cfg.max_depth_m)?;
    Ok(reject_occlusion_boundaries(&depth, cfg.grad_threshold))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn flow_1px(fx: f64, fy: f64, cyc: f64) -> StereoFlowField {
        StereoFlowField {
            flow_x: Grid::filled(1, 1, fx),
            flow_y: Grid::filled(1, 1, fy),
            cycle_error: Grid::filled(1, 1, cyc),
            frame_index: 0,
        }
    }

    fn depth_from_rows(rows: &[&[f64]]) -> DepthMap {
        let h = rows.len();
        let w = rows[0].len();
        let depth = Grid::from_fn(w, h, |x, y| rows[y][x]);
        let valid = depth.map(|d| d.is_finite());
        DepthMap { depth, valid, baseline_m: 0.063, focal_px: 1000.0, frame_index: 0 }
    }

    #[test]
    fn flow_checks() {
        let t = FlowThresholds::default();
        let ok = flow_to_disparity(&flow_1px(5.0, 0.2, 0.3), &t).unwrap();
        assert!(ok.valid[(0, 0)]);
        assert_eq!(ok.disparity[(0, 0)], 5.0);
        assert!(!flow_to_disparity(&flow_1px(5.0, 1.5, 0.0), &t).unwrap().valid[(0, 0)]);
        assert!(!flow_to_disparity(&flow_1px(5.0, 0.0, 1.2), &t).unwrap().valid[(0, 0)]);
        assert!(!flow_to_disparity(&flow_1px(-0.5, 0.0, 0.0), &t).unwrap().valid[(0, 0)]);
        assert!(!flow_to_disparity(&flow_1px(0.0, 0.0, 0.0), &t).unwrap().valid[(0, 0)]);
        assert!(!flow_to_disparity(&flow_1px(f64::NAN, 0.0, 0.0), &t).unwrap().valid[(0, 0)]);
        // Thresholds are inclusive.
        assert!(flow_to_disparity(&flow_1px(2.0, -1.0, 1.0), &t).unwrap().valid[(0, 0)]);
    }

    #[test]
    fn flow_shape_mismatch() {
        let mut f = flow_1px(1.0, 0.0, 0.0);
        f.cycle_error = Grid::filled(2, 1, 0.0);
        assert!(matches!(flow_to_disparity(&f, &FlowThresholds::default()), Err(DepthError::ShapeMismatch(_))));
    }

    #[test]
    fn depth_formula_and_cutoff() {
        let disp = DisparityMap::from_grid(Grid::from_vec(3, 1, vec![63.0, 3.0, f64::NAN]).unwrap(), 4);
        let d = disparity_to_depth(&disp, 0.063, 1000.0, 20.0).unwrap();
        assert!((d.depth[(0, 0)] - 1.0).abs() < 1e-15);
        assert!(d.valid[(0, 0)]);
        assert!(!d.valid[(1, 0)], "21 m is beyond the cutoff");
        assert!(!d.valid[(2, 0)]);
        assert_eq!(d.frame_index, 4);
        assert!(disparity_to_depth(&disp, 0.0, 1000.0, 20.0).is_err());
        assert!(disparity_to_depth(&disp, 0.063, -1.0, 20.0).is_err());
    }

    #[test]
    fn constant_plane_keeps_everything() {
        let row: &[f64] = &[2.0; 6];
        let d = depth_from_rows(&[row; 5]);
        assert_eq!(reject_occlusion_boundaries(&d, 0.3).valid_count(), 30);
    }

    #[test]
    fn step_edge_band_is_rejected() {
        let row: &[f64] = &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0];
        let d = reject_occlusion_boundaries(&depth_from_rows(&[row; 4]), 0.3);
        for y in 0..4 {
            let kept: Vec<bool> = (0..6).map(|x| d.valid[(x, y)]).collect();
            assert_eq!(kept, [true, true, false, false, true, true]);
        }
    }

    #[test]
    fn slanted_plane_is_kept() {
        // Each pixel 10% of the base depth further than its left neighbour.
        let row: Vec<f64> = (0..8).map(|x| 1.0 + 0.1 * x as f64).collect();
        let d = depth_from_rows(&[&row[..]; 3]);
        assert_eq!(reject_occlusion_boundaries(&d, 0.3).valid_count(), 24);
    }

    #[test]
    fn invalid_neighbour_skips_that_direction() {
        let nan = f64::NAN;
        // Centre pixel has a huge jump only across an invalid neighbour.
        let d = depth_from_rows(&[&[1.0, 1.0, 1.0], &[nan, 1.0, 9.0], &[1.0, 1.0, 1.0]]);
        let out = reject_occlusion_boundaries(&d, 0.3);
        assert!(out.valid[(1, 1)]);
        assert!(!out.valid[(0, 1)]);
    }

    #[test]
    fn strict_bilinear_sampling() {
        let d = depth_from_rows(&[&[1.0, 2.0, f64::NAN]]);
        assert_eq!(sample_depth(&d, 0.0, 0.0), Some(1.0));
        assert_eq!(sample_depth(&d, 0.5, 0.0), Some(1.5));
        assert_eq!(sample_depth(&d, 1.0, 0.0), Some(2.0));
        assert_eq!(sample_depth(&d, 1.5, 0.0), None);
        assert_eq!(sample_depth(&d, 0.5, 0.5), None, "outside the single row");
        assert_eq!(sample_depth(&d, f64::NAN, 0.0), None);
    }

    fn arb_disparity() -> impl Strategy<Value = DisparityMap> {
        prop::collection::vec(prop_oneof![4 => 0.5f64..200.0, 1 => Just(f64::NAN), 1 => -5.0f64..0.0], 16 * 8)
            .prop_map(|v| DisparityMap::from_grid(Grid::from_vec(16, 8, v).unwrap(), 0))
    }

    proptest! {
        #[test]
        fn depth_round_trip_and_masks(disp in arb_disparity(), b in 0.01f64..0.5, f in 100.0f64..2000.0) {
            let depth = disparity_to_depth(&disp, b, f, 20.0).unwrap();
            let back = depth.to_disparity();
            let rejected = reject_occlusion_boundaries(&depth, 0.3);
            for y in 0..8 {
                for x in 0..16 {
                    prop_assert!(!depth.valid[(x, y)] || disp.valid[(x, y)]);
                    prop_assert!(!rejected.valid[(x, y)] || depth.valid[(x, y)]);
                    if depth.valid[(x, y)] {
                        let z = depth.depth[(x, y)];
                        prop_assert!(z > 0.0 && z <= 20.0);
                        let rel = (back.disparity[(x, y)] - disp.disparity[(x, y)]).abs() / disp.disparity[(x, y)];
                        prop_assert!(rel < 1e-9);
                        prop_assert!(((z * disp.disparity[(x, y)]) / (b * f) - 1.0).abs() < 1e-9);
                    }
                }
            }
        }

        #[test]
        fn larger_disparity_is_closer(d1 in 0.1f64..100.0, extra in 1e-6f64..100.0) {
            let grid = Grid::from_vec(2, 1, vec![d1, d1 + extra]).unwrap();
            let depth = disparity_to_depth(&DisparityMap::from_grid(grid, 0), 0.063, 1000.0, 1e9).unwrap();
            prop_assert!(depth.depth[(1, 0)] < depth.depth[(0, 0)]);
        }

        #[test]
        fn doubling_baseline_doubles_depth(disp in arb_disparity()) {
            let a = disparity_to_depth(&disp, 0.063, 700.0, 1e9).unwrap();
            let b = disparity_to_depth(&disp, 0.126, 700.0, 1e9).unwrap();
            for (za, zb) in a.depth.data().iter().zip(b.depth.data()) {
                if za.is_finite() {
                    prop_assert_eq!(2.0 * za, *zb);
                }
            }
        }
    }
}
