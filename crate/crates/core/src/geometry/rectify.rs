use nalgebra::{Matrix3, Vector3};

use super::{CameraModel, CameraPose, GeometryError, RigCalibration};

/// A stereo pair re-oriented so that both cameras share one orientation whose
/// x-axis is the baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct RectifiedPair {
    pub left: CameraPose,
    pub right: CameraPose,
    /// Common intrinsics of both rectified views, principal point centered.
    pub model: CameraModel,
    pub baseline_m: f64,
}

impl RectifiedPair {
    /// Baseline expressed in the rectified camera frame; `(b, 0, 0)` for a
    /// valid pair.
    pub fn baseline_in_rectified_frame(&self) -> Vector3<f64> {
        self.left.world_to_camera(&self.right.position)
    }

    /// Rotation taking rectified-camera coordinates to the coordinates of the
    /// original camera with world-from-camera orientation `original`. This is
    /// the `relative_rotation` argument of [`super::reproject_image`] when
    /// resampling the original image into the rectified view.
    pub fn rotation_into(&self, original: &Matrix3<f64>) -> Matrix3<f64> {
        original.tr_mul(&self.left.orientation)
    }
}

/// Rectifies the rig mounted at `left_pose`.
///
/// The new x-axis is the baseline direction, y is
/// `normalize(mean optical axis x baseline)` and `z = x x y`, so both optical
/// axes are parallel and perpendicular to the baseline. `model` supplies the
/// output intrinsics; its principal point is re-centered.
pub fn rectify_rig(
    left_pose: &CameraPose,
    rig: &RigCalibration,
    model: &CameraModel,
) -> Result<RectifiedPair, GeometryError> {
    let baseline_cam = rig.relative_position;
    let baseline_len = baseline_cam.norm();
    if !(rig.baseline_m > 0.0) || baseline_len < 1e-12 {
        return Err(GeometryError::DegenerateRig(format!(
            "baseline length {baseline_len} (declared {})",
            rig.baseline_m
        )));
    }
    let r_left = left_pose.orientation;
    let r_right = r_left * rig.relative_orientation;
    let right_center = left_pose.position + r_left * baseline_cam;

    let x = (r_left * baseline_cam) / baseline_len;
    let mean_axis = r_left.column(2) + r_right.column(2);
    let y = mean_axis.cross(&x);
    let y_len = y.norm();
    if y_len < 1e-9 {
        return Err(GeometryError::DegenerateRig("optical axes parallel to the baseline".into()));
    }
    let y = y / y_len;
    let z = x.cross(&y);
    let orientation = Matrix3::from_columns(&[x, y, z]);

    Ok(RectifiedPair {
        left: CameraPose { frame_index: left_pose.frame_index, position: left_pose.position, orientation },
        right: CameraPose { frame_index: left_pose.frame_index, position: right_center, orientation },
        model: model.centered()?,
        baseline_m: baseline_len,
    })
}
