use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::path::Path;

use super::GeometryError;

/// World-from-camera pose of the (left) camera at one frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseRecord", into = "PoseRecord")]
pub struct CameraPose {
    pub frame_index: u32,
    /// Camera center in world coordinates, meters.
    pub position: Vector3<f64>,
    /// Columns are the camera axes expressed in world coordinates.
    pub orientation: Matrix3<f64>,
}

fn check_rotation(frame: u32, r: &Matrix3<f64>) -> Result<(), GeometryError> {
    if !r.iter().all(|v| v.is_finite()) {
        return Err(GeometryError::InvalidRotation { frame, reason: "non-finite entry".into() });
    }
    let err = (r.transpose() * r - Matrix3::identity()).amax();
    if err >= 1e-9 {
        return Err(GeometryError::InvalidRotation {
            frame,
            reason: format!("not orthonormal (|R^T R - I| = {err:e})"),
        });
    }
    if r.determinant() <= 0.0 {
        return Err(GeometryError::InvalidRotation { frame, reason: "determinant is not +1".into() });
    }
    Ok(())
}

impl CameraPose {
    pub fn new(frame_index: u32, position: Vector3<f64>, orientation: Matrix3<f64>) -> Result<Self, GeometryError> {
        if !position.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite("camera position"));
        }
        check_rotation(frame_index, &orientation)?;
        Ok(Self { frame_index, position, orientation })
    }

    pub fn identity(frame_index: u32) -> Self {
        Self { frame_index, position: Vector3::zeros(), orientation: Matrix3::identity() }
    }

    #[inline]
    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.orientation.tr_mul(&(p - self.position))
    }

    #[inline]
    pub fn camera_to_world(&self, q: &Vector3<f64>) -> Vector3<f64> {
        self.position + self.orientation * q
    }

    /// Optical axis in world coordinates.
    pub fn forward(&self) -> Vector3<f64> {
        self.orientation.column(2).into_owned()
    }

    /// Pose after applying the world transform `p -> rotation * p + translation`.
    pub fn transformed(&self, rotation: &Matrix3<f64>, translation: &Vector3<f64>) -> Self {
        Self {
            frame_index: self.frame_index,
            position: rotation * self.position + translation,
            orientation: rotation * self.orientation,
        }
    }
}

/// Angle of the rotation `a^T b`, radians.
pub fn rotation_angle(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let rel = a.tr_mul(b);
    ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}

#[derive(Serialize, Deserialize)]
struct PoseRecord {
    frame_index: u32,
    position: [f64; 3],
    /// Row-major 3x3.
    rotation: [f64; 9],
}

fn matrix_from_row_major(r: &[f64; 9]) -> Matrix3<f64> {
    Matrix3::from_row_slice(r)
}

fn matrix_to_row_major(m: &Matrix3<f64>) -> [f64; 9] {
    let mut out = [0.0; 9];
    for row in 0..3 {
        for col in 0..3 {
            out[row * 3 + col] = m[(row, col)];
        }
    }
    out
}

impl TryFrom<PoseRecord> for CameraPose {
    type Error = GeometryError;

    fn try_from(r: PoseRecord) -> Result<Self, Self::Error> {
        CameraPose::new(r.frame_index, Vector3::from(r.position), matrix_from_row_major(&r.rotation))
    }
}

impl From<CameraPose> for PoseRecord {
    fn from(p: CameraPose) -> Self {
        Self { frame_index: p.frame_index, position: p.position.into(), rotation: matrix_to_row_major(&p.orientation) }
    }
}

/// All poses of one clip, sorted by frame index with no duplicates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PoseSet {
    poses: Vec<CameraPose>,
}

impl PoseSet {
    pub fn new(mut poses: Vec<CameraPose>) -> Result<Self, GeometryError> {
        poses.sort_by_key(|p| p.frame_index);
        if let Some(w) = poses.windows(2).find(|w| w[0].frame_index == w[1].frame_index) {
            return Err(GeometryError::DuplicatePose(w[0].frame_index));
        }
        Ok(Self { poses })
    }

    pub fn get(&self, frame_index: u32) -> Option<&CameraPose> {
        // Fast path for the usual dense 0..N layout.
        if let Some(p) = self.poses.get(frame_index as usize) {
            if p.frame_index == frame_index {
                return Some(p);
            }
        }
        self.poses.binary_search_by_key(&frame_index, |p| p.frame_index).ok().map(|i| &self.poses[i])
    }

    pub fn as_slice(&self) -> &[CameraPose] {
        &self.poses
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, CameraPose> {
        self.poses.iter()
    }

    pub fn transformed(&self, rotation: &Matrix3<f64>, translation: &Vector3<f64>) -> Self {
        Self { poses: self.poses.iter().map(|p| p.transformed(rotation, translation)).collect() }
    }

    pub fn load_json(path: &Path) -> Result<Self, GeometryError> {
        let text = std::fs::read_to_string(path)?;
        Self::new(serde_json::from_str(&text)?)
    }

    pub fn save_json(&self, path: &Path) -> Result<(), GeometryError> {
        std::fs::write(path, serde_json::to_string_pretty(&self.poses)?)?;
        Ok(())
    }
}

/// Pose of the right camera relative to the left one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RigRecord", into = "RigRecord")]
pub struct RigCalibration {
    /// Right camera center in the left camera frame, meters.
    pub relative_position: Vector3<f64>,
    /// Right camera axes in the left camera frame.
    pub relative_orientation: Matrix3<f64>,
    pub baseline_m: f64,
}

impl RigCalibration {
    /// Nominal headset-style rig: parallel cameras 6.3 cm apart along +x.
    pub const NOMINAL_BASELINE_M: f64 = 0.063;

    pub fn nominal() -> Self {
        Self {
            relative_position: Vector3::new(Self::NOMINAL_BASELINE_M, 0.0, 0.0),
            relative_orientation: Matrix3::identity(),
            baseline_m: Self::NOMINAL_BASELINE_M,
        }
    }

    pub fn new(
        relative_position: Vector3<f64>,
        relative_orientation: Matrix3<f64>,
        baseline_m: f64,
    ) -> Result<Self, GeometryError> {
        if !(baseline_m > 0.0 && baseline_m.is_finite()) {
            return Err(GeometryError::DegenerateRig(format!("baseline_m must be positive, got {baseline_m}")));
        }
        if !relative_position.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite("rig position"));
        }
        check_rotation(0, &relative_orientation)?;
        Ok(Self { relative_position, relative_orientation, baseline_m })
    }

    pub fn load_json(path: &Path) -> Result<Self, GeometryError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Serialize, Deserialize)]
struct RigRecord {
    #[serde(default)]
    frame_index: u32,
    position: [f64; 3],
    rotation: [f64; 9],
    baseline_m: f64,
}

impl TryFrom<RigRecord> for RigCalibration {
    type Error = GeometryError;

    fn try_from(r: RigRecord) -> Result<Self, Self::Error> {
        RigCalibration::new(Vector3::from(r.position), matrix_from_row_major(&r.rotation), r.baseline_m)
    }
}

impl From<RigCalibration> for RigRecord {
    fn from(r: RigCalibration) -> Self {
        Self {
            frame_index: 0,
            position: r.relative_position.into(),
            rotation: matrix_to_row_major(&r.relative_orientation),
            baseline_m: r.baseline_m,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;

    #[test]
    fn pose_json_is_row_major() {
        let r = *Rotation3::from_euler_angles(0.0, 0.0, 0.5).matrix();
        let pose = CameraPose::new(7, Vector3::new(1.0, 2.0, 3.0), r).unwrap();
        let v: serde_json::Value = serde_json::to_value(&pose).unwrap();
        let rot: Vec<f64> = serde_json::from_value(v["rotation"].clone()).unwrap();
        assert_eq!(rot[1], r[(0, 1)]);
        assert_eq!(rot[3], r[(1, 0)]);
        let back: CameraPose = serde_json::from_value(v).unwrap();
        assert_eq!(back, pose);
    }

    #[test]
    fn rejects_non_rotation() {
        let json = r#"{"frame_index":0,"position":[0,0,0],"rotation":[1,0,0,0,1,0,0,0,1.001]}"#;
        assert!(serde_json::from_str::<CameraPose>(json).is_err());
        let json = r#"{"frame_index":0,"position":[0,0,0],"rotation":[-1,0,0,0,1,0,0,0,1]}"#;
        assert!(serde_json::from_str::<CameraPose>(json).is_err());
    }

    #[test]
    fn pose_set_rejects_duplicates_and_looks_up_sparse_frames() {
        assert!(PoseSet::new(vec![CameraPose::identity(2), CameraPose::identity(2)]).is_err());
        let set = PoseSet::new(vec![CameraPose::identity(10), CameraPose::identity(3)]).unwrap();
        assert_eq!(set.get(10).unwrap().frame_index, 10);
        assert!(set.get(4).is_none());
    }

    #[test]
    fn rig_requires_positive_baseline() {
        assert!(RigCalibration::new(Vector3::zeros(), Matrix3::identity(), 0.0).is_err());
        let json = r#"{"position":[0.063,0,0],"rotation":[1,0,0,0,1,0,0,0,1],"baseline_m":0.063}"#;
        assert_eq!(serde_json::from_str::<RigCalibration>(json).unwrap(), RigCalibration::nominal());
    }

    #[test]
    fn rotation_angle_of_known_rotation() {
        let a = *Rotation3::from_euler_angles(0.2, 0.0, 0.0).matrix();
        let b = *Rotation3::from_euler_angles(0.2, 0.0, 0.0).matrix()
            * *Rotation3::from_euler_angles(0.0, 0.3, 0.0).matrix();
        assert!((rotation_angle(&a, &b) - 0.3).abs() < 1e-12);
    }
}
