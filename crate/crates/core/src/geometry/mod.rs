//! Camera models, world/pixel projection, stereo rig rectification and
//! reprojection of images between camera models.
//!
//! Pixel coordinates are continuous with grid sample `(x, y)` located at
//! coordinate `(x, y)`. Camera frames are x right, y down, z forward. Poses
//! are world-from-camera: `p_world = position + orientation * p_cam`.

mod camera;
mod pose;
mod rectify;
mod reproject;

pub use camera::{CameraModel, PixelPoint, Projection, ProjectionKind};
pub use pose::{rotation_angle, CameraPose, PoseSet, RigCalibration};
pub use rectify::{rectify_rig, RectifiedPair};
pub use reproject::reproject_image;

use nalgebra::Vector3;

#[derive(Debug, thiserror::Error)]
pub enum GeometryError {
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("invalid camera model: {0}")]
    InvalidModel(String),
    #[error("invalid rotation for frame {frame}: {reason}")]
    InvalidRotation { frame: u32, reason: String },
    #[error("duplicate pose for frame {0}")]
    DuplicatePose(u32),
    #[error("degenerate stereo rig: {0}")]
    DegenerateRig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Projects a world point through `pose` and `model`.
///
/// Points behind the camera or outside the model's field of view are not an
/// error; they come back with `in_front == false`.
pub fn project(
    point_world: &Vector3<f64>,
    pose: &CameraPose,
    model: &CameraModel,
) -> Result<Projection, GeometryError> {
    if !point_world.iter().all(|c| c.is_finite()) {
        return Err(GeometryError::NonFinite("world point"));
    }
    let q = pose.world_to_camera(point_world);
    Ok(model.project_camera(&q, pose.frame_index))
}

/// Inverse of [`project`] at a known depth.
///
/// Depth is z-depth for perspective models and ray length for the fisheye and
/// equirectangular models.
pub fn unproject(
    pixel: &PixelPoint,
    depth_m: f64,
    pose: &CameraPose,
    model: &CameraModel,
) -> Result<Vector3<f64>, GeometryError> {
    if !pixel.u.is_finite() || !pixel.v.is_finite() {
        return Err(GeometryError::NonFinite("pixel"));
    }
    if !depth_m.is_finite() {
        return Err(GeometryError::NonFinite("depth"));
    }
    if depth_m <= 0.0 {
        return Err(GeometryError::NonPositiveDepth(depth_m));
    }
    let q = model.unproject_camera(pixel.u, pixel.v, depth_m);
    Ok(pose.camera_to_world(&q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix3, Rotation3, Unit};
    use proptest::prelude::*;

    fn models() -> Vec<CameraModel> {
        vec![
            CameraModel::perspective(512, 512, 60.0).unwrap(),
            CameraModel::perspective(640, 480, 120.0).unwrap(),
            CameraModel::fisheye(512, 512, 140.0).unwrap(),
            CameraModel::cropped_equirect(1024, 1024, 180.0, 180.0).unwrap(),
        ]
    }

    #[test]
    fn optical_axis_projects_to_principal_point() {
        let r = *Rotation3::from_euler_angles(0.1, -0.3, 0.7).matrix();
        let pose = CameraPose::new(0, Vector3::new(1.0, 2.0, -3.0), r).unwrap();
        for model in models() {
            let p = pose.position + r * Vector3::new(0.0, 0.0, 1.0);
            let proj = project(&p, &pose, &model).unwrap();
            let [cx, cy] = model.principal_point;
            assert!((proj.pixel.u - cx).abs() < 1e-9 && (proj.pixel.v - cy).abs() < 1e-9);
            assert!(proj.in_front && proj.in_bounds);
        }
    }

    #[test]
    fn pinhole_formula_and_bounds_flag() {
        let model = CameraModel::perspective_with_focal(512, 512, 512.0).unwrap();
        let proj = project(&Vector3::new(1.0, 0.0, 1.0), &CameraPose::identity(0), &model).unwrap();
        assert!((proj.pixel.u - 768.0).abs() < 1e-12);
        assert!((proj.pixel.v - 256.0).abs() < 1e-12);
        assert!(proj.in_front);
        assert!(!proj.in_bounds);
    }

    #[test]
    fn behind_camera_is_flagged_not_an_error() {
        let model = CameraModel::perspective(512, 512, 60.0).unwrap();
        let proj = project(&Vector3::new(0.0, 0.0, -1.0), &CameraPose::identity(0), &model).unwrap();
        assert!(!proj.in_front && !proj.in_bounds);
        let fish = CameraModel::fisheye(512, 512, 140.0).unwrap();
        let p = Vector3::new((80f64).to_radians().sin(), 0.0, (80f64).to_radians().cos());
        assert!(!project(&p, &CameraPose::identity(0), &fish).unwrap().in_front);
    }

    #[test]
    fn non_finite_point_is_an_error() {
        let model = CameraModel::perspective(512, 512, 60.0).unwrap();
        let r = project(&Vector3::new(f64::NAN, 0.0, 1.0), &CameraPose::identity(0), &model);
        assert!(matches!(r, Err(GeometryError::NonFinite(_))));
    }

    #[test]
    fn fisheye_edge_ray_lands_on_boundary_circle() {
        let model = CameraModel::fisheye(512, 512, 140.0).unwrap();
        let theta = 70f64.to_radians();
        for phi in [0.0f64, 0.5, 1.3, 2.9, -2.0] {
            let d = Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos());
            let proj = project(&d, &CameraPose::identity(0), &model).unwrap();
            let r = ((proj.pixel.u - 256.0).powi(2) + (proj.pixel.v - 256.0).powi(2)).sqrt();
            assert!((r - 256.0).abs() < 1e-9, "radius {r}");
            assert!(proj.in_front);
        }
    }

    #[test]
    fn perspective_half_fov_ray_hits_image_edge() {
        for fov in [30.0f64, 60.0, 90.0, 120.0] {
            let model = CameraModel::perspective(512, 512, fov).unwrap();
            let a = (fov / 2.0).to_radians();
            let proj = project(&Vector3::new(a.sin(), 0.0, a.cos()), &CameraPose::identity(0), &model).unwrap();
            assert!((proj.pixel.u - 512.0).abs() < 1e-6, "fov {fov}: u = {}", proj.pixel.u);
        }
    }

    #[test]
    fn unproject_principal_point_and_translation() {
        let model = CameraModel::perspective(512, 512, 60.0).unwrap();
        let pp = PixelPoint::new(256.0, 256.0, 0);
        let p = unproject(&pp, 2.0, &CameraPose::identity(0), &model).unwrap();
        assert!((p - Vector3::new(0.0, 0.0, 2.0)).norm() < 1e-12);
        let pose = CameraPose::new(0, Vector3::new(1.0, 0.0, 0.0), Matrix3::identity()).unwrap();
        let p = unproject(&pp, 2.0, &pose, &model).unwrap();
        assert!((p - Vector3::new(1.0, 0.0, 2.0)).norm() < 1e-12);
    }

    #[test]
    fn unproject_rejects_non_positive_depth() {
        let model = CameraModel::perspective(512, 512, 60.0).unwrap();
        let pp = PixelPoint::new(256.0, 256.0, 0);
        for d in [0.0, -1.0] {
            assert!(matches!(
                unproject(&pp, d, &CameraPose::identity(0), &model),
                Err(GeometryError::NonPositiveDepth(_))
            ));
        }
    }

    #[test]
    fn depth_conventions() {
        let persp = CameraModel::perspective(512, 512, 90.0).unwrap();
        let fish = CameraModel::fisheye(512, 512, 140.0).unwrap();
        let px = PixelPoint::new(400.0, 100.0, 0);
        let p = unproject(&px, 3.0, &CameraPose::identity(0), &persp).unwrap();
        assert!((p.z - 3.0).abs() < 1e-12);
        let p = unproject(&px, 3.0, &CameraPose::identity(0), &fish).unwrap();
        assert!((p.norm() - 3.0).abs() < 1e-12);
    }

    fn arb_pose() -> impl Strategy<Value = CameraPose> {
        (prop::array::uniform3(-5.0f64..5.0), prop::array::uniform3(-1.0f64..1.0), 0.0f64..std::f64::consts::PI)
            .prop_filter_map("degenerate axis", |(c, ax, angle)| {
                let axis = Vector3::from(ax);
                (axis.norm() > 1e-3).then(|| {
                    let r = Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle);
                    CameraPose::new(3, Vector3::from(c), *r.matrix()).unwrap()
                })
            })
    }

    proptest! {
        #[test]
        fn round_trip_all_models(
            pose in arb_pose(),
            fu in 0.0f64..0.999,
            fv in 0.0f64..0.999,
            depth in 0.05f64..50.0,
            which in 0usize..4,
        ) {
            let model = &models()[which];
            let u = fu * model.width as f64;
            let v = fv * model.height as f64;
            let px = PixelPoint::new(u, v, 3);
            if let Some(world) = unproject(&px, depth, &pose, model).ok().filter(|_| model.pixel_has_ray(u, v)) {
                let proj = project(&world, &pose, model).unwrap();
                prop_assert!(proj.in_front);
                prop_assert!((proj.pixel.u - u).abs() < 1e-6, "u {} vs {}", proj.pixel.u, u);
                prop_assert!((proj.pixel.v - v).abs() < 1e-6, "v {} vs {}", proj.pixel.v, v);
            }
        }

        #[test]
        fn rigid_transform_leaves_projection_unchanged(
            pose in arb_pose(),
            xf in arb_pose(),
            p in prop::array::uniform3(-10.0f64..10.0),
            which in 0usize..4,
        ) {
            let model = &models()[which];
            let p = Vector3::from(p);
            let a = project(&p, &pose, model).unwrap();
            let moved_pose = pose.transformed(&xf.orientation, &xf.position);
            let moved_p = xf.orientation * p + xf.position;
            let b = project(&moved_p, &moved_pose, model).unwrap();
            if a.in_bounds {
                prop_assert!((a.pixel.u - b.pixel.u).abs() < 1e-9);
                prop_assert!((a.pixel.v - b.pixel.v).abs() < 1e-9);
            }
            prop_assert_eq!(a.in_front, b.in_front);
        }
    }
}
