use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

use super::GeometryError;

/// Angular slack when deciding whether a ray lies inside a model's field of view.
const FOV_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProjectionKind {
    Perspective,
    EquidistantFisheye,
    CroppedEquirectangular,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
    pub frame_index: u32,
}

impl PixelPoint {
    pub fn new(u: f64, v: f64, frame_index: u32) -> Self {
        Self { u, v, frame_index }
    }
}

/// Result of projecting a point into a camera.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub pixel: PixelPoint,
    /// The ray is in front of the camera and inside the model's field of view.
    pub in_front: bool,
    /// `in_front` and the pixel lies in `[0, width) x [0, height)`.
    pub in_bounds: bool,
}

/// Ideal (distortion free) camera intrinsics.
///
/// `focal` is the pinhole focal length for perspective models and the
/// pixels-per-radian scale for the fisheye model; it is derived from the
/// horizontal field of view in both cases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraModelFile", into = "CameraModelFile")]
pub struct CameraModel {
    pub kind: ProjectionKind,
    pub width: u32,
    pub height: u32,
    pub fov_h_deg: f64,
    pub fov_v_deg: f64,
    pub focal: f64,
    pub principal_point: [f64; 2],
}

impl CameraModel {
    /// Perspective model with a centered principal point.
    pub fn perspective(width: u32, height: u32, fov_h_deg: f64) -> Result<Self, GeometryError> {
        if !(fov_h_deg > 0.0 && fov_h_deg < 180.0) {
            return Err(GeometryError::InvalidModel(format!("perspective fov_h must be in (0, 180), got {fov_h_deg}")));
        }
        let focal = (width as f64 / 2.0) / (fov_h_deg.to_radians() / 2.0).tan();
        let mut model = Self::perspective_with_focal(width, height, focal)?;
        model.fov_h_deg = fov_h_deg;
        if width == height {
            model.fov_v_deg = fov_h_deg;
        }
        Ok(model)
    }

    pub fn perspective_with_focal(width: u32, height: u32, focal: f64) -> Result<Self, GeometryError> {
        let fov_h_deg = 2.0 * ((width as f64 / 2.0) / focal).atan().to_degrees();
        let fov_v_deg = 2.0 * ((height as f64 / 2.0) / focal).atan().to_degrees();
        let model = Self {
            kind: ProjectionKind::Perspective,
            width,
            height,
            fov_h_deg,
            fov_v_deg,
            focal,
            principal_point: [width as f64 / 2.0, height as f64 / 2.0],
        };
        model.validate()?;
        Ok(model)
    }

    /// Equidistant fisheye (`r = f * theta`) whose horizontal field of view
    /// spans the full image width.
    pub fn fisheye(width: u32, height: u32, fov_h_deg: f64) -> Result<Self, GeometryError> {
        let focal = (width as f64 / 2.0) / (fov_h_deg.to_radians() / 2.0);
        let model = Self {
            kind: ProjectionKind::EquidistantFisheye,
            width,
            height,
            fov_h_deg,
            fov_v_deg: (height as f64 / 2.0 / focal).to_degrees() * 2.0,
            focal,
            principal_point: [width as f64 / 2.0, height as f64 / 2.0],
        };
        model.validate()?;
        Ok(model)
    }

    /// Cropped equirectangular image centered on the optical axis.
    pub fn cropped_equirect(width: u32, height: u32, fov_h_deg: f64, fov_v_deg: f64) -> Result<Self, GeometryError> {
        Self::equirect_from_metadata(
            width,
            height,
            -fov_h_deg / 2.0,
            fov_h_deg / 2.0,
            -fov_v_deg / 2.0,
            fov_v_deg / 2.0,
        )
    }

    /// Cropped equirectangular model from VR180-style yaw/tilt metadata
    /// (`start_yaw = -90, end_yaw = 90, start_tilt = -90, end_tilt = 90`
    /// when the container carries none).
    pub fn equirect_from_metadata(
        width: u32,
        height: u32,
        start_yaw_deg: f64,
        end_yaw_deg: f64,
        start_tilt_deg: f64,
        end_tilt_deg: f64,
    ) -> Result<Self, GeometryError> {
        let fov_h = end_yaw_deg - start_yaw_deg;
        let fov_v = end_tilt_deg - start_tilt_deg;
        if !(fov_h > 0.0 && fov_v > 0.0) {
            return Err(GeometryError::InvalidModel("empty yaw or tilt range".into()));
        }
        let cx = -start_yaw_deg / fov_h * width as f64;
        let cy = -start_tilt_deg / fov_v * height as f64;
        let model = Self {
            kind: ProjectionKind::CroppedEquirectangular,
            width,
            height,
            fov_h_deg: fov_h,
            fov_v_deg: fov_v,
            focal: width as f64 / fov_h.to_radians(),
            principal_point: [cx, cy],
        };
        model.validate()?;
        Ok(model)
    }

    /// Same intrinsics with the principal point moved to the image center.
    pub fn centered(&self) -> Result<Self, GeometryError> {
        match self.kind {
            ProjectionKind::Perspective => Self::perspective_with_focal(self.width, self.height, self.focal),
            ProjectionKind::EquidistantFisheye => Self::fisheye(self.width, self.height, self.fov_h_deg),
            ProjectionKind::CroppedEquirectangular => {
                Self::cropped_equirect(self.width, self.height, self.fov_h_deg, self.fov_v_deg)
            }
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |m: String| Err(GeometryError::InvalidModel(m));
        if self.width == 0 || self.height == 0 {
            return bad("zero image dimension".into());
        }
        let finite = [self.fov_h_deg, self.fov_v_deg, self.focal, self.principal_point[0], self.principal_point[1]];
        if !finite.iter().all(|v| v.is_finite()) {
            return bad("non-finite parameter".into());
        }
        if !(self.fov_h_deg > 0.0 && self.fov_h_deg <= 180.0) {
            return bad(format!("fov_h must be in (0, 180], got {}", self.fov_h_deg));
        }
        if !(self.fov_v_deg > 0.0 && self.fov_v_deg <= 180.0) {
            return bad(format!("fov_v must be in (0, 180], got {}", self.fov_v_deg));
        }
        if self.focal <= 0.0 {
            return bad("focal must be positive".into());
        }
        let [cx, cy] = self.principal_point;
        if !(0.0..=self.width as f64).contains(&cx) || !(0.0..=self.height as f64).contains(&cy) {
            return bad(format!("principal point ({cx}, {cy}) outside image"));
        }
        if self.kind == ProjectionKind::Perspective {
            if self.fov_h_deg >= 180.0 {
                return bad("perspective fov_h must be below 180".into());
            }
            let expect = (self.width as f64 / 2.0) / (self.fov_h_deg.to_radians() / 2.0).tan();
            if ((expect - self.focal) / expect).abs() > 1e-6 {
                return bad(format!("focal {} inconsistent with fov_h (expected {expect})", self.focal));
            }
        }
        Ok(())
    }

    fn half_fov_h(&self) -> f64 {
        self.fov_h_deg.to_radians() / 2.0
    }

    fn in_image(&self, u: f64, v: f64) -> bool {
        (0.0..self.width as f64).contains(&u) && (0.0..self.height as f64).contains(&v)
    }

    /// Projects a camera-frame point. `frame_index` is copied to the pixel.
    pub fn project_camera(&self, q: &Vector3<f64>, frame_index: u32) -> Projection {
        let [cx, cy] = self.principal_point;
        let (u, v, in_front) = match self.kind {
            ProjectionKind::Perspective => {
                let in_front = q.z > 0.0;
                if q.z != 0.0 {
                    (self.focal * q.x / q.z + cx, self.focal * q.y / q.z + cy, in_front)
                } else {
                    (f64::NAN, f64::NAN, false)
                }
            }
            ProjectionKind::EquidistantFisheye => {
                let rho = q.x.hypot(q.y);
                let theta = rho.atan2(q.z);
                let in_front = theta <= self.half_fov_h() + FOV_EPS && q.norm() > 0.0;
                if rho > 0.0 {
                    let r = self.focal * theta;
                    (cx + r * q.x / rho, cy + r * q.y / rho, in_front)
                } else {
                    (cx, cy, in_front)
                }
            }
            ProjectionKind::CroppedEquirectangular => {
                let lon = q.x.atan2(q.z);
                let lat = q.y.atan2(q.x.hypot(q.z));
                let u = cx + lon * self.width as f64 / self.fov_h_deg.to_radians();
                let v = cy + lat * self.height as f64 / self.fov_v_deg.to_radians();
                let tol = 1e-9;
                let inside =
                    (-tol..=self.width as f64 + tol).contains(&u) && (-tol..=self.height as f64 + tol).contains(&v);
                (u, v, inside && q.norm() > 0.0)
            }
        };
        Projection { pixel: PixelPoint { u, v, frame_index }, in_front, in_bounds: in_front && self.in_image(u, v) }
    }

    /// Camera-frame ray through pixel `(u, v)`. Unit length except for the
    /// perspective model, which returns the `z = 1` ray.
    pub fn pixel_ray(&self, u: f64, v: f64) -> Vector3<f64> {
        let [cx, cy] = self.principal_point;
        let (dx, dy) = (u - cx, v - cy);
        match self.kind {
            ProjectionKind::Perspective => Vector3::new(dx / self.focal, dy / self.focal, 1.0),
            ProjectionKind::EquidistantFisheye => {
                let rho = dx.hypot(dy);
                if rho == 0.0 {
                    return Vector3::z();
                }
                let theta = rho / self.focal;
                let s = theta.sin();
                Vector3::new(s * dx / rho, s * dy / rho, theta.cos())
            }
            ProjectionKind::CroppedEquirectangular => {
                let lon = dx * self.fov_h_deg.to_radians() / self.width as f64;
                let lat = dy * self.fov_v_deg.to_radians() / self.height as f64;
                Vector3::new(lat.cos() * lon.sin(), lat.sin(), lat.cos() * lon.cos())
            }
        }
    }

    /// Camera-frame point at `depth` along the ray through `(u, v)`.
    pub fn unproject_camera(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        self.pixel_ray(u, v) * depth
    }

    /// Whether `(u, v)` corresponds to a ray the model can represent and
    /// project back to the same pixel.
    pub fn pixel_has_ray(&self, u: f64, v: f64) -> bool {
        let [cx, cy] = self.principal_point;
        let (dx, dy) = (u - cx, v - cy);
        match self.kind {
            ProjectionKind::Perspective => true,
            ProjectionKind::EquidistantFisheye => dx.hypot(dy) / self.focal <= self.half_fov_h(),
            ProjectionKind::CroppedEquirectangular => {
                let lon = dx * self.fov_h_deg.to_radians() / self.width as f64;
                let lat = dy * self.fov_v_deg.to_radians() / self.height as f64;
                lon.abs() < PI && lat.abs() <= FRAC_PI_2
            }
        }
    }

    pub fn load_json(path: &std::path::Path) -> Result<Self, GeometryError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// On-disk form; optional fields are derived from the others.
#[derive(Serialize, Deserialize)]
struct CameraModelFile {
    kind: ProjectionKind,
    width: u32,
    height: u32,
    fov_h: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fov_v: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    focal: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    principal_point: Option<[f64; 2]>,
}

impl TryFrom<CameraModelFile> for CameraModel {
    type Error = GeometryError;

    fn try_from(f: CameraModelFile) -> Result<Self, Self::Error> {
        let mut model = match f.kind {
            ProjectionKind::Perspective => match f.focal {
                Some(focal) => Self::perspective_with_focal(f.width, f.height, focal)?,
                None => Self::perspective(f.width, f.height, f.fov_h)?,
            },
            ProjectionKind::EquidistantFisheye => Self::fisheye(f.width, f.height, f.fov_h)?,
            ProjectionKind::CroppedEquirectangular => {
                Self::cropped_equirect(f.width, f.height, f.fov_h, f.fov_v.unwrap_or(180.0))?
            }
        };
        // Explicit values win over derived ones, then the whole model is revalidated.
        model.fov_h_deg = f.fov_h;
        if let Some(fov_v) = f.fov_v {
            model.fov_v_deg = fov_v;
        }
        if let Some(pp) = f.principal_point {
            model.principal_point = pp;
        }
        model.validate()?;
        Ok(model)
    }
}

impl From<CameraModel> for CameraModelFile {
    fn from(m: CameraModel) -> Self {
        Self {
            kind: m.kind,
            width: m.width,
            height: m.height,
            fov_h: m.fov_h_deg,
            fov_v: Some(m.fov_v_deg),
            focal: Some(m.focal),
            principal_point: Some(m.principal_point),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perspective_focal_matches_fov() {
        let m = CameraModel::perspective(512, 512, 60.0).unwrap();
        assert!((m.focal - 256.0 / (30f64).to_radians().tan()).abs() < 1e-9);
        assert!((m.fov_v_deg - 60.0).abs() < 1e-9);
    }

    #[test]
    fn validation_rejects_bad_models() {
        assert!(CameraModel::perspective(512, 512, 180.0).is_err());
        assert!(CameraModel::perspective(512, 512, 0.0).is_err());
        assert!(CameraModel::fisheye(512, 512, 200.0).is_err());
        let mut m = CameraModel::perspective(512, 512, 60.0).unwrap();
        m.focal *= 1.1;
        assert!(m.validate().is_err());
        let mut m = CameraModel::perspective(512, 512, 60.0).unwrap();
        m.principal_point = [600.0, 10.0];
        assert!(m.validate().is_err());
    }

    #[test]
    fn metadata_defaults_span_half_sphere() {
        let m = CameraModel::equirect_from_metadata(2048, 2048, -90.0, 90.0, -90.0, 90.0).unwrap();
        assert_eq!(m.principal_point, [1024.0, 1024.0]);
        let left = m.project_camera(&Vector3::new(-1.0, 0.0, 1e-12), 0);
        assert!(left.pixel.u.abs() < 1e-6 && left.in_front);
        let behind = m.project_camera(&Vector3::new(0.0, 0.0, -1.0), 0);
        assert!(!behind.in_front);
    }

    #[test]
    fn json_round_trip_and_kind_tag() {
        let m = CameraModel::fisheye(1024, 1024, 140.0).unwrap();
        let text = serde_json::to_string(&m).unwrap();
        assert!(text.contains("\"kind\":\"equidistant-fisheye\""));
        let back: CameraModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
        let minimal: CameraModel =
            serde_json::from_str(r#"{"kind":"perspective","width":512,"height":512,"fov_h":60}"#).unwrap();
        assert_eq!(minimal, CameraModel::perspective(512, 512, 60.0).unwrap());
        assert!(serde_json::from_str::<CameraModel>(
            r#"{"kind":"perspective","width":512,"height":512,"fov_h":60,"focal":10}"#
        )
        .is_err());
    }
}
