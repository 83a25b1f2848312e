use nalgebra::Matrix3;

use super::CameraModel;
use crate::grid::{sample_bilinear, Grid};
use crate::par::{self, Parallelism};

/// Resamples `src` into the geometry of `dst_model`.
///
/// Each destination pixel's ray is rotated into the source camera frame by
/// `relative_rotation` (destination-camera to source-camera coordinates) and
/// the source is sampled bilinearly there. Pixels whose ray leaves the source
/// field of view or image, or touches a non-finite source sample, are NaN.
pub fn reproject_image(
    src: &Grid<f32>,
    src_model: &CameraModel,
    dst_model: &CameraModel,
    relative_rotation: &Matrix3<f64>,
    par: Parallelism,
) -> Grid<f32> {
    let (w, h) = (dst_model.width as usize, dst_model.height as usize);
    // Models may describe a different resolution than the source buffer.
    let sx = src.width() as f64 / src_model.width as f64;
    let sy = src.height() as f64 / src_model.height as f64;
    let rows = par::map_range(par, h, |y| {
        (0..w)
            .map(|x| {
                let ray = relative_rotation * dst_model.pixel_ray(x as f64, y as f64);
                let proj = src_model.project_camera(&ray, 0);
                if !proj.in_front {
                    return f32::NAN;
                }
                sample_bilinear(src, proj.pixel.u * sx, proj.pixel.v * sy).map_or(f32::NAN, |s| s as f32)
            })
            .collect::<Vec<f32>>()
    });
    Grid::from_vec(w, h, rows.concat()).expect("row lengths match width")
}
