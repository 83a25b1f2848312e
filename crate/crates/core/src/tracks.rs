//! 2D track ingestion, query deduplication and lifting to world space.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap};

use crate::depth::{sample_depth, DepthMap};
use crate::geometry::{project, unproject, CameraModel, CameraPose, PixelPoint, PoseSet};
use crate::par::{self, Parallelism};

#[derive(Debug, thiserror::Error)]
pub enum TrackError {
    #[error("track {track_id}: {reason}")]
    Invalid { track_id: u32, reason: String },
    #[error("track {track_id}: no pose for visible frame {frame}")]
    MissingPose { track_id: u32, frame: u32 },
    #[error("no depth map for frame {0}")]
    MissingDepth(u32),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
}

/// One long-range 2D trajectory in pixel coordinates of its view.
#[derive(Clone, Debug, PartialEq)]
pub struct Track2D {
    pub track_id: u32,
    pub query_frame: u32,
    pub positions: Vec<[f64; 2]>,
    pub visible: Vec<bool>,
}

impl Track2D {
    pub fn new(
        track_id: u32,
        query_frame: u32,
        positions: Vec<[f64; 2]>,
        visible: Vec<bool>,
    ) -> Result<Self, TrackError> {
        let t = Self { track_id, query_frame, positions, visible };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), TrackError> {
        let invalid = |reason: String| Err(TrackError::Invalid { track_id: self.track_id, reason });
        if self.positions.len() != self.visible.len() {
            return invalid(format!("{} positions but {} visibility flags", self.positions.len(), self.visible.len()));
        }
        if self.query_frame as usize >= self.positions.len() {
            return invalid(format!("query frame {} outside {} frames", self.query_frame, self.positions.len()));
        }
        if self.positions.iter().zip(&self.visible).any(|(p, &v)| v && !(p[0].is_finite() && p[1].is_finite())) {
            return invalid("non-finite position on a visible frame".into());
        }
        if self.visible_count() < 2 {
            return invalid("fewer than 2 visible frames".into());
        }
        Ok(())
    }

    pub fn n_frames(&self) -> usize {
        self.positions.len()
    }

    pub fn visible_count(&self) -> usize {
        self.visible.iter().filter(|v| **v).count()
    }

    pub fn position(&self, frame: u32) -> Option<[f64; 2]> {
        let i = frame as usize;
        (*self.visible.get(i)?).then(|| self.positions[i])
    }
}

/// Read access shared by lifted tracks and bare trajectories loaded from disk.
pub trait TrackPoints {
    fn track_id(&self) -> u32;
    fn query_frame(&self) -> u32;
    fn points(&self) -> &[Vector3<f64>];
    fn visible(&self) -> &[bool];

    fn point(&self, frame: usize) -> Option<&Vector3<f64>> {
        (*self.visible().get(frame)?).then(|| &self.points()[frame])
    }

    fn visible_count(&self) -> usize {
        self.visible().iter().filter(|v| **v).count()
    }
}

/// World-space trajectory without camera provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub track_id: u32,
    pub query_frame: u32,
    pub points: Vec<Vector3<f64>>,
    pub visible: Vec<bool>,
}

impl TrackPoints for Trajectory {
    fn track_id(&self) -> u32 {
        self.track_id
    }
    fn query_frame(&self) -> u32 {
        self.query_frame
    }
    fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }
    fn visible(&self) -> &[bool] {
        &self.visible
    }
}

/// A lifted track. Invisible frames hold zero vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Track3D {
    pub track_id: u32,
    pub query_frame: u32,
    /// Index of the perspective view the track was lifted from.
    pub view: u8,
    pub points: Vec<Vector3<f64>>,
    pub visible: Vec<bool>,
    /// Unit rays from the camera center through each point.
    pub rays: Vec<Vector3<f64>>,
    pub camera_centers: Vec<Vector3<f64>>,
    /// 2D observation the point was lifted from.
    pub pixels: Vec<[f64; 2]>,
}

impl TrackPoints for Track3D {
    fn track_id(&self) -> u32 {
        self.track_id
    }
    fn query_frame(&self) -> u32 {
        self.query_frame
    }
    fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }
    fn visible(&self) -> &[bool] {
        &self.visible
    }
}

impl Track3D {
    /// Builds a track from points and camera centers, deriving the rays.
    /// Frames where the point coincides with the camera are made invisible.
    pub fn from_points(
        track_id: u32,
        query_frame: u32,
        points: Vec<Vector3<f64>>,
        mut visible: Vec<bool>,
        camera_centers: Vec<Vector3<f64>>,
    ) -> Self {
        assert_eq!(points.len(), visible.len());
        assert_eq!(points.len(), camera_centers.len());
        let mut rays = vec![Vector3::zeros(); points.len()];
        for i in 0..points.len() {
            if visible[i] {
                let d = points[i] - camera_centers[i];
                let n = d.norm();
                if n > 0.0 && n.is_finite() {
                    rays[i] = d / n;
                } else {
                    visible[i] = false;
                }
            }
        }
        let pixels = vec![[f64::NAN; 2]; points.len()];
        Self { track_id, query_frame, view: 0, points, visible, rays, camera_centers, pixels }
    }

    pub fn n_frames(&self) -> usize {
        self.points.len()
    }

    /// Indices of visible frames in increasing order.
    pub fn visible_frames(&self) -> impl Iterator<Item = usize> + '_ {
        self.visible.iter().enumerate().filter_map(|(i, v)| v.then_some(i))
    }

    /// Copy with every visible point moved by `deltas[k]` along its ray,
    /// `k` counting visible frames.
    pub fn offset_along_rays(&self, deltas: &[f64]) -> Self {
        let mut out = self.clone();
        for (k, i) in self.visible_frames().enumerate() {
            out.points[i] = self.points[i] + self.rays[i] * deltas[k];
        }
        out
    }

    pub fn to_trajectory(&self) -> Trajectory {
        Trajectory {
            track_id: self.track_id,
            query_frame: self.query_frame,
            points: self.points.clone(),
            visible: self.visible.clone(),
        }
    }
}

/// Order used for deduplication: earlier query frame first, then the view
/// rank, then track id.
fn dedup_order(keys: &[(u32, u8, u32)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by_key(|&i| keys[i]);
    order
}

/// Greedy spatial deduplication over tracks visited in `order`.
///
/// A track is dropped when some already retained track is within `radius_px`
/// of its query point at the query frame.
fn greedy_dedup(
    order: &[usize],
    query: impl Fn(usize) -> (u32, Option<[f64; 2]>),
    position_at: impl Fn(usize, u32) -> Option<[f64; 2]>,
    radius_px: f64,
) -> Vec<usize> {
    let cell = radius_px.max(1.0);
    let cell_of = |p: [f64; 2]| ((p[0] / cell).floor() as i64, (p[1] / cell).floor() as i64);
    let query_frames: BTreeSet<u32> = order.iter().map(|&i| query(i).0).collect();
    let mut buckets: HashMap<(u32, i64, i64), Vec<[f64; 2]>> = HashMap::new();
    let mut kept = Vec::new();
    for &i in order {
        let (qf, qp) = query(i);
        let duplicate = qp.is_some_and(|qp| {
            let (cx, cy) = cell_of(qp);
            (cx - 1..=cx + 1).any(|x| {
                (cy - 1..=cy + 1).any(|y| {
                    buckets
                        .get(&(qf, x, y))
                        .is_some_and(|pts| pts.iter().any(|p| (p[0] - qp[0]).hypot(p[1] - qp[1]) <= radius_px))
                })
            })
        });
        if duplicate {
            continue;
        }
        kept.push(i);
        for &f in &query_frames {
            if let Some(p) = position_at(i, f) {
                let (cx, cy) = cell_of(p);
                buckets.entry((f, cx, cy)).or_default().push(p);
            }
        }
    }
    kept
}

/// Removes tracks whose query point is already covered by an earlier
/// retained track. Output is ordered by `(query_frame, track_id)`.
pub fn dedup_queries(tracks: Vec<Track2D>, radius_px: f64) -> Vec<Track2D> {
    let kept = dedup_query_indices(&tracks, radius_px);
    let mut slots: Vec<Option<Track2D>> = tracks.into_iter().map(Some).collect();
    kept.into_iter().map(|i| slots[i].take().expect("kept once")).collect()
}

/// Indices of the tracks [`dedup_queries`] retains, in retention order.
pub fn dedup_query_indices(tracks: &[Track2D], radius_px: f64) -> Vec<usize> {
    let keys: Vec<(u32, u8, u32)> = tracks.iter().map(|t| (t.query_frame, 0, t.track_id)).collect();
    let order = dedup_order(&keys);
    greedy_dedup(
        &order,
        |i| (tracks[i].query_frame, tracks[i].position(tracks[i].query_frame)),
        |i, f| tracks[i].position(f),
        radius_px,
    )
}

/// Merges tracks lifted from several perspective views of the same clip.
///
/// Each track is projected into `reference_model` (the widest view) and the
/// union is deduplicated there with the same greedy rule as
/// [`dedup_queries`]; earlier entries of `views` win ties at equal query frame.
pub fn union_views(
    views: Vec<Vec<Track3D>>,
    poses: &PoseSet,
    reference_model: &CameraModel,
    radius_px: f64,
) -> Vec<Track3D> {
    let all: Vec<(u8, Track3D)> =
        views.into_iter().enumerate().flat_map(|(rank, ts)| ts.into_iter().map(move |t| (rank as u8, t))).collect();
    let keys: Vec<(u32, u8, u32)> = all.iter().map(|(r, t)| (t.query_frame, *r, t.track_id)).collect();
    let order = dedup_order(&keys);
    let pixel_at = |i: usize, f: u32| -> Option<[f64; 2]> {
        let t = &all[i].1;
        let p = t.point(f as usize)?;
        let proj = project(p, poses.get(f)?, reference_model).ok()?;
        proj.in_bounds.then_some([proj.pixel.u, proj.pixel.v])
    };
    let kept = greedy_dedup(
        &order,
        |i| {
            let qf = all[i].1.query_frame;
            (qf, pixel_at(i, qf))
        },
        pixel_at,
        radius_px,
    );
    let mut slots: Vec<Option<Track3D>> = all.into_iter().map(|(_, t)| Some(t)).collect();
    kept.into_iter().map(|i| slots[i].take().expect("kept once")).collect()
}

/// Per-frame depth maps for lifting.
pub trait DepthSource {
    fn depth_for(&self, frame: u32) -> Option<&DepthMap>;
}

impl DepthSource for [DepthMap] {
    fn depth_for(&self, frame: u32) -> Option<&DepthMap> {
        match self.get(frame as usize) {
            Some(d) if d.frame_index == frame => Some(d),
            _ => self.iter().find(|d| d.frame_index == frame),
        }
    }
}

impl DepthSource for Vec<DepthMap> {
    fn depth_for(&self, frame: u32) -> Option<&DepthMap> {
        self.as_slice().depth_for(frame)
    }
}

/// Depth at a pixel of `model`, rescaling when the depth grid has a
/// different resolution than the model.
pub fn sample_depth_for_model(depth: &DepthMap, model: &CameraModel, u: f64, v: f64) -> Option<f64> {
    let sx = depth.depth.width() as f64 / model.width as f64;
    let sy = depth.depth.height() as f64 / model.height as f64;
    sample_depth(depth, u * sx, v * sy)
}

struct LiftedSample {
    point: Vector3<f64>,
    ray: Vector3<f64>,
    center: Vector3<f64>,
}

fn lift_sample(pixel: [f64; 2], depth: f64, pose: &CameraPose, model: &CameraModel) -> Option<LiftedSample> {
    let px = PixelPoint::new(pixel[0], pixel[1], pose.frame_index);
    let point = unproject(&px, depth, pose, model).ok()?;
    let d = point - pose.position;
    let n = d.norm();
    (n > 0.0).then(|| LiftedSample { point, ray: d / n, center: pose.position })
}

fn assemble(track: &Track2D, view: u8, samples: impl Iterator<Item = Option<LiftedSample>>) -> Track3D {
    let n = track.n_frames();
    let mut out = Track3D {
        track_id: track.track_id,
        query_frame: track.query_frame,
        view,
        points: vec![Vector3::zeros(); n],
        visible: vec![false; n],
        rays: vec![Vector3::zeros(); n],
        camera_centers: vec![Vector3::zeros(); n],
        pixels: track.positions.clone(),
    };
    for (i, s) in samples.enumerate() {
        if let Some(s) = s {
            out.points[i] = s.point;
            out.rays[i] = s.ray;
            out.camera_centers[i] = s.center;
            out.visible[i] = true;
        }
    }
    out
}

/// Lifts one 2D track. Visible frames with an invalid depth sample become
/// invisible in the output.
pub fn lift_track<D: DepthSource + ?Sized>(
    track: &Track2D,
    poses: &PoseSet,
    depths: &D,
    model: &CameraModel,
) -> Result<Track3D, TrackError> {
    let mut samples = Vec::with_capacity(track.n_frames());
    for (i, (&vis, &px)) in track.visible.iter().zip(&track.positions).enumerate() {
        let frame = i as u32;
        if !vis {
            samples.push(None);
            continue;
        }
        let pose = poses.get(frame).ok_or(TrackError::MissingPose { track_id: track.track_id, frame })?;
        let depth = depths.depth_for(frame).ok_or(TrackError::MissingDepth(frame))?;
        samples.push(sample_depth_for_model(depth, model, px[0], px[1]).and_then(|z| lift_sample(px, z, pose, model)));
    }
    Ok(assemble(track, 0, samples.into_iter()))
}

/// Depth samples of every track at its visible frames, `None` where the
/// sample is invalid. Indexed `[track][frame]`.
pub type DepthSamples = Vec<Vec<Option<f64>>>;

/// Samples depth for all tracks of a view, producing each frame's depth map
/// on demand so only a handful of maps are alive at once. Frames are
/// processed in parallel; `on_frame` sees every produced map.
pub fn sample_track_depths<E, F, G>(
    tracks: &[Track2D],
    model: &CameraModel,
    depth_at: F,
    on_frame: G,
    par: Parallelism,
) -> Result<DepthSamples, E>
where
    E: Send,
    F: Fn(u32) -> Result<DepthMap, E> + Sync + Send,
    G: Fn(&DepthMap) + Sync + Send,
{
    let n_frames = tracks.iter().map(Track2D::n_frames).max().unwrap_or(0);
    let per_frame: Vec<Result<Vec<Option<f64>>, E>> = par::map_range(par, n_frames, |i| {
        let frame = i as u32;
        if !tracks.iter().any(|t| t.visible.get(i).copied().unwrap_or(false)) {
            return Ok(Vec::new());
        }
        let depth = depth_at(frame)?;
        on_frame(&depth);
        Ok(tracks
            .iter()
            .map(|t| {
                let px = t.position(frame)?;
                sample_depth_for_model(&depth, model, px[0], px[1])
            })
            .collect())
    });
    let per_frame = per_frame.into_iter().collect::<Result<Vec<_>, E>>()?;
    Ok((0..tracks.len())
        .map(|k| (0..tracks[k].n_frames()).map(|i| per_frame[i].get(k).copied().flatten()).collect())
        .collect())
}

/// Lifts a track from precomputed depth samples (one per frame).
pub fn lift_with_samples(
    track: &Track2D,
    samples: &[Option<f64>],
    poses: &PoseSet,
    model: &CameraModel,
    view: u8,
) -> Result<Track3D, TrackError> {
    for (i, &vis) in track.visible.iter().enumerate() {
        if vis && poses.get(i as u32).is_none() {
            return Err(TrackError::MissingPose { track_id: track.track_id, frame: i as u32 });
        }
    }
    Ok(assemble(
        track,
        view,
        (0..track.n_frames()).map(|i| {
            let z = samples.get(i).copied().flatten()?;
            lift_sample(track.positions[i], z, poses.get(i as u32)?, model)
        }),
    ))
}

/// Lifts all tracks of a view with depth maps produced on demand; equal to
/// calling [`lift_track`] per track.
pub fn lift_tracks_framewise<E, F>(
    tracks: &[Track2D],
    poses: &PoseSet,
    model: &CameraModel,
    view: u8,
    depth_at: F,
    par: Parallelism,
) -> Result<Vec<Track3D>, E>
where
    E: From<TrackError> + Send,
    F: Fn(u32) -> Result<DepthMap, E> + Sync + Send,
{
    for t in tracks {
        for (i, &vis) in t.visible.iter().enumerate() {
            if vis && poses.get(i as u32).is_none() {
                return Err(TrackError::MissingPose { track_id: t.track_id, frame: i as u32 }.into());
            }
        }
    }
    let samples = sample_track_depths(tracks, model, depth_at, |_| {}, par)?;
    let lifted = par::map_range(par, tracks.len(), |k| lift_with_samples(&tracks[k], &samples[k], poses, model, view));
    lifted.into_iter().map(|r| r.map_err(E::from)).collect()
}

/// Rebuilds a lifted track from stored world points, taking camera centers
/// from `poses`. Frames without a pose become invisible.
pub fn track_from_trajectory(traj: &Trajectory, poses: &PoseSet) -> Track3D {
    let mut visible = traj.visible.clone();
    let centers = (0..traj.points.len())
        .map(|i| match poses.get(i as u32) {
            Some(p) => p.position,
            None => {
                visible[i] = false;
                Vector3::zeros()
            }
        })
        .collect();
    Track3D::from_points(traj.track_id, traj.query_frame, traj.points.clone(), visible, centers)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrackStats {
    pub track_count: usize,
    pub visible_points: usize,
    pub mean_visible_length: f64,
    /// Number of visible tracks at each frame.
    pub per_frame_density: Vec<usize>,
}

pub fn track_visibility_stats<T: TrackPoints>(tracks: &[T]) -> TrackStats {
    if tracks.is_empty() {
        return TrackStats::default();
    }
    let n_frames = tracks.iter().map(|t| t.visible().len()).max().unwrap_or(0);
    let mut density = vec![0usize; n_frames];
    let mut total = 0usize;
    for t in tracks {
        for (i, &v) in t.visible().iter().enumerate() {
            if v {
                density[i] += 1;
                total += 1;
            }
        }
    }
    TrackStats {
        track_count: tracks.len(),
        visible_points: total,
        mean_visible_length: total as f64 / tracks.len() as f64,
        per_frame_density: density,
    }
}
