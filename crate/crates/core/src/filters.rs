//! Clip- and track-level quality gates.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use crate::geometry::{project, rotation_angle, CameraModel, CameraPose, PoseSet};
use crate::grid::Grid;
use crate::trackopt::MotionMagnitude;
use crate::tracks::{track_visibility_stats, Track3D, TrackStats};

#[derive(Debug, thiserror::Error)]
pub enum FilterError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("label id {id} at frame {frame} is outside the class table ({classes} classes)")]
    UnknownLabel { id: u16, frame: u32, classes: usize },
    #[error("grids differ in size: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
}

/// Class names as listed upstream, one per id.
pub fn load_class_table(path: &Path) -> Result<Vec<String>, FilterError> {
    let text =
        std::fs::read_to_string(path).map_err(|source| FilterError::Io { path: path.display().to_string(), source })?;
    Ok(text.lines().map(|l| l.trim().to_string()).filter(|l| !l.is_empty()).collect())
}

/// Per-pixel semantic class ids for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelMap {
    ids: Grid<u16>,
    classes: Arc<[String]>,
    pub frame_index: u32,
}

impl LabelMap {
    pub fn new(ids: Grid<u16>, classes: Arc<[String]>, frame_index: u32) -> Result<Self, FilterError> {
        if let Some(&id) = ids.data().iter().find(|&&id| id as usize >= classes.len()) {
            return Err(FilterError::UnknownLabel { id, frame: frame_index, classes: classes.len() });
        }
        Ok(Self { ids, classes, frame_index })
    }

    pub fn ids(&self) -> &Grid<u16> {
        &self.ids
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    /// Class name at the pixel nearest to `(u, v)`.
    pub fn class_at(&self, u: f64, v: f64) -> Option<&str> {
        let (x, y) = (u.round(), v.round());
        if !(x >= 0.0 && y >= 0.0 && x < self.ids.width() as f64 && y < self.ids.height() as f64) {
            return None;
        }
        Some(&self.classes[self.ids[(x as usize, y as usize)] as usize])
    }
}

/// Normalized spelling used to compare class names: lower case, trailing
/// plural `s` removed. Upstream names may list aliases separated by commas.
fn class_key(name: &str) -> String {
    let n = name.trim().to_lowercase();
    n.strip_suffix('s').map(str::to_string).unwrap_or(n)
}

/// Semantic classes on which moving tracks are considered drift.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BannedClasses(BTreeSet<String>);

impl Default for BannedClasses {
    fn default() -> Self {
        Self::new(["walls", "building", "road", "earth", "sidewalk"])
    }
}

impl BannedClasses {
    pub fn new<I: IntoIterator<Item = S>, S: AsRef<str>>(names: I) -> Self {
        Self(names.into_iter().map(|n| class_key(n.as_ref())).filter(|n| !n.is_empty()).collect())
    }

    /// One class name per line; blank lines and `#` comments ignored.
    pub fn load(path: &Path) -> Result<Self, FilterError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| FilterError::Io { path: path.display().to_string(), source })?;
        Ok(Self::new(text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'))))
    }

    pub fn contains(&self, class_name: &str) -> bool {
        class_name.split(',').any(|alias| self.0.contains(&class_key(alias)))
    }
}

/// Per-frame label maps, `None` where no map exists, plus the camera model
/// the maps are expressed in.
pub struct LabelSequence<'a> {
    pub maps: &'a [Option<LabelMap>],
    pub model: &'a CameraModel,
}

impl LabelSequence<'_> {
    fn class_of(&self, point: &Vector3<f64>, pose: &CameraPose) -> Option<&str> {
        let map = self.maps.get(pose.frame_index as usize)?.as_ref()?;
        let proj = project(point, pose, self.model).ok()?;
        if !proj.in_bounds {
            return None;
        }
        let sx = map.ids.width() as f64 / self.model.width as f64;
        let sy = map.ids.height() as f64 / self.model.height as f64;
        map.class_at(proj.pixel.u * sx, proj.pixel.v * sy)
    }
}

/// Whether a track's visible frames mostly fall on banned classes. Frames
/// without a label are left out of the vote; ties are not a majority.
pub fn majority_banned(track: &Track3D, labels: &LabelSequence<'_>, poses: &PoseSet, banned: &BannedClasses) -> bool {
    let (mut hits, mut total) = (0usize, 0usize);
    for i in track.visible_frames() {
        let Some(pose) = poses.get(i as u32) else { continue };
        if let Some(class) = labels.class_of(&track.points[i], pose) {
            total += 1;
            hits += banned.contains(class) as usize;
        }
    }
    2 * hits > total
}

/// Drops moving tracks (`m > m_threshold`) whose majority label is banned.
pub fn prune_semantic_drift(
    tracks: Vec<(Track3D, MotionMagnitude)>,
    labels: &LabelSequence<'_>,
    poses: &PoseSet,
    banned: &BannedClasses,
    m_threshold: f64,
) -> Vec<(Track3D, MotionMagnitude)> {
    tracks.into_iter().filter(|(t, m)| !(m.m > m_threshold && majority_banned(t, labels, poses, banned))).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchPair {
    pub frame_a: u32,
    pub frame_b: u32,
    pub count: u32,
}

/// Feature match counts between frames `gap` apart.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCountSeries {
    pub gap: u32,
    pub pairs: Vec<MatchPair>,
}

#[derive(Deserialize)]
struct MatchRow {
    frame_a: u32,
    frame_b: u32,
    count: u32,
}

impl MatchCountSeries {
    /// Reads `frame_a,frame_b,count` rows (header optional) and keeps the
    /// pairs exactly `gap` frames apart.
    pub fn load_csv(path: &Path, gap: u32) -> Result<Self, FilterError> {
        let err = |source| FilterError::Csv { path: path.display().to_string(), source };
        let text = std::fs::read_to_string(path)
            .map_err(|source| FilterError::Io { path: path.display().to_string(), source })?;
        let has_header =
            text.lines().next().is_some_and(|l| l.split(',').next().is_some_and(|f| f.trim().parse::<u32>().is_err()));
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let mut pairs = Vec::new();
        for (k, row) in reader.deserialize::<MatchRow>().enumerate() {
            if has_header && k == 0 {
                continue;
            }
            let row = row.map_err(err)?;
            if row.frame_b.checked_sub(row.frame_a) == Some(gap) {
                pairs.push(MatchPair { frame_a: row.frame_a, frame_b: row.frame_b, count: row.count });
            }
        }
        Ok(Self { gap, pairs })
    }

    /// Counts from the built-in matcher over every pair of `frames` that are
    /// `gap` apart.
    pub fn from_frames(frames: &[Grid<f32>], gap: u32) -> Result<Self, FilterError> {
        let g = gap as usize;
        let mut pairs = Vec::new();
        for a in 0..frames.len().saturating_sub(g) {
            let count = builtin_match_count(&frames[a], &frames[a + g])?;
            pairs.push(MatchPair { frame_a: a as u32, frame_b: (a + g) as u32, count: count as u32 });
        }
        Ok(Self { gap, pairs })
    }
}

/// Frame gap corresponding to `seconds` at `frame_rate`, at least 1.
pub fn gap_frames(seconds: f64, frame_rate: f64) -> u32 {
    ((seconds * frame_rate).round() as u32).max(1)
}

/// A static-camera clip with too few matches between distant frames is
/// taken to contain a cross-fade. An empty series never flags.
pub fn detect_cross_fade(matches: &MatchCountSeries, camera_static: bool, min_matches: u32) -> bool {
    camera_static && matches.pairs.iter().any(|p| p.count < min_matches)
}

const PATCH: usize = 16;
const PATCH_STRIDE: usize = 32;
const SEARCH: isize = 8;
const MIN_NCC: f64 = 0.8;
const TEXTURE_STD: f64 = 1e-6;

struct PatchStats {
    mean: f64,
    norm: f64,
}

fn patch_stats(g: &Grid<f32>, x0: usize, y0: usize) -> PatchStats {
    let mut sum = 0.0;
    let mut sq = 0.0;
    for y in y0..y0 + PATCH {
        for x in x0..x0 + PATCH {
            let v = g[(x, y)] as f64;
            sum += v;
            sq += v * v;
        }
    }
    let n = (PATCH * PATCH) as f64;
    let mean = sum / n;
    PatchStats { mean, norm: (sq - n * mean * mean).max(0.0).sqrt() }
}

fn ncc(a: &Grid<f32>, (ax, ay): (usize, usize), sa: &PatchStats, b: &Grid<f32>, (bx, by): (usize, usize)) -> f64 {
    let sb = patch_stats(b, bx, by);
    let n = (PATCH * PATCH) as f64;
    if sa.norm <= TEXTURE_STD * n.sqrt() || sb.norm <= TEXTURE_STD * n.sqrt() {
        return 0.0;
    }
    let mut acc = 0.0;
    for dy in 0..PATCH {
        for dx in 0..PATCH {
            acc += (a[(ax + dx, ay + dy)] as f64 - sa.mean) * (b[(bx + dx, by + dy)] as f64 - sb.mean);
        }
    }
    acc / (sa.norm * sb.norm)
}

/// Best match of the patch at `(x0, y0)` of `a` within the search window in
/// `b`; first in scan order on ties.
fn best_match(a: &Grid<f32>, x0: usize, y0: usize, b: &Grid<f32>) -> Option<((usize, usize), f64)> {
    let sa = patch_stats(a, x0, y0);
    let mut best: Option<((usize, usize), f64)> = None;
    for dy in -SEARCH..=SEARCH {
        for dx in -SEARCH..=SEARCH {
            let (x, y) = (x0 as isize + dx, y0 as isize + dy);
            if x < 0 || y < 0 || x as usize + PATCH > b.width() || y as usize + PATCH > b.height() {
                continue;
            }
            let pos = (x as usize, y as usize);
            let score = ncc(a, (x0, y0), &sa, b, pos);
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((pos, score));
            }
        }
    }
    best
}

fn is_textured(g: &Grid<f32>, x0: usize, y0: usize) -> bool {
    patch_stats(g, x0, y0).norm > TEXTURE_STD * (PATCH as f64)
}

/// Fallback matcher used when no match counts are supplied: counts 16x16
/// patches on a 32 px grid whose best normalized cross-correlation within
/// +-8 px exceeds 0.8 and whose reverse search lands back on the patch.
/// Coarser than a feature matcher; it only needs to separate a hard scene
/// change from a continuous shot.
pub fn builtin_match_count(a: &Grid<f32>, b: &Grid<f32>) -> Result<usize, FilterError> {
    if !a.same_dims(b) {
        return Err(FilterError::ShapeMismatch(a.dims(), b.dims()));
    }
    let mut count = 0;
    let mut y0 = 0;
    while y0 + PATCH <= a.height() {
        let mut x0 = 0;
        while x0 + PATCH <= a.width() {
            if is_textured(a, x0, y0) {
                if let Some(((bx, by), score)) = best_match(a, x0, y0, b) {
                    if score > MIN_NCC && best_match(b, bx, by, a).is_some_and(|(p, _)| p == (x0, y0)) {
                        count += 1;
                    }
                }
            }
            x0 += PATCH_STRIDE;
        }
        y0 += PATCH_STRIDE;
    }
    Ok(count)
}

/// Whether the camera stays within `trans_thresh_m` and `rot_thresh_deg` of
/// itself over all pose pairs.
pub fn camera_static_test(poses: &[CameraPose], trans_thresh_m: f64, rot_thresh_deg: f64) -> bool {
    let rot = rot_thresh_deg.to_radians();
    for (i, a) in poses.iter().enumerate() {
        for b in &poses[i + 1..] {
            if (a.position - b.position).norm() >= trans_thresh_m
                || rotation_angle(&a.orientation, &b.orientation) >= rot
            {
                return false;
            }
        }
    }
    true
}

/// Frames at the start and end of a source video that clips must avoid.
/// Returns the allowed half-open range.
pub fn trimmed_range(source_frames: u32, trim_frac: f64) -> std::ops::Range<u32> {
    let cut = (trim_frac.clamp(0.0, 0.5) * source_frames as f64).ceil() as u32;
    cut..source_frames.saturating_sub(cut).max(cut)
}

/// Whether a clip covering `[start, end)` of its source reaches into the
/// trimmed margins.
pub fn violates_boundary_trim(frame_range: [u32; 2], source_frames: u32, trim_frac: f64) -> bool {
    let allowed = trimmed_range(source_frames, trim_frac);
    frame_range[0] < allowed.start || frame_range[1] > allowed.end
}

/// Camera static and no track moving more than `m_threshold`.
pub fn looks_like_static_image(camera_static: bool, magnitudes: &[MotionMagnitude], m_threshold: f64) -> bool {
    camera_static && magnitudes.iter().all(|m| m.m <= m_threshold)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    CrossFade,
    StaticImage,
    BoundaryTrim,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipVerdict {
    pub accepted: bool,
    pub reasons: Vec<RejectReason>,
}

impl ClipVerdict {
    pub fn from_reasons(mut reasons: Vec<RejectReason>) -> Self {
        reasons.sort();
        reasons.dedup();
        Self { accepted: reasons.is_empty(), reasons }
    }
}

/// Trail length above which a track counts towards the motion statistic.
pub const LARGE_MOTION_PX: f64 = 50.0;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClipStats {
    /// Distance between the first and last camera centers, meters.
    pub camera_displacement_m: f64,
    pub track_count: usize,
    pub tracks_above_50px: usize,
    pub percent_above_50px: f64,
    pub visibility: TrackStats,
}

pub fn clip_stats(tracks: &[Track3D], magnitudes: &[MotionMagnitude], poses: &PoseSet) -> ClipStats {
    let camera_displacement_m = match (poses.as_slice().first(), poses.as_slice().last()) {
        (Some(a), Some(b)) => (b.position - a.position).norm(),
        _ => 0.0,
    };
    let above = magnitudes.iter().filter(|m| m.m > LARGE_MOTION_PX).count();
    ClipStats {
        camera_displacement_m,
        track_count: tracks.len(),
        tracks_above_50px: above,
        percent_above_50px: if magnitudes.is_empty() { 0.0 } else { 100.0 * above as f64 / magnitudes.len() as f64 },
        visibility: track_visibility_stats(tracks),
    }
}
