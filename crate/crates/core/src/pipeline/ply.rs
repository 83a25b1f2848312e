//! Binary little-endian PLY output for track snapshots and polylines, plus
//! a reader for the same subset of the format.

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::tracks::TrackPoints;

#[derive(Debug, thiserror::Error)]
pub enum PlyError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("frame {frame} is outside the clip ({frames} frames)")]
    FrameOutOfRange { frame: u32, frames: usize },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PlyOptions {
    /// Per-vertex color derived from the track id.
    pub color: bool,
    pub track_ids: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PlyData {
    pub vertices: Vec<[f32; 3]>,
    pub colors: Option<Vec<[u8; 3]>>,
    pub track_ids: Option<Vec<u32>>,
    pub edges: Vec<[u32; 2]>,
}

/// Stable, well spread color per track id.
pub fn track_color(track_id: u32) -> [u8; 3] {
    let h = track_id.wrapping_mul(0x9E37_79B9).rotate_left(7) ^ 0x5bd1_e995;
    let [a, b, c, _] = h.to_le_bytes();
    [64 + a / 2, 64 + b / 2, 64 + c / 2]
}

fn write_ply(path: &Path, data: &PlyData) -> Result<(), PlyError> {
    let io = |source| PlyError::Io { path: path.into(), source };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    let mut header = String::from("ply\nformat binary_little_endian 1.0\ncomment trackfuse\n");
    header +=
        &format!("element vertex {}\nproperty float x\nproperty float y\nproperty float z\n", data.vertices.len());
    if data.colors.is_some() {
        header += "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    }
    if data.track_ids.is_some() {
        header += "property uint track_id\n";
    }
    if !data.edges.is_empty() {
        header += &format!("element edge {}\nproperty int vertex1\nproperty int vertex2\n", data.edges.len());
    }
    header += "end_header\n";
    (|| {
        w.write_all(header.as_bytes())?;
        for (k, v) in data.vertices.iter().enumerate() {
            for c in v {
                w.write_f32::<LE>(*c)?;
            }
            if let Some(colors) = &data.colors {
                w.write_all(&colors[k])?;
            }
            if let Some(ids) = &data.track_ids {
                w.write_u32::<LE>(ids[k])?;
            }
        }
        for e in &data.edges {
            w.write_i32::<LE>(e[0] as i32)?;
            w.write_i32::<LE>(e[1] as i32)?;
        }
        w.flush()
    })()
    .map_err(io)
}

fn with_attributes<T: TrackPoints>(data: &mut PlyData, opts: PlyOptions) -> impl FnMut(&T) + '_ {
    if opts.color {
        data.colors = Some(Vec::new());
    }
    if opts.track_ids {
        data.track_ids = Some(Vec::new());
    }
    move |t: &T| {
        if let Some(c) = &mut data.colors {
            c.push(track_color(t.track_id()));
        }
        if let Some(ids) = &mut data.track_ids {
            ids.push(t.track_id());
        }
    }
}

/// Writes the points of all tracks visible at `frame`.
pub fn export_pointcloud<T: TrackPoints>(
    tracks: &[T],
    frame: u32,
    path: &Path,
    opts: PlyOptions,
) -> Result<usize, PlyError> {
    let frames = tracks.iter().map(|t| t.points().len()).max().unwrap_or(0);
    if frame as usize >= frames {
        return Err(PlyError::FrameOutOfRange { frame, frames });
    }
    let mut data = PlyData::default();
    let mut vertices = Vec::new();
    {
        let mut attr = with_attributes::<T>(&mut data, opts);
        for t in tracks {
            if let Some(p) = t.point(frame as usize) {
                vertices.push([p.x as f32, p.y as f32, p.z as f32]);
                attr(t);
            }
        }
    }
    data.vertices = vertices;
    write_ply(path, &data)?;
    Ok(data.vertices.len())
}

/// Writes every visible point of every track with an edge between
/// consecutive visible frames of the same track.
pub fn export_trajectories<T: TrackPoints>(tracks: &[T], path: &Path, opts: PlyOptions) -> Result<usize, PlyError> {
    let mut data = PlyData::default();
    let mut vertices = Vec::new();
    let mut edges = Vec::new();
    {
        let mut attr = with_attributes::<T>(&mut data, opts);
        for t in tracks {
            let mut prev: Option<u32> = None;
            for (p, &v) in t.points().iter().zip(t.visible()) {
                if !v {
                    continue;
                }
                let k = vertices.len() as u32;
                vertices.push([p.x as f32, p.y as f32, p.z as f32]);
                attr(t);
                if let Some(j) = prev {
                    edges.push([j, k]);
                }
                prev = Some(k);
            }
        }
    }
    data.vertices = vertices;
    data.edges = edges;
    write_ply(path, &data)?;
    Ok(data.vertices.len())
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Scalar {
    F32,
    F64,
    U8,
    I32,
    U32,
}

impl Scalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            "uchar" | "uint8" => Scalar::U8,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            _ => return None,
        })
    }

    fn read(self, r: &mut impl Read) -> std::io::Result<f64> {
        Ok(match self {
            Scalar::F32 => r.read_f32::<LE>()? as f64,
            Scalar::F64 => r.read_f64::<LE>()?,
            Scalar::U8 => r.read_u8()? as f64,
            Scalar::I32 => r.read_i32::<LE>()? as f64,
            Scalar::U32 => r.read_u32::<LE>()? as f64,
        })
    }
}

struct Element {
    name: String,
    count: usize,
    props: Vec<(String, Scalar)>,
}

/// Reads binary little-endian PLY files with scalar vertex and edge
/// properties, as written by this module.
pub fn read_ply(path: &Path) -> Result<PlyData, PlyError> {
    let io = |source| PlyError::Io { path: path.into(), source };
    let fmt = |reason: String| PlyError::Format { path: path.into(), reason };
    let mut r = BufReader::new(File::open(path).map_err(io)?);
    let mut elements: Vec<Element> = Vec::new();
    let mut line = String::new();
    let mut first = true;
    loop {
        line.clear();
        if r.read_line(&mut line).map_err(io)? == 0 {
            return Err(fmt("header not terminated".into()));
        }
        let words: Vec<&str> = line.split_whitespace().collect();
        if first {
            if words != ["ply"] {
                return Err(fmt("not a PLY file".into()));
            }
            first = false;
            continue;
        }
        match words.as_slice() {
            ["format", "binary_little_endian", _] => {}
            ["format", other, ..] => return Err(fmt(format!("unsupported format {other}"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| fmt(format!("bad element count {count}")))?,
                props: Vec::new(),
            }),
            ["property", ty, name] => {
                let ty = Scalar::parse(ty).ok_or_else(|| fmt(format!("unsupported property type {ty}")))?;
                elements
                    .last_mut()
                    .ok_or_else(|| fmt("property before element".into()))?
                    .props
                    .push((name.to_string(), ty));
            }
            ["end_header"] => break,
            _ => return Err(fmt(format!("unsupported header line {:?}", line.trim()))),
        }
    }
    let mut data = PlyData::default();
    for el in &elements {
        let has = |n: &str| el.props.iter().any(|(p, _)| p == n);
        if el.name == "vertex" {
            if has("red") {
                data.colors = Some(Vec::with_capacity(el.count));
            }
            if has("track_id") {
                data.track_ids = Some(Vec::with_capacity(el.count));
            }
        }
        for _ in 0..el.count {
            let mut xyz = [0f32; 3];
            let mut rgb = [0u8; 3];
            let mut id = 0u32;
            let mut edge = [0u32; 2];
            for (name, ty) in &el.props {
                let v = ty.read(&mut r).map_err(io)?;
                match (el.name.as_str(), name.as_str()) {
                    ("vertex", "x") => xyz[0] = v as f32,
                    ("vertex", "y") => xyz[1] = v as f32,
                    ("vertex", "z") => xyz[2] = v as f32,
                    ("vertex", "red") => rgb[0] = v as u8,
                    ("vertex", "green") => rgb[1] = v as u8,
                    ("vertex", "blue") => rgb[2] = v as u8,
                    ("vertex", "track_id") => id = v as u32,
                    ("edge", "vertex1") => edge[0] = v as u32,
                    ("edge", "vertex2") => edge[1] = v as u32,
                    _ => {}
                }
            }
            match el.name.as_str() {
                "vertex" => {
                    data.vertices.push(xyz);
                    if let Some(c) = &mut data.colors {
                        c.push(rgb);
                    }
                    if let Some(ids) = &mut data.track_ids {
                        ids.push(id);
                    }
                }
                "edge" => data.edges.push(edge),
                _ => {}
            }
        }
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(io)? != 0 {
        return Err(fmt("trailing bytes after the last element".into()));
    }
    Ok(data)
}
