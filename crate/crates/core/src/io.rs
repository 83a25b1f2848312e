//! Binary file formats shared by the pipeline and the synthetic generator.
//!
//! All integers and floats are little-endian. Every file starts with a
//! 16-byte header: a 4-byte magic followed by three `u32` fields.
//!
//! | file        | magic  | header fields                    | payload                                   |
//! |-------------|--------|----------------------------------|-------------------------------------------|
//! | scalar grid | `TFGD` | width, height, frame_index       | `width*height` `f32`, row-major, NaN = invalid |
//! | label map   | `TFLB` | width, height, frame_index       | `width*height` `u16` class ids            |
//! | 2D tracks   | `TFT2` | frames N, track count, version 1 | per track: `u32` id, `u32` query frame, N x (`f32` u, `f32` v), N x `u8` visible |
//! | 3D tracks   | `TFT3` | frames N, track count, version 1 | per track: `u32` id, `u32` query frame, N x (`f32` x, y, z), N x `u8` visible |

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use nalgebra::Vector3;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::grid::Grid;
use crate::tracks::{Track2D, TrackPoints, Trajectory};

pub const GRID_MAGIC: [u8; 4] = *b"TFGD";
pub const LABEL_MAGIC: [u8; 4] = *b"TFLB";
pub const TRACK2D_MAGIC: [u8; 4] = *b"TFT2";
pub const TRACK3D_MAGIC: [u8; 4] = *b"TFT3";
const TRACK_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: bad magic {found:?}, expected {expected:?}")]
    BadMagic { path: PathBuf, expected: [u8; 4], found: [u8; 4] },
    #[error("{path}: {reason}")]
    Invalid { path: PathBuf, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FormatError + '_ {
    move |source| FormatError::Io { path: path.to_path_buf(), source }
}

fn read_header(r: &mut impl Read, path: &Path, magic: [u8; 4]) -> Result<[u32; 3], FormatError> {
    let mut found = [0u8; 4];
    r.read_exact(&mut found).map_err(io_err(path))?;
    if found != magic {
        return Err(FormatError::BadMagic { path: path.to_path_buf(), expected: magic, found });
    }
    let mut h = [0u32; 3];
    for v in &mut h {
        *v = r.read_u32::<LE>().map_err(io_err(path))?;
    }
    Ok(h)
}

fn write_header(w: &mut impl Write, magic: [u8; 4], fields: [u32; 3]) -> std::io::Result<()> {
    w.write_all(&magic)?;
    for f in fields {
        w.write_u32::<LE>(f)?;
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>, FormatError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(io_err(path))?;
        }
    }
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

fn open(path: &Path) -> Result<BufReader<File>, FormatError> {
    Ok(BufReader::new(File::open(path).map_err(io_err(path))?))
}

fn ensure_eof(r: &mut impl Read, path: &Path) -> Result<(), FormatError> {
    let mut extra = [0u8; 1];
    match r.read(&mut extra).map_err(io_err(path))? {
        0 => Ok(()),
        _ => Err(FormatError::Invalid { path: path.to_path_buf(), reason: "trailing bytes".into() }),
    }
}

pub fn write_grid(path: &Path, grid: &Grid<f32>, frame_index: u32) -> Result<(), FormatError> {
    let mut w = create(path)?;
    (|| {
        write_header(&mut w, GRID_MAGIC, [grid.width() as u32, grid.height() as u32, frame_index])?;
        for v in grid.data() {
            w.write_f32::<LE>(*v)?;
        }
        w.flush()
    })()
    .map_err(io_err(path))
}

/// Reads a scalar grid and its frame index.
pub fn read_grid(path: &Path) -> Result<(Grid<f32>, u32), FormatError> {
    let mut r = open(path)?;
    let [w, h, frame] = read_header(&mut r, path, GRID_MAGIC)?;
    let mut data = vec![0f32; w as usize * h as usize];
    r.read_f32_into::<LE>(&mut data).map_err(io_err(path))?;
    ensure_eof(&mut r, path)?;
    Ok((Grid::from_vec(w as usize, h as usize, data).expect("sized above"), frame))
}

pub fn write_label_map(path: &Path, labels: &Grid<u16>, frame_index: u32) -> Result<(), FormatError> {
    let mut w = create(path)?;
    (|| {
        write_header(&mut w, LABEL_MAGIC, [labels.width() as u32, labels.height() as u32, frame_index])?;
        for v in labels.data() {
            w.write_u16::<LE>(*v)?;
        }
        w.flush()
    })()
    .map_err(io_err(path))
}

pub fn read_label_map(path: &Path) -> Result<(Grid<u16>, u32), FormatError> {
    let mut r = open(path)?;
    let [w, h, frame] = read_header(&mut r, path, LABEL_MAGIC)?;
    let mut data = vec![0u16; w as usize * h as usize];
    r.read_u16_into::<LE>(&mut data).map_err(io_err(path))?;
    ensure_eof(&mut r, path)?;
    Ok((Grid::from_vec(w as usize, h as usize, data).expect("sized above"), frame))
}

fn check_frames(path: &Path, n_frames: usize, len: usize, id: u32) -> Result<(), FormatError> {
    if len != n_frames {
        return Err(FormatError::Invalid {
            path: path.to_path_buf(),
            reason: format!("track {id} has {len} frames, table has {n_frames}"),
        });
    }
    Ok(())
}

pub fn write_tracks2d(path: &Path, tracks: &[Track2D], n_frames: usize) -> Result<(), FormatError> {
    for t in tracks {
        check_frames(path, n_frames, t.n_frames(), t.track_id)?;
    }
    let mut w = create(path)?;
    (|| {
        write_header(&mut w, TRACK2D_MAGIC, [n_frames as u32, tracks.len() as u32, TRACK_VERSION])?;
        for t in tracks {
            w.write_u32::<LE>(t.track_id)?;
            w.write_u32::<LE>(t.query_frame)?;
            for (p, &vis) in t.positions.iter().zip(&t.visible) {
                let (u, v) = if vis { (p[0] as f32, p[1] as f32) } else { (f32::NAN, f32::NAN) };
                w.write_f32::<LE>(u)?;
                w.write_f32::<LE>(v)?;
            }
            for &vis in &t.visible {
                w.write_u8(vis as u8)?;
            }
        }
        w.flush()
    })()
    .map_err(io_err(path))
}

/// Reads a 2D track table and validates every track.
pub fn read_tracks2d(path: &Path) -> Result<(Vec<Track2D>, usize), FormatError> {
    let mut r = open(path)?;
    let [n_frames, count, _version] = read_header(&mut r, path, TRACK2D_MAGIC)?;
    let n = n_frames as usize;
    let mut tracks = Vec::with_capacity(count as usize);
    let mut uv = vec![0f32; 2 * n];
    let mut vis = vec![0u8; n];
    for _ in 0..count {
        let id = r.read_u32::<LE>().map_err(io_err(path))?;
        let qf = r.read_u32::<LE>().map_err(io_err(path))?;
        r.read_f32_into::<LE>(&mut uv).map_err(io_err(path))?;
        r.read_exact(&mut vis).map_err(io_err(path))?;
        let positions = uv.chunks_exact(2).map(|c| [c[0] as f64, c[1] as f64]).collect();
        let visible = vis.iter().map(|v| *v != 0).collect();
        let t = Track2D::new(id, qf, positions, visible)
            .map_err(|e| FormatError::Invalid { path: path.to_path_buf(), reason: e.to_string() })?;
        tracks.push(t);
    }
    ensure_eof(&mut r, path)?;
    Ok((tracks, n))
}

pub fn write_tracks3d<T: TrackPoints>(path: &Path, tracks: &[T], n_frames: usize) -> Result<(), FormatError> {
    for t in tracks {
        check_frames(path, n_frames, t.points().len(), t.track_id())?;
    }
    let mut w = create(path)?;
    (|| {
        write_header(&mut w, TRACK3D_MAGIC, [n_frames as u32, tracks.len() as u32, TRACK_VERSION])?;
        for t in tracks {
            w.write_u32::<LE>(t.track_id())?;
            w.write_u32::<LE>(t.query_frame())?;
            for (p, &vis) in t.points().iter().zip(t.visible()) {
                let p = if vis { p.map(|c| c as f32) } else { Vector3::repeat(f32::NAN) };
                for c in p.iter() {
                    w.write_f32::<LE>(*c)?;
                }
            }
            for &vis in t.visible() {
                w.write_u8(vis as u8)?;
            }
        }
        w.flush()
    })()
    .map_err(io_err(path))
}

pub fn read_tracks3d(path: &Path) -> Result<(Vec<Trajectory>, usize), FormatError> {
    let mut r = open(path)?;
    let [n_frames, count, _version] = read_header(&mut r, path, TRACK3D_MAGIC)?;
    let n = n_frames as usize;
    let mut xyz = vec![0f32; 3 * n];
    let mut vis = vec![0u8; n];
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let track_id = r.read_u32::<LE>().map_err(io_err(path))?;
        let query_frame = r.read_u32::<LE>().map_err(io_err(path))?;
        r.read_f32_into::<LE>(&mut xyz).map_err(io_err(path))?;
        r.read_exact(&mut vis).map_err(io_err(path))?;
        let visible: Vec<bool> = vis.iter().map(|v| *v != 0).collect();
        let points = xyz
            .chunks_exact(3)
            .zip(&visible)
            .map(|(c, &v)| if v { Vector3::new(c[0] as f64, c[1] as f64, c[2] as f64) } else { Vector3::zeros() })
            .collect();
        out.push(Trajectory { track_id, query_frame, points, visible });
    }
    ensure_eof(&mut r, path)?;
    Ok((out, n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn grid_header_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.grid");
        let g = Grid::from_vec(3, 2, vec![1.0, f32::NAN, 3.0, 4.0, 5.0, -6.5]).unwrap();
        write_grid(&path, &g, 17).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 16 + 6 * 4);
        assert_eq!(&bytes[..4], b"TFGD");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 17);
        assert_eq!(f32::from_le_bytes(bytes[16..20].try_into().unwrap()), 1.0);
        let (back, frame) = read_grid(&path).unwrap();
        assert_eq!(frame, 17);
        assert!(back[(1, 0)].is_nan());
        assert_eq!(back[(2, 1)], -6.5);
    }

    #[test]
    fn rejects_wrong_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.grid");
        write_grid(&path, &Grid::filled(2, 2, 0.0), 0).unwrap();
        assert!(matches!(read_tracks2d(&path), Err(FormatError::BadMagic { .. })));
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(read_grid(&path), Err(FormatError::Io { .. })));
        std::fs::write(&path, [bytes.as_slice(), &[0]].concat()).unwrap();
        assert!(matches!(read_grid(&path), Err(FormatError::Invalid { .. })));
    }

    #[test]
    fn track2d_record_size() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.bin");
        let t = Track2D::new(5, 1, vec![[1.0, 2.0], [3.0, 4.0], [0.0, 0.0]], vec![true, true, false]).unwrap();
        write_tracks2d(&path, std::slice::from_ref(&t), 3).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 16 + 8 + 3 * 8 + 3);
        let (back, n) = read_tracks2d(&path).unwrap();
        assert_eq!(n, 3);
        assert_eq!(back[0].positions[..2], t.positions[..2]);
        assert_eq!(back[0].visible, t.visible);
        assert!(write_tracks2d(&path, &[t], 4).is_err());
    }

    proptest! {
        #[test]
        fn track3d_round_trip(
            rows in prop::collection::vec(
                (any::<u32>(), prop::collection::vec((prop::array::uniform3(-100.0f32..100.0), any::<bool>()), 6)),
                0..8,
            )
        ) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("t3.bin");
            let tracks: Vec<Trajectory> = rows
                .iter()
                .map(|(id, frames)| Trajectory {
                    track_id: *id,
                    query_frame: 0,
                    points: frames.iter().map(|(p, v)| if *v { Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64) } else { Vector3::zeros() }).collect(),
                    visible: frames.iter().map(|(_, v)| *v).collect(),
                })
                .collect();
            write_tracks3d(&path, &tracks, 6).unwrap();
            let (back, n) = read_tracks3d(&path).unwrap();
            prop_assert_eq!(n, 6);
            prop_assert_eq!(back, tracks);
        }
    }
}
