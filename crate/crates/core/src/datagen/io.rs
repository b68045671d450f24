//! UPDR trajectory files.
//!
//! Little-endian layout: magic `"UPDR"`, format version `u32`, `n_t u64`,
//! `n_xy u64`, `dt f64`, parameter count `u32`, then for each parameter a
//! `u16` name length, the UTF-8 name and an `f64` value; finally `n_t·n_xy`
//! `f32` values, time-major. A sibling `<stem>.meta.json` repeats the header
//! together with the grid description.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Grid, ParamPoint, Trajectory};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"UPDR";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    magic: String,
    format_version: u32,
    n_t: u64,
    n_xy: u64,
    dt: f64,
    params: ParamPoint,
    grid: Grid,
}

/// `dir/name.updr` -> `dir/name.meta.json`.
pub fn meta_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("trajectory");
    path.with_file_name(format!("{stem}.meta.json"))
}

fn encode(traj: &Trajectory) -> Result<Vec<u8>> {
    let mut buf = Vec::with_capacity(40 + traj.states().len() * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(traj.n_t() as u64).to_le_bytes());
    buf.extend_from_slice(&(traj.n_xy() as u64).to_le_bytes());
    buf.extend_from_slice(&traj.dt.to_le_bytes());
    buf.extend_from_slice(&(traj.param.len() as u32).to_le_bytes());
    for (name, value) in traj.param.iter() {
        let len = u16::try_from(name.len())
            .map_err(|_| Error::InvalidInput(format!("parameter name too long: {name}")))?;
        buf.extend_from_slice(&len.to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&value.to_le_bytes());
    }
    for &v in traj.states() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(buf)
}

pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    let bytes = encode(traj)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let meta = Meta {
        magic: "UPDR".into(),
        format_version: FORMAT_VERSION,
        n_t: traj.n_t() as u64,
        n_xy: traj.n_xy() as u64,
        dt: traj.dt,
        params: traj.param.clone(),
        grid: traj.grid.clone(),
    };
    let mpath = meta_path(path);
    let json = serde_json::to_string_pretty(&meta)?;
    fs::write(&mpath, json + "\n").map_err(|e| Error::io(&mpath, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::format(self.path, format!("truncated at byte {}", self.pos))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

/// Reads a UPDR file; the grid comes from the sibling metadata when present,
/// otherwise a unit-length line of `n_xy` points is assumed.
pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    if r.take(4)? != MAGIC {
        return Err(Error::format(path, "bad magic"));
    }
    let version = u32::from_le_bytes(r.array()?);
    if version != FORMAT_VERSION {
        return Err(Error::format(path, format!("unsupported format version {version}")));
    }
    let n_t = u64::from_le_bytes(r.array()?) as usize;
    let n_xy = u64::from_le_bytes(r.array()?) as usize;
    let dt = f64::from_le_bytes(r.array()?);
    let count = u32::from_le_bytes(r.array()?) as usize;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let len = u16::from_le_bytes(r.array()?) as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::format(path, "parameter name is not UTF-8"))?
            .to_string();
        params.push((name, f64::from_le_bytes(r.array()?)));
    }
    let payload = n_t
        .checked_mul(n_xy)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::format(path, "header extents overflow"))?;
    let states: Vec<f64> = r
        .take(payload)?
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")) as f64)
        .collect();
    if r.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after payload"));
    }
    let mpath = meta_path(path);
    let grid = match fs::read_to_string(&mpath) {
        Ok(text) => {
            let meta: Meta = serde_json::from_str(&text)?;
            if meta.n_t as usize != n_t || meta.n_xy as usize != n_xy {
                return Err(Error::format(&mpath, "metadata disagrees with binary header"));
            }
            meta.grid
        }
        Err(_) => Grid::line(n_xy, 1.0),
    };
    Trajectory::new(states, n_xy, dt, grid, ParamPoint::new(params))
        .map_err(|e| Error::format(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Trajectory {
        let states = (0..12).map(|i| i as f64 * 0.25 - 1.0).collect();
        Trajectory::new(
            states,
            4,
            0.1,
            Grid::line(4, 2.0),
            ParamPoint::new([("re_like", 90.0), ("aspect_like", 1.35)]),
        )
        .unwrap()
    }

    #[test]
    fn header_layout_is_bit_exact() {
        let bytes = encode(&sample()).unwrap();
        assert_eq!(&bytes[..4], b"UPDR");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..16], &3u64.to_le_bytes());
        assert_eq!(&bytes[16..24], &4u64.to_le_bytes());
        assert_eq!(&bytes[24..32], &0.1f64.to_le_bytes());
        assert_eq!(&bytes[32..36], &2u32.to_le_bytes());
        // names in ascending order
        assert_eq!(&bytes[36..38], &11u16.to_le_bytes());
        assert_eq!(&bytes[38..49], b"aspect_like");
        assert_eq!(&bytes[49..57], &1.35f64.to_le_bytes());
        assert_eq!(&bytes[57..59], &7u16.to_le_bytes());
        assert_eq!(&bytes[59..66], b"re_like");
        assert_eq!(&bytes[66..74], &90.0f64.to_le_bytes());
        assert_eq!(&bytes[74..78], &(-1.0f32).to_le_bytes());
        assert_eq!(bytes.len(), 74 + 12 * 4);
    }

    #[test]
    fn round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.updr");
        let traj = sample();
        write_trajectory(&path, &traj).unwrap();
        assert!(meta_path(&path).exists());
        let back = read_trajectory(&path).unwrap();
        assert_eq!(back, traj);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.updr");
        let mut bytes = encode(&sample()).unwrap();
        bytes.pop();
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_trajectory(&path), Err(Error::Format { .. })));
        bytes[0] = b'X';
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_trajectory(&path), Err(Error::Format { .. })));
    }
}
