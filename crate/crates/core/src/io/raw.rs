//! Raw float dump of a single-channel buffer such as final transmittance.
//!
//! Layout, all little-endian: 8 magic bytes `LSRAWF32`, `u32` width,
//! `u32` height, then `width · height` `f32` values in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"LSRAWF32";

pub fn save_raw(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<()> {
    if values.len() != width * height {
        return Err(Error::config(format!("raw dump expects {} values, got {}", width * height, values.len())));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_u32::<LittleEndian>(width as u32).map_err(io)?;
    w.write_u32::<LittleEndian>(height as u32).map_err(io)?;
    for v in values {
        w.write_f32::<LittleEndian>(*v as f32).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn load_raw(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| Error::parse(path, "truncated header"))?;
    if &magic != MAGIC {
        return Err(Error::parse(path, "bad magic"));
    }
    let width = r.read_u32::<LittleEndian>().map_err(|_| Error::parse(path, "truncated header"))? as usize;
    let height = r.read_u32::<LittleEndian>().map_err(|_| Error::parse(path, "truncated header"))? as usize;
    let mut values = vec![0f32; width * height];
    r.read_f32_into::<LittleEndian>(&mut values)
        .map_err(|_| Error::parse(path, "truncated data"))?;
    Ok((width, height, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.raw");
        let vals: Vec<f64> = (0..6).map(|i| i as f64 / 8.0).collect();
        save_raw(&path, 3, 2, &vals).unwrap();
        let (w, h, back) = load_raw(&path).unwrap();
        assert_eq!((w, h), (3, 2));
        assert_eq!(back, vals.iter().map(|v| *v as f32).collect::<Vec<_>>());
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 16 + 24);
    }
}
