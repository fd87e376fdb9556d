//! The GFTN binary tensor container.
//!
//! Layout of one record: magic `"GFTN"`, version `u8`, rank `u8`, then one
//! `u32` little-endian extent per dimension, then the values as little-endian
//! IEEE-754 doubles in row-major order. Version 1 stores f64 values; a 32-bit
//! variant would bump the version. Files may hold several records back to
//! back (parameter checkpoints, dataset caches).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::ImageGrid;

pub const MAGIC: [u8; 4] = *b"GFTN";
pub const VERSION: u8 = 1;

pub fn write_tensor<W: Write>(w: &mut W, shape: &[usize], values: &[f64]) -> Result<()> {
    let numel: usize = shape.iter().product();
    if numel != values.len() {
        return Err(Error::shape(format!(
            "shape {:?} holds {} values, got {}",
            shape,
            numel,
            values.len()
        )));
    }
    if shape.len() > u8::MAX as usize {
        return Err(Error::invalid(format!("rank {} exceeds u8", shape.len())));
    }
    w.write_all(&MAGIC)?;
    w.write_all(&[VERSION, shape.len() as u8])?;
    for &ext in shape {
        let ext: u32 = ext
            .try_into()
            .map_err(|_| Error::invalid(format!("extent {ext} exceeds u32")))?;
        w.write_all(&ext.to_le_bytes())?;
    }
    for &v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<(Vec<usize>, Vec<f64>)> {
    match read_tensor_opt(r)? {
        Some(t) => Ok(t),
        None => Err(Error::load("unexpected end of file, no tensor record")),
    }
}

/// Read the next record, or `None` on a clean end of file.
pub fn read_tensor_opt<R: Read>(r: &mut R) -> Result<Option<(Vec<usize>, Vec<f64>)>> {
    let mut magic = [0u8; 4];
    match read_exact_or_eof(r, &mut magic)? {
        0 => return Ok(None),
        4 => {}
        n => return Err(Error::load(format!("truncated magic ({n} bytes)"))),
    }
    if magic != MAGIC {
        return Err(Error::load(format!("bad magic {magic:?}")));
    }
    let mut head = [0u8; 2];
    r.read_exact(&mut head)
        .map_err(|_| Error::load("truncated header"))?;
    let (version, rank) = (head[0], head[1] as usize);
    if version != VERSION {
        return Err(Error::load(format!(
            "unsupported version {version} (expected {VERSION})"
        )));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut ext = [0u8; 4];
        r.read_exact(&mut ext)
            .map_err(|_| Error::load("truncated extents"))?;
        shape.push(u32::from_le_bytes(ext) as usize);
    }
    let numel: usize = shape.iter().product();
    let mut values = Vec::with_capacity(numel);
    let mut buf = [0u8; 8];
    for _ in 0..numel {
        r.read_exact(&mut buf)
            .map_err(|_| Error::load("truncated values"))?;
        values.push(f64::from_le_bytes(buf));
    }
    Ok(Some((shape, values)))
}

fn read_exact_or_eof<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        let n = r.read(&mut buf[filled..])?;
        if n == 0 {
            break;
        }
        filled += n;
    }
    Ok(filled)
}

pub fn save_grid(path: &Path, grid: &ImageGrid) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor(&mut w, &[grid.height(), grid.width()], grid.data())?;
    w.flush()?;
    Ok(())
}

pub fn load_grid(path: &Path) -> Result<ImageGrid> {
    let mut r = BufReader::new(File::open(path)?);
    let (shape, values) = read_tensor(&mut r)?;
    if shape.len() != 2 {
        return Err(Error::load(format!("expected rank-2 record, got {shape:?}")));
    }
    ImageGrid::from_vec(shape[0], shape[1], values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let shape = vec![2, 3, 4];
        let values: Vec<f64> = (0..24).map(|i| (i as f64).sin() * 1e-3).collect();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &shape, &values).unwrap();
        let (s, v) = read_tensor(&mut &buf[..]).unwrap();
        assert_eq!(s, shape);
        assert_eq!(v, values); // exact f64 equality: bytes preserved
    }

    #[test]
    fn multiple_records_and_clean_eof() {
        let mut buf = Vec::new();
        write_tensor(&mut buf, &[2], &[1.0, 2.0]).unwrap();
        write_tensor(&mut buf, &[1, 2], &[3.0, 4.0]).unwrap();
        let mut r = &buf[..];
        assert_eq!(read_tensor_opt(&mut r).unwrap().unwrap().0, vec![2]);
        assert_eq!(read_tensor_opt(&mut r).unwrap().unwrap().0, vec![1, 2]);
        assert!(read_tensor_opt(&mut r).unwrap().is_none());
    }

    #[test]
    fn corrupt_magic_is_rejected() {
        let mut buf = Vec::new();
        write_tensor(&mut buf, &[1], &[5.0]).unwrap();
        buf[0] = b'X';
        assert!(matches!(read_tensor(&mut &buf[..]), Err(Error::Load(_))));
    }

    #[test]
    fn truncated_values_are_rejected() {
        let mut buf = Vec::new();
        write_tensor(&mut buf, &[4], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        buf.truncate(buf.len() - 5);
        assert!(matches!(read_tensor(&mut &buf[..]), Err(Error::Load(_))));
    }

    #[test]
    fn wrong_version_is_rejected() {
        let mut buf = Vec::new();
        write_tensor(&mut buf, &[1], &[5.0]).unwrap();
        buf[4] = 9;
        assert!(matches!(read_tensor(&mut &buf[..]), Err(Error::Load(_))));
    }
}
