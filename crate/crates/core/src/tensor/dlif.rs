//! `DLIF1` binary tensor files.
//!
//! Layout: the 5 magic bytes `DLIF1`, a `u8` rank, `rank` little-endian
//! `u32` dimensions, then the row-major payload as little-endian `f32`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"DLIF1";

pub fn encode(shape: &[usize], data: &[f64]) -> Result<Vec<u8>> {
    if shape.len() > u8::MAX as usize {
        return Err(Error::Format(format!("rank {} does not fit in a u8", shape.len())));
    }
    let mut out = Vec::with_capacity(6 + 4 * shape.len() + 4 * data.len());
    out.extend_from_slice(MAGIC);
    out.push(shape.len() as u8);
    for &d in shape {
        let d = u32::try_from(d).map_err(|_| Error::Format(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for &v in data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<(Vec<usize>, Vec<f64>)> {
    let mut r = bytes;
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic).map_err(|_| Error::Format("truncated header".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic, expected DLIF1".into()));
    }
    let mut rank = [0u8; 1];
    r.read_exact(&mut rank).map_err(|_| Error::Format("truncated header".into()))?;
    let mut shape = Vec::with_capacity(rank[0] as usize);
    for _ in 0..rank[0] {
        let mut d = [0u8; 4];
        r.read_exact(&mut d).map_err(|_| Error::Format("truncated dimensions".into()))?;
        shape.push(u32::from_le_bytes(d) as usize);
    }
    let n: usize = shape.iter().product();
    if r.len() != 4 * n {
        return Err(Error::Format(format!("payload holds {} bytes, shape {shape:?} needs {}", r.len(), 4 * n)));
    }
    let data = r.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
    Ok((shape, data))
}

pub fn write(path: impl AsRef<Path>, tensor: &Tensor) -> Result<()> {
    write_raw(path, tensor.shape(), tensor.data())
}

pub fn write_raw(path: impl AsRef<Path>, shape: &[usize], data: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&encode(shape, data)?)?;
    w.flush()?;
    Ok(())
}

pub fn read_raw(path: impl AsRef<Path>) -> Result<(Vec<usize>, Vec<f64>)> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    decode(&bytes)
}

pub fn read(path: impl AsRef<Path>) -> Result<Tensor> {
    let (shape, data) = read_raw(path)?;
    Tensor::new(&shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_bit_exact() {
        let bytes = encode(&[2, 1], &[1.0, -2.5]).unwrap();
        let mut expected = b"DLIF1".to_vec();
        expected.push(2);
        expected.extend_from_slice(&[2, 0, 0, 0, 1, 0, 0, 0]);
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-2.5f32).to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(decode(b"DLIF2\x00").is_err());
        let mut bytes = encode(&[3], &[1.0, 2.0, 3.0]).unwrap();
        bytes.pop();
        assert!(decode(&bytes).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.dlif");
        let t = Tensor::new(&[1, 2, 2], vec![0.25, 0.5, 0.75, 1.0]).unwrap();
        write(&path, &t).unwrap();
        let back = read(&path).unwrap();
        assert_eq!(back.shape(), t.shape());
        assert_eq!(back.data(), t.data());
    }
}
