//! Binary file formats for precomputed features and the padding mean frame.
//!
//! Feature file: magic "V2CF", u32 LE frame count T, u32 LE dimension d,
//! then T*d values as f32 LE, row-major (frames outer). The loader widens
//! to f64. Mean-frame file: magic "V2CM", u32 LE d, then d values as f32 LE.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

pub const FEATURE_MAGIC: &[u8; 4] = b"V2CF";
pub const MEAN_MAGIC: &[u8; 4] = b"V2CM";

fn open(path: &Path) -> Result<std::io::BufReader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(std::io::BufReader::new(file))
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(std::io::BufWriter::new(file))
}

fn read_exact(reader: &mut impl Read, buf: &mut [u8], path: &Path) -> Result<()> {
    reader.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Truncated {
                path: path.display().to_string(),
            }
        } else {
            Error::io(path.display().to_string(), e)
        }
    })
}

fn read_u32(reader: &mut impl Read, path: &Path) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(reader, &mut buf, path)?;
    Ok(u32::from_le_bytes(buf))
}

fn check_magic(reader: &mut impl Read, expected: &[u8; 4], path: &Path) -> Result<()> {
    let mut magic = [0u8; 4];
    read_exact(reader, &mut magic, path)?;
    if &magic != expected {
        return Err(Error::BadMagic {
            path: path.display().to_string(),
            expected: String::from_utf8_lossy(expected).to_string(),
        });
    }
    Ok(())
}

fn read_f32_block(reader: &mut impl Read, count: usize, path: &Path) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; count * 4];
    read_exact(reader, &mut bytes, path)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

/// Write a `[T x d]` feature sequence. Values are stored at f32 precision.
pub fn write_features(path: &Path, features: &Tensor) -> Result<()> {
    if features.shape().len() != 2 {
        return Err(Error::Shape {
            op: "write_features",
            detail: format!("expected [T x d], got {:?}", features.shape()),
        });
    }
    let (frames, dim) = (features.rows(), features.cols());
    if frames == 0 || dim == 0 {
        return Err(Error::EmptySequence);
    }
    let mut out = create(path)?;
    let io_err = |e| Error::io(path.display().to_string(), e);
    out.write_all(FEATURE_MAGIC).map_err(io_err)?;
    out.write_all(&(frames as u32).to_le_bytes())
        .map_err(io_err)?;
    out.write_all(&(dim as u32).to_le_bytes()).map_err(io_err)?;
    for &v in features.values() {
        out.write_all(&(v as f32).to_le_bytes()).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// Read a feature sequence, widening values to f64.
pub fn load_features(path: &Path) -> Result<Tensor> {
    let mut reader = open(path)?;
    check_magic(&mut reader, FEATURE_MAGIC, path)?;
    let frames = read_u32(&mut reader, path)? as usize;
    let dim = read_u32(&mut reader, path)? as usize;
    if frames == 0 {
        return Err(Error::EmptySequence);
    }
    if dim == 0 {
        return Err(Error::Format {
            path: path.display().to_string(),
            msg: "zero feature dimension".into(),
        });
    }
    let values = read_f32_block(&mut reader, frames * dim, path)?;
    let mut trailing = [0u8; 1];
    if reader
        .read(&mut trailing)
        .map_err(|e| Error::io(path.display().to_string(), e))?
        != 0
    {
        return Err(Error::Format {
            path: path.display().to_string(),
            msg: "trailing bytes after payload".into(),
        });
    }
    Tensor::new(vec![frames, dim], values)
}

/// Write the d-dimensional padding frame.
pub fn write_mean_frame(path: &Path, mean: &Tensor) -> Result<()> {
    if mean.shape().len() != 1 || mean.is_empty() {
        return Err(Error::Shape {
            op: "write_mean_frame",
            detail: format!("expected [d], got {:?}", mean.shape()),
        });
    }
    let mut out = create(path)?;
    let io_err = |e| Error::io(path.display().to_string(), e);
    out.write_all(MEAN_MAGIC).map_err(io_err)?;
    out.write_all(&(mean.len() as u32).to_le_bytes())
        .map_err(io_err)?;
    for &v in mean.values() {
        out.write_all(&(v as f32).to_le_bytes()).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

pub fn load_mean_frame(path: &Path) -> Result<Tensor> {
    let mut reader = open(path)?;
    check_magic(&mut reader, MEAN_MAGIC, path)?;
    let dim = read_u32(&mut reader, path)? as usize;
    if dim == 0 {
        return Err(Error::Format {
            path: path.display().to_string(),
            msg: "zero dimension".into(),
        });
    }
    let values = read_f32_block(&mut reader, dim, path)?;
    Ok(Tensor::from_vec(values))
}
