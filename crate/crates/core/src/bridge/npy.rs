//! Strict NPY I/O: format 1.0, little-endian `f32`, C order.

use std::fs;
use std::path::{Path, PathBuf};

use npyz::{DType, Order, WriterBuilder};
use thiserror::Error;

use crate::tensor::{Dense, Map2D, Stack3D, TensorError};

const F32_DESCR: &str = "<f4";

#[derive(Debug, Error)]
pub enum NpyError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: not a valid NPY 1.0 file ({reason})", path.display())]
    Format { path: PathBuf, reason: String },
    #[error("{}: unsupported dtype {descr}, expected '<f4'", path.display())]
    Dtype { path: PathBuf, descr: String },
    #[error("{}: Fortran-ordered arrays are not supported", path.display())]
    FortranOrder { path: PathBuf },
    #[error("{}: expected a {expected}-d array, found shape {actual:?}", path.display())]
    Rank {
        path: PathBuf,
        expected: usize,
        actual: Vec<usize>,
    },
    #[error("{}: {source}", path.display())]
    Tensor {
        path: PathBuf,
        source: TensorError,
    },
}

/// Encodes `values` with the given C-order shape.
pub fn encode_f32(shape: &[usize], values: &[f32]) -> Vec<u8> {
    let shape: Vec<u64> = shape.iter().map(|&d| d as u64).collect();
    let mut out = Vec::with_capacity(128 + 4 * values.len());
    let mut writer = npyz::WriteOptions::<f32>::new()
        .default_dtype()
        .shape(&shape)
        .writer(&mut out)
        .begin_nd()
        .expect("writing to memory");
    writer.extend(values.iter().copied()).expect("writing to memory");
    writer.finish().expect("writing to memory");
    out
}

/// Decodes an NPY buffer; `path` only labels errors.
pub fn decode_f32(bytes: &[u8], path: &Path) -> Result<(Vec<usize>, Vec<f32>), NpyError> {
    let format = |reason: String| NpyError::Format {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 10 || &bytes[..6] != b"\x93NUMPY" {
        return Err(format("missing magic string".into()));
    }
    if (bytes[6], bytes[7]) != (1, 0) {
        return Err(format(format!("format version {}.{}", bytes[6], bytes[7])));
    }
    let file = npyz::NpyFile::new(bytes).map_err(|e| format(e.to_string()))?;
    match file.dtype() {
        DType::Plain(ty) if ty.to_string() == F32_DESCR => {}
        other => {
            return Err(NpyError::Dtype {
                path: path.to_path_buf(),
                descr: other.descr(),
            })
        }
    }
    if file.order() == Order::Fortran {
        return Err(NpyError::FortranOrder {
            path: path.to_path_buf(),
        });
    }
    let shape: Vec<usize> = file.shape().iter().map(|&d| d as usize).collect();
    let values = file.into_vec::<f32>().map_err(|e| format(e.to_string()))?;
    Ok((shape, values))
}

pub fn write_npy(path: &Path, shape: &[usize], values: &[f32]) -> Result<(), NpyError> {
    fs::write(path, encode_f32(shape, values)).map_err(|source| NpyError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_npy(path: &Path) -> Result<(Vec<usize>, Vec<f32>), NpyError> {
    let bytes = fs::read(path).map_err(|source| NpyError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_f32(&bytes, path)
}

pub fn write_map(path: &Path, map: &Map2D) -> Result<(), NpyError> {
    write_npy(path, &[map.height(), map.width()], map.values())
}

pub fn read_map(path: &Path) -> Result<Map2D, NpyError> {
    let (shape, values) = read_npy(path)?;
    let [h, w] = shape[..] else {
        return Err(NpyError::Rank {
            path: path.to_path_buf(),
            expected: 2,
            actual: shape,
        });
    };
    Map2D::new(h, w, values).map_err(|source| NpyError::Tensor {
        path: path.to_path_buf(),
        source,
    })
}

/// Stacks are stored as `(height, width, channels)`.
pub fn write_stack(path: &Path, stack: &Stack3D) -> Result<(), NpyError> {
    let (h, w, c) = stack.shape();
    write_npy(path, &[h, w, c], stack.values())
}

pub fn read_stack(path: &Path) -> Result<Stack3D, NpyError> {
    let (shape, values) = read_npy(path)?;
    let [h, w, c] = shape[..] else {
        return Err(NpyError::Rank {
            path: path.to_path_buf(),
            expected: 3,
            actual: shape,
        });
    };
    Stack3D::new(h, w, c, values).map_err(|source| NpyError::Tensor {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_version_one_and_aligned() {
        let bytes = encode_f32(&[2, 3], &[0.0; 6]);
        assert_eq!(&bytes[..8], b"\x93NUMPY\x01\x00");
        let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
        assert_eq!((10 + header_len) % 16, 0);
        let header = std::str::from_utf8(&bytes[10..10 + header_len]).unwrap();
        assert!(header.contains("'descr': '<f4'"), "{header}");
        assert!(header.contains("'fortran_order': False"));
        assert!(header.replace(' ', "").contains("'shape':(2,3"), "{header}");
        assert_eq!(bytes.len(), 10 + header_len + 24);
    }

    #[test]
    fn round_trip_is_bitwise() {
        let values = vec![1.5f32, -0.0, f32::MIN_POSITIVE, 3.25e-7];
        let bytes = encode_f32(&[4], &values);
        let (shape, back) = decode_f32(&bytes, Path::new("x.npy")).unwrap();
        assert_eq!(shape, vec![4]);
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&values));
    }

    #[test]
    fn float64_payload_names_the_file() {
        let mut out = Vec::new();
        let mut w = npyz::WriteOptions::<f64>::new()
            .default_dtype()
            .shape(&[2])
            .writer(&mut out)
            .begin_nd()
            .unwrap();
        w.extend([1.0, 2.0]).unwrap();
        w.finish().unwrap();
        let err = decode_f32(&out, Path::new("act_b0.npy")).unwrap_err();
        assert!(matches!(err, NpyError::Dtype { .. }));
        let msg = err.to_string();
        assert!(msg.contains("act_b0.npy") && msg.contains("<f8"), "{msg}");
    }

    #[test]
    fn rejects_other_versions_and_garbage() {
        let mut bytes = encode_f32(&[1], &[1.0]);
        bytes[6] = 2;
        assert!(matches!(
            decode_f32(&bytes, Path::new("a")),
            Err(NpyError::Format { .. })
        ));
        assert!(decode_f32(b"not an array", Path::new("a")).is_err());
    }
}
