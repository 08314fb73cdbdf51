//! Minimal self-describing binary tensor format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! bytes 0..4   magic "VXT1"
//! u32          version (1)
//! u8           dtype (1 = float32, 2 = float64)
//! u8           ndim
//! u64 * ndim   dimension lengths
//! payload      row-major values, little-endian
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Array3, ArrayD, ArrayView, Dimension, IxDyn};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"VXT1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    Float32,
    Float64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::Float32 => 1,
            DType::Float64 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(DType::Float32),
            2 => Some(DType::Float64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::Float32 => 4,
            DType::Float64 => 8,
        }
    }
}

/// Parsed header of a tensor file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorHeader {
    pub version: u32,
    pub dtype: DType,
    pub shape: Vec<usize>,
}

impl TensorHeader {
    pub fn header_len(&self) -> u64 {
        4 + 4 + 1 + 1 + 8 * self.shape.len() as u64
    }

    pub fn payload_len(&self) -> u64 {
        self.shape.iter().product::<usize>() as u64 * self.dtype.size() as u64
    }
}

/// An in-memory tensor. Values are held as `f64`; float32 files are widened on read
/// and narrowed again on write, which is exact.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dtype: DType,
    pub data: ArrayD<f64>,
}

impl Tensor {
    pub fn shape(&self) -> &[usize] {
        self.data.shape()
    }

    pub fn into_array1(self) -> Result<Array1<f64>> {
        let shape = self.data.shape().to_vec();
        self.data
            .into_dimensionality()
            .map_err(|_| Error::shape(format!("expected 1-d tensor, found shape {shape:?}")))
    }

    pub fn into_array2(self) -> Result<Array2<f64>> {
        let shape = self.data.shape().to_vec();
        self.data
            .into_dimensionality()
            .map_err(|_| Error::shape(format!("expected 2-d tensor, found shape {shape:?}")))
    }

    pub fn into_array3(self) -> Result<Array3<f64>> {
        let shape = self.data.shape().to_vec();
        self.data
            .into_dimensionality()
            .map_err(|_| Error::shape(format!("expected 3-d tensor, found shape {shape:?}")))
    }
}

/// Write `array` to `path` in the given dtype.
pub fn write_tensor<D: Dimension>(
    array: &ArrayView<'_, f64, D>,
    dtype: DType,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    if array.ndim() == 0 {
        return Err(Error::invalid("ndim must be ≥ 1"));
    }
    if array.ndim() > u8::MAX as usize {
        return Err(Error::invalid(format!("ndim {} exceeds 255", array.ndim())));
    }
    if array.is_empty() {
        return Err(Error::invalid("cannot write an empty tensor"));
    }
    let bytes = encode(array, dtype);
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Convenience wrapper writing canonical float64.
pub fn write_f64<D: Dimension>(array: &ArrayView<'_, f64, D>, path: impl AsRef<Path>) -> Result<()> {
    write_tensor(array, DType::Float64, path)
}

fn encode<D: Dimension>(array: &ArrayView<'_, f64, D>, dtype: DType) -> Vec<u8> {
    let mut out = Vec::with_capacity(10 + 8 * array.ndim() + array.len() * dtype.size());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(dtype.code());
    out.push(array.ndim() as u8);
    for &d in array.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    // logical (row-major) iteration order regardless of memory layout
    match dtype {
        DType::Float32 => array
            .iter()
            .for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
        DType::Float64 => array
            .iter()
            .for_each(|&v| out.extend_from_slice(&v.to_le_bytes())),
    }
    out
}

fn parse_header(path: &Path, bytes: &[u8]) -> Result<TensorHeader> {
    let truncated = |expected: u64| Error::Truncated {
        path: path.to_path_buf(),
        expected,
        actual: bytes.len() as u64,
        deficit: expected.saturating_sub(bytes.len() as u64),
    };
    if bytes.len() < 10 {
        if bytes.len() >= 4 && bytes[..4] != MAGIC {
            return Err(Error::BadMagic {
                path: path.to_path_buf(),
                found: bytes[..4].try_into().unwrap(),
            });
        }
        return Err(truncated(10));
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            found: magic,
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let dtype = DType::from_code(bytes[8]).ok_or(Error::UnsupportedDtype {
        path: path.to_path_buf(),
        code: bytes[8],
    })?;
    let ndim = bytes[9] as usize;
    if ndim == 0 {
        return Err(Error::invalid(format!("{}: ndim must be ≥ 1", path.display())));
    }
    let dims_end = 10 + 8 * ndim;
    if bytes.len() < dims_end {
        return Err(truncated(dims_end as u64));
    }
    let shape = bytes[10..dims_end]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    Ok(TensorHeader {
        version,
        dtype,
        shape,
    })
}

/// Read only the header of a tensor file, validating the total file size.
pub fn read_tensor_header(path: impl AsRef<Path>) -> Result<TensorHeader> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let file_len = file.metadata().map_err(|e| Error::io(path, e))?.len();
    let mut head = Vec::with_capacity(10 + 8 * 8);
    file.take(10 + 8 * 255)
        .read_to_end(&mut head)
        .map_err(|e| Error::io(path, e))?;
    let header = parse_header(path, &head)?;
    check_len(path, &header, file_len)?;
    Ok(header)
}

fn check_len(path: &Path, header: &TensorHeader, actual: u64) -> Result<()> {
    let expected = header.header_len() + header.payload_len();
    if actual < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            actual,
            deficit: expected - actual,
        });
    }
    if actual > expected {
        return Err(Error::TrailingBytes {
            path: path.to_path_buf(),
            expected,
            actual,
        });
    }
    Ok(())
}

/// Read a tensor file written by [`write_tensor`].
pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    let header = parse_header(path, &bytes)?;
    check_len(path, &header, bytes.len() as u64)?;
    let payload = &bytes[header.header_len() as usize..];
    let values: Vec<f64> = match header.dtype {
        DType::Float32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        DType::Float64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    let data = ArrayD::from_shape_vec(IxDyn(&header.shape), values)
        .map_err(|e| Error::shape(e.to_string()))?;
    Ok(Tensor {
        dtype: header.dtype,
        data,
    })
}

pub fn read_array1(path: impl AsRef<Path>) -> Result<Array1<f64>> {
    read_tensor(path)?.into_array1()
}

pub fn read_array2(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    read_tensor(path)?.into_array2()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr2, Array0};

    #[test]
    fn small_float32_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.vxt");
        let a = arr2(&[[1.0, 2.0], [3.0, 4.0]]);
        write_tensor(&a.view(), DType::Float32, &p).unwrap();
        let t = read_tensor(&p).unwrap();
        assert_eq!(t.dtype, DType::Float32);
        assert_eq!(t.shape(), &[2, 2]);
        assert_eq!(t.data.len(), 4);
        assert_eq!(t.into_array2().unwrap(), a);
        // 4 magic + 4 version + 2 + 2*8 dims + 4*4 payload
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 4 + 4 + 2 + 16 + 16);
    }

    #[test]
    fn zero_dim_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let a = Array0::from_elem((), 1.0);
        let err = write_tensor(&a.view(), DType::Float64, dir.path().join("z.vxt")).unwrap_err();
        assert!(err.to_string().contains("ndim must be ≥ 1"), "{err}");
    }

    #[test]
    fn byte_layout_is_fixed() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.vxt");
        let a = ndarray::arr1(&[1.5f64]);
        write_f64(&a.view(), &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let mut expected = b"VXT1".to_vec();
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&[2, 1]);
        expected.extend_from_slice(&1u64.to_le_bytes());
        expected.extend_from_slice(&1.5f64.to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.vxt");
        write_f64(&ndarray::arr1(&[1.0, 2.0]).view(), &p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[..4].copy_from_slice(b"XXXX");
        std::fs::write(&p, bytes).unwrap();
        let err = read_tensor(&p).unwrap_err();
        assert!(matches!(err, Error::BadMagic { .. }));
        assert!(err.to_string().contains("bad magic"));
    }

    #[test]
    fn truncation_reports_deficit() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.vxt");
        write_f64(&ndarray::arr1(&[1.0, 2.0, 3.0]).view(), &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let full = bytes.len() as u64;
        std::fs::write(&p, &bytes[..bytes.len() - 1]).unwrap();
        match read_tensor(&p).unwrap_err() {
            Error::Truncated {
                expected,
                actual,
                deficit,
                ..
            } => {
                assert_eq!(expected, full);
                assert_eq!(actual, full - 1);
                assert_eq!(deficit, 1);
            }
            other => panic!("unexpected {other}"),
        }
        assert!(read_tensor_header(&p).is_err());
    }

    #[test]
    fn unsupported_version() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.vxt");
        write_f64(&ndarray::arr1(&[1.0]).view(), &p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[4..8].copy_from_slice(&7u32.to_le_bytes());
        std::fs::write(&p, bytes).unwrap();
        assert!(matches!(
            read_tensor(&p).unwrap_err(),
            Error::UnsupportedVersion { version: 7, .. }
        ));
    }

    #[test]
    fn non_contiguous_views_written_in_logical_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("tr.vxt");
        let a = arr2(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        write_f64(&a.t(), &p).unwrap();
        assert_eq!(read_array2(&p).unwrap(), a.t().to_owned());
    }
}
