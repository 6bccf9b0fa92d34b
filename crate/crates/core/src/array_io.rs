//! The MCTA array container.
//!
//! Layout, all integers little-endian:
//!
//! | bytes | field |
//! |-------|-------|
//! | 4 | magic `b"MCTA"` |
//! | 1 | version (1) |
//! | 1 | dtype code (1 = f64) |
//! | 1 | rank |
//! | 8·rank | dims as u64 |
//! | 8·∏dims | row-major f64 payload |

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayD, IxDyn};

use crate::error::{Error, FormatError, Result};

pub const MAGIC: [u8; 4] = *b"MCTA";
pub const VERSION: u8 = 1;
pub const DTYPE_F64: u8 = 1;

fn check_dims(dims: &[usize]) -> Result<(), FormatError> {
    if dims.is_empty() || dims.contains(&0) {
        return Err(FormatError::Degenerate(dims.to_vec()));
    }
    Ok(())
}

pub fn encode(dims: &[usize], data: &[f64]) -> Result<Vec<u8>, FormatError> {
    check_dims(dims)?;
    if dims.len() > u8::MAX as usize {
        return Err(FormatError::Degenerate(dims.to_vec()));
    }
    let count: usize = dims.iter().product();
    if count != data.len() {
        return Err(FormatError::ShapeMismatch {
            expected: dims.to_vec(),
            got: vec![data.len()],
        });
    }
    let mut out = Vec::with_capacity(7 + 8 * dims.len() + 8 * count);
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(DTYPE_F64);
    out.push(dims.len() as u8);
    for &d in dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &'static str) -> Result<&'a [u8], FormatError> {
    if bytes.len() < n {
        return Err(FormatError::Truncated {
            what,
            need: n,
            have: bytes.len(),
        });
    }
    let (head, tail) = bytes.split_at(n);
    *bytes = tail;
    Ok(head)
}

pub fn decode(mut bytes: &[u8]) -> Result<ArrayD<f64>, FormatError> {
    let magic = take(&mut bytes, 4, "magic")?;
    if magic != MAGIC {
        return Err(FormatError::BadMagic(magic.try_into().unwrap()));
    }
    let head = take(&mut bytes, 3, "header")?;
    let (version, dtype, rank) = (head[0], head[1], head[2] as usize);
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    if dtype != DTYPE_F64 {
        return Err(FormatError::UnknownDtype(dtype));
    }
    let raw_dims = take(&mut bytes, 8 * rank, "dims")?;
    let dims: Vec<usize> = raw_dims
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    check_dims(&dims)?;
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|c| c.checked_mul(8))
        .ok_or_else(|| FormatError::Degenerate(dims.clone()))?;
    let payload = take(&mut bytes, count, "payload")?;
    if !bytes.is_empty() {
        return Err(FormatError::TrailingBytes(bytes.len()));
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(ArrayD::from_shape_vec(IxDyn(&dims), data).expect("count checked above"))
}

/// Write `bytes` to a sibling temp file, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::Data(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    let result = fs::File::create(&tmp)
        .and_then(|mut f| {
            f.write_all(bytes)?;
            f.sync_all()
        })
        .and_then(|_| fs::rename(&tmp, path));
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

pub fn save_array(path: &Path, array: &ArrayD<f64>) -> Result<()> {
    let data: Vec<f64> = array.iter().copied().collect();
    let bytes = encode(array.shape(), &data)?;
    write_atomic(path, &bytes)
}

pub fn save_matrix(path: &Path, matrix: &Array2<f64>) -> Result<()> {
    save_array(path, &matrix.clone().into_dyn())
}

pub fn load_array(path: &Path) -> Result<ArrayD<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode(&bytes)?)
}

/// Load a rank-2 array, optionally insisting on its shape.
pub fn load_matrix(path: &Path, expected: Option<(usize, usize)>) -> Result<Array2<f64>> {
    let array = load_array(path)?;
    let got = array.shape().to_vec();
    let matrix = array
        .into_dimensionality::<ndarray::Ix2>()
        .map_err(|_| FormatError::ShapeMismatch {
            expected: expected.map(|(r, c)| vec![r, c]).unwrap_or_default(),
            got: got.clone(),
        })?;
    if let Some((r, c)) = expected {
        if matrix.dim() != (r, c) {
            return Err(FormatError::ShapeMismatch {
                expected: vec![r, c],
                got,
            }
            .into());
        }
    }
    Ok(matrix)
}
