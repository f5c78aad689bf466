//! Raw little-endian `f32` tensor files, row-major, no header.

use std::fs;
use std::path::Path;

use crate::autodiff::Mat;
use crate::error::{Result, StagError};

pub fn read_f32(path: &Path) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| StagError::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(StagError::parse(
            path.display().to_string(),
            format!("{} bytes is not a whole number of f32 values", bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn write_f32(path: &Path, values: impl IntoIterator<Item = f32>) -> Result<()> {
    let bytes: Vec<u8> = values.into_iter().flat_map(f32::to_le_bytes).collect();
    fs::write(path, bytes).map_err(|e| StagError::io(path, e))
}

/// Reads a `rows × cols` matrix, failing unless the file holds exactly
/// `rows · cols` values.
pub fn read_matrix(path: &Path, rows: usize, cols: usize) -> Result<Mat> {
    let len = fs::metadata(path).map_err(|e| StagError::io(path, e))?.len() as usize;
    let expected = rows * cols * 4;
    if len != expected {
        return Err(StagError::dims(
            format!("{} (bytes for {rows} × {cols} f32)", path.display()),
            expected,
            len,
        ));
    }
    let data = read_f32(path)?;
    let values: Vec<f64> = data.into_iter().map(f64::from).collect();
    Ok(Mat::from_shape_vec((rows, cols), values).expect("length checked above"))
}

pub fn write_matrix(path: &Path, m: &Mat) -> Result<()> {
    write_f32(path, m.iter().map(|&x| x as f32))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| StagError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| StagError::parse(path.display().to_string(), e))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| StagError::parse(path.display().to_string(), e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| StagError::io(path, e))
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| StagError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trip_and_size_check() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.f32");
        let m = Mat::from_shape_fn((2, 3), |(i, j)| (i * 3 + j) as f64 * 0.5);
        write_matrix(&p, &m).unwrap();
        assert_eq!(read_matrix(&p, 2, 3).unwrap(), m);
        assert!(matches!(
            read_matrix(&p, 3, 3),
            Err(StagError::DimensionMismatch { .. })
        ));
    }
}
