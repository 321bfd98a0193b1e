//! Error metrics between an approximate matrix and a reference.
//!
//! Cosine similarity is the mean of per-row cosines (attention rows are the
//! unit of comparison); relative L1 and RMSE are over the flattened tensors.
//! All accumulation is in f64.

use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FidelityReport {
    /// Mean over rows of `<a_i, b_i> / (|a_i| |b_i|)`.
    pub cos_sim: f64,
    /// `Σ|a - b| / Σ|b|`.
    pub rel_l1: f64,
    pub rmse: f64,
}

pub fn compare(a: &Matrix<f32>, b_ref: &Matrix<f32>) -> Result<FidelityReport> {
    if a.shape() != b_ref.shape() {
        return Err(Error::DimensionMismatch(format!(
            "compared {}x{} against reference {}x{}",
            a.rows(),
            a.cols(),
            b_ref.rows(),
            b_ref.cols()
        )));
    }
    let ref_l1: f64 = b_ref.data().iter().map(|&x| (x as f64).abs()).sum();
    if ref_l1 == 0.0 {
        return Err(Error::Domain(
            "reference is all zeros; relative L1 is undefined".into(),
        ));
    }

    let cos_sum: f64 = a
        .iter_rows()
        .zip(b_ref.iter_rows())
        .map(|(x, y)| row_cosine(x, y))
        .sum();
    let (mut abs_err, mut sq_err) = (0.0f64, 0.0f64);
    for (&x, &y) in a.data().iter().zip(b_ref.data()) {
        let diff = x as f64 - y as f64;
        abs_err += diff.abs();
        sq_err += diff * diff;
    }
    let n = a.data().len() as f64;
    Ok(FidelityReport {
        cos_sim: (cos_sum / a.rows() as f64).clamp(-1.0, 1.0),
        rel_l1: abs_err / ref_l1,
        rmse: (sq_err / n).sqrt(),
    })
}

/// Cosine of two rows; a pair of zero rows counts as identical, a single zero row as orthogonal.
fn row_cosine(x: &[f32], y: &[f32]) -> f64 {
    let (mut dot, mut nx, mut ny) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in x.iter().zip(y) {
        let (a, b) = (a as f64, b as f64);
        dot += a * b;
        nx += a * a;
        ny += b * b;
    }
    match (nx == 0.0, ny == 0.0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        (false, false) => (dot / (nx * ny).sqrt()).clamp(-1.0, 1.0),
    }
}
