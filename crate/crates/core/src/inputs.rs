//! Seeded synthetic attention inputs.
//!
//! `Q`, `K` and `V` are drawn in that order, row-major, from a standard normal
//! distribution driven by `ChaCha8Rng::seed_from_u64(seed)`, so the same seed
//! produces the same tensors on every platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionInputs {
    pub q: Matrix<f32>,
    pub k: Matrix<f32>,
    pub v: Matrix<f32>,
}

impl AttentionInputs {
    pub fn gaussian(len: usize, dim: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            q: gaussian_matrix(len, dim, &mut rng)?,
            k: gaussian_matrix(len, dim, &mut rng)?,
            v: gaussian_matrix(len, dim, &mut rng)?,
        })
    }

    pub fn len(&self) -> usize {
        self.q.rows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.q.cols()
    }
}

pub fn gaussian_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Result<Matrix<f32>> {
    let data = (0..rows * cols)
        .map(|_| rng.sample::<f32, _>(StandardNormal))
        .collect();
    Ok(Matrix::from_vec(rows, cols, data)?)
}
