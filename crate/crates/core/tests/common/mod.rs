//! Brute-force oracles shared by the integration suites. Nothing here calls
//! into the kernels it is used to check.
#![allow(dead_code)]

use intattention::{ExpLut, Matrix};
use rand::Rng;

/// `a · bᵀ` with i64 accumulation, plain triple loop.
pub fn naive_gemm_nt_i64(a: &[i64], b: &[i64], m: usize, n: usize, k: usize) -> Vec<i64> {
    let mut out = vec![0i64; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0i64;
            for t in 0..k {
                s += a[i * k + t] * b[j * k + t];
            }
            out[i * n + j] = s;
        }
    }
    out
}

/// `a · b` (not transposed) with i64 accumulation.
pub fn naive_gemm_nn_i64(a: &[i64], b: &[i64], m: usize, k: usize, n: usize) -> Vec<i64> {
    let mut out = vec![0i64; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0i64;
            for t in 0..k {
                s += a[i * k + t] * b[t * n + j];
            }
            out[i * n + j] = s;
        }
    }
    out
}

/// The textbook definition of one IndexSoftmax row, written with i128
/// arithmetic and plain `/`. Returns `(E, P)`.
pub fn oracle_index_softmax_row(
    row: &[i32],
    c_int: i64,
    lut: &ExpLut,
    scale: i128,
) -> (Vec<i128>, Vec<i128>) {
    let n = (lut.entries().len() - 1) as i128;
    let c = c_int as i128;
    let max = *row.iter().max().unwrap() as i128;
    let e: Vec<i128> = row
        .iter()
        .map(|&a| {
            let delta = (max - a as i128).min(c);
            // round half away for a non-negative quotient
            let idx = (2 * delta * n + c) / (2 * c);
            lut.entries()[idx as usize] as i128
        })
        .collect();
    let s: i128 = e.iter().sum();
    let p = e.iter().map(|&x| (2 * scale * x + s) / (2 * s)).collect();
    (e, p)
}

pub fn random_i8(rng: &mut impl Rng, len: usize) -> Vec<i8> {
    (0..len).map(|_| rng.random_range(-127i8..=127)).collect()
}

pub fn random_u8(rng: &mut impl Rng, len: usize) -> Vec<u8> {
    (0..len).map(|_| rng.random::<u8>()).collect()
}

pub fn widen<E>(m: &Matrix<E>) -> Vec<i64>
where
    E: intattention::tensor::Element + Into<i64>,
{
    m.data().iter().map(|&x| x.into()).collect()
}

/// A logit row with a realistic spread: most entries within a few clip
/// distances of the maximum, some ties, and occasional extreme outliers.
pub fn random_logit_row(rng: &mut impl Rng, len: usize, c_int: i32) -> Vec<i32> {
    let spread = (c_int as i64 * 3).min(i32::MAX as i64 / 4) as i32;
    let mut row: Vec<i32> = (0..len)
        .map(|_| match rng.random_range(0..20) {
            0 => rng.random_range(-(1 << 30)..(1 << 30)),
            _ => rng.random_range(-spread..=spread),
        })
        .collect();
    if len > 2 {
        let a = rng.random_range(0..len);
        let b = rng.random_range(0..len);
        row[a] = row[b];
    }
    row
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}
