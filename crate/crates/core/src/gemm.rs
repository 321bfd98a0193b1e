//! Portable GEMM kernels for the two attention products.
//!
//! Both operands are row-major with the reduction dimension contiguous: the
//! right-hand operand is passed already transposed (`K` as `L x d`, and `V`
//! transposed inside [`gemm_pv`]). The integer kernel walks `MICROTILE_ROWS`
//! left-hand rows against one right-hand row at a time, so every loaded
//! right-hand element feeds four accumulators. Accumulation per output element
//! is a sequential sum, which keeps results independent of tiling and of the
//! thread count.

use crate::error::{Error, Result};
use crate::parallel::for_each_row_block;
use crate::quant::QuantizedMatrix;
use crate::tensor::Matrix;

/// Left-hand rows processed together by the integer microkernel.
pub const MICROTILE_ROWS: usize = 4;

/// Largest reduction length for which `d * 127^2` fits in an `i32` accumulator.
pub const MAX_QK_DEPTH: usize = 131_070;

/// Largest sequence length for which `L * 255 * 127` fits in an `i32` accumulator.
pub const MAX_PV_DEPTH: usize = 65_536;

/// Integer logits `Â = Q̂ K̂ᵀ` together with the factor `alpha` that maps
/// them back to real scaled logits (`A / √d ≈ alpha · Â`).
#[derive(Debug, Clone, PartialEq)]
pub struct LogitMatrix {
    values: Matrix<i32>,
    alpha: f32,
}

impl LogitMatrix {
    pub fn new(values: Matrix<i32>, alpha: f32) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha {alpha} must be finite and positive"
            )));
        }
        Ok(Self { values, alpha })
    }

    pub fn values(&self) -> &Matrix<i32> {
        &self.values
    }

    pub fn alpha(&self) -> f32 {
        self.alpha
    }

    pub fn into_values(self) -> Matrix<i32> {
        self.values
    }
}

/// `alpha = s_q * s_k / √d`.
pub fn logit_alpha(s_q: f32, s_k: f32, d: usize) -> f32 {
    (s_q as f64 * s_k as f64 / (d as f64).sqrt()) as f32
}

/// Integer logits for per-tensor quantized `Q̂` and `K̂` (both `L x d`).
pub fn gemm_qk(
    qhat: &QuantizedMatrix,
    khat: &QuantizedMatrix,
    threads: usize,
) -> Result<LogitMatrix> {
    let s_q = qhat.tensor_scale()?;
    let s_k = khat.tensor_scale()?;
    let values = gemm_qk_values(qhat.values(), khat.values(), threads)?;
    LogitMatrix::new(values, logit_alpha(s_q, s_k, qhat.shape().1))
}

/// Scale-free `Q̂ K̂ᵀ`; used directly by grouped quantization, where the
/// per-element scale is not a single `alpha`.
pub fn gemm_qk_values(q: &Matrix<i8>, k: &Matrix<i8>, threads: usize) -> Result<Matrix<i32>> {
    if q.cols() != k.cols() {
        return Err(Error::DimensionMismatch(format!(
            "Q is {}x{} but K is {}x{}",
            q.rows(),
            q.cols(),
            k.rows(),
            k.cols()
        )));
    }
    if q.cols() > MAX_QK_DEPTH {
        return Err(Error::AccumulatorBound(format!(
            "head dimension {} exceeds {MAX_QK_DEPTH}",
            q.cols()
        )));
    }
    Ok(int_gemm_nt(q, k, threads))
}

/// `P̂ V̂` with `P̂` as `M x L` unsigned probabilities and `V̂` as `L x d`.
/// The output scale (`s_V / 255` or `s_V / 127`) is applied by the caller.
pub fn gemm_pv(phat: &Matrix<u8>, vhat: &QuantizedMatrix, threads: usize) -> Result<Matrix<i32>> {
    let v = vhat.values();
    if phat.cols() != v.rows() {
        return Err(Error::DimensionMismatch(format!(
            "P is {}x{} but V is {}x{}",
            phat.rows(),
            phat.cols(),
            v.rows(),
            v.cols()
        )));
    }
    if phat.cols() > MAX_PV_DEPTH {
        return Err(Error::AccumulatorBound(format!(
            "sequence length {} exceeds {MAX_PV_DEPTH}",
            phat.cols()
        )));
    }
    Ok(int_gemm_nt(phat, &v.transpose(), threads))
}

/// `a · bᵀ` in real arithmetic with f64 accumulation; reference paths only.
pub fn gemm_real(
    a: &Matrix<f32>,
    b_transposed: &Matrix<f32>,
    threads: usize,
) -> Result<Matrix<f32>> {
    if a.cols() != b_transposed.cols() {
        return Err(Error::DimensionMismatch(format!(
            "lhs is {}x{} but transposed rhs is {}x{}",
            a.rows(),
            a.cols(),
            b_transposed.rows(),
            b_transposed.cols()
        )));
    }
    let (m, n) = (a.rows(), b_transposed.rows());
    let mut out = vec![0.0f32; m * n];
    for_each_row_block(&mut out, n, threads, |first, block| {
        for (r, out_row) in block.chunks_exact_mut(n).enumerate() {
            let lhs = a.row(first + r);
            for (o, rhs) in out_row.iter_mut().zip(b_transposed.iter_rows()) {
                *o = dot_f64(lhs, rhs) as f32;
            }
        }
    });
    Ok(Matrix::from_parts(m, n, out))
}

#[inline]
pub(crate) fn dot_f64(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// `out[i][j] = Σ_t a[i][t] · b[j][t]` with exact i32 accumulation.
///
/// Every operand pair is 8-bit, so each product fits in an i16 (the extreme
/// is `255 · 127`); multiplying at that width lets the compiler use
/// multiply-add instructions. On x86-64 an AVX2 build of the same kernel is
/// selected at run time.
fn int_gemm_nt<A, B>(a: &Matrix<A>, b: &Matrix<B>, threads: usize) -> Matrix<i32>
where
    A: crate::tensor::Element + Into<i16>,
    B: crate::tensor::Element + Into<i16>,
{
    debug_assert_eq!(a.cols(), b.cols());
    let (m, n) = (a.rows(), b.rows());
    let mut out = vec![0i32; m * n];
    for_each_row_block(&mut out, n, threads, |first, block| {
        #[cfg(target_arch = "x86_64")]
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the CPU supports AVX2, checked just above.
            unsafe { row_block_avx2(a, b, first, block) };
            return;
        }
        row_block(a, b, first, block);
    });
    Matrix::from_parts(m, n, out)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
fn row_block_avx2<A, B>(a: &Matrix<A>, b: &Matrix<B>, first: usize, block: &mut [i32])
where
    A: crate::tensor::Element + Into<i16>,
    B: crate::tensor::Element + Into<i16>,
{
    row_block(a, b, first, block)
}

#[inline(always)]
fn row_block<A, B>(a: &Matrix<A>, b: &Matrix<B>, first: usize, block: &mut [i32])
where
    A: crate::tensor::Element + Into<i16>,
    B: crate::tensor::Element + Into<i16>,
{
    let n = b.rows();
    let rows = block.len() / n;
    let mut r = 0;
    while r + MICROTILE_ROWS <= rows {
        let lhs = [
            a.row(first + r),
            a.row(first + r + 1),
            a.row(first + r + 2),
            a.row(first + r + 3),
        ];
        let (o0, rest) = block[r * n..(r + MICROTILE_ROWS) * n].split_at_mut(n);
        let (o1, rest) = rest.split_at_mut(n);
        let (o2, o3) = rest.split_at_mut(n);
        for (j, rhs) in b.iter_rows().enumerate() {
            let [s0, s1, s2, s3] = dot4(lhs, rhs);
            o0[j] = s0;
            o1[j] = s1;
            o2[j] = s2;
            o3[j] = s3;
        }
        r += MICROTILE_ROWS;
    }
    for r in r..rows {
        let lhs = a.row(first + r);
        for (o, rhs) in block[r * n..(r + 1) * n].iter_mut().zip(b.iter_rows()) {
            *o = dot1(lhs, rhs);
        }
    }
}

#[inline(always)]
fn product<A: Into<i16>, B: Into<i16>>(x: A, y: B) -> i32 {
    (x.into() * y.into()) as i32
}

#[inline(always)]
fn dot4<A: Copy + Into<i16>, B: Copy + Into<i16>>(lhs: [&[A]; 4], rhs: &[B]) -> [i32; 4] {
    let k = rhs.len();
    let (a0, a1, a2, a3) = (&lhs[0][..k], &lhs[1][..k], &lhs[2][..k], &lhs[3][..k]);
    let (mut s0, mut s1, mut s2, mut s3) = (0i32, 0i32, 0i32, 0i32);
    for t in 0..k {
        s0 += product(a0[t], rhs[t]);
        s1 += product(a1[t], rhs[t]);
        s2 += product(a2[t], rhs[t]);
        s3 += product(a3[t], rhs[t]);
    }
    [s0, s1, s2, s3]
}

#[inline(always)]
fn dot1<A: Copy + Into<i16>, B: Copy + Into<i16>>(lhs: &[A], rhs: &[B]) -> i32 {
    lhs.iter().zip(rhs).map(|(&x, &y)| product(x, y)).sum()
}
