//! IndexSoftmax: softmax over integer logits without any floating point on
//! the per-element path.
//!
//! For every row of integer logits `Â`:
//!
//! 1. `Δ = rowmax(Â) - Â` (non-negative distances from the row maximum),
//! 2. `Δ' = min(Δ, c_int)` with `c_int = round(c / alpha)`,
//! 3. `idx = round(Δ' * (2^b - 1) / c_int)`,
//! 4. `E = LUT[idx]` where `LUT[i] = round(255 * exp(-c * i / (2^b - 1)))` and
//!    the last entry is forced to zero,
//! 5. `P = round(scale * E / ΣE)` with `scale = 255` (UINT8 output).
//!
//! `E` takes at most `2^b` distinct values per row, so step 5 builds a per-row
//! table of `2^b` integer quotients and the normalization becomes a second
//! gather. The index division uses [`ExactDivisor`], which is bit-identical to
//! integer division.

use crate::error::{Error, Result};
use crate::fixed::{div_round_half_away, round_half_away, ExactDivisor};
use crate::gemm::LogitMatrix;
use crate::parallel::for_each_row_block;
use crate::tensor::Matrix;

pub const MIN_LUT_BITS: u32 = 2;
pub const MAX_LUT_BITS: u32 = 8;
pub const DEFAULT_LUT_BITS: u32 = 5;
pub const DEFAULT_CLIP: f32 = 6.6;

/// Fixed-point fraction bits used to bring groups onto a common logit scale.
pub const COMMON_SCALE_BITS: u32 = 24;

/// Storage format and fixed scale of the probability matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum PFormat {
    /// Unsigned 8-bit, probabilities scaled by 255.
    #[default]
    Uint8x255,
    /// Signed 8-bit convention, probabilities scaled by 127 (values stay in `0..=127`).
    Int8x127,
}

impl PFormat {
    pub fn scale(self) -> u32 {
        match self {
            PFormat::Uint8x255 => 255,
            PFormat::Int8x127 => 127,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PFormat::Uint8x255 => "uint8x255",
            PFormat::Int8x127 => "int8x127",
        }
    }
}

/// Quantized table of `exp(-x)` sampled at `2^b` points over `[0, c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpLut {
    bits: u32,
    clip: f32,
    entries: Vec<u8>,
}

impl ExpLut {
    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn clip(&self) -> f32 {
        self.clip
    }

    pub fn entries(&self) -> &[u8] {
        &self.entries
    }

    /// Index of the last (always zero) entry, `2^b - 1`.
    pub fn last_index(&self) -> u32 {
        (1 << self.bits) - 1
    }
}

pub fn build_lut(bits: u32, clip: f32) -> Result<ExpLut> {
    if !(MIN_LUT_BITS..=MAX_LUT_BITS).contains(&bits) {
        return Err(Error::InvalidParameter(format!(
            "LUT bits {bits} outside {MIN_LUT_BITS}..={MAX_LUT_BITS}"
        )));
    }
    if !(clip.is_finite() && clip > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "clip bound {clip} must be finite and positive"
        )));
    }
    let last = (1usize << bits) - 1;
    let mut entries: Vec<u8> = (0..last)
        .map(|i| round_half_away(255.0 * (-(clip as f64) * i as f64 / last as f64).exp()) as u8)
        .collect();
    entries.push(0);
    Ok(ExpLut {
        bits,
        clip,
        entries,
    })
}

/// Integer image `c_int` of the continuous clip bound, always at least 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ClipThreshold(i32);

impl ClipThreshold {
    pub fn new(c_int: i32) -> Result<Self> {
        if c_int < 1 {
            return Err(Error::InvalidParameter(format!(
                "c_int {c_int} must be at least 1"
            )));
        }
        Ok(Self(c_int))
    }

    /// `max(1, round(c / alpha))`.
    pub fn from_alpha(clip: f32, alpha: f32) -> Result<Self> {
        check_positive("c", clip)?;
        check_positive("alpha", alpha)?;
        Ok(Self::from_ratio(clip as f64 / alpha as f64))
    }

    fn from_ratio(ratio: f64) -> Self {
        // saturates at i32::MAX for degenerate (near-zero) scales
        Self(round_half_away(ratio).clamp(1.0, i32::MAX as f64) as i32)
    }

    pub fn value(self) -> i32 {
        self.0
    }
}

/// `max(1, round(c · √d / (s_q · s_k)))`.
pub fn compute_c_int(clip: f32, d: usize, s_q: f32, s_k: f32) -> Result<ClipThreshold> {
    check_positive("c", clip)?;
    check_positive("s_q", s_q)?;
    check_positive("s_k", s_k)?;
    if d == 0 {
        return Err(Error::InvalidParameter(
            "head dimension must be positive".into(),
        ));
    }
    Ok(ClipThreshold::from_ratio(
        clip as f64 * (d as f64).sqrt() / (s_q as f64 * s_k as f64),
    ))
}

fn check_positive(name: &str, v: f32) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "{name} = {v} must be finite and positive"
        )))
    }
}

/// Boolean attention mask; `true` marks a position that may be attended.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    allowed: Vec<bool>,
}

impl Mask {
    pub fn new(rows: usize, cols: usize, allowed: Vec<bool>) -> Result<Self> {
        if allowed.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "mask data length {} does not match {rows}x{cols}",
                allowed.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            allowed,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let allowed = (0..rows)
            .flat_map(|i| (0..cols).map(move |j| (i, j)))
            .map(|(i, j)| f(i, j))
            .collect();
        Self {
            rows,
            cols,
            allowed,
        }
    }

    /// Lower-triangular mask for autoregressive prefill.
    pub fn causal(len: usize) -> Self {
        Self::from_fn(len, len, |i, j| j <= i)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.allowed[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_allowed(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.cols + j]
    }

    pub(crate) fn check_shape(&self, rows: usize, cols: usize) -> Result<()> {
        if (self.rows, self.cols) != (rows, cols) {
            return Err(Error::DimensionMismatch(format!(
                "mask is {}x{} but logits are {rows}x{cols}",
                self.rows, self.cols
            )));
        }
        Ok(())
    }
}

/// 8-bit attention probabilities with implicit scale `1 / format.scale()`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMatrix {
    values: Matrix<u8>,
    format: PFormat,
}

impl ProbMatrix {
    pub fn values(&self) -> &Matrix<u8> {
        &self.values
    }

    pub fn format(&self) -> PFormat {
        self.format
    }

    pub fn denom_scale(&self) -> u32 {
        self.format.scale()
    }

    /// Dequantized probabilities `P̂ / scale`.
    pub fn to_real(&self) -> Matrix<f32> {
        let s = self.format.scale() as f32;
        self.values.map(|v| v as f32 / s)
    }

    pub fn into_values(self) -> Matrix<u8> {
        self.values
    }
}

/// Requantizes real probabilities in `[0, 1]` to the given 8-bit format.
pub fn quantize_probabilities(p: &Matrix<f32>, format: PFormat) -> ProbMatrix {
    let s = format.scale() as f64;
    let values = p.map(|x| round_half_away(x as f64 * s).clamp(0.0, s) as u8);
    ProbMatrix { values, format }
}

#[derive(Debug, Clone, Copy)]
pub struct SoftmaxOptions<'a> {
    pub mask: Option<&'a Mask>,
    pub format: PFormat,
    pub threads: usize,
}

impl Default for SoftmaxOptions<'_> {
    fn default() -> Self {
        Self {
            mask: None,
            format: PFormat::Uint8x255,
            threads: 1,
        }
    }
}

/// `round(Δ' · (2^b - 1) / c_int)` for `0 <= Δ' <= c_int`.
#[derive(Debug, Clone, Copy)]
struct IndexMap {
    c_int: u64,
    last: u64,
    div: ExactDivisor,
}

impl IndexMap {
    fn new(c_int: ClipThreshold, lut: &ExpLut) -> Self {
        let c_int = c_int.value() as u64;
        Self {
            c_int,
            last: lut.last_index() as u64,
            div: ExactDivisor::new(2 * c_int),
        }
    }

    /// Clips a distance and maps it to a LUT index.
    #[inline(always)]
    fn index(&self, delta: u64) -> u8 {
        let clipped = delta.min(self.c_int);
        // numerator < 2 * 2^31 * 255 + 2^31 < 2^41
        self.div.div(2 * clipped * self.last + self.c_int) as u8
    }
}

/// Per-tensor IndexSoftmax with default options (no mask, UINT8, one thread).
pub fn index_softmax(logits: &LogitMatrix, c_int: ClipThreshold, lut: &ExpLut) -> ProbMatrix {
    index_softmax_with(logits.values(), c_int, lut, &SoftmaxOptions::default())
        .expect("no mask supplied, so shapes cannot disagree")
}

pub fn index_softmax_with(
    logits: &Matrix<i32>,
    c_int: ClipThreshold,
    lut: &ExpLut,
    opts: &SoftmaxOptions<'_>,
) -> Result<ProbMatrix> {
    let (rows, cols) = logits.shape();
    if let Some(mask) = opts.mask {
        mask.check_shape(rows, cols)?;
    }
    let map = IndexMap::new(c_int, lut);
    let scale = opts.format.scale();
    let mut out = vec![0u8; rows * cols];
    for_each_row_block(&mut out, cols, opts.threads, |first, block| {
        let mut scratch = RowScratch::new(cols, lut);
        for (r, out_row) in block.chunks_exact_mut(cols).enumerate() {
            let i = first + r;
            let row = logits.row(i);
            match opts.mask {
                None => {
                    let max = *row.iter().max().expect("rows are non-empty");
                    for (slot, &a) in scratch.idx.iter_mut().zip(row) {
                        *slot = map.index((max as i64 - a as i64) as u64);
                    }
                }
                Some(mask) => {
                    let allowed = mask.row(i);
                    let Some(max) = masked_max(row, allowed) else {
                        out_row.fill(0);
                        continue;
                    };
                    let zero = map.last as u8;
                    for ((slot, &a), &ok) in scratch.idx.iter_mut().zip(row).zip(allowed) {
                        *slot = if ok {
                            map.index((max as i64 - a as i64) as u64)
                        } else {
                            zero
                        };
                    }
                }
            }
            scratch.normalize(lut, scale, out_row);
        }
    });
    Ok(ProbMatrix {
        values: Matrix::from_parts(rows, cols, out),
        format: opts.format,
    })
}

fn masked_max(row: &[i32], allowed: &[bool]) -> Option<i32> {
    row.iter()
        .zip(allowed)
        .filter(|(_, &ok)| ok)
        .map(|(&a, _)| a)
        .max()
}

/// Per-thread buffers: LUT indices of the current row and the quotient table.
struct RowScratch {
    idx: Vec<u8>,
    table: Vec<u8>,
}

impl RowScratch {
    fn new(cols: usize, lut: &ExpLut) -> Self {
        Self {
            idx: vec![0; cols],
            table: vec![0; lut.entries.len()],
        }
    }

    /// Gathers `E`, accumulates `S = ΣE` and writes `round(scale · E / S)`.
    fn normalize(&mut self, lut: &ExpLut, scale: u32, out: &mut [u8]) {
        let entries = &lut.entries;
        let sum: u32 = self.idx.iter().map(|&k| entries[k as usize] as u32).sum();
        if sum == 0 {
            out.fill(0);
            return;
        }
        for (t, &e) in self.table.iter_mut().zip(entries) {
            *t = div_round_half_away((scale * e as u32) as u64, sum as u64) as u8;
        }
        for (o, &k) in out.iter_mut().zip(&self.idx) {
            *o = self.table[k as usize];
        }
    }
}

/// How the grouped variant measures distances when groups carry different scales.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GroupedRowMax {
    /// Each group subtracts its own row maximum and clips with its own `c_int`.
    #[default]
    PerGroup,
    /// Logits are rescaled to the coarsest group scale in fixed point, then a
    /// single row maximum is subtracted.
    CommonScale,
}

#[derive(Debug, Clone, Copy)]
pub struct GroupedOptions<'a> {
    pub row_max: GroupedRowMax,
    pub mask: Option<&'a Mask>,
    pub format: PFormat,
    pub threads: usize,
}

impl Default for GroupedOptions<'_> {
    fn default() -> Self {
        Self {
            row_max: GroupedRowMax::PerGroup,
            mask: None,
            format: PFormat::Uint8x255,
            threads: 1,
        }
    }
}

/// Column grouping with the per-group clip thresholds derived from `alphas`.
#[derive(Debug, Clone)]
pub(crate) struct GroupPlan {
    group_of_column: Vec<usize>,
    maps: Vec<IndexMap>,
    multipliers: Vec<i64>,
    common_c: u64,
    last: u64,
}

impl GroupPlan {
    pub(crate) fn new(
        group_of_column: &[usize],
        alphas: &[f32],
        clip: f32,
        lut: &ExpLut,
    ) -> Result<Self> {
        if alphas.is_empty() {
            return Err(Error::InvalidParameter(
                "at least one group alpha is required".into(),
            ));
        }
        if let Some((j, g)) = group_of_column
            .iter()
            .enumerate()
            .find(|(_, &g)| g >= alphas.len())
        {
            return Err(Error::InvalidParameter(format!(
                "column {j} assigned to group {g}, but only {} groups have an alpha",
                alphas.len()
            )));
        }
        let c_ints = alphas
            .iter()
            .map(|&a| ClipThreshold::from_alpha(clip, a))
            .collect::<Result<Vec<_>>>()?;
        let alpha_ref = alphas.iter().copied().fold(f32::MIN, f32::max) as f64;
        let one = 1i64 << COMMON_SCALE_BITS;
        let multipliers = alphas
            .iter()
            .map(|&a| round_half_away(a as f64 / alpha_ref * one as f64) as i64)
            .collect();
        let common_c = (ClipThreshold::from_alpha(clip, alpha_ref as f32)?.value() as u64)
            << COMMON_SCALE_BITS;
        Ok(Self {
            group_of_column: group_of_column.to_vec(),
            maps: c_ints.iter().map(|&c| IndexMap::new(c, lut)).collect(),
            multipliers,
            common_c,
            last: lut.last_index() as u64,
        })
    }

    fn fill_indices(
        &self,
        row: &[i32],
        allowed: Option<&[bool]>,
        mode: GroupedRowMax,
        idx: &mut [u8],
    ) -> bool {
        let ok = |j: usize| allowed.is_none_or(|m| m[j]);
        let zero = self.last as u8;
        match mode {
            GroupedRowMax::PerGroup => {
                let mut maxima: Vec<Option<i32>> = vec![None; self.maps.len()];
                for (j, (&a, &g)) in row.iter().zip(&self.group_of_column).enumerate() {
                    if ok(j) {
                        maxima[g] = Some(maxima[g].map_or(a, |m| m.max(a)));
                    }
                }
                if maxima.iter().all(Option::is_none) {
                    return false;
                }
                for (j, ((slot, &a), &g)) in idx
                    .iter_mut()
                    .zip(row)
                    .zip(&self.group_of_column)
                    .enumerate()
                {
                    *slot = match (ok(j), maxima[g]) {
                        (true, Some(m)) => self.maps[g].index((m as i64 - a as i64) as u64),
                        _ => zero,
                    };
                }
            }
            GroupedRowMax::CommonScale => {
                let scaled = |j: usize| row[j] as i64 * self.multipliers[self.group_of_column[j]];
                let Some(max) = (0..row.len()).filter(|&j| ok(j)).map(scaled).max() else {
                    return false;
                };
                let c = self.common_c as u128;
                for (j, slot) in idx.iter_mut().enumerate() {
                    *slot = if ok(j) {
                        let clipped = ((max - scaled(j)) as u128).min(c);
                        ((2 * clipped * self.last as u128 + c) / (2 * c)) as u8
                    } else {
                        zero
                    };
                }
            }
        }
        true
    }
}

/// IndexSoftmax where columns belong to quantization groups with their own
/// logit scale `alphas[g]`; each group clips with `c_int^(g) = max(1, round(c / alpha^(g)))`.
pub fn index_softmax_grouped(
    logits: &Matrix<i32>,
    group_of_column: &[usize],
    alphas: &[f32],
    clip: f32,
    lut: &ExpLut,
) -> Result<ProbMatrix> {
    index_softmax_grouped_with(
        logits,
        group_of_column,
        alphas,
        clip,
        lut,
        &GroupedOptions::default(),
    )
}

pub fn index_softmax_grouped_with(
    logits: &Matrix<i32>,
    group_of_column: &[usize],
    alphas: &[f32],
    clip: f32,
    lut: &ExpLut,
    opts: &GroupedOptions<'_>,
) -> Result<ProbMatrix> {
    if group_of_column.len() != logits.cols() {
        return Err(Error::InvalidParameter(format!(
            "{} of {} columns have a group assignment",
            group_of_column.len(),
            logits.cols()
        )));
    }
    let plan = GroupPlan::new(group_of_column, alphas, clip, lut)?;
    grouped_by_row_blocks(
        logits,
        logits.rows(),
        std::slice::from_ref(&plan),
        lut,
        opts,
    )
}

/// Runs grouped IndexSoftmax where rows `[k * rows_per_plan, (k + 1) * rows_per_plan)`
/// use `plans[k]`.
pub(crate) fn grouped_by_row_blocks(
    logits: &Matrix<i32>,
    rows_per_plan: usize,
    plans: &[GroupPlan],
    lut: &ExpLut,
    opts: &GroupedOptions<'_>,
) -> Result<ProbMatrix> {
    let (rows, cols) = logits.shape();
    if let Some(mask) = opts.mask {
        mask.check_shape(rows, cols)?;
    }
    debug_assert_eq!(plans.len() * rows_per_plan, rows);
    let scale = opts.format.scale();
    let mut out = vec![0u8; rows * cols];
    for_each_row_block(&mut out, cols, opts.threads, |first, block| {
        let mut scratch = RowScratch::new(cols, lut);
        for (r, out_row) in block.chunks_exact_mut(cols).enumerate() {
            let i = first + r;
            let plan = &plans[i / rows_per_plan];
            let allowed = opts.mask.map(|m| m.row(i));
            if plan.fill_indices(logits.row(i), allowed, opts.row_max, &mut scratch.idx) {
                scratch.normalize(lut, scale, out_row);
            } else {
                out_row.fill(0);
            }
        }
    });
    Ok(ProbMatrix {
        values: Matrix::from_parts(rows, cols, out),
        format: opts.format,
    })
}
