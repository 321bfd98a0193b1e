//! End-to-end single-head attention pipelines with per-stage timings.
//!
//! * [`int_attention`]: INT8 `QKᵀ`, IndexSoftmax, UINT8 `PV`. Nothing between
//!   the two GEMMs touches a real value.
//! * [`quant_only_attention`]: the same INT8 GEMMs, but logits are
//!   dequantized, passed through an f32 safe softmax and requantized.
//! * [`reference_attention`]: exact scaled dot-product attention, f64 inside.
//! * [`fp16_attention`]: the reference run on inputs pre-rounded to half
//!   precision (an emulated FP16 baseline, not half arithmetic).
//!
//! Multi-head attention is a loop over heads on the caller's side.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use half::f16;

use crate::error::{Error, Result};
use crate::fidelity::{compare, FidelityReport};
use crate::gemm::{
    dot_f64, gemm_pv, gemm_qk, gemm_qk_values, logit_alpha, LogitMatrix, MAX_PV_DEPTH,
};
use crate::parallel::for_each_row_block;
use crate::quant::{quantize_symmetric, QuantGranularity, QuantizedMatrix};
use crate::softmax::{
    build_lut, compute_c_int, grouped_by_row_blocks, index_softmax_with, quantize_probabilities,
    GroupPlan, GroupedOptions, GroupedRowMax, Mask, PFormat, ProbMatrix, SoftmaxOptions,
    DEFAULT_CLIP, DEFAULT_LUT_BITS,
};
use crate::tensor::{Element, ElementKind, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionConfig {
    pub lut_bits: u32,
    pub clip: f32,
    pub p_format: PFormat,
    /// Applies to `Q` and `K`. `PerRowGroup` groups tokens into blocks; `V` is
    /// always quantized per tensor.
    pub granularity: QuantGranularity,
    pub grouped_row_max: GroupedRowMax,
    pub threads: usize,
    pub mask: Option<Mask>,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            lut_bits: DEFAULT_LUT_BITS,
            clip: DEFAULT_CLIP,
            p_format: PFormat::Uint8x255,
            granularity: QuantGranularity::PerTensor,
            grouped_row_max: GroupedRowMax::PerGroup,
            threads: 1,
            mask: None,
        }
    }
}

/// Wall-clock nanoseconds per stage of one attention call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StageTimings {
    pub quantize_ns: u64,
    pub qk_gemm_ns: u64,
    pub softmax_path_ns: u64,
    pub pv_gemm_ns: u64,
    pub dequantize_ns: u64,
    pub total_ns: u64,
}

impl StageTimings {
    pub fn stages(&self) -> [u64; 5] {
        [
            self.quantize_ns,
            self.qk_gemm_ns,
            self.softmax_path_ns,
            self.pv_gemm_ns,
            self.dequantize_ns,
        ]
    }

    pub fn stage_sum(&self) -> u64 {
        self.stages().iter().sum()
    }

    /// Fraction of the stage sum spent in each stage (all zero if nothing was timed).
    pub fn shares(&self) -> [f64; 5] {
        let sum = self.stage_sum() as f64;
        self.stages()
            .map(|s| if sum > 0.0 { s as f64 / sum } else { 0.0 })
    }
}

/// Floating-point operations of the two GEMMs only: `2·M·N·d + 2·M·N·d_v`.
pub fn gemm_flops(query_len: usize, key_len: usize, dim: usize, value_dim: usize) -> f64 {
    2.0 * query_len as f64 * key_len as f64 * (dim + value_dim) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Quantize,
    QkGemm,
    SoftmaxPath,
    PvGemm,
    Dequantize,
}

/// One operation executed by a pipeline, tagged with its element kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageEvent {
    pub stage: Stage,
    pub operation: &'static str,
    pub input: ElementKind,
    pub output: ElementKind,
}

/// Records the operations a pipeline executes, in order.
#[derive(Debug, Clone, Default)]
pub struct DataflowTrace {
    events: Vec<StageEvent>,
}

impl DataflowTrace {
    pub fn events(&self) -> &[StageEvent] {
        &self.events
    }

    /// Operations strictly after the last `QkGemm` event and before the first
    /// following `PvGemm` event.
    pub fn between_gemms(&self) -> &[StageEvent] {
        let start = self
            .events
            .iter()
            .rposition(|e| e.stage == Stage::QkGemm)
            .map_or(0, |p| p + 1);
        let end = self.events[start..]
            .iter()
            .position(|e| e.stage == Stage::PvGemm)
            .map_or(self.events.len(), |p| start + p);
        &self.events[start..end]
    }

    /// True when every operation between the two GEMMs consumes and produces integers.
    pub fn integer_only_between_gemms(&self) -> bool {
        self.between_gemms()
            .iter()
            .all(|e| e.input.is_integer() && e.output.is_integer())
    }
}

struct Recorder<'a> {
    trace: Option<&'a mut DataflowTrace>,
    timings: StageTimings,
    start: Instant,
    lap: Instant,
}

impl<'a> Recorder<'a> {
    fn new(trace: Option<&'a mut DataflowTrace>) -> Self {
        let now = Instant::now();
        Self {
            trace,
            timings: StageTimings::default(),
            start: now,
            lap: now,
        }
    }

    fn tag<I: Element, O: Element>(
        &mut self,
        stage: Stage,
        operation: &'static str,
        _: &Matrix<I>,
        _: &Matrix<O>,
    ) {
        if let Some(trace) = self.trace.as_deref_mut() {
            trace.events.push(StageEvent {
                stage,
                operation,
                input: I::KIND,
                output: O::KIND,
            });
        }
    }

    /// Charges the time since the previous lap to `stage`.
    fn lap(&mut self, stage: Stage) {
        let now = Instant::now();
        let ns = now.duration_since(self.lap).as_nanos() as u64;
        self.lap = now;
        let slot = match stage {
            Stage::Quantize => &mut self.timings.quantize_ns,
            Stage::QkGemm => &mut self.timings.qk_gemm_ns,
            Stage::SoftmaxPath => &mut self.timings.softmax_path_ns,
            Stage::PvGemm => &mut self.timings.pv_gemm_ns,
            Stage::Dequantize => &mut self.timings.dequantize_ns,
        };
        *slot += ns;
    }

    /// Restarts the lap clock without charging any stage.
    fn skip(&mut self) {
        self.lap = Instant::now();
    }

    fn finish(mut self) -> StageTimings {
        self.timings.total_ns = self.start.elapsed().as_nanos() as u64;
        self.timings
    }
}

fn check_shapes(
    q: &Matrix<f32>,
    k: &Matrix<f32>,
    v: &Matrix<f32>,
    mask: Option<&Mask>,
) -> Result<()> {
    if q.cols() != k.cols() {
        return Err(Error::DimensionMismatch(format!(
            "Q is {}x{} but K is {}x{}",
            q.rows(),
            q.cols(),
            k.rows(),
            k.cols()
        )));
    }
    if k.rows() != v.rows() {
        return Err(Error::DimensionMismatch(format!(
            "K has {} rows but V has {}",
            k.rows(),
            v.rows()
        )));
    }
    if k.rows() > MAX_PV_DEPTH {
        return Err(Error::AccumulatorBound(format!(
            "sequence length {} exceeds {MAX_PV_DEPTH}",
            k.rows()
        )));
    }
    if let Some(mask) = mask {
        mask.check_shape(q.rows(), k.rows())?;
    }
    Ok(())
}

struct QuantizedInputs {
    q: QuantizedMatrix,
    k: QuantizedMatrix,
    v: QuantizedMatrix,
}

fn quantize_inputs(
    q: &Matrix<f32>,
    k: &Matrix<f32>,
    v: &Matrix<f32>,
    cfg: &AttentionConfig,
    rec: &mut Recorder,
) -> Result<QuantizedInputs> {
    if let QuantGranularity::PerColGroup(_) = cfg.granularity {
        return Err(Error::Granularity(
            "channel groups on Q/K span the QKᵀ reduction; use PerTensor or PerRowGroup".into(),
        ));
    }
    let qhat = quantize_symmetric(q, cfg.granularity)?;
    let khat = quantize_symmetric(k, cfg.granularity)?;
    let vhat = quantize_symmetric(v, QuantGranularity::PerTensor)?;
    rec.tag(Stage::Quantize, "quantize_symmetric", q, qhat.values());
    rec.lap(Stage::Quantize);
    Ok(QuantizedInputs {
        q: qhat,
        k: khat,
        v: vhat,
    })
}

/// Integer logits plus, for grouped quantization, the per-row-block group plans.
enum Logits {
    PerTensor(LogitMatrix),
    Grouped {
        values: Matrix<i32>,
        rows_per_plan: usize,
    },
}

fn integer_logits(
    inputs: &QuantizedInputs,
    cfg: &AttentionConfig,
    rec: &mut Recorder,
) -> Result<Logits> {
    let logits = match cfg.granularity {
        QuantGranularity::PerTensor => {
            Logits::PerTensor(gemm_qk(&inputs.q, &inputs.k, cfg.threads)?)
        }
        QuantGranularity::PerRowGroup(gs) => Logits::Grouped {
            values: gemm_qk_values(inputs.q.values(), inputs.k.values(), cfg.threads)?,
            rows_per_plan: gs,
        },
        QuantGranularity::PerColGroup(_) => unreachable!("rejected during quantization"),
    };
    let values = match &logits {
        Logits::PerTensor(l) => l.values(),
        Logits::Grouped { values, .. } => values,
    };
    rec.tag(Stage::QkGemm, "gemm_qk", inputs.q.values(), values);
    rec.lap(Stage::QkGemm);
    Ok(logits)
}

/// Real scaled logit `alpha · Â` for element `(i, j)`.
fn alpha_at(inputs: &QuantizedInputs, i: usize, j: usize) -> f32 {
    logit_alpha(
        inputs.q.scale_at(i, 0),
        inputs.k.scale_at(j, 0),
        inputs.q.shape().1,
    )
}

fn pv_and_dequantize(
    p: &ProbMatrix,
    inputs: &QuantizedInputs,
    threads: usize,
    rec: &mut Recorder,
) -> Result<Matrix<f32>> {
    let acc = gemm_pv(p.values(), &inputs.v, threads)?;
    rec.tag(Stage::PvGemm, "gemm_pv", p.values(), &acc);
    rec.lap(Stage::PvGemm);
    let factor = inputs.v.tensor_scale()? / p.denom_scale() as f32;
    let out = acc.map(|x| x as f32 * factor);
    rec.tag(Stage::Dequantize, "rescale_output", &acc, &out);
    rec.lap(Stage::Dequantize);
    Ok(out)
}

pub fn int_attention(
    q: &Matrix<f32>,
    k: &Matrix<f32>,
    v: &Matrix<f32>,
    cfg: &AttentionConfig,
) -> Result<(Matrix<f32>, StageTimings)> {
    run_int(q, k, v, cfg, None)
}

/// [`int_attention`] that also records every executed operation in `trace`.
pub fn int_attention_traced(
    q: &Matrix<f32>,
    k: &Matrix<f32>,
    v: &Matrix<f32>,
    cfg: &AttentionConfig,
    trace: &mut DataflowTrace,
) -> Result<(Matrix<f32>, StageTimings)> {
    run_int(q, k, v, cfg, Some(trace))
}

fn run_int(
    q: &Matrix<f32>,
    k: &Matrix<f32>,
    v: &Matrix<f32>,
    cfg: &AttentionConfig,
    trace: Option<&mut DataflowTrace>,
) -> Result<(Matrix<f32>, StageTimings)> {
    check_shapes(q, k, v, cfg.mask.as_ref())?;
    // the table is part of operator construction, not of the timed call
    let lut = build_lut(cfg.lut_bits, cfg.clip)?;
    let mut rec = Recorder::new(trace);
    rec.skip();

    let inputs = quantize_inputs(q, k, v, cfg, &mut rec)?;
    let logits = integer_logits(&inputs, cfg, &mut rec)?;

    let p = match &logits {
        Logits::PerTensor(l) => {
            let c_int = compute_c_int(
                cfg.clip,
                q.cols(),
                inputs.q.tensor_scale()?,
                inputs.k.tensor_scale()?,
            )?;
            let opts = SoftmaxOptions {
                mask: cfg.mask.as_ref(),
                format: cfg.p_format,
                threads: cfg.threads,
            };
            index_softmax_with(l.values(), c_int, &lut, &opts)?
        }
        Logits::Grouped {
            values,
            rows_per_plan,
        } => {
            let gs = *rows_per_plan;
            let group_of_column: Vec<usize> = (0..values.cols()).map(|j| j / gs).collect();
            let plans = (0..values.rows() / gs)
                .map(|block| {
                    let alphas: Vec<f32> = (0..values.cols() / gs)
                        .map(|g| alpha_at(&inputs, block * gs, g * gs))
                        .collect();
                    GroupPlan::new(&group_of_column, &alphas, cfg.clip, &lut)
                })
                .collect::<Result<Vec<_>>>()?;
            let opts = GroupedOptions {
                row_max: cfg.grouped_row_max,
                mask: cfg.mask.as_ref(),
                format: cfg.p_format,
                threads: cfg.threads,
            };
            grouped_by_row_blocks(values, gs, &plans, &lut, &opts)?
        }
    };
    let logit_values = match &logits {
        Logits::PerTensor(l) => l.values(),
        Logits::Grouped { values, .. } => values,
    };
    rec.tag(
        Stage::SoftmaxPath,
        "index_softmax",
        logit_values,
        p.values(),
    );
    rec.lap(Stage::SoftmaxPath);

    let out = pv_and_dequantize(&p, &inputs, cfg.threads, &mut rec)?;
    Ok((out, rec.finish()))
}

pub fn quant_only_attention(
    q: &Matrix<f32>,
    k: &Matrix<f32>,
    v: &Matrix<f32>,
    cfg: &AttentionConfig,
) -> Result<(Matrix<f32>, StageTimings)> {
    run_quant_only(q, k, v, cfg, None)
}

pub fn quant_only_attention_traced(
    q: &Matrix<f32>,
    k: &Matrix<f32>,
    v: &Matrix<f32>,
    cfg: &AttentionConfig,
    trace: &mut DataflowTrace,
) -> Result<(Matrix<f32>, StageTimings)> {
    run_quant_only(q, k, v, cfg, Some(trace))
}

fn run_quant_only(
    q: &Matrix<f32>,
    k: &Matrix<f32>,
    v: &Matrix<f32>,
    cfg: &AttentionConfig,
    trace: Option<&mut DataflowTrace>,
) -> Result<(Matrix<f32>, StageTimings)> {
    check_shapes(q, k, v, cfg.mask.as_ref())?;
    let mut rec = Recorder::new(trace);
    let inputs = quantize_inputs(q, k, v, cfg, &mut rec)?;
    let logits = integer_logits(&inputs, cfg, &mut rec)?;

    let (values, real) = match &logits {
        Logits::PerTensor(l) => (
            l.values(),
            dequantize_logits(l.values(), |_, _| l.alpha(), cfg.threads),
        ),
        Logits::Grouped { values, .. } => (
            values,
            dequantize_logits(values, |i, j| alpha_at(&inputs, i, j), cfg.threads),
        ),
    };
    rec.tag(Stage::SoftmaxPath, "dequantize_logits", values, &real);
    let probs = safe_softmax_f32(&real, cfg.mask.as_ref(), cfg.threads);
    rec.tag(Stage::SoftmaxPath, "safe_softmax", &real, &probs);
    let p = quantize_probabilities(&probs, cfg.p_format);
    rec.tag(
        Stage::SoftmaxPath,
        "requantize_probabilities",
        &probs,
        p.values(),
    );
    rec.lap(Stage::SoftmaxPath);

    let out = pv_and_dequantize(&p, &inputs, cfg.threads, &mut rec)?;
    Ok((out, rec.finish()))
}

fn dequantize_logits(
    values: &Matrix<i32>,
    alpha: impl Fn(usize, usize) -> f32 + Sync,
    threads: usize,
) -> Matrix<f32> {
    let (rows, cols) = values.shape();
    let mut out = vec![0.0f32; rows * cols];
    for_each_row_block(&mut out, cols, threads, |first, block| {
        for (r, out_row) in block.chunks_exact_mut(cols).enumerate() {
            let i = first + r;
            for (j, (o, &a)) in out_row.iter_mut().zip(values.row(i)).enumerate() {
                *o = alpha(i, j) * a as f32;
            }
        }
    });
    Matrix::from_parts(rows, cols, out)
}

/// Row-wise `exp(a - max) / Σ exp(a - max)` in f32; masked entries get 0 and
/// fully masked rows are all zero.
fn safe_softmax_f32(logits: &Matrix<f32>, mask: Option<&Mask>, threads: usize) -> Matrix<f32> {
    let (rows, cols) = logits.shape();
    let mut out = vec![0.0f32; rows * cols];
    for_each_row_block(&mut out, cols, threads, |first, block| {
        for (r, out_row) in block.chunks_exact_mut(cols).enumerate() {
            let i = first + r;
            let row = logits.row(i);
            let allowed = |j: usize| mask.is_none_or(|m| m.is_allowed(i, j));
            let max = (0..cols)
                .filter(|&j| allowed(j))
                .map(|j| row[j])
                .fold(f32::NEG_INFINITY, f32::max);
            if max == f32::NEG_INFINITY {
                continue;
            }
            let mut sum = 0.0f32;
            for (j, (o, &a)) in out_row.iter_mut().zip(row).enumerate() {
                if allowed(j) {
                    *o = (a - max).exp();
                    sum += *o;
                }
            }
            let inv = 1.0 / sum;
            for o in out_row.iter_mut() {
                *o *= inv;
            }
        }
    });
    Matrix::from_parts(rows, cols, out)
}

/// Exact attention `softmax(QKᵀ/√d) V` with row-max subtraction and f64 accumulation.
pub fn reference_attention(
    q: &Matrix<f32>,
    k: &Matrix<f32>,
    v: &Matrix<f32>,
    mask: Option<&Mask>,
) -> Result<Matrix<f32>> {
    check_shapes(q, k, v, mask)?;
    let mut rec = Recorder::new(None);
    Ok(reference_impl(q, k, v, mask, 1, &mut rec))
}

pub fn reference_attention_timed(
    q: &Matrix<f32>,
    k: &Matrix<f32>,
    v: &Matrix<f32>,
    cfg: &AttentionConfig,
) -> Result<(Matrix<f32>, StageTimings)> {
    check_shapes(q, k, v, cfg.mask.as_ref())?;
    let mut rec = Recorder::new(None);
    let out = reference_impl(q, k, v, cfg.mask.as_ref(), cfg.threads, &mut rec);
    Ok((out, rec.finish()))
}

/// Reference attention on inputs rounded to IEEE half precision.
pub fn fp16_attention(
    q: &Matrix<f32>,
    k: &Matrix<f32>,
    v: &Matrix<f32>,
    cfg: &AttentionConfig,
) -> Result<(Matrix<f32>, StageTimings)> {
    check_shapes(q, k, v, cfg.mask.as_ref())?;
    let mut rec = Recorder::new(None);
    let round = |m: &Matrix<f32>| m.map(|x| f16::from_f32(x).to_f32());
    let (qh, kh, vh) = (round(q), round(k), round(v));
    rec.lap(Stage::Quantize);
    let out = reference_impl(&qh, &kh, &vh, cfg.mask.as_ref(), cfg.threads, &mut rec);
    Ok((out, rec.finish()))
}

fn reference_impl(
    q: &Matrix<f32>,
    k: &Matrix<f32>,
    v: &Matrix<f32>,
    mask: Option<&Mask>,
    threads: usize,
    rec: &mut Recorder,
) -> Matrix<f32> {
    let probs = reference_probs_f64(q, k, mask, threads, rec);
    let (rows, dv) = (q.rows(), v.cols());
    let mut out = vec![0.0f32; rows * dv];
    for_each_row_block(&mut out, dv, threads, |first, block| {
        let mut acc = vec![0.0f64; dv];
        for (r, out_row) in block.chunks_exact_mut(dv).enumerate() {
            acc.fill(0.0);
            for (&p, v_row) in probs[(first + r) * k.rows()..][..k.rows()]
                .iter()
                .zip(v.iter_rows())
            {
                if p != 0.0 {
                    for (a, &x) in acc.iter_mut().zip(v_row) {
                        *a += p * x as f64;
                    }
                }
            }
            for (o, &a) in out_row.iter_mut().zip(&acc) {
                *o = a as f32;
            }
        }
    });
    rec.lap(Stage::PvGemm);
    Matrix::from_parts(rows, dv, out)
}

/// f64 probabilities, charging logits to `QkGemm` and normalization to `SoftmaxPath`.
fn reference_probs_f64(
    q: &Matrix<f32>,
    k: &Matrix<f32>,
    mask: Option<&Mask>,
    threads: usize,
    rec: &mut Recorder,
) -> Vec<f64> {
    let (rows, cols) = (q.rows(), k.rows());
    let inv_sqrt_d = 1.0 / (q.cols() as f64).sqrt();
    let mut probs = vec![0.0f64; rows * cols];
    for_each_row_block(&mut probs, cols, threads, |first, block| {
        for (r, out_row) in block.chunks_exact_mut(cols).enumerate() {
            let lhs = q.row(first + r);
            for (o, rhs) in out_row.iter_mut().zip(k.iter_rows()) {
                *o = dot_f64(lhs, rhs) * inv_sqrt_d;
            }
        }
    });
    rec.lap(Stage::QkGemm);
    for_each_row_block(&mut probs, cols, threads, |first, block| {
        for (r, row) in block.chunks_exact_mut(cols).enumerate() {
            let i = first + r;
            let allowed = |j: usize| mask.is_none_or(|m| m.is_allowed(i, j));
            let max = (0..cols)
                .filter(|&j| allowed(j))
                .map(|j| row[j])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                row.fill(0.0);
                continue;
            }
            let mut sum = 0.0f64;
            for (j, x) in row.iter_mut().enumerate() {
                *x = if allowed(j) { (*x - max).exp() } else { 0.0 };
                sum += *x;
            }
            for x in row.iter_mut() {
                *x /= sum;
            }
        }
    });
    rec.lap(Stage::SoftmaxPath);
    probs
}

/// Exact attention probabilities `softmax(QKᵀ/√d)` rounded to f32.
pub fn reference_probabilities(
    q: &Matrix<f32>,
    k: &Matrix<f32>,
    mask: Option<&Mask>,
    threads: usize,
) -> Result<Matrix<f32>> {
    check_shapes(q, k, k, mask)?;
    let mut rec = Recorder::new(None);
    let probs = reference_probs_f64(q, k, mask, threads, &mut rec);
    Ok(Matrix::from_parts(
        q.rows(),
        k.rows(),
        probs.into_iter().map(|p| p as f32).collect(),
    ))
}

/// Fidelity of the exact probability matrix after 8-bit requantization in
/// each format, measured against the exact probabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PFormatAblation {
    pub uint8x255: FidelityReport,
    pub int8x127: FidelityReport,
}

pub fn p_format_ablation(
    q: &Matrix<f32>,
    k: &Matrix<f32>,
    mask: Option<&Mask>,
    threads: usize,
) -> Result<PFormatAblation> {
    let exact = reference_probabilities(q, k, mask, threads)?;
    let report = |format| compare(&quantize_probabilities(&exact, format).to_real(), &exact);
    Ok(PFormatAblation {
        uint8x255: report(PFormat::Uint8x255)?,
        int8x127: report(PFormat::Int8x127)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pipeline {
    Int,
    QuantOnly,
    Reference,
    Fp16,
}

impl Pipeline {
    pub const ALL: [Pipeline; 4] = [
        Pipeline::Int,
        Pipeline::QuantOnly,
        Pipeline::Reference,
        Pipeline::Fp16,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Pipeline::Int => "int",
            Pipeline::QuantOnly => "quant_only",
            Pipeline::Reference => "reference",
            Pipeline::Fp16 => "fp16",
        }
    }

    pub fn run(
        self,
        q: &Matrix<f32>,
        k: &Matrix<f32>,
        v: &Matrix<f32>,
        cfg: &AttentionConfig,
    ) -> Result<(Matrix<f32>, StageTimings)> {
        match self {
            Pipeline::Int => int_attention(q, k, v, cfg),
            Pipeline::QuantOnly => quant_only_attention(q, k, v, cfg),
            Pipeline::Reference => reference_attention_timed(q, k, v, cfg),
            Pipeline::Fp16 => fp16_attention(q, k, v, cfg),
        }
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Pipeline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Pipeline::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "unknown pipeline '{s}' (int, quant_only, reference, fp16)"
                ))
            })
    }
}

/// Warmup and measured iteration counts for [`measure`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Measurement {
    pub warmup: usize,
    pub iters: usize,
}

impl Default for Measurement {
    fn default() -> Self {
        Self {
            warmup: 3,
            iters: 10,
        }
    }
}

/// Runs `pipeline` `warmup + iters` times and reports the per-field median of
/// the measured iterations together with the last output.
pub fn measure(
    pipeline: Pipeline,
    q: &Matrix<f32>,
    k: &Matrix<f32>,
    v: &Matrix<f32>,
    cfg: &AttentionConfig,
    m: &Measurement,
) -> Result<(Matrix<f32>, StageTimings)> {
    let iters = m.iters.max(1);
    for _ in 0..m.warmup {
        pipeline.run(q, k, v, cfg)?;
    }
    let mut samples = Vec::with_capacity(iters);
    let mut last = None;
    for _ in 0..iters {
        let (out, t) = pipeline.run(q, k, v, cfg)?;
        samples.push(t);
        last = Some(out);
    }
    let median = |f: fn(&StageTimings) -> u64| {
        let mut xs: Vec<u64> = samples.iter().map(f).collect();
        xs.sort_unstable();
        let n = xs.len();
        if n % 2 == 1 {
            xs[n / 2]
        } else {
            (xs[n / 2 - 1] + xs[n / 2]) / 2
        }
    };
    let timings = StageTimings {
        quantize_ns: median(|t| t.quantize_ns),
        qk_gemm_ns: median(|t| t.qk_gemm_ns),
        softmax_path_ns: median(|t| t.softmax_path_ns),
        pv_gemm_ns: median(|t| t.pv_gemm_ns),
        dequantize_ns: median(|t| t.dequantize_ns),
        total_ns: median(|t| t.total_ns),
    };
    Ok((last.expect("at least one iteration"), timings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inputs::AttentionInputs;
    use crate::quant::dequantize;

    fn cfg() -> AttentionConfig {
        AttentionConfig::default()
    }

    #[test]
    fn single_token_returns_its_value_row() {
        let q = Matrix::from_rows(&[[0.3f32, -1.0]]).unwrap();
        let k = Matrix::from_rows(&[[2.0f32, 0.5]]).unwrap();
        let v = Matrix::from_rows(&[[0.7f32, -0.2]]).unwrap();
        let step = 0.7 / 127.0;
        for p in [Pipeline::Int, Pipeline::QuantOnly] {
            let (o, _) = p.run(&q, &k, &v, &cfg()).unwrap();
            let vq = dequantize(&quantize_symmetric(&v, QuantGranularity::PerTensor).unwrap());
            assert_eq!(o, vq, "{p}");
            for (a, b) in o.data().iter().zip(v.data()) {
                assert!((a - b).abs() <= step, "{p}");
            }
        }
        let o = reference_attention(&q, &k, &v, None).unwrap();
        assert_eq!(o, v);
    }

    #[test]
    fn identical_query_rows_give_identical_outputs() {
        let inputs = AttentionInputs::gaussian(16, 8, 3).unwrap();
        let q = Matrix::from_fn(16, 8, |i, j| inputs.q.get(i % 4, j)).unwrap();
        for p in Pipeline::ALL {
            let (o, _) = p.run(&q, &inputs.k, &inputs.v, &cfg()).unwrap();
            for i in 4..16 {
                assert_eq!(o.row(i), o.row(i % 4), "{p}");
            }
        }
    }

    #[test]
    fn reference_rows_are_distributions() {
        let inputs = AttentionInputs::gaussian(32, 16, 5).unwrap();
        let p = reference_probabilities(&inputs.q, &inputs.k, None, 2).unwrap();
        for row in p.iter_rows() {
            let s: f64 = row.iter().map(|&x| x as f64).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn reference_uniform_and_dominant_logits() {
        // zero queries make every logit equal
        let q = Matrix::<f32>::zeros(3, 4).unwrap();
        let k = Matrix::from_fn(5, 4, |i, j| (i * 4 + j) as f32).unwrap();
        let p = reference_probabilities(&q, &k, None, 1).unwrap();
        assert!(p.data().iter().all(|&x| (x - 0.2).abs() < 1e-7));

        // one logit 1e4 above the rest
        let q = Matrix::from_rows(&[[1.0f32]]).unwrap();
        let k = Matrix::from_rows(&[[0.0f32], [1e4], [0.0]]).unwrap();
        let p = reference_probabilities(&q, &k, None, 1).unwrap();
        assert_eq!(p.data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn shape_errors() {
        let a = Matrix::<f32>::zeros(4, 3).unwrap();
        let b = Matrix::<f32>::zeros(4, 2).unwrap();
        let c = Matrix::<f32>::zeros(5, 3).unwrap();
        for p in Pipeline::ALL {
            assert!(matches!(
                p.run(&a, &b, &b, &cfg()),
                Err(Error::DimensionMismatch(_))
            ));
            assert!(matches!(
                p.run(&a, &a, &c, &cfg()),
                Err(Error::DimensionMismatch(_))
            ));
        }
        let cfg = AttentionConfig {
            mask: Some(Mask::causal(3)),
            ..cfg()
        };
        assert!(int_attention(&a, &a, &a, &cfg).is_err());
    }

    #[test]
    fn length_bound() {
        let long = Matrix::<f32>::zeros(MAX_PV_DEPTH + 1, 1).unwrap();
        let one = Matrix::<f32>::zeros(1, 1).unwrap();
        assert!(matches!(
            int_attention(&one, &long, &long, &cfg()),
            Err(Error::AccumulatorBound(_))
        ));
    }

    #[test]
    fn column_groups_rejected() {
        let inputs = AttentionInputs::gaussian(4, 4, 1).unwrap();
        let cfg = AttentionConfig {
            granularity: QuantGranularity::PerColGroup(2),
            ..cfg()
        };
        assert!(matches!(
            int_attention(&inputs.q, &inputs.k, &inputs.v, &cfg),
            Err(Error::Granularity(_))
        ));
    }

    #[test]
    fn causal_mask_first_row_attends_only_itself() {
        let inputs = AttentionInputs::gaussian(8, 4, 11).unwrap();
        let cfg = AttentionConfig {
            mask: Some(Mask::causal(8)),
            ..cfg()
        };
        let vq = dequantize(&quantize_symmetric(&inputs.v, QuantGranularity::PerTensor).unwrap());
        let (o, _) = int_attention(&inputs.q, &inputs.k, &inputs.v, &cfg).unwrap();
        assert_eq!(o.row(0), vq.row(0));
        let r = reference_attention(&inputs.q, &inputs.k, &inputs.v, cfg.mask.as_ref()).unwrap();
        assert_eq!(r.row(0), inputs.v.row(0));
    }

    #[test]
    fn timings_cover_stages() {
        let inputs = AttentionInputs::gaussian(64, 16, 2).unwrap();
        for p in Pipeline::ALL {
            let (_, t) = p.run(&inputs.q, &inputs.k, &inputs.v, &cfg()).unwrap();
            assert!(t.total_ns >= t.stage_sum(), "{p}: {t:?}");
            assert!(
                t.qk_gemm_ns > 0 && t.softmax_path_ns > 0 && t.pv_gemm_ns > 0,
                "{p}"
            );
            let shares: f64 = t.shares().iter().sum();
            assert!((shares - 1.0).abs() < 1e-9);
        }
        let (_, t) = measure(
            Pipeline::Int,
            &inputs.q,
            &inputs.k,
            &inputs.v,
            &cfg(),
            &Measurement {
                warmup: 1,
                iters: 4,
            },
        )
        .unwrap();
        assert!(t.total_ns > 0);
    }

    #[test]
    fn pipeline_names_round_trip() {
        for p in Pipeline::ALL {
            assert_eq!(p.name().parse::<Pipeline>().unwrap(), p);
        }
        assert!("float".parse::<Pipeline>().is_err());
    }

    #[test]
    fn gemm_flop_convention() {
        assert_eq!(
            gemm_flops(1024, 1024, 128, 128),
            4.0 * 1024.0 * 1024.0 * 128.0
        );
    }
}
