//! Benchmark harness for the integer attention pipelines.
//!
//! Three report kinds are produced, each a flat row type that serializes to
//! CSV or JSON with identical field names:
//!
//! * [`run_breakdown`]: per-stage latency of each pipeline, with stage shares
//!   and two-GEMM throughput.
//! * [`run_fidelity`]: error metrics of each pipeline against the exact
//!   reference, plus the 8-bit probability format ablation.
//! * [`run_sweep`]: mean fidelity of the integer pipeline over a `(b, c)` grid.
//!
//! Inputs are standard normal `Q`, `K`, `V` drawn from ChaCha8 seeded with the
//! run seed, so every row is reproducible on any machine.
//!
//! A configuration that fails does not abort the run; it is recorded in
//! [`Report::failures`] and the remaining configurations still execute.

pub mod output;

use intattention::gemm::MAX_PV_DEPTH;
use intattention::pipeline::{gemm_flops, measure, p_format_ablation, Measurement};
use intattention::softmax::{MAX_LUT_BITS, MIN_LUT_BITS};
use intattention::{
    compare, reference_attention, AttentionConfig, AttentionInputs, FidelityReport, PFormat,
    Pipeline,
};
use serde::{Deserialize, Serialize};

pub use output::{read_rows, write_rows, OutputFormat};

pub const DEFAULT_LENGTHS: [usize; 4] = [256, 512, 1024, 2048];
pub const DEFAULT_DIM: usize = 128;
pub const DEFAULT_B_GRID: [u32; 5] = [2, 3, 4, 5, 6];
pub const DEFAULT_C_GRID: [f32; 5] = [4.4, 5.5, 6.6, 7.7, 8.8];

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] intattention::Error),
    #[error(transparent)]
    Tensor(#[from] intattention::tensor::TensorError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = BenchError> = std::result::Result<T, E>;

/// Everything a benchmark run needs.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchSpec {
    pub pipelines: Vec<Pipeline>,
    pub lengths: Vec<usize>,
    pub dim: usize,
    pub seeds: Vec<u64>,
    pub threads: usize,
    /// LUT bits; breakdown and fidelity runs take exactly one value.
    pub b_grid: Vec<u32>,
    /// Clip bounds; breakdown and fidelity runs take exactly one value.
    pub c_grid: Vec<f32>,
    pub p_format: PFormat,
    pub measurement: Measurement,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            pipelines: vec![Pipeline::Int, Pipeline::QuantOnly, Pipeline::Reference],
            lengths: DEFAULT_LENGTHS.to_vec(),
            dim: DEFAULT_DIM,
            seeds: vec![0],
            threads: 1,
            b_grid: vec![intattention::softmax::DEFAULT_LUT_BITS],
            c_grid: vec![intattention::softmax::DEFAULT_CLIP],
            p_format: PFormat::Uint8x255,
            measurement: Measurement::default(),
        }
    }
}

impl BenchSpec {
    pub fn validate(&self) -> Result<()> {
        let usage = |msg: String| Err(BenchError::Usage(msg));
        if self.lengths.is_empty() {
            return usage("at least one sequence length is required".into());
        }
        if let Some(&l) = self.lengths.iter().find(|&&l| l == 0 || l > MAX_PV_DEPTH) {
            return usage(format!("sequence length {l} is outside 1..={MAX_PV_DEPTH}"));
        }
        if self.dim == 0 {
            return usage("head dimension must be at least 1".into());
        }
        if self.seeds.is_empty() {
            return usage("at least one seed is required".into());
        }
        if self.threads == 0 {
            return usage("thread count must be at least 1".into());
        }
        if self.pipelines.is_empty() {
            return usage("at least one pipeline is required".into());
        }
        if self.b_grid.is_empty() || self.c_grid.is_empty() {
            return usage("LUT bit and clip grids must be non-empty".into());
        }
        if let Some(b) = self
            .b_grid
            .iter()
            .find(|b| !(MIN_LUT_BITS..=MAX_LUT_BITS).contains(*b))
        {
            return usage(format!(
                "LUT bits {b} outside {MIN_LUT_BITS}..={MAX_LUT_BITS}"
            ));
        }
        if let Some(c) = self.c_grid.iter().find(|c| !(c.is_finite() && **c > 0.0)) {
            return usage(format!("clip bound {c} must be positive and finite"));
        }
        if self.measurement.iters == 0 {
            return usage("at least one measured iteration is required".into());
        }
        Ok(())
    }

    fn single_point(&self) -> Result<(u32, f32)> {
        match (self.b_grid.as_slice(), self.c_grid.as_slice()) {
            ([b], [c]) => Ok((*b, *c)),
            _ => Err(BenchError::Usage(
                "this run takes a single --b and a single --c value".into(),
            )),
        }
    }

    fn config(&self, lut_bits: u32, clip: f32) -> AttentionConfig {
        AttentionConfig {
            lut_bits,
            clip,
            p_format: self.p_format,
            threads: self.threads,
            ..Default::default()
        }
    }
}

/// Rows produced by a run plus a description of every configuration that failed.
#[derive(Debug, Clone, PartialEq)]
pub struct Report<R> {
    pub rows: Vec<R>,
    pub failures: Vec<String>,
}

impl<R> Default for Report<R> {
    fn default() -> Self {
        Self {
            rows: Vec::new(),
            failures: Vec::new(),
        }
    }
}

impl<R> Report<R> {
    fn record(&mut self, what: impl FnOnce() -> String, outcome: Result<R>) {
        match outcome {
            Ok(row) => self.rows.push(row),
            Err(e) => self.failures.push(format!("{}: {e}", what())),
        }
    }
}

/// One pipeline at one `(L, seed)`: median stage latencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownRow {
    pub pipeline: String,
    pub len: usize,
    pub dim: usize,
    pub seed: u64,
    pub threads: usize,
    pub lut_bits: u32,
    pub clip: f32,
    pub quantize_ns: u64,
    pub qk_gemm_ns: u64,
    pub softmax_path_ns: u64,
    pub pv_gemm_ns: u64,
    pub dequantize_ns: u64,
    pub total_ns: u64,
    pub quantize_share: f64,
    pub qk_gemm_share: f64,
    pub softmax_path_share: f64,
    pub pv_gemm_share: f64,
    pub dequantize_share: f64,
    /// Only the two GEMMs are counted: `4·L²·d` operations over `total_ns`.
    pub gflops_two_gemms: f64,
}

pub fn run_breakdown(spec: &BenchSpec) -> Result<Report<BreakdownRow>> {
    spec.validate()?;
    let (b, c) = spec.single_point()?;
    let cfg = spec.config(b, c);
    let mut report = Report::default();
    for &len in &spec.lengths {
        for &seed in &spec.seeds {
            let x = match AttentionInputs::gaussian(len, spec.dim, seed) {
                Ok(x) => x,
                Err(e) => {
                    report
                        .failures
                        .push(format!("inputs L={len} seed={seed}: {e}"));
                    continue;
                }
            };
            for &pipeline in &spec.pipelines {
                let outcome = measure(pipeline, &x.q, &x.k, &x.v, &cfg, &spec.measurement).map(|(_, t)| {
                    let [quantize_share, qk_gemm_share, softmax_path_share, pv_gemm_share, dequantize_share] = t.shares();
                    let secs = t.total_ns as f64 * 1e-9;
                    BreakdownRow {
                        pipeline: pipeline.name().to_string(),
                        len,
                        dim: spec.dim,
                        seed,
                        threads: spec.threads,
                        lut_bits: b,
                        clip: c,
                        quantize_ns: t.quantize_ns,
                        qk_gemm_ns: t.qk_gemm_ns,
                        softmax_path_ns: t.softmax_path_ns,
                        pv_gemm_ns: t.pv_gemm_ns,
                        dequantize_ns: t.dequantize_ns,
                        total_ns: t.total_ns,
                        quantize_share,
                        qk_gemm_share,
                        softmax_path_share,
                        pv_gemm_share,
                        dequantize_share,
                        gflops_two_gemms: if secs > 0.0 { gemm_flops(len, len, spec.dim, spec.dim) / secs * 1e-9 } else { 0.0 },
                    }
                });
                report.record(
                    || format!("breakdown {pipeline} L={len} seed={seed}"),
                    outcome.map_err(Into::into),
                );
            }
        }
    }
    Ok(report)
}

/// One comparison at one `(L, seed)`.
///
/// `comparison` is `<pipeline>_vs_reference` for pipeline outputs, or
/// `p_uint8x255_vs_exact` / `p_int8x127_vs_exact` for the probability format
/// ablation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityRow {
    pub comparison: String,
    pub len: usize,
    pub dim: usize,
    pub seed: u64,
    pub lut_bits: u32,
    pub clip: f32,
    pub cos_sim_row_mean: f64,
    pub rel_l1: f64,
    pub rmse: f64,
}

impl FidelityRow {
    pub fn report(&self) -> FidelityReport {
        FidelityReport {
            cos_sim: self.cos_sim_row_mean,
            rel_l1: self.rel_l1,
            rmse: self.rmse,
        }
    }
}

pub fn run_fidelity(spec: &BenchSpec) -> Result<Report<FidelityRow>> {
    spec.validate()?;
    let (b, c) = spec.single_point()?;
    let cfg = spec.config(b, c);
    let mut report = Report::default();
    for &len in &spec.lengths {
        for &seed in &spec.seeds {
            let row = |comparison: String, r: FidelityReport| FidelityRow {
                comparison,
                len,
                dim: spec.dim,
                seed,
                lut_bits: b,
                clip: c,
                cos_sim_row_mean: r.cos_sim,
                rel_l1: r.rel_l1,
                rmse: r.rmse,
            };
            let prepared = AttentionInputs::gaussian(len, spec.dim, seed)
                .and_then(|x| reference_attention(&x.q, &x.k, &x.v, None).map(|exact| (x, exact)));
            let (x, exact) = match prepared {
                Ok(p) => p,
                Err(e) => {
                    report
                        .failures
                        .push(format!("reference L={len} seed={seed}: {e}"));
                    continue;
                }
            };
            for &pipeline in &spec.pipelines {
                let outcome = pipeline
                    .run(&x.q, &x.k, &x.v, &cfg)
                    .and_then(|(out, _)| compare(&out, &exact))
                    .map(|r| row(format!("{pipeline}_vs_reference"), r));
                report.record(
                    || format!("fidelity {pipeline} L={len} seed={seed}"),
                    outcome.map_err(Into::into),
                );
            }
            match p_format_ablation(&x.q, &x.k, None, spec.threads) {
                Ok(a) => {
                    report.rows.push(row(
                        format!("p_{}_vs_exact", PFormat::Uint8x255.name()),
                        a.uint8x255,
                    ));
                    report.rows.push(row(
                        format!("p_{}_vs_exact", PFormat::Int8x127.name()),
                        a.int8x127,
                    ));
                }
                Err(e) => report
                    .failures
                    .push(format!("p-format ablation L={len} seed={seed}: {e}")),
            }
        }
    }
    Ok(report)
}

/// Mean fidelity of the integer pipeline at one grid cell and length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lut_bits: u32,
    pub clip: f32,
    pub len: usize,
    pub dim: usize,
    pub seeds: usize,
    pub cos_sim_row_mean: f64,
    pub cos_sim_min: f64,
    pub rel_l1_mean: f64,
    pub rmse_mean: f64,
}

pub fn run_sweep(spec: &BenchSpec) -> Result<Report<SweepRow>> {
    spec.validate()?;
    let mut report = Report::default();
    for &len in &spec.lengths {
        let mut cases = Vec::with_capacity(spec.seeds.len());
        for &seed in &spec.seeds {
            let prepared = AttentionInputs::gaussian(len, spec.dim, seed)
                .and_then(|x| reference_attention(&x.q, &x.k, &x.v, None).map(|exact| (x, exact)));
            match prepared {
                Ok(p) => cases.push(p),
                Err(e) => report
                    .failures
                    .push(format!("reference L={len} seed={seed}: {e}")),
            }
        }
        if cases.is_empty() {
            continue;
        }
        for &b in &spec.b_grid {
            for &c in &spec.c_grid {
                let cfg = spec.config(b, c);
                let outcome = cases
                    .iter()
                    .map(|(x, exact)| {
                        Pipeline::Int
                            .run(&x.q, &x.k, &x.v, &cfg)
                            .and_then(|(out, _)| compare(&out, exact))
                    })
                    .collect::<intattention::Result<Vec<_>>>()
                    .map(|reports| {
                        let n = reports.len() as f64;
                        let mean =
                            |f: fn(&FidelityReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
                        SweepRow {
                            lut_bits: b,
                            clip: c,
                            len,
                            dim: spec.dim,
                            seeds: reports.len(),
                            cos_sim_row_mean: mean(|r| r.cos_sim),
                            cos_sim_min: reports
                                .iter()
                                .map(|r| r.cos_sim)
                                .fold(f64::INFINITY, f64::min),
                            rel_l1_mean: mean(|r| r.rel_l1),
                            rmse_mean: mean(|r| r.rmse),
                        }
                    });
                report.record(
                    || format!("sweep b={b} c={c} L={len}"),
                    outcome.map_err(Into::into),
                );
            }
        }
    }
    Ok(report)
}
