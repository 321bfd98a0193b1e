//! Fully integer single-head attention for CPUs.
//!
//! The crate provides INT8 quantization ([`quant`]), exact integer GEMMs
//! ([`gemm`]), the lookup-table softmax over integer logits ([`softmax`]),
//! three end-to-end pipelines with per-stage timings ([`pipeline`]), error
//! metrics ([`fidelity`]) and a small tensor container with a binary file
//! format ([`tensor`]).
//!
//! ```
//! use intattention::{int_attention, reference_attention, compare, AttentionConfig, AttentionInputs};
//!
//! let x = AttentionInputs::gaussian(64, 32, 0).unwrap();
//! let (out, timings) = int_attention(&x.q, &x.k, &x.v, &AttentionConfig::default()).unwrap();
//! let exact = reference_attention(&x.q, &x.k, &x.v, None).unwrap();
//! assert!(compare(&out, &exact).unwrap().cos_sim > 0.9);
//! assert!(timings.total_ns > 0);
//! ```

pub mod error;
pub mod fidelity;
pub mod fixed;
pub mod gemm;
pub mod inputs;
mod parallel;
pub mod pipeline;
pub mod quant;
pub mod softmax;
pub mod tensor;

pub use error::{Error, Result};
pub use fidelity::{compare, FidelityReport};
pub use gemm::{gemm_pv, gemm_qk, gemm_qk_values, gemm_real, LogitMatrix};
pub use inputs::AttentionInputs;
pub use pipeline::{
    fp16_attention, int_attention, measure, quant_only_attention, reference_attention,
    reference_attention_timed, AttentionConfig, Measurement, Pipeline, StageTimings,
};
pub use quant::{dequantize, quantize_symmetric, QuantGranularity, QuantizedMatrix};
pub use softmax::{
    build_lut, compute_c_int, index_softmax, index_softmax_grouped, ClipThreshold, ExpLut,
    GroupedRowMax, Mask, PFormat, ProbMatrix,
};
pub use tensor::{load_tensor, save_tensor, ElementKind, Matrix};
