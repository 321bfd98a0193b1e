//! Symmetric INT8 quantization with per-tensor or grouped scales.
//!
//! For each group `g` the scale is `max(EPSILON, max|X_g|) / 127` and values
//! are `clamp(round_half_away(X / scale), -127, 127)`; zero point is always 0.

use crate::error::{Error, Result};
use crate::fixed::round_half_away;
use crate::tensor::Matrix;

/// Floor on the absolute maximum so an all-zero tensor still gets a scale.
pub const EPSILON: f32 = 1e-12;

pub const QMAX: i32 = 127;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantGranularity {
    PerTensor,
    /// Consecutive blocks of `group_size` rows share a scale.
    PerRowGroup(usize),
    /// Consecutive blocks of `group_size` columns share a scale.
    PerColGroup(usize),
}

impl QuantGranularity {
    pub fn group_count(&self, rows: usize, cols: usize) -> usize {
        match *self {
            QuantGranularity::PerTensor => 1,
            QuantGranularity::PerRowGroup(gs) => rows / gs,
            QuantGranularity::PerColGroup(gs) => cols / gs,
        }
    }

    pub fn validate(&self, rows: usize, cols: usize) -> Result<()> {
        let (gs, dim, what) = match *self {
            QuantGranularity::PerTensor => return Ok(()),
            QuantGranularity::PerRowGroup(gs) => (gs, rows, "rows"),
            QuantGranularity::PerColGroup(gs) => (gs, cols, "cols"),
        };
        if gs == 0 || dim % gs != 0 {
            return Err(Error::Granularity(format!(
                "group size {gs} must be >= 1 and divide {what} = {dim}"
            )));
        }
        Ok(())
    }

    /// Group index owning element `(i, j)`.
    #[inline]
    pub fn group_of(&self, i: usize, j: usize) -> usize {
        match *self {
            QuantGranularity::PerTensor => 0,
            QuantGranularity::PerRowGroup(gs) => i / gs,
            QuantGranularity::PerColGroup(gs) => j / gs,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedMatrix {
    values: Matrix<i8>,
    scales: Vec<f32>,
    granularity: QuantGranularity,
}

impl QuantizedMatrix {
    /// Wraps already-quantized values, checking the range and scale invariants.
    pub fn new(
        values: Matrix<i8>,
        scales: Vec<f32>,
        granularity: QuantGranularity,
    ) -> Result<Self> {
        let (rows, cols) = values.shape();
        granularity.validate(rows, cols)?;
        let groups = granularity.group_count(rows, cols);
        if scales.len() != groups {
            return Err(Error::InvalidParameter(format!(
                "{} scales supplied for {groups} groups",
                scales.len()
            )));
        }
        if let Some(s) = scales.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "scale {s} must be finite and positive"
            )));
        }
        if values.data().contains(&i8::MIN) {
            return Err(Error::Domain(
                "quantized value -128 outside symmetric range".into(),
            ));
        }
        Ok(Self {
            values,
            scales,
            granularity,
        })
    }

    pub fn values(&self) -> &Matrix<i8> {
        &self.values
    }

    pub fn scales(&self) -> &[f32] {
        &self.scales
    }

    pub fn granularity(&self) -> QuantGranularity {
        self.granularity
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.shape()
    }

    /// The single scale of a per-tensor matrix.
    pub fn tensor_scale(&self) -> Result<f32> {
        match self.granularity {
            QuantGranularity::PerTensor => Ok(self.scales[0]),
            g => Err(Error::Granularity(format!(
                "expected per-tensor scale, found {g:?}"
            ))),
        }
    }

    #[inline]
    pub fn scale_at(&self, i: usize, j: usize) -> f32 {
        self.scales[self.granularity.group_of(i, j)]
    }
}

pub fn quantize_symmetric(
    x: &Matrix<f32>,
    granularity: QuantGranularity,
) -> Result<QuantizedMatrix> {
    let (rows, cols) = x.shape();
    granularity.validate(rows, cols)?;
    if let Some(pos) = x.data().iter().position(|v| !v.is_finite()) {
        return Err(Error::Domain(format!(
            "non-finite input {} at ({}, {})",
            x.data()[pos],
            pos / cols,
            pos % cols
        )));
    }

    let groups = granularity.group_count(rows, cols);
    let mut absmax = vec![0.0f32; groups];
    for (i, row) in x.iter_rows().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let g = granularity.group_of(i, j);
            absmax[g] = absmax[g].max(v.abs());
        }
    }
    let scales: Vec<f32> = absmax
        .iter()
        .map(|m| m.max(EPSILON) / QMAX as f32)
        .collect();

    let mut values = Vec::with_capacity(rows * cols);
    for (i, row) in x.iter_rows().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            values.push(quantize_value(v, scales[granularity.group_of(i, j)]));
        }
    }
    Ok(QuantizedMatrix {
        values: Matrix::from_parts(rows, cols, values),
        scales,
        granularity,
    })
}

#[inline]
fn quantize_value(v: f32, scale: f32) -> i8 {
    let q = round_half_away((v / scale) as f64);
    q.clamp(-(QMAX as f64), QMAX as f64) as i8
}

pub fn dequantize(q: &QuantizedMatrix) -> Matrix<f32> {
    let (rows, cols) = q.shape();
    let mut data = Vec::with_capacity(rows * cols);
    for (i, row) in q.values.iter_rows().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            data.push(q.scale_at(i, j) * v as f32);
        }
    }
    Matrix::from_parts(rows, cols, data)
}
