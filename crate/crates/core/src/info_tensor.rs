//! Head-averaged information tensors built from attention weights and their
//! gradients.
//!
//! * `AF`: mean attention over heads.
//! * `GF`: mean over heads of the positive part of the attention gradient.
//! * `AGF`: mean over heads of the positive part of attention times its
//!   gradient.
//!
//! The positive part is taken per head, before averaging.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AggregationMode {
    Af,
    Gf,
    Agf,
}

impl AggregationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AggregationMode::Af => "af",
            AggregationMode::Gf => "gf",
            AggregationMode::Agf => "agf",
        }
    }

    pub fn needs_gradients(self) -> bool {
        !matches!(self, AggregationMode::Af)
    }
}

impl fmt::Display for AggregationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AggregationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "af" => Ok(AggregationMode::Af),
            "gf" => Ok(AggregationMode::Gf),
            "agf" => Ok(AggregationMode::Agf),
            other => Err(Error::invalid(alloc::format!(
                "unknown aggregation mode {other:?} (expected af, gf or agf)"
            ))),
        }
    }
}

/// Attention weights `[layers, heads, tokens, tokens]` with optional
/// gradients of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBundle {
    weights: DenseTensor,
    grads: Option<DenseTensor>,
}

impl AttentionBundle {
    pub fn new(weights: DenseTensor, grads: Option<DenseTensor>) -> Result<Self> {
        let shape = weights.shape();
        if shape.len() != 4 || shape[2] != shape[3] {
            return Err(Error::shape(alloc::format!(
                "attention weights must have shape [l, h, t, t], got {shape:?}"
            )));
        }
        if let Some(i) = weights.data().iter().position(|&w| !(0.0..=1.0).contains(&w)) {
            return Err(Error::invalid(alloc::format!(
                "attention weight {} at index {i} is outside [0, 1]",
                weights.data()[i]
            )));
        }
        if let Some(g) = &grads {
            if g.shape() != shape {
                return Err(Error::shape(alloc::format!(
                    "gradient shape {:?} differs from attention shape {shape:?}",
                    g.shape()
                )));
            }
        }
        Ok(Self { weights, grads })
    }

    pub fn weights(&self) -> &DenseTensor {
        &self.weights
    }

    pub fn grads(&self) -> Option<&DenseTensor> {
        self.grads.as_ref()
    }

    pub fn layers(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn heads(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn tokens(&self) -> usize {
        self.weights.shape()[2]
    }
}

/// Non-negative tensor of shape `[layers, tokens, tokens]`.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoTensor {
    values: DenseTensor,
    mode: AggregationMode,
}

impl InfoTensor {
    pub fn new(values: DenseTensor, mode: AggregationMode) -> Result<Self> {
        let shape = values.shape();
        if shape.len() != 3 || shape[1] != shape[2] {
            return Err(Error::shape(alloc::format!(
                "information tensor must have shape [l, t, t], got {shape:?}"
            )));
        }
        if let Some(i) = values.data().iter().position(|&v| v < 0.0) {
            return Err(Error::invalid(alloc::format!(
                "information tensor entry {i} is negative ({})",
                values.data()[i]
            )));
        }
        Ok(Self { values, mode })
    }

    /// Convenience constructor from nested `[layer][row][col]` values.
    pub fn from_nested(layers: &[Vec<Vec<f64>>], mode: AggregationMode) -> Result<Self> {
        let l = layers.len();
        let t = layers.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(l * t * t);
        for slice in layers {
            if slice.len() != t || slice.iter().any(|row| row.len() != t) {
                return Err(Error::shape("ragged information tensor"));
            }
            data.extend(slice.iter().flatten().map(|&v| v as f32));
        }
        Self::new(DenseTensor::new("info", alloc::vec![l, t, t], data)?, mode)
    }

    pub fn values(&self) -> &DenseTensor {
        &self.values
    }

    pub fn mode(&self) -> AggregationMode {
        self.mode
    }

    pub fn layers(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn tokens(&self) -> usize {
        self.values.shape()[1]
    }

    /// Entry `[layer, row, col]` (zero-based layer) upcast to `f64`.
    pub fn at(&self, layer: usize, row: usize, col: usize) -> f64 {
        let t = self.tokens();
        f64::from(self.values.data()[(layer * t + row) * t + col])
    }

    /// A copy with every entry multiplied by `factor` (> 0).
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::invalid("scale factor must be positive and finite"));
        }
        let data = self
            .values
            .data()
            .iter()
            .map(|&v| (f64::from(v) * factor) as f32)
            .collect();
        Self::new(
            DenseTensor::new(self.values.name(), self.values.shape().to_vec(), data)?,
            self.mode,
        )
    }
}

/// Collapse the head axis of `bundle` according to `mode`.
pub fn aggregate(bundle: &AttentionBundle, mode: AggregationMode) -> Result<InfoTensor> {
    let (l, h, t) = (bundle.layers(), bundle.heads(), bundle.tokens());
    let weights = bundle.weights().data();
    let grads = match (mode.needs_gradients(), bundle.grads()) {
        (true, None) => {
            return Err(Error::MissingGradients {
                mode: match mode {
                    AggregationMode::Gf => "gf",
                    _ => "agf",
                },
            })
        }
        (_, g) => g.map(DenseTensor::data),
    };

    let plane = t * t;
    let mut out = Vec::with_capacity(l * plane);
    for layer in 0..l {
        for cell in 0..plane {
            let mut acc = 0.0f64;
            for head in 0..h {
                let idx = (layer * h + head) * plane + cell;
                let a = f64::from(weights[idx]);
                acc += match mode {
                    AggregationMode::Af => a,
                    AggregationMode::Gf => positive_part(f64::from(grads.unwrap()[idx])),
                    AggregationMode::Agf => positive_part(a * f64::from(grads.unwrap()[idx])),
                };
            }
            out.push((acc / h as f64) as f32);
        }
    }
    InfoTensor::new(DenseTensor::new("info", alloc::vec![l, t, t], out)?, mode)
}

fn positive_part(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}
