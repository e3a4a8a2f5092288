//! Dense row-major `f32` tensors.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// A named, dense, row-major tensor of finite `f32` values.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl DenseTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let name = name.into();
        if shape.contains(&0) {
            return Err(Error::shape(alloc::format!(
                "tensor {name} has a zero dimension in {shape:?}"
            )));
        }
        let expected = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::shape(alloc::format!("tensor {name}: shape {shape:?} overflows")))?;
        if expected != data.len() {
            return Err(Error::shape(alloc::format!(
                "tensor {name}: shape {shape:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                tensor: name,
                index,
            });
        }
        Ok(Self { name, shape, data })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Row-major flat offset of a multi-index. Panics when out of range.
    pub fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &d)| {
                assert!(i < d, "index {i} out of range for dimension {d}");
                acc * d + i
            })
    }

    pub fn get(&self, index: &[usize]) -> f32 {
        self.data[self.offset(index)]
    }
}
