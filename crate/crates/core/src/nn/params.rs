use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorShape {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorShape {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Flat parameter storage plus the ordered list of tensors it holds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub values: Vec<f64>,
    pub layout: Vec<TensorShape>,
}

impl ParameterVector {
    pub fn zeros(layout: Vec<TensorShape>) -> Self {
        let n = layout.iter().map(TensorShape::numel).sum();
        Self {
            values: vec![0.0; n],
            layout,
        }
    }

    pub fn from_values(values: Vec<f64>, layout: Vec<TensorShape>) -> Result<Self> {
        let n: usize = layout.iter().map(TensorShape::numel).sum();
        ensure_len("parameter vector", n, values.len())?;
        Ok(Self { values, layout })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            values: vec![0.0; self.values.len()],
            layout: self.layout.clone(),
        }
    }

    pub fn is_congruent(&self, other: &ParameterVector) -> bool {
        self.layout == other.layout && self.values.len() == other.values.len()
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::NonFinite(format!(
                "{what}: component {i} is {}",
                self.values[i]
            ))),
            None => Ok(()),
        }
    }

    /// FNV-1a over the bit patterns; used to compare worker views cheaply.
    pub fn checksum(&self) -> u64 {
        checksum_f64(&self.values)
    }
}

pub(crate) fn checksum_f64(values: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
    }
    h
}
