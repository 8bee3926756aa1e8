use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A trainable tensor together with its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: ArrayD<f64>,
    pub grad: ArrayD<f64>,
}

impl Param {
    pub fn new(name: impl Into<String>, value: ArrayD<f64>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Non-trainable state (batch-norm running statistics).
#[derive(Debug, Clone)]
pub struct Buffer {
    pub name: String,
    pub value: ArrayD<f64>,
}

/// Flat, serializable copy of a named tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl TensorRecord {
    pub fn from_array(name: &str, value: &ArrayD<f64>) -> Self {
        Self {
            name: name.to_owned(),
            shape: value.shape().to_vec(),
            data: value.iter().copied().collect(),
        }
    }

    pub fn to_array(&self) -> Result<ArrayD<f64>> {
        ArrayD::from_shape_vec(IxDyn(&self.shape), self.data.clone()).map_err(|e| Error::Checkpoint(format!("tensor `{}`: {e}", self.name)))
    }

    /// Copies the record into `dst`, checking name and shape.
    pub fn load_into(&self, name: &str, dst: &mut ArrayD<f64>) -> Result<()> {
        if self.name != name {
            return Err(Error::Checkpoint(format!("expected tensor `{name}`, found `{}`", self.name)));
        }
        if self.shape != dst.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}`: shape {:?} does not match model shape {:?}",
                self.shape,
                dst.shape()
            )));
        }
        dst.assign(&self.to_array()?);
        Ok(())
    }
}
