use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use super::{Param, TensorRecord};
use crate::error::{Error, Result};

/// SGD with heavy-ball momentum and coupled L2 weight decay.
///
/// Update rule per parameter: `g = grad + wd * w`, `buf = momentum * buf + g`
/// (`buf = g` on the first step), `w -= lr * buf`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    buffers: Vec<Option<ArrayD<f64>>>,
}

/// Serializable momentum state, one slot per parameter in model order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdState {
    pub momentum: f64,
    pub weight_decay: f64,
    pub buffers: Vec<Option<TensorRecord>>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            buffers: Vec::new(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut Param>, lr: f64) {
        if self.buffers.len() < params.len() {
            self.buffers.resize(params.len(), None);
        }
        for (param, slot) in params.into_iter().zip(self.buffers.iter_mut()) {
            let mut g = param.grad.clone();
            if self.weight_decay != 0.0 {
                g.scaled_add(self.weight_decay, &param.value);
            }
            let update = if self.momentum != 0.0 {
                match slot {
                    Some(buf) => {
                        buf.mapv_inplace(|b| b * self.momentum);
                        *buf += &g;
                        buf.clone()
                    }
                    None => {
                        *slot = Some(g.clone());
                        g
                    }
                }
            } else {
                g
            };
            param.value.scaled_add(-lr, &update);
        }
    }

    pub fn state(&self, params: &[&Param]) -> SgdState {
        SgdState {
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            buffers: params
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    self.buffers
                        .get(i)
                        .and_then(|b| b.as_ref())
                        .map(|b| TensorRecord::from_array(&p.name, b))
                })
                .collect(),
        }
    }

    pub fn from_state(state: &SgdState) -> Result<Self> {
        let buffers = state
            .buffers
            .iter()
            .map(|b| b.as_ref().map(TensorRecord::to_array).transpose())
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::Checkpoint(format!("optimizer state: {e}")))?;
        Ok(Self {
            momentum: state.momentum,
            weight_decay: state.weight_decay,
            buffers,
        })
    }
}
