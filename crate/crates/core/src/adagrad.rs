//! Adagrad over named parameter blocks, with dense and row-sparse gradients.

use alloc::collections::BTreeMap;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdagradConfig {
    pub learning_rate: f64,
    pub epsilon: f64,
    pub initial_accumulator: f64,
}

impl Default for AdagradConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epsilon: 1e-8,
            initial_accumulator: 0.1,
        }
    }
}

impl AdagradConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(alloc::format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.epsilon > 0.0) || self.initial_accumulator < 0.0 {
            return Err(Error::Config(
                "epsilon must be positive and initial_accumulator non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Gradient for one parameter block.
#[derive(Debug, Clone, PartialEq)]
pub enum BlockGrad {
    Dense(Vec<f64>),
    /// Row-sparse gradient for a `rows x width` block; absent rows are zero.
    Rows {
        width: usize,
        rows: BTreeMap<usize, Vec<f64>>,
    },
}

impl BlockGrad {
    pub fn is_finite(&self) -> bool {
        match self {
            BlockGrad::Dense(g) => g.iter().all(|v| v.is_finite()),
            BlockGrad::Rows { rows, .. } => rows.values().flatten().all(|v| v.is_finite()),
        }
    }

    /// Expands to a dense vector of `len` entries.
    pub fn to_dense(&self, len: usize) -> Vec<f64> {
        match self {
            BlockGrad::Dense(g) => g.clone(),
            BlockGrad::Rows { width, rows } => {
                let mut out = vec![0.0; len];
                for (&r, g) in rows {
                    out[r * width..(r + 1) * width].copy_from_slice(g);
                }
                out
            }
        }
    }
}

/// Per-block squared-gradient accumulators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdagradState {
    pub config: AdagradConfig,
    pub accumulators: Vec<Vec<f64>>,
}

impl AdagradState {
    /// Fresh state for blocks of the given lengths.
    pub fn new(config: AdagradConfig, block_lens: &[usize]) -> Self {
        Self {
            config,
            accumulators: block_lens
                .iter()
                .map(|&n| vec![config.initial_accumulator; n])
                .collect(),
        }
    }

    /// Applies one step to every block. All gradients are checked for
    /// finiteness before anything is mutated.
    pub fn update(&mut self, blocks: &mut [(&str, &mut [f64])], grads: &[BlockGrad]) -> Result<()> {
        if blocks.len() != grads.len() || blocks.len() != self.accumulators.len() {
            return Err(Error::Dimension {
                op: "adagrad_update",
                left: alloc::format!("{} blocks", blocks.len()),
                right: alloc::format!("{} grads / {} accumulators", grads.len(), self.accumulators.len()),
            });
        }
        for ((name, _), g) in blocks.iter().zip(grads) {
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient {
                    block: name.to_string(),
                });
            }
        }
        for (((name, param), grad), acc) in blocks.iter_mut().zip(grads).zip(&mut self.accumulators) {
            apply_block(&self.config, name, param, acc, grad)?;
        }
        Ok(())
    }
}

/// `acc += g^2; param -= lr * g / (sqrt(acc) + eps)` element-wise.
pub fn apply_block(
    config: &AdagradConfig,
    name: &str,
    param: &mut [f64],
    acc: &mut [f64],
    grad: &BlockGrad,
) -> Result<()> {
    let len = param.len();
    let shape_err = |n: usize| Error::Dimension {
        op: "adagrad_update",
        left: alloc::format!("block `{name}` of {len}"),
        right: alloc::format!("gradient of {n}"),
    };
    if acc.len() != param.len() {
        return Err(shape_err(acc.len()));
    }
    match grad {
        BlockGrad::Dense(g) => {
            if g.len() != param.len() {
                return Err(shape_err(g.len()));
            }
            step(config, param, acc, g);
        }
        BlockGrad::Rows { width, rows } => {
            for (&r, g) in rows {
                let span = r * width..(r + 1) * width;
                if g.len() != *width || span.end > param.len() {
                    return Err(shape_err(span.end));
                }
                step(config, &mut param[span.clone()], &mut acc[span], g);
            }
        }
    }
    Ok(())
}

#[inline]
fn step(config: &AdagradConfig, param: &mut [f64], acc: &mut [f64], grad: &[f64]) {
    for ((p, a), &g) in param.iter_mut().zip(acc.iter_mut()).zip(grad) {
        *a += g * g;
        *p -= config.learning_rate * g / (libm::sqrt(*a) + config.epsilon);
    }
}

/// Convenience for a single unnamed dense block.
pub fn adagrad_update(param: &mut [f64], grad: &[f64], state: &mut AdagradState) -> Result<()> {
    let mut blocks = [("param", param)];
    state.update(&mut blocks, &[BlockGrad::Dense(grad.to_vec())])
}
