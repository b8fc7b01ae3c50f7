//! Dense layers, ReLU and inverted dropout with hand-written backward passes.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::matrix::{check_same_shape, Matrix};

/// Weight (`in_dim x out_dim`) and bias (`out_dim`) of one fully connected layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayerParams {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl DenseLayerParams {
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if weight.cols() != bias.len() {
            return Err(dim_err("DenseLayerParams", weight.shape(), (1, bias.len())));
        }
        Ok(Self { weight, bias })
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: Matrix::zeros(in_dim, out_dim),
            bias: vec![0.0; out_dim],
        }
    }

    /// Glorot-uniform weights and zero bias.
    pub fn glorot<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let limit = libm::sqrt(6.0 / (in_dim + out_dim).max(1) as f64);
        let mut layer = Self::zeros(in_dim, out_dim);
        for w in layer.weight.data_mut() {
            *w = rng.random_range(-limit..limit);
        }
        layer
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }
}

/// Gradients of a dense layer with respect to its input and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub input: Matrix,
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// `input * weight + bias`, broadcasting the bias over rows.
pub fn dense_forward(input: &Matrix, layer: &DenseLayerParams) -> Result<Matrix> {
    if input.cols() != layer.in_dim() {
        return Err(dim_err("dense_forward", input.shape(), layer.weight.shape()));
    }
    let mut out = input.matmul(&layer.weight)?;
    let width = layer.out_dim();
    if width > 0 {
        for row in out.data_mut().chunks_exact_mut(width) {
            for (o, b) in row.iter_mut().zip(&layer.bias) {
                *o += b;
            }
        }
    }
    Ok(out)
}

pub fn dense_backward(input: &Matrix, layer: &DenseLayerParams, upstream: &Matrix) -> Result<DenseGrads> {
    if input.cols() != layer.in_dim() {
        return Err(dim_err("dense_backward", input.shape(), layer.weight.shape()));
    }
    if upstream.rows() != input.rows() || upstream.cols() != layer.out_dim() {
        return Err(dim_err(
            "dense_backward",
            (input.rows(), layer.out_dim()),
            upstream.shape(),
        ));
    }
    let grad_input = upstream.matmul_nt(&layer.weight)?;
    let grad_weight = input.matmul_tn(upstream)?;
    let mut grad_bias = vec![0.0; layer.out_dim()];
    if !grad_bias.is_empty() {
        for row in upstream.data().chunks_exact(grad_bias.len()) {
            for (g, u) in grad_bias.iter_mut().zip(row) {
                *g += u;
            }
        }
    }
    Ok(DenseGrads {
        input: grad_input,
        weight: grad_weight,
        bias: grad_bias,
    })
}

pub fn relu(input: &Matrix) -> Matrix {
    input.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Passes `upstream` where `input > 0`. The subgradient at exactly zero is 0.
pub fn relu_backward(input: &Matrix, upstream: &Matrix) -> Result<Matrix> {
    check_same_shape("relu_backward", input, upstream)?;
    let mut out = upstream.clone();
    for (g, &x) in out.data_mut().iter_mut().zip(input.data()) {
        if x <= 0.0 {
            *g = 0.0;
        }
    }
    Ok(out)
}

/// Inverted dropout. The returned mask holds 1.0 for kept units and 0.0 for
/// dropped ones; kept units are scaled by `1 / (1 - rate)` in the output.
pub fn dropout<R: Rng + ?Sized>(input: &Matrix, rate: f64, rng: &mut R, training: bool) -> Result<(Matrix, Matrix)> {
    check_dropout_rate(rate)?;
    let ones = Matrix::from_vec(input.rows(), input.cols(), vec![1.0; input.data().len()])?;
    if !training || rate == 0.0 {
        return Ok((input.clone(), ones));
    }
    let scale = 1.0 / (1.0 - rate);
    let mut mask = ones;
    let mut out = input.clone();
    for (m, o) in mask.data_mut().iter_mut().zip(out.data_mut()) {
        if rng.random::<f64>() < rate {
            *m = 0.0;
            *o = 0.0;
        } else {
            *o *= scale;
        }
    }
    Ok((out, mask))
}

pub fn dropout_backward(upstream: &Matrix, mask: &Matrix, rate: f64) -> Result<Matrix> {
    check_same_shape("dropout_backward", upstream, mask)?;
    let scale = 1.0 / (1.0 - rate);
    let mut out = upstream.clone();
    for (g, &m) in out.data_mut().iter_mut().zip(mask.data()) {
        *g *= m * scale;
    }
    Ok(out)
}

pub(crate) fn check_dropout_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(alloc::format!(
            "dropout rate must lie in [0, 1), got {rate}"
        )));
    }
    Ok(())
}
