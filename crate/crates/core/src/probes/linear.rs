// SPDX-License-Identifier: MIT OR Apache-2.0

use crate::dataset::TokenSet;
use crate::error::{Error, Result};
use crate::kernel::{softmax, Distribution};
use crate::matrix::dot_mixed;

/// `k` weight rows and biases over `d`-dimensional states of one layer.
/// Predicts `softmax(W x + b)` over the token set.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    /// Row-major `k × d`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub dim: usize,
    pub layer: usize,
    pub token_set: TokenSet,
}

impl LinearProbe {
    pub fn zeros(token_set: TokenSet, dim: usize, layer: usize) -> Self {
        let k = token_set.k();
        Self {
            weights: vec![0.0; k * dim],
            biases: vec![0.0; k],
            dim,
            layer,
            token_set,
        }
    }

    pub fn new(
        token_set: TokenSet,
        dim: usize,
        layer: usize,
        weights: Vec<f64>,
        biases: Vec<f64>,
    ) -> Result<Self> {
        let k = token_set.k();
        if weights.len() != k * dim {
            return Err(Error::DimensionMismatch {
                expected: k * dim,
                actual: weights.len(),
            });
        }
        if biases.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                actual: biases.len(),
            });
        }
        if weights.iter().chain(&biases).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite probe parameter"));
        }
        Ok(Self {
            weights,
            biases,
            dim,
            layer,
            token_set,
        })
    }

    pub fn k(&self) -> usize {
        self.biases.len()
    }

    pub fn weight_row(&self, y: usize) -> &[f64] {
        &self.weights[y * self.dim..(y + 1) * self.dim]
    }

    /// `W x + b`.
    pub fn logits(&self, activation: &[f32]) -> Result<Vec<f64>> {
        if activation.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: activation.len(),
            });
        }
        Ok(self.logits_unchecked(activation))
    }

    #[inline]
    pub(crate) fn logits_unchecked(&self, activation: &[f32]) -> Vec<f64> {
        (0..self.k())
            .map(|y| dot_mixed(self.weight_row(y), activation) + self.biases[y])
            .collect()
    }

    /// Probe distribution over the token set for one activation.
    pub fn predict(&self, activation: &[f32]) -> Result<Distribution> {
        Ok(softmax(&self.logits(activation)?))
    }

    /// Flat parameter vector: weights then biases.
    pub(crate) fn params(&self) -> Vec<f64> {
        let mut p = self.weights.clone();
        p.extend_from_slice(&self.biases);
        p
    }

    pub(crate) fn set_params(&mut self, params: &[f64]) {
        let split = self.weights.len();
        self.weights.copy_from_slice(&params[..split]);
        self.biases.copy_from_slice(&params[split..]);
    }
}
