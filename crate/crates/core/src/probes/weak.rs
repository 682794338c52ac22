// SPDX-License-Identifier: MIT OR Apache-2.0

//! Argmax-only (weak) probe: a linear max-margin classifier on the likeliest
//! token of each reference distribution.
//!
//! Uses the multiclass hinge `max(0, 1 + max_{j≠y} s_j − s_y)` over the `k`
//! weight rows plus `l2/2 · ‖W‖²`, minimized in the primal with the same
//! Adam loop as the KL probe.

use super::klrp::{fit, LossGrad};
use super::{LinearProbe, Objective, TrainConfig};
use crate::dataset::{ProbeDataset, Split};
use crate::error::{Error, Result};

/// Fitted weak probe, training history and any warnings raised.
#[derive(Debug, Clone, PartialEq)]
pub struct WeakProbeFit {
    pub probe: LinearProbe,
    pub history: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Regularized mean multiclass hinge loss and its (sub)gradient.
pub fn hinge_loss_and_gradient(
    probe: &LinearProbe,
    batch: &[(&[f32], usize)],
    l2: f64,
) -> Result<LossGrad> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let (k, d) = (probe.k(), probe.dim);
    let mut out = LossGrad {
        loss: 0.0,
        grad_weights: vec![0.0; k * d],
        grad_biases: vec![0.0; k],
    };
    for &(x, label) in batch {
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: x.len(),
            });
        }
        if label >= k {
            return Err(Error::invalid(format!("label {label} out of range")));
        }
        accumulate_hinge(probe, x, label, &mut out);
    }
    finish(probe, &mut out, batch.len(), l2);
    Ok(out)
}

#[inline]
fn accumulate_hinge(probe: &LinearProbe, x: &[f32], label: usize, out: &mut LossGrad) {
    let d = probe.dim;
    let s = probe.logits_unchecked(x);
    let mut rival = usize::MAX;
    for j in 0..s.len() {
        if j != label && (rival == usize::MAX || s[j] > s[rival]) {
            rival = j;
        }
    }
    let margin = 1.0 + s[rival] - s[label];
    if margin > 0.0 {
        out.loss += margin;
        out.grad_biases[rival] += 1.0;
        out.grad_biases[label] -= 1.0;
        for (j, &xj) in x.iter().enumerate() {
            let xj = f64::from(xj);
            out.grad_weights[rival * d + j] += xj;
            out.grad_weights[label * d + j] -= xj;
        }
    }
}

fn finish(probe: &LinearProbe, out: &mut LossGrad, n: usize, l2: f64) {
    let inv = 1.0 / n as f64;
    out.loss *= inv;
    out.grad_biases.iter_mut().for_each(|g| *g *= inv);
    let mut sq = 0.0;
    for (g, &w) in out.grad_weights.iter_mut().zip(&probe.weights) {
        *g = *g * inv + l2 * w;
        sq += w * w;
    }
    out.loss += 0.5 * l2 * sq;
}

/// Fits the weak probe at `layer` on hard labels `argmax(reference)`.
///
/// A class that never wins on the training side is reported in
/// [`WeakProbeFit::warnings`]; the hinge drives its score (mostly its bias)
/// down.
pub fn train_weak_probe(
    ds: &ProbeDataset,
    layer: usize,
    split: &Split,
    cfg: &TrainConfig,
) -> Result<WeakProbeFit> {
    cfg.check()?;
    if cfg.objective != Objective::Hinge {
        return Err(Error::invalid("weak probe requires the hinge objective"));
    }
    if split.train.is_empty() {
        return Err(Error::EmptyTrainSplit);
    }
    let acts = ds.layer(layer)?;
    let labels: Vec<usize> = ds
        .reference_distributions()
        .iter()
        .map(|r| r.argmax())
        .collect();
    let k = ds.k();
    let mut present = vec![false; k];
    split.train.iter().for_each(|&i| present[labels[i]] = true);
    let warnings = present
        .iter()
        .enumerate()
        .filter(|(_, &p)| !p)
        .map(|(c, _)| {
            format!(
                "class {c} ('{}') never the likeliest token in the training split",
                ds.token_set().labels()[c]
            )
        })
        .collect();

    let init = LinearProbe::zeros(ds.token_set().clone(), ds.hidden_dim(), layer);
    let d = init.dim;
    let grad = |probe: &LinearProbe, idx: &[usize]| {
        let mut out = LossGrad {
            loss: 0.0,
            grad_weights: vec![0.0; k * d],
            grad_biases: vec![0.0; k],
        };
        for &i in idx {
            accumulate_hinge(probe, acts.row(i), labels[i], &mut out);
        }
        finish(probe, &mut out, idx.len(), cfg.l2);
        out
    };
    let trained = fit(init, &split.train, cfg, grad, |probe| {
        grad(probe, &split.train).loss
    });
    Ok(WeakProbeFit {
        probe: trained.probe,
        history: trained.history,
        warnings,
    })
}
