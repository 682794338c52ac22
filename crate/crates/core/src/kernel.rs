// SPDX-License-Identifier: MIT OR Apache-2.0

//! Probability and metric kernel.
//!
//! Conventions used throughout the crate:
//!
//! - KL divergences are `KL(reference ‖ probe)` in nats.
//! - Normalized entropy and the collapse score use a base-`k` logarithm.
//! - Probabilities are clamped below at [`PROB_FLOOR`] before any logarithm.
//! - Argmax ties resolve to the lowest index.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower clamp applied to probabilities before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// Tolerance for simplex membership of a constructed [`Distribution`].
pub const SIMPLEX_TOL: f64 = 1e-9;

/// A probability vector over the `k` tokens of a token set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Distribution(Vec<f64>);

impl Distribution {
    /// Wraps `probs` after checking simplex membership within [`SIMPLEX_TOL`];
    /// the stored vector is renormalized to sum to one.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("empty distribution"));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::invalid(format!("invalid probability entry {p}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::invalid(format!("probabilities sum to {sum}")));
        }
        Ok(Self::normalized(probs, sum))
    }

    /// Uniform distribution over `k` tokens.
    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    /// Point mass on token `index`.
    pub fn one_hot(k: usize, index: usize) -> Self {
        let mut p = vec![0.0; k];
        p[index] = 1.0;
        Self(p)
    }

    fn normalized(mut probs: Vec<f64>, sum: f64) -> Self {
        probs.iter_mut().for_each(|p| *p /= sum);
        Self(probs)
    }

    #[inline]
    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the likeliest token (lowest index on ties).
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn max_prob(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Distribution {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Distribution::normalized(exps, sum)
}

/// `log softmax(logits)`, computed without forming the probabilities.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&z| z - lse).collect()
}

/// Renormalizes the probabilities of the selected tokens to a distribution
/// over the token set.
pub fn restrict(selected: &[f64]) -> Result<Distribution> {
    if let Some(p) = selected.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(Error::invalid(format!("invalid probability entry {p}")));
    }
    let sum: f64 = selected.iter().sum();
    if sum <= 0.0 {
        return Err(Error::DegenerateRestriction);
    }
    Ok(Distribution::normalized(selected.to_vec(), sum))
}

/// Shannon entropy with a base-`k` logarithm, `k = p.len()`; in `[0, 1]`.
pub fn entropy_normalized(p: &Distribution) -> f64 {
    let k = p.len();
    if k < 2 {
        return 0.0;
    }
    let nats: f64 = p
        .probs()
        .iter()
        .filter(|&&pi| pi > 0.0)
        .map(|&pi| -pi * pi.ln())
        .sum();
    (nats / (k as f64).ln()).clamp(0.0, 1.0)
}

/// `KL(reference ‖ probe)` in nats.
pub fn kl_divergence(reference: &Distribution, probe: &Distribution) -> f64 {
    debug_assert_eq!(reference.len(), probe.len());
    let kl: f64 = reference
        .probs()
        .iter()
        .zip(probe.probs())
        .filter(|(&r, _)| r > 0.0)
        .map(|(&r, &q)| r * (r.max(PROB_FLOOR).ln() - q.max(PROB_FLOOR).ln()))
        .sum();
    kl.max(0.0)
}

/// Mean of the per-example `KL(reference_i ‖ probe_i)`.
pub fn mean_kl(references: &[Distribution], probes: &[Distribution]) -> Result<f64> {
    if references.len() != probes.len() {
        return Err(Error::DimensionMismatch {
            expected: references.len(),
            actual: probes.len(),
        });
    }
    if references.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = references
        .iter()
        .zip(probes)
        .map(|(r, p)| kl_divergence(r, p))
        .sum();
    Ok(total / references.len() as f64)
}

/// Arithmetic mean of a collection of distributions over the same `k`.
pub fn mean_distribution(dists: &[Distribution]) -> Result<Distribution> {
    let k = dists
        .first()
        .ok_or_else(|| Error::invalid("empty distribution collection"))?
        .len();
    let mut acc = vec![0.0; k];
    for d in dists {
        if d.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                actual: d.len(),
            });
        }
        acc.iter_mut().zip(d.probs()).for_each(|(a, p)| *a += p);
    }
    let sum: f64 = acc.iter().sum();
    Ok(Distribution::normalized(acc, sum))
}

/// Collapse-on-simplex score: `1 - H_k(mean p) + mean H_k(p)`.
///
/// Close to 1 when every distribution sits at the same point of the simplex,
/// close to 0 when they spread over its corners.
pub fn css(dists: &[Distribution]) -> Result<f64> {
    let mean = mean_distribution(dists)?;
    let mean_entropy =
        dists.iter().map(entropy_normalized).sum::<f64>() / dists.len() as f64;
    Ok((1.0 - entropy_normalized(&mean) + mean_entropy).clamp(0.0, 1.0))
}

/// Unweighted mean of per-class F1.
///
/// Entries whose truth is negative (label unavailable) are dropped together
/// with their prediction. Classes that appear neither in the truth nor in the
/// predictions are left out of the average; classes predicted but absent from
/// the truth contribute 0.
pub fn macro_f1(pred: &[usize], truth: &[i64], k: usize) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            actual: pred.len(),
        });
    }
    let mut tp = vec![0usize; k];
    let mut pred_count = vec![0usize; k];
    let mut truth_count = vec![0usize; k];
    let mut effective = 0usize;
    for (&p, &t) in pred.iter().zip(truth) {
        if t < 0 {
            continue;
        }
        let t = t as usize;
        if p >= k || t >= k {
            return Err(Error::invalid(format!(
                "label out of range: pred {p}, truth {t}, k {k}"
            )));
        }
        effective += 1;
        pred_count[p] += 1;
        truth_count[t] += 1;
        if p == t {
            tp[p] += 1;
        }
    }
    if effective == 0 {
        return Err(Error::invalid("no labelled examples left for F1"));
    }
    let mut sum = 0.0;
    let mut classes = 0usize;
    for c in 0..k {
        if pred_count[c] == 0 && truth_count[c] == 0 {
            continue;
        }
        classes += 1;
        // F1 = 2TP / (2TP + FP + FN) = 2TP / (|pred| + |truth|)
        sum += 2.0 * tp[c] as f64 / (pred_count[c] + truth_count[c]) as f64;
    }
    Ok(sum / classes as f64)
}

/// Which probing method produced a [`MetricsRecord`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeKind {
    Klrp,
    Weak,
    Random,
    Lre,
}

impl ProbeKind {
    pub const ALL: [ProbeKind; 4] = [Self::Klrp, Self::Weak, Self::Random, Self::Lre];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Klrp => "klrp",
            Self::Weak => "weak",
            Self::Random => "random",
            Self::Lre => "lre",
        }
    }
}

impl std::fmt::Display for ProbeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ProbeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "klrp" | "kl-rp" => Ok(Self::Klrp),
            "weak" | "svm" => Ok(Self::Weak),
            "random" | "baseline" => Ok(Self::Random),
            "lre" => Ok(Self::Lre),
            other => Err(Error::invalid(format!("unknown probe kind '{other}'"))),
        }
    }
}

/// Evaluation metrics of one probe at one layer on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub layer: usize,
    pub probe_kind: ProbeKind,
    /// Macro-F1 against ground-truth labels; absent when no labels exist.
    pub f1_gt: Option<f64>,
    /// Macro-F1 against the model's likeliest token.
    pub f1_llm: f64,
    /// Mean `KL(reference ‖ probe)` in nats.
    pub d_kl: f64,
    pub css: Option<f64>,
}
