// SPDX-License-Identifier: MIT OR Apache-2.0

//! KL-trained relational probe and the shared fitting loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Adam, LinearProbe, Objective, TrainConfig};
use crate::dataset::{permute_for_baseline, ProbeDataset, Split};
use crate::error::{Error, Result};
use crate::kernel::{
    log_softmax, macro_f1, mean_kl, softmax, Distribution, MetricsRecord, ProbeKind, PROB_FLOOR,
};
use crate::matrix::Matrix;

/// One (activation, reference) pair of a batch.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub activation: &'a [f32],
    pub reference: &'a Distribution,
}

/// Batch loss with gradients in the probe's parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    /// Row-major `k × d`.
    pub grad_weights: Vec<f64>,
    pub grad_biases: Vec<f64>,
}

impl LossGrad {
    fn zeros(k: usize, d: usize) -> Self {
        Self {
            loss: 0.0,
            grad_weights: vec![0.0; k * d],
            grad_biases: vec![0.0; k],
        }
    }

    fn scale(&mut self, s: f64) {
        self.loss *= s;
        self.grad_weights.iter_mut().for_each(|g| *g *= s);
        self.grad_biases.iter_mut().for_each(|g| *g *= s);
    }

    pub(crate) fn flat(&self) -> Vec<f64> {
        let mut g = self.grad_weights.clone();
        g.extend_from_slice(&self.grad_biases);
        g
    }
}

/// A fitted probe with its per-epoch training loss (`history[0]` is the loss
/// at initialization).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedProbe {
    pub probe: LinearProbe,
    pub history: Vec<f64>,
}

/// Batch-mean `KL(reference ‖ softmax(W x + b))` and its analytic gradient
/// `mean (softmax − reference) ⊗ [x, 1]`.
pub fn kl_loss_and_gradient(probe: &LinearProbe, batch: &[Example<'_>]) -> Result<LossGrad> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let (k, d) = (probe.k(), probe.dim);
    let mut out = LossGrad::zeros(k, d);
    for ex in batch {
        if ex.activation.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: ex.activation.len(),
            });
        }
        if ex.reference.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                actual: ex.reference.len(),
            });
        }
        accumulate_kl(probe, ex.activation, ex.reference.probs(), &mut out);
    }
    out.scale(1.0 / batch.len() as f64);
    Ok(out)
}

#[inline]
fn accumulate_kl(probe: &LinearProbe, x: &[f32], reference: &[f64], out: &mut LossGrad) {
    let d = probe.dim;
    let logits = probe.logits_unchecked(x);
    let log_q = log_softmax(&logits);
    for (y, (&r, &lq)) in reference.iter().zip(&log_q).enumerate() {
        if r > 0.0 {
            out.loss += r * (r.max(PROB_FLOOR).ln() - lq);
        }
        let delta = lq.exp() - r;
        if delta != 0.0 {
            out.grad_biases[y] += delta;
            let row = &mut out.grad_weights[y * d..(y + 1) * d];
            for (g, &xj) in row.iter_mut().zip(x) {
                *g += delta * f64::from(xj);
            }
        }
    }
}

/// Mean KL over `indices` (no gradient).
fn mean_kl_loss(probe: &LinearProbe, acts: &Matrix, refs: &[Distribution], indices: &[usize]) -> f64 {
    let total: f64 = indices
        .iter()
        .map(|&i| {
            let log_q = log_softmax(&probe.logits_unchecked(acts.row(i)));
            refs[i]
                .probs()
                .iter()
                .zip(&log_q)
                .filter(|(&r, _)| r > 0.0)
                .map(|(&r, &lq)| r * (r.max(PROB_FLOOR).ln() - lq))
                .sum::<f64>()
        })
        .sum();
    total / indices.len() as f64
}

/// Minibatch Adam from a zero-initialized probe. `batch_grad` returns the
/// loss and gradient of a batch of training indices, `full_loss` the loss
/// over all of them. Stops at `max_epochs` or on a plateau.
pub(crate) fn fit(
    mut probe: LinearProbe,
    train: &[usize],
    cfg: &TrainConfig,
    batch_grad: impl Fn(&LinearProbe, &[usize]) -> LossGrad,
    full_loss: impl Fn(&LinearProbe) -> f64,
) -> TrainedProbe {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.learning_rate, probe.weights.len() + probe.k());
    let mut params = probe.params();
    let mut order = train.to_vec();
    let mut history = vec![full_loss(&probe)];
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let grad = batch_grad(&probe, batch);
            adam.step(&mut params, &grad.flat());
            probe.set_params(&params);
        }
        history.push(full_loss(&probe));
        if epoch >= cfg.plateau_patience
            && history[epoch - cfg.plateau_patience] - history[epoch] < cfg.plateau_tolerance
        {
            break;
        }
    }
    TrainedProbe { probe, history }
}

/// Fits a KL probe at `layer` on the training side of `split`.
pub fn train_klrp(
    ds: &ProbeDataset,
    layer: usize,
    split: &Split,
    cfg: &TrainConfig,
) -> Result<TrainedProbe> {
    cfg.check()?;
    if cfg.objective != Objective::Kl {
        return Err(Error::invalid("KL probe requires the kl objective"));
    }
    if split.train.is_empty() {
        return Err(Error::EmptyTrainSplit);
    }
    let acts = ds.layer(layer)?;
    let refs = ds.reference_distributions();
    let init = LinearProbe::zeros(ds.token_set().clone(), ds.hidden_dim(), layer);
    let (k, d) = (init.k(), init.dim);
    Ok(fit(
        init,
        &split.train,
        cfg,
        |probe, batch| {
            let mut out = LossGrad::zeros(k, d);
            for &i in batch {
                accumulate_kl(probe, acts.row(i), refs[i].probs(), &mut out);
            }
            out.scale(1.0 / batch.len() as f64);
            out
        },
        |probe| mean_kl_loss(probe, acts, &refs, &split.train),
    ))
}

/// Metrics of already-computed probe distributions on the `eval` indices.
pub fn evaluate_predictions(
    ds: &ProbeDataset,
    layer: usize,
    kind: ProbeKind,
    eval: &[usize],
    predictions: &[Distribution],
) -> Result<MetricsRecord> {
    if eval.len() != predictions.len() {
        return Err(Error::DimensionMismatch {
            expected: eval.len(),
            actual: predictions.len(),
        });
    }
    if eval.is_empty() {
        return Err(Error::invalid("empty evaluation split"));
    }
    let k = ds.k();
    let all_refs = ds.reference_distributions();
    let refs: Vec<Distribution> = eval.iter().map(|&i| all_refs[i].clone()).collect();
    let pred_labels: Vec<usize> = predictions.iter().map(Distribution::argmax).collect();
    let llm_labels: Vec<i64> = refs.iter().map(|r| r.argmax() as i64).collect();
    let gt: Vec<i64> = eval.iter().map(|&i| ds.gt_labels()[i]).collect();
    let f1_gt = if gt.iter().any(|&l| l >= 0) {
        Some(macro_f1(&pred_labels, &gt, k)?)
    } else {
        None
    };
    Ok(MetricsRecord {
        layer,
        probe_kind: kind,
        f1_gt,
        f1_llm: macro_f1(&pred_labels, &llm_labels, k)?,
        d_kl: mean_kl(&refs, predictions)?,
        css: None,
    })
}

/// F1(LLM), F1(GT) and d_KL of a linear probe on the `eval` indices.
pub fn evaluate_probe(
    probe: &LinearProbe,
    ds: &ProbeDataset,
    eval: &[usize],
    kind: ProbeKind,
) -> Result<MetricsRecord> {
    let acts = ds.layer(probe.layer)?;
    if acts.cols() != probe.dim || ds.k() != probe.k() {
        return Err(Error::DimensionMismatch {
            expected: acts.cols(),
            actual: probe.dim,
        });
    }
    let preds: Vec<Distribution> = eval
        .iter()
        .map(|&i| softmax(&probe.logits_unchecked(acts.row(i))))
        .collect();
    evaluate_predictions(ds, probe.layer, kind, eval, &preds)
}

/// KL probe fitted and evaluated on the activation-shuffled copy of `ds`.
pub fn train_random_baseline(
    ds: &ProbeDataset,
    layer: usize,
    split: &Split,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(TrainedProbe, MetricsRecord)> {
    ds.layer(layer)?;
    let shuffled = permute_for_baseline(ds, seed);
    let trained = train_klrp(&shuffled, layer, split, cfg)?;
    let metrics = evaluate_probe(&trained.probe, &shuffled, &split.eval, ProbeKind::Random)?;
    Ok((trained, metrics))
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use rand::Rng;

    use super::*;
    use crate::dataset::TokenSet;
    use crate::kernel::kl_divergence;

    /// Loss through the kernel's KL, independent of the analytic path.
    fn oracle_loss(probe: &LinearProbe, xs: &[Vec<f32>], refs: &[Distribution]) -> f64 {
        xs.iter()
            .zip(refs)
            .map(|(x, r)| kl_divergence(r, &probe.predict(x).unwrap()))
            .sum::<f64>()
            / xs.len() as f64
    }

    fn finite_difference(probe: &LinearProbe, xs: &[Vec<f32>], refs: &[Distribution]) -> Vec<f64> {
        let h = 1e-5;
        let base = probe.params();
        (0..base.len())
            .map(|j| {
                let mut plus = probe.clone();
                let mut p = base.clone();
                p[j] += h;
                plus.set_params(&p);
                let mut minus = probe.clone();
                p[j] -= 2.0 * h;
                minus.set_params(&p);
                (oracle_loss(&plus, xs, refs) - oracle_loss(&minus, xs, refs)) / (2.0 * h)
            })
            .collect()
    }

    fn batch<'a>(xs: &'a [Vec<f32>], refs: &'a [Distribution]) -> Vec<Example<'a>> {
        xs.iter()
            .zip(refs)
            .map(|(x, r)| Example {
                activation: x,
                reference: r,
            })
            .collect()
    }

    #[test]
    fn zero_gradient_at_match() {
        let mut probe = LinearProbe::zeros(TokenSet::numbered(3).unwrap(), 2, 0);
        probe.weights = vec![0.5, -1.0, 0.2, 0.3, -0.7, 0.1];
        probe.biases = vec![0.1, 0.0, -0.3];
        let xs = vec![vec![1.0f32, 2.0], vec![-0.5, 0.25]];
        let refs: Vec<_> = xs.iter().map(|x| probe.predict(x).unwrap()).collect();
        let g = kl_loss_and_gradient(&probe, &batch(&xs, &refs)).unwrap();
        assert!(g.loss.abs() < 1e-15);
        assert!(g.flat().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn hand_example_matches_outer_product_and_fd() {
        let mut probe = LinearProbe::zeros(TokenSet::numbered(2).unwrap(), 2, 0);
        probe.weights = vec![0.3, -0.2, 0.1, 0.4];
        probe.biases = vec![0.05, -0.05];
        let xs = vec![vec![1.5f32, -0.5]];
        let refs = vec![Distribution::new(vec![0.7, 0.3]).unwrap()];
        let g = kl_loss_and_gradient(&probe, &batch(&xs, &refs)).unwrap();
        let q = probe.predict(&xs[0]).unwrap();
        for y in 0..2 {
            let delta = q.probs()[y] - refs[0].probs()[y];
            assert!((g.grad_biases[y] - delta).abs() < 1e-15);
            for j in 0..2 {
                let expect = delta * f64::from(xs[0][j]);
                assert!((g.grad_weights[y * 2 + j] - expect).abs() < 1e-15);
            }
        }
        let fd = finite_difference(&probe, &xs, &refs);
        for (a, f) in g.flat().iter().zip(&fd) {
            assert!((a - f).abs() < 1e-8, "{a} vs {f}");
        }
    }

    #[test]
    fn random_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let (k, d) = (rng.gen_range(2..5), rng.gen_range(1..6));
            let mut probe = LinearProbe::zeros(TokenSet::numbered(k).unwrap(), d, 0);
            probe.weights.iter_mut().for_each(|w| *w = rng.gen_range(-1.0..1.0));
            probe.biases.iter_mut().for_each(|b| *b = rng.gen_range(-1.0..1.0));
            let xs: Vec<Vec<f32>> = (0..4)
                .map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect())
                .collect();
            let refs: Vec<Distribution> = (0..4)
                .map(|_| softmax(&(0..k).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<_>>()))
                .collect();
            let g = kl_loss_and_gradient(&probe, &batch(&xs, &refs)).unwrap();
            assert!((g.loss - oracle_loss(&probe, &xs, &refs)).abs() < 1e-12);
            let fd = finite_difference(&probe, &xs, &refs);
            for (a, f) in g.flat().iter().zip(&fd) {
                let rel = (a - f).abs() / a.abs().max(f.abs()).max(1e-6);
                assert!(rel <= 1e-4, "{a} vs {f}");
            }
        }
    }

    fn collapsed_dataset() -> ProbeDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 200;
        let acts: Vec<f32> = (0..n * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let refs: Vec<f32> = (0..n).flat_map(|_| [0.6f32, 0.3, 0.1]).collect();
        ProbeDataset::assemble(
            "t",
            "r",
            "p",
            TokenSet::numbered(3).unwrap(),
            BTreeMap::from([(0, Matrix::from_vec(n, 4, acts).unwrap())]),
            Matrix::from_vec(n, 3, refs).unwrap(),
            vec![-1; n],
            None,
            None,
            None,
        )
    }

    #[test]
    fn collapsed_references_learned_by_biases() {
        let ds = collapsed_dataset();
        let split = crate::dataset::make_split(ds.num_examples(), 0.8, 1).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e-2,
            ..TrainConfig::klrp()
        };
        let fit = train_klrp(&ds, 0, &split, &cfg).unwrap();
        let m = evaluate_probe(&fit.probe, &ds, &split.eval, ProbeKind::Klrp).unwrap();
        assert!(m.d_kl <= 1e-4, "d_kl {}", m.d_kl);
        assert!(m.f1_gt.is_none());
        let max_w = fit.probe.weights.iter().fold(0.0f64, |a, w| a.max(w.abs()));
        assert!(max_w < 0.05, "weights {max_w}");
    }

    #[test]
    fn wrong_objective_and_empty_split_rejected() {
        let ds = collapsed_dataset();
        let split = crate::dataset::make_split(ds.num_examples(), 0.8, 1).unwrap();
        assert!(train_klrp(&ds, 0, &split, &TrainConfig::weak()).is_err());
        let empty = Split {
            train: vec![],
            eval: split.eval.clone(),
        };
        assert!(matches!(
            train_klrp(&ds, 0, &empty, &TrainConfig::klrp()),
            Err(Error::EmptyTrainSplit)
        ));
        assert!(matches!(
            train_klrp(&ds, 9, &split, &TrainConfig::klrp()),
            Err(Error::MissingLayer(9))
        ));
    }

    #[test]
    fn uniform_probe_against_one_hot_references() {
        let acts = Matrix::from_vec(4, 1, vec![0.0; 4]).unwrap();
        let refs = Matrix::from_vec(4, 2, vec![1., 0., 0., 1., 1., 0., 0., 1.]).unwrap();
        let ds = ProbeDataset::assemble(
            "t",
            "r",
            "p",
            TokenSet::numbered(2).unwrap(),
            BTreeMap::from([(0, acts)]),
            refs,
            vec![0, 1, 0, 1],
            None,
            None,
            None,
        );
        let probe = LinearProbe::zeros(ds.token_set().clone(), 1, 0);
        let m = evaluate_probe(&probe, &ds, &[0, 1, 2, 3], ProbeKind::Klrp).unwrap();
        assert!((m.d_kl - 2f64.ln()).abs() < 1e-12);
    }
}
