// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use super::{dataset_split, ordered_map};
use crate::dataset::{ProbeDataset, Split};
use crate::error::{Error, Result};
use crate::kernel::{css, MetricsRecord, ProbeKind};
use crate::probes::{
    evaluate_lre, evaluate_probe, lre_build_from_payload, train_klrp, train_random_baseline,
    train_weak_probe, TrainConfig,
};

/// Settings for every probe kind a sweep may train.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub klrp: TrainConfig,
    pub weak: TrainConfig,
    pub lre_beta: f64,
    /// `None` keeps the full rank.
    pub lre_rank: Option<usize>,
    pub lre_exemplars: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            klrp: TrainConfig::klrp(),
            weak: TrainConfig::weak(),
            lre_beta: 1.0,
            lre_rank: None,
            lre_exemplars: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    Raw,
    Percent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    /// Sorted by layer, then by probe kind.
    pub rows: Vec<MetricsRecord>,
    /// Collapse score of all references of the dataset.
    pub css: f64,
    pub normalization: Normalization,
}

/// Per-metric `(min, max)` used by [`percent_normalize`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRanges {
    pub f1_gt: (f64, f64),
    pub f1_llm: (f64, f64),
    pub d_kl: (f64, f64),
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    })
}

fn to_percent(v: f64, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        100.0 * (v - lo) / (hi - lo)
    } else {
        0.0
    }
}

fn from_percent(v: f64, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        lo + v / 100.0 * (hi - lo)
    } else {
        lo
    }
}

impl SweepResult {
    /// Row for `(layer, kind)`, if it was requested.
    pub fn get(&self, layer: usize, kind: ProbeKind) -> Option<&MetricsRecord> {
        self.rows
            .iter()
            .find(|r| r.layer == layer && r.probe_kind == kind)
    }

    /// Inverse of [`percent_normalize`].
    pub fn denormalize(&self, ranges: &MetricRanges) -> SweepResult {
        let rows = self
            .rows
            .iter()
            .map(|r| MetricsRecord {
                f1_gt: r.f1_gt.map(|v| from_percent(v, ranges.f1_gt)),
                f1_llm: from_percent(r.f1_llm, ranges.f1_llm),
                d_kl: from_percent(r.d_kl, ranges.d_kl),
                ..r.clone()
            })
            .collect();
        SweepResult {
            rows,
            css: self.css,
            normalization: Normalization::Raw,
        }
    }
}

/// Display-only min-max rescaling of each metric onto `[0, 100]` across all
/// rows of the sweep. The returned ranges invert it exactly (up to rounding).
pub fn percent_normalize(result: &SweepResult) -> (SweepResult, MetricRanges) {
    let ranges = MetricRanges {
        f1_gt: range(result.rows.iter().filter_map(|r| r.f1_gt)),
        f1_llm: range(result.rows.iter().map(|r| r.f1_llm)),
        d_kl: range(result.rows.iter().map(|r| r.d_kl)),
    };
    let rows = result
        .rows
        .iter()
        .map(|r| MetricsRecord {
            f1_gt: r.f1_gt.map(|v| to_percent(v, ranges.f1_gt)),
            f1_llm: to_percent(r.f1_llm, ranges.f1_llm),
            d_kl: to_percent(r.d_kl, ranges.d_kl),
            ..r.clone()
        })
        .collect();
    (
        SweepResult {
            rows,
            css: result.css,
            normalization: Normalization::Percent,
        },
        ranges,
    )
}

fn run_one(
    ds: &ProbeDataset,
    split: &Split,
    layer: usize,
    kind: ProbeKind,
    cfg: &SweepConfig,
    seed: u64,
) -> Result<MetricsRecord> {
    match kind {
        ProbeKind::Klrp => {
            let fit = train_klrp(ds, layer, split, &cfg.klrp.clone().with_seed(seed))?;
            evaluate_probe(&fit.probe, ds, &split.eval, kind)
        }
        ProbeKind::Weak => {
            let fit = train_weak_probe(ds, layer, split, &cfg.weak.clone().with_seed(seed))?;
            evaluate_probe(&fit.probe, ds, &split.eval, kind)
        }
        ProbeKind::Random => {
            let train_cfg = cfg.klrp.clone().with_seed(seed);
            Ok(train_random_baseline(ds, layer, split, &train_cfg, seed)?.1)
        }
        ProbeKind::Lre => {
            let rank = cfg.lre_rank.unwrap_or(ds.hidden_dim());
            let op =
                lre_build_from_payload(ds, layer, cfg.lre_beta, rank, Some(cfg.lre_exemplars))?;
            evaluate_lre(&op, ds, &split.eval)
        }
    }
}

/// Trains and evaluates every requested probe kind at every layer on the
/// dataset's split. The random baseline is always included.
pub fn layer_sweep(
    ds: &ProbeDataset,
    layers: &[usize],
    kinds: &[ProbeKind],
    cfg: &SweepConfig,
    seed: u64,
) -> Result<SweepResult> {
    for &layer in layers {
        ds.layer(layer)?;
    }
    let mut kinds = kinds.to_vec();
    kinds.push(ProbeKind::Random);
    kinds.sort();
    kinds.dedup();
    if kinds.contains(&ProbeKind::Lre) {
        let payload = ds.lre_payload.as_ref();
        if let Some(&missing) = layers
            .iter()
            .find(|l| payload.map_or(true, |p| !p.contains_key(l)))
        {
            return Err(Error::MissingPayload(format!("LRE payload for layer {missing}")));
        }
    }
    let mut layers = layers.to_vec();
    layers.sort_unstable();
    layers.dedup();

    let split = dataset_split(ds)?;
    let dataset_css = css(&ds.reference_distributions())?;
    let jobs: Vec<(usize, ProbeKind)> = layers
        .iter()
        .flat_map(|&l| kinds.iter().map(move |&k| (l, k)))
        .collect();
    let rows = ordered_map(&jobs, |&(layer, kind)| {
        run_one(ds, &split, layer, kind, cfg, seed).map(|mut r| {
            r.css = Some(dataset_css);
            r
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        rows,
        css: dataset_css,
        normalization: Normalization::Raw,
    })
}
