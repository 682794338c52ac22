// SPDX-License-Identifier: MIT OR Apache-2.0

//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every export takes plain numbers or a JSON string and returns a JSON
//! string. The `*_json` functions hold the logic and are usable natively.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use relprobe_core::analysis::{dataset_split, lda_project, max_prob_histogram, simplex_coords};
use relprobe_core::kernel::{css, entropy_normalized, kl_divergence, mean_distribution, softmax};
use relprobe_core::probes::{evaluate_probe, train_klrp, train_random_baseline, TrainConfig};
use relprobe_core::synth::{generate, SynthKind, SynthSpec};
use relprobe_core::{Distribution, MetricsRecord, ProbeKind};

/// Upper bound on `n · d` so a click cannot freeze the tab.
pub const MAX_CELLS: usize = 400_000;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlantedDemo {
    pub klrp: MetricsRecord,
    pub random: MetricsRecord,
    pub epochs_run: usize,
    pub css: f64,
    /// LDA coordinates of the evaluation examples.
    pub lda: Vec<[f64; 2]>,
    /// Per-example `KL(reference ‖ probe)` for the same examples.
    pub kl: Vec<f64>,
    /// Argmax of each reference.
    pub label: Vec<usize>,
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Generates a planted-linear dataset, trains the KL probe and the
/// permutation baseline, and projects the evaluation examples with LDA.
pub fn planted_demo_json(
    n: usize,
    d: usize,
    k: usize,
    noise: f64,
    seed: u64,
    epochs: usize,
    learning_rate: f64,
) -> Result<String, String> {
    if n.saturating_mul(d) > MAX_CELLS {
        return Err(format!("n * d above {MAX_CELLS}"));
    }
    let (ds, _) = generate(&SynthSpec::new(SynthKind::PlantedLinear, n, d, k, seed).with_noise(noise)).map_err(err)?;
    let split = dataset_split(&ds).map_err(err)?;
    let cfg = TrainConfig {
        learning_rate,
        max_epochs: epochs,
        ..TrainConfig::klrp()
    }
    .with_seed(seed);
    let fit = train_klrp(&ds, 0, &split, &cfg).map_err(err)?;
    let klrp = evaluate_probe(&fit.probe, &ds, &split.eval, ProbeKind::Klrp).map_err(err)?;
    let (_, random) = train_random_baseline(&ds, 0, &split, &cfg, seed).map_err(err)?;

    let refs = ds.reference_distributions();
    let acts = ds.layer(0).map_err(err)?.gather_rows(&split.eval);
    let label: Vec<usize> = split.eval.iter().map(|&i| refs[i].argmax()).collect();
    let kl = split
        .eval
        .iter()
        .enumerate()
        .map(|(row, &i)| Ok(kl_divergence(&refs[i], &softmax(&fit.probe.logits(acts.row(row))?))))
        .collect::<relprobe_core::Result<Vec<f64>>>()
        .map_err(err)?;
    let lda = match lda_project(&acts, &label, 2.min(d)) {
        Ok(p) => p.coords.iter().map(|c| [c[0], c.get(1).copied().unwrap_or(0.0)]).collect(),
        Err(_) => vec![[0.0, 0.0]; label.len()],
    };
    let demo = PlantedDemo {
        klrp,
        random,
        epochs_run: fit.history.len() - 1,
        css: css(&refs).map_err(err)?,
        lda,
        kl,
        label,
    };
    serde_json::to_string(&demo).map_err(err)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimplexReport {
    pub css: f64,
    pub mean: Vec<f64>,
    pub mean_xy: [f64; 2],
    pub entropies: Vec<f64>,
    pub xy: Vec<[f64; 2]>,
}

/// CSS, mean and per-point entropy of three-answer distributions given as a
/// JSON array of `[p0, p1, p2]`.
pub fn simplex_json(points: &str) -> Result<String, String> {
    let raw: Vec<Vec<f64>> = serde_json::from_str(points).map_err(err)?;
    if raw.is_empty() {
        return Err("no points".into());
    }
    let dists = raw
        .into_iter()
        .map(Distribution::new)
        .collect::<relprobe_core::Result<Vec<_>>>()
        .map_err(err)?;
    if dists.iter().any(|d| d.len() != 3) {
        return Err("points must have three coordinates".into());
    }
    let mean = mean_distribution(&dists).map_err(err)?;
    let xy = dists
        .iter()
        .map(|d| simplex_coords(d).map(|(x, y)| [x, y]))
        .collect::<relprobe_core::Result<Vec<_>>>()
        .map_err(err)?;
    let (mx, my) = simplex_coords(&mean).map_err(err)?;
    let report = SimplexReport {
        css: css(&dists).map_err(err)?,
        mean: mean.probs().to_vec(),
        mean_xy: [mx, my],
        entropies: dists.iter().map(entropy_normalized).collect(),
        xy,
    };
    serde_json::to_string(&report).map_err(err)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HistogramReport {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub css: f64,
}

/// Max-probability histogram of a synthetic dataset's references.
pub fn histogram_json(kind: &str, n: usize, k: usize, seed: u64, bins: usize, noise: f64) -> Result<String, String> {
    let kind: SynthKind = kind.parse().map_err(err)?;
    if n.saturating_mul(k) > MAX_CELLS {
        return Err(format!("n * k above {MAX_CELLS}"));
    }
    let (ds, _) = generate(&SynthSpec::new(kind, n, 2, k, seed).with_noise(noise)).map_err(err)?;
    let refs = ds.reference_distributions();
    let h = max_prob_histogram(&refs, bins).map_err(err)?;
    serde_json::to_string(&HistogramReport {
        edges: h.edges,
        counts: h.counts,
        css: css(&refs).map_err(err)?,
    })
    .map_err(err)
}

#[wasm_bindgen]
pub fn planted_demo(
    n: usize,
    d: usize,
    k: usize,
    noise: f64,
    seed: u32,
    epochs: usize,
    learning_rate: f64,
) -> Result<String, JsError> {
    planted_demo_json(n, d, k, noise, u64::from(seed), epochs, learning_rate).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn simplex_report(points: &str) -> Result<String, JsError> {
    simplex_json(points).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn probability_histogram(kind: &str, n: usize, k: usize, seed: u32, bins: usize, noise: f64) -> Result<String, JsError> {
    histogram_json(kind, n, k, u64::from(seed), bins, noise).map_err(|e| JsError::new(&e))
}
