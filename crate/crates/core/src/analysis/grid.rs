// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use super::{dataset_split, ordered_map};
use crate::dataset::ProbeDataset;
use crate::error::{Error, Result};
use crate::probes::{evaluate_lre, lre_build_from_payload};

/// Hyper-parameter grid for LRE operators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub layers: Vec<usize>,
    pub betas: Vec<f64>,
    pub ranks: Vec<usize>,
    /// Fraction of the training split used for scoring.
    pub subset_fraction: f64,
    pub exemplars: usize,
}

impl GridSpec {
    /// `β ∈ {0.5, 1.0, …, 5.0}`, `ρ ∈ {8, 16, 32, 64, 100}`, 10% subset,
    /// five exemplars.
    pub fn with_layers(layers: Vec<usize>) -> Self {
        Self {
            layers,
            betas: (1..=10).map(|i| 0.5 * i as f64).collect(),
            ranks: vec![8, 16, 32, 64, 100],
            subset_fraction: 0.10,
            exemplars: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub layer: usize,
    pub beta: f64,
    /// Requested rank; ranks above `d` are evaluated at `d`.
    pub rank: usize,
    pub f1_llm: f64,
    pub d_kl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    /// Layer-major, then β, then ρ, in grid order.
    pub table: Vec<GridRow>,
    /// Highest F1(LLM); ties go to the lower d_KL, then to grid order.
    pub best: GridRow,
}

/// Exhaustive LRE grid search scored on the first `subset_fraction` of the
/// dataset's training split.
pub fn lre_grid_search(ds: &ProbeDataset, grid: &GridSpec) -> Result<GridSearchResult> {
    if grid.layers.is_empty() || grid.betas.is_empty() || grid.ranks.is_empty() {
        return Err(Error::invalid("empty LRE grid"));
    }
    if !(grid.subset_fraction > 0.0 && grid.subset_fraction <= 1.0) {
        return Err(Error::invalid("subset fraction outside (0, 1]"));
    }
    for &layer in &grid.layers {
        ds.layer(layer)?;
        if !ds.lre_payload.as_ref().is_some_and(|p| p.contains_key(&layer)) {
            return Err(Error::MissingPayload(format!("LRE payload for layer {layer}")));
        }
    }
    let split = dataset_split(ds)?;
    let take = ((grid.subset_fraction * split.train.len() as f64).ceil() as usize)
        .clamp(1, split.train.len());
    let subset = &split.train[..take];

    let cells: Vec<(usize, f64, usize)> = grid
        .layers
        .iter()
        .flat_map(|&l| {
            grid.betas
                .iter()
                .flat_map(move |&b| grid.ranks.iter().map(move |&r| (l, b, r)))
        })
        .collect();
    let table = ordered_map(&cells, |&(layer, beta, rank)| {
        let op = lre_build_from_payload(ds, layer, beta, rank, Some(grid.exemplars))?;
        let m = evaluate_lre(&op, ds, subset)?;
        Ok(GridRow {
            layer,
            beta,
            rank,
            f1_llm: m.f1_llm,
            d_kl: m.d_kl,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut best = &table[0];
    for row in &table[1..] {
        if row.f1_llm > best.f1_llm || (row.f1_llm == best.f1_llm && row.d_kl < best.d_kl) {
            best = row;
        }
    }
    let best = best.clone();
    Ok(GridSearchResult { table, best })
}
