// SPDX-License-Identifier: MIT OR Apache-2.0

//! Experiment orchestration on top of the probes: layer sweeps, LRE grid
//! search, paraphrase comparison and the geometric summaries behind the
//! figures (LDA projections, simplex coordinates, max-probability
//! histograms).

mod grid;
mod lda;
mod paraphrase;
mod simplex;
mod sweep;

pub use grid::{lre_grid_search, GridRow, GridSearchResult, GridSpec};
pub use lda::{lda_project, LdaProjection};
pub use paraphrase::{compare_paraphrases, ParaphraseRow};
pub use simplex::{max_prob_histogram, simplex_coords, MaxProbHistogram};
pub use sweep::{
    layer_sweep, percent_normalize, MetricRanges, Normalization, SweepConfig, SweepResult,
};

use crate::dataset::{make_split, ProbeDataset, Split};
use crate::Result;

/// The train/eval split recorded in a dataset's manifest.
pub fn dataset_split(ds: &ProbeDataset) -> Result<Split> {
    make_split(
        ds.num_examples(),
        ds.manifest.train_fraction,
        ds.manifest.split_seed,
    )
}

/// Runs `f` over `items`, in parallel when the `parallel` feature is on;
/// results keep the input order either way.
pub(crate) fn ordered_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}
