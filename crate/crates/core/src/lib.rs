// SPDX-License-Identifier: MIT OR Apache-2.0

//! # relprobe-core
//!
//! Tests whether a language model's next-token behaviour under a query is a
//! linear function of its context-only hidden states.
//!
//! Inputs are [`dataset::ProbeDataset`] bundles: per-layer context
//! activations paired with the model's query-prompted next-token
//! distributions restricted to a small answer set. On top of that this crate
//! provides
//!
//! - [`kernel`]: softmax, restriction, normalized entropy, KL, the
//!   collapse-on-simplex score and macro-F1,
//! - [`probes`]: the KL-trained probe, the argmax (hinge) probe, the
//!   permutation baseline and linear relational embedding operators,
//! - [`synth`]: synthetic datasets with closed-form answers,
//! - [`analysis`]: layer sweeps, LRE grid search, paraphrase comparison,
//!   LDA projections, simplex coordinates and histograms,
//! - [`report`]: deterministic CSV/JSON tables and SVG figures.

pub mod analysis;
pub mod dataset;
pub mod error;
pub mod kernel;
pub mod matrix;
pub mod probes;
pub mod report;
pub mod synth;

pub use error::{Error, Result};
pub use kernel::{Distribution, MetricsRecord, ProbeKind};
pub use matrix::Matrix;
