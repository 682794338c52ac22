// SPDX-License-Identifier: MIT OR Apache-2.0

//! Dataset model: the bundle of context activations and restricted
//! next-token distributions that every probe consumes.
//!
//! A dataset is one relation under one query paraphrase for one model. It is
//! fully decoupled from the language model that produced it; see [`io`] for
//! the directory format.

mod io;
mod split;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use io::{load_dataset, save_dataset, write_atomic, FORMAT_VERSION};
pub use split::{make_split, permute_for_baseline, permute_rows, Split};

use crate::error::{Error, Result};
use crate::kernel::Distribution;
use crate::matrix::Matrix;

/// Row sums of stored reference distributions must be within this of one.
pub const PROB_SUM_TOL: f64 = 1e-5;

/// Ordered, unique answer labels of a query. Every array indexed by answer
/// uses this order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct TokenSet {
    labels: Vec<String>,
}

impl TokenSet {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        if labels.len() < 2 {
            return Err(Error::invalid(format!(
                "token set needs at least 2 labels, got {}",
                labels.len()
            )));
        }
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(Error::invalid(format!("duplicate token label '{l}'")));
            }
        }
        Ok(Self { labels })
    }

    /// Labels `y0, y1, ...`.
    pub fn numbered(k: usize) -> Result<Self> {
        Self::new((0..k).map(|i| format!("y{i}")).collect())
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn k(&self) -> usize {
        self.labels.len()
    }
}

impl TryFrom<Vec<String>> for TokenSet {
    type Error = Error;

    fn try_from(labels: Vec<String>) -> Result<Self> {
        Self::new(labels)
    }
}

impl From<TokenSet> for Vec<String> {
    fn from(t: TokenSet) -> Self {
        t.labels
    }
}

/// Human-readable description of a dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub source_model: String,
    pub relation_name: String,
    pub paraphrase_id: String,
    pub token_set: TokenSet,
    pub num_examples: usize,
    pub hidden_dim: usize,
    pub layer_indices: Vec<usize>,
    pub has_joint_activations: bool,
    pub has_unembedding: bool,
    pub has_lre_payload: bool,
    /// Layers covered by the LRE payload, in file order.
    #[serde(default)]
    pub lre_layers: Vec<usize>,
    /// Exemplars per LRE layer.
    #[serde(default)]
    pub lre_exemplars: usize,
    pub split_seed: u64,
    pub train_fraction: f64,
    /// Ground-truth answer index per example, `-1` when unavailable.
    pub gt_labels: Vec<i64>,
    /// CRC-32 of every binary file, keyed by path relative to the dataset root.
    pub file_checksums: BTreeMap<String, u32>,
}

/// Averaged-Taylor payload for one layer: `n` Jacobians (d×d) and offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct LreLayerPayload {
    pub jacobians: Vec<Matrix>,
    /// `n × d`, one offset per exemplar.
    pub offsets: Matrix,
}

/// Per-layer context activations plus the model's restricted next-token
/// distributions and optional extras. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeDataset {
    pub manifest: Manifest,
    /// Layer → `N × d` final-position hidden states of the context alone.
    pub activations: BTreeMap<usize, Matrix>,
    /// `N × k` restricted next-token distributions of the query-prompted input.
    pub reference_probs: Matrix,
    /// `k × d` unembedding rows of the token set.
    pub unembedding: Option<Matrix>,
    /// Layer → `N × d` hidden states of the query-prompted input.
    pub joint_activations: Option<BTreeMap<usize, Matrix>>,
    pub lre_payload: Option<BTreeMap<usize, LreLayerPayload>>,
}

/// One failed invariant, with where it happened.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub location: String,
    pub description: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.description)
    }
}

impl ProbeDataset {
    /// Builds a dataset from its parts and fills in manifest bookkeeping
    /// (counts, flags, layer list, checksums).
    #[allow(clippy::too_many_arguments)]
    pub fn assemble(
        source_model: impl Into<String>,
        relation_name: impl Into<String>,
        paraphrase_id: impl Into<String>,
        token_set: TokenSet,
        activations: BTreeMap<usize, Matrix>,
        reference_probs: Matrix,
        gt_labels: Vec<i64>,
        unembedding: Option<Matrix>,
        joint_activations: Option<BTreeMap<usize, Matrix>>,
        lre_payload: Option<BTreeMap<usize, LreLayerPayload>>,
    ) -> Self {
        let num_examples = reference_probs.rows();
        let hidden_dim = activations.values().next().map_or(0, Matrix::cols);
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            source_model: source_model.into(),
            relation_name: relation_name.into(),
            paraphrase_id: paraphrase_id.into(),
            token_set,
            num_examples,
            hidden_dim,
            layer_indices: activations.keys().copied().collect(),
            has_joint_activations: joint_activations.is_some(),
            has_unembedding: unembedding.is_some(),
            has_lre_payload: lre_payload.is_some(),
            lre_layers: lre_payload
                .as_ref()
                .map(|p| p.keys().copied().collect())
                .unwrap_or_default(),
            lre_exemplars: lre_payload
                .as_ref()
                .and_then(|p| p.values().next())
                .map_or(0, |p| p.jacobians.len()),
            split_seed: 0,
            train_fraction: 0.8,
            gt_labels,
            file_checksums: BTreeMap::new(),
        };
        let mut ds = Self {
            manifest,
            activations,
            reference_probs,
            unembedding,
            joint_activations,
            lre_payload,
        };
        ds.refresh_checksums();
        ds
    }

    pub fn num_examples(&self) -> usize {
        self.manifest.num_examples
    }

    pub fn hidden_dim(&self) -> usize {
        self.manifest.hidden_dim
    }

    pub fn k(&self) -> usize {
        self.manifest.token_set.k()
    }

    pub fn token_set(&self) -> &TokenSet {
        &self.manifest.token_set
    }

    pub fn gt_labels(&self) -> &[i64] {
        &self.manifest.gt_labels
    }

    /// `true` when at least one ground-truth label is available.
    pub fn has_gt(&self) -> bool {
        self.manifest.gt_labels.iter().any(|&l| l >= 0)
    }

    pub fn layer(&self, layer: usize) -> Result<&Matrix> {
        self.activations
            .get(&layer)
            .ok_or(Error::MissingLayer(layer))
    }

    /// Reference rows as `f64` distributions, renormalized exactly.
    pub fn reference_distributions(&self) -> Vec<Distribution> {
        (0..self.reference_probs.rows())
            .map(|i| reference_row(self.reference_probs.row(i)))
            .collect()
    }

    /// Recomputes `manifest.file_checksums` from the current contents.
    pub fn refresh_checksums(&mut self) {
        self.manifest.file_checksums = io::binary_files(self)
            .into_iter()
            .map(|(name, bytes)| (name, crc32fast::hash(&bytes)))
            .collect();
    }

    /// Every violated invariant; empty when the dataset is well formed.
    pub fn validate(&self) -> Vec<Violation> {
        validate(self)
    }
}

pub(crate) fn reference_row(row: &[f32]) -> Distribution {
    let probs: Vec<f64> = row.iter().map(|&p| f64::from(p).max(0.0)).collect();
    let sum: f64 = probs.iter().sum();
    if sum > 0.0 {
        Distribution::new(probs.iter().map(|p| p / sum).collect::<Vec<_>>())
            .unwrap_or_else(|_| Distribution::uniform(row.len()))
    } else {
        Distribution::uniform(row.len())
    }
}

fn violation(location: impl Into<String>, description: impl Into<String>) -> Violation {
    Violation {
        location: location.into(),
        description: description.into(),
    }
}

fn check_matrix(
    out: &mut Vec<Violation>,
    location: &str,
    m: &Matrix,
    rows: usize,
    cols: usize,
) {
    if m.rows() != rows || m.cols() != cols {
        out.push(violation(
            location,
            format!("shape {}x{}, expected {rows}x{cols}", m.rows(), m.cols()),
        ));
    }
    if let Some((r, c)) = m.first_non_finite() {
        out.push(violation(
            format!("{location} row {r} col {c}"),
            "non-finite value",
        ));
    }
}

/// Checks every dataset invariant.
pub fn validate(ds: &ProbeDataset) -> Vec<Violation> {
    let mut out = Vec::new();
    let m = &ds.manifest;
    let (n, d, k) = (m.num_examples, m.hidden_dim, m.token_set.k());

    if m.format_version != FORMAT_VERSION {
        out.push(violation(
            "manifest.format_version",
            format!("unsupported version {}", m.format_version),
        ));
    }
    if !(m.train_fraction > 0.0 && m.train_fraction < 1.0) {
        out.push(violation(
            "manifest.train_fraction",
            format!("{} is outside (0, 1)", m.train_fraction),
        ));
    }
    let keys: Vec<usize> = ds.activations.keys().copied().collect();
    if keys != m.layer_indices {
        out.push(violation(
            "manifest.layer_indices",
            format!("{:?} does not match stored layers {keys:?}", m.layer_indices),
        ));
    }
    if ds.activations.is_empty() {
        out.push(violation("activations", "no layers"));
    }
    for (layer, acts) in &ds.activations {
        check_matrix(&mut out, &format!("activations layer {layer}"), acts, n, d);
    }

    let refs = &ds.reference_probs;
    if refs.rows() != n || refs.cols() != k {
        out.push(violation(
            "reference_probs",
            format!("shape {}x{}, expected {n}x{k}", refs.rows(), refs.cols()),
        ));
    } else {
        for i in 0..n {
            let row = refs.row(i);
            if let Some(p) = row.iter().find(|p| !p.is_finite() || **p < 0.0) {
                out.push(violation(
                    format!("reference_probs row {i}"),
                    format!("invalid probability {p}"),
                ));
                continue;
            }
            let sum: f64 = row.iter().map(|&p| f64::from(p)).sum();
            if (sum - 1.0).abs() > PROB_SUM_TOL {
                out.push(violation(
                    format!("reference_probs row {i}"),
                    format!("sums to {sum}"),
                ));
            }
        }
    }

    if m.gt_labels.len() != n {
        out.push(violation(
            "manifest.gt_labels",
            format!("length {}, expected {n}", m.gt_labels.len()),
        ));
    }
    for (i, &l) in m.gt_labels.iter().enumerate() {
        if l < -1 || l >= k as i64 {
            out.push(violation(
                format!("manifest.gt_labels[{i}]"),
                format!("label {l} out of range [-1, {k})"),
            ));
        }
    }

    if m.has_unembedding != ds.unembedding.is_some() {
        out.push(violation("manifest.has_unembedding", "flag disagrees with payload"));
    }
    if let Some(u) = &ds.unembedding {
        check_matrix(&mut out, "unembedding", u, k, d);
    }

    if m.has_joint_activations != ds.joint_activations.is_some() {
        out.push(violation(
            "manifest.has_joint_activations",
            "flag disagrees with payload",
        ));
    }
    if let Some(joint) = &ds.joint_activations {
        let joint_keys: Vec<usize> = joint.keys().copied().collect();
        if joint_keys != m.layer_indices {
            out.push(violation(
                "joint",
                format!("layers {joint_keys:?} do not match {:?}", m.layer_indices),
            ));
        }
        for (layer, acts) in joint {
            check_matrix(&mut out, &format!("joint layer {layer}"), acts, n, d);
        }
    }

    if m.has_lre_payload != ds.lre_payload.is_some() {
        out.push(violation("manifest.has_lre_payload", "flag disagrees with payload"));
    }
    if let Some(payload) = &ds.lre_payload {
        let lre_keys: Vec<usize> = payload.keys().copied().collect();
        if lre_keys != m.lre_layers {
            out.push(violation(
                "manifest.lre_layers",
                format!("{:?} does not match payload layers {lre_keys:?}", m.lre_layers),
            ));
        }
        if m.lre_exemplars == 0 {
            out.push(violation("manifest.lre_exemplars", "must be at least 1"));
        }
        for (layer, p) in payload {
            if p.jacobians.len() != m.lre_exemplars {
                out.push(violation(
                    format!("lre layer {layer}"),
                    format!(
                        "{} jacobians, expected {}",
                        p.jacobians.len(),
                        m.lre_exemplars
                    ),
                ));
            }
            for (j, jac) in p.jacobians.iter().enumerate() {
                check_matrix(&mut out, &format!("lre layer {layer} jacobian {j}"), jac, d, d);
            }
            check_matrix(
                &mut out,
                &format!("lre layer {layer} offsets"),
                &p.offsets,
                m.lre_exemplars,
                d,
            );
        }
    }
    out
}
