// SPDX-License-Identifier: MIT OR Apache-2.0

//! Probing methods.
//!
//! - [`train_klrp`]: softmax-linear probe fitted by minimizing mean
//!   `KL(reference ‖ probe)`.
//! - [`train_weak_probe`]: max-margin linear probe fitted to the argmax of
//!   the references only.
//! - [`train_random_baseline`]: the KL probe fitted on row-permuted
//!   activations (null hypothesis).
//! - [`lre_build`] / [`lre_predict`]: linear relational embedding operator
//!   mapping context states to query states, read out through the
//!   unembedding.

mod adam;
mod io;
mod klrp;
mod linear;
mod lre;
mod weak;

use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use io::{load_lre, load_probe, save_lre, save_probe, ProbeManifest};
pub use klrp::{
    evaluate_predictions, evaluate_probe, kl_loss_and_gradient, train_klrp,
    train_random_baseline, Example, LossGrad, TrainedProbe,
};
pub use linear::LinearProbe;
pub use lre::{
    evaluate_lre, lre_build, lre_build_from_payload, lre_predict, truncate_rank, LreOperator,
};
pub use weak::{hinge_loss_and_gradient, train_weak_probe, WeakProbeFit};

/// Training loss a probe is fitted with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Kl,
    Hinge,
}

/// Optimizer and stopping settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Stop once the training loss improved by less than `plateau_tolerance`
    /// over this many epochs.
    pub plateau_patience: usize,
    pub plateau_tolerance: f64,
    pub objective: Objective,
    /// L2 penalty on the weights (hinge objective only).
    pub l2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            max_epochs: 4000,
            batch_size: 256,
            seed: 0,
            plateau_patience: 10,
            plateau_tolerance: 1e-5,
            objective: Objective::Kl,
            l2: 1e-4,
        }
    }
}

impl TrainConfig {
    /// Defaults for the KL probe.
    pub fn klrp() -> Self {
        Self::default()
    }

    /// Defaults for the hinge (argmax) probe.
    pub fn weak() -> Self {
        Self {
            objective: Objective::Hinge,
            ..Self::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_objective(mut self, objective: Objective) -> Self {
        self.objective = objective;
        self
    }

    pub(crate) fn check(&self) -> crate::Result<()> {
        let ok = self.learning_rate > 0.0
            && self.max_epochs > 0
            && self.batch_size > 0
            && self.plateau_patience > 0
            && self.plateau_tolerance > 0.0
            && self.l2 >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(crate::Error::invalid(format!("invalid training config {self:?}")))
        }
    }
}
