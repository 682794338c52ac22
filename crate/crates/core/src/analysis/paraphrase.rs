// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use super::{dataset_split, ordered_map};
use crate::dataset::ProbeDataset;
use crate::error::{Error, Result};
use crate::kernel::{MetricsRecord, ProbeKind};
use crate::probes::{evaluate_probe, train_klrp, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParaphraseRow {
    pub paraphrase_id: String,
    pub token_labels: Vec<String>,
    pub record: MetricsRecord,
}

/// Trains an independent KL probe per paraphrase at one layer, all on the
/// split of the first dataset. Token sets may differ between paraphrases;
/// only the metrics are compared.
pub fn compare_paraphrases(
    datasets: &[ProbeDataset],
    layer: usize,
    cfg: &TrainConfig,
) -> Result<Vec<ParaphraseRow>> {
    let first = datasets
        .first()
        .ok_or_else(|| Error::invalid("no paraphrase datasets"))?;
    for ds in datasets {
        if ds.num_examples() != first.num_examples() {
            return Err(Error::DimensionMismatch {
                expected: first.num_examples(),
                actual: ds.num_examples(),
            });
        }
        if ds.hidden_dim() != first.hidden_dim() {
            return Err(Error::DimensionMismatch {
                expected: first.hidden_dim(),
                actual: ds.hidden_dim(),
            });
        }
        ds.layer(layer)?;
    }
    let split = dataset_split(first)?;
    ordered_map(datasets, |ds| {
        let fit = train_klrp(ds, layer, &split, cfg)?;
        Ok(ParaphraseRow {
            paraphrase_id: ds.manifest.paraphrase_id.clone(),
            token_labels: ds.token_set().labels().to_vec(),
            record: evaluate_probe(&fit.probe, ds, &split.eval, ProbeKind::Klrp)?,
        })
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::TokenSet;
    use crate::matrix::Matrix;
    use crate::synth::{generate, SynthKind, SynthSpec};

    fn cfg() -> TrainConfig {
        TrainConfig {
            learning_rate: 1e-2,
            max_epochs: 150,
            ..TrainConfig::klrp()
        }
    }

    /// Same contexts, token order reversed and reference columns permuted
    /// to match.
    fn relabelled(ds: &ProbeDataset) -> ProbeDataset {
        let k = ds.k();
        let mut out = ds.clone();
        let mut labels = ds.token_set().labels().to_vec();
        labels.reverse();
        out.manifest.token_set = TokenSet::new(labels).unwrap();
        out.manifest.paraphrase_id = "reversed".into();
        let mut refs = Matrix::zeros(ds.num_examples(), k);
        for i in 0..ds.num_examples() {
            for y in 0..k {
                refs.row_mut(i)[y] = ds.reference_probs.get(i, k - 1 - y);
            }
        }
        out.reference_probs = refs;
        out.manifest.gt_labels = ds
            .gt_labels()
            .iter()
            .map(|&g| if g < 0 { g } else { k as i64 - 1 - g })
            .collect();
        out.unembedding = None;
        out.manifest.has_unembedding = false;
        out.lre_payload = None;
        out.manifest.has_lre_payload = false;
        out.manifest.lre_layers.clear();
        out.refresh_checksums();
        out
    }

    #[test]
    fn identical_and_relabelled_paraphrases() {
        let (ds, _) = generate(&SynthSpec::new(SynthKind::PlantedLinear, 300, 8, 3, 6)).unwrap();
        let rows = compare_paraphrases(&[ds.clone(), ds.clone()], 0, &cfg()).unwrap();
        assert_eq!(rows[0].record, rows[1].record);

        let rev = relabelled(&ds);
        assert!(rev.validate().is_empty());
        let rows = compare_paraphrases(&[ds, rev], 0, &cfg()).unwrap();
        assert_eq!(rows[1].paraphrase_id, "reversed");
        assert!((rows[0].record.d_kl - rows[1].record.d_kl).abs() < 1e-9);
        assert!((rows[0].record.f1_llm - rows[1].record.f1_llm).abs() < 1e-9);
    }

    #[test]
    fn missing_gt_rows_excluded() {
        let (ds, _) = generate(&SynthSpec::new(SynthKind::PlantedLinear, 200, 8, 3, 6)).unwrap();
        let mut no_gt = ds.clone();
        no_gt.manifest.gt_labels = vec![-1; 200];
        no_gt.manifest.paraphrase_id = "iv".into();
        let rows = compare_paraphrases(&[ds, no_gt], 0, &cfg()).unwrap();
        assert!(rows[0].record.f1_gt.is_some());
        assert!(rows[1].record.f1_gt.is_none());
        assert_eq!(rows[0].record.d_kl, rows[1].record.d_kl);
    }

    #[test]
    fn size_mismatch_rejected() {
        let (a, _) = generate(&SynthSpec::new(SynthKind::PlantedLinear, 200, 8, 3, 6)).unwrap();
        let (b, _) = generate(&SynthSpec::new(SynthKind::PlantedLinear, 100, 8, 3, 6)).unwrap();
        assert!(compare_paraphrases(&[a, b], 0, &cfg()).is_err());
    }
}
