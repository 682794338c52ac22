// SPDX-License-Identifier: MIT OR Apache-2.0

use proptest::prelude::*;

use relprobe_core::analysis::dataset_split;
use relprobe_core::dataset::{load_dataset, make_split, permute_for_baseline, save_dataset, ProbeDataset, TokenSet};
use relprobe_core::kernel::{argmax, css, entropy_normalized, kl_divergence, macro_f1, mean_distribution, restrict, softmax};
use relprobe_core::probes::{evaluate_lre, evaluate_probe, lre_build_from_payload, train_klrp, TrainConfig};
use relprobe_core::synth::{generate, SynthKind, SynthSpec};
use relprobe_core::{Distribution, Matrix, ProbeKind};

fn dist(k: usize) -> impl Strategy<Value = Distribution> {
    prop::collection::vec(-8.0f64..8.0, k).prop_map(|z| softmax(&z))
}

fn dist_pair() -> impl Strategy<Value = (Distribution, Distribution)> {
    (2usize..10).prop_flat_map(|k| (dist(k), dist(k)))
}

fn synth_kind() -> impl Strategy<Value = SynthKind> {
    prop_oneof![
        Just(SynthKind::PlantedLinear),
        Just(SynthKind::Xor),
        Just(SynthKind::Collapsed),
        Just(SynthKind::TautologyBiased),
    ]
}

fn small_spec() -> impl Strategy<Value = SynthSpec> {
    (synth_kind(), 2usize..6, 2usize..10, 0usize..40, any::<u64>(), any::<bool>()).prop_map(|(kind, k, d, extra, seed, decoy)| {
        let k = if kind == SynthKind::Xor { 2 } else { k };
        let spec = SynthSpec::new(kind, 2 * k + extra, d, k, seed);
        if decoy {
            spec.with_decoy()
        } else {
            spec
        }
    })
}

fn nh(p: &Distribution) -> f64 {
    let k = p.len() as f64;
    -p.probs().iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln() / k.ln()).sum::<f64>()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn kl_is_nonnegative((p, q) in dist_pair()) {
        prop_assert!(kl_divergence(&p, &q) >= 0.0);
        prop_assert_eq!(kl_divergence(&p, &p), 0.0);
    }
}

proptest! {
    #[test]
    fn kl_zero_only_for_equal_inputs((p, q) in dist_pair()) {
        let gap = p.probs().iter().zip(q.probs()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if gap > 1e-6 {
            prop_assert!(kl_divergence(&p, &q) > 0.0);
        }
    }

    #[test]
    fn softmax_shift_invariance(z in prop::collection::vec(-30.0f64..30.0, 1..12), c in -500.0f64..500.0) {
        let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
        let (a, b) = (softmax(&z), softmax(&shifted));
        for (x, y) in a.probs().iter().zip(b.probs()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn css_bounds_and_gap_identity(dists in (2usize..6).prop_flat_map(|k| prop::collection::vec(dist(k), 1..20))) {
        let score = css(&dists).unwrap();
        prop_assert!((0.0..=1.0).contains(&score));
        let mean = mean_distribution(&dists).unwrap();
        let mean_h = dists.iter().map(nh).sum::<f64>() / dists.len() as f64;
        let direct = 1.0 - (nh(&mean) - mean_h);
        prop_assert!((score - direct.clamp(0.0, 1.0)).abs() <= 1e-9, "{} vs {}", score, direct);
    }

    #[test]
    fn css_of_identical_inputs_is_one(p in (2usize..8).prop_flat_map(dist), n in 1usize..20) {
        let score = css(&vec![p; n]).unwrap();
        prop_assert!((score - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn normalized_entropy_in_unit_interval(p in (2usize..12).prop_flat_map(dist)) {
        let h = entropy_normalized(&p);
        prop_assert!((0.0..=1.0).contains(&h));
        if p.max_prob() < 1.0 - 1e-9 {
            prop_assert!(h > 0.0);
        }
        let uniform = 1.0 / p.len() as f64;
        if p.probs().iter().any(|&x| (x - uniform).abs() > 1e-6) {
            prop_assert!(h < 1.0);
        }
    }

    #[test]
    fn restriction_preserves_argmax(v in prop::collection::vec(1e-9f64..1.0, 2..10)) {
        let r = restrict(&v).unwrap();
        prop_assert_eq!(r.argmax(), argmax(&v));
    }

    #[test]
    fn macro_f1_bounds(pairs in prop::collection::vec((0usize..4, 0i64..4), 1..60)) {
        let (pred, truth): (Vec<usize>, Vec<i64>) = pairs.into_iter().unzip();
        let f = macro_f1(&pred, &truth, 4).unwrap();
        prop_assert!((0.0..=1.0).contains(&f));
        let perfect: Vec<usize> = truth.iter().map(|&t| t as usize).collect();
        prop_assert_eq!(macro_f1(&perfect, &truth, 4).unwrap(), 1.0);
    }

    #[test]
    fn split_sizes_and_determinism(n in 2usize..500, frac in 0.05f64..0.95, seed in any::<u64>()) {
        let train = (frac * n as f64).round() as usize;
        if train == 0 || train == n {
            prop_assert!(make_split(n, frac, seed).is_err());
            return Ok(());
        }
        let s = make_split(n, frac, seed).unwrap();
        prop_assert_eq!(s.train.len(), train);
        prop_assert_eq!(s.train.len() + s.eval.len(), n);
        let mut all: Vec<usize> = s.train.iter().chain(&s.eval).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(s, make_split(n, frac, seed).unwrap());
    }
}

fn sorted_rows(m: &Matrix) -> Vec<Vec<u32>> {
    let mut rows: Vec<Vec<u32>> = (0..m.rows()).map(|i| m.row(i).iter().map(|v| v.to_bits()).collect()).collect();
    rows.sort();
    rows
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn save_load_bit_identical(spec in small_spec()) {
        let (ds, _) = generate(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        prop_assert_eq!(&back, &ds);
        for (l, m) in &ds.activations {
            prop_assert!(back.activations[l].bit_eq(m));
        }
        prop_assert!(back.reference_probs.bit_eq(&ds.reference_probs));
    }

    #[test]
    fn single_byte_corruption_detected(spec in small_spec(), file_pick in any::<prop::sample::Index>(), pos in any::<prop::sample::Index>(), flip in 1u8..=255) {
        let (ds, _) = generate(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let files: Vec<&String> = ds.manifest.file_checksums.keys().collect();
        let path = dir.path().join(file_pick.get(&files));
        let mut bytes = std::fs::read(&path).unwrap();
        let i = pos.index(bytes.len());
        bytes[i] ^= flip;
        std::fs::write(&path, bytes).unwrap();
        prop_assert!(
            matches!(load_dataset(dir.path()), Err(relprobe_core::Error::Checksum { .. })),
            "corruption of {:?} not reported as checksum failure", path
        );
    }

    #[test]
    fn baseline_permutation_preserves_rows(spec in small_spec(), seed in any::<u64>()) {
        let (ds, _) = generate(&spec).unwrap();
        let shuffled = permute_for_baseline(&ds, seed);
        prop_assert!(shuffled.reference_probs.bit_eq(&ds.reference_probs));
        prop_assert_eq!(shuffled.gt_labels(), ds.gt_labels());
        for (l, m) in &ds.activations {
            prop_assert_eq!(sorted_rows(&shuffled.activations[l]), sorted_rows(m));
        }
        prop_assert!(shuffled.validate().is_empty());
    }

    #[test]
    fn generation_is_reproducible(spec in small_spec()) {
        let (a, oa) = generate(&spec).unwrap();
        let (b, ob) = generate(&spec).unwrap();
        prop_assert_eq!(a, b);
        prop_assert_eq!(oa, ob);
    }
}

fn fast_cfg(seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-2,
        max_epochs: 60,
        ..TrainConfig::klrp()
    }
    .with_seed(seed)
}

/// Reorders the answer tokens by `sigma`: new column `j` is old column
/// `sigma[j]`.
fn relabel(ds: &ProbeDataset, sigma: &[usize]) -> ProbeDataset {
    let k = ds.k();
    let mut out = ds.clone();
    let labels: Vec<String> = sigma.iter().map(|&s| ds.token_set().labels()[s].clone()).collect();
    out.manifest.token_set = TokenSet::new(labels).unwrap();
    let mut refs = Matrix::zeros(ds.num_examples(), k);
    for i in 0..ds.num_examples() {
        for (j, &s) in sigma.iter().enumerate() {
            refs.row_mut(i)[j] = ds.reference_probs.get(i, s);
        }
    }
    out.reference_probs = refs;
    let inverse: Vec<i64> = (0..k).map(|old| sigma.iter().position(|&s| s == old).unwrap() as i64).collect();
    out.manifest.gt_labels = ds.gt_labels().iter().map(|&g| if g < 0 { g } else { inverse[g as usize] }).collect();
    out.unembedding = None;
    out.manifest.has_unembedding = false;
    out.lre_payload = None;
    out.manifest.has_lre_payload = false;
    out.manifest.lre_layers.clear();
    out.manifest.lre_exemplars = 0;
    out.refresh_checksums();
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn training_is_seed_deterministic(seed in any::<u64>(), data_seed in 0u64..1000) {
        let (ds, _) = generate(&SynthSpec::new(SynthKind::PlantedLinear, 120, 6, 3, data_seed)).unwrap();
        let split = dataset_split(&ds).unwrap();
        let a = train_klrp(&ds, 0, &split, &fast_cfg(seed)).unwrap();
        let b = train_klrp(&ds, 0, &split, &fast_cfg(seed)).unwrap();
        let bits = |p: &relprobe_core::probes::LinearProbe| -> Vec<u64> {
            p.weights.iter().chain(&p.biases).map(|v| v.to_bits()).collect()
        };
        prop_assert_eq!(bits(&a.probe), bits(&b.probe));
        prop_assert_eq!(a.history, b.history);
    }

    #[test]
    fn relabelling_permutes_probe_rows(data_seed in 0u64..1000, sigma in Just(vec![0usize, 1, 2]).prop_shuffle()) {
        let (ds, _) = generate(&SynthSpec::new(SynthKind::PlantedLinear, 150, 5, 3, data_seed)).unwrap();
        let rel = relabel(&ds, &sigma);
        prop_assert!(rel.validate().is_empty());
        let split = dataset_split(&ds).unwrap();
        let a = train_klrp(&ds, 0, &split, &fast_cfg(1)).unwrap().probe;
        let b = train_klrp(&rel, 0, &split, &fast_cfg(1)).unwrap().probe;
        for (j, &s) in sigma.iter().enumerate() {
            for (x, y) in b.weight_row(j).iter().zip(a.weight_row(s)) {
                prop_assert!((x - y).abs() <= 1e-9);
            }
            prop_assert!((b.biases[j] - a.biases[s]).abs() <= 1e-9);
        }
        let ma = evaluate_probe(&a, &ds, &split.eval, ProbeKind::Klrp).unwrap();
        let mb = evaluate_probe(&b, &rel, &split.eval, ProbeKind::Klrp).unwrap();
        prop_assert!((ma.d_kl - mb.d_kl).abs() <= 1e-9);
        prop_assert!((ma.f1_llm - mb.f1_llm).abs() <= 1e-12);
        prop_assert!((ma.f1_gt.unwrap() - mb.f1_gt.unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn strong_implies_weak(data_seed in 0u64..1000, k in 2usize..6, d in 2usize..12) {
        let (ds, oracle) = generate(&SynthSpec::new(SynthKind::PlantedLinear, 60 + 10 * k, d, k, data_seed)).unwrap();
        let split = dataset_split(&ds).unwrap();
        let planted = evaluate_probe(oracle.planted_probe.as_ref().unwrap(), &ds, &split.eval, ProbeKind::Klrp).unwrap();
        let op = lre_build_from_payload(&ds, 0, 1.0, d, None).unwrap();
        let lre = evaluate_lre(&op, &ds, &split.eval).unwrap();
        for m in [planted, lre] {
            if m.d_kl <= 1e-6 {
                prop_assert_eq!(m.f1_llm, 1.0);
            }
        }
    }
}

#[test]
fn decoy_layer_is_no_better_than_constant() {
    let (ds, oracle) = generate(&SynthSpec::new(SynthKind::PlantedLinear, 2000, 64, 3, 1).with_decoy()).unwrap();
    let split = dataset_split(&ds).unwrap();
    let fit = train_klrp(&ds, 1, &split, &TrainConfig::klrp()).unwrap();
    let m = evaluate_probe(&fit.probe, &ds, &split.eval, ProbeKind::Klrp).unwrap();
    let rel = (m.d_kl - oracle.best_constant_kl).abs() / oracle.best_constant_kl;
    assert!(rel <= 0.10, "decoy d_KL {} vs best constant {}", m.d_kl, oracle.best_constant_kl);
}

#[test]
fn trained_probe_close_to_planted_optimum() {
    let (ds, oracle) = generate(&SynthSpec::new(SynthKind::PlantedLinear, 2000, 64, 3, 1)).unwrap();
    let split = dataset_split(&ds).unwrap();
    let planted = oracle.planted_probe.unwrap();
    let train_refs = ds.reference_distributions();
    let acts = ds.layer(0).unwrap();
    let train_loss = split
        .train
        .iter()
        .map(|&i| kl_divergence(&train_refs[i], &softmax(&planted.logits(acts.row(i)).unwrap())))
        .sum::<f64>()
        / split.train.len() as f64;
    assert!(train_loss <= 1e-9, "{train_loss}");
    let fit = train_klrp(&ds, 0, &split, &TrainConfig::klrp()).unwrap();
    let got = evaluate_probe(&fit.probe, &ds, &split.eval, ProbeKind::Klrp).unwrap();
    let best = evaluate_probe(&planted, &ds, &split.eval, ProbeKind::Klrp).unwrap();
    assert!(got.d_kl <= best.d_kl + 0.01);
}
