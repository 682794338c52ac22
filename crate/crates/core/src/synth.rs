// SPDX-License-Identifier: MIT OR Apache-2.0

//! Synthetic datasets with known answers.
//!
//! | kind               | references                                   | known answer                          |
//! |--------------------|----------------------------------------------|---------------------------------------|
//! | `planted_linear`   | `softmax(W* x + b* + noise)`                 | the planted probe; exact LRE payload  |
//! | `xor`              | one-hot by XOR of the signs of two blobs     | no linear separator                   |
//! | `collapsed`        | one fixed simplex point                      | collapse score 1                      |
//! | `tautology_biased` | Dirichlet jitter around a fixed point        | collapse score near 1                 |
//!
//! Activations are standard normal rows (XOR: Gaussian blobs). All draws come
//! from one ChaCha stream seeded by [`SynthSpec::seed`], so generation is
//! bit-reproducible.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Dirichlet, Distribution as _, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{LreLayerPayload, ProbeDataset, TokenSet};
use crate::error::{Error, Result};
use crate::kernel::{css, kl_divergence, mean_distribution, softmax, Distribution};
use crate::matrix::Matrix;
use crate::probes::LinearProbe;

/// Norm of every planted weight row (`4/√d` per coordinate).
pub const PLANTED_ROW_NORM: f64 = 4.0;
/// Standard deviation of the planted biases.
pub const PLANTED_BIAS_STD: f64 = 0.5;
/// Per-coordinate standard deviation of the XOR blobs.
pub const XOR_BLOB_STD: f64 = 0.2;
/// Dirichlet concentration of the tautology jitter around its centre.
pub const TAUTOLOGY_CONCENTRATION: f64 = 2000.0;
/// Exemplars emitted in the planted LRE payload.
pub const LRE_EXEMPLARS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    PlantedLinear,
    Xor,
    Collapsed,
    TautologyBiased,
}

impl SynthKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::PlantedLinear => "planted_linear",
            Self::Xor => "xor",
            Self::Collapsed => "collapsed",
            Self::TautologyBiased => "tautology_biased",
        }
    }
}

impl std::str::FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "planted_linear" | "planted" => Ok(Self::PlantedLinear),
            "xor" => Ok(Self::Xor),
            "collapsed" => Ok(Self::Collapsed),
            "tautology_biased" | "tautology" => Ok(Self::TautologyBiased),
            other => Err(Error::invalid(format!("unknown synthetic kind '{other}'"))),
        }
    }
}

/// Generator parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub n: usize,
    pub d: usize,
    pub k: usize,
    /// Logit-space Gaussian noise (planted_linear only).
    pub noise_sigma: f64,
    pub seed: u64,
    /// Adds layer 1 holding pure noise, unrelated to the references.
    pub decoy_layer: bool,
}

impl SynthSpec {
    pub fn new(kind: SynthKind, n: usize, d: usize, k: usize, seed: u64) -> Self {
        Self {
            kind,
            n,
            d,
            k,
            noise_sigma: 0.0,
            seed,
            decoy_layer: false,
        }
    }

    pub fn with_decoy(mut self) -> Self {
        self.decoy_layer = true;
        self
    }

    pub fn with_noise(mut self, sigma: f64) -> Self {
        self.noise_sigma = sigma;
        self
    }

    fn check(&self) -> Result<()> {
        if self.k < 2 || self.d < 2 || self.n < 2 * self.k {
            return Err(Error::invalid(format!(
                "synthetic spec needs k >= 2, d >= 2, n >= 2k (got n={}, d={}, k={})",
                self.n, self.d, self.k
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid("noise_sigma must be finite and >= 0"));
        }
        if self.kind == SynthKind::Xor && self.k != 2 {
            return Err(Error::invalid("xor datasets are binary (k = 2)"));
        }
        Ok(())
    }
}

/// Closed-form answers for a generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthOracle {
    /// `(W*, b*)`; present only for planted_linear.
    pub planted_probe: Option<LinearProbe>,
    /// Collapse score of all references.
    pub expected_css: f64,
    /// Mean KL of the references to their mean (best constant predictor).
    pub best_constant_kl: f64,
    /// Best argmax-match accuracy any linear probe can reach on layer 0.
    pub linear_f1_ceiling: f64,
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| (std * gaussian(rng)) as f32)
        .collect();
    Matrix::from_vec(rows, cols, data).expect("sized")
}

fn to_dmatrix(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_iterator(m.rows(), m.cols(), m.as_slice().iter().map(|&v| f64::from(v)))
}

/// Haar-random orthogonal matrix (QR of a Gaussian matrix with sign fix),
/// rounded to `f32`.
fn random_orthogonal(rng: &mut ChaCha8Rng, d: usize) -> Matrix {
    let g = DMatrix::from_fn(d, d, |_, _| gaussian(rng));
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for c in 0..d {
        if r[(c, c)] < 0.0 {
            q.column_mut(c).neg_mut();
        }
    }
    let data = (0..d)
        .flat_map(|i| (0..d).map(move |j| (i, j)))
        .map(|(i, j)| q[(i, j)] as f32)
        .collect();
    Matrix::from_vec(d, d, data).expect("sized")
}

fn random_simplex_point(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..k).map(|_| -rng.gen::<f64>().max(f64::MIN_POSITIVE).ln()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

fn store_probs(dists: &[Distribution], k: usize) -> Matrix {
    let data = dists
        .iter()
        .flat_map(|d| d.probs().iter().map(|&p| p as f32))
        .collect();
    Matrix::from_vec(dists.len(), k, data).expect("sized")
}

/// Generates the dataset of `spec` together with its oracle answers.
pub fn generate(spec: &SynthSpec) -> Result<(ProbeDataset, SynthOracle)> {
    spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (n, d, k) = (spec.n, spec.d, spec.k);
    let tokens = TokenSet::numbered(k)?;

    let mut planted_probe = None;
    let mut unembedding = None;
    let mut joint = None;
    let mut lre = None;
    let (acts, refs, gt): (Matrix, Vec<Distribution>, Vec<i64>) = match spec.kind {
        SynthKind::PlantedLinear => {
            // W* = U A, b* = U c: U doubles as unembedding, A and c as the
            // exact affine map from context state to query state.
            let mut u = gaussian_matrix(&mut rng, k, d, 1.0);
            for y in 0..k {
                let row = u.row_mut(y);
                let norm = row.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt();
                row.iter_mut()
                    .for_each(|v| *v = (f64::from(*v) * PLANTED_ROW_NORM / norm) as f32);
            }
            let a = random_orthogonal(&mut rng, d);
            let c_std = PLANTED_BIAS_STD / PLANTED_ROW_NORM;
            let c = gaussian_matrix(&mut rng, 1, d, c_std);
            let (ud, ad) = (to_dmatrix(&u), to_dmatrix(&a));
            let cd = to_dmatrix(&c).transpose();
            let w_star = &ud * &ad;
            let b_star = &ud * &cd;
            let probe = LinearProbe::new(
                tokens.clone(),
                d,
                0,
                (0..k).flat_map(|y| (0..d).map(move |j| (y, j))).map(|(y, j)| w_star[(y, j)]).collect(),
                b_star.iter().copied().collect(),
            )?;

            let x = gaussian_matrix(&mut rng, n, d, 1.0);
            let mut joint_rows = Vec::with_capacity(n);
            let mut refs = Vec::with_capacity(n);
            let mut gt = Vec::with_capacity(n);
            for i in 0..n {
                let xi = DMatrix::from_row_iterator(d, 1, x.row(i).iter().map(|&v| f64::from(v)));
                let h = &ad * &xi + &cd;
                joint_rows.push(h.iter().copied().collect::<Vec<f64>>());
                let clean: Vec<f64> = (&ud * &h).iter().copied().collect();
                gt.push(crate::kernel::argmax(&clean) as i64);
                let noisy: Vec<f64> = if spec.noise_sigma > 0.0 {
                    clean
                        .iter()
                        .map(|z| z + spec.noise_sigma * gaussian(&mut rng))
                        .collect()
                } else {
                    clean
                };
                refs.push(softmax(&noisy));
            }
            let payload = LreLayerPayload {
                jacobians: vec![a.clone(); LRE_EXEMPLARS],
                offsets: Matrix::from_vec(
                    LRE_EXEMPLARS,
                    d,
                    c.as_slice().repeat(LRE_EXEMPLARS),
                )?,
            };
            planted_probe = Some(probe);
            unembedding = Some(u);
            joint = Some(Matrix::from_rows_f64(&joint_rows)?);
            lre = Some(BTreeMap::from([(0usize, payload)]));
            (x, refs, gt)
        }
        SynthKind::Xor => {
            let mut data = Vec::with_capacity(n * d);
            let mut refs = Vec::with_capacity(n);
            let mut gt = Vec::with_capacity(n);
            for i in 0..n {
                let (s1, s2) = match i % 4 {
                    0 => (1.0, 1.0),
                    1 => (1.0, -1.0),
                    2 => (-1.0, 1.0),
                    _ => (-1.0, -1.0),
                };
                for j in 0..d {
                    let centre = match j {
                        0 => s1,
                        1 => s2,
                        _ => 0.0,
                    };
                    data.push((centre + XOR_BLOB_STD * gaussian(&mut rng)) as f32);
                }
                let label = usize::from((s1 > 0.0) != (s2 > 0.0));
                refs.push(Distribution::one_hot(2, label));
                gt.push(label as i64);
            }
            (Matrix::from_vec(n, d, data)?, refs, gt)
        }
        SynthKind::Collapsed => {
            let p = Distribution::new(random_simplex_point(&mut rng, k))?;
            let x = gaussian_matrix(&mut rng, n, d, 1.0);
            let label = p.argmax() as i64;
            (x, vec![p; n], vec![label; n])
        }
        SynthKind::TautologyBiased => {
            let centre = random_simplex_point(&mut rng, k);
            let alpha: Vec<f64> = centre
                .iter()
                .map(|p| (p * TAUTOLOGY_CONCENTRATION).max(1e-3))
                .collect();
            let dirichlet =
                Dirichlet::new(&alpha).map_err(|e| Error::invalid(format!("dirichlet: {e}")))?;
            let x = gaussian_matrix(&mut rng, n, d, 1.0);
            let refs = (0..n)
                .map(|_| crate::kernel::restrict(&dirichlet.sample(&mut rng)))
                .collect::<Result<Vec<_>>>()?;
            let label = crate::kernel::argmax(&centre) as i64;
            (x, refs, vec![label; n])
        }
    };

    let reference_probs = store_probs(&refs, k);
    let mut activations = BTreeMap::from([(0usize, acts)]);
    let mut joint_map = joint.map(|j| BTreeMap::from([(0usize, j)]));
    if spec.decoy_layer {
        activations.insert(1, gaussian_matrix(&mut rng, n, d, 1.0));
        if let Some(j) = joint_map.as_mut() {
            let copy = j[&0].clone();
            j.insert(1, copy);
        }
    }

    let mut ds = ProbeDataset::assemble(
        format!("synthetic:{}", spec.kind.as_str()),
        spec.kind.as_str(),
        "synthetic",
        tokens,
        activations,
        reference_probs,
        gt,
        unembedding,
        joint_map,
        lre,
    );
    ds.manifest.split_seed = spec.seed;
    ds.refresh_checksums();

    // Oracles are computed from what was stored, so they describe the
    // dataset exactly as a loader sees it.
    let stored = ds.reference_distributions();
    let linear_f1_ceiling = match spec.kind {
        SynthKind::Xor => {
            let x = ds.layer(0)?;
            let points: Vec<[f64; 2]> = (0..n)
                .map(|i| [f64::from(x.get(i, 0)), f64::from(x.get(i, 1))])
                .collect();
            let labels: Vec<usize> = stored.iter().map(Distribution::argmax).collect();
            oracle_linear_ceiling(&points, &labels)?
        }
        SynthKind::PlantedLinear if spec.noise_sigma > 0.0 => {
            let probe = planted_probe.as_ref().expect("planted");
            let x = ds.layer(0)?;
            (0..n)
                .filter(|&i| probe.predict(x.row(i)).map(|p| p.argmax()).ok() == Some(stored[i].argmax()))
                .count() as f64
                / n as f64
        }
        _ => 1.0,
    };
    let oracle = SynthOracle {
        planted_probe,
        expected_css: css(&stored)?,
        best_constant_kl: oracle_best_constant_kl(&stored)?,
        linear_f1_ceiling,
    };
    Ok((ds, oracle))
}

/// `min_q mean_i KL(ref_i ‖ q)` over constant `q`, attained at the mean
/// distribution.
pub fn oracle_best_constant_kl(references: &[Distribution]) -> Result<f64> {
    let mean = mean_distribution(references)?;
    Ok(references.iter().map(|r| kl_divergence(r, &mean)).sum::<f64>() / references.len() as f64)
}

/// Exhaustive best accuracy of a linear threshold `sign(w·x + t)` on 2-d
/// points with binary labels: 360 directions in 1° steps, and for each
/// direction every threshold between consecutive projections.
pub fn oracle_linear_ceiling(points: &[[f64; 2]], labels: &[usize]) -> Result<f64> {
    if points.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: points.len(),
            actual: labels.len(),
        });
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::invalid("linear ceiling oracle takes binary labels"));
    }
    let n = points.len();
    if n == 0 {
        return Err(Error::invalid("no points"));
    }
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let mut best = positives.max(n - positives);
    let mut proj: Vec<(f64, usize)> = Vec::with_capacity(n);
    for deg in 0..360 {
        let theta = (deg as f64).to_radians();
        let (c, s) = (theta.cos(), theta.sin());
        proj.clear();
        proj.extend(points.iter().zip(labels).map(|(p, &l)| (c * p[0] + s * p[1], l)));
        proj.sort_by(|a, b| a.0.total_cmp(&b.0));
        // Predict 1 above the threshold; sweep the threshold upwards.
        let mut correct = positives;
        for i in 0..n {
            correct = if proj[i].1 == 1 { correct - 1 } else { correct + 1 };
            let boundary = i + 1 == n || proj[i + 1].0 > proj[i].0;
            if boundary {
                best = best.max(correct);
            }
        }
    }
    Ok(best as f64 / n as f64)
}

/// [`oracle_linear_ceiling`] on a dataset layer of dimension at most 2,
/// labels being the argmax of the references.
pub fn oracle_linear_ceiling_dataset(ds: &ProbeDataset, layer: usize) -> Result<f64> {
    let x = ds.layer(layer)?;
    if x.cols() > 2 {
        return Err(Error::invalid(format!(
            "linear ceiling oracle needs d <= 2, got {}",
            x.cols()
        )));
    }
    if ds.k() != 2 {
        return Err(Error::invalid("linear ceiling oracle needs k = 2"));
    }
    let points: Vec<[f64; 2]> = (0..x.rows())
        .map(|i| {
            let r = x.row(i);
            [f64::from(r[0]), r.get(1).map_or(0.0, |&v| f64::from(v))]
        })
        .collect();
    let labels: Vec<usize> = ds
        .reference_distributions()
        .iter()
        .map(Distribution::argmax)
        .collect();
    oracle_linear_ceiling(&points, &labels)
}
