// SPDX-License-Identifier: MIT OR Apache-2.0

//! Linear relational embedding operator.
//!
//! Approximates the query-prompted state by an affine map of the context
//! state, `h ≈ β W x + b`, with `W` and `b` the averages of per-exemplar
//! Jacobians and offsets, then reads the prediction out through the
//! unembedding rows of the token set.

use nalgebra::DMatrix;

use super::klrp::evaluate_predictions;
use crate::dataset::ProbeDataset;
use crate::error::{Error, Result};
use crate::kernel::{softmax, Distribution, MetricsRecord, ProbeKind};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct LreOperator {
    /// `d × d`, rank-truncated when `rank < d`.
    pub w: DMatrix<f64>,
    pub b: Vec<f64>,
    /// Scale applied to `W x` (not to `b`) at prediction time.
    pub beta: f64,
    pub rank: usize,
    pub layer: usize,
}

impl LreOperator {
    pub fn dim(&self) -> usize {
        self.b.len()
    }

    /// `β W x + b`.
    pub fn apply(&self, activation: &[f32]) -> Result<Vec<f64>> {
        let d = self.dim();
        if activation.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: activation.len(),
            });
        }
        Ok((0..d)
            .map(|r| {
                let wx: f64 = self
                    .w
                    .row(r)
                    .iter()
                    .zip(activation)
                    .map(|(w, &x)| w * f64::from(x))
                    .sum();
                self.beta * wx + self.b[r]
            })
            .collect())
    }
}

/// Best rank-`rank` approximation of `w` in Frobenius norm (singular value
/// truncation).
pub fn truncate_rank(w: &DMatrix<f64>, rank: usize) -> Result<DMatrix<f64>> {
    if rank >= w.nrows().min(w.ncols()) {
        return Ok(w.clone());
    }
    let svd = w.clone().svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::Numerical("SVD did not return singular vectors".into())),
    };
    let sigma = svd.singular_values;
    let mut order: Vec<usize> = (0..sigma.len()).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]).then(a.cmp(&b)));
    let mut out = DMatrix::zeros(w.nrows(), w.ncols());
    for &i in order.iter().take(rank) {
        out += sigma[i] * u.column(i) * v_t.row(i);
    }
    Ok(out)
}

/// Averages `n` Jacobians (`d × d`) and offsets (`n × d`) and truncates the
/// mean Jacobian to `rank`.
pub fn lre_build(
    jacobians: &[Matrix],
    offsets: &Matrix,
    beta: f64,
    rank: usize,
    layer: usize,
) -> Result<LreOperator> {
    let n = jacobians.len();
    if n == 0 {
        return Err(Error::invalid("LRE needs at least one exemplar"));
    }
    let d = jacobians[0].rows();
    if let Some(j) = jacobians.iter().find(|j| j.rows() != d || j.cols() != d) {
        return Err(Error::invalid(format!(
            "jacobian of shape {}x{}, expected {d}x{d}",
            j.rows(),
            j.cols()
        )));
    }
    if offsets.rows() != n || offsets.cols() != d {
        return Err(Error::invalid(format!(
            "offsets of shape {}x{}, expected {n}x{d}",
            offsets.rows(),
            offsets.cols()
        )));
    }
    if rank == 0 || rank > d {
        return Err(Error::invalid(format!("rank {rank} outside 1..={d}")));
    }
    if !beta.is_finite() {
        return Err(Error::invalid("non-finite beta"));
    }
    let mut w = DMatrix::<f64>::zeros(d, d);
    for j in jacobians {
        for r in 0..d {
            for (c, &v) in j.row(r).iter().enumerate() {
                w[(r, c)] += f64::from(v);
            }
        }
    }
    w /= n as f64;
    let b: Vec<f64> = (0..d)
        .map(|c| (0..n).map(|i| f64::from(offsets.get(i, c))).sum::<f64>() / n as f64)
        .collect();
    Ok(LreOperator {
        w: truncate_rank(&w, rank)?,
        b,
        beta,
        rank,
        layer,
    })
}

/// Builds the operator from the dataset's payload at `layer`, using the
/// first `max_exemplars` exemplars when given. `rank` is capped at `d`.
pub fn lre_build_from_payload(
    ds: &ProbeDataset,
    layer: usize,
    beta: f64,
    rank: usize,
    max_exemplars: Option<usize>,
) -> Result<LreOperator> {
    let payload = ds
        .lre_payload
        .as_ref()
        .and_then(|p| p.get(&layer))
        .ok_or_else(|| Error::MissingPayload(format!("LRE payload for layer {layer}")))?;
    let n = max_exemplars
        .unwrap_or(payload.jacobians.len())
        .min(payload.jacobians.len());
    let rows: Vec<usize> = (0..n).collect();
    lre_build(
        &payload.jacobians[..n],
        &payload.offsets.gather_rows(&rows),
        beta,
        rank.min(ds.hidden_dim()),
        layer,
    )
}

/// `softmax(U (β W x + b))` over the token set, `U` the `k × d` unembedding.
pub fn lre_predict(op: &LreOperator, activation: &[f32], unembedding: &Matrix) -> Result<Distribution> {
    if unembedding.cols() != op.dim() {
        return Err(Error::DimensionMismatch {
            expected: op.dim(),
            actual: unembedding.cols(),
        });
    }
    let h = op.apply(activation)?;
    let logits: Vec<f64> = (0..unembedding.rows())
        .map(|y| {
            unembedding
                .row(y)
                .iter()
                .zip(&h)
                .map(|(&u, hv)| f64::from(u) * hv)
                .sum()
        })
        .collect();
    Ok(softmax(&logits))
}

/// Metrics of an LRE operator on the `eval` indices of its layer.
pub fn evaluate_lre(op: &LreOperator, ds: &ProbeDataset, eval: &[usize]) -> Result<MetricsRecord> {
    let unembedding = ds
        .unembedding
        .as_ref()
        .ok_or_else(|| Error::MissingPayload("unembedding rows".into()))?;
    let acts = ds.layer(op.layer)?;
    let preds = eval
        .iter()
        .map(|&i| lre_predict(op, acts.row(i), unembedding))
        .collect::<Result<Vec<_>>>()?;
    evaluate_predictions(ds, op.layer, ProbeKind::Lre, eval, &preds)
}

#[cfg(test)]
mod tests {
    use nalgebra::SymmetricEigen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn identity(d: usize) -> Matrix {
        let mut m = Matrix::zeros(d, d);
        (0..d).for_each(|i| m.row_mut(i)[i] = 1.0);
        m
    }

    #[test]
    fn identity_operator() {
        let op = lre_build(&[identity(3)], &Matrix::zeros(1, 3), 1.0, 3, 0).unwrap();
        assert_eq!(op.apply(&[1.0, -2.0, 0.5]).unwrap(), vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn averages_jacobians_and_offsets() {
        let mut three = identity(2);
        three.as_mut_slice().iter_mut().for_each(|v| *v *= 3.0);
        let offsets = Matrix::from_vec(2, 2, vec![1.0, 0.0, 3.0, 2.0]).unwrap();
        let op = lre_build(&[identity(2), three], &offsets, 1.0, 2, 0).unwrap();
        assert_eq!(op.w, DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0]));
        assert_eq!(op.b, vec![2.0, 1.0]);
    }

    #[test]
    fn shape_errors() {
        assert!(lre_build(&[], &Matrix::zeros(0, 2), 1.0, 2, 0).is_err());
        assert!(lre_build(&[identity(2), identity(3)], &Matrix::zeros(2, 2), 1.0, 2, 0).is_err());
        assert!(lre_build(&[identity(2)], &Matrix::zeros(2, 2), 1.0, 2, 0).is_err());
        assert!(lre_build(&[identity(2)], &Matrix::zeros(1, 2), 1.0, 3, 0).is_err());
    }

    #[test]
    fn zero_beta_is_context_free() {
        let u = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let offsets = Matrix::from_vec(1, 2, vec![0.7, -0.2]).unwrap();
        let op = lre_build(&[identity(2)], &offsets, 0.0, 2, 0).unwrap();
        let a = lre_predict(&op, &[5.0, -1.0], &u).unwrap();
        let b = lre_predict(&op, &[-3.0, 8.0], &u).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, softmax(&[0.7f32 as f64, -0.2f32 as f64]));
    }

    /// Eckart–Young oracle through the eigendecomposition of `WᵀW`:
    /// `W_ρ = W V_ρ V_ρᵀ` with `V_ρ` the top-ρ eigenvectors.
    fn eigen_oracle(w: &DMatrix<f64>, rank: usize) -> (DMatrix<f64>, f64) {
        let eig = SymmetricEigen::new(w.transpose() * w);
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let d = w.ncols();
        let mut proj = DMatrix::zeros(d, d);
        for &i in order.iter().take(rank) {
            let v = eig.eigenvectors.column(i);
            proj += v * v.transpose();
        }
        let tail: f64 = order[rank..].iter().map(|&i| eig.eigenvalues[i].max(0.0)).sum();
        (w * proj, tail.sqrt())
    }

    #[test]
    fn truncation_matches_eigen_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = DMatrix::from_fn(8, 8, |_, _| rng.gen_range(-1.0..1.0));
        let t = truncate_rank(&w, 3).unwrap();
        let (oracle, tail) = eigen_oracle(&w, 3);
        assert!((&t - &oracle).norm() < 1e-9);
        assert!(((&w - &t).norm() - tail).abs() < 1e-9);
        let sv = t.clone().svd(false, false).singular_values;
        let mut s: Vec<f64> = sv.iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        assert!(s[3..].iter().all(|&x| x < 1e-10), "{s:?}");
        // No random rank-3 matrix does better.
        for _ in 0..50 {
            let a = DMatrix::from_fn(8, 3, |_, _| rng.gen_range(-1.0..1.0));
            let b = DMatrix::from_fn(3, 8, |_, _| rng.gen_range(-1.0..1.0));
            assert!((&w - a * b).norm() >= (&w - &t).norm());
        }
    }

    #[test]
    fn full_rank_is_plain_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let jac: Vec<Matrix> = (0..3)
            .map(|_| Matrix::from_vec(4, 4, (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap())
            .collect();
        let op = lre_build(&jac, &Matrix::zeros(3, 4), 1.0, 4, 0).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                let mean = jac.iter().map(|j| f64::from(j.get(r, c))).sum::<f64>() / 3.0;
                assert_eq!(op.w[(r, c)], mean);
            }
        }
    }
}
