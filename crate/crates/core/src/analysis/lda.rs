// SPDX-License-Identifier: MIT OR Apache-2.0

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Ridge added to the within-class scatter, relative to its mean diagonal.
pub const LDA_SHRINKAGE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaProjection {
    /// Unit-norm discriminant directions, most discriminative first. The
    /// first nonzero coordinate of each is positive.
    pub directions: Vec<Vec<f64>>,
    /// Generalized eigenvalues matching `directions`.
    pub eigenvalues: Vec<f64>,
    /// Centered activations projected on `directions`, one row per example.
    pub coords: Vec<Vec<f64>>,
}

fn scatter(acts: &Matrix, labels: &[usize]) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
    let d = acts.cols();
    let n_classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut sums = vec![DVector::<f64>::zeros(d); n_classes];
    let mut counts = vec![0usize; n_classes];
    let mut grand = DVector::<f64>::zeros(d);
    for (i, &y) in labels.iter().enumerate() {
        let x = DVector::from_iterator(d, acts.row(i).iter().map(|&v| f64::from(v)));
        sums[y] += &x;
        grand += &x;
        counts[y] += 1;
    }
    grand /= labels.len() as f64;
    let means: Vec<DVector<f64>> = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { s })
        .collect();
    let mut sw = DMatrix::<f64>::zeros(d, d);
    for (i, &y) in labels.iter().enumerate() {
        let x = DVector::from_iterator(d, acts.row(i).iter().map(|&v| f64::from(v)));
        let dx = x - &means[y];
        sw += &dx * dx.transpose();
    }
    let mut sb = DMatrix::<f64>::zeros(d, d);
    for (mean, &c) in means.iter().zip(&counts) {
        if c > 0 {
            let dm = mean - &grand;
            sb += (&dm * dm.transpose()) * c as f64;
        }
    }
    (sw, sb, grand)
}

/// Fisher LDA of `acts` under `labels`, keeping `out_dim` directions.
pub fn lda_project(acts: &Matrix, labels: &[usize], out_dim: usize) -> Result<LdaProjection> {
    if labels.len() != acts.rows() {
        return Err(Error::DimensionMismatch {
            expected: acts.rows(),
            actual: labels.len(),
        });
    }
    let d = acts.cols();
    if out_dim == 0 || out_dim > d {
        return Err(Error::invalid(format!("LDA output dimension {out_dim} for d = {d}")));
    }
    let mut counts = std::collections::BTreeMap::<usize, usize>::new();
    for &y in labels {
        *counts.entry(y).or_default() += 1;
    }
    if counts.len() < 2 {
        return Err(Error::invalid("LDA needs at least two classes"));
    }
    if let Some((&y, _)) = counts.iter().find(|(_, &c)| c < 2) {
        return Err(Error::invalid(format!("class {y} has fewer than two examples")));
    }

    let (mut sw, sb, grand) = scatter(acts, labels);
    let ridge = LDA_SHRINKAGE * sw.trace() / d as f64;
    let ridge = if ridge > 0.0 { ridge } else { LDA_SHRINKAGE };
    for i in 0..d {
        sw[(i, i)] += ridge;
    }
    let chol = sw
        .cholesky()
        .ok_or_else(|| Error::Numerical("within-class scatter not positive definite".into()))?;
    let l = chol.l();
    let l_inv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    let m = &l_inv * &sb * l_inv.transpose();
    let m = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut directions = Vec::with_capacity(out_dim);
    let mut eigenvalues = Vec::with_capacity(out_dim);
    for &j in order.iter().take(out_dim) {
        let mut v = l_inv.transpose() * eig.eigenvectors.column(j);
        let norm = v.norm();
        if norm > 0.0 {
            v /= norm;
        }
        if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
            if *first < 0.0 {
                v = -v;
            }
        }
        directions.push(v.iter().copied().collect::<Vec<f64>>());
        eigenvalues.push(eig.eigenvalues[j]);
    }
    let coords = (0..acts.rows())
        .map(|i| {
            directions
                .iter()
                .map(|dir| {
                    acts.row(i)
                        .iter()
                        .zip(dir)
                        .zip(grand.iter())
                        .map(|((&x, &w), &g)| (f64::from(x) - g) * w)
                        .sum()
                })
                .collect()
        })
        .collect();
    Ok(LdaProjection {
        directions,
        eigenvalues,
        coords,
    })
}
