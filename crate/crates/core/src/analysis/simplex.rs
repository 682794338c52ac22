// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::Distribution;

const SQRT3_2: f64 = 0.866_025_403_784_438_6;

/// Barycentric embedding of a 3-token distribution into the triangle with
/// vertices `(0, 0)`, `(1, 0)` and `(1/2, √3/2)`.
pub fn simplex_coords(dist: &Distribution) -> Result<(f64, f64)> {
    match dist.probs() {
        &[_, p1, p2] => Ok((p1 + 0.5 * p2, SQRT3_2 * p2)),
        other => Err(Error::invalid(format!(
            "simplex coordinates need k = 3, got {}",
            other.len()
        ))),
    }
}

/// Histogram of per-example `max_y p(y)` over `[1/k, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxProbHistogram {
    /// `bins + 1` edges from `1/k` to `1`.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

pub fn max_prob_histogram(references: &[Distribution], bins: usize) -> Result<MaxProbHistogram> {
    if bins < 2 {
        return Err(Error::invalid("histogram needs at least 2 bins"));
    }
    let k = references.first().map_or(2, Distribution::len).max(2);
    let lo = 1.0 / k as f64;
    let width = (1.0 - lo) / bins as f64;
    let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
    let mut counts = vec![0; bins];
    for r in references {
        let pos = ((r.max_prob() - lo) / width).floor();
        let bin = if pos.is_nan() || pos < 0.0 {
            0
        } else {
            (pos as usize).min(bins - 1)
        };
        counts[bin] += 1;
    }
    Ok(MaxProbHistogram { edges, counts })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: (f64, f64), b: (f64, f64)) -> bool {
        (a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12
    }

    #[test]
    fn vertices_centroid_and_edge_midpoint() {
        assert!(close(simplex_coords(&Distribution::one_hot(3, 0)).unwrap(), (0.0, 0.0)));
        assert!(close(simplex_coords(&Distribution::one_hot(3, 1)).unwrap(), (1.0, 0.0)));
        let top = (0.5, 3f64.sqrt() / 2.0);
        assert!(close(simplex_coords(&Distribution::one_hot(3, 2)).unwrap(), top));
        let centroid = (0.5, 3f64.sqrt() / 6.0);
        assert!(close(simplex_coords(&Distribution::uniform(3)).unwrap(), centroid));
        // Barycentric average of vertices 2 and 3: ((1,0) + (1/2, √3/2)) / 2.
        let mid = simplex_coords(&Distribution::new(vec![0.0, 0.5, 0.5]).unwrap()).unwrap();
        assert!(close(mid, ((1.0 + 0.5) / 2.0, (0.0 + 3f64.sqrt() / 2.0) / 2.0)));
        assert!(close(mid, (0.75, 3f64.sqrt() / 4.0)));
        assert!(simplex_coords(&Distribution::uniform(2)).is_err());
    }

    #[test]
    fn histogram_cases() {
        let hot = vec![Distribution::one_hot(3, 1); 5];
        assert_eq!(max_prob_histogram(&hot, 4).unwrap().counts, vec![0, 0, 0, 5]);
        let flat = vec![Distribution::uniform(3); 6];
        assert_eq!(max_prob_histogram(&flat, 4).unwrap().counts, vec![6, 0, 0, 0]);
        let mut mixed = hot.clone();
        mixed.extend(vec![Distribution::uniform(3); 5]);
        let h = max_prob_histogram(&mixed, 5).unwrap();
        assert_eq!(h.counts, vec![5, 0, 0, 0, 5]);
        assert_eq!(h.counts.iter().sum::<usize>(), 10);
        assert!((h.edges[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!(max_prob_histogram(&mixed, 1).is_err());
    }
}
