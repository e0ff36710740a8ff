use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{check_dims, MetricsError};
use crate::vecmath::dist;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub num_queries: usize,
    /// Recall keyed by K.
    pub recall: BTreeMap<usize, f64>,
}

impl RetrievalResult {
    pub fn at(&self, k: usize) -> Option<f64> {
        self.recall.get(&k).copied()
    }
}

/// Fraction of queries with a same-class point among their K nearest other
/// embeddings, for each K in `ks`. Neighbours are ranked by Euclidean
/// distance, ties going to the lower index.
pub fn recall_at_k(
    embeddings: &[Vec<f64>],
    labels: &[usize],
    ks: &[usize],
) -> Result<RetrievalResult, MetricsError> {
    let n = embeddings.len();
    if n < 2 {
        return Err(MetricsError::TooFewPoints { needed: 2, got: n });
    }
    if labels.len() != n {
        return Err(MetricsError::LengthMismatch {
            what: "labels",
            expected: n,
            got: labels.len(),
        });
    }
    check_dims("embedding dimension", embeddings, embeddings[0].len())?;
    if let Some(&k) = ks.iter().find(|&&k| k == 0 || k >= n) {
        return Err(MetricsError::KOutOfRange { k, n });
    }

    // Rank of each query's nearest same-class neighbour; a query succeeds at
    // K exactly when that rank is below K.
    let mut ranks = Vec::with_capacity(n);
    let mut row = vec![0.0; n];
    for q in 0..n {
        for (j, r) in row.iter_mut().enumerate() {
            *r = dist(&embeddings[q], &embeddings[j]);
        }
        let nearest = (0..n)
            .filter(|&j| j != q && labels[j] == labels[q])
            .min_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
        ranks.push(nearest.map(|s| {
            (0..n)
                .filter(|&j| j != q && labels[j] != labels[q])
                .filter(|&j| row[j] < row[s] || (row[j] == row[s] && j < s))
                .count()
        }));
    }

    let recall = ks
        .iter()
        .map(|&k| {
            let hits = ranks.iter().flatten().filter(|&&r| r < k).count();
            (k, hits as f64 / n as f64)
        })
        .collect();
    Ok(RetrievalResult {
        num_queries: n,
        recall,
    })
}
