use serde::{Deserialize, Serialize};

use super::{check_dims, MetricsError};
use crate::vecmath::dist;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    /// Mean matched Euclidean distance.
    pub w2: f64,
    /// `assignment[k]` is the data index matched to proxy `k`.
    pub assignment: Vec<usize>,
    /// The matched data indices, ascending.
    pub matched_subset: Vec<usize>,
}

/// Minimum-cost assignment of every row of an `m x n` cost matrix (`m <= n`)
/// to a distinct column, by shortest augmenting paths with potentials.
/// Runs in `O(m^2 n)`; returns the column of each row.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Result<Vec<usize>, MetricsError> {
    let m = cost.len();
    let n = cost.first().map_or(0, Vec::len);
    check_dims("cost row", cost, n)?;
    if m > n {
        return Err(MetricsError::TooFewData {
            proxies: m,
            data: n,
        });
    }
    // 1-based bookkeeping; column 0 is the virtual root of each search.
    let mut u = vec![0.0; m + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=m {
        owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        while j0 != 0 {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
        }
    }
    let mut assignment = vec![0; m];
    for j in 1..=n {
        if owner[j] != 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    Ok(assignment)
}

/// Matches `m` proxies to an optimally chosen `m`-subset of `data`,
/// minimizing the mean Euclidean distance over subset and matching jointly.
pub fn w2_alignment(proxies: &[Vec<f64>], data: &[Vec<f64>]) -> Result<AlignmentResult, MetricsError> {
    let m = proxies.len();
    if m == 0 {
        return Err(MetricsError::TooFewPoints { needed: 1, got: 0 });
    }
    if data.len() < m {
        return Err(MetricsError::TooFewData {
            proxies: m,
            data: data.len(),
        });
    }
    let dim = proxies[0].len();
    check_dims("proxy dimension", proxies, dim)?;
    check_dims("data dimension", data, dim)?;
    let cost: Vec<Vec<f64>> = proxies
        .iter()
        .map(|p| data.iter().map(|z| dist(p, z)).collect())
        .collect();
    let assignment = min_cost_assignment(&cost)?;
    let total: f64 = assignment.iter().enumerate().map(|(k, &j)| cost[k][j]).sum();
    let mut matched_subset = assignment.clone();
    matched_subset.sort_unstable();
    Ok(AlignmentResult {
        w2: total / m as f64,
        assignment,
        matched_subset,
    })
}
