//! Gated one-to-one assignment between two point sets.
//!
//! Shared by cross-agent association and by the tracker. Two policies are
//! available: greedy by ascending distance, and an optimal assignment that
//! first maximizes the number of gated pairs and then minimizes their total
//! distance (Hungarian algorithm on the thresholded cost matrix).

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchingPolicy {
    #[default]
    GreedyDistance,
    OptimalAssignment,
}

/// One accepted pair: row index, column index, distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GatedPair {
    pub row: usize,
    pub col: usize,
    pub distance: f64,
}

/// Solves the gated assignment on a dense `rows × cols` distance matrix.
/// Only entries strictly below `gate` may be paired. Output is sorted by row.
pub fn gated_assignment(distances: &[Vec<f64>], cols: usize, gate: f64, policy: MatchingPolicy) -> Vec<GatedPair> {
    let mut pairs = match policy {
        MatchingPolicy::GreedyDistance => greedy(distances, cols, gate),
        MatchingPolicy::OptimalAssignment => optimal(distances, cols, gate),
    };
    pairs.sort_by_key(|p| p.row);
    pairs
}

fn greedy(distances: &[Vec<f64>], cols: usize, gate: f64) -> Vec<GatedPair> {
    let mut candidates: Vec<GatedPair> = distances
        .iter()
        .enumerate()
        .flat_map(|(row, ds)| {
            ds.iter()
                .take(cols)
                .enumerate()
                .filter(|(_, d)| **d < gate)
                .map(move |(col, d)| GatedPair { row, col, distance: *d })
        })
        .collect();
    candidates.sort_by(|a, b| {
        a.distance
            .total_cmp(&b.distance)
            .then(a.row.cmp(&b.row))
            .then(a.col.cmp(&b.col))
    });
    let mut row_used = vec![false; distances.len()];
    let mut col_used = vec![false; cols];
    let mut out = Vec::new();
    for c in candidates {
        if !row_used[c.row] && !col_used[c.col] {
            row_used[c.row] = true;
            col_used[c.col] = true;
            out.push(c);
        }
    }
    out
}

fn optimal(distances: &[Vec<f64>], cols: usize, gate: f64) -> Vec<GatedPair> {
    let rows = distances.len();
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    // Any gated pair is cheaper than a forbidden one by more than the total
    // gated cost of a full matching, so cardinality is maximized first.
    let forbidden = gate * (rows.min(cols) as f64 + 1.0);
    let cost = |r: usize, c: usize| {
        let d = distances[r][c];
        if d < gate {
            d
        } else {
            forbidden
        }
    };
    let assignment = if rows <= cols {
        hungarian(rows, cols, cost).into_iter().enumerate().collect::<Vec<_>>()
    } else {
        hungarian(cols, rows, |c, r| cost(r, c))
            .into_iter()
            .enumerate()
            .map(|(c, r)| (r, c))
            .collect::<Vec<_>>()
    };
    assignment
        .into_iter()
        .filter_map(|(row, col)| {
            let d = distances[row][col];
            (d < gate).then_some(GatedPair { row, col, distance: d })
        })
        .collect()
}

/// Minimum-cost assignment of every row to a distinct column (`n <= m`).
/// Returns the column chosen for each row.
fn hungarian(n: usize, m: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    debug_assert!(n <= m);
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut result = vec![0usize; n];
    for j in 1..=m {
        if p[j] != 0 {
            result[p[j] - 1] = j - 1;
        }
    }
    result
}
