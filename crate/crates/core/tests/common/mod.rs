//! Independent oracles shared by the integration suites.
#![allow(dead_code)]

use rand::Rng;
use refpts_core::geometry::Point3;

type Candidate = (usize, f64, Vec<(usize, usize)>);

/// Exhaustive gated assignment: tries every permutation of the padded square
/// problem and keeps the matching with the most sub-gate pairs, then the
/// smallest total distance. Returns (pairs sorted by row, total distance).
pub fn brute_force_assignment(dist: &[Vec<f64>], cols: usize, gate: f64) -> (Vec<(usize, usize)>, f64) {
    let rows = dist.len();
    let n = rows.max(cols);
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best: Option<Candidate> = None;
    permute(&mut perm, 0, &mut |p| {
        let mut pairs = Vec::new();
        let mut cost = 0.0;
        for (r, &c) in p.iter().enumerate() {
            if r < rows && c < cols && dist[r][c] < gate {
                pairs.push((r, c));
                cost += dist[r][c];
            }
        }
        let better = match &best {
            None => true,
            Some((bn, bc, _)) => pairs.len() > *bn || (pairs.len() == *bn && cost < *bc - 1e-12),
        };
        if better {
            best = Some((pairs.len(), cost, pairs));
        }
    });
    let (_, cost, pairs) = best.unwrap_or((0, 0.0, Vec::new()));
    (pairs, cost)
}

fn permute(p: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == p.len() {
        visit(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permute(p, k + 1, visit);
        p.swap(k, i);
    }
}

pub fn euclid(a: &Point3, b: &Point3) -> f64 {
    ((a.x - b.x).powi(2) + (a.y - b.y).powi(2) + (a.z - b.z).powi(2)).sqrt()
}

pub fn distance_matrix(a: &[Point3], b: &[Point3]) -> Vec<Vec<f64>> {
    a.iter().map(|p| b.iter().map(|q| euclid(p, q)).collect()).collect()
}

pub fn random_points<R: Rng>(rng: &mut R, n: usize, extent: f64) -> Vec<Point3> {
    (0..n)
        .map(|_| Point3::new(rng.random_range(0.0..extent), rng.random_range(0.0..extent), 0.0))
        .collect()
}

/// Plain greedy written independently of the library: repeatedly take the
/// globally closest free sub-gate pair, ties by (row, col).
pub fn naive_greedy(dist: &[Vec<f64>], cols: usize, gate: f64) -> Vec<(usize, usize)> {
    let rows = dist.len();
    let mut row_free = vec![true; rows];
    let mut col_free = vec![true; cols];
    let mut out = Vec::new();
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for r in (0..rows).filter(|r| row_free[*r]) {
            for c in (0..cols).filter(|c| col_free[*c]) {
                let d = dist[r][c];
                if d < gate && best.is_none_or(|(bd, _, _)| d < bd) {
                    best = Some((d, r, c));
                }
            }
        }
        match best {
            Some((_, r, c)) => {
                row_free[r] = false;
                col_free[c] = false;
                out.push((r, c));
            }
            None => break,
        }
    }
    out.sort();
    out
}
