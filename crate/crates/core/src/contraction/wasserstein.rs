//! Empirical ℓ2 (Wasserstein-2) distances.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::EmpiricalDistribution;
use crate::error::{Error, Result};
use crate::rng;

pub const ASSIGNMENT_SIZE: usize = 512;
pub const ASSIGNMENT_DRAWS: usize = 8;
const SUBSAMPLE_SEED: u64 = 0x0057_a55e_3b1f_0002;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct W2Estimate {
    pub value: f64,
    /// Standard deviation over subsample draws (0 for the exact 1-d case).
    pub spread: f64,
}

/// Exact W2 between two 1-d empirical laws, by pairing quantile functions
/// on the merged grid of breakpoints i/|a| and j/|b|.
pub fn w2_1d(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(f64::total_cmp);
    xb.sort_by(f64::total_cmp);
    let (na, nb) = (xa.len(), xb.len());
    if na == nb {
        let s: f64 = xa.iter().zip(&xb).map(|(x, y)| (x - y) * (x - y)).sum();
        return (s / na as f64).sqrt();
    }
    // Walk the merged partition of [0, 1] in integer units of 1/(na nb).
    let (mut i, mut j) = (0usize, 0usize);
    let (mut ea, mut eb) = (nb as u128, na as u128);
    let mut pos: u128 = 0;
    let mut acc = 0.0;
    let total = (na * nb) as u128;
    while pos < total {
        let next = ea.min(eb);
        let width = (next - pos) as f64;
        let d = xa[i] - xb[j];
        acc += width * d * d;
        pos = next;
        if ea == next && i + 1 < na {
            i += 1;
            ea += nb as u128;
        }
        if eb == next && j + 1 < nb {
            j += 1;
            eb += na as u128;
        }
    }
    (acc / total as f64).sqrt()
}

/// Minimum-cost perfect matching on a square cost matrix (Hungarian method
/// with potentials, O(n³)). Returns the assignment row -> column.
pub fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
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
    let mut assign = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    assign
}

fn w2_assignment(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    let n = a.len();
    let mut cost = vec![0.0; n * n];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            let (d0, d1) = (x[0] - y[0], x[1] - y[1]);
            cost[i * n + j] = d0 * d0 + d1 * d1;
        }
    }
    let assign = hungarian(&cost, n);
    let total: f64 = assign.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
    (total / n as f64).sqrt()
}

/// W2 between two empirical laws of the same dimension. In two dimensions
/// the exact assignment is solved on subsamples of at most 512 points,
/// averaged over 8 draws.
pub fn w2_distance(a: &EmpiricalDistribution, b: &EmpiricalDistribution) -> Result<W2Estimate> {
    if a.dim != b.dim {
        return Err(Error::DimMismatch(a.dim, b.dim));
    }
    if a.dim == 1 {
        return Ok(W2Estimate { value: w2_1d(&a.samples, &b.samples), spread: 0.0 });
    }
    let (na, nb) = (a.len(), b.len());
    let m = ASSIGNMENT_SIZE.min(na).min(nb);
    if m == 0 {
        return Ok(W2Estimate { value: 0.0, spread: 0.0 });
    }
    let draws: Vec<f64> = rng::par_replicates(SUBSAMPLE_SEED, "w2-subsample", ASSIGNMENT_DRAWS, |rg, _| {
        let ia = sample(rg, na, m);
        let ib = sample(rg, nb, m);
        let pa: Vec<[f64; 2]> = ia.iter().map(|i| a.row2(i)).collect();
        let pb: Vec<[f64; 2]> = ib.iter().map(|i| b.row2(i)).collect();
        w2_assignment(&pa, &pb)
    });
    let est = crate::stats::mean_estimate(&draws);
    Ok(W2Estimate { value: est.mean, spread: crate::stats::variance(&draws).sqrt() })
}
