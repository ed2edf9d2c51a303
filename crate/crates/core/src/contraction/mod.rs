//! Limit laws via the contraction method: fixed-point samplers, ℓ2
//! distances, the operator-norm certificate and moment diagnostics.

mod fixed_point;
mod wasserstein;

pub use fixed_point::*;
pub use wasserstein::*;

use serde::{Deserialize, Serialize};

use crate::constants::exact_mean_path;
use crate::error::{Error, Result};
use crate::splitter::SplitterSpec;
use crate::tree::{simulate_stats, SplitTreeParams};

/// N samples of a law on R or R², stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalDistribution {
    pub dim: usize,
    pub samples: Vec<f64>,
    pub centered: bool,
}

impl EmpiricalDistribution {
    pub fn new_1d(samples: Vec<f64>) -> Self {
        EmpiricalDistribution { dim: 1, samples, centered: false }
    }

    pub fn new_2d(rows: Vec<[f64; 2]>) -> Self {
        EmpiricalDistribution { dim: 2, samples: rows.into_iter().flatten().collect(), centered: false }
    }

    pub fn len(&self) -> usize {
        self.samples.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn row2(&self, i: usize) -> [f64; 2] {
        [self.samples[2 * i], self.samples[2 * i + 1]]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        self.samples.iter().skip(c).step_by(self.dim).copied().collect()
    }

    pub fn marginal(&self, c: usize) -> EmpiricalDistribution {
        EmpiricalDistribution { dim: 1, samples: self.column(c), centered: self.centered }
    }

    pub fn mean(&self, c: usize) -> f64 {
        crate::stats::mean(&self.column(c))
    }

    pub fn variance(&self, c: usize) -> f64 {
        crate::stats::variance(&self.column(c))
    }

    pub fn center(&mut self) {
        for c in 0..self.dim {
            let m = self.mean(c);
            self.samples.iter_mut().skip(c).step_by(self.dim).for_each(|x| *x -= m);
        }
        self.centered = true;
    }
}

/// The larger eigenvalue of AᵀA for A = [[x², x(1-x)], [0, x]]:
/// λ(x) = x²(1 - x + x² + (1 - x)√(x² + 1)).
pub fn lambda_op(x: f64) -> f64 {
    x * x * (1.0 - x + x * x + (1.0 - x) * (x * x + 1.0).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionCertificate {
    /// Σ_i E‖A_iᵀ A_i‖_op = b E[λ(V)].
    pub sum_op_norms_2d: f64,
    /// Σ_i E[V_i²].
    pub sum_ev2_1d: f64,
    pub pass: bool,
}

pub fn contraction_certificate(spec: &SplitterSpec) -> Result<ContractionCertificate> {
    let b = spec.b() as f64;
    let sum_op = b * spec.expect(lambda_op)?;
    let sum_ev2 = b * spec.expect(|v| v * v)?;
    Ok(ContractionCertificate { sum_op_norms_2d: sum_op, sum_ev2_1d: sum_ev2, pass: sum_op < 1.0 && sum_ev2 < 1.0 })
}

/// Checks λ(x) < x at the interior points of a uniform grid with `points`
/// cells.
pub fn lambda_below_identity(points: usize) -> bool {
    (1..points).all(|i| {
        let x = i as f64 / points as f64;
        lambda_op(x) < x
    })
}

pub const EXP_MOMENT_GUARD: f64 = 2.0;

/// Empirical E[exp(λX)] on a grid of λ with |λ| ≤ 2.
pub fn exp_moment_curve(samples: &[f64], lambdas: &[f64]) -> Result<Vec<f64>> {
    if let Some(l) = lambdas.iter().find(|l| l.abs() > EXP_MOMENT_GUARD) {
        return Err(Error::InvalidArgument(format!("|λ| = {} exceeds {EXP_MOMENT_GUARD}", l.abs())));
    }
    let n = samples.len() as f64;
    Ok(lambdas
        .iter()
        .map(|&l| if l == 0.0 { 1.0 } else { samples.iter().map(|x| (l * x).exp()).sum::<f64>() / n })
        .collect())
}

/// Largest relative gap between two curves.
pub fn max_rel_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| ((x - y) / y).abs()).fold(0.0, f64::max)
}

/// Exact E[P_n] when a table is affordable.
fn exact_mean(params: &SplitTreeParams, spec: &SplitterSpec, n: u64) -> Option<f64> {
    exact_mean_path(n as usize, params, spec).ok().map(|t| t[n as usize])
}

/// Simulated (P_n - E[P_n]) / n and (W_n - E[W_n]) / n², centered by the
/// exact mean of P_n when available and by the sample means otherwise.
pub struct LimitSamples {
    pub n: u64,
    pub path: Vec<f64>,
    pub wiener: Vec<f64>,
    pub ep_exact: Option<f64>,
}

pub fn simulate_normalized(
    params: &SplitTreeParams,
    spec: &SplitterSpec,
    n: u64,
    reps: usize,
    seed: u64,
) -> Result<LimitSamples> {
    let raw = simulate_stats(params, spec, n, reps, seed)?;
    let nf = n as f64;
    let ep_exact = exact_mean(params, spec, n);
    let ps: Vec<f64> = raw.iter().map(|r| r.0 as f64).collect();
    let ep = ep_exact.unwrap_or_else(|| crate::stats::mean(&ps));
    let ws: Vec<f64> = raw.iter().map(|r| r.1 as f64).collect();
    let ew = crate::stats::mean(&ws);
    Ok(LimitSamples {
        n,
        path: ps.iter().map(|p| (p - ep) / nf).collect(),
        wiener: ws.iter().map(|w| (w - ew) / (nf * nf)).collect(),
        ep_exact,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailProbe {
    pub n: u64,
    pub eps: f64,
    pub reps: usize,
    pub hits: usize,
    pub probability: f64,
}

/// Empirical P(|P_n - E[P_n]| ≥ ε E[P_n]).
pub fn tail_probe(
    params: &SplitTreeParams,
    spec: &SplitterSpec,
    n: u64,
    eps: f64,
    reps: usize,
    seed: u64,
) -> Result<TailProbe> {
    let raw = simulate_stats(params, spec, n, reps, seed)?;
    let ps: Vec<f64> = raw.iter().map(|r| r.0 as f64).collect();
    let ep = exact_mean(params, spec, n).unwrap_or_else(|| crate::stats::mean(&ps));
    let hits = ps.iter().filter(|&&p| (p - ep).abs() >= eps * ep).count();
    Ok(TailProbe { n, eps, reps, hits, probability: hits as f64 / reps as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_values() {
        assert_eq!(lambda_op(0.0), 0.0);
        assert!((lambda_op(1.0) - 1.0).abs() < 1e-15);
        assert!(lambda_below_identity(10_000));
    }

    #[test]
    fn lambda_is_the_top_eigenvalue() {
        for i in 1..100 {
            let x = i as f64 / 100.0;
            // AᵀA = [[x⁴, x³(1-x)], [x³(1-x), x²(1-x)² + x²]].
            let (p, q, r) = (x.powi(4), x.powi(3) * (1.0 - x), x * x * (1.0 - x).powi(2) + x * x);
            let top = 0.5 * (p + r) + (0.25 * (p - r).powi(2) + q * q).sqrt();
            assert!((lambda_op(x) - top).abs() < 1e-14);
        }
    }

    #[test]
    fn certificates_pass_for_catalogue() {
        for spec in SplitterSpec::builtin_catalogue() {
            let c = contraction_certificate(&spec).unwrap();
            assert!(c.pass, "{} {c:?}", spec.family().label());
        }
        let c = contraction_certificate(&SplitterSpec::bst()).unwrap();
        assert!((c.sum_ev2_1d - 2.0 / 3.0).abs() < 1e-10);
        assert!(c.sum_op_norms_2d < 1.0);
    }

    #[test]
    fn exp_moments() {
        let xs = [-1.0, 0.0, 1.0];
        let grid = [-2.0, -1.0, 0.0, 1.0, 2.0];
        let c = exp_moment_curve(&xs, &grid).unwrap();
        assert_eq!(c[2], 1.0);
        assert!(c.windows(3).all(|w| w[0] + w[2] >= 2.0 * w[1]));
        assert!(exp_moment_curve(&xs, &[2.5]).is_err());
    }

    #[test]
    fn huge_eps_has_no_hits() {
        let p = SplitTreeParams::new(2, 1, 1, 0).unwrap();
        let t = tail_probe(&p, &SplitterSpec::bst(), 1000, 3.0, 2000, 1).unwrap();
        assert_eq!(t.hits, 0);
    }
}
