//! Gauss-Legendre rules and a globally adaptive composite integrator on
//! bounded intervals.

use std::collections::BinaryHeap;
use std::cmp::Ordering;

use crate::error::{Error, Result};

/// Convergence threshold for reported integrals.
pub const CONVERGENCE_TOL: f64 = 1e-8;

/// An `n`-point Gauss-Legendre rule on [-1, 1].
#[derive(Clone, Debug)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            // Tricomi initial guess, then Newton on P_n.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        GaussLegendre { nodes, weights }
    }

    /// Applies the rule on [a, b].
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: &F, a: f64, b: f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(mid + half * x))
            .sum::<f64>()
            * half
    }

    /// Nodes and weights mapped onto [a, b].
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mid + half * x, w * half))
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p, d)
}

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Globally adaptive composite Gauss-Legendre integration.
///
/// Each panel is estimated with the base rule and with the rule applied to
/// its two halves; the difference is the panel error. The panel with the
/// largest error is bisected until the summed error drops below
/// `max(abs_tol, rel_tol * |I|)`.
#[derive(Clone, Debug)]
pub struct Integrator {
    rule: GaussLegendre,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_panels: usize,
}

impl Integrator {
    pub fn new(nodes: usize) -> Self {
        Integrator {
            rule: GaussLegendre::new(nodes),
            abs_tol: 1e-13,
            rel_tol: 1e-12,
            max_panels: 4000,
        }
    }

    fn panel<F: Fn(f64) -> f64>(&self, f: &F, a: f64, b: f64) -> Panel {
        let whole = self.rule.integrate(f, a, b);
        let m = 0.5 * (a + b);
        let halves = self.rule.integrate(f, a, m) + self.rule.integrate(f, m, b);
        Panel {
            a,
            b,
            value: halves,
            error: (whole - halves).abs(),
        }
    }

    /// Integrates `f` over [a, b] starting from the given breakpoints.
    pub fn integrate_with_breaks<F: Fn(f64) -> f64>(&self, f: F, breaks: &[f64]) -> Result<f64> {
        let mut heap = BinaryHeap::new();
        for w in breaks.windows(2) {
            if w[1] > w[0] {
                heap.push(self.panel(&f, w[0], w[1]));
            }
        }
        loop {
            let total: f64 = heap.iter().map(|p| p.value).sum();
            let err: f64 = heap.iter().map(|p| p.error).sum();
            let target = self.abs_tol.max(self.rel_tol * total.abs());
            if err <= target {
                return Ok(total);
            }
            if heap.len() >= self.max_panels {
                if err <= CONVERGENCE_TOL.max(CONVERGENCE_TOL * total.abs()) {
                    return Ok(total);
                }
                return Err(Error::QuadratureNotConverged(format!(
                    "error estimate {err:.3e} after {} panels",
                    heap.len()
                )));
            }
            let worst = heap.pop().expect("non-empty panel set");
            let m = 0.5 * (worst.a + worst.b);
            if m <= worst.a || m >= worst.b {
                // Panel cannot be split further in floating point.
                if err - worst.error <= CONVERGENCE_TOL {
                    return Ok(total);
                }
                return Err(Error::QuadratureNotConverged(
                    "panel width below machine resolution".into(),
                ));
            }
            heap.push(self.panel(&f, worst.a, m));
            heap.push(self.panel(&f, m, worst.b));
        }
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F, a: f64, b: f64) -> Result<f64> {
        if a == b {
            return Ok(0.0);
        }
        self.integrate_with_breaks(f, &[a, 0.5 * (a + b), b])
    }
}
