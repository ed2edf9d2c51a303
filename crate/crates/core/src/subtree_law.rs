//! The law of the root subtree size I_{n,1}: it is a binomial Bin(eta_n, V)
//! mixed over the marginal of V, shifted by s1.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::splitter::{xlogx, BetaComponent, SplitterSpec};
use crate::tree::{binomial, SplitTreeParams};
use statrs::function::gamma::ln_gamma;

/// pmf of I_{n,1}; `probs[j]` is P(I_{n,1} = j + s1).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubtreePmf {
    pub n: usize,
    pub eta_n: usize,
    pub s1: usize,
    pub probs: Vec<f64>,
}

impl SubtreePmf {
    /// P(I_{n,1} = k).
    pub fn prob(&self, k: usize) -> f64 {
        if k < self.s1 {
            return 0.0;
        }
        self.probs.get(k - self.s1).copied().unwrap_or(0.0)
    }

    /// (size, probability) pairs.
    pub fn support(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.probs.iter().enumerate().map(move |(j, &p)| (j + self.s1, p))
    }

    pub fn mean(&self) -> f64 {
        self.support().map(|(k, p)| k as f64 * p).sum()
    }

    pub fn total_mass(&self) -> f64 {
        self.probs.iter().sum()
    }
}

fn check_n(n: usize, params: &SplitTreeParams, spec: &SplitterSpec) -> Result<usize> {
    params.validate()?;
    params.check_splitter(spec)?;
    params
        .eta(n)
        .ok_or_else(|| Error::InvalidArgument(format!("subtree law needs n > s (n = {n}, s = {})", params.s)))
}

/// Beta-binomial pmf of Bin(eta, X), X ~ Beta(a, b), by the term ratio
/// p(j+1)/p(j) = (eta - j)(j + a) / ((j + 1)(eta - j - 1 + b)), started near
/// the mean and normalized at the end.
fn beta_binomial(eta: usize, c: &BetaComponent) -> Vec<f64> {
    let mut p = vec![0.0; eta + 1];
    let e = eta as f64;
    let start = ((e * c.a / (c.a + c.b)).round() as usize).min(eta);
    p[start] = 1.0;
    for j in start..eta {
        let jf = j as f64;
        p[j + 1] = p[j] * (e - jf) * (jf + c.a) / ((jf + 1.0) * (e - jf - 1.0 + c.b));
    }
    for j in (0..start).rev() {
        let jf = j as f64;
        p[j] = p[j + 1] * (jf + 1.0) * (e - jf - 1.0 + c.b) / ((e - jf) * (jf + c.a));
    }
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= total);
    p
}

/// The exact pmf of I_{n,1}. The marginal of V is a Beta mixture for every
/// built-in family, so the mixed binomial integral is evaluated in closed form.
pub fn subtree_pmf(n: usize, params: &SplitTreeParams, spec: &SplitterSpec) -> Result<SubtreePmf> {
    let eta = check_n(n, params, spec)?;
    let probs = if spec.is_bst() {
        vec![1.0 / (eta + 1) as f64; eta + 1]
    } else {
        let mut probs = vec![0.0; eta + 1];
        for c in spec.marginal_components() {
            for (acc, q) in probs.iter_mut().zip(beta_binomial(eta, &c)) {
                *acc += c.weight * q;
            }
        }
        probs
    };
    Ok(SubtreePmf { n, eta_n: eta, s1: params.s1, probs })
}

/// The same pmf by adaptive Gauss-Legendre quadrature of the binomial kernel
/// against f_V, with log-space binomial coefficients.
pub fn subtree_pmf_quadrature(n: usize, params: &SplitTreeParams, spec: &SplitterSpec) -> Result<SubtreePmf> {
    let eta = check_n(n, params, spec)?;
    let f = spec.density_fn();
    let q = spec.integrator();
    let e = eta as f64;
    let ln_fact: Vec<f64> = std::iter::once(0.0)
        .chain((1..=eta).scan(0.0, |acc, i| {
            *acc += (i as f64).ln();
            Some(*acc)
        }))
        .collect();
    let mut probs = Vec::with_capacity(eta + 1);
    for k in 0..=eta {
        let kf = k as f64;
        let ln_c = ln_fact[eta] - ln_fact[k] - ln_fact[eta - k];
        let kernel = |x: f64| {
            if x <= 0.0 || x >= 1.0 {
                return 0.0;
            }
            let lk = if k == 0 { 0.0 } else { kf * x.ln() };
            let lr = if k == eta { 0.0 } else { (e - kf) * (-x).ln_1p() };
            (ln_c + lk + lr).exp() * f(x)
        };
        // Place breaks around the kernel peak at k / eta.
        let c = kf / e;
        let w = (c * (1.0 - c) / e).sqrt().max(1.0 / e);
        let mut breaks = vec![0.0];
        for t in [-12.0, -3.0, 0.0, 3.0, 12.0] {
            let x = c + t * w;
            if x > *breaks.last().unwrap() && x < 1.0 {
                breaks.push(x);
            }
        }
        breaks.push(1.0);
        probs.push(q.integrate_with_breaks(kernel, &breaks)?);
    }
    Ok(SubtreePmf { n, eta_n: eta, s1: params.s1, probs })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub n: usize,
    pub eps: f64,
    pub draws: usize,
    pub empirical: f64,
    pub bernstein_bound: f64,
}

impl ConcentrationReport {
    /// empirical ≤ bound × 1.05; the unspecified O(1/n) factor in the exponent
    /// is absorbed by the slack.
    pub fn within_bound(&self) -> bool {
        self.empirical <= self.bernstein_bound * 1.05
    }
}

pub const CONCENTRATION_DRAWS: usize = 1_000_000;

/// Monte Carlo P(|I_{n,1}/n - V_1| ≥ eps) from coupled draws (V, then the
/// binomial given V) against 2 exp(-n eps² / 4).
pub fn concentration_report(
    n: usize,
    params: &SplitTreeParams,
    spec: &SplitterSpec,
    eps: f64,
    seed: u64,
) -> Result<ConcentrationReport> {
    concentration_report_with(n, params, spec, eps, seed, CONCENTRATION_DRAWS)
}

pub fn concentration_report_with(
    n: usize,
    params: &SplitTreeParams,
    spec: &SplitterSpec,
    eps: f64,
    seed: u64,
    draws: usize,
) -> Result<ConcentrationReport> {
    if n < 10 {
        return Err(Error::InvalidArgument(format!("concentration needs n ≥ 10, got {n}")));
    }
    let eta = check_n(n, params, spec)? as u64;
    let sampler = spec.sampler();
    let b = spec.b();
    let nf = n as f64;
    let s1 = params.s1 as u64;
    let hits: usize = (0..draws.div_ceil(rng::BLOCK))
        .into_par_iter()
        .map(|blk| {
            let mut r = rng::stream(seed, "concentration", blk as u64);
            let mut v = vec![0.0; b];
            let lo = blk * rng::BLOCK;
            let hi = (lo + rng::BLOCK).min(draws);
            let mut c = 0;
            for _ in lo..hi {
                sampler.sample_into(&mut r, &mut v);
                let i = binomial(eta, v[0], &mut r) + s1;
                if (i as f64 / nf - v[0]).abs() >= eps {
                    c += 1;
                }
            }
            c
        })
        .sum();
    Ok(ConcentrationReport {
        n,
        eps,
        draws,
        empirical: hits as f64 / draws as f64,
        bernstein_bound: 2.0 * (-nf * eps * eps / 4.0).exp(),
    })
}

/// Exact moments of I = I_{n,1} next to their large-n expansions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentAsymptotics {
    pub n: usize,
    /// E[I²]
    pub ei2: f64,
    /// E[I ln I]
    pub eilogi: f64,
    /// E[I² ln I]
    pub ei2logi: f64,
    pub predictions: MomentPredictions,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentPredictions {
    /// E[V²] n²
    pub ei2: f64,
    /// n ln n / b + E[V ln V] n
    pub eilogi: f64,
    /// E[V²] n² ln n + E[V² ln V] n²
    pub ei2logi: f64,
}

impl MomentAsymptotics {
    pub fn rel_gap_ei2(&self) -> f64 {
        rel_gap(self.ei2, self.predictions.ei2)
    }

    /// (E[I ln I] - n ln n / b) / n against E[V ln V].
    pub fn second_order_eilogi(&self, b: usize) -> f64 {
        let nf = self.n as f64;
        (self.eilogi - nf * nf.ln() / b as f64) / nf
    }

    /// (E[I² ln I] - E[I²] ln n) / n² against E[V² ln V].
    pub fn second_order_ei2logi(&self) -> f64 {
        let nf = self.n as f64;
        (self.ei2logi - self.ei2 * nf.ln()) / (nf * nf)
    }
}

fn rel_gap(x: f64, y: f64) -> f64 {
    if y == 0.0 {
        return (x - y).abs();
    }
    ((x - y) / y).abs()
}

pub fn moment_asymptotics(n: usize, params: &SplitTreeParams, spec: &SplitterSpec) -> Result<MomentAsymptotics> {
    let pmf = subtree_pmf(n, params, spec)?;
    let (mut ei2, mut eilogi, mut ei2logi) = (0.0, 0.0, 0.0);
    for (k, p) in pmf.support() {
        let kf = k as f64;
        ei2 += p * kf * kf;
        eilogi += p * xlogx(kf);
        ei2logi += p * kf * xlogx(kf);
    }
    let nf = n as f64;
    let ev2 = spec.expect(|v| v * v)?;
    let ev_logv = spec.expect(xlogx)?;
    let ev2logv = spec.expect(|v| v * xlogx(v))?;
    Ok(MomentAsymptotics {
        n,
        ei2,
        eilogi,
        ei2logi,
        predictions: MomentPredictions {
            ei2: ev2 * nf * nf,
            eilogi: nf * nf.ln() / spec.b() as f64 + ev_logv * nf,
            ei2logi: ev2 * nf * nf * nf.ln() + ev2logv * nf * nf,
        },
    })
}

/// Draws one I_{n,1} from the mixed binomial.
pub fn sample_subtree_size<R: Rng + ?Sized>(
    eta: u64,
    s1: u64,
    sampler: &crate::splitter::SplitSampler,
    rng: &mut R,
    scratch: &mut [f64],
) -> u64 {
    sampler.sample_into(rng, scratch);
    binomial(eta, scratch[0], rng) + s1
}

/// Pointwise evaluation of P(I_{n,1} = k) through log-gamma, for callers that
/// need a few atoms of many different laws.
#[derive(Clone, Debug)]
pub struct PointwiseSubtreeLaw {
    eta: usize,
    s1: usize,
    uniform: bool,
    comps: Vec<(f64, f64, f64)>,
    ln_fact_eta: f64,
}

impl PointwiseSubtreeLaw {
    pub fn new(n: usize, params: &SplitTreeParams, spec: &SplitterSpec) -> Result<Self> {
        let eta = check_n(n, params, spec)?;
        let comps = spec
            .marginal_components()
            .iter()
            .map(|c| (c.weight.ln() - c.ln_beta(), c.a, c.b))
            .collect();
        Ok(PointwiseSubtreeLaw {
            eta,
            s1: params.s1,
            uniform: spec.is_bst(),
            comps,
            ln_fact_eta: ln_gamma(eta as f64 + 1.0),
        })
    }

    pub fn prob(&self, k: usize) -> f64 {
        if k < self.s1 || k - self.s1 > self.eta {
            return 0.0;
        }
        if self.uniform {
            return 1.0 / (self.eta + 1) as f64;
        }
        let j = (k - self.s1) as f64;
        let e = self.eta as f64;
        let ln_c = self.ln_fact_eta - ln_gamma(j + 1.0) - ln_gamma(e - j + 1.0);
        self.comps
            .iter()
            .map(|&(lw, a, b)| (lw + ln_c + ln_gamma(j + a) + ln_gamma(e - j + b) - ln_gamma(e + a + b)).exp())
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bst() -> (SplitTreeParams, SplitterSpec) {
        (SplitTreeParams::new(2, 1, 1, 0).unwrap(), SplitterSpec::bst())
    }

    #[test]
    fn bst_pmf_is_uniform_by_quadrature() {
        let (p, spec) = bst();
        let q = subtree_pmf_quadrature(100, &p, &spec).unwrap();
        for (_, x) in q.support() {
            assert!((x - 0.01).abs() < 1e-10, "{x}");
        }
    }

    #[test]
    fn first_overflow_is_a_fair_coin() {
        let (p, spec) = bst();
        let pmf = subtree_pmf(2, &p, &spec).unwrap();
        assert_eq!(pmf.eta_n, 1);
        assert_eq!(pmf.probs, vec![0.5, 0.5]);
        let q = subtree_pmf_quadrature(2, &p, &spec).unwrap();
        assert!((q.probs[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn median_of_three_mean() {
        let p = SplitTreeParams::default_for(SplitterSpec::median_of(1).family());
        let pmf = subtree_pmf(500, &p, &SplitterSpec::median_of(1)).unwrap();
        assert!((pmf.mean() - 499.0 / 2.0).abs() < 1e-8);
    }

    #[test]
    fn closed_form_matches_quadrature_across_catalogue() {
        for spec in SplitterSpec::builtin_catalogue() {
            let p = SplitTreeParams::default_for(spec.family());
            for n in [p.s + 1, 20, 300] {
                let a = subtree_pmf(n, &p, &spec).unwrap();
                let b = subtree_pmf_quadrature(n, &p, &spec).unwrap();
                let err = a.probs.iter().zip(&b.probs).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                assert!(err < 1e-10, "{} n={n}: {err}", spec.family().label());
                assert!((a.total_mass() - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn mass_is_one_up_to_ten_thousand() {
        for spec in SplitterSpec::builtin_catalogue() {
            let p = SplitTreeParams::default_for(spec.family());
            for n in [10usize, 1000, 10_000] {
                let pmf = subtree_pmf(n, &p, &spec).unwrap();
                assert!((pmf.total_mass() - 1.0).abs() < 1e-10);
                assert!(pmf.probs.iter().all(|&x| x >= 0.0));
            }
        }
    }

    #[test]
    fn pointwise_matches_table() {
        for spec in SplitterSpec::builtin_catalogue() {
            let p = SplitTreeParams::default_for(spec.family());
            let pmf = subtree_pmf(777, &p, &spec).unwrap();
            let pw = PointwiseSubtreeLaw::new(777, &p, &spec).unwrap();
            for (k, x) in pmf.support() {
                assert!((pw.prob(k) - x).abs() < 1e-10 * x.max(1e-3), "{k}");
            }
            assert_eq!(pw.prob(10_000), 0.0);
        }
    }

    #[test]
    fn needs_n_above_capacity() {
        let (p, spec) = bst();
        assert!(subtree_pmf(1, &p, &spec).is_err());
    }

    #[test]
    fn concentration_trivial_and_bounds() {
        let (p, spec) = bst();
        let r = concentration_report_with(50, &p, &spec, 1.0, 1, 10_000).unwrap();
        assert_eq!(r.empirical, 0.0);
        let r = concentration_report_with(10_000, &p, &spec, 0.05, 2, 200_000).unwrap();
        assert!(r.within_bound(), "{r:?}");
        let r = concentration_report_with(1000, &p, &spec, 0.3, 3, 200_000).unwrap();
        assert!(r.empirical < 1e-5);
    }

    #[test]
    fn bst_moment_expansions() {
        let (p, spec) = bst();
        let m = moment_asymptotics(10_000, &p, &spec).unwrap();
        assert!((m.ei2 / 1e8 - 1.0 / 3.0).abs() < 2e-4);
        let second = m.eilogi - 1e4 * 1e4f64.ln() / 2.0;
        assert!(((second - (-2500.0)) / 2500.0).abs() < 0.02, "{second}");
    }

    #[test]
    fn two_point_law_moment() {
        let (p, spec) = bst();
        let m = moment_asymptotics(2, &p, &spec).unwrap();
        // I ∈ {0, 1} with mass 1/2 each; 1² ln 1 = 0.
        assert_eq!(m.ei2logi, 0.0);
        assert_eq!(m.ei2, 0.5);
    }

    #[test]
    fn second_order_trends() {
        for spec in SplitterSpec::builtin_catalogue() {
            let p = SplitTreeParams::default_for(spec.family());
            let ev2 = spec.expect(|v| v * v).unwrap();
            let evl = spec.expect(xlogx).unwrap();
            let ev2l = spec.expect(|v| v * xlogx(v)).unwrap();
            let mut gaps = Vec::new();
            for n in [100usize, 1000, 10_000] {
                let m = moment_asymptotics(n, &p, &spec).unwrap();
                let nf = n as f64;
                gaps.push([
                    rel_gap(m.ei2 / (nf * nf), ev2),
                    rel_gap(m.second_order_eilogi(spec.b()), evl),
                    rel_gap(m.second_order_ei2logi(), ev2l),
                ]);
            }
            for i in 0..3 {
                assert!(gaps[2][i] <= gaps[1][i] && gaps[1][i] <= gaps[0][i], "{} {i} {gaps:?}", spec.family().label());
                assert!(gaps[2][i] < 0.02, "{} {i} {gaps:?}", spec.family().label());
            }
        }
    }
}
