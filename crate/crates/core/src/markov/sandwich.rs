//! Renewal processes sandwiching the chain below a threshold a.
//!
//! For states x ≤ a the increment laws F_x are bounded by the pointwise
//! envelopes F̄_a = inf F_x and F̲_a = sup F_x. Feeding one uniform stream
//! through the three quantile functions orders the increments, hence the
//! partial sums, pathwise.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_chain_params, limit_increment_cdf, nu_pmf, ChainState, StoppingRule, TransitionSampler};
use crate::error::{Error, Result};
use crate::rng;
use crate::splitter::SplitterSpec;
use crate::stats::{mean_estimate, MeanEstimate};
use crate::tree::SplitTreeParams;

pub const GRID_STEP: f64 = 1e-3;
pub const ENVELOPE_CAP: usize = 100_000;
const SPARSE_RATIO: f64 = 1.005;
const TABLE_BUDGET: usize = 20_000_000;

/// Tail sums T_m(k) = ν_m([k, ∞)).
enum Tails {
    /// Closed form for the binary search tree:
    /// T_m(k) = (m(m-1) - k(k-1)) / m² + 1/m for 1 ≤ k ≤ m - 1.
    Bst,
    Table { lo: usize, tabs: Vec<Vec<f64>> },
}

impl Tails {
    fn tail(&self, m: usize, k: usize) -> f64 {
        match self {
            Tails::Bst => {
                if m == 1 {
                    return if k == 0 { 1.0 } else { 0.0 };
                }
                if k >= m {
                    return 0.0;
                }
                if k == 0 {
                    return 1.0;
                }
                let (mf, kf) = (m as f64, k as f64);
                (mf * (mf - 1.0) - kf * (kf - 1.0)) / (mf * mf) + 1.0 / mf
            }
            Tails::Table { lo, tabs } => tabs[m - lo].get(k).copied().unwrap_or(0.0),
        }
    }
}

fn tails_of(m: usize, params: &SplitTreeParams, spec: &SplitterSpec) -> Result<Vec<f64>> {
    Ok(nu_pmf(m, params, spec)?.tails())
}

/// F_m(t) = T_m(ceil(m e^{-t})), the law of ln(m / K).
fn cdf_from_tail<T: Fn(usize) -> f64>(m: usize, t: f64, tail: T) -> f64 {
    let k = ((m as f64) * (-t).exp()).ceil().max(1.0) as usize;
    tail(k)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SandwichInfo {
    pub a: f64,
    pub m_min: usize,
    /// Every size in [m_min, exhaustive_to] enters the envelopes.
    pub exhaustive_to: usize,
    /// Largest size in the sparse geometric part.
    pub m_cap: usize,
    pub curves: usize,
    /// sup over the grid of |F_{m_cap} - F|, the gap left by truncation.
    pub truncation_error: f64,
}

pub struct RenewalSandwich {
    info: SandwichInfo,
    d_max: f64,
    bar: Vec<f64>,
    under: Vec<f64>,
    tails: Tails,
    s: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SandwichPath {
    pub chain_sum: f64,
    pub bar_sum: f64,
    pub underline_sum: f64,
    pub chain_steps: usize,
    pub bar_steps: usize,
    pub underline_steps: usize,
    /// Increment ordering held at every step.
    pub ordered: bool,
}

impl RenewalSandwich {
    /// Builds the envelopes for threshold `a`, exact for every chain started
    /// at a size ≤ `exhaustive_to`, for γ(d) runs with d ≤ `d_max`.
    pub fn new(
        a: f64,
        exhaustive_to: usize,
        d_max: f64,
        params: &SplitTreeParams,
        spec: &SplitterSpec,
    ) -> Result<Self> {
        check_chain_params(params, spec)?;
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(d_max > 0.0) {
            return Err(Error::InvalidArgument(format!("d_max = {d_max} must be positive")));
        }
        let m_min = ((-a).exp().floor() as usize).max(1);
        let exhaustive_to = exhaustive_to.max(m_min);
        let m_cap = ENVELOPE_CAP.max(10 * m_min).max(exhaustive_to);
        let tails = if spec.is_bst() && *params == SplitTreeParams::new(2, 1, 1, 0)? {
            Tails::Bst
        } else {
            let entries: usize = (m_min..=exhaustive_to).map(|m| m + 1).sum();
            if entries > TABLE_BUDGET {
                return Err(Error::TooLarge(format!(
                    "exact increment tables for sizes {m_min}..={exhaustive_to} need {entries} entries"
                )));
            }
            let tabs = (m_min..=exhaustive_to)
                .map(|m| tails_of(m, params, spec))
                .collect::<Result<Vec<_>>>()?;
            Tails::Table { lo: m_min, tabs }
        };

        let n_grid = (d_max / GRID_STEP).ceil() as usize + 2;
        let grid: Vec<f64> = (0..n_grid).map(|i| i as f64 * GRID_STEP).collect();
        let mut bar = limit_increment_cdf(spec, &grid)?;
        let mut under = bar.clone();
        let absorb = |tail: &dyn Fn(usize) -> f64, m: usize, bar: &mut [f64], under: &mut [f64]| {
            for (i, &t) in grid.iter().enumerate() {
                let f = cdf_from_tail(m, t, tail);
                bar[i] = bar[i].min(f);
                under[i] = under[i].max(f);
            }
        };
        let mut curves = 1;
        for m in m_min..=exhaustive_to {
            absorb(&|k| tails.tail(m, k), m, &mut bar, &mut under);
            curves += 1;
        }
        let mut sparse = Vec::new();
        let mut x = exhaustive_to as f64;
        loop {
            x *= SPARSE_RATIO;
            let m = (x.ceil() as usize).min(m_cap);
            if m > exhaustive_to && sparse.last() != Some(&m) {
                sparse.push(m);
            }
            if m >= m_cap {
                break;
            }
        }
        let mut last_tail: Option<Vec<f64>> = None;
        for &m in &sparse {
            let t = match &tails {
                Tails::Bst => None,
                Tails::Table { .. } => Some(tails_of(m, params, spec)?),
            };
            match &t {
                None => absorb(&|k| tails.tail(m, k), m, &mut bar, &mut under),
                Some(tab) => absorb(&|k| tab.get(k).copied().unwrap_or(0.0), m, &mut bar, &mut under),
            }
            curves += 1;
            last_tail = t;
        }
        // Truncation gap: F_{m_cap} against the limit F on the grid.
        let limit = limit_increment_cdf(spec, &grid)?;
        let truncation_error = grid
            .iter()
            .zip(&limit)
            .map(|(&t, &f)| {
                let fm = match &last_tail {
                    Some(tab) => cdf_from_tail(m_cap, t, |k| tab.get(k).copied().unwrap_or(0.0)),
                    None => cdf_from_tail(m_cap, t, |k| tails.tail(m_cap, k)),
                };
                (fm - f).abs()
            })
            .fold(0.0, f64::max);
        Ok(RenewalSandwich {
            info: SandwichInfo { a, m_min, exhaustive_to, m_cap, curves, truncation_error },
            d_max,
            bar,
            under,
            tails,
            s: params.s,
        })
    }

    pub fn info(&self) -> &SandwichInfo {
        &self.info
    }

    fn first_at_least(curve: &[f64], u: f64) -> Option<usize> {
        let i = curve.partition_point(|&f| f < u);
        (i < curve.len()).then_some(i)
    }

    /// F̄_a^{-1}(u) rounded up to the grid; +∞ past the grid.
    pub fn bar_increment(&self, u: f64) -> f64 {
        match Self::first_at_least(&self.bar, u) {
            Some(i) => i as f64 * GRID_STEP,
            None => f64::INFINITY,
        }
    }

    /// A grid value strictly below F̲_a^{-1}(u).
    pub fn underline_increment(&self, u: f64) -> f64 {
        match Self::first_at_least(&self.under, u) {
            Some(i) => i.saturating_sub(1) as f64 * GRID_STEP,
            None => (self.under.len() - 1) as f64 * GRID_STEP,
        }
    }

    /// The chain's next size from m under the quantile coupling: the largest
    /// k ≥ 1 with T_m(k) ≥ u, or absorption.
    pub fn chain_next(&self, m: usize, u: f64) -> u64 {
        if m <= self.s {
            return 0;
        }
        if self.tails.tail(m, 1) < u {
            return 0;
        }
        let (mut lo, mut hi) = (1usize, m);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.tails.tail(m, mid) >= u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo as u64
    }

    /// Runs chain, bar and underline processes from -ln start_n on one
    /// uniform stream, each until its own γ(d), summing exp(-α(S_t - S_0))
    /// over t < γ(d).
    pub fn run<R: Rng + ?Sized>(&self, start_n: usize, d: f64, alpha: f64, rng: &mut R) -> Result<SandwichPath> {
        let s0 = -(start_n as f64).ln();
        if s0 + d > self.info.a + 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "start -ln {start_n} + d exceeds the threshold a = {}",
                self.info.a
            )));
        }
        if start_n > self.info.exhaustive_to || d > self.d_max {
            return Err(Error::InvalidArgument("start or d outside the envelope range".into()));
        }
        let (mut sc, mut sb, mut su) = (0.0f64, 0.0f64, 0.0f64);
        let (mut cc, mut cb, mut cu) = (0usize, 0usize, 0usize);
        let (mut tc, mut tb, mut tu) = (0.0, 0.0, 0.0);
        let (mut live_c, mut live_b, mut live_u) = (true, true, true);
        let mut m = start_n;
        let mut ordered = true;
        let ln_start = (start_n as f64).ln();
        while live_c || live_b || live_u {
            let u: f64 = rng.random::<f64>();
            if live_c {
                sc += (-alpha * tc).exp();
                cc += 1;
            }
            if live_b {
                sb += (-alpha * tb).exp();
                cb += 1;
            }
            if live_u {
                su += (-alpha * tu).exp();
                cu += 1;
            }
            let inc_b = self.bar_increment(u);
            let inc_u = self.underline_increment(u);
            if live_c {
                let k = self.chain_next(m, u);
                let inc = if k == 0 { f64::INFINITY } else { (m as f64 / k as f64).ln() };
                ordered &= inc_u <= inc && inc <= inc_b;
                m = k as usize;
                tc = if m == 0 { f64::INFINITY } else { ln_start - (m as f64).ln() };
                live_c = tc < d;
            }
            if live_b {
                tb += inc_b;
                live_b = tb < d;
            }
            if live_u {
                tu += inc_u;
                live_u = tu < d;
            }
        }
        Ok(SandwichPath {
            chain_sum: sc,
            bar_sum: sb,
            underline_sum: su,
            chain_steps: cc,
            bar_steps: cb,
            underline_steps: cu,
            ordered,
        })
    }

    /// û = E_0 #{t : S̲_t ∈ [0, 1]} for the underline renewal process.
    pub fn underline_occupation(&self, runs: usize, seed: u64) -> MeanEstimate {
        let counts: Vec<f64> = rng::par_replicates(seed, "occupation-underline", runs, |rg, _| {
            let mut s = 0.0;
            let mut c = 0usize;
            while s <= 1.0 {
                c += 1;
                s += self.underline_increment(rg.random::<f64>());
            }
            c as f64
        });
        mean_estimate(&counts)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SandwichSummary {
    pub runs: usize,
    pub all_ordered: bool,
    pub sums_ordered: bool,
    pub chain: MeanEstimate,
    pub bar: MeanEstimate,
    pub underline: MeanEstimate,
}

#[allow(clippy::too_many_arguments)]
pub fn sandwich_run(
    a: f64,
    d: f64,
    start_n: usize,
    alpha: f64,
    params: &SplitTreeParams,
    spec: &SplitterSpec,
    runs: usize,
    seed: u64,
) -> Result<SandwichSummary> {
    let sw = RenewalSandwich::new(a, start_n, d, params, spec)?;
    sandwich_summary(&sw, start_n, d, alpha, runs, seed)
}

pub fn sandwich_summary(
    sw: &RenewalSandwich,
    start_n: usize,
    d: f64,
    alpha: f64,
    runs: usize,
    seed: u64,
) -> Result<SandwichSummary> {
    let paths = rng::par_replicates(seed, "sandwich", runs, |rg, _| sw.run(start_n, d, alpha, rg));
    let paths = paths.into_iter().collect::<Result<Vec<_>>>()?;
    let pick = |f: fn(&SandwichPath) -> f64| mean_estimate(&paths.iter().map(f).collect::<Vec<_>>());
    Ok(SandwichSummary {
        runs,
        all_ordered: paths.iter().all(|p| p.ordered),
        sums_ordered: paths.iter().all(|p| p.underline_sum >= p.chain_sum && p.chain_sum >= p.bar_sum),
        chain: pick(|p| p.chain_sum),
        bar: pick(|p| p.bar_sum),
        underline: pick(|p| p.underline_sum),
    })
}

/// Monte Carlo mean of Σ_{t<γ(d)} exp(-α(S_t - S_0)) for the chain itself,
/// with the exact structural sampler.
pub fn chain_exp_sum(
    start_n: u64,
    d: f64,
    alpha: f64,
    params: &SplitTreeParams,
    spec: &SplitterSpec,
    runs: usize,
    seed: u64,
) -> Result<MeanEstimate> {
    let t = TransitionSampler::new(params, spec)?;
    let start = ChainState::Size(start_n);
    let rule = StoppingRule::Gamma(d);
    let vals: Vec<f64> = rng::par_replicates(seed, "exp-sum", runs, |rg, _| {
        let mut x = start;
        let mut acc = 0.0;
        while !rule.stops(x, start) {
            acc += (-alpha * (x.value() - start.value())).exp();
            x = t.step(x, rg);
        }
        acc
    });
    Ok(mean_estimate(&vals))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bst() -> (SplitTreeParams, SplitterSpec) {
        (SplitTreeParams::new(2, 1, 1, 0).unwrap(), SplitterSpec::bst())
    }

    #[test]
    fn bst_closed_tails_match_tables() {
        let (p, spec) = bst();
        for m in [2usize, 3, 10, 257] {
            let tab = tails_of(m, &p, &spec).unwrap();
            for k in 0..=m + 1 {
                let want = tab.get(k).copied().unwrap_or(0.0);
                assert!((Tails::Bst.tail(m, k) - want).abs() < 1e-12, "{m} {k}");
            }
        }
    }

    #[test]
    fn ordering_bst() {
        let (p, spec) = bst();
        let s = sandwich_run(-(2000f64).ln() + 3.0, 3.0, 2000, 1.0, &p, &spec, 20_000, 7).unwrap();
        assert!(s.all_ordered && s.sums_ordered);
        assert!(s.underline.mean >= s.chain.mean && s.chain.mean >= s.bar.mean);
    }

    #[test]
    fn ordering_generic_family() {
        let spec = SplitterSpec::median_of(1);
        let p = SplitTreeParams::default_for(spec.family());
        let s = sandwich_run(-(600f64).ln() + 2.0, 2.0, 600, 1.0, &p, &spec, 5000, 8).unwrap();
        assert!(s.all_ordered && s.sums_ordered);
    }

    #[test]
    fn tiny_d_gives_short_sums() {
        let (p, spec) = bst();
        let sw = RenewalSandwich::new(-(1000f64).ln() + 1e-3, 1000, 1e-3, &p, &spec).unwrap();
        let mut r = rng::stream(1, "t", 0);
        for _ in 0..1000 {
            let path = sw.run(1000, 1e-3, 1.0, &mut r).unwrap();
            assert!(path.ordered);
            assert!(path.chain_steps <= 2 && path.bar_steps <= 2);
        }
    }

    #[test]
    fn chain_quantile_coupling_has_the_right_law() {
        let (p, spec) = bst();
        let sw = RenewalSandwich::new(-(40f64).ln() + 1.0, 40, 1.0, &p, &spec).unwrap();
        let nu = nu_pmf(40, &p, &spec).unwrap();
        let mut counts = vec![0u64; nu.probs.len()];
        let mut r = rng::stream(2, "t", 0);
        for _ in 0..200_000 {
            counts[sw.chain_next(40, r.random::<f64>()) as usize] += 1;
        }
        assert!(crate::stats::chi_square_gof(&counts, &nu.probs, 5.0).2 > 0.001);
    }

    #[test]
    fn underline_occupation_bounds_chain_occupation() {
        let (p, spec) = bst();
        let a = -(100f64).ln();
        let sw = RenewalSandwich::new(a, 100, 2.0, &p, &spec).unwrap();
        let u_hat = sw.underline_occupation(50_000, 3);
        let occ = super::super::occupation(100_000, a, &p, &spec, 50_000, 4).unwrap();
        assert!(occ.mean <= u_hat.mean + 3.0 * u_hat.stderr, "{occ:?} {u_hat:?}");
    }
}
