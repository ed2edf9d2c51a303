//! Exact laws of the stopped chain and the Wasserstein coupling of two chains.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_chain_params, nu_pmf, ChainState, TransitionSampler};
use crate::error::{Error, Result};
use crate::rng;
use crate::splitter::SplitterSpec;
use crate::subtree_law::PointwiseSubtreeLaw;
use crate::tree::SplitTreeParams;

pub const PUSHFORWARD_MAX_START: usize = 8000;
pub const MASS_TOL: f64 = 1e-9;

/// The largest size whose state -ln k is at or past `a`.
pub fn threshold_size(a: f64) -> u64 {
    ((-a).exp() * (1.0 + 1e-12)).floor() as u64
}

/// Law of the size at τ(a); `probs[k]` is the mass on size k for
/// k ≤ threshold, with k = 0 the absorbing state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoppedPmf {
    pub start_n: usize,
    pub threshold: usize,
    pub probs: Vec<f64>,
    /// Largest deviation of the total mass from 1 seen during the sweep.
    pub max_mass_error: f64,
}

impl StoppedPmf {
    pub fn total_mass(&self) -> f64 {
        self.probs.iter().sum()
    }
}

/// Pushes the point mass at -ln start_n through ν until every atom sits at
/// or past a. Sizes only decrease, so one descending sweep suffices.
pub fn state_pmf_pushforward(
    start_n: usize,
    a: f64,
    params: &SplitTreeParams,
    spec: &SplitterSpec,
) -> Result<StoppedPmf> {
    if start_n > PUSHFORWARD_MAX_START {
        return Err(Error::TooLarge(format!(
            "exact push-forward is limited to start_n ≤ {PUSHFORWARD_MAX_START}, got {start_n}"
        )));
    }
    if start_n == 0 {
        return Err(Error::InvalidArgument("start_n must be ≥ 1".into()));
    }
    check_chain_params(params, spec)?;
    let thr = (threshold_size(a) as usize).min(start_n);
    let mut mass = vec![0.0; start_n + 1];
    mass[start_n] = 1.0;
    let mut max_err: f64 = 0.0;
    for m in (thr + 1..=start_n).rev() {
        let w = mass[m];
        if w == 0.0 {
            continue;
        }
        let nu = nu_pmf(m, params, spec)?;
        for (k, p) in nu.probs.iter().enumerate() {
            mass[k] += w * p;
        }
        mass[m] = 0.0;
        let err = (mass.iter().sum::<f64>() - 1.0).abs();
        max_err = max_err.max(err);
        if err > MASS_TOL {
            return Err(Error::InvalidArgument(format!("mass drifted by {err} at size {m}")));
        }
    }
    mass.truncate(thr + 1);
    Ok(StoppedPmf { start_n, threshold: thr, probs: mass, max_mass_error: max_err })
}

/// Σ_z |p(z) - q(z)|, in [0, 2].
pub fn tv_sum(p: &[f64], q: &[f64]) -> f64 {
    let n = p.len().max(q.len());
    (0..n)
        .map(|i| (p.get(i).copied().unwrap_or(0.0) - q.get(i).copied().unwrap_or(0.0)).abs())
        .sum()
}

/// The usual sup-over-events total variation, half of [`tv_sum`].
pub fn tv_probability(p: &[f64], q: &[f64]) -> f64 {
    0.5 * tv_sum(p, q)
}

/// Total variation Σ|p - q| between the laws of S_τ(a) from two starts.
pub fn tv_stopped(
    start_n: usize,
    start_m: usize,
    a: f64,
    params: &SplitTreeParams,
    spec: &SplitterSpec,
) -> Result<f64> {
    let p = state_pmf_pushforward(start_n, a, params, spec)?;
    if start_n == start_m {
        return Ok(0.0);
    }
    let q = state_pmf_pushforward(start_m, a, params, spec)?;
    Ok(tv_sum(&p.probs, &q.probs))
}

/// Monte Carlo histogram of the size at τ(a).
pub fn stopped_histogram(
    start_n: usize,
    a: f64,
    params: &SplitTreeParams,
    spec: &SplitterSpec,
    runs: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let t = TransitionSampler::new(params, spec)?;
    let thr = (threshold_size(a) as usize).min(start_n);
    let ends = rng::par_replicates(seed, "stopped", runs, |rg, _| {
        let mut m = start_n as u64;
        while m as usize > thr {
            m = t.next_size(m, rg);
        }
        m as usize
    });
    let mut h = vec![0.0; thr + 1];
    for e in ends {
        h[e] += 1.0;
    }
    h.iter_mut().for_each(|x| *x /= runs as f64);
    Ok(h)
}

/// Pointwise ν_n for the coupling; frozen states carry a point mass.
struct PointNu {
    n: u64,
    frozen: bool,
    law: Option<PointwiseSubtreeLaw>,
    b: f64,
    s0: u64,
}

impl PointNu {
    fn prob(&self, k: u64) -> f64 {
        if self.frozen {
            return if k == self.n { 1.0 } else { 0.0 };
        }
        let Some(law) = &self.law else {
            // n ≤ s: absorption is certain.
            return if k == 0 { 1.0 } else { 0.0 };
        };
        let nf = self.n as f64;
        let atom = if k == self.n - self.s0 { self.s0 as f64 / nf } else { 0.0 };
        if k >= self.n {
            return atom;
        }
        self.b * k as f64 / nf * law.prob(k as usize) + atom
    }
}

/// The one-step Wasserstein (maximal) coupling of the chain frozen at a:
/// with probability Σ min(p, q) both move to a common state drawn from
/// min(p, q), otherwise to independent draws from (p - q)^+ and (q - p)^+.
pub struct CouplingKernel {
    params: SplitTreeParams,
    spec: SplitterSpec,
    sampler: TransitionSampler,
    a: f64,
}

impl CouplingKernel {
    pub fn new(a: f64, params: &SplitTreeParams, spec: &SplitterSpec) -> Result<Self> {
        Ok(CouplingKernel {
            params: *params,
            spec: spec.clone(),
            sampler: TransitionSampler::new(params, spec)?,
            a,
        })
    }

    pub fn is_frozen(&self, x: ChainState) -> bool {
        x == ChainState::Absorbed || x.value() >= self.a
    }

    fn marginal_step<R: Rng + ?Sized>(&self, x: ChainState, rng: &mut R) -> ChainState {
        if self.is_frozen(x) {
            x
        } else {
            self.sampler.step(x, rng)
        }
    }

    fn point_nu(&self, x: ChainState) -> PointNu {
        let n = x.size();
        let frozen = self.is_frozen(x);
        let law = if frozen || n as usize <= self.params.s {
            None
        } else {
            PointwiseSubtreeLaw::new(n as usize, &self.params, &self.spec).ok()
        };
        PointNu { n, frozen, law, b: self.params.b as f64, s0: self.params.s0 as u64 }
    }

    pub fn step<R: Rng + ?Sized>(&self, x: ChainState, y: ChainState, rng: &mut R) -> (ChainState, ChainState) {
        if x == y {
            let z = self.marginal_step(x, rng);
            return (z, z);
        }
        let (px, py) = (self.point_nu(x), self.point_nu(y));
        let nx = self.marginal_step(x, rng);
        let k = nx.size();
        if rng.random::<f64>() * px.prob(k) <= py.prob(k) {
            return (nx, nx);
        }
        loop {
            let ny = self.marginal_step(y, rng);
            let j = ny.size();
            if rng.random::<f64>() * py.prob(j) > px.prob(j) {
                return (nx, ny);
            }
        }
    }
}

pub fn coupling_step<R: Rng + ?Sized>(
    x: ChainState,
    y: ChainState,
    a: f64,
    params: &SplitTreeParams,
    spec: &SplitterSpec,
    rng: &mut R,
) -> Result<(ChainState, ChainState)> {
    Ok(CouplingKernel::new(a, params, spec)?.step(x, y, rng))
}

/// Σ_k min(ν_n(k), ν_m(k)), the one-step meeting probability.
pub fn nu_overlap(n: usize, m: usize, params: &SplitTreeParams, spec: &SplitterSpec) -> Result<f64> {
    let p = nu_pmf(n, params, spec)?;
    let q = nu_pmf(m, params, spec)?;
    Ok(p.probs.iter().zip(&q.probs).map(|(a, b)| a.min(*b)).sum())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingSummary {
    pub runs: usize,
    /// Fraction of runs where the two chains met before both froze.
    pub meeting_frequency: f64,
    /// Fraction of runs still apart after the first step.
    pub first_step_off_diagonal: f64,
}

/// Runs coupled pairs from sizes (n, m) until both are frozen at a.
pub fn coupled_runs(
    n: u64,
    m: u64,
    a: f64,
    params: &SplitTreeParams,
    spec: &SplitterSpec,
    runs: usize,
    seed: u64,
) -> Result<CouplingSummary> {
    check_chain_params(params, spec)?;
    let kernel = CouplingKernel::new(a, params, spec)?;
    let outcomes = rng::par_replicates(seed, "coupling", runs, |rg, _| {
        let (mut x, mut y) = (ChainState::from_size(n), ChainState::from_size(m));
        let mut first_off = None;
        loop {
            if x == y {
                return (true, first_off.unwrap_or(false));
            }
            if kernel.is_frozen(x) && kernel.is_frozen(y) {
                return (false, first_off.unwrap_or(true));
            }
            (x, y) = kernel.step(x, y, rg);
            first_off.get_or_insert(x != y);
        }
    });
    let met = outcomes.iter().filter(|o| o.0).count();
    let off = outcomes.iter().filter(|o| o.1).count();
    Ok(CouplingSummary {
        runs,
        meeting_frequency: met as f64 / runs as f64,
        first_step_off_diagonal: off as f64 / runs as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::chi_square_gof;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bst() -> (SplitTreeParams, SplitterSpec) {
        (SplitTreeParams::new(2, 1, 1, 0).unwrap(), SplitterSpec::bst())
    }

    #[test]
    fn start_past_threshold_is_a_point_mass() {
        let (p, spec) = bst();
        let s = state_pmf_pushforward(30, -(50f64).ln(), &p, &spec).unwrap();
        assert_eq!(s.probs[30], 1.0);
        assert_eq!(s.total_mass(), 1.0);
    }

    #[test]
    fn threshold_is_robust_to_rounding() {
        assert_eq!(threshold_size(-(50f64).ln()), 50);
        assert_eq!(threshold_size(-(1f64).ln()), 1);
    }

    #[test]
    fn pushforward_conserves_mass() {
        for spec in SplitterSpec::builtin_catalogue() {
            let p = SplitTreeParams::default_for(spec.family());
            let s = state_pmf_pushforward(600, -(20f64).ln(), &p, &spec).unwrap();
            assert!(s.max_mass_error < MASS_TOL);
            assert!((s.total_mass() - 1.0).abs() < MASS_TOL);
        }
        let (p, spec) = bst();
        assert!(matches!(state_pmf_pushforward(8001, 0.0, &p, &spec), Err(Error::TooLarge(_))));
    }

    #[test]
    fn tv_identities() {
        let (p, spec) = bst();
        assert_eq!(tv_stopped(700, 700, -(50f64).ln(), &p, &spec).unwrap(), 0.0);
        assert_eq!(tv_sum(&[1.0], &[0.0, 1.0]), 2.0);
        assert_eq!(tv_probability(&[1.0], &[0.0, 1.0]), 1.0);
    }

    #[test]
    fn diagonal_is_preserved() {
        let (p, spec) = bst();
        let k = CouplingKernel::new(-(50f64).ln(), &p, &spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let x = ChainState::Size(700);
            let (a, b) = k.step(x, x, &mut rng);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn coupling_marginals_match_nu() {
        let (p, spec) = bst();
        let k = CouplingKernel::new(0.5, &p, &spec).unwrap();
        let nu = nu_pmf(40, &p, &spec).unwrap();
        let nu2 = nu_pmf(45, &p, &spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut c1 = vec![0u64; nu.probs.len()];
        let mut c2 = vec![0u64; nu2.probs.len()];
        let mut same = 0u64;
        let draws = 1_000_000;
        for _ in 0..draws {
            let (a, b) = k.step(ChainState::Size(40), ChainState::Size(45), &mut rng);
            c1[a.size() as usize] += 1;
            c2[b.size() as usize] += 1;
            same += u64::from(a == b);
        }
        assert!(chi_square_gof(&c1, &nu.probs, 5.0).2 > 0.001);
        assert!(chi_square_gof(&c2, &nu2.probs, 5.0).2 > 0.001);
        let alpha = nu_overlap(40, 45, &p, &spec).unwrap();
        let got = same as f64 / draws as f64;
        assert!((got - alpha).abs() < 5.0 * (alpha * (1.0 - alpha) / draws as f64).sqrt(), "{got} {alpha}");
    }
}
