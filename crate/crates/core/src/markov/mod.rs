//! The depth Markov chain on E = {-ln n} ∪ {1}: from -ln n it moves to
//! -ln K where K is the size of the subtree holding a uniformly chosen ball
//! one level down (or n - s0 for a ball kept at the root), and absorbs in 1
//! when that subtree is empty.

mod exact;
mod sandwich;

pub use exact::*;
pub use sandwich::*;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::splitter::{SplitSampler, SplitterSpec};
use crate::subtree_law::subtree_pmf;
use crate::tree::{multinomial_into, SplitTreeParams};

pub const STEP_BUDGET: usize = 1_000_000;

/// A state of the chain, addressed by subtree size.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChainState {
    /// The state -ln n, n ≥ 1.
    Size(u64),
    /// The absorbing state 1.
    Absorbed,
}

impl ChainState {
    /// Maps size 0 to the absorbing state.
    pub fn from_size(n: u64) -> Self {
        if n == 0 {
            ChainState::Absorbed
        } else {
            ChainState::Size(n)
        }
    }

    pub fn value(&self) -> f64 {
        match self {
            ChainState::Size(n) => -(*n as f64).ln(),
            ChainState::Absorbed => 1.0,
        }
    }

    /// Inverse of [`value`](Self::value) on E.
    pub fn from_value(x: f64) -> Result<Self> {
        if x == 1.0 {
            return Ok(ChainState::Absorbed);
        }
        let n = (-x).exp().round();
        if x > 0.0 || n < 1.0 || ((-(n.ln())) - x).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("{x} is not a chain state")));
        }
        Ok(ChainState::Size(n as u64))
    }

    /// The subtree size, 0 for the absorbing state.
    pub fn size(&self) -> u64 {
        match self {
            ChainState::Size(n) => *n,
            ChainState::Absorbed => 0,
        }
    }
}

/// The transition law ν_n; `probs[k]` is the mass of the next size k, with
/// k = 0 standing for absorption.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NuTransition {
    pub n: usize,
    pub probs: Vec<f64>,
}

impl NuTransition {
    pub fn total_mass(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Tail sums T(k) = ν_n([k, ∞)).
    pub fn tails(&self) -> Vec<f64> {
        let mut t = vec![0.0; self.probs.len() + 1];
        for k in (0..self.probs.len()).rev() {
            t[k] = t[k + 1] + self.probs[k];
        }
        t
    }
}

/// ν_n({k}) = b (k/n) P(I_{n,1} = k) + (s0/n) 1{k = n - s0}. A node that
/// cannot split (n ≤ s) keeps every ball at depth 0, so ν_n is the point mass
/// at absorption there.
pub fn nu_pmf(n: usize, params: &SplitTreeParams, spec: &SplitterSpec) -> Result<NuTransition> {
    if n == 0 {
        return Err(Error::InvalidArgument("ν_n needs n ≥ 1".into()));
    }
    if n <= params.s {
        params.validate()?;
        return Ok(NuTransition { n, probs: vec![1.0] });
    }
    let pmf = subtree_pmf(n, params, spec)?;
    let mut probs = vec![0.0; n - params.s0 + 1];
    let scale = params.b as f64 / n as f64;
    for (k, p) in pmf.support() {
        probs[k] += scale * k as f64 * p;
    }
    probs[n - params.s0] += params.s0 as f64 / n as f64;
    Ok(NuTransition { n, probs })
}

/// Chain operations need strictly decreasing sizes, which fails only when
/// s0 = s1 = 0 (then ν_n({n}) > 0).
pub fn check_chain_params(params: &SplitTreeParams, spec: &SplitterSpec) -> Result<()> {
    params.validate()?;
    params.check_splitter(spec)?;
    if params.s0 == 0 && params.s1 == 0 {
        return Err(Error::InvalidParams(
            "chain increments vanish with positive probability when s0 = s1 = 0".into(),
        ));
    }
    Ok(())
}

/// Exact one-step sampler: draw a split vector and the multinomial subtree
/// sizes, then pick a uniform ball.
pub struct TransitionSampler {
    params: SplitTreeParams,
    sampler: SplitSampler,
}

impl TransitionSampler {
    pub fn new(params: &SplitTreeParams, spec: &SplitterSpec) -> Result<Self> {
        check_chain_params(params, spec)?;
        Ok(TransitionSampler { params: *params, sampler: spec.sampler() })
    }

    pub fn next_size<R: Rng + ?Sized>(&self, n: u64, rng: &mut R) -> u64 {
        let SplitTreeParams { b, s, s0, s1 } = self.params;
        if n <= s as u64 {
            return 0;
        }
        let pick = rng.random_range(0..n);
        if pick < s0 as u64 {
            return n - s0 as u64;
        }
        let mut v = [0.0f64; 64];
        let mut sizes = [0u64; 64];
        let (v, sizes): (&mut [f64], &mut [u64]) = if b <= 64 {
            (&mut v[..b], &mut sizes[..b])
        } else {
            return self.next_size_wide(n, pick, rng);
        };
        self.sampler.sample_into(rng, v);
        multinomial_into(n - (s0 + b * s1) as u64, v, rng, sizes);
        let mut acc = s0 as u64;
        for &i in sizes.iter() {
            let size = i + s1 as u64;
            acc += size;
            if pick < acc {
                return size;
            }
        }
        unreachable!("ball index within n")
    }

    fn next_size_wide<R: Rng + ?Sized>(&self, n: u64, pick: u64, rng: &mut R) -> u64 {
        let SplitTreeParams { b, s0, s1, .. } = self.params;
        let mut v = vec![0.0; b];
        let mut sizes = vec![0u64; b];
        self.sampler.sample_into(rng, &mut v);
        multinomial_into(n - (s0 + b * s1) as u64, &v, rng, &mut sizes);
        let mut acc = s0 as u64;
        for &i in &sizes {
            acc += i + s1 as u64;
            if pick < acc {
                return i + s1 as u64;
            }
        }
        unreachable!("ball index within n")
    }

    pub fn step<R: Rng + ?Sized>(&self, state: ChainState, rng: &mut R) -> ChainState {
        match state {
            ChainState::Absorbed => ChainState::Absorbed,
            ChainState::Size(n) => ChainState::from_size(self.next_size(n, rng)),
        }
    }
}

pub fn sample_transition<R: Rng + ?Sized>(
    n: u64,
    params: &SplitTreeParams,
    spec: &SplitterSpec,
    rng: &mut R,
) -> Result<ChainState> {
    let t = TransitionSampler::new(params, spec)?;
    Ok(t.step(ChainState::Size(n), rng))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "param", rename_all = "snake_case")]
pub enum StoppingRule {
    /// Stop once the subtree size is at most n1.
    Sigma(u64),
    /// Stop once S_t ≥ d.
    Tau(f64),
    /// Stop once S_t - S_0 ≥ d.
    Gamma(f64),
}

impl StoppingRule {
    pub fn stops(&self, state: ChainState, start: ChainState) -> bool {
        if state == ChainState::Absorbed {
            return true;
        }
        match *self {
            StoppingRule::Sigma(n1) => state.size() <= n1,
            StoppingRule::Tau(d) => state.value() >= d,
            StoppingRule::Gamma(d) => state.value() - start.value() >= d,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<ChainState>,
    pub stopped_state: ChainState,
    pub steps: usize,
}

pub fn run_chain<R: Rng + ?Sized>(
    start_n: u64,
    rule: StoppingRule,
    params: &SplitTreeParams,
    spec: &SplitterSpec,
    rng: &mut R,
) -> Result<Trajectory> {
    let t = TransitionSampler::new(params, spec)?;
    run_chain_with(&t, ChainState::from_size(start_n), rule, rng)
}

pub fn run_chain_with<R: Rng + ?Sized>(
    t: &TransitionSampler,
    start: ChainState,
    rule: StoppingRule,
    rng: &mut R,
) -> Result<Trajectory> {
    let mut states = vec![start];
    let mut x = start;
    while !rule.stops(x, start) {
        if states.len() > STEP_BUDGET {
            return Err(Error::StepBudgetExceeded(STEP_BUDGET));
        }
        x = t.step(x, rng);
        states.push(x);
    }
    Ok(Trajectory { steps: states.len() - 1, stopped_state: x, states })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepresentationCheck {
    pub lhs: f64,
    pub rhs_mc: f64,
    pub stderr: f64,
    pub trajectories: usize,
}

impl RepresentationCheck {
    pub fn z_score(&self) -> f64 {
        if self.stderr == 0.0 {
            if self.lhs == self.rhs_mc {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.lhs - self.rhs_mc).abs() / self.stderr
        }
    }
}

/// Compares H_n with the Monte Carlo value of
/// E[H(exp(-S_σ))] + E[Σ_{t<σ} r(exp(-S_t))] under σ = σ(n1).
/// `h[k]` and `r[k]` are indexed by size, with `h[0]` the absorbing value.
#[allow(clippy::too_many_arguments)]
pub fn representation_check(
    n: usize,
    n1: usize,
    h: &[f64],
    r: &[f64],
    params: &SplitTreeParams,
    spec: &SplitterSpec,
    trajectories: usize,
    seed: u64,
) -> Result<RepresentationCheck> {
    if h.len() <= n || r.len() <= n {
        return Err(Error::InvalidArgument(format!("tables must cover sizes up to {n}")));
    }
    let t = TransitionSampler::new(params, spec)?;
    let rule = StoppingRule::Sigma(n1 as u64);
    let start = ChainState::Size(n as u64);
    let values: Vec<f64> = rng::par_replicates(seed, "representation", trajectories, |rg, _| {
        let mut x = start;
        let mut acc = 0.0;
        while !rule.stops(x, start) {
            acc += r[x.size() as usize];
            x = t.step(x, rg);
        }
        acc + h[x.size() as usize]
    });
    let est = crate::stats::mean_estimate(&values);
    Ok(RepresentationCheck { lhs: h[n], rhs_mc: est.mean, stderr: est.stderr, trajectories })
}

/// F(y) = b E[V 1{-ln V ≤ y}], the increment law of the chain far from the
/// absorbing end.
pub fn limit_increment_cdf(spec: &SplitterSpec, y_grid: &[f64]) -> Result<Vec<f64>> {
    let b = spec.b() as f64;
    y_grid
        .iter()
        .map(|&y| {
            if y < 0.0 {
                return Err(Error::InvalidArgument(format!("increment grid point {y} < 0")));
            }
            if y == f64::INFINITY {
                return Ok(1.0);
            }
            Ok((b * spec.expect_on(|v| v, (-y).exp(), 1.0)?).min(1.0))
        })
        .collect()
}

/// ∫ (1 - F(y)) dy over [0, ∞), which equals μ.
pub fn limit_increment_mean(spec: &SplitterSpec) -> Result<f64> {
    let b = spec.b() as f64;
    let q = spec.integrator();
    // 1 - F(y) = b E[V 1{V < e^{-y}}]; substitute y = t / (1 - t).
    let survival = |t: f64| -> f64 {
        if t >= 1.0 {
            return 0.0;
        }
        let y = t / (1.0 - t);
        let hi = (-y).exp();
        if hi <= 0.0 {
            return 0.0;
        }
        let s = spec.expect_on(|v| v, 0.0, hi).unwrap_or(f64::NAN);
        b * s / ((1.0 - t) * (1.0 - t))
    };
    let val = q.integrate_with_breaks(survival, &[0.0, 0.25, 0.5, 0.75, 0.9, 0.97, 1.0])?;
    if val.is_nan() {
        return Err(Error::QuadratureNotConverged("increment survival integral".into()));
    }
    Ok(val)
}

/// Increments ln(n / K) of one step from -ln n; absorption gives +∞.
pub fn sample_increments(
    n: u64,
    draws: usize,
    params: &SplitTreeParams,
    spec: &SplitterSpec,
    seed: u64,
) -> Result<Vec<f64>> {
    let t = TransitionSampler::new(params, spec)?;
    let ln_n = (n as f64).ln();
    Ok(rng::par_replicates(seed, "increments", draws, |rg, _| {
        let k = t.next_size(n, rg);
        if k == 0 {
            f64::INFINITY
        } else {
            ln_n - (k as f64).ln()
        }
    }))
}

/// sup_y |F̂_n(y) - F(y)| for the empirical increment law at -ln n.
pub fn increment_sup_gap<F: Fn(f64) -> f64>(increments: &[f64], cdf: F) -> f64 {
    let mut xs = increments.to_vec();
    xs.sort_by(f64::total_cmp);
    let finite: Vec<f64> = xs.iter().copied().filter(|x| x.is_finite()).collect();
    let m = xs.len() as f64;
    let mut worst: f64 = 0.0;
    let mut i = 0;
    while i < finite.len() {
        let x = finite[i];
        let mut j = i;
        while j < finite.len() && finite[j] == x {
            j += 1;
        }
        let f = cdf(x);
        worst = worst.max((f - i as f64 / m).abs()).max((f - j as f64 / m).abs());
        i = j;
    }
    worst
}

/// Empirical occupation E[#{t : S_t ∈ (x - 1, x]}] along trajectories
/// stopped at τ(x).
pub fn occupation(
    start_n: u64,
    x: f64,
    params: &SplitTreeParams,
    spec: &SplitterSpec,
    runs: usize,
    seed: u64,
) -> Result<crate::stats::MeanEstimate> {
    let t = TransitionSampler::new(params, spec)?;
    let start = ChainState::Size(start_n);
    let counts: Vec<f64> = rng::par_replicates(seed, "occupation", runs, |rg, _| {
        let mut s = start;
        let mut c = 0usize;
        while s != ChainState::Absorbed && s.value() <= x {
            if s.value() > x - 1.0 {
                c += 1;
            }
            s = t.step(s, rg);
        }
        c as f64
    });
    Ok(crate::stats::mean_estimate(&counts))
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
    fn state_round_trip() {
        for n in [1u64, 2, 50, 1_000_000] {
            let s = ChainState::Size(n);
            assert_eq!(ChainState::from_value(s.value()).unwrap(), s);
        }
        assert_eq!(ChainState::from_value(1.0).unwrap(), ChainState::Absorbed);
        assert!(ChainState::from_value(-0.5).is_err());
    }

    #[test]
    fn nu_bst_small_hand_values() {
        // BST n = 3: ν(k) = 2k/9 for k ∈ {0, 1, 2}, plus 1/3 at k = 2.
        let (p, spec) = bst();
        let nu = nu_pmf(3, &p, &spec).unwrap();
        let want = [0.0, 2.0 / 9.0, 4.0 / 9.0 + 1.0 / 3.0];
        for (a, b) in nu.probs.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((nu.total_mass() - 1.0).abs() < 1e-12);
        assert_eq!(nu_pmf(1, &p, &spec).unwrap().probs, vec![1.0]);
    }

    #[test]
    fn nu_mass_is_one_across_catalogue() {
        for spec in SplitterSpec::builtin_catalogue() {
            let p = SplitTreeParams::default_for(spec.family());
            for n in [1usize, 2, 3, 7, 40, 999, 5000] {
                let nu = nu_pmf(n, &p, &spec).unwrap();
                assert!((nu.total_mass() - 1.0).abs() < 1e-10, "{} {n}", spec.family().label());
                assert!(nu.probs.len() <= n + 1 - p.s0.min(n));
            }
        }
    }

    #[test]
    fn sampler_matches_nu_at_forty() {
        for spec in [SplitterSpec::bst(), SplitterSpec::median_of(1)] {
            let p = SplitTreeParams::default_for(spec.family());
            let nu = nu_pmf(40, &p, &spec).unwrap();
            let t = TransitionSampler::new(&p, &spec).unwrap();
            let mut counts = vec![0u64; nu.probs.len()];
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            for _ in 0..1_000_000 {
                counts[t.next_size(40, &mut rng) as usize] += 1;
            }
            let (_, _, pval) = chi_square_gof(&counts, &nu.probs, 5.0);
            assert!(pval > 0.001, "{pval}");
        }
    }

    #[test]
    fn zero_root_capacity_has_no_extra_atom() {
        // s0 = 0, b = 2, s = 1, s1 = 1.
        let p = SplitTreeParams::new(2, 1, 0, 1).unwrap();
        let spec = SplitterSpec::bst();
        let nu = nu_pmf(10, &p, &spec).unwrap();
        assert!((nu.total_mass() - 1.0).abs() < 1e-12);
        assert_eq!(nu.probs.len(), 11);
        assert_eq!(nu.probs[10], 0.0);
        assert!(TransitionSampler::new(&SplitTreeParams::new(2, 1, 0, 0).unwrap(), &spec).is_err());
    }

    #[test]
    fn stopping_rules() {
        let (p, spec) = bst();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = run_chain(15, StoppingRule::Sigma(20), &p, &spec, &mut rng).unwrap();
        assert_eq!(t.steps, 0);
        for _ in 0..200 {
            let t = run_chain(100_000, StoppingRule::Sigma(20), &p, &spec, &mut rng).unwrap();
            assert!(t.stopped_state.size() <= 20);
            assert!(t.states.windows(2).all(|w| w[1].value() > w[0].value()));
        }
        let t = run_chain(1000, StoppingRule::Tau(-(10f64).ln()), &p, &spec, &mut rng).unwrap();
        assert!(t.stopped_state.size() <= 10);
    }

    #[test]
    fn steps_to_tau_stay_bounded() {
        let (p, spec) = bst();
        let d = 2.0;
        let mut means = Vec::new();
        for n in [1_000u64, 100_000] {
            let target = -(n as f64).ln() + d;
            let tr = TransitionSampler::new(&p, &spec).unwrap();
            let steps: Vec<f64> = rng::par_replicates(3, "steps", 20_000, |rg, _| {
                run_chain_with(&tr, ChainState::Size(n), StoppingRule::Tau(target), rg).unwrap().steps as f64
            });
            means.push(crate::stats::mean(&steps));
        }
        // Renewal theorem: roughly d / μ + O(1) regardless of n.
        assert!((means[0] - means[1]).abs() < 0.2, "{means:?}");
        assert!(means[1] < 2.0 * d / 0.5);
    }

    #[test]
    fn representation_trivial_cases() {
        let (p, spec) = bst();
        let h = vec![3.5; 101];
        let r = vec![0.0; 101];
        let c = representation_check(100, 20, &h, &r, &p, &spec, 1000, 1).unwrap();
        assert_eq!(c.rhs_mc, 3.5);
        let hv: Vec<f64> = (0..101).map(|k| k as f64).collect();
        let c = representation_check(10, 20, &hv, &r, &p, &spec, 100, 1).unwrap();
        assert_eq!(c.rhs_mc, 10.0);
        assert_eq!(c.z_score(), 0.0);
    }

    #[test]
    fn limit_cdf_bst_closed_form_and_mean() {
        let spec = SplitterSpec::bst();
        let ys: Vec<f64> = (0..50).map(|i| i as f64 * 0.2).collect();
        let f = limit_increment_cdf(&spec, &ys).unwrap();
        for (y, v) in ys.iter().zip(&f) {
            assert!((v - (1.0 - (-2.0 * y).exp())).abs() < 1e-10);
        }
        assert!((limit_increment_cdf(&spec, &[60.0]).unwrap()[0] - 1.0).abs() < 1e-12);
        for spec in SplitterSpec::builtin_catalogue() {
            let mu = -(spec.b() as f64) * spec.expect(crate::splitter::xlogx).unwrap();
            assert!((limit_increment_mean(&spec).unwrap() - mu).abs() < 1e-8);
        }
    }

    #[test]
    fn occupation_is_finite() {
        let (p, spec) = bst();
        let o = occupation(10_000, -(100f64).ln(), &p, &spec, 5000, 2).unwrap();
        assert!(o.mean > 0.5 && o.mean < 5.0, "{o:?}");
    }
}
