//! Splitting distributions: the law of the split vector, its exact
//! samplers, the marginal density of one coordinate and the scalar moments
//! consumed by the mean expansions and the limit laws.
//!
//! Every built-in family has a marginal that is a finite mixture of Beta
//! laws, so it has a Lebesgue density which is positive near 1. Lattice
//! splitters (tries, digital search trees) cannot be expressed.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::quadrature::Integrator;
use crate::rng;

/// x ln x with the continuous extension 0 at x = 0.
#[inline]
pub fn xlogx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

/// Splitting distribution families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Family {
    /// V uniform on [0, 1], b = 2.
    BinarySearchTree,
    /// Spacings of b - 1 independent uniforms.
    BarySearchTree { b: usize },
    /// V is the median of 2k + 1 uniforms, b = 2.
    MedianOf { k: usize },
    /// Symmetric-after-permutation Dirichlet(alpha) split vector.
    Dirichlet { alpha: Vec<f64> },
    /// (U, 1 - U) with U ~ Beta(alpha, beta), randomly permuted.
    BetaBinary { alpha: f64, beta: f64 },
}

impl Family {
    pub fn branching(&self) -> usize {
        match self {
            Family::BinarySearchTree | Family::MedianOf { .. } | Family::BetaBinary { .. } => 2,
            Family::BarySearchTree { b } => *b,
            Family::Dirichlet { alpha } => alpha.len(),
        }
    }

    /// Short name used in file names and reports.
    pub fn label(&self) -> String {
        match self {
            Family::BinarySearchTree => "bst".into(),
            Family::BarySearchTree { b } => format!("bary{b}"),
            Family::MedianOf { k } => format!("median{}", 2 * k + 1),
            Family::Dirichlet { alpha } => {
                let parts: Vec<String> = alpha.iter().map(|a| format!("{a}")).collect();
                format!("dirichlet[{}]", parts.join(","))
            }
            Family::BetaBinary { alpha, beta } => format!("beta[{alpha},{beta}]"),
        }
    }

    /// Builds a family from a CLI-style name and loose parameters.
    pub fn from_name(
        name: &str,
        b: Option<usize>,
        k: Option<usize>,
        alpha: &[f64],
        beta: Option<f64>,
    ) -> Result<Family> {
        let family = match name.to_ascii_lowercase().as_str() {
            "bst" | "binary_search_tree" => Family::BinarySearchTree,
            "bary" | "bary_search_tree" | "mary" => Family::BarySearchTree { b: b.unwrap_or(3) },
            "median" | "median_of" => Family::MedianOf { k: k.unwrap_or(1) },
            "dirichlet" => {
                if alpha.is_empty() {
                    return Err(Error::InvalidSplitter("dirichlet needs --alpha a1,a2,...".into()));
                }
                Family::Dirichlet { alpha: alpha.to_vec() }
            }
            "beta" | "beta_binary" => Family::BetaBinary {
                alpha: alpha.first().copied().unwrap_or(1.0),
                beta: beta.unwrap_or(1.0),
            },
            "trie" | "digital_search_tree" | "dst" | "patricia" | "lattice" => {
                return Err(Error::UnsupportedSplitter(format!(
                    "'{name}' has a lattice splitter without a Lebesgue density"
                )))
            }
            other => return Err(Error::UnsupportedSplitter(format!("unknown family '{other}'"))),
        };
        Ok(family)
    }

    fn validate(&self) -> Result<()> {
        match self {
            Family::BinarySearchTree => Ok(()),
            Family::MedianOf { k } if *k >= 1 => Ok(()),
            Family::MedianOf { .. } => Err(Error::InvalidSplitter("median_of needs k >= 1".into())),
            Family::BarySearchTree { b } if *b >= 2 => Ok(()),
            Family::BarySearchTree { b } => {
                Err(Error::InvalidSplitter(format!("branching factor b = {b} must be >= 2")))
            }
            Family::Dirichlet { alpha } => {
                if alpha.len() < 2 {
                    return Err(Error::InvalidSplitter("dirichlet needs at least 2 weights".into()));
                }
                if alpha.iter().any(|a| !a.is_finite() || *a <= 0.0) {
                    return Err(Error::InvalidSplitter("dirichlet weights must be positive".into()));
                }
                Ok(())
            }
            Family::BetaBinary { alpha, beta } => {
                if !(alpha.is_finite() && beta.is_finite() && *alpha > 0.0 && *beta > 0.0) {
                    return Err(Error::InvalidSplitter("beta parameters must be positive".into()));
                }
                Ok(())
            }
        }
    }
}

/// One Beta(a, b) component of the marginal law of V.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BetaComponent {
    pub weight: f64,
    pub a: f64,
    pub b: f64,
}

impl BetaComponent {
    pub fn ln_beta(&self) -> f64 {
        ln_gamma(self.a) + ln_gamma(self.b) - ln_gamma(self.a + self.b)
    }

    pub fn density(&self, x: f64) -> f64 {
        if x <= 0.0 || x >= 1.0 {
            return 0.0;
        }
        ((self.a - 1.0) * x.ln() + (self.b - 1.0) * (-x).ln_1p() - self.ln_beta()).exp()
    }
}

#[derive(Clone, Debug, Deserialize)]
struct RawSpec {
    #[serde(flatten)]
    family: Family,
    #[serde(default = "default_nodes")]
    quadrature_nodes: usize,
    #[serde(default = "default_draws")]
    cross2_draws: u64,
}

fn default_nodes() -> usize {
    32
}

fn default_draws() -> u64 {
    10_000_000
}

/// A validated splitting distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec")]
pub struct SplitterSpec {
    #[serde(flatten)]
    family: Family,
    quadrature_nodes: usize,
    cross2_draws: u64,
}

impl TryFrom<RawSpec> for SplitterSpec {
    type Error = Error;

    fn try_from(raw: RawSpec) -> Result<Self> {
        SplitterSpec::new(raw.family)?
            .with_quadrature_nodes(raw.quadrature_nodes)
            .map(|s| s.with_cross2_draws(raw.cross2_draws))
    }
}

impl SplitterSpec {
    pub fn new(family: Family) -> Result<Self> {
        family.validate()?;
        Ok(SplitterSpec {
            family,
            quadrature_nodes: default_nodes(),
            cross2_draws: default_draws(),
        })
    }

    pub fn bst() -> Self {
        SplitterSpec::new(Family::BinarySearchTree).expect("valid")
    }

    pub fn median_of(k: usize) -> Self {
        SplitterSpec::new(Family::MedianOf { k }).expect("valid")
    }

    pub fn with_quadrature_nodes(mut self, nodes: usize) -> Result<Self> {
        if !(4..=256).contains(&nodes) {
            return Err(Error::InvalidSplitter(format!(
                "quadrature_nodes = {nodes} outside 4..=256"
            )));
        }
        self.quadrature_nodes = nodes;
        Ok(self)
    }

    pub fn with_cross2_draws(mut self, draws: u64) -> Self {
        self.cross2_draws = draws.max(1000);
        self
    }

    /// The catalogue used by the cross-family checks.
    pub fn builtin_catalogue() -> Vec<SplitterSpec> {
        [
            Family::BinarySearchTree,
            Family::BarySearchTree { b: 3 },
            Family::MedianOf { k: 1 },
            Family::Dirichlet { alpha: vec![1.0, 2.0, 3.0] },
            Family::BetaBinary { alpha: 2.0, beta: 5.0 },
        ]
        .into_iter()
        .map(|f| SplitterSpec::new(f).expect("catalogue entries are valid"))
        .collect()
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn b(&self) -> usize {
        self.family.branching()
    }

    pub fn quadrature_nodes(&self) -> usize {
        self.quadrature_nodes
    }

    pub fn cross2_draws(&self) -> u64 {
        self.cross2_draws
    }

    pub fn is_bst(&self) -> bool {
        matches!(self.family, Family::BinarySearchTree)
    }

    pub fn integrator(&self) -> Integrator {
        Integrator::new(self.quadrature_nodes)
    }

    /// The marginal law of one coordinate as a Beta mixture.
    pub fn marginal_components(&self) -> Vec<BetaComponent> {
        let single = |a: f64, b: f64| vec![BetaComponent { weight: 1.0, a, b }];
        match &self.family {
            Family::BinarySearchTree => single(1.0, 1.0),
            Family::BarySearchTree { b } => single(1.0, *b as f64 - 1.0),
            Family::MedianOf { k } => single(*k as f64 + 1.0, *k as f64 + 1.0),
            Family::Dirichlet { alpha } => {
                let total: f64 = alpha.iter().sum();
                let w = 1.0 / alpha.len() as f64;
                let mut comps: Vec<BetaComponent> = Vec::new();
                for &a in alpha {
                    match comps.iter_mut().find(|c| c.a == a) {
                        Some(c) => c.weight += w,
                        None => comps.push(BetaComponent { weight: w, a, b: total - a }),
                    }
                }
                comps
            }
            Family::BetaBinary { alpha, beta } => {
                if alpha == beta {
                    single(*alpha, *beta)
                } else {
                    vec![
                        BetaComponent { weight: 0.5, a: *alpha, b: *beta },
                        BetaComponent { weight: 0.5, a: *beta, b: *alpha },
                    ]
                }
            }
        }
    }

    /// Marginal density f_V.
    pub fn density(&self, x: f64) -> f64 {
        self.marginal_components().iter().map(|c| c.weight * c.density(x)).sum()
    }

    /// A density closure with the mixture prepared once.
    pub fn density_fn(&self) -> impl Fn(f64) -> f64 {
        let comps: Vec<(f64, f64, f64, f64)> = self
            .marginal_components()
            .iter()
            .map(|c| (c.weight.ln() - c.ln_beta(), c.a - 1.0, c.b - 1.0, c.weight))
            .collect();
        move |x: f64| {
            if x <= 0.0 || x >= 1.0 {
                return 0.0;
            }
            let (lx, l1x) = (x.ln(), (-x).ln_1p());
            comps.iter().map(|&(c, am, bm, _)| (c + am * lx + bm * l1x).exp()).sum()
        }
    }

    /// E[g(V)] by adaptive quadrature against the marginal density.
    pub fn expect<G: Fn(f64) -> f64>(&self, g: G) -> Result<f64> {
        self.expect_on(g, 0.0, 1.0)
    }

    /// The integral of g f_V over [lo, hi].
    pub fn expect_on<G: Fn(f64) -> f64>(&self, g: G, lo: f64, hi: f64) -> Result<f64> {
        let f = self.density_fn();
        let q = self.integrator();
        let mid = 0.5 * (lo + hi);
        q.integrate_with_breaks(|x| g(x) * f(x), &[lo, mid, hi])
    }

    pub fn sampler(&self) -> SplitSampler {
        let kind = match &self.family {
            Family::BinarySearchTree => SamplerKind::Uniform,
            Family::BarySearchTree { b } => SamplerKind::Spacings(*b),
            Family::MedianOf { k } if *k <= 7 => SamplerKind::Median(*k),
            Family::MedianOf { k } => {
                let a = *k as f64 + 1.0;
                SamplerKind::BetaPair(Beta::new(a, a).expect("positive"))
            }
            Family::Dirichlet { alpha } => SamplerKind::Dirichlet(
                alpha.iter().map(|&a| Gamma::new(a, 1.0).expect("positive")).collect(),
            ),
            Family::BetaBinary { alpha, beta } => {
                SamplerKind::BetaPair(Beta::new(*alpha, *beta).expect("positive"))
            }
        };
        SplitSampler { kind, b: self.b() }
    }
}

#[derive(Clone, Debug)]
enum SamplerKind {
    Uniform,
    Spacings(usize),
    Median(usize),
    BetaPair(Beta<f64>),
    Dirichlet(Vec<Gamma<f64>>),
}

/// Draws split vectors. Raw vectors are uniformly permuted so that all
/// coordinates share the marginal law of V.
#[derive(Clone, Debug)]
pub struct SplitSampler {
    kind: SamplerKind,
    b: usize,
}

impl SplitSampler {
    pub fn b(&self) -> usize {
        self.b
    }

    /// Fills `out` (length b) with a split vector.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.b);
        match &self.kind {
            SamplerKind::Uniform => {
                let u: f64 = rng.random();
                out[0] = u;
                out[1] = 1.0 - u;
            }
            SamplerKind::Spacings(b) => {
                let mut cuts = [0.0f64; 32];
                let cuts: &mut [f64] = if *b <= 33 {
                    &mut cuts[..b - 1]
                } else {
                    return self.spacings_large(rng, out);
                };
                for c in cuts.iter_mut() {
                    *c = rng.random();
                }
                cuts.sort_unstable_by(f64::total_cmp);
                let mut prev = 0.0;
                for (o, &c) in out.iter_mut().zip(cuts.iter()) {
                    *o = c - prev;
                    prev = c;
                }
                out[b - 1] = 1.0 - prev;
            }
            SamplerKind::Median(k) => {
                let mut u = [0.0f64; 15];
                let u = &mut u[..2 * k + 1];
                for x in u.iter_mut() {
                    *x = rng.random();
                }
                let (_, m, _) = u.select_nth_unstable_by(*k, f64::total_cmp);
                out[0] = *m;
                out[1] = 1.0 - *m;
            }
            SamplerKind::BetaPair(beta) => {
                let u = beta.sample(rng);
                out[0] = u;
                out[1] = 1.0 - u;
            }
            SamplerKind::Dirichlet(gammas) => {
                let mut total = 0.0;
                for (o, g) in out.iter_mut().zip(gammas) {
                    *o = g.sample(rng);
                    total += *o;
                }
                for o in out.iter_mut() {
                    *o /= total;
                }
            }
        }
        out.shuffle(rng);
    }

    fn spacings_large<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let mut cuts: Vec<f64> = (0..self.b - 1).map(|_| rng.random()).collect();
        cuts.sort_unstable_by(f64::total_cmp);
        let mut prev = 0.0;
        for (o, &c) in out.iter_mut().zip(&cuts) {
            *o = c - prev;
            prev = c;
        }
        out[self.b - 1] = 1.0 - prev;
        out.shuffle(rng);
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut v = vec![0.0; self.b];
        self.sample_into(rng, &mut v);
        v
    }
}

/// Scalar moments of the splitter (natural logarithm throughout).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitterMoments {
    /// -b E[V ln V].
    pub mu: f64,
    /// E[V^2].
    pub ev2: f64,
    /// E[V^2 ln V].
    pub ev2logv: f64,
    /// E[(sum_k V_k ln V_k)^2].
    pub cross2: f64,
    /// Monte Carlo standard error of `cross2` (0 when computed by quadrature).
    pub cross2_stderr: f64,
    /// sum_k E[V_k^2].
    pub sum_ev2: f64,
    /// Limiting variance of P_n / n.
    pub sigma2: f64,
}

impl SplitterMoments {
    pub fn mu_inv(&self) -> f64 {
        1.0 / self.mu
    }

    /// E[V ln V].
    pub fn ev_logv(&self, b: usize) -> f64 {
        -self.mu / b as f64
    }
}

/// Assembles the limiting variance of P_n / n from its ingredients.
pub fn sigma2_from(cross2: f64, mu: f64, sum_ev2: f64) -> f64 {
    (cross2 / (mu * mu) - 1.0) / (1.0 - sum_ev2)
}

const CROSS2_SEED: u64 = 0x5eed_c0de_2f11_0001;

pub fn splitter_moments(spec: &SplitterSpec) -> Result<SplitterMoments> {
    let b = spec.b();
    let bf = b as f64;
    let ev_logv = spec.expect(xlogx)?;
    let ev2 = spec.expect(|v| v * v)?;
    let ev2logv = spec.expect(|v| v * xlogx(v))?;
    let mu = -bf * ev_logv;
    let (cross2, cross2_stderr) = if b == 2 {
        let c = spec.expect(|v| {
            let s = xlogx(v) + xlogx(1.0 - v);
            s * s
        })?;
        (c, 0.0)
    } else {
        cross2_monte_carlo(spec, spec.cross2_draws)
    };
    let sum_ev2 = bf * ev2;
    Ok(SplitterMoments {
        mu,
        ev2,
        ev2logv,
        cross2,
        cross2_stderr,
        sum_ev2,
        sigma2: sigma2_from(cross2, mu, sum_ev2),
    })
}

/// Monte Carlo estimate of E[(sum V_k ln V_k)^2] with its standard error.
pub fn cross2_monte_carlo(spec: &SplitterSpec, draws: u64) -> (f64, f64) {
    let sampler = spec.sampler();
    let blocks = 64u64;
    let per = draws.div_ceil(blocks);
    use rayon::prelude::*;
    let sums: Vec<(f64, f64, u64)> = (0..blocks)
        .into_par_iter()
        .map(|blk| {
            let mut rng = rng::stream(CROSS2_SEED, "cross2", blk);
            let mut v = vec![0.0; sampler.b()];
            let (mut s1, mut s2) = (0.0, 0.0);
            let count = per.min(draws.saturating_sub(blk * per));
            for _ in 0..count {
                sampler.sample_into(&mut rng, &mut v);
                let t: f64 = v.iter().map(|&x| xlogx(x)).sum();
                let t2 = t * t;
                s1 += t2;
                s2 += t2 * t2;
            }
            (s1, s2, count)
        })
        .collect();
    let (s1, s2, n) = sums
        .iter()
        .fold((0.0, 0.0, 0u64), |acc, x| (acc.0 + x.0, acc.1 + x.1, acc.2 + x.2));
    let n = n as f64;
    let m = s1 / n;
    let var = (s2 / n - m * m).max(0.0) * n / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Outcome of the density / tail-mass check.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneralAssumptionReport {
    pub density_exists: bool,
    pub mass_near_one: bool,
}

pub fn check_general_assumption(spec: &SplitterSpec) -> GeneralAssumptionReport {
    let mass_near_one = [0.1, 0.01, 0.001].iter().all(|&delta| {
        spec.expect_on(|_| 1.0, 1.0 - delta, 1.0)
            .map(|m| m > 0.0)
            .unwrap_or(false)
    });
    GeneralAssumptionReport {
        // Every representable family is a Beta mixture.
        density_exists: true,
        mass_near_one,
    }
}
