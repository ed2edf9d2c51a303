//! Exact mean tables for P_n and W_n and the constants of their expansions
//! E[P_n] = n ln n / μ + c_p n + o(n), E[W_n] = n² ln n / μ + c_w n² + o(n²).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::markov::nu_pmf;
use crate::splitter::{xlogx, SplitterSpec};
use crate::stats::linear_fit;
use crate::subtree_law::subtree_pmf;
use crate::tree::SplitTreeParams;

pub const GENERAL_CAP: usize = 20_000;
pub const BST_PATH_CAP: usize = 1_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanTable {
    pub n_max: usize,
    /// E[P_n], n = 0..=n_max
    pub ep: Vec<f64>,
    /// E[W_n], when computed
    pub ew: Option<Vec<f64>>,
    pub params: SplitTreeParams,
    pub spec: SplitterSpec,
}

fn is_plain_bst(params: &SplitTreeParams, spec: &SplitterSpec) -> bool {
    spec.is_bst() && params.b == 2 && params.s == 1 && params.s0 == 1 && params.s1 == 0
}

fn check(n_max: usize, cap: usize, params: &SplitTreeParams, spec: &SplitterSpec) -> Result<()> {
    params.validate()?;
    params.check_splitter(spec)?;
    if n_max > cap {
        return Err(Error::TooLarge(format!("n_max = {n_max} exceeds {cap}")));
    }
    Ok(())
}

/// μ = -b E[V ln V] by quadrature.
pub fn mu_of(spec: &SplitterSpec) -> Result<f64> {
    Ok(-(spec.b() as f64) * spec.expect(xlogx)?)
}

/// Solves the divide-and-conquer recurrence
/// x[n] = b Σ_k P(I_{n,1} = k) g(n, k, x) + toll(n) for n > s, x[n] = 0
/// otherwise, where `term(n, k)` is the part not involving x[k].
fn solve_recurrence<T, G>(n_max: usize, params: &SplitTreeParams, spec: &SplitterSpec, term: T, toll: G) -> Result<Vec<f64>>
where
    T: Fn(usize, usize) -> f64,
    G: Fn(usize) -> f64,
{
    let bf = params.b as f64;
    let mut x = vec![0.0; n_max + 1];
    for n in params.s + 1..=n_max {
        let pmf = subtree_pmf(n, params, spec)?;
        let mut acc = toll(n);
        let mut self_weight = 0.0;
        for (k, p) in pmf.support() {
            let w = bf * p;
            if k == n {
                self_weight = w;
                acc += w * term(n, k);
            } else {
                acc += w * (x[k] + term(n, k));
            }
        }
        // k = n only occurs when s0 = s1 = 0.
        x[n] = acc / (1.0 - self_weight);
    }
    Ok(x)
}

/// E[P_n] for n = 0..=n_max. The binary search tree uses the prefix-sum form
/// E[P_n] = (2/n) Σ_{k<n} E[P_k] + n - 1.
pub fn exact_mean_path(n_max: usize, params: &SplitTreeParams, spec: &SplitterSpec) -> Result<Vec<f64>> {
    if is_plain_bst(params, spec) {
        check(n_max, BST_PATH_CAP, params, spec)?;
        let mut ep = vec![0.0; n_max + 1];
        let mut prefix = 0.0;
        for n in 1..=n_max {
            prefix += ep[n - 1];
            ep[n] = 2.0 * prefix / n as f64 + (n - 1) as f64;
        }
        return Ok(ep);
    }
    check(n_max, GENERAL_CAP, params, spec)?;
    let s0 = params.s0 as f64;
    solve_recurrence(n_max, params, spec, |_, _| 0.0, |n| n as f64 - s0)
}

/// E[W_n] from E[P_n]:
/// E[W_n] = b Σ_k P(I_{n,1} = k)(E[W_k] + (n - k) E[P_k] + nk - k²).
pub fn exact_mean_wiener(n_max: usize, params: &SplitTreeParams, spec: &SplitterSpec, ep: &[f64]) -> Result<Vec<f64>> {
    check(n_max, GENERAL_CAP, params, spec)?;
    if ep.len() <= n_max {
        return Err(Error::InvalidArgument("path table shorter than n_max".into()));
    }
    solve_recurrence(
        n_max,
        params,
        spec,
        |n, k| {
            let (nf, kf) = (n as f64, k as f64);
            (nf - kf) * ep[k] + nf * kf - kf * kf
        },
        |_| 0.0,
    )
}

impl MeanTable {
    pub fn compute(n_max: usize, params: &SplitTreeParams, spec: &SplitterSpec, with_wiener: bool) -> Result<Self> {
        let ep = exact_mean_path(n_max, params, spec)?;
        let ew = if with_wiener { Some(exact_mean_wiener(n_max, params, spec, &ep)?) } else { None };
        Ok(MeanTable { n_max, ep, ew, params: *params, spec: spec.clone() })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

/// Dyadic window averages [n/8, n/4], [n/4, n/2], [n/2, n] of a normalized
/// sequence.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowFit {
    pub windows: [f64; 3],
    pub estimate: Estimate,
    pub stable: bool,
}

fn window_fit(seq: &[f64], n_max: usize) -> WindowFit {
    let avg = |lo: usize, hi: usize| seq[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64;
    let w = [avg(n_max / 8, n_max / 4), avg(n_max / 4, n_max / 2), avg(n_max / 2, n_max)];
    let drift = (w[2] - w[1]).abs();
    WindowFit {
        windows: w,
        estimate: Estimate { value: w[2], stderr: drift },
        stable: drift <= 3.0 * (w[1] - w[0]).abs() + 1e-12 * (1.0 + w[2].abs()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantsReport {
    pub n_max: usize,
    pub mu_inv: f64,
    pub c_p: Estimate,
    pub c_w: Option<Estimate>,
    pub c_p_fit: WindowFit,
    pub c_w_fit: Option<WindowFit>,
    /// c_p + 1 - 1 / (1 - Σ E[V_i²]), the value c_w must take for the
    /// bivariate limit to be centered.
    pub c_w_from_c_p: f64,
}

/// (ep[n] - n ln n · mu_inv) / n, with 0 at n = 0.
pub fn normalized_path(ep: &[f64], mu_inv: f64) -> Vec<f64> {
    ep.iter()
        .enumerate()
        .map(|(n, &e)| if n == 0 { 0.0 } else { let nf = n as f64; (e - nf * nf.ln() * mu_inv) / nf })
        .collect()
}

/// (ew[n] - n² ln n · mu_inv) / n², with 0 at n = 0.
pub fn normalized_wiener(ew: &[f64], mu_inv: f64) -> Vec<f64> {
    ew.iter()
        .enumerate()
        .map(|(n, &e)| if n == 0 { 0.0 } else { let nf = n as f64; (e - nf * nf * nf.ln() * mu_inv) / (nf * nf) })
        .collect()
}

/// Tail-window estimates of c_p and c_w with μ fixed by quadrature.
pub fn extract_constants(table: &MeanTable) -> Result<ConstantsReport> {
    let mu_inv = 1.0 / mu_of(&table.spec)?;
    let sum_ev2 = table.spec.b() as f64 * table.spec.expect(|v| v * v)?;
    extract_constants_from(&table.ep, table.ew.as_deref(), mu_inv, sum_ev2)
}

pub fn extract_constants_from(ep: &[f64], ew: Option<&[f64]>, mu_inv: f64, sum_ev2: f64) -> Result<ConstantsReport> {
    let n_max = ep.len().saturating_sub(1);
    if n_max < 1000 {
        return Err(Error::InvalidArgument(format!("constant extraction needs n_max ≥ 1000, got {n_max}")));
    }
    let c_p_fit = window_fit(&normalized_path(ep, mu_inv), n_max);
    if !c_p_fit.stable {
        return Err(Error::FitUnstable(format!("c_p windows {:?}", c_p_fit.windows)));
    }
    let c_w_fit = match ew {
        Some(ew) => {
            let fit = window_fit(&normalized_wiener(ew, mu_inv), n_max);
            if !fit.stable {
                return Err(Error::FitUnstable(format!("c_w windows {:?}", fit.windows)));
            }
            Some(fit)
        }
        None => None,
    };
    Ok(ConstantsReport {
        n_max,
        mu_inv,
        c_p: c_p_fit.estimate,
        c_w: c_w_fit.map(|f| f.estimate),
        c_p_fit,
        c_w_fit,
        c_w_from_c_p: c_p_fit.estimate.value + 1.0 - 1.0 / (1.0 - sum_ev2),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TollTable {
    /// H_n, with H_0 = 0 for the absorbing state.
    pub h: Vec<f64>,
    /// r(n) = H_n - Σ_k ν_n({k}) H_k, with r(0) = 0.
    pub r: Vec<f64>,
}

impl TollTable {
    /// Least-squares δ in |r(n)| ≈ C n^{-δ} over log-spaced n in [lo, hi].
    pub fn decay_exponent(&self, lo: usize, hi: usize) -> f64 {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let hi = hi.min(self.r.len() - 1);
        let mut n = lo as f64;
        while (n as usize) <= hi {
            let k = n as usize;
            if self.r[k] != 0.0 {
                xs.push((k as f64).ln());
                ys.push(self.r[k].abs().ln());
            }
            n *= 1.05;
        }
        -linear_fit(&xs, &ys).0
    }

    pub fn max_abs_r(&self, lo: usize, hi: usize) -> f64 {
        self.r[lo..=hi.min(self.r.len() - 1)].iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

pub fn toll_functions(table: &MeanTable) -> Result<TollTable> {
    let mu_inv = 1.0 / mu_of(&table.spec)?;
    let h = normalized_path(&table.ep, mu_inv);
    let mut r = vec![0.0; h.len()];
    for n in 1..h.len() {
        let nu = nu_pmf(n, &table.params, &table.spec)?;
        let mix: f64 = nu.probs.iter().zip(&h).map(|(p, hk)| p * hk).sum();
        r[n] = h[n] - mix;
    }
    Ok(TollTable { h, r })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bst() -> (SplitTreeParams, SplitterSpec) {
        (SplitTreeParams::new(2, 1, 1, 0).unwrap(), SplitterSpec::bst())
    }

    fn closed_bst(n: usize) -> f64 {
        let h: f64 = (1..=n).map(|i| 1.0 / i as f64).sum();
        2.0 * (n as f64 + 1.0) * h - 4.0 * n as f64
    }

    #[test]
    fn bst_small_values() {
        let (p, spec) = bst();
        let ep = exact_mean_path(5, &p, &spec).unwrap();
        assert_eq!(ep[0], 0.0);
        assert_eq!(ep[1], 0.0);
        assert_eq!(ep[2], 1.0);
        assert!((ep[3] - 8.0 / 3.0).abs() < 1e-14);
        let ew = exact_mean_wiener(5, &p, &spec, &ep).unwrap();
        assert_eq!(ew[1], 0.0);
        assert_eq!(ew[2], 1.0);
        assert!((ew[3] - 4.0).abs() < 1e-14);
    }

    #[test]
    fn prefix_and_general_recurrences_agree() {
        let (p, spec) = bst();
        let fast = exact_mean_path(500, &p, &spec).unwrap();
        let slow = solve_recurrence(500, &p, &spec, |_, _| 0.0, |n| n as f64 - 1.0).unwrap();
        for n in 0..=500 {
            assert!((fast[n] - slow[n]).abs() <= 1e-10 * fast[n].max(1.0));
            assert!((fast[n] - closed_bst(n)).abs() <= 1e-10 * fast[n].max(1.0));
        }
    }

    #[test]
    fn caps() {
        let spec = SplitterSpec::median_of(1);
        let p = SplitTreeParams::default_for(spec.family());
        assert!(matches!(exact_mean_path(20_001, &p, &spec), Err(Error::TooLarge(_))));
        let (p, spec) = bst();
        assert!(matches!(exact_mean_path(1_000_001, &p, &spec), Err(Error::TooLarge(_))));
    }

    #[test]
    fn monotone_and_zero_below_capacity() {
        for spec in SplitterSpec::builtin_catalogue() {
            let p = SplitTreeParams::default_for(spec.family());
            let ep = exact_mean_path(300, &p, &spec).unwrap();
            assert!(ep[..=p.s].iter().all(|&x| x == 0.0));
            assert!(ep.windows(2).all(|w| w[1] >= w[0]));
        }
    }

    #[test]
    fn self_referential_case_is_solved() {
        // s0 = s1 = 0: a node can send every ball to one child.
        let p = SplitTreeParams::new(2, 1, 0, 0).unwrap();
        let spec = SplitterSpec::bst();
        let ep = exact_mean_path(4, &p, &spec).unwrap();
        // n = 2: E[P_2] = 2 + 2 (1/3) E[P_2] -> 6.
        assert!((ep[2] - 6.0).abs() < 1e-12, "{}", ep[2]);
    }

    #[test]
    fn synthetic_table_recovers_constant() {
        let ep: Vec<f64> = (0..=4096).map(|n| if n == 0 { 0.0 } else { let x = n as f64; 2.0 * x * x.ln() + 5.0 * x }).collect();
        let c = extract_constants_from(&ep, None, 2.0, 2.0 / 3.0).unwrap();
        assert!((c.c_p.value - 5.0).abs() < 1e-9);
        assert!(extract_constants_from(&ep[..500], None, 2.0, 2.0 / 3.0).is_err());
    }

    #[test]
    fn bst_constants() {
        let (p, spec) = bst();
        let t = MeanTable::compute(10_000, &p, &spec, true).unwrap();
        let c = extract_constants(&t).unwrap();
        let gamma = 0.577_215_664_901_532_9;
        assert!((c.c_p.value - (2.0 * gamma - 4.0)).abs() < 0.01, "{:?}", c.c_p);
        assert!((c.mu_inv - 2.0).abs() < 1e-8);
        let cw = c.c_w.unwrap();
        assert!((cw.value - c.c_w_from_c_p).abs() < 0.05, "{cw:?} {}", c.c_w_from_c_p);
    }

    #[test]
    fn toll_decay() {
        let (p, spec) = bst();
        let t = MeanTable::compute(10_000, &p, &spec, false).unwrap();
        let toll = toll_functions(&t).unwrap();
        assert!(toll.decay_exponent(100, 10_000) >= 0.2);
        assert!(toll.max_abs_r(5000, 10_000) < toll.max_abs_r(100, 200));
    }
}
