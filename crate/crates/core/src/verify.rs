//! The acceptance suite behind `splitlab verify`.
//!
//! Full mode runs every criterion at its stated size and tolerance. Quick
//! mode is a smoke run at reduced sizes with its own pinned tolerances.

use std::collections::BTreeMap;
use std::sync::OnceLock;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::constants::{exact_mean_path, exact_mean_wiener, extract_constants, toll_functions, MeanTable};
use crate::contraction::{
    contraction_certificate, fixed_point_1d, fixed_point_2d, lambda_below_identity, w2_1d, FixedPointOptions,
    FixedPointRun,
};
use crate::error::{Error, Result};
use crate::markov::{
    chain_exp_sum, increment_sup_gap, limit_increment_cdf, representation_check, sample_increments,
    sandwich_summary, tv_stopped, RenewalSandwich,
};
use crate::splitter::{splitter_moments, SplitterSpec};
use crate::tree::{build_tree_with, simulate_stats, SplitTreeParams};

pub const CHECK_COUNT: u8 = 12;
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Quick,
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub mode: Mode,
    pub seed: u64,
    /// Criteria to run (1..=12); all when empty.
    pub only: Vec<u8>,
    /// Restricts the per-family criteria (1, 8, 9) to one family.
    pub family: Option<SplitterSpec>,
    /// Overrides of named tolerances, e.g. "ac5.rel".
    pub tolerances: BTreeMap<String, f64>,
}

impl VerifyOptions {
    pub fn new(mode: Mode, seed: u64) -> Self {
        VerifyOptions { mode, seed, only: Vec::new(), family: None, tolerances: BTreeMap::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub id: u8,
    pub name: String,
    pub passed: bool,
    pub metrics: BTreeMap<String, f64>,
    pub tolerances: BTreeMap<String, f64>,
    /// Tolerances that came from overrides rather than the defaults.
    pub overridden: Vec<String>,
    pub note: Option<String>,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifySummary {
    pub mode: Mode,
    pub seed: u64,
    pub all_passed: bool,
    pub checks: Vec<CheckOutcome>,
}

struct Plan {
    ac1_n_max: usize,
    ac1_trees: usize,
    ac3_n: usize,
    big_n: u64,
    mid_n: u64,
    sim_reps: usize,
    fp_pop: usize,
    fp_iters: usize,
    ac9_n: u64,
    ac9_draws: usize,
    ac11_trajectories: usize,
    ac12_runs: usize,
    ac12_starts: [u64; 2],
}

impl Plan {
    fn for_mode(mode: Mode) -> Self {
        match mode {
            Mode::Full => Plan {
                ac1_n_max: 200,
                ac1_trees: 100,
                ac3_n: 10_000,
                big_n: 100_000,
                mid_n: 30_000,
                sim_reps: 10_000,
                fp_pop: 100_000,
                fp_iters: 40,
                ac9_n: 1_000_000,
                ac9_draws: 100_000,
                ac11_trajectories: 1_000_000,
                ac12_runs: 100_000,
                ac12_starts: [10_000, 100_000],
            },
            Mode::Quick => Plan {
                ac1_n_max: 40,
                ac1_trees: 10,
                ac3_n: 2_000,
                big_n: 10_000,
                mid_n: 3_000,
                sim_reps: 2_000,
                fp_pop: 20_000,
                fp_iters: 25,
                ac9_n: 1_000_000,
                ac9_draws: 20_000,
                ac11_trajectories: 100_000,
                ac12_runs: 20_000,
                ac12_starts: [1_000, 10_000],
            },
        }
    }
}

fn default_tolerance(mode: Mode, key: &str) -> f64 {
    let full = match key {
        "ac2.rel" => 1e-9,
        "ac3.bst_path" => 0.03,
        "ac3.bst_wiener" => 0.05,
        "ac3.median3_path" => 0.05,
        "ac4.abs" => 0.01,
        "ac5.rel" => 0.05,
        "ac6.w2" => 0.05,
        "ac6.ratio" => 0.85,
        "ac7.w2" => 0.05,
        "ac7.rel" => 0.10,
        "ac9.sup" => 0.02,
        "ac10.tv" => 0.2,
        "ac11.z" => 4.0,
        "ac12.z" => 2.0,
        _ => f64::NAN,
    };
    match (mode, key) {
        (Mode::Quick, "ac5.rel") => 0.15,
        (Mode::Quick, "ac6.w2") => 0.10,
        (Mode::Quick, "ac7.w2") => 0.10,
        (Mode::Quick, "ac7.rel") => 0.25,
        (Mode::Quick, "ac9.sup") => 0.03,
        _ => full,
    }
}

struct Ctx<'a> {
    opts: &'a VerifyOptions,
    plan: Plan,
    bst: SplitTreeParams,
    bst_spec: SplitterSpec,
    big: OnceLock<Result<Vec<(u64, u128)>>>,
    mid: OnceLock<Result<Vec<(u64, u128)>>>,
    fp1: OnceLock<Result<FixedPointRun>>,
    table: OnceLock<Result<MeanTable>>,
}

struct Check {
    outcome: CheckOutcome,
    mode: Mode,
    opts_tol: BTreeMap<String, f64>,
}

impl Check {
    fn new(id: u8, name: &str, ctx: &Ctx) -> Self {
        Check {
            outcome: CheckOutcome {
                id,
                name: name.to_string(),
                passed: true,
                metrics: BTreeMap::new(),
                tolerances: BTreeMap::new(),
                overridden: Vec::new(),
                note: None,
                seconds: 0.0,
            },
            mode: ctx.opts.mode,
            opts_tol: ctx.opts.tolerances.clone(),
        }
    }

    fn tol(&mut self, key: &str) -> f64 {
        let v = match self.opts_tol.get(key) {
            Some(&v) => {
                self.outcome.overridden.push(key.to_string());
                v
            }
            None => default_tolerance(self.mode, key),
        };
        self.outcome.tolerances.insert(key.to_string(), v);
        v
    }

    fn metric(&mut self, key: &str, v: f64) {
        self.outcome.metrics.insert(key.to_string(), v);
    }

    fn require(&mut self, ok: bool) {
        self.outcome.passed &= ok;
    }

    fn note(&mut self, s: impl Into<String>) {
        let s = s.into();
        self.outcome.note = Some(match self.outcome.note.take() {
            Some(prev) => format!("{prev}; {s}"),
            None => s,
        });
    }
}

fn families(ctx: &Ctx) -> Vec<SplitterSpec> {
    match &ctx.opts.family {
        Some(f) => vec![f.clone()],
        None => SplitterSpec::builtin_catalogue(),
    }
}

fn cached<T>(cell: &OnceLock<Result<T>>, f: impl FnOnce() -> Result<T>) -> Result<&T> {
    match cell.get_or_init(f) {
        Ok(v) => Ok(v),
        Err(e) => Err(Error::InvalidArgument(format!("shared computation failed: {e}"))),
    }
}

impl Ctx<'_> {
    fn big(&self) -> Result<&Vec<(u64, u128)>> {
        cached(&self.big, || simulate_stats(&self.bst, &self.bst_spec, self.plan.big_n, self.plan.sim_reps, self.opts.seed))
    }

    fn mid(&self) -> Result<&Vec<(u64, u128)>> {
        cached(&self.mid, || {
            simulate_stats(&self.bst, &self.bst_spec, self.plan.mid_n, self.plan.sim_reps, self.opts.seed ^ 0x3e4)
        })
    }

    fn fp1(&self) -> Result<&FixedPointRun> {
        cached(&self.fp1, || {
            fixed_point_1d(&self.bst_spec, &FixedPointOptions::new(self.plan.fp_pop, self.plan.fp_iters, self.opts.seed))
        })
    }

    fn table(&self) -> Result<&MeanTable> {
        cached(&self.table, || MeanTable::compute(10_000, &self.bst, &self.bst_spec, true))
    }
}

pub fn check_name(id: u8) -> &'static str {
    match id {
        1 => "wiener index equals brute force",
        2 => "bst mean path length equals closed form",
        3 => "first-order coefficients",
        4 => "second-order path constant",
        5 => "variance of the path length",
        6 => "univariate fixed-point convergence",
        7 => "bivariate limit",
        8 => "contraction certificate",
        9 => "chain increment limit law",
        10 => "stopped-chain total variation decay",
        11 => "representation identity",
        12 => "renewal sandwich",
        _ => "unknown",
    }
}

pub fn run_verify(opts: &VerifyOptions) -> Result<VerifySummary> {
    if let Some(bad) = opts.only.iter().find(|&&i| i == 0 || i > CHECK_COUNT) {
        return Err(Error::ConfigInvalid(format!("no acceptance check {bad}")));
    }
    let ctx = Ctx {
        opts,
        plan: Plan::for_mode(opts.mode),
        bst: SplitTreeParams::new(2, 1, 1, 0)?,
        bst_spec: SplitterSpec::bst(),
        big: OnceLock::new(),
        mid: OnceLock::new(),
        fp1: OnceLock::new(),
        table: OnceLock::new(),
    };
    let ids: Vec<u8> = if opts.only.is_empty() { (1..=CHECK_COUNT).collect() } else { opts.only.clone() };
    let mut checks = Vec::new();
    for id in ids {
        let t0 = Instant::now();
        let mut c = Check::new(id, check_name(id), &ctx);
        let res = match id {
            1 => ac1(&ctx, &mut c),
            2 => ac2(&ctx, &mut c),
            3 => ac3(&ctx, &mut c),
            4 => ac4(&ctx, &mut c),
            5 => ac5(&ctx, &mut c),
            6 => ac6(&ctx, &mut c),
            7 => ac7(&ctx, &mut c),
            8 => ac8(&ctx, &mut c),
            9 => ac9(&ctx, &mut c),
            10 => ac10(&ctx, &mut c),
            11 => ac11(&ctx, &mut c),
            _ => ac12(&ctx, &mut c),
        };
        if let Err(e) = res {
            c.require(false);
            c.note(format!("error: {e}"));
        }
        c.outcome.seconds = t0.elapsed().as_secs_f64();
        checks.push(c.outcome);
    }
    Ok(VerifySummary { mode: opts.mode, seed: opts.seed, all_passed: checks.iter().all(|c| c.passed), checks })
}

fn ac1(ctx: &Ctx, c: &mut Check) -> Result<()> {
    let mut trees = 0usize;
    let mut mismatches = 0usize;
    for (fi, spec) in families(ctx).iter().enumerate() {
        let params = SplitTreeParams::default_for(spec.family());
        let sampler = spec.sampler();
        let per_n: Vec<(usize, usize)> = crate::rng::par_replicates(
            ctx.opts.seed ^ fi as u64,
            "verify-wiener",
            ctx.plan.ac1_n_max * ctx.plan.ac1_trees,
            |rng, i| {
                let n = 1 + i / ctx.plan.ac1_trees;
                let t = build_tree_with(&params, &sampler, n, rng);
                let ok = t.wiener_bruteforce().map(|w| w == t.wiener_index()).unwrap_or(false);
                (1, usize::from(!ok))
            },
        );
        trees += per_n.iter().map(|x| x.0).sum::<usize>();
        mismatches += per_n.iter().map(|x| x.1).sum::<usize>();
    }
    c.metric("trees", trees as f64);
    c.metric("mismatches", mismatches as f64);
    c.require(mismatches == 0);
    Ok(())
}

fn ac2(ctx: &Ctx, c: &mut Check) -> Result<()> {
    let tol = c.tol("ac2.rel");
    let ep = exact_mean_path(10_000, &ctx.bst, &ctx.bst_spec)?;
    let mut harmonic = 0.0;
    let mut worst: f64 = 0.0;
    for (n, &e) in ep.iter().enumerate().skip(1) {
        harmonic += 1.0 / n as f64;
        let closed = 2.0 * (n as f64 + 1.0) * harmonic - 4.0 * n as f64;
        if closed != 0.0 {
            worst = worst.max(((e - closed) / closed).abs());
        } else {
            worst = worst.max(e.abs());
        }
    }
    c.metric("max_rel_error", worst);
    c.require(worst < tol);
    Ok(())
}

/// The coefficient a of n^p ln n in x[n] = a n^p ln n + c n^p + ..., from
/// x[n] - 2^p x[n/2] = a n^p ln 2 (n even).
fn dyadic_leading(x: &[f64], n: usize, power: i32) -> f64 {
    let nf = n as f64;
    (x[n] - 2f64.powi(power) * x[n / 2]) / (nf.powi(power) * 2f64.ln())
}

fn ac3(ctx: &Ctx, c: &mut Check) -> Result<()> {
    let n = ctx.plan.ac3_n;
    let nf = n as f64;
    let (t_p, t_w, t_m) = (c.tol("ac3.bst_path"), c.tol("ac3.bst_wiener"), c.tol("ac3.median3_path"));
    let ep = exact_mean_path(n, &ctx.bst, &ctx.bst_spec)?;
    let ew = exact_mean_wiener(n, &ctx.bst, &ctx.bst_spec, &ep)?;
    let m3 = SplitterSpec::median_of(1);
    let m3p = SplitTreeParams::default_for(m3.family());
    let epm = exact_mean_path(n, &m3p, &m3)?;
    let mu_m3 = crate::constants::mu_of(&m3)?;

    let ratio_p = ep[n] / (nf * nf.ln());
    let ratio_w = ew[n] / (nf * nf * nf.ln());
    let ratio_m = epm[n] / (nf * nf.ln());
    c.metric("bst_path_ratio", ratio_p);
    c.metric("bst_wiener_ratio", ratio_w);
    c.metric("median3_path_ratio", ratio_m);
    c.metric("median3_mu_inv", 1.0 / mu_m3);
    let (dp, dw, dm) = (dyadic_leading(&ep, n, 1), dyadic_leading(&ew, n, 2), dyadic_leading(&epm, n, 1));
    c.metric("bst_path_dyadic", dp);
    c.metric("bst_wiener_dyadic", dw);
    c.metric("median3_path_dyadic", dm);

    let band = |x: f64, target: f64, tol: f64| (x / target - 1.0).abs() <= tol;
    match ctx.opts.mode {
        Mode::Full => {
            c.require(band(ratio_p, 2.0, t_p) && band(ratio_w, 2.0, t_w) && band(ratio_m, 12.0 / 7.0, t_m));
            if !c.outcome.passed {
                c.note(format!(
                    "raw ratios carry the second-order term c/ln n (≈ {:.3} for the bst path at n = {n}); \
                     the dyadic-difference estimates of the leading coefficient are listed in the metrics",
                    (2.0 * EULER_GAMMA - 4.0) / nf.ln()
                ));
            }
        }
        Mode::Quick => {
            c.note("quick mode gates on the dyadic-difference estimates of the leading coefficient");
            c.require(band(dp, 2.0, t_p) && band(dw, 2.0, t_w) && band(dm, 12.0 / 7.0, t_m));
        }
    }
    Ok(())
}

fn ac4(ctx: &Ctx, c: &mut Check) -> Result<()> {
    let tol = c.tol("ac4.abs");
    let rep = extract_constants(ctx.table()?)?;
    let target = 2.0 * EULER_GAMMA - 4.0;
    c.metric("c_p", rep.c_p.value);
    c.metric("c_p_stderr", rep.c_p.stderr);
    c.metric("target", target);
    if let Some(cw) = rep.c_w {
        c.metric("c_w", cw.value);
    }
    c.require((rep.c_p.value - target).abs() < tol);
    Ok(())
}

fn sigma2_bst() -> Result<f64> {
    Ok(splitter_moments(&SplitterSpec::bst())?.sigma2)
}

fn ac5(ctx: &Ctx, c: &mut Check) -> Result<()> {
    let tol = c.tol("ac5.rel");
    let sims = ctx.big()?;
    let nf = ctx.plan.big_n as f64;
    let ps: Vec<f64> = sims.iter().map(|s| s.0 as f64 / nf).collect();
    let var = crate::stats::variance(&ps);
    let sigma2 = sigma2_bst()?;
    c.metric("var_over_n2", var);
    c.metric("sigma2", sigma2);
    c.metric("rel_gap", (var / sigma2 - 1.0).abs());
    c.require((var / sigma2 - 1.0).abs() < tol);
    Ok(())
}

fn normalized_path_samples(ctx: &Ctx) -> Result<Vec<f64>> {
    let sims = ctx.big()?;
    let n = ctx.plan.big_n;
    let ep = exact_mean_path(n as usize, &ctx.bst, &ctx.bst_spec)?[n as usize];
    Ok(sims.iter().map(|s| (s.0 as f64 - ep) / n as f64).collect())
}

fn ac6(ctx: &Ctx, c: &mut Check) -> Result<()> {
    let (tol, ratio_tol) = (c.tol("ac6.w2"), c.tol("ac6.ratio"));
    let xs = normalized_path_samples(ctx)?;
    let fp = ctx.fp1()?;
    let w2 = w2_1d(&xs, &fp.population.samples);
    let ratios = fp.w2_ratios();
    let worst = ratios.iter().skip(5).copied().fold(0.0, f64::max);
    c.metric("w2", w2);
    c.metric("max_ratio_after_5", worst);
    c.metric("population_variance", fp.population.variance(0));
    c.require(w2 < tol && worst <= ratio_tol);
    Ok(())
}

fn ac7(ctx: &Ctx, c: &mut Check) -> Result<()> {
    let (tol_w2, tol_rel) = (c.tol("ac7.w2"), c.tol("ac7.rel"));
    let rep = extract_constants(ctx.table()?)?;
    let cw = rep.c_w.ok_or_else(|| Error::InvalidArgument("missing c_w".into()))?;
    let opts = FixedPointOptions::new(ctx.plan.fp_pop, ctx.plan.fp_iters, ctx.opts.seed ^ 0x2d);
    let fp2 = fixed_point_2d(&ctx.bst_spec, rep.c_p.value, cw.value, &opts)?;
    let fp1 = ctx.fp1()?;
    let w2 = w2_1d(&fp2.population.column(1), &fp1.population.samples);
    let v_fp = fp2.population.variance(0);
    c.metric("w2_second_marginal", w2);
    c.metric("fixed_point_w_variance", v_fp);
    c.require(w2 < tol_w2);
    for (label, n, sims) in [("mid", ctx.plan.mid_n, ctx.mid()?), ("big", ctx.plan.big_n, ctx.big()?)] {
        let nf = n as f64;
        let ws: Vec<f64> = sims.iter().map(|s| s.1 as f64 / (nf * nf)).collect();
        let v = crate::stats::variance(&ws);
        c.metric(&format!("var_w_over_n4_{label}"), v);
        c.metric(&format!("rel_gap_{label}"), (v / v_fp - 1.0).abs());
        c.require((v / v_fp - 1.0).abs() < tol_rel);
    }
    Ok(())
}

fn ac8(ctx: &Ctx, c: &mut Check) -> Result<()> {
    let grid_ok = lambda_below_identity(10_000);
    c.metric("lambda_below_identity", f64::from(u8::from(grid_ok)));
    c.require(grid_ok);
    for spec in families(ctx) {
        let cert = contraction_certificate(&spec)?;
        let label = spec.family().label();
        c.metric(&format!("{label}.sum_op_norms"), cert.sum_op_norms_2d);
        c.metric(&format!("{label}.sum_ev2"), cert.sum_ev2_1d);
        c.require(cert.pass);
    }
    Ok(())
}

fn ac9(ctx: &Ctx, c: &mut Check) -> Result<()> {
    let tol = c.tol("ac9.sup");
    for (i, spec) in families(ctx).iter().enumerate() {
        let params = SplitTreeParams::default_for(spec.family());
        let incs = sample_increments(ctx.plan.ac9_n, ctx.plan.ac9_draws, &params, spec, ctx.opts.seed ^ (i as u64 + 9))?;
        // Tabulate F once on a fine grid and interpolate linearly.
        let h = 1e-3;
        let grid: Vec<f64> = (0..=20_000).map(|k| k as f64 * h).collect();
        let f = limit_increment_cdf(spec, &grid)?;
        let cdf = |y: f64| {
            let x = y / h;
            let k = x.floor() as usize;
            if k + 1 >= f.len() {
                return 1.0;
            }
            let t = x - k as f64;
            f[k] * (1.0 - t) + f[k + 1] * t
        };
        let gap = increment_sup_gap(&incs, cdf);
        let label = spec.family().label();
        c.metric(&format!("{label}.sup_gap"), gap);
        c.require(gap <= tol);
        if spec.is_bst() {
            let closed = increment_sup_gap(&incs, |y| 1.0 - (-2.0 * y).exp());
            c.metric("bst.sup_gap_closed_form", closed);
            c.require(closed <= tol);
        }
    }
    Ok(())
}

fn ac10(ctx: &Ctx, c: &mut Check) -> Result<()> {
    let tol = c.tol("ac10.tv");
    let a = -(50f64).ln();
    let near = tv_stopped(400, 600, a, &ctx.bst, &ctx.bst_spec)?;
    let far = tv_stopped(4000, 6000, a, &ctx.bst, &ctx.bst_spec)?;
    let extreme = tv_stopped(5000, 8000, a, &ctx.bst, &ctx.bst_spec)?;
    c.metric("tv_400_600", near);
    c.metric("tv_4000_6000", far);
    c.metric("tv_5000_8000", extreme);
    // Below n - 1 the bst kernel is ∝ k, so both distances are 0 up to rounding.
    c.require(far <= near + 1e-12 && extreme < tol);
    Ok(())
}

fn ac11(ctx: &Ctx, c: &mut Check) -> Result<()> {
    let z_tol = c.tol("ac11.z");
    let table = MeanTable::compute(500, &ctx.bst, &ctx.bst_spec, false)?;
    let toll = toll_functions(&table)?;
    let rc = representation_check(
        500,
        20,
        &toll.h,
        &toll.r,
        &ctx.bst,
        &ctx.bst_spec,
        ctx.plan.ac11_trajectories,
        ctx.opts.seed,
    )?;
    c.metric("lhs", rc.lhs);
    c.metric("rhs_mc", rc.rhs_mc);
    c.metric("stderr", rc.stderr);
    c.metric("z", rc.z_score());
    c.require(rc.z_score() <= z_tol);
    Ok(())
}

fn ac12(ctx: &Ctx, c: &mut Check) -> Result<()> {
    let z_tol = c.tol("ac12.z");
    let d = 3.0;
    let start = ctx.plan.ac12_starts[0] as usize;
    let a = -(start as f64).ln() + d;
    let sw = RenewalSandwich::new(a, start, d, &ctx.bst, &ctx.bst_spec)?;
    let s = sandwich_summary(&sw, start, d, 1.0, ctx.plan.ac12_runs, ctx.opts.seed)?;
    c.metric("pathwise_ordered", f64::from(u8::from(s.all_ordered && s.sums_ordered)));
    c.metric("chain_mean", s.chain.mean);
    c.metric("bar_mean", s.bar.mean);
    c.metric("underline_mean", s.underline.mean);
    c.require(s.all_ordered && s.sums_ordered);
    let e: Vec<_> = ctx
        .plan
        .ac12_starts
        .iter()
        .enumerate()
        .map(|(i, &n)| chain_exp_sum(n, d, 1.0, &ctx.bst, &ctx.bst_spec, ctx.plan.ac12_runs, ctx.opts.seed ^ (i as u64 + 12)))
        .collect::<Result<_>>()?;
    let se = (e[0].stderr.powi(2) + e[1].stderr.powi(2)).sqrt();
    let z = (e[0].mean - e[1].mean).abs() / se;
    c.metric("exp_sum_small_start", e[0].mean);
    c.metric("exp_sum_large_start", e[1].mean);
    c.metric("z", z);
    c.require(z <= z_tol);
    Ok(())
}
