//! The `splitlab` command line.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::config::{resolve, Command, ExperimentConfig, FlagValues, Resolved};
use crate::constants::{extract_constants, toll_functions, MeanTable, GENERAL_CAP};
use crate::contraction::{contraction_certificate, fixed_point_1d, fixed_point_2d, w2_1d, ContractionCertificate, FixedPointOptions};
use crate::error::{Error, Result};
use crate::markov::{increment_sup_gap, limit_increment_cdf, run_chain_with, sample_increments, ChainState, StoppingRule, TransitionSampler};
use crate::report::{Document, Table};
use crate::rng;
use crate::splitter::splitter_moments;
use crate::stats::{mean_estimate, MeanEstimate};
use crate::tree::{build_tree_with, StatsSampler};
use crate::verify::{run_verify, Mode, VerifyOptions, VerifySummary};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_OTHER: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "splitlab", version, about = "Random split trees: simulation, exact means, limit laws")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Sub,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Default)]
pub struct Common {
    /// Splitter family: bst, bary, median, dirichlet, beta.
    #[arg(long, global = true)]
    pub family: Option<String>,
    /// Branching factor (bary).
    #[arg(long, global = true)]
    pub b: Option<usize>,
    /// Median-of-(2k+1) parameter.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    /// Dirichlet weights or the first Beta parameter.
    #[arg(long, global = true, value_delimiter = ',')]
    pub alpha: Vec<f64>,
    #[arg(long, global = true)]
    pub beta: Option<f64>,
    /// Node capacity.
    #[arg(long, global = true)]
    pub s: Option<usize>,
    /// Balls kept at an internal node.
    #[arg(long, global = true)]
    pub s0: Option<usize>,
    /// Balls handed to each child on a split.
    #[arg(long, global = true)]
    pub s1: Option<usize>,
    /// Tree sizes (comma separated).
    #[arg(long, global = true, value_delimiter = ',')]
    pub n: Vec<u64>,
    #[arg(long, global = true)]
    pub reps: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, conflicts_with = "full")]
    pub quick: bool,
    #[arg(long, global = true)]
    pub full: bool,
    /// JSON config whose fields override the flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Sub {
    /// Path length and Wiener index of random trees.
    Simulate {
        /// Build every tree ball by ball instead of sampling subtree sizes.
        #[arg(long)]
        explicit: bool,
    },
    /// Exact mean tables and the constants c_p, c_w.
    Constants,
    /// Trajectories of the depth chain.
    Chain {
        /// Stop once the subtree size is at most n1.
        #[arg(long, default_value_t = 20)]
        n1: u64,
    },
    /// Fixed-point samplers of the limit laws.
    Fixedpoint {
        #[arg(long)]
        pop: Option<usize>,
        #[arg(long)]
        iters: Option<usize>,
        /// Also write the final populations as CSV.
        #[arg(long)]
        dump: bool,
    },
    /// Run the acceptance checks.
    Verify {
        /// Run only these checks (1-12).
        #[arg(long, value_delimiter = ',')]
        check: Vec<u8>,
    },
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::ConfigInvalid(_)
        | Error::InvalidParams(_)
        | Error::InvalidSplitter(_)
        | Error::UnsupportedSplitter(_) => EXIT_CONFIG,
        Error::Io(_) => EXIT_IO,
        _ => EXIT_OTHER,
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run_cli(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn flags_of(common: &Common, sub: &Sub) -> FlagValues {
    let mut extra = std::collections::BTreeMap::new();
    match sub {
        Sub::Simulate { explicit } => {
            extra.insert("explicit".into(), (*explicit).into());
        }
        Sub::Chain { n1 } => {
            extra.insert("n1".into(), (*n1).into());
        }
        Sub::Fixedpoint { pop, iters, dump } => {
            if let Some(p) = pop {
                extra.insert("pop".into(), (*p as u64).into());
            }
            if let Some(i) = iters {
                extra.insert("iters".into(), (*i as u64).into());
            }
            extra.insert("dump".into(), (*dump).into());
        }
        Sub::Verify { check } => {
            extra.insert("checks".into(), serde_json::to_value(check).expect("list"));
        }
        Sub::Constants => {}
    }
    FlagValues {
        family: common.family.clone(),
        b: common.b,
        k: common.k,
        alpha: common.alpha.clone(),
        beta: common.beta,
        s: common.s,
        s0: common.s0,
        s1: common.s1,
        n: common.n.clone(),
        reps: common.reps,
        seed: common.seed,
        out: common.out.clone(),
        mode: if common.full {
            Some(Mode::Full)
        } else if common.quick {
            Some(Mode::Quick)
        } else {
            None
        },
        extra,
    }
}

pub fn run_cli(cli: Cli) -> Result<i32> {
    let command = match cli.command {
        Sub::Simulate { .. } => Command::Simulate,
        Sub::Constants => Command::Constants,
        Sub::Chain { .. } => Command::Chain,
        Sub::Fixedpoint { .. } => Command::Fixedpoint,
        Sub::Verify { .. } => Command::Verify,
    };
    let file = cli.common.config.as_deref().map(ExperimentConfig::load).transpose()?;
    let cfg = resolve(command, flags_of(&cli.common, &cli.command), file)?;
    run(&cfg)
}

pub fn run(cfg: &Resolved) -> Result<i32> {
    std::fs::create_dir_all(&cfg.out)?;
    match cfg.command {
        Command::Simulate => simulate(cfg),
        Command::Constants => constants(cfg),
        Command::Chain => chain(cfg),
        Command::Fixedpoint => fixedpoint(cfg),
        Command::Verify => verify(cfg),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulateSummary {
    pub family: String,
    pub params: crate::tree::SplitTreeParams,
    pub seed: u64,
    pub reps: usize,
    pub rows: Vec<SimulateRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulateRow {
    pub n: u64,
    pub path_length: MeanEstimate,
    pub wiener: MeanEstimate,
}

fn simulate(cfg: &Resolved) -> Result<i32> {
    let ns = if cfg.n.is_empty() { vec![1000] } else { cfg.n.clone() };
    let explicit = cfg.extra_bool("explicit");
    let sampler = cfg.spec.sampler();
    let fast = StatsSampler::new(cfg.params, &sampler);
    let mut table = Table::new(["n", "replicate", "path_length", "wiener"]);
    let mut rows = Vec::new();
    for &n in &ns {
        let tag = format!("simulate-{n}");
        let stats: Vec<(u64, u128)> = rng::par_replicates(cfg.seed, &tag, cfg.reps, |r, _| {
            if explicit {
                let t = build_tree_with(&cfg.params, &sampler, n as usize, r);
                (t.path_length(), t.wiener_index())
            } else {
                fast.sample(n, r)
            }
        });
        for (i, (p, w)) in stats.iter().enumerate() {
            table.push(vec![n.into(), i.into(), (*p).into(), (*w).into()]);
        }
        rows.push(SimulateRow {
            n,
            path_length: mean_estimate(&stats.iter().map(|s| s.0 as f64).collect::<Vec<_>>()),
            wiener: mean_estimate(&stats.iter().map(|s| s.1 as f64).collect::<Vec<_>>()),
        });
    }
    table.save_csv(&cfg.out.join("simulate.csv"))?;
    let summary = SimulateSummary { family: cfg.spec.family().label(), params: cfg.params, seed: cfg.seed, reps: cfg.reps, rows };
    Document::new("simulate", summary).save(&cfg.out.join("simulate.json"))?;
    println!("wrote {}", cfg.out.join("simulate.csv").display());
    Ok(EXIT_OK)
}

fn constants(cfg: &Resolved) -> Result<i32> {
    let n_max = cfg.n.iter().copied().max().unwrap_or(10_000) as usize;
    let with_wiener = n_max <= GENERAL_CAP;
    let table = MeanTable::compute(n_max, &cfg.params, &cfg.spec, with_wiener)?;
    let toll = if n_max <= GENERAL_CAP { Some(toll_functions(&table)?) } else { None };
    let mut csv = Table::new(["n", "ep", "ew", "h_n", "r_n"]);
    let h = crate::constants::normalized_path(&table.ep, 1.0 / crate::constants::mu_of(&cfg.spec)?);
    for n in 0..=n_max {
        csv.push(vec![
            n.into(),
            table.ep[n].into(),
            table.ew.as_ref().map_or(f64::NAN, |w| w[n]).into(),
            h[n].into(),
            toll.as_ref().map_or(f64::NAN, |t| t.r[n]).into(),
        ]);
    }
    csv.save_csv(&cfg.out.join("constants.csv"))?;
    let report = extract_constants(&table)?;
    Document::new("constants", report.clone()).save(&cfg.out.join("constants.json"))?;
    println!("mu_inv = {:.12}", report.mu_inv);
    println!("c_p = {:.6} ± {:.2e}", report.c_p.value, report.c_p.stderr);
    if let Some(cw) = report.c_w {
        println!("c_w = {:.6} ± {:.2e}", cw.value, cw.stderr);
    }
    Ok(EXIT_OK)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub start_n: u64,
    pub n1: u64,
    pub runs: usize,
    pub steps: MeanEstimate,
    /// sup |F̂_n - F| for one-step increments from -ln n.
    pub increment_sup_gap: f64,
}

fn chain(cfg: &Resolved) -> Result<i32> {
    let start = cfg.n.first().copied().unwrap_or(100_000);
    let n1 = cfg.extra_u64("n1", 20)?;
    let t = TransitionSampler::new(&cfg.params, &cfg.spec)?;
    let rule = StoppingRule::Sigma(n1);
    let trajectories = rng::par_replicates(cfg.seed, "chain", cfg.reps, |r, _| {
        run_chain_with(&t, ChainState::from_size(start), rule, r)
    });
    let mut csv = Table::new(["replicate", "steps", "stopped_size"]);
    let mut steps = Vec::with_capacity(cfg.reps);
    for (i, tr) in trajectories.into_iter().enumerate() {
        let tr = tr?;
        steps.push(tr.steps as f64);
        csv.push(vec![i.into(), tr.steps.into(), tr.stopped_state.size().into()]);
    }
    csv.save_csv(&cfg.out.join("chain.csv"))?;
    let incs = sample_increments(start, cfg.reps.max(1000), &cfg.params, &cfg.spec, cfg.seed)?;
    let grid: Vec<f64> = (0..=20_000).map(|k| k as f64 * 1e-3).collect();
    let f = limit_increment_cdf(&cfg.spec, &grid)?;
    let gap = increment_sup_gap(&incs, |y| {
        let k = (y / 1e-3).floor() as usize;
        if k + 1 >= f.len() {
            1.0
        } else {
            let w = y / 1e-3 - k as f64;
            f[k] * (1.0 - w) + f[k + 1] * w
        }
    });
    let summary = ChainSummary { start_n: start, n1, runs: cfg.reps, steps: mean_estimate(&steps), increment_sup_gap: gap };
    Document::new("chain", summary).save(&cfg.out.join("chain.json"))?;
    println!("wrote {}", cfg.out.join("chain.csv").display());
    Ok(EXIT_OK)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedPointSummary {
    pub family: String,
    pub pop_size: usize,
    pub iters: usize,
    pub certificate: ContractionCertificate,
    pub sigma2: f64,
    pub variance_1d: f64,
    pub coupled_w2_1d: Vec<f64>,
    pub c_p: f64,
    pub c_w: f64,
    pub variance_2d: [f64; 2],
    pub coupled_w2_2d: Vec<f64>,
    /// ℓ2 between the second bivariate marginal and the univariate law.
    pub marginal_w2: f64,
}

fn fixedpoint(cfg: &Resolved) -> Result<i32> {
    let pop = cfg.extra_u64("pop", 100_000)? as usize;
    let iters = cfg.extra_u64("iters", 40)? as usize;
    let opts = FixedPointOptions::new(pop, iters, cfg.seed);
    let certificate = contraction_certificate(&cfg.spec)?;
    let moments = splitter_moments(&cfg.spec)?;
    let fp1 = fixed_point_1d(&cfg.spec, &opts)?;
    let n_max = if crate::constants::exact_mean_path(2, &cfg.params, &cfg.spec).is_ok() && cfg.spec.is_bst() { 10_000 } else { 4_000 };
    let table = MeanTable::compute(n_max, &cfg.params, &cfg.spec, true)?;
    let consts = extract_constants(&table)?;
    let c_w = consts.c_w.map_or(consts.c_w_from_c_p, |e| e.value);
    let fp2 = fixed_point_2d(&cfg.spec, consts.c_p.value, c_w, &FixedPointOptions { seed: cfg.seed ^ 0x2d, ..opts })?;
    let summary = FixedPointSummary {
        family: cfg.spec.family().label(),
        pop_size: pop,
        iters,
        certificate,
        sigma2: moments.sigma2,
        variance_1d: fp1.population.variance(0),
        coupled_w2_1d: fp1.coupled_w2.clone(),
        c_p: consts.c_p.value,
        c_w,
        variance_2d: [fp2.population.variance(0), fp2.population.variance(1)],
        coupled_w2_2d: fp2.coupled_w2.clone(),
        marginal_w2: w2_1d(&fp2.population.column(1), &fp1.population.samples),
    };
    if cfg.extra_bool("dump") {
        let mut t = Table::new(["index", "x_1d", "w_2d", "p_2d"]);
        for i in 0..pop {
            let row = fp2.population.row2(i);
            t.push(vec![i.into(), fp1.population.samples[i].into(), row[0].into(), row[1].into()]);
        }
        t.save_csv(&cfg.out.join("fixedpoint_samples.csv"))?;
    }
    Document::new("fixedpoint", summary).save(&cfg.out.join("fixedpoint.json"))?;
    println!("wrote {}", cfg.out.join("fixedpoint.json").display());
    Ok(EXIT_OK)
}

fn verify(cfg: &Resolved) -> Result<i32> {
    let opts = VerifyOptions {
        mode: cfg.mode,
        seed: cfg.seed,
        only: cfg.extra_list("checks")?,
        family: cfg.family_given.then(|| cfg.spec.clone()),
        tolerances: cfg.tolerances.clone(),
    };
    let summary = run_verify(&opts)?;
    print_summary(&summary, &mut std::io::stdout())?;
    Document::new("verify", summary.clone()).save(&cfg.out.join("verify.json"))?;
    Ok(if summary.all_passed { EXIT_OK } else { EXIT_VERIFY_FAILED })
}

pub fn print_summary<W: Write>(s: &VerifySummary, out: &mut W) -> Result<()> {
    for c in &s.checks {
        let mark = if c.passed { "PASS" } else { "FAIL" };
        let flag = if c.overridden.is_empty() { String::new() } else { format!(" [overridden: {}]", c.overridden.join(",")) };
        writeln!(out, "AC{:<2} {mark}  {} ({:.1}s){flag}", c.id, c.name, c.seconds)?;
        if let Some(n) = &c.note {
            writeln!(out, "      {n}")?;
        }
    }
    let passed = s.checks.iter().filter(|c| c.passed).count();
    writeln!(out, "{passed}/{} checks passed", s.checks.len())?;
    Ok(())
}
