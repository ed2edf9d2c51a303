use splitlab::constants::{toll_functions, MeanTable};
use splitlab::markov::{coupled_runs, state_pmf_pushforward, stopped_histogram, tv_probability, tv_stopped};
use splitlab::markov::{chain_exp_sum, sandwich_run};
use splitlab::markov::{
    increment_sup_gap, limit_increment_cdf, nu_pmf, representation_check, run_chain, sample_increments, ChainState,
    StoppingRule, TransitionSampler,
};
use splitlab::rng::stream;
use splitlab::splitter::SplitterSpec;
use splitlab::tree::SplitTreeParams;
use splitlab::Error;

fn bst() -> (SplitterSpec, SplitTreeParams) {
    let spec = SplitterSpec::bst();
    let p = SplitTreeParams::default_for(spec.family());
    (spec, p)
}

#[test]
fn states_at_or_below_capacity_are_absorbing() {
    let (spec, p) = bst();
    let t = TransitionSampler::new(&p, &spec).unwrap();
    let mut r = stream(3, "abs", 0);
    assert_eq!(t.step(ChainState::from_size(1), &mut r), ChainState::Absorbed);
    assert_eq!(t.step(ChainState::Absorbed, &mut r), ChainState::Absorbed);
    assert_eq!(ChainState::Absorbed.value(), 1.0);
    let nu = nu_pmf(1, &p, &spec).unwrap();
    assert!((nu.probs[0] - 1.0).abs() < 1e-15);
}

#[test]
fn degenerate_node_parameters_are_rejected_by_the_chain() {
    let spec = SplitterSpec::bst();
    let p = SplitTreeParams::new(2, 1, 0, 0).unwrap();
    assert!(matches!(TransitionSampler::new(&p, &spec), Err(Error::InvalidParams(_))));
}

#[test]
fn bst_transition_is_size_biased_uniform() {
    let (spec, p) = bst();
    let n = 40;
    let nu = nu_pmf(n, &p, &spec).unwrap();
    // I_{n,1} is uniform on {0, .., n-1}: ν_n(k) = 2k/n², plus s0/n = 1/n at n - 1.
    let nf = n as f64;
    assert_eq!(nu.probs.len(), n);
    for k in 0..n {
        let extra = if k == n - 1 { 1.0 / nf } else { 0.0 };
        assert!((nu.probs[k] - 2.0 * k as f64 / (nf * nf) - extra).abs() < 1e-12, "k = {k}");
    }
}

#[test]
fn pushforward_matches_simulation() {
    for spec in [SplitterSpec::bst(), SplitterSpec::median_of(1)] {
        let p = SplitTreeParams::default_for(spec.family());
        let a = -(60f64).ln();
        let exact = state_pmf_pushforward(3000, a, &p, &spec).unwrap();
        assert!(exact.max_mass_error <= 1e-9);
        let mc = stopped_histogram(3000, a, &p, &spec, 200_000, 8).unwrap();
        let tv = tv_probability(&exact.probs, &mc);
        assert!(tv < 0.01, "{}: tv = {tv}", spec.family().label());
    }
}

#[test]
fn stopped_law_forgets_the_start() {
    // For the bst the stopped law does not depend on the start at all, since
    // ν_n(k) ∝ k below n - 1.
    let (spec, p) = bst();
    assert!(tv_stopped(4000, 6000, -(100f64).ln(), &p, &spec).unwrap() < 1e-12);
    let spec = SplitterSpec::median_of(1);
    let p = SplitTreeParams::default_for(spec.family());
    let tvs: Vec<f64> = [400.0f64, 100.0, 25.0]
        .iter()
        .map(|&k| tv_stopped(4000, 6000, -k.ln(), &p, &spec).unwrap())
        .collect();
    assert!(tvs.windows(2).all(|w| w[1] < w[0]), "{tvs:?}");
    assert!(tvs[2] < 0.05, "{tvs:?}");
}

#[test]
fn coupled_chains_meet_at_least_as_often_as_total_variation_allows() {
    let spec = SplitterSpec::median_of(1);
    let p = SplitTreeParams::default_for(spec.family());
    let a = -(30f64).ln();
    let runs = 20_000;
    let s = coupled_runs(3000, 3500, a, &p, &spec, runs, 4).unwrap();
    let tv = tv_stopped(3000, 3500, a, &p, &spec).unwrap() / 2.0;
    let miss = 1.0 - s.meeting_frequency;
    let sd = (miss.max(1e-3) * (1.0 - miss) / runs as f64).sqrt();
    assert!(miss + 4.0 * sd >= tv, "miss {miss} vs tv {tv}");
    assert!(s.meeting_frequency > 0.5, "{s:?}");
}

#[test]
fn stopping_rules_finish() {
    let (spec, p) = bst();
    let mut r = stream(5, "rules", 0);
    for rule in [StoppingRule::Sigma(10), StoppingRule::Tau(-(10f64).ln()), StoppingRule::Gamma(3.0)] {
        let tr = run_chain(100_000, rule, &p, &spec, &mut r).unwrap();
        assert!(tr.steps > 0);
    }
}

#[test]
fn increments_converge_to_the_limit_law() {
    let spec = SplitterSpec::median_of(1);
    let p = SplitTreeParams::default_for(spec.family());
    let grid: Vec<f64> = (0..=30_000).map(|k| k as f64 * 1e-3).collect();
    let f = limit_increment_cdf(&spec, &grid).unwrap();
    let cdf = |y: f64| if y >= 30.0 { 1.0 } else { f[(y / 1e-3) as usize] };
    let gaps: Vec<f64> = [100u64, 100_000]
        .iter()
        .map(|&n| increment_sup_gap(&sample_increments(n, 40_000, &p, &spec, 2).unwrap(), cdf))
        .collect();
    assert!(gaps[1] < 0.015, "{gaps:?}");
    assert!(gaps[1] < gaps[0], "{gaps:?}");
}

#[test]
fn representation_identity_holds_for_median_of_three() {
    let spec = SplitterSpec::median_of(1);
    let p = SplitTreeParams::default_for(spec.family());
    let table = MeanTable::compute(3000, &p, &spec, false).unwrap();
    let toll = toll_functions(&table).unwrap();
    let c = representation_check(3000, 20, &toll.h, &toll.r, &p, &spec, 100_000, 6).unwrap();
    assert!(c.z_score().abs() < 4.0, "{c:?}");
}

#[test]
fn sandwich_brackets_the_chain() {
    let (spec, p) = bst();
    let (a, d, alpha) = (-(200f64).ln(), 2.0, 0.5);
    let s = sandwich_run(a, d, 5000, alpha, &p, &spec, 5000, 9).unwrap();
    assert!(s.all_ordered && s.sums_ordered, "{s:?}");
    let direct = chain_exp_sum(5000, d, alpha, &p, &spec, 5000, 10).unwrap();
    let z = (s.chain.mean - direct.mean) / (s.chain.stderr.powi(2) + direct.stderr.powi(2)).sqrt();
    assert!(z.abs() < 4.5, "inverse-cdf chain {:?} vs structural {direct:?}", s.chain);
    assert!(s.bar.mean <= s.chain.mean && s.chain.mean <= s.underline.mean);
}
