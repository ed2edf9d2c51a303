use splitlab::constants::{extract_constants, mu_of, toll_functions, MeanTable};
use splitlab::contraction::{
    contraction_certificate, exp_moment_curve, fixed_point_1d, fixed_point_2d, max_rel_gap, simulate_normalized,
    tail_probe, w2_1d, FixedPointOptions,
};
use splitlab::splitter::{splitter_moments, Family, SplitterSpec};
use splitlab::subtree_law::{concentration_report_with, moment_asymptotics};
use splitlab::tree::SplitTreeParams;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[test]
fn bst_second_order_constant() {
    let spec = SplitterSpec::bst();
    let p = SplitTreeParams::default_for(spec.family());
    let table = MeanTable::compute(10_000, &p, &spec, true).unwrap();
    let r = extract_constants(&table).unwrap();
    assert!((r.mu_inv - 2.0).abs() < 1e-10);
    assert!((r.c_p.value - (2.0 * EULER_GAMMA - 4.0)).abs() < 1e-2, "{:?}", r.c_p);
    let cw = r.c_w.unwrap().value;
    assert!((cw - r.c_w_from_c_p).abs() < 5e-2, "{cw} vs {}", r.c_w_from_c_p);
}

#[test]
fn toll_remainder_decays() {
    let spec = SplitterSpec::median_of(1);
    let p = SplitTreeParams::default_for(spec.family());
    let table = MeanTable::compute(4000, &p, &spec, false).unwrap();
    let toll = toll_functions(&table).unwrap();
    assert!(toll.max_abs_r(2000, 4000) < toll.max_abs_r(100, 200));
    assert!(toll.decay_exponent(200, 4000) > 0.5);
}

#[test]
fn subtree_moments_have_the_expected_leading_terms() {
    let spec = SplitterSpec::new(Family::BarySearchTree { b: 3 }).unwrap();
    let p = SplitTreeParams::default_for(spec.family());
    let m = moment_asymptotics(20_000, &p, &spec).unwrap();
    assert!(m.rel_gap_ei2() < 1e-3, "{m:?}");
}

#[test]
fn mu_matches_entropy_integral() {
    // V uniform: -2 E[V ln V] = 1/2.
    assert!((mu_of(&SplitterSpec::bst()).unwrap() - 0.5).abs() < 1e-12);
    // Median of three: density 6x(1-x), -2 ∫ 6x²(1-x) ln x = 7/12.
    assert!((mu_of(&SplitterSpec::median_of(1)).unwrap() - 7.0 / 12.0).abs() < 1e-10);
}

#[test]
fn univariate_fixed_point_has_the_known_variance() {
    let spec = SplitterSpec::bst();
    let run = fixed_point_1d(&spec, &FixedPointOptions::new(20_000, 40, 3)).unwrap();
    let var = run.population.variance(0);
    let sigma2 = 7.0 - 2.0 * std::f64::consts::PI.powi(2) / 3.0;
    assert!((var - sigma2).abs() / sigma2 < 0.05, "{var} vs {sigma2}");
    assert!(run.coupled_w2.last().unwrap() < &1e-3);
    let m = splitter_moments(&spec).unwrap();
    assert!((m.sigma2 - sigma2).abs() < 1e-6);
}

#[test]
fn bivariate_fixed_point_marginal_is_the_univariate_law() {
    let spec = SplitterSpec::bst();
    assert!(contraction_certificate(&spec).unwrap().pass);
    let opts = FixedPointOptions::new(20_000, 30, 4);
    let one = fixed_point_1d(&spec, &opts).unwrap();
    let c_p = 2.0 * EULER_GAMMA - 4.0;
    let c_w = c_p - 2.0;
    let two = fixed_point_2d(&spec, c_p, c_w, &FixedPointOptions { seed: 5, ..opts }).unwrap();
    let w2 = w2_1d(&two.population.column(1), &one.population.samples);
    assert!(w2 < 0.05, "w2 = {w2}");
}

#[test]
fn exp_moments_of_simulated_paths_approach_the_limit() {
    let spec = SplitterSpec::bst();
    let p = SplitTreeParams::default_for(spec.family());
    let lam: Vec<f64> = (-4..=4).map(|i| i as f64 * 0.25).collect();
    let limit = fixed_point_1d(&spec, &FixedPointOptions::new(40_000, 40, 6)).unwrap();
    let sim = simulate_normalized(&p, &spec, 20_000, 2000, 7).unwrap();
    let a = exp_moment_curve(&limit.population.samples, &lam).unwrap();
    let b = exp_moment_curve(&sim.path, &lam).unwrap();
    assert!(max_rel_gap(&a, &b) < 0.1);
    assert!(exp_moment_curve(&sim.path, &[2.5]).is_err());
}

#[test]
fn relative_deviations_become_rare() {
    let spec = SplitterSpec::bst();
    let p = SplitTreeParams::default_for(spec.family());
    let small = tail_probe(&p, &spec, 200, 0.2, 2000, 8).unwrap();
    let large = tail_probe(&p, &spec, 20_000, 0.2, 2000, 9).unwrap();
    assert!(large.probability < small.probability, "{small:?} {large:?}");
    assert!(large.probability < 0.005, "{large:?}");
}

#[test]
fn subtree_fraction_concentrates() {
    for spec in [SplitterSpec::bst(), SplitterSpec::median_of(2)] {
        let p = SplitTreeParams::default_for(spec.family());
        let r = concentration_report_with(2000, &p, &spec, 0.05, 10, 100_000).unwrap();
        assert!(r.within_bound(), "{r:?}");
    }
}
