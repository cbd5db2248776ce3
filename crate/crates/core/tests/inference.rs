mod common;

use common::{center_columns, gaussian, instance, rng};
use nalgebra::DMatrix;
use subviews::composition::{concat_columns, MultiViewDesign};
use subviews::error::Error;
use subviews::inference::{
    analyze, bh_adjust, combine_union, debias, group_test, pivotal_statistic, remainder, tuned_fit,
    univariate_tests, LambdaPolicy, PipelineConfig,
};
use subviews::scorer::{estimate_score, ScoreProjection};
use subviews::simgen::{preset, run_replications_detailed, Correlation, RunConfig, SimDesignSpec};
use subviews::solver::{compute_weights, scaled_fit, SolverConfig, DEFAULT_EPSILON};
use subviews::stats::{chi2_quantile, chi2_sf};

fn fixed(lambda: f64) -> PipelineConfig {
    PipelineConfig {
        lambda: LambdaPolicy::Fixed(lambda),
        ..PipelineConfig::default()
    }
}

fn scores(design: &MultiViewDesign<f64>, q: usize, xi: f64) -> Vec<ScoreProjection<f64>> {
    let ws = compute_weights(design, q, DEFAULT_EPSILON).unwrap().w_star;
    (0..design.num_groups())
        .map(|k| estimate_score(design, k, xi, &ws).unwrap())
        .collect()
}

#[test]
fn bh_hand_example() {
    let adj = bh_adjust(&[0.01, 0.04, 0.03]).unwrap();
    let expected = [0.03, 0.04, 0.04];
    for (a, e) in adj.iter().zip(expected) {
        assert!((a - e).abs() < 1e-15, "{adj:?}");
    }
    assert_eq!(bh_adjust(&[0.2]).unwrap(), vec![0.2]);
    assert_eq!(bh_adjust(&[0.3, 0.3, 0.3]).unwrap(), vec![0.3, 0.3, 0.3]);
    assert_eq!(bh_adjust(&[0.9, 0.8]).unwrap(), vec![0.9, 0.9]);
    assert!(bh_adjust(&[0.5, 1.5]).is_err());
    assert!(bh_adjust(&[-0.1]).is_err());
    assert!(bh_adjust(&[]).unwrap().is_empty());
}

#[test]
fn chi_square_median_gives_half() {
    for df in [1.0, 3.0, 10.0, 45.0] {
        let med = chi2_quantile(0.5, df).unwrap();
        assert!((chi2_sf(med, df).unwrap() - 0.5).abs() < 1e-10);
    }
    assert_eq!(chi2_sf(0.0, 4.0).unwrap(), 1.0);
    // P(chi2_2 > t) = exp(-t / 2)
    assert!((chi2_sf(3.0, 2.0).unwrap() - (-1.5f64).exp()).abs() < 1e-14);
}

#[test]
fn residual_orthogonal_to_projection_gives_unit_p_value() {
    let (y, design) = instance(11, 50, &[3, 3], 2, false);
    let sp = scores(&design, 2, 1.0).swap_remove(1);
    // Exact least squares: residual orthogonal to every column, so T = 0.
    let fit = scaled_fit(&y, &design, &compute_weights(&design, 2, DEFAULT_EPSILON).unwrap().with_lambda(0.0), &SolverConfig::default()).unwrap();
    let r = group_test(&fit, &sp, &y, &design, 1).unwrap();
    let direct = sp.p_basis.tr_mul(&(&y - design.block(0) * &fit.b_blocks[0])).norm_squared() / fit.sigma.powi(2);
    assert!((r.t_stat - direct).abs() < 1e-10 * direct.max(1.0));
    assert_eq!(r.df, 3 * 2);

    let zero = DMatrix::zeros(50, 2);
    let mut null_fit = fit.clone();
    for b in &mut null_fit.b_blocks {
        b.fill(0.0);
    }
    null_fit.mu.fill(0.0);
    let r = group_test(&null_fit, &sp, &zero, &design, 1).unwrap();
    assert_eq!(r.t_stat, 0.0);
    assert_eq!(r.p_value, 1.0);
}

#[test]
fn zero_xi_debiasing_recovers_least_squares() {
    let (y, design) = instance(12, 60, &[3, 2, 4], 3, true);
    let x = center_columns(&design.concatenated());
    let yc = center_columns(&y);
    let ols = (x.transpose() * &x).try_inverse().unwrap() * x.transpose() * &yc;
    let fit = tuned_fit(&y, &design, &fixed(0.3)).unwrap().0;
    assert!(!fit.active_groups().is_empty());
    let mut start = 0;
    for (k, sp) in scores(&design, 3, 0.0).iter().enumerate() {
        let pk = design.group_sizes()[k];
        let expected = ols.rows(start, pk).into_owned();
        start += pk;
        let d = debias(&fit, sp, &y, &design).unwrap();
        let b = d.b_debiased.expect("full column rank");
        assert!((&b - &expected).norm() < 1e-6 * expected.norm().max(1.0), "group {k}");
        let effect = center_columns(design.block(k)) * &expected;
        assert!((&d.group_effect - &effect).norm() < 1e-6 * effect.norm().max(1.0));
    }
}

#[test]
fn debias_adds_nothing_at_the_unpenalized_solution() {
    let (y, design) = instance(13, 40, &[2, 3], 2, false);
    let fit = tuned_fit(&y, &design, &fixed(0.0)).unwrap().0;
    for sp in scores(&design, 2, 1.0) {
        let d = debias(&fit, &sp, &y, &design).unwrap();
        let b = d.b_debiased.unwrap();
        assert!((&b - &fit.b_blocks[sp.k]).norm() < 1e-7);
    }
}

#[test]
fn debias_refuses_infeasible_scores() {
    let mut r = rng(14);
    let x1 = gaussian(&mut r, 25, 3);
    let x2 = &x1 * gaussian(&mut r, 3, 2);
    let design = MultiViewDesign::from_blocks(vec![x1, x2], false).unwrap();
    let y = gaussian(&mut r, 25, 1);
    let fit = tuned_fit(&y, &design, &fixed(1.0)).unwrap().0;
    let sp = scores(&design, 1, 0.0).swap_remove(1);
    assert!(matches!(debias(&fit, &sp, &y, &design), Err(Error::FeasibilityNotVerified { group: 1 })));
    assert!(group_test(&fit, &sp, &y, &design, 1).is_err());
}

#[test]
fn statistic_is_invariant_to_response_scaling() {
    let (y, design) = instance(15, 80, &[4, 3, 3], 3, true);
    let cfg = fixed(0.5);
    let base = analyze(&y, &design, &cfg, None).unwrap();
    for c in [1e-3, 0.37, 250.0] {
        let scaled = analyze(&(&y * c), &design, &cfg, None).unwrap();
        for (a, b) in base.reports.iter().zip(&scaled.reports) {
            assert!((a.t_stat - b.t_stat).abs() <= 1e-8 * a.t_stat.max(1.0), "c = {c}: {} vs {}", a.t_stat, b.t_stat);
            assert_eq!(a.df, b.df);
        }
    }
}

#[test]
fn df_is_rank_times_q() {
    let mut r = rng(16);
    let x1 = gaussian(&mut r, 50, 4);
    let x2 = gaussian(&mut r, 50, 2) * gaussian(&mut r, 2, 3);
    let design = MultiViewDesign::from_blocks(vec![x1, x2], false).unwrap();
    let y = gaussian(&mut r, 50, 3);
    let a = analyze(&y, &design, &fixed(0.5), None).unwrap();
    assert_eq!(a.reports[0].df, 12);
    assert_eq!(a.reports[1].df, 6);
}

#[test]
fn pivotal_statistic_trivial_cases() {
    let (y, design) = instance(17, 40, &[2, 2], 2, false);
    let fit = tuned_fit(&y, &design, &fixed(0.0)).unwrap().0;
    let sp = scores(&design, 2, 1.0).swap_remove(0);
    assert!(matches!(pivotal_statistic(&sp, None, None, &fit, &design), Err(Error::TruthRequired)));

    let e = DMatrix::zeros(40, 2);
    let v = pivotal_statistic(&sp, Some(&e), Some(&fit.b_blocks), &fit, &design).unwrap();
    assert_eq!(v, 0.0);

    let mut r = rng(18);
    let e = gaussian(&mut r, 40, 2);
    let v = pivotal_statistic(&sp, Some(&e), Some(&fit.b_blocks), &fit, &design).unwrap();
    let direct = sp.p_basis.tr_mul(&e).norm_squared() / fit.sigma.powi(2);
    assert!((v - direct).abs() < 1e-12 * direct);
    assert!(remainder(&sp, &fit, &design, &fit.b_blocks).unwrap().norm() == 0.0);
}

#[test]
fn union_with_single_response_matches_group_test() {
    let (y, design) = instance(19, 60, &[3, 3], 1, false);
    let cfg = fixed(0.4);
    let multi = analyze(&y, &design, &cfg, None).unwrap();
    let per = univariate_tests(&y, &design, &cfg, None).unwrap();
    let union = combine_union(&per).unwrap();
    for (a, b) in multi.reports.iter().zip(&union) {
        assert!((a.p_value - b.p_value).abs() < 1e-12);
        assert!((a.t_stat - b.t_stat).abs() < 1e-10);
    }
}

#[test]
fn union_of_unit_p_values_is_one() {
    let (y, design) = instance(20, 50, &[2, 2], 3, false);
    let cfg = fixed(0.3);
    let mut per = univariate_tests(&y, &design, &cfg, None).unwrap();
    for reps in &mut per {
        for r in reps {
            r.p_value = 1.0;
        }
    }
    assert!(combine_union(&per).unwrap().iter().all(|r| r.p_value == 1.0));
    for reps in &mut per {
        reps[0].p_value = 0.01;
    }
    assert!((combine_union(&per).unwrap()[0].p_value - 0.03).abs() < 1e-15);
}

#[test]
fn adjusted_p_values_dominate_raw() {
    let (y, design) = instance(21, 80, &[3, 3, 3, 3], 2, true);
    let a = analyze(&y, &design, &PipelineConfig::default(), None).unwrap();
    for r in &a.reports {
        assert!(r.p_adjusted >= r.p_value);
        assert!(r.t_stat >= 0.0 && r.df >= 1);
        assert!((0.0..=1.0).contains(&r.p_value));
    }
    assert!(a.reports[0].p_value < 1e-6);
}

#[test]
fn posthoc_preset_restricts_to_screened_groups() {
    let (y, design) = instance(22, 80, &[3, 3, 3], 2, false);
    let rep = subviews::inference::screen_then_posthoc(&y, &design, &PipelineConfig::default()).unwrap();
    assert_eq!(rep.screened, vec![0]);
    assert_eq!(rep.posthoc.len(), 2);
    assert!(rep.posthoc.iter().all(|t| t.k == 0 && t.p_adjusted >= t.p_value));
}

#[test]
fn null_rejection_rate_setting_one_shape() {
    let mut spec = SimDesignSpec::normal1(1.0, 0.0, Correlation::AmongGroup);
    spec.true_ranks = vec![0; 5];
    spec.seed = 2024;
    let mut run = RunConfig::new(100, 0.05);
    run.union = false;
    let (summary, _) = run_replications_detailed(&spec, &run).unwrap();
    assert_eq!(summary.reps_completed, 100);
    let overall = summary.rejection_multi.iter().sum::<f64>() / 5.0;
    assert!((0.02..=0.10).contains(&overall), "{:?}", summary.rejection_multi);
}

#[test]
fn debiasing_moves_toward_the_truth_at_unit_snr() {
    let (mut spec, run) = preset("table1-s1", 5).unwrap();
    spec.snr = 1.0;
    let mut better = 0;
    let reps = 100;
    for rep in 0..reps {
        let data = subviews::simgen::gen_replication(&spec, rep, None).unwrap();
        let design = &data.truth.design;
        let fit = tuned_fit(&data.y, design, &run.pipeline).unwrap().0;
        let sp = scores(design, spec.q, 1.0).swap_remove(0);
        let d = debias(&fit, &sp, &data.y, design).unwrap();
        let truth = &data.truth.b_true[0];
        if (d.b_debiased.unwrap() - truth).norm() < (&fit.b_blocks[0] - truth).norm() {
            better += 1;
        }
    }
    assert!(better * 2 > reps, "{better} of {reps}");
}

#[test]
fn others_block_concatenation_helper_agrees() {
    // Guards the fixture used above: concat of blocks equals the full design.
    let (_, design) = instance(23, 10, &[2, 3], 1, false);
    assert_eq!(concat_columns(design.x_blocks()), design.concatenated());
}
