use cellsbi_core::{
    stats, BoundTransform, Counting, GaussianToy, Prior, SeedStream, SimError, Simulator, SummaryModel, SummaryVector,
    ToySummary,
};
use cellsbi_inference::bsl::{
    estimate_synthetic_loglik, proposal_from_population, run_bsl_mcmc, tune_m, write_chain_csv, write_m_table_csv,
    BslError,
};
use cellsbi_inference::mcmc::batch_means_se;
use cellsbi_inference::{BslConfig, Robust};

fn observed(model: &GaussianToy, theta: f64, seed: u64) -> Vec<f64> {
    model.simulate_summary(&[theta], SeedStream::new(seed)).unwrap().into_inner()
}

/// Closed-form posterior mean for a flat prior on a wide box: the observed
/// sample mean, up to truncation that is negligible ~100 sd from the edges.
fn conjugate_mean(ybar: f64) -> f64 {
    ybar
}

fn quantile(xs: &[f64], p: f64) -> f64 {
    stats::quantile(xs, p)
}

#[test]
fn conjugate_toy_posterior_mean() {
    let model = Counting::new(GaussianToy::standard(ToySummary::Mean));
    let y = observed(model.inner(), 1.5, 42);
    let config = BslConfig {
        n_iter: 4000,
        burn_in: 500,
        m: 50,
        theta0: Some(vec![1.0]),
        ..Default::default()
    };
    let chain = run_bsl_mcmc(&model, &y, &config, Robust::None, SeedStream::new(1)).unwrap();
    let xs = chain.theta_column(0);
    let mean = stats::mean(&xs);
    let se = batch_means_se(&xs);
    println!("bsl mean {mean} target {} se {se} acc {}", conjugate_mean(y[0]), chain.acceptance_rate);
    assert!((mean - conjugate_mean(y[0])).abs() < 3.0 * se);
    // posterior sd close to 1/sqrt(n) = 0.1
    let sd = stats::std_dev(&xs);
    assert!((0.07..0.14).contains(&sd), "sd {sd}");
    assert_eq!(chain.total_simulations, model.count());
    assert!(chain.gamma.iter().all(Vec::is_empty));
    assert_eq!(chain.len(), 4000);
}

#[test]
fn chain_is_reproducible_and_csv_shaped() {
    let model = GaussianToy::standard(ToySummary::MeanVar);
    let y = observed(&model, 0.0, 3);
    let config = BslConfig {
        n_iter: 50,
        m: 20,
        theta0: Some(vec![0.0]),
        proposal_cov: Some(vec![vec![1e-4]]),
        ..Default::default()
    };
    let a = run_bsl_mcmc(&model, &y, &config, Robust::MeanAdjust, SeedStream::new(9)).unwrap();
    let b = run_bsl_mcmc(&model, &y, &config, Robust::MeanAdjust, SeedStream::new(9)).unwrap();
    assert_eq!(a.theta, b.theta);
    assert_eq!(a.gamma, b.gamma);
    let mut buf = Vec::new();
    write_chain_csv(&mut buf, &a).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("iter,theta_0,gamma_0,gamma_1,loglik,accepted\n"));
    assert_eq!(text.lines().count(), 51);
}

#[test]
fn pseudo_marginal_reuses_current_estimate() {
    // After a rejection the stored estimate is reused, so the recorded
    // log-likelihood repeats exactly. Refreshing redraws it every iteration.
    let model = Counting::new(GaussianToy::standard(ToySummary::MeanVar));
    let y = observed(model.inner(), 0.0, 3);
    let base = BslConfig {
        n_iter: 200,
        m: 20,
        theta0: Some(vec![0.0]),
        proposal_cov: Some(vec![vec![1e-3]]),
        ..Default::default()
    };
    let fixed = run_bsl_mcmc(&model, &y, &base, Robust::None, SeedStream::new(2)).unwrap();
    let mut rejections = 0;
    for i in 1..fixed.len() {
        if !fixed.accepted[i] {
            rejections += 1;
            assert_eq!(fixed.loglik[i], fixed.loglik[i - 1]);
        }
    }
    assert!(rejections > 10);
    let refreshed = BslConfig {
        refresh_current: true,
        ..base
    };
    let before = model.count();
    let r = run_bsl_mcmc(&model, &y, &refreshed, Robust::None, SeedStream::new(2)).unwrap();
    let repeats = (1..r.len()).filter(|&i| !r.accepted[i] && r.loglik[i] == r.loglik[i - 1]).count();
    assert_eq!(repeats, 0);
    // initial estimate, then one refresh and one proposal estimate per iteration
    assert_eq!(r.total_simulations, 20 * (1 + 2 * 200));
    assert_eq!(model.count() - before, r.total_simulations);
}

#[test]
fn rejects_bad_inputs() {
    let model = GaussianToy::standard(ToySummary::Mean);
    let cfg = BslConfig {
        theta0: Some(vec![20.0]),
        ..Default::default()
    };
    assert!(matches!(
        run_bsl_mcmc(&model, &[0.0], &cfg, Robust::None, SeedStream::new(1)),
        Err(BslError::InitialOutsideSupport)
    ));
    assert!(matches!(
        run_bsl_mcmc(&model, &[0.0, 1.0], &BslConfig::default(), Robust::None, SeedStream::new(1)),
        Err(BslError::ObservedDimension { .. })
    ));
}

struct Constant(Prior);

impl Simulator for Constant {
    type Output = ();
    fn prior(&self) -> &Prior {
        &self.0
    }
    fn summary_dim(&self) -> usize {
        1
    }
    fn simulate(&self, _: &[f64], _: SeedStream) -> Result<(), SimError> {
        Ok(())
    }
    fn summarize(&self, _: &()) -> Result<SummaryVector, SimError> {
        Ok(SummaryVector::new(vec![0.5]).unwrap())
    }
}

#[test]
fn deterministic_simulator_is_singular_everywhere() {
    let model = Constant(Prior::uniform_box(&[(-1.0, 1.0)]).unwrap());
    let err = estimate_synthetic_loglik(&model, &[0.0], 10, &[0.0], SeedStream::new(1), 0).unwrap_err();
    assert!(matches!(err, BslError::Singular));
    let err = tune_m(&model, &[0.0], &[0.0], &[5, 10], 5, SeedStream::new(1), 0).unwrap_err();
    assert!(matches!(err, BslError::AllSingular));
}

#[test]
fn estimator_error_shrinks_at_root_m_rate() {
    // d = 2 summaries (mean, variance) at theta = 0: mean error of the
    // mean estimate should fall like m^-1/2.
    let model = GaussianToy::new(10, 1.0, (-5.0, 5.0), ToySummary::MeanVar);
    let truth = [0.0, 1.0];
    let ms = [100usize, 1000, 10_000];
    let reps = 20;
    let mut log_err = Vec::new();
    for (k, &m) in ms.iter().enumerate() {
        let mut e = 0.0;
        for r in 0..reps {
            let (est, _) =
                estimate_synthetic_loglik(&model, &[0.0], m, &truth, SeedStream::new(100 + k as u64).child(r), 0).unwrap();
            e += est.mu_hat.iter().zip(&truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        }
        log_err.push((e / reps as f64).ln());
    }
    let x: Vec<f64> = ms.iter().map(|&m| (m as f64).ln()).collect();
    let xm = stats::mean(&x);
    let ym = stats::mean(&log_err);
    let slope = x.iter().zip(&log_err).map(|(a, b)| (a - xm) * (b - ym)).sum::<f64>()
        / x.iter().map(|a| (a - xm).powi(2)).sum::<f64>();
    println!("slope {slope}");
    assert!((-0.6..=-0.4).contains(&slope), "slope {slope}");
}

#[test]
fn m_tuning_selects_band_and_table_decreases() {
    let model = GaussianToy::standard(ToySummary::MeanVar);
    let y = observed(&model, 2.0, 17);
    let cands = [4, 5, 6, 8, 10, 15, 20, 30, 50, 100];
    let tuning = tune_m(&model, &[2.0], &y, &cands, 60, SeedStream::new(5), 0).unwrap();
    for r in &tuning.table {
        println!("m {} std {} valid {}", r.m, r.std_loglik, r.n_valid);
    }
    assert!(!tuning.warning);
    let row = tuning.table.iter().find(|r| r.m == tuning.selected).unwrap();
    assert!((1.0..=2.0).contains(&row.std_loglik));
    // smaller candidates all sit above the band
    for r in tuning.table.iter().filter(|r| r.m < tuning.selected) {
        assert!(!(1.0..=2.0).contains(&r.std_loglik));
    }
    // on average non-increasing: the second half is below the first half
    let stds: Vec<f64> = tuning.table.iter().map(|r| r.std_loglik).collect();
    let half = stds.len() / 2;
    assert!(stats::mean(&stds[half..]) < stats::mean(&stds[..half]));
    assert!(stds.last().unwrap() < stds.first().unwrap());

    let mut buf = Vec::new();
    write_m_table_csv(&mut buf, &tuning).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("m,std_loglik,n_valid,selected\n"));
    assert_eq!(text.lines().filter(|l| l.ends_with(",1")).count(), 1);
}

fn robust_run(y: &[f64], seed: u64) -> cellsbi_inference::BslChain {
    let model = GaussianToy::standard(ToySummary::MeanVar);
    let config = BslConfig {
        n_iter: 3000,
        burn_in: 500,
        m: 30,
        theta0: Some(vec![y[0]]),
        ..Default::default()
    };
    run_bsl_mcmc(&model, y, &config, Robust::MeanAdjust, SeedStream::new(seed)).unwrap()
}

#[test]
fn mean_adjustment_flags_injected_incompatibility() {
    let model = GaussianToy::standard(ToySummary::MeanVar);
    let y = observed(&model, 1.0, 77);
    let compatible = robust_run(&y, 4);
    let scale = 0.5;
    for k in 0..2 {
        let g = compatible.gamma_column(k);
        let med = stats::median(&g);
        println!("compatible gamma_{k} median {med} ci [{}, {}]", quantile(&g, 0.025), quantile(&g, 0.975));
        // Laplace(0, b) has sd b*sqrt(2)
        assert!(med.abs() < scale * 2f64.sqrt());
        assert!(quantile(&g, 0.025) < 0.0 && quantile(&g, 0.975) > 0.0);
    }

    // shift the variance summary by five of its sampling standard deviations
    let sd_var = (2.0f64 / 99.0).sqrt();
    let mut shifted = y.clone();
    shifted[1] += 5.0 * sd_var;
    let bad = robust_run(&shifted, 4);
    let g1 = bad.gamma_column(1);
    let med = stats::median(&g1);
    println!("incompatible gamma_1 median {med}");
    assert!(med.abs() > 2.0 * scale);

    let t_ok = compatible.theta_column(0);
    let t_bad = bad.theta_column(0);
    let (lo_a, hi_a) = (quantile(&t_ok, 0.025), quantile(&t_ok, 0.975));
    let (lo_b, hi_b) = (quantile(&t_bad, 0.025), quantile(&t_bad, 0.975));
    assert!(lo_a < hi_b && lo_b < hi_a, "theta CIs do not overlap");
}

#[test]
fn variance_adjustment_runs_and_keeps_gamma_near_zero_when_compatible() {
    let model = GaussianToy::standard(ToySummary::MeanVar);
    let y = observed(&model, -2.0, 8);
    let config = BslConfig {
        n_iter: 1500,
        burn_in: 300,
        m: 30,
        theta0: Some(vec![y[0]]),
        ..Default::default()
    };
    let chain = run_bsl_mcmc(&model, &y, &config, Robust::VarianceAdjust, SeedStream::new(3)).unwrap();
    for k in 0..2 {
        let g = chain.gamma_column(k);
        assert!(quantile(&g, 0.025) < 0.0 && quantile(&g, 0.975) > 0.0);
    }
    let t = chain.theta_column(0);
    assert!((stats::mean(&t) - y[0]).abs() < 0.1);
}

#[test]
fn proposal_from_population_scales_covariance() {
    let prior = Prior::uniform_box(&[(0.0, 1.0), (0.0, 1.0)]).unwrap();
    let tr = BoundTransform::from_prior(&prior);
    let pts: Vec<Vec<f64>> = (0..200)
        .map(|i| {
            let u = (i as f64 + 0.5) / 200.0;
            vec![0.25 + 0.5 * u, 0.5]
        })
        .collect();
    let cov = proposal_from_population(&pts, &tr).unwrap();
    assert!(cov[0][0] > 0.0);
    assert!(cov[1][1].abs() < 1e-20);
}
