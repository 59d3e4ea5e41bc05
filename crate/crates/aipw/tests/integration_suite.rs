//! Cross-module integration checks: oracle nuisance passthrough into the
//! estimators, ATE behaviour under a null process, bootstrap agreement with
//! the plug-in standard error, fold-inheriting bootstrap over a cross-fitted
//! pipeline, and shrinking adaptive-regressor error on noiseless data.

use aipw::nuisance::{OutcomeMethod, PropensityMethod};
use aipw::{
    assign_folds, bootstrap_se, cross_fit, cross_fit_with_folds, draw_dataset, estimate_apo,
    estimate_ate, fit_adaptive_regressor, predict_adaptive, Dataset, DemeanMode, DgpConfig,
    Observation, SplitRng, ThresholdSpec,
};

/// Strict-overlap synthetic data with known propensity and outcome mean:
/// e(x) = 0.3 + 0.4x, mu(x) = sin(2 pi x), outcomes observed for all rows.
fn strict_overlap_data(n: usize, seed: u64) -> (Dataset, Vec<f64>, Vec<f64>) {
    let mut rng = SplitRng::new(seed);
    let mut obs = Vec::with_capacity(n);
    let mut e = Vec::with_capacity(n);
    let mut mu = Vec::with_capacity(n);
    for _ in 0..n {
        let x = rng.open_uniform();
        let ex = 0.3 + 0.4 * x;
        let mux = (2.0 * std::f64::consts::PI * x).sin();
        let d = u8::from(rng.bernoulli(ex));
        let y = mux + 0.5 * rng.standard_normal();
        obs.push(Observation { d, y, x: vec![x] });
        e.push(ex);
        mu.push(mux);
    }
    (Dataset::new(obs, 1).unwrap(), e, mu)
}

#[test]
fn oracle_passthrough_reproduces_annotated_estimates_exactly() {
    let config = DgpConfig::new(1.8, 2.0, DemeanMode::ApoZero).unwrap();
    let data = draw_dataset(&config, 400, 17).unwrap();
    let fit = cross_fit(
        &data,
        5,
        &PropensityMethod::TruePropensity,
        &OutcomeMethod::TrueOutcomeMean,
        99,
    )
    .unwrap();

    let spec = ThresholdSpec::clip(0.1).unwrap();
    let via_fit = estimate_apo(&data, &fit.e_hat, &fit.mu_hat, &spec).unwrap();
    let direct = estimate_apo(
        &data,
        data.true_propensity().unwrap(),
        data.true_outcome_mean().unwrap(),
        &spec,
    )
    .unwrap();
    assert_eq!(via_fit.psi_hat.to_bits(), direct.psi_hat.to_bits());
    assert_eq!(via_fit.sigma_hat.to_bits(), direct.sigma_hat.to_bits());
    assert_eq!(via_fit.n_thresholded, direct.n_thresholded);
}

#[test]
fn ate_is_null_when_outcome_ignores_treatment() {
    let n = 4000;
    let mut rng = SplitRng::new(3);
    let mut obs = Vec::with_capacity(n);
    let mut mu = Vec::with_capacity(n);
    for _ in 0..n {
        let x = rng.open_uniform();
        let d = u8::from(rng.bernoulli(0.5));
        let y = (x - 0.5) + 0.3 * rng.standard_normal();
        obs.push(Observation { d, y, x: vec![x] });
        mu.push(x - 0.5);
    }
    let data = Dataset::new(obs, 1).unwrap();
    let e = vec![0.5; n];

    let spec = ThresholdSpec::none();
    let est = estimate_ate(&data, &e, &mu, &mu, &spec).unwrap();
    assert!(
        est.ate.abs() <= 3.0 * est.se,
        "null ATE {} exceeds 3 x {}",
        est.ate,
        est.se
    );
    // The difference is definitionally the two arm estimates.
    assert_eq!(est.ate.to_bits(), (est.arm1.psi_hat - est.arm0.psi_hat).to_bits());

    // No thresholding and clipping at zero give identical results.
    let clip0 = estimate_ate(&data, &e, &mu, &mu, &ThresholdSpec::clip(0.0).unwrap()).unwrap();
    assert_eq!(est.ate.to_bits(), clip0.ate.to_bits());
    assert_eq!(est.se.to_bits(), clip0.se.to_bits());
}

#[test]
fn bootstrap_se_tracks_plugin_se_under_strict_overlap() {
    let (data, e, mu) = strict_overlap_data(2000, 8);
    let spec = ThresholdSpec::none();
    let plugin = estimate_apo(&data, &e, &mu, &spec).unwrap();

    let summary = bootstrap_se(
        &data,
        |sample: &Dataset, idx: &[usize]| {
            let e_s: Vec<f64> = idx.iter().map(|&i| e[i]).collect();
            let mu_s: Vec<f64> = idx.iter().map(|&i| mu[i]).collect();
            estimate_apo(sample, &e_s, &mu_s, &spec).map(|est| est.psi_hat)
        },
        400,
        555,
    )
    .unwrap();

    assert_eq!(summary.replicates_used, 400);
    assert_eq!(summary.replicates_skipped, 0);
    let ratio = summary.se / plugin.sigma_hat;
    assert!(
        (0.75..=1.25).contains(&ratio),
        "bootstrap SE {} vs plug-in {} (ratio {ratio})",
        summary.se,
        plugin.sigma_hat
    );
}

#[test]
fn bootstrap_over_cross_fitted_pipeline_inherits_folds_deterministically() {
    let (data, _, _) = strict_overlap_data(300, 21);
    let folds = assign_folds(data.len(), 5, 77).unwrap();
    let spec = ThresholdSpec::clip(0.05).unwrap();

    let run = || {
        bootstrap_se(
            &data,
            |sample: &Dataset, idx: &[usize]| {
                // Fold labels are inherited from each draw's source row, so
                // the fold structure is frozen across replicates.
                let labels: Vec<usize> = idx.iter().map(|&i| folds.fold_of()[i]).collect();
                let resampled_folds = aipw::FoldAssignment::from_labels(labels, folds.k())?;
                let fit = cross_fit_with_folds(
                    sample,
                    &resampled_folds,
                    &PropensityMethod::LogisticIrls,
                    &OutcomeMethod::LocalLinear {
                        bandwidth: aipw::BandwidthSpec::InverseFifthRoot,
                        kernel: aipw::KernelSpec::Gaussian,
                    },
                )?;
                estimate_apo(sample, &fit.e_hat, &fit.mu_hat, &spec).map(|est| est.psi_hat)
            },
            60,
            999,
        )
        .unwrap()
    };
    let first = run();
    let second = run();
    assert_eq!(first.se.to_bits(), second.se.to_bits());
    assert_eq!(first.replicates_used, second.replicates_used);
    assert_eq!(first.replicates_skipped, second.replicates_skipped);
    assert!(first.replicates_used >= 48, "too many skips: {:?}", first);
    assert!(first.se > 0.0);
}

#[test]
fn adaptive_regressor_error_shrinks_on_noiseless_data() {
    // Noiseless smooth target fitted at growing sample sizes: the sup error
    // over a fixed grid, summarized by the median over seeds, must fall.
    let target = |x: f64| 0.5 * (2.0 * std::f64::consts::PI * x).sin();
    let grid: Vec<f64> = (0..200).map(|j| j as f64 / 199.0).collect();
    let seeds = 7;
    let mut medians = Vec::new();
    for &n in &[1000usize, 4000, 16000, 64000] {
        let mut errors = Vec::with_capacity(seeds);
        for s in 0..seeds {
            let mut rng = SplitRng::derive(1234, (n as u64) << 8 | s as u64);
            let obs: Vec<Observation> = (0..n)
                .map(|_| {
                    let x = rng.open_uniform();
                    Observation { d: 1, y: target(x), x: vec![x] }
                })
                .collect();
            let data = Dataset::new(obs, 1).unwrap();
            let fit = fit_adaptive_regressor(&data, 1.0).unwrap();
            let sup = grid
                .iter()
                .map(|&x| (predict_adaptive(&fit, &[x]) - target(x)).abs())
                .fold(0.0f64, f64::max);
            errors.push(sup);
        }
        errors.sort_by(|a, b| a.partial_cmp(b).unwrap());
        medians.push(errors[seeds / 2]);
    }
    for w in medians.windows(2) {
        assert!(
            w[1] < w[0],
            "sup-error medians not decreasing: {medians:?}"
        );
    }
}
