//! Synthetic data generation with a polynomial propensity tail, the Monte
//! Carlo calibration harness, the regression-rate experiment, and the
//! inductive bandwidth/grouping sequence.

use serde::Serialize;

use crate::data::Dataset;
use crate::data::Observation;
use crate::error::{Error, Result};
use crate::estimators::{
    estimate_apo, estimate_apo_ipw, two_sided_pvalue, ThresholdMode, ThresholdProvenance,
    ThresholdSpec,
};
use crate::nuisance::{
    cross_fit, fit_adaptive_regressor, predict_adaptive, BandwidthSpec, KernelSpec,
    OutcomeMethod, PropensityMethod,
};
use crate::parallel::{self, MapStrategy};
use crate::rng::SplitRng;
use crate::stats::{ks_statistic, ks_uniform_pvalue, normal_cdf};
use crate::threshold::{rule_of_thumb_threshold, RateBound};

// ---------------------------------------------------------------------------
// Data-generating process
// ---------------------------------------------------------------------------

/// How the outcome signal is demeaned.
///
/// The generated outcome is `D*(kappa*(1-e(X)) + noise - c)`; the two modes
/// differ in the constant `c` and therefore in the true average potential
/// outcome, which is analytically known either way.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DemeanMode {
    /// `c = kappa * E[1 - e(X)]`: the average potential outcome is exactly 0.
    ApoZero,
    /// `c = kappa * E[e(X)(1 - e(X))]`: centers by the mean of the observed
    /// treated signal instead; the average potential outcome is nonzero.
    SignalMean,
}

/// Configuration of the synthetic data-generating process: covariate
/// `X ~ U(0,1)`, propensity `e(X) = X^{1/(gamma0-1)}` (so
/// `P(e(X) <= t) = t^{gamma0-1}`), treatment `D ~ Bernoulli(e(X))`, and
/// treated outcome `kappa*(1-e(X)) - c` plus standardized chi-squared(4)
/// noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DgpConfig {
    gamma0: f64,
    kappa: f64,
    demean: DemeanMode,
}

impl DgpConfig {
    pub fn new(gamma0: f64, kappa: f64, demean: DemeanMode) -> Result<Self> {
        if !(gamma0 > 1.0) || !gamma0.is_finite() {
            return Err(Error::InvalidInput(format!(
                "tail order gamma0 must exceed 1, got {gamma0}"
            )));
        }
        if !kappa.is_finite() {
            return Err(Error::InvalidInput(format!("signal scale must be finite, got {kappa}")));
        }
        Ok(DgpConfig { gamma0, kappa, demean })
    }

    pub fn gamma0(&self) -> f64 {
        self.gamma0
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn demean(&self) -> DemeanMode {
        self.demean
    }

    /// `E[e(X)^k] = (gamma0 - 1) / (gamma0 - 1 + k)`.
    pub fn e_moment(&self, k: u32) -> f64 {
        let g = self.gamma0 - 1.0;
        g / (g + f64::from(k))
    }

    /// `E[e(X)] = E[D]`: the population treated fraction.
    pub fn mean_propensity(&self) -> f64 {
        self.e_moment(1)
    }

    /// The centering constant subtracted from the treated outcome signal.
    pub fn demean_constant(&self) -> f64 {
        match self.demean {
            DemeanMode::ApoZero => self.kappa * (1.0 - self.e_moment(1)),
            DemeanMode::SignalMean => self.kappa * (self.e_moment(1) - self.e_moment(2)),
        }
    }

    /// The propensity at covariate value `x`.
    pub fn propensity(&self, x: f64) -> f64 {
        x.powf(1.0 / (self.gamma0 - 1.0))
    }

    /// Conditional mean of the treated outcome given propensity `e`.
    pub fn true_outcome_mean(&self, e: f64) -> f64 {
        self.kappa * (1.0 - e) - self.demean_constant()
    }
}

/// The analytic average potential outcome under treatment for this process.
pub fn true_apo(config: &DgpConfig) -> f64 {
    match config.demean {
        DemeanMode::ApoZero => 0.0,
        DemeanMode::SignalMean => {
            let e1 = config.e_moment(1);
            let e2 = config.e_moment(2);
            config.kappa * (1.0 - e1 - (e1 - e2))
        }
    }
}

/// Draws a synthetic dataset of size `n` with true propensity and true
/// outcome-mean annotations attached. Deterministic given the seed. Outcomes
/// of control observations are stored as 0 (only the treated product
/// `D * Y` is ever defined by this process).
pub fn draw_dataset(config: &DgpConfig, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidInput("need at least one observation".into()));
    }
    let mut rng = SplitRng::new(seed);
    let c = config.demean_constant();
    let inv_root8 = 8.0f64.sqrt().recip();
    let mut observations = Vec::with_capacity(n);
    let mut propensities = Vec::with_capacity(n);
    let mut outcome_means = Vec::with_capacity(n);
    for _ in 0..n {
        let x = rng.open_uniform();
        let e = config.propensity(x);
        let d = u8::from(rng.bernoulli(e));
        // The noise draw always happens, so one observation's values never
        // depend on another observation's treatment status.
        let eps = rng.chi_squared(4);
        let y = if d == 1 {
            config.kappa * (1.0 - e) + (eps - 4.0) * inv_root8 - c
        } else {
            0.0
        };
        observations.push(Observation { d, y, x: vec![x] });
        propensities.push(e);
        outcome_means.push(config.kappa * (1.0 - e) - c);
    }
    Dataset::new(observations, 1)?
        .with_true_propensity(propensities)?
        .with_true_outcome_mean(outcome_means)
}

// ---------------------------------------------------------------------------
// Monte Carlo harness
// ---------------------------------------------------------------------------

/// The point estimator family to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    /// Doubly robust: regression prediction plus inverse-weighted residual.
    Aipw,
    /// Inverse propensity weighting only.
    Ipw,
}

/// One estimator requested from the Monte Carlo run: a family and a
/// thresholding mode (the threshold value itself comes from the run's
/// threshold rule).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EstimatorSpec {
    pub kind: EstimatorKind,
    pub mode: ThresholdMode,
}

impl EstimatorSpec {
    /// Stable label used in reports and CSV output.
    pub fn label(&self) -> &'static str {
        match (self.kind, self.mode) {
            (EstimatorKind::Aipw, ThresholdMode::None) => "aipw",
            (EstimatorKind::Aipw, ThresholdMode::Clip) => "clipped-aipw",
            (EstimatorKind::Aipw, ThresholdMode::Trim) => "trimmed-aipw",
            (EstimatorKind::Ipw, ThresholdMode::None) => "ipw",
            (EstimatorKind::Ipw, ThresholdMode::Clip) => "clipped-ipw",
            (EstimatorKind::Ipw, ThresholdMode::Trim) => "trimmed-ipw",
        }
    }

    fn threshold_spec(&self, b: f64, provenance: ThresholdProvenance) -> Result<ThresholdSpec> {
        Ok(match self.mode {
            ThresholdMode::None => ThresholdSpec::none(),
            ThresholdMode::Clip => ThresholdSpec::clip(b)?.with_provenance(provenance),
            ThresholdMode::Trim => ThresholdSpec::trim(b)?.with_provenance(provenance),
        })
    }
}

/// Where each replication's nuisance predictions come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NuisanceSource {
    /// True propensity and outcome-mean annotations, no fitting.
    Oracle,
    /// 5-fold-style cross-fitting: logistic propensity on (1, X) and
    /// gaussian-kernel local-linear outcome regression with bandwidth
    /// n^{-1/5}.
    Estimated,
    /// True outcome mean, cross-fitted logistic propensity.
    OracleOutcome,
    /// True propensity, cross-fitted gaussian-kernel local-linear outcome
    /// regression.
    OraclePropensity,
}

/// How the threshold for clip/trim estimators is chosen each replication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdRule {
    /// Use this value in every replication.
    Fixed(f64),
    /// Select per replication from the treatments and propensity
    /// predictions by the error-bound crossing rule, supplying the
    /// `n^{-1/5}` outcome-rate bound the default outcome regression
    /// targets (no propensity bound).
    RuleOfThumb,
}

/// The outcome-regression rate bound fed to the error-bound crossing rule:
/// `n^{-1/5}`, the same scale the default local-linear bandwidth targets.
const OUTCOME_RATE_BOUND: RateBound = RateBound::PowerLaw { scale: 1.0, exponent: 0.2 };

/// Full specification of a Monte Carlo run.
#[derive(Debug, Clone, Serialize)]
pub struct MonteCarloSettings {
    pub config: DgpConfig,
    pub n: usize,
    pub reps: usize,
    pub estimators: Vec<EstimatorSpec>,
    pub nuisance: NuisanceSource,
    /// Cross-fitting folds (used by every nuisance source except `Oracle`).
    pub folds: usize,
    pub threshold: ThresholdRule,
    /// Nominal test level for rejection-rate aggregation.
    pub alpha: f64,
    pub master_seed: u64,
}

/// One estimator's results in one replication.
#[derive(Debug, Clone, Serialize)]
pub struct ReplicationRow {
    pub rep: usize,
    pub estimator: &'static str,
    pub n: usize,
    /// Threshold applied (0 for non-thresholded estimators).
    pub b: f64,
    pub psi_hat: f64,
    pub sigma_hat: f64,
    /// `(psi_hat - true value) / sigma_hat`.
    pub t: f64,
    /// Two-sided p-value against the true value.
    pub p: f64,
}

/// Aggregates for one estimator over the usable replications.
#[derive(Debug, Clone, Serialize)]
pub struct EstimatorAggregate {
    pub estimator: &'static str,
    pub replications: usize,
    /// Mean of `psi_hat` minus the true value.
    pub mean_bias: f64,
    pub rmse: f64,
    /// Fraction of replications with `p < alpha`.
    pub rejection_rate: f64,
    /// Binomial Monte Carlo standard error of the rejection rate.
    pub rejection_mc_se: f64,
    /// Kolmogorov–Smirnov distance of the p-values from Uniform(0, 1).
    pub ks_pvalues_stat: f64,
    pub ks_pvalues_pvalue: f64,
    /// Kolmogorov–Smirnov distance of the t-statistics from standard normal.
    pub ks_tstats_stat: f64,
    pub ks_tstats_pvalue: f64,
}

/// Results of a Monte Carlo run: the settings echo, per-replication rows,
/// and per-estimator aggregates (exactly recomputable from the rows).
#[derive(Debug, Clone, Serialize)]
pub struct MonteCarloReport {
    pub schema_version: u32,
    pub config: DgpConfig,
    pub n: usize,
    pub reps_requested: usize,
    pub reps_used: usize,
    /// Replications excluded because any estimator in them failed.
    pub failures: usize,
    pub alpha: f64,
    pub master_seed: u64,
    pub nuisance: NuisanceSource,
    pub threshold_rule: ThresholdRule,
    pub folds: usize,
    pub true_apo: f64,
    pub estimators: Vec<EstimatorAggregate>,
    pub replications: Vec<ReplicationRow>,
}

impl MonteCarloReport {
    /// Tidy CSV of the per-replication rows:
    /// `rep,estimator,n,b,psi_hat,sigma_hat,t,p`.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("rep,estimator,n,b,psi_hat,sigma_hat,t,p\n");
        for row in &self.replications {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                row.rep, row.estimator, row.n, row.b, row.psi_hat, row.sigma_hat, row.t, row.p
            ));
        }
        out
    }
}

fn validate_settings(settings: &MonteCarloSettings) -> Result<()> {
    if settings.reps < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 replications, got {}",
            settings.reps
        )));
    }
    if settings.n < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 observations per replication, got {}",
            settings.n
        )));
    }
    if settings.estimators.is_empty() {
        return Err(Error::InvalidInput("no estimators requested".into()));
    }
    if !settings.alpha.is_finite() || !(settings.alpha > 0.0 && settings.alpha < 0.5) {
        return Err(Error::InvalidInput(format!(
            "test level alpha must lie in (0, 0.5), got {}",
            settings.alpha
        )));
    }
    if let ThresholdRule::Fixed(b) = settings.threshold {
        if !b.is_finite() || !(0.0..1.0).contains(&b) {
            return Err(Error::InvalidInput(format!(
                "fixed threshold must lie in [0, 1), got {b}"
            )));
        }
    }
    if settings.nuisance != NuisanceSource::Oracle {
        if settings.folds < 2 {
            return Err(Error::InvalidInput(format!(
                "cross-fitting needs at least 2 folds, got {}",
                settings.folds
            )));
        }
        if settings.folds > settings.n {
            return Err(Error::InvalidInput(format!(
                "cannot split {} observations into {} folds",
                settings.n, settings.folds
            )));
        }
    }
    Ok(())
}

fn replication_rows(
    settings: &MonteCarloSettings,
    psi0: f64,
    rep: usize,
) -> Result<Vec<ReplicationRow>> {
    let mut seeds = SplitRng::derive(settings.master_seed, rep as u64);
    let data_seed = seeds.next_u64();
    let fit_seed = seeds.next_u64();
    let data = draw_dataset(&settings.config, settings.n, data_seed)?;

    let local_linear = OutcomeMethod::LocalLinear {
        bandwidth: BandwidthSpec::InverseFifthRoot,
        kernel: KernelSpec::Gaussian,
    };
    let (e_hat, mu_hat) = match settings.nuisance {
        NuisanceSource::Oracle => (
            data.true_propensity().expect("annotated by draw_dataset").to_vec(),
            data.true_outcome_mean().expect("annotated by draw_dataset").to_vec(),
        ),
        NuisanceSource::Estimated => {
            let fit = cross_fit(
                &data,
                settings.folds,
                &PropensityMethod::LogisticIrls,
                &local_linear,
                fit_seed,
            )?;
            (fit.e_hat, fit.mu_hat)
        }
        NuisanceSource::OracleOutcome => {
            let fit = cross_fit(
                &data,
                settings.folds,
                &PropensityMethod::LogisticIrls,
                &OutcomeMethod::TrueOutcomeMean,
                fit_seed,
            )?;
            (fit.e_hat, fit.mu_hat)
        }
        NuisanceSource::OraclePropensity => {
            let fit = cross_fit(
                &data,
                settings.folds,
                &PropensityMethod::TruePropensity,
                &local_linear,
                fit_seed,
            )?;
            (fit.e_hat, fit.mu_hat)
        }
    };

    let (b, provenance) = match settings.threshold {
        ThresholdRule::Fixed(value) => (value, ThresholdProvenance::Fixed),
        ThresholdRule::RuleOfThumb => {
            let pick = rule_of_thumb_threshold(
                &data.treatments(),
                &e_hat,
                Some(&OUTCOME_RATE_BOUND),
                None,
            )?;
            if pick.b >= 1.0 {
                return Err(Error::Degenerate(
                    "selected threshold saturated at 1; the sample has no usable overlap".into(),
                ));
            }
            (pick.b, ThresholdProvenance::RuleOfThumb)
        }
    };

    let mut rows = Vec::with_capacity(settings.estimators.len());
    for spec in &settings.estimators {
        let threshold = spec.threshold_spec(b, provenance)?;
        let est = match spec.kind {
            EstimatorKind::Aipw => estimate_apo(&data, &e_hat, &mu_hat, &threshold)?,
            EstimatorKind::Ipw => estimate_apo_ipw(&data, &e_hat, &threshold)?,
        };
        if est.sigma_hat == 0.0 {
            return Err(Error::Degenerate(format!(
                "estimator {} produced a zero standard deviation",
                spec.label()
            )));
        }
        let t = (est.psi_hat - psi0) / est.sigma_hat;
        if !t.is_finite() {
            return Err(Error::Numerical(format!(
                "estimator {} produced a non-finite t statistic",
                spec.label()
            )));
        }
        let p = two_sided_pvalue(&est, psi0);
        rows.push(ReplicationRow {
            rep,
            estimator: spec.label(),
            n: settings.n,
            b: if spec.mode == ThresholdMode::None { 0.0 } else { b },
            psi_hat: est.psi_hat,
            sigma_hat: est.sigma_hat,
            t,
            p,
        });
    }
    Ok(rows)
}

fn aggregate(label: &'static str, rows: &[&ReplicationRow], psi0: f64, alpha: f64) -> Result<EstimatorAggregate> {
    let m = rows.len();
    let mf = m as f64;
    let mean_psi = rows.iter().map(|r| r.psi_hat).sum::<f64>() / mf;
    let mean_bias = mean_psi - psi0;
    let mse = rows.iter().map(|r| (r.psi_hat - psi0) * (r.psi_hat - psi0)).sum::<f64>() / mf;
    let rejections = rows.iter().filter(|r| r.p < alpha).count();
    let rejection_rate = rejections as f64 / mf;
    let rejection_mc_se = (rejection_rate * (1.0 - rejection_rate) / mf).sqrt();

    let ps: Vec<f64> = rows.iter().map(|r| r.p).collect();
    let ts: Vec<f64> = rows.iter().map(|r| r.t).collect();
    let ks_pvalues_stat = ks_statistic(&ps, |x| x.clamp(0.0, 1.0))?;
    let ks_tstats_stat = ks_statistic(&ts, normal_cdf)?;

    Ok(EstimatorAggregate {
        estimator: label,
        replications: m,
        mean_bias,
        rmse: mse.sqrt(),
        rejection_rate,
        rejection_mc_se,
        ks_pvalues_stat,
        ks_pvalues_pvalue: ks_uniform_pvalue(ks_pvalues_stat, m),
        ks_tstats_stat,
        ks_tstats_pvalue: ks_uniform_pvalue(ks_tstats_stat, m),
    })
}

/// Runs the Monte Carlo experiment with the default map strategy
/// (concurrent replications when the `parallel` feature is enabled).
pub fn run_monte_carlo(settings: &MonteCarloSettings) -> Result<MonteCarloReport> {
    run_monte_carlo_with_strategy(settings, MapStrategy::default())
}

/// Runs the Monte Carlo experiment with an explicit map strategy.
/// Replication `r` derives its own seed from the master seed, so the report
/// is identical across strategies and thread counts. A replication in which
/// any estimator fails is excluded whole and counted; more than 5% failures
/// aborts the run.
pub fn run_monte_carlo_with_strategy(
    settings: &MonteCarloSettings,
    strategy: MapStrategy,
) -> Result<MonteCarloReport> {
    validate_settings(settings)?;
    let psi0 = true_apo(&settings.config);

    let per_rep = parallel::indexed_map(strategy, settings.reps, |rep| {
        replication_rows(settings, psi0, rep)
    });

    let mut replications = Vec::with_capacity(settings.reps * settings.estimators.len());
    let mut failures = 0usize;
    for result in per_rep {
        match result {
            Ok(mut rows) => replications.append(&mut rows),
            Err(_) => failures += 1,
        }
    }
    if failures * 20 > settings.reps {
        return Err(Error::Degenerate(format!(
            "{failures} of {} replications failed (more than 5%)",
            settings.reps
        )));
    }

    let mut estimators = Vec::with_capacity(settings.estimators.len());
    for spec in &settings.estimators {
        let label = spec.label();
        let rows: Vec<&ReplicationRow> =
            replications.iter().filter(|r| r.estimator == label).collect();
        estimators.push(aggregate(label, &rows, psi0, settings.alpha)?);
    }

    Ok(MonteCarloReport {
        schema_version: 1,
        config: settings.config,
        n: settings.n,
        reps_requested: settings.reps,
        reps_used: settings.reps - failures,
        failures,
        alpha: settings.alpha,
        master_seed: settings.master_seed,
        nuisance: settings.nuisance,
        threshold_rule: settings.threshold,
        folds: settings.folds,
        true_apo: psi0,
        estimators,
        replications,
    })
}

// ---------------------------------------------------------------------------
// Regression-rate experiment
// ---------------------------------------------------------------------------

/// Results of the adaptive-regressor convergence experiment.
#[derive(Debug, Clone, Serialize)]
pub struct RateExperimentReport {
    pub beta_mu: f64,
    pub gamma0: f64,
    pub ns: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    /// Median (over replications) of the sup-norm error on a 200-point grid,
    /// one entry per sample size.
    pub median_sup_errors: Vec<f64>,
    /// Least-squares slope of log median error on log n; absent when an
    /// error median is zero (degenerate noiseless case).
    pub slope: Option<f64>,
    /// `-beta* / (2 beta* + 1)` with `beta* = beta_mu (1 - 1/gamma0)`: the
    /// exponent this experiment is probing.
    pub theoretical_slope: f64,
}

const RATE_GRID_POINTS: usize = 200;

/// Measures how fast the adaptive outcome regressor converges on synthetic
/// data: for each sample size, draws `reps` datasets (signal scale 2, zero
/// mean), fits the adaptive regressor on the treated subsample, records the
/// sup-norm error against the true outcome mean on a fixed 200-point grid,
/// and regresses the log of the per-size median error on log n.
pub fn rate_experiment(
    beta_mu: f64,
    gamma0: f64,
    ns: &[usize],
    reps: usize,
    seed: u64,
) -> Result<RateExperimentReport> {
    if ns.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "need at least 3 sample sizes, got {}",
            ns.len()
        )));
    }
    if ns.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("sample sizes must be strictly increasing".into()));
    }
    if reps == 0 {
        return Err(Error::InvalidInput("need at least 1 replication".into()));
    }
    let config = DgpConfig::new(gamma0, 2.0, DemeanMode::ApoZero)?;

    let grid: Vec<f64> =
        (0..RATE_GRID_POINTS).map(|j| j as f64 / (RATE_GRID_POINTS - 1) as f64).collect();
    let truth: Vec<f64> =
        grid.iter().map(|&x| config.true_outcome_mean(config.propensity(x))).collect();

    let mut median_sup_errors = Vec::with_capacity(ns.len());
    for (ni, &n) in ns.iter().enumerate() {
        let errors_res = parallel::indexed_map_default(reps, |r| -> Result<f64> {
            let data_seed =
                SplitRng::derive(seed, ((ni as u64) << 32) | r as u64).next_u64();
            let data = draw_dataset(&config, n, data_seed)?;
            let fit = fit_adaptive_regressor(&data, beta_mu)?;
            let sup = grid
                .iter()
                .zip(&truth)
                .map(|(&x, &mu)| (predict_adaptive(&fit, &[x]) - mu).abs())
                .fold(0.0f64, f64::max);
            Ok(sup)
        });
        let mut errors = Vec::with_capacity(reps);
        for e in errors_res {
            errors.push(e?);
        }
        errors.sort_by(|a, b| a.partial_cmp(b).expect("finite errors"));
        let median = if reps % 2 == 1 {
            errors[reps / 2]
        } else {
            0.5 * (errors[reps / 2 - 1] + errors[reps / 2])
        };
        median_sup_errors.push(median);
    }

    let slope = if median_sup_errors.iter().any(|&e| e <= 0.0) {
        None
    } else {
        let lx: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
        let ly: Vec<f64> = median_sup_errors.iter().map(|&e| e.ln()).collect();
        let mx = lx.iter().sum::<f64>() / lx.len() as f64;
        let my = ly.iter().sum::<f64>() / ly.len() as f64;
        let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
        Some(sxy / sxx)
    };

    let beta_star = beta_mu * (1.0 - 1.0 / gamma0);
    Ok(RateExperimentReport {
        beta_mu,
        gamma0,
        ns: ns.to_vec(),
        reps,
        seed,
        median_sup_errors,
        slope,
        theoretical_slope: -beta_star / (2.0 * beta_star + 1.0),
    })
}

// ---------------------------------------------------------------------------
// Inductive bandwidth/grouping sequence
// ---------------------------------------------------------------------------

/// One step of the inductive sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InductiveStep {
    pub h: f64,
    pub m: f64,
}

/// The computed sequence, possibly truncated where the group-count term
/// would overflow.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InductiveSequence {
    pub steps: Vec<InductiveStep>,
    /// True when the sequence stopped before `k_max` because an exponent
    /// exceeded ln(1e300).
    pub truncated: bool,
}

/// Computes the bandwidth/group-count sequence
/// `h^(1) = n^{-1/(2 beta_mu + d gamma0/(gamma0-1))}`,
/// `m^(k) = exp(2^{-k} delta (h^(k)/h^(1))^{-2 beta_mu})`,
/// `h^(k+1) = (n (m^(k)/delta)^{gamma0-1})^{-1/(2 beta_mu + d gamma0/(gamma0-1))}`,
/// for up to `k_max` steps. A step whose exponent would push `m` past 1e300
/// truncates the sequence (flagged); the incomplete pair is not returned.
pub fn inductive_sequence(
    delta: f64,
    n: usize,
    beta_mu: f64,
    d: usize,
    gamma0: f64,
    k_max: usize,
) -> Result<InductiveSequence> {
    if !(delta > 1.0) || !delta.is_finite() {
        return Err(Error::InvalidInput(format!("delta must exceed 1, got {delta}")));
    }
    if n == 0 {
        return Err(Error::InvalidInput("need a positive sample size".into()));
    }
    if !(beta_mu > 0.0) || !beta_mu.is_finite() {
        return Err(Error::InvalidInput(format!(
            "smoothness order must be positive, got {beta_mu}"
        )));
    }
    if d == 0 {
        return Err(Error::InvalidInput("dimension must be at least 1".into()));
    }
    if !(gamma0 > 1.0) || !gamma0.is_finite() {
        return Err(Error::InvalidInput(format!(
            "tail order gamma0 must exceed 1, got {gamma0}"
        )));
    }
    if k_max == 0 {
        return Err(Error::InvalidInput("need at least one step".into()));
    }

    const MAX_EXPONENT: f64 = 690.0; // ln(1e300) is about 690.78

    let nf = n as f64;
    let exponent_denom = 2.0 * beta_mu + d as f64 * gamma0 / (gamma0 - 1.0);
    let h1 = nf.powf(-1.0 / exponent_denom);
    let mut steps = Vec::with_capacity(k_max);
    let mut truncated = false;
    let mut h = h1;
    for k in 1..=k_max {
        let arg = 2.0f64.powi(-(k as i32)) * delta * (h / h1).powf(-2.0 * beta_mu);
        if arg > MAX_EXPONENT {
            truncated = true;
            break;
        }
        let m = arg.exp();
        steps.push(InductiveStep { h, m });
        h = (nf * (m / delta).powf(gamma0 - 1.0)).powf(-1.0 / exponent_denom);
        if !h.is_finite() || h <= 0.0 {
            truncated = true;
            break;
        }
    }
    Ok(InductiveSequence { steps, truncated })
}

#[cfg(test)]
// Reference values are kept with every digit the oracle printed, even
// past f64 precision.
#[allow(clippy::excessive_precision)]
mod tests {
    use super::*;
    use crate::estimators::wald_ci;
    use crate::estimators::Estimate;

    fn config(gamma0: f64, kappa: f64, demean: DemeanMode) -> DgpConfig {
        DgpConfig::new(gamma0, kappa, demean).unwrap()
    }

    // -- DGP ----------------------------------------------------------------

    #[test]
    fn config_validates() {
        assert!(DgpConfig::new(1.0, 2.0, DemeanMode::ApoZero).is_err());
        assert!(DgpConfig::new(f64::NAN, 2.0, DemeanMode::ApoZero).is_err());
        assert!(DgpConfig::new(2.0, f64::INFINITY, DemeanMode::ApoZero).is_err());
    }

    #[test]
    fn propensity_curve_matches_direct_power_evaluation() {
        let c = config(1.8, 2.0, DemeanMode::ApoZero);
        assert!((c.propensity(0.5) - 0.420448207626857272).abs() < 1e-15);
        assert!((c.propensity(1.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn demeaning_constants_match_closed_forms() {
        let zero = config(1.8, 2.0, DemeanMode::ApoZero);
        assert!((zero.demean_constant() - 10.0 / 9.0).abs() < 1e-12);
        // E[e] = 4/9, E[e^2] = 2/7, E[e(1-e)] = 10/63.
        let signal = config(1.8, 1.0, DemeanMode::SignalMean);
        assert!((signal.demean_constant() - 10.0 / 63.0).abs() < 1e-12);
        assert!((zero.e_moment(1) - 4.0 / 9.0).abs() < 1e-15);
        assert!((zero.e_moment(2) - 2.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn true_apo_values() {
        assert_eq!(true_apo(&config(1.8, 2.0, DemeanMode::ApoZero)), 0.0);
        assert_eq!(true_apo(&config(3.5, -7.0, DemeanMode::ApoZero)), 0.0);
        let signal = config(1.8, 2.0, DemeanMode::SignalMean);
        assert!((true_apo(&signal) - 50.0 / 63.0).abs() < 1e-12);
        assert_eq!(true_apo(&config(1.8, 0.0, DemeanMode::SignalMean)), 0.0);
    }

    #[test]
    fn drawn_datasets_are_deterministic_and_annotated() {
        let c = config(1.8, 2.0, DemeanMode::ApoZero);
        let a = draw_dataset(&c, 200, 42).unwrap();
        let b = draw_dataset(&c, 200, 42).unwrap();
        let other = draw_dataset(&c, 200, 43).unwrap();
        for (oa, ob) in a.observations().iter().zip(b.observations()) {
            assert_eq!(oa.d, ob.d);
            assert_eq!(oa.y.to_bits(), ob.y.to_bits());
            assert_eq!(oa.x[0].to_bits(), ob.x[0].to_bits());
        }
        assert!(a
            .observations()
            .iter()
            .zip(other.observations())
            .any(|(u, v)| u.y.to_bits() != v.y.to_bits() || u.x != v.x));

        let e = a.true_propensity().unwrap();
        let mu = a.true_outcome_mean().unwrap();
        let cst = c.demean_constant();
        for (i, o) in a.observations().iter().enumerate() {
            assert!((e[i] - c.propensity(o.x[0])).abs() < 1e-15);
            assert!((mu[i] - (2.0 * (1.0 - e[i]) - cst)).abs() < 1e-12);
            if o.d == 0 {
                assert_eq!(o.y, 0.0);
            }
        }
        assert!(draw_dataset(&c, 0, 1).is_err());
    }

    #[test]
    fn dgp_moments_track_their_analytic_values() {
        // Smoke-scale version of the tail-law and treated-fraction bands.
        let c = config(1.8, 2.0, DemeanMode::ApoZero);
        let n = 100_000;
        let data = draw_dataset(&c, n, 7).unwrap();
        let e = data.true_propensity().unwrap();
        let nf = n as f64;

        let treated_frac = data.treated_count() as f64 / nf;
        let expect = c.mean_propensity();
        let se = (expect * (1.0 - expect) / nf).sqrt();
        assert!(
            (treated_frac - expect).abs() < 3.0 * se,
            "treated fraction {treated_frac} vs {expect}"
        );

        for pi in [0.01, 0.1, 0.5] {
            let frac = e.iter().filter(|&&v| v <= pi).count() as f64 / nf;
            let p = pi.powf(c.gamma0() - 1.0);
            let se = (p * (1.0 - p) / nf).sqrt();
            assert!((frac - p).abs() < 3.5 * se, "tail at {pi}: {frac} vs {p}");
        }

        // Standardized noise: treated outcomes minus their true mean.
        let mu = data.true_outcome_mean().unwrap();
        let noise: Vec<f64> = data
            .observations()
            .iter()
            .enumerate()
            .filter(|(_, o)| o.d == 1)
            .map(|(i, o)| o.y - mu[i])
            .collect();
        let m = noise.len() as f64;
        let mean = noise.iter().sum::<f64>() / m;
        let var = noise.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
        assert!(mean.abs() < 0.02, "noise mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "noise variance {var}");
    }

    // -- Monte Carlo ----------------------------------------------------------

    fn small_settings() -> MonteCarloSettings {
        MonteCarloSettings {
            config: config(1.8, 2.0, DemeanMode::ApoZero),
            n: 120,
            reps: 20,
            estimators: vec![
                EstimatorSpec { kind: EstimatorKind::Aipw, mode: ThresholdMode::None },
                EstimatorSpec { kind: EstimatorKind::Aipw, mode: ThresholdMode::Clip },
                EstimatorSpec { kind: EstimatorKind::Ipw, mode: ThresholdMode::Clip },
            ],
            nuisance: NuisanceSource::Oracle,
            folds: 5,
            threshold: ThresholdRule::RuleOfThumb,
            alpha: 0.05,
            master_seed: 11,
        }
    }

    #[test]
    fn monte_carlo_is_bitwise_reproducible() {
        let settings = small_settings();
        let a = run_monte_carlo(&settings).unwrap();
        let b = run_monte_carlo(&settings).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a.replications.len(), 3 * 20);
        assert_eq!(a.reps_used, 20);
        assert_eq!(a.failures, 0);
    }

    #[test]
    fn strategies_agree_exactly() {
        let settings = small_settings();
        let seq = run_monte_carlo_with_strategy(&settings, MapStrategy::Sequential).unwrap();
        let def = run_monte_carlo(&settings).unwrap();
        assert_eq!(
            serde_json::to_string(&seq).unwrap(),
            serde_json::to_string(&def).unwrap()
        );
    }

    #[test]
    fn clip_at_zero_equals_unthresholded_rows() {
        let mut settings = small_settings();
        settings.threshold = ThresholdRule::Fixed(0.0);
        settings.estimators = vec![
            EstimatorSpec { kind: EstimatorKind::Aipw, mode: ThresholdMode::None },
            EstimatorSpec { kind: EstimatorKind::Aipw, mode: ThresholdMode::Clip },
        ];
        let report = run_monte_carlo(&settings).unwrap();
        for rep in 0..settings.reps {
            let pair: Vec<&ReplicationRow> =
                report.replications.iter().filter(|r| r.rep == rep).collect();
            assert_eq!(pair.len(), 2);
            assert_eq!(pair[0].psi_hat.to_bits(), pair[1].psi_hat.to_bits());
            assert_eq!(pair[0].sigma_hat.to_bits(), pair[1].sigma_hat.to_bits());
        }
    }

    #[test]
    fn aggregates_are_recomputable_from_rows() {
        let report = run_monte_carlo(&small_settings()).unwrap();
        for agg in &report.estimators {
            let rows: Vec<&ReplicationRow> = report
                .replications
                .iter()
                .filter(|r| r.estimator == agg.estimator)
                .collect();
            assert_eq!(rows.len(), agg.replications);
            let m = rows.len() as f64;
            let mean_bias =
                rows.iter().map(|r| r.psi_hat).sum::<f64>() / m - report.true_apo;
            let rmse = (rows
                .iter()
                .map(|r| (r.psi_hat - report.true_apo) * (r.psi_hat - report.true_apo))
                .sum::<f64>()
                / m)
                .sqrt();
            let rate = rows.iter().filter(|r| r.p < report.alpha).count() as f64 / m;
            assert_eq!(agg.mean_bias.to_bits(), mean_bias.to_bits());
            assert_eq!(agg.rmse.to_bits(), rmse.to_bits());
            assert_eq!(agg.rejection_rate.to_bits(), rate.to_bits());
        }
    }

    #[test]
    fn pvalues_and_intervals_reject_together() {
        let report = run_monte_carlo(&small_settings()).unwrap();
        for row in &report.replications {
            let est = Estimate {
                psi_hat: row.psi_hat,
                sigma_hat: row.sigma_hat,
                n: row.n,
                n_thresholded: 0,
                threshold: ThresholdSpec::none(),
            };
            for alpha in [0.05, 0.32] {
                let (lo, hi) = wald_ci(&est, alpha).unwrap();
                let outside = report.true_apo < lo || report.true_apo > hi;
                assert_eq!(row.p < alpha, outside, "row {row:?} alpha {alpha}");
            }
        }
    }

    #[test]
    fn csv_has_one_line_per_row_plus_header() {
        let report = run_monte_carlo(&small_settings()).unwrap();
        let csv = report.to_csv_string();
        let lines: Vec<&str> = csv.trim_end().lines().collect();
        assert_eq!(lines[0], "rep,estimator,n,b,psi_hat,sigma_hat,t,p");
        assert_eq!(lines.len(), 1 + report.replications.len());
        assert!(lines[1].starts_with("0,aipw,120,0,"));
    }

    #[test]
    fn overwhelming_failures_abort_the_run() {
        // Tail order barely above 1: a sample of 8 usually has no treated
        // observations at all, so cross-fitting fails nearly every time.
        let settings = MonteCarloSettings {
            config: config(1.02, 2.0, DemeanMode::ApoZero),
            n: 8,
            reps: 10,
            estimators: vec![EstimatorSpec {
                kind: EstimatorKind::Aipw,
                mode: ThresholdMode::Clip,
            }],
            nuisance: NuisanceSource::Estimated,
            folds: 2,
            threshold: ThresholdRule::Fixed(0.1),
            alpha: 0.05,
            master_seed: 5,
        };
        let err = run_monte_carlo(&settings).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)), "{err}");
    }

    #[test]
    fn settings_are_validated() {
        let mut s = small_settings();
        s.reps = 1;
        assert!(run_monte_carlo(&s).is_err());
        let mut s = small_settings();
        s.estimators.clear();
        assert!(run_monte_carlo(&s).is_err());
        let mut s = small_settings();
        s.alpha = 0.5;
        assert!(run_monte_carlo(&s).is_err());
        let mut s = small_settings();
        s.threshold = ThresholdRule::Fixed(1.0);
        assert!(run_monte_carlo(&s).is_err());
        let mut s = small_settings();
        s.nuisance = NuisanceSource::Estimated;
        s.folds = 1;
        assert!(run_monte_carlo(&s).is_err());
    }

    // -- rate experiment ---------------------------------------------------------

    #[test]
    fn rate_experiment_validates_and_runs_at_smoke_scale() {
        assert!(rate_experiment(1.0, 2.0, &[100, 200], 2, 0).is_err());
        assert!(rate_experiment(1.0, 2.0, &[100, 200, 150], 2, 0).is_err());
        assert!(rate_experiment(1.0, 2.0, &[100, 200, 400], 0, 0).is_err());

        let report = rate_experiment(1.0, 2.0, &[200, 400, 800], 3, 123).unwrap();
        assert_eq!(report.median_sup_errors.len(), 3);
        assert!(report.median_sup_errors.iter().all(|&e| e > 0.0));
        assert!((report.theoretical_slope - (-0.25)).abs() < 1e-15);
        let slope = report.slope.unwrap();
        assert!(slope < 0.0, "error should shrink with n, slope = {slope}");
        // Determinism.
        let again = rate_experiment(1.0, 2.0, &[200, 400, 800], 3, 123).unwrap();
        assert_eq!(
            serde_json::to_string(&report).unwrap(),
            serde_json::to_string(&again).unwrap()
        );
    }

    // -- inductive sequence ----------------------------------------------------------

    #[test]
    fn inductive_first_bandwidth_and_group_count() {
        let seq = inductive_sequence(100.0, 10_000, 1.0, 1, 2.0, 6).unwrap();
        assert!(!seq.steps.is_empty());
        assert!((seq.steps[0].h - 0.1).abs() < 1e-12, "h1 = {}", seq.steps[0].h);
        assert!(
            (seq.steps[0].m - (50.0f64).exp()).abs() < 1e-9 * (50.0f64).exp(),
            "m1 = {}",
            seq.steps[0].m
        );
        // With delta = 100 the second group count overflows: truncated run.
        assert!(seq.truncated);
        assert_eq!(seq.steps.len(), 1);
    }

    #[test]
    fn inductive_first_group_count_is_exp_half_delta_generally() {
        for delta in [1.2, 1.5, 3.0, 10.0] {
            let seq = inductive_sequence(delta, 5_000, 1.5, 2, 1.7, 3).unwrap();
            assert!((seq.steps[0].m - (delta / 2.0).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn inductive_geometric_decay_holds_over_computed_steps() {
        let seq = inductive_sequence(100.0, 10_000, 1.0, 1, 2.0, 6).unwrap();
        if seq.steps.len() >= 3 {
            let first_ratio = seq.steps[1].h / seq.steps[0].h;
            for pair in seq.steps.windows(2).skip(1) {
                let ratio = pair[1].h / pair[0].h;
                assert!(ratio <= first_ratio + 1e-12, "ratio {ratio} vs first {first_ratio}");
            }
        }
        // Immediate overflow for a huge delta: no completed steps.
        let huge = inductive_sequence(1e6, 100, 1.0, 1, 2.0, 4).unwrap();
        assert!(huge.truncated);
        assert!(huge.steps.is_empty());
    }

    #[test]
    fn inductive_validates() {
        assert!(inductive_sequence(1.0, 100, 1.0, 1, 2.0, 3).is_err());
        assert!(inductive_sequence(2.0, 0, 1.0, 1, 2.0, 3).is_err());
        assert!(inductive_sequence(2.0, 100, 0.0, 1, 2.0, 3).is_err());
        assert!(inductive_sequence(2.0, 100, 1.0, 0, 2.0, 3).is_err());
        assert!(inductive_sequence(2.0, 100, 1.0, 1, 1.0, 3).is_err());
        assert!(inductive_sequence(2.0, 100, 1.0, 1, 2.0, 0).is_err());
    }
}
