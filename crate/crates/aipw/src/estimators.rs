//! Doubly-robust estimation of average potential outcomes and treatment
//! effects, with optional propensity thresholding (clipping or trimming),
//! Wald inference, fixed-window trimming of the sample itself, and a
//! fold-preserving nonparametric bootstrap.

use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::parallel;
use crate::rng::SplitRng;
use crate::stats::{normal_cdf, normal_quantile};

// ---------------------------------------------------------------------------
// Threshold specification
// ---------------------------------------------------------------------------

/// What to do with observations whose estimated propensity falls outside the
/// thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMode {
    /// Clamp the inverse-weight denominator at the threshold.
    Clip,
    /// Zero the inverse-weight correction term (the regression prediction
    /// still contributes; no rows are deleted).
    Trim,
    /// No thresholding: the plain doubly-robust estimator.
    None,
}

/// Where a threshold value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdProvenance {
    /// Supplied directly by the caller.
    Fixed,
    /// Selected by the data-driven rule-of-thumb crossing rule.
    RuleOfThumb,
    /// Derived from smoothness exponents alone.
    SmoothnessRule,
}

/// A validated thresholding policy: mode, lower threshold on ê, optional
/// upper threshold expressed on 1 − ê, and provenance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThresholdSpec {
    mode: ThresholdMode,
    b_lower: f64,
    b_upper: Option<f64>,
    provenance: ThresholdProvenance,
}

impl ThresholdSpec {
    /// No thresholding (lower threshold 0, no upper threshold).
    pub fn none() -> Self {
        ThresholdSpec {
            mode: ThresholdMode::None,
            b_lower: 0.0,
            b_upper: None,
            provenance: ThresholdProvenance::Fixed,
        }
    }

    fn validated(mode: ThresholdMode, b_lower: f64) -> Result<Self> {
        if !b_lower.is_finite() || !(0.0..1.0).contains(&b_lower) {
            return Err(Error::InvalidInput(format!(
                "threshold must lie in [0, 1), got {b_lower}"
            )));
        }
        Ok(ThresholdSpec { mode, b_lower, b_upper: None, provenance: ThresholdProvenance::Fixed })
    }

    /// Clipping at `b_lower` in [0, 1).
    pub fn clip(b_lower: f64) -> Result<Self> {
        Self::validated(ThresholdMode::Clip, b_lower)
    }

    /// Trimming at `b_lower` in [0, 1).
    pub fn trim(b_lower: f64) -> Result<Self> {
        Self::validated(ThresholdMode::Trim, b_lower)
    }

    /// Adds an upper threshold `b_upper` in (0, 1], interpreted as a bound on
    /// `1 - ê` and applied in the same mode. Not available for mode `None`.
    pub fn with_upper(mut self, b_upper: f64) -> Result<Self> {
        if self.mode == ThresholdMode::None {
            return Err(Error::InvalidInput(
                "an upper threshold requires clip or trim mode".into(),
            ));
        }
        if !b_upper.is_finite() || !(b_upper > 0.0 && b_upper <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "upper threshold must lie in (0, 1], got {b_upper}"
            )));
        }
        self.b_upper = Some(b_upper);
        Ok(self)
    }

    /// Records where the threshold value came from.
    pub fn with_provenance(mut self, provenance: ThresholdProvenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn mode(&self) -> ThresholdMode {
        self.mode
    }

    pub fn b_lower(&self) -> f64 {
        self.b_lower
    }

    pub fn b_upper(&self) -> Option<f64> {
        self.b_upper
    }

    pub fn provenance(&self) -> ThresholdProvenance {
        self.provenance
    }

    /// True when this observation's propensity falls outside the thresholds
    /// (below the lower, or — where an upper threshold is set — with
    /// `1 - e_hat` below the upper).
    fn thresholds_bind(&self, e_hat: f64) -> bool {
        e_hat < self.b_lower || self.b_upper.is_some_and(|bu| 1.0 - e_hat < bu)
    }
}

// ---------------------------------------------------------------------------
// Pseudo-outcomes and the point estimators
// ---------------------------------------------------------------------------

fn validate_propensity(e_hat: f64) -> Result<()> {
    if !e_hat.is_finite() || e_hat <= 0.0 || e_hat > 1.0 {
        return Err(Error::InvalidInput(format!(
            "propensity must lie in (0, 1], got {e_hat}"
        )));
    }
    Ok(())
}

/// The doubly-robust pseudo-outcome for one observation:
/// `mu_hat + d * (y - mu_hat) / denom`, where the denominator is the
/// propensity clamped at the thresholds (clip mode), or the raw propensity
/// with the whole correction zeroed when the propensity violates a
/// threshold (trim mode). Mode `None` is clip at 0.
pub fn pseudo_outcome(d: u8, y: f64, mu_hat: f64, e_hat: f64, spec: &ThresholdSpec) -> Result<f64> {
    if d > 1 {
        return Err(Error::InvalidInput(format!("treatment indicator must be 0 or 1, got {d}")));
    }
    if !y.is_finite() || !mu_hat.is_finite() {
        return Err(Error::InvalidInput(format!(
            "outcome and regression prediction must be finite, got y = {y}, mu_hat = {mu_hat}"
        )));
    }
    validate_propensity(e_hat)?;
    if d == 0 {
        return Ok(mu_hat);
    }
    let denom = match spec.mode {
        ThresholdMode::Clip | ThresholdMode::None => {
            let mut denom = e_hat.max(spec.b_lower);
            if let Some(bu) = spec.b_upper {
                denom = denom.min(1.0 - bu);
            }
            denom
        }
        ThresholdMode::Trim => {
            let keep =
                e_hat >= spec.b_lower && spec.b_upper.is_none_or(|bu| 1.0 - e_hat >= bu);
            if !keep {
                return Ok(mu_hat);
            }
            e_hat
        }
    };
    if !(denom > 0.0) {
        return Err(Error::Numerical(format!(
            "pseudo-outcome denominator is {denom} (propensity {e_hat} under thresholds)"
        )));
    }
    let phi = mu_hat + (y - mu_hat) / denom;
    if !phi.is_finite() {
        return Err(Error::Numerical(format!(
            "pseudo-outcome overflowed (y = {y}, mu_hat = {mu_hat}, denominator = {denom})"
        )));
    }
    Ok(phi)
}

/// A point estimate with its estimated standard deviation.
#[derive(Debug, Clone, Serialize)]
pub struct Estimate {
    /// Mean of the per-observation pseudo-outcomes.
    pub psi_hat: f64,
    /// `n^{-1/2} * sqrt(mean(phi^2) - mean(phi)^2)`.
    pub sigma_hat: f64,
    /// Sample size.
    pub n: usize,
    /// Observations whose propensity violated a threshold.
    pub n_thresholded: usize,
    /// The thresholding policy that produced this estimate.
    pub threshold: ThresholdSpec,
}

/// Pseudo-outcome vector plus the count of threshold-binding observations.
fn pseudo_outcome_vector(
    treatments: impl Iterator<Item = u8>,
    ys: impl Iterator<Item = f64>,
    e_hat: &[f64],
    mu_hat: &[f64],
    spec: &ThresholdSpec,
) -> Result<(Vec<f64>, usize)> {
    let mut phis = Vec::with_capacity(e_hat.len());
    let mut bound = 0usize;
    for (((d, y), &e), &mu) in treatments.zip(ys).zip(e_hat).zip(mu_hat) {
        phis.push(pseudo_outcome(d, y, mu, e, spec)?);
        if spec.thresholds_bind(e) {
            bound += 1;
        }
    }
    Ok((phis, bound))
}

fn moments_to_estimate(
    phis: &[f64],
    n_thresholded: usize,
    spec: &ThresholdSpec,
) -> Result<Estimate> {
    let n = phis.len();
    let nf = n as f64;
    let mean = phis.iter().sum::<f64>() / nf;
    let mean_sq = phis.iter().map(|p| p * p).sum::<f64>() / nf;
    let sigma_hat = (mean_sq - mean * mean).max(0.0).sqrt() / nf.sqrt();
    if !mean.is_finite() || !sigma_hat.is_finite() {
        return Err(Error::Numerical(
            "pseudo-outcome moments overflowed; thresholds may be too small for this data".into(),
        ));
    }
    Ok(Estimate { psi_hat: mean, sigma_hat, n, n_thresholded, threshold: *spec })
}

fn check_prediction_lengths(n: usize, e_hat: &[f64], mu_hat: &[f64]) -> Result<()> {
    if e_hat.len() != n || mu_hat.len() != n {
        return Err(Error::InvalidInput(format!(
            "dataset has {n} rows but predictions have {} (propensity) and {} (outcome)",
            e_hat.len(),
            mu_hat.len()
        )));
    }
    Ok(())
}

/// Doubly-robust estimate of the average potential outcome under treatment,
/// from per-observation propensity (`e_hat`) and outcome-regression
/// (`mu_hat`) predictions — typically the out-of-fold predictions of a
/// cross-fit, or oracle annotations.
pub fn estimate_apo(
    data: &Dataset,
    e_hat: &[f64],
    mu_hat: &[f64],
    spec: &ThresholdSpec,
) -> Result<Estimate> {
    let n = data.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 observations, got {n}")));
    }
    check_prediction_lengths(n, e_hat, mu_hat)?;
    let obs = data.observations();
    let (phis, bound) = pseudo_outcome_vector(
        obs.iter().map(|o| o.d),
        obs.iter().map(|o| o.y),
        e_hat,
        mu_hat,
        spec,
    )?;
    moments_to_estimate(&phis, bound, spec)
}

/// Inverse-propensity-weighting estimate: [`estimate_apo`] with the outcome
/// regression identically zero.
pub fn estimate_apo_ipw(data: &Dataset, e_hat: &[f64], spec: &ThresholdSpec) -> Result<Estimate> {
    let zeros = vec![0.0; data.len()];
    estimate_apo(data, e_hat, &zeros, spec)
}

/// A treatment-effect estimate as the difference of two arm-specific
/// average-potential-outcome estimates.
#[derive(Debug, Clone, Serialize)]
pub struct ATEEstimate {
    /// `arm1.psi_hat - arm0.psi_hat`, exactly.
    pub ate: f64,
    /// `n^{-1/2}` times the sample standard deviation of the
    /// per-observation pseudo-outcome differences.
    pub se: f64,
    /// Treated-arm average potential outcome.
    pub arm1: Estimate,
    /// Control-arm average potential outcome.
    pub arm0: Estimate,
}

/// Doubly-robust treatment-effect estimate. The treated arm uses
/// `(d, mu1_hat, e_hat)`; the control arm reuses the same machinery with
/// treatment indicators flipped, propensity `1 - e_hat`, and the
/// control-outcome regression `mu0_hat`. Thresholds apply to each arm's own
/// propensity.
pub fn estimate_ate(
    data: &Dataset,
    e_hat: &[f64],
    mu1_hat: &[f64],
    mu0_hat: &[f64],
    spec: &ThresholdSpec,
) -> Result<ATEEstimate> {
    let n = data.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 observations, got {n}")));
    }
    check_prediction_lengths(n, e_hat, mu1_hat)?;
    check_prediction_lengths(n, e_hat, mu0_hat)?;
    let obs = data.observations();
    let treated = data.treated_count();
    if treated == 0 || treated == n {
        return Err(Error::Degenerate(format!(
            "treatment-effect estimation needs both arms populated; \
             got {treated} treated of {n}"
        )));
    }

    let (phi1, bound1) = pseudo_outcome_vector(
        obs.iter().map(|o| o.d),
        obs.iter().map(|o| o.y),
        e_hat,
        mu1_hat,
        spec,
    )?;
    let flipped_e: Vec<f64> = e_hat.iter().map(|e| 1.0 - e).collect();
    let (phi0, bound0) = pseudo_outcome_vector(
        obs.iter().map(|o| 1 - o.d),
        obs.iter().map(|o| o.y),
        &flipped_e,
        mu0_hat,
        spec,
    )?;

    let arm1 = moments_to_estimate(&phi1, bound1, spec)?;
    let arm0 = moments_to_estimate(&phi0, bound0, spec)?;

    let diffs: Vec<f64> = phi1.iter().zip(&phi0).map(|(a, b)| a - b).collect();
    let nf = n as f64;
    let mean = diffs.iter().sum::<f64>() / nf;
    let mean_sq = diffs.iter().map(|d| d * d).sum::<f64>() / nf;
    let se = (mean_sq - mean * mean).max(0.0).sqrt() / nf.sqrt();
    if !se.is_finite() {
        return Err(Error::Numerical("treatment-effect variance overflowed".into()));
    }

    Ok(ATEEstimate { ate: arm1.psi_hat - arm0.psi_hat, se, arm1, arm0 })
}

// ---------------------------------------------------------------------------
// Wald inference
// ---------------------------------------------------------------------------

/// Two-sided Wald confidence interval `psi_hat ± z_{1-alpha/2} sigma_hat`,
/// exactly symmetric about the point estimate. `alpha` must lie in (0, 0.5).
pub fn wald_ci(est: &Estimate, alpha: f64) -> Result<(f64, f64)> {
    if !alpha.is_finite() || !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::InvalidInput(format!(
            "confidence level alpha must lie in (0, 0.5), got {alpha}"
        )));
    }
    let z = normal_quantile(1.0 - alpha / 2.0)?;
    let half = z * est.sigma_hat;
    Ok((est.psi_hat - half, est.psi_hat + half))
}

/// Two-sided p-value for the null `psi = null_value`:
/// `2 (1 - Phi(|psi_hat - null_value| / sigma_hat))`. A zero standard
/// deviation degenerates to 1 when the estimate equals the null exactly and
/// 0 otherwise.
pub fn two_sided_pvalue(est: &Estimate, null_value: f64) -> f64 {
    if est.sigma_hat == 0.0 {
        return if est.psi_hat == null_value { 1.0 } else { 0.0 };
    }
    let t = (est.psi_hat - null_value).abs() / est.sigma_hat;
    (2.0 * normal_cdf(-t)).min(1.0)
}

// ---------------------------------------------------------------------------
// Fixed-window trimming of the sample
// ---------------------------------------------------------------------------

/// A subsample retained by a fixed propensity window.
#[derive(Debug, Clone)]
pub struct TrimmedSample {
    /// The retained observations, in their original order (annotations
    /// subset along with them).
    pub data: Dataset,
    /// Original indices of the retained observations.
    pub kept_indices: Vec<usize>,
    /// Propensity predictions of the retained observations.
    pub e_hat: Vec<f64>,
}

/// Keeps the observations with `lo <= e_hat[i] <= hi` (order preserved).
/// Requires `0 <= lo < hi <= 1`; an empty result is a structured error.
pub fn fixed_trim_sample(
    data: &Dataset,
    e_hat: &[f64],
    lo: f64,
    hi: f64,
) -> Result<TrimmedSample> {
    if e_hat.len() != data.len() {
        return Err(Error::InvalidInput(format!(
            "dataset has {} rows but {} propensity predictions were given",
            data.len(),
            e_hat.len()
        )));
    }
    if !lo.is_finite() || !hi.is_finite() || !(0.0 <= lo && lo < hi && hi <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "trim window must satisfy 0 <= lo < hi <= 1, got [{lo}, {hi}]"
        )));
    }
    let kept_indices: Vec<usize> =
        (0..data.len()).filter(|&i| lo <= e_hat[i] && e_hat[i] <= hi).collect();
    if kept_indices.is_empty() {
        return Err(Error::Degenerate(format!(
            "no observations have propensity inside [{lo}, {hi}]"
        )));
    }
    let kept_e: Vec<f64> = kept_indices.iter().map(|&i| e_hat[i]).collect();
    Ok(TrimmedSample { data: data.take(&kept_indices)?, kept_indices, e_hat: kept_e })
}

// ---------------------------------------------------------------------------
// Bootstrap
// ---------------------------------------------------------------------------

/// Result of a bootstrap standard-error computation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BootstrapSummary {
    /// Sample standard deviation of the replicate point estimates.
    pub se: f64,
    /// Replicates that produced an estimate.
    pub replicates_used: usize,
    /// Replicates skipped because the estimator reported an error
    /// (e.g. a resample missing one arm).
    pub replicates_skipped: usize,
}

/// Nonparametric bootstrap of an estimation pipeline: each replicate draws
/// `n` observations with replacement and calls `estimate` with the resampled
/// dataset and the source index of every resampled row — so a caller holding
/// a fold assignment can let each resampled observation inherit the fold
/// label of its source (fold assignment fixed across replicates).
///
/// Replicates whose estimator errors (a resample can lose an entire
/// treatment arm) are skipped and counted; more than 20% skips is an error,
/// as are fewer than two usable replicates.
pub fn bootstrap_se<F>(
    data: &Dataset,
    estimate: F,
    b_reps: usize,
    seed: u64,
) -> Result<BootstrapSummary>
where
    F: Fn(&Dataset, &[usize]) -> Result<f64> + Sync,
{
    if b_reps < 2 {
        return Err(Error::InvalidInput(format!(
            "bootstrap needs at least 2 replicates, got {b_reps}"
        )));
    }
    let n = data.len();
    if n == 0 {
        return Err(Error::InvalidInput("bootstrap on an empty dataset".into()));
    }

    let replicate_estimates = parallel::indexed_map_default(b_reps, |r| -> Result<f64> {
        let mut rng = SplitRng::derive(seed, r as u64);
        let indices: Vec<usize> = (0..n).map(|_| rng.below(n as u64) as usize).collect();
        let resample = data.take(&indices)?;
        estimate(&resample, &indices)
    });

    let mut estimates = Vec::with_capacity(b_reps);
    let mut skipped = 0usize;
    for result in replicate_estimates {
        match result {
            Ok(v) if v.is_finite() => estimates.push(v),
            _ => skipped += 1,
        }
    }
    if skipped * 5 > b_reps {
        return Err(Error::Degenerate(format!(
            "{skipped} of {b_reps} bootstrap replicates failed (more than 20%)"
        )));
    }
    let used = estimates.len();
    if used < 2 {
        return Err(Error::Degenerate(format!(
            "only {used} usable bootstrap replicates; need at least 2"
        )));
    }
    let mean = estimates.iter().sum::<f64>() / used as f64;
    let ss: f64 = estimates.iter().map(|v| (v - mean) * (v - mean)).sum();
    let se = (ss / (used - 1) as f64).sqrt();
    Ok(BootstrapSummary { se, replicates_used: used, replicates_skipped: skipped })
}
