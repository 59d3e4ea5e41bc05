//! Data-driven threshold selection: the error-bound crossing rule, a
//! smoothness-exponent threshold formula, and feasibility / rate-condition
//! diagnostics for inference under weak overlap.

use serde::Serialize;

use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Rate bounds
// ---------------------------------------------------------------------------

/// An upper bound on a nuisance estimator's convergence rate, either as a
/// plain number (interpreted at the current sample size) or as a power law
/// `scale * n^{-exponent}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RateBound {
    Constant(f64),
    PowerLaw { scale: f64, exponent: f64 },
}

impl RateBound {
    /// The bound evaluated at sample size `n`.
    pub fn at(&self, n: usize) -> f64 {
        match *self {
            RateBound::Constant(v) => v,
            RateBound::PowerLaw { scale, exponent } => scale * (n as f64).powf(-exponent),
        }
    }
}

fn validated_rate(bound: &RateBound, n: usize, which: &str) -> Result<f64> {
    let v = bound.at(n);
    if !v.is_finite() || !(v > 0.0 && v <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "{which} rate bound evaluates to {v} at n = {n}; must lie in (0, 1]"
        )));
    }
    Ok(v)
}

// ---------------------------------------------------------------------------
// error_bound_diff: the quantity whose sign change defines the threshold
// ---------------------------------------------------------------------------

fn validate_sample(d: &[u8], e_hat: &[f64]) -> Result<()> {
    if d.len() != e_hat.len() || d.is_empty() {
        return Err(Error::InvalidInput(format!(
            "treatment and propensity vectors must be nonempty and equal length, got {} and {}",
            d.len(),
            e_hat.len()
        )));
    }
    if let Some(bad) = d.iter().find(|&&v| v > 1) {
        return Err(Error::InvalidInput(format!("treatment indicator {bad} is not binary")));
    }
    if let Some(bad) = e_hat.iter().find(|e| !e.is_finite() || **e <= 0.0 || **e > 1.0) {
        return Err(Error::InvalidInput(format!(
            "propensity {bad} outside (0, 1]"
        )));
    }
    Ok(())
}

/// The error-bound criterion at candidate threshold `b`:
///
/// `r~_mu * frac(b) / sqrt(sm(b)) + r~_mu * r~_e * sqrt(sm(b)) - n^{-1/2}`
///
/// where `sm(b) = (1/n) sum_i d_i / max(e_hat_i, b)^2`,
/// `frac(b) = (1/n) sum_i 1{e_hat_i <= b}`, and a missing rate bound
/// defaults to `b` itself. The selected threshold is the supremum of the
/// region where this quantity is nonpositive.
pub fn error_bound_diff(
    b: f64,
    d: &[u8],
    e_hat: &[f64],
    r_mu: Option<f64>,
    r_e: Option<f64>,
) -> Result<f64> {
    if !b.is_finite() || !(b > 0.0 && b <= 1.0) {
        return Err(Error::InvalidInput(format!("threshold candidate {b} outside (0, 1]")));
    }
    validate_sample(d, e_hat)?;
    for (value, which) in [(r_mu, "regression"), (r_e, "propensity")] {
        if let Some(v) = value {
            if !v.is_finite() || !(v > 0.0 && v <= 1.0) {
                return Err(Error::InvalidInput(format!(
                    "{which} rate bound {v} outside (0, 1]"
                )));
            }
        }
    }
    let n = d.len() as f64;
    let mut second_moment = 0.0;
    let mut below = 0usize;
    for (&di, &ei) in d.iter().zip(e_hat) {
        if di == 1 {
            let denom = ei.max(b);
            second_moment += 1.0 / (denom * denom);
        }
        if ei <= b {
            below += 1;
        }
    }
    second_moment /= n;
    if second_moment == 0.0 {
        return Err(Error::Degenerate(
            "error-bound criterion needs at least one treated observation".into(),
        ));
    }
    let frac = below as f64 / n;
    let r_mu = r_mu.unwrap_or(b);
    let r_e = r_e.unwrap_or(b);
    let root = second_moment.sqrt();
    Ok(r_mu * frac / root + r_mu * r_e * root - n.sqrt().recip())
}

// ---------------------------------------------------------------------------
// Threshold selection by the sign-change rule
// ---------------------------------------------------------------------------

/// Which rule produced a selected threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ThresholdBranch {
    /// The propensity rate bound was returned directly (no regression bound
    /// was supplied).
    #[serde(rename = "propensity-bound")]
    PropensityRateBound,
    /// The threshold is the sign-change point of the error-bound criterion.
    #[serde(rename = "root-crossing")]
    RootCrossing,
    /// The criterion stayed nonpositive all the way to 1.
    #[serde(rename = "saturated")]
    Saturated,
}

/// A selected threshold with the rule branch that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThresholdPick {
    pub b: f64,
    pub branch: ThresholdBranch,
}

/// Evaluates the error-bound criterion in O(log n) per query, after an
/// O(n log n) build. Breakpoints are the sorted distinct propensity values;
/// between consecutive breakpoints the below-threshold counts are frozen, so
/// the criterion restricted to one segment is a smooth function of `b`.
struct CriterionEvaluator {
    n: f64,
    /// Sorted distinct propensity values.
    breaks: Vec<f64>,
    /// Observations (any arm) with propensity <= breaks[j].
    cum_all: Vec<usize>,
    /// Treated observations with propensity <= breaks[j].
    cum_treated: Vec<usize>,
    /// Sum of d_i / e_i^2 over propensities > breaks[j].
    suffix_sum: Vec<f64>,
    /// Sum of d_i / e_i^2 over everything.
    total_sum: f64,
    root_n_inv: f64,
    r_mu: Option<f64>,
    r_e: Option<f64>,
}

impl CriterionEvaluator {
    fn build(d: &[u8], e_hat: &[f64], r_mu: Option<f64>, r_e: Option<f64>) -> Self {
        let mut order: Vec<usize> = (0..d.len()).collect();
        order.sort_by(|&a, &b| e_hat[a].partial_cmp(&e_hat[b]).expect("finite propensities"));

        let mut breaks = Vec::new();
        let mut cum_all = Vec::new();
        let mut cum_treated = Vec::new();
        let mut weights = Vec::new(); // per-breakpoint sum of d/e^2 at that value
        for &i in &order {
            let e = e_hat[i];
            let w = if d[i] == 1 { 1.0 / (e * e) } else { 0.0 };
            match breaks.last() {
                Some(&last) if last == e => {
                    *cum_all.last_mut().unwrap() += 1;
                    *cum_treated.last_mut().unwrap() += usize::from(d[i] == 1);
                    *weights.last_mut().unwrap() += w;
                }
                _ => {
                    breaks.push(e);
                    cum_all.push(cum_all.last().copied().unwrap_or(0) + 1);
                    cum_treated
                        .push(cum_treated.last().copied().unwrap_or(0) + usize::from(d[i] == 1));
                    weights.push(w);
                }
            }
        }
        let total_sum: f64 = weights.iter().sum();
        // suffix_sum[j] = sum of weights strictly above breaks[j].
        let mut suffix_sum = vec![0.0; breaks.len()];
        let mut acc = 0.0;
        for j in (0..breaks.len()).rev() {
            suffix_sum[j] = acc;
            acc += weights[j];
        }

        let n = d.len() as f64;
        CriterionEvaluator {
            n,
            breaks,
            cum_all,
            cum_treated,
            suffix_sum,
            total_sum,
            root_n_inv: n.sqrt().recip(),
            r_mu,
            r_e,
        }
    }

    /// Count-freeze level for a query: how many breakpoints are <= b.
    #[cfg(test)]
    fn level_of(&self, b: f64) -> usize {
        self.breaks.partition_point(|&v| v <= b)
    }

    /// Segment-t counts: (all below, treated below, weight above).
    fn counts_at(&self, t: usize) -> (usize, usize, f64) {
        if t == 0 {
            (0, 0, self.total_sum)
        } else {
            (self.cum_all[t - 1], self.cum_treated[t - 1], self.suffix_sum[t - 1])
        }
    }

    /// The criterion at `b` with counts frozen at level `t`. For `b` inside
    /// segment `t` this is the true (right-continuous) value; at the
    /// segment's right boundary it is the left limit.
    fn eval_at_level(&self, b: f64, t: usize) -> f64 {
        let (all_below, treated_below, sum_above) = self.counts_at(t);
        let sm = if treated_below == 0 {
            sum_above / self.n
        } else {
            (treated_below as f64 / (b * b) + sum_above) / self.n
        };
        let frac = all_below as f64 / self.n;
        let r_mu = self.r_mu.unwrap_or(b);
        let r_e = self.r_e.unwrap_or(b);
        let root = sm.sqrt();
        r_mu * frac / root + r_mu * r_e * root - self.root_n_inv
    }

    /// True criterion value (right-continuous in b).
    #[cfg(test)]
    fn eval(&self, b: f64) -> f64 {
        self.eval_at_level(b, self.level_of(b))
    }

    /// Bisection on `[lo, hi]` within level `t`, given
    /// `eval(lo) <= 0 < eval(hi)`. The nonpositive region within a segment
    /// is an interval extending left from the crossing, so this converges to
    /// the supremum of the nonpositive region.
    fn bisect(&self, mut lo: f64, mut hi: f64, t: usize) -> f64 {
        for _ in 0..50 {
            let mid = 0.5 * (lo + hi);
            if self.eval_at_level(mid, t) <= 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Supremum of `{b in (0, 1] : criterion(b) <= 0}` by a right-to-left
    /// scan over segments. Within a segment the criterion is monotone when
    /// either rate bound defaults to `b`; with both bounds fixed it can dip
    /// and recover (it is convex in `sqrt(sm)`), so the interior minimum is
    /// also checked before a segment is ruled out.
    fn sup_nonpositive(&self) -> Result<ThresholdPick> {
        let m = self.breaks.len();
        let both_fixed = self.r_mu.is_some() && self.r_e.is_some();
        for t in (0..=m).rev() {
            let lo = if t == 0 { 0.0 } else { self.breaks[t - 1] };
            let hi = if t == m { 1.0 } else { self.breaks[t] };
            let f_hi = self.eval_at_level(hi, t);
            if f_hi <= 0.0 {
                // The nonpositive region reaches this segment's right edge:
                // either the criterion never crosses (b = 1) or it jumps
                // across zero exactly at the next breakpoint.
                return Ok(if t == m {
                    ThresholdPick { b: 1.0, branch: ThresholdBranch::Saturated }
                } else {
                    ThresholdPick { b: hi, branch: ThresholdBranch::RootCrossing }
                });
            }
            if hi <= lo {
                continue; // degenerate segment (a breakpoint at 1.0)
            }
            let f_lo = self.eval_at_level(lo, t);
            if f_lo <= 0.0 {
                let b = self.bisect(lo, hi, t);
                return Ok(ThresholdPick { b, branch: ThresholdBranch::RootCrossing });
            }
            if both_fixed {
                // Both endpoints positive; look for an interior dip. With
                // fixed bounds the criterion is a/sqrt(sm) + c*sqrt(sm) - k,
                // minimized where sm = a/c, and sm(b) = (T/b^2 + S)/n.
                let (all_below, treated_below, sum_above) = self.counts_at(t);
                if treated_below > 0 && all_below > 0 {
                    let a = self.r_mu.unwrap() * all_below as f64 / self.n;
                    let c = self.r_mu.unwrap() * self.r_e.unwrap();
                    let sm_star = a / c;
                    let denom = self.n * sm_star - sum_above;
                    if denom > 0.0 {
                        let b_dip = (treated_below as f64 / denom).sqrt();
                        if lo < b_dip && b_dip < hi && self.eval_at_level(b_dip, t) <= 0.0 {
                            let b = self.bisect(b_dip, hi, t);
                            return Ok(ThresholdPick { b, branch: ThresholdBranch::RootCrossing });
                        }
                    }
                }
            }
        }
        Err(Error::Numerical(
            "the error-bound criterion is positive for every threshold in (0, 1]; \
             the supplied rate bounds are too large for this sample size"
                .into(),
        ))
    }
}

/// Selects the threshold from treatments and propensity predictions alone
/// (outcomes are deliberately not an input).
///
/// With a propensity rate bound but no regression bound, the propensity
/// bound itself is the threshold. Otherwise the threshold is the supremum of
/// the set where [`error_bound_diff`] is nonpositive, located by scanning
/// the distinct-propensity breakpoints and bisecting (50 iterations) inside
/// the bracketing segment; missing bounds default to the candidate `b`. A
/// criterion that is still nonpositive at 1 returns 1 with a saturation
/// flag; one that is positive everywhere (possible only when both bounds are
/// supplied) is an error.
pub fn rule_of_thumb_threshold(
    d: &[u8],
    e_hat: &[f64],
    r_mu: Option<&RateBound>,
    r_e: Option<&RateBound>,
) -> Result<ThresholdPick> {
    validate_sample(d, e_hat)?;
    let n = d.len();
    if d.iter().all(|&di| di == 0) {
        return Err(Error::Degenerate(
            "threshold selection needs at least one treated observation".into(),
        ));
    }
    let r_mu_at_n = r_mu.map(|b| validated_rate(b, n, "regression")).transpose()?;
    let r_e_at_n = r_e.map(|b| validated_rate(b, n, "propensity")).transpose()?;
    if r_mu_at_n.is_none() {
        if let Some(re) = r_e_at_n {
            return Ok(ThresholdPick { b: re, branch: ThresholdBranch::PropensityRateBound });
        }
    }
    CriterionEvaluator::build(d, e_hat, r_mu_at_n, r_e_at_n).sup_nonpositive()
}

// ---------------------------------------------------------------------------
// Smoothness-based threshold and feasibility diagnostics
// ---------------------------------------------------------------------------

/// A threshold derived from smoothness exponents alone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SmoothnessThreshold {
    pub b: f64,
    /// True when the raw formula value exceeded 0.5 and was capped — the
    /// sample is too small for the asymptotic formula to be meaningful.
    pub pre_asymptotic: bool,
}

/// `n^{-beta_e/(2 beta_e + d)} * ln(n)^{(3 beta_e + d)/(2 beta_e + d)}`,
/// capped at 0.5 (capping sets the pre-asymptotic flag). Requires `n >= 3`.
pub fn threshold_from_smoothness(beta_e: f64, d: usize, n: usize) -> Result<SmoothnessThreshold> {
    if !(beta_e > 0.0) || !beta_e.is_finite() {
        return Err(Error::InvalidInput(format!(
            "smoothness order must be positive, got {beta_e}"
        )));
    }
    if d == 0 {
        return Err(Error::InvalidInput("dimension must be at least 1".into()));
    }
    if n < 3 {
        return Err(Error::InvalidInput(format!("need n >= 3, got {n}")));
    }
    let nf = n as f64;
    let df = d as f64;
    let denom = 2.0 * beta_e + df;
    let raw = nf.powf(-beta_e / denom) * nf.ln().powf((3.0 * beta_e + df) / denom);
    if raw > 0.5 {
        Ok(SmoothnessThreshold { b: 0.5, pre_asymptotic: true })
    } else {
        Ok(SmoothnessThreshold { b: raw, pre_asymptotic: false })
    }
}

/// Outcome of the smoothness/overlap feasibility inequality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FeasibilityCheck {
    /// True when the margin is strictly positive.
    pub feasible: bool,
    /// Left-hand side of the inequality minus 1/2.
    pub margin: f64,
}

/// Checks the feasibility inequality
/// `beta_mu (1 - 1/gamma0) / (2 beta_mu (1 - 1/gamma0) + d)
///  + beta_e min{gamma0/2, 1} / (2 beta_e + d) > 1/2`.
pub fn smoothness_feasible(
    beta_mu: f64,
    beta_e: f64,
    d: usize,
    gamma0: f64,
) -> Result<FeasibilityCheck> {
    for (v, name) in [(beta_mu, "regression smoothness"), (beta_e, "propensity smoothness")] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::InvalidInput(format!("{name} must be positive, got {v}")));
        }
    }
    if d == 0 {
        return Err(Error::InvalidInput("dimension must be at least 1".into()));
    }
    if !(gamma0 > 1.0) || !gamma0.is_finite() {
        return Err(Error::InvalidInput(format!(
            "overlap order gamma0 must exceed 1, got {gamma0}"
        )));
    }
    let df = d as f64;
    let effective_mu = beta_mu * (1.0 - 1.0 / gamma0);
    let lhs = effective_mu / (2.0 * effective_mu + df)
        + beta_e * (gamma0 / 2.0).min(1.0) / (2.0 * beta_e + df);
    let margin = lhs - 0.5;
    Ok(FeasibilityCheck { feasible: margin > 0.0, margin })
}

/// The smallest overlap order `gamma0` for which inference at smoothness
/// `beta` (for both nuisances) in dimension `d` can work:
/// `max{(2 beta^2 + 2 beta d + d^2) / (beta (2 beta + d)),
///      4 beta^2 / (4 beta^2 - d^2)}`.
/// Returns `None` when `4 beta^2 <= d^2` — the second expression has no
/// positive finite value, so no overlap order suffices at this smoothness.
pub fn min_gamma_supported(beta: f64, d: usize) -> Result<Option<f64>> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::InvalidInput(format!("smoothness must be positive, got {beta}")));
    }
    if d == 0 {
        return Err(Error::InvalidInput("dimension must be at least 1".into()));
    }
    let df = d as f64;
    let four_beta_sq = 4.0 * beta * beta;
    if four_beta_sq <= df * df {
        return Ok(None);
    }
    let first = (2.0 * beta * beta + 2.0 * beta * df + df * df) / (beta * (2.0 * beta + df));
    let second = four_beta_sq / (four_beta_sq - df * df);
    Ok(Some(first.max(second)))
}

// ---------------------------------------------------------------------------
// Rate-condition diagnostics
// ---------------------------------------------------------------------------

/// Verdict for one finite-sample rate diagnostic. The quantities are
/// asymptotic smallness conditions, so the bands are heuristic: below 0.5
/// passes, [0.5, 1.0] warns, above 1.0 fails.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Warn,
    Fail,
    /// The quantity needs the overlap order and none was supplied.
    NotEvaluated,
}

fn verdict_for(value: f64) -> Verdict {
    if value < 0.5 {
        Verdict::Pass
    } else if value <= 1.0 {
        Verdict::Warn
    } else {
        Verdict::Fail
    }
}

/// One evaluated rate condition.
#[derive(Debug, Clone, Serialize)]
pub struct RateCondition {
    pub name: &'static str,
    /// The finite-sample value of the asymptotic smallness quantity, when
    /// evaluable.
    pub value: Option<f64>,
    pub verdict: Verdict,
}

/// Finite-sample rate-condition diagnostics at a chosen threshold.
#[derive(Debug, Clone, Serialize)]
pub struct RateConditionReport {
    pub b: f64,
    pub n: usize,
    pub conditions: Vec<RateCondition>,
}

/// Evaluates the three rate conditions at sample size `n` and threshold `b`:
///
/// 1. `propensity_error_vs_threshold`: `r_e(n) / b`
/// 2. `error_product`:
///    `sqrt(n) r_mu(n) r_e(n) (1 + b^{(gamma0-2)/2} ln(1/b)^{1{gamma0=2}/2})`
/// 3. `regression_error_small_propensity`: `sqrt(n) r_mu(n) b^{gamma0/2}`
///
/// Conditions 2 and 3 need `gamma0` and report `NotEvaluated` without it.
pub fn check_rate_conditions(
    b: f64,
    r_mu: &RateBound,
    r_e: &RateBound,
    n: usize,
    gamma0: Option<f64>,
) -> Result<RateConditionReport> {
    if !b.is_finite() || !(b > 0.0 && b <= 1.0) {
        return Err(Error::InvalidInput(format!("threshold {b} outside (0, 1]")));
    }
    if n == 0 {
        return Err(Error::InvalidInput("need a positive sample size".into()));
    }
    if let Some(g) = gamma0 {
        if !(g > 1.0) || !g.is_finite() {
            return Err(Error::InvalidInput(format!(
                "overlap order gamma0 must exceed 1, got {g}"
            )));
        }
    }
    let r_mu_val = validated_rate(r_mu, n, "regression")?;
    let r_e_val = validated_rate(r_e, n, "propensity")?;
    let root_n = (n as f64).sqrt();

    let mut conditions = Vec::with_capacity(3);
    let ratio = r_e_val / b;
    conditions.push(RateCondition {
        name: "propensity_error_vs_threshold",
        value: Some(ratio),
        verdict: verdict_for(ratio),
    });

    match gamma0 {
        Some(g) => {
            let log_correction =
                if g == 2.0 { (1.0 / b).ln().sqrt() } else { b.powf((g - 2.0) / 2.0) };
            let product = root_n * r_mu_val * r_e_val * (1.0 + log_correction);
            conditions.push(RateCondition {
                name: "error_product",
                value: Some(product),
                verdict: verdict_for(product),
            });
            let small_prop = root_n * r_mu_val * b.powf(g / 2.0);
            conditions.push(RateCondition {
                name: "regression_error_small_propensity",
                value: Some(small_prop),
                verdict: verdict_for(small_prop),
            });
        }
        None => {
            for name in ["error_product", "regression_error_small_propensity"] {
                conditions.push(RateCondition {
                    name,
                    value: None,
                    verdict: Verdict::NotEvaluated,
                });
            }
        }
    }

    Ok(RateConditionReport { b, n, conditions })
}
