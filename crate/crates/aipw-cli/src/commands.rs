//! The four workflows behind the subcommands. Each is a thin shell over
//! library operations: parse flags, call the library, serialize a report.
//! Reports go to stdout as pretty JSON; `--out` additionally writes files.

use std::path::Path;

use serde::Serialize;

use aipw::stats::normal_quantile;
use aipw::{
    assign_folds, bootstrap_se, cross_fit, cross_fit_with_folds, error_bound_diff, estimate_apo,
    estimate_ate, fixed_trim_sample, rate_experiment, rule_of_thumb_threshold,
    threshold_from_smoothness, wald_ci, BandwidthSpec, BootstrapSummary, Dataset, Error,
    EstimatorKind, EstimatorSpec, FoldAssignment, KernelSpec, MonteCarloSettings, Observation,
    OutcomeMethod, PropensityMethod, RateBound, RateConditionReport, Result, ThresholdBranch,
    ThresholdMode, ThresholdProvenance, ThresholdRule, ThresholdSpec, check_rate_conditions,
    run_monte_carlo, DgpConfig,
};

use crate::args::{
    Cli, Command, EstimateArgs, ModeArg, RateExperimentArgs, SimulateArgs, Target, ThresholdArgs,
};
use crate::ingest::{self, CovariateSelection};

/// Runs one parsed invocation and returns the JSON report for stdout.
pub fn run(cli: Cli) -> Result<String> {
    match &cli.command {
        Command::Estimate(a) => cmd_estimate(a),
        Command::Threshold(a) => cmd_threshold(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::RateExperiment(a) => cmd_rate_experiment(a),
    }
}

// ---------------------------------------------------------------------------
// Flag parsing helpers
// ---------------------------------------------------------------------------

/// "auto" or a comma-separated column list.
pub fn parse_covariates(s: &str) -> Result<CovariateSelection> {
    let t = s.trim();
    if t.eq_ignore_ascii_case("auto") {
        return Ok(CovariateSelection::Auto);
    }
    let names: Vec<String> =
        t.split(',').map(str::trim).filter(|p| !p.is_empty()).map(str::to_string).collect();
    if names.is_empty() {
        return Err(Error::InvalidInput(format!(
            "--covariates must be \"auto\" or a comma-separated column list, got {s:?}"
        )));
    }
    Ok(CovariateSelection::Named(names))
}

/// "none", a plain number, or "<scale>:<exponent>" for scale * n^-exponent.
pub fn parse_rate_bound(s: &str, which: &str) -> Result<Option<RateBound>> {
    let t = s.trim();
    if t.eq_ignore_ascii_case("none") {
        return Ok(None);
    }
    if let Some((scale, exponent)) = t.split_once(':') {
        let scale: f64 = scale.trim().parse().map_err(|_| {
            Error::InvalidInput(format!("{which} bound scale {scale:?} is not a number"))
        })?;
        let exponent: f64 = exponent.trim().parse().map_err(|_| {
            Error::InvalidInput(format!("{which} bound exponent {exponent:?} is not a number"))
        })?;
        return Ok(Some(RateBound::PowerLaw { scale, exponent }));
    }
    let value: f64 = t.parse().map_err(|_| {
        Error::InvalidInput(format!(
            "{which} bound must be \"none\", a number, or \"<scale>:<exponent>\", got {s:?}"
        ))
    })?;
    Ok(Some(RateBound::Constant(value)))
}

enum ThresholdChoice {
    Auto,
    Fixed(f64),
    Smoothness(f64),
}

fn parse_threshold_choice(s: &str) -> Result<ThresholdChoice> {
    let t = s.trim();
    if t.eq_ignore_ascii_case("auto") {
        return Ok(ThresholdChoice::Auto);
    }
    if let Some(rest) = t.strip_prefix("smoothness:") {
        let beta_e: f64 = rest.trim().parse().map_err(|_| {
            Error::InvalidInput(format!("smoothness order {rest:?} is not a number"))
        })?;
        return Ok(ThresholdChoice::Smoothness(beta_e));
    }
    let value: f64 = t.parse().map_err(|_| {
        Error::InvalidInput(format!(
            "--threshold must be \"auto\", a number, or \"smoothness:<beta_e>\", got {s:?}"
        ))
    })?;
    Ok(ThresholdChoice::Fixed(value))
}

fn parse_window(s: &str) -> Result<(f64, f64)> {
    let bad = || Error::InvalidInput(format!("--compare-trim wants \"lo,hi\", got {s:?}"));
    let (lo, hi) = s.split_once(',').ok_or_else(bad)?;
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    Ok((lo, hi))
}

/// Comma list of estimator labels; duplicates are rejected because they
/// would double-count rows in the per-replication output.
pub fn parse_estimators(s: &str) -> Result<Vec<EstimatorSpec>> {
    let mut specs: Vec<EstimatorSpec> = Vec::new();
    for piece in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let spec = match piece {
            "aipw" => EstimatorSpec { kind: EstimatorKind::Aipw, mode: ThresholdMode::None },
            "ipw" => EstimatorSpec { kind: EstimatorKind::Ipw, mode: ThresholdMode::None },
            "clipped-aipw" => {
                EstimatorSpec { kind: EstimatorKind::Aipw, mode: ThresholdMode::Clip }
            }
            "clipped-ipw" => EstimatorSpec { kind: EstimatorKind::Ipw, mode: ThresholdMode::Clip },
            "trimmed-aipw" => {
                EstimatorSpec { kind: EstimatorKind::Aipw, mode: ThresholdMode::Trim }
            }
            "trimmed-ipw" => EstimatorSpec { kind: EstimatorKind::Ipw, mode: ThresholdMode::Trim },
            other => {
                return Err(Error::InvalidInput(format!(
                    "unknown estimator {other:?}; choose from aipw, ipw, clipped-aipw, \
                     clipped-ipw, trimmed-aipw, trimmed-ipw"
                )))
            }
        };
        if specs.contains(&spec) {
            return Err(Error::InvalidInput(format!("estimator {piece:?} listed twice")));
        }
        specs.push(spec);
    }
    if specs.is_empty() {
        return Err(Error::InvalidInput("--estimators must name at least one estimator".into()));
    }
    Ok(specs)
}

fn parse_sizes(s: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for piece in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        out.push(piece.parse::<usize>().map_err(|_| {
            Error::InvalidInput(format!("sample size {piece:?} is not a positive integer"))
        })?);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Report emission
// ---------------------------------------------------------------------------

fn to_pretty<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map_err(|e| Error::Numerical(format!("report serialization failed: {e}")))
}

fn write_text(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content)
        .map_err(|e| Error::InvalidInput(format!("cannot write {}: {e}", path.display())))
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<String> {
    let json = to_pretty(value)?;
    if let Some(path) = out {
        write_text(path, &format!("{json}\n"))?;
    }
    Ok(json)
}

// ---------------------------------------------------------------------------
// estimate
// ---------------------------------------------------------------------------

/// The thresholding policy as reported: the [`ThresholdSpec`] fields plus,
/// when a rule selected the value, which rule branch fired.
#[derive(Debug, Serialize)]
pub struct ThresholdReport {
    #[serde(flatten)]
    pub spec: ThresholdSpec,
    /// Crossing-rule branch for an auto-selected lower threshold.
    pub branch: Option<ThresholdBranch>,
    /// Crossing-rule branch for an auto-selected upper threshold.
    pub upper_branch: Option<ThresholdBranch>,
    /// Set when the smoothness formula capped at 0.5 (sample too small for
    /// the asymptotic formula).
    pub pre_asymptotic: Option<bool>,
}

/// One arm's estimate with its Wald interval.
#[derive(Debug, Serialize)]
pub struct ArmReport {
    pub psi_hat: f64,
    pub sigma_hat: f64,
    pub ci: [f64; 2],
    pub n_thresholded: usize,
}

/// The reported estimand: a treatment effect with its two arms, or a single
/// average potential outcome.
#[derive(Debug, Serialize)]
#[serde(untagged)]
pub enum EstimandReport {
    Ate { ate: f64, se: f64, ci: [f64; 2], arm_treated: ArmReport, arm_control: ArmReport },
    Apo { psi_hat: f64, sigma_hat: f64, ci: [f64; 2], n_thresholded: usize },
}

/// The unthresholded estimate on a fixed propensity window, next to the
/// full-sample thresholded estimate.
#[derive(Debug, Serialize)]
pub struct TrimComparison {
    pub window: [f64; 2],
    pub kept: usize,
    pub dropped: usize,
    pub estimate: EstimandReport,
}

#[derive(Debug, Serialize)]
pub struct EstimateReport {
    pub schema_version: u32,
    pub command: &'static str,
    pub input: String,
    pub n: usize,
    pub dim: usize,
    pub covariates: Vec<String>,
    pub target: &'static str,
    pub folds: usize,
    pub seed: u64,
    pub alpha: f64,
    pub threshold: ThresholdReport,
    pub estimate: EstimandReport,
    pub bootstrap: Option<BootstrapSummary>,
    pub compare_trim: Option<TrimComparison>,
}

fn flipped_treatment(data: &Dataset) -> Result<Dataset> {
    let observations = data
        .observations()
        .iter()
        .map(|o| Observation { d: 1 - o.d, y: o.y, x: o.x.clone() })
        .collect();
    Dataset::new(observations, data.dim())
}

/// Builds the estimand report from out-of-fold predictions; `mu0_hat`
/// present means a treatment effect, absent means the treated-arm average
/// potential outcome.
fn estimand_report(
    data: &Dataset,
    e_hat: &[f64],
    mu1_hat: &[f64],
    mu0_hat: Option<&[f64]>,
    spec: &ThresholdSpec,
    alpha: f64,
) -> Result<EstimandReport> {
    match mu0_hat {
        None => {
            let est = estimate_apo(data, e_hat, mu1_hat, spec)?;
            let ci = wald_ci(&est, alpha)?;
            Ok(EstimandReport::Apo {
                psi_hat: est.psi_hat,
                sigma_hat: est.sigma_hat,
                ci: [ci.0, ci.1],
                n_thresholded: est.n_thresholded,
            })
        }
        Some(mu0_hat) => {
            let est = estimate_ate(data, e_hat, mu1_hat, mu0_hat, spec)?;
            let z = normal_quantile(1.0 - alpha / 2.0)?;
            let ci1 = wald_ci(&est.arm1, alpha)?;
            let ci0 = wald_ci(&est.arm0, alpha)?;
            Ok(EstimandReport::Ate {
                ate: est.ate,
                se: est.se,
                ci: [est.ate - z * est.se, est.ate + z * est.se],
                arm_treated: ArmReport {
                    psi_hat: est.arm1.psi_hat,
                    sigma_hat: est.arm1.sigma_hat,
                    ci: [ci1.0, ci1.1],
                    n_thresholded: est.arm1.n_thresholded,
                },
                arm_control: ArmReport {
                    psi_hat: est.arm0.psi_hat,
                    sigma_hat: est.arm0.sigma_hat,
                    ci: [ci0.0, ci0.1],
                    n_thresholded: est.arm0.n_thresholded,
                },
            })
        }
    }
}

/// The nuisance stack the CLI fits on ingested data: cross-fitted logistic
/// propensity and hard-window local-linear outcome regression (works in any
/// covariate dimension).
fn cli_methods() -> (PropensityMethod, OutcomeMethod) {
    (
        PropensityMethod::LogisticIrls,
        OutcomeMethod::LocalLinear {
            bandwidth: BandwidthSpec::InverseFifthRoot,
            kernel: KernelSpec::Uniform,
        },
    )
}

pub fn cmd_estimate(a: &EstimateArgs) -> Result<String> {
    let table = ingest::read_table(&a.input)?;
    let selection = parse_covariates(&a.covariates)?;
    let ingested = ingest::build_dataset(&table, &a.treatment, Some(&a.outcome), &selection, &[])?;
    let data = &ingested.data;
    let n = data.len();

    let folds = assign_folds(n, a.folds, a.seed)?;
    let (propensity, outcome) = cli_methods();
    let fit = cross_fit_with_folds(data, &folds, &propensity, &outcome)?;
    let mu0_hat: Option<Vec<f64>> = match a.target {
        Target::Ate => {
            let flipped = flipped_treatment(data)?;
            Some(cross_fit_with_folds(&flipped, &folds, &propensity, &outcome)?.mu_hat)
        }
        Target::Apo => None,
    };

    let r_mu = parse_rate_bound(&a.r_mu, "outcome-regression")?;
    let r_e = parse_rate_bound(&a.r_e, "propensity")?;
    let d = data.treatments();
    let (b, provenance, branch, pre_asymptotic) = match parse_threshold_choice(&a.threshold)? {
        ThresholdChoice::Auto => {
            let pick = rule_of_thumb_threshold(&d, &fit.e_hat, r_mu.as_ref(), r_e.as_ref())?;
            if pick.b >= 1.0 {
                return Err(Error::Degenerate(
                    "the selected threshold saturated at 1: every propensity would be clamped"
                        .into(),
                ));
            }
            (pick.b, ThresholdProvenance::RuleOfThumb, Some(pick.branch), None)
        }
        ThresholdChoice::Fixed(value) => (value, ThresholdProvenance::Fixed, None, None),
        ThresholdChoice::Smoothness(beta_e) => {
            let st = threshold_from_smoothness(beta_e, data.dim(), n)?;
            (st.b, ThresholdProvenance::SmoothnessRule, None, Some(st.pre_asymptotic))
        }
    };

    let mut spec = match a.mode {
        ModeArg::Clip => ThresholdSpec::clip(b)?,
        ModeArg::Trim => ThresholdSpec::trim(b)?,
    }
    .with_provenance(provenance);

    let mut upper_branch = None;
    if let Some(upper) = &a.upper {
        let value = if upper.trim().eq_ignore_ascii_case("auto") {
            let flipped_d: Vec<u8> = d.iter().map(|&v| 1 - v).collect();
            let flipped_e: Vec<f64> = fit.e_hat.iter().map(|e| 1.0 - e).collect();
            let pick =
                rule_of_thumb_threshold(&flipped_d, &flipped_e, r_mu.as_ref(), r_e.as_ref())?;
            upper_branch = Some(pick.branch);
            pick.b
        } else {
            upper.trim().parse::<f64>().map_err(|_| {
                Error::InvalidInput(format!(
                    "--upper must be a number or \"auto\", got {upper:?}"
                ))
            })?
        };
        spec = spec.with_upper(value)?;
    }

    let estimate = estimand_report(data, &fit.e_hat, &fit.mu_hat, mu0_hat.as_deref(), &spec, a.alpha)?;

    let bootstrap = if a.bootstrap > 0 {
        let target = a.target;
        let summary = bootstrap_se(
            data,
            |sample: &Dataset, sources: &[usize]| {
                // Resampled rows inherit their source row's fold label, so
                // the fold structure is frozen across replicates.
                let labels: Vec<usize> =
                    sources.iter().map(|&i| folds.fold_of()[i]).collect();
                let rfolds = FoldAssignment::from_labels(labels, folds.k())?;
                let f1 = cross_fit_with_folds(sample, &rfolds, &propensity, &outcome)?;
                match target {
                    Target::Apo => {
                        estimate_apo(sample, &f1.e_hat, &f1.mu_hat, &spec).map(|e| e.psi_hat)
                    }
                    Target::Ate => {
                        let flipped = flipped_treatment(sample)?;
                        let f0 = cross_fit_with_folds(&flipped, &rfolds, &propensity, &outcome)?;
                        estimate_ate(sample, &f1.e_hat, &f1.mu_hat, &f0.mu_hat, &spec)
                            .map(|e| e.ate)
                    }
                }
            },
            a.bootstrap,
            a.seed,
        )?;
        Some(summary)
    } else {
        None
    };

    let compare_trim = match &a.compare_trim {
        Some(window) => {
            let (lo, hi) = parse_window(window)?;
            let trimmed = fixed_trim_sample(data, &fit.e_hat, lo, hi)?;
            let mu1_kept: Vec<f64> =
                trimmed.kept_indices.iter().map(|&i| fit.mu_hat[i]).collect();
            let mu0_kept: Option<Vec<f64>> = mu0_hat
                .as_ref()
                .map(|m| trimmed.kept_indices.iter().map(|&i| m[i]).collect());
            let estimate = estimand_report(
                &trimmed.data,
                &trimmed.e_hat,
                &mu1_kept,
                mu0_kept.as_deref(),
                &ThresholdSpec::none(),
                a.alpha,
            )?;
            Some(TrimComparison {
                window: [lo, hi],
                kept: trimmed.kept_indices.len(),
                dropped: n - trimmed.kept_indices.len(),
                estimate,
            })
        }
        None => None,
    };

    let report = EstimateReport {
        schema_version: 1,
        command: "estimate",
        input: a.input.display().to_string(),
        n,
        dim: data.dim(),
        covariates: ingested.feature_names,
        target: match a.target {
            Target::Ate => "ate",
            Target::Apo => "apo",
        },
        folds: a.folds,
        seed: a.seed,
        alpha: a.alpha,
        threshold: ThresholdReport { spec, branch, upper_branch, pre_asymptotic },
        estimate,
        bootstrap,
        compare_trim,
    };
    emit(&report, a.out.as_deref())
}

// ---------------------------------------------------------------------------
// threshold
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
pub struct CurvePoint {
    pub b: f64,
    pub value: f64,
}

#[derive(Debug, Serialize)]
pub struct PickReport {
    pub b: f64,
    pub branch: ThresholdBranch,
}

#[derive(Debug, Serialize)]
pub struct ThresholdCmdReport {
    pub schema_version: u32,
    pub command: &'static str,
    pub input: String,
    pub n: usize,
    pub treated: usize,
    /// "column:<name>" when supplied, otherwise "cross-fitted logistic".
    pub propensity_source: String,
    pub seed: u64,
    pub b_star: f64,
    pub branch: ThresholdBranch,
    /// Threshold on 1 - propensity, when requested.
    pub upper: Option<PickReport>,
    /// The crossing criterion sampled at 200 evenly spaced points of (0, 1):
    /// nonpositive where the threshold is admissible.
    pub curve: Vec<CurvePoint>,
    /// Finite-sample rate diagnostics; needs both error bounds.
    pub rate_conditions: Option<RateConditionReport>,
}

const CURVE_POINTS: usize = 200;

pub fn cmd_threshold(a: &ThresholdArgs) -> Result<String> {
    let table = ingest::read_table(&a.input)?;
    let (d, e_hat, propensity_source) = match &a.propensity_col {
        Some(col) => {
            let d = ingest::treatment_column(&table, &a.treatment)?;
            let e = ingest::numeric_column(&table, col)?;
            for (i, v) in e.iter().enumerate() {
                if !(*v > 0.0 && *v <= 1.0) {
                    return Err(Error::InvalidInput(format!(
                        "row {}, column {col:?}: propensity {v} outside (0, 1]",
                        i + 1
                    )));
                }
            }
            (d, e, format!("column:{col}"))
        }
        None => {
            let selection = parse_covariates(&a.covariates)?;
            let ingested =
                ingest::build_dataset(&table, &a.treatment, a.outcome.as_deref(), &selection, &[])?;
            // Threshold selection never reads outcomes, so the cheapest
            // outcome model accompanies the logistic propensity fit.
            let fit = cross_fit(
                &ingested.data,
                a.folds,
                &PropensityMethod::LogisticIrls,
                &OutcomeMethod::ConstantMean,
                a.seed,
            )?;
            (ingested.data.treatments(), fit.e_hat, "cross-fitted logistic".to_string())
        }
    };

    let n = d.len();
    let r_mu = parse_rate_bound(&a.r_mu, "outcome-regression")?;
    let r_e = parse_rate_bound(&a.r_e, "propensity")?;
    let pick = rule_of_thumb_threshold(&d, &e_hat, r_mu.as_ref(), r_e.as_ref())?;

    let r_mu_at_n = r_mu.as_ref().map(|bound| bound.at(n));
    let r_e_at_n = r_e.as_ref().map(|bound| bound.at(n));
    let mut curve = Vec::with_capacity(CURVE_POINTS);
    for j in 1..=CURVE_POINTS {
        let b = j as f64 / (CURVE_POINTS + 1) as f64;
        let value = error_bound_diff(b, &d, &e_hat, r_mu_at_n, r_e_at_n)?;
        curve.push(CurvePoint { b, value });
    }

    let upper = if a.upper {
        let flipped_d: Vec<u8> = d.iter().map(|&v| 1 - v).collect();
        let flipped_e: Vec<f64> = e_hat.iter().map(|e| 1.0 - e).collect();
        let p = rule_of_thumb_threshold(&flipped_d, &flipped_e, r_mu.as_ref(), r_e.as_ref())?;
        Some(PickReport { b: p.b, branch: p.branch })
    } else {
        None
    };

    let rate_conditions = match (&r_mu, &r_e) {
        (Some(m), Some(e)) => Some(check_rate_conditions(pick.b, m, e, n, a.gamma0)?),
        _ => None,
    };

    let report = ThresholdCmdReport {
        schema_version: 1,
        command: "threshold",
        input: a.input.display().to_string(),
        n,
        treated: d.iter().filter(|&&v| v == 1).count(),
        propensity_source,
        seed: a.seed,
        b_star: pick.b,
        branch: pick.branch,
        upper,
        curve,
        rate_conditions,
    };
    emit(&report, a.out.as_deref())
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

pub fn cmd_simulate(a: &SimulateArgs) -> Result<String> {
    let config = DgpConfig::new(a.gamma, a.kappa, a.demean.into())?;
    let estimators = parse_estimators(&a.estimators)?;
    let threshold = {
        let t = a.threshold.trim();
        if t.eq_ignore_ascii_case("auto") {
            ThresholdRule::RuleOfThumb
        } else {
            ThresholdRule::Fixed(t.parse::<f64>().map_err(|_| {
                Error::InvalidInput(format!(
                    "--threshold must be \"auto\" or a number, got {t:?}"
                ))
            })?)
        }
    };
    let settings = MonteCarloSettings {
        config,
        n: a.n,
        reps: a.reps,
        estimators,
        nuisance: a.nuisance.into(),
        folds: a.folds,
        threshold,
        alpha: a.alpha,
        master_seed: a.seed,
    };
    let report = run_monte_carlo(&settings)?;

    // The JSON summary carries the aggregates; the per-replication rows go
    // to the CSV instead of being duplicated here.
    let mut summary = serde_json::to_value(&report)
        .map_err(|e| Error::Numerical(format!("report serialization failed: {e}")))?;
    summary
        .as_object_mut()
        .expect("the run report serializes as an object")
        .remove("replications");

    if let Some(prefix) = &a.out {
        let json_path = format!("{}.json", prefix.display());
        let csv_path = format!("{}.csv", prefix.display());
        let json = to_pretty(&summary)?;
        write_text(Path::new(&json_path), &format!("{json}\n"))?;
        write_text(Path::new(&csv_path), &report.to_csv_string())?;
    }
    to_pretty(&summary)
}

// ---------------------------------------------------------------------------
// rate-experiment
// ---------------------------------------------------------------------------

pub fn cmd_rate_experiment(a: &RateExperimentArgs) -> Result<String> {
    let ns = parse_sizes(&a.ns)?;
    let report = rate_experiment(a.beta_mu, a.gamma0, &ns, a.reps, a.seed)?;
    let mut value = serde_json::to_value(&report)
        .map_err(|e| Error::Numerical(format!("report serialization failed: {e}")))?;
    let object = value.as_object_mut().expect("the experiment report serializes as an object");
    object.insert("schema_version".into(), serde_json::json!(1));
    object.insert("command".into(), serde_json::json!("rate-experiment"));
    emit(&value, a.out.as_deref())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_bound_forms_parse() {
        assert_eq!(parse_rate_bound("none", "x").unwrap(), None);
        assert_eq!(parse_rate_bound("NONE", "x").unwrap(), None);
        assert_eq!(parse_rate_bound("0.07", "x").unwrap(), Some(RateBound::Constant(0.07)));
        assert_eq!(
            parse_rate_bound("1.5:0.2", "x").unwrap(),
            Some(RateBound::PowerLaw { scale: 1.5, exponent: 0.2 })
        );
        assert!(parse_rate_bound("seven", "x").is_err());
        assert!(parse_rate_bound("1:two", "x").is_err());
    }

    #[test]
    fn threshold_choice_forms_parse() {
        assert!(matches!(parse_threshold_choice("auto").unwrap(), ThresholdChoice::Auto));
        assert!(matches!(
            parse_threshold_choice("0.1").unwrap(),
            ThresholdChoice::Fixed(v) if v == 0.1
        ));
        assert!(matches!(
            parse_threshold_choice("smoothness:1.5").unwrap(),
            ThresholdChoice::Smoothness(v) if v == 1.5
        ));
        assert!(parse_threshold_choice("smoothness:soft").is_err());
        assert!(parse_threshold_choice("maybe").is_err());
    }

    #[test]
    fn estimator_lists_parse_and_reject_duplicates() {
        let specs = parse_estimators("aipw,clipped-aipw,trimmed-ipw").unwrap();
        assert_eq!(specs.len(), 3);
        assert_eq!(specs[1].label(), "clipped-aipw");
        assert!(parse_estimators("aipw,aipw").is_err());
        assert!(parse_estimators("winsorized-aipw").is_err());
        assert!(parse_estimators("").is_err());
    }

    #[test]
    fn covariate_selection_parses() {
        assert_eq!(parse_covariates("auto").unwrap(), CovariateSelection::Auto);
        assert_eq!(
            parse_covariates("x1, x2").unwrap(),
            CovariateSelection::Named(vec!["x1".into(), "x2".into()])
        );
        assert!(parse_covariates(" , ").is_err());
    }

    #[test]
    fn trim_window_parses() {
        assert_eq!(parse_window("0.1,0.9").unwrap(), (0.1, 0.9));
        assert!(parse_window("0.1").is_err());
        assert!(parse_window("lo,hi").is_err());
    }
}
