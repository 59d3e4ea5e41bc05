//! Command-line declarations. Every flag that steers a stochastic run has a
//! fixed default seed, so repeated invocations reproduce byte-identical
//! reports unless the caller asks otherwise.

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

/// Doubly robust treatment-effect estimation under weak overlap, with
/// data-driven propensity thresholding.
#[derive(Debug, Parser)]
#[command(name = "aipw", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate a treatment effect or average potential outcome from a CSV file
    Estimate(EstimateArgs),
    /// Select a propensity threshold and print the crossing-rule diagnostics
    Threshold(ThresholdArgs),
    /// Monte Carlo calibration experiment on synthetic weak-overlap data
    Simulate(SimulateArgs),
    /// Convergence-rate experiment for the adaptive outcome regressor
    RateExperiment(RateExperimentArgs),
}

/// What the `estimate` command reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Target {
    /// Average treatment effect (difference of the two arm estimates).
    Ate,
    /// Average potential outcome under treatment.
    Apo,
}

/// How extreme propensities are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    /// Clamp the inverse-weight denominator at the threshold.
    Clip,
    /// Zero the inverse-weight correction below the threshold.
    Trim,
}

#[derive(Debug, clap::Args)]
pub struct EstimateArgs {
    /// Input CSV file (header row required)
    #[arg(long)]
    pub input: PathBuf,

    /// Treatment column: values 0/1 or true/false
    #[arg(long)]
    pub treatment: String,

    /// Outcome column (numeric)
    #[arg(long)]
    pub outcome: String,

    /// Comma-separated covariate columns, or "auto" for every fully numeric
    /// column besides treatment and outcome. Named non-numeric columns are
    /// one-hot encoded with the first (sorted) level dropped.
    #[arg(long, default_value = "auto")]
    pub covariates: String,

    /// Estimand to report
    #[arg(long, value_enum, default_value_t = Target::Ate)]
    pub target: Target,

    /// Cross-fitting folds
    #[arg(long, default_value_t = 5)]
    pub folds: usize,

    /// Lower propensity threshold: "auto" (data-driven crossing rule), a
    /// number in [0, 1), or "smoothness:<beta_e>" (rate formula from the
    /// propensity smoothness order)
    #[arg(long, default_value = "auto")]
    pub threshold: String,

    /// Thresholding mode
    #[arg(long, value_enum, default_value_t = ModeArg::Clip)]
    pub mode: ModeArg,

    /// Upper threshold applied to 1 - propensity: a number in (0, 1] or
    /// "auto" (crossing rule on the flipped sample)
    #[arg(long)]
    pub upper: Option<String>,

    /// Outcome-regression error bound for the auto rule: "none", a number
    /// in (0, 1], or "<scale>:<exponent>" for scale * n^-exponent
    #[arg(long, default_value = "none")]
    pub r_mu: String,

    /// Propensity error bound for the auto rule: same forms as --r-mu
    #[arg(long, default_value = "none")]
    pub r_e: String,

    /// Level of the two-sided confidence interval (coverage 1 - alpha)
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,

    /// Bootstrap replicates for a resampling standard error (0 = off).
    /// Resamples inherit their source row's fold label, and the threshold
    /// selected on the full sample is held fixed across replicates.
    #[arg(long, default_value_t = 0)]
    pub bootstrap: usize,

    /// Also report the unthresholded estimate on the subsample with
    /// propensities inside this window, e.g. "0.1,0.9"
    #[arg(long, value_name = "LO,HI")]
    pub compare_trim: Option<String>,

    /// Seed for fold assignment and the bootstrap
    #[arg(long, default_value_t = 17)]
    pub seed: u64,

    /// Also write the JSON report to this file
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct ThresholdArgs {
    /// Input CSV file (header row required)
    #[arg(long)]
    pub input: PathBuf,

    /// Treatment column: values 0/1 or true/false
    #[arg(long)]
    pub treatment: String,

    /// Outcome column; optional because threshold selection never reads
    /// outcomes
    #[arg(long)]
    pub outcome: Option<String>,

    /// Covariates for the cross-fitted propensity fit (same forms as in
    /// `estimate`); ignored when --propensity-col is given
    #[arg(long, default_value = "auto")]
    pub covariates: String,

    /// Column holding already-fitted propensities in (0, 1]; skips the
    /// logistic fit
    #[arg(long)]
    pub propensity_col: Option<String>,

    /// Cross-fitting folds for the logistic propensity fit
    #[arg(long, default_value_t = 5)]
    pub folds: usize,

    /// Outcome-regression error bound: "none", a number in (0, 1], or
    /// "<scale>:<exponent>"
    #[arg(long, default_value = "none")]
    pub r_mu: String,

    /// Propensity error bound: same forms as --r-mu
    #[arg(long, default_value = "none")]
    pub r_e: String,

    /// Also select an upper threshold on 1 - propensity (flipped sample)
    #[arg(long, default_value_t = false)]
    pub upper: bool,

    /// Overlap tail order for the rate-condition diagnostics
    #[arg(long)]
    pub gamma0: Option<f64>,

    /// Seed for the fold assignment of the propensity fit
    #[arg(long, default_value_t = 17)]
    pub seed: u64,

    /// Also write the JSON report to this file
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Centering constant of the synthetic outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DemeanArg {
    /// Center so the true average potential outcome is exactly zero.
    ApoZero,
    /// Center by the mean of the observed treated signal instead.
    SignalMean,
}

impl From<DemeanArg> for aipw::DemeanMode {
    fn from(value: DemeanArg) -> Self {
        match value {
            DemeanArg::ApoZero => aipw::DemeanMode::ApoZero,
            DemeanArg::SignalMean => aipw::DemeanMode::SignalMean,
        }
    }
}

/// Where each replication's nuisance predictions come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NuisanceArg {
    /// True propensity and outcome-mean annotations.
    Oracle,
    /// Cross-fitted logistic propensity and local-linear outcome regression.
    Estimated,
    /// True outcome mean, cross-fitted propensity.
    OracleOutcome,
    /// True propensity, cross-fitted outcome regression.
    OraclePropensity,
}

impl From<NuisanceArg> for aipw::NuisanceSource {
    fn from(value: NuisanceArg) -> Self {
        match value {
            NuisanceArg::Oracle => aipw::NuisanceSource::Oracle,
            NuisanceArg::Estimated => aipw::NuisanceSource::Estimated,
            NuisanceArg::OracleOutcome => aipw::NuisanceSource::OracleOutcome,
            NuisanceArg::OraclePropensity => aipw::NuisanceSource::OraclePropensity,
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct SimulateArgs {
    /// Overlap tail order of the synthetic design (> 1; smaller = weaker
    /// overlap)
    #[arg(long)]
    pub gamma: f64,

    /// Signal scale of the treated outcome
    #[arg(long, default_value_t = 2.0)]
    pub kappa: f64,

    /// Centering of the synthetic outcome
    #[arg(long, value_enum, default_value_t = DemeanArg::ApoZero)]
    pub demean: DemeanArg,

    /// Observations per replication
    #[arg(long)]
    pub n: usize,

    /// Monte Carlo replications
    #[arg(long)]
    pub reps: usize,

    /// Comma list from {aipw, ipw, clipped-aipw, clipped-ipw, trimmed-aipw,
    /// trimmed-ipw}
    #[arg(long, default_value = "clipped-aipw")]
    pub estimators: String,

    /// Nuisance source for every replication
    #[arg(long, value_enum, default_value_t = NuisanceArg::Estimated)]
    pub nuisance: NuisanceArg,

    /// Cross-fitting folds (used by every nuisance source except oracle)
    #[arg(long, default_value_t = 5)]
    pub folds: usize,

    /// Threshold for clip/trim estimators: "auto" (per-replication crossing
    /// rule) or a fixed number
    #[arg(long, default_value = "auto")]
    pub threshold: String,

    /// Nominal test level for rejection-rate aggregation
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,

    /// Master seed; each replication derives its own stream from it
    #[arg(long, default_value_t = 17)]
    pub seed: u64,

    /// Output path prefix: writes <prefix>.json (summary) and <prefix>.csv
    /// (per-replication rows)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct RateExperimentArgs {
    /// Outcome-regression smoothness order
    #[arg(long, default_value_t = 1.0)]
    pub beta_mu: f64,

    /// Overlap tail order (> 1)
    #[arg(long)]
    pub gamma0: f64,

    /// Comma list of at least 3 strictly increasing sample sizes
    #[arg(long)]
    pub ns: String,

    /// Replications per sample size
    #[arg(long, default_value_t = 20)]
    pub reps: usize,

    /// Master seed
    #[arg(long, default_value_t = 17)]
    pub seed: u64,

    /// Also write the JSON report to this file
    #[arg(long)]
    pub out: Option<PathBuf>,
}
