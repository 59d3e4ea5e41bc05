//! Doubly robust estimation of average potential outcomes and treatment
//! effects under weak overlap.
//!
//! When propensity scores pile up near zero, inverse-propensity weights
//! explode and the usual augmented IPW (AIPW) estimator loses root-n
//! behaviour. This crate implements the thresholded variants — clipping the
//! estimated propensity from below, or trimming the IPW correction term away
//! on low-propensity observations — together with a data-driven rule that
//! picks the threshold by balancing an explicit estimation-error bound
//! against the root-n parametric rate.
//!
//! The pieces, bottom up:
//!
//! - [`stats`]: standard normal CDF/quantile and Kolmogorov–Smirnov
//!   distance/p-value, implemented from scratch and accurate to ~1e-12;
//! - [`rng`]: a splittable counter-based pseudo-random generator so every
//!   simulation, fold split, and bootstrap replicate is reproducible from a
//!   single seed;
//! - [`data`]: observation/dataset containers and deterministic K-fold
//!   assignment;
//! - [`nuisance`]: cross-fitted nuisance estimation — logistic regression by
//!   iteratively reweighted least squares for the propensity, uniform-kernel
//!   local polynomial regression for the outcome mean, and a
//!   locally-adaptive bandwidth construction tuned for regions where treated
//!   observations are scarce;
//! - [`estimators`]: thresholded pseudo-outcomes, the AIPW and IPW point
//!   estimators with plug-in standard errors, Wald intervals, fixed-window
//!   trimming, and a nonparametric bootstrap;
//! - [`threshold`]: the error-bound balancing rule for choosing the
//!   threshold, a smoothness-based closed form, and feasibility/rate
//!   diagnostics;
//! - [`simulation`]: a weak-overlap data generating process with analytic
//!   truth, a Monte Carlo engine for size/bias experiments, and a
//!   convergence-rate experiment for the adaptive regressor;
//! - [`parallel`]: the data-parallel map primitive everything fans out
//!   through (rayon-backed by default, sequential when the `parallel`
//!   feature is disabled).

// Range checks on floats are written in negated form (`!(x > 0.0 && x < 1.0)`)
// throughout: the negation makes NaN fail validation instead of passing it.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod estimators;
pub mod nuisance;
pub mod parallel;
pub mod rng;
pub mod simulation;
pub mod stats;
pub mod threshold;

pub use data::{assign_folds, Dataset, FoldAssignment, Observation};
pub use error::{Error, Result};
pub use estimators::{
    bootstrap_se, estimate_apo, estimate_apo_ipw, estimate_ate, fixed_trim_sample, pseudo_outcome,
    two_sided_pvalue, wald_ci, ATEEstimate, BootstrapSummary, Estimate, ThresholdMode,
    ThresholdProvenance, ThresholdSpec, TrimmedSample,
};
pub use nuisance::{
    adaptive_bandwidth, cross_fit, cross_fit_with_folds, fit_adaptive_regressor,
    fit_logistic_irls, local_poly_predict, predict_adaptive, AdaptiveRegressorFit,
    BandwidthChoice, BandwidthSpec, CrossFitNuisances, KernelSpec, LogisticFit, NuisanceFit,
    OutcomeMethod, PropensityMethod,
};
pub use parallel::MapStrategy;
pub use rng::SplitRng;
pub use simulation::{
    draw_dataset, inductive_sequence, rate_experiment, run_monte_carlo,
    run_monte_carlo_with_strategy, true_apo, DemeanMode, DgpConfig, EstimatorAggregate,
    EstimatorKind, EstimatorSpec, InductiveSequence, InductiveStep, MonteCarloReport,
    MonteCarloSettings, NuisanceSource, RateExperimentReport, ReplicationRow, ThresholdRule,
};
pub use threshold::{
    check_rate_conditions, error_bound_diff, min_gamma_supported, rule_of_thumb_threshold,
    smoothness_feasible, threshold_from_smoothness, FeasibilityCheck, RateBound, RateCondition,
    RateConditionReport, SmoothnessThreshold, ThresholdBranch, ThresholdPick, Verdict,
};
