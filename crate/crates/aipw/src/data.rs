//! Observation and dataset containers, plus deterministic fold assignment.
//!
//! A [`Dataset`] is a validated column-consistent collection of observations,
//! optionally annotated with the true propensity and true outcome-mean values
//! (available for synthetic data, used by oracle estimation modes).
//! [`assign_folds`] produces the reproducible K-fold partition that all
//! cross-fitting is built on.

use crate::error::{Error, Result};
use crate::rng::SplitRng;

/// One observation: binary treatment, outcome, covariates.
///
/// For synthetic data generated by this crate, `y` stores the treated
/// product D*Y (identically 0 on untreated rows); for ingested data it is
/// the outcome as recorded.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// Treatment indicator: 0 or 1.
    pub d: u8,
    /// Observed outcome; must be finite.
    pub y: f64,
    /// Covariates; length must equal the dataset dimension.
    pub x: Vec<f64>,
}

/// Validated dataset with optional oracle annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    observations: Vec<Observation>,
    dim: usize,
    true_propensity: Option<Vec<f64>>,
    true_outcome_mean: Option<Vec<f64>>,
}

impl Dataset {
    /// Builds a dataset, checking that every treatment is 0/1, every outcome
    /// and covariate is finite, and every covariate vector has length `dim`.
    pub fn new(observations: Vec<Observation>, dim: usize) -> Result<Self> {
        for (i, obs) in observations.iter().enumerate() {
            if obs.d > 1 {
                return Err(Error::InvalidInput(format!(
                    "observation {i}: treatment must be 0 or 1, got {}",
                    obs.d
                )));
            }
            if !obs.y.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "observation {i}: outcome must be finite, got {}",
                    obs.y
                )));
            }
            if obs.x.len() != dim {
                return Err(Error::InvalidInput(format!(
                    "observation {i}: expected {dim} covariates, got {}",
                    obs.x.len()
                )));
            }
            if let Some(bad) = obs.x.iter().find(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "observation {i}: non-finite covariate value {bad}"
                )));
            }
        }
        Ok(Dataset { observations, dim, true_propensity: None, true_outcome_mean: None })
    }

    /// Attaches true propensity values (one per observation, each in (0, 1]).
    pub fn with_true_propensity(mut self, e: Vec<f64>) -> Result<Self> {
        if e.len() != self.observations.len() {
            return Err(Error::InvalidInput(format!(
                "true propensity length {} does not match {} observations",
                e.len(),
                self.observations.len()
            )));
        }
        if let Some(bad) = e.iter().find(|v| !(**v > 0.0 && **v <= 1.0)) {
            return Err(Error::InvalidInput(format!(
                "true propensity values must lie in (0, 1], got {bad}"
            )));
        }
        self.true_propensity = Some(e);
        Ok(self)
    }

    /// Attaches true outcome-mean values (one finite value per observation).
    pub fn with_true_outcome_mean(mut self, mu: Vec<f64>) -> Result<Self> {
        if mu.len() != self.observations.len() {
            return Err(Error::InvalidInput(format!(
                "true outcome-mean length {} does not match {} observations",
                mu.len(),
                self.observations.len()
            )));
        }
        if let Some(bad) = mu.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "true outcome-mean values must be finite, got {bad}"
            )));
        }
        self.true_outcome_mean = Some(mu);
        Ok(self)
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Covariate dimension.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn true_propensity(&self) -> Option<&[f64]> {
        self.true_propensity.as_deref()
    }

    pub fn true_outcome_mean(&self) -> Option<&[f64]> {
        self.true_outcome_mean.as_deref()
    }

    pub fn treated_count(&self) -> usize {
        self.observations.iter().filter(|o| o.d == 1).count()
    }

    /// Treatment indicators as a flat vector.
    pub fn treatments(&self) -> Vec<u8> {
        self.observations.iter().map(|o| o.d).collect()
    }

    /// New dataset holding the rows at `indices` in order. Indices may repeat
    /// (bootstrap resampling) and annotations follow the rows.
    pub fn take(&self, indices: &[usize]) -> Result<Dataset> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.observations.len()) {
            return Err(Error::InvalidInput(format!(
                "row index {bad} out of range for {} observations",
                self.observations.len()
            )));
        }
        let observations = indices.iter().map(|&i| self.observations[i].clone()).collect();
        let true_propensity =
            self.true_propensity.as_ref().map(|e| indices.iter().map(|&i| e[i]).collect());
        let true_outcome_mean =
            self.true_outcome_mean.as_ref().map(|m| indices.iter().map(|&i| m[i]).collect());
        Ok(Dataset { observations, dim: self.dim, true_propensity, true_outcome_mean })
    }

    /// Per-axis (min, max) bounds of the covariates, or `None` when empty.
    pub fn bounding_box(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let first = self.observations.first()?;
        let mut lo = first.x.clone();
        let mut hi = first.x.clone();
        for obs in &self.observations[1..] {
            for (a, v) in lo.iter_mut().zip(&obs.x) {
                if v < a {
                    *a = *v;
                }
            }
            for (a, v) in hi.iter_mut().zip(&obs.x) {
                if v > a {
                    *a = *v;
                }
            }
        }
        Some((lo, hi))
    }
}

/// A K-fold partition of row indices; fold labels run 1..=k.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    fold_of: Vec<usize>,
    k: usize,
}

impl FoldAssignment {
    /// Rebuilds an assignment from explicit labels (each in 1..=k).
    ///
    /// Balance (fold sizes differing by at most one) is guaranteed only for
    /// assignments produced by [`assign_folds`]; labels inherited through a
    /// bootstrap resample are accepted here even when unbalanced or missing
    /// a fold entirely.
    pub fn from_labels(fold_of: Vec<usize>, k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidInput(format!("fold count must be at least 2, got {k}")));
        }
        if let Some(&bad) = fold_of.iter().find(|&&f| f == 0 || f > k) {
            return Err(Error::InvalidInput(format!(
                "fold label {bad} outside 1..={k}"
            )));
        }
        Ok(FoldAssignment { fold_of, k })
    }

    /// Fold label (1-based) of each row.
    pub fn fold_of(&self) -> &[usize] {
        &self.fold_of
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.fold_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fold_of.is_empty()
    }

    /// Row indices assigned to `fold`, in increasing order.
    pub fn indices_in(&self, fold: usize) -> Vec<usize> {
        self.fold_of
            .iter()
            .enumerate()
            .filter_map(|(i, &f)| (f == fold).then_some(i))
            .collect()
    }

    /// Row indices NOT assigned to `fold` (the training complement), in
    /// increasing order.
    pub fn complement_of(&self, fold: usize) -> Vec<usize> {
        self.fold_of
            .iter()
            .enumerate()
            .filter_map(|(i, &f)| (f != fold).then_some(i))
            .collect()
    }
}

/// Deterministic K-fold assignment of `n` rows: a seeded Fisher–Yates
/// shuffle of the indices followed by a block split, so the same
/// `(n, k, seed)` triple always yields the same partition. Fold sizes differ
/// by at most one; when n is not divisible by k, the lower-numbered folds
/// take the extra rows.
pub fn assign_folds(n: usize, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::InvalidInput(format!("fold count must be at least 2, got {k}")));
    }
    if k > n {
        return Err(Error::InvalidInput(format!(
            "fold count {k} exceeds the number of observations {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = SplitRng::derive(seed, 0xF01D);
    for i in (1..n).rev() {
        let j = rng.below(i as u64 + 1) as usize;
        order.swap(i, j);
    }
    let base = n / k;
    let extra = n % k;
    let mut fold_of = vec![0usize; n];
    let mut cursor = 0;
    for fold in 1..=k {
        let size = base + usize::from(fold <= extra);
        for &row in &order[cursor..cursor + size] {
            fold_of[row] = fold;
        }
        cursor += size;
    }
    Ok(FoldAssignment { fold_of, k })
}
