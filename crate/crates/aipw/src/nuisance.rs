//! Nuisance-function estimation: logistic regression by iteratively
//! reweighted least squares (IRLS) for the propensity score, uniform-kernel
//! local polynomial regression for the treated outcome mean, a
//! locally-adaptive bandwidth construction that downweights regions where
//! treated observations are scarce, and the cross-fitting driver that turns
//! any of these into out-of-fold predictions.

use std::sync::Arc;

use crate::data::{assign_folds, Dataset, FoldAssignment};
use crate::error::{Error, Result};
use crate::parallel;

/// Lower clamp applied to every propensity prediction; the upper clamp is
/// `1 - PROPENSITY_CLAMP`. Keeps inverse weights finite without meaningfully
/// perturbing non-degenerate predictions.
pub const PROPENSITY_CLAMP: f64 = 1e-12;

// ---------------------------------------------------------------------------
// Dense linear solve (shared by IRLS and local least squares)
// ---------------------------------------------------------------------------

/// Solves `A x = b` for a small dense system by Gaussian elimination with
/// partial pivoting. `a` is row-major `n * n`. Returns `None` when a pivot
/// is negligible relative to the matrix scale (rank deficiency).
fn solve_linear(mut a: Vec<f64>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    debug_assert_eq!(a.len(), n * n);
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let tol = 1e-12 * scale;
    for col in 0..n {
        let mut pivot_row = col;
        let mut pivot_val = a[col * n + col].abs();
        for row in col + 1..n {
            let v = a[row * n + col].abs();
            if v > pivot_val {
                pivot_val = v;
                pivot_row = row;
            }
        }
        if pivot_val <= tol {
            return None;
        }
        if pivot_row != col {
            for j in 0..n {
                a.swap(col * n + j, pivot_row * n + j);
            }
            b.swap(col, pivot_row);
        }
        let pivot = a[col * n + col];
        for row in col + 1..n {
            let factor = a[row * n + col] / pivot;
            if factor == 0.0 {
                continue;
            }
            for j in col..n {
                a[row * n + j] -= factor * a[col * n + j];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut acc = b[col];
        for j in col + 1..n {
            acc -= a[col * n + j] * x[j];
        }
        x[col] = acc / a[col * n + col];
    }
    Some(x)
}

// ---------------------------------------------------------------------------
// Logistic regression by IRLS
// ---------------------------------------------------------------------------

/// Numerically stable logistic function.
fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// Bernoulli log-likelihood at linear predictors `eta`:
/// `sum_i y_i eta_i - log(1 + exp(eta_i))`, with the softplus computed
/// overflow-free.
fn bernoulli_loglik(etas: &[f64], labels: &[u8]) -> f64 {
    let mut ll = 0.0;
    for (&eta, &y) in etas.iter().zip(labels) {
        let softplus = eta.max(0.0) + (-eta.abs()).exp().ln_1p();
        ll += f64::from(y) * eta - softplus;
    }
    ll
}

/// Fitted logistic regression.
#[derive(Debug, Clone)]
pub struct LogisticFit {
    /// Intercept followed by one slope per covariate.
    pub coef: Vec<f64>,
    /// True when the score or step criterion was met within `max_iter`.
    pub converged: bool,
    /// True when the coefficient norm blew past the separation guard; the
    /// returned coefficients are rescaled onto the guard sphere.
    pub separation: bool,
    /// True when a singular weighted Gram matrix forced a ridge penalty.
    pub ridged: bool,
    /// Newton iterations actually taken.
    pub iterations: usize,
    /// Log-likelihood after each accepted step, starting from the value at
    /// zero coefficients. Nondecreasing by construction (step halving).
    pub ll_trace: Vec<f64>,
}

impl LogisticFit {
    /// Predicted success probability at covariates `x`.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut eta = self.coef[0];
        for (c, v) in self.coef[1..].iter().zip(x) {
            eta += c * v;
        }
        sigmoid(eta)
    }
}

/// Euclidean-norm ceiling beyond which coefficients are declared separated.
const SEPARATION_NORM: f64 = 1e4;

/// Fits a logistic regression of `labels` on an intercept plus `covariates`
/// by Newton's method with step halving (the log-likelihood never decreases
/// between accepted steps). A singular weighted Gram matrix triggers a
/// 1e-8 ridge fallback; coefficients escaping past norm 1e4 (perfect or
/// near-perfect separation) are rescaled onto that sphere and flagged rather
/// than crashing.
pub fn fit_logistic_irls(
    covariates: &[Vec<f64>],
    labels: &[u8],
    max_iter: usize,
    tol: f64,
) -> Result<LogisticFit> {
    let n = covariates.len();
    if n != labels.len() {
        return Err(Error::InvalidInput(format!(
            "logistic fit: {n} covariate rows but {} labels",
            labels.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&y| y > 1) {
        return Err(Error::InvalidInput(format!("logistic fit: label {bad} is not binary")));
    }
    let p = covariates.first().map_or(0, Vec::len);
    if covariates.iter().any(|row| row.len() != p) {
        return Err(Error::InvalidInput("logistic fit: ragged covariate rows".into()));
    }
    if covariates.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("logistic fit: non-finite covariate value".into()));
    }
    if n <= p + 1 {
        return Err(Error::InvalidInput(format!(
            "logistic fit: need more than {} observations for {p} covariates plus intercept, got {n}",
            p + 1
        )));
    }
    if !(tol > 0.0) || !tol.is_finite() {
        return Err(Error::InvalidInput(format!("logistic fit: tolerance must be positive, got {tol}")));
    }

    let dim = p + 1;
    let design_row = |i: usize, j: usize| -> f64 {
        if j == 0 {
            1.0
        } else {
            covariates[i][j - 1]
        }
    };

    let mut coef = vec![0.0f64; dim];
    let mut etas = vec![0.0f64; n];
    let mut ll = bernoulli_loglik(&etas, labels);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut separation = false;
    let mut ridged = false;
    let mut iterations = 0;

    for _ in 0..max_iter {
        iterations += 1;
        // Score and weighted Gram matrix at the current coefficients.
        let mut score = vec![0.0f64; dim];
        let mut gram = vec![0.0f64; dim * dim];
        for i in 0..n {
            let mu = sigmoid(etas[i]);
            let w = (mu * (1.0 - mu)).max(1e-10);
            let resid = f64::from(labels[i]) - mu;
            for j in 0..dim {
                let uj = design_row(i, j);
                score[j] += resid * uj;
                for l in j..dim {
                    gram[j * dim + l] += w * uj * design_row(i, l);
                }
            }
        }
        for j in 0..dim {
            for l in 0..j {
                gram[j * dim + l] = gram[l * dim + j];
            }
        }
        let step = match solve_linear(gram.clone(), score.clone()) {
            Some(s) => s,
            None => {
                ridged = true;
                let mut ridge = gram;
                for j in 0..dim {
                    ridge[j * dim + j] += 1e-8;
                }
                solve_linear(ridge, score.clone()).ok_or_else(|| {
                    Error::Numerical("logistic fit: Gram matrix singular even with ridge".into())
                })?
            }
        };

        // Step halving: never accept a likelihood decrease.
        let mut lambda = 1.0f64;
        let mut accepted = false;
        for _ in 0..40 {
            let candidate: Vec<f64> =
                coef.iter().zip(&step).map(|(c, s)| c + lambda * s).collect();
            let cand_etas: Vec<f64> = (0..n)
                .map(|i| (0..dim).map(|j| candidate[j] * design_row(i, j)).sum())
                .collect();
            let cand_ll = bernoulli_loglik(&cand_etas, labels);
            if cand_ll >= ll - 1e-12 {
                let step_size = step.iter().map(|s| (lambda * s).abs()).fold(0.0, f64::max);
                coef = candidate;
                etas = cand_etas;
                ll = cand_ll;
                trace.push(ll);
                accepted = true;
                let max_score = score.iter().fold(0.0f64, |m, s| m.max(s.abs()));
                if max_score < tol || step_size < tol {
                    converged = true;
                }
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            // No step length improves the likelihood: already at the optimum
            // to numerical precision.
            converged = true;
            break;
        }
        let norm = coef.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm > SEPARATION_NORM {
            separation = true;
            let rescale = SEPARATION_NORM / norm;
            for c in &mut coef {
                *c *= rescale;
            }
            converged = false;
            break;
        }
        if converged {
            break;
        }
    }

    Ok(LogisticFit { coef, converged, separation, ridged, iterations, ll_trace: trace })
}

// ---------------------------------------------------------------------------
// Local polynomial regression with a uniform kernel
// ---------------------------------------------------------------------------

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

/// Local polynomial prediction at `x0` from the points `(xs[i], ys[i])`
/// within Euclidean distance `h`, under a uniform kernel.
///
/// Degree 0 returns the window mean; degree 1 returns the intercept of the
/// least-squares fit of y on `(1, x - x0)` over the window, falling back to
/// the window mean when the local design is rank deficient. Degrees above 1
/// are treated as 1. An empty window (including `h <= 0`) returns 0.0 — the
/// defined no-local-information convention, not an error.
pub fn local_poly_predict(x0: &[f64], xs: &[Vec<f64>], ys: &[f64], h: f64, degree: usize) -> f64 {
    assert_eq!(xs.len(), ys.len(), "local_poly_predict: xs and ys must be the same length");
    if !(h > 0.0) {
        return 0.0;
    }
    let h_sq = h * h;
    let window: Vec<usize> = (0..xs.len())
        .filter(|&i| {
            debug_assert_eq!(xs[i].len(), x0.len());
            squared_distance(&xs[i], x0) <= h_sq
        })
        .collect();
    if window.is_empty() {
        return 0.0;
    }
    let mean = || window.iter().map(|&i| ys[i]).sum::<f64>() / window.len() as f64;
    if degree == 0 {
        return mean();
    }
    // Degree-1 local least squares on the centered design (1, x - x0).
    let d = x0.len();
    let dim = d + 1;
    let mut gram = vec![0.0f64; dim * dim];
    let mut rhs = vec![0.0f64; dim];
    let mut u = vec![0.0f64; dim];
    for &i in &window {
        u[0] = 1.0;
        for j in 0..d {
            u[j + 1] = xs[i][j] - x0[j];
        }
        for a in 0..dim {
            rhs[a] += u[a] * ys[i];
            for b in a..dim {
                gram[a * dim + b] += u[a] * u[b];
            }
        }
    }
    for a in 0..dim {
        for b in 0..a {
            gram[a * dim + b] = gram[b * dim + a];
        }
    }
    match solve_linear(gram, rhs) {
        Some(coef) if coef[0].is_finite() => coef[0],
        _ => mean(),
    }
}

/// One-dimensional local-linear predictor over a sorted treated subsample,
/// answering window queries through prefix sums in O(log n). Exactly the
/// same weighted least squares as [`local_poly_predict`] with degree 1 — the
/// fast path the simulation engine relies on.
#[derive(Debug, Clone)]
pub(crate) struct SortedLocalLinear1d {
    xs: Vec<f64>,
    prefix_x: Vec<f64>,
    prefix_xx: Vec<f64>,
    prefix_y: Vec<f64>,
    prefix_xy: Vec<f64>,
    h: f64,
}

impl SortedLocalLinear1d {
    pub(crate) fn fit(mut points: Vec<(f64, f64)>, h: f64) -> Self {
        points.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite covariates"));
        let n = points.len();
        let mut prefix_x = vec![0.0; n + 1];
        let mut prefix_xx = vec![0.0; n + 1];
        let mut prefix_y = vec![0.0; n + 1];
        let mut prefix_xy = vec![0.0; n + 1];
        for (i, &(x, y)) in points.iter().enumerate() {
            prefix_x[i + 1] = prefix_x[i] + x;
            prefix_xx[i + 1] = prefix_xx[i] + x * x;
            prefix_y[i + 1] = prefix_y[i] + y;
            prefix_xy[i + 1] = prefix_xy[i] + x * y;
        }
        let xs = points.into_iter().map(|(x, _)| x).collect();
        SortedLocalLinear1d { xs, prefix_x, prefix_xx, prefix_y, prefix_xy, h }
    }

    pub(crate) fn predict(&self, x0: f64) -> f64 {
        let lo = self.xs.partition_point(|&v| v < x0 - self.h);
        let hi = self.xs.partition_point(|&v| v <= x0 + self.h);
        if hi <= lo {
            return 0.0;
        }
        let w = (hi - lo) as f64;
        let sum_x = self.prefix_x[hi] - self.prefix_x[lo];
        let sum_xx = self.prefix_xx[hi] - self.prefix_xx[lo];
        let sum_y = self.prefix_y[hi] - self.prefix_y[lo];
        let sum_xy = self.prefix_xy[hi] - self.prefix_xy[lo];
        // Centered moments for the design (1, x - x0).
        let cx = sum_x - w * x0;
        let cxx = sum_xx - 2.0 * x0 * sum_x + w * x0 * x0;
        let cxy = sum_xy - x0 * sum_y;
        let det = w * cxx - cx * cx;
        let scale = (w * cxx.abs()).max(cx * cx).max(1e-300);
        if det.abs() <= 1e-12 * scale {
            return sum_y / w;
        }
        let intercept = (cxx * sum_y - cx * cxy) / det;
        if intercept.is_finite() {
            intercept
        } else {
            sum_y / w
        }
    }
}

/// Gaussian-kernel truncation radius, in bandwidth units.
const GAUSSIAN_TRUNCATION: f64 = 5.0;

/// One-dimensional Gaussian-kernel local-linear predictor, evaluated on a
/// regular grid with linear binning — the standard fast implementation of
/// kernel-weighted local polynomial regression. Kernel weights are truncated
/// at [`GAUSSIAN_TRUNCATION`] bandwidths; predictions interpolate linearly
/// between fitted gridpoint values. Follows the same fallback conventions as
/// [`SortedLocalLinear1d`]: no kernel mass at a gridpoint yields 0.0, a rank
/// deficient local design yields the local weighted mean.
#[derive(Debug, Clone)]
pub(crate) struct BinnedGaussianLocalLinear1d {
    lo: f64,
    step: f64,
    values: Vec<f64>,
}

impl BinnedGaussianLocalLinear1d {
    /// `lo..=hi` must cover every later query point (the dataset's bounding
    /// interval does, since queries are dataset rows).
    pub(crate) fn fit(points: &[(f64, f64)], h: f64, lo: f64, hi: f64) -> Self {
        debug_assert!(h > 0.0 && h.is_finite());
        if !(hi > lo) || points.is_empty() {
            // Zero-extent support: a single cell holding the plain mean,
            // or the no-local-information value 0.0 with no points at all.
            let value = if points.is_empty() {
                0.0
            } else {
                points.iter().map(|&(_, y)| y).sum::<f64>() / points.len() as f64
            };
            return BinnedGaussianLocalLinear1d { lo, step: 1.0, values: vec![value] };
        }
        let range = hi - lo;
        // About 40 cells per bandwidth keeps the binning approximation far
        // below the kernel scale; the bounds keep degenerate bandwidths from
        // producing trivial or enormous grids.
        let cells = ((40.0 * range / h).ceil() as usize).clamp(400, 65_536);
        let step = range / cells as f64;
        let grid = cells + 1;

        // Linear binning: each point splits unit mass between the two
        // flanking gridpoints in proportion to proximity.
        let mut count = vec![0.0f64; grid];
        let mut ysum = vec![0.0f64; grid];
        for &(x, y) in points {
            let pos = ((x - lo) / step).clamp(0.0, cells as f64);
            let i0 = pos.floor() as usize;
            if i0 >= cells {
                count[cells] += 1.0;
                ysum[cells] += y;
            } else {
                let f = pos - i0 as f64;
                count[i0] += 1.0 - f;
                ysum[i0] += (1.0 - f) * y;
                count[i0 + 1] += f;
                ysum[i0 + 1] += f * y;
            }
        }

        // Kernel weights are shared across gridpoints: the offset j always
        // means a signed distance of exactly j*step.
        let reach = ((GAUSSIAN_TRUNCATION * h / step).ceil() as usize).min(grid - 1);
        let kernel: Vec<f64> = (0..=reach)
            .map(|j| {
                let z = j as f64 * step / h;
                (-0.5 * z * z).exp()
            })
            .collect();

        let values = (0..grid)
            .map(|i| {
                let j_lo = -(i.min(reach) as isize);
                let j_hi = (grid - 1 - i).min(reach) as isize;
                let (mut s0, mut s1, mut s2, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for j in j_lo..=j_hi {
                    let idx = (i as isize + j) as usize;
                    let w = kernel[j.unsigned_abs()];
                    let t = j as f64 * step;
                    let wc = w * count[idx];
                    let wy = w * ysum[idx];
                    s0 += wc;
                    s1 += wc * t;
                    s2 += wc * t * t;
                    t0 += wy;
                    t1 += wy * t;
                }
                if s0 <= 0.0 {
                    return 0.0;
                }
                let det = s0 * s2 - s1 * s1;
                let scale = (s0 * s2.abs()).max(s1 * s1).max(1e-300);
                if det.abs() <= 1e-12 * scale {
                    return t0 / s0;
                }
                let intercept = (s2 * t0 - s1 * t1) / det;
                if intercept.is_finite() {
                    intercept
                } else {
                    t0 / s0
                }
            })
            .collect();

        BinnedGaussianLocalLinear1d { lo, step, values }
    }

    pub(crate) fn predict(&self, x: f64) -> f64 {
        if self.values.len() == 1 {
            return self.values[0];
        }
        let cells = self.values.len() - 1;
        let pos = ((x - self.lo) / self.step).clamp(0.0, cells as f64);
        let i0 = (pos.floor() as usize).min(cells - 1);
        let f = pos - i0 as f64;
        self.values[i0] * (1.0 - f) + self.values[i0 + 1] * f
    }
}

// ---------------------------------------------------------------------------
// Adaptive bandwidth and the adaptive regressor
// ---------------------------------------------------------------------------

/// Result of the adaptive bandwidth rule at one query point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandwidthChoice {
    /// Largest admissible bandwidth (capped at the bounding-box diameter).
    pub h: f64,
    /// True when the dataset had no treated observations at all, in which
    /// case `h` is simply the cap.
    pub no_treated: bool,
}

/// Largest bandwidth `h` such that the number of treated observations within
/// Euclidean distance `h` of `x0` stays at or below the local budget
/// `2 h^{-2 beta_mu}`, capped at the diameter of the bounding box of the
/// covariates together with `x0` (a degenerate zero-extent box falls back to
/// a cap of 1). The budget count is nondecreasing in `h` while the budget
/// curve decreases, so the admissible set is an interval and the supremum is
/// found exactly by walking the sorted distinct treated distances.
pub fn adaptive_bandwidth(x0: &[f64], data: &Dataset, beta_mu: f64) -> Result<BandwidthChoice> {
    if data.is_empty() {
        return Err(Error::InvalidInput("adaptive bandwidth: dataset is empty".into()));
    }
    if x0.len() != data.dim() {
        return Err(Error::InvalidInput(format!(
            "adaptive bandwidth: query has {} coordinates, data has dimension {}",
            x0.len(),
            data.dim()
        )));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("adaptive bandwidth: non-finite query coordinate".into()));
    }
    if !(beta_mu > 0.0) || !beta_mu.is_finite() {
        return Err(Error::InvalidInput(format!(
            "adaptive bandwidth: smoothness order must be positive, got {beta_mu}"
        )));
    }

    let (lo, hi) = data.bounding_box().expect("nonempty dataset has a bounding box");
    let diameter_sq: f64 = lo
        .iter()
        .zip(&hi)
        .zip(x0)
        .map(|((&a, &b), &q)| {
            let low = a.min(q);
            let high = b.max(q);
            (high - low) * (high - low)
        })
        .sum();
    let cap = if diameter_sq > 0.0 { diameter_sq.sqrt() } else { 1.0 };

    let mut distances: Vec<f64> = data
        .observations()
        .iter()
        .filter(|o| o.d == 1)
        .map(|o| squared_distance(&o.x, x0).sqrt())
        .collect();
    if distances.is_empty() {
        return Ok(BandwidthChoice { h: cap, no_treated: true });
    }
    distances.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));

    // Distinct distances with cumulative counts: on [v_j, v_{j+1}) the treated
    // count is c_j, so the constraint there reads h <= (2/c_j)^{1/(2 beta)}.
    let mut groups: Vec<(f64, usize)> = Vec::new();
    for &v in &distances {
        match groups.last_mut() {
            Some((last, count)) if *last == v => *count += 1,
            _ => {
                let cum = groups.last().map_or(0, |&(_, c)| c);
                groups.push((v, cum + 1));
            }
        }
    }

    let exponent = 1.0 / (2.0 * beta_mu);
    for (j, &(v, count)) in groups.iter().enumerate() {
        if v >= cap {
            // Every admissible h below the cap sits before this jump.
            return Ok(BandwidthChoice { h: cap, no_treated: false });
        }
        let budget_limit = (2.0 / count as f64).powf(exponent);
        if budget_limit < v {
            // The constraint already fails the moment this jump lands, so the
            // supremum is the jump location itself.
            return Ok(BandwidthChoice { h: v, no_treated: false });
        }
        let next = groups.get(j + 1).map_or(f64::INFINITY, |&(nv, _)| nv);
        if budget_limit < next {
            return Ok(BandwidthChoice { h: budget_limit.min(cap), no_treated: false });
        }
    }
    // Unreachable: the last group's segment extends to infinity, so the
    // budget limit always falls inside it. Kept as a safe default.
    Ok(BandwidthChoice { h: cap, no_treated: false })
}

/// Fitted adaptive regressor: gridpoint values plus the interpolation rule.
#[derive(Debug, Clone)]
pub struct AdaptiveRegressorFit {
    gridpoints: Vec<Vec<f64>>,
    grid_values: Vec<f64>,
    bandwidths: Vec<f64>,
    degree: usize,
    h_bar: f64,
    interp_radius: f64,
    hit_tolerance: f64,
    first_pass_gridpoints: usize,
    degree_fallbacks: usize,
    beta_mu: f64,
}

impl AdaptiveRegressorFit {
    pub fn gridpoints(&self) -> &[Vec<f64>] {
        &self.gridpoints
    }

    pub fn grid_values(&self) -> &[f64] {
        &self.grid_values
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    /// Local polynomial degree used at the gridpoints (0 or 1).
    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Largest first-pass bandwidth; the final grid spacing target.
    pub fn h_bar(&self) -> f64 {
        self.h_bar
    }

    /// Radius of the gridpoint neighborhood used for interpolation.
    pub fn interp_radius(&self) -> f64 {
        self.interp_radius
    }

    pub fn first_pass_gridpoints(&self) -> usize {
        self.first_pass_gridpoints
    }

    /// Number of gridpoints whose local window held fewer treated
    /// observations than the degree-1 coefficient count and therefore fell
    /// back to a window mean.
    pub fn degree_fallbacks(&self) -> usize {
        self.degree_fallbacks
    }

    pub fn beta_mu(&self) -> f64 {
        self.beta_mu
    }
}

/// Guard on the total lattice size to keep memory and runtime bounded.
const MAX_GRIDPOINTS: usize = 200_000;

/// Builds the lattice of corner points over `[lo, hi]` with per-axis spacing
/// at most `target`: each axis with positive extent is split into
/// `ceil(extent / target)` equal cells (a flat axis contributes its single
/// coordinate). Returns the points in row-major order.
fn build_lattice(lo: &[f64], hi: &[f64], target: f64) -> Result<Vec<Vec<f64>>> {
    let d = lo.len();
    let mut axes: Vec<Vec<f64>> = Vec::with_capacity(d);
    let mut total: usize = 1;
    for a in 0..d {
        let extent = hi[a] - lo[a];
        let coords = if extent > 0.0 {
            let cells = (extent / target).ceil().max(1.0) as usize;
            let step = extent / cells as f64;
            (0..=cells).map(|i| lo[a] + step * i as f64).collect()
        } else {
            vec![lo[a]]
        };
        total = total.saturating_mul(coords.len());
        if total > MAX_GRIDPOINTS {
            return Err(Error::InvalidInput(format!(
                "adaptive regressor lattice would exceed {MAX_GRIDPOINTS} gridpoints; \
                 the covariate dimension or resolution is too high"
            )));
        }
        axes.push(coords);
    }
    let mut points: Vec<Vec<f64>> = Vec::with_capacity(total);
    let mut index = vec![0usize; d];
    loop {
        points.push((0..d).map(|a| axes[a][index[a]]).collect());
        // Odometer increment, last axis fastest.
        let mut a = d;
        loop {
            if a == 0 {
                return Ok(points);
            }
            a -= 1;
            index[a] += 1;
            if index[a] < axes[a].len() {
                break;
            }
            index[a] = 0;
        }
    }
}

/// Fits the locally-adaptive outcome regressor on the treated subsample.
///
/// Two passes over hypercube lattices spanning the data's bounding box:
/// a first pass with spacing `n^{-1/(2 beta_mu + d)}` whose per-gridpoint
/// adaptive bandwidths determine the scale `h_bar` (their maximum), then the
/// final lattice with spacing `h_bar`, where each gridpoint gets its own
/// adaptive bandwidth and a uniform-kernel local polynomial value of degree
/// `min(ceil(beta_mu) - 1, 1)`. A gridpoint whose window holds fewer treated
/// observations than the polynomial's coefficient count falls back to a
/// window mean (counted in [`AdaptiveRegressorFit::degree_fallbacks`]).
pub fn fit_adaptive_regressor(data: &Dataset, beta_mu: f64) -> Result<AdaptiveRegressorFit> {
    if !(beta_mu > 0.0) || !beta_mu.is_finite() {
        return Err(Error::InvalidInput(format!(
            "adaptive regressor: smoothness order must be positive, got {beta_mu}"
        )));
    }
    let needed = beta_mu.ceil() as usize + 1;
    let treated: Vec<(Vec<f64>, f64)> = data
        .observations()
        .iter()
        .filter(|o| o.d == 1)
        .map(|o| (o.x.clone(), o.y))
        .collect();
    if treated.len() < needed {
        return Err(Error::Degenerate(format!(
            "adaptive regressor needs at least {needed} treated observations for smoothness \
             order {beta_mu}, got {}",
            treated.len()
        )));
    }
    let treated_xs: Vec<Vec<f64>> = treated.iter().map(|(x, _)| x.clone()).collect();
    let treated_ys: Vec<f64> = treated.iter().map(|(_, y)| *y).collect();

    let n = data.len();
    let d = data.dim();
    let (lo, hi) = data.bounding_box().expect("nonempty dataset");

    let first_spacing = (n as f64).powf(-1.0 / (2.0 * beta_mu + d as f64));
    let first_grid = build_lattice(&lo, &hi, first_spacing)?;
    let mut h_bar = 0.0f64;
    for point in &first_grid {
        h_bar = h_bar.max(adaptive_bandwidth(point, data, beta_mu)?.h);
    }

    let gridpoints = build_lattice(&lo, &hi, h_bar)?;
    let degree = ((beta_mu.ceil() as usize).saturating_sub(1)).min(1);
    let coef_count = if degree == 0 { 1 } else { d + 1 };
    let mut grid_values = Vec::with_capacity(gridpoints.len());
    let mut bandwidths = Vec::with_capacity(gridpoints.len());
    let mut degree_fallbacks = 0usize;
    for point in &gridpoints {
        let h = adaptive_bandwidth(point, data, beta_mu)?.h;
        let h_sq = h * h;
        let window_count =
            treated_xs.iter().filter(|x| squared_distance(x, point) <= h_sq).count();
        let use_degree = if window_count < coef_count && degree > 0 {
            degree_fallbacks += 1;
            0
        } else {
            degree
        };
        grid_values.push(local_poly_predict(point, &treated_xs, &treated_ys, h, use_degree));
        bandwidths.push(h);
    }

    // A query this close to a lattice point counts as an exact hit.
    let min_positive_spacing = (0..d)
        .filter_map(|a| {
            let extent = hi[a] - lo[a];
            (extent > 0.0).then(|| {
                let cells = (extent / h_bar).ceil().max(1.0);
                extent / cells
            })
        })
        .fold(f64::INFINITY, f64::min);
    let hit_scale = if min_positive_spacing.is_finite() { min_positive_spacing } else { 1.0 };

    Ok(AdaptiveRegressorFit {
        gridpoints,
        grid_values,
        bandwidths,
        degree,
        h_bar,
        interp_radius: beta_mu.ceil() * h_bar,
        hit_tolerance: 1e-9 * hit_scale,
        first_pass_gridpoints: first_grid.len(),
        degree_fallbacks,
        beta_mu,
    })
}

/// Evaluates the adaptive regressor at `x`: a query landing on a gridpoint
/// returns the stored grid value exactly; anywhere else the prediction is a
/// local polynomial fit (same degree as the gridpoint stage) over the
/// gridpoints within radius `ceil(beta_mu) * h_bar` of `x`. A query with no
/// gridpoints in range returns 0.0.
pub fn predict_adaptive(fit: &AdaptiveRegressorFit, x: &[f64]) -> f64 {
    assert_eq!(
        x.len(),
        fit.gridpoints.first().map_or(x.len(), Vec::len),
        "predict_adaptive: query dimension mismatch"
    );
    let mut best = f64::INFINITY;
    let mut best_idx = 0usize;
    for (i, g) in fit.gridpoints.iter().enumerate() {
        let dist_sq = squared_distance(g, x);
        if dist_sq < best {
            best = dist_sq;
            best_idx = i;
        }
    }
    if best.sqrt() <= fit.hit_tolerance {
        return fit.grid_values[best_idx];
    }
    local_poly_predict(x, &fit.gridpoints, &fit.grid_values, fit.interp_radius, fit.degree)
}

// ---------------------------------------------------------------------------
// Cross-fitting
// ---------------------------------------------------------------------------

/// How to estimate the propensity score on a training complement.
#[derive(Debug, Clone, PartialEq)]
pub enum PropensityMethod {
    /// Logistic regression of D on an intercept plus the raw covariates.
    LogisticIrls,
    /// Constant prediction: the training-complement treated fraction.
    ConstantRate,
    /// Oracle passthrough of the dataset's true-propensity annotations.
    TruePropensity,
}

/// Bandwidth policy for the local-linear outcome regression.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandwidthSpec {
    /// Use this bandwidth verbatim.
    Fixed(f64),
    /// `n^{-1/5}` where `n` is the full dataset size (so the bandwidth does
    /// not depend on how the data were split into folds).
    InverseFifthRoot,
}

/// Kernel weighting for the local-linear outcome regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelSpec {
    /// Unit weight on `|x - x0| <= h`, zero beyond: a hard window.
    Uniform,
    /// Weights `exp(-((x - x0)/h)^2 / 2)`, truncated at five bandwidths.
    /// The smooth down-weighting borrows strength into regions where
    /// treated observations are scarce, keeping boundary variance bounded
    /// where a hard window degrades. One-dimensional covariates only;
    /// fitted by the standard binned grid evaluation.
    Gaussian,
}

/// How to estimate the treated outcome mean on a training complement.
#[derive(Debug, Clone, PartialEq)]
pub enum OutcomeMethod {
    /// Kernel-weighted local-linear regression on the treated subsample.
    LocalLinear { bandwidth: BandwidthSpec, kernel: KernelSpec },
    /// The locally-adaptive regressor (see [`fit_adaptive_regressor`]).
    Adaptive { beta_mu: f64 },
    /// Constant prediction: the mean outcome over treated training rows.
    ConstantMean,
    /// Oracle passthrough of the dataset's true outcome-mean annotations.
    TrueOutcomeMean,
}

type PredictFn = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Nuisance models fitted on one training complement.
pub struct NuisanceFit {
    propensity: PredictFn,
    outcome: PredictFn,
    /// Human-readable note on how this fold's models were fitted.
    pub summary: String,
}

impl NuisanceFit {
    /// Propensity prediction, clamped into
    /// `[PROPENSITY_CLAMP, 1 - PROPENSITY_CLAMP]`.
    pub fn predict_propensity(&self, x: &[f64]) -> f64 {
        clamp_propensity((self.propensity)(x))
    }

    /// Outcome-mean prediction.
    pub fn predict_outcome(&self, x: &[f64]) -> f64 {
        (self.outcome)(x)
    }
}

impl std::fmt::Debug for NuisanceFit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NuisanceFit").field("summary", &self.summary).finish()
    }
}

fn clamp_propensity(e: f64) -> f64 {
    if e.is_nan() {
        return PROPENSITY_CLAMP;
    }
    e.clamp(PROPENSITY_CLAMP, 1.0 - PROPENSITY_CLAMP)
}

/// Out-of-fold nuisance predictions for a complete dataset.
#[derive(Debug)]
pub struct CrossFitNuisances {
    /// Out-of-fold propensity predictions, all strictly inside (0, 1).
    pub e_hat: Vec<f64>,
    /// Out-of-fold outcome-mean predictions, all finite.
    pub mu_hat: Vec<f64>,
    folds: FoldAssignment,
    fits: Vec<NuisanceFit>,
}

impl CrossFitNuisances {
    pub fn folds(&self) -> &FoldAssignment {
        &self.folds
    }

    /// Models fitted on the complement of `fold` (1-based).
    pub fn fit_for_fold(&self, fold: usize) -> &NuisanceFit {
        &self.fits[fold - 1]
    }
}

/// Nearest-neighbor closure over annotated points; ties go to the first
/// point in row order.
fn nearest_neighbor_fn(points: Arc<Vec<(Vec<f64>, f64)>>) -> PredictFn {
    Box::new(move |x: &[f64]| {
        let mut best = f64::INFINITY;
        let mut value = 0.0;
        for (px, pv) in points.iter() {
            let dist = squared_distance(px, x);
            if dist < best {
                best = dist;
                value = *pv;
            }
        }
        value
    })
}

fn fold_context(fold: usize, err: Error) -> Error {
    match err {
        Error::InvalidInput(m) => Error::InvalidInput(format!("fold {fold}: {m}")),
        Error::Numerical(m) => Error::Numerical(format!("fold {fold}: {m}")),
        Error::Degenerate(m) => Error::Degenerate(format!("fold {fold}: {m}")),
    }
}

fn fit_one_fold(
    data: &Dataset,
    train_idx: &[usize],
    propensity: &PropensityMethod,
    outcome: &OutcomeMethod,
    fold: usize,
) -> Result<NuisanceFit> {
    let obs = data.observations();
    let treated_train: Vec<usize> =
        train_idx.iter().copied().filter(|&i| obs[i].d == 1).collect();
    let control_count = train_idx.len() - treated_train.len();
    if treated_train.is_empty() {
        return Err(Error::Degenerate(format!(
            "training complement of fold {fold} has no treated observations"
        )));
    }
    if control_count == 0 {
        return Err(Error::Degenerate(format!(
            "training complement of fold {fold} has no control observations"
        )));
    }

    let mut notes: Vec<String> = Vec::new();

    let propensity_fn: PredictFn = match propensity {
        PropensityMethod::LogisticIrls => {
            let xs: Vec<Vec<f64>> = train_idx.iter().map(|&i| obs[i].x.clone()).collect();
            let ds: Vec<u8> = train_idx.iter().map(|&i| obs[i].d).collect();
            let fit = fit_logistic_irls(&xs, &ds, 100, 1e-8)
                .map_err(|e| fold_context(fold, e))?;
            notes.push(format!(
                "propensity: logistic ({} iterations{}{}{})",
                fit.iterations,
                if fit.converged { ", converged" } else { ", not converged" },
                if fit.separation { ", separation-capped" } else { "" },
                if fit.ridged { ", ridged" } else { "" },
            ));
            Box::new(move |x: &[f64]| fit.predict(x))
        }
        PropensityMethod::ConstantRate => {
            let rate = treated_train.len() as f64 / train_idx.len() as f64;
            notes.push(format!("propensity: constant rate {rate:.6}"));
            Box::new(move |_: &[f64]| rate)
        }
        PropensityMethod::TruePropensity => {
            let e = data.true_propensity().ok_or_else(|| {
                Error::InvalidInput(
                    "oracle propensity requested but the dataset carries no annotations".into(),
                )
            })?;
            let points: Vec<(Vec<f64>, f64)> =
                train_idx.iter().map(|&i| (obs[i].x.clone(), e[i])).collect();
            notes.push("propensity: oracle annotations".into());
            nearest_neighbor_fn(Arc::new(points))
        }
    };

    let outcome_fn: PredictFn = match outcome {
        OutcomeMethod::LocalLinear { bandwidth, kernel } => {
            let h = match bandwidth {
                BandwidthSpec::Fixed(h) => {
                    if !(*h > 0.0) || !h.is_finite() {
                        return Err(Error::InvalidInput(format!(
                            "fold {fold}: local-linear bandwidth must be positive, got {h}"
                        )));
                    }
                    *h
                }
                BandwidthSpec::InverseFifthRoot => (data.len() as f64).powf(-0.2),
            };
            match kernel {
                KernelSpec::Uniform => {
                    notes.push(format!("outcome: local-linear, bandwidth {h:.6}"));
                    if data.dim() == 1 {
                        let points: Vec<(f64, f64)> =
                            treated_train.iter().map(|&i| (obs[i].x[0], obs[i].y)).collect();
                        let model = SortedLocalLinear1d::fit(points, h);
                        Box::new(move |x: &[f64]| model.predict(x[0]))
                    } else {
                        let xs: Vec<Vec<f64>> =
                            treated_train.iter().map(|&i| obs[i].x.clone()).collect();
                        let ys: Vec<f64> = treated_train.iter().map(|&i| obs[i].y).collect();
                        Box::new(move |x: &[f64]| local_poly_predict(x, &xs, &ys, h, 1))
                    }
                }
                KernelSpec::Gaussian => {
                    if data.dim() != 1 {
                        return Err(Error::InvalidInput(format!(
                            "fold {fold}: the gaussian-kernel local-linear regression \
                             supports a single covariate, got dimension {}",
                            data.dim()
                        )));
                    }
                    notes.push(format!(
                        "outcome: local-linear, gaussian kernel, bandwidth {h:.6}"
                    ));
                    let (lo, hi) =
                        data.bounding_box().expect("nonempty dataset has a bounding box");
                    let points: Vec<(f64, f64)> =
                        treated_train.iter().map(|&i| (obs[i].x[0], obs[i].y)).collect();
                    let model = BinnedGaussianLocalLinear1d::fit(&points, h, lo[0], hi[0]);
                    Box::new(move |x: &[f64]| model.predict(x[0]))
                }
            }
        }
        OutcomeMethod::Adaptive { beta_mu } => {
            let train_data = data.take(train_idx)?;
            let fit = fit_adaptive_regressor(&train_data, *beta_mu)
                .map_err(|e| fold_context(fold, e))?;
            notes.push(format!(
                "outcome: adaptive (beta {}, {} gridpoints, h_bar {:.6})",
                beta_mu,
                fit.gridpoints().len(),
                fit.h_bar()
            ));
            Box::new(move |x: &[f64]| predict_adaptive(&fit, x))
        }
        OutcomeMethod::ConstantMean => {
            let mean = treated_train.iter().map(|&i| obs[i].y).sum::<f64>()
                / treated_train.len() as f64;
            notes.push(format!("outcome: constant mean {mean:.6}"));
            Box::new(move |_: &[f64]| mean)
        }
        OutcomeMethod::TrueOutcomeMean => {
            let mu = data.true_outcome_mean().ok_or_else(|| {
                Error::InvalidInput(
                    "oracle outcome mean requested but the dataset carries no annotations".into(),
                )
            })?;
            let points: Vec<(Vec<f64>, f64)> =
                train_idx.iter().map(|&i| (obs[i].x.clone(), mu[i])).collect();
            notes.push("outcome: oracle annotations".into());
            nearest_neighbor_fn(Arc::new(points))
        }
    };

    Ok(NuisanceFit {
        propensity: propensity_fn,
        outcome: outcome_fn,
        summary: format!("fold {fold}: {}", notes.join("; ")),
    })
}

/// Cross-fits the requested nuisance models over a fresh deterministic
/// K-fold split (see [`assign_folds`]) and returns out-of-fold predictions.
pub fn cross_fit(
    data: &Dataset,
    k: usize,
    propensity: &PropensityMethod,
    outcome: &OutcomeMethod,
    seed: u64,
) -> Result<CrossFitNuisances> {
    let folds = assign_folds(data.len(), k, seed)?;
    cross_fit_with_folds(data, &folds, propensity, outcome)
}

/// Cross-fits over an explicit fold assignment: for each fold, both nuisance
/// models are fitted on the complement (which must contain at least one
/// treated and one control observation) and evaluated on the held-out rows.
/// Oracle methods copy the dataset annotations through bit-exactly (modulo
/// the global propensity clamp). Folds are fitted concurrently under the
/// default map strategy; results are deterministic regardless.
pub fn cross_fit_with_folds(
    data: &Dataset,
    folds: &FoldAssignment,
    propensity: &PropensityMethod,
    outcome: &OutcomeMethod,
) -> Result<CrossFitNuisances> {
    if folds.len() != data.len() {
        return Err(Error::InvalidInput(format!(
            "fold assignment covers {} rows but the dataset has {}",
            folds.len(),
            data.len()
        )));
    }
    if *propensity == PropensityMethod::TruePropensity && data.true_propensity().is_none() {
        return Err(Error::InvalidInput(
            "oracle propensity requested but the dataset carries no annotations".into(),
        ));
    }
    if *outcome == OutcomeMethod::TrueOutcomeMean && data.true_outcome_mean().is_none() {
        return Err(Error::InvalidInput(
            "oracle outcome mean requested but the dataset carries no annotations".into(),
        ));
    }

    let k = folds.k();
    let fit_results = parallel::indexed_map_default(k, |fi| {
        let fold = fi + 1;
        let train_idx = folds.complement_of(fold);
        fit_one_fold(data, &train_idx, propensity, outcome, fold)
    });
    let mut fits = Vec::with_capacity(k);
    for result in fit_results {
        fits.push(result?);
    }

    let n = data.len();
    let obs = data.observations();
    let mut e_hat = Vec::with_capacity(n);
    let mut mu_hat = Vec::with_capacity(n);
    for i in 0..n {
        let fit = &fits[folds.fold_of()[i] - 1];
        let e = match propensity {
            // Oracle passthrough: exact annotation values (modulo the clamp),
            // not a round trip through the nearest-neighbor closure.
            PropensityMethod::TruePropensity => {
                clamp_propensity(data.true_propensity().expect("checked above")[i])
            }
            _ => fit.predict_propensity(&obs[i].x),
        };
        let mu = match outcome {
            OutcomeMethod::TrueOutcomeMean => {
                data.true_outcome_mean().expect("checked above")[i]
            }
            _ => fit.predict_outcome(&obs[i].x),
        };
        if !mu.is_finite() {
            return Err(Error::Numerical(format!(
                "outcome prediction for observation {i} is not finite"
            )));
        }
        e_hat.push(e);
        mu_hat.push(mu);
    }

    Ok(CrossFitNuisances { e_hat, mu_hat, folds: folds.clone(), fits })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Observation;
    use crate::rng::SplitRng;

    fn obs(d: u8, y: f64, x: Vec<f64>) -> Observation {
        Observation { d, y, x }
    }

    // -- solve_linear ------------------------------------------------------

    #[test]
    fn linear_solver_handles_pivoting_and_singularity() {
        // Requires a row swap: leading zero pivot.
        let a = vec![0.0, 1.0, 1.0, 0.0];
        let x = solve_linear(a, vec![2.0, 3.0]).unwrap();
        assert!((x[0] - 3.0).abs() < 1e-12 && (x[1] - 2.0).abs() < 1e-12);
        // Singular matrix is rejected.
        assert!(solve_linear(vec![1.0, 2.0, 2.0, 4.0], vec![1.0, 2.0]).is_none());
    }

    // -- logistic IRLS -----------------------------------------------------

    #[test]
    fn logistic_balanced_zero_covariates_gives_zero_coefficients() {
        let xs = vec![vec![0.0]; 10];
        let ys = vec![1, 0, 1, 0, 1, 0, 1, 0, 1, 0];
        let fit = fit_logistic_irls(&xs, &ys, 100, 1e-10).unwrap();
        assert!(fit.coef[0].abs() < 1e-10, "intercept {}", fit.coef[0]);
        assert!(fit.coef[1].abs() < 1e-10, "slope {}", fit.coef[1]);
        assert!(fit.converged);
    }

    #[test]
    fn logistic_zero_variance_design_recovers_logit_of_mean() {
        // 8 successes out of 10 with a constant covariate column: the ridge
        // fallback absorbs the collinearity and the intercept + slope*const
        // linear predictor lands on logit(0.8).
        let xs = vec![vec![1.0]; 10];
        let ys = vec![1, 1, 1, 1, 1, 1, 1, 1, 0, 0];
        let fit = fit_logistic_irls(&xs, &ys, 200, 1e-10).unwrap();
        let eta = fit.coef[0] + fit.coef[1];
        assert!((eta - 4.0f64.ln()).abs() < 1e-6, "eta {eta}");
        assert!((fit.predict(&[1.0]) - 0.8).abs() < 1e-8);
        assert!(fit.ridged);
    }

    #[test]
    fn logistic_recovers_known_slope_within_three_standard_errors() {
        // 200 draws from a logistic model with intercept 0 and slope 2.
        let mut rng = SplitRng::new(314159);
        let n = 200;
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let x = 2.0 * rng.uniform() - 1.0;
            let p = sigmoid(2.0 * x);
            ys.push(u8::from(rng.bernoulli(p)));
            xs.push(vec![x]);
        }
        let fit = fit_logistic_irls(&xs, &ys, 100, 1e-10).unwrap();
        assert!(fit.converged);
        // Independent standard error: invert the 2x2 observed information at
        // the fitted coefficients by the closed-form inverse.
        let mut i00 = 0.0;
        let mut i01 = 0.0;
        let mut i11 = 0.0;
        for row in &xs {
            let x = row[0];
            let mu = sigmoid(fit.coef[0] + fit.coef[1] * x);
            let w = mu * (1.0 - mu);
            i00 += w;
            i01 += w * x;
            i11 += w * x * x;
        }
        let det = i00 * i11 - i01 * i01;
        let slope_se = (i00 / det).sqrt();
        assert!(
            (fit.coef[1] - 2.0).abs() < 3.0 * slope_se,
            "slope {} further than 3 SEs ({slope_se}) from 2",
            fit.coef[1]
        );
    }

    #[test]
    fn logistic_log_likelihood_is_monotone_over_iterations() {
        let mut rng = SplitRng::new(99);
        for _ in 0..25 {
            let n = 12 + rng.below(60) as usize;
            let p = 1 + rng.below(3) as usize;
            let xs: Vec<Vec<f64>> =
                (0..n).map(|_| (0..p).map(|_| rng.standard_normal()).collect()).collect();
            let ys: Vec<u8> = (0..n).map(|_| u8::from(rng.bernoulli(0.5))).collect();
            let fit = fit_logistic_irls(&xs, &ys, 60, 1e-9).unwrap();
            for pair in fit.ll_trace.windows(2) {
                assert!(
                    pair[1] >= pair[0] - 1e-8,
                    "log-likelihood decreased: {} -> {}",
                    pair[0],
                    pair[1]
                );
            }
        }
    }

    #[test]
    fn logistic_separation_is_flagged_and_capped() {
        // Perfectly separated labels with a hair-thin margin drive the
        // coefficient norm past the guard within a few Newton steps.
        let xs = vec![vec![0.0], vec![0.0004], vec![0.0006], vec![0.001]];
        let ys = vec![0, 0, 1, 1];
        let fit = fit_logistic_irls(&xs, &ys, 100, 1e-10).unwrap();
        assert!(fit.separation);
        let norm = fit.coef.iter().map(|c| c * c).sum::<f64>().sqrt();
        assert!((norm - SEPARATION_NORM).abs() < 1e-6, "capped norm {norm}");
    }

    #[test]
    fn logistic_validates_inputs() {
        assert!(fit_logistic_irls(&vec![vec![1.0]; 2], &[0, 1], 10, 1e-8).is_err()); // n <= p+1
        assert!(fit_logistic_irls(&vec![vec![1.0]; 3], &[0, 1], 10, 1e-8).is_err()); // length mismatch
        assert!(fit_logistic_irls(&vec![vec![1.0]; 3], &[0, 1, 2], 10, 1e-8).is_err()); // bad label
        assert!(fit_logistic_irls(&vec![vec![f64::NAN]; 3], &[0, 1, 0], 10, 1e-8).is_err());
    }

    // -- local polynomial regression ----------------------------------------

    #[test]
    fn local_poly_constant_data_returns_the_constant() {
        let xs = vec![vec![0.1], vec![0.2], vec![0.3]];
        let ys = vec![7.5, 7.5, 7.5];
        for degree in [0, 1] {
            let v = local_poly_predict(&[0.2], &xs, &ys, 0.5, degree);
            assert!((v - 7.5).abs() < 1e-12, "degree {degree}: {v}");
        }
    }

    #[test]
    fn local_poly_empty_window_returns_zero() {
        let xs = vec![vec![10.0]];
        let ys = vec![3.0];
        assert_eq!(local_poly_predict(&[0.0], &xs, &ys, 0.5, 0), 0.0);
        assert_eq!(local_poly_predict(&[0.0], &xs, &ys, -1.0, 1), 0.0);
        assert_eq!(local_poly_predict(&[0.0], &[], &[], 1.0, 1), 0.0);
    }

    #[test]
    fn local_poly_degree_one_reproduces_a_line() {
        let xs: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 * 0.05]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 + 3.0 * x[0]).collect();
        for x0 in [0.0, 0.33, 0.71, 0.95] {
            let v = local_poly_predict(&[x0], &xs, &ys, 0.3, 1);
            assert!((v - (2.0 + 3.0 * x0)).abs() < 1e-10, "at {x0}: {v}");
        }
    }

    #[test]
    fn local_poly_rank_deficient_design_falls_back_to_window_mean() {
        // All covariates identical: the degree-1 design is singular.
        let xs = vec![vec![0.5]; 4];
        let ys = vec![1.0, 2.0, 3.0, 6.0];
        let deg1 = local_poly_predict(&[0.5], &xs, &ys, 0.1, 1);
        let deg0 = local_poly_predict(&[0.5], &xs, &ys, 0.1, 0);
        assert_eq!(deg1, deg0);
        assert!((deg0 - 3.0).abs() < 1e-12);
    }

    #[test]
    fn sorted_local_linear_matches_generic_path() {
        let mut rng = SplitRng::new(555);
        for _ in 0..50 {
            let n = 5 + rng.below(60) as usize;
            let points: Vec<(f64, f64)> =
                (0..n).map(|_| (rng.uniform(), rng.standard_normal())).collect();
            let h = 0.05 + 0.4 * rng.uniform();
            let model = SortedLocalLinear1d::fit(points.clone(), h);
            let xs: Vec<Vec<f64>> = points.iter().map(|&(x, _)| vec![x]).collect();
            let ys: Vec<f64> = points.iter().map(|&(_, y)| y).collect();
            for _ in 0..10 {
                let x0 = rng.uniform();
                let fast = model.predict(x0);
                let slow = local_poly_predict(&[x0], &xs, &ys, h, 1);
                assert!(
                    (fast - slow).abs() < 1e-8 * (1.0 + slow.abs()),
                    "fast {fast} vs generic {slow} at {x0}"
                );
            }
        }
    }

    /// Direct (unbinned) Gaussian-kernel local-linear fit at one query,
    /// with the same truncation and fallback conventions as the binned path.
    fn gaussian_local_linear_direct(points: &[(f64, f64)], h: f64, x0: f64) -> f64 {
        let (mut s0, mut s1, mut s2, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &(x, y) in points {
            let t = x - x0;
            if t.abs() > GAUSSIAN_TRUNCATION * h {
                continue;
            }
            let z = t / h;
            let w = (-0.5 * z * z).exp();
            s0 += w;
            s1 += w * t;
            s2 += w * t * t;
            t0 += w * y;
            t1 += w * t * y;
        }
        if s0 <= 0.0 {
            return 0.0;
        }
        let det = s0 * s2 - s1 * s1;
        let scale = (s0 * s2.abs()).max(s1 * s1).max(1e-300);
        if det.abs() <= 1e-12 * scale {
            return t0 / s0;
        }
        (s2 * t0 - s1 * t1) / det
    }

    #[test]
    fn binned_gaussian_matches_direct_weighted_fit() {
        let mut rng = SplitRng::new(808);
        for trial in 0..20 {
            let n = 200 + rng.below(400) as usize;
            let points: Vec<(f64, f64)> = (0..n)
                .map(|_| {
                    let x = rng.uniform();
                    (x, (5.0 * x).sin() + 0.3 * rng.standard_normal())
                })
                .collect();
            let h = 0.08 + 0.3 * rng.uniform();
            let model = BinnedGaussianLocalLinear1d::fit(&points, h, 0.0, 1.0);
            for q in 0..=20 {
                let x0 = q as f64 / 20.0;
                let binned = model.predict(x0);
                let direct = gaussian_local_linear_direct(&points, h, x0);
                assert!(
                    (binned - direct).abs() < 0.02 * (1.0 + direct.abs()),
                    "trial {trial}: binned {binned} vs direct {direct} at {x0} (h = {h})"
                );
            }
        }
    }

    #[test]
    fn binned_gaussian_degenerate_inputs() {
        // No points: the no-local-information convention everywhere.
        let empty = BinnedGaussianLocalLinear1d::fit(&[], 0.1, 0.0, 1.0);
        assert_eq!(empty.predict(0.3), 0.0);
        // Zero-extent support: the plain mean.
        let stacked = vec![(0.5, 1.0), (0.5, 3.0)];
        let flat = BinnedGaussianLocalLinear1d::fit(&stacked, 0.1, 0.5, 0.5);
        assert!((flat.predict(0.5) - 2.0).abs() < 1e-12);
        // A single point inside a real interval: rank-deficient local design
        // falls back to the weighted mean, which is that point's value.
        let lone = BinnedGaussianLocalLinear1d::fit(&[(0.4, 2.5)], 0.2, 0.0, 1.0);
        assert!((lone.predict(0.4) - 2.5).abs() < 1e-9, "{}", lone.predict(0.4));
    }

    #[test]
    fn binned_gaussian_recovers_a_line_exactly_enough() {
        // Local-linear smoothers reproduce affine targets up to binning
        // error, including at the support boundary.
        let points: Vec<(f64, f64)> =
            (0..500).map(|i| {
                let x = i as f64 / 499.0;
                (x, 2.0 - 3.0 * x)
            }).collect();
        let model = BinnedGaussianLocalLinear1d::fit(&points, 0.15, 0.0, 1.0);
        for q in 0..=50 {
            let x0 = q as f64 / 50.0;
            let want = 2.0 - 3.0 * x0;
            assert!(
                (model.predict(x0) - want).abs() < 1e-3,
                "at {x0}: {} vs {want}",
                model.predict(x0)
            );
        }
    }

    // -- adaptive bandwidth ---------------------------------------------------

    fn dataset_1d(points: Vec<(u8, f64, f64)>) -> Dataset {
        let rows = points.into_iter().map(|(d, y, x)| obs(d, y, vec![x])).collect();
        Dataset::new(rows, 1).unwrap()
    }

    #[test]
    fn bandwidth_with_stacked_treated_points_solves_the_budget() {
        // 8 treated points at the query itself, plus a far control to give
        // the bounding box diameter 1: budget 2 h^{-2} = 8 crosses at 0.5.
        let mut rows: Vec<(u8, f64, f64)> = (0..8).map(|_| (1, 0.0, 0.3)).collect();
        rows.push((0, 0.0, 1.3));
        let data = dataset_1d(rows);
        let choice = adaptive_bandwidth(&[0.3], &data, 1.0).unwrap();
        assert!(!choice.no_treated);
        assert!((choice.h - 0.5).abs() < 1e-12, "h = {}", choice.h);
    }

    #[test]
    fn bandwidth_with_no_treated_points_returns_cap_with_flag() {
        let data = dataset_1d(vec![(0, 0.0, 0.0), (0, 0.0, 2.0)]);
        let choice = adaptive_bandwidth(&[0.5], &data, 1.0).unwrap();
        assert!(choice.no_treated);
        assert!((choice.h - 2.0).abs() < 1e-12);
    }

    #[test]
    fn bandwidth_single_distant_point_is_capped_at_the_jump() {
        // One treated point at distance 10: below 10 the count is 0 (always
        // feasible), at 10 the budget 2 h^{-2} = 0.02 < 1 fails, so the
        // supremum is the jump location, which equals the cap here.
        let data = dataset_1d(vec![(1, 0.0, 10.0)]);
        let choice = adaptive_bandwidth(&[0.0], &data, 1.0).unwrap();
        assert!((choice.h - 10.0).abs() < 1e-12, "h = {}", choice.h);
    }

    /// Brute-force grid oracle: largest h on a 1e-6 grid with N(h) <= 2 h^{-2 beta}.
    fn bandwidth_grid_oracle(x0: f64, data: &Dataset, beta: f64, cap: f64) -> f64 {
        let mut dist: Vec<f64> = data
            .observations()
            .iter()
            .filter(|o| o.d == 1)
            .map(|o| (o.x[0] - x0).abs())
            .collect();
        dist.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let steps = (cap / 1e-6).round() as usize;
        let mut best = 0.0;
        for s in (0..=steps).rev() {
            let h = s as f64 * 1e-6;
            let count = dist.partition_point(|&v| v <= h);
            if h == 0.0 || (count as f64) <= 2.0 * h.powf(-2.0 * beta) {
                best = h;
                break;
            }
        }
        best
    }

    #[test]
    fn bandwidth_agrees_with_grid_oracle_on_random_data() {
        let mut rng = SplitRng::new(777);
        for trial in 0..100 {
            let n = 5 + rng.below(45) as usize;
            let rows: Vec<(u8, f64, f64)> =
                (0..n).map(|_| (u8::from(rng.bernoulli(0.6)), 0.0, rng.uniform())).collect();
            if rows.iter().all(|r| r.0 == 0) {
                continue;
            }
            let data = dataset_1d(rows);
            let x0 = rng.uniform();
            let beta = 0.5 + 1.5 * rng.uniform();
            let choice = adaptive_bandwidth(&[x0], &data, beta).unwrap();
            let (lo, hi) = data.bounding_box().unwrap();
            let cap_lo = lo[0].min(x0);
            let cap_hi = hi[0].max(x0);
            let cap = if cap_hi > cap_lo { cap_hi - cap_lo } else { 1.0 };
            let oracle = bandwidth_grid_oracle(x0, &data, beta, cap);
            assert!(
                (choice.h - oracle).abs() <= 2e-6,
                "trial {trial}: exact {} vs grid oracle {oracle}",
                choice.h
            );
        }
    }

    #[test]
    fn bandwidth_validates_inputs() {
        let data = dataset_1d(vec![(1, 0.0, 0.5)]);
        assert!(adaptive_bandwidth(&[0.1, 0.2], &data, 1.0).is_err());
        assert!(adaptive_bandwidth(&[0.1], &data, 0.0).is_err());
        assert!(adaptive_bandwidth(&[f64::NAN], &data, 1.0).is_err());
        let empty = Dataset::new(vec![], 1).unwrap();
        assert!(adaptive_bandwidth(&[0.1], &empty, 1.0).is_err());
    }

    // -- adaptive regressor ---------------------------------------------------

    #[test]
    fn adaptive_regressor_first_pass_count_matches_hand_evaluation() {
        // 16 evenly spaced treated points spanning [0, 1] exactly: spacing
        // target 16^{-1/3} = 0.3969, so ceil(1/0.3969) = 3 cells and 4 points.
        let rows: Vec<(u8, f64, f64)> =
            (0..16).map(|i| (1, 0.0, i as f64 / 15.0)).collect();
        let data = dataset_1d(rows);
        let fit = fit_adaptive_regressor(&data, 1.0).unwrap();
        assert_eq!(fit.first_pass_gridpoints(), 4);
        assert_eq!(fit.degree(), 0);
        assert!(fit.bandwidths().iter().all(|&h| h > 0.0));
    }

    #[test]
    fn adaptive_regressor_gridpoint_values_equal_window_means_for_beta_one() {
        // Noiseless linear outcome, beta = 1 (degree 0): every grid value
        // must equal the plain mean of treated outcomes within its bandwidth.
        let mut rng = SplitRng::new(4321);
        let rows: Vec<(u8, f64, f64)> = (0..200)
            .map(|_| {
                let x = rng.uniform();
                (u8::from(rng.bernoulli(0.7)), 1.0 + 2.0 * x, x)
            })
            .collect();
        let data = dataset_1d(rows);
        let fit = fit_adaptive_regressor(&data, 1.0).unwrap();
        let treated: Vec<(f64, f64)> = data
            .observations()
            .iter()
            .filter(|o| o.d == 1)
            .map(|o| (o.x[0], o.y))
            .collect();
        for ((g, &v), &h) in
            fit.gridpoints().iter().zip(fit.grid_values()).zip(fit.bandwidths())
        {
            let window: Vec<f64> = treated
                .iter()
                .filter(|&&(x, _)| (x - g[0]).abs() <= h)
                .map(|&(_, y)| y)
                .collect();
            let mean =
                if window.is_empty() { 0.0 } else { window.iter().sum::<f64>() / window.len() as f64 };
            assert!((v - mean).abs() < 1e-12, "gridpoint {g:?}: {v} vs window mean {mean}");
        }
    }

    #[test]
    fn adaptive_regressor_concentrates_on_pure_noise() {
        // mu = 0 with unit-variance noise: at least 95% of gridpoints must
        // land within 5 / sqrt(local treated count) of zero.
        let mut rng = SplitRng::new(2718);
        let rows: Vec<(u8, f64, f64)> = (0..1000)
            .map(|_| {
                let x = rng.uniform();
                let d = u8::from(rng.bernoulli(0.5));
                let y = if d == 1 { rng.standard_normal() } else { 0.0 };
                (d, y, x)
            })
            .collect();
        let data = dataset_1d(rows);
        let treated: Vec<f64> = data
            .observations()
            .iter()
            .filter(|o| o.d == 1)
            .map(|o| o.x[0])
            .collect();
        let fit = fit_adaptive_regressor(&data, 1.0).unwrap();
        let mut ok = 0usize;
        let total = fit.gridpoints().len();
        for ((g, &v), &h) in
            fit.gridpoints().iter().zip(fit.grid_values()).zip(fit.bandwidths())
        {
            let count = treated.iter().filter(|&&x| (x - g[0]).abs() <= h).count();
            if count > 0 && v.abs() <= 5.0 / (count as f64).sqrt() {
                ok += 1;
            }
        }
        assert!(
            ok * 100 >= total * 95,
            "only {ok} of {total} gridpoints within the concentration bound"
        );
    }

    #[test]
    fn adaptive_regressor_requires_enough_treated_points() {
        let data = dataset_1d(vec![(1, 1.0, 0.2), (0, 0.0, 0.8)]);
        // beta = 1 needs ceil(1)+1 = 2 treated rows.
        assert!(matches!(fit_adaptive_regressor(&data, 1.0), Err(Error::Degenerate(_))));
        assert!(fit_adaptive_regressor(&data, f64::NAN).is_err());
    }

    #[test]
    fn predict_adaptive_reproduces_gridpoints_and_interpolates_constants() {
        let rows: Vec<(u8, f64, f64)> = (0..50).map(|i| (1, 4.25, i as f64 / 49.0)).collect();
        let data = dataset_1d(rows);
        let fit = fit_adaptive_regressor(&data, 1.0).unwrap();
        // Exact hit on every gridpoint returns the stored value bitwise.
        for (g, &v) in fit.gridpoints().iter().zip(fit.grid_values()) {
            assert_eq!(predict_adaptive(&fit, g), v);
        }
        // Constant grid values interpolate to the same constant anywhere
        // inside the lattice.
        for x in [0.03, 0.37, 0.5, 0.81] {
            let v = predict_adaptive(&fit, &[x]);
            assert!((v - 4.25).abs() < 1e-9, "at {x}: {v}");
        }
        // Far outside the lattice the neighborhood is empty.
        assert_eq!(predict_adaptive(&fit, &[1e6]), 0.0);
    }

    #[test]
    fn predict_adaptive_linear_case_interpolates_between_gridpoints() {
        // beta in (1, 2] uses degree 1 both at gridpoints and between them,
        // so a noiseless linear signal passes through interpolation intact.
        let rows: Vec<(u8, f64, f64)> =
            (0..400).map(|i| (1, 3.0 - 2.0 * (i as f64 / 399.0), i as f64 / 399.0)).collect();
        let data = dataset_1d(rows);
        let fit = fit_adaptive_regressor(&data, 1.5).unwrap();
        assert_eq!(fit.degree(), 1);
        for x in [0.11, 0.43, 0.77] {
            let v = predict_adaptive(&fit, &[x]);
            let truth = 3.0 - 2.0 * x;
            assert!((v - truth).abs() < 1e-8, "at {x}: {v} vs {truth}");
        }
    }

    // -- cross-fitting ---------------------------------------------------------

    fn annotated_dataset(n: usize, seed: u64) -> Dataset {
        let mut rng = SplitRng::new(seed);
        let mut rows = Vec::with_capacity(n);
        let mut e = Vec::with_capacity(n);
        let mut mu = Vec::with_capacity(n);
        for _ in 0..n {
            let x = rng.open_uniform();
            let prop = 0.2 + 0.6 * x;
            let d = u8::from(rng.bernoulli(prop));
            let mean = 1.0 + x;
            let y = if d == 1 { mean + 0.1 * rng.standard_normal() } else { 0.0 };
            rows.push(obs(d, y, vec![x]));
            e.push(prop);
            mu.push(mean);
        }
        Dataset::new(rows, 1)
            .unwrap()
            .with_true_propensity(e)
            .unwrap()
            .with_true_outcome_mean(mu)
            .unwrap()
    }

    #[test]
    fn cross_fit_oracle_passes_annotations_through_exactly() {
        let data = annotated_dataset(60, 10);
        let fit = cross_fit(
            &data,
            3,
            &PropensityMethod::TruePropensity,
            &OutcomeMethod::TrueOutcomeMean,
            42,
        )
        .unwrap();
        assert_eq!(fit.e_hat, data.true_propensity().unwrap());
        assert_eq!(fit.mu_hat, data.true_outcome_mean().unwrap());
    }

    #[test]
    fn cross_fit_constant_methods_use_fold_complements() {
        // With k = n (leave-one-out analogue) and a constant propensity, the
        // prediction for row i is the treated fraction among the other rows.
        let rows = vec![
            obs(1, 1.0, vec![0.0]),
            obs(0, 0.0, vec![1.0]),
            obs(1, 3.0, vec![2.0]),
            obs(0, 0.0, vec![3.0]),
        ];
        let data = Dataset::new(rows, 1).unwrap();
        let fit = cross_fit(
            &data,
            4,
            &PropensityMethod::ConstantRate,
            &OutcomeMethod::ConstantMean,
            0,
        )
        .unwrap();
        for (i, o) in data.observations().iter().enumerate() {
            let expected = if o.d == 1 { 1.0 / 3.0 } else { 2.0 / 3.0 };
            assert!((fit.e_hat[i] - expected).abs() < 1e-12, "row {i}: {}", fit.e_hat[i]);
        }
    }

    #[test]
    fn cross_fit_is_deterministic_and_seed_sensitive() {
        let data = annotated_dataset(80, 3);
        let method = OutcomeMethod::LocalLinear {
            bandwidth: BandwidthSpec::InverseFifthRoot,
            kernel: KernelSpec::Gaussian,
        };
        let a = cross_fit(&data, 5, &PropensityMethod::LogisticIrls, &method, 7).unwrap();
        let b = cross_fit(&data, 5, &PropensityMethod::LogisticIrls, &method, 7).unwrap();
        let c = cross_fit(&data, 5, &PropensityMethod::LogisticIrls, &method, 8).unwrap();
        assert_eq!(a.e_hat, b.e_hat);
        assert_eq!(a.mu_hat, b.mu_hat);
        assert_ne!(a.e_hat, c.e_hat);
        assert!(a.e_hat.iter().all(|&e| e > 0.0 && e < 1.0));
        assert!(a.mu_hat.iter().all(|m| m.is_finite()));
    }

    #[test]
    fn cross_fit_rejects_folds_without_both_arms() {
        // All-treated data: every training complement lacks controls.
        let rows: Vec<Observation> = (0..10).map(|i| obs(1, 1.0, vec![i as f64])).collect();
        let data = Dataset::new(rows, 1).unwrap();
        let err = cross_fit(&data, 5, &PropensityMethod::ConstantRate, &OutcomeMethod::ConstantMean, 0)
            .unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)), "{err}");
        assert!(err.to_string().contains("fold"), "{err}");
    }

    #[test]
    fn cross_fit_requires_annotations_for_oracle_methods() {
        let rows = vec![obs(1, 1.0, vec![0.0]), obs(0, 0.0, vec![1.0]), obs(1, 2.0, vec![0.5]), obs(0, 0.0, vec![0.2])];
        let data = Dataset::new(rows, 1).unwrap();
        assert!(cross_fit(&data, 2, &PropensityMethod::TruePropensity, &OutcomeMethod::ConstantMean, 0)
            .is_err());
        assert!(cross_fit(&data, 2, &PropensityMethod::ConstantRate, &OutcomeMethod::TrueOutcomeMean, 0)
            .is_err());
    }
}
