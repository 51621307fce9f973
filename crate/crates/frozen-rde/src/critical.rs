//! Root finding: the critical parameter `θ*` and the nontrivial coupling
//! `ĉ(θ)` above it.
//!
//! `θ*` is the unique sign change of the strictly decreasing map
//! `θ ↦ f̃_θ(∞)` (the derivative limit of the signature family at `c = 0`),
//! bracketed inside `(1/2, 1)`. For `θ > θ*` the function
//! `h(c) = f_{θ,c}(∞) − 1/(1+θ)` starts out negative, is positive by
//! `c = 4`, and its first upcrossing is `ĉ`, the coupling of the
//! non-diagonal bivariate solution.

use crate::signature::{f_infinity, DecrementIter, SignatureError};
use crate::{defaults, map_maybe_par};
use std::sync::OnceLock;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CriticalError {
    #[error("no sign change over the bracket: g(lo)={g_lo}, g(hi)={g_hi}")]
    NoSignChange { g_lo: f64, g_hi: f64 },
    #[error("theta={theta} is not above the critical parameter {theta_star}; no positive coupling exists there")]
    BelowCritical { theta: f64, theta_star: f64 },
    #[error("no sign change found on the scan grid ({} points dumped)", profile.len())]
    NoBracket { profile: Vec<(f64, f64)> },
    #[error(transparent)]
    Signature(#[from] SignatureError),
}

/// A bracketed root: `lo < value < hi`, bracket width within the requested
/// tolerance, endpoint signs verified opposite.
#[derive(Debug, Clone, PartialEq)]
pub struct RootResult {
    pub value: f64,
    pub bracket: (f64, f64),
    pub residual: f64,
    pub iterations: usize,
}

/// Value of the derivative limit with its achieved tail bound.
pub fn derivative_limit(theta: f64, abs_tol: f64) -> (f64, f64) {
    let coef = (1.0 + theta) * (1.0 + theta);
    let geom = 1.0 / (1.0 - theta);
    let mut val = 2.0 * (1.0 + theta);
    let mut pow = 1.0;
    let mut decs = DecrementIter::new(theta);
    for _ in 0..defaults::ITERATION_CAP {
        val -= decs.next().unwrap();
        pow *= theta;
        let tail = coef * pow * geom;
        if tail < abs_tol {
            return (val - tail / 2.0, tail / 2.0);
        }
    }
    (val, coef * pow * geom)
}

/// Sign of the derivative limit, with early exit: the partial sums decrease
/// to the limit, so a negative partial sum settles the sign immediately and
/// a positive one does once the remaining tail cannot flip it.
fn derivative_limit_sign(theta: f64) -> i32 {
    let coef = (1.0 + theta) * (1.0 + theta);
    let geom = 1.0 / (1.0 - theta);
    let mut val = 2.0 * (1.0 + theta);
    let mut pow = 1.0;
    let mut decs = DecrementIter::new(theta);
    for _ in 0..defaults::ITERATION_CAP {
        val -= decs.next().unwrap();
        pow *= theta;
        let tail = coef * pow * geom;
        if val < 0.0 {
            return -1;
        }
        if val - tail > 0.0 {
            return 1;
        }
        if tail < 1e-15 {
            return if val >= 0.0 { 1 } else { -1 };
        }
    }
    if val >= 0.0 {
        1
    } else {
        -1
    }
}

/// Bisection for `θ*` over the fixed bracket `[1/2, 1 − 1e-4]`.
pub fn theta_star(tol: f64) -> Result<RootResult, CriticalError> {
    assert!(tol >= 1e-12, "theta* tolerance floor is 1e-12");
    let (mut lo, mut hi) = (defaults::THETA_STAR_LO, defaults::THETA_STAR_HI);
    let (s_lo, s_hi) = (derivative_limit_sign(lo), derivative_limit_sign(hi));
    if s_lo <= 0 || s_hi >= 0 {
        let (g_lo, _) = derivative_limit(lo, 1e-12);
        let (g_hi, _) = derivative_limit(hi, 1e-12);
        return Err(CriticalError::NoSignChange { g_lo, g_hi });
    }
    let mut iterations = 0;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if derivative_limit_sign(mid) > 0 {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
    }
    let value = 0.5 * (lo + hi);
    let (residual, _) = derivative_limit(value, 1e-13);
    Ok(RootResult { value, bracket: (lo, hi), residual, iterations })
}

/// `θ*` at tolerance 1e-6, computed once and cached; gates every ĉ search.
pub fn theta_star_cached() -> f64 {
    static CACHE: OnceLock<f64> = OnceLock::new();
    *CACHE.get_or_init(|| {
        theta_star(defaults::THETA_STAR_GATE_TOL)
            .expect("theta* bracket endpoints have opposite signs")
            .value
    })
}

/// The admissibility ceiling `max(0, θ(2θ−1)/(1+θ)²)` for the coupling of
/// any bivariate solution.
pub fn coupling_upper_bound(theta: f64) -> f64 {
    (theta * (2.0 * theta - 1.0) / ((1.0 + theta) * (1.0 + theta))).max(0.0)
}

/// Result of a ĉ search: the bracketed root plus the admissibility-bound
/// check (a warning, never a failure).
#[derive(Debug, Clone, PartialEq)]
pub struct CHat {
    pub root: RootResult,
    pub upper_bound: f64,
    pub bound_ok: bool,
}

fn limit_gap(theta: f64, c: f64, eval_tol: f64) -> Result<f64, CriticalError> {
    Ok(f_infinity(theta, c, eval_tol)?.value - 1.0 / (1.0 + theta))
}

/// Finds the positive coupling with `f_{θ,ĉ}(∞) = 1/(1+θ)` for `θ > θ*`.
///
/// `h(c)` has a trivial root at 0, so the log-spaced scan starts at 1e-8
/// and takes the first minus-to-plus crossing before bisecting. Below the
/// critical parameter no such coupling exists and the call is rejected.
pub fn find_c_hat(theta: f64, tol: f64) -> Result<CHat, CriticalError> {
    assert!(theta > 0.0 && theta < 1.0 && tol > 0.0);
    let gate = theta_star_cached();
    if theta <= gate + defaults::THETA_STAR_GATE_TOL {
        return Err(CriticalError::BelowCritical { theta, theta_star: gate });
    }
    let eval_tol = (tol * 1e-3).min(1e-12).max(1e-15);
    let n = defaults::C_SCAN_POINTS;
    let ratio = (defaults::C_SCAN_MAX / defaults::C_SCAN_MIN).powf(1.0 / (n - 1) as f64);
    let mut grid = Vec::with_capacity(n);
    let mut c = defaults::C_SCAN_MIN;
    for _ in 0..n {
        grid.push((c, limit_gap(theta, c, eval_tol)?));
        c *= ratio;
    }
    let crossing = grid.windows(2).find(|w| w[0].1 < 0.0 && w[1].1 > 0.0);
    let (mut lo, mut hi) = match crossing {
        Some(w) => (w[0].0, w[1].0),
        None => return Err(CriticalError::NoBracket { profile: grid }),
    };
    let mut iterations = 0;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if limit_gap(theta, mid, eval_tol)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
    }
    let value = 0.5 * (lo + hi);
    let residual = limit_gap(theta, value, eval_tol)?;
    let upper_bound = coupling_upper_bound(theta);
    Ok(CHat {
        root: RootResult { value, bracket: (lo, hi), residual, iterations },
        upper_bound,
        bound_ok: value <= upper_bound + tol,
    })
}

/// One row of a ĉ sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub theta: f64,
    pub c_hat: Option<f64>,
    pub status: String,
}

fn sweep_impl(theta_min: f64, theta_max: f64, step: f64, tol: f64, parallel: bool) -> Vec<SweepPoint> {
    assert!(step > 0.0 && theta_min > 0.0 && theta_max < 1.0 && theta_min <= theta_max);
    let gate = theta_star_cached();
    let count = ((theta_max - theta_min) / step + 0.5).floor() as usize + 1;
    let thetas: Vec<f64> = (0..count).map(|i| theta_min + i as f64 * step).collect();
    map_maybe_par(&thetas, parallel, |&theta| {
        if theta <= gate + defaults::THETA_STAR_GATE_TOL {
            return SweepPoint { theta, c_hat: Some(0.0), status: "below_critical".into() };
        }
        match find_c_hat(theta, tol) {
            Ok(ch) => {
                let status = if ch.bound_ok { "ok" } else { "above_coupling_bound" };
                SweepPoint { theta, c_hat: Some(ch.root.value), status: status.into() }
            }
            Err(e) => SweepPoint { theta, c_hat: None, status: error_code(&e).into() },
        }
    })
}

pub(crate) fn error_code(e: &CriticalError) -> &'static str {
    match e {
        CriticalError::NoSignChange { .. } => "no_sign_change",
        CriticalError::BelowCritical { .. } => "below_critical",
        CriticalError::NoBracket { .. } => "no_bracket",
        CriticalError::Signature(SignatureError::IterationCap { .. }) => "iteration_cap",
        CriticalError::Signature(SignatureError::TailTooLoose { .. }) => "tail_too_loose",
        CriticalError::Signature(_) => "signature_error",
    }
}

/// ĉ over a θ-grid; zero below the critical parameter, per-point failures
/// carried as a status instead of aborting the sweep.
pub fn sweep_c_hat(theta_min: f64, theta_max: f64, step: f64, tol: f64) -> Vec<SweepPoint> {
    sweep_impl(theta_min, theta_max, step, tol, true)
}

/// Serial variant of [`sweep_c_hat`], kept for the parallel-vs-serial bench.
pub fn sweep_c_hat_seq(theta_min: f64, theta_max: f64, step: f64, tol: f64) -> Vec<SweepPoint> {
    sweep_impl(theta_min, theta_max, step, tol, false)
}

fn profile_impl(theta: f64, c_grid: &[f64], parallel: bool) -> Result<Vec<(f64, f64)>, CriticalError> {
    let rows = map_maybe_par(c_grid, parallel, |&c| {
        f_infinity(theta, c, 1e-12).map(|r| (c, r.value)).map_err(CriticalError::from)
    });
    rows.into_iter().collect()
}

/// The limit profile `c ↦ f_{θ,c}(∞)` over an explicit grid; the data
/// behind the single-dip picture used as uniqueness evidence.
pub fn profile_f_infinity(theta: f64, c_grid: &[f64]) -> Result<Vec<(f64, f64)>, CriticalError> {
    profile_impl(theta, c_grid, true)
}

/// Serial variant of [`profile_f_infinity`] for the bench.
pub fn profile_f_infinity_seq(theta: f64, c_grid: &[f64]) -> Result<Vec<(f64, f64)>, CriticalError> {
    profile_impl(theta, c_grid, false)
}

/// Evenly spaced grid on `[0, c_max]` with `points ≥ 2` entries.
pub fn linear_grid(c_max: f64, points: usize) -> Vec<f64> {
    assert!(points >= 2 && c_max > 0.0);
    (0..points).map(|i| c_max * i as f64 / (points - 1) as f64).collect()
}
