//! The scalar signature recursion `f_{θ,c}` and its derived quantities.
//!
//! For `θ ∈ (0,1)` and `c ≥ 0` the sequence
//!
//! ```text
//! f(0) = (1 + sqrt(1 + 8c(1+θ)²)) / (2(1+θ))
//! f(n) = (θ^{n-1} + sqrt((2f(n-1) - θ^{n-1})² - 4cθ^{2n-2}(1-θ²))) / 2
//! ```
//!
//! is the unique solution of the quadratic system tying consecutive terms,
//! is non-increasing, and converges; the per-step decrease is at most
//! `sqrt(c(1-θ²))·θ^{n-1}`, which gives a certified geometric tail bound for
//! the limit. A signature is the one-dimensional reduction of a scale
//! invariant symmetric bivariate measure; the admissibility conditions and
//! the summed RDE identity checked here characterize exactly which
//! sequences arise that way.

use crate::report::VerdictReport;
use crate::{defaults, map_maybe_par};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SignatureError {
    #[error("recursion map argument {x} is not above the domain boundary {boundary}")]
    OutOfDomain { x: f64, boundary: f64 },
    #[error("iteration cap {iterations} reached; achieved tail bound {achieved_bound}")]
    IterationCap { value: f64, achieved_bound: f64, iterations: usize },
    #[error("analytic tail bracket {width} exceeds the requested tolerance {tol}")]
    TailTooLoose { width: f64, tol: f64 },
    #[error("sequence of length {len} is too short, need at least {needed}")]
    TooShort { needed: usize, len: usize },
}

/// A computed signature: `f(0..=N)` for fixed `(θ, c)`, with a limit
/// estimate and a certified bound on `|f(N) − f(∞)|`.
#[derive(Debug, Clone, PartialEq)]
pub struct Signature {
    pub theta: f64,
    pub c: f64,
    values: Vec<f64>,
    pub limit: f64,
    pub tail_bound: f64,
}

/// Borrowed view of any signature-like sequence with a limit; the generic
/// input of the admissibility and residual checks.
#[derive(Debug, Clone, Copy)]
pub struct SignatureRef<'a> {
    pub theta: f64,
    pub values: &'a [f64],
    pub limit: f64,
    pub tail_bound: f64,
}

impl Signature {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn as_ref(&self) -> SignatureRef<'_> {
        SignatureRef {
            theta: self.theta,
            values: &self.values,
            limit: self.limit,
            tail_bound: self.tail_bound,
        }
    }

    /// Computes `f_{θ,c}(0..=n_max)`. The recursion never leaves its domain,
    /// so this cannot fail; invalid parameters panic.
    pub fn compute(theta: f64, c: f64, n_max: usize) -> Signature {
        assert!(theta > 0.0 && theta < 1.0, "theta must be in (0,1)");
        assert!(c >= 0.0, "c must be nonnegative");
        assert!(n_max >= 1, "need at least f(0) and f(1)");
        let one_minus_th2 = 1.0 - theta * theta;
        let mut values = Vec::with_capacity(n_max + 1);
        values.push((1.0 + (1.0 + 8.0 * c * (1.0 + theta) * (1.0 + theta)).sqrt()) / (2.0 * (1.0 + theta)));
        let mut pow = 1.0; // θ^{n-1}
        for _ in 1..=n_max {
            let prev = *values.last().unwrap();
            let disc = (2.0 * prev - pow) * (2.0 * prev - pow) - 4.0 * c * pow * pow * one_minus_th2;
            debug_assert!(disc > -1e-12, "discriminant left its guaranteed-positive domain");
            values.push((pow + disc.max(0.0).sqrt()) / 2.0);
            pow *= theta;
        }
        // pow is now θ^{n_max}
        let tail_bound = (c * one_minus_th2).sqrt() * pow / (1.0 - theta);
        let last = *values.last().unwrap();
        Signature { theta, c, values, limit: last - tail_bound / 2.0, tail_bound }
    }

    pub fn check_conditions(&self, tol: f64) -> VerdictReport {
        check_conditions(self.as_ref(), tol)
    }
}

/// The recursion map `x ↦ (1 + sqrt((2x-1)² - 4c(1-θ²))) / (2θ)`, defined
/// for `x > sqrt((1-θ²)c) + 1/2`. For `c = 0` this is exactly `x/θ`.
pub fn recursion_map(theta: f64, c: f64, x: f64) -> Result<f64, SignatureError> {
    assert!(theta > 0.0 && theta < 1.0, "theta must be in (0,1)");
    assert!(c >= 0.0, "c must be nonnegative");
    if c == 0.0 {
        if x <= 0.5 {
            return Err(SignatureError::OutOfDomain { x, boundary: 0.5 });
        }
        return Ok(x / theta);
    }
    let boundary = ((1.0 - theta * theta) * c).sqrt() + 0.5;
    if x <= boundary {
        return Err(SignatureError::OutOfDomain { x, boundary });
    }
    let disc = (2.0 * x - 1.0) * (2.0 * x - 1.0) - 4.0 * c * (1.0 - theta * theta);
    Ok((1.0 + disc.sqrt()) / (2.0 * theta))
}

/// Limit of the signature recursion with a certified error bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FInfinity {
    pub value: f64,
    pub certified_error: f64,
    pub iterations: usize,
}

/// Iterates until the certified tail bound `sqrt(c(1-θ²))·θ^n/(1-θ)` drops
/// below `tol`; returns the last value minus half the bound. Slow cases
/// (θ near 1) hit the iteration cap and report the achieved bound instead.
pub fn f_infinity(theta: f64, c: f64, tol: f64) -> Result<FInfinity, SignatureError> {
    assert!(theta > 0.0 && theta < 1.0, "theta must be in (0,1)");
    assert!(c >= 0.0 && tol > 0.0);
    let one_minus_th2 = 1.0 - theta * theta;
    let sq = (c * one_minus_th2).sqrt();
    let geom = 1.0 / (1.0 - theta);
    let mut f = (1.0 + (1.0 + 8.0 * c * (1.0 + theta) * (1.0 + theta)).sqrt()) / (2.0 * (1.0 + theta));
    let mut pow = 1.0; // θ^n
    let mut n = 0usize;
    loop {
        let bound = sq * pow * geom;
        if bound < tol {
            return Ok(FInfinity { value: f - bound / 2.0, certified_error: bound / 2.0, iterations: n });
        }
        if n >= defaults::ITERATION_CAP {
            return Err(SignatureError::IterationCap {
                value: f - bound / 2.0,
                achieved_bound: bound,
                iterations: n,
            });
        }
        let disc = (2.0 * f - pow) * (2.0 * f - pow) - 4.0 * c * pow * pow * one_minus_th2;
        f = (pow + disc.max(0.0).sqrt()) / 2.0;
        pow *= theta;
        n += 1;
    }
}

/// Incremental stream of the decrements `γ_n(θ)` of the derivative
/// sequence, using the cancellation-free form
/// `γ_n = (1+θ)²θ^{n-1} / (1 + 2·Σ_{k=1}^{n-1} θ^{-k})`.
pub(crate) struct DecrementIter {
    theta: f64,
    coef: f64,
    pow: f64,
    denom: f64,
    inv: f64,
}

impl DecrementIter {
    pub(crate) fn new(theta: f64) -> Self {
        Self { theta, coef: (1.0 + theta) * (1.0 + theta), pow: 1.0, denom: 1.0, inv: 1.0 / theta }
    }
}

impl Iterator for DecrementIter {
    type Item = f64;
    fn next(&mut self) -> Option<f64> {
        let g = self.coef * self.pow / self.denom;
        self.pow *= self.theta;
        self.denom += 2.0 * self.inv;
        self.inv /= self.theta;
        Some(g)
    }
}

/// `γ_n(θ)` for `n ≥ 1`. Evaluates both algebraic forms, asserts their
/// agreement to 1e-12 relative where the subtractive form is stable
/// (θ ≤ 0.9), and returns the stable one.
pub fn derivative_decrement(theta: f64, n: usize) -> f64 {
    assert!(n >= 1, "decrements start at n = 1");
    assert!(theta > 0.0 && theta < 1.0);
    let stable = DecrementIter::new(theta).nth(n - 1).unwrap();
    if theta <= 0.9 {
        let subtractive =
            theta.powi(2 * n as i32 - 2) * (1.0 - theta * theta) / (2.0 / (1.0 + theta) - theta.powi(n as i32 - 1));
        assert!(
            (stable - subtractive).abs() <= 1e-12 * stable.abs(),
            "decrement formulas disagree at theta={theta}, n={n}: {stable} vs {subtractive}"
        );
    }
    stable
}

/// The derivative of the signature in `c` at `c = 0⁺`, as a sequence:
/// starts at `2(1+θ)` and drops by `γ_n` at each step.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeSeq {
    pub theta: f64,
    values: Vec<f64>,
    pub limit: f64,
    pub tail_bound: f64,
}

impl DerivativeSeq {
    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Computes the derivative sequence up to index `n_max` with the tail bound
/// `(1+θ)²θ^N/(1-θ)` on the remaining decrease.
pub fn derivative_sequence(theta: f64, n_max: usize) -> DerivativeSeq {
    assert!(n_max >= 1);
    let mut values = Vec::with_capacity(n_max + 1);
    values.push(2.0 * (1.0 + theta));
    let mut decs = DecrementIter::new(theta);
    for _ in 1..=n_max {
        let prev = *values.last().unwrap();
        values.push(prev - decs.next().unwrap());
    }
    let tail_bound = (1.0 + theta) * (1.0 + theta) * theta.powi(n_max as i32) / (1.0 - theta);
    let last = *values.last().unwrap();
    DerivativeSeq { theta, values, limit: last - tail_bound / 2.0, tail_bound }
}

/// Exploration helper: `f_{θ,c}(n) − c·f̃_θ(n)` for `n ≤ n_max`, the
/// first-order perturbation gap around the constant solution.
pub fn perturbation_gap(theta: f64, c: f64, n_max: usize) -> Vec<f64> {
    let f = Signature::compute(theta, c, n_max);
    let d = derivative_sequence(theta, n_max);
    f.values().iter().zip(d.values()).map(|(&fv, &dv)| fv - c * dv).collect()
}

/// Checks the five admissibility conditions that make a sequence the
/// signature of a symmetric scale invariant bivariate measure:
/// (i) `f(0) ≤ 1`, (ii) `lim f = 1/(1+θ)` within the certified tail,
/// (iii) non-increasing, (iv) `(1+θ)f(0) ≤ 2f(1)`,
/// (v) `(1+θ)f(n) ≤ θf(n-1) + f(n+1)`.
pub fn check_conditions(sig: SignatureRef<'_>, tol: f64) -> VerdictReport {
    let f = sig.values;
    assert!(f.len() >= 3, "need at least f(0..=2) to check the conditions");
    let theta = sig.theta;
    let mut report = VerdictReport::default();
    report.push("f0_at_most_one", 1.0 - f[0], tol);
    let target = 1.0 / (1.0 + theta);
    report.push("limit_matches", sig.tail_bound - (sig.limit - target).abs(), tol);
    let mono = (1..f.len()).map(|n| f[n - 1] - f[n]).fold(f64::INFINITY, f64::min);
    report.push("non_increasing", mono, tol);
    report.push("first_step", 2.0 * f[1] - (1.0 + theta) * f[0], tol);
    let convex = (1..f.len() - 1)
        .map(|n| theta * f[n - 1] + f[n + 1] - (1.0 + theta) * f[n])
        .fold(f64::INFINITY, f64::min);
    report.push("step_inequality", convex, tol);
    report
}

/// Sum `Σ_{t=n}^{∞} θ^t f(t+1)` with the tail beyond index `t_tail`
/// replaced analytically by the limit; returns the sum and the certified
/// bracket width from monotonicity (`limit − tail_bound ≤ f ≤ f(t_tail)`).
fn tail_sum(sig: SignatureRef<'_>, n: usize, t_tail: usize) -> Result<(f64, f64), SignatureError> {
    let f = sig.values;
    if f.len() <= t_tail {
        return Err(SignatureError::TooShort { needed: t_tail + 1, len: f.len() });
    }
    let theta = sig.theta;
    let mut pow = theta.powi(n as i32);
    let mut sum = 0.0;
    for t in n..t_tail {
        sum += pow * f[t + 1];
        pow *= theta;
    }
    // pow = θ^t_tail
    let geom = pow / (1.0 - theta);
    sum += sig.limit * geom;
    let width = pow * (f[t_tail] - sig.limit + sig.tail_bound).max(0.0);
    Ok((sum, width))
}

/// Recovers the recursion parameter from a signature through the closed
/// identity `c = 1/(1+θ)² + θf(0)/(1+θ) − (1-θ)·Σ θ^t f(t+1)`, with the
/// infinite sum truncated at `t_tail` and completed analytically.
pub fn parameter_from_signature(
    sig: SignatureRef<'_>,
    t_tail: usize,
    tol: f64,
) -> Result<f64, SignatureError> {
    let theta = sig.theta;
    let (sum, width) = tail_sum(sig, 0, t_tail)?;
    let bracket = (1.0 - theta) * width;
    if bracket > tol {
        return Err(SignatureError::TailTooLoose { width: bracket, tol });
    }
    Ok(1.0 / ((1.0 + theta) * (1.0 + theta)) + theta * sig.values[0] / (1.0 + theta) - (1.0 - theta) * sum)
}

/// Residual of the summed RDE identity at index `n`:
/// `f(n)² − [1/(1+θ)² + θⁿf(n) − (1-θ)Σ_{t≥n}θ^t f(t+1) + cθ^{2n}]`.
/// A signature solves the bivariate RDE iff this vanishes for all `n`
/// (together with the admissibility conditions).
pub fn rde_residual_at(
    sig: SignatureRef<'_>,
    c: f64,
    n: usize,
    t_tail: usize,
    tol: f64,
) -> Result<f64, SignatureError> {
    let theta = sig.theta;
    if sig.values.len() <= n {
        return Err(SignatureError::TooShort { needed: n + 1, len: sig.values.len() });
    }
    let (sum, width) = tail_sum(sig, n, t_tail)?;
    let bracket = (1.0 - theta) * width;
    if bracket > tol {
        return Err(SignatureError::TailTooLoose { width: bracket, tol });
    }
    let fn_ = sig.values[n];
    let pow_n = theta.powi(n as i32);
    let rhs = 1.0 / ((1.0 + theta) * (1.0 + theta)) + pow_n * fn_ - (1.0 - theta) * sum + c * pow_n * pow_n;
    Ok(fn_ * fn_ - rhs)
}

/// Worst absolute residual of the summed RDE identity over `n ≤ n_max`,
/// evaluated in parallel when available.
pub fn max_rde_residual(
    sig: SignatureRef<'_>,
    c: f64,
    n_max: usize,
    t_tail: usize,
    tol: f64,
) -> Result<f64, SignatureError> {
    let ns: Vec<usize> = (0..=n_max).collect();
    let res = map_maybe_par(&ns, true, |&n| rde_residual_at(sig, c, n, t_tail, tol));
    let mut worst = 0.0f64;
    for r in res {
        worst = worst.max(r?.abs());
    }
    Ok(worst)
}
