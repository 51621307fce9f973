//! Numerical toolkit for the recursive distributional equation (RDE) of
//! frozen percolation on the binary branching tree with freezing times
//! restricted to a geometric grid `{θ^n} ∪ {∞}`.
//!
//! The crate computes and cross-validates, for a grid parameter `θ ∈ (0,1)`:
//!
//! * the invariant atomic law of burning times and its scaling maps
//!   ([`measures`]),
//! * the scalar signature recursion `f_{θ,c}(n)`, its limit with certified
//!   error, and the derivative sequence at `c = 0` ([`signature`]),
//! * the critical parameter `θ*` where the derivative limit changes sign,
//!   and the nontrivial parameter `ĉ(θ)` for `θ > θ*` ([`critical`]),
//! * symmetric bivariate grid measures reconstructed from signatures, and
//!   the signature-level fixed-point operator ([`bivariate`]),
//! * the exact atom-level bivariate RDE map and its iteration from
//!   independent boundary conditions, probing the endogeny dichotomy
//!   ([`dynamics`]),
//! * seeded Monte Carlo samplers on truncated trees and the frozen-set
//!   iteration with its monotone sandwich ([`rtp`]).
//!
//! Two independent routes are kept for every key quantity (closed form vs
//! recursion, operator on signatures vs operator on atoms, deterministic
//! iteration vs same-noise Monte Carlo) so each can serve as an oracle for
//! the other.
//!
//! With the default `parallel` feature, sweeps and sample batches run on
//! rayon; `*_seq` variants always run serially and back the criterion
//! benches comparing both.

pub mod bivariate;
pub mod critical;
pub mod dynamics;
pub mod grid;
pub mod measures;
pub mod report;
pub mod rtp;
pub mod signature;

pub use bivariate::{BivariateError, BivariateGridMeasure};
pub use critical::{CriticalError, RootResult};
pub use dynamics::{endogeny_probe, iterate, IterationTrace, ProbeReport, Verdict};
pub use grid::{ThetaGrid, ThetaParams};
pub use measures::{AtomicMeasure, MeasureError, TailNote};
pub use report::{ConditionCheck, VerdictReport};
pub use signature::{DerivativeSeq, Signature, SignatureError, SignatureRef};

/// Centralized numeric defaults. Every tolerance or cap used by the library
/// is defined here; CLI summaries echo the ones in effect.
pub mod defaults {
    /// Two atom coordinates are the same atom iff |a-b| <= ATOM_EQ_TOL * max(1,|a|).
    pub const ATOM_EQ_TOL: f64 = 1e-12;
    /// Total probability mass must match 1 within this bound.
    pub const MASS_TOL: f64 = 1e-12;
    /// Residual bound for RDE identities at support points.
    pub const RESIDUAL_TOL: f64 = 1e-10;
    /// Slack allowed when checking signature admissibility conditions.
    pub const CONDITION_TOL: f64 = 1e-10;
    /// Iteration cap for the scalar limit `f(∞)`.
    pub const ITERATION_CAP: usize = 1_000_000;
    /// Reconstructed bivariate masses below this are reconstruction failures.
    pub const NEG_MASS_FAIL: f64 = -1e-9;
    /// Grid truncation rule: smallest K with θ^K/(1+θ) * 2 < TRUNC_TARGET.
    pub const TRUNC_TARGET: f64 = 1e-10;
    /// Bisection bracket for θ*.
    pub const THETA_STAR_LO: f64 = 0.5;
    pub const THETA_STAR_HI: f64 = 1.0 - 1e-4;
    /// Tolerance of the cached θ* used to gate ĉ searches.
    pub const THETA_STAR_GATE_TOL: f64 = 1e-6;
    /// ĉ scan grid (log-spaced, first sign change wins).
    pub const C_SCAN_MIN: f64 = 1e-8;
    pub const C_SCAN_MAX: f64 = 4.0;
    pub const C_SCAN_POINTS: usize = 160;
    /// Endogeny probe defaults.
    pub const PROBE_TOL: f64 = 1e-9;
    pub const PROBE_MAX_STEPS: usize = 10_000;
    /// Depth guards for tree samplers (cost guard, 2^D nodes stored/visited).
    pub const MAX_SAMPLE_DEPTH: u32 = 28;
    pub const MAX_FROZEN_DEPTH: u32 = 22;
}

/// Formats a float with 17 significant digits, the fixed width used by every
/// CSV/JSON surface of the crate.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Caps the rayon thread pool. Reads like `FROZEN_RDE_THREADS=4`; a no-op
/// without the `parallel` feature or when the pool is already built.
pub fn configure_threads(n: usize) {
    #[cfg(feature = "parallel")]
    {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = n;
}

/// Maps `f` over `items`, in parallel when requested and compiled in.
pub(crate) fn map_maybe_par<T, U, F>(items: &[T], parallel: bool, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if parallel {
            use rayon::prelude::*;
            return items.par_iter().map(&f).collect();
        }
    }
    let _ = parallel;
    items.iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    #[test]
    fn fmt_has_17_significant_digits() {
        assert_eq!(super::fmt_f64(1.0 / 3.0), "3.3333333333333331e-1");
        assert_eq!(super::fmt_f64(20.0 / 37.0), "5.4054054054054057e-1");
    }
}
