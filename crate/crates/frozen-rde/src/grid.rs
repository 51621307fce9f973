//! The geometric value grid `{θ^k}` shared by all modules.
//!
//! Powers are produced by iterated multiplication, never `powi`, so the same
//! index yields the same bit pattern everywhere: atoms built by different
//! modules align exactly and coupled Monte Carlo samples can be compared
//! with `==`.

use crate::defaults;

/// Grid parameter `θ` together with the truncation depth `K`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaParams {
    pub theta: f64,
    pub k: usize,
}

impl ThetaParams {
    /// Validates `θ ∈ (0,1)` strictly and `K ≥ 2`.
    pub fn new(theta: f64, k: usize) -> Result<Self, crate::MeasureError> {
        if !(theta > 0.0 && theta < 1.0) {
            return Err(crate::MeasureError::InvalidTheta { theta });
        }
        if k < 2 {
            return Err(crate::MeasureError::InvalidTruncation { k });
        }
        Ok(Self { theta, k })
    }

    /// `θ` with the default truncation depth for a target lumped tail.
    pub fn with_default_k(theta: f64) -> Result<Self, crate::MeasureError> {
        Self::new(theta, default_truncation(theta))
    }
}

/// Smallest `K` such that the a-priori truncated mass bound `2θ^K/(1+θ)`
/// is below [`defaults::TRUNC_TARGET`]. Always at least 2.
pub fn default_truncation(theta: f64) -> usize {
    let k = (defaults::TRUNC_TARGET * (1.0 + theta) / 2.0).ln() / theta.ln();
    (k.ceil() as usize).max(2)
}

/// Table of powers of `θ`, `pows[k] = θ^k`, built by iterated multiplication.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaGrid {
    theta: f64,
    pows: Vec<f64>,
}

impl ThetaGrid {
    pub fn new(theta: f64, len: usize) -> Self {
        let mut pows = Vec::with_capacity(len.max(1));
        pows.push(1.0);
        for k in 1..len.max(1) {
            let next = pows[k - 1] * theta;
            pows.push(next);
        }
        Self { theta, pows }
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn len(&self) -> usize {
        self.pows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pows.is_empty()
    }

    /// `θ^k`. Indices beyond the table fall back to scaling the last entry;
    /// anything there is far below every tolerance in the crate.
    pub fn value(&self, k: usize) -> f64 {
        match self.pows.get(k) {
            Some(&v) => v,
            None => {
                let last = self.pows.len() - 1;
                self.pows[last] * self.theta.powi((k - last) as i32)
            }
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.pows
    }

    /// Largest `n` with `θ^n ≥ t`, i.e. the smallest grid value that still
    /// dominates `t`, for `t ∈ (0, 1]`. Log-based guess fixed up by direct
    /// comparison so grid boundaries resolve consistently with `value`.
    pub fn ceil_index(&self, t: f64) -> usize {
        debug_assert!(t > 0.0 && t <= 1.0);
        let mut n = (t.ln() / self.theta.ln()).floor().max(0.0) as usize;
        while self.value(n) < t && n > 0 {
            n -= 1;
        }
        while self.value(n + 1) >= t {
            n += 1;
        }
        n
    }
}

/// Atom identity: `a` and `b` are the same coordinate within grid drift.
pub fn same_atom(a: f64, b: f64) -> bool {
    (a - b).abs() <= defaults::ATOM_EQ_TOL * 1.0_f64.max(a.abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn powers_are_iterated_products() {
        let g = ThetaGrid::new(0.85, 50);
        let mut p = 1.0;
        for k in 0..50 {
            assert_eq!(g.value(k), p);
            p *= 0.85;
        }
    }

    #[test]
    fn ceil_index_lands_on_grid_boundaries() {
        let g = ThetaGrid::new(0.7, 80);
        for k in 0..40 {
            assert_eq!(g.ceil_index(g.value(k)), k);
        }
        // strictly between θ^3 and θ^2 the answer is 2 (smallest value ≥ t)
        let t = 0.5 * (g.value(3) + g.value(2));
        assert_eq!(g.ceil_index(t), 2);
        assert_eq!(g.ceil_index(1.0), 0);
    }

    #[test]
    fn default_truncation_meets_target() {
        for &theta in &[0.3, 0.5, 0.85, 0.95] {
            let k = default_truncation(theta);
            assert!(2.0 * theta.powi(k as i32) / (1.0 + theta) < defaults::TRUNC_TARGET);
            assert!(2.0 * theta.powi(k as i32 - 1) / (1.0 + theta) >= defaults::TRUNC_TARGET);
        }
    }
}
