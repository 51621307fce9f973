//! Symmetric bivariate measures on the grid `({θ^k} ∪ {∞})²`.
//!
//! A scale invariant symmetric measure with the invariant univariate
//! marginals is determined by its signature `f` through
//! `F(x_k, x_j) = x_{k∧j}·f(|k−j|)`; second differences of `F` give the
//! atom masses back. The table kept here covers indices `{∞} ∪ {0..K-1}`
//! plus one flagged lumped bucket holding everything with index ≥ K at the
//! nominal value `θ^K` (mirroring the lumped tail atom of the univariate
//! law). A scalar `budget` certifies the total-variation misattribution
//! accumulated by operations that cannot resolve the bucket exactly; the
//! reported truncation mass is bucket + budget.
//!
//! Axis layout of the `(K+2)²` table: row 0 = ∞, rows `1..=K` = grid
//! indices `0..K-1`, row `K+1` = the bucket.

use crate::grid::ThetaGrid;
use crate::measures::compensated_sum;
use crate::signature::{SignatureError, SignatureRef};
use crate::{defaults, fmt_f64};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BivariateError {
    #[error("reconstructed mass {mass} at cell ({k},{j}) is below the failure threshold; the signature is not admissible")]
    NotAdmissible { k: isize, j: isize, mass: f64 },
    #[error("measure violates the joint cover bound by {violation}; scaling would create negative corner mass")]
    NotScalable { violation: f64 },
    #[error("grid shapes differ: {lhs} vs {rhs} atoms")]
    GridMismatch { lhs: usize, rhs: usize },
    #[error("scaling power {l} exceeds the grid truncation {k}")]
    PowerTooLarge { l: usize, k: usize },
    #[error(transparent)]
    Signature(#[from] SignatureError),
}

/// Symmetric probability measure on the squared grid, truncated at `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct BivariateGridMeasure {
    theta: f64,
    k_cut: usize,
    side: usize,
    mass: Vec<f64>,
    budget: f64,
    grid: ThetaGrid,
}

/// Marginal mass vector aligned with the table axes:
/// `[θ/(1+θ), c_0, …, c_{K-1}, θ^K/(1+θ)]`.
fn marginal_vector(theta: f64, k: usize, grid: &ThetaGrid) -> Vec<f64> {
    let mut v = Vec::with_capacity(k + 2);
    v.push(theta / (1.0 + theta));
    let coeff = (1.0 - theta) / (1.0 + theta);
    for i in 0..k {
        v.push(coeff * grid.value(i));
    }
    v.push(grid.value(k) / (1.0 + theta));
    v
}

impl BivariateGridMeasure {
    pub(crate) fn from_raw(theta: f64, k_cut: usize, mass: Vec<f64>, budget: f64) -> Self {
        let side = k_cut + 2;
        debug_assert_eq!(mass.len(), side * side);
        let grid = ThetaGrid::new(theta, k_cut + 2);
        Self { theta, k_cut, side, mass, budget, grid }
    }

    pub(crate) fn raw(&self) -> &[f64] {
        &self.mass
    }

    pub(crate) fn raw_mut(&mut self) -> &mut [f64] {
        &mut self.mass
    }

    pub(crate) fn grid(&self) -> &ThetaGrid {
        &self.grid
    }

    pub(crate) fn set_budget(&mut self, b: f64) {
        self.budget = b;
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Grid truncation depth `K`.
    pub fn k_cut(&self) -> usize {
        self.k_cut
    }

    pub(crate) fn side(&self) -> usize {
        self.side
    }

    /// Certified misattribution budget accumulated so far.
    pub fn budget(&self) -> f64 {
        self.budget
    }

    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.mass[r * self.side + c]
    }

    /// Mass of the cell `(k, j)` with `-1 ≤ k, j < K`, where `-1` is ∞.
    pub fn mass_at(&self, k: isize, j: isize) -> f64 {
        assert!(k >= -1 && (k as i64) < self.k_cut as i64);
        assert!(j >= -1 && (j as i64) < self.k_cut as i64);
        self.at((k + 1) as usize, (j + 1) as usize)
    }

    /// Total mass in the lumped bucket (row + column, corner once).
    pub fn bucket_mass(&self) -> f64 {
        let b = self.side - 1;
        let row = compensated_sum((0..self.side).map(|c| self.at(b, c)));
        let col = compensated_sum((0..self.side).map(|r| self.at(r, b)));
        row + col - self.at(b, b)
    }

    /// Mass associated with indices ≥ K: lumped bucket plus the certified
    /// misattribution budget.
    pub fn trunc_mass(&self) -> f64 {
        self.bucket_mass() + self.budget
    }

    pub fn total_mass(&self) -> f64 {
        compensated_sum(self.mass.iter().copied())
    }

    /// Largest marginal defect against the invariant law, over both the
    /// stored grid rows and the bucket row.
    pub fn marginal_error(&self) -> f64 {
        let expect = marginal_vector(self.theta, self.k_cut, &self.grid);
        let mut worst: f64 = 0.0;
        for r in 0..self.side {
            let row = compensated_sum((0..self.side).map(|c| self.at(r, c)));
            worst = worst.max((row - expect[r]).abs());
        }
        worst
    }

    /// Exact symmetry defect (should be 0.0 by construction).
    pub fn symmetry_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for r in 0..self.side {
            for c in 0..r {
                worst = worst.max((self.at(r, c) - self.at(c, r)).abs());
            }
        }
        worst
    }

    /// The signature `f(n) = P(Y ≤ x_n or Y' ≤ 1)` for `n < K`, by direct
    /// mass summation (exact even in the presence of the bucket: truncated
    /// values always satisfy `Y ≤ x_n`).
    pub fn signature(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.k_cut);
        let mut inf_col = 0.0;
        for n in 0..self.k_cut {
            inf_col += self.at(n, 0);
            out.push(1.0 - inf_col);
        }
        out
    }

    /// Worst violation of the joint cover bound
    /// `P(Y ≤ x_n or Y' ≤ x_n) ≤ x_n`; nonpositive means the bound holds.
    pub fn cover_bound_violation(&self) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        let mut block = 0.0; // Σ_{r,c ≤ n} mass, grown one border at a time
        for n in 0..=self.k_cut {
            let mut border = self.at(n, n);
            for i in 0..n {
                border += self.at(n, i) + self.at(i, n);
            }
            block += border;
            if n >= 1 {
                // event {min coordinate ≤ x_{n-1}} has mass 1 - block
                worst = worst.max(1.0 - block - self.grid.value(n - 1));
            }
        }
        worst
    }

    /// Mass strictly off the diagonal. The bucket diagonal cell cannot be
    /// attributed to the true diagonal and is counted as off-diagonal.
    pub fn off_diagonal_mass(&self) -> f64 {
        let trace = compensated_sum((0..self.side - 1).map(|r| self.at(r, r)));
        (self.total_mass() - trace).max(0.0)
    }

    /// Total-variation distance between two measures on the same grid.
    pub fn tv_distance(&self, other: &BivariateGridMeasure) -> Result<f64, BivariateError> {
        if self.side != other.side {
            return Err(BivariateError::GridMismatch { lhs: self.k_cut, rhs: other.k_cut });
        }
        let sum = compensated_sum(
            self.mass.iter().zip(&other.mass).map(|(a, b)| (a - b).abs()),
        );
        Ok(0.5 * sum)
    }

    /// The diagonal measure: the invariant marginal copied onto `{(y,y)}`.
    pub fn diagonal(theta: f64, k: usize) -> Self {
        let side = k + 2;
        let grid = ThetaGrid::new(theta, k + 2);
        let v = marginal_vector(theta, k, &grid);
        let mut mass = vec![0.0; side * side];
        for (r, &m) in v.iter().enumerate() {
            mass[r * side + r] = m;
        }
        Self { theta, k_cut: k, side, mass, budget: 0.0, grid }
    }

    /// The product measure: two independent copies of the invariant law.
    pub fn product(theta: f64, k: usize) -> Self {
        let side = k + 2;
        let grid = ThetaGrid::new(theta, k + 2);
        let v = marginal_vector(theta, k, &grid);
        let mut mass = vec![0.0; side * side];
        for r in 0..side {
            for c in 0..side {
                mass[r * side + c] = v[r] * v[c];
            }
        }
        Self { theta, k_cut: k, side, mass, budget: 0.0, grid }
    }

    /// Reconstructs the measure with signature `f` on the grid truncated at
    /// `K`. Needs `f(0..=K)`; masses are second differences of
    /// `F(x_a,x_b) = x_{a∧b} f(|a−b|)`, the ∞ edges first differences, and
    /// the bucket row the telescoped remainders. Cancellation noise in
    /// `[-1e-9, 0)` is clipped into the budget; anything below fails.
    pub fn from_signature(sig: SignatureRef<'_>, k: usize) -> Result<Self, BivariateError> {
        let f = sig.values;
        if f.len() < k + 1 {
            return Err(SignatureError::TooShort { needed: k + 1, len: f.len() }.into());
        }
        let theta = sig.theta;
        let side = k + 2;
        let grid = ThetaGrid::new(theta, k + 2);
        let big_f = |a: usize, b: usize| grid.value(a.min(b)) * f[a.abs_diff(b)];
        let mut mass = vec![0.0; side * side];
        let mut budget = sig.tail_bound; // bucket-∞ edge uses the limit
        let mut clip = |m: f64, kk: isize, jj: isize| -> Result<f64, BivariateError> {
            if m < defaults::NEG_MASS_FAIL {
                return Err(BivariateError::NotAdmissible { k: kk, j: jj, mass: m });
            }
            if m < 0.0 {
                budget += -m;
                return Ok(0.0);
            }
            Ok(m)
        };
        for a in 0..k {
            for b in a..k {
                let m = clip(
                    -big_f(a, b) + big_f(a + 1, b) + big_f(a, b + 1) - big_f(a + 1, b + 1),
                    a as isize,
                    b as isize,
                )?;
                mass[(a + 1) * side + (b + 1)] = m;
                mass[(b + 1) * side + (a + 1)] = m;
            }
        }
        for a in 0..k {
            let m = clip(f[a] - f[a + 1], a as isize, -1)?;
            mass[(a + 1) * side] = m;
            mass[a + 1] = m;
        }
        mass[0] = clip(1.0 - f[0], -1, -1)?;
        // bucket row: telescoped mass of {index >= K} against each grid column
        let coeff = (1.0 - theta) / (1.0 + theta);
        let bucket = side - 1;
        for b in 0..k {
            let m = clip(grid.value(b) * (coeff - f[k - b] + theta * f[k - b - 1]), k as isize, b as isize)?;
            mass[bucket * side + (b + 1)] = m;
            mass[(b + 1) * side + bucket] = m;
        }
        let edge = clip(f[k] - sig.limit, k as isize, -1)?;
        mass[bucket * side] = edge;
        mass[bucket] = edge;
        let partial = compensated_sum(mass.iter().copied());
        let corner = clip(1.0 - partial, k as isize, k as isize)?;
        mass[bucket * side + bucket] = corner;
        Ok(Self { theta, k_cut: k, side, mass, budget, grid })
    }

    /// The bivariate scaling map for `t = θ^l`: both coordinates rescaled
    /// by `1/t` where they are ≤ t, everything else sent to ∞, and the
    /// `(∞,∞)` corner topped up by `1 − 1/t`. The bucket stays a bucket
    /// (its content shifts by `l` unattributably), charged to the budget.
    pub fn scale_by_power(&self, l: usize) -> Result<Self, BivariateError> {
        if l > self.k_cut {
            return Err(BivariateError::PowerTooLarge { l, k: self.k_cut });
        }
        let violation = self.cover_bound_violation();
        if violation > 1e-12 {
            return Err(BivariateError::NotScalable { violation });
        }
        if l == 0 {
            return Ok(self.clone());
        }
        let side = self.side;
        let inv = 1.0 / self.grid.value(l);
        // rows 0..=l (∞ and indices < l) collapse to ∞; index i >= l moves to i-l
        let dest = |r: usize| -> usize {
            if r == side - 1 {
                side - 1
            } else if r <= l {
                0
            } else {
                r - l
            }
        };
        let mut mass = vec![0.0; side * side];
        for r in 0..side {
            for c in 0..side {
                mass[dest(r) * side + dest(c)] += self.at(r, c) * inv;
            }
        }
        mass[0] += 1.0 - inv;
        debug_assert!(mass[0] >= -1e-12);
        let budget = self.budget * inv + self.bucket_mass() * inv;
        Ok(Self {
            theta: self.theta,
            k_cut: self.k_cut,
            side,
            mass,
            budget,
            grid: self.grid.clone(),
        })
    }

    /// Serializes to the sparse grid-index JSON form.
    pub fn to_json(&self) -> String {
        let mut out = format!("{{\"theta\":{},\"K\":{}", fmt_f64(self.theta), self.k_cut);
        out.push_str(",\"atoms\":[");
        let mut first = true;
        for a in 0..self.k_cut {
            for b in 0..self.k_cut {
                let m = self.at(a + 1, b + 1);
                if m > 0.0 {
                    if !first {
                        out.push(',');
                    }
                    first = false;
                    out.push_str(&format!("[{a},{b},{}]", fmt_f64(m)));
                }
            }
        }
        out.push_str("],\"inf_row\":[");
        for b in 0..self.k_cut {
            if b > 0 {
                out.push(',');
            }
            out.push_str(&fmt_f64(self.at(0, b + 1)));
        }
        out.push_str(&format!(
            "],\"corner\":{},\"trunc_mass\":{}}}",
            fmt_f64(self.at(0, 0)),
            fmt_f64(self.trunc_mass())
        ));
        out
    }
}

/// One application of the bivariate RDE operator expressed directly on the
/// signature: the value `F̃(x_n, x_0)` of the once-mapped measure, with the
/// geometric tails of the defining series summed analytically against the
/// limit. The fixed-point residual at `n` is this minus `f(n)`.
pub fn signature_operator(
    sig: SignatureRef<'_>,
    n: usize,
    t_tail: usize,
    tol: f64,
) -> Result<f64, SignatureError> {
    let f = sig.values;
    if f.len() <= t_tail || t_tail < n {
        return Err(SignatureError::TooShort { needed: t_tail + 1, len: f.len() });
    }
    let theta = sig.theta;
    let one_plus = 1.0 + theta;
    // partial sums Σ θ^s f(s) over s = n+1..=T and s = 1..=T
    let mut upper = 0.0;
    let mut full = 0.0;
    let mut pow = theta;
    for s in 1..=t_tail {
        let term = pow * f[s];
        full += term;
        if s > n {
            upper += term;
        }
        pow *= theta;
    }
    // pow = θ^{T+1}; analytic tails with the certified bracket
    let geom_tail = pow / (1.0 - theta);
    let tail_width = geom_tail * (f[t_tail] - sig.limit + sig.tail_bound).max(0.0);
    let bracket = (1.0 - theta) / theta * tail_width;
    if bracket > tol {
        return Err(SignatureError::TailTooLoose { width: bracket, tol });
    }
    let a = upper + sig.limit * geom_tail;
    let b = full + sig.limit * geom_tail;
    let pow_n = sig_pow(theta, n);
    let fn_ = f[n];
    let series = fn_ * pow_n * theta / (1.0 - theta) - a - pow_n * pow_n * b
        + f[0] * pow_n * pow_n * theta * theta / (1.0 - theta * theta);
    Ok(fn_ - 0.5 * fn_ * fn_
        + (pow_n * pow_n + 1.0) / (2.0 * one_plus * one_plus)
        + (1.0 - theta) / (2.0 * theta) * series)
}

fn sig_pow(theta: f64, n: usize) -> f64 {
    let mut p = 1.0;
    for _ in 0..n {
        p *= theta;
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn constant_sig(theta: f64, len: usize) -> (Vec<f64>, f64, f64) {
        (vec![1.0 / (1.0 + theta); len], 1.0 / (1.0 + theta), 0.0)
    }

    /// f(n) = 1/(1+θ) + b·θⁿ is admissible for any slope 0 ≤ b ≤ θ/(1+θ).
    fn geometric_sig(theta: f64, b: f64, len: usize) -> (Vec<f64>, f64, f64) {
        let mut pow = 1.0;
        let vals = (0..len)
            .map(|_| {
                let v = 1.0 / (1.0 + theta) + b * pow;
                pow *= theta;
                v
            })
            .collect();
        (vals, 1.0 / (1.0 + theta), 0.0)
    }

    #[test]
    fn constant_signature_reconstructs_diagonal() {
        for &theta in &[0.3, 0.7] {
            let k = 30;
            let (vals, limit, tb) = constant_sig(theta, k + 1);
            let sig = SignatureRef { theta, values: &vals, limit, tail_bound: tb };
            let m = BivariateGridMeasure::from_signature(sig, k).unwrap();
            let d = BivariateGridMeasure::diagonal(theta, k);
            assert!(m.tv_distance(&d).unwrap() < 1e-14);
        }
    }

    #[test]
    fn diagonal_and_product_are_tight() {
        for &theta in &[0.4, 0.9] {
            for ctor in [BivariateGridMeasure::diagonal, BivariateGridMeasure::product] {
                let m = ctor(theta, 40);
                assert!((m.total_mass() - 1.0).abs() < 1e-13);
                assert!(m.marginal_error() < 1e-13);
                assert_eq!(m.symmetry_error(), 0.0);
                assert!(m.cover_bound_violation() <= 1e-13);
                assert_eq!(m.budget(), 0.0);
            }
        }
    }

    #[test]
    fn product_signature_matches_inclusion_exclusion() {
        // independent marginals: f(n) = x_n/(1+θ) + 1/(1+θ) − x_n/(1+θ)²
        let theta: f64 = 0.6;
        let k = 40;
        let m = BivariateGridMeasure::product(theta, k);
        let sig = m.signature();
        let mut pow = 1.0;
        for (n, &got) in sig.iter().enumerate() {
            let want = pow / (1.0 + theta) + 1.0 / (1.0 + theta) - pow / ((1.0 + theta) * (1.0 + theta));
            assert!((got - want).abs() < 1e-13, "n={n}: {got} vs {want}");
            pow *= theta;
        }
    }

    #[test]
    fn signature_round_trip_is_exact() {
        let theta = 0.8;
        let k = 50;
        let (vals, limit, tb) = geometric_sig(theta, 0.3, k + 1);
        let sig = SignatureRef { theta, values: &vals, limit, tail_bound: tb };
        let m = BivariateGridMeasure::from_signature(sig, k).unwrap();
        for (n, got) in m.signature().into_iter().enumerate() {
            assert!((got - vals[n]).abs() < 1e-10, "n={n}");
        }
    }

    #[test]
    fn implied_bivariate_signature_is_scale_invariant() {
        // F(x_{k+l}, x_{j+l}) = θ^l F(x_k, x_j) up to product reassociation
        let theta: f64 = 0.77;
        let (vals, _, _) = geometric_sig(theta, 0.2, 61);
        let grid = ThetaGrid::new(theta, 62);
        let big_f = |a: usize, b: usize| grid.value(a.min(b)) * vals[a.abs_diff(b)];
        for &(k, j, l) in &[(0usize, 3usize, 5usize), (7, 2, 11), (20, 20, 9), (1, 30, 4)] {
            let lhs = big_f(k + l, j + l);
            let rhs = grid.value(l) * big_f(k, j);
            assert!((lhs - rhs).abs() <= 4e-15 * rhs.abs());
        }
    }

    #[test]
    fn inadmissible_signature_is_rejected() {
        // violates (1+θ)f(0) ≤ 2f(1), so the (0,0) cell goes negative
        let theta = 0.5;
        let mut vals = vec![1.0 / 1.5; 20];
        vals[0] = 0.9;
        vals[1] = 0.62;
        let sig = SignatureRef { theta, values: &vals, limit: 1.0 / 1.5, tail_bound: 0.0 };
        match BivariateGridMeasure::from_signature(sig, 18) {
            Err(BivariateError::NotAdmissible { .. }) => {}
            other => panic!("expected NotAdmissible, got {other:?}"),
        }
    }

    #[test]
    fn scaling_fixes_diagonal_and_zero_power_is_identity() {
        let theta: f64 = 0.6;
        let k = 40;
        let d = BivariateGridMeasure::diagonal(theta, k);
        assert_eq!(d.scale_by_power(0).unwrap().tv_distance(&d).unwrap(), 0.0);
        let s = d.scale_by_power(1).unwrap();
        // the lumped bucket absorbs one grid row worth of slack
        let slack = theta.powi(k as i32 - 1);
        assert!(s.tv_distance(&d).unwrap() <= slack, "{} > {slack}", s.tv_distance(&d).unwrap());
        assert!((s.total_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scaling_rejects_cover_bound_violation() {
        // all mass at (x_5, ∞): P(min ≤ x_5) = 1 > x_5
        let theta = 0.5;
        let k = 10;
        let side = k + 2;
        let mut mass = vec![0.0; side * side];
        mass[6 * side] = 0.5;
        mass[6] = 0.5;
        let m = BivariateGridMeasure::from_raw(theta, k, mass, 0.0);
        assert!(matches!(m.scale_by_power(1), Err(BivariateError::NotScalable { .. })));
    }

    #[test]
    fn operator_fixes_constant_signature() {
        for &theta in &[0.35, 0.5, 0.9] {
            let (vals, limit, tb) = constant_sig(theta, 120);
            let sig = SignatureRef { theta, values: &vals, limit, tail_bound: tb };
            for n in [0usize, 1, 7, 40] {
                let out = signature_operator(sig, n, 110, 1e-9).unwrap();
                assert!(
                    (out - 1.0 / (1.0 + theta)).abs() < 1e-13,
                    "theta={theta} n={n}: {out}"
                );
            }
        }
    }

    #[test]
    fn json_carries_grid_indices() {
        let m = BivariateGridMeasure::diagonal(0.5, 4);
        let js = m.to_json();
        assert!(js.starts_with("{\"theta\":5.0000000000000000e-1,\"K\":4,\"atoms\":[[0,0,"));
        assert!(js.contains("\"corner\":"));
        assert!(js.contains("\"trunc_mass\":"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn reconstruction_invariants(theta in 0.25f64..0.92, frac in 0.0f64..1.0) {
            let k = crate::grid::default_truncation(theta).min(160);
            let b = frac * theta / (1.0 + theta);
            let (vals, limit, tb) = geometric_sig(theta, b, k + 1);
            let sig = SignatureRef { theta, values: &vals, limit, tail_bound: tb };
            let m = BivariateGridMeasure::from_signature(sig, k).unwrap();
            prop_assert_eq!(m.symmetry_error(), 0.0);
            prop_assert!((m.total_mass() - 1.0).abs() < 1e-10);
            prop_assert!(m.marginal_error() < 1e-10 + m.trunc_mass());
            prop_assert!(m.cover_bound_violation() <= 1e-12);
            prop_assert!(m.bucket_mass() <= 2.0 * m.grid.value(k) / (1.0 + theta) + 1e-12);
            for (n, got) in m.signature().into_iter().enumerate() {
                prop_assert!((got - vals[n]).abs() < 1e-10, "n={}", n);
            }
        }
    }
}
