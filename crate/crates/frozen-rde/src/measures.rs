//! Atomic probability laws on `[0,1] ∪ {∞}` and their RDE structure.
//!
//! The invariant law of burning times for the geometric freezing grid
//! `{θ^k}` puts mass `c_k = ((1-θ)/(1+θ))θ^k` at `θ^k` and `θ/(1+θ)` at ∞.
//! For an arbitrary finite set of freezing times the unique admissible law
//! comes out of the max-recursion `F(t_k) = F(t_{k-1}) ∨ (t_k - F(t_{k-1}))`.
//! Both are validated here through the integral identity
//! `∫_{[0,t]} s dρ = ρ([0,t])²`, which holds exactly at every support point
//! of a solution.

use crate::grid::{same_atom, ThetaGrid, ThetaParams};
use crate::{defaults, fmt_f64};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MeasureError {
    #[error("theta must lie strictly inside (0,1), got {theta}")]
    InvalidTheta { theta: f64 },
    #[error("truncation depth must be at least 2, got {k}")]
    InvalidTruncation { k: usize },
    #[error("invalid atoms: {reason}")]
    InvalidAtoms { reason: String },
    #[error("measure violates the cumulative bound rho([0,t]) <= t at t={t} (cdf={cdf}); scaling would create negative mass at infinity")]
    NotScalable { t: f64, cdf: f64 },
    #[error("freezing times must be strictly increasing and lie in (0,1], offending entry {value}")]
    InvalidTimes { value: f64 },
}

/// Documents a lumped geometric tail: the atoms with index `>= cutoff` were
/// folded into the lowest kept atom with total mass `lumped`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailNote {
    pub cutoff: usize,
    pub lumped: f64,
}

/// A probability law on `[0,1] ∪ {∞}`: finitely many atoms with strictly
/// increasing values, plus mass at infinity. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomicMeasure {
    atoms: Vec<(f64, f64)>,
    inf_mass: f64,
    tail_note: Option<TailNote>,
}

/// Neumaier-compensated sum; keeps long geometric mass lists exact to
/// well below the 1e-12 total-mass tolerance.
pub(crate) fn compensated_sum(xs: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

impl AtomicMeasure {
    /// Builds a measure from atoms and an infinity mass. Atoms are sorted,
    /// coordinates equal within the atom tolerance are merged, zero-mass
    /// atoms dropped, and the total must be 1 within 1e-12.
    pub fn new(
        mut atoms: Vec<(f64, f64)>,
        inf_mass: f64,
        tail_note: Option<TailNote>,
    ) -> Result<Self, MeasureError> {
        for &(v, m) in &atoms {
            if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                return Err(MeasureError::InvalidAtoms {
                    reason: format!("atom value {v} outside [0,1]"),
                });
            }
            if m < 0.0 || !m.is_finite() {
                return Err(MeasureError::InvalidAtoms {
                    reason: format!("negative or non-finite mass {m} at {v}"),
                });
            }
        }
        if inf_mass < 0.0 {
            return Err(MeasureError::InvalidAtoms {
                reason: format!("negative infinity mass {inf_mass}"),
            });
        }
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
        for (v, m) in atoms {
            match merged.last_mut() {
                Some(last) if same_atom(last.0, v) => last.1 += m,
                _ => merged.push((v, m)),
            }
        }
        merged.retain(|&(_, m)| m > 0.0);
        let total = compensated_sum(merged.iter().map(|&(_, m)| m)) + inf_mass;
        if (total - 1.0).abs() > defaults::MASS_TOL {
            return Err(MeasureError::InvalidAtoms {
                reason: format!("total mass {total} differs from 1 beyond 1e-12"),
            });
        }
        Ok(Self { atoms: merged, inf_mass, tail_note })
    }

    /// The point mass at infinity (the law of a never-burning vertex).
    pub fn point_mass_at_infinity() -> Self {
        Self { atoms: Vec::new(), inf_mass: 1.0, tail_note: None }
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn inf_mass(&self) -> f64 {
        self.inf_mass
    }

    pub fn tail_note(&self) -> Option<TailNote> {
        self.tail_note
    }

    pub fn total_mass(&self) -> f64 {
        compensated_sum(self.atoms.iter().map(|&(_, m)| m)) + self.inf_mass
    }

    /// `ρ([0,t])`.
    pub fn cdf(&self, t: f64) -> f64 {
        compensated_sum(self.atoms.iter().take_while(|&&(v, _)| v <= t).map(|&(_, m)| m))
    }

    /// `∫_{[0,t]} s dρ`, exact over the atoms up to `t`.
    pub fn partial_first_moment(&self, t: f64) -> f64 {
        compensated_sum(self.atoms.iter().take_while(|&&(v, _)| v <= t).map(|&(v, m)| v * m))
    }

    /// Residual of the integral RDE identity at `t`:
    /// `∫_{[0,t]} s dρ − ρ([0,t])²`. Zero (to rounding) at every support
    /// point iff the measure solves the RDE.
    pub fn rde_residual(&self, t: f64) -> f64 {
        let f = self.cdf(t);
        self.partial_first_moment(t) - f * f
    }

    /// Whether the cumulative bound `ρ([0,t]) ≤ t` holds everywhere, i.e.
    /// whether every scaling map applies with nonnegative mass at infinity.
    pub fn is_scalable(&self) -> bool {
        let mut cum = 0.0;
        for &(v, m) in &self.atoms {
            cum += m;
            if cum > v + 1e-14 {
                return false;
            }
        }
        true
    }

    /// The scaling map: atoms `y ≤ t` move to `y/t` with mass `1/t`-scaled,
    /// everything else (and the complement of the `1/t` weight) goes to ∞.
    pub fn scale(&self, t: f64) -> Result<AtomicMeasure, MeasureError> {
        assert!(t > 0.0, "scaling parameter must be positive");
        if !self.is_scalable() {
            let (tv, cdf) = self
                .atoms
                .iter()
                .scan(0.0, |cum, &(v, m)| {
                    *cum += m;
                    Some((v, *cum))
                })
                .find(|&(v, cum)| cum > v + 1e-14)
                .unwrap_or((0.0, 0.0));
            return Err(MeasureError::NotScalable { t: tv, cdf });
        }
        let inv = 1.0 / t;
        let atoms: Vec<(f64, f64)> = self
            .atoms
            .iter()
            .take_while(|&&(v, _)| v <= t)
            .map(|&(v, m)| (v * inv, m * inv))
            .collect();
        let kept = compensated_sum(atoms.iter().map(|&(_, m)| m));
        let inf = (1.0 - kept).max(0.0);
        AtomicMeasure::new(atoms, inf, None)
    }

    /// Largest absolute cdf gap against `other`, evaluated at every atom of
    /// either measure.
    pub fn sup_cdf_distance(&self, other: &AtomicMeasure) -> f64 {
        let mut worst: f64 = 0.0;
        for &(v, _) in self.atoms.iter().chain(other.atoms.iter()) {
            worst = worst.max((self.cdf(v) - other.cdf(v)).abs());
        }
        worst.max((self.inf_mass - other.inf_mass).abs())
    }

    /// Serializes as `{"atoms":[[value,mass],...],"inf_mass":m,"tail":...}`
    /// with every float at 17 significant digits.
    pub fn to_json(&self) -> String {
        let mut out = String::from("{\"atoms\":[");
        for (i, &(v, m)) in self.atoms.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str(&format!("[{},{}]", fmt_f64(v), fmt_f64(m)));
        }
        out.push_str(&format!("],\"inf_mass\":{}", fmt_f64(self.inf_mass)));
        match self.tail_note {
            Some(TailNote { cutoff, lumped }) => {
                out.push_str(&format!(",\"tail\":{{\"K\":{cutoff},\"lumped\":{}}}", fmt_f64(lumped)));
            }
            None => out.push_str(",\"tail\":null"),
        }
        out.push('}');
        out
    }
}

/// The invariant burning-time law on the geometric grid: atoms `c_k` at
/// `θ^k` for `k < K`, infinity mass `θ/(1+θ)`. The residual tail mass
/// `θ^K/(1+θ)` is folded into the lowest kept atom and flagged in the
/// returned tail note, never silently merged.
pub fn geometric_law(params: ThetaParams) -> AtomicMeasure {
    let ThetaParams { theta, k } = params;
    let grid = ThetaGrid::new(theta, k + 1);
    let coeff = (1.0 - theta) / (1.0 + theta);
    let lumped = grid.value(k) / (1.0 + theta);
    let mut atoms = Vec::with_capacity(k);
    for i in (0..k).rev() {
        let mut m = coeff * grid.value(i);
        if i == k - 1 {
            m += lumped;
        }
        atoms.push((grid.value(i), m));
    }
    AtomicMeasure::new(atoms, theta / (1.0 + theta), Some(TailNote { cutoff: k, lumped }))
        .expect("geometric law is always a valid probability measure")
}

/// Result of solving the RDE on an explicit finite set of freezing times.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteLawSolution {
    pub measure: AtomicMeasure,
    /// Set when the input was empty: the law degenerates to δ_∞ by the
    /// convention `inf ∅ = ∞`.
    pub empty_times: bool,
}

/// Solves the RDE on a finite, strictly increasing set of times in `(0,1]`
/// via `F(t_k) = F(t_{k-1}) ∨ (t_k − F(t_{k-1}))`, `F(t_0) = 0`. The unique
/// admissible law puts mass `F(t_k) − F(t_{k-1})` at `t_k` and the rest at ∞.
pub fn finite_times_law(times: &[f64]) -> Result<FiniteLawSolution, MeasureError> {
    if times.is_empty() {
        return Ok(FiniteLawSolution {
            measure: AtomicMeasure::point_mass_at_infinity(),
            empty_times: true,
        });
    }
    let mut prev = 0.0;
    for &t in times {
        if !(t > 0.0 && t <= 1.0) || t <= prev {
            return Err(MeasureError::InvalidTimes { value: t });
        }
        prev = t;
    }
    let mut atoms = Vec::with_capacity(times.len());
    let mut f_prev = 0.0;
    for &t in times {
        let f = f_prev.max(t - f_prev);
        atoms.push((t, f - f_prev));
        f_prev = f;
    }
    let measure = AtomicMeasure::new(atoms, 1.0 - f_prev, None)?;
    Ok(FiniteLawSolution { measure, empty_times: false })
}
