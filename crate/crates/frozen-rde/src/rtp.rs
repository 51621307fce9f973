//! Seeded Monte Carlo on truncated trees: burning-time sampling, same-noise
//! bivariate sampling for endogeny statistics, and the frozen-set iteration
//! with its monotone sandwich.
//!
//! Every node of the binary tree carries a label `ω = (τ, κ)`; labels are a
//! pure function of `(seed, node id)` through the SplitMix64 finalizer, so
//! samples replay exactly, two coupled boundary copies can share one ω-tree,
//! and samples parallelize without shared state. Node ids are heap order:
//! root 1, children `2i` and `2i+1`; child `2i` is always legal, `2i+1`
//! only at branching nodes (κ=2).
//!
//! Values live in `[0,1] ∪ {∞}` as `f64` with `f64::INFINITY`; finite
//! values are grid powers from a shared iterated-multiplication table, so
//! equality of coupled samples is exact.

use crate::grid::ThetaGrid;
use crate::map_maybe_par;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RtpError {
    #[error("depth {depth} exceeds the guard {max} (cost grows like 2^depth)")]
    DepthTooLarge { depth: u32, max: u32 },
    #[error("frozen-set iteration needs at least 2 rounds, got {rounds}")]
    InvalidRounds { rounds: usize },
}

/// SplitMix64 finalizer: the documented 64-bit mixer behind every label.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_TAU: u64 = 1;
const STREAM_KAPPA: u64 = 2;
const STREAM_BOUNDARY: u64 = 3; // +copy index
const STREAM_SAMPLE: u64 = 16;

#[inline]
fn draw(seed: u64, node: u64, stream: u64) -> u64 {
    mix64(seed ^ mix64(node ^ mix64(stream)))
}

/// Uniform in `[0,1)` from the top 53 bits.
#[inline]
fn unit(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Node decoration: activation time and number of legal offspring.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OmegaLabel {
    pub tau: f64,
    pub kappa: u8,
}

impl OmegaLabel {
    /// The label of `node` under `seed`; a pure function of its arguments.
    pub fn for_node(seed: u64, node: u64) -> Self {
        OmegaLabel {
            tau: unit(draw(seed, node, STREAM_TAU)),
            kappa: 1 + (draw(seed, node, STREAM_KAPPA) & 1) as u8,
        }
    }
}

/// The RDE map on values: keep-or-kill against τ at internal nodes,
/// minimum at branching nodes. ∞ survives every τ and dominates every min.
pub fn chi(omega: OmegaLabel, x: f64, y: f64) -> f64 {
    match omega.kappa {
        1 => {
            if x > omega.tau {
                x
            } else {
                f64::INFINITY
            }
        }
        2 => x.min(y),
        k => panic!("kappa must be 1 or 2, got {k}"),
    }
}

/// Sampling parameters; `depth` is guarded because a sample visits up to
/// `2^depth` nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleConfig {
    pub theta: f64,
    pub depth: u32,
    pub n_samples: usize,
    pub seed: u64,
}

impl SampleConfig {
    pub fn validate(&self) -> Result<(), RtpError> {
        assert!(self.theta > 0.0 && self.theta < 1.0, "theta must be in (0,1)");
        if self.depth > crate::defaults::MAX_SAMPLE_DEPTH {
            return Err(RtpError::DepthTooLarge { depth: self.depth, max: crate::defaults::MAX_SAMPLE_DEPTH });
        }
        Ok(())
    }
}

/// Table long enough that the geometric boundary index never leaves it in
/// any realistic run (tail probability below 2^-60).
pub(crate) fn sampler_grid(theta: f64) -> ThetaGrid {
    let len = (-60.0 * std::f64::consts::LN_2 / theta.ln()).ceil() as usize;
    ThetaGrid::new(theta, len.clamp(64, 1 << 22))
}

/// Exact inverse-transform draw from the invariant law: ∞ with probability
/// θ/(1+θ), otherwise the grid atom whose cdf interval contains the rest.
fn boundary_value(grid: &ThetaGrid, theta: f64, u: f64) -> f64 {
    let p_inf = theta / (1.0 + theta);
    if u < p_inf {
        return f64::INFINITY;
    }
    let v = (u - p_inf) * (1.0 + theta); // uniform on [0,1)
    let w = 1.0 - v; // in (0,1]
    grid.value(grid.ceil_index(w))
}

enum Task {
    Node { id: u64, depth: u32 },
    CombineMin,
    KeepOrKill { tau: f64 },
}

/// Evaluates one burning-time sample: a depth-`depth` tree of χ maps with
/// i.i.d. invariant boundary values. Explicit stack, no recursion.
pub fn sample_root(cfg: &SampleConfig, sample_index: u64) -> f64 {
    let grid = sampler_grid(cfg.theta);
    sample_root_with(cfg, sample_index, &grid)
}

fn sample_root_with(cfg: &SampleConfig, sample_index: u64, grid: &ThetaGrid) -> f64 {
    let seed = draw(cfg.seed, sample_index, STREAM_SAMPLE);
    let mut tasks = vec![Task::Node { id: 1, depth: 0 }];
    let mut vals: Vec<f64> = Vec::new();
    while let Some(task) = tasks.pop() {
        match task {
            Task::Node { id, depth } => {
                if depth == cfg.depth {
                    vals.push(boundary_value(grid, cfg.theta, unit(draw(seed, id, STREAM_BOUNDARY))));
                } else {
                    let om = OmegaLabel::for_node(seed, id);
                    if om.kappa == 1 {
                        tasks.push(Task::KeepOrKill { tau: om.tau });
                        tasks.push(Task::Node { id: 2 * id, depth: depth + 1 });
                    } else {
                        tasks.push(Task::CombineMin);
                        tasks.push(Task::Node { id: 2 * id, depth: depth + 1 });
                        tasks.push(Task::Node { id: 2 * id + 1, depth: depth + 1 });
                    }
                }
            }
            Task::CombineMin => {
                let a = vals.pop().unwrap();
                let b = vals.pop().unwrap();
                vals.push(a.min(b));
            }
            Task::KeepOrKill { tau } => {
                let x = vals.pop().unwrap();
                vals.push(if x > tau { x } else { f64::INFINITY });
            }
        }
    }
    vals.pop().unwrap()
}

/// One coupled sample: a single ω-tree evaluated against two independent
/// boundary vectors. Returns the root pair.
pub fn sample_bivariate(cfg: &SampleConfig, sample_index: u64) -> (f64, f64) {
    let grid = sampler_grid(cfg.theta);
    sample_bivariate_with(cfg, sample_index, &grid)
}

fn sample_bivariate_with(cfg: &SampleConfig, sample_index: u64, grid: &ThetaGrid) -> (f64, f64) {
    let seed = draw(cfg.seed, sample_index, STREAM_SAMPLE);
    let mut tasks = vec![Task::Node { id: 1, depth: 0 }];
    let mut vals: Vec<(f64, f64)> = Vec::new();
    while let Some(task) = tasks.pop() {
        match task {
            Task::Node { id, depth } => {
                if depth == cfg.depth {
                    let a = boundary_value(grid, cfg.theta, unit(draw(seed, id, STREAM_BOUNDARY)));
                    let b = boundary_value(grid, cfg.theta, unit(draw(seed, id, STREAM_BOUNDARY + 1)));
                    vals.push((a, b));
                } else {
                    let om = OmegaLabel::for_node(seed, id);
                    if om.kappa == 1 {
                        tasks.push(Task::KeepOrKill { tau: om.tau });
                        tasks.push(Task::Node { id: 2 * id, depth: depth + 1 });
                    } else {
                        tasks.push(Task::CombineMin);
                        tasks.push(Task::Node { id: 2 * id, depth: depth + 1 });
                        tasks.push(Task::Node { id: 2 * id + 1, depth: depth + 1 });
                    }
                }
            }
            Task::CombineMin => {
                let (a, ap) = vals.pop().unwrap();
                let (b, bp) = vals.pop().unwrap();
                vals.push((a.min(b), ap.min(bp)));
            }
            Task::KeepOrKill { tau } => {
                let (x, xp) = vals.pop().unwrap();
                vals.push((
                    if x > tau { x } else { f64::INFINITY },
                    if xp > tau { xp } else { f64::INFINITY },
                ));
            }
        }
    }
    vals.pop().unwrap()
}

fn run_univariate_impl(cfg: &SampleConfig, parallel: bool) -> Result<Vec<f64>, RtpError> {
    cfg.validate()?;
    let grid = sampler_grid(cfg.theta);
    let idx: Vec<u64> = (0..cfg.n_samples as u64).collect();
    Ok(map_maybe_par(&idx, parallel, |&i| sample_root_with(cfg, i, &grid)))
}

pub fn run_univariate(cfg: &SampleConfig) -> Result<Vec<f64>, RtpError> {
    run_univariate_impl(cfg, true)
}

pub fn run_univariate_seq(cfg: &SampleConfig) -> Result<Vec<f64>, RtpError> {
    run_univariate_impl(cfg, false)
}

fn run_bivariate_impl(cfg: &SampleConfig, parallel: bool) -> Result<Vec<(f64, f64)>, RtpError> {
    cfg.validate()?;
    let grid = sampler_grid(cfg.theta);
    let idx: Vec<u64> = (0..cfg.n_samples as u64).collect();
    Ok(map_maybe_par(&idx, parallel, |&i| sample_bivariate_with(cfg, i, &grid)))
}

pub fn run_bivariate(cfg: &SampleConfig) -> Result<Vec<(f64, f64)>, RtpError> {
    run_bivariate_impl(cfg, true)
}

pub fn run_bivariate_seq(cfg: &SampleConfig) -> Result<Vec<(f64, f64)>, RtpError> {
    run_bivariate_impl(cfg, false)
}

/// Estimate of `P(Y ≠ Y')` with its 95% normal-approximation interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BivariateSummary {
    pub p_diff: f64,
    pub ci_95: f64,
    pub depth: u32,
    pub n: usize,
}

pub fn bivariate_summary(pairs: &[(f64, f64)], depth: u32) -> BivariateSummary {
    let n = pairs.len();
    let diff = pairs.iter().filter(|(a, b)| a != b).count();
    let p = diff as f64 / n as f64;
    BivariateSummary { p_diff: p, ci_95: 1.96 * (p * (1.0 - p) / n as f64).sqrt(), depth, n }
}

/// Report of the frozen-set iteration on one sampled instance.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenIterationReport {
    /// |F_0|, |F_1|, …, |F_rounds|.
    pub frozen_set_sizes: Vec<usize>,
    /// The four monotone inclusions (even ⊂ next odd, odd ⊃ next even,
    /// evens increase, odds decrease), each over all checkable rounds.
    pub inclusions_ok: [bool; 4],
    /// Rounds k whose set is a genuine fixed point (F_{k+1} = F_k).
    pub fixed_rounds: Vec<usize>,
    /// Every fixed-point set lies between F_{2n} and F_{2n+1}.
    pub sandwich_ok: bool,
    pub f2_empty: bool,
}

impl FrozenIterationReport {
    pub fn all_inclusions_ok(&self) -> bool {
        self.inclusions_ok.iter().all(|&b| b)
    }
}

/// Runs the frozen-set iteration on one fully materialized labelled tree of
/// the given depth: `F_0 = ∅`; round k recomputes burning times with
/// `F_{k-1}` frozen (percolation proxied by a legal open path reaching the
/// bottom) and freezes every internal node whose legal child burns before
/// its activation.
pub fn frozen_iteration(
    theta: f64,
    depth: u32,
    seed: u64,
    rounds: usize,
) -> Result<FrozenIterationReport, RtpError> {
    assert!(theta > 0.0 && theta < 1.0);
    if depth > crate::defaults::MAX_FROZEN_DEPTH {
        return Err(RtpError::DepthTooLarge { depth, max: crate::defaults::MAX_FROZEN_DEPTH });
    }
    if rounds < 2 {
        return Err(RtpError::InvalidRounds { rounds });
    }
    let grid = sampler_grid(theta);
    let n_nodes: usize = 1 << (depth + 1);
    let first_leaf: usize = 1 << depth;
    let mut tau = vec![0.0f64; n_nodes];
    let mut branching = vec![false; n_nodes];
    for id in 1..n_nodes {
        let om = OmegaLabel::for_node(seed, id as u64);
        tau[id] = om.tau;
        branching[id] = om.kappa == 2;
    }

    // ceil to the freezing grid: smallest grid time ≥ t; 0 is the infimum
    // of the whole grid (a path of branching nodes percolates at all times)
    let ceil_time = |t: f64| -> f64 {
        if t.is_infinite() {
            f64::INFINITY
        } else if t <= 0.0 {
            0.0
        } else {
            grid.value(grid.ceil_index(t))
        }
    };

    let mut sets: Vec<Vec<bool>> = vec![vec![false; n_nodes]];
    let mut perc = vec![0.0f64; n_nodes];
    for _round in 1..=rounds {
        let frozen = sets.last().unwrap();
        for id in (1..n_nodes).rev() {
            perc[id] = if frozen[id] {
                f64::INFINITY
            } else {
                let base = if branching[id] { 0.0 } else { tau[id] };
                if id < first_leaf {
                    let mut best = perc[2 * id];
                    if branching[id] {
                        best = best.min(perc[2 * id + 1]);
                    }
                    base.max(best)
                } else {
                    base
                }
            };
        }
        let mut next = vec![false; n_nodes];
        for id in 1..first_leaf {
            if !branching[id] {
                next[id] = ceil_time(perc[2 * id]) <= tau[id];
            }
        }
        sets.push(next);
    }

    let sizes: Vec<usize> = sets.iter().map(|s| s.iter().filter(|&&b| b).count()).collect();
    let subset = |a: &Vec<bool>, b: &Vec<bool>| a.iter().zip(b).all(|(&x, &y)| !x || y);
    let mut incl = [true; 4];
    for n in 0.. {
        let (e, o, e2, o2) = (2 * n, 2 * n + 1, 2 * n + 2, 2 * n + 3);
        if o <= rounds {
            incl[0] &= subset(&sets[e], &sets[o]);
        }
        if e2 <= rounds {
            incl[1] &= subset(&sets[e2], &sets[o]);
            incl[2] &= subset(&sets[e], &sets[e2]);
        }
        if o2 <= rounds {
            incl[3] &= subset(&sets[o2], &sets[o]);
        }
        if o > rounds {
            break;
        }
    }
    let fixed_rounds: Vec<usize> =
        (0..rounds).filter(|&k| sets[k] == sets[k + 1]).collect();
    let mut sandwich_ok = true;
    for &k in &fixed_rounds {
        for n in 0.. {
            let (e, o) = (2 * n, 2 * n + 1);
            if e <= rounds {
                sandwich_ok &= subset(&sets[e], &sets[k]);
            }
            if o <= rounds {
                sandwich_ok &= subset(&sets[k], &sets[o]);
            }
            if o > rounds {
                break;
            }
        }
    }
    Ok(FrozenIterationReport {
        f2_empty: sizes[2] == 0,
        frozen_set_sizes: sizes,
        inclusions_ok: incl,
        fixed_rounds,
        sandwich_ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::ThetaGrid;
    use crate::measures::{geometric_law, compensated_sum};
    use crate::grid::ThetaParams;

    #[test]
    fn chi_cases() {
        let keep = OmegaLabel { tau: 0.3, kappa: 1 };
        assert_eq!(chi(keep, 0.5, 99.0), 0.5);
        let kill = OmegaLabel { tau: 0.6, kappa: 1 };
        assert_eq!(chi(kill, 0.5, 0.0), f64::INFINITY);
        let min = OmegaLabel { tau: 0.0, kappa: 2 };
        assert_eq!(chi(min, 0.5, f64::INFINITY), 0.5);
        assert_eq!(chi(keep, f64::INFINITY, 0.0), f64::INFINITY);
    }

    #[test]
    fn boundary_law_is_exact_inverse_transform() {
        // bucket endpoints of the u-interval map analytically onto the atom
        // masses of the invariant law; no Monte Carlo involved
        let theta: f64 = 0.7;
        let grid = sampler_grid(theta);
        let p_inf = theta / (1.0 + theta);
        assert!(boundary_value(&grid, theta, p_inf - 1e-12).is_infinite());
        for k in 0..50usize {
            let u_lo = p_inf + (1.0 - grid.value(k)) / (1.0 + theta);
            let u_hi = p_inf + (1.0 - grid.value(k + 1)) / (1.0 + theta);
            let c_k = (1.0 - theta) / (1.0 + theta) * grid.value(k);
            assert!(((u_hi - u_lo) - c_k).abs() < 1e-15);
            assert_eq!(boundary_value(&grid, theta, u_lo), grid.value(k));
            assert_eq!(boundary_value(&grid, theta, u_hi - 1e-13), grid.value(k));
        }
    }

    #[test]
    fn samples_are_seed_deterministic() {
        let cfg = SampleConfig { theta: 0.6, depth: 8, n_samples: 64, seed: 42 };
        assert_eq!(run_univariate(&cfg).unwrap(), run_univariate_seq(&cfg).unwrap());
        assert_eq!(run_bivariate(&cfg).unwrap(), run_bivariate(&cfg).unwrap());
        let other = SampleConfig { seed: 43, ..cfg };
        assert_ne!(run_univariate(&cfg).unwrap(), run_univariate(&other).unwrap());
    }

    #[test]
    fn depth_zero_draws_the_invariant_law() {
        let cfg = SampleConfig { theta: 0.5, depth: 0, n_samples: 40_000, seed: 7 };
        let vals = run_univariate(&cfg).unwrap();
        let p_inf = vals.iter().filter(|v| v.is_infinite()).count() as f64 / vals.len() as f64;
        let sigma = ((1.0 / 3.0) * (2.0 / 3.0) / vals.len() as f64).sqrt();
        assert!((p_inf - 1.0 / 3.0).abs() < 3.0 * sigma, "p_inf={p_inf}");
    }

    #[test]
    fn root_marginal_stays_invariant_at_depth() {
        // the root law is the invariant law at every depth; chi-square on
        // the buckets {x_0..x_5, rest, ∞} at the 99% level (df=7 -> 18.4753)
        let theta = 0.5;
        let cfg = SampleConfig { theta, depth: 10, n_samples: 20_000, seed: 2024 };
        let vals = run_univariate(&cfg).unwrap();
        let grid = ThetaGrid::new(theta, 8);
        let mut observed = [0.0f64; 8];
        for &v in &vals {
            if v.is_infinite() {
                observed[7] += 1.0;
            } else {
                let mut bucket = 6; // "rest"
                for k in 0..6 {
                    if v == grid.value(k) {
                        bucket = k;
                        break;
                    }
                }
                observed[bucket] += 1.0;
            }
        }
        let rho = geometric_law(ThetaParams::new(theta, 24).unwrap());
        let mut expected = [0.0f64; 8];
        for k in 0..6 {
            expected[k] = (1.0 - theta) / (1.0 + theta) * grid.value(k);
        }
        expected[6] = grid.value(5) * theta / (1.0 + theta); // tail below x_5
        expected[7] = rho.inf_mass();
        assert!((compensated_sum(expected.iter().copied()) - 1.0).abs() < 1e-12);
        let n = vals.len() as f64;
        let stat: f64 = observed
            .iter()
            .zip(&expected)
            .map(|(o, e)| {
                let d = o - e * n;
                d * d / (e * n)
            })
            .sum();
        assert!(stat < 18.4753, "chi-square statistic {stat} beyond the 99% quantile");
    }

    #[test]
    fn coupled_pairs_decouple_with_depth_below_critical() {
        let mk = |depth| SampleConfig { theta: 0.4, depth, n_samples: 6_000, seed: 99 };
        let p = |depth| {
            let pairs = run_bivariate(&mk(depth)).unwrap();
            bivariate_summary(&pairs, depth).p_diff
        };
        let (p4, p12) = (p(4), p(12));
        assert!(p12 < p4, "P(Y != Y') should drop with depth: {p4} -> {p12}");
    }

    #[test]
    fn frozen_iteration_sandwich_holds() {
        for seed in 0..12 {
            for &theta in &[0.4, 0.6] {
                let rep = frozen_iteration(theta, 10, seed, 6).unwrap();
                assert!(rep.all_inclusions_ok(), "seed={seed} theta={theta}: {rep:?}");
                assert!(rep.sandwich_ok, "seed={seed} theta={theta}");
                assert_eq!(rep.frozen_set_sizes[0], 0);
            }
        }
    }

    #[test]
    fn frozen_iteration_guards() {
        assert!(matches!(
            frozen_iteration(0.5, 23, 1, 4),
            Err(RtpError::DepthTooLarge { .. })
        ));
        assert!(matches!(frozen_iteration(0.5, 8, 1, 1), Err(RtpError::InvalidRounds { .. })));
    }

    #[test]
    fn depth_guard_on_samplers() {
        let cfg = SampleConfig { theta: 0.5, depth: 29, n_samples: 1, seed: 0 };
        assert!(matches!(run_univariate(&cfg), Err(RtpError::DepthTooLarge { .. })));
    }
}
