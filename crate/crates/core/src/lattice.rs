//! Discrete-time G-expectation on a space grid.
//!
//! One backward step at node `x` under control `u` and volatility scenario `q`
//! moves the state to the two points
//!
//! ```text
//! x± = x + b·δ + h·q²·δ ± σ·q·√δ
//! ```
//!
//! with probability ½ each, and evaluates the explicit G-BSDE step
//!
//! ```text
//! m + δ·f(t, x, m, ζ, u) + q²δ·g(t, x, m, ζ, u),   m = ½(W(x⁺) + W(x⁻)),  ζ = σ·∂ₓW(x)
//! ```
//!
//! The sup over `q` realises the sublinear expectation; the value recursion
//! takes the min over the control grid of that sup.
//!
//! Near the edges of the grid the two-point law is truncated to the grid while
//! keeping its mean, which keeps every step operator monotone.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{Grid1D, Provenance, ValueField};
use crate::problem::ControlProblem;
use crate::scalar::Scalar;

/// Interior volatility levels that move the sup by more than this are counted.
pub const INTERIOR_LEVEL_FLAG: f64 = 1e-9;

/// Minimum number of nodes handed to one rayon task.
const PAR_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy)]
pub struct LatticeOptions<S> {
    /// Number of volatility levels (endpoints plus `n_q − 2` interior points).
    pub n_q: usize,
    /// Abort when `|V| > growth_ceiling·(1 + |x|)`.
    pub growth_ceiling: S,
}

impl<S: Scalar> Default for LatticeOptions<S> {
    fn default() -> Self {
        Self {
            n_q: 2,
            growth_ceiling: S::lit(1e6),
        }
    }
}

/// Diagnostics gathered during a lattice solve.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LatticeStats {
    /// Node updates where an interior volatility level beat both endpoints
    /// by more than [`INTERIOR_LEVEL_FLAG`].
    pub interior_level_hits: usize,
}

/// Explicit G-BSDE step from the conditional mean `m` and `ζ ≈ Z`.
#[inline]
pub(crate) fn driver_step<S: Scalar>(
    p: &ControlProblem<S>,
    t: S,
    x: S,
    u: S,
    m: S,
    zeta: S,
    delta: S,
    q2_delta: S,
) -> Result<S> {
    let f = p.driver(t, x, m, zeta, u)?;
    let g = p.qv_driver(t, x, m, zeta, u)?;
    Ok(m + delta * f + q2_delta * g)
}

/// Mean of `W` under the two-point law `center ± spread`, truncated to the
/// grid with the mean preserved when a point falls outside.
#[inline]
fn two_point_mean<S: Scalar>(grid: &Grid1D<S>, w: &[S], center: S, spread: S) -> S {
    let (lo, hi) = (grid.x_min(), grid.x_max());
    let c = center.max(lo).min(hi);
    let (xm, xp) = (c - spread, c + spread);
    if xm >= lo && xp <= hi {
        return S::half() * (grid.interpolate(w, xp) + grid.interpolate(w, xm));
    }
    let a = xm.max(lo);
    let b = xp.min(hi);
    let width = b - a;
    if width <= S::zero() {
        return grid.interpolate(w, c);
    }
    let (wa, wb) = (grid.interpolate(w, a), grid.interpolate(w, b));
    (((b - c) * wa + (c - a) * wb) / width).max(wa.min(wb)).min(wa.max(wb))
}

struct StepContext<'a, S> {
    p: &'a ControlProblem<S>,
    grid: &'a Grid1D<S>,
    levels: &'a [S],
    t: S,
    delta: S,
    sqrt_delta: S,
}

impl<S: Scalar> StepContext<'_, S> {
    /// sup over volatility levels at node `i` for control `u`; the flag is set
    /// when an interior level changes the sup.
    #[inline]
    fn node_sup(&self, w: &[S], i: usize, u: S) -> Result<(S, bool)> {
        let p = self.p;
        let x = self.grid.node(i);
        let b = p.drift(self.t, x, u)?;
        let h = p.qv_drift(self.t, x, u)?;
        let s = p.vol(self.t, x, u)?;
        let zeta = s * self.grid.slope(w, i);
        let mut best = S::neg_infinity();
        let mut best_endpoints = S::neg_infinity();
        for (j, &q) in self.levels.iter().enumerate() {
            let q2_delta = q * q * self.delta;
            let center = x + b * self.delta + h * q2_delta;
            let spread = (s * q * self.sqrt_delta).abs();
            let m = two_point_mean(self.grid, w, center, spread);
            let v = driver_step(p, self.t, x, u, m, zeta, self.delta, q2_delta)?;
            if !v.is_finite() {
                return Err(Error::NonFinite { k: usize::MAX, i });
            }
            if v > best {
                best = v;
            }
            if j < 2 && v > best_endpoints {
                best_endpoints = v;
            }
        }
        let flagged = self.levels.len() > 2 && (best - best_endpoints) > S::lit(INTERIOR_LEVEL_FLAG);
        Ok((best, flagged))
    }

    /// min over the control grid of the sup over levels.
    #[inline]
    fn node_min_sup(&self, w: &[S], i: usize, controls: &[S]) -> Result<(S, bool)> {
        let mut best = S::infinity();
        let mut flagged = false;
        for &u in controls {
            let (v, f) = self.node_sup(w, i, u)?;
            flagged |= f;
            if v < best {
                best = v;
            }
        }
        Ok((best, flagged))
    }
}

fn check_step<S: Scalar>(w: &[S], grid: &Grid1D<S>, delta: S) -> Result<()> {
    if !(delta > S::zero()) {
        return Err(Error::NonPositiveStep(delta.as_f64()));
    }
    if w.len() != grid.len() {
        return Err(Error::Config(format!(
            "grid function has {} values, grid has {} nodes",
            w.len(),
            grid.len()
        )));
    }
    if let Some(i) = w.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { k: usize::MAX, i });
    }
    Ok(())
}

/// Applies `op` at every node, in parallel, collecting values and the number
/// of flagged nodes.
fn sweep<S: Scalar>(n: usize, op: impl Fn(usize) -> Result<(S, bool)> + Sync) -> Result<(Vec<S>, usize)> {
    let out: Vec<(S, bool)> = (0..n)
        .into_par_iter()
        .with_min_len(PAR_CHUNK)
        .map(&op)
        .collect::<Result<_>>()?;
    let hits = out.iter().filter(|(_, f)| *f).count();
    Ok((out.into_iter().map(|(v, _)| v).collect(), hits))
}

/// One step of the sublinear conditional expectation under a fixed control:
/// maps `W` at time `t + δ` to its value at `t`.
pub fn one_step_gexp<S: Scalar>(
    w: &[S],
    grid: &Grid1D<S>,
    t: S,
    delta: S,
    p: &ControlProblem<S>,
    u: S,
    n_q: usize,
) -> Result<Vec<S>> {
    check_step(w, grid, delta)?;
    let levels = p.gamma.scalar_levels(n_q)?;
    let ctx = StepContext {
        p,
        grid,
        levels: &levels,
        t,
        delta,
        sqrt_delta: delta.sqrt(),
    };
    Ok(sweep(grid.len(), |i| ctx.node_sup(w, i, u))?.0)
}

/// One DPP step: the min over the control grid of [`one_step_gexp`], node by node.
pub fn min_step<S: Scalar>(
    w: &[S],
    grid: &Grid1D<S>,
    t: S,
    delta: S,
    p: &ControlProblem<S>,
    n_q: usize,
) -> Result<Vec<S>> {
    Ok(min_step_counted(w, grid, t, delta, p, &p.control_grid(), n_q)?.0)
}

fn min_step_counted<S: Scalar>(
    w: &[S],
    grid: &Grid1D<S>,
    t: S,
    delta: S,
    p: &ControlProblem<S>,
    controls: &[S],
    n_q: usize,
) -> Result<(Vec<S>, usize)> {
    check_step(w, grid, delta)?;
    let levels = p.gamma.scalar_levels(n_q)?;
    let ctx = StepContext {
        p,
        grid,
        levels: &levels,
        t,
        delta,
        sqrt_delta: delta.sqrt(),
    };
    sweep(grid.len(), |i| ctx.node_min_sup(w, i, controls))
}

/// How controls are chosen inside [`semigroup_apply`].
#[derive(Debug, Clone)]
pub enum ControlPolicy<S> {
    /// The same control at every node and substep.
    Constant(S),
    /// `table[j][i]` is the control at substep `j` (time `t + j·δ`) and node `i`.
    Table(Vec<Vec<S>>),
    /// Re-minimise over the control grid at every substep.
    Minimize,
}

/// Composes `n_sub` one-step operators over `[t, s]` (the backward semigroup
/// `𝔾_{t,s}`) applied to terminal data `eta` at time `s`.
#[allow(clippy::too_many_arguments)]
pub fn semigroup_apply<S: Scalar>(
    eta: &[S],
    grid: &Grid1D<S>,
    t: S,
    s: S,
    n_sub: usize,
    p: &ControlProblem<S>,
    policy: &ControlPolicy<S>,
    n_q: usize,
) -> Result<Vec<S>> {
    if !(t < s) {
        return Err(Error::Config(format!("semigroup needs t < s, got t = {t}, s = {s}")));
    }
    if n_sub == 0 {
        return Err(Error::Config("semigroup needs at least one substep".into()));
    }
    if let ControlPolicy::Table(table) = policy {
        if table.len() != n_sub || table.iter().any(|r| r.len() != grid.len()) {
            return Err(Error::Config("control table must be n_sub × n_x".into()));
        }
    }
    let delta = (s - t) / S::lit(n_sub as f64);
    let levels = p.gamma.scalar_levels(n_q)?;
    let controls = p.control_grid();
    let mut w = eta.to_vec();
    for j in (0..n_sub).rev() {
        check_step(&w, grid, delta)?;
        let ctx = StepContext {
            p,
            grid,
            levels: &levels,
            t: t + delta * S::lit(j as f64),
            delta,
            sqrt_delta: delta.sqrt(),
        };
        w = match policy {
            ControlPolicy::Constant(u) => sweep(grid.len(), |i| ctx.node_sup(&w, i, *u))?.0,
            ControlPolicy::Table(table) => sweep(grid.len(), |i| ctx.node_sup(&w, i, table[j][i]))?.0,
            ControlPolicy::Minimize => sweep(grid.len(), |i| ctx.node_min_sup(&w, i, &controls))?.0,
        };
    }
    Ok(w)
}

/// Checks `δ·(Lip_y f + σ_hi²·Lip_y g) ≤ 0.5`.
pub fn check_lattice_stability<S: Scalar>(p: &ControlProblem<S>, delta: S) -> Result<()> {
    let lip = p.driver_lipschitz()?;
    let value = delta * (lip.f_y + p.gamma.sigma_hi_sq() * lip.g_y);
    if value > S::half() {
        return Err(Error::LatticeUnstable { value: value.as_f64() });
    }
    Ok(())
}

/// Solves the dynamic programming recursion
/// `V(t_k, ·) = min_u one_step_gexp(V(t_{k+1}, ·), t_k, δ, u)` backwards from
/// `V(T, ·) = Φ`, with `δ = T / steps`.
pub fn solve_dpp<S: Scalar>(
    p: &ControlProblem<S>,
    grid: &Grid1D<S>,
    steps: usize,
    opts: &LatticeOptions<S>,
) -> Result<ValueField<S>> {
    Ok(solve_dpp_with_stats(p, grid, steps, opts)?.0)
}

pub fn solve_dpp_with_stats<S: Scalar>(
    p: &ControlProblem<S>,
    grid: &Grid1D<S>,
    steps: usize,
    opts: &LatticeOptions<S>,
) -> Result<(ValueField<S>, LatticeStats)> {
    if steps < 1 {
        return Err(Error::Config("lattice needs at least one time step".into()));
    }
    let delta = p.horizon / S::lit(steps as f64);
    check_lattice_stability(p, delta)?;
    let controls = p.control_grid();
    let mut field = ValueField::zeros(*grid, S::zero(), delta, steps, Provenance::Lattice);
    for i in 0..grid.len() {
        field.row_mut(steps)[i] = p.terminal(grid.node(i))?;
    }
    let mut stats = LatticeStats::default();
    for k in (0..steps).rev() {
        let t = field.time(k);
        let (row, hits) = min_step_counted(field.row(k + 1), grid, t, delta, p, &controls, opts.n_q)
            .map_err(|e| at_row(e, k))?;
        stats.interior_level_hits += hits;
        for (i, &v) in row.iter().enumerate() {
            let x = grid.node(i);
            if !(v.abs() <= opts.growth_ceiling * (S::one() + x.abs())) {
                return Err(Error::GrowthCeiling {
                    k,
                    i,
                    value: v.as_f64(),
                });
            }
        }
        field.row_mut(k).copy_from_slice(&row);
    }
    Ok((field, stats))
}

fn at_row(e: Error, k: usize) -> Error {
    match e {
        Error::NonFinite { i, .. } => Error::NonFinite { k, i },
        other => other,
    }
}

/// Pointwise DPP defect `|V(t_k, x) − 𝔾 V(t_j, ·)(x)|` where the semigroup is
/// rebuilt from row `j` with per-step re-minimisation over controls, using the
/// field's own time step.
pub fn dpp_residual_profile<S: Scalar>(
    v: &ValueField<S>,
    p: &ControlProblem<S>,
    k: usize,
    j: usize,
    n_q: usize,
) -> Result<Vec<S>> {
    v.check_row(j)?;
    if j <= k {
        return Err(Error::Config(format!("dpp residual needs j > k, got k = {k}, j = {j}")));
    }
    let grid = v.grid();
    let controls = p.control_grid();
    let mut w = v.row(j).to_vec();
    for step in (k..j).rev() {
        w = min_step_counted(&w, grid, v.time(step), v.dt(), p, &controls, n_q)?.0;
    }
    Ok(w.iter().zip(v.row(k)).map(|(a, b)| (*a - *b).abs()).collect())
}

/// Max of [`dpp_residual_profile`] over interior nodes (edges excluded).
pub fn dpp_residual<S: Scalar>(v: &ValueField<S>, p: &ControlProblem<S>, k: usize, j: usize, n_q: usize) -> Result<S> {
    let prof = dpp_residual_profile(v, p, k, j, n_q)?;
    Ok(prof[1..prof.len() - 1].iter().copied().fold(S::zero(), S::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{catalog_entry, ProblemSpec};

    fn spec(f: impl FnOnce(&mut ProblemSpec)) -> ControlProblem<f64> {
        let mut s = ProblemSpec {
            name: "t".into(),
            horizon: 1.0,
            x_min: -3.0,
            x_max: 3.0,
            u_min: 0.0,
            u_max: 0.0,
            n_u: 1,
            gamma: crate::problem::GammaSpec::Interval { lo: 1.0, hi: 1.0 },
            b: "0".into(),
            h: "0".into(),
            sigma: "1".into(),
            f: "0".into(),
            g: "0".into(),
            phi: "x".into(),
        };
        f(&mut s);
        ControlProblem::from_spec(&s).unwrap()
    }

    fn grid() -> Grid1D<f64> {
        Grid1D::new(-3.0, 3.0, 601).unwrap()
    }

    #[test]
    fn martingale_is_preserved() {
        let p = spec(|_| {});
        let g = grid();
        let w: Vec<f64> = g.nodes();
        let out = one_step_gexp(&w, &g, 0.0, 0.01, &p, 0.0, 2).unwrap();
        for i in 20..580 {
            assert!((out[i] - w[i]).abs() < 1e-12, "node {i}: {} vs {}", out[i], w[i]);
        }
    }

    #[test]
    fn convex_data_selects_sigma_hi() {
        let p = spec(|s| s.gamma = crate::problem::GammaSpec::Interval { lo: 0.5, hi: 1.0 });
        let g = grid();
        let delta = 0.01;
        let w: Vec<f64> = g.nodes().iter().map(|x| x * x).collect();
        let out = one_step_gexp(&w, &g, 0.0, delta, &p, 0.0, 2).unwrap();
        let dx2 = g.dx() * g.dx();
        for i in 50..550 {
            let x = g.node(i);
            assert!((out[i] - (x * x + delta)).abs() <= dx2, "node {i}: {} vs {}", out[i], x * x + delta);
        }
        let neg: Vec<f64> = w.iter().map(|v| -v).collect();
        let out = one_step_gexp(&neg, &g, 0.0, delta, &p, 0.0, 2).unwrap();
        for i in 50..550 {
            let x = g.node(i);
            assert!((out[i] - (-x * x - 0.25 * delta)).abs() <= dx2, "node {i}");
        }
    }

    #[test]
    fn linear_driver_step() {
        let p = spec(|s| {
            s.sigma = "0".into();
            s.f = "-y".into();
        });
        let g = grid();
        let w = vec![1.0; g.len()];
        let out = one_step_gexp(&w, &g, 0.0, 0.1, &p, 0.0, 2).unwrap();
        assert!(out.iter().all(|v| (v - 0.9).abs() < 1e-15));
    }

    #[test]
    fn rejects_bad_steps() {
        let p = spec(|_| {});
        let g = grid();
        let w = vec![0.0; g.len()];
        assert!(matches!(
            one_step_gexp(&w, &g, 0.0, 0.0, &p, 0.0, 2),
            Err(Error::NonPositiveStep(_))
        ));
        let mut bad = w.clone();
        bad[7] = f64::INFINITY;
        assert!(one_step_gexp(&bad, &g, 0.0, 0.1, &p, 0.0, 2).is_err());
    }

    #[test]
    fn constants_are_preserved_exactly() {
        let p: ControlProblem<f64> = catalog_entry("bsb-call").unwrap().problem().unwrap();
        let g = Grid1D::new(0.01, 4.0, 200).unwrap();
        let w = vec![0.7; g.len()];
        let out = one_step_gexp(&w, &g, 0.3, 0.01, &p, 0.0, 3).unwrap();
        assert!(out.iter().all(|&v| v == 0.7));
    }

    #[test]
    fn semigroup_single_substep_equals_one_step() {
        let p: ControlProblem<f64> = catalog_entry("recursive-g").unwrap().problem().unwrap();
        let g = Grid1D::new(0.01f64, 4.0, 120).unwrap();
        let eta: Vec<f64> = g.nodes().iter().map(|x| (x - 1.0).max(0.0)).collect();
        let a = semigroup_apply(&eta, &g, 0.25, 0.5, 1, &p, &ControlPolicy::Constant(0.0), 2).unwrap();
        let b = one_step_gexp(&eta, &g, 0.25, 0.25, &p, 0.0, 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn semigroup_flow_property() {
        let p: ControlProblem<f64> = catalog_entry("recursive-g").unwrap().problem().unwrap();
        let g = Grid1D::new(0.01f64, 4.0, 150).unwrap();
        let eta: Vec<f64> = g.nodes().iter().map(|x| (x * 3.0).sin() + x).collect();
        let pol = ControlPolicy::Minimize;
        let late = semigroup_apply(&eta, &g, 0.5, 1.0, 4, &p, &pol, 2).unwrap();
        let composed = semigroup_apply(&late, &g, 0.0, 0.5, 4, &p, &pol, 2).unwrap();
        let direct = semigroup_apply(&eta, &g, 0.0, 1.0, 8, &p, &pol, 2).unwrap();
        assert_eq!(composed, direct);
    }

    #[test]
    fn identity_semigroup_on_linear_data() {
        let p = spec(|_| {});
        let g = grid();
        let eta = g.nodes();
        let out = semigroup_apply(&eta, &g, 0.0, 0.1, 5, &p, &ControlPolicy::Constant(0.0), 2).unwrap();
        for i in 0..g.len() {
            assert!((out[i] - eta[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_terminal_stays_constant() {
        let p = spec(|s| {
            s.phi = "2.5".into();
            s.gamma = crate::problem::GammaSpec::Interval { lo: 0.5, hi: 1.0 };
        });
        let v = solve_dpp(&p, &grid(), 20, &LatticeOptions::default()).unwrap();
        for k in 0..=20 {
            assert!(v.row(k).iter().all(|&x| x == 2.5));
        }
        assert_eq!(dpp_residual(&v, &p, 3, 4, 2).unwrap(), 0.0);
    }

    #[test]
    fn dpp_residual_of_own_output_is_zero() {
        let p: ControlProblem<f64> = catalog_entry("lq").unwrap().problem().unwrap();
        let g = Grid1D::new(-2.0, 2.0, 81).unwrap();
        let v = solve_dpp(&p, &g, 20, &LatticeOptions::default()).unwrap();
        for k in [0, 7, 19] {
            assert_eq!(dpp_residual(&v, &p, k, k + 1, 2).unwrap(), 0.0);
        }
        assert_eq!(dpp_residual(&v, &p, 3, 6, 2).unwrap(), 0.0);
        assert!(dpp_residual(&v, &p, 5, 5, 2).is_err());
        assert!(dpp_residual(&v, &p, 5, 50, 2).is_err());
    }

    #[test]
    fn growth_ceiling_aborts() {
        let p = spec(|s| s.f = "1".into());
        let opts = LatticeOptions {
            n_q: 2,
            growth_ceiling: 1.0,
        };
        let err = solve_dpp(&p, &grid(), 50, &opts).unwrap_err();
        assert!(matches!(err, Error::GrowthCeiling { .. }), "{err}");
    }

    #[test]
    fn unstable_driver_is_rejected() {
        let p = spec(|s| s.f = "-200*y".into());
        assert!(matches!(
            solve_dpp(&p, &grid(), 10, &LatticeOptions::default()),
            Err(Error::LatticeUnstable { .. })
        ));
    }

    #[test]
    fn interior_levels_are_flagged_for_non_convex_data() {
        // Cosine data: the one-step sup over q is attained in the interior.
        let p = spec(|s| {
            s.phi = "cos(4*x)".into();
            s.gamma = crate::problem::GammaSpec::Interval { lo: 0.2, hi: 1.0 };
        });
        let g = grid();
        let (_, stats) = solve_dpp_with_stats(&p, &g, 2, &LatticeOptions { n_q: 9, ..Default::default() }).unwrap();
        assert!(stats.interior_level_hits > 0);
        let (_, stats) = solve_dpp_with_stats(&p, &g, 2, &LatticeOptions::default()).unwrap();
        assert_eq!(stats.interior_level_hits, 0);
    }

    #[test]
    fn single_precision_solve() {
        let p: ControlProblem<f32> = catalog_entry("bsb-call").unwrap().problem().unwrap();
        let g = Grid1D::new(0.01f32, 4.0, 200).unwrap();
        let v = solve_dpp(&p, &g, 100, &LatticeOptions::default()).unwrap();
        let at_one = g.interpolate(v.row(0), 1.0);
        assert!((at_one - 0.38292).abs() < 2e-2, "{at_one}");
    }
}
