//! Explicit monotone finite differences for the HJB equation
//!
//! ```text
//! ∂ₜV + min_u H(t, x, V, ∂ₓV, ∂ₓₓV, u) = 0,   V(T, ·) = Φ
//! H = G(σ²A + 2p·h + 2g(t, x, v, σp, u)) + p·b + f(t, x, v, σp, u)
//! ```
//!
//! Each step computes, per node and control, the max over volatility levels of
//! the scenario Hamiltonian
//!
//! ```text
//! Ĥ(u, q) = ½q²[σ²A + 2p·h + 2g(v, σp)] + p·b + f(v, σp)
//! ```
//!
//! which equals `H` when `p` is shared across levels. The gradient `p` is
//! picked per scenario: central when the diffusion dominates the effective
//! drift, upwind otherwise. At the two edge nodes the second difference is
//! zero (a linear ghost value) and the gradient is the inward one-sided
//! difference when the drift points inward. When it points outward the ghost
//! value continues the terminal payoff's edge slope, so the gradient is that
//! slope and does not depend on the row. Every choice keeps
//! the update a nonnegative combination of the three stencil values under the
//! CFL bound.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::expr::{Var, VarSet};
use crate::field::{Grid1D, Provenance, ValueField};
use crate::gexp::SymMatrix;
use crate::problem::{ControlProblem, Slot};
use crate::scalar::Scalar;

const PAR_CHUNK: usize = 64;

/// Arguments of the Hamiltonian at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HamiltonianInputs<S> {
    pub t: S,
    pub x: S,
    pub v: S,
    /// First space derivative.
    pub p: S,
    /// Second space derivative.
    pub a: S,
    pub u: S,
}

/// The argument of `G`: `σ²A + 2p·h + 2g(t, x, v, σp, u)`.
pub fn f_term<S: Scalar>(inp: &HamiltonianInputs<S>, p: &ControlProblem<S>) -> Result<S> {
    let s = p.vol(inp.t, inp.x, inp.u)?;
    let h = p.qv_drift(inp.t, inp.x, inp.u)?;
    let g = p.qv_driver(inp.t, inp.x, inp.v, s * inp.p, inp.u)?;
    Ok(s * s * inp.a + S::two() * inp.p * h + S::two() * g)
}

/// `G(F) + p·b + f(t, x, v, σp, u)`.
pub fn hamiltonian<S: Scalar>(inp: &HamiltonianInputs<S>, p: &ControlProblem<S>) -> Result<S> {
    let big_f = f_term(inp, p)?;
    let g = p.gamma.g_of(&SymMatrix::scalar(big_f))?;
    let s = p.vol(inp.t, inp.x, inp.u)?;
    let b = p.drift(inp.t, inp.x, inp.u)?;
    let f = p.driver(inp.t, inp.x, inp.v, s * inp.p, inp.u)?;
    Ok(g + inp.p * b + f)
}

fn sample_times<S: Scalar>(p: &ControlProblem<S>) -> Vec<S> {
    let time_dependent = [Slot::Drift, Slot::QvDrift, Slot::Vol, Slot::Driver, Slot::QvDriver]
        .iter()
        .any(|&s| p.coefficient(s).depends_on(Var::T));
    if time_dependent {
        (0..=8).map(|j| p.horizon * S::lit(j as f64 / 8.0)).collect()
    } else {
        vec![S::zero()]
    }
}

/// Largest time step for which the explicit update is monotone:
///
/// ```text
/// Δx² / (σ_hi²·max σ² + Δx·max|drift| + Δx²·(Lip_y f + σ_hi²·Lip_y g))
/// ```
///
/// where the drift includes `b + q²h` and the `z`-sensitivity of `f` and `g`
/// (`|σ|·(Lip_z f + q²·Lip_z g)`). Maxima are taken over grid nodes, the control
/// grid and, for time-dependent coefficients, a few sample times.
pub fn cfl_max_dt<S: Scalar>(p: &ControlProblem<S>, grid: &Grid1D<S>) -> Result<S> {
    let lip = p.driver_lipschitz()?;
    let hi2 = p.gamma.sigma_hi_sq();
    let levels = p.gamma.scalar_levels(2)?;
    let controls = p.control_grid();
    let mut max_s2 = S::zero();
    let mut max_drift = S::zero();
    for t in sample_times(p) {
        for i in 0..grid.len() {
            let x = grid.node(i);
            for &u in &controls {
                let (b, h, s) = (p.drift(t, x, u)?, p.qv_drift(t, x, u)?, p.vol(t, x, u)?);
                max_s2 = max_s2.max(s * s);
                for &q in &levels {
                    let q2 = q * q;
                    let c = (b + q2 * h).abs() + s.abs() * (lip.f_z + q2 * lip.g_z);
                    max_drift = max_drift.max(c);
                }
            }
        }
    }
    let dx = grid.dx();
    let denom = hi2 * max_s2 + dx * max_drift + dx * dx * (lip.f_y + hi2 * lip.g_y);
    if !(denom > S::zero()) || !denom.is_finite() {
        return Err(Error::DegenerateCfl);
    }
    Ok(dx * dx / denom)
}

#[derive(Debug, Clone)]
pub struct SchemeParams<S> {
    pub grid: Grid1D<S>,
    /// Internal time step.
    pub dt: S,
    pub theta: S,
    pub cfl_bound: S,
    pub controls: Vec<S>,
    /// Number of internal steps over `[0, T]`.
    pub steps: usize,
    /// Internal steps between stored rows.
    pub out_every: usize,
}

impl<S: Scalar> SchemeParams<S> {
    /// Time step `θ·cfl_max_dt`, shrunk so that it divides the horizon. With
    /// `out_rows = Some(K)` the step also divides `T/K` and only the `K + 1`
    /// rows at multiples of `T/K` are kept.
    pub fn from_cfl(p: &ControlProblem<S>, grid: &Grid1D<S>, theta: S, out_rows: Option<usize>) -> Result<Self> {
        if !(theta > S::zero() && theta <= S::one()) {
            return Err(Error::Config(format!("cfl_theta must lie in (0, 1], got {theta}")));
        }
        let bound = cfl_max_dt(p, grid)?;
        let target = theta * bound;
        let (steps, out_every) = match out_rows {
            Some(0) => return Err(Error::Config("output row count must be positive".into())),
            Some(k) => {
                let per_row = p.horizon / S::lit(k as f64);
                let m = (per_row / target).ceil().to_usize().unwrap_or(usize::MAX).max(1);
                (k * m, m)
            }
            None => ((p.horizon / target).ceil().to_usize().unwrap_or(usize::MAX).max(1), 1),
        };
        Ok(Self {
            grid: *grid,
            dt: p.horizon / S::lit(steps as f64),
            theta,
            cfl_bound: bound,
            controls: p.control_grid(),
            steps,
            out_every,
        })
    }

    /// An explicit step count; rejected if the step exceeds the CFL bound.
    pub fn with_steps(p: &ControlProblem<S>, grid: &Grid1D<S>, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("HJB needs at least one time step".into()));
        }
        let bound = cfl_max_dt(p, grid)?;
        let dt = p.horizon / S::lit(steps as f64);
        if dt > bound {
            return Err(Error::Cfl {
                dt: dt.as_f64(),
                bound: bound.as_f64(),
            });
        }
        Ok(Self {
            grid: *grid,
            dt,
            theta: dt / bound,
            cfl_bound: bound,
            controls: p.control_grid(),
            steps,
            out_every: 1,
        })
    }

    pub fn out_rows(&self) -> usize {
        self.steps / self.out_every
    }
}

/// Coefficient values per (node, control) when a slot does not vary with
/// `t`, `y` or `z`.
struct SlotTable<S> {
    slot: Slot,
    cached: Option<Vec<S>>,
}

impl<S: Scalar> SlotTable<S> {
    fn new(p: &ControlProblem<S>, slot: Slot, grid: &Grid1D<S>, controls: &[S]) -> Result<Self> {
        let static_vars = VarSet::of(&[Var::X, Var::U]);
        let expr = p.coefficient(slot);
        let cached = if expr.free_vars().is_subset(static_vars) {
            let mut tab = Vec::with_capacity(grid.len() * controls.len());
            for i in 0..grid.len() {
                for &u in controls {
                    tab.push(p.eval_slot(slot, S::zero(), grid.node(i), S::zero(), S::zero(), u)?);
                }
            }
            Some(tab)
        } else {
            None
        };
        Ok(Self { slot, cached })
    }

    #[inline]
    #[allow(clippy::too_many_arguments)]
    fn get(&self, p: &ControlProblem<S>, idx: usize, t: S, x: S, y: S, z: S, u: S) -> Result<S> {
        match &self.cached {
            Some(tab) => Ok(tab[idx]),
            None => p.eval_slot(self.slot, t, x, y, z, u),
        }
    }
}

/// One explicit backward step of the scheme on a fixed grid.
pub struct HjbStepper<'a, S> {
    p: &'a ControlProblem<S>,
    grid: Grid1D<S>,
    controls: Vec<S>,
    levels: Vec<S>,
    z_dependent: bool,
    /// Terminal payoff slopes at the two edges, used for outflow ghosts.
    edge_slopes: (S, S),
    b: SlotTable<S>,
    h: SlotTable<S>,
    s: SlotTable<S>,
    f: SlotTable<S>,
    g: SlotTable<S>,
}

impl<'a, S: Scalar> HjbStepper<'a, S> {
    pub fn new(p: &'a ControlProblem<S>, grid: &Grid1D<S>, controls: &[S]) -> Result<Self> {
        if controls.is_empty() {
            return Err(Error::Config("control grid is empty".into()));
        }
        let table = |slot| SlotTable::new(p, slot, grid, controls);
        let (n, dx) = (grid.len(), grid.dx());
        let edge_slopes = (
            (p.terminal(grid.node(1))? - p.terminal(grid.node(0))?) / dx,
            (p.terminal(grid.node(n - 1))? - p.terminal(grid.node(n - 2))?) / dx,
        );
        Ok(Self {
            edge_slopes,
            p,
            grid: *grid,
            controls: controls.to_vec(),
            levels: p.gamma.scalar_levels(2)?,
            z_dependent: p.coefficient(Slot::Driver).depends_on(Var::Z)
                || p.coefficient(Slot::QvDriver).depends_on(Var::Z),
            b: table(Slot::Drift)?,
            h: table(Slot::QvDrift)?,
            s: table(Slot::Vol)?,
            f: table(Slot::Driver)?,
            g: table(Slot::QvDriver)?,
        })
    }

    /// `min_u max_q Ĥ(u, q)` at node `i` from the row `w`.
    pub fn node_rhs(&self, w: &[S], i: usize, t: S) -> Result<S> {
        let p = self.p;
        let n = w.len();
        let dx = self.grid.dx();
        let x = self.grid.node(i);
        let v = w[i];
        let (left, right) = (i == 0, i + 1 == n);
        let a = if left || right {
            S::zero()
        } else {
            (w[i + 1] - S::two() * v + w[i - 1]) / (dx * dx)
        };
        let fwd = if right { S::zero() } else { (w[i + 1] - v) / dx };
        let bwd = if left { S::zero() } else { (v - w[i - 1]) / dx };
        let central = if left || right {
            S::zero()
        } else {
            (w[i + 1] - w[i - 1]) / (S::two() * dx)
        };
        let zero = S::zero();
        let mut best_u = S::infinity();
        for (ui, &u) in self.controls.iter().enumerate() {
            let idx = i * self.controls.len() + ui;
            let b = self.b.get(p, idx, t, x, zero, zero, u)?;
            let h = self.h.get(p, idx, t, x, zero, zero, u)?;
            let s = self.s.get(p, idx, t, x, zero, zero, u)?;
            let z_slope = if self.z_dependent {
                let half = S::half();
                let df = self.f.get(p, idx, t, x, v, s, u)? - self.f.get(p, idx, t, x, v, -s, u)?;
                let dg = self.g.get(p, idx, t, x, v, s, u)? - self.g.get(p, idx, t, x, v, -s, u)?;
                Some((half * df, half * dg))
            } else {
                None
            };
            let mut best_q = S::neg_infinity();
            for &q in &self.levels {
                let q2 = q * q;
                let mut c = b + q2 * h;
                if let Some((df, dg)) = z_slope {
                    c = c + df + q2 * dg;
                }
                let grad = if left {
                    if c > zero {
                        fwd
                    } else {
                        self.edge_slopes.0
                    }
                } else if right {
                    if c < zero {
                        bwd
                    } else {
                        self.edge_slopes.1
                    }
                } else if c.abs() * dx <= q2 * s * s {
                    central
                } else if c > zero {
                    fwd
                } else {
                    bwd
                };
                let z = s * grad;
                let f = self.f.get(p, idx, t, x, v, z, u)?;
                let g = self.g.get(p, idx, t, x, v, z, u)?;
                let val = S::half() * q2 * (s * s * a + S::two() * grad * h + S::two() * g) + grad * b + f;
                if val > best_q {
                    best_q = val;
                }
            }
            if best_q < best_u {
                best_u = best_q;
            }
        }
        Ok(best_u)
    }

    /// Row at time `t` from the row `w` at `t + dt`.
    pub fn step(&self, w: &[S], t: S, dt: S) -> Result<Vec<S>> {
        if w.len() != self.grid.len() {
            return Err(Error::Config(format!(
                "row has {} values, grid has {} nodes",
                w.len(),
                self.grid.len()
            )));
        }
        (0..w.len())
            .into_par_iter()
            .with_min_len(PAR_CHUNK)
            .map(|i| Ok(w[i] + dt * self.node_rhs(w, i, t)?))
            .collect()
    }
}

/// Backward explicit solve from `V(T, ·) = Φ`.
pub fn solve_hjb<S: Scalar>(p: &ControlProblem<S>, sp: &SchemeParams<S>) -> Result<ValueField<S>> {
    if sp.dt > sp.cfl_bound {
        return Err(Error::Cfl {
            dt: sp.dt.as_f64(),
            bound: sp.cfl_bound.as_f64(),
        });
    }
    if sp.out_every == 0 || !sp.steps.is_multiple_of(sp.out_every) {
        return Err(Error::Config("output stride must divide the step count".into()));
    }
    let stepper = HjbStepper::new(p, &sp.grid, &sp.controls)?;
    let rows = sp.out_rows();
    let mut field = ValueField::zeros(
        sp.grid,
        S::zero(),
        sp.dt * S::lit(sp.out_every as f64),
        rows,
        Provenance::Hjb,
    );
    let mut w = sp.grid.nodes().into_iter().map(|x| p.terminal(x)).collect::<Result<Vec<S>>>()?;
    field.row_mut(rows).copy_from_slice(&w);
    for j in (0..sp.steps).rev() {
        let t = if sp.out_every == 1 {
            field.time(j)
        } else {
            sp.dt * S::lit(j as f64)
        };
        w = stepper.step(&w, t, sp.dt)?;
        if let Some(i) = w.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { k: j / sp.out_every, i });
        }
        if j % sp.out_every == 0 {
            field.row_mut(j / sp.out_every).copy_from_slice(&w);
        }
    }
    Ok(field)
}

/// Max over rows and interior nodes of `|V_k − (V_{k+1} + δt·min_u H)| / δt`
/// with the scheme's own discrete derivatives and the field's own time step.
pub fn hjb_residual<S: Scalar>(v: &ValueField<S>, p: &ControlProblem<S>) -> Result<S> {
    let stepper = HjbStepper::new(p, v.grid(), &p.control_grid())?;
    let dt = v.dt();
    let n = v.grid().len();
    let mut worst = S::zero();
    for k in 0..v.steps() {
        let next = v.row(k + 1);
        let here = v.row(k);
        for i in 1..n - 1 {
            let predicted = next[i] + dt * stepper.node_rhs(next, i, v.time(k))?;
            worst = worst.max((here[i] - predicted).abs() / dt);
        }
    }
    Ok(worst)
}
