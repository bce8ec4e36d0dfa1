//! The deterministic ODE that captures one short step of the value recursion
//! around a smooth test function `φ(t, x)`, and the rate at which the lattice
//! semigroup approaches it.
//!
//! With `x` frozen,
//!
//! ```text
//! −dY = F₀(s, Y) ds,  Y(t + δ) = 0
//! F₀(s, y) = min_u [ ∂ₛφ + f(s, x, y + φ, σ∂ₓφ, u) + b∂ₓφ
//!                    + G(σ²∂ₓₓφ + 2h∂ₓφ + 2g(s, x, y + φ, σ∂ₓφ, u)) ]
//! ```
//!
//! The `h` and `g` terms inside `G` vanish for problems without a
//! quadratic-variation drift or driver.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::CoefficientExpr;
use crate::gexp::SymMatrix;
use crate::problem::ControlProblem;
use crate::scalar::Scalar;
use crate::tree::TreeRecursion;

/// Values of `D(δ)` at or below this are treated as exact agreement.
pub const NOISE_FLOOR: f64 = 1e-10;

/// Finite-difference step for a coordinate of extent `scale`: `1e-5·scale`,
/// raised to `∛ε·scale` in low precision, then rounded to a power of two so
/// that dyadic arguments stay exact.
fn fd_step<S: Scalar>(scale: S) -> S {
    let raw = (S::lit(1e-5) * scale).max(S::epsilon().cbrt() * scale);
    S::two().powi(raw.log2().round().to_i32().unwrap_or(0))
}

fn eval_tf<S: Scalar>(phi: &CoefficientExpr, t: S, x: S) -> Result<S> {
    let z = S::zero();
    phi.eval_slots(&[t, x, z, z, z]).map_err(|source| Error::Eval {
        slot: "test function",
        source,
    })
}

/// `φ`, `∂ₜφ`, `∂ₓφ`, `∂ₓₓφ` by central differences.
fn tf_jet<S: Scalar>(p: &ControlProblem<S>, phi: &CoefficientExpr, s: S, x: S) -> Result<[S; 4]> {
    let hx = fd_step(p.x_max - p.x_min);
    let ht = fd_step(p.horizon);
    let v = eval_tf(phi, s, x)?;
    let (vp, vm) = (eval_tf(phi, s, x + hx)?, eval_tf(phi, s, x - hx)?);
    let v_t = (eval_tf(phi, s + ht, x)? - eval_tf(phi, s - ht, x)?) / (S::two() * ht);
    let v_x = (vp - vm) / (S::two() * hx);
    let v_xx = (vp - S::two() * v + vm) / (hx * hx);
    let jet = [v, v_t, v_x, v_xx];
    if jet.iter().any(|d| !d.is_finite()) {
        return Err(Error::Domain(format!("test function derivatives are not finite at t = {s}, x = {x}")));
    }
    Ok(jet)
}

fn f0_rhs<S: Scalar>(p: &ControlProblem<S>, phi: &CoefficientExpr, x: S, s: S, y: S, controls: &[S]) -> Result<S> {
    let [v, v_t, v_x, v_xx] = tf_jet(p, phi, s, x)?;
    let mut best = S::infinity();
    for &u in controls {
        let b = p.drift(s, x, u)?;
        let h = p.qv_drift(s, x, u)?;
        let sig = p.vol(s, x, u)?;
        let z = sig * v_x;
        let f1 = v_t + p.driver(s, x, y + v, z, u)? + b * v_x;
        let two_f2 = sig * sig * v_xx + S::two() * h * v_x + S::two() * p.qv_driver(s, x, y + v, z, u)?;
        best = best.min(f1 + p.gamma.g_of(&SymMatrix::scalar(two_f2))?);
    }
    Ok(best)
}

/// `Y` at time `t`, integrating backwards from `Y(t + δ) = 0` with `n_rk`
/// classical Runge–Kutta steps.
pub fn f0_ode_solve<S: Scalar>(
    p: &ControlProblem<S>,
    x: S,
    t: S,
    delta: S,
    phi: &CoefficientExpr,
    n_rk: usize,
) -> Result<S> {
    if !(delta > S::zero()) {
        return Err(Error::NonPositiveStep(delta.as_f64()));
    }
    if n_rk == 0 {
        return Err(Error::Config("n_rk must be positive".into()));
    }
    let controls = p.control_grid();
    let rhs = |s: S, y: S| f0_rhs(p, phi, x, s, y, &controls);
    let h = delta / S::lit(n_rk as f64);
    let half = S::half() * h;
    let six = S::lit(6.0);
    let mut y = S::zero();
    for j in (0..n_rk).rev() {
        // Step from s_{j+1} down to s_j.
        let s = t + h * S::lit((j + 1) as f64);
        let k1 = rhs(s, y)?;
        let k2 = rhs(s - half, y + half * k1)?;
        let k3 = rhs(s - half, y + half * k2)?;
        let k4 = rhs(s - h, y + h * k3)?;
        y = y + h * (k1 + S::two() * k2 + S::two() * k3 + k4) / six;
    }
    Ok(y)
}

/// Ratio `|Y(n) − Y(ref)| / |Y(2n) − Y(ref)|` against a 1024-step reference.
pub fn rk4_self_convergence<S: Scalar>(
    p: &ControlProblem<S>,
    x: S,
    t: S,
    delta: S,
    phi: &CoefficientExpr,
    n: usize,
) -> Result<f64> {
    let reference = f0_ode_solve(p, x, t, delta, phi, 1024)?;
    let coarse = (f0_ode_solve(p, x, t, delta, phi, n)? - reference).abs();
    let fine = (f0_ode_solve(p, x, t, delta, phi, 2 * n)? - reference).abs();
    Ok(coarse.as_f64() / fine.as_f64())
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[derive(Debug, Clone, Serialize)]
pub struct Delta32Report {
    pub deltas: Vec<f64>,
    /// `D(δ)` for each step.
    pub defects: Vec<f64>,
    /// Fitted exponent over the defects above the noise floor.
    pub slope: Option<f64>,
    pub below_noise_floor: bool,
}

impl Delta32Report {
    pub fn passes(&self, min_slope: f64) -> bool {
        self.below_noise_floor || self.slope.is_some_and(|s| s >= min_slope)
    }
}

/// For each `δ`, `D(δ) = |min_u 𝔾_{t,t+δ}[φ(t + δ, X_{t+δ})] − φ(t, x) − Y(δ)|`
/// with the semigroup evaluated on an interpolation-free tree of `n_sub`
/// substeps and `Y` from [`f0_ode_solve`]; returns the log-log slope of `D`.
pub fn delta32_check<S: Scalar>(
    p: &ControlProblem<S>,
    x: S,
    t: S,
    phi: &CoefficientExpr,
    deltas: &[S],
    n_sub: usize,
) -> Result<Delta32Report> {
    if deltas.len() < 4 {
        return Err(Error::Config(format!("delta32_check needs at least 4 steps, got {}", deltas.len())));
    }
    if deltas.windows(2).any(|w| !(w[1] < w[0])) || !(deltas[deltas.len() - 1] > S::zero()) {
        return Err(Error::Config("delta list must be positive and strictly decreasing".into()));
    }
    let controls = p.control_grid();
    let levels = p.gamma.scalar_levels(2)?;
    let phi_now = eval_tf(phi, t, x)?;
    let mut defects = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let end = t + delta;
        let terminal = |y: S| eval_tf(phi, end, y);
        let semigroup = TreeRecursion {
            problem: p,
            controls: &controls,
            levels: &levels,
            t0: t,
            delta: delta / S::lit(n_sub as f64),
            steps: n_sub,
            terminal: &terminal,
        }
        .value(x)?;
        let ode = f0_ode_solve(p, x, t, delta, phi, 64)?;
        defects.push((semigroup - phi_now - ode).abs().as_f64());
    }
    let ds: Vec<f64> = deltas.iter().map(|d| d.as_f64()).collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = ds
        .iter()
        .zip(&defects)
        .filter(|(_, &d)| d > NOISE_FLOOR)
        .map(|(a, b)| (*a, *b))
        .unzip();
    let slope = if xs.len() >= 2 { loglog_slope(&xs, &ys) } else { None };
    Ok(Delta32Report {
        deltas: ds,
        defects,
        slope,
        below_noise_floor: slope.is_none(),
    })
}
