//! Closed-form reference values.
//!
//! * Zero-rate Black–Scholes call. With a convex payoff and a volatility
//!   proportional to the state, the value stays convex in `x`, so the
//!   sublinear generator always sees a nonnegative second derivative and acts
//!   as the classical one at `σ_hi`. A concave payoff flips this to `σ_lo`.
//! * Linear-quadratic control with `dX = u dt + s dW`, running cost `u²` and
//!   terminal cost `x²`. The ansatz `V = P(t)x² + r(t)` in
//!   `∂ₜV − (∂ₓV)²/4 + ½s²∂ₓₓV = 0` gives `Ṗ = P²`, `ṙ = −s²P`, so
//!   `P = 1/(1 + T − t)` and `r = s² ln(1 + T − t)`.

use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Standard normal distribution function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Zero-rate Black–Scholes call price `S·N(d₁) − K·N(d₂)`.
pub fn bs_value(spot: f64, strike: f64, vol: f64, tau: f64) -> Result<f64> {
    for (name, v) in [("spot", spot), ("strike", strike), ("vol", vol), ("tau", tau)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::Domain(format!("bs_value needs {name} > 0, got {v}")));
        }
    }
    let sd = vol * tau.sqrt();
    let d1 = ((spot / strike).ln() + 0.5 * sd * sd) / sd;
    let d2 = d1 - sd;
    Ok(spot * normal_cdf(d1) - strike * normal_cdf(d2))
}

/// `x²/(1 + T − t) + s²·ln(1 + T − t)`.
pub fn lq_value(t: f64, x: f64, horizon: f64, s: f64) -> Result<f64> {
    if t > horizon {
        return Err(Error::Domain(format!("lq_value needs t <= T, got t = {t}, T = {horizon}")));
    }
    let tau = 1.0 + horizon - t;
    Ok(x * x / tau + s * s * tau.ln())
}

/// Residual of [`lq_value`] in `∂ₜV + min_u(u·∂ₓV + u²) + ½s²∂ₓₓV`, with the
/// derivatives written out by hand and the min taken in closed form.
pub fn lq_pde_residual(t: f64, x: f64, horizon: f64, s: f64) -> f64 {
    let tau = 1.0 + horizon - t;
    let v_t = x * x / (tau * tau) - s * s / tau;
    let v_x = 2.0 * x / tau;
    let v_xx = 2.0 / tau;
    let u_star = -0.5 * v_x;
    v_t + (u_star * v_x + u_star * u_star) + 0.5 * s * s * v_xx
}
