//! Discrete regularity constants of a value field: Lipschitz in `x`, linear
//! growth, and a `√δ` modulus in `t`.

use std::ops::Range;

use serde::Serialize;

use crate::analysis::f0::loglog_slope;
use crate::field::ValueField;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegularityReport {
    /// `max_k max_i |V(t_k, x_{i+1}) − V(t_k, x_i)| / Δx`.
    pub l_x: f64,
    /// Least-squares coefficient of `m(ℓ) ≈ H·√(ℓδ)` over lags `ℓ = 1, 2, 4, …`,
    /// where `m(ℓ) = max_k max_i |V(t_k, x_i) − V(t_{k+ℓ}, x_i)|`.
    pub h_t: f64,
    /// `m(1) / √δ`, the smallest constant bounding every one-step difference.
    pub h_t_step: f64,
    /// Fitted exponent of the time modulus over lags 1, 2, 4, … (None when the
    /// field is constant in time).
    pub holder_exponent: Option<f64>,
    /// `max |V| / (1 + |x|)`.
    pub l_growth: f64,
}

/// [`regularity_report_on`] over every node.
pub fn regularity_report<S: Scalar>(v: &ValueField<S>) -> RegularityReport {
    regularity_report_on(v, 0..v.grid().len())
}

/// Regularity constants restricted to the nodes in `nodes`.
pub fn regularity_report_on<S: Scalar>(v: &ValueField<S>, nodes: Range<usize>) -> RegularityReport {
    let grid = v.grid();
    let dx = grid.dx().as_f64();
    let dt = v.dt().as_f64();
    let rows = v.steps();
    let at = |k: usize, i: usize| v.row(k)[i].as_f64();

    let mut l_x: f64 = 0.0;
    let mut l_growth: f64 = 0.0;
    for k in 0..=rows {
        for i in nodes.clone() {
            l_growth = l_growth.max(at(k, i).abs() / (1.0 + grid.node(i).as_f64().abs()));
            if i + 1 < nodes.end {
                l_x = l_x.max((at(k, i + 1) - at(k, i)).abs() / dx);
            }
        }
    }

    let modulus = |lag: usize| {
        let mut m: f64 = 0.0;
        for k in 0..=rows - lag {
            for i in nodes.clone() {
                m = m.max((at(k, i) - at(k + lag, i)).abs());
            }
        }
        m
    };
    let mut lags = Vec::new();
    let mut mods = Vec::new();
    let (mut num, mut den) = (0.0, 0.0);
    let mut h_t_step = 0.0;
    let mut lag = 1;
    while lag <= rows {
        let m = modulus(lag);
        let span = lag as f64 * dt;
        if lag == 1 {
            h_t_step = m / dt.sqrt();
        }
        num += m * span.sqrt();
        den += span;
        if m > 0.0 {
            lags.push(span);
            mods.push(m);
        }
        lag *= 2;
    }
    RegularityReport {
        l_x,
        h_t: if den > 0.0 { num / den } else { 0.0 },
        h_t_step,
        holder_exponent: loglog_slope(&lags, &mods),
        l_growth,
    }
}

/// Relative increase from `prev` to `next`; decreases count as zero.
pub fn relative_growth(prev: f64, next: f64) -> f64 {
    if prev == 0.0 {
        return if next == 0.0 { 0.0 } else { f64::INFINITY };
    }
    ((next - prev) / prev.abs()).max(0.0)
}
