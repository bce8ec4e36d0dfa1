//! Forward simulation under one fixed volatility scenario.
//!
//! A single scenario is one of the measures the sublinear expectation takes
//! the sup over, so for a fixed feedback policy the sample mean estimates a
//! lower bound on that policy's robust value. The Brownian increments are
//! `±√δ` coin flips drawn from a counter-based stream per path, which makes
//! every estimate independent of scheduling.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::CoefficientExpr;
use crate::field::ValueField;
use crate::problem::ControlProblem;
use crate::scalar::Scalar;

pub const MIN_PATHS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    /// `1.96·stderr`.
    pub half_width: f64,
    pub n_paths: usize,
}

impl McEstimate {
    fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        let stderr = (var / n).sqrt();
        Self {
            mean,
            stderr,
            half_width: 1.96 * stderr,
            n_paths: samples.len(),
        }
    }
}

/// Inputs shared by the simulators.
pub struct Scenario<'a, S> {
    pub problem: &'a ControlProblem<S>,
    /// Feedback control `u(t, x)`.
    pub policy: &'a CoefficientExpr,
    /// Piecewise-constant volatility levels spread evenly over the horizon.
    pub q_profile: &'a [S],
    pub seed: u64,
}

impl<S: Scalar> Scenario<'_, S> {
    fn check(&self, n_paths: usize, steps: usize) -> Result<()> {
        if n_paths < MIN_PATHS {
            return Err(Error::Config(format!("Monte Carlo needs at least {MIN_PATHS} paths, got {n_paths}")));
        }
        if steps == 0 || self.q_profile.is_empty() {
            return Err(Error::Config("Monte Carlo needs at least one step and one volatility level".into()));
        }
        if let Some(q) = self.q_profile.iter().find(|q| !self.problem.gamma.contains_level(**q)) {
            return Err(Error::VolatilityOutsideGamma(q.as_f64()));
        }
        Ok(())
    }

    fn level(&self, k: usize, steps: usize) -> S {
        self.q_profile[k * self.q_profile.len() / steps]
    }

    fn control(&self, t: S, x: S) -> Result<S> {
        let z = S::zero();
        self.policy.eval_slots(&[t, x, z, z, z]).map_err(|source| Error::Eval {
            slot: "policy",
            source,
        })
    }

    /// States `x_0..=x_K` and controls `u_0..u_K` of one path over `[0, horizon]`.
    fn path(&self, x0: S, horizon: S, steps: usize, index: u64) -> Result<(Vec<S>, Vec<S>)> {
        let p = self.problem;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        let delta = horizon / S::lit(steps as f64);
        let root = delta.sqrt();
        let mut xs = Vec::with_capacity(steps + 1);
        let mut us = Vec::with_capacity(steps);
        xs.push(x0);
        for k in 0..steps {
            let t = delta * S::lit(k as f64);
            let x = xs[k];
            let u = self.control(t, x)?;
            let q = self.level(k, steps);
            let shock = if rng.random::<bool>() { root } else { -root };
            let next = x + p.drift(t, x, u)? * delta + p.qv_drift(t, x, u)? * q * q * delta + p.vol(t, x, u)? * q * shock;
            xs.push(next);
            us.push(u);
        }
        Ok((xs, us))
    }
}

fn collect_paths(n_paths: usize, one: impl Fn(u64) -> Result<f64> + Sync) -> Result<Vec<f64>> {
    (0..n_paths).into_par_iter().with_min_len(256).map(|i| one(i as u64)).collect()
}

/// Sample mean of the pathwise BSDE value over `[0, T]` with `steps` Euler
/// steps. `Z` is `σ·∂ₓV` read from `z_field` when given, zero otherwise.
pub fn mc_lower_bound<S: Scalar>(
    sc: &Scenario<'_, S>,
    x0: S,
    n_paths: usize,
    steps: usize,
    z_field: Option<&ValueField<S>>,
) -> Result<McEstimate> {
    sc.check(n_paths, steps)?;
    let p = sc.problem;
    let delta = p.horizon / S::lit(steps as f64);
    let samples = collect_paths(n_paths, |index| {
        let (xs, us) = sc.path(x0, p.horizon, steps, index)?;
        let mut y = p.terminal(xs[steps])?;
        for k in (0..steps).rev() {
            let t = delta * S::lit(k as f64);
            let (x, u, q) = (xs[k], us[k], sc.level(k, steps));
            let z = match z_field {
                Some(v) => p.vol(t, x, u)? * v.slope_at(t, x),
                None => S::zero(),
            };
            y = y + p.driver(t, x, y, z, u)? * delta + p.qv_driver(t, x, y, z, u)? * q * q * delta;
        }
        Ok(y.as_f64())
    })?;
    Ok(McEstimate::from_samples(&samples))
}

/// Sample mean of `sup_k |X_k − x0|²` over `[0, horizon]`.
pub fn sup_moment<S: Scalar>(
    sc: &Scenario<'_, S>,
    x0: S,
    horizon: S,
    n_paths: usize,
    steps: usize,
) -> Result<McEstimate> {
    sc.check(n_paths, steps)?;
    let samples = collect_paths(n_paths, |index| {
        let (xs, _) = sc.path(x0, horizon, steps, index)?;
        Ok(xs.iter().map(|x| (*x - x0) * (*x - x0)).fold(S::zero(), S::max).as_f64())
    })?;
    Ok(McEstimate::from_samples(&samples))
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentScaling {
    pub deltas: Vec<f64>,
    pub moments: Vec<f64>,
    /// `moment / (δ·(1 + x0²))`.
    pub normalized: Vec<f64>,
    /// Consecutive normalized moments differ by at most a factor of 2.
    pub pass: bool,
}

/// Short-horizon second moments over `[0, T/K]` for each `K`, each simulated
/// with `inner_steps` Euler steps; the moment should scale like `δ·(1 + x0²)`.
pub fn moment_scaling<S: Scalar>(
    sc: &Scenario<'_, S>,
    x0: S,
    ks: &[usize],
    n_paths: usize,
    inner_steps: usize,
) -> Result<MomentScaling> {
    let x0f = x0.as_f64();
    let mut deltas = Vec::new();
    let mut moments = Vec::new();
    for &k in ks {
        if k == 0 {
            return Err(Error::Config("K must be positive".into()));
        }
        let delta = sc.problem.horizon / S::lit(k as f64);
        deltas.push(delta.as_f64());
        moments.push(sup_moment(sc, x0, delta, n_paths, inner_steps)?.mean);
    }
    let normalized: Vec<f64> = deltas
        .iter()
        .zip(&moments)
        .map(|(d, m)| m / (d * (1.0 + x0f * x0f)))
        .collect();
    let pass = normalized.windows(2).all(|w| {
        let r = w[1] / w[0];
        r.is_finite() && (0.5..=2.0).contains(&r)
    });
    Ok(MomentScaling {
        deltas,
        moments,
        normalized,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{parse_for_slot, GammaSpec, ProblemSpec, Slot};

    fn base(f: impl FnOnce(&mut ProblemSpec)) -> ControlProblem<f64> {
        let mut s = ProblemSpec {
            name: "t".into(),
            horizon: 1.0,
            x_min: -2.0,
            x_max: 2.0,
            u_min: 0.0,
            u_max: 0.0,
            n_u: 1,
            gamma: GammaSpec::Interval { lo: 0.5, hi: 1.0 },
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

    fn zero_policy() -> CoefficientExpr {
        parse_for_slot(Slot::TimeState, "0").unwrap()
    }

    #[test]
    fn martingale_mean() {
        let p = base(|_| {});
        let pol = zero_policy();
        let q = [1.0, 0.5];
        let sc = Scenario {
            problem: &p,
            policy: &pol,
            q_profile: &q,
            seed: 9,
        };
        let est = mc_lower_bound(&sc, 0.3, 4000, 16, None).unwrap();
        assert!((est.mean - 0.3).abs() <= 3.0 * est.stderr + 1e-12, "{est:?}");
    }

    #[test]
    fn reproducible_for_a_seed() {
        let p = base(|s| s.phi = "x^2".into());
        let pol = zero_policy();
        let q = [1.0];
        let sc = Scenario {
            problem: &p,
            policy: &pol,
            q_profile: &q,
            seed: 1234,
        };
        let a = mc_lower_bound(&sc, 0.1, 2000, 8, None).unwrap();
        let b = mc_lower_bound(&sc, 0.1, 2000, 8, None).unwrap();
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        assert_eq!(a.stderr.to_bits(), b.stderr.to_bits());
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = base(|_| {});
        let pol = zero_policy();
        let q = [2.0];
        let sc = Scenario {
            problem: &p,
            policy: &pol,
            q_profile: &q,
            seed: 0,
        };
        assert!(matches!(
            mc_lower_bound(&sc, 0.0, 1000, 4, None),
            Err(Error::VolatilityOutsideGamma(_))
        ));
        let q = [1.0];
        let sc = Scenario { q_profile: &q, ..sc };
        assert!(mc_lower_bound(&sc, 0.0, 10, 4, None).is_err());
    }

    #[test]
    fn moment_scales_with_delta() {
        let p = base(|s| s.sigma = "1 + 0.5*x".into());
        let pol = zero_policy();
        let q = [1.0];
        let sc = Scenario {
            problem: &p,
            policy: &pol,
            q_profile: &q,
            seed: 5,
        };
        let r = moment_scaling(&sc, 0.5, &[4, 8, 16], 4000, 16).unwrap();
        assert!(r.pass, "{r:?}");
    }
}
