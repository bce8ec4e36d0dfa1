//! Sampling probes that try to falsify the regularity assumptions on the
//! coefficients: Lipschitz continuity in `(x, u, y, z)` and continuity in `t`.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::Var;
use crate::problem::{ControlProblem, Slot};
use crate::scalar::Scalar;

pub const DEFAULT_LIPSCHITZ_CEILING: f64 = 1e3;
pub const DEFAULT_CONTINUITY_CEILING: f64 = 1e3;

/// Half-width of the box sampled for the BSDE arguments `y` and `z`.
const YZ_RANGE: f64 = 5.0;

#[derive(Debug, Clone, Serialize)]
pub struct LipschitzEntry {
    pub slot: &'static str,
    pub var: &'static str,
    pub constant: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LipschitzReport {
    pub entries: Vec<LipschitzEntry>,
    pub ceiling: f64,
    pub pass: bool,
}

impl LipschitzReport {
    /// Estimated constant of `slot` in `var` (0 when not probed).
    pub fn constant(&self, slot: Slot, var: Var) -> f64 {
        self.entries
            .iter()
            .find(|e| e.slot == slot.name() && e.var == var.name())
            .map_or(0.0, |e| e.constant)
    }

    /// Largest constant over all variables of one coefficient.
    pub fn slot_constant(&self, slot: Slot) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.slot == slot.name())
            .map(|e| e.constant)
            .fold(0.0, f64::max)
    }

    pub fn ensure_pass(&self) -> Result<()> {
        if self.pass {
            return Ok(());
        }
        let worst = self
            .entries
            .iter()
            .filter(|e| !(e.constant <= self.ceiling))
            .max_by(|a, b| a.constant.partial_cmp(&b.constant).unwrap_or(std::cmp::Ordering::Greater))
            .expect("a failing report has a failing entry");
        Err(Error::LipschitzProbe {
            slot: worst.slot,
            constant: worst.constant,
            ceiling: self.ceiling,
        })
    }
}

fn probed_vars(slot: Slot) -> &'static [Var] {
    match slot {
        Slot::Drift | Slot::QvDrift | Slot::Vol => &[Var::X, Var::U],
        Slot::Driver | Slot::QvDriver => &[Var::X, Var::U, Var::Y, Var::Z],
        Slot::Terminal => &[Var::X],
        Slot::TimeState => &[Var::X],
    }
}

struct Sampler<'a, S> {
    p: &'a ControlProblem<S>,
    rng: ChaCha8Rng,
}

impl<S: Scalar> Sampler<'_, S> {
    fn range(&self, v: Var) -> (f64, f64) {
        match v {
            Var::T => (0.0, self.p.horizon.as_f64()),
            Var::X => (self.p.x_min.as_f64(), self.p.x_max.as_f64()),
            Var::U => (self.p.u_min.as_f64(), self.p.u_max.as_f64()),
            Var::Y | Var::Z => (-YZ_RANGE, YZ_RANGE),
        }
    }

    fn draw(&mut self, v: Var) -> f64 {
        let (lo, hi) = self.range(v);
        if lo == hi {
            lo
        } else {
            self.rng.random_range(lo..=hi)
        }
    }

    fn point(&mut self) -> [f64; 5] {
        let mut pt = [0.0; 5];
        for v in Var::ALL {
            pt[v.index()] = self.draw(v);
        }
        pt
    }
}

fn eval_at<S: Scalar>(p: &ControlProblem<S>, slot: Slot, pt: &[f64; 5]) -> Result<f64> {
    let s = pt.map(S::lit);
    p.coefficient(slot)
        .eval_slots(&s)
        .map(Scalar::as_f64)
        .map_err(|source| Error::Eval {
            slot: slot.name(),
            source,
        })
}

/// Largest difference quotient of each coefficient in each of its Lipschitz
/// variables, over `n_samples` random pairs per (coefficient, variable).
pub fn lipschitz_probe<S: Scalar>(p: &ControlProblem<S>, n_samples: usize, seed: u64) -> Result<LipschitzReport> {
    lipschitz_probe_with_ceiling(p, n_samples, seed, DEFAULT_LIPSCHITZ_CEILING)
}

pub fn lipschitz_probe_with_ceiling<S: Scalar>(
    p: &ControlProblem<S>,
    n_samples: usize,
    seed: u64,
    ceiling: f64,
) -> Result<LipschitzReport> {
    if n_samples < 100 {
        return Err(Error::Config(format!("lipschitz_probe needs at least 100 samples, got {n_samples}")));
    }
    let mut sampler = Sampler {
        p,
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let mut entries = Vec::new();
    let mut pass = true;
    for slot in Slot::COEFFICIENTS {
        for &var in probed_vars(slot) {
            let mut constant: f64 = 0.0;
            if p.coefficient(slot).depends_on(var) {
                for _ in 0..n_samples {
                    let a = sampler.point();
                    let mut b = a;
                    b[var.index()] = sampler.draw(var);
                    let dv = (a[var.index()] - b[var.index()]).abs();
                    if dv == 0.0 {
                        continue;
                    }
                    let fa = eval_at(p, slot, &a)?;
                    let fb = eval_at(p, slot, &b)?;
                    let q = (fa - fb).abs() / dv;
                    if !q.is_finite() {
                        constant = f64::INFINITY;
                        break;
                    }
                    constant = constant.max(q);
                }
            }
            if !(constant <= ceiling) {
                pass = false;
            }
            entries.push(LipschitzEntry {
                slot: slot.name(),
                var: var.name(),
                constant,
            });
        }
    }
    Ok(LipschitzReport { entries, ceiling, pass })
}

#[derive(Debug, Clone, Serialize)]
pub struct ContinuityEntry {
    pub slot: &'static str,
    /// `max |c(t₁) − c(t₂)| / |t₁ − t₂|^{1/4}` over the sampled pairs.
    pub modulus: f64,
    pub pass: bool,
    /// First offending pair, if any.
    pub flagged: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ContinuityReport {
    pub entries: Vec<ContinuityEntry>,
    pub ceiling: f64,
    pub pass: bool,
}

impl ContinuityReport {
    pub fn entry(&self, slot: Slot) -> Option<&ContinuityEntry> {
        self.entries.iter().find(|e| e.slot == slot.name())
    }
}

/// Advisory check of continuity in `t`: `n_samples`-point jittered sweeps over
/// `[0, T]` at a few fixed `(x, u, y, z)` flag jumps larger than `ceiling·|Δt|^{1/4}`.
/// Never fails hard; evaluation errors count as flagged jumps.
pub fn continuity_in_t_probe<S: Scalar>(p: &ControlProblem<S>, n_samples: usize, seed: u64) -> ContinuityReport {
    let ceiling = DEFAULT_CONTINUITY_CEILING;
    let mut sampler = Sampler {
        p,
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let tuples = 8;
    let per = n_samples.max(16);
    let horizon = p.horizon.as_f64();
    let mut entries = Vec::new();
    for slot in [Slot::Drift, Slot::QvDrift, Slot::Vol, Slot::Driver, Slot::QvDriver] {
        let mut modulus: f64 = 0.0;
        let mut flagged = None;
        if p.coefficient(slot).depends_on(Var::T) {
            'tuples: for _ in 0..tuples {
                let base = sampler.point();
                let times: Vec<f64> = (0..per)
                    .map(|j| (j as f64 + sampler.rng.random_range(0.0..1.0)) / per as f64 * horizon)
                    .collect();
                let mut prev: Option<(f64, f64)> = None;
                for &t in &times {
                    let mut pt = base;
                    pt[Var::T.index()] = t;
                    let val = eval_at(p, slot, &pt).unwrap_or(f64::NAN);
                    if !val.is_finite() {
                        modulus = f64::INFINITY;
                        flagged.get_or_insert((prev.map_or(t, |p| p.0), t));
                        break 'tuples;
                    }
                    if let Some((pt_prev, pv)) = prev {
                        let m = (val - pv).abs() / (t - pt_prev).abs().powf(0.25);
                        if m > ceiling && flagged.is_none() {
                            flagged = Some((pt_prev, t));
                        }
                        modulus = modulus.max(m);
                    }
                    prev = Some((t, val));
                }
            }
        }
        entries.push(ContinuityEntry {
            slot: slot.name(),
            modulus,
            pass: modulus <= ceiling,
            flagged,
        });
    }
    let pass = entries.iter().all(|e| e.pass);
    ContinuityReport { entries, ceiling, pass }
}
