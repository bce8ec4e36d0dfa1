//! Control problem instances: coefficient expressions, state/control boxes,
//! the uncertainty set, and the built-in benchmark catalog.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{CoefficientExpr, Var, VarSet};
use crate::gexp::{GammaSet, Matrix};
use crate::probe::{lipschitz_probe, LipschitzReport};
use crate::scalar::Scalar;

/// Which coefficient an expression fills; determines the allowed variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Slot {
    Drift,
    QvDrift,
    Vol,
    Driver,
    QvDriver,
    Terminal,
    /// Test functions `φ(t, x)` and feedback policies `u(t, x)`.
    TimeState,
}

impl Slot {
    pub const COEFFICIENTS: [Slot; 6] = [
        Slot::Drift,
        Slot::QvDrift,
        Slot::Vol,
        Slot::Driver,
        Slot::QvDriver,
        Slot::Terminal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Slot::Drift => "b",
            Slot::QvDrift => "h",
            Slot::Vol => "sigma",
            Slot::Driver => "f",
            Slot::QvDriver => "g",
            Slot::Terminal => "phi",
            Slot::TimeState => "test function",
        }
    }

    pub fn allowed(self) -> VarSet {
        match self {
            Slot::Drift | Slot::QvDrift | Slot::Vol => VarSet::of(&[Var::T, Var::X, Var::U]),
            Slot::Driver | Slot::QvDriver => VarSet::of(&[Var::T, Var::X, Var::Y, Var::Z, Var::U]),
            Slot::Terminal => VarSet::of(&[Var::X]),
            Slot::TimeState => VarSet::of(&[Var::T, Var::X]),
        }
    }
}

/// Parses `text` and checks its variables against `slot`.
pub fn parse_for_slot(slot: Slot, text: &str) -> Result<CoefficientExpr> {
    let e = CoefficientExpr::parse(text)?;
    check_slot(slot, &e)?;
    Ok(e)
}

fn check_slot(slot: Slot, e: &CoefficientExpr) -> Result<()> {
    if !e.free_vars().is_subset(slot.allowed()) {
        let bad: Vec<&str> = e
            .free_vars()
            .iter()
            .filter(|v| !slot.allowed().contains(*v))
            .map(Var::name)
            .collect();
        return Err(Error::InvalidProblem(format!(
            "coefficient `{}` = `{e}` uses variable(s) {} not allowed in that slot",
            slot.name(),
            bad.join(", ")
        )));
    }
    Ok(())
}

/// Uncertainty set as written in a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum GammaSpec {
    Interval { lo: f64, hi: f64 },
    Matrices { matrices: Vec<Vec<Vec<f64>>> },
}

impl GammaSpec {
    pub fn build<S: Scalar>(&self) -> Result<GammaSet<S>> {
        match self {
            GammaSpec::Interval { lo, hi } => GammaSet::interval(S::lit(*lo), S::lit(*hi)),
            GammaSpec::Matrices { matrices } => {
                let entries = matrices
                    .iter()
                    .map(|rows| {
                        let rows: Vec<Vec<S>> =
                            rows.iter().map(|r| r.iter().map(|&v| S::lit(v)).collect()).collect();
                        Matrix::from_rows(&rows)
                    })
                    .collect::<Result<Vec<_>>>()?;
                GammaSet::matrices(entries)
            }
        }
    }
}

/// Serializable problem description (the `problem` block of a run config).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    #[serde(default)]
    pub name: String,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub n_u: usize,
    pub gamma: GammaSpec,
    pub b: String,
    pub h: String,
    pub sigma: String,
    pub f: String,
    pub g: String,
    pub phi: String,
}

/// A validated control problem with `n = d = 1`.
#[derive(Debug, Clone)]
pub struct ControlProblem<S> {
    pub name: String,
    pub horizon: S,
    pub x_min: S,
    pub x_max: S,
    pub u_min: S,
    pub u_max: S,
    pub n_u: usize,
    pub gamma: GammaSet<S>,
    pub b: CoefficientExpr,
    pub h: CoefficientExpr,
    pub sigma: CoefficientExpr,
    pub f: CoefficientExpr,
    pub g: CoefficientExpr,
    pub phi: CoefficientExpr,
}

impl<S: Scalar> ControlProblem<S> {
    /// Parses and validates a problem, including the sampled Lipschitz probe.
    pub fn from_spec(spec: &ProblemSpec) -> Result<Self> {
        let p = Self {
            name: spec.name.clone(),
            horizon: S::lit(spec.horizon),
            x_min: S::lit(spec.x_min),
            x_max: S::lit(spec.x_max),
            u_min: S::lit(spec.u_min),
            u_max: S::lit(spec.u_max),
            n_u: spec.n_u,
            gamma: spec.gamma.build()?,
            b: parse_for_slot(Slot::Drift, &spec.b)?,
            h: parse_for_slot(Slot::QvDrift, &spec.h)?,
            sigma: parse_for_slot(Slot::Vol, &spec.sigma)?,
            f: parse_for_slot(Slot::Driver, &spec.f)?,
            g: parse_for_slot(Slot::QvDriver, &spec.g)?,
            phi: parse_for_slot(Slot::Terminal, &spec.phi)?,
        };
        p.validate()?;
        Ok(p)
    }

    /// Structural checks, a domain sweep over the box, and the Lipschitz probe.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.n_u < 1 {
            problems.push("n_u must be at least 1".to_string());
        }
        if !(self.u_min <= self.u_max) {
            problems.push(format!("u_min = {} exceeds u_max = {}", self.u_min, self.u_max));
        }
        if !(self.x_min < self.x_max) {
            problems.push(format!("x_min = {} must be below x_max = {}", self.x_min, self.x_max));
        }
        if !(self.horizon > S::zero()) || !self.horizon.is_finite() {
            problems.push(format!("horizon T = {} must be positive", self.horizon));
        }
        if self.gamma.dim() != 1 {
            problems.push(format!(
                "the solvers are one-dimensional; uncertainty set has d = {}",
                self.gamma.dim()
            ));
        }
        if !problems.is_empty() {
            return Err(Error::InvalidProblem(problems.join("; ")));
        }
        for slot in Slot::COEFFICIENTS {
            check_slot(slot, self.coefficient(slot))?;
        }
        self.domain_sweep()?;
        let report = lipschitz_probe(self, 400, 0x5eed)?;
        report.ensure_pass()?;
        Ok(())
    }

    /// Evaluates every coefficient on a coarse sweep of the box; only domain
    /// errors (log/sqrt of invalid arguments) are fatal here.
    fn domain_sweep(&self) -> Result<()> {
        let n = 17;
        let us = self.control_grid();
        let check = |slot: Slot, pt: [S; 5]| {
            self.coefficient(slot)
                .eval_slots(&pt)
                .map(|_| ())
                .map_err(|source| Error::Eval {
                    slot: slot.name(),
                    source,
                })
        };
        for it in 0..n {
            let t = self.horizon * S::lit(it as f64 / (n - 1) as f64);
            for ix in 0..n {
                let x = self.x_min + (self.x_max - self.x_min) * S::lit(ix as f64 / (n - 1) as f64);
                check(Slot::Terminal, [S::zero(), x, S::zero(), S::zero(), S::zero()])?;
                for &u in &us {
                    for slot in [Slot::Drift, Slot::QvDrift, Slot::Vol] {
                        check(slot, [t, x, u, S::zero(), S::zero()])?;
                    }
                    for y in [-1.0, 0.0, 1.0] {
                        for z in [-1.0, 0.0, 1.0] {
                            let pt = [t, x, u, S::lit(y), S::lit(z)];
                            check(Slot::Driver, pt)?;
                            check(Slot::QvDriver, pt)?;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn coefficient(&self, slot: Slot) -> &CoefficientExpr {
        match slot {
            Slot::Drift => &self.b,
            Slot::QvDrift => &self.h,
            Slot::Vol => &self.sigma,
            Slot::Driver => &self.f,
            Slot::QvDriver => &self.g,
            Slot::Terminal => &self.phi,
            Slot::TimeState => panic!("test functions are not part of the problem"),
        }
    }

    /// The finite control grid `Û`: `n_u` evenly spaced points of `[u_min, u_max]`,
    /// or the midpoint when `n_u = 1`.
    pub fn control_grid(&self) -> Vec<S> {
        control_points(self.u_min, self.u_max, self.n_u)
    }

    /// Evaluates a coefficient slot, mapping failures to errors that name the slot.
    #[inline]
    pub fn eval_slot(&self, slot: Slot, t: S, x: S, y: S, z: S, u: S) -> Result<S> {
        let v = self
            .coefficient(slot)
            .eval_slots(&[t, x, u, y, z])
            .map_err(|source| Error::Eval {
                slot: slot.name(),
                source,
            })?;
        if !v.is_finite() {
            return Err(Error::NonFiniteCoefficient {
                slot: slot.name(),
                t: t.as_f64(),
                x: x.as_f64(),
            });
        }
        Ok(v)
    }

    #[inline]
    pub fn drift(&self, t: S, x: S, u: S) -> Result<S> {
        self.eval_slot(Slot::Drift, t, x, S::zero(), S::zero(), u)
    }

    #[inline]
    pub fn qv_drift(&self, t: S, x: S, u: S) -> Result<S> {
        self.eval_slot(Slot::QvDrift, t, x, S::zero(), S::zero(), u)
    }

    #[inline]
    pub fn vol(&self, t: S, x: S, u: S) -> Result<S> {
        self.eval_slot(Slot::Vol, t, x, S::zero(), S::zero(), u)
    }

    #[inline]
    pub fn driver(&self, t: S, x: S, y: S, z: S, u: S) -> Result<S> {
        self.eval_slot(Slot::Driver, t, x, y, z, u)
    }

    #[inline]
    pub fn qv_driver(&self, t: S, x: S, y: S, z: S, u: S) -> Result<S> {
        self.eval_slot(Slot::QvDriver, t, x, y, z, u)
    }

    #[inline]
    pub fn terminal(&self, x: S) -> Result<S> {
        self.eval_slot(Slot::Terminal, S::zero(), x, S::zero(), S::zero(), S::zero())
    }

    /// Sampled Lipschitz constants of `f` and `g` in `y`, used by the
    /// stability bounds of both solvers.
    pub fn driver_lipschitz(&self) -> Result<DriverLipschitz<S>> {
        let report: LipschitzReport = lipschitz_probe(self, 400, 0x11b)?;
        let get = |slot: Slot, v: Var| S::lit(report.constant(slot, v));
        Ok(DriverLipschitz {
            f_y: get(Slot::Driver, Var::Y),
            f_z: get(Slot::Driver, Var::Z),
            g_y: get(Slot::QvDriver, Var::Y),
            g_z: get(Slot::QvDriver, Var::Z),
        })
    }

    /// Returns a copy with a different control grid resolution.
    pub fn with_n_u(mut self, n_u: usize) -> Self {
        self.n_u = n_u;
        self
    }

    /// Returns a copy with a different uncertainty set.
    pub fn with_gamma(mut self, gamma: GammaSet<S>) -> Self {
        self.gamma = gamma;
        self
    }
}

/// Sampled Lipschitz constants of the drivers in `y` and `z`.
#[derive(Debug, Clone, Copy)]
pub struct DriverLipschitz<S> {
    pub f_y: S,
    pub f_z: S,
    pub g_y: S,
    pub g_z: S,
}

pub fn control_points<S: Scalar>(lo: S, hi: S, n: usize) -> Vec<S> {
    if n <= 1 || lo == hi {
        return vec![(lo + hi) * S::half()];
    }
    (0..n)
        .map(|j| {
            if j == n - 1 {
                hi
            } else {
                lo + (hi - lo) * S::lit(j as f64 / (n - 1) as f64)
            }
        })
        .collect()
}

/// Closed-form oracle attached to a catalog entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleTag {
    BsbConvex,
    BsbConcave,
    LqRiccati,
    None,
}

#[derive(Debug, Clone)]
pub struct ProblemCatalogEntry {
    pub name: &'static str,
    pub spec: ProblemSpec,
    pub oracle: OracleTag,
}

impl ProblemCatalogEntry {
    pub fn problem<S: Scalar>(&self) -> Result<ControlProblem<S>> {
        ControlProblem::from_spec(&self.spec)
    }
}

fn bsb_spec(name: &str, phi: &str, f: &str, g: &str) -> ProblemSpec {
    ProblemSpec {
        name: name.into(),
        horizon: 1.0,
        x_min: 0.01,
        x_max: 4.0,
        u_min: 0.0,
        u_max: 0.0,
        n_u: 1,
        gamma: GammaSpec::Interval { lo: 0.5, hi: 1.0 },
        b: "0".into(),
        h: "0".into(),
        sigma: "x".into(),
        f: f.into(),
        g: g.into(),
        phi: phi.into(),
    }
}

/// Built-in benchmark problems.
pub fn catalog() -> Vec<ProblemCatalogEntry> {
    vec![
        ProblemCatalogEntry {
            name: "bsb-call",
            spec: bsb_spec("bsb-call", "pos(x-1)", "0", "0"),
            oracle: OracleTag::BsbConvex,
        },
        ProblemCatalogEntry {
            name: "bsb-concave",
            spec: bsb_spec("bsb-concave", "-pos(x-1)", "0", "0"),
            oracle: OracleTag::BsbConcave,
        },
        ProblemCatalogEntry {
            name: "lq",
            spec: ProblemSpec {
                name: "lq".into(),
                horizon: 1.0,
                x_min: -2.0,
                x_max: 2.0,
                u_min: -4.0,
                u_max: 4.0,
                n_u: 81,
                gamma: GammaSpec::Interval { lo: 1.0, hi: 1.0 },
                b: "u".into(),
                h: "0".into(),
                sigma: "1".into(),
                f: "u^2".into(),
                g: "0".into(),
                phi: "x^2".into(),
            },
            oracle: OracleTag::LqRiccati,
        },
        ProblemCatalogEntry {
            name: "recursive-g",
            spec: bsb_spec("recursive-g", "pos(x-1)", "-0.1*y", "0.05*z"),
            oracle: OracleTag::None,
        },
    ]
}

pub fn catalog_entry(name: &str) -> Option<ProblemCatalogEntry> {
    catalog().into_iter().find(|e| e.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_contents() {
        let cat = catalog();
        assert!(cat.len() >= 4);
        for e in &cat {
            let p: ControlProblem<f64> = e.problem().unwrap();
            assert_eq!(p.name, e.name);
        }
        let lq: ControlProblem<f64> = catalog_entry("lq").unwrap().problem().unwrap();
        assert_eq!(lq.gamma.scalar_levels(2).unwrap(), vec![1.0]);
        assert_eq!(lq.control_grid().len(), 81);
        assert_eq!(lq.control_grid()[0], -4.0);
        assert_eq!(lq.control_grid()[80], 4.0);
    }

    #[test]
    fn slot_variable_rules() {
        assert!(parse_for_slot(Slot::Drift, "t*x*u").is_ok());
        assert!(parse_for_slot(Slot::Drift, "y").is_err());
        assert!(parse_for_slot(Slot::Driver, "t+x+y+z+u").is_ok());
        assert!(parse_for_slot(Slot::Terminal, "x^2").is_ok());
        assert!(parse_for_slot(Slot::Terminal, "t*x").is_err());
    }

    #[test]
    fn structural_validation_lists_failures() {
        let mut spec = catalog_entry("bsb-call").unwrap().spec;
        spec.x_min = 5.0;
        spec.horizon = -1.0;
        let err = ControlProblem::<f64>::from_spec(&spec).unwrap_err().to_string();
        assert!(err.contains("x_min"), "{err}");
        assert!(err.contains("horizon"), "{err}");
    }

    #[test]
    fn domain_errors_rejected_at_validation() {
        let mut spec = catalog_entry("bsb-call").unwrap().spec;
        spec.sigma = "sqrt(x - 1)".into();
        assert!(matches!(
            ControlProblem::<f64>::from_spec(&spec),
            Err(Error::Eval { slot: "sigma", .. })
        ));
    }

    #[test]
    fn steep_coefficients_fail_the_probe() {
        let mut spec = catalog_entry("bsb-call").unwrap().spec;
        spec.b = "1e5*x".into();
        assert!(matches!(
            ControlProblem::<f64>::from_spec(&spec),
            Err(Error::LipschitzProbe { slot: "b", .. })
        ));
    }

    #[test]
    fn gamma_spec_variants() {
        let g: GammaSpec = GammaSpec::Matrices {
            matrices: vec![vec![vec![0.5]], vec![vec![1.0]]],
        };
        let set: GammaSet<f64> = g.build().unwrap();
        assert_eq!(set.scalar_levels(2).unwrap(), vec![0.5, 1.0]);
    }

    #[test]
    fn control_points_cover_the_interval() {
        assert_eq!(control_points(-1.0, 1.0, 3), vec![-1.0, 0.0, 1.0]);
        assert_eq!(control_points(0.0, 2.0, 1), vec![1.0]);
    }
}
