//! Subcommand implementations.

use std::path::PathBuf;
use std::time::Instant;

use grobust::analysis::mc::{mc_lower_bound, Scenario};
use grobust::analysis::regularity::{regularity_report_on, RegularityReport};
use grobust::analysis::{closed_form, OracleMethod, OraclePoint, OracleResult};
use grobust::expr::Var;
use grobust::hjb::SchemeParams;
use grobust::lattice::{dpp_residual_profile, LatticeOptions};
use grobust::problem::{catalog_entry, control_points, parse_for_slot, OracleTag, Slot};
use grobust::tree::brute_force_value_with;
use grobust::{dpp_residual, hjb_residual, solve_dpp, solve_dpp_tree, solve_hjb, Field, Grid, Problem};
use serde::{Deserialize, Serialize};

use crate::config::{OracleChoice, ProblemBlock, RunConfig};
use crate::error::CliError;
use crate::output::Artifacts;

pub struct Session {
    pub cfg: RunConfig,
    pub name: String,
    pub problem: Problem,
    pub probes: Vec<(f64, f64)>,
    pub out: Artifacts,
}

impl Session {
    pub fn new(cfg: RunConfig, probes: Vec<(f64, f64)>, out: Option<PathBuf>) -> Result<Self, CliError> {
        let problem = cfg.build_problem()?;
        let probes = if !probes.is_empty() {
            probes
        } else if !cfg.validate.probes.is_empty() {
            cfg.validate.probes.iter().map(|[t, x]| (*t, *x)).collect()
        } else {
            let x = if (problem.x_min..=problem.x_max).contains(&1.0) {
                1.0
            } else {
                0.5 * (problem.x_min + problem.x_max)
            };
            vec![(0.0, x)]
        };
        for &(t, x) in &probes {
            if !(0.0..=problem.horizon).contains(&t) || !(problem.x_min..=problem.x_max).contains(&x) {
                return Err(CliError::config(
                    format!("probe ({t}, {x}) lies outside [0, {}] × [{}, {}]", problem.horizon, problem.x_min, problem.x_max),
                    vec!["validate.probes".into()],
                ));
            }
        }
        let out = Artifacts::new(out.unwrap_or_else(|| cfg.output.dir.clone()), cfg.output.clone());
        Ok(Self {
            name: cfg.problem_name(),
            cfg,
            problem,
            probes,
            out,
        })
    }

    fn require_initial_time(&self, what: &str) -> Result<(), CliError> {
        if self.probes.iter().any(|&(t, _)| t != 0.0) {
            return Err(CliError::config(format!("{what} evaluates at t = 0 only"), vec!["validate.probes".into()]));
        }
        Ok(())
    }

    fn levels(&self) -> Result<Vec<f64>, CliError> {
        Ok(self.problem.gamma.scalar_levels(self.cfg.solver.n_q)?)
    }
}

pub struct LatticeRun {
    /// Absent in tree mode.
    pub field: Option<Field>,
    pub dt: f64,
    pub values: Vec<f64>,
}

pub struct HjbRun {
    pub field: Field,
    pub params: SchemeParams<f64>,
    pub values: Vec<f64>,
}

pub struct Solved {
    pub n_x: usize,
    pub k: usize,
    pub lattice: Option<LatticeRun>,
    pub hjb: Option<HjbRun>,
}

fn at_probes(field: &Field, probes: &[(f64, f64)]) -> Vec<f64> {
    probes.iter().map(|&(t, x)| field.value_at(t, x)).collect()
}

/// Runs the configured solvers at resolution `n_x` with `k` lattice steps.
pub fn solve_at(s: &Session, n_x: usize, k: usize) -> Result<Solved, CliError> {
    let p = &s.problem;
    let sc = &s.cfg.solver;
    let grid = Grid::new(p.x_min, p.x_max, n_x)?;
    let lattice = if !sc.method.lattice() {
        None
    } else if let Some(depth) = sc.tree_depth {
        s.require_initial_time("tree mode")?;
        let controls = control_points(p.u_min, p.u_max, p.n_u);
        let levels = s.levels()?;
        let values = s
            .probes
            .iter()
            .map(|&(_, x)| solve_dpp_tree(p, x, depth, &controls, &levels))
            .collect::<grobust::Result<Vec<_>>>()?;
        Some(LatticeRun {
            field: None,
            dt: p.horizon / depth as f64,
            values,
        })
    } else {
        let opts = LatticeOptions {
            n_q: sc.n_q,
            ..LatticeOptions::default()
        };
        let field = solve_dpp(p, &grid, k, &opts)?;
        Some(LatticeRun {
            values: at_probes(&field, &s.probes),
            dt: field.dt(),
            field: Some(field),
        })
    };
    let hjb = if sc.method.hjb() {
        let params = match sc.dt {
            Some(dt) => SchemeParams::with_steps(p, &grid, (p.horizon / dt).round().max(1.0) as usize)?,
            None => SchemeParams::from_cfl(p, &grid, sc.cfl_theta, Some(k))?,
        };
        let field = solve_hjb(p, &params)?;
        Some(HjbRun {
            values: at_probes(&field, &s.probes),
            field,
            params,
        })
    } else {
        None
    };
    Ok(Solved { n_x, k, lattice, hjb })
}

fn oracle_tag(s: &Session) -> OracleTag {
    match &s.cfg.problem {
        ProblemBlock::Catalog(name) => catalog_entry(name).map_or(OracleTag::None, |e| e.oracle),
        ProblemBlock::Inline(_) => OracleTag::None,
    }
}

fn z_dependent(p: &Problem) -> bool {
    [Slot::Driver, Slot::QvDriver].iter().any(|&slot| p.coefficient(slot).depends_on(Var::Z))
}

/// Oracle values at the probe points, or `None` when none is configured or
/// available under `auto`.
pub fn oracle_values(s: &Session, lattice: Option<&Field>) -> Result<Option<OracleResult>, CliError> {
    let choice = match s.cfg.validate.oracle {
        OracleChoice::Auto if s.cfg.solver.tree_depth.is_some() => OracleChoice::BruteForce,
        OracleChoice::Auto if oracle_tag(s) != OracleTag::None => OracleChoice::ClosedForm,
        OracleChoice::Auto => OracleChoice::None,
        other => other,
    };
    let p = &s.problem;
    let (method, points) = match choice {
        OracleChoice::None | OracleChoice::Auto => return Ok(None),
        OracleChoice::ClosedForm => {
            let tag = oracle_tag(s);
            let mut method = OracleMethod::BsClosedForm;
            let mut points = Vec::new();
            for &(t, x) in &s.probes {
                let (value, m) = closed_form(tag, p, t, x)?.ok_or_else(|| {
                    CliError::config(
                        format!("problem `{}` has no closed-form oracle", s.name),
                        vec!["validate.oracle".into()],
                    )
                })?;
                method = m;
                points.push(OraclePoint { t, x, value, stderr: None });
            }
            (method, points)
        }
        OracleChoice::BruteForce => {
            let depth = s.cfg.solver.tree_depth.ok_or_else(|| {
                CliError::config("the brute-force oracle needs solver.tree_depth".into(), vec!["validate.oracle".into()])
            })?;
            s.require_initial_time("the brute-force oracle")?;
            let levels = s.levels()?;
            let points = s
                .probes
                .iter()
                .map(|&(t, x)| {
                    let value = brute_force_value_with(p, x, depth, p.n_u, &levels)?;
                    Ok(OraclePoint { t, x, value, stderr: None })
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            (OracleMethod::BruteForce, points)
        }
        OracleChoice::McLower => {
            s.require_initial_time("the Monte Carlo oracle")?;
            let points = s
                .probes
                .iter()
                .map(|&(t, x)| {
                    let est = simulate_one(s, x, lattice)?;
                    Ok(OraclePoint {
                        t,
                        x,
                        value: est.mean,
                        stderr: Some(est.stderr),
                    })
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            (OracleMethod::McLower, points)
        }
    };
    let result = OracleResult {
        name: s.name.clone(),
        method,
        points,
    };
    result.validate()?;
    Ok(Some(result))
}

fn q_profile(s: &Session) -> Result<Vec<f64>, CliError> {
    Ok(if s.cfg.simulate.q_profile.is_empty() {
        vec![*s.levels()?.last().expect("at least two levels")]
    } else {
        s.cfg.simulate.q_profile.clone()
    })
}

fn simulate_one(
    s: &Session,
    x0: f64,
    z_field: Option<&Field>,
) -> Result<grobust::analysis::McEstimate, CliError> {
    let m = &s.cfg.simulate;
    let policy = parse_for_slot(Slot::TimeState, &m.u_policy)?;
    let q = q_profile(s)?;
    let sc = Scenario {
        problem: &s.problem,
        policy: &policy,
        q_profile: &q,
        seed: m.seed,
    };
    Ok(mc_lower_bound(&sc, x0, m.n_paths, m.steps, z_field)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub t: f64,
    pub x: f64,
    pub lattice: Option<f64>,
    pub hjb: Option<f64>,
    pub oracle: Option<f64>,
    pub oracle_stderr: Option<f64>,
    pub diff_lattice_hjb: Option<f64>,
    pub diff_lattice_oracle: Option<f64>,
    pub diff_hjb_oracle: Option<f64>,
}

fn diff(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some((a? - b?).abs())
}

pub fn comparison(s: &Session, solved: &Solved, oracle: Option<&OracleResult>) -> Vec<ComparisonRow> {
    s.probes
        .iter()
        .enumerate()
        .map(|(j, &(t, x))| {
            let lattice = solved.lattice.as_ref().map(|r| r.values[j]);
            let hjb = solved.hjb.as_ref().map(|r| r.values[j]);
            let point = oracle.map(|o| &o.points[j]);
            let value = point.map(|p| p.value);
            ComparisonRow {
                t,
                x,
                lattice,
                hjb,
                oracle: value,
                oracle_stderr: point.and_then(|p| p.stderr),
                diff_lattice_hjb: diff(lattice, hjb),
                diff_lattice_oracle: diff(lattice, value),
                diff_hjb_oracle: diff(hjb, value),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    fn at_most(name: String, value: f64, tolerance: f64) -> Self {
        Self {
            name,
            value,
            tolerance,
            pass: value <= tolerance,
        }
    }
}

/// Tolerance checks on the comparison table.
pub fn comparison_checks(s: &Session, rows: &[ComparisonRow], oracle: Option<&OracleResult>) -> Vec<Check> {
    let tol = &s.cfg.validate.tolerances;
    let method = oracle.map(|o| o.method);
    let mut checks = Vec::new();
    for r in rows {
        let at = format!("({}, {})", r.t, r.x);
        if let Some(d) = r.diff_lattice_hjb {
            checks.push(Check::at_most(format!("agreement {at}"), d, tol.agreement));
        }
        for (solver, value, d) in [("lattice", r.lattice, r.diff_lattice_oracle), ("hjb", r.hjb, r.diff_hjb_oracle)] {
            let (Some(value), Some(d)) = (value, d) else { continue };
            match method {
                Some(OracleMethod::McLower) => {
                    // A scenario mean only bounds the robust value from below.
                    let lower = r.oracle.unwrap() - 3.0 * r.oracle_stderr.unwrap_or(0.0);
                    checks.push(Check::at_most(format!("{solver} above mc lower bound {at}"), lower - value, tol.mc_slack));
                }
                Some(OracleMethod::BruteForce) => {
                    checks.push(Check::at_most(format!("{solver} vs brute force {at}"), d, tol.brute_force));
                }
                _ => checks.push(Check::at_most(format!("{solver} vs oracle {at}"), d, tol.oracle)),
            }
        }
    }
    checks
}

#[derive(Serialize)]
struct ProbeValue {
    t: f64,
    x: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    lattice: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    hjb: Option<f64>,
}

#[derive(Serialize)]
struct Summary<'a> {
    problem: &'a str,
    method: crate::config::Method,
    n_x: usize,
    #[serde(rename = "K")]
    k: usize,
    n_u: usize,
    n_q: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    tree_depth: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lattice_dt: Option<f64>,
    /// Internal HJB step.
    #[serde(skip_serializing_if = "Option::is_none")]
    dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cfl_bound: Option<f64>,
    #[serde(rename = "V_at_probe_points")]
    values: Vec<ProbeValue>,
    checks: &'a [Check],
    pass: bool,
}

fn write_fields(s: &Session, solved: &Solved) -> Result<(), CliError> {
    if let Some(f) = solved.lattice.as_ref().and_then(|r| r.field.as_ref()) {
        s.out.csv(&format!("{}_lattice.csv", s.name), &f.to_csv())?;
    }
    if let Some(h) = &solved.hjb {
        s.out.csv(&format!("{}_hjb.csv", s.name), &h.field.to_csv())?;
    }
    Ok(())
}

fn write_summary(s: &Session, solved: &Solved, checks: &[Check]) -> Result<bool, CliError> {
    let pass = checks.iter().all(|c| c.pass);
    let summary = Summary {
        problem: &s.name,
        method: s.cfg.solver.method,
        n_x: solved.n_x,
        k: solved.k,
        n_u: s.problem.n_u,
        n_q: s.cfg.solver.n_q,
        tree_depth: s.cfg.solver.tree_depth,
        lattice_dt: solved.lattice.as_ref().map(|r| r.dt),
        dt: solved.hjb.as_ref().map(|h| h.params.dt),
        cfl_bound: solved.hjb.as_ref().map(|h| h.params.cfl_bound),
        values: s
            .probes
            .iter()
            .enumerate()
            .map(|(j, &(t, x))| ProbeValue {
                t,
                x,
                lattice: solved.lattice.as_ref().map(|r| r.values[j]),
                hjb: solved.hjb.as_ref().map(|r| r.values[j]),
            })
            .collect(),
        checks,
        pass,
    };
    s.out.json("summary.json", &summary)?;
    Ok(pass)
}

/// `solve`: fields, summary and comparison table. Returns whether every
/// tolerance check passed.
pub fn solve(s: &Session) -> Result<bool, CliError> {
    let start = Instant::now();
    let solved = solve_at(s, s.cfg.solver.n_x, s.cfg.solver.steps())?;
    let oracle = oracle_values(s, solved.lattice.as_ref().and_then(|r| r.field.as_ref()))?;
    let rows = comparison(s, &solved, oracle.as_ref());
    let checks = comparison_checks(s, &rows, oracle.as_ref());
    write_fields(s, &solved)?;
    s.out.table("comparison", &rows)?;
    let pass = write_summary(s, &solved, &checks)?;
    s.out.timing(start.elapsed().as_secs_f64())?;
    Ok(pass)
}

/// `oracle`: reference values at the probes.
pub fn oracle(s: &Session) -> Result<bool, CliError> {
    let start = Instant::now();
    let lattice = if s.cfg.validate.oracle == OracleChoice::McLower && z_dependent(&s.problem) {
        solve_at(s, s.cfg.solver.n_x, s.cfg.solver.steps())?.lattice.and_then(|r| r.field)
    } else {
        None
    };
    let result = oracle_values(s, lattice.as_ref())?.ok_or_else(|| {
        CliError::config(
            format!("no oracle is available for `{}`; choose one in validate.oracle", s.name),
            vec!["validate.oracle".into()],
        )
    })?;
    s.out.json("oracle.json", &result)?;
    s.out.csv("oracle.csv", &crate::output::to_csv(&result.points))?;
    s.out.timing(start.elapsed().as_secs_f64())?;
    Ok(true)
}

#[derive(Serialize)]
struct Validation<'a> {
    problem: &'a str,
    checks: Vec<Check>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lattice_regularity: Option<RegularityReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    hjb_regularity: Option<RegularityReport>,
    /// Only when every HJB step is stored.
    #[serde(skip_serializing_if = "Option::is_none")]
    hjb_residual: Option<f64>,
    pass: bool,
}

/// Largest one-step DPP residual of `v` over the interior two-thirds, per unit of `1 + |x|`.
fn scaled_dpp_residual(v: &Field, p: &Problem, n_q: usize) -> Result<f64, CliError> {
    let g = *v.grid();
    let mut worst: f64 = 0.0;
    for k in 0..v.steps() {
        let prof = dpp_residual_profile(v, p, k, k + 1, n_q)?;
        for i in g.interior_two_thirds() {
            worst = worst.max(prof[i] / (1.0 + g.node(i).abs()));
        }
    }
    Ok(worst)
}

/// `validate`: everything `solve` does plus DPP residuals and regularity.
pub fn validate(s: &Session) -> Result<bool, CliError> {
    let start = Instant::now();
    let n_q = s.cfg.solver.n_q;
    let solved = solve_at(s, s.cfg.solver.n_x, s.cfg.solver.steps())?;
    let lattice_field = solved.lattice.as_ref().and_then(|r| r.field.as_ref());
    let oracle = oracle_values(s, lattice_field)?;
    let rows = comparison(s, &solved, oracle.as_ref());
    let mut checks = comparison_checks(s, &rows, oracle.as_ref());

    let mut lattice_regularity = None;
    if let Some(v) = lattice_field {
        let worst = (0..v.steps())
            .map(|k| dpp_residual(v, &s.problem, k, k + 1, n_q))
            .try_fold(0.0f64, |acc, r| r.map(|r| acc.max(r)))?;
        checks.push(Check {
            name: "lattice dpp residual".into(),
            value: worst,
            tolerance: 0.0,
            pass: worst == 0.0,
        });
        lattice_regularity = Some(regularity_report_on(v, v.grid().interior_two_thirds()));
    }
    let mut hjb_regularity = None;
    let mut residual = None;
    if let Some(h) = &solved.hjb {
        let worst = scaled_dpp_residual(&h.field, &s.problem, n_q)?;
        checks.push(Check::at_most("hjb dpp residual".into(), worst, s.cfg.validate.tolerances.dpp_residual));
        hjb_regularity = Some(regularity_report_on(&h.field, h.field.grid().interior_two_thirds()));
        if h.params.out_every == 1 {
            residual = Some(hjb_residual(&h.field, &s.problem)?);
        }
    }
    write_fields(s, &solved)?;
    s.out.table("comparison", &rows)?;
    let pass = checks.iter().all(|c| c.pass);
    s.out.json(
        "validation.json",
        &Validation {
            problem: &s.name,
            checks,
            lattice_regularity,
            hjb_regularity,
            hjb_residual: residual,
            pass,
        },
    )?;
    s.out.timing(start.elapsed().as_secs_f64())?;
    Ok(pass)
}

#[derive(Serialize)]
struct SimulationPoint {
    x: f64,
    mean: f64,
    stderr: f64,
    half_width: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    lattice: Option<f64>,
}

#[derive(Serialize)]
struct Simulation<'a> {
    problem: &'a str,
    n_paths: usize,
    steps: usize,
    seed: u64,
    q_profile: Vec<f64>,
    u_policy: &'a str,
    estimates: Vec<SimulationPoint>,
    checks: &'a [Check],
    pass: bool,
}

/// `simulate`: scenario Monte Carlo at the probes, checked against the
/// lattice value when the lattice is enabled.
pub fn simulate(s: &Session) -> Result<bool, CliError> {
    let start = Instant::now();
    s.require_initial_time("simulate")?;
    let lattice = if s.cfg.solver.method.lattice() && s.cfg.solver.tree_depth.is_none() {
        solve_at(s, s.cfg.solver.n_x, s.cfg.solver.steps())?.lattice.and_then(|r| r.field)
    } else {
        None
    };
    let z_field = lattice.as_ref().filter(|_| z_dependent(&s.problem));
    let mut estimates = Vec::new();
    let mut checks = Vec::new();
    for &(_, x) in &s.probes {
        let est = simulate_one(s, x, z_field)?;
        let value = lattice.as_ref().map(|v| v.value_at(0.0, x));
        if let Some(v) = value {
            checks.push(Check::at_most(
                format!("mc lower bound below lattice (0, {x})"),
                est.mean - 3.0 * est.stderr - v,
                s.cfg.validate.tolerances.mc_slack,
            ));
        }
        estimates.push(SimulationPoint {
            x,
            mean: est.mean,
            stderr: est.stderr,
            half_width: est.half_width,
            lattice: value,
        });
    }
    let pass = checks.iter().all(|c| c.pass);
    s.out.json(
        "simulation.json",
        &Simulation {
            problem: &s.name,
            n_paths: s.cfg.simulate.n_paths,
            steps: s.cfg.simulate.steps,
            seed: s.cfg.simulate.seed,
            q_profile: q_profile(s)?,
            u_policy: &s.cfg.simulate.u_policy,
            estimates,
            checks: &checks,
            pass,
        },
    )?;
    s.out.timing(start.elapsed().as_secs_f64())?;
    Ok(pass)
}
