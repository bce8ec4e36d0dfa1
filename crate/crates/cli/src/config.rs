//! Run configuration: strict JSON loading and validation.

use std::path::{Path, PathBuf};

use grobust::{catalog_entry, ControlProblem, Problem, ProblemSpec};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// A catalog name or an inline problem definition.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum ProblemBlock {
    Catalog(String),
    Inline(ProblemSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Lattice,
    Hjb,
    Both,
}

impl Method {
    pub fn lattice(self) -> bool {
        matches!(self, Method::Lattice | Method::Both)
    }

    pub fn hjb(self) -> bool {
        matches!(self, Method::Hjb | Method::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverBlock {
    pub method: Method,
    pub n_x: usize,
    /// Lattice steps and stored HJB rows; defaults to `n_x`.
    #[serde(rename = "K", skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// Explicit HJB step; every internal row is kept.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    /// Overrides the problem's control grid size.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_u: Option<usize>,
    pub n_q: usize,
    pub cfl_theta: f64,
    /// Interpolation-free tree of this depth instead of the grid lattice.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tree_depth: Option<usize>,
    /// Resolutions for the `table` subcommand.
    pub n_x_list: Vec<usize>,
}

impl Default for SolverBlock {
    fn default() -> Self {
        Self {
            method: Method::Both,
            n_x: 200,
            k: None,
            dt: None,
            n_u: None,
            n_q: 2,
            cfl_theta: 0.9,
            tree_depth: None,
            n_x_list: vec![100, 200, 400],
        }
    }
}

impl SolverBlock {
    pub fn steps(&self) -> usize {
        self.k.unwrap_or(self.n_x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleChoice {
    /// Closed form when the problem has one, brute force in tree mode.
    Auto,
    ClosedForm,
    BruteForce,
    McLower,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    pub oracle: f64,
    pub agreement: f64,
    pub brute_force: f64,
    /// Per unit of `1 + |x|`.
    pub dpp_residual: f64,
    pub mc_slack: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            oracle: 2e-2,
            agreement: 5e-2,
            brute_force: 1e-10,
            dpp_residual: 5e-3,
            mc_slack: 5e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidateBlock {
    pub oracle: OracleChoice,
    /// `[t, x]` pairs; `--probe` replaces them.
    pub probes: Vec<[f64; 2]>,
    pub tolerances: Tolerances,
}

impl Default for ValidateBlock {
    fn default() -> Self {
        Self {
            oracle: OracleChoice::Auto,
            probes: Vec::new(),
            tolerances: Tolerances::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateBlock {
    pub n_paths: usize,
    pub seed: u64,
    pub steps: usize,
    /// Empty means the largest volatility level throughout.
    pub q_profile: Vec<f64>,
    pub u_policy: String,
}

impl Default for SimulateBlock {
    fn default() -> Self {
        Self {
            n_paths: 10_000,
            seed: 0,
            steps: 100,
            q_profile: Vec::new(),
            u_policy: "0".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputBlock {
    pub dir: PathBuf,
    pub formats: Vec<Format>,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            formats: vec![Format::Csv, Format::Json],
        }
    }
}

impl OutputBlock {
    pub fn csv(&self) -> bool {
        self.formats.contains(&Format::Csv)
    }

    pub fn json(&self) -> bool {
        self.formats.contains(&Format::Json)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub problem: ProblemBlock,
    pub solver: SolverBlock,
    pub validate: ValidateBlock,
    pub simulate: SimulateBlock,
    pub output: OutputBlock,
}

/// Everything but the problem block, which is decoded separately so that
/// errors inside it keep their key path.
#[derive(Deserialize)]
struct RawConfig {
    problem: serde_json::Value,
    #[serde(default)]
    solver: SolverBlock,
    #[serde(default)]
    validate: ValidateBlock,
    #[serde(default)]
    simulate: SimulateBlock,
    #[serde(default)]
    output: OutputBlock,
}

fn decode<T: serde::de::DeserializeOwned>(
    de: &mut serde_json::Deserializer<serde_json::de::StrRead<'_>>,
    prefix: &str,
    unknown: &mut Vec<String>,
) -> Result<T, CliError> {
    let mut record = |path: serde_ignored::Path<'_>| unknown.push(join(prefix, &path.to_string()));
    let ignored = serde_ignored::Deserializer::new(de, &mut record);
    serde_path_to_error::deserialize(ignored).map_err(|e| {
        let at = join(prefix, &e.path().to_string());
        CliError::config(format!("invalid value at `{at}`: {}", e.inner()), vec![at])
    })
}

fn join(prefix: &str, path: &str) -> String {
    match (prefix.is_empty(), path == "." || path.is_empty()) {
        (_, true) => prefix.to_string(),
        (true, false) => path.to_string(),
        (false, false) => format!("{prefix}.{path}"),
    }
}

/// Parses and validates a configuration. With `strict`, unknown keys are
/// errors; otherwise they are returned as warnings.
pub fn load_config_str(text: &str, strict: bool) -> Result<(RunConfig, Vec<String>), CliError> {
    let mut unknown = Vec::new();
    let mut de = serde_json::Deserializer::from_str(text);
    let raw: RawConfig = decode(&mut de, "", &mut unknown)?;
    de.end().map_err(|e| CliError::config(format!("trailing characters: {e}"), vec![]))?;

    let problem = match raw.problem {
        serde_json::Value::String(name) => ProblemBlock::Catalog(name),
        other => {
            let body = other.to_string();
            let mut de = serde_json::Deserializer::from_str(&body);
            ProblemBlock::Inline(decode(&mut de, "problem", &mut unknown)?)
        }
    };
    if strict && !unknown.is_empty() {
        let list = unknown.iter().map(|k| format!("`{k}`")).collect::<Vec<_>>().join(", ");
        return Err(CliError::config(format!("unknown configuration keys: {list}"), unknown));
    }
    let cfg = RunConfig {
        problem,
        solver: raw.solver,
        validate: raw.validate,
        simulate: raw.simulate,
        output: raw.output,
    };
    cfg.validate()?;
    Ok((cfg, unknown))
}

pub fn load_config(path: &Path, strict: bool) -> Result<(RunConfig, Vec<String>), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    load_config_str(&text, strict)
}

impl RunConfig {
    /// Checks every field and reports all failures at once.
    pub fn validate(&self) -> Result<(), CliError> {
        let mut bad: Vec<(String, String)> = Vec::new();
        let mut fail = |key: &str, why: String| bad.push((key.to_string(), why));

        if let Err(e) = self.build_problem() {
            fail("problem", e.to_string());
        }
        let s = &self.solver;
        if s.n_x < 3 {
            fail("solver.n_x", format!("must be at least 3, got {}", s.n_x));
        }
        if s.k == Some(0) {
            fail("solver.K", "must be positive".into());
        }
        if let Some(dt) = s.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                fail("solver.dt", format!("must be positive, got {dt}"));
            }
        }
        if s.n_u == Some(0) {
            fail("solver.n_u", "must be positive".into());
        }
        if s.n_q < 2 {
            fail("solver.n_q", format!("must be at least 2, got {}", s.n_q));
        }
        if !(s.cfl_theta > 0.0 && s.cfl_theta <= 1.0) {
            fail("solver.cfl_theta", format!("must lie in (0, 1], got {}", s.cfl_theta));
        }
        if s.tree_depth == Some(0) {
            fail("solver.tree_depth", "must be positive".into());
        }
        if s.tree_depth.is_some() && s.method != Method::Lattice {
            fail("solver.tree_depth", "tree mode needs method `lattice`".into());
        }
        if s.n_x_list.is_empty() || s.n_x_list.iter().any(|&n| n < 3) {
            fail("solver.n_x_list", "needs one or more resolutions, each at least 3".into());
        }
        let v = &self.validate;
        for (i, [t, x]) in v.probes.iter().enumerate() {
            if !(t.is_finite() && x.is_finite()) {
                fail(&format!("validate.probes[{i}]"), "must be finite".into());
            }
        }
        let tol = &v.tolerances;
        for (key, value) in [
            ("oracle", tol.oracle),
            ("agreement", tol.agreement),
            ("brute_force", tol.brute_force),
            ("dpp_residual", tol.dpp_residual),
            ("mc_slack", tol.mc_slack),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                fail(&format!("validate.tolerances.{key}"), format!("must be positive, got {value}"));
            }
        }
        let m = &self.simulate;
        if m.n_paths < grobust::analysis::mc::MIN_PATHS {
            fail(
                "simulate.n_paths",
                format!("must be at least {}, got {}", grobust::analysis::mc::MIN_PATHS, m.n_paths),
            );
        }
        if m.steps == 0 {
            fail("simulate.steps", "must be positive".into());
        }
        if let Err(e) = grobust::problem::parse_for_slot(grobust::problem::Slot::TimeState, &m.u_policy) {
            fail("simulate.u_policy", e.to_string());
        }
        if let Ok(p) = self.build_problem() {
            if let Some(q) = m.q_profile.iter().find(|q| !p.gamma.contains_level(**q)) {
                fail("simulate.q_profile", format!("level {q} lies outside the volatility set"));
            }
        }
        if self.output.formats.is_empty() {
            fail("output.formats", "must name at least one format".into());
        }

        if bad.is_empty() {
            return Ok(());
        }
        let message = bad.iter().map(|(k, why)| format!("{k}: {why}")).collect::<Vec<_>>().join("; ");
        Err(CliError::config(
            format!("invalid configuration: {message}"),
            bad.into_iter().map(|(k, _)| k).collect(),
        ))
    }

    pub fn problem_spec(&self) -> Result<ProblemSpec, CliError> {
        match &self.problem {
            ProblemBlock::Catalog(name) => catalog_entry(name)
                .map(|e| e.spec)
                .ok_or_else(|| CliError::config(format!("unknown catalog problem `{name}`"), vec!["problem".into()])),
            ProblemBlock::Inline(spec) => Ok(spec.clone()),
        }
    }

    pub fn problem_name(&self) -> String {
        match &self.problem {
            ProblemBlock::Catalog(name) => name.clone(),
            ProblemBlock::Inline(spec) if !spec.name.is_empty() => spec.name.clone(),
            ProblemBlock::Inline(_) => "inline".into(),
        }
    }

    /// The validated problem with the solver's control-grid override applied.
    pub fn build_problem(&self) -> Result<Problem, CliError> {
        let p: Problem = ControlProblem::from_spec(&self.problem_spec()?)?;
        Ok(match self.solver.n_u {
            Some(n) => p.with_n_u(n),
            None => p,
        })
    }
}
