//! Convergence tables over a list of resolutions.

use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::run::{comparison, oracle_values, solve_at, Session};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub n_x: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub t: f64,
    pub x: f64,
    pub lattice: Option<f64>,
    pub hjb: Option<f64>,
    pub oracle: Option<f64>,
    pub diff_to_oracle_lattice: Option<f64>,
    pub diff_to_oracle_hjb: Option<f64>,
    pub diff_lattice_vs_hjb: Option<f64>,
    /// Exponent `p` in `error ∝ n_x^(−p)` against the previous resolution.
    pub rate_lattice: Option<f64>,
    pub rate_hjb: Option<f64>,
}

fn rate(prev: Option<f64>, next: Option<f64>, n_prev: usize, n: usize) -> Option<f64> {
    let (a, b) = (prev?, next?);
    if a > 0.0 && b > 0.0 {
        Some((a / b).ln() / (n as f64 / n_prev as f64).ln())
    } else {
        None
    }
}

/// One row per (resolution, probe); the lattice takes `K = n_x` steps.
pub fn convergence_rows(s: &Session) -> Result<Vec<ConvergenceRow>, CliError> {
    let mut rows: Vec<ConvergenceRow> = Vec::new();
    let mut oracle = None;
    for (level, &n_x) in s.cfg.solver.n_x_list.iter().enumerate() {
        let solved = solve_at(s, n_x, n_x)?;
        if level == 0 {
            oracle = oracle_values(s, solved.lattice.as_ref().and_then(|r| r.field.as_ref()))?;
        }
        let probes = s.probes.len();
        for c in comparison(s, &solved, oracle.as_ref()) {
            let prev = level.checked_sub(1).map(|_| &rows[rows.len() - probes]);
            rows.push(ConvergenceRow {
                n_x,
                k: n_x,
                t: c.t,
                x: c.x,
                lattice: c.lattice,
                hjb: c.hjb,
                oracle: c.oracle,
                diff_to_oracle_lattice: c.diff_lattice_oracle,
                diff_to_oracle_hjb: c.diff_hjb_oracle,
                diff_lattice_vs_hjb: c.diff_lattice_hjb,
                rate_lattice: prev.and_then(|p| rate(p.diff_to_oracle_lattice, c.diff_lattice_oracle, p.n_x, n_x)),
                rate_hjb: prev.and_then(|p| rate(p.diff_to_oracle_hjb, c.diff_hjb_oracle, p.n_x, n_x)),
            });
        }
    }
    Ok(rows)
}

pub fn table(s: &Session) -> Result<bool, CliError> {
    let start = std::time::Instant::now();
    let rows = convergence_rows(s)?;
    s.out.table("convergence", &rows)?;
    s.out.timing(start.elapsed().as_secs_f64())?;
    Ok(true)
}

#[cfg(test)]
fn read_convergence_csv(text: &str) -> Result<Vec<ConvergenceRow>, CliError> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::config(format!("convergence table: {e}"), vec![]))
}
