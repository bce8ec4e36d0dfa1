//! Independent references for the solvers: closed forms, the short-step ODE,
//! scenario Monte Carlo and regularity estimates.

pub mod f0;
pub mod mc;
pub mod oracle;
pub mod regularity;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{ControlProblem, OracleTag};

pub use f0::{delta32_check, f0_ode_solve, loglog_slope, Delta32Report};
pub use mc::{mc_lower_bound, moment_scaling, McEstimate, Scenario};
pub use oracle::{bs_value, lq_pde_residual, lq_value};
pub use regularity::{regularity_report, regularity_report_on, RegularityReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleMethod {
    BsClosedForm,
    Riccati,
    F0Ode,
    McLower,
    BruteForce,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OraclePoint {
    pub t: f64,
    pub x: f64,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stderr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub name: String,
    pub method: OracleMethod,
    pub points: Vec<OraclePoint>,
}

impl OracleResult {
    pub fn validate(&self) -> Result<()> {
        match self.points.iter().find(|p| !p.value.is_finite()) {
            Some(p) => Err(Error::Domain(format!(
                "oracle `{}` produced a non-finite value at t = {}, x = {}",
                self.name, p.t, p.x
            ))),
            None => Ok(()),
        }
    }
}

/// Closed-form value for a tagged catalog problem. The call tags assume a unit
/// strike; the LQ tag reads the noise level from the (singleton) volatility set.
pub fn closed_form(tag: OracleTag, p: &ControlProblem<f64>, t: f64, x: f64) -> Result<Option<(f64, OracleMethod)>> {
    let tau = p.horizon - t;
    let call = |vol: f64| -> Result<f64> {
        if tau <= 0.0 || x <= 0.0 {
            Ok((x - 1.0).max(0.0))
        } else {
            bs_value(x, 1.0, vol, tau)
        }
    };
    Ok(match tag {
        OracleTag::BsbConvex => Some((call(p.gamma.sigma_hi_sq().sqrt())?, OracleMethod::BsClosedForm)),
        OracleTag::BsbConcave => Some((-call(p.gamma.nondegeneracy_constant().sqrt())?, OracleMethod::BsClosedForm)),
        OracleTag::LqRiccati => Some((
            lq_value(t, x, p.horizon, p.gamma.sigma_hi_sq().sqrt())?,
            OracleMethod::Riccati,
        )),
        OracleTag::None => None,
    })
}
