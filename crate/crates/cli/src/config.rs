//! Problem files: one JSON document with expressions as strings.

use hopfwave_core::eigen::{CertifyOptions, SearchOptions, Tolerances};
use hopfwave_core::exprlang::parse;
use hopfwave_core::model::{Nonlinearity, ProblemSpec};
use hopfwave_core::periodic::SolverOptions;
use hopfwave_core::timedomain::SimOptions;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("malformed problem file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("give exactly one of \"b\" and \"beta\"")]
    NonlinearityChoice,
    #[error("expression {field}: {message}")]
    Expression { field: String, message: String },
    #[error("invalid problem: {0}")]
    Model(#[from] hopfwave_core::model::ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    /// Wave speed a(x, λ).
    pub a: String,
    /// Joint nonlinearity b(x, λ, u1, u2, u3, u4).
    #[serde(default)]
    pub b: Option<String>,
    /// Separable form: beta[j] may use x, lambda and u(j+1) only.
    #[serde(default)]
    pub beta: Option<[String; 4]>,
    #[serde(default)]
    pub lambda: f64,
    pub tau_guess: f64,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub simulation: SimulationSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    /// Highest harmonic of the periodic solver.
    #[serde(rename = "N")]
    pub n: usize,
    /// Grid cells of the periodic solver.
    #[serde(rename = "M")]
    pub m: usize,
    /// Grid cells of the certificate.
    #[serde(rename = "M_cert")]
    pub m_cert: usize,
    #[serde(rename = "K_max")]
    pub k_max: usize,
    pub eps_grid: Vec<f64>,
    pub tolerances: Tolerances,
    pub tol_orbit: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            n: 8,
            m: 64,
            m_cert: 256,
            k_max: 50,
            eps_grid: (1..=10).map(|i| 0.005 * i as f64).collect(),
            tolerances: Tolerances::default(),
            tol_orbit: 1e-9,
            max_iter: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "T")]
    pub t_end: f64,
    /// Initial displacement u = amplitude·sin(πx/2), at rest.
    pub amplitude: f64,
    pub x_probe: f64,
    pub cfl: f64,
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection {
            m: 400,
            t_end: 200.0,
            amplitude: 0.1,
            x_probe: 1.0,
            cfl: 0.9,
        }
    }
}

fn expr(field: &str, text: &str) -> Result<hopfwave_core::exprlang::Expr, ConfigError> {
    parse(text).map_err(|e| ConfigError::Expression {
        field: field.to_string(),
        message: e.to_string(),
    })
}

impl ProblemFile {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn spec(&self) -> Result<ProblemSpec, ConfigError> {
        let b = match (&self.b, &self.beta) {
            (Some(b), None) => Nonlinearity::Joint(expr("b", b)?),
            (None, Some(beta)) => {
                let parsed: Vec<_> = beta
                    .iter()
                    .enumerate()
                    .map(|(j, t)| expr(&format!("beta[{j}]"), t))
                    .collect::<Result<_, _>>()?;
                Nonlinearity::Separable(parsed.try_into().expect("four entries"))
            }
            _ => return Err(ConfigError::NonlinearityChoice),
        };
        Ok(ProblemSpec::new(expr("a", &self.a)?, b, self.lambda)?)
    }

    pub fn certify_options(&self, seed: Option<u64>) -> CertifyOptions {
        CertifyOptions {
            m: self.solver.m_cert,
            k_max: self.solver.k_max,
            tau_guess: self.tau_guess,
            tol: self.solver.tolerances,
            search: SearchOptions {
                seed: seed.unwrap_or(self.solver.seed),
                ..SearchOptions::default()
            },
        }
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            n: self.solver.n,
            m: self.solver.m,
            max_iter: self.solver.max_iter,
            tol_orbit: self.solver.tol_orbit,
            ..SolverOptions::default()
        }
    }

    pub fn sim_options(&self) -> SimOptions {
        SimOptions {
            m: self.simulation.m,
            cfl: self.simulation.cfl,
            x_probe: self.simulation.x_probe,
            ..SimOptions::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_uses_defaults() {
        let f = ProblemFile::from_json(r#"{"a": "2/3.141592653589793", "b": "u2 + u3", "tau_guess": 1.4}"#).unwrap();
        assert_eq!(f.solver.n, 8);
        assert_eq!(f.solver.eps_grid.len(), 10);
        assert_eq!(f.lambda, 0.0);
        f.spec().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = r#"{"a": "1", "b": "u3", "tau_guess": 1, "extra": 2}"#;
        assert!(matches!(ProblemFile::from_json(bad), Err(ConfigError::Json(_))));
        let nested = r#"{"a": "1", "b": "u3", "tau_guess": 1, "solver": {"n": 4}}"#;
        assert!(matches!(ProblemFile::from_json(nested), Err(ConfigError::Json(_))));
    }

    #[test]
    fn exactly_one_nonlinearity() {
        let both = ProblemFile::from_json(
            r#"{"a": "1", "b": "u3", "beta": ["0", "0", "u3", "0"], "tau_guess": 1}"#,
        )
        .unwrap();
        assert!(matches!(both.spec(), Err(ConfigError::NonlinearityChoice)));
        let beta = ProblemFile::from_json(r#"{"a": "1", "beta": ["u1^3", "u2", "u3", "0"], "tau_guess": 1}"#).unwrap();
        assert!(matches!(beta.spec().unwrap().b, Nonlinearity::Separable(_)));
        let wrong_slot = ProblemFile::from_json(r#"{"a": "1", "beta": ["u2", "0", "0", "0"], "tau_guess": 1}"#).unwrap();
        assert!(matches!(wrong_slot.spec(), Err(ConfigError::Model(_))));
    }

    #[test]
    fn bad_expression_names_the_field() {
        let f = ProblemFile::from_json(r#"{"a": "1 +", "b": "u3", "tau_guess": 1}"#).unwrap();
        let err = f.spec().unwrap_err().to_string();
        assert!(err.contains("expression a"), "{err}");
    }
}
