//! Experiment configuration: a human-editable TOML file with nested
//! sections. Every field has a default; the fully resolved config is echoed
//! into the run metadata so outputs are reproducible from the metadata
//! alone.

use serde::{Deserialize, Serialize};

use crate::{DesomError, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub seeds: SeedConfig,
    pub metrics: MetricsConfig,
    pub solvers: Vec<SolverSpec>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            problem: ProblemConfig::default(),
            seeds: SeedConfig::default(),
            metrics: MetricsConfig::default(),
            solvers: default_solvers(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    pub n: usize,
    pub p: usize,
    pub horizon: usize,
    pub change_period: usize,
    pub r_c: f64,
    pub trajectory_scale: f64,
    pub noise_std: f64,
    /// Distance of every node's initial iterate from the initial target.
    pub init_distance: f64,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self {
            n: 20,
            p: 5,
            horizon: 1000,
            change_period: 100,
            r_c: 0.15,
            trajectory_scale: 1.0,
            noise_std: 0.0,
            init_distance: 100.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SeedConfig {
    pub graph: u64,
    pub problem: u64,
    pub init: u64,
}

impl Default for SeedConfig {
    fn default() -> Self {
        Self { graph: 1, problem: 2, init: 3 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub lyapunov: bool,
    pub drift: bool,
    /// Wall-clock per step varies between runs; it is written as 0 unless
    /// explicitly enabled, keeping default outputs byte-identical across
    /// identical configs.
    pub record_wall_ms: bool,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { lyapunov: true, drift: true, record_wall_ms: false }
    }
}

/// One solver selection. `name` is one of `esom`, `extra`, `nn0`, `dgd`.
/// Absent hyperparameters are auto-tuned on the static version of the
/// generated instance and recorded in the output metadata.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSpec {
    pub name: String,
    /// Label used in outputs; defaults to `esom-K` / the method name.
    pub label: Option<String>,
    /// Series truncation level (ESOM only).
    pub k: usize,
    pub alpha: Option<f64>,
    pub epsilon: Option<f64>,
    /// Step size η (EXTRA, DGD) or penalty constant c (NN-0).
    pub step: Option<f64>,
}

impl Default for SolverSpec {
    fn default() -> Self {
        Self { name: "esom".into(), label: None, k: 0, alpha: None, epsilon: None, step: None }
    }
}

impl SolverSpec {
    pub fn esom(k: usize, alpha: Option<f64>, epsilon: Option<f64>) -> Self {
        Self { name: "esom".into(), k, alpha, epsilon, ..Self::default() }
    }

    pub fn baseline(name: &str, step: Option<f64>) -> Self {
        Self { name: name.into(), step, ..Self::default() }
    }

    pub fn resolved_label(&self) -> String {
        self.label.clone().unwrap_or_else(|| {
            if self.name == "esom" {
                format!("esom-{}", self.k)
            } else {
                self.name.clone()
            }
        })
    }
}

fn default_solvers() -> Vec<SolverSpec> {
    vec![
        SolverSpec::esom(0, None, None),
        SolverSpec::esom(2, None, None),
        SolverSpec::baseline("extra", None),
        SolverSpec::baseline("nn0", None),
    ]
}

const KNOWN_SOLVERS: [&str; 4] = ["esom", "extra", "nn0", "dgd"];

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| DesomError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| DesomError::Config(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.problem;
        if p.n < 2 || p.p < 1 || p.horizon < 1 || p.change_period < 1 {
            return Err(DesomError::Config(
                "n >= 2, p >= 1, horizon >= 1, change_period >= 1 required".into(),
            ));
        }
        if !(p.r_c > 0.0 && p.r_c <= 1.0) {
            return Err(DesomError::Config("r_c must be in (0, 1]".into()));
        }
        if self.solvers.is_empty() {
            return Err(DesomError::Config("at least one solver must be selected".into()));
        }
        let mut labels = std::collections::BTreeSet::new();
        for s in &self.solvers {
            if !KNOWN_SOLVERS.contains(&s.name.as_str()) {
                return Err(DesomError::UnknownSolver(s.name.clone()));
            }
            for (field, value) in
                [("alpha", s.alpha), ("epsilon", s.epsilon), ("step", s.step)]
            {
                if let Some(v) = value {
                    if v <= 0.0 {
                        return Err(DesomError::Config(format!("{field} must be positive")));
                    }
                }
            }
            if !labels.insert(s.resolved_label()) {
                return Err(DesomError::Config(format!(
                    "duplicate solver label {}",
                    s.resolved_label()
                )));
            }
        }
        Ok(())
    }

    /// Keeps only solvers whose resolved label is in `names`.
    pub fn filter_solvers(&mut self, names: &[String]) -> Result<()> {
        self.solvers.retain(|s| names.contains(&s.resolved_label()));
        if self.solvers.is_empty() {
            return Err(DesomError::Config(format!(
                "no configured solver matches the requested labels {names:?}"
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_experiment() {
        let config = ExperimentConfig::default();
        assert_eq!(config.problem.n, 20);
        assert_eq!(config.problem.p, 5);
        assert_eq!(config.problem.change_period, 100);
        assert!((config.problem.r_c - 0.15).abs() < 1e-15);
        assert!(config.validate().is_ok());
    }

    #[test]
    fn toml_round_trip() {
        let config = ExperimentConfig::default();
        let text = config.to_toml().unwrap();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(config, back);
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let text = r#"
[problem]
n = 10
horizon = 50

[[solvers]]
name = "esom"
k = 1
alpha = 0.5
epsilon = 0.5
"#;
        let config = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(config.problem.n, 10);
        assert_eq!(config.problem.p, 5);
        assert_eq!(config.solvers.len(), 1);
        assert_eq!(config.solvers[0].resolved_label(), "esom-1");
    }

    #[test]
    fn rejects_unknown_solver_and_bad_params() {
        let mut config = ExperimentConfig::default();
        config.solvers.push(SolverSpec::baseline("admm", None));
        assert!(config.validate().is_err());

        let mut config = ExperimentConfig::default();
        config.problem.r_c = 0.0;
        assert!(config.validate().is_err());

        let mut config = ExperimentConfig::default();
        config.solvers[0].alpha = Some(-1.0);
        assert!(config.validate().is_err());
    }

    #[test]
    fn filter_solvers_by_label() {
        let mut config = ExperimentConfig::default();
        config.filter_solvers(&["esom-2".into(), "extra".into()]).unwrap();
        assert_eq!(config.solvers.len(), 2);
        assert!(config.filter_solvers(&["nope".into()]).is_err());
    }
}
