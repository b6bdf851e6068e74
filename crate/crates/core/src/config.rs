//! TOML experiment configuration shared by every command.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimators::{SamplingScheme, DEFAULT_GAMMAS};
use crate::harness::{LogLevel, OptimizerKind, ParitySettings, StudySettings};
use crate::oracles::{ObjectiveOracle, ObjectiveSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("config has no [{0}] section")]
    MissingSection(&'static str),
}

/// A scalar broadcast to every coordinate, or an explicit vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Fill {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl Fill {
    pub fn resolve(&self, d: usize) -> Result<Vec<f64>, ConfigError> {
        let v = match self {
            Fill::Scalar(x) => vec![*x; d],
            Fill::Vector(v) if v.len() == d => v.clone(),
            Fill::Vector(v) => {
                return Err(ConfigError::Invalid(format!("vector of length {} for dimension {d}", v.len())));
            }
        };
        if v.iter().any(|x| !x.is_finite()) {
            return Err(ConfigError::Invalid("start values must be finite".into()));
        }
        Ok(v)
    }
}

/// A seed count (indices `0..n`) or an explicit list of stream indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Seeds {
    Count(u64),
    List(Vec<u64>),
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds::Count(20)
    }
}

impl Seeds {
    pub fn indices(&self) -> Vec<u64> {
        match self {
            Seeds::Count(n) => (0..*n).collect(),
            Seeds::List(v) => v.clone(),
        }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceSection {
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub beta1: f64,
    pub eps: f64,
    #[serde(default)]
    pub seeds: Seeds,
    pub x0: Fill,
    pub v0: Option<Fill>,
    #[serde(default = "one")]
    pub zeta: f64,
    pub eta: Option<f64>,
    pub max_steps: Option<u64>,
    pub log_level: Option<LogLevel>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingSection {
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub beta1: f64,
    pub eps: Vec<f64>,
    #[serde(default)]
    pub seeds: Seeds,
    pub x0: Fill,
    pub v0: Option<Fill>,
    #[serde(default = "one")]
    pub zeta: f64,
    pub max_steps: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParitySection {
    #[serde(default = "ParitySection::eta")]
    pub eta: f64,
    #[serde(default = "ParitySection::beta1")]
    pub beta1: f64,
    #[serde(default = "ParitySection::beta2")]
    pub beta2: f64,
    #[serde(default = "ParitySection::lambda")]
    pub lambda: f64,
    pub zeta: Option<f64>,
    #[serde(default = "ParitySection::steps")]
    pub steps: u64,
    #[serde(default = "ParitySection::seeds")]
    pub seeds: Seeds,
    #[serde(default = "ParitySection::x0")]
    pub x0: Fill,
}

impl ParitySection {
    fn eta() -> f64 {
        1e-3
    }
    fn beta1() -> f64 {
        0.9
    }
    fn beta2() -> f64 {
        0.999
    }
    fn lambda() -> f64 {
        1e-8
    }
    fn steps() -> u64 {
        2000
    }
    fn seeds() -> Seeds {
        Seeds::Count(5)
    }
    fn x0() -> Fill {
        Fill::Scalar(0.0)
    }

    pub fn settings(&self) -> ParitySettings {
        ParitySettings {
            eta: self.eta,
            beta1: self.beta1,
            beta2: self.beta2,
            lambda: self.lambda,
            zeta: self.zeta,
            steps: self.steps,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothnessSection {
    pub eta: f64,
    #[serde(default)]
    pub beta1: f64,
    #[serde(default = "SmoothnessSection::beta2")]
    pub beta2: f64,
    #[serde(default = "one")]
    pub zeta: f64,
    pub steps: u64,
    pub x0: Fill,
    #[serde(default = "SmoothnessSection::seeds")]
    pub seeds: Seeds,
    #[serde(default = "SmoothnessSection::gammas")]
    pub gammas: Vec<f64>,
    #[serde(default)]
    pub pool: bool,
}

impl SmoothnessSection {
    fn beta2() -> f64 {
        0.99
    }
    fn seeds() -> Seeds {
        Seeds::Count(1)
    }
    fn gammas() -> Vec<f64> {
        DEFAULT_GAMMAS.to_vec()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub points: Vec<Fill>,
    #[serde(default = "NoiseSection::samples")]
    pub samples: usize,
    #[serde(default)]
    pub scheme: SamplingScheme,
}

impl NoiseSection {
    fn samples() -> usize {
        10_000
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LemmasSection {
    #[serde(default = "LemmasSection::cases")]
    pub cases: usize,
}

impl LemmasSection {
    fn cases() -> usize {
        10_000
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub strict: bool,
    pub oracle: ObjectiveSpec,
    pub convergence: Option<ConvergenceSection>,
    pub scaling: Option<ScalingSection>,
    pub parity: Option<ParitySection>,
    pub smoothness: Option<SmoothnessSection>,
    pub noise: Option<NoiseSection>,
    pub lemmas: Option<LemmasSection>,
}

fn positive(name: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(ConfigError::Invalid(format!("{name} = {v} must be positive")))
    }
}

fn nonempty(name: &str, seeds: &Seeds) -> Result<(), ConfigError> {
    if seeds.indices().is_empty() {
        Err(ConfigError::Invalid(format!("{name}.seeds must name at least one seed")))
    } else {
        Ok(())
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let c: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }

    pub fn build_oracle(&self) -> Result<ObjectiveOracle, ConfigError> {
        ObjectiveOracle::build(&self.oracle).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let d = self.build_oracle()?.dim();
        if let Some(c) = &self.convergence {
            positive("convergence.eps", c.eps)?;
            positive("convergence.zeta", c.zeta)?;
            nonempty("convergence", &c.seeds)?;
            c.x0.resolve(d)?;
            if let Some(v0) = &c.v0 {
                v0.resolve(d)?;
            }
        }
        if let Some(s) = &self.scaling {
            s.eps.iter().try_for_each(|e| positive("scaling.eps", *e))?;
            positive("scaling.zeta", s.zeta)?;
            nonempty("scaling", &s.seeds)?;
            s.x0.resolve(d)?;
        }
        if let Some(p) = &self.parity {
            positive("parity.eta", p.eta)?;
            nonempty("parity", &p.seeds)?;
            p.x0.resolve(d)?;
            if p.steps == 0 {
                return Err(ConfigError::Invalid("parity.steps must be at least 1".into()));
            }
        }
        if let Some(s) = &self.smoothness {
            positive("smoothness.eta", s.eta)?;
            nonempty("smoothness", &s.seeds)?;
            s.x0.resolve(d)?;
            if s.gammas.iter().any(|g| !(*g > 0.0 && *g <= 1.0)) {
                return Err(ConfigError::Invalid("smoothness.gammas must lie in (0, 1]".into()));
            }
        }
        if let Some(n) = &self.noise {
            for p in &n.points {
                p.resolve(d)?;
            }
        }
        if let Some(l) = &self.lemmas {
            if l.cases == 0 {
                return Err(ConfigError::Invalid("lemmas.cases must be at least 1".into()));
            }
        }
        Ok(())
    }

    pub fn convergence_settings(&self) -> Result<(&ConvergenceSection, StudySettings), ConfigError> {
        let c = self.convergence.as_ref().ok_or(ConfigError::MissingSection("convergence"))?;
        let d = self.build_oracle()?.dim();
        let mut s = StudySettings::new(self.seed, c.x0.resolve(d)?);
        s.v0 = c.v0.as_ref().map(|v| v.resolve(d)).transpose()?;
        s.zeta = c.zeta;
        s.eta = c.eta;
        s.max_steps = c.max_steps;
        s.strict = self.strict;
        s.level = c.log_level;
        s.oracle_spec = Some(self.oracle.clone());
        Ok((c, s))
    }

    pub fn scaling_settings(&self) -> Result<(&ScalingSection, StudySettings), ConfigError> {
        let c = self.scaling.as_ref().ok_or(ConfigError::MissingSection("scaling"))?;
        let d = self.build_oracle()?.dim();
        let mut s = StudySettings::new(self.seed, c.x0.resolve(d)?);
        s.v0 = c.v0.as_ref().map(|v| v.resolve(d)).transpose()?;
        s.zeta = c.zeta;
        s.max_steps = c.max_steps;
        s.strict = self.strict;
        s.oracle_spec = Some(self.oracle.clone());
        Ok((c, s))
    }

    pub fn parity_settings(&self) -> Result<(&ParitySection, StudySettings), ConfigError> {
        let c = self.parity.as_ref().ok_or(ConfigError::MissingSection("parity"))?;
        let d = self.build_oracle()?.dim();
        let mut s = StudySettings::new(self.seed, c.x0.resolve(d)?);
        s.strict = self.strict;
        s.oracle_spec = Some(self.oracle.clone());
        Ok((c, s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
seed = 3
[oracle]
name = "quartic"
dim = 2
sigma0 = 1.0
sigma1 = 0.0

[convergence]
eps = 0.2
x0 = 0.1
seeds = [0, 4, 9]
"#;

    #[test]
    fn parses_and_resolves() {
        let c = ExperimentConfig::from_toml(BASE).unwrap();
        let (sec, s) = c.convergence_settings().unwrap();
        assert_eq!(sec.seeds.indices(), vec![0, 4, 9]);
        assert_eq!(s.x0, vec![0.1, 0.1]);
        assert_eq!(s.zeta, 1.0);
        assert_eq!(sec.optimizer, OptimizerKind::Rmsprop);
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn rejects_unknown_and_missing() {
        let e = ExperimentConfig::from_toml(&format!("{BASE}\nbogus = 1\n")).unwrap_err();
        assert!(e.to_string().contains("bogus"), "{e}");
        let e = ExperimentConfig::from_toml("seed = 1\n").unwrap_err();
        assert!(e.to_string().contains("oracle"), "{e}");
        let e = ExperimentConfig::from_toml(&BASE.replace("x0 = 0.1", "x0 = [1.0, 2.0, 3.0]")).unwrap_err();
        assert!(matches!(e, ConfigError::Invalid(_)));
        let e = ExperimentConfig::from_toml(&BASE.replace("eps = 0.2", "eps = -1.0")).unwrap_err();
        assert!(matches!(e, ConfigError::Invalid(_)));
    }

    #[test]
    fn missing_section_is_reported() {
        let c = ExperimentConfig::from_toml(BASE).unwrap();
        assert_eq!(c.parity_settings().unwrap_err(), ConfigError::MissingSection("parity"));
    }
}
