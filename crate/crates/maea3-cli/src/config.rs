//! Experiment configuration (TOML).  Unknown keys are rejected everywhere;
//! the parser's message carries the line, column and offending key.

use std::path::{Path, PathBuf};

use rkfusion::maea3::{AlgorithmConfig, Model};
use rkfusion::sampling::SamplingConfig;
use rkfusion::spaces::{build_fusion_space, build_knowledge_space, DomainBox, FeatureDescriptor, SelectionConfig};
use serde::Deserialize;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed.  Data, per-iteration norm estimates and sweeps all
    /// derive their streams from it.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub domain: DomainConfig,
    pub agent1: AgentConfig,
    pub agent2: AgentConfig,
    #[serde(default)]
    pub selection: SelectionConfig,
    pub algorithm: AlgorithmConfig,
    pub data: DataConfig,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub diagnose: DiagnoseConfig,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub features: Vec<FeatureDescriptor>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthTerm {
    pub weight: f64,
    pub feature: FeatureDescriptor,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Noise {
    #[default]
    None,
    Gaussian {
        sigma: f64,
    },
    /// Uniform on [−half_width, half_width].
    Uniform {
        half_width: f64,
    },
}

/// Scale applied to yₙ (signal and noise together).
#[derive(Debug, Clone, Copy, PartialEq, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Decay {
    #[default]
    None,
    Constant,
    /// yₙ scaled by rⁿ.
    Geometric {
        r: f64,
    },
}

impl Decay {
    pub fn factor(&self, n: usize) -> f64 {
        match self {
            Decay::None | Decay::Constant => 1.0,
            Decay::Geometric { r } => r.powi(n as i32),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub truth: Vec<TruthTerm>,
    #[serde(default)]
    pub noise: Noise,
    #[serde(default)]
    pub decay: Decay,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnoseConfig {
    /// Length of the short run used for the bound check.
    pub run_iterations: usize,
    pub perturbation_trials: usize,
    pub perturbation_dim: usize,
    pub uniform_samples: usize,
    pub decades: usize,
    /// Relative slack for sampled norm estimates in the bound check.
    pub bound_tolerance: f64,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        DiagnoseConfig { run_iterations: 40, perturbation_trials: 1000, perturbation_dim: 4, uniform_samples: 1000, decades: 6, bound_tolerance: 0.05 }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError::Parse { path: path.to_path_buf(), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        Self::from_toml(&text, path)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if let Err(e) = self.algorithm.validate() {
            return bad(format!("[algorithm]: {e}"));
        }
        if self.data.truth.is_empty() {
            return bad("[data]: truth needs at least one term".into());
        }
        match self.data.noise {
            Noise::Gaussian { sigma } if !(sigma >= 0.0) => return bad("[data.noise]: sigma must be nonnegative".into()),
            Noise::Uniform { half_width } if !(half_width >= 0.0) => return bad("[data.noise]: half_width must be nonnegative".into()),
            _ => {}
        }
        if let Decay::Geometric { r } = self.data.decay {
            if !(r > 0.0 && r <= 1.0) {
                return bad("[data.decay]: geometric r must be in (0, 1]".into());
            }
        }
        Ok(())
    }

    /// Replaces the master seed and the seeds derived from it.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn algorithm(&self) -> AlgorithmConfig {
        let mut a = self.algorithm.clone();
        a.seed ^= self.seed;
        a
    }

    pub fn sampling(&self) -> SamplingConfig {
        let mut s = self.sampling.clone();
        s.seed ^= self.seed;
        s
    }

    pub fn domain(&self) -> rkfusion::Result<DomainBox> {
        DomainBox::new(self.domain.lower.clone(), self.domain.upper.clone())
    }

    pub fn build_model(&self) -> rkfusion::Result<Model> {
        let domain = self.domain()?;
        let s1 = build_knowledge_space(1, self.agent1.features.clone(), domain.clone(), None)?;
        let s2 = build_knowledge_space(2, self.agent2.features.clone(), domain, None)?;
        Model::new(build_fusion_space(&s1, &s2, &self.selection)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = include_str!("../configs/fixture.toml");

    fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
        ExperimentConfig::from_toml(text, Path::new("test.toml"))
    }

    #[test]
    fn fixture_parses() {
        let c = parse(FIXTURE).unwrap();
        assert_eq!(c.agent1.features.len(), 2);
        assert_eq!(c.data.decay, Decay::Geometric { r: 0.9 });
        assert_eq!(c.data.noise, Noise::None);
        assert_eq!(c.diagnose, DiagnoseConfig::default());
        assert!(c.selection.normalize);
    }

    #[test]
    fn nested_unknown_key_is_named() {
        let text = FIXTURE.replace("kind = \"geometric\"\nr = 0.9", "kind = \"geometric\"\nratio = 0.9");
        let msg = parse(&text).unwrap_err().to_string();
        assert!(msg.contains("ratio"), "{msg}");
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(parse(&FIXTURE.replace("r = 0.9", "r = 1.5")).is_err());
        assert!(parse(&FIXTURE.replace("k_max = 5", "k_max = 0")).is_err());
        let noisy = FIXTURE.to_string() + "\n[data.noise]\nkind = \"gaussian\"\nsigma = -1.0\n";
        assert!(parse(&noisy).is_err());
    }

    #[test]
    fn master_seed_mixes_into_streams() {
        let c = parse(FIXTURE).unwrap().with_seed(9);
        assert_eq!(c.algorithm().seed, c.algorithm.seed ^ 9);
        assert_eq!(c.sampling().seed, c.sampling.seed ^ 9);
    }
}
