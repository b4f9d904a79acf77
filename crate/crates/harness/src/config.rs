//! JSON experiment configuration.

use std::path::{Path, PathBuf};

use rdrlvi_core::experiment::{AlgorithmName, AlgorithmSpec};
use rdrlvi_core::fqi::{FqiConfig, N1Mode};
use rdrlvi_core::lasso::LassoParams;
use rdrlvi_core::rdrlvi::{LambdaMode, RdrlviConfig};
use rdrlvi_core::synthetic::SyntheticConfig;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgoSection {
    #[serde(default = "default_name")]
    pub name: AlgorithmName,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_lambda_mode")]
    pub lambda_mode: LambdaMode,
    #[serde(default = "default_update_period")]
    pub update_period: usize,
    #[serde(default = "default_n1_mode")]
    pub n1_mode: N1Mode,
    #[serde(default = "default_sigma_e")]
    pub sigma_e: f64,
}

fn default_name() -> AlgorithmName {
    AlgorithmName::Rdrlvi
}
fn default_delta() -> f64 {
    0.1
}
fn default_lambda_mode() -> LambdaMode {
    LambdaMode::Reduced
}
fn default_update_period() -> usize {
    1
}
fn default_n1_mode() -> N1Mode {
    N1Mode::Reduced
}
fn default_sigma_e() -> f64 {
    1.0
}

impl Default for AlgoSection {
    fn default() -> Self {
        Self {
            name: default_name(),
            delta: default_delta(),
            lambda_mode: default_lambda_mode(),
            update_period: default_update_period(),
            n1_mode: default_n1_mode(),
            sigma_e: default_sigma_e(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(rename = "N")]
    pub episodes: usize,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// 0 lets the thread pool pick.
    #[serde(default)]
    pub threads: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_replications() -> usize {
    1
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: SyntheticConfig,
    #[serde(default)]
    pub algo: AlgoSection,
    pub run: RunSection,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub replications: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.run.base_seed = s;
        }
        if let Some(p) = &o.out {
            self.run.output_dir = p.clone();
        }
        if let Some(t) = o.threads {
            self.run.threads = t;
        }
        if let Some(r) = o.replications {
            self.run.replications = r;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        if self.run.episodes == 0 {
            return Err(HarnessError::Config("run.N must be >= 1".into()));
        }
        if self.run.replications == 0 {
            return Err(HarnessError::Config("run.replications must be >= 1".into()));
        }
        let spec = self.spec();
        spec.rdrlvi.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        spec.fqi.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn spec(&self) -> AlgorithmSpec {
        self.spec_for(self.algo.name)
    }

    pub fn spec_for(&self, name: AlgorithmName) -> AlgorithmSpec {
        AlgorithmSpec {
            name,
            rdrlvi: RdrlviConfig {
                delta: self.algo.delta,
                lambda_mode: self.algo.lambda_mode,
                update_period: self.algo.update_period,
                lasso: LassoParams::default(),
            },
            fqi: FqiConfig {
                n1_mode: self.algo.n1_mode,
                sigma_e: self.algo.sigma_e,
                s_star: self.env.s_star,
                delta: self.algo.delta,
                lasso: LassoParams::default(),
            },
        }
    }

    fn preset(d: usize, s_star: usize, sigma: f64, horizon: usize, episodes: usize) -> Self {
        Self {
            env: SyntheticConfig { d, s_star, sigma, horizon },
            algo: AlgoSection::default(),
            run: RunSection {
                episodes,
                replications: 10,
                base_seed: 0,
                threads: 0,
                output_dir: default_output_dir(),
            },
        }
    }

    /// Flat-in-d setting: `s★ = 8`, `σ_U = 1/6`, `H = 10`, `N = 500`.
    pub fn flat_d_preset() -> Self {
        Self::preset(100, 8, 1.0, 10, 500)
    }

    /// σ-sweep setting: `s★ = 12`, `H = 10`, `N = 500`, `d = 100`.
    pub fn sigma_sweep_preset() -> Self {
        Self::preset(100, 12, 1.0, 10, 500)
    }

    /// Baseline comparison: `d = 200`, `H = 2`, `s★ = 24`, `σ_U = σ_E = 1`, `N = 2000`.
    pub fn compare_preset() -> Self {
        Self::preset(200, 24, 6.0, 2, 2000)
    }
}
