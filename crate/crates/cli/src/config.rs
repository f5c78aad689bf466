//! TOML run configuration. Every section is optional and falls back to the
//! library defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};
use stag_core::eval::{AblationConfig, BenchGrid};
use stag_core::infer::LlmConfig;
use stag_core::{EvalConfig, ModelConfig, PromptTuneConfig, Result, StagError, TrainConfig};

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    /// Named reference settings applied before `model` and `train`.
    pub preset: Option<String>,
    pub model: Option<ModelConfig>,
    pub train: Option<TrainConfig>,
    pub eval: EvalConfig,
    pub prompt: PromptTuneConfig,
    pub ablation: AblationConfig,
    pub bench: BenchGrid,
    pub llm: LlmConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| StagError::io(path, e))?;
        toml::from_str(&text).map_err(|e| StagError::parse(path.display().to_string(), e))
    }

    /// Pushes one seed into every seeded section; `--seed` beats the file.
    pub fn apply_seed(&mut self, cli: Option<u64>) {
        let Some(seed) = cli.or(self.seed) else {
            return;
        };
        self.seed = Some(seed);
        if let Some(t) = self.train.as_mut() {
            t.seed = seed;
        }
        self.eval.seed = seed;
        self.prompt.seed = seed;
        self.ablation.train.seed = seed;
        self.ablation.stub.seed = seed;
        self.bench.seed = seed;
    }

    /// Model and training settings for a graph with `feature_dim` features.
    pub fn training(&self, feature_dim: usize) -> Result<(ModelConfig, TrainConfig)> {
        let (mut model, mut train) = match &self.preset {
            Some(name) => stag_core::pretrain::preset(name)
                .ok_or_else(|| StagError::invalid(format!("unknown preset {name:?}")))?,
            None => (ModelConfig::default(), TrainConfig::default()),
        };
        if let Some(m) = &self.model {
            model = m.clone();
        }
        if let Some(t) = &self.train {
            train = t.clone();
        }
        if let Some(seed) = self.seed {
            train.seed = seed;
        }
        model.feature_dim = feature_dim;
        Ok((model, train))
    }
}
