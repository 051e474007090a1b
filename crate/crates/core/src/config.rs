//! Run configuration shared by the command-line subcommands, read from TOML.
//!
//! Node and edge widths and readout heads are not configured here; they are
//! taken from the dataset so a configuration cannot disagree with its data.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::ablation::{AblationSetup, Variant};
use crate::gradcheck::GradcheckConfig;
use crate::graph_file::read_graph_file;
use crate::losses::LossConfig;
use crate::model::{GraphMode, LinkKind, ModelConfig};
use crate::nn::Activation;
use crate::synth::{generate, Dataset, SynthSpec};
use crate::train::{OptimConfig, Task, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub iterations: usize,
    pub link: LinkKind,
    pub link_widths: Vec<usize>,
    pub link_activation: Activation,
    pub mode: GraphMode,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        ModelSection {
            iterations: m.iterations,
            link: m.link,
            link_widths: m.link_widths,
            link_activation: m.link_activation,
            mode: m.mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub adjacency_weight: f64,
    pub hinge_margin: f64,
    /// Explicit per-head class weights; ignored when `inverse_frequency`.
    pub class_weights: Vec<Vec<f64>>,
    pub head_weights: Vec<f64>,
    pub inverse_frequency: bool,
}

impl Default for LossSection {
    fn default() -> Self {
        let l = LossConfig::default();
        LossSection {
            adjacency_weight: l.adjacency_weight,
            hinge_margin: l.hinge_margin,
            class_weights: l.class_weights,
            head_weights: l.head_weights,
            inverse_frequency: false,
        }
    }
}

/// Graph files to read. A missing `train` is generated from `[synth]`; a
/// missing `test` is generated from `[synth]` with `test_seed` and
/// `test_scenes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    pub test_seed: u64,
    pub test_scenes: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            train: None,
            test: None,
            test_seed: 1000,
            test_scenes: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    pub variants: Vec<String>,
    /// Seeds `seed, seed + 1, ...`.
    pub seeds: usize,
}

impl Default for AblationSection {
    fn default() -> Self {
        AblationSection {
            variants: Variant::table().iter().map(Variant::to_string).collect(),
            seeds: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    /// Model initialisation and batch order.
    pub seed: u64,
    pub model: ModelSection,
    pub optim: OptimConfig,
    pub loss: LossSection,
    pub data: DataSection,
    pub synth: SynthSpec,
    pub gradcheck: GradcheckConfig,
    pub ablation: AblationSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        RunConfig::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks every section and that referenced files exist.
    pub fn validate(&self) -> Result<()> {
        self.optim.validate()?;
        self.loss_config().validate()?;
        self.synth.validate()?;
        for (name, path) in [("train", &self.data.train), ("test", &self.data.test)] {
            if let Some(p) = path {
                if !p.is_file() {
                    return Err(Error::Config(format!(
                        "data.{name} {} does not exist",
                        p.display()
                    )));
                }
            }
        }
        if self.data.test_scenes == 0 {
            return Err(Error::Config("data.test_scenes must be at least 1".into()));
        }
        let g = &self.gradcheck;
        if !(g.step > 0.0 && g.floor > 0.0 && g.tolerance > 0.0) || g.iterations == 0 {
            return Err(Error::Config(
                "gradcheck step, floor, tolerance and iterations must be positive".into(),
            ));
        }
        if self.ablation.seeds == 0 {
            return Err(Error::Config("ablation.seeds must be at least 1".into()));
        }
        self.variants()?;
        Ok(())
    }

    pub fn variants(&self) -> Result<Vec<Variant>> {
        self.ablation
            .variants
            .iter()
            .map(|v| Variant::parse(v))
            .collect()
    }

    pub fn ablation_seeds(&self) -> Vec<u64> {
        (0..self.ablation.seeds as u64)
            .map(|i| self.seed + i)
            .collect()
    }

    /// Loss weights as configured; inverse-frequency weights are filled in
    /// once the model and data are known.
    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            adjacency_weight: self.loss.adjacency_weight,
            hinge_margin: self.loss.hinge_margin,
            class_weights: self.loss.class_weights.clone(),
            head_weights: self.loss.head_weights.clone(),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            optim: self.optim.clone(),
            loss: self.loss_config(),
            seed: self.seed,
            inverse_frequency: self.loss.inverse_frequency,
        }
    }

    /// Model configuration for `data`.
    pub fn model_config(&self, data: &Dataset) -> ModelConfig {
        ModelConfig {
            node_dim: data.node_dim,
            edge_dim: data.edge_dim,
            iterations: self.model.iterations,
            link: self.model.link,
            link_widths: self.model.link_widths.clone(),
            link_activation: self.model.link_activation,
            mode: self.model.mode,
            heads: data.heads.clone(),
        }
    }

    pub fn ablation_setup(&self, data: &Dataset) -> AblationSetup {
        AblationSetup {
            model: self.model_config(data),
            train: self.train_config(),
            task: self.task,
            epochs: self.optim.epochs,
        }
    }

    pub fn train_data(&self) -> Result<Dataset> {
        match &self.data.train {
            Some(p) => read_graph_file(p),
            None => generate(&self.synth),
        }
    }

    pub fn test_data(&self) -> Result<Dataset> {
        match &self.data.test {
            Some(p) => read_graph_file(p),
            None => generate(&SynthSpec {
                seed: self.data.test_seed,
                scenes: self.data.test_scenes,
                ..self.synth.clone()
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg = RunConfig::from_toml(
            "task = \"temporal-anticipation\"\n[optim]\nkind = \"adam\"\nlr = 0.01\n",
        )
        .unwrap();
        assert_eq!(cfg.task, Task::TemporalAnticipation);
        assert_eq!(cfg.optim.lr, 0.01);
        assert_eq!(cfg.optim.batch_size, OptimConfig::default().batch_size);
    }

    #[test]
    fn rejects_bad_files() {
        assert!(RunConfig::from_toml("[optim]\nlearning_rate = 1.0\n").is_err());
        assert!(RunConfig::from_toml("[optim]\nlr = -1.0\n").is_err());
        assert!(RunConfig::from_toml("[data]\ntrain = \"/nonexistent/graphs.bin\"\n").is_err());
        let err = RunConfig::from_toml("[ablation]\nvariants = [\"w/o readout\"]\n").unwrap_err();
        assert!(matches!(err, Error::UnknownVariant(_)));
    }
}
