//! Component ablations: each variant changes one aspect of a base setup and
//! is trained and evaluated with the same data, seeds and budget.

use std::fmt;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GpnnModel, GraphMode, ModelConfig};
use crate::synth::Dataset;
use crate::train::{class_weights, units, Task, TrainConfig, Trainer};

use super::report::evaluate_seeded;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Full,
    /// Readouts applied directly to the node features.
    NoGraph,
    ConstantGraph,
    /// Adjacency supervision switched off.
    NoGraphLoss,
    /// The first inferred adjacency is reused for every iteration.
    NoJointParsing,
    Iterations(usize),
}

impl Variant {
    /// Accepts the table labels (`w/o graph`, `S=2`, ...) and kebab-case
    /// names (`no-graph`, `iterations-2`, ...).
    pub fn parse(name: &str) -> Result<Variant> {
        let key = name.trim().to_ascii_lowercase();
        let v = match key.as_str() {
            "full" | "gpnn" => Variant::Full,
            "no-graph" | "w/o graph" => Variant::NoGraph,
            "constant-graph" | "constant graph" => Variant::ConstantGraph,
            "no-graph-loss" | "w/o graph loss" => Variant::NoGraphLoss,
            "no-joint-parsing" | "w/o joint parsing" => Variant::NoJointParsing,
            _ => {
                let n = key
                    .strip_prefix("iterations-")
                    .or_else(|| key.strip_prefix("s="))
                    .and_then(|n| n.parse().ok())
                    .filter(|&n| n > 0)
                    .ok_or_else(|| Error::UnknownVariant(name.to_string()))?;
                Variant::Iterations(n)
            }
        };
        Ok(v)
    }

    /// The default suite.
    pub fn table() -> Vec<Variant> {
        vec![
            Variant::Full,
            Variant::NoGraph,
            Variant::ConstantGraph,
            Variant::NoGraphLoss,
            Variant::NoJointParsing,
            Variant::Iterations(1),
            Variant::Iterations(2),
            Variant::Iterations(4),
        ]
    }

    pub fn apply(self, model: &mut ModelConfig, train: &mut TrainConfig) {
        match self {
            Variant::Full => {}
            Variant::NoGraph => model.mode = GraphMode::NoGraph,
            Variant::ConstantGraph => model.mode = GraphMode::ConstantStructure,
            Variant::NoGraphLoss => train.loss.adjacency_weight = 0.0,
            Variant::NoJointParsing => model.mode = GraphMode::StaticStructure,
            Variant::Iterations(s) => model.iterations = s,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Full => write!(f, "full"),
            Variant::NoGraph => write!(f, "w/o graph"),
            Variant::ConstantGraph => write!(f, "constant graph"),
            Variant::NoGraphLoss => write!(f, "w/o graph loss"),
            Variant::NoJointParsing => write!(f, "w/o joint parsing"),
            Variant::Iterations(s) => write!(f, "S={s}"),
        }
    }
}

/// Everything a variant inherits.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationSetup {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub task: Task,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    /// Headline test metric per seed.
    pub scores: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Trains `setup` with `seed` (model initialisation and batch order) and
/// returns the headline test metric.
pub fn train_and_score(
    setup: &AblationSetup,
    train: &Dataset,
    test: &Dataset,
    seed: u64,
) -> Result<f64> {
    let mut model_cfg = setup.model.clone();
    if model_cfg.heads != train.heads {
        model_cfg.heads = train.heads.clone();
    }
    let model = GpnnModel::new(model_cfg, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let train_units = units(train, setup.task)?;
    let mut cfg = setup.train.clone();
    cfg.seed = seed;
    if cfg.inverse_frequency {
        cfg.loss.class_weights = class_weights(&model, &train_units);
    }
    let mut trainer = Trainer::new(model, cfg)?;
    trainer.fit(&train_units, setup.epochs)?;
    Ok(evaluate_seeded(&trainer.model, test, setup.task, None, seed)?.primary())
}

/// One row per variant, each trained once per seed.
pub fn run_ablation(
    variants: &[Variant],
    train: &Dataset,
    test: &Dataset,
    base: &AblationSetup,
    seeds: &[u64],
) -> Result<Vec<AblationRow>> {
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    variants
        .iter()
        .map(|&v| {
            let mut setup = base.clone();
            v.apply(&mut setup.model, &mut setup.train);
            let scores = seeds
                .iter()
                .map(|&s| train_and_score(&setup, train, test, s))
                .collect::<Result<Vec<_>>>()?;
            let k = scores.len() as f64;
            let mean = scores.iter().sum::<f64>() / k;
            let std = (scores.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / k).sqrt();
            Ok(AblationRow {
                variant: v.to_string(),
                scores,
                mean,
                std,
            })
        })
        .collect()
}

/// `method,mean,std,seed_0,...` with one row per variant.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let seeds = rows.first().map_or(0, |r| r.scores.len());
    let mut out = String::from("method,mean,std");
    for i in 0..seeds {
        let _ = write!(out, ",seed_{i}");
    }
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{},{},{}", r.variant, r.mean, r.std);
        for s in &r.scores {
            let _ = write!(out, ",{s}");
        }
        out.push('\n');
    }
    out
}
