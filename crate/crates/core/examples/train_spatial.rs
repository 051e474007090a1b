//! Generate a synthetic interaction set, train with Adam, then report pair
//! detection mAP and adjacency ROC-AUC on held-out scenes.
//!
//!     cargo run --release --example train_spatial

use gpnn::eval::evaluate;
use gpnn::losses::LossConfig;
use gpnn::synth::{generate, SynthSpec};
use gpnn::train::{class_weights, units, OptimConfig, OptimizerKind, Task, TrainConfig, Trainer};
use gpnn::{GpnnModel, ModelConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> gpnn::Result<()> {
    let spec = SynthSpec {
        scenes: 120,
        node_dim: 12,
        edge_dim: 12,
        ..SynthSpec::default()
    };
    let train = generate(&spec)?;
    let test = generate(&SynthSpec {
        scenes: 40,
        seed: 99,
        ..spec
    })?;

    let model = GpnnModel::new(
        ModelConfig {
            node_dim: train.node_dim,
            edge_dim: train.edge_dim,
            link_widths: vec![16, 16, 1],
            heads: train.heads.clone(),
            ..ModelConfig::default()
        },
        &mut ChaCha8Rng::seed_from_u64(0),
    )?;
    let train_units = units(&train, Task::SpatialDetection)?;
    let loss = LossConfig {
        hinge_margin: 0.8,
        class_weights: class_weights(&model, &train_units),
        ..LossConfig::default()
    };
    let config = TrainConfig {
        optim: OptimConfig {
            kind: OptimizerKind::Adam,
            lr: 0.01,
            batch_size: 8,
            ..OptimConfig::default()
        },
        loss,
        seed: 0,
        inverse_frequency: true,
    };
    let mut trainer = Trainer::new(model, config)?;
    for row in trainer.fit(&train_units, 6)? {
        println!(
            "epoch {}  loss {:.4}  adjacency {:.4}  accuracy {:.3}",
            row.epoch, row.loss, row.adjacency_loss, row.accuracy
        );
    }

    let report = evaluate(&trainer.model, &test, Task::SpatialDetection, None)?;
    if let Some(d) = &report.detection {
        println!(
            "mAP {:.4} over {} ground-truth pairs",
            d.map.full, d.ground_truth
        );
    }
    println!(
        "adjacency ROC-AUC {:.4}",
        report.adjacency_auc.unwrap_or(f64::NAN)
    );
    Ok(())
}
