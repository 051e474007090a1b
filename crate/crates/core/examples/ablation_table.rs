//! A small ablation table: the full model against its structural variants,
//! same data, seeds and budget. Use `gpnn ablate --config configs/ablation.toml`
//! for the full-size run.
//!
//!     cargo run --release --example ablation_table

use gpnn::eval::ablation::{ablation_csv, run_ablation, AblationSetup, Variant};
use gpnn::losses::LossConfig;
use gpnn::synth::{generate, Structure, SynthSpec};
use gpnn::train::{OptimConfig, OptimizerKind, Task, TrainConfig};
use gpnn::ModelConfig;

fn main() -> gpnn::Result<()> {
    let spec = SynthSpec {
        scenes: 40,
        min_nodes: 4,
        max_nodes: 6,
        human_fraction: 0.34,
        structure: Structure::MostSalient,
        gain_spread: 3.0,
        ..SynthSpec::default()
    };
    let train = generate(&spec)?;
    let test = generate(&SynthSpec {
        scenes: 40,
        seed: 1000,
        ..spec
    })?;
    let setup = AblationSetup {
        model: ModelConfig {
            node_dim: train.node_dim,
            edge_dim: train.edge_dim,
            link_widths: vec![16, 16, 1],
            heads: train.heads.clone(),
            ..ModelConfig::default()
        },
        train: TrainConfig {
            optim: OptimConfig {
                kind: OptimizerKind::Adam,
                lr: 0.003,
                batch_size: 8,
                decay_every: 1000,
                ..OptimConfig::default()
            },
            loss: LossConfig {
                hinge_margin: 0.8,
                ..LossConfig::default()
            },
            seed: 0,
            inverse_frequency: false,
        },
        task: Task::SpatialDetection,
        epochs: 20,
    };
    let variants = [
        Variant::Full,
        Variant::NoGraph,
        Variant::ConstantGraph,
        Variant::Iterations(1),
    ];
    let rows = run_ablation(&variants, &train, &test, &setup, &[0, 1])?;
    print!("{}", ablation_csv(&rows));
    Ok(())
}
