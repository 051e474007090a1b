//! Next-frame label anticipation on persistent sequences: a per-frame MLP
//! link against a convolutional-LSTM link that carries state across frames.
//!
//!     cargo run --release --example temporal_anticipation

use gpnn::eval::ablation::{train_and_score, AblationSetup};
use gpnn::losses::LossConfig;
use gpnn::synth::{generate, Structure, SynthSpec};
use gpnn::train::{OptimConfig, OptimizerKind, Task, TrainConfig};
use gpnn::{LinkKind, ModelConfig};

fn main() -> gpnn::Result<()> {
    let spec = SynthSpec {
        scenes: 40,
        frames: 5,
        min_nodes: 4,
        max_nodes: 5,
        human_fraction: 0.34,
        structure: Structure::MostSalient,
        p_stay: 0.9,
        occlusion: 0.3,
        ..SynthSpec::default()
    };
    let train = generate(&spec)?;
    let test = generate(&SynthSpec {
        scenes: 30,
        seed: 1000,
        ..spec
    })?;
    println!(
        "{} training sequences of {} frames",
        train.sequences.len(),
        spec.frames
    );

    let optim = OptimConfig {
        kind: OptimizerKind::Adam,
        lr: 0.003,
        batch_size: 8,
        decay_every: 1000,
        ..OptimConfig::default()
    };
    for (link, widths) in [
        (LinkKind::Mlp, vec![16, 16, 1]),
        (LinkKind::ConvLstm, vec![16, 1]),
    ] {
        let setup = AblationSetup {
            model: ModelConfig {
                node_dim: train.node_dim,
                edge_dim: train.edge_dim,
                iterations: 2,
                link,
                link_widths: widths,
                heads: train.heads.clone(),
                ..ModelConfig::default()
            },
            train: TrainConfig {
                optim: optim.clone(),
                loss: LossConfig::default(),
                seed: 0,
                inverse_frequency: false,
            },
            task: Task::TemporalAnticipation,
            epochs: 15,
        };
        let f1 = train_and_score(&setup, &train, &test, 0)?;
        println!("{link:?} link: anticipation macro-F1 {f1:.4}");
    }
    Ok(())
}
