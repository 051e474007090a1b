//! Train briefly, then write the inferred adjacency of one test scene after
//! each iteration, plus the ground truth, as CSV and PGM heatmaps.
//!
//!     cargo run --release --example adjacency_heatmap -- /tmp/gpnn-heatmaps

use std::fs;
use std::path::PathBuf;

use gpnn::export::{matrix_csv, matrix_pgm};
use gpnn::losses::LossConfig;
use gpnn::synth::{generate, SynthSpec};
use gpnn::train::{units, OptimConfig, OptimizerKind, Task, TrainConfig, Trainer};
use gpnn::{GpnnModel, ModelConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> gpnn::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| {
        std::env::temp_dir()
            .join("gpnn-heatmaps")
            .display()
            .to_string()
    }));
    fs::create_dir_all(&out)?;
    let spec = SynthSpec {
        scenes: 80,
        min_nodes: 6,
        max_nodes: 8,
        ..SynthSpec::default()
    };
    let train = generate(&spec)?;
    let test = generate(&SynthSpec {
        scenes: 1,
        seed: 5,
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
    let mut trainer = Trainer::new(
        model,
        TrainConfig {
            optim: OptimConfig {
                kind: OptimizerKind::Adam,
                lr: 0.01,
                batch_size: 8,
                ..OptimConfig::default()
            },
            loss: LossConfig {
                hinge_margin: 0.8,
                ..LossConfig::default()
            },
            seed: 0,
            inverse_frequency: false,
        },
    )?;
    trainer.fit(&units(&train, Task::SpatialDetection)?, 4)?;

    let scene = test.scenes().next().expect("one test scene");
    let parsed = trainer.model.parse(scene)?;
    let mut maps = vec![(
        "adjacency_gt".to_string(),
        scene.gt_adjacency.clone().expect("synthetic labels"),
    )];
    for (s, t) in parsed.trace.iter().enumerate() {
        maps.push((format!("adjacency_s{}", s + 1), t.adjacency.clone()));
    }
    for (stem, m) in &maps {
        fs::write(out.join(format!("{stem}.csv")), matrix_csv(m)?)?;
        fs::write(out.join(format!("{stem}.pgm")), matrix_pgm(m)?)?;
    }
    println!("wrote {} heatmaps to {}", maps.len(), out.display());
    print!("final adjacency:\n{}", matrix_csv(&parsed.adjacency)?);
    Ok(())
}
