//! Parse a hand-built three-node scene with an untrained model and print the
//! soft adjacency after every iteration and the per-node outputs.
//!
//!     cargo run --example parse_scene

use gpnn::{GpnnModel, HeadSpec, ModelConfig, NodeFilter, NodeKind, SceneGraph, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> gpnn::Result<()> {
    let (dv, de) = (4, 3);
    let node_features = Tensor::from_rows(&[
        vec![1.0, 0.0, 0.5, -0.2],
        vec![0.0, 1.0, -0.3, 0.4],
        vec![0.2, 0.2, 0.9, 0.0],
    ])?;
    // Edge features are an [n, n, de] grid; the diagonal is ignored.
    let mut edge_features = Tensor::zeros(&[3, 3, de]);
    for (i, x) in edge_features.data_mut().iter_mut().enumerate() {
        *x = ((i * 7) % 5) as f64 / 5.0 - 0.4;
    }
    let scene = SceneGraph::new(
        node_features,
        edge_features,
        vec![NodeKind::Human, NodeKind::Object, NodeKind::Object],
    )?;

    let model = GpnnModel::new(
        ModelConfig {
            node_dim: dv,
            edge_dim: de,
            iterations: 3,
            link_widths: vec![8, 1],
            heads: vec![
                HeadSpec::sigmoid("interaction", 3),
                HeadSpec::softmax("activity", 4, NodeFilter::Human),
            ],
            ..ModelConfig::default()
        },
        &mut ChaCha8Rng::seed_from_u64(0),
    )?;
    println!("{} parameters", model.params.num_scalars());

    let parsed = model.parse(&scene)?;
    for (s, t) in parsed.trace.iter().enumerate() {
        println!("A^{}:", s + 1);
        for v in 0..3 {
            println!(
                "  {:?}",
                t.adjacency
                    .row(v)
                    .iter()
                    .map(|x| (x * 1e3).round() / 1e3)
                    .collect::<Vec<_>>()
            );
        }
    }
    for (head, out) in model.heads().zip(&parsed.outputs) {
        println!("{} ({:?}):", head.name, head.activation);
        for v in (0..3).filter(|&v| head.nodes.accepts(scene.node_kinds[v])) {
            println!(
                "  node {v}: {:?}",
                out.row(v)
                    .iter()
                    .map(|x| (x * 1e3).round() / 1e3)
                    .collect::<Vec<_>>()
            );
        }
    }
    Ok(())
}
