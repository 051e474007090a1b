//! Generate a sequence dataset, save it as a graph file with its JSON
//! sidecar, read it back and print a few statistics.
//!
//!     cargo run --example synth_dataset -- /tmp/gpnn-data.bin

use gpnn::graph_file::{read_graph_file, sidecar_path, write_graph_file};
use gpnn::synth::{generate, Structure, SynthSpec};

fn main() -> gpnn::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| {
        std::env::temp_dir()
            .join("gpnn-data.bin")
            .display()
            .to_string()
    });
    let spec = SynthSpec {
        scenes: 25,
        frames: 4,
        structure: Structure::MostSalient,
        p_stay: 0.8,
        occlusion: 0.1,
        seed: 7,
        ..SynthSpec::default()
    };
    let data = generate(&spec)?;
    write_graph_file(&path, &data)?;
    let back = read_graph_file(&path)?;
    assert_eq!(back, data);
    println!("wrote {path} and {}", sidecar_path(std::path::Path::new(&path)).display());

    let (mut nodes, mut humans, mut edges, mut changes) = (0, 0, 0.0, 0);
    for seq in &back.sequences {
        for pair in seq.windows(2) {
            changes += usize::from(pair[0].gt_labels != pair[1].gt_labels);
        }
    }
    for s in back.scenes() {
        nodes += s.node_count();
        humans += s.humans().count();
        edges += s.gt_adjacency.as_ref().map_or(0.0, |a| a.sum() / 2.0);
    }
    println!(
        "{} sequences, {} frames, {nodes} nodes ({humans} humans), {edges} interacting pairs, {changes} label changes between frames",
        back.sequences.len(),
        back.scene_count()
    );
    for h in &back.heads {
        println!(
            "head {} with {} classes on {:?} nodes",
            h.name, h.classes, h.nodes
        );
    }
    Ok(())
}
