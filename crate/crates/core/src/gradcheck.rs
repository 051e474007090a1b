//! Central finite-difference check of every parameter gradient of the full
//! training objective.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::graph::{NodeKind, SceneGraph};
use crate::losses::LossConfig;
use crate::model::{GpnnModel, HeadSpec, LinkKind, ModelConfig, NodeFilter};
use crate::nn::Activation;
use crate::tensor::Tensor;
use crate::train::{unit_gradients, unit_loss_value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    /// Finite-difference step.
    pub step: f64,
    /// Lower bound of the relative-error denominator.
    pub floor: f64,
    /// Largest accepted relative error.
    pub tolerance: f64,
    pub iterations: usize,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            step: 1e-5,
            floor: 1e-6,
            tolerance: 1e-3,
            iterations: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockReport {
    pub name: String,
    pub entries: usize,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub case: String,
    pub blocks: Vec<BlockReport>,
}

impl GradcheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.max_rel_err)
            .fold(0.0, f64::max)
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the analytic gradient of the unit loss against central
/// differences for every entry of every parameter.
pub fn check_model(
    case: &str,
    model: &GpnnModel,
    unit: &[SceneGraph],
    loss: &LossConfig,
    cfg: &GradcheckConfig,
) -> Result<GradcheckReport> {
    let (_, analytic) = unit_gradients(model, unit, loss)?;
    let mut probe = model.clone();
    let mut blocks = Vec::with_capacity(analytic.len());
    for (id, grad) in model.params.ids().zip(&analytic) {
        let mut block = BlockReport {
            name: model.params.name(id).to_string(),
            entries: grad.numel(),
            max_abs_err: 0.0,
            max_rel_err: 0.0,
        };
        for i in 0..grad.numel() {
            let original = probe.params.get(id).data()[i];
            probe.params.get_mut(id).data_mut()[i] = original + cfg.step;
            let (plus, _) = unit_loss_value(&probe, unit, loss)?;
            probe.params.get_mut(id).data_mut()[i] = original - cfg.step;
            let (minus, _) = unit_loss_value(&probe, unit, loss)?;
            probe.params.get_mut(id).data_mut()[i] = original;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = grad.data()[i];
            block.max_abs_err = block.max_abs_err.max((a - numeric).abs());
            block.max_rel_err = block.max_rel_err.max(relative_error(a, numeric, cfg.floor));
        }
        blocks.push(block);
    }
    Ok(GradcheckReport {
        case: case.to_string(),
        blocks,
    })
}

fn normal_tensor<R: Rng>(rng: &mut R, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect(),
    )
    .expect("positive dims")
}

/// A 4-node scene (two humans, two objects) with random features, one
/// interacting pair per human, random multi-labels for head 0 and one-hot
/// human labels for head 1.
pub fn check_scene<R: Rng>(
    rng: &mut R,
    node_dim: usize,
    edge_dim: usize,
    classes: usize,
) -> SceneGraph {
    let kinds = vec![
        NodeKind::Human,
        NodeKind::Human,
        NodeKind::Object,
        NodeKind::Object,
    ];
    let mut adjacency = Tensor::zeros(&[4, 4]);
    for (h, o) in [(0, 2), (1, 3)] {
        adjacency.set(&[h, o], 1.0);
        adjacency.set(&[o, h], 1.0);
    }
    let mut multi = Tensor::zeros(&[4, classes]);
    let mut single = Tensor::zeros(&[4, classes]);
    for v in 0..4 {
        for c in 0..classes {
            multi.set(&[v, c], f64::from(u8::from(rng.random_bool(0.5))));
        }
        if kinds[v] == NodeKind::Human {
            single.set(&[v, rng.random_range(0..classes)], 1.0);
        }
    }
    let mut scene = SceneGraph::new(
        normal_tensor(rng, &[4, node_dim]),
        normal_tensor(rng, &[4, 4, edge_dim]),
        kinds,
    )
    .expect("consistent shapes");
    scene.gt_adjacency = Some(adjacency);
    scene.gt_labels = Some(vec![multi, single]);
    scene
}

/// The built-in suite: a per-edge MLP link on one scene and a
/// convolutional-LSTM link over a two-frame sequence, both with a sigmoid
/// and a softmax head.
pub fn default_cases(
    seed: u64,
    iterations: usize,
) -> Result<Vec<(String, GpnnModel, Vec<SceneGraph>, LossConfig)>> {
    let (dv, de, y) = (4, 3, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let heads = vec![
        HeadSpec::sigmoid("multi", y),
        HeadSpec::softmax("single", y, NodeFilter::Human),
    ];
    let loss = LossConfig {
        class_weights: vec![vec![0.5, 1.0, 2.0], vec![1.0; y]],
        head_weights: vec![1.0, 0.7],
        ..LossConfig::default()
    };
    let mut cases = Vec::new();
    for (name, link, widths, frames) in [
        ("mlp-link", LinkKind::Mlp, vec![5, 1], 1),
        ("convlstm-link", LinkKind::ConvLstm, vec![3, 1], 2),
    ] {
        let config = ModelConfig {
            node_dim: dv,
            edge_dim: de,
            iterations,
            link,
            link_widths: widths,
            link_activation: Activation::Tanh,
            heads: heads.clone(),
            ..ModelConfig::default()
        };
        let model = GpnnModel::new(config, &mut rng)?;
        let first = check_scene(&mut rng, dv, de, y);
        let mut unit = vec![first.clone()];
        for _ in 1..frames {
            let mut next = check_scene(&mut rng, dv, de, y);
            next.node_kinds = first.node_kinds.clone();
            unit.push(next);
        }
        cases.push((name.to_string(), model, unit, loss.clone()));
    }
    Ok(cases)
}

/// Runs [`default_cases`] and returns one report per case.
pub fn run_default(seed: u64, cfg: &GradcheckConfig) -> Result<Vec<GradcheckReport>> {
    default_cases(seed, cfg.iterations)?
        .iter()
        .map(|(name, model, unit, loss)| check_model(name, model, unit, loss, cfg))
        .collect()
}

/// `case,block,entries,max_abs_err,max_rel_err` rows.
pub fn reports_csv(reports: &[GradcheckReport]) -> String {
    let mut out = String::from("case,block,entries,max_abs_err,max_rel_err\n");
    for r in reports {
        for b in &r.blocks {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.case, b.name, b.entries, b.max_abs_err, b.max_rel_err
            );
        }
    }
    out
}
