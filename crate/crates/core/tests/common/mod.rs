//! Shared fixtures and a plain-loop reference implementation of the parse.
#![allow(dead_code)]

pub mod oracles;

use gpnn::nn::Activation;
use gpnn::{
    GpnnModel, GraphMode, HeadSpec, LinkKind, ModelConfig, NodeFilter, NodeKind, SceneGraph, Tensor,
};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| normal(rng)).collect()).unwrap()
}

/// Scene with random features, at least one human and one object, a random
/// symmetric bipartite adjacency and labels for `heads`.
pub fn random_scene(
    rng: &mut impl Rng,
    n: usize,
    dv: usize,
    de: usize,
    heads: &[HeadSpec],
) -> SceneGraph {
    let humans = rng.random_range(1..n);
    let kinds: Vec<NodeKind> = (0..n)
        .map(|v| {
            if v < humans {
                NodeKind::Human
            } else {
                NodeKind::Object
            }
        })
        .collect();
    let mut scene = SceneGraph::new(
        random_tensor(rng, &[n, dv]),
        random_tensor(rng, &[n, n, de]),
        kinds.clone(),
    )
    .unwrap();
    let mut adjacency = Tensor::zeros(&[n, n]);
    for h in 0..humans {
        for o in humans..n {
            if rng.random_bool(0.5) {
                adjacency.set(&[h, o], 1.0);
                adjacency.set(&[o, h], 1.0);
            }
        }
    }
    let labels = heads
        .iter()
        .map(|spec| {
            let mut l = Tensor::zeros(&[n, spec.classes]);
            for v in 0..n {
                match spec.activation {
                    gpnn::ReadoutActivation::Sigmoid => {
                        for k in 0..spec.classes {
                            l.set(&[v, k], f64::from(u8::from(rng.random_bool(0.4))));
                        }
                    }
                    gpnn::ReadoutActivation::Softmax => {
                        l.set(&[v, rng.random_range(0..spec.classes)], 1.0)
                    }
                }
            }
            l
        })
        .collect();
    scene.gt_adjacency = Some(adjacency);
    scene.gt_labels = Some(labels);
    scene
}

pub fn mixed_heads(classes: usize) -> Vec<HeadSpec> {
    vec![
        HeadSpec::sigmoid("multi", classes),
        HeadSpec::softmax("single", classes, NodeFilter::Human),
    ]
}

/// Small model with every parameter (biases included) redrawn from
/// `N(0, scale²)` so that no term of the oracle is trivially zero.
pub fn random_model(
    rng: &mut impl Rng,
    link: LinkKind,
    mode: GraphMode,
    iterations: usize,
    scale: f64,
) -> GpnnModel {
    let widths = match link {
        LinkKind::Mlp => vec![5, 4, 1],
        LinkKind::ConvLstm => vec![3, 1],
    };
    let config = ModelConfig {
        node_dim: 3,
        edge_dim: 2,
        iterations,
        link,
        link_widths: widths,
        link_activation: if rng.random_bool(0.5) {
            Activation::Relu
        } else {
            Activation::Tanh
        },
        mode,
        heads: mixed_heads(3),
    };
    let mut model = GpnnModel::new(config, rng).unwrap();
    for t in model.params.values_mut() {
        for x in t.data_mut() {
            *x = scale * normal(rng);
        }
    }
    model
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `W·x + b` with `W[out×in]`.
pub fn affine(w: &Tensor, b: &Tensor, x: &[f64]) -> Vec<f64> {
    let (out, inp) = (w.shape()[0], w.shape()[1]);
    assert_eq!(inp, x.len());
    (0..out)
        .map(|o| {
            let mut s = b.data()[o];
            for i in 0..inp {
                s += w.at(&[o, i]) * x[i];
            }
            s
        })
        .collect()
}

/// `W·x` with no bias.
pub fn project(w: &Tensor, x: &[f64]) -> Vec<f64> {
    affine(w, &Tensor::zeros(&[w.shape()[0]]), x)
}

pub fn p<'a>(model: &'a GpnnModel, name: &str) -> &'a Tensor {
    model.params.get(
        model
            .params
            .id(name)
            .unwrap_or_else(|| panic!("no parameter {name}")),
    )
}

pub fn act(a: Activation, x: f64) -> f64 {
    match a {
        Activation::Relu => x.max(0.0),
        Activation::Tanh => x.tanh(),
    }
}

/// Per-cell MLP logit of the link network.
pub fn mlp_logit(model: &GpnnModel, x: &[f64]) -> f64 {
    let layers = model.config.link_widths.len();
    let mut h = x.to_vec();
    for l in 0..layers {
        h = affine(
            p(model, &format!("link.{l}.weight")),
            p(model, &format!("link.{l}.bias")),
            &h,
        );
        if l + 1 < layers {
            h = h
                .into_iter()
                .map(|v| act(model.config.link_activation, v))
                .collect();
        }
    }
    h[0]
}

pub fn gru(model: &GpnnModel, h: &[f64], m: &[f64]) -> Vec<f64> {
    let g = |n: &str| p(model, &format!("gru.{n}"));
    let gate = |w: &str, u: &str, b: &str| -> Vec<f64> {
        let a = affine(g(w), g(b), m);
        let c = project(g(u), h);
        a.iter().zip(&c).map(|(x, y)| sigmoid(x + y)).collect()
    };
    let z = gate("Wz", "Uz", "bz");
    let r = gate("Wr", "Ur", "br");
    let wn = affine(g("Wn"), g("bn"), m);
    let un = project(g("Un"), h);
    (0..h.len())
        .map(|i| {
            let n = (wn[i] + r[i] * un[i]).tanh();
            (1.0 - z[i]) * n + z[i] * h[i]
        })
        .collect()
}

/// Hidden and cell vectors of every layer for one grid cell.
pub type CellState = Vec<(Vec<f64>, Vec<f64>)>;

/// One LSTM step of every stacked layer for a single cell.
pub fn lstm_cell(model: &GpnnModel, x: &[f64], state: &CellState) -> CellState {
    let mut input = x.to_vec();
    let mut next = Vec::new();
    for (l, (h, c)) in state.iter().enumerate() {
        let q = |n: &str| p(model, &format!("link.{l}.{n}"));
        let pre = |g: &str| -> Vec<f64> {
            let a = affine(q(&format!("W{g}")), q(&format!("b{g}")), &input);
            let b = project(q(&format!("U{g}")), h);
            a.iter().zip(&b).map(|(x, y)| x + y).collect()
        };
        let (i, f, o, g) = (pre("i"), pre("f"), pre("o"), pre("g"));
        let mut h2 = Vec::new();
        let mut c2 = Vec::new();
        for k in 0..h.len() {
            let ck = sigmoid(f[k]) * c[k] + sigmoid(i[k]) * g[k].tanh();
            c2.push(ck);
            h2.push(sigmoid(o[k]) * ck.tanh());
        }
        input = h2.clone();
        next.push((h2, c2));
    }
    next
}

pub fn zero_cell_state(model: &GpnnModel) -> CellState {
    model
        .config
        .link_widths
        .iter()
        .map(|&w| (vec![0.0; w], vec![0.0; w]))
        .collect()
}

/// Reference trace of one frame: `A^s` and `h^s` for `s = 1..S`, and the
/// per-head outputs.
#[derive(Debug, Clone)]
pub struct OracleParse {
    pub adjacency: Vec<Vec<Vec<f64>>>,
    pub hidden: Vec<Vec<Vec<f64>>>,
    pub outputs: Vec<Vec<Vec<f64>>>,
}

/// Link state per iteration, per cell `(v, w)`.
pub type OracleTemporal = Vec<Option<Vec<Vec<CellState>>>>;

pub fn oracle_parse(
    model: &GpnnModel,
    scene: &SceneGraph,
    temporal: &mut OracleTemporal,
) -> OracleParse {
    let cfg = &model.config;
    let n = scene.node_count();
    let (dv, de) = (cfg.node_dim, cfg.edge_dim);
    let dm = 2 * dv + de;
    let mut h: Vec<Vec<f64>> = (0..n)
        .map(|v| scene.node_features.row(v).to_vec())
        .collect();
    let gamma = |v: usize, w: usize| -> Vec<f64> {
        scene.edge_features.data()[(v * n + w) * de..(v * n + w + 1) * de].to_vec()
    };
    let mut pair: Vec<Vec<Vec<f64>>> = (0..n)
        .map(|v| (0..n).map(|w| gamma(v, w)).collect())
        .collect();
    let mut out = OracleParse {
        adjacency: Vec::new(),
        hidden: Vec::new(),
        outputs: Vec::new(),
    };
    if cfg.mode != GraphMode::NoGraph {
        if temporal.len() < cfg.iterations {
            temporal.resize(cfg.iterations, None);
        }
        for s in 0..cfg.iterations {
            let a: Vec<Vec<f64>> = match cfg.mode {
                GraphMode::ConstantStructure => vec![vec![1.0; n]; n],
                GraphMode::StaticStructure if s > 0 => out.adjacency[0].clone(),
                _ => {
                    let prev = temporal[s].take();
                    let mut cells = vec![vec![Vec::new(); n]; n];
                    let mut a = vec![vec![0.0; n]; n];
                    for v in 0..n {
                        for w in 0..n {
                            let mut x = h[v].clone();
                            x.extend_from_slice(&h[w]);
                            x.extend_from_slice(&pair[v][w]);
                            x.resize(2 * dv + dm, 0.0);
                            let value = match cfg.link {
                                LinkKind::Mlp => sigmoid(mlp_logit(model, &x)),
                                LinkKind::ConvLstm => {
                                    let st = prev.as_ref().map_or_else(
                                        || zero_cell_state(model),
                                        |p| p[v][w].clone(),
                                    );
                                    let next = lstm_cell(model, &x, &st);
                                    let logit = next.last().unwrap().0[0];
                                    cells[v][w] = next;
                                    sigmoid(logit)
                                }
                            };
                            a[v][w] = if v == w { 0.0 } else { value };
                        }
                    }
                    if cfg.link == LinkKind::ConvLstm {
                        temporal[s] = Some(cells);
                    }
                    a
                }
            };
            let node: Vec<Vec<f64>> = h
                .iter()
                .map(|x| {
                    affine(
                        p(model, "message.node.weight"),
                        p(model, "message.node.bias"),
                        x,
                    )
                })
                .collect();
            let mut raw = vec![vec![Vec::new(); n]; n];
            for v in 0..n {
                for w in 0..n {
                    let mut m = node[v].clone();
                    m.extend_from_slice(&node[w]);
                    m.extend(affine(
                        p(model, "message.edge.weight"),
                        p(model, "message.edge.bias"),
                        &gamma(v, w),
                    ));
                    raw[v][w] = m;
                }
            }
            let mut next_h = Vec::with_capacity(n);
            for v in 0..n {
                let mut m = vec![0.0; dm];
                for w in 0..n {
                    if w == v {
                        continue;
                    }
                    for k in 0..dm {
                        m[k] += a[v][w] * raw[v][w][k];
                    }
                }
                next_h.push(gru(model, &h[v], &m));
            }
            h = next_h;
            pair = raw;
            out.adjacency.push(a);
            out.hidden.push(h.clone());
        }
    }
    for spec in &cfg.heads {
        let w = p(model, &format!("readout.{}.weight", spec.name));
        let b = p(model, &format!("readout.{}.bias", spec.name));
        let rows = h
            .iter()
            .map(|x| {
                let z = affine(w, b, x);
                match spec.activation {
                    gpnn::ReadoutActivation::Sigmoid => z.into_iter().map(sigmoid).collect(),
                    gpnn::ReadoutActivation::Softmax => {
                        let mx = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        let e: Vec<f64> = z.iter().map(|x| (x - mx).exp()).collect();
                        let t: f64 = e.iter().sum();
                        e.into_iter().map(|x| x / t).collect()
                    }
                }
            })
            .collect();
        out.outputs.push(rows);
    }
    out
}

pub fn max_diff(t: &Tensor, rows: &[Vec<f64>]) -> f64 {
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    assert_eq!(t.numel(), flat.len(), "shape {:?}", t.shape());
    t.data()
        .iter()
        .zip(&flat)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// Fisher-Yates permutation of `0..n`.
pub fn random_permutation(rng: &mut impl Rng, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        p.swap(i, rng.random_range(0..=i));
    }
    p
}
