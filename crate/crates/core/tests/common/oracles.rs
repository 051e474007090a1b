//! Scalar-loop references for the message aggregation, the edge MLP, the
//! losses, average precision and macro-F1.

use gpnn::eval::{iou, BBox, Detection, HoiInstance};
use gpnn::losses::LossConfig;
use gpnn::nn::Activation;
use gpnn::{GpnnModel, ParamStore, SceneGraph, Tensor};
use rand::Rng;

use super::{act, affine, p, sigmoid};

/// Messages by explicit double loop: `m_v = Σ_{w≠v} A_vw [W h_v + b, W h_w + b, W_E e_vw + b_E]`.
pub fn aggregate_oracle(model: &GpnnModel, scene: &SceneGraph, a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = scene.node_count();
    let de = scene.edge_features.shape()[2];
    let (nw, nb) = (
        p(model, "message.node.weight"),
        p(model, "message.node.bias"),
    );
    let (ew, eb) = (
        p(model, "message.edge.weight"),
        p(model, "message.edge.bias"),
    );
    let width = 2 * nw.shape()[0] + ew.shape()[0];
    let mut want = vec![vec![0.0; width]; n];
    for v in 0..n {
        for w in (0..n).filter(|&w| w != v) {
            let mut raw = affine(nw, nb, scene.node_features.row(v));
            raw.extend(affine(nw, nb, scene.node_features.row(w)));
            let cell = (v * n + w) * de;
            raw.extend(affine(ew, eb, &scene.edge_features.data()[cell..cell + de]));
            for k in 0..width {
                want[v][k] += a[v][w] * raw[k];
            }
        }
    }
    want
}

/// One grid cell through the layers `{prefix}.{l}.weight/bias` with `act`
/// between layers and a sigmoid on the single output.
pub fn edge_mlp_oracle(
    store: &ParamStore,
    prefix: &str,
    layers: usize,
    act_kind: Activation,
    x: &[f64],
) -> f64 {
    let get = |name: String| store.get(store.id(&name).unwrap());
    let mut h = x.to_vec();
    for l in 0..layers {
        h = affine(
            get(format!("{prefix}.{l}.weight")),
            get(format!("{prefix}.{l}.bias")),
            &h,
        );
        if l + 1 < layers {
            h = h.into_iter().map(|v| act(act_kind, v)).collect();
        }
    }
    sigmoid(h[0])
}

pub fn binary(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n)
            .map(|_| f64::from(u8::from(rng.random_bool(0.5))))
            .collect(),
    )
    .unwrap()
}

pub fn uniform(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random::<f64>()).collect(),
    )
    .unwrap()
}

pub fn l1_oracle(a: &Tensor, t: &Tensor) -> f64 {
    let n = a.shape()[0];
    let mut s = 0.0;
    for v in 0..n {
        for w in 0..n {
            if v != w {
                s += (a.at(&[v, w]) - t.at(&[v, w])).abs();
            }
        }
    }
    s / (n * (n - 1)) as f64
}

pub fn hinge_oracle(s: &Tensor, l: &Tensor, w: &[f64], m: f64) -> f64 {
    let (rows, y) = (s.shape()[0], s.shape()[1]);
    let mut total = 0.0;
    for v in 0..rows {
        for k in 0..y {
            let x = s.at(&[v, k]);
            total += w[k]
                * if l.at(&[v, k]) == 1.0 {
                    (m - x).max(0.0)
                } else {
                    (m + x - 1.0).max(0.0)
                };
        }
    }
    total / rows as f64
}

pub fn ce_oracle(p: &Tensor, l: &Tensor) -> f64 {
    let (rows, y) = (p.shape()[0], p.shape()[1]);
    let mut total = 0.0;
    for v in 0..rows {
        for k in 0..y {
            if l.at(&[v, k]) == 1.0 {
                total -= p.at(&[v, k]).max(1e-12).ln();
            }
        }
    }
    total / rows as f64
}

pub fn total_oracle(model: &GpnnModel, scene: &SceneGraph, cfg: &LossConfig) -> f64 {
    let res = model.parse(scene).unwrap();
    let labels = scene.gt_labels.as_ref().unwrap();
    let mut total = 0.0;
    for (h, spec) in model.config.heads.iter().enumerate() {
        let rows: Vec<usize> = (0..scene.node_count())
            .filter(|&v| spec.nodes.accepts(scene.node_kinds[v]))
            .collect();
        if rows.is_empty() {
            continue;
        }
        let pick = |t: &Tensor| gpnn::graph::select_rows(t, &rows);
        let part = match spec.activation {
            gpnn::ReadoutActivation::Sigmoid => hinge_oracle(
                &pick(&res.outputs[h]),
                &pick(&labels[h]),
                &cfg.class_weights[h],
                cfg.hinge_margin,
            ),
            gpnn::ReadoutActivation::Softmax => {
                ce_oracle(&pick(&res.outputs[h]), &pick(&labels[h]))
            }
        };
        total += cfg.head_weights[h] * part;
    }
    let target = scene.gt_adjacency.as_ref().unwrap();
    for t in &res.trace {
        total += cfg.adjacency_weight * l1_oracle(&t.adjacency, target);
    }
    total
}

pub fn random_box(rng: &mut impl Rng) -> BBox {
    let x = rng.random_range(0.0..4.0);
    let y = rng.random_range(0.0..4.0);
    BBox::new(
        x,
        y,
        x + rng.random_range(0.5..2.0),
        y + rng.random_range(0.5..2.0),
    )
}

pub fn jitter(rng: &mut impl Rng, b: BBox) -> BBox {
    let d = |rng: &mut dyn rand::RngCore| rng.random_range(-0.4..0.4);
    BBox::new(b.x1 + d(rng), b.y1 + d(rng), b.x2 + d(rng), b.y2 + d(rng))
}

/// Exhaustive reference: greedy matching by explicit loops, then
/// `(1/G) Σ_ℓ max{precision at ranks whose recall ≥ ℓ/G}`.
pub fn ap_oracle(dets: &[Detection], gts: &[HoiInstance], class: usize) -> f64 {
    let mut order: Vec<usize> = (0..dets.len())
        .filter(|&i| dets[i].class == class)
        .collect();
    // Insertion sort by descending score keeps ties in input order.
    for i in 1..order.len() {
        let mut j = i;
        while j > 0 && dets[order[j - 1]].score < dets[order[j]].score {
            order.swap(j - 1, j);
            j -= 1;
        }
    }
    let g: Vec<&HoiInstance> = gts.iter().filter(|x| x.class == class).collect();
    if g.is_empty() {
        return 0.0;
    }
    let mut used = vec![false; g.len()];
    let mut tp_count = 0usize;
    let mut points = Vec::new();
    for (rank, &i) in order.iter().enumerate() {
        let d = &dets[i];
        for (j, gt) in g.iter().enumerate() {
            if !used[j]
                && gt.image == d.image
                && iou(&gt.human, &d.human) > 0.5
                && iou(&gt.object, &d.object) > 0.5
            {
                used[j] = true;
                tp_count += 1;
                break;
            }
        }
        points.push((tp_count as f64 / (rank + 1) as f64, tp_count));
    }
    let total = g.len();
    let mut ap = 0.0;
    for level in 1..=total {
        let best = points
            .iter()
            .filter(|(_, tp)| *tp >= level)
            .map(|(p, _)| *p)
            .fold(0.0, f64::max);
        ap += best / total as f64;
    }
    ap
}

pub fn random_instance(rng: &mut impl Rng) -> (Vec<Detection>, Vec<HoiInstance>) {
    let mut gts = Vec::new();
    let mut dets = Vec::new();
    for image in 0..rng.random_range(1..4) {
        for _ in 0..rng.random_range(0..4) {
            let g = HoiInstance {
                image,
                class: rng.random_range(0..2),
                human: random_box(rng),
                object: random_box(rng),
            };
            gts.push(g);
            for _ in 0..rng.random_range(0..3) {
                dets.push(Detection {
                    image,
                    class: if rng.random_bool(0.8) {
                        g.class
                    } else {
                        rng.random_range(0..2)
                    },
                    score: (rng.random_range(0..6) as f64) / 5.0,
                    human: jitter(rng, g.human),
                    object: jitter(rng, g.object),
                });
            }
        }
        for _ in 0..rng.random_range(0..3) {
            dets.push(Detection {
                image,
                class: rng.random_range(0..2),
                score: rng.random(),
                human: random_box(rng),
                object: random_box(rng),
            });
        }
    }
    (dets, gts)
}

pub fn f1_oracle(pred: &[usize], truth: &[usize], classes: usize) -> (Vec<Option<f64>>, f64) {
    let mut per = Vec::new();
    for c in 0..classes {
        let support = truth.iter().filter(|&&t| t == c).count();
        if support == 0 {
            per.push(None);
            continue;
        }
        let tp = pred
            .iter()
            .zip(truth)
            .filter(|(p, t)| **p == c && **t == c)
            .count() as f64;
        let predicted = pred.iter().filter(|&&p| p == c).count() as f64;
        let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let recall = tp / support as f64;
        per.push(Some(if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        }));
    }
    let scored: Vec<f64> = per.iter().flatten().copied().collect();
    let m = if scored.is_empty() {
        0.0
    } else {
        scored.iter().sum::<f64>() / scored.len() as f64
    };
    (per, m)
}
