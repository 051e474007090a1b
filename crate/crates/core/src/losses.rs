//! Training objectives: L1 supervision of the adjacency, a weighted
//! multi-label hinge for sigmoid heads and cross entropy for softmax heads.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{select_rows, NodeKind, SceneGraph};
use crate::model::{HeadSpec, ParseVars, ReadoutActivation};
use crate::tensor::Tensor;

/// Probability floor inside the cross-entropy log.
pub const CE_FLOOR: f64 = 1e-12;
/// Upper bound on inverse-frequency class weights.
pub const MAX_CLASS_WEIGHT: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// `λ_A`, weight of the adjacency term.
    pub adjacency_weight: f64,
    pub hinge_margin: f64,
    /// Per-head class weights for sigmoid heads; empty means all ones.
    pub class_weights: Vec<Vec<f64>>,
    /// Per-head weights; empty means all ones.
    pub head_weights: Vec<f64>,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            adjacency_weight: 1.0,
            hinge_margin: 1.0,
            class_weights: Vec::new(),
            head_weights: Vec::new(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.adjacency_weight >= 0.0) {
            return Err(Error::Config("adjacency_weight must be nonnegative".into()));
        }
        if !(self.hinge_margin > 0.0 && self.hinge_margin <= 1.0) {
            return Err(Error::Config("hinge_margin must lie in (0, 1]".into()));
        }
        let bad = self
            .class_weights
            .iter()
            .flatten()
            .chain(&self.head_weights)
            .any(|&w| !(w >= 0.0));
        if bad {
            return Err(Error::Config("loss weights must be nonnegative".into()));
        }
        Ok(())
    }

    fn head_weight(&self, h: usize) -> f64 {
        self.head_weights.get(h).copied().unwrap_or(1.0)
    }

    fn class_weights_for(&self, h: usize, classes: usize) -> Vec<f64> {
        match self.class_weights.get(h) {
            Some(w) if w.len() == classes => w.clone(),
            _ => vec![1.0; classes],
        }
    }
}

/// Inverse-frequency class weights `N / (Y·N_k)`, capped at
/// [`MAX_CLASS_WEIGHT`]. `labels` are `[rows×Y]` 0/1 matrices.
pub fn inverse_frequency_weights<'a>(labels: impl IntoIterator<Item = &'a Tensor>) -> Vec<f64> {
    let mut counts: Vec<f64> = Vec::new();
    let mut rows = 0.0;
    for l in labels {
        let y = l.shape()[1];
        if counts.is_empty() {
            counts = vec![0.0; y];
        }
        rows += l.shape()[0] as f64;
        for r in 0..l.shape()[0] {
            for (c, &x) in counts.iter_mut().zip(l.row(r)) {
                *c += x;
            }
        }
    }
    let y = counts.len() as f64;
    counts
        .iter()
        .map(|&nk| {
            if nk == 0.0 {
                MAX_CLASS_WEIGHT
            } else {
                (rows / (y * nk)).min(MAX_CLASS_WEIGHT)
            }
        })
        .collect()
}

fn off_diagonal_indices(n: usize) -> Vec<usize> {
    (0..n * n).filter(|i| i / n != i % n).collect()
}

fn check_binary(t: &Tensor, what: &str) -> Result<()> {
    if let Some(x) = t.data().iter().find(|&&x| x != 0.0 && x != 1.0) {
        return Err(Error::InvalidLabel(format!(
            "{what} entry {x} is not 0 or 1"
        )));
    }
    Ok(())
}

/// Mean absolute difference between `adjacency` and `target` over the
/// off-diagonal entries.
pub fn adjacency_l1(tape: &mut Tape, adjacency: Var, target: &Tensor) -> Result<Var> {
    let shape = tape.shape(adjacency).to_vec();
    if shape != target.shape() || shape.len() != 2 || shape[0] != shape[1] {
        return Err(Error::shape("adjacency_l1", &shape, target.shape()));
    }
    check_binary(target, "adjacency target")?;
    let n = shape[0];
    if n < 2 {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let idx = off_diagonal_indices(n);
    let flat = tape.reshape(adjacency, &[n * n])?;
    let picked = tape.gather_rows(flat, &idx)?;
    let t: Vec<f64> = idx.iter().map(|&i| target.data()[i]).collect();
    let t = tape.constant(Tensor::vector(t));
    tape.l1(picked, t)
}

/// Weighted two-sided hinge on probabilities in `[0, 1]`:
/// `Σ_k w_k · (y=1: max(0, m − s) ; y=0: max(0, m + s − 1))`, averaged over rows.
pub fn hinge_multilabel(
    tape: &mut Tape,
    scores: Var,
    labels: &Tensor,
    class_weights: &[f64],
    margin: f64,
) -> Result<Var> {
    let shape = tape.shape(scores).to_vec();
    if shape != labels.shape() || shape.len() != 2 {
        return Err(Error::shape("hinge_multilabel", &shape, labels.shape()));
    }
    if class_weights.len() != shape[1] {
        return Err(Error::shape(
            "hinge_multilabel.weights",
            &[class_weights.len()],
            &[shape[1]],
        ));
    }
    check_binary(labels, "label")?;
    let (rows, y) = (shape[0], shape[1]);

    let neg_s = tape.scale(scores, -1.0)?;
    let pos_gap = tape.add_scalar(neg_s, margin)?;
    let pos = tape.relu(pos_gap)?;
    let neg_gap = tape.add_scalar(scores, margin - 1.0)?;
    let neg = tape.relu(neg_gap)?;

    let mut pos_w = Vec::with_capacity(rows * y);
    let mut neg_w = Vec::with_capacity(rows * y);
    for r in 0..rows {
        for (k, &l) in labels.row(r).iter().enumerate() {
            pos_w.push(l * class_weights[k]);
            neg_w.push((1.0 - l) * class_weights[k]);
        }
    }
    let pos_w = tape.constant(Tensor::from_parts(shape.clone(), pos_w));
    let neg_w = tape.constant(Tensor::from_parts(shape, neg_w));
    let a = tape.mul(pos, pos_w)?;
    let b = tape.mul(neg, neg_w)?;
    let total = tape.add(a, b)?;
    let total = tape.sum_all(total)?;
    tape.scale(total, 1.0 / rows as f64)
}

/// Mean of `−ln max(p_true, 1e-12)` over rows of a row-stochastic matrix.
pub fn cross_entropy(tape: &mut Tape, probs: Var, labels: &Tensor) -> Result<Var> {
    let shape = tape.shape(probs).to_vec();
    if shape != labels.shape() || shape.len() != 2 {
        return Err(Error::shape("cross_entropy", &shape, labels.shape()));
    }
    let (rows, y) = (shape[0], shape[1]);
    let p = tape.value(probs);
    let mut picks = Vec::with_capacity(rows);
    for r in 0..rows {
        let total: f64 = p.row(r).iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidLabel(format!(
                "probability row {r} sums to {total}, not 1"
            )));
        }
        let row = labels.row(r);
        check_binary(&Tensor::vector(row.to_vec()), "one-hot label")?;
        let hot: Vec<usize> = (0..y).filter(|&k| row[k] == 1.0).collect();
        if hot.len() != 1 {
            return Err(Error::InvalidLabel(format!(
                "row {r} has {} active classes, expected exactly one",
                hot.len()
            )));
        }
        picks.push(r * y + hot[0]);
    }
    let flat = tape.reshape(probs, &[rows * y])?;
    let picked = tape.gather_rows(flat, &picks)?;
    let logs = tape.log_clamped(picked, CE_FLOOR)?;
    let total = tape.sum_all(logs)?;
    tape.scale(total, -1.0 / rows as f64)
}

/// Supervision targets for one parse.
#[derive(Debug, Clone, Copy)]
pub struct Targets<'a> {
    pub adjacency: &'a Tensor,
    /// One `[n×Y]` matrix per head.
    pub labels: &'a [Tensor],
}

impl<'a> Targets<'a> {
    pub fn of(scene: &'a SceneGraph) -> Result<Self> {
        Ok(Targets {
            adjacency: scene
                .gt_adjacency
                .as_ref()
                .ok_or(Error::MissingGroundTruth("adjacency"))?,
            labels: scene
                .gt_labels
                .as_ref()
                .ok_or(Error::MissingGroundTruth("node labels"))?,
        })
    }
}

/// Scalar loss on the tape plus its parts as plain numbers.
#[derive(Debug, Clone)]
pub struct LossParts {
    pub total: Var,
    pub heads: Vec<f64>,
    pub adjacency: f64,
}

/// Loss of one head over the nodes it applies to, or `None` if no node
/// qualifies.
pub fn head_loss(
    tape: &mut Tape,
    output: Var,
    labels: &Tensor,
    spec: &HeadSpec,
    kinds: &[NodeKind],
    class_weights: &[f64],
    margin: f64,
) -> Result<Option<Var>> {
    let rows: Vec<usize> = (0..kinds.len())
        .filter(|&v| spec.nodes.accepts(kinds[v]))
        .collect();
    if rows.is_empty() {
        return Ok(None);
    }
    let out = tape.gather_rows(output, &rows)?;
    let lab = select_rows(labels, &rows);
    let loss = match spec.activation {
        ReadoutActivation::Sigmoid => hinge_multilabel(tape, out, &lab, class_weights, margin)?,
        ReadoutActivation::Softmax => cross_entropy(tape, out, &lab)?,
    };
    Ok(Some(loss))
}

/// `Σ_h head_weight·head_loss + λ_A · Σ_s adjacency_l1(A^s, target)`.
pub fn total_loss(
    tape: &mut Tape,
    vars: &ParseVars,
    targets: Targets<'_>,
    heads: &[HeadSpec],
    kinds: &[NodeKind],
    cfg: &LossConfig,
) -> Result<LossParts> {
    if targets.labels.len() != heads.len() || vars.outputs.len() != heads.len() {
        return Err(Error::shape(
            "total_loss.heads",
            &[heads.len()],
            &[targets.labels.len(), vars.outputs.len()],
        ));
    }
    let n = kinds.len();
    for (l, h) in targets.labels.iter().zip(heads) {
        if l.shape() != [n, h.classes] {
            return Err(Error::shape(
                "total_loss.labels",
                l.shape(),
                &[n, h.classes],
            ));
        }
    }
    let mut terms = Vec::new();
    let mut head_values = Vec::with_capacity(heads.len());
    for (h, spec) in heads.iter().enumerate() {
        let w = cfg.class_weights_for(h, spec.classes);
        match head_loss(
            tape,
            vars.outputs[h],
            &targets.labels[h],
            spec,
            kinds,
            &w,
            cfg.hinge_margin,
        )? {
            Some(l) => {
                head_values.push(tape.value(l).item());
                terms.push(tape.scale(l, cfg.head_weight(h))?);
            }
            None => head_values.push(0.0),
        }
    }
    let mut adjacency = 0.0;
    if cfg.adjacency_weight > 0.0 {
        for &a in &vars.adjacency {
            let l = adjacency_l1(tape, a, targets.adjacency)?;
            adjacency += tape.value(l).item();
            terms.push(tape.scale(l, cfg.adjacency_weight)?);
        }
    }
    let total = match terms.split_first() {
        None => tape.constant(Tensor::scalar(0.0)),
        Some((&first, rest)) => {
            let mut acc = first;
            for &t in rest {
                acc = tape.add(acc, t)?;
            }
            acc
        }
    };
    Ok(LossParts {
        total,
        heads: head_values,
        adjacency,
    })
}
