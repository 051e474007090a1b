use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::graph::{NodeKind, SceneGraph};
use crate::model::{GpnnModel, ReadoutActivation};
use crate::synth::Dataset;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::train::{label_accuracy, units, Task};

use super::classification::{confusion, macro_f1, F1Report};
use super::detection::{class_counts, grouped_map, Detection, GroupedMap, HoiInstance};
use super::roc::roc_auc;

#[derive(Debug, Clone, PartialEq)]
pub struct HeadReport {
    pub name: String,
    pub f1: F1Report,
    /// `counts[true][predicted]` over the nodes the head applies to.
    pub confusion: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionReport {
    pub map: GroupedMap,
    pub detections: usize,
    pub ground_truth: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub task: Task,
    /// One entry per softmax head.
    pub heads: Vec<HeadReport>,
    /// Pair detection scored from the first sigmoid head, when boxes exist.
    pub detection: Option<DetectionReport>,
    /// ROC-AUC of the final adjacency against the ground truth, when both
    /// classes occur.
    pub adjacency_auc: Option<f64>,
    pub label_accuracy: f64,
}

impl EvalReport {
    /// Headline number: macro-F1 of the first softmax head, otherwise full
    /// mAP, otherwise label accuracy.
    pub fn primary(&self) -> f64 {
        if let Some(h) = self.heads.first() {
            h.f1.macro_f1
        } else if let Some(d) = &self.detection {
            d.map.full
        } else {
            self.label_accuracy
        }
    }

    /// `section,name,class,value` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("section,name,class,value\n");
        let mut row = |section: &str, name: &str, class: &str, value: f64| {
            let _ = writeln!(out, "{section},{name},{class},{value}");
        };
        row("summary", "primary", "", self.primary());
        row("summary", "label_accuracy", "", self.label_accuracy);
        if let Some(a) = self.adjacency_auc {
            row("summary", "adjacency_auc", "", a);
        }
        if let Some(d) = &self.detection {
            row("map", "full", "", d.map.full);
            if let Some(r) = d.map.rare {
                row("map", "rare", "", r);
            }
            if let Some(r) = d.map.non_rare {
                row("map", "non_rare", "", r);
            }
            for (c, ap) in d.map.per_class.iter().enumerate() {
                if let Some(ap) = ap {
                    row("ap", "class", &c.to_string(), *ap);
                }
            }
        }
        for h in &self.heads {
            row("f1", &h.name, "macro", h.f1.macro_f1);
            for (c, f) in h.f1.per_class.iter().enumerate() {
                if let Some(f) = f {
                    row("f1", &h.name, &c.to_string(), *f);
                }
            }
            for (t, counts) in h.confusion.iter().enumerate() {
                for (p, &k) in counts.iter().enumerate() {
                    row("confusion", &h.name, &format!("{t}>{p}"), k as f64);
                }
            }
        }
        out
    }
}

/// Ground-truth pairs of a scene: every annotated human-object edge, once
/// per class shared by both endpoint label sets of `head`.
pub fn scene_instances(scene: &SceneGraph, image: u64, head: usize) -> Result<Vec<HoiInstance>> {
    let boxes = scene
        .boxes
        .as_ref()
        .ok_or(Error::MissingGroundTruth("boxes"))?;
    let adjacency = scene
        .gt_adjacency
        .as_ref()
        .ok_or(Error::MissingGroundTruth("adjacency"))?;
    let labels = &scene
        .gt_labels
        .as_ref()
        .ok_or(Error::MissingGroundTruth("node labels"))?[head];
    let mut out = Vec::new();
    for h in scene.humans() {
        for o in scene.objects() {
            if adjacency.at(&[h, o]) != 1.0 {
                continue;
            }
            for c in 0..labels.shape()[1] {
                if labels.at(&[h, c]) == 1.0 && labels.at(&[o, c]) == 1.0 {
                    out.push(HoiInstance {
                        image,
                        class: c,
                        human: boxes[h],
                        object: boxes[o],
                    });
                }
            }
        }
    }
    Ok(out)
}

/// One detection per (human, object, class) of every frame, scored by the
/// product of the two nodes' probabilities on sigmoid head `head`. Frames
/// are numbered consecutively as image ids.
pub fn detections(
    model: &GpnnModel,
    frames: &[Vec<SceneGraph>],
    head: usize,
) -> Result<(Vec<Detection>, Vec<HoiInstance>)> {
    let mut dets = Vec::new();
    let mut gts = Vec::new();
    let mut image = 0u64;
    for unit in frames {
        for (res, scene) in model.parse_sequence(unit)?.iter().zip(unit) {
            let boxes = scene
                .boxes
                .as_ref()
                .ok_or(Error::MissingGroundTruth("boxes"))?;
            let classes = res.outputs[head].shape()[1];
            for h in scene.humans() {
                for o in scene.objects() {
                    for class in 0..classes {
                        dets.push(Detection {
                            image,
                            class,
                            score: res.pair_score(h, o, head, class)?,
                            human: boxes[h],
                            object: boxes[o],
                        });
                    }
                }
            }
            gts.extend(scene_instances(scene, image, head)?);
            image += 1;
        }
    }
    Ok((dets, gts))
}

/// Evaluates `model` on `data` under `task`. `train_counts` gives per-class
/// training-instance counts for the rare split; the evaluated data's own
/// counts are used otherwise.
/// Arg-max with exact ties broken uniformly by `rng`; draws only on ties.
pub fn argmax_tiebreak<R: Rng>(xs: &[f64], rng: &mut R) -> usize {
    let best = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tied: Vec<usize> = (0..xs.len()).filter(|&i| xs[i] == best).collect();
    match tied.len() {
        0 => 0,
        1 => tied[0],
        k => tied[rng.random_range(0..k)],
    }
}

/// [`evaluate_seeded`] with tie seed 0.
pub fn evaluate(
    model: &GpnnModel,
    data: &Dataset,
    task: Task,
    train_counts: Option<&[usize]>,
) -> Result<EvalReport> {
    evaluate_seeded(model, data, task, train_counts, 0)
}

/// Scores `model` on `data`. Softmax predictions with exactly tied maxima
/// (a zero-logit model, say) are resolved by a stream seeded with
/// `tie_seed`, so an uninformative model scores at chance rather than
/// always predicting class 0.
pub fn evaluate_seeded(
    model: &GpnnModel,
    data: &Dataset,
    task: Task,
    train_counts: Option<&[usize]>,
    tie_seed: u64,
) -> Result<EvalReport> {
    let mut ties = ChaCha8Rng::seed_from_u64(tie_seed);
    let units = units(data, task)?;
    let heads: Vec<_> = model.heads().cloned().collect();
    let mut preds: Vec<(Vec<usize>, Vec<usize>)> = vec![(Vec::new(), Vec::new()); heads.len()];
    let mut scores = Vec::new();
    let mut positives = Vec::new();
    for unit in &units {
        for (res, scene) in model.parse_sequence(unit)?.iter().zip(unit) {
            let labels = scene
                .gt_labels
                .as_ref()
                .ok_or(Error::MissingGroundTruth("node labels"))?;
            for (h, spec) in heads.iter().enumerate() {
                if spec.activation != ReadoutActivation::Softmax {
                    continue;
                }
                for v in
                    (0..scene.node_count()).filter(|&v| spec.nodes.accepts(scene.node_kinds[v]))
                {
                    preds[h]
                        .0
                        .push(argmax_tiebreak(res.outputs[h].row(v), &mut ties));
                    preds[h].1.push(crate::train::argmax(labels[h].row(v)));
                }
            }
            if let Some(g) = &scene.gt_adjacency {
                let n = scene.node_count();
                for v in 0..n {
                    for w in (0..n).filter(|&w| w != v) {
                        scores.push(res.adjacency.at(&[v, w]));
                        positives.push(g.at(&[v, w]) == 1.0);
                    }
                }
            }
        }
    }
    let head_reports = heads
        .iter()
        .enumerate()
        .filter(|(_, s)| s.activation == ReadoutActivation::Softmax)
        .map(|(h, s)| {
            let (p, t) = &preds[h];
            Ok(HeadReport {
                name: s.name.clone(),
                f1: macro_f1(p, t, s.classes)?,
                confusion: confusion(p, t, s.classes)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let has_boxes = data.scenes().all(|s| s.boxes.is_some());
    let sigmoid_head = heads
        .iter()
        .position(|s| s.activation == ReadoutActivation::Sigmoid);
    let detection = match sigmoid_head {
        Some(h)
            if has_boxes
                && data
                    .scenes()
                    .any(|s| s.node_kinds.contains(&NodeKind::Human)) =>
        {
            let (dets, gts) = detections(model, &units, h)?;
            let classes = heads[h].classes;
            let counts = match train_counts {
                Some(c) => c.to_vec(),
                None => class_counts(&gts, classes),
            };
            Some(DetectionReport {
                map: grouped_map(&dets, &gts, &counts),
                detections: dets.len(),
                ground_truth: gts.len(),
            })
        }
        _ => None,
    };
    Ok(EvalReport {
        task,
        heads: head_reports,
        detection,
        adjacency_auc: roc_auc(&scores, &positives).ok(),
        label_accuracy: label_accuracy(model, &units)?,
    })
}

/// Per-class training-instance counts of sigmoid head `head`.
pub fn training_counts(data: &Dataset, head: usize) -> Result<Vec<usize>> {
    let classes = data
        .heads
        .get(head)
        .ok_or(Error::IndexOutOfRange {
            op: "training_counts",
            index: head,
            len: data.heads.len(),
        })?
        .classes;
    let mut all = Vec::new();
    for (i, s) in data.scenes().enumerate() {
        all.extend(scene_instances(s, i as u64, head)?);
    }
    Ok(class_counts(&all, classes))
}
