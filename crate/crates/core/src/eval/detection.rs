use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// IoU threshold a detection must exceed on both boxes to count as a match.
pub const IOU_THRESHOLD: f64 = 0.5;
/// Classes with fewer training instances than this form the "rare" group.
pub const RARE_THRESHOLD: usize = 10;

/// Axis-aligned rectangle `[x1, x2) × [y1, y2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        BBox { x1, y1, x2, y2 }
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1).max(0.0) * (self.y2 - self.y1).max(0.0)
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

/// Intersection over union; degenerate or disjoint boxes give 0.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let w = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let h = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = w * h;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 || inter <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// A scored (human box, object box, interaction class) triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image: u64,
    pub class: usize,
    pub score: f64,
    pub human: BBox,
    pub object: BBox,
}

/// A ground-truth interacting pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoiInstance {
    pub image: u64,
    pub class: usize,
    pub human: BBox,
    pub object: BBox,
}

impl HoiInstance {
    fn matches(&self, d: &Detection) -> bool {
        self.image == d.image
            && self.class == d.class
            && iou(&self.human, &d.human) > IOU_THRESHOLD
            && iou(&self.object, &d.object) > IOU_THRESHOLD
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApResult {
    pub ap: f64,
    pub num_ground_truth: usize,
    pub num_detections: usize,
    /// Per detection in descending-score order: true positive or not.
    pub true_positives: Vec<bool>,
    /// Set when detections exist for a class without ground truth.
    pub no_ground_truth: bool,
}

/// Average precision for one class.
///
/// Detections are visited by descending score (stable, so ties keep input
/// order). Each is a true positive when some still unmatched ground-truth
/// pair of the class passes the IoU test on both boxes; the first such pair
/// is consumed. AP integrates the precision envelope over every recall step.
pub fn match_and_ap(
    detections: &[Detection],
    ground_truth: &[HoiInstance],
    class: usize,
) -> ApResult {
    let mut dets: Vec<&Detection> = detections.iter().filter(|d| d.class == class).collect();
    dets.sort_by(|a, b| b.score.total_cmp(&a.score));
    let gts: Vec<&HoiInstance> = ground_truth.iter().filter(|g| g.class == class).collect();

    let mut used = vec![false; gts.len()];
    let mut tps = Vec::with_capacity(dets.len());
    for d in &dets {
        let hit = gts
            .iter()
            .enumerate()
            .find(|(j, g)| !used[*j] && g.matches(d))
            .map(|(j, _)| j);
        if let Some(j) = hit {
            used[j] = true;
        }
        tps.push(hit.is_some());
    }

    let ap = if gts.is_empty() {
        0.0
    } else {
        average_precision(&tps, gts.len())
    };
    ApResult {
        ap,
        num_ground_truth: gts.len(),
        num_detections: dets.len(),
        true_positives: tps,
        no_ground_truth: gts.is_empty() && !dets.is_empty(),
    }
}

/// All-points interpolated AP from a ranked TP/FP list.
fn average_precision(tps: &[bool], num_gt: usize) -> f64 {
    let mut precision = Vec::with_capacity(tps.len());
    let mut recall = Vec::with_capacity(tps.len());
    let mut tp = 0usize;
    for (i, &t) in tps.iter().enumerate() {
        if t {
            tp += 1;
        }
        precision.push(tp as f64 / (i + 1) as f64);
        recall.push(tp as f64 / num_gt as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    ap
}

/// Mean AP over all, rare and non-rare classes.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedMap {
    /// Indexed by class; `None` for classes without test ground truth.
    pub per_class: Vec<Option<f64>>,
    pub full: f64,
    pub rare: Option<f64>,
    pub non_rare: Option<f64>,
}

/// Per-class AP plus the full / rare / non-rare means. A class is rare when
/// its training-instance count is below [`RARE_THRESHOLD`]. Classes without
/// test ground truth are left out of every mean.
pub fn grouped_map(
    detections: &[Detection],
    ground_truth: &[HoiInstance],
    train_counts: &[usize],
) -> GroupedMap {
    let classes = train_counts.len();
    let per_class: Vec<Option<f64>> = (0..classes)
        .map(|c| {
            let r = match_and_ap(detections, ground_truth, c);
            (r.num_ground_truth > 0).then_some(r.ap)
        })
        .collect();
    let mean = |pred: &dyn Fn(usize) -> bool| {
        let vals: Vec<f64> = (0..classes)
            .filter(|&c| pred(c))
            .filter_map(|c| per_class[c])
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    GroupedMap {
        full: mean(&|_| true).unwrap_or(0.0),
        rare: mean(&|c| train_counts[c] < RARE_THRESHOLD),
        non_rare: mean(&|c| train_counts[c] >= RARE_THRESHOLD),
        per_class,
    }
}

/// Writes line records `image,class,score,hx1,hy1,hx2,hy2,ox1,oy1,ox2,oy2`.
pub fn write_records(detections: &[Detection]) -> String {
    let mut out = String::new();
    for d in detections {
        let _ = write!(out, "{},{},{}", d.image, d.class, d.score);
        for v in d.human.to_array().iter().chain(&d.object.to_array()) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// Parses records written by [`write_records`]. Blank lines and lines
/// starting with `#` are skipped.
pub fn parse_records(text: &str) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 11 {
            return Err(Error::Malformed(format!(
                "line {}: expected 11 fields, found {}",
                no + 1,
                fields.len()
            )));
        }
        let bad = |what: &str| Error::Malformed(format!("line {}: bad {what}", no + 1));
        let image = fields[0].parse().map_err(|_| bad("image id"))?;
        let class = fields[1].parse().map_err(|_| bad("class"))?;
        let nums = fields[2..]
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| bad("number")))
            .collect::<Result<Vec<_>>>()?;
        out.push(Detection {
            image,
            class,
            score: nums[0],
            human: BBox::new(nums[1], nums[2], nums[3], nums[4]),
            object: BBox::new(nums[5], nums[6], nums[7], nums[8]),
        });
    }
    Ok(out)
}

/// Number of ground-truth pairs per class, e.g. for the rare split.
pub fn class_counts(instances: &[HoiInstance], classes: usize) -> Vec<usize> {
    let mut counts = vec![0; classes];
    for i in instances.iter().filter(|i| i.class < classes) {
        counts[i.class] += 1;
    }
    counts
}
