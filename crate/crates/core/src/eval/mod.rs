//! Evaluation protocols: detection mAP over human-object pairs, macro-F1 and
//! confusion matrices for per-node recognition, ROC-AUC for the inferred
//! structure, and the ablation harness.

pub mod ablation;
mod classification;
mod detection;
mod report;
mod roc;

pub use classification::{anticipation_pairs, anticipation_shift, confusion, macro_f1, F1Report};
pub use detection::{
    class_counts, grouped_map, iou, match_and_ap, parse_records, write_records, ApResult, BBox,
    Detection, GroupedMap, HoiInstance, RARE_THRESHOLD,
};
pub use report::{
    argmax_tiebreak, detections, evaluate, evaluate_seeded, scene_instances, training_counts,
    DetectionReport, EvalReport, HeadReport,
};
pub use roc::roc_auc;
