use crate::error::{Error, Result};
use crate::graph::SceneGraph;

#[derive(Debug, Clone, PartialEq)]
pub struct F1Report {
    /// `None` for classes with zero support.
    pub per_class: Vec<Option<f64>>,
    /// Mean over classes with non-zero support.
    pub macro_f1: f64,
    /// Classes left out of the mean because they never occur in `labels`.
    pub excluded: Vec<usize>,
}

fn check(predictions: &[usize], labels: &[usize], classes: usize) -> Result<()> {
    if predictions.len() != labels.len() {
        return Err(Error::shape(
            "macro_f1",
            &[predictions.len()],
            &[labels.len()],
        ));
    }
    if let Some(&c) = predictions.iter().chain(labels).find(|&&c| c >= classes) {
        return Err(Error::InvalidLabel(format!(
            "class {c} out of range for {classes} classes"
        )));
    }
    Ok(())
}

/// `counts[true][predicted]`.
pub fn confusion(
    predictions: &[usize],
    labels: &[usize],
    classes: usize,
) -> Result<Vec<Vec<usize>>> {
    check(predictions, labels, classes)?;
    let mut m = vec![vec![0; classes]; classes];
    for (&p, &t) in predictions.iter().zip(labels) {
        m[t][p] += 1;
    }
    Ok(m)
}

/// Unweighted mean of per-class F1. A class with support but no correct
/// prediction scores 0.
pub fn macro_f1(predictions: &[usize], labels: &[usize], classes: usize) -> Result<F1Report> {
    let m = confusion(predictions, labels, classes)?;
    let mut per_class = Vec::with_capacity(classes);
    let mut excluded = Vec::new();
    for c in 0..classes {
        let support: usize = m[c].iter().sum();
        if support == 0 {
            per_class.push(None);
            excluded.push(c);
            continue;
        }
        let tp = m[c][c];
        let fp: usize = (0..classes).map(|t| m[t][c]).sum::<usize>() - tp;
        let fn_ = support - tp;
        per_class.push(Some(2.0 * tp as f64 / (2 * tp + fp + fn_) as f64));
    }
    let scored: Vec<f64> = per_class.iter().flatten().copied().collect();
    let macro_f1 = if scored.is_empty() {
        0.0
    } else {
        scored.iter().sum::<f64>() / scored.len() as f64
    };
    Ok(F1Report {
        per_class,
        macro_f1,
        excluded,
    })
}

/// `(input frame, target frame)` index pairs for one-step anticipation:
/// frame `t-1` features predict frame `t` labels.
pub fn anticipation_pairs(frames: usize) -> Result<Vec<(usize, usize)>> {
    if frames < 2 {
        return Err(Error::Config(format!(
            "anticipation needs at least 2 frames, got {frames}"
        )));
    }
    Ok((1..frames).map(|t| (t - 1, t)).collect())
}

/// Anticipation training frames: frame `t-1` observations (features and
/// structure) paired with frame `t` node labels.
pub fn anticipation_shift(frames: &[SceneGraph]) -> Result<Vec<SceneGraph>> {
    anticipation_pairs(frames.len())?
        .into_iter()
        .map(|(i, t)| {
            if frames[i].node_kinds != frames[t].node_kinds {
                return Err(Error::Malformed(format!(
                    "frames {i} and {t} have different nodes"
                )));
            }
            let mut s = frames[i].clone();
            s.gt_labels = frames[t].gt_labels.clone();
            Ok(s)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_predictor_on_balanced_binary() {
        let r = macro_f1(&[0, 0, 0, 0], &[0, 0, 1, 1], 2).unwrap();
        assert!((r.per_class[0].unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.per_class[1], Some(0.0));
        assert!((r.macro_f1 - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn zero_support_is_flagged() {
        let r = macro_f1(&[0, 1], &[0, 1], 3).unwrap();
        assert_eq!(r.excluded, vec![2]);
        assert_eq!(r.macro_f1, 1.0);
        assert!(macro_f1(&[3], &[0], 3).is_err());
        assert!(macro_f1(&[0, 0], &[0], 3).is_err());
    }

    #[test]
    fn shift_yields_t_minus_one_pairs() {
        assert_eq!(anticipation_pairs(3).unwrap(), vec![(0, 1), (1, 2)]);
        assert!(anticipation_pairs(1).is_err());
    }
}
