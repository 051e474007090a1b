//! Scene graphs: one fully connected human-object graph with features and
//! optional ground truth.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::BBox;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeKind {
    Human,
    Object,
}

impl NodeKind {
    pub fn code(self) -> u8 {
        match self {
            NodeKind::Human => 0,
            NodeKind::Object => 1,
        }
    }

    pub fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(NodeKind::Human),
            1 => Ok(NodeKind::Object),
            _ => Err(Error::Malformed(format!("unknown node kind code {c}"))),
        }
    }
}

/// A complete graph over the detected humans and objects of one frame.
///
/// Edge features are stored for every ordered pair, the diagonal included.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneGraph {
    /// `[n×d_V]`
    pub node_features: Tensor,
    /// `[n×n×d_E]`
    pub edge_features: Tensor,
    pub node_kinds: Vec<NodeKind>,
    /// `[n×n]`, symmetric 0/1 with a zero diagonal.
    pub gt_adjacency: Option<Tensor>,
    /// One `[n×Y_h]` 0/1 matrix per readout head.
    pub gt_labels: Option<Vec<Tensor>>,
    pub boxes: Option<Vec<BBox>>,
}

impl SceneGraph {
    pub fn new(
        node_features: Tensor,
        edge_features: Tensor,
        node_kinds: Vec<NodeKind>,
    ) -> Result<Self> {
        let g = SceneGraph {
            node_features,
            edge_features,
            node_kinds,
            gt_adjacency: None,
            gt_labels: None,
            boxes: None,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn node_count(&self) -> usize {
        self.node_kinds.len()
    }

    pub fn node_dim(&self) -> usize {
        self.node_features.shape().get(1).copied().unwrap_or(0)
    }

    pub fn edge_dim(&self) -> usize {
        self.edge_features.shape().get(2).copied().unwrap_or(0)
    }

    pub fn humans(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes_of(NodeKind::Human)
    }

    pub fn objects(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes_of(NodeKind::Object)
    }

    pub fn nodes_of(&self, kind: NodeKind) -> impl Iterator<Item = usize> + '_ {
        self.node_kinds
            .iter()
            .enumerate()
            .filter(move |(_, &k)| k == kind)
            .map(|(i, _)| i)
    }

    /// Checks shapes and ground-truth invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.node_kinds.len();
        let nf = self.node_features.shape();
        if nf.len() != 2 || nf[0] != n {
            return Err(Error::shape("scene.node_features", nf, &[n]));
        }
        let ef = self.edge_features.shape();
        if ef.len() != 3 || ef[0] != n || ef[1] != n {
            return Err(Error::shape("scene.edge_features", ef, &[n, n]));
        }
        if let Some(a) = &self.gt_adjacency {
            if a.shape() != [n, n] {
                return Err(Error::shape("scene.gt_adjacency", a.shape(), &[n, n]));
            }
            for v in 0..n {
                for w in 0..n {
                    let x = a.at(&[v, w]);
                    if x != 0.0 && x != 1.0 {
                        return Err(Error::InvalidLabel(format!(
                            "adjacency entry {x} at ({v},{w})"
                        )));
                    }
                    if x != a.at(&[w, v]) || (v == w && x != 0.0) {
                        return Err(Error::InvalidLabel(format!(
                            "adjacency must be symmetric with a zero diagonal; violated at ({v},{w})"
                        )));
                    }
                }
            }
        }
        if let Some(labels) = &self.gt_labels {
            for l in labels {
                if l.rank() != 2 || l.shape()[0] != n {
                    return Err(Error::shape("scene.gt_labels", l.shape(), &[n]));
                }
                if l.data().iter().any(|&x| x != 0.0 && x != 1.0) {
                    return Err(Error::InvalidLabel("labels must be 0/1".into()));
                }
            }
        }
        if let Some(b) = &self.boxes {
            if b.len() != n {
                return Err(Error::shape("scene.boxes", &[b.len()], &[n]));
            }
        }
        Ok(())
    }

    /// Reorders nodes so that new node `i` is old node `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<SceneGraph> {
        let n = self.node_count();
        let mut seen = vec![false; n];
        if perm.len() != n
            || perm
                .iter()
                .any(|&p| p >= n || std::mem::replace(&mut seen[p], true))
        {
            return Err(Error::Config(format!(
                "{perm:?} is not a permutation of 0..{n}"
            )));
        }
        Ok(SceneGraph {
            node_features: select_rows(&self.node_features, perm),
            edge_features: permute_grid(&self.edge_features, perm),
            node_kinds: perm.iter().map(|&p| self.node_kinds[p]).collect(),
            gt_adjacency: self.gt_adjacency.as_ref().map(|a| permute_grid(a, perm)),
            gt_labels: self
                .gt_labels
                .as_ref()
                .map(|ls| ls.iter().map(|l| select_rows(l, perm)).collect()),
            boxes: self
                .boxes
                .as_ref()
                .map(|b| perm.iter().map(|&p| b[p]).collect()),
        })
    }
}

/// Rows of `t` picked (and reordered) by `rows`.
pub fn select_rows(t: &Tensor, rows: &[usize]) -> Tensor {
    let width = t.numel() / t.shape()[0];
    let data = rows
        .iter()
        .flat_map(|&p| t.data()[p * width..(p + 1) * width].iter().copied())
        .collect();
    let mut shape = t.shape().to_vec();
    shape[0] = rows.len();
    Tensor::from_parts(shape, data)
}

/// Conjugate permutation of an `[n×n×...]` grid: `out[i,j] = t[perm[i], perm[j]]`.
pub fn permute_grid(t: &Tensor, perm: &[usize]) -> Tensor {
    let n = perm.len();
    let width = t.numel() / (n * n);
    let mut data = Vec::with_capacity(t.numel());
    for &pi in perm {
        for &pj in perm {
            let off = (pi * n + pj) * width;
            data.extend_from_slice(&t.data()[off..off + width]);
        }
    }
    Tensor::from_parts(t.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SceneGraph {
        let nf = Tensor::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        let ef = Tensor::new(vec![3, 3, 1], (0..9).map(f64::from).collect()).unwrap();
        SceneGraph::new(
            nf,
            ef,
            vec![NodeKind::Human, NodeKind::Object, NodeKind::Object],
        )
        .unwrap()
    }

    #[test]
    fn permutation_conjugates_edges() {
        let g = tiny();
        let p = g.permute(&[2, 0, 1]).unwrap();
        assert_eq!(p.node_features.data(), &[3.0, 1.0, 2.0]);
        // new (0,1) = old (2,0) = 6
        assert_eq!(p.edge_features.at(&[0, 1, 0]), 6.0);
        assert_eq!(p.node_kinds[1], NodeKind::Human);
        assert!(g.permute(&[0, 0, 1]).is_err());
    }

    #[test]
    fn asymmetric_adjacency_rejected() {
        let mut g = tiny();
        let mut a = Tensor::zeros(&[3, 3]);
        a.set(&[0, 1], 1.0);
        g.gt_adjacency = Some(a.clone());
        assert!(g.validate().is_err());
        a.set(&[1, 0], 1.0);
        g.gt_adjacency = Some(a);
        assert!(g.validate().is_ok());
    }
}
