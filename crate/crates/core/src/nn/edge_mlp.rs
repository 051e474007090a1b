use rand::Rng;

use super::{Activation, Linear};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};

/// Link network over a pairwise feature grid.
///
/// A stack of 1×1 convolutions over an `n×n×c` grid is the same map as one
/// MLP applied to every cell with shared weights, which is how it is stored.
/// The final layer has one output channel and is squashed by a sigmoid.
#[derive(Debug, Clone)]
pub struct EdgeMlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl EdgeMlp {
    /// `widths` lists the output width of every layer; the last must be 1.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        widths: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if widths.last() != Some(&1) {
            return Err(Error::Config(format!(
                "link network must end in a single channel, got widths {widths:?}"
            )));
        }
        let mut layers = Vec::with_capacity(widths.len());
        let mut prev = in_dim;
        for (i, &w) in widths.iter().enumerate() {
            layers.push(Linear::new(store, &format!("{prefix}.{i}"), prev, w, rng));
            prev = w;
        }
        Ok(EdgeMlp { layers, activation })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    /// Pre-sigmoid output for a flat `[rows×c]` batch of edge features.
    pub fn logits(&self, tape: &mut Tape, params: &Bound, rows: Var) -> Result<Var> {
        let mut x = rows;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(tape, params, x)?;
            if i < last {
                x = self.activation.apply(tape, x)?;
            }
        }
        Ok(x)
    }

    /// Maps `grid[n×n×c]` to `σ(MLP(grid[v,w]))` of shape `[n×n]`.
    pub fn forward(&self, tape: &mut Tape, params: &Bound, grid: Var) -> Result<Var> {
        let shape = tape.shape(grid).to_vec();
        if shape.len() != 3 || shape[0] != shape[1] || shape[2] != self.in_dim() {
            return Err(Error::shape("edge_mlp", &shape, &[self.in_dim()]));
        }
        let n = shape[0];
        let flat = tape.reshape(grid, &[n * n, shape[2]])?;
        let logits = self.logits(tape, params, flat)?;
        let logits = tape.reshape(logits, &[n, n])?;
        tape.sigmoid(logits)
    }
}
