use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Fully connected layer `y = x·Wᵀ + b` applied along the last axis.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let weight =
            store.register_uniform(format!("{prefix}.weight"), &[out_dim, in_dim], in_dim, rng);
        let bias = store.register(format!("{prefix}.bias"), Tensor::zeros(&[out_dim]));
        Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    /// Applies the layer to `x[..., in]`, returning `[..., out]`.
    pub fn forward(&self, tape: &mut Tape, params: &Bound, x: Var) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        match shape.last() {
            Some(&d) if d == self.in_dim => {}
            _ => return Err(Error::shape("linear", &shape, &[self.in_dim])),
        }
        let rows = shape[..shape.len() - 1].iter().product::<usize>();
        let flat = if shape.len() == 2 {
            x
        } else {
            tape.reshape(x, &[rows, self.in_dim])?
        };
        let wt = tape.transpose(params.var(self.weight))?;
        let y = tape.matmul(flat, wt)?;
        let y = tape.add_row(y, params.var(self.bias))?;
        if shape.len() == 2 {
            return Ok(y);
        }
        let mut out_shape = shape;
        *out_shape.last_mut().expect("non-empty") = self.out_dim;
        tape.reshape(y, &out_shape)
    }
}
