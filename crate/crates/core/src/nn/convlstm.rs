use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Input, hidden and bias parameters of one gate.
#[derive(Debug, Clone)]
struct Gate {
    w: ParamId,
    u: ParamId,
    b: ParamId,
}

/// One convolutional LSTM layer with 1×1 kernels: an LSTM applied to every
/// grid cell with shared weights.
#[derive(Debug, Clone)]
pub struct ConvLstmLayer {
    pub in_dim: usize,
    pub hidden_dim: usize,
    input: Gate,
    forget: Gate,
    output: Gate,
    cell: Gate,
}

impl ConvLstmLayer {
    fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Self {
        let mut gate = |name: &str, bias: f64, rng: &mut R| Gate {
            w: store.register_uniform(
                format!("{prefix}.W{name}"),
                &[hidden_dim, in_dim],
                in_dim,
                rng,
            ),
            u: store.register_uniform(
                format!("{prefix}.U{name}"),
                &[hidden_dim, hidden_dim],
                hidden_dim,
                rng,
            ),
            b: store.register(
                format!("{prefix}.b{name}"),
                Tensor::full(&[hidden_dim], bias),
            ),
        };
        let input = gate("i", 0.0, rng);
        let forget = gate("f", 1.0, rng);
        let output = gate("o", 0.0, rng);
        let cell = gate("g", 0.0, rng);
        ConvLstmLayer {
            in_dim,
            hidden_dim,
            input,
            forget,
            output,
            cell,
        }
    }

    fn preact(&self, tape: &mut Tape, params: &Bound, x: Var, h: Var, g: &Gate) -> Result<Var> {
        let wt = tape.transpose(params.var(g.w))?;
        let a = tape.matmul(x, wt)?;
        let ut = tape.transpose(params.var(g.u))?;
        let b = tape.matmul(h, ut)?;
        let s = tape.add(a, b)?;
        tape.add_row(s, params.var(g.b))
    }

    /// One step on a flat `[cells×in]` batch; returns `(h', c')`.
    fn step(&self, tape: &mut Tape, params: &Bound, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let i = self.preact(tape, params, x, h, &self.input)?;
        let i = tape.sigmoid(i)?;
        let f = self.preact(tape, params, x, h, &self.forget)?;
        let f = tape.sigmoid(f)?;
        let o = self.preact(tape, params, x, h, &self.output)?;
        let o = tape.sigmoid(o)?;
        let g = self.preact(tape, params, x, h, &self.cell)?;
        let g = tape.tanh(g)?;
        let keep = tape.mul(f, c)?;
        let write = tape.mul(i, g)?;
        let c_next = tape.add(keep, write)?;
        let squashed = tape.tanh(c_next)?;
        let h_next = tape.mul(o, squashed)?;
        Ok((h_next, c_next))
    }
}

/// Recurrent state of a [`ConvLstm`]: `(hidden, cell)` per layer, each
/// `[n·n × width]`.
#[derive(Debug, Clone)]
pub struct LstmState {
    pub layers: Vec<(Var, Var)>,
}

#[derive(Debug, Clone)]
pub struct ConvLstmOutput {
    /// Hidden map of the final one-channel layer, `[n×n]`.
    pub hidden: Var,
    pub state: LstmState,
}

/// Stacked convolutional LSTM with 1×1 kernels over an `n×n×c` grid.
#[derive(Debug, Clone)]
pub struct ConvLstm {
    pub layers: Vec<ConvLstmLayer>,
}

impl ConvLstm {
    /// `widths` lists the hidden width of every layer; the last must be 1.
    /// Forget-gate biases start at 1, all other biases at 0.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        widths: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        if widths.last() != Some(&1) {
            return Err(Error::Config(format!(
                "convolutional LSTM link must end in a single channel, got widths {widths:?}"
            )));
        }
        let mut layers = Vec::with_capacity(widths.len());
        let mut prev = in_dim;
        for (i, &w) in widths.iter().enumerate() {
            layers.push(ConvLstmLayer::new(
                store,
                &format!("{prefix}.{i}"),
                prev,
                w,
                rng,
            ));
            prev = w;
        }
        Ok(ConvLstm { layers })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    /// All-zero state for an `n`-node grid.
    pub fn zero_state(&self, tape: &mut Tape, n: usize) -> LstmState {
        LstmState {
            layers: self
                .layers
                .iter()
                .map(|l| {
                    let z = Tensor::zeros(&[n * n, l.hidden_dim]);
                    (tape.constant(z.clone()), tape.constant(z))
                })
                .collect(),
        }
    }

    /// Advances every cell of `grid[n×n×c]` by one time step. A missing
    /// state is treated as all zeros.
    pub fn step(
        &self,
        tape: &mut Tape,
        params: &Bound,
        grid: Var,
        state: Option<&LstmState>,
    ) -> Result<ConvLstmOutput> {
        let shape = tape.shape(grid).to_vec();
        if shape.len() != 3 || shape[0] != shape[1] || shape[2] != self.in_dim() {
            return Err(Error::shape("convlstm_step", &shape, &[self.in_dim()]));
        }
        let n = shape[0];
        let state = match state {
            Some(s) => {
                if s.layers.len() != self.layers.len() {
                    return Err(Error::shape(
                        "convlstm_state",
                        &[s.layers.len()],
                        &[self.layers.len()],
                    ));
                }
                for ((h, c), layer) in s.layers.iter().zip(&self.layers) {
                    let want = [n * n, layer.hidden_dim];
                    for v in [h, c] {
                        if tape.shape(*v) != want {
                            return Err(Error::shape("convlstm_state", tape.shape(*v), &want));
                        }
                    }
                }
                s.clone()
            }
            None => self.zero_state(tape, n),
        };

        let mut x = tape.reshape(grid, &[n * n, shape[2]])?;
        let mut next = Vec::with_capacity(self.layers.len());
        for (layer, &(h, c)) in self.layers.iter().zip(&state.layers) {
            let (h2, c2) = layer.step(tape, params, x, h, c)?;
            next.push((h2, c2));
            x = h2;
        }
        let hidden = tape.reshape(x, &[n, n])?;
        Ok(ConvLstmOutput {
            hidden,
            state: LstmState { layers: next },
        })
    }
}
