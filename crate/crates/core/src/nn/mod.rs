//! Parameterized building blocks: linear layers, the shared per-edge link
//! network, the GRU update cell and the per-edge convolutional LSTM.
//!
//! Layers hold [`ParamId`](crate::ParamId)s into a [`ParamStore`](crate::ParamStore);
//! a forward pass looks the tape variables up in a [`Bound`](crate::Bound).

mod convlstm;
mod edge_mlp;
mod gru;
mod linear;

pub use convlstm::{ConvLstm, ConvLstmLayer, ConvLstmOutput, LstmState};
pub use edge_mlp::EdgeMlp;
pub use gru::GruCell;
pub use linear::Linear;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::Result;

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
        }
    }
}
