pub mod autodiff;
pub mod checkpoint;
pub mod cli;
mod codec;
pub mod config;
pub mod error;
pub mod eval;
pub mod export;
pub mod gradcheck;
pub mod graph;
pub mod graph_file;
pub mod losses;
pub mod model;
pub mod nn;
pub mod params;
pub mod synth;
pub mod tensor;
pub mod train;

pub use autodiff::{Tape, Var};
pub use config::RunConfig;
pub use error::{Error, Result};
pub use graph::{NodeKind, SceneGraph};
pub use model::{
    GpnnModel, GraphMode, HeadSpec, LinkKind, ModelConfig, NodeFilter, ParseResult,
    ReadoutActivation,
};
pub use params::{Bound, ParamId, ParamStore};
pub use tensor::Tensor;
