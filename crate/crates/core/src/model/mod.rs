//! The reasoning network: question encoding, intra-modal knowledge
//! selection, cross-modal convolutions with gated fusion, fact-to-fact
//! aggregation over several steps, and per-entity answer scoring.

mod config;
mod forward;
pub mod layers;
pub mod params;


pub use config::{Ablation, ModelConfig};
pub use forward::{
    bce_loss, bce_value, forward, predict, predict_answer, EdgeWeight, ForwardOutput, LayerTrace,
    Mode, Prediction, StepTrace, PROB_CLAMP,
};
pub use params::init_params;

use thiserror::Error;

use crate::autodiff::TensorError;
use crate::graph::GraphError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("{what} dimension is {actual}, model expects {expected}")]
    Dimension {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("question has no tokens")]
    EmptyQuestion,
    #[error("fact layer is empty; no answer can be selected")]
    EmptyFactLayer,
    #[error("label {0} is not 0 or 1")]
    Label(f64),
    #[error("missing parameter `{0}`")]
    MissingParam(String),
}
