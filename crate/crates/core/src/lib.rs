//! Constraint-aware domain adaptation for verb-noun action recognition.
//!
//! The toolkit couples a two-branch classifier (verb and noun heads over a
//! shared video feature) with a differentiable logic loss that scores the
//! predictions against verb-noun co-occurrence constraints, a gradient
//! reversal layer for domain-adversarial alignment, an LLM oracle that
//! builds co-occurrence masks from a chat-completions API, and a prediction
//! ensembler.
//!
//! Numeric code is generic over [`scalar::Scalar`] (f32 or f64); the
//! training pipeline uses the f64 aliases exported below.

pub mod cooccur;
pub mod diffgraph;
pub mod ensemble;
pub mod formula;
pub mod loss;
pub mod model;
pub mod oracle;
pub mod parser;
pub mod scalar;
pub mod semantics;
pub mod trainer;

#[cfg(test)]
pub(crate) mod test_rand;

pub use formula::{Atom, Branch, ConstraintMode, ConstraintSet, Formula, LogicError, VocabSize};
pub use loss::{logic_loss, logic_loss_grad, semantic_loss, semantic_loss_grad};
pub use parser::{parse, render, ParseError};
pub use semantics::{evaluate, Semantics, TNorm, TruthAssignment};

/// f64 truth assignment, the pipeline's working precision.
pub type Assignment64 = semantics::TruthAssignment<f64>;
/// f64 action-score matrix.
pub type Scores64 = cooccur::ScoreMatrix<f64>;
/// f64 dense tensor.
pub type Tensor64 = diffgraph::Tensor<f64>;
/// f64 computation graph.
pub type Graph64 = diffgraph::Graph<f64>;
/// f64 parameter set (checkpoint unit).
pub type ParamSet64 = diffgraph::ParamSet<f64>;
