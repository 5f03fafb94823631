//! Multi-step machine-learning pipeline with automated model selection.
//!
//! Two connected sub-tasks (tau momentum calibration, then H/Z event
//! classification) each have several candidate models. Candidates are
//! selected by a differentiable softmax-weighted supernet, by single-path
//! one-shot sampling followed by exhaustive combination search, or by a
//! plain grid search over all pairs.

pub mod autodiff;
pub mod datagen;
pub mod gp;
pub mod harness;
pub mod models;
pub mod pipeline;
pub mod seed;
