//! Action-unit knowledge for dynamic facial expression recognition.
//!
//! Frame-level AU tracks become a per-class AU weighting matrix; video-level
//! AU pseudo-labels and per-class positive weights feed an auxiliary AU loss
//! trained next to the expression head of a small dual-head model.

// `!(x > 0.0)` style checks are used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod domain;
pub mod error;
pub mod harness;
pub mod ingest;
pub mod knowledge;
pub mod labeling;
pub mod loss;
pub mod model;
pub mod synth;

pub use domain::{ActionUnit, ExpressionClass, KnowledgeMatrix, KnowledgeStage, NUM_AUS, NUM_EXPRESSIONS};
pub use error::{Error, Result};
