//! Knowledge base population pipeline: distant supervision, confidence-weighted
//! KB validation, stacked confidence re-estimation and positive-unlabeled
//! evaluation.

pub mod binio;
pub mod error;
pub mod eval;
pub mod extraction;
pub mod kbv;
pub mod kg;
pub mod math;
pub mod pipeline;
pub mod restack;
pub mod supervision;
pub mod synth;

pub use error::{Error, Result};
