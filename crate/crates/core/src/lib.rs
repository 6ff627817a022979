//! A small vision-language-action driving model: one transformer with shared
//! attention and token-type routed expert FFNs, an instruction head, and a
//! flow-matching trajectory planner, trained in three stages on a synthetic
//! driving world.

pub mod error;
pub mod flow;
pub mod harness;
pub mod language;
pub mod model;
pub mod numerics;
pub mod routed;
pub mod synth;
pub mod tokenizer;

pub use error::{Error, Result};
