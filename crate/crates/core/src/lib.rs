//! Compromise generation between opposing viewpoints, empathic-neutrality
//! scoring and selection, human-study analysis, and small-model alignment.

pub mod align;
pub mod backend;
pub mod compromise;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod optim;
pub mod pipeline;
pub mod scorer;
pub mod selection;
pub mod stats;
pub mod study;
pub mod text;

pub use error::{Error, Result};
