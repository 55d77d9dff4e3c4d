//! Semantic mention graph augmented event argument extraction.

pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod extraction;
pub mod graph;
pub mod graph_transformer;
pub mod input;
pub mod layers;
pub mod model;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod vocab;

pub use error::{GamError, Result};
