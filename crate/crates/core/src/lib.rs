pub mod alignment;
pub mod cli;
pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod evaluation;
pub mod linalg;
pub mod math;
pub mod synthetic;
pub mod tagger;
pub mod training;

pub use error::{Error, Result};
