pub mod data;
pub mod decoding;
pub mod error;
pub mod extractor;
pub mod model;
pub mod parallel;
pub mod seq2seq;
pub mod tensor;
pub mod training;
pub mod vocab;
pub mod windowing;

pub use error::{Result, ScanError};
