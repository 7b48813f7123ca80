//! Recursive story completion: a rule generator proposes commonsense
//! inference rules about the story so far, a sentence generator writes the
//! next sentence conditioned on them, and the loop repeats until the gap
//! before the ending is filled.
//!
//! The crate is self-contained: a small dense tensor library with
//! reverse-mode autodiff, a decoder-only transformer, beam search, the
//! recursive controller and the automatic evaluation metrics.

pub mod autograd;
pub mod checkpoint;
pub mod coins;
pub mod data;
pub mod decoding;
pub mod error;
pub mod lm;
pub mod metrics;
pub mod tensor;
pub mod tokenizer;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
pub use tokenizer::{Special, TokenId, Vocab};
