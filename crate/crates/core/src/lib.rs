//! Reading comprehension with part-of-speech embeddings and iterative,
//! parameter-free co-attention between passage and question.
//!
//! The guide under `book/` walks through each stage; its snippets run as
//! doc-tests of this crate.

pub mod cli;
pub mod coattention;
pub mod data;
pub mod encoder;
pub mod error;
pub mod heads;
pub mod integration;
pub mod model;
pub mod numerics;
pub mod pos;
pub mod training;

pub use error::{Error, Result};

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/pos-tags.md")]
    mod pos_tags {}
    #[doc = include_str!("../../../book/src/coattention.md")]
    mod coattention {}
    #[doc = include_str!("../../../book/src/integration.md")]
    mod integration {}
    #[doc = include_str!("../../../book/src/heads.md")]
    mod heads {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
