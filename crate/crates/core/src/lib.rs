//! Persona-grounded chit-chat generation by sketching and filling.
//!
//! A recurrent encoder reads the conversation and each persona trait, a
//! persona memory holds the traits' rare words, and an attention decoder
//! writes a *sketch*: a response in which persona-specific words are
//! replaced by `@persona` slots. Slots are filled either by a pointer over
//! the memory or by enumerating candidate fills and keeping the one a
//! language model finds most fluent.

pub mod checkpoint;
pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod eval;
pub mod inference;
pub mod lm;
pub mod model;
pub mod numeric;
#[cfg(feature = "server")]
pub mod service;
pub mod trainer;

pub use error::{Error, Result};
