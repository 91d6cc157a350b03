//! Static correctness prediction for automatically generated program-repair
//! patches.
//!
//! The pipeline turns a labeled corpus of unified diffs into buggy/patched
//! code fragments, embeds them, crosses the two embeddings into a learned
//! feature vector, adds lexical repair features, and trains classifiers that
//! are evaluated with bug-disjoint cross-validation and explained with
//! Shapley values.
//!
//! ```text
//! corpus -> diffparse -> embed -> crossing ---+
//!              |                              +-> learn / combine -> eval
//!              +-----> engineered ------------+            |
//!                                                        explain
//! ```

pub mod combine;
pub mod config;
pub mod corpus;
pub mod crossing;
pub mod diffparse;
pub mod embed;
pub mod engineered;
pub mod eval;
pub mod explain;
pub mod featureio;
pub mod filter;
pub mod learn;
pub mod nn;
pub mod rng;
pub mod synth;

mod error;

pub use error::{Error, Result};
