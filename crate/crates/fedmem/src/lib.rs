//! Federated-memorization auditing toolkit.
//!
//! Trains a count-based reference language model under simulated federated
//! learning over non-IID client corpora, then measures how often prompting
//! the global model with one client's training prefixes reproduces suffixes
//! from the same client (intra) or from other clients (inter). The audit
//! pipeline is: sample prefix/suffix pairs per client, generate continuations,
//! retrieve candidate suffixes with BM25, and run a seed-and-extend text
//! aligner that classifies matches as verbatim, paraphrase, or idea-level.
//!
//! Every stage is deterministic given (corpus bytes, config, seed).

pub mod corpus;
pub mod detector;
pub mod error;
pub mod flsim;
pub mod generate;
pub mod harness;
pub mod index;
pub mod metrics;

pub use error::{Error, Result};
