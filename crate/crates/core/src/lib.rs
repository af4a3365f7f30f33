//! Training-free table recognition toolkit.
//!
//! Table images are cleaned up by a short chain of preprocessing tools before
//! a vision-language model transcribes them to markup. The chain is planned
//! by the model, validated on the most similar labeled neighbor, and each
//! step is gated by a before/after comparison.

pub mod bench;
pub mod config;
pub mod demo;
pub mod gateway;
pub mod imaging;
pub mod pipeline;
pub mod retrieval;
pub mod simulate;
pub mod table;
pub mod teds;
