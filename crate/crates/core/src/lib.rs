//! Graph-constrained reasoning over knowledge graphs: path enumeration,
//! token tries of grounded paths, constrained beam decoding, answer
//! reasoning and evaluation.

pub mod codec;
pub mod decoder;
pub mod eval;
#[cfg(feature = "http")]
pub mod http;
pub mod kg;
pub mod reasoner;
pub mod trainset;
pub mod trie;
