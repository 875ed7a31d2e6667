//! Generative tool retrieval with virtual tool tokens.
//!
//! The crate covers the full desk-scale pipeline: ingesting ToolBench-style
//! tool collections ([`registry`]), turning each tool into vocabulary tokens
//! ([`tokenizer`], [`indexer`]), decoding under a disjunctive trie so only
//! real tools can be generated ([`trie`], [`decoder`]), building the training
//! corpora ([`datasets`]), evaluating retrieval ([`retrieval`]) and running the
//! three-phase agent loop ([`agent`]).
//!
//! Numeric code is generic over [`Real`]; the aliases below fix it to `f64`.

pub mod agent;
pub mod datasets;
pub mod decoder;
pub mod error;
pub mod indexer;
pub mod registry;
pub mod retrieval;
pub mod scalar;
pub mod tokenizer;
pub mod trie;

pub use error::{Error, Result};
pub use indexer::{build_index, IndexScheme, LengthStats, ToolIndex};
pub use registry::{doc_text, load_registry, ApiDocument, ApiParameter, ToolId, ToolRegistry};
pub use scalar::Real;
pub use tokenizer::{init_embedding, TokenId, TokenSequence, Vocabulary};
pub use trie::DisjunctiveTrie;

pub type EmbeddingTable = tokenizer::EmbeddingTable<f64>;
pub type CountScorer = decoder::CountScorer<f64>;
pub type Hypothesis = decoder::Hypothesis<f64>;
pub type Bm25Index = retrieval::Bm25Index<f64>;
