//! Lexicon-enhanced self-supervised training for dense retrieval.
//!
//! A BM25 sparse retriever and a trainable dual-encoder dense retriever are
//! combined to mine positive and hard-negative training pairs from unlabeled
//! queries. Mined pairs train a query generator whose filtered output augments
//! the training set, and the whole mine → train → refresh loop is iterated.
//!
//! Module map:
//!
//! - [`corpus`]: records, tokenization, JSONL/qrels IO and a synthetic
//!   multilingual benchmark.
//! - [`sparse`]: BM25 inverted index.
//! - [`dense`]: mean-pooled dual encoder, InfoNCE loss, Adam, exact top-k index.
//! - [`mining`]: agreement-based positive/negative mining and score fusion.
//! - [`querygen`]: salience query generator, top-1 dual filter.
//! - [`pipeline`]: warm-up and iterative training orchestration.
//! - [`eval`]: MRR@k, Recall@k, paired t-test, TREC run files.

pub mod config;
pub mod corpus;
pub mod dense;
pub mod error;
pub mod eval;
pub mod mining;
pub mod pipeline;
pub mod querygen;
pub mod rank;
pub mod seed;
pub mod sparse;

pub use error::{Error, Result};
pub use rank::{RankedList, Scored};
