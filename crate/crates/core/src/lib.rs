//! Synthetic query generation for relevance prediction: few-shot prompting
//! (relevant-only, label-conditioned, pairwise, iterative and fine-grained
//! variants), round-trip consistency filtering, BM25 retrieval, NDCG
//! evaluation and a linear pointwise baseline.

pub mod backend;
pub mod baseline;
pub mod corpus;
pub mod evalmetrics;
pub mod fixture;
pub mod prompting;
pub mod retrieval;
pub mod synthgen;
pub mod text;
