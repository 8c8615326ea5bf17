//! Graph-augmented code generation for a Java-like mini-language.
//!
//! The pipeline, end to end: source code is lexed and parsed ([`frontend`]),
//! turned into a code graph whose terminals are code tokens and whose edges
//! carry parenthood and dataflow relations ([`graph`]), encoded as subwords
//! ([`tokenizer`]), and consumed by a GNN expert ([`gnn`]) whose node
//! representations are added into the hidden states of a small encoder-decoder
//! transformer ([`plm`]) at chosen layers ([`fusion`]). Generated code is
//! scored with exact match, BLEU and CodeBLEU ([`metrics`]), and [`harness`]
//! ties everything into reproducible experiments over a synthetic corpus.
//!
//! Everything is CPU-only `f32` with fixed reduction order: the same seed and
//! inputs produce bit-identical results across runs ([`tensor`]).

pub mod frontend;
pub mod fusion;
pub mod gnn;
pub mod graph;
pub mod harness;
pub mod metrics;
pub mod plm;
pub mod tensor;
pub mod tokenizer;
