//! Symbolic music workbench.
//!
//! The crate bundles four melody generation routes over a shared set of
//! musical value types, plus the statistics used to compare their output
//! in listening studies:
//!
//! 1. a dual-stream transformer language model that predicts pitch and
//!    duration tokens jointly ([`model::DualStreamModel`]),
//! 2. chat sonification feeding a sequence-to-sequence transformer that
//!    writes pitches over externally supplied rhythms ([`rhythm::sonify_chat`]
//!    + [`model::Seq2SeqModel`]),
//! 3. permutation rhythm plans feeding the same pitch model
//!    ([`rhythm::RhythmPlan`]),
//! 4. continuation of a short melody prompt by an external completion
//!    service, with a deterministic offline mock ([`pipeline::llm`]).
//!
//! Everything runs on a small dense-array core with reverse-mode
//! differentiation ([`tensor`]); no external ML framework is involved.
//!
//! Start with the `examples/` directory: each example is a runnable tour
//! of one capability (`cargo run --example schillinger_plans`, etc.).
//! A thin `cantus` binary exposes the same operations as subcommands.

pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod model;
pub mod notation;
pub mod pipeline;
pub mod provenance;
pub mod rhythm;
pub mod stats;
pub mod tensor;
pub mod tokenizer;

pub use notation::{NoteEvent, VoicedMelody};
pub use num_rational::Rational64;
