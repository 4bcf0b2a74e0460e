//! Data-side building blocks for learned program repair on Java methods.
//!
//! The pipeline runs roughly in module order:
//!
//! ```text
//! corpus ──► syntax ──► abstraction ──► tokenizer ──► noising
//!   (ingest,    (classified    (placeholders,     (byte-level     (span masks for
//!    dedup,      tokens,        idioms)            BPE)            pretraining)
//!    clean)      methods)
//! ```
//!
//! and [`eval`] scores generated patches against developer fixes.
//!
//! Hot loops (file filtering, method extraction, idiom mining, BPE pair
//! counting, mask generation, scoring) fan out through [`par`], which uses
//! rayon when the `parallel` feature is on and plain iterators otherwise.

pub mod abstraction;
pub mod corpus;
pub mod dataset;
pub mod eval;
pub mod noising;
pub mod par;
pub mod synth;
pub mod syntax;
pub mod tokenizer;

pub use abstraction::{AbstractedMethod, AbstractionMap, IdiomVocabulary, Placeholder};
pub use corpus::{CommitRecord, CorpusManifest, FilterRules, SourceFile};
pub use eval::{EvalReport, FixCategory, FixOutcome};
pub use noising::MaskedPair;
pub use syntax::{Bucket, ClassifiedToken, Grammar, MethodUnit, SyntaxClass};
pub use tokenizer::{MergeRule, SubwordVocabulary};

