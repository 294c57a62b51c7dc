//! Reversible entity pseudonymization for text sent to remote language
//! models.
//!
//! The library is organized around three decoupled stages that can be
//! combined freely:
//!
//! - [`detection`] finds privacy entities (dictionary lookup, a prompted
//!   chat backend, or parsing the two tag formats a tagging model emits);
//! - [`generation`] picks privacy-safe replacement candidates (seeded random
//!   sampling from curated pools, or a prompted chat backend) while keeping
//!   the mapping injective;
//! - [`replacement`] substitutes the entities (direct span splicing, a
//!   validated model rewrite, or splicing inside a controllable
//!   token-by-token generation loop).
//!
//! [`pipeline`] wires the stages together and restores originals in model
//! output; [`store`] persists per-request mapping sessions so restoration
//! can happen after the upstream round trip.

pub mod backend;
pub mod datafile;
pub mod detection;
pub mod generation;
pub mod model;
pub mod pipeline;
pub mod replacement;
pub mod store;
pub mod tokenizer;

pub use backend::{ChatClient, ChatError, ChatMessage, Role, TokenPredictor};
pub use model::{
    EntityCategory, EntityOccurrence, EntitySet, MatchOptions, PseudonymizedText,
    ReplacementMapping, ReplacementPair,
};
pub use pipeline::{
    pseudonymize, restore_output, BackendSet, MappingSession, PipelineConfig, PipelineError,
};
