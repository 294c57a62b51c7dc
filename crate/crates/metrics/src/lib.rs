//! Evaluation metrics for the pseudonymization pipeline.
//!
//! Stage scores quantify each pipeline stage in isolation: the privacy
//! removal rate of detection, the privacy preservation score of generated
//! replacements, and the semantic correctness score of the replaced text.
//! Task scorers (ROUGE, BLEU-4, SQuAD F1/EM, accuracy) measure end-task
//! quality after the pseudonymize → query → restore round trip, which
//! [`eval::run_eval`] drives over a JSONL dataset.

pub mod embed;
pub mod eval;
pub mod scorers;
pub mod stage;

pub use embed::{cosine, EmbeddingProvider, FallbackEmbedder};
pub use eval::{run_eval, DatasetItem, EvalBackends, EvalError, EvalReport, Task};
pub use scorers::{bleu4, classification_accuracy, qa_f1_em, rouge_scores, RougeScores};
pub use stage::{
    privacy_preservation_score, privacy_removal_rate, pseudonymization_distance,
    semantic_correctness_score, MetricError,
};
