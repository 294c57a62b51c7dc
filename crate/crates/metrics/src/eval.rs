//! Batch evaluation: pseudonymize each dataset item, query the upstream
//! backend, restore, and score with the task's metric. The report also
//! aggregates the stage scores (PRR, PPS, SCS) and the pseudonymization
//! distance.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use pseudonym::backend::{ChatClient, ChatError, ChatMessage};
use pseudonym::pipeline::{
    pseudonymize_many, restore_output, BackendSet, PipelineConfig, PipelineError,
};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::embed::{EmbeddingProvider, FallbackEmbedder};
use crate::scorers::{bleu4, classification_accuracy, qa_f1_em, rouge_scores};
use crate::stage::{
    privacy_preservation_score, privacy_removal_rate, pseudonymization_distance,
    semantic_correctness_score, MetricError,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot read dataset: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset error: {0}")]
    Config(String),
    #[error("pipeline failed for item {id}: {source}")]
    Pipeline {
        id: String,
        #[source]
        source: PipelineError,
    },
    #[error("upstream failed for item {id}: {source}")]
    Upstream {
        id: String,
        #[source]
        source: ChatError,
    },
    #[error("metric failure: {0}")]
    Metric(#[from] MetricError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Qa,
    Sum,
    Nli,
    Mt,
}

impl Task {
    fn name(&self) -> &'static str {
        match self {
            Task::Qa => "qa",
            Task::Sum => "sum",
            Task::Nli => "nli",
            Task::Mt => "mt",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct GoldEntity {
    pub text: String,
    #[serde(default)]
    pub category: Option<String>,
}

/// One dataset line.
#[derive(Debug, Clone, Deserialize)]
pub struct DatasetItem {
    pub id: String,
    pub task: Task,
    pub input: Value,
    #[serde(deserialize_with = "string_or_list")]
    pub gold: Vec<String>,
    #[serde(default)]
    pub entities: Option<Vec<GoldEntity>>,
}

fn string_or_list<'de, D>(deserializer: D) -> Result<Vec<String>, D::Error>
where
    D: serde::Deserializer<'de>,
{
    let value = Value::deserialize(deserializer)?;
    match value {
        Value::String(s) => Ok(vec![s]),
        Value::Array(items) => items
            .into_iter()
            .map(|v| {
                v.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| serde::de::Error::custom("gold list must contain strings"))
            })
            .collect(),
        _ => Err(serde::de::Error::custom(
            "gold must be a string or list of strings",
        )),
    }
}

/// Parse a JSONL dataset. Every line must carry an id, task, input, and gold.
pub fn load_dataset(path: &Path) -> Result<Vec<DatasetItem>, EvalError> {
    let contents = std::fs::read_to_string(path)?;
    let mut items = Vec::new();
    for (idx, line) in contents.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item: DatasetItem = serde_json::from_str(line)
            .map_err(|e| EvalError::Config(format!("line {}: {e}", idx + 1)))?;
        if item.gold.iter().all(|g| g.trim().is_empty()) {
            return Err(EvalError::Config(format!(
                "line {}: item {} has no gold",
                idx + 1,
                item.id
            )));
        }
        items.push(item);
    }
    if items.is_empty() {
        return Err(EvalError::Config("dataset contains no items".into()));
    }
    Ok(items)
}

/// Everything run_eval talks to besides the pipeline config.
#[derive(Clone)]
pub struct EvalBackends {
    /// Backends for the pseudonymization pipeline itself.
    pub pipeline: BackendSet,
    /// The task model that answers the pseudonymized prompt.
    pub upstream: Arc<dyn ChatClient>,
    /// Sentence embedder for PPS and distance.
    pub embedder: Arc<dyn EmbeddingProvider>,
    /// Optional predictor for SCS; skipped when absent.
    pub scs_predictor: Option<pseudonym::pipeline::PredictorFactory>,
}

impl EvalBackends {
    pub fn new(pipeline: BackendSet, upstream: Arc<dyn ChatClient>) -> Self {
        EvalBackends {
            pipeline,
            upstream,
            embedder: Arc::new(FallbackEmbedder),
            scs_predictor: None,
        }
    }
}

/// Per-task aggregate; unused metrics are omitted from the JSON.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TaskReport {
    pub count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub em: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rouge1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rouge2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rouge_l: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bleu: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StageScores {
    /// Mean per-item privacy removal rate over annotated items; null when no
    /// item carries entity annotations.
    pub prr: Option<f64>,
    /// Privacy preservation score over every generated pair.
    pub pps: Option<f64>,
    /// Mean semantic correctness score; null without an SCS predictor.
    pub scs: Option<f64>,
    /// Mean embedding distance between original and pseudonymized prompts.
    pub distance: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EvalDiagnostics {
    pub items_without_annotations: usize,
    pub dropped_detections: usize,
    pub prompt_replacer_fallbacks: usize,
    pub scs_skipped: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EvalReport {
    pub items: usize,
    pub tasks: BTreeMap<String, TaskReport>,
    pub stage_scores: StageScores,
    pub diagnostics: EvalDiagnostics,
}

impl EvalReport {
    /// Range sanity for every reported rate.
    pub fn validate(&self) -> Result<(), String> {
        let in_range = |name: &str, v: Option<f64>, lo: f64, hi: f64| -> Result<(), String> {
            match v {
                Some(x) if !(lo..=hi).contains(&x) => {
                    Err(format!("{name} = {x} outside [{lo}, {hi}]"))
                }
                _ => Ok(()),
            }
        };
        in_range("prr", self.stage_scores.prr, 0.0, 100.0)?;
        in_range("pps", self.stage_scores.pps, 0.0, 200.0)?;
        in_range("distance", self.stage_scores.distance, 0.0, 2.0)?;
        if let Some(scs) = self.stage_scores.scs {
            if scs < 0.0 {
                return Err(format!("scs = {scs} negative"));
            }
        }
        for (task, report) in &self.tasks {
            for (name, value) in [
                ("f1", report.f1),
                ("em", report.em),
                ("rouge1", report.rouge1),
                ("rouge2", report.rouge2),
                ("rouge_l", report.rouge_l),
                ("accuracy", report.accuracy),
                ("bleu", report.bleu),
            ] {
                in_range(&format!("{task}.{name}"), value, 0.0, 100.0)?;
            }
        }
        Ok(())
    }
}

fn input_field<'a>(item: &'a DatasetItem, field: &str) -> Result<&'a str, EvalError> {
    item.input
        .get(field)
        .and_then(Value::as_str)
        .ok_or_else(|| {
            EvalError::Config(format!(
                "item {}: task {} requires input field {field:?}",
                item.id,
                item.task.name()
            ))
        })
}

/// Build the task prompt sent through the pipeline.
pub fn task_prompt(item: &DatasetItem) -> Result<String, EvalError> {
    Ok(match item.task {
        Task::Qa => format!(
            "Answer the question using only the context.\nContext: {}\nQuestion: {}",
            input_field(item, "context")?,
            input_field(item, "question")?
        ),
        Task::Sum => format!(
            "Summarize the following text.\n{}",
            input_field(item, "document")?
        ),
        Task::Nli => format!(
            "Premise: {}\nHypothesis: {}\nDoes the premise entail the hypothesis? \
Answer entailment, neutral, or contradiction.",
            input_field(item, "premise")?,
            input_field(item, "hypothesis")?
        ),
        Task::Mt => format!("Translate to English:\n{}", input_field(item, "source")?),
    })
}

fn extract_nli_label(answer: &str) -> String {
    let lowered = answer.to_lowercase();
    ["entailment", "neutral", "contradiction"]
        .iter()
        .filter_map(|label| lowered.find(label).map(|pos| (pos, *label)))
        .min_by_key(|(pos, _)| *pos)
        .map(|(_, label)| label.to_string())
        .unwrap_or_else(|| lowered.trim().to_string())
}

/// Run the full evaluation over a JSONL dataset.
pub fn run_eval(
    dataset_path: &Path,
    config: &PipelineConfig,
    backends: &EvalBackends,
) -> Result<EvalReport, EvalError> {
    let items = load_dataset(dataset_path)?;
    let case_fold = config.case_insensitive_detection;

    struct TaskAccumulator {
        count: usize,
        f1: f64,
        em: f64,
        rouge1: f64,
        rouge2: f64,
        rouge_l: f64,
        bleu: f64,
        nli_predictions: Vec<String>,
        nli_golds: Vec<String>,
    }
    impl Default for TaskAccumulator {
        fn default() -> Self {
            TaskAccumulator {
                count: 0,
                f1: 0.0,
                em: 0.0,
                rouge1: 0.0,
                rouge2: 0.0,
                rouge_l: 0.0,
                bleu: 0.0,
                nli_predictions: Vec::new(),
                nli_golds: Vec::new(),
            }
        }
    }

    let mut acc_by_name: BTreeMap<&'static str, (Task, TaskAccumulator)> = BTreeMap::new();
    let mut diagnostics = EvalDiagnostics::default();
    let mut prr_values: Vec<f64> = Vec::new();
    let mut all_pairs = Vec::new();
    let mut distances: Vec<f64> = Vec::new();
    let mut scs_values: Vec<f64> = Vec::new();

    for item in &items {
        let prompt = task_prompt(item)?;
        let output = pseudonymize_many(&[prompt.as_str()], config, &backends.pipeline, &[])
            .map_err(|source| EvalError::Pipeline {
                id: item.id.clone(),
                source,
            })?;
        let x_prime = &output.texts[0];
        let session = &output.session;
        diagnostics.dropped_detections += output.diagnostics.dropped_detections;
        diagnostics.prompt_replacer_fallbacks += output.diagnostics.prompt_replacer_fallbacks;

        let y_prime = backends
            .upstream
            .complete(&[ChatMessage::user(x_prime.text.clone())])
            .map_err(|source| EvalError::Upstream {
                id: item.id.clone(),
                source,
            })?;
        let y = restore_output(&y_prime, session);

        let entry = acc_by_name
            .entry(item.task.name())
            .or_insert_with(|| (item.task, TaskAccumulator::default()));
        let acc = &mut entry.1;
        acc.count += 1;
        match item.task {
            Task::Qa => {
                let score = qa_f1_em(&y, &item.gold)?;
                acc.f1 += score.f1;
                acc.em += score.em;
            }
            Task::Sum => {
                let mut best_r1: f64 = 0.0;
                let mut best_r2: f64 = 0.0;
                let mut best_rl: f64 = 0.0;
                for gold in &item.gold {
                    let scores = rouge_scores(&y, gold)?;
                    best_r1 = best_r1.max(scores.rouge1.f1);
                    best_r2 = best_r2.max(scores.rouge2.f1);
                    best_rl = best_rl.max(scores.rouge_l.f1);
                }
                acc.rouge1 += best_r1;
                acc.rouge2 += best_r2;
                acc.rouge_l += best_rl;
            }
            Task::Nli => {
                acc.nli_predictions.push(extract_nli_label(&y));
                acc.nli_golds.push(item.gold[0].clone());
            }
            Task::Mt => {
                acc.bleu += bleu4(&y, &item.gold)?;
            }
        }

        match &item.entities {
            Some(entities) if !entities.is_empty() => {
                let gold: Vec<String> = entities.iter().map(|e| e.text.clone()).collect();
                let detected: Vec<String> =
                    session.mapping.iter().map(|p| p.original.clone()).collect();
                prr_values.push(privacy_removal_rate(&detected, &gold, case_fold)?);
            }
            _ => diagnostics.items_without_annotations += 1,
        }
        all_pairs.extend(session.mapping.pairs().to_vec());
        if !x_prime.text.is_empty() {
            distances.push(pseudonymization_distance(
                &prompt,
                &x_prime.text,
                &*backends.embedder,
            )?);
        }
        if let Some(factory) = &backends.scs_predictor {
            let mut predictor = factory(&x_prime.text);
            match semantic_correctness_score(&x_prime.text, predictor.as_mut()) {
                Ok(scs) => scs_values.push(scs),
                Err(_) => diagnostics.scs_skipped += 1,
            }
        }
    }

    let mut tasks = BTreeMap::new();
    for (name, (task, acc)) in acc_by_name {
        let n = acc.count as f64;
        let mut report = TaskReport {
            count: acc.count,
            ..TaskReport::default()
        };
        match task {
            Task::Qa => {
                report.f1 = Some(100.0 * acc.f1 / n);
                report.em = Some(100.0 * acc.em / n);
            }
            Task::Sum => {
                report.rouge1 = Some(100.0 * acc.rouge1 / n);
                report.rouge2 = Some(100.0 * acc.rouge2 / n);
                report.rouge_l = Some(100.0 * acc.rouge_l / n);
            }
            Task::Nli => {
                report.accuracy = Some(classification_accuracy(
                    &acc.nli_predictions,
                    &acc.nli_golds,
                )?);
            }
            Task::Mt => {
                report.bleu = Some(acc.bleu / n);
            }
        }
        tasks.insert(name.to_string(), report);
    }

    let mean = |values: &[f64]| -> Option<f64> {
        if values.is_empty() {
            None
        } else {
            Some(values.iter().sum::<f64>() / values.len() as f64)
        }
    };
    let pps = if all_pairs.is_empty() {
        None
    } else {
        Some(privacy_preservation_score(&all_pairs, &*backends.embedder)?)
    };

    let report = EvalReport {
        items: items.len(),
        tasks,
        stage_scores: StageScores {
            prr: mean(&prr_values),
            pps,
            scs: mean(&scs_values),
            distance: mean(&distances),
        },
        diagnostics,
    };
    debug_assert_eq!(report.validate(), Ok(()));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nli_label_extraction_takes_first_mention() {
        assert_eq!(extract_nli_label("I think it is Neutral."), "neutral");
        assert_eq!(
            extract_nli_label("contradiction, not entailment"),
            "contradiction"
        );
        assert_eq!(extract_nli_label("no idea"), "no idea");
    }

    #[test]
    fn gold_accepts_string_or_list() {
        let item: DatasetItem =
            serde_json::from_str(r#"{"id":"1","task":"qa","input":{},"gold":"answer"}"#).unwrap();
        assert_eq!(item.gold, vec!["answer"]);
        let item: DatasetItem =
            serde_json::from_str(r#"{"id":"2","task":"qa","input":{},"gold":["a","b"]}"#).unwrap();
        assert_eq!(item.gold.len(), 2);
    }

    #[test]
    fn unknown_task_is_rejected() {
        let parsed: Result<DatasetItem, _> =
            serde_json::from_str(r#"{"id":"1","task":"poetry","input":{},"gold":"x"}"#);
        assert!(parsed.is_err());
    }
}
