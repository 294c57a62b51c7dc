//! The three-stage pipeline: detect privacy entities, generate replacement
//! candidates, replace them in the text — plus the inverse path that
//! restores originals in upstream output.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::{ChatClient, TokenPredictor};
use crate::detection::{
    detect_gazetteer_with, detect_prompt_with, DetectionError, DetectionPromptTemplate, Gazetteer,
};
use crate::generation::{
    generate_prompt, generate_random, CandidatePool, GenError, GenerationSession,
    DEFAULT_GENERATION_TEMPLATE,
};
use crate::model::{
    contains_word, EntityCategory, EntityOccurrence, EntitySet, MappingError, MatchOptions,
    PseudonymizedText, ReplacementMapping, ReplacementPair,
};
use crate::replacement::{
    replace_direct_with, replace_generative, replace_prompt, DetectionMode, PromptTemplateG,
    RepError, ReplacementGenerator, DEFAULT_REPLACEMENT_TEMPLATE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    Gazetteer,
    Prompt,
    TagMark,
    TagRep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    Random,
    Prompt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplacerKind {
    Direct,
    Prompt,
    Generative,
}

/// Template overrides; unset fields use the module defaults.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateOverrides {
    pub detection: Option<String>,
    pub generation: Option<String>,
    pub replacement: Option<String>,
    pub conditioning: Option<String>,
}

/// Selects one method per stage. The stages are decoupled, so any
/// combination is valid except that the tag detectors only exist inside the
/// generative replacer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub detector: DetectorKind,
    pub generator: GeneratorKind,
    pub replacer: ReplacerKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub case_insensitive_detection: bool,
    #[serde(default)]
    pub templates: TemplateOverrides,
}

impl PipelineConfig {
    pub fn new(detector: DetectorKind, generator: GeneratorKind, replacer: ReplacerKind) -> Self {
        PipelineConfig {
            detector,
            generator,
            replacer,
            seed: 0,
            case_insensitive_detection: false,
            templates: TemplateOverrides::default(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let tag_detector = matches!(self.detector, DetectorKind::TagMark | DetectorKind::TagRep);
        if tag_detector && self.replacer != ReplacerKind::Generative {
            return Err(PipelineError::InvalidConfig(
                "tag detectors require the generative replacer".into(),
            ));
        }
        Ok(())
    }

    fn match_options(&self) -> MatchOptions {
        MatchOptions {
            ascii_case_insensitive: self.case_insensitive_detection,
        }
    }
}

/// Builds a fresh predictor for one generation run over the given source
/// text (echo doubles need the text; remote predictors ignore it).
pub type PredictorFactory = Arc<dyn Fn(&str) -> Box<dyn TokenPredictor> + Send + Sync>;

/// The backends a pipeline run may need, shareable across requests.
#[derive(Clone, Default)]
pub struct BackendSet {
    pub gazetteer: Option<Arc<Gazetteer>>,
    pub pool: Option<Arc<CandidatePool>>,
    pub chat: Option<Arc<dyn ChatClient>>,
    pub predictor_factory: Option<PredictorFactory>,
}

impl BackendSet {
    fn gazetteer(&self) -> Result<&Gazetteer, PipelineError> {
        self.gazetteer
            .as_deref()
            .ok_or(PipelineError::MissingBackend {
                stage: Stage::Detection,
                backend: "gazetteer",
            })
    }

    fn pool(&self) -> Result<&CandidatePool, PipelineError> {
        self.pool.as_deref().ok_or(PipelineError::MissingBackend {
            stage: Stage::Generation,
            backend: "candidate pool",
        })
    }

    fn chat(&self, stage: Stage) -> Result<&dyn ChatClient, PipelineError> {
        self.chat.as_deref().ok_or(PipelineError::MissingBackend {
            stage,
            backend: "chat client",
        })
    }

    fn predictor(&self, source: &str) -> Result<Box<dyn TokenPredictor>, PipelineError> {
        let factory = self
            .predictor_factory
            .as_ref()
            .ok_or(PipelineError::MissingBackend {
                stage: Stage::Replacement,
                backend: "token predictor",
            })?;
        Ok(factory(source))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Detection,
    Generation,
    Replacement,
    Restoration,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Stage::Detection => "detection",
            Stage::Generation => "generation",
            Stage::Replacement => "replacement",
            Stage::Restoration => "restoration",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid pipeline config: {0}")]
    InvalidConfig(String),
    #[error("{stage} stage requires a {backend} backend")]
    MissingBackend { stage: Stage, backend: &'static str },
    #[error("detection stage failed: {0}")]
    Detection(#[from] DetectionError),
    #[error("generation stage failed: {0}")]
    Generation(#[from] GenError),
    #[error("replacement stage failed: {0}")]
    Replacement(#[from] RepError),
    #[error("mapping invariant violated: {0}")]
    Mapping(#[from] MappingError),
    #[error("pseudonymized text still contains original {0:?}")]
    LeakDetected(String),
}

impl PipelineError {
    /// Which stage produced the error, for error-report attribution.
    pub fn stage(&self) -> Stage {
        match self {
            PipelineError::InvalidConfig(_) => Stage::Detection,
            PipelineError::MissingBackend { stage, .. } => *stage,
            PipelineError::Detection(_) => Stage::Detection,
            PipelineError::Generation(_) => Stage::Generation,
            PipelineError::Replacement(_)
            | PipelineError::Mapping(_)
            | PipelineError::LeakDetected(_) => Stage::Replacement,
        }
    }
}

/// Per-request record that makes restoration possible after the upstream
/// round trip. Serializes as one JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingSession {
    pub session_id: String,
    pub created_at: chrono::DateTime<chrono::Utc>,
    pub source_digest: String,
    #[serde(rename = "pairs")]
    pub mapping: ReplacementMapping,
}

impl MappingSession {
    pub fn new(mapping: ReplacementMapping, source: &str) -> Self {
        MappingSession::with_id(uuid::Uuid::new_v4().to_string(), mapping, source)
    }

    pub fn with_id(id: impl Into<String>, mapping: ReplacementMapping, source: &str) -> Self {
        MappingSession {
            session_id: id.into(),
            created_at: chrono::Utc::now(),
            source_digest: digest(source),
            mapping,
        }
    }

    /// True when this session was created for exactly this source text.
    pub fn matches_source(&self, source: &str) -> bool {
        self.source_digest == digest(source)
    }
}

/// Hex SHA-256 of the source text.
pub fn digest(source: &str) -> String {
    hex::encode(Sha256::digest(source.as_bytes()))
}

/// Counters the pipeline accumulates for diagnostics. Only counts — never
/// entity strings — so they are safe to log.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct PipelineDiagnostics {
    pub detected_spans: usize,
    pub dropped_detections: usize,
    pub prompt_replacer_fallbacks: usize,
}

/// Output of one pseudonymization run.
#[derive(Debug)]
pub struct PipelineOutput {
    pub texts: Vec<PseudonymizedText>,
    pub session: MappingSession,
    pub diagnostics: PipelineDiagnostics,
}

/// Pseudonymize a single document.
pub fn pseudonymize(
    text: &str,
    config: &PipelineConfig,
    backends: &BackendSet,
) -> Result<(PseudonymizedText, MappingSession), PipelineError> {
    let mut output = pseudonymize_many(std::slice::from_ref(&text), config, backends, &[])?;
    Ok((output.texts.remove(0), output.session))
}

/// Pseudonymize several documents under one shared session (one consistent
/// mapping across all of them). `seed_pairs` pre-populates the mapping so a
/// follow-up request can stay consistent with an earlier session.
pub fn pseudonymize_many<S: AsRef<str>>(
    texts: &[S],
    config: &PipelineConfig,
    backends: &BackendSet,
    seed_pairs: &[ReplacementPair],
) -> Result<PipelineOutput, PipelineError> {
    config.validate()?;
    let combined_source = texts
        .iter()
        .map(|t| t.as_ref())
        .collect::<Vec<_>>()
        .join("\u{0}");

    let mut session = GenerationSession::new(config.seed, combined_source.clone());
    session.seed_pairs(seed_pairs.iter());
    let mut diagnostics = PipelineDiagnostics::default();
    let mut results = Vec::with_capacity(texts.len());

    for text in texts {
        let text = text.as_ref();
        let result = pseudonymize_one(text, config, backends, &mut session, &mut diagnostics)?;
        results.push(result);
    }

    // The whole point: nothing that was detected may survive in the output.
    // The check mirrors the detector's case sensitivity.
    let case_insensitive = config.case_insensitive_detection;
    let mapping = ReplacementMapping::new(session.assigned_pairs().cloned().collect())?;
    for result in &results {
        for pair in mapping.iter() {
            if contains_word(&result.text, &pair.original, case_insensitive) {
                return Err(PipelineError::LeakDetected(pair.original.clone()));
            }
        }
    }

    let session = MappingSession::new(mapping, &combined_source);
    Ok(PipelineOutput {
        texts: results,
        session,
        diagnostics,
    })
}

fn pseudonymize_one(
    text: &str,
    config: &PipelineConfig,
    backends: &BackendSet,
    session: &mut GenerationSession,
    diagnostics: &mut PipelineDiagnostics,
) -> Result<PseudonymizedText, PipelineError> {
    let options = config.match_options();

    // Tag detectors run inside the generative replacer: detection happens
    // while the tagged stream is generated.
    if let DetectorKind::TagMark | DetectorKind::TagRep = config.detector {
        let mode = match config.detector {
            DetectorKind::TagMark => DetectionMode::TagMark,
            _ => DetectionMode::TagReplace,
        };
        return replace_with_generator(text, mode, config, backends, session, diagnostics);
    }

    let detected = match config.detector {
        DetectorKind::Gazetteer => detect_gazetteer_with(text, backends.gazetteer()?, options),
        DetectorKind::Prompt => {
            let template = match &config.templates.detection {
                Some(t) => DetectionPromptTemplate::new(t.clone())
                    .map_err(|e| PipelineError::InvalidConfig(e.to_string()))?,
                None => DetectionPromptTemplate::default(),
            };
            let detection =
                detect_prompt_with(text, backends.chat(Stage::Detection)?, &template, options)?;
            diagnostics.dropped_detections += detection.dropped.len();
            detection.entities
        }
        DetectorKind::TagMark | DetectorKind::TagRep => unreachable!("handled above"),
    };
    diagnostics.detected_spans += detected.len();

    match config.replacer {
        ReplacerKind::Direct => {
            let mapping = build_mapping(&detected, text, config, backends, session)?;
            Ok(replace_direct_with(text, &mapping, options))
        }
        ReplacerKind::Prompt => {
            let mapping = build_mapping(&detected, text, config, backends, session)?;
            let (result, rep_diag) = replace_prompt(
                text,
                &mapping,
                backends.chat(Stage::Replacement)?,
                config
                    .templates
                    .replacement
                    .as_deref()
                    .unwrap_or(DEFAULT_REPLACEMENT_TEMPLATE),
            )?;
            if rep_diag.prompt_fallback {
                diagnostics.prompt_replacer_fallbacks += 1;
            }
            Ok(result)
        }
        ReplacerKind::Generative => replace_with_generator(
            text,
            DetectionMode::SetMatch(&detected),
            config,
            backends,
            session,
            diagnostics,
        ),
    }
}

/// Build the mapping for every distinct detected original, in document order.
fn build_mapping(
    detected: &EntitySet,
    text: &str,
    config: &PipelineConfig,
    backends: &BackendSet,
    session: &mut GenerationSession,
) -> Result<ReplacementMapping, PipelineError> {
    let mut mapping = ReplacementMapping::empty();
    for occ in detected.distinct_texts() {
        let pair = generate_for(occ, text, config, backends, session)?;
        if mapping.get(&pair.original).is_none() {
            mapping.push(pair)?;
        }
    }
    Ok(mapping)
}

fn generate_for(
    occ: &EntityOccurrence,
    context: &str,
    config: &PipelineConfig,
    backends: &BackendSet,
    session: &mut GenerationSession,
) -> Result<ReplacementPair, PipelineError> {
    match config.generator {
        GeneratorKind::Random => Ok(generate_random(occ, backends.pool()?, session)?),
        GeneratorKind::Prompt => Ok(generate_prompt(
            occ,
            context,
            backends.chat(Stage::Generation)?,
            config
                .templates
                .generation
                .as_deref()
                .unwrap_or(DEFAULT_GENERATION_TEMPLATE),
            session,
        )?),
    }
}

fn replace_with_generator(
    text: &str,
    mode: DetectionMode<'_>,
    config: &PipelineConfig,
    backends: &BackendSet,
    session: &mut GenerationSession,
    diagnostics: &mut PipelineDiagnostics,
) -> Result<PseudonymizedText, PipelineError> {
    let g = match &config.templates.conditioning {
        Some(t) => PromptTemplateG::new(t.clone())
            .map_err(|e| PipelineError::InvalidConfig(e.to_string()))?,
        None => PromptTemplateG::default(),
    };
    let mut predictor = backends.predictor(text)?;

    struct StageGenerator<'a> {
        context: String,
        config: &'a PipelineConfig,
        backends: &'a BackendSet,
        session: &'a mut GenerationSession,
        error: Option<PipelineError>,
    }

    impl ReplacementGenerator for StageGenerator<'_> {
        fn replacement_for(
            &mut self,
            original: &str,
            category: EntityCategory,
        ) -> Result<ReplacementPair, GenError> {
            let occ = EntityOccurrence {
                text: original.to_string(),
                category,
                start: 0,
                end: original.len(),
            };
            generate_for(
                &occ,
                &self.context,
                self.config,
                self.backends,
                self.session,
            )
            .map_err(|e| {
                let gen_err = GenError::InvalidCandidate(e.to_string());
                self.error = Some(e);
                gen_err
            })
        }
    }

    // Tag modes detect while generating, so their spans are only countable
    // from the finished offset map.
    let tag_mode = matches!(mode, DetectionMode::TagMark | DetectionMode::TagReplace);
    let mut generator = StageGenerator {
        context: text.to_string(),
        config,
        backends,
        session,
        error: None,
    };
    let result = replace_generative(text, mode, &mut generator, predictor.as_mut(), &g);
    match result {
        Ok((output, _mapping)) => {
            // The pair list is already tracked by the shared generation session.
            if tag_mode {
                diagnostics.detected_spans += output.offset_map.len();
            }
            Ok(output)
        }
        Err(e) => Err(generator
            .error
            .take()
            .map_or(PipelineError::Replacement(e), |inner| inner)),
    }
}

/// Restore upstream output: replace every word-boundary occurrence of each
/// replacement with its original, longest replacement first. Matching is
/// case-insensitive so re-cased tokens are still restored; the original is
/// substituted verbatim.
pub fn restore_output(y_prime: &str, session: &MappingSession) -> String {
    replace_direct_with(
        y_prime,
        &session.mapping.inverse(),
        MatchOptions::case_insensitive(),
    )
    .text
}
