//! Privacy-entity detection: gazetteer lookup, prompt-based detection
//! through a chat backend, and parsers for the two tag formats a
//! sequence-to-sequence tagger can emit (entities marked with
//! `<ENT>...</ENT>`, or collapsed to bare `<ENT>` placeholders).

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::backend::{ChatClient, ChatError, ChatMessage};
use crate::datafile::{self, DataFileError};
use crate::model::{
    find_entity_occurrences_with, resolve_overlaps, EntityCategory, EntityOccurrence, EntitySet,
    MatchOptions,
};
use crate::tokenizer::{ENT_CLOSE, ENT_OPEN};

/// Dictionary of known entity strings, the deterministic stand-in for an
/// off-the-shelf NER model.
#[derive(Debug, Clone)]
pub struct Gazetteer {
    entries: BTreeMap<String, EntityCategory>,
}

impl Gazetteer {
    pub fn new(
        entries: impl IntoIterator<Item = (String, EntityCategory)>,
    ) -> Result<Self, DataFileError> {
        let mut map = BTreeMap::new();
        for (entity, category) in entries {
            if entity.is_empty() {
                return Err(DataFileError::BadLine {
                    line: 0,
                    text: String::new(),
                });
            }
            map.insert(entity, category);
        }
        if map.is_empty() {
            return Err(DataFileError::Empty);
        }
        Ok(Gazetteer { entries: map })
    }

    pub fn load(path: &Path) -> Result<Self, DataFileError> {
        Gazetteer::new(datafile::load_entries(path)?)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, EntityCategory)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum DetectionError {
    #[error("detection backend failed: {0}")]
    Upstream(#[source] ChatError),
    #[error("detection response unparseable after retry: {0}")]
    Malformed(String),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("unbalanced entity tags at byte {0}")]
    Unbalanced(usize),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AlignError {
    #[error("context segment {segment:?} not found in order")]
    NoAlignment { segment: String },
    #[error("placeholder {index} aligned to an empty gap")]
    EmptyGap { index: usize },
}

/// Dictionary detection: every word-bounded gazetteer hit, overlaps resolved.
pub fn detect_gazetteer(text: &str, gazetteer: &Gazetteer) -> EntitySet {
    detect_gazetteer_with(text, gazetteer, MatchOptions::default())
}

pub fn detect_gazetteer_with(
    text: &str,
    gazetteer: &Gazetteer,
    options: MatchOptions,
) -> EntitySet {
    let entries: Vec<(String, EntityCategory)> = gazetteer
        .entries()
        .map(|(e, c)| (e.to_string(), c))
        .collect();
    resolve_overlaps(&find_entity_occurrences_with(text, &entries, options))
}

/// Prompt template for the detection backend. Must contain exactly one
/// `{input}` placeholder so the rendered prompt always carries the text
/// verbatim.
#[derive(Debug, Clone)]
pub struct DetectionPromptTemplate {
    template: String,
}

pub const DEFAULT_DETECTION_TEMPLATE: &str = "List every person, location, and organization name \
that appears verbatim in the text below. Respond with a JSON array only, one object per entity, \
like [{\"text\": \"...\", \"category\": \"person\"}]. Allowed categories: person, location, \
organization. Respond with [] if there are none.\n\nText: {input}";

impl DetectionPromptTemplate {
    pub fn new(template: impl Into<String>) -> Result<Self, TemplateError> {
        let template = template.into();
        match template.matches("{input}").count() {
            1 => Ok(DetectionPromptTemplate { template }),
            n => Err(TemplateError::Placeholder {
                placeholder: "{input}",
                count: n,
            }),
        }
    }

    pub fn render(&self, input: &str) -> String {
        self.template.replace("{input}", input)
    }
}

impl Default for DetectionPromptTemplate {
    fn default() -> Self {
        DetectionPromptTemplate::new(DEFAULT_DETECTION_TEMPLATE).expect("default template is valid")
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template must contain {placeholder} exactly once (found {count})")]
    Placeholder {
        placeholder: &'static str,
        count: usize,
    },
}

/// Result of prompt-based detection: the located spans plus the model
/// answers that were dropped because they do not occur in the text.
#[derive(Debug, Clone)]
pub struct PromptDetection {
    pub entities: EntitySet,
    pub dropped: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct RawDetection {
    text: String,
    #[serde(default)]
    category: Option<String>,
}

/// Ask the chat backend for entities and locate each answer in `text`.
///
/// Malformed output gets one reformat retry before the call fails.
pub fn detect_prompt(
    text: &str,
    client: &dyn ChatClient,
    template: &DetectionPromptTemplate,
) -> Result<PromptDetection, DetectionError> {
    detect_prompt_with(text, client, template, MatchOptions::default())
}

pub fn detect_prompt_with(
    text: &str,
    client: &dyn ChatClient,
    template: &DetectionPromptTemplate,
    options: MatchOptions,
) -> Result<PromptDetection, DetectionError> {
    let mut messages = vec![ChatMessage::user(template.render(text))];
    let first = client
        .complete(&messages)
        .map_err(DetectionError::Upstream)?;
    let raw = match parse_detection_json(&first) {
        Ok(items) => items,
        Err(_) => {
            messages.push(ChatMessage::assistant(first));
            messages.push(ChatMessage::user(
                "Respond with valid JSON only: a JSON array of {\"text\", \"category\"} objects.",
            ));
            let second = client
                .complete(&messages)
                .map_err(DetectionError::Upstream)?;
            parse_detection_json(&second).map_err(DetectionError::Malformed)?
        }
    };

    let mut dropped = Vec::new();
    let mut entities: Vec<(String, EntityCategory)> = Vec::new();
    for item in raw {
        if item.text.is_empty() {
            continue;
        }
        let category = item
            .category
            .as_deref()
            .and_then(|c| c.parse().ok())
            .unwrap_or(EntityCategory::Unknown);
        if !entities.iter().any(|(t, _)| t == &item.text) {
            entities.push((item.text, category));
        }
    }
    let found = find_entity_occurrences_with(text, &entities, options);
    for (candidate, _) in &entities {
        if !found.iter().any(|o| &o.text == candidate) {
            dropped.push(candidate.clone());
        }
    }
    Ok(PromptDetection {
        entities: resolve_overlaps(&found),
        dropped,
    })
}

fn parse_detection_json(response: &str) -> Result<Vec<RawDetection>, String> {
    let trimmed = response.trim();
    if let Ok(items) = serde_json::from_str::<Vec<RawDetection>>(trimmed) {
        return Ok(items);
    }
    // Models wrap answers in prose or code fences often enough that fishing
    // out the outermost array is worth one attempt before retrying.
    if let (Some(start), Some(end)) = (trimmed.find('['), trimmed.rfind(']')) {
        if start < end {
            if let Ok(items) = serde_json::from_str::<Vec<RawDetection>>(&trimmed[start..=end]) {
                return Ok(items);
            }
        }
    }
    Err(format!("not a JSON entity array: {trimmed:?}"))
}

/// Parse the mark format: every `<ENT>x</ENT>` becomes an occurrence of `x`.
///
/// Offsets are computed by stripping the tags; if the stripped text is not
/// byte-identical to `original`, the parser falls back to aligning the
/// untagged context segments against `original`.
pub fn parse_tag_marked(tagged: &str, original: &str) -> Result<EntitySet, TagRecoveryError> {
    let parts = split_marked(tagged)?;
    if parts.entities.is_empty() {
        return Ok(EntitySet::empty(original.len()));
    }

    let stripped: String = parts
        .contexts
        .iter()
        .zip(
            parts
                .entities
                .iter()
                .chain(std::iter::repeat(&String::new())),
        )
        .flat_map(|(ctx, ent)| [ctx.clone(), ent.clone()])
        .collect();
    if stripped == original {
        let mut occurrences = Vec::new();
        let mut pos = 0;
        for (ctx, ent) in parts.contexts.iter().zip(parts.entities.iter()) {
            pos += ctx.len();
            occurrences.push(EntityOccurrence {
                text: ent.clone(),
                category: EntityCategory::Unknown,
                start: pos,
                end: pos + ent.len(),
            });
            pos += ent.len();
        }
        return Ok(EntitySet::new(occurrences, original.len()));
    }
    align_segments(&parts.contexts, original).map_err(TagRecoveryError::Align)
}

/// Recover entities from the replace format: bare `<ENT>` placeholders with
/// the entity content erased. Context segments are anchored left to right in
/// `original`; the gaps between anchors are the recovered entities.
pub fn align_tag_replaced(tagged: &str, original: &str) -> Result<EntitySet, AlignError> {
    let segments: Vec<String> = tagged.split(ENT_OPEN).map(str::to_string).collect();
    if segments.len() == 1 {
        return Ok(EntitySet::empty(original.len()));
    }
    align_segments(&segments, original)
}

#[derive(Debug, Error)]
pub enum TagRecoveryError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Align(#[from] AlignError),
}

struct MarkedParts {
    contexts: Vec<String>, // entities.len() + 1 segments
    entities: Vec<String>,
}

fn split_marked(tagged: &str) -> Result<MarkedParts, ParseError> {
    let mut contexts = Vec::new();
    let mut entities = Vec::new();
    let mut rest = tagged;
    let mut consumed = 0;
    loop {
        let open = rest.find(ENT_OPEN);
        let close = rest.find(ENT_CLOSE);
        match (open, close) {
            (None, None) => {
                contexts.push(rest.to_string());
                break;
            }
            // A close tag before any open tag, or with no open tag at all.
            (None, Some(c)) => return Err(ParseError::Unbalanced(consumed + c)),
            (Some(o), Some(c)) if c < o => return Err(ParseError::Unbalanced(consumed + c)),
            (Some(o), close) => {
                let close = close.ok_or(ParseError::Unbalanced(consumed + o))?;
                let body = &rest[o + ENT_OPEN.len()..close];
                if body.contains(ENT_OPEN) {
                    return Err(ParseError::Unbalanced(consumed + o));
                }
                contexts.push(rest[..o].to_string());
                entities.push(body.to_string());
                let advance = close + ENT_CLOSE.len();
                consumed += advance;
                rest = &rest[advance..];
            }
        }
    }
    Ok(MarkedParts { contexts, entities })
}

/// Anchor `segments` (k+1 context pieces) in `original`; return the k gaps.
///
/// The first segment must be a prefix and the last must reach the end of
/// `original`, otherwise part of the text was never covered by the tagger.
/// Middle segments anchor at their leftmost occurrence, which resolves
/// ambiguity toward the shortest gap.
fn align_segments(segments: &[String], original: &str) -> Result<EntitySet, AlignError> {
    debug_assert!(segments.len() >= 2);
    if !original.starts_with(segments[0].as_str()) {
        return Err(AlignError::NoAlignment {
            segment: segments[0].clone(),
        });
    }
    let mut occurrences = Vec::new();
    let mut pos = segments[0].len();
    for (i, segment) in segments.iter().enumerate().skip(1) {
        let is_last = i == segments.len() - 1;
        let found = if segment.is_empty() {
            if is_last {
                Some(original.len() - pos)
            } else {
                // An empty middle segment gives no anchor to split adjacent
                // entities; there is no defensible recovery.
                None
            }
        } else {
            original[pos..].find(segment.as_str()).and_then(|offset| {
                if is_last && pos + offset + segment.len() != original.len() {
                    // The tail segment must consume the rest of the text.
                    original[pos..]
                        .rfind(segment.as_str())
                        .filter(|o| pos + o + segment.len() == original.len())
                } else {
                    Some(offset)
                }
            })
        };
        let offset = found.ok_or_else(|| AlignError::NoAlignment {
            segment: segment.clone(),
        })?;
        if offset == 0 {
            return Err(AlignError::EmptyGap { index: i });
        }
        occurrences.push(EntityOccurrence {
            text: original[pos..pos + offset].to_string(),
            category: EntityCategory::Unknown,
            start: pos,
            end: pos + offset,
        });
        pos += offset + segment.len();
    }
    Ok(EntitySet::new(occurrences, original.len()))
}
