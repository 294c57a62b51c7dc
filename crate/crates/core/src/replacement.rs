//! Entity replacement: direct span substitution, prompt-based rewriting
//! with a validated fallback, and replacement inside a controllable
//! generation loop driven by a [`TokenPredictor`].
//!
//! The generative replacer echoes the input token by token and splices
//! replacement tokens at entity positions, so every later token is
//! conditioned on the replacement rather than the original. Three detection
//! modes are supported: matching against a precomputed entity set, and the
//! two tag formats a sequence-to-sequence tagger emits.

use thiserror::Error;

use crate::backend::{argmax, ChatClient, ChatError, ChatMessage, PredictError, TokenPredictor};
use crate::detection::{align_tag_replaced, AlignError, TemplateError};
use crate::generation::GenError;
use crate::model::{
    contains_word, find_entity_occurrences_with, lookup_by_original, resolve_overlaps,
    EntityCategory, EntitySet, MappingError, MatchOptions, PseudonymizedText, ReplacedSpan,
    ReplacementMapping, ReplacementPair,
};
use crate::tokenizer::{tokenize, ENT_CLOSE, ENT_OPEN};

#[derive(Debug, Error)]
pub enum RepError {
    #[error("replacement backend failed: {0}")]
    Upstream(#[source] ChatError),
    #[error("predictor failed: {0}")]
    Predict(#[from] PredictError),
    #[error(
        "predictor diverged from echo at token {position}: expected {expected:?}, got {got:?}"
    )]
    EchoDiverged {
        position: usize,
        expected: Option<String>,
        got: Option<String>,
    },
    #[error("token budget of {limit} exhausted before end of sequence")]
    Budget { limit: usize },
    #[error("malformed tag stream: {0}")]
    Tags(String),
    #[error("entity span {start}..{end} does not align to token boundaries")]
    SpanMisaligned { start: usize, end: usize },
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Generation(#[from] GenError),
    #[error(transparent)]
    Mapping(#[from] MappingError),
}

/// Replace every resolved occurrence of every mapping original, left to
/// right. Text outside the replaced spans is untouched.
pub fn replace_direct(text: &str, mapping: &ReplacementMapping) -> PseudonymizedText {
    replace_direct_with(text, mapping, MatchOptions::default())
}

/// [`replace_direct`] with explicit matching options. Restoration runs this
/// case-insensitively so re-cased replacements are still found; the original
/// casing of the substituted string is always emitted verbatim.
pub fn replace_direct_with(
    text: &str,
    mapping: &ReplacementMapping,
    options: MatchOptions,
) -> PseudonymizedText {
    let entities: Vec<(String, EntityCategory)> = mapping
        .pairs()
        .iter()
        .map(|p| (p.original.clone(), p.category))
        .collect();
    let resolved = resolve_overlaps(&find_entity_occurrences_with(text, &entities, options));
    let by_original = lookup_by_original(mapping);

    let mut out = String::with_capacity(text.len());
    let mut offset_map = Vec::with_capacity(resolved.len());
    let mut last = 0;
    for occ in resolved.iter() {
        let pair = &mapping.pairs()[by_original[&occ.text.to_ascii_lowercase()]];
        out.push_str(&text[last..occ.start]);
        let dst_start = out.len();
        out.push_str(&pair.replacement);
        offset_map.push(ReplacedSpan {
            src_start: occ.start,
            src_end: occ.end,
            dst_start,
            dst_end: out.len(),
            original: occ.text.clone(),
            replacement: pair.replacement.clone(),
        });
        last = occ.end;
    }
    out.push_str(&text[last..]);
    PseudonymizedText {
        text: out,
        offset_map,
    }
}

/// Outcome flags for the prompt-based replacer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RepDiagnostics {
    /// The model rewrite failed validation and the direct replacer ran
    /// instead.
    pub prompt_fallback: bool,
}

pub const DEFAULT_REPLACEMENT_TEMPLATE: &str = "Rewrite the text below, replacing each entity \
listed under Substitutions with its replacement and adjusting the surrounding grammar where \
needed. Keep everything else unchanged. Respond with the rewritten text only.\n\n\
Substitutions:\n{mapping}\n\nText: {input}";

/// Ask the chat backend to rewrite `text` under `mapping`.
///
/// The rewrite is accepted only if no original remains as a word-boundary
/// match and every replacement appears; otherwise the direct replacer runs
/// and the fallback is flagged. Model rewrites carry an empty offset map.
pub fn replace_prompt(
    text: &str,
    mapping: &ReplacementMapping,
    client: &dyn ChatClient,
    template: &str,
) -> Result<(PseudonymizedText, RepDiagnostics), RepError> {
    if mapping.is_empty() {
        return Ok((
            PseudonymizedText::unchanged(text),
            RepDiagnostics::default(),
        ));
    }
    let rendered_mapping: String = mapping
        .pairs()
        .iter()
        .map(|p| format!("- {} -> {}\n", p.original, p.replacement))
        .collect();
    let prompt = template
        .replace("{mapping}", rendered_mapping.trim_end())
        .replace("{input}", text);
    let answer = client
        .complete(&[ChatMessage::user(prompt)])
        .map_err(RepError::Upstream)?;
    let rewritten = answer.trim();

    let valid = !rewritten.is_empty()
        && mapping.pairs().iter().all(|p| {
            !contains_word(rewritten, &p.original, true)
                && contains_word(rewritten, &p.replacement, true)
        });
    if valid {
        Ok((
            PseudonymizedText {
                text: rewritten.to_string(),
                offset_map: Vec::new(),
            },
            RepDiagnostics::default(),
        ))
    } else {
        Ok((
            replace_direct(text, mapping),
            RepDiagnostics {
                prompt_fallback: true,
            },
        ))
    }
}

/// Prompt template function `g`: wraps the source text into the predictor's
/// conditioning prompt. Must contain `{input}` exactly once, which keeps
/// rendering injective for a fixed template.
#[derive(Debug, Clone)]
pub struct PromptTemplateG {
    template: String,
}

pub const DEFAULT_G_TEMPLATE: &str = "Repeat the following text exactly:\n{input}";

impl PromptTemplateG {
    pub fn new(template: impl Into<String>) -> Result<Self, TemplateError> {
        let template = template.into();
        match template.matches("{input}").count() {
            1 => Ok(PromptTemplateG { template }),
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

impl Default for PromptTemplateG {
    fn default() -> Self {
        PromptTemplateG::new(DEFAULT_G_TEMPLATE).expect("default template is valid")
    }
}

/// How the generation loop decides that emitted tokens form an entity.
#[derive(Debug, Clone)]
pub enum DetectionMode<'a> {
    /// Compare the stream against a precomputed entity set (NER or
    /// prompt-based detection ran beforehand).
    SetMatch(&'a EntitySet),
    /// The predictor wraps entities in `<ENT>...</ENT>`.
    TagMark,
    /// The predictor collapses entities to bare `<ENT>` placeholders; the
    /// originals are recovered by context alignment in positional order.
    TagReplace,
}

/// Supplies the replacement for a detected original. Implementations keep a
/// session so repeated originals resolve to one consistent pair.
pub trait ReplacementGenerator {
    fn replacement_for(
        &mut self,
        original: &str,
        category: EntityCategory,
    ) -> Result<ReplacementPair, GenError>;
}

impl<F> ReplacementGenerator for F
where
    F: FnMut(&str, EntityCategory) -> Result<ReplacementPair, GenError>,
{
    fn replacement_for(
        &mut self,
        original: &str,
        category: EntityCategory,
    ) -> Result<ReplacementPair, GenError> {
        self(original, category)
    }
}

/// Replace entities during controllable text generation.
///
/// The predictor is driven greedily (argmax) under the conditioning prompt
/// `g(text)`. Pass-through tokens must echo the source; when an entity
/// completes, its tokens are discarded, the replacement's tokens are emitted
/// in their place, and generation continues with the replacement in the
/// prefix. Generation is bounded by `2 x input tokens + 64`.
pub fn replace_generative(
    text: &str,
    detection: DetectionMode<'_>,
    generator: &mut dyn ReplacementGenerator,
    predictor: &mut dyn TokenPredictor,
    g: &PromptTemplateG,
) -> Result<(PseudonymizedText, ReplacementMapping), RepError> {
    match detection {
        DetectionMode::SetMatch(entities) => {
            generate_set_match(text, entities, generator, predictor, g)
        }
        DetectionMode::TagMark => generate_tag_mark(text, generator, predictor, g),
        DetectionMode::TagReplace => generate_tag_replace(text, generator, predictor, g),
    }
}

struct TokenRun {
    tokens: Vec<String>,
    offsets: Vec<(usize, usize)>,
    budget: usize,
    calls: usize,
}

impl TokenRun {
    fn new(text: &str) -> Self {
        let tokens = tokenize(text);
        let mut offsets = Vec::with_capacity(tokens.len());
        let mut pos = 0;
        for t in &tokens {
            offsets.push((pos, pos + t.len()));
            pos += t.len();
        }
        let budget = 2 * tokens.len() + 64;
        TokenRun {
            tokens,
            offsets,
            budget,
            calls: 0,
        }
    }

    fn step(
        &mut self,
        predictor: &mut dyn TokenPredictor,
        prefix: &[usize],
        conditioning: &str,
    ) -> Result<usize, RepError> {
        if self.calls >= self.budget {
            return Err(RepError::Budget { limit: self.budget });
        }
        self.calls += 1;
        let distribution = predictor.next(prefix, conditioning)?;
        Ok(argmax(&distribution))
    }
}

fn generate_set_match(
    text: &str,
    entities: &EntitySet,
    generator: &mut dyn ReplacementGenerator,
    predictor: &mut dyn TokenPredictor,
    g: &PromptTemplateG,
) -> Result<(PseudonymizedText, ReplacementMapping), RepError> {
    // Resolve occurrences up front with the same policy as the direct
    // replacer, so both paths pick identical spans.
    let patterns: Vec<(String, EntityCategory)> = entities
        .distinct_texts()
        .into_iter()
        .map(|o| (o.text.clone(), o.category))
        .collect();
    let resolved = resolve_overlaps(&find_entity_occurrences_with(
        text,
        &patterns,
        MatchOptions::default(),
    ));
    let mut spans = resolved.iter().peekable();

    let conditioning = g.render(text);
    let mut run = TokenRun::new(text);
    let tokens = run.tokens.clone();
    let offsets = run.offsets.clone();

    let mut out = String::with_capacity(text.len());
    let mut offset_map = Vec::new();
    let mut mapping = ReplacementMapping::empty();
    let mut prefix: Vec<usize> = Vec::with_capacity(tokens.len());
    let mut cursor = 0; // source token index

    while cursor < tokens.len() {
        let span = spans.peek().copied();
        if let Some(s) = span {
            // Spans come from word-bounded matches, which always coincide
            // with token boundaries for trimmed entity strings.
            if s.start < offsets[cursor].0 {
                return Err(RepError::SpanMisaligned {
                    start: s.start,
                    end: s.end,
                });
            }
        }
        let in_span = span.filter(|s| offsets[cursor].0 == s.start);
        if let Some(occ) = in_span {
            // Consume every source token of the entity, verifying the echo.
            let pending_base = prefix.len();
            let mut consumed_end = occ.start;
            while cursor < tokens.len() && offsets[cursor].1 <= occ.end {
                let id = run.step(predictor, &prefix, &conditioning)?;
                let token = expect_token(predictor, id, &tokens, cursor)?;
                if token != tokens[cursor] {
                    return Err(RepError::EchoDiverged {
                        position: cursor,
                        expected: Some(tokens[cursor].clone()),
                        got: Some(token),
                    });
                }
                prefix.push(id);
                consumed_end = offsets[cursor].1;
                cursor += 1;
            }
            if consumed_end != occ.end {
                return Err(RepError::SpanMisaligned {
                    start: occ.start,
                    end: occ.end,
                });
            }
            let pair = generator.replacement_for(&occ.text, occ.category)?;
            if mapping.get(&pair.original).is_none() {
                mapping.push(pair.clone())?;
            }
            // Swap the entity tokens out of the prefix for the replacement,
            // so the next prediction is conditioned on what was emitted.
            prefix.truncate(pending_base);
            for q_token in tokenize(&pair.replacement) {
                prefix.push(predictor.token_id(&q_token));
            }
            let dst_start = out.len();
            out.push_str(&pair.replacement);
            offset_map.push(ReplacedSpan {
                src_start: occ.start,
                src_end: occ.end,
                dst_start,
                dst_end: out.len(),
                original: occ.text.clone(),
                replacement: pair.replacement.clone(),
            });
            spans.next();
        } else {
            let id = run.step(predictor, &prefix, &conditioning)?;
            let token = expect_token(predictor, id, &tokens, cursor)?;
            if token != tokens[cursor] {
                return Err(RepError::EchoDiverged {
                    position: cursor,
                    expected: Some(tokens[cursor].clone()),
                    got: Some(token),
                });
            }
            prefix.push(id);
            out.push_str(&tokens[cursor]);
            cursor += 1;
        }
    }
    // The echo must stop exactly at the end of the source.
    let id = run.step(predictor, &prefix, &conditioning)?;
    if id != predictor.eos_id() {
        return Err(RepError::EchoDiverged {
            position: cursor,
            expected: None,
            got: predictor.vocab().get(id).cloned(),
        });
    }
    Ok((
        PseudonymizedText {
            text: out,
            offset_map,
        },
        mapping,
    ))
}

fn expect_token(
    predictor: &dyn TokenPredictor,
    id: usize,
    tokens: &[String],
    position: usize,
) -> Result<String, RepError> {
    if id == predictor.eos_id() {
        return Err(RepError::EchoDiverged {
            position,
            expected: tokens.get(position).cloned(),
            got: None,
        });
    }
    predictor
        .vocab()
        .get(id)
        .cloned()
        .ok_or(RepError::Predict(PredictError::UnknownToken(id)))
}

fn generate_tag_mark(
    text: &str,
    generator: &mut dyn ReplacementGenerator,
    predictor: &mut dyn TokenPredictor,
    g: &PromptTemplateG,
) -> Result<(PseudonymizedText, ReplacementMapping), RepError> {
    let conditioning = g.render(text);
    let mut run = TokenRun::new(text);
    let tokens = run.tokens.clone();
    let offsets = run.offsets.clone();

    let mut out = String::with_capacity(text.len());
    let mut offset_map = Vec::new();
    let mut mapping = ReplacementMapping::empty();
    let mut prefix: Vec<usize> = Vec::new();
    let mut cursor = 0;
    // Some(ids of the open tag plus entity tokens consumed so far).
    let mut pending: Option<(usize, Vec<String>)> = None;

    loop {
        let id = run.step(predictor, &prefix, &conditioning)?;
        if id == predictor.eos_id() {
            if pending.is_some() {
                return Err(RepError::Tags("end of sequence inside <ENT>".into()));
            }
            break;
        }
        let token = predictor
            .vocab()
            .get(id)
            .cloned()
            .ok_or(RepError::Predict(PredictError::UnknownToken(id)))?;
        match (&mut pending, token.as_str()) {
            (None, ENT_OPEN) => {
                pending = Some((prefix.len(), Vec::new()));
                prefix.push(id);
            }
            (None, ENT_CLOSE) => {
                return Err(RepError::Tags("</ENT> without opening tag".into()));
            }
            (None, _) => {
                if cursor >= tokens.len() || token != tokens[cursor] {
                    return Err(RepError::EchoDiverged {
                        position: cursor,
                        expected: tokens.get(cursor).cloned(),
                        got: Some(token),
                    });
                }
                prefix.push(id);
                out.push_str(&tokens[cursor]);
                cursor += 1;
            }
            (Some(_), ENT_OPEN) => {
                return Err(RepError::Tags("nested <ENT>".into()));
            }
            (Some((pending_base, entity_tokens)), ENT_CLOSE) => {
                if entity_tokens.is_empty() {
                    return Err(RepError::Tags("empty <ENT></ENT> pair".into()));
                }
                let span_len = entity_tokens.len();
                if cursor + span_len > tokens.len()
                    || tokens[cursor..cursor + span_len] != entity_tokens[..]
                {
                    return Err(RepError::Tags(format!(
                        "marked entity {:?} does not match the source at token {cursor}",
                        entity_tokens.concat(),
                    )));
                }
                let src_start = offsets[cursor].0;
                let src_end = offsets[cursor + span_len - 1].1;
                let original = entity_tokens.concat();
                let pair = generator.replacement_for(&original, EntityCategory::Unknown)?;
                if mapping.get(&pair.original).is_none() {
                    mapping.push(pair.clone())?;
                }
                let base = *pending_base;
                prefix.truncate(base);
                for q_token in tokenize(&pair.replacement) {
                    prefix.push(predictor.token_id(&q_token));
                }
                let dst_start = out.len();
                out.push_str(&pair.replacement);
                offset_map.push(ReplacedSpan {
                    src_start,
                    src_end,
                    dst_start,
                    dst_end: out.len(),
                    original,
                    replacement: pair.replacement.clone(),
                });
                cursor += span_len;
                pending = None;
            }
            (Some((_, entity_tokens)), _) => {
                entity_tokens.push(token);
                prefix.push(id);
            }
        }
    }
    if cursor != tokens.len() {
        return Err(RepError::EchoDiverged {
            position: cursor,
            expected: tokens.get(cursor).cloned(),
            got: None,
        });
    }
    Ok((
        PseudonymizedText {
            text: out,
            offset_map,
        },
        mapping,
    ))
}

fn generate_tag_replace(
    text: &str,
    generator: &mut dyn ReplacementGenerator,
    predictor: &mut dyn TokenPredictor,
    g: &PromptTemplateG,
) -> Result<(PseudonymizedText, ReplacementMapping), RepError> {
    let conditioning = g.render(text);
    let mut run = TokenRun::new(text);

    // The replace format erases entity content, so an original is only
    // recoverable once the context after its placeholder is known. Collect
    // the whole tagged stream first, then align.
    let mut prefix: Vec<usize> = Vec::new();
    let mut tagged = String::new();
    loop {
        let id = run.step(predictor, &prefix, &conditioning)?;
        if id == predictor.eos_id() {
            break;
        }
        let token = predictor
            .vocab()
            .get(id)
            .cloned()
            .ok_or(RepError::Predict(PredictError::UnknownToken(id)))?;
        if token == ENT_CLOSE {
            return Err(RepError::Tags("</ENT> in replace-format stream".into()));
        }
        tagged.push_str(&token);
        prefix.push(id);
    }

    let aligned = align_tag_replaced(&tagged, text)?;
    let mut mapping = ReplacementMapping::empty();
    let segments: Vec<&str> = tagged.split(ENT_OPEN).collect();
    debug_assert_eq!(segments.len(), aligned.len() + 1);

    let mut out = String::with_capacity(text.len());
    let mut offset_map = Vec::new();
    out.push_str(segments[0]);
    for (occ, segment) in aligned.iter().zip(&segments[1..]) {
        let pair = generator.replacement_for(&occ.text, EntityCategory::Unknown)?;
        if mapping.get(&pair.original).is_none() {
            mapping.push(pair.clone())?;
        }
        let dst_start = out.len();
        out.push_str(&pair.replacement);
        offset_map.push(ReplacedSpan {
            src_start: occ.start,
            src_end: occ.end,
            dst_start,
            dst_end: out.len(),
            original: occ.text.clone(),
            replacement: pair.replacement.clone(),
        });
        out.push_str(segment);
    }
    Ok((
        PseudonymizedText {
            text: out,
            offset_map,
        },
        mapping,
    ))
}
