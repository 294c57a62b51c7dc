//! Shared domain types and span algebra.
//!
//! Everything downstream works in byte offsets into the source text. Spans
//! always fall on character boundaries because patterns are matched as whole
//! UTF-8 strings. All types here are immutable values and safe to share
//! across threads.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use aho_corasick::AhoCorasick;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Category of a privacy entity.
///
/// `Unknown` is reserved for tag-format detections, which carry no category
/// information. The declaration order is the tie-break order used by
/// [`resolve_overlaps`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityCategory {
    Person,
    Location,
    Organization,
    Unknown,
}

impl EntityCategory {
    pub fn as_str(&self) -> &'static str {
        match self {
            EntityCategory::Person => "person",
            EntityCategory::Location => "location",
            EntityCategory::Organization => "organization",
            EntityCategory::Unknown => "unknown",
        }
    }

    /// All categories in tie-break order.
    pub fn all() -> [EntityCategory; 4] {
        [
            EntityCategory::Person,
            EntityCategory::Location,
            EntityCategory::Organization,
            EntityCategory::Unknown,
        ]
    }
}

impl fmt::Display for EntityCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntityCategory {
    type Err = UnknownCategory;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "person" | "per" => Ok(EntityCategory::Person),
            "location" | "loc" => Ok(EntityCategory::Location),
            "organization" | "org" => Ok(EntityCategory::Organization),
            "unknown" => Ok(EntityCategory::Unknown),
            other => Err(UnknownCategory(other.to_string())),
        }
    }
}

#[derive(Debug, Error)]
#[error("unknown entity category {0:?}")]
pub struct UnknownCategory(pub String);

/// A detected privacy span: the surface form plus its byte range in the source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityOccurrence {
    pub text: String,
    pub category: EntityCategory,
    pub start: usize,
    pub end: usize,
}

impl EntityOccurrence {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn overlaps(&self, other: &EntityOccurrence) -> bool {
        self.start < other.end && other.start < self.end
    }
}

/// Detected spans in document order.
///
/// May contain overlapping spans until [`resolve_overlaps`] is applied.
/// Serializes to a JSON array of `{"text","category","start","end"}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct EntitySet {
    occurrences: Vec<EntityOccurrence>,
    #[serde(skip)]
    source_len: usize,
}

impl EntitySet {
    /// Build a set from raw occurrences, sorting into document order.
    pub fn new(mut occurrences: Vec<EntityOccurrence>, source_len: usize) -> Self {
        occurrences.sort_by(|a, b| (a.start, a.end, a.category).cmp(&(b.start, b.end, b.category)));
        occurrences.dedup();
        EntitySet {
            occurrences,
            source_len,
        }
    }

    pub fn empty(source_len: usize) -> Self {
        EntitySet {
            occurrences: Vec::new(),
            source_len,
        }
    }

    pub fn occurrences(&self) -> &[EntityOccurrence] {
        &self.occurrences
    }

    pub fn source_len(&self) -> usize {
        self.source_len
    }

    pub fn len(&self) -> usize {
        self.occurrences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occurrences.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, EntityOccurrence> {
        self.occurrences.iter()
    }

    /// Distinct surface forms in first-appearance order.
    pub fn distinct_texts(&self) -> Vec<&EntityOccurrence> {
        let mut seen = std::collections::HashSet::new();
        self.occurrences
            .iter()
            .filter(|o| seen.insert(o.text.as_str()))
            .collect()
    }
}

/// One original/replacement pair of the mapping set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplacementPair {
    pub original: String,
    pub replacement: String,
    pub category: EntityCategory,
}

impl ReplacementPair {
    pub fn new(
        original: impl Into<String>,
        replacement: impl Into<String>,
        category: EntityCategory,
    ) -> Result<Self, MappingError> {
        let pair = ReplacementPair {
            original: original.into(),
            replacement: replacement.into(),
            category,
        };
        if pair.original.is_empty() || pair.replacement.is_empty() {
            return Err(MappingError::EmptyMember);
        }
        if pair.original.eq_ignore_ascii_case(&pair.replacement) {
            return Err(MappingError::SelfMapping(pair.original));
        }
        Ok(pair)
    }
}

/// The ordered, injective mapping set for one document or session.
///
/// Invariants (checked on construction and insertion):
/// - originals pairwise distinct, replacements pairwise distinct
///   (case-insensitively, so restoration stays unambiguous after upstream
///   models re-case tokens);
/// - no replacement equals, or contains at a word boundary, any original.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct ReplacementMapping {
    pairs: Vec<ReplacementPair>,
}

impl ReplacementMapping {
    pub fn new(pairs: Vec<ReplacementPair>) -> Result<Self, MappingError> {
        let mut mapping = ReplacementMapping::default();
        for pair in pairs {
            mapping.push(pair)?;
        }
        Ok(mapping)
    }

    pub fn empty() -> Self {
        ReplacementMapping::default()
    }

    /// Append a pair, enforcing the mapping invariants against what is
    /// already present.
    pub fn push(&mut self, pair: ReplacementPair) -> Result<(), MappingError> {
        if pair.original.eq_ignore_ascii_case(&pair.replacement) {
            return Err(MappingError::SelfMapping(pair.original));
        }
        for existing in &self.pairs {
            if existing.original.eq_ignore_ascii_case(&pair.original) {
                return Err(MappingError::DuplicateOriginal(pair.original));
            }
            if existing.replacement.eq_ignore_ascii_case(&pair.replacement) {
                return Err(MappingError::DuplicateReplacement(pair.replacement));
            }
            if existing.original.eq_ignore_ascii_case(&pair.replacement)
                || existing.replacement.eq_ignore_ascii_case(&pair.original)
            {
                return Err(MappingError::CrossCollision {
                    original: pair.original,
                    replacement: pair.replacement,
                });
            }
        }
        // A replacement that embeds any original as a word would re-leak it
        // the moment it is spliced into the text.
        let originals: Vec<&str> = self
            .pairs
            .iter()
            .map(|p| p.original.as_str())
            .chain(std::iter::once(pair.original.as_str()))
            .collect();
        for replacement in self
            .pairs
            .iter()
            .map(|p| p.replacement.as_str())
            .chain(std::iter::once(pair.replacement.as_str()))
        {
            for original in &originals {
                if contains_word(replacement, original, true) {
                    return Err(MappingError::ReplacementEmbedsOriginal {
                        replacement: replacement.to_string(),
                        original: original.to_string(),
                    });
                }
            }
        }
        self.pairs.push(pair);
        Ok(())
    }

    pub fn pairs(&self) -> &[ReplacementPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, ReplacementPair> {
        self.pairs.iter()
    }

    pub fn get(&self, original: &str) -> Option<&ReplacementPair> {
        self.pairs
            .iter()
            .find(|p| p.original.eq_ignore_ascii_case(original))
    }

    /// Swap originals and replacements. The invariants are symmetric, so the
    /// inverse of a valid mapping is always valid.
    pub fn inverse(&self) -> ReplacementMapping {
        ReplacementMapping {
            pairs: self
                .pairs
                .iter()
                .map(|p| ReplacementPair {
                    original: p.replacement.clone(),
                    replacement: p.original.clone(),
                    category: p.category,
                })
                .collect(),
        }
    }
}

impl<'de> Deserialize<'de> for ReplacementMapping {
    fn deserialize<D>(deserializer: D) -> Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        let pairs = Vec::<ReplacementPair>::deserialize(deserializer)?;
        ReplacementMapping::new(pairs).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MappingError {
    #[error("pair members must be non-empty")]
    EmptyMember,
    #[error("original {0:?} maps to itself")]
    SelfMapping(String),
    #[error("original {0:?} already present in mapping")]
    DuplicateOriginal(String),
    #[error("replacement {0:?} already present in mapping")]
    DuplicateReplacement(String),
    #[error("pair ({original:?} -> {replacement:?}) collides with an existing pair")]
    CrossCollision {
        original: String,
        replacement: String,
    },
    #[error("replacement {replacement:?} embeds original {original:?} at a word boundary")]
    ReplacementEmbedsOriginal {
        replacement: String,
        original: String,
    },
}

/// One replaced region: where it sat in the source and where its
/// substitution landed in the output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplacedSpan {
    pub src_start: usize,
    pub src_end: usize,
    pub dst_start: usize,
    pub dst_end: usize,
    pub original: String,
    pub replacement: String,
}

/// The pseudonymized text plus the offset map of every replaced region.
///
/// For span-splicing replacers (direct, generative) the offset map is
/// complete: [`PseudonymizedText::invert`] reproduces the source exactly.
/// The prompt-based replacer rewrites text freely, so its validated output
/// carries an empty offset map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PseudonymizedText {
    pub text: String,
    pub offset_map: Vec<ReplacedSpan>,
}

impl PseudonymizedText {
    pub fn unchanged(text: impl Into<String>) -> Self {
        PseudonymizedText {
            text: text.into(),
            offset_map: Vec::new(),
        }
    }

    /// Undo every recorded substitution, reconstructing the source text.
    pub fn invert(&self) -> String {
        let mut out = String::with_capacity(self.text.len());
        let mut last = 0;
        for span in &self.offset_map {
            out.push_str(&self.text[last..span.dst_start]);
            out.push_str(&span.original);
            last = span.dst_end;
        }
        out.push_str(&self.text[last..]);
        out
    }
}

/// Matching switches shared by detection and replacement.
///
/// Case-insensitive matching is ASCII-only: it exists so that restoration
/// can catch upstream re-casing ("eifel mountains"), not to fold arbitrary
/// Unicode.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MatchOptions {
    pub ascii_case_insensitive: bool,
}

impl MatchOptions {
    pub fn case_insensitive() -> Self {
        MatchOptions {
            ascii_case_insensitive: true,
        }
    }
}

/// Find every word-boundary occurrence of every entity string in `text`.
///
/// Matching is case-sensitive exact; occurrences may overlap each other
/// (feed the result through [`resolve_overlaps`]). Empty entity strings are
/// ignored.
pub fn find_entity_occurrences(text: &str, entities: &[(String, EntityCategory)]) -> EntitySet {
    find_entity_occurrences_with(text, entities, MatchOptions::default())
}

/// [`find_entity_occurrences`] with explicit matching options.
pub fn find_entity_occurrences_with(
    text: &str,
    entities: &[(String, EntityCategory)],
    options: MatchOptions,
) -> EntitySet {
    let patterns: Vec<(&str, EntityCategory)> = entities
        .iter()
        .filter(|(s, _)| !s.is_empty())
        .map(|(s, c)| (s.as_str(), *c))
        .collect();
    if text.is_empty() || patterns.is_empty() {
        return EntitySet::empty(text.len());
    }
    let automaton = AhoCorasick::builder()
        .ascii_case_insensitive(options.ascii_case_insensitive)
        .build(patterns.iter().map(|(s, _)| *s))
        .expect("patterns are non-empty strings");
    let mut found = Vec::new();
    for m in automaton.find_overlapping_iter(text) {
        if !is_word_bounded(text, m.start(), m.end()) {
            continue;
        }
        let (_, category) = patterns[m.pattern().as_usize()];
        found.push(EntityOccurrence {
            text: text[m.start()..m.end()].to_string(),
            category,
            start: m.start(),
            end: m.end(),
        });
    }
    EntitySet::new(found, text.len())
}

/// True when `text[start..end]` is not flanked by alphanumeric characters.
pub fn is_word_bounded(text: &str, start: usize, end: usize) -> bool {
    let before_ok = text[..start]
        .chars()
        .next_back()
        .is_none_or(|c| !c.is_alphanumeric());
    let after_ok = text[end..]
        .chars()
        .next()
        .is_none_or(|c| !c.is_alphanumeric());
    before_ok && after_ok
}

/// True when `needle` occurs in `haystack` delimited by word boundaries.
/// Allocation-free byte scan: this runs on hot paths (candidate exclusion,
/// mapping validation, leak checks).
pub fn contains_word(haystack: &str, needle: &str, ascii_case_insensitive: bool) -> bool {
    let h = haystack.as_bytes();
    let n = needle.as_bytes();
    if n.is_empty() || h.len() < n.len() {
        return false;
    }
    for start in 0..=h.len() - n.len() {
        if !haystack.is_char_boundary(start) {
            continue;
        }
        let end = start + n.len();
        let window = &h[start..end];
        let hit = if ascii_case_insensitive {
            window.eq_ignore_ascii_case(n)
        } else {
            window == n
        };
        if hit && haystack.is_char_boundary(end) && is_word_bounded(haystack, start, end) {
            return true;
        }
    }
    false
}

/// Keep a maximal non-overlapping subset of `spans`.
///
/// Longer spans win over shorter; ties break by leftmost start, then by
/// category order. Idempotent.
pub fn resolve_overlaps(spans: &EntitySet) -> EntitySet {
    let mut ranked: Vec<&EntityOccurrence> = spans.occurrences().iter().collect();
    ranked.sort_by(|a, b| {
        b.len()
            .cmp(&a.len())
            .then(a.start.cmp(&b.start))
            .then(a.category.cmp(&b.category))
    });
    let mut kept: Vec<EntityOccurrence> = Vec::new();
    for candidate in ranked {
        if !kept.iter().any(|k| k.overlaps(candidate)) {
            kept.push(candidate.clone());
        }
    }
    EntitySet::new(kept, spans.source_len())
}

/// Case-insensitive original -> pair index, used when substituting resolved
/// spans back against a mapping.
pub(crate) fn lookup_by_original(mapping: &ReplacementMapping) -> HashMap<String, usize> {
    mapping
        .pairs()
        .iter()
        .enumerate()
        .map(|(i, p)| (p.original.to_ascii_lowercase(), i))
        .collect()
}
