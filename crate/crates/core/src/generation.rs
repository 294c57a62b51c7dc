//! Replacement-candidate generation: seeded random sampling from curated
//! pools, and prompt-based generation through a chat backend. A
//! [`GenerationSession`] scopes one document and keeps the induced mapping
//! injective: one consistent replacement per original, no replacement reused,
//! and no replacement that already occurs in the document (restoration would
//! otherwise corrupt genuine text).

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::backend::{ChatClient, ChatError, ChatMessage};
use crate::datafile::{self, DataFileError};
use crate::model::{contains_word, EntityCategory, EntityOccurrence, ReplacementPair};

/// Candidate strings per category, order-preserving.
#[derive(Debug, Clone, Default)]
pub struct CandidatePool {
    by_category: BTreeMap<EntityCategory, Vec<String>>,
}

impl CandidatePool {
    pub fn new(
        entries: impl IntoIterator<Item = (String, EntityCategory)>,
    ) -> Result<Self, DataFileError> {
        let mut by_category: BTreeMap<EntityCategory, Vec<String>> = BTreeMap::new();
        for (candidate, category) in entries {
            let list = by_category.entry(category).or_default();
            if list.contains(&candidate) {
                return Err(DataFileError::Duplicate {
                    line: 0,
                    entity: candidate,
                });
            }
            list.push(candidate);
        }
        Ok(CandidatePool { by_category })
    }

    pub fn load(path: &Path) -> Result<Self, DataFileError> {
        CandidatePool::new(datafile::load_entries(path)?)
    }

    /// Candidates for one category; `Unknown` draws from the union of all
    /// categories in category order.
    pub fn candidates(&self, category: EntityCategory) -> Vec<(&str, EntityCategory)> {
        match category {
            EntityCategory::Unknown => EntityCategory::all()
                .iter()
                .flat_map(|c| {
                    self.by_category
                        .get(c)
                        .into_iter()
                        .flatten()
                        .map(|s| (s.as_str(), *c))
                })
                .collect(),
            other => self
                .by_category
                .get(&other)
                .into_iter()
                .flatten()
                .map(|s| (s.as_str(), other))
                .collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.by_category.values().all(|v| v.is_empty())
    }
}

#[derive(Debug, Error)]
pub enum GenError {
    #[error("candidate pool exhausted for {0}")]
    PoolExhausted(EntityCategory),
    #[error("generation backend failed: {0}")]
    Upstream(#[source] ChatError),
    #[error("backend produced no valid candidate after retry: {0}")]
    InvalidCandidate(String),
    #[error("mapping invariant violated: {0}")]
    Mapping(#[from] crate::model::MappingError),
}

/// Per-document generation state: the assignments made so far, the seeded
/// RNG, and the source text used for collision exclusions.
#[derive(Debug)]
pub struct GenerationSession {
    // original (lowercased) -> pair, in assignment order
    assigned: Vec<(String, ReplacementPair)>,
    rng: ChaCha8Rng,
    source: String,
    seed: u64,
}

impl GenerationSession {
    pub fn new(seed: u64, source: impl Into<String>) -> Self {
        GenerationSession {
            assigned: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            source: source.into(),
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn assigned_pairs(&self) -> impl Iterator<Item = &ReplacementPair> {
        self.assigned.iter().map(|(_, p)| p)
    }

    pub fn lookup(&self, original: &str) -> Option<&ReplacementPair> {
        let key = original.to_ascii_lowercase();
        self.assigned
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, p)| p)
    }

    /// Pre-populate assignments (session continuation across requests).
    pub fn seed_pairs<'a>(&mut self, pairs: impl IntoIterator<Item = &'a ReplacementPair>) {
        for pair in pairs {
            let key = pair.original.to_ascii_lowercase();
            if !self.assigned.iter().any(|(k, _)| *k == key) {
                self.assigned.push((key, pair.clone()));
            }
        }
    }

    fn record(&mut self, pair: ReplacementPair) -> ReplacementPair {
        self.assigned
            .push((pair.original.to_ascii_lowercase(), pair.clone()));
        pair
    }

    /// True when `candidate` cannot serve as a replacement for `original`.
    fn excluded(&self, original: &str, candidate: &str) -> bool {
        if candidate.eq_ignore_ascii_case(original) {
            return true;
        }
        if self
            .assigned
            .iter()
            .any(|(_, p)| p.replacement.eq_ignore_ascii_case(candidate))
        {
            return true;
        }
        // Anything already present in the document must stay untouchable by
        // restoration, and no assigned original may resurface inside a
        // multi-word candidate.
        if contains_word(&self.source, candidate, true) {
            return true;
        }
        self.assigned
            .iter()
            .any(|(_, p)| contains_word(candidate, &p.original, true))
    }
}

/// Draw a uniform same-category replacement from the pool, excluding the
/// original, already-used replacements, and anything occurring in the source
/// document. Repeated requests for one original return the cached pair.
pub fn generate_random(
    entity: &EntityOccurrence,
    pool: &CandidatePool,
    session: &mut GenerationSession,
) -> Result<ReplacementPair, GenError> {
    if let Some(pair) = session.lookup(&entity.text) {
        return Ok(pair.clone());
    }
    let eligible: Vec<(&str, EntityCategory)> = pool
        .candidates(entity.category)
        .into_iter()
        .filter(|(candidate, _)| !session.excluded(&entity.text, candidate))
        .collect();
    if eligible.is_empty() {
        return Err(GenError::PoolExhausted(entity.category));
    }
    let (choice, category) = eligible[session.rng.gen_range(0..eligible.len())];
    let category = if entity.category == EntityCategory::Unknown {
        category
    } else {
        entity.category
    };
    let pair = ReplacementPair::new(entity.text.clone(), choice, category)?;
    Ok(session.record(pair))
}

pub const DEFAULT_GENERATION_TEMPLATE: &str = "Suggest a replacement for the {category} \
\"{entity}\" mentioned in the text below. The replacement must be a plausible {category} of the \
same kind, keep general attributes such as gender and language, be semantically distant from the \
original, and must not already appear in the text. Respond with the replacement name only.\n\n\
Text: {context}";

/// Render a generation prompt from a `{entity}`/`{category}`/`{context}`
/// template.
pub fn render_generation_prompt(
    template: &str,
    entity: &EntityOccurrence,
    context: &str,
) -> String {
    template
        .replace("{entity}", &entity.text)
        .replace("{category}", entity.category.as_str())
        .replace("{context}", context)
}

/// Ask the chat backend for a replacement candidate.
///
/// The candidate must be non-empty, differ from the original, not occur in
/// `context`, and respect the session's injectivity rules. One retry names
/// the violation; a second invalid answer fails the call.
pub fn generate_prompt(
    entity: &EntityOccurrence,
    context: &str,
    client: &dyn ChatClient,
    template: &str,
    session: &mut GenerationSession,
) -> Result<ReplacementPair, GenError> {
    if let Some(pair) = session.lookup(&entity.text) {
        return Ok(pair.clone());
    }
    let mut messages = vec![ChatMessage::user(render_generation_prompt(
        template, entity, context,
    ))];
    let mut last_violation = String::new();
    for _ in 0..2 {
        let answer = client.complete(&messages).map_err(GenError::Upstream)?;
        let candidate = answer.trim().trim_matches('"').trim();
        match validate_candidate(candidate, entity, context, session) {
            Ok(()) => {
                let pair = ReplacementPair::new(entity.text.clone(), candidate, entity.category)?;
                return Ok(session.record(pair));
            }
            Err(violation) => {
                messages.push(ChatMessage::assistant(answer.clone()));
                messages.push(ChatMessage::user(format!(
                    "That candidate is invalid: {violation}. Respond with a single different \
replacement name only."
                )));
                last_violation = violation;
            }
        }
    }
    Err(GenError::InvalidCandidate(last_violation))
}

fn validate_candidate(
    candidate: &str,
    entity: &EntityOccurrence,
    context: &str,
    session: &GenerationSession,
) -> Result<(), String> {
    if candidate.is_empty() {
        return Err("it is empty".to_string());
    }
    if candidate.eq_ignore_ascii_case(&entity.text) {
        return Err(format!("it equals the original {:?}", entity.text));
    }
    if context.contains(candidate) {
        return Err("it already appears in the text".to_string());
    }
    if session.excluded(&entity.text, candidate) {
        return Err("it collides with an existing assignment".to_string());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn occurrence(text: &str, category: EntityCategory) -> EntityOccurrence {
        EntityOccurrence {
            text: text.to_string(),
            category,
            start: 0,
            end: text.len(),
        }
    }

    fn location_pool(names: &[&str]) -> CandidatePool {
        CandidatePool::new(
            names
                .iter()
                .map(|n| (n.to_string(), EntityCategory::Location)),
        )
        .unwrap()
    }

    #[test]
    fn random_never_returns_the_original() {
        let pool = location_pool(&["Berlin", "Lyon", "Paris"]);
        for seed in 0..20 {
            let mut session = GenerationSession::new(seed, "about Paris");
            let pair = generate_random(
                &occurrence("Paris", EntityCategory::Location),
                &pool,
                &mut session,
            )
            .unwrap();
            assert_ne!(pair.replacement, "Paris");
            assert!(["Berlin", "Lyon"].contains(&pair.replacement.as_str()));
        }
    }

    #[test]
    fn random_is_cached_per_original() {
        let pool = location_pool(&["Berlin", "Lyon", "Nantes"]);
        let mut session = GenerationSession::new(3, "Paris twice: Paris");
        let first = generate_random(
            &occurrence("Paris", EntityCategory::Location),
            &pool,
            &mut session,
        )
        .unwrap();
        let second = generate_random(
            &occurrence("Paris", EntityCategory::Location),
            &pool,
            &mut session,
        )
        .unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn random_injectivity_leaves_single_choice() {
        // Pool of three; "B" excludes itself, so the first draw uses {A, C}.
        // The second original then has exactly one candidate left.
        let pool = location_pool(&["Aland", "Bland", "Cland"]);
        let mut session = GenerationSession::new(7, "Bland and Dland");
        // "Bland" and "Dland" occur in the source, leaving {Aland, Cland}.
        let first = generate_random(
            &occurrence("Bland", EntityCategory::Location),
            &pool,
            &mut session,
        )
        .unwrap();
        let second = generate_random(
            &occurrence("Dland", EntityCategory::Location),
            &pool,
            &mut session,
        )
        .unwrap();
        assert_ne!(first.replacement, second.replacement);
        let expected: Vec<&str> = ["Aland", "Cland"]
            .iter()
            .copied()
            .filter(|c| *c != first.replacement)
            .collect();
        assert_eq!(second.replacement, expected[0]);
    }

    #[test]
    fn random_with_fixed_seed_is_reproducible() {
        let pool = location_pool(&["Aland", "Bland", "Cland", "Dland"]);
        let run = || {
            let mut session = GenerationSession::new(42, "Paris and Rome");
            let a = generate_random(
                &occurrence("Paris", EntityCategory::Location),
                &pool,
                &mut session,
            )
            .unwrap();
            let b = generate_random(
                &occurrence("Rome", EntityCategory::Location),
                &pool,
                &mut session,
            )
            .unwrap();
            (a, b)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn random_pool_exhaustion() {
        let pool = location_pool(&["Paris", "Rome"]);
        let mut session = GenerationSession::new(1, "Paris visited Rome");
        let err = generate_random(
            &occurrence("Paris", EntityCategory::Location),
            &pool,
            &mut session,
        )
        .unwrap_err();
        assert!(matches!(
            err,
            GenError::PoolExhausted(EntityCategory::Location)
        ));
    }

    #[test]
    fn unknown_category_draws_from_union() {
        let pool = CandidatePool::new([
            ("Greta".to_string(), EntityCategory::Person),
            ("Lyon".to_string(), EntityCategory::Location),
        ])
        .unwrap();
        let mut session = GenerationSession::new(5, "someone somewhere");
        let pair = generate_random(
            &occurrence("Bates", EntityCategory::Unknown),
            &pool,
            &mut session,
        )
        .unwrap();
        assert!(["Greta", "Lyon"].contains(&pair.replacement.as_str()));
        assert_ne!(pair.category, EntityCategory::Unknown);
    }

    struct ScriptedChat {
        replies: std::sync::Mutex<Vec<&'static str>>,
    }

    impl ScriptedChat {
        fn new(replies: &[&'static str]) -> Self {
            ScriptedChat {
                replies: std::sync::Mutex::new(replies.iter().rev().copied().collect()),
            }
        }
    }

    impl ChatClient for ScriptedChat {
        fn complete(&self, _messages: &[ChatMessage]) -> Result<String, ChatError> {
            self.replies
                .lock()
                .unwrap()
                .pop()
                .map(str::to_string)
                .ok_or_else(|| ChatError::Other("script exhausted".into()))
        }
    }

    #[test]
    fn prompt_generation_accepts_valid_candidate() {
        let client = ScriptedChat::new(&["Erlangen"]);
        let mut session = GenerationSession::new(0, "west of Strasbourg");
        let pair = generate_prompt(
            &occurrence("Strasbourg", EntityCategory::Location),
            "west of Strasbourg",
            &client,
            DEFAULT_GENERATION_TEMPLATE,
            &mut session,
        )
        .unwrap();
        assert_eq!(pair.replacement, "Erlangen");
    }

    #[test]
    fn prompt_generation_retries_once_then_accepts() {
        let client = ScriptedChat::new(&["Strasbourg", "Lyon City"]);
        let mut session = GenerationSession::new(0, "west of Strasbourg");
        let pair = generate_prompt(
            &occurrence("Strasbourg", EntityCategory::Location),
            "west of Strasbourg",
            &client,
            DEFAULT_GENERATION_TEMPLATE,
            &mut session,
        )
        .unwrap();
        assert_eq!(pair.replacement, "Lyon City");
    }

    #[test]
    fn prompt_generation_fails_after_two_empties() {
        let client = ScriptedChat::new(&["", ""]);
        let mut session = GenerationSession::new(0, "west of Strasbourg");
        let err = generate_prompt(
            &occurrence("Strasbourg", EntityCategory::Location),
            "west of Strasbourg",
            &client,
            DEFAULT_GENERATION_TEMPLATE,
            &mut session,
        )
        .unwrap_err();
        assert!(matches!(err, GenError::InvalidCandidate(_)));
    }

    #[test]
    fn session_mapping_stays_injective() {
        let pool = location_pool(&["Aland", "Bland", "Cland", "Dland", "Eland"]);
        let mut session = GenerationSession::new(11, "One Two Three");
        for original in ["One", "Two", "Three"] {
            generate_random(
                &occurrence(original, EntityCategory::Location),
                &pool,
                &mut session,
            )
            .unwrap();
        }
        let pairs: Vec<ReplacementPair> = session.assigned_pairs().cloned().collect();
        assert!(crate::model::ReplacementMapping::new(pairs).is_ok());
    }
}
