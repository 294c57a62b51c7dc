//! Stage-level scores: how well detection removed privacy entities (PRR),
//! how hard the replacements are to invert (PPS), how fluent the
//! pseudonymized text remains (SCS), and the embedding distance between
//! original and pseudonymized text.

use std::collections::HashSet;

use pseudonym::backend::TokenPredictor;
use pseudonym::model::ReplacementPair;
use pseudonym::tokenizer::tokenize;
use thiserror::Error;

use crate::embed::{cosine, EmbeddingProvider};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("gold set must be non-empty")]
    EmptyGold,
    #[error("input must be non-empty")]
    EmptyInput,
    #[error("input too short: need at least {0} tokens")]
    TooShort(usize),
    #[error("prediction and gold lists differ in length")]
    LengthMismatch,
}

/// Share of gold entities that detection recovered, in percent:
/// `|detected ∩ gold| / |gold| × 100`. Strings are trimmed before
/// comparison; `case_fold` additionally lowercases them.
pub fn privacy_removal_rate<S: AsRef<str>>(
    detected: &[S],
    gold: &[S],
    case_fold: bool,
) -> Result<f64, MetricError> {
    let normalize = |s: &S| {
        let t = s.as_ref().trim();
        if case_fold {
            t.to_lowercase()
        } else {
            t.to_string()
        }
    };
    let gold_set: HashSet<String> = gold.iter().map(normalize).collect();
    if gold_set.is_empty() {
        return Err(MetricError::EmptyGold);
    }
    let detected_set: HashSet<String> = detected.iter().map(normalize).collect();
    Ok(100.0 * gold_set.intersection(&detected_set).count() as f64 / gold_set.len() as f64)
}

/// Mean embedding distance between originals and replacements, in percent:
/// `avg(1 − s(p′, q)) × 100`. Higher means the original is harder to infer.
pub fn privacy_preservation_score(
    pairs: &[ReplacementPair],
    emb: &dyn EmbeddingProvider,
) -> Result<f64, MetricError> {
    pps_over(
        pairs
            .iter()
            .map(|p| (p.original.as_str(), p.replacement.as_str())),
        emb,
    )
}

/// [`privacy_preservation_score`] over raw string pairs.
pub fn pps_over<'a>(
    pairs: impl IntoIterator<Item = (&'a str, &'a str)>,
    emb: &dyn EmbeddingProvider,
) -> Result<f64, MetricError> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (original, replacement) in pairs {
        total += 1.0 - cosine(&emb.embed(original), &emb.embed(replacement));
        count += 1;
    }
    if count == 0 {
        return Err(MetricError::EmptyInput);
    }
    Ok(100.0 * total / count as f64)
}

/// Mean per-token language-model loss of `x_prime` under the predictor.
/// Lower means the text better fits the model's distribution.
pub fn semantic_correctness_score(
    x_prime: &str,
    predictor: &mut dyn TokenPredictor,
) -> Result<f64, MetricError> {
    let tokens = tokenize(x_prime);
    if tokens.len() < 2 {
        return Err(MetricError::TooShort(2));
    }
    let ids: Vec<usize> = tokens.iter().map(|t| predictor.token_id(t)).collect();
    let mut total = 0.0;
    for i in 0..ids.len() {
        let loss = predictor
            .score(&ids[..i], ids[i])
            .map_err(|_| MetricError::EmptyInput)?;
        total += loss;
    }
    Ok(total / ids.len() as f64)
}

/// Embedding distance between the original and pseudonymized text:
/// `1 − s(x, x′)`.
pub fn pseudonymization_distance(
    x: &str,
    x_prime: &str,
    emb: &dyn EmbeddingProvider,
) -> Result<f64, MetricError> {
    if x.is_empty() || x_prime.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    Ok(1.0 - cosine(&emb.embed(x), &emb.embed(x_prime)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::FallbackEmbedder;
    use pseudonym_mocks::{ScoredPredictor, UniformPredictor};

    #[test]
    fn prr_full_and_zero_intersection() {
        let gold = vec!["A", "B"];
        assert_eq!(privacy_removal_rate(&gold, &gold, false).unwrap(), 100.0);
        assert_eq!(
            privacy_removal_rate(&["X", "Y"], &gold, false).unwrap(),
            0.0
        );
    }

    #[test]
    fn prr_half_intersection() {
        let detected = vec!["A", "B", "X"];
        let gold = vec!["A", "B", "C", "D"];
        assert_eq!(privacy_removal_rate(&detected, &gold, false).unwrap(), 50.0);
    }

    #[test]
    fn prr_case_folding_is_opt_in() {
        let detected = vec!["paris"];
        let gold = vec!["Paris"];
        assert_eq!(privacy_removal_rate(&detected, &gold, false).unwrap(), 0.0);
        assert_eq!(privacy_removal_rate(&detected, &gold, true).unwrap(), 100.0);
    }

    #[test]
    fn prr_empty_gold_is_an_error() {
        assert_eq!(
            privacy_removal_rate(&["A"], &Vec::<&str>::new(), false),
            Err(MetricError::EmptyGold)
        );
    }

    #[test]
    fn pps_identical_pair_contributes_zero() {
        let score = pps_over([("same", "same")], &FallbackEmbedder).unwrap();
        assert!(score.abs() < 1e-9);
    }

    #[test]
    fn pps_orthogonal_pair_scores_hundred() {
        let score = pps_over([("abc", "xyz")], &FallbackEmbedder).unwrap();
        assert!((score - 100.0).abs() < 1e-9);
    }

    #[test]
    fn pps_is_the_arithmetic_mean() {
        let score = pps_over([("same", "same"), ("abc", "xyz")], &FallbackEmbedder).unwrap();
        assert!((score - 50.0).abs() < 1e-9);
    }

    #[test]
    fn pps_empty_input_is_an_error() {
        assert_eq!(
            pps_over([], &FallbackEmbedder),
            Err(MetricError::EmptyInput)
        );
    }

    #[test]
    fn scs_uniform_predictor_scores_ln_v() {
        let text = "ab cd ef";
        let mut predictor = UniformPredictor::over_text(text);
        let v = predictor.vocab().len() as f64;
        let scs = semantic_correctness_score(text, &mut predictor).unwrap();
        assert!((scs - v.ln()).abs() < 1e-9);
    }

    #[test]
    fn scs_perfect_predictor_scores_zero() {
        let mut predictor = pseudonym_mocks::PerfectPredictor::new();
        assert_eq!(
            semantic_correctness_score("ab cd", &mut predictor).unwrap(),
            0.0
        );
    }

    #[test]
    fn scs_scripted_probabilities() {
        // Two tokens with probabilities 0.5 and 0.25.
        let mut predictor = ScoredPredictor::new(vec![0.5, 0.25]);
        let scs = semantic_correctness_score("ab.", &mut predictor).unwrap();
        let expected = (2.0_f64.ln() + 4.0_f64.ln()) / 2.0;
        assert!((scs - expected).abs() < 1e-9);
    }

    #[test]
    fn scs_rejects_single_token() {
        let mut predictor = pseudonym_mocks::PerfectPredictor::new();
        assert_eq!(
            semantic_correctness_score("one", &mut predictor),
            Err(MetricError::TooShort(2))
        );
    }

    #[test]
    fn distance_of_identical_text_is_zero() {
        let d = pseudonymization_distance("same text", "same text", &FallbackEmbedder).unwrap();
        assert!(d.abs() < 1e-9);
    }

    #[test]
    fn distance_is_symmetric() {
        let d1 = pseudonymization_distance("one text", "another", &FallbackEmbedder).unwrap();
        let d2 = pseudonymization_distance("another", "one text", &FallbackEmbedder).unwrap();
        assert!((d1 - d2).abs() < 1e-12);
    }

    #[test]
    fn distance_of_disjoint_trigrams_is_one() {
        let d = pseudonymization_distance("abc", "xyz", &FallbackEmbedder).unwrap();
        assert!((d - 1.0).abs() < 1e-9);
    }
}
