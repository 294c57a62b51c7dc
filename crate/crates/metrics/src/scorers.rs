//! Task scorers: ROUGE-1/2/L, BLEU-4, SQuAD-style F1/EM, and label accuracy.

use std::collections::HashMap;

use crate::stage::MetricError;

/// Precision / recall / F1 triple.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn from_counts(overlap: f64, candidate: f64, reference: f64) -> Prf {
        let precision = if candidate > 0.0 {
            overlap / candidate
        } else {
            0.0
        };
        let recall = if reference > 0.0 {
            overlap / reference
        } else {
            0.0
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Prf {
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct RougeScores {
    pub rouge1: Prf,
    pub rouge2: Prf,
    pub rouge_l: Prf,
}

fn rouge_tokens(text: &str) -> Vec<String> {
    text.split_whitespace().map(|t| t.to_lowercase()).collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts: HashMap<&[String], usize> = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

fn clipped_overlap(candidate: &[String], reference: &[String], n: usize) -> f64 {
    let cand = ngram_counts(candidate, n);
    let reference = ngram_counts(reference, n);
    cand.iter()
        .map(|(gram, &count)| count.min(reference.get(gram).copied().unwrap_or(0)))
        .sum::<usize>() as f64
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut table = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, at) in a.iter().enumerate() {
        for (j, bt) in b.iter().enumerate() {
            table[i + 1][j + 1] = if at == bt {
                table[i][j] + 1
            } else {
                table[i][j + 1].max(table[i + 1][j])
            };
        }
    }
    table[a.len()][b.len()]
}

/// ROUGE-1, ROUGE-2 (clipped n-gram overlap) and ROUGE-L (longest common
/// subsequence), over case-folded whitespace tokens.
pub fn rouge_scores(candidate: &str, reference: &str) -> Result<RougeScores, MetricError> {
    let cand = rouge_tokens(candidate);
    let reference = rouge_tokens(reference);
    if reference.is_empty() {
        return Err(MetricError::EmptyGold);
    }
    let unigram = clipped_overlap(&cand, &reference, 1);
    let bigram = clipped_overlap(&cand, &reference, 2);
    let cand_bigrams = cand.len().saturating_sub(1) as f64;
    let ref_bigrams = reference.len().saturating_sub(1) as f64;
    let lcs = lcs_len(&cand, &reference) as f64;
    Ok(RougeScores {
        rouge1: Prf::from_counts(unigram, cand.len() as f64, reference.len() as f64),
        rouge2: Prf::from_counts(bigram, cand_bigrams, ref_bigrams),
        rouge_l: Prf::from_counts(lcs, cand.len() as f64, reference.len() as f64),
    })
}

/// Smoothing constant substituted for zero n-gram counts in BLEU-4.
pub const BLEU_EPSILON: f64 = 1e-9;

/// BLEU-4 in percent: geometric mean of modified 1..4-gram precisions times
/// the brevity penalty. Zero counts are smoothed with [`BLEU_EPSILON`].
pub fn bleu4(candidate: &str, references: &[String]) -> Result<f64, MetricError> {
    let refs: Vec<Vec<String>> = references
        .iter()
        .map(|r| rouge_tokens(r))
        .filter(|t| !t.is_empty())
        .collect();
    if refs.is_empty() {
        return Err(MetricError::EmptyGold);
    }
    let cand = rouge_tokens(candidate);
    if cand.is_empty() {
        return Ok(0.0);
    }

    let mut log_precision_sum = 0.0;
    for n in 1..=4 {
        let cand_counts = ngram_counts(&cand, n);
        let total: usize = cand_counts.values().sum();
        let mut matched = 0usize;
        for (gram, &count) in &cand_counts {
            let best_ref = refs
                .iter()
                .map(|r| ngram_counts(r, n).get(gram).copied().unwrap_or(0))
                .max()
                .unwrap_or(0);
            matched += count.min(best_ref);
        }
        let precision = if total == 0 || matched == 0 {
            BLEU_EPSILON
        } else {
            matched as f64 / total as f64
        };
        log_precision_sum += precision.ln();
    }

    // Closest reference length; ties go to the shorter reference.
    let c = cand.len() as f64;
    let r = refs
        .iter()
        .map(|r| r.len())
        .min_by_key(|&len| ((len as i64 - cand.len() as i64).abs(), len))
        .expect("refs non-empty") as f64;
    let brevity = if c < r { (1.0 - r / c).exp() } else { 1.0 };
    Ok(100.0 * brevity * (log_precision_sum / 4.0).exp())
}

/// SQuAD answer normalization: lowercase, strip ASCII punctuation, drop the
/// articles a/an/the, squeeze whitespace.
pub fn squad_normalize(text: &str) -> String {
    let lowered = text.to_lowercase();
    let no_punct: String = lowered
        .chars()
        .map(|c| if c.is_ascii_punctuation() { ' ' } else { c })
        .collect();
    no_punct
        .split_whitespace()
        .filter(|t| !matches!(*t, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct QaScore {
    pub f1: f64,
    pub em: f64,
}

/// SQuAD-style scoring: EM is any exact normalized match; F1 is the maximum
/// token-overlap F1 over the gold answers.
pub fn qa_f1_em(prediction: &str, golds: &[String]) -> Result<QaScore, MetricError> {
    if golds.is_empty() {
        return Err(MetricError::EmptyGold);
    }
    let pred_norm = squad_normalize(prediction);
    let pred_tokens: Vec<&str> = pred_norm.split_whitespace().collect();
    let mut best_f1: f64 = 0.0;
    let mut em = 0.0;
    for gold in golds {
        let gold_norm = squad_normalize(gold);
        if gold_norm == pred_norm {
            em = 1.0;
        }
        let gold_tokens: Vec<&str> = gold_norm.split_whitespace().collect();
        let f1 = if pred_tokens.is_empty() || gold_tokens.is_empty() {
            f64::from(u8::from(pred_tokens == gold_tokens))
        } else {
            let mut gold_counts: HashMap<&str, usize> = HashMap::new();
            for t in &gold_tokens {
                *gold_counts.entry(t).or_insert(0) += 1;
            }
            let mut overlap = 0usize;
            for t in &pred_tokens {
                if let Some(count) = gold_counts.get_mut(t) {
                    if *count > 0 {
                        *count -= 1;
                        overlap += 1;
                    }
                }
            }
            if overlap == 0 {
                0.0
            } else {
                let precision = overlap as f64 / pred_tokens.len() as f64;
                let recall = overlap as f64 / gold_tokens.len() as f64;
                2.0 * precision * recall / (precision + recall)
            }
        };
        best_f1 = best_f1.max(f1);
    }
    Ok(QaScore { f1: best_f1, em })
}

/// Exact label-match rate in percent, case-insensitive.
pub fn classification_accuracy<S: AsRef<str>>(
    predictions: &[S],
    golds: &[S],
) -> Result<f64, MetricError> {
    if predictions.len() != golds.len() {
        return Err(MetricError::LengthMismatch);
    }
    if golds.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let correct = predictions
        .iter()
        .zip(golds)
        .filter(|(p, g)| p.as_ref().trim().eq_ignore_ascii_case(g.as_ref().trim()))
        .count();
    Ok(100.0 * correct as f64 / golds.len() as f64)
}
