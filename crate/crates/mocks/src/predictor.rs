//! Token predictor doubles.

use pseudonym::backend::{PredictError, TokenPredictor};
use pseudonym::tokenizer::{tokenize, tokenize_with_tags, EOS_TOKEN};

/// Common vocab handling: id 0 is always the end-of-sequence token.
#[derive(Debug, Clone)]
struct Vocab {
    tokens: Vec<String>,
}

impl Vocab {
    fn new() -> Self {
        Vocab {
            tokens: vec![EOS_TOKEN.to_string()],
        }
    }

    fn intern(&mut self, token: &str) -> usize {
        match self.tokens.iter().position(|t| t == token) {
            Some(id) => id,
            None => {
                self.tokens.push(token.to_string());
                self.tokens.len() - 1
            }
        }
    }
}

/// Plays a fixed token sequence (probability 1 on each step), then
/// end-of-sequence forever. `echo` programs replay a source text; `emit`
/// programs replay arbitrary token lists, which is how tagged outputs are
/// scripted.
#[derive(Debug, Clone)]
pub struct ScriptedPredictor {
    vocab: Vocab,
    script: Vec<usize>,
    step: usize,
}

impl ScriptedPredictor {
    pub fn emit(tokens: impl IntoIterator<Item = String>) -> Self {
        let mut vocab = Vocab::new();
        let script = tokens.into_iter().map(|t| vocab.intern(&t)).collect();
        ScriptedPredictor {
            vocab,
            script,
            step: 0,
        }
    }

    /// Echo `source` token by token.
    pub fn echo(source: &str) -> Self {
        ScriptedPredictor::emit(tokenize(source))
    }

    /// Replay `tagged` with `<ENT>`/`</ENT>` kept as single tokens.
    pub fn emit_tagged(tagged: &str) -> Self {
        ScriptedPredictor::emit(tokenize_with_tags(tagged))
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }
}

impl TokenPredictor for ScriptedPredictor {
    fn vocab(&self) -> &[String] {
        &self.vocab.tokens
    }

    fn eos_id(&self) -> usize {
        0
    }

    fn token_id(&mut self, token: &str) -> usize {
        self.vocab.intern(token)
    }

    fn next(&mut self, _prefix: &[usize], _conditioning: &str) -> Result<Vec<f64>, PredictError> {
        let id = self.script.get(self.step).copied().unwrap_or(0);
        self.step += 1;
        let mut distribution = vec![0.0; self.vocab.tokens.len()];
        distribution[id] = 1.0;
        Ok(distribution)
    }

    fn score(&mut self, prefix: &[usize], token_id: usize) -> Result<f64, PredictError> {
        match self.script.get(prefix.len()) {
            Some(&expected) if expected == token_id => Ok(0.0),
            _ => Ok(f64::INFINITY),
        }
    }
}

/// Uniform distribution over the whole vocabulary; every token scores
/// `ln(vocab size)`.
#[derive(Debug, Clone)]
pub struct UniformPredictor {
    vocab: Vocab,
}

impl UniformPredictor {
    pub fn new(tokens: impl IntoIterator<Item = String>) -> Self {
        let mut vocab = Vocab::new();
        for token in tokens {
            vocab.intern(&token);
        }
        UniformPredictor { vocab }
    }

    /// Vocabulary drawn from the tokens of `text`.
    pub fn over_text(text: &str) -> Self {
        UniformPredictor::new(tokenize(text))
    }
}

impl TokenPredictor for UniformPredictor {
    fn vocab(&self) -> &[String] {
        &self.vocab.tokens
    }

    fn eos_id(&self) -> usize {
        0
    }

    fn token_id(&mut self, token: &str) -> usize {
        self.vocab.intern(token)
    }

    fn next(&mut self, _prefix: &[usize], _conditioning: &str) -> Result<Vec<f64>, PredictError> {
        let v = self.vocab.tokens.len();
        Ok(vec![1.0 / v as f64; v])
    }

    fn score(&mut self, _prefix: &[usize], _token_id: usize) -> Result<f64, PredictError> {
        Ok((self.vocab.tokens.len() as f64).ln())
    }
}

/// Assigns probability 1 to whatever token is asked about: loss 0 everywhere.
#[derive(Debug, Clone)]
pub struct PerfectPredictor {
    vocab: Vocab,
}

impl PerfectPredictor {
    pub fn new() -> Self {
        PerfectPredictor {
            vocab: Vocab::new(),
        }
    }
}

impl Default for PerfectPredictor {
    fn default() -> Self {
        PerfectPredictor::new()
    }
}

impl TokenPredictor for PerfectPredictor {
    fn vocab(&self) -> &[String] {
        &self.vocab.tokens
    }

    fn eos_id(&self) -> usize {
        0
    }

    fn token_id(&mut self, token: &str) -> usize {
        self.vocab.intern(token)
    }

    fn next(&mut self, _prefix: &[usize], _conditioning: &str) -> Result<Vec<f64>, PredictError> {
        let mut distribution = vec![0.0; self.vocab.tokens.len()];
        distribution[0] = 1.0;
        Ok(distribution)
    }

    fn score(&mut self, _prefix: &[usize], _token_id: usize) -> Result<f64, PredictError> {
        Ok(0.0)
    }
}

/// Scores position `i` with `-ln(probs[i])`, regardless of the token.
#[derive(Debug, Clone)]
pub struct ScoredPredictor {
    vocab: Vocab,
    probs: Vec<f64>,
}

impl ScoredPredictor {
    pub fn new(probs: Vec<f64>) -> Self {
        ScoredPredictor {
            vocab: Vocab::new(),
            probs,
        }
    }
}

impl TokenPredictor for ScoredPredictor {
    fn vocab(&self) -> &[String] {
        &self.vocab.tokens
    }

    fn eos_id(&self) -> usize {
        0
    }

    fn token_id(&mut self, token: &str) -> usize {
        self.vocab.intern(token)
    }

    fn next(&mut self, _prefix: &[usize], _conditioning: &str) -> Result<Vec<f64>, PredictError> {
        let mut distribution = vec![0.0; self.vocab.tokens.len()];
        distribution[0] = 1.0;
        Ok(distribution)
    }

    fn score(&mut self, prefix: &[usize], _token_id: usize) -> Result<f64, PredictError> {
        let p = self
            .probs
            .get(prefix.len())
            .copied()
            .ok_or_else(|| PredictError::Other("scored predictor out of positions".into()))?;
        Ok(-p.ln())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_emits_source_then_eos() {
        let mut p = ScriptedPredictor::echo("a b c");
        let mut seen = Vec::new();
        loop {
            let dist = p.next(&[], "").unwrap();
            assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let id = pseudonym::backend::argmax(&dist);
            if id == p.eos_id() {
                break;
            }
            seen.push(p.vocab()[id].clone());
        }
        assert_eq!(seen.concat(), "a b c");
        // Exhausted programs keep answering end-of-sequence.
        let dist = p.next(&[], "").unwrap();
        assert_eq!(pseudonym::backend::argmax(&dist), p.eos_id());
    }

    #[test]
    fn emit_tagged_replays_tags_atomically() {
        let p = ScriptedPredictor::emit_tagged("<ENT>John</ENT>.");
        assert!(p.vocab().contains(&"<ENT>".to_string()));
        assert!(p.vocab().contains(&"</ENT>".to_string()));
    }

    #[test]
    fn uniform_scores_ln_v() {
        let mut p = UniformPredictor::over_text("a b");
        let v = p.vocab().len() as f64;
        assert!((p.score(&[], 0).unwrap() - v.ln()).abs() < 1e-12);
    }

    #[test]
    fn interning_grows_vocab() {
        let mut p = ScriptedPredictor::echo("a");
        let before = p.vocab().len();
        let id = p.token_id("zzz");
        assert_eq!(id, before);
        assert_eq!(p.token_id("zzz"), id);
    }
}
