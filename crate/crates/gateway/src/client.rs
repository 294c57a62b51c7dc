//! Blocking HTTP realizations of the pipeline's backend traits, for the
//! prompt-based stages and the generative replacer when a real local model
//! endpoint is configured. Blocking reqwest must not run on an async runtime
//! thread; the gateway only calls these inside `spawn_blocking`.

use std::time::Duration;

use pseudonym::backend::{ChatClient, ChatError, ChatMessage, PredictError, TokenPredictor};
use pseudonym::tokenizer::EOS_TOKEN;
use serde_json::{json, Value};

/// Chat-completions client for a locally deployed instruction-tuned model.
pub struct HttpChatClient {
    url: String,
    model: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpChatClient {
    pub fn new(base_url: &str, model: impl Into<String>, api_key: Option<String>) -> Self {
        HttpChatClient {
            url: format!("{}/v1/chat/completions", base_url.trim_end_matches('/')),
            model: model.into(),
            api_key,
            client: reqwest::blocking::Client::new(),
        }
    }
}

impl ChatClient for HttpChatClient {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, ChatError> {
        let body = json!({ "model": self.model, "messages": messages });
        let mut request = self
            .client
            .post(&self.url)
            .timeout(Duration::from_secs(120))
            .json(&body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request
            .send()
            .map_err(|e| ChatError::Transport(e.to_string()))?;
        let status = response.status();
        let text = response
            .text()
            .map_err(|e| ChatError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(ChatError::Status {
                status: status.as_u16(),
                body: text,
            });
        }
        let value: Value =
            serde_json::from_str(&text).map_err(|e| ChatError::Other(e.to_string()))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| ChatError::Other("response carries no message content".into()))
    }
}

/// Predictor adapter over a completions endpoint with logprobs.
///
/// Each `next` call sends the conditioning prompt plus the detokenized
/// prefix and asks for one token with `logprobs` alternatives; the returned
/// alternatives become the probability mass (renormalized over the current
/// vocabulary). Token granularity follows the remote model's tokenizer, so
/// splice matching works best with whole-word entities.
pub struct HttpTokenPredictor {
    url: String,
    model: String,
    top_logprobs: u8,
    vocab: Vec<String>,
    client: reqwest::blocking::Client,
}

impl HttpTokenPredictor {
    pub fn new(base_url: &str, model: impl Into<String>) -> Self {
        HttpTokenPredictor {
            url: format!("{}/v1/completions", base_url.trim_end_matches('/')),
            model: model.into(),
            top_logprobs: 5,
            vocab: vec![EOS_TOKEN.to_string()],
            client: reqwest::blocking::Client::new(),
        }
    }

    fn detokenize(&self, prefix: &[usize]) -> String {
        prefix
            .iter()
            .filter_map(|&id| self.vocab.get(id))
            .map(String::as_str)
            .collect()
    }

    fn top_tokens(&mut self, prompt: &str) -> Result<Vec<(usize, f64)>, PredictError> {
        let body = json!({
            "model": self.model,
            "prompt": prompt,
            "max_tokens": 1,
            "temperature": 0,
            "logprobs": self.top_logprobs,
        });
        let response = self
            .client
            .post(&self.url)
            .timeout(Duration::from_secs(120))
            .json(&body)
            .send()
            .map_err(|e| PredictError::Transport(e.to_string()))?;
        if !response.status().is_success() {
            return Err(PredictError::Transport(format!(
                "completions endpoint returned {}",
                response.status()
            )));
        }
        let value: Value = response
            .json()
            .map_err(|e| PredictError::Transport(e.to_string()))?;
        let top = value["choices"][0]["logprobs"]["top_logprobs"][0]
            .as_object()
            .ok_or_else(|| PredictError::Other("response carries no top_logprobs".into()))?
            .clone();
        let finished = value["choices"][0]["finish_reason"].as_str() == Some("stop");
        let mut mass: Vec<(usize, f64)> = top
            .iter()
            .filter_map(|(token, lp)| lp.as_f64().map(|lp| (token.clone(), lp.exp())))
            .map(|(token, p)| (self.token_id(&token), p))
            .collect();
        if finished && top.is_empty() {
            mass.push((0, 1.0));
        }
        Ok(mass)
    }
}

impl TokenPredictor for HttpTokenPredictor {
    fn vocab(&self) -> &[String] {
        &self.vocab
    }

    fn eos_id(&self) -> usize {
        0
    }

    fn token_id(&mut self, token: &str) -> usize {
        match self.vocab.iter().position(|t| t == token) {
            Some(id) => id,
            None => {
                self.vocab.push(token.to_string());
                self.vocab.len() - 1
            }
        }
    }

    fn next(&mut self, prefix: &[usize], conditioning: &str) -> Result<Vec<f64>, PredictError> {
        let prompt = format!("{conditioning}{}", self.detokenize(prefix));
        let mass = self.top_tokens(&prompt)?;
        let mut distribution = vec![0.0; self.vocab.len()];
        let total: f64 = mass.iter().map(|(_, p)| p).sum();
        if total <= 0.0 {
            distribution[0] = 1.0;
            return Ok(distribution);
        }
        for (id, p) in mass {
            distribution[id] += p / total;
        }
        Ok(distribution)
    }

    fn score(&mut self, prefix: &[usize], token_id: usize) -> Result<f64, PredictError> {
        let distribution = self.next(prefix, "")?;
        let p = distribution.get(token_id).copied().unwrap_or(0.0);
        // Tokens outside the returned alternatives get a floor probability
        // so the mean loss stays finite.
        Ok(-p.max(1e-9).ln())
    }
}
