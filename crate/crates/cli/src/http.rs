//! Completions-style HTTP scoring backend.
//!
//! Issues echo requests (`max_tokens: 0, echo: true, logprobs: true`) and
//! sums the returned per-token log probabilities. The gray-box contract
//! needs nothing else from the serving side.
//!
//! Transient failures (429, 5xx, transport errors) retry with exponential
//! backoff. Echo APIs routinely omit the first token's log probability;
//! that token contributes 0 and is flagged — the offset is identical
//! across the permutations of an item, so the comparison between them is
//! unaffected.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use benchleak_core::scoring::{ScoreError, ScoredText, ScoringBackend};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HttpConfig {
    /// Full completions endpoint URL.
    pub endpoint: String,
    /// Model name sent in the request body.
    pub model: String,
    /// Environment variable holding the bearer token, if any.
    pub api_key_env: String,
    pub timeout_secs: u64,
    /// Total attempts per request (first try included).
    pub max_attempts: u32,
    /// Base backoff; attempt i sleeps base * 2^i.
    pub backoff_ms: u64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            model: String::new(),
            api_key_env: "BENCHLEAK_API_KEY".to_string(),
            timeout_secs: 30,
            max_attempts: 3,
            backoff_ms: 250,
        }
    }
}

#[derive(Serialize)]
struct EchoRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: u32,
    echo: bool,
    logprobs: bool,
}

#[derive(Deserialize)]
struct EchoResponse {
    choices: Option<Vec<Choice>>,
}

#[derive(Deserialize)]
struct Choice {
    logprobs: Option<LogProbs>,
}

#[derive(Deserialize)]
struct LogProbs {
    tokens: Option<Vec<String>>,
    token_logprobs: Option<Vec<Option<f64>>>,
}

/// Per-token scores for one text, as returned by the API.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenScores {
    pub tokens: Vec<String>,
    pub logprobs: Vec<Option<f64>>,
}

pub struct HttpBackend {
    cfg: HttpConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
    id: String,
}

impl HttpBackend {
    pub fn new(cfg: HttpConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs)))
            .build()
            .into();
        let api_key = std::env::var(&cfg.api_key_env)
            .ok()
            .filter(|k| !k.is_empty());
        let id = format!("http:{}#{}", cfg.endpoint, cfg.model);
        Self {
            cfg,
            agent,
            api_key,
            id,
        }
    }

    fn request_once(&self, text: &str) -> Result<TokenScores, Attempt> {
        let body = EchoRequest {
            model: &self.cfg.model,
            prompt: text,
            max_tokens: 0,
            echo: true,
            logprobs: true,
        };
        let mut req = self.agent.post(&self.cfg.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("authorization", &format!("Bearer {key}"));
        }
        let mut response = req
            .send_json(&body)
            .map_err(|e| Attempt::Transient(format!("transport: {e}")))?;
        let status = response.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(Attempt::Transient(format!("HTTP status {status}")));
        }
        if !(200..300).contains(&status) {
            return Err(Attempt::Fatal(ScoreError::Backend {
                message: format!("HTTP status {status}"),
            }));
        }
        let parsed: EchoResponse = response.body_mut().read_json().map_err(|e| {
            Attempt::Fatal(ScoreError::MalformedResponse {
                message: format!("invalid JSON body: {e}"),
            })
        })?;
        let logprobs = parsed
            .choices
            .and_then(|mut c| {
                if c.is_empty() {
                    None
                } else {
                    c.remove(0).logprobs
                }
            })
            .ok_or_else(|| {
                Attempt::Fatal(ScoreError::MalformedResponse {
                    message: "response carries no logprobs object".to_string(),
                })
            })?;
        let tokens = logprobs.tokens.ok_or_else(|| {
            Attempt::Fatal(ScoreError::MalformedResponse {
                message: "response carries no token array".to_string(),
            })
        })?;
        let token_logprobs = logprobs.token_logprobs.ok_or_else(|| {
            Attempt::Fatal(ScoreError::MalformedResponse {
                message: "response carries no token_logprobs array".to_string(),
            })
        })?;
        if tokens.len() != token_logprobs.len() {
            return Err(Attempt::Fatal(ScoreError::MalformedResponse {
                message: format!(
                    "{} tokens but {} logprobs",
                    tokens.len(),
                    token_logprobs.len()
                ),
            }));
        }
        Ok(TokenScores {
            tokens,
            logprobs: token_logprobs,
        })
    }

    /// Raw per-token view, retrying transient failures.
    pub fn fetch_echo(&self, text: &str) -> Result<TokenScores, ScoreError> {
        let mut last: Option<String> = None;
        for attempt in 0..self.cfg.max_attempts {
            if attempt > 0 {
                let delay = self.cfg.backoff_ms.saturating_mul(1 << (attempt - 1));
                std::thread::sleep(Duration::from_millis(delay));
            }
            match self.request_once(text) {
                Ok(scores) => return Ok(scores),
                Err(Attempt::Fatal(err)) => return Err(err),
                Err(Attempt::Transient(message)) => last = Some(message),
            }
        }
        Err(ScoreError::Backend {
            message: format!(
                "gave up after {} attempts: {}",
                self.cfg.max_attempts,
                last.unwrap_or_else(|| "no attempt made".to_string())
            ),
        })
    }
}

enum Attempt {
    Transient(String),
    Fatal(ScoreError),
}

/// Sum the usable token logprobs of an echo response.
///
/// Rules: tokens must re-concatenate to the input text exactly; a missing
/// (null) first logprob contributes 0 and is flagged; a null anywhere
/// else is a malformed response. Tokens starting before `prefix_bytes`
/// are conditioning context and are skipped.
pub fn sum_token_scores(
    text: &str,
    scores: &TokenScores,
    prefix_bytes: usize,
) -> Result<ScoredText, ScoreError> {
    let mut offset = 0usize;
    let mut logprob = 0.0;
    let mut token_count = 0u32;
    let mut first_token_missing = false;
    for (i, (token, lp)) in scores.tokens.iter().zip(&scores.logprobs).enumerate() {
        let start = offset;
        offset += token.len();
        if offset > text.len() || !text[start..].starts_with(token.as_str()) {
            return Err(ScoreError::TokenCoverage {
                message: format!("token {i} {token:?} does not match input text at byte {start}"),
            });
        }
        if start < prefix_bytes {
            continue;
        }
        match lp {
            Some(v) if v.is_finite() => {
                logprob += v;
                token_count += 1;
            }
            Some(_) => {
                return Err(ScoreError::MalformedResponse {
                    message: format!("non-finite logprob at token {i}"),
                })
            }
            None if i == 0 => {
                // Echo APIs have no context to condition the first token
                // on; count it as zero contribution.
                first_token_missing = true;
                token_count += 1;
            }
            None => {
                return Err(ScoreError::MalformedResponse {
                    message: format!("null logprob at token {i} (only the first may be null)"),
                })
            }
        }
    }
    if offset != text.len() {
        return Err(ScoreError::TokenCoverage {
            message: format!(
                "tokens cover {offset} bytes but the text has {}",
                text.len()
            ),
        });
    }
    if token_count == 0 {
        return Err(ScoreError::NothingToScore {
            prefix_bytes,
            text_bytes: text.len(),
        });
    }
    Ok(ScoredText {
        logprob,
        token_count,
        first_token_missing,
    })
}

impl ScoringBackend for HttpBackend {
    fn model_id(&self) -> &str {
        &self.id
    }

    fn score_text(&self, text: &str, prefix_bytes: usize) -> Result<ScoredText, ScoreError> {
        if text.is_empty() {
            return Err(ScoreError::EmptyText);
        }
        let scores = self.fetch_echo(text)?;
        sum_token_scores(text, &scores, prefix_bytes)
    }
}
