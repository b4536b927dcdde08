// Wire protocol (JSON over HTTP):
//
//   GET  /v1/vocab  -> {"fingerprint": "<16 hex digits>", "size": n}
//   POST /v1/score  {"context": [ids], "candidates": [ids]} -> {"logprobs": [f64]}
//   POST /v1/top    {"context": [ids], "n": k} -> {"tokens": [ids], "logprobs": [f64]}

use serde::{Deserialize, Serialize};

use super::{Scorer, ScorerError};
use crate::codec::TokenId;
use crate::http::{HttpConfig, HttpTransport, TransportError};

impl From<TransportError> for ScorerError {
    fn from(e: TransportError) -> Self {
        match e {
            TransportError::Timeout { endpoint } => ScorerError::Timeout { endpoint },
            TransportError::Connection { endpoint, message } => {
                ScorerError::Connection { endpoint, message }
            }
            TransportError::Status {
                endpoint,
                status,
                message,
            } => ScorerError::Status {
                endpoint,
                status,
                message,
            },
            TransportError::Protocol { endpoint, message } => {
                ScorerError::Protocol(format!("{endpoint}: {message}"))
            }
        }
    }
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    context: &'a [TokenId],
    candidates: &'a [TokenId],
}

#[derive(Deserialize)]
struct ScoreResponse {
    logprobs: Vec<f64>,
}

#[derive(Serialize)]
struct TopRequest<'a> {
    context: &'a [TokenId],
    n: usize,
}

#[derive(Deserialize)]
struct TopResponse {
    tokens: Vec<TokenId>,
    logprobs: Vec<f64>,
}

#[derive(Deserialize)]
struct VocabResponse {
    fingerprint: String,
    size: usize,
}

/// Scorer backed by a language-model server.
pub struct RemoteScorer {
    transport: HttpTransport,
    fingerprint: u64,
    vocab_size: usize,
}

impl RemoteScorer {
    /// Connects and fetches the server's vocabulary fingerprint.
    pub fn connect(base_url: &str, config: HttpConfig) -> Result<Self, ScorerError> {
        let transport = HttpTransport::new(base_url, config);
        let v: VocabResponse = transport.get_json("/v1/vocab")?;
        let fingerprint = u64::from_str_radix(v.fingerprint.trim_start_matches("0x"), 16)
            .map_err(|_| ScorerError::Protocol(format!("bad fingerprint {:?}", v.fingerprint)))?;
        Ok(Self {
            transport,
            fingerprint,
            vocab_size: v.size,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn retries(&self) -> u64 {
        self.transport.retries()
    }

    pub fn requests(&self) -> u64 {
        self.transport.requests()
    }
}

fn check(logprobs: &[f64], expected: usize, what: &str) -> Result<(), ScorerError> {
    if logprobs.len() != expected {
        return Err(ScorerError::Protocol(format!(
            "{what}: {} log-probabilities for {expected} tokens",
            logprobs.len()
        )));
    }
    if let Some(bad) = logprobs.iter().find(|x| !x.is_finite() || **x > 1e-9) {
        return Err(ScorerError::Protocol(format!("{what}: invalid log-probability {bad}")));
    }
    Ok(())
}

impl Scorer for RemoteScorer {
    fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    fn score_candidates(
        &self,
        context: &[TokenId],
        candidates: &[TokenId],
    ) -> Result<Vec<f64>, ScorerError> {
        let r: ScoreResponse = self
            .transport
            .post_json("/v1/score", &ScoreRequest { context, candidates })?;
        check(&r.logprobs, candidates.len(), "/v1/score")?;
        Ok(r.logprobs)
    }

    fn top_tokens(
        &self,
        context: &[TokenId],
        n: usize,
    ) -> Result<Vec<(TokenId, f64)>, ScorerError> {
        let r: TopResponse = self.transport.post_json("/v1/top", &TopRequest { context, n })?;
        check(&r.logprobs, r.tokens.len(), "/v1/top")?;
        let mut out: Vec<_> = r.tokens.into_iter().zip(r.logprobs).collect();
        out.truncate(n);
        Ok(out)
    }
}
