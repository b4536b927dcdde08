use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::Deserialize;
use thiserror::Error;

#[cfg(feature = "http")]
use crate::http::{HttpConfig, HttpTransport, Secret, TransportError};

#[derive(Debug, Error)]
pub enum ChatError {
    #[cfg(feature = "http")]
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("malformed chat response: {0}")]
    Protocol(String),
    #[error("stub has no response for this prompt")]
    NoStubMatch,
    #[error("cannot load stub responses: {0}")]
    Stub(String),
    #[error("unsupported chat backend `{0}`")]
    UnknownBackend(String),
}

/// Text returned by a backend, with token usage when the backend reports it.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ChatReply {
    pub text: String,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

impl ChatReply {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            ..Self::default()
        }
    }
}

/// A general-purpose chat model: one prompt in, one completion out.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<ChatReply, ChatError>;

    /// Short label for logs and reports. Must not contain credentials.
    fn describe(&self) -> String;
}

/// Token usage of one exchange. `estimated` is set when the backend did not
/// report usage and the counts come from the local tokenizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub estimated: bool,
}

/// Shared handle around a backend that keeps call and token counters.
pub struct ChatClient {
    backend: Box<dyn ChatBackend>,
    calls: AtomicU64,
    failures: AtomicU64,
    prompt_tokens: AtomicU64,
    completion_tokens: AtomicU64,
}

impl ChatClient {
    pub fn new(backend: impl ChatBackend + 'static) -> Self {
        Self::from_box(Box::new(backend))
    }

    pub fn from_box(backend: Box<dyn ChatBackend>) -> Self {
        Self {
            backend,
            calls: AtomicU64::new(0),
            failures: AtomicU64::new(0),
            prompt_tokens: AtomicU64::new(0),
            completion_tokens: AtomicU64::new(0),
        }
    }

    /// Sends `prompt`. `estimate` counts tokens when the backend reports no usage.
    pub fn complete(
        &self,
        prompt: &str,
        estimate: &dyn Fn(&str) -> usize,
    ) -> Result<(ChatReply, Usage), ChatError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let reply = self.backend.complete(prompt).inspect_err(|_| {
            self.failures.fetch_add(1, Ordering::Relaxed);
        })?;
        let usage = match (reply.prompt_tokens, reply.completion_tokens) {
            (Some(p), Some(c)) => Usage {
                prompt_tokens: p,
                completion_tokens: c,
                estimated: false,
            },
            _ => Usage {
                prompt_tokens: estimate(prompt) as u64,
                completion_tokens: estimate(&reply.text) as u64,
                estimated: true,
            },
        };
        self.prompt_tokens.fetch_add(usage.prompt_tokens, Ordering::Relaxed);
        self.completion_tokens
            .fetch_add(usage.completion_tokens, Ordering::Relaxed);
        Ok((reply, usage))
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn failures(&self) -> u64 {
        self.failures.load(Ordering::Relaxed)
    }

    pub fn prompt_tokens(&self) -> u64 {
        self.prompt_tokens.load(Ordering::Relaxed)
    }

    pub fn completion_tokens(&self) -> u64 {
        self.completion_tokens.load(Ordering::Relaxed)
    }

    pub fn describe(&self) -> String {
        self.backend.describe()
    }
}

impl std::fmt::Debug for ChatClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChatClient")
            .field("backend", &self.backend.describe())
            .field("calls", &self.calls())
            .finish()
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct StubRule {
    #[serde(rename = "match")]
    pattern: Option<String>,
    response: String,
}

/// Replays canned responses. Each rule is a JSON line
/// `{"match": "substring", "response": "..."}`; the first rule whose `match`
/// occurs in the prompt wins, and a rule without `match` matches anything.
#[derive(Debug, Clone)]
pub struct StubChat {
    rules: Vec<StubRule>,
    label: String,
}

impl StubChat {
    pub fn from_jsonl(text: &str) -> Result<Self, ChatError> {
        let rules = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| ChatError::Stub(format!("line {}: {e}", i + 1)))
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            rules,
            label: "stub".into(),
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, ChatError> {
        let text =
            fs::read_to_string(path).map_err(|e| ChatError::Stub(format!("{}: {e}", path.display())))?;
        let mut stub = Self::from_jsonl(&text)?;
        stub.label = format!("stub:{}", path.display());
        Ok(stub)
    }

    /// A stub that always answers `response`.
    pub fn constant(response: impl Into<String>) -> Self {
        Self {
            rules: vec![StubRule {
                pattern: None,
                response: response.into(),
            }],
            label: "stub".into(),
        }
    }
}

impl ChatBackend for StubChat {
    fn complete(&self, prompt: &str) -> Result<ChatReply, ChatError> {
        self.rules
            .iter()
            .find(|r| r.pattern.as_deref().is_none_or(|p| prompt.contains(p)))
            .map(|r| ChatReply::text(r.response.clone()))
            .ok_or(ChatError::NoStubMatch)
    }

    fn describe(&self) -> String {
        self.label.clone()
    }
}

/// Offline stand-in that answers with the most frequent hypothesis answer
/// listed in a reasoning prompt (earliest wins ties).
#[derive(Debug, Clone, Copy, Default)]
pub struct MajorityChat;

impl ChatBackend for MajorityChat {
    fn complete(&self, prompt: &str) -> Result<ChatReply, ChatError> {
        let mut counts: Vec<(&str, usize)> = Vec::new();
        for answer in super::evidence_answers(prompt) {
            match counts.iter_mut().find(|(a, _)| *a == answer) {
                Some((_, n)) => *n += 1,
                None => counts.push((answer, 1)),
            }
        }
        let best = counts
            .iter()
            .fold(None::<(&str, usize)>, |best, &(a, n)| match best {
                Some((_, m)) if m >= n => best,
                _ => Some((a, n)),
            });
        Ok(ChatReply::text(best.map(|(a, _)| format!("{a}\n")).unwrap_or_default()))
    }

    fn describe(&self) -> String {
        "stub:majority".into()
    }
}

/// Chat-completions client: POSTs `{"model", "messages", "temperature": 0}`
/// and reads `choices[0].message.content`.
#[cfg(feature = "http")]
pub struct HttpChat {
    transport: HttpTransport,
    model: String,
}

#[cfg(feature = "http")]
impl HttpChat {
    pub fn new(endpoint: &str, model: &str, config: HttpConfig) -> Self {
        Self {
            transport: HttpTransport::new(endpoint, config),
            model: model.to_owned(),
        }
    }

    pub fn retries(&self) -> u64 {
        self.transport.retries()
    }
}

#[cfg(feature = "http")]
impl ChatBackend for HttpChat {
    fn complete(&self, prompt: &str) -> Result<ChatReply, ChatError> {
        #[derive(Deserialize)]
        struct Message {
            content: Option<String>,
        }
        #[derive(Deserialize)]
        struct Choice {
            message: Message,
        }
        #[derive(Deserialize)]
        struct UsageBody {
            prompt_tokens: u64,
            completion_tokens: u64,
        }
        #[derive(Deserialize)]
        struct Response {
            choices: Vec<Choice>,
            usage: Option<UsageBody>,
        }
        let body = serde_json::json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        });
        let r: Response = self.transport.post_json("", &body)?;
        let text = r
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| ChatError::Protocol("no choices".into()))?
            .message
            .content
            .unwrap_or_default();
        Ok(ChatReply {
            text,
            prompt_tokens: r.usage.as_ref().map(|u| u.prompt_tokens),
            completion_tokens: r.usage.as_ref().map(|u| u.completion_tokens),
        })
    }

    fn describe(&self) -> String {
        format!("{} ({})", self.transport.base(), self.model)
    }
}

/// Builds a backend from a spec string: `stub:majority`, `stub:<file>`, or an
/// `http(s)://` chat-completions endpoint.
pub fn backend_from_spec(
    spec: &str,
    #[cfg(feature = "http")] model: &str,
    #[cfg(feature = "http")] config: HttpConfig,
) -> Result<Box<dyn ChatBackend>, ChatError> {
    if spec == "stub:majority" {
        return Ok(Box::new(MajorityChat));
    }
    if let Some(file) = spec.strip_prefix("stub:") {
        return Ok(Box::new(StubChat::from_file(Path::new(file))?));
    }
    #[cfg(feature = "http")]
    if spec.starts_with("http://") || spec.starts_with("https://") {
        return Ok(Box::new(HttpChat::new(spec, model, config)));
    }
    Err(ChatError::UnknownBackend(spec.to_owned()))
}

/// Credentials and endpoint taken from `GCR_CHAT_ENDPOINT`, `GCR_CHAT_MODEL`
/// and `GCR_CHAT_KEY`.
#[cfg(feature = "http")]
#[derive(Debug, Clone, Default)]
pub struct ChatEnv {
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub key: Option<Secret>,
}

#[cfg(feature = "http")]
impl ChatEnv {
    pub fn from_env() -> Self {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        Self {
            endpoint: var("GCR_CHAT_ENDPOINT"),
            model: var("GCR_CHAT_MODEL"),
            key: var("GCR_CHAT_KEY").map(Secret::new),
        }
    }
}
