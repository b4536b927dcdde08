//! Prompt rendering, answer parsing and the single-question pipeline: trie
//! lookup, constrained decoding of K path/answer hypotheses, and one chat
//! call that reasons over them.

mod chat;

#[cfg(feature = "http")]
pub use chat::{ChatEnv, HttpChat};
pub use chat::{
    backend_from_spec, ChatBackend, ChatClient, ChatError, ChatReply, MajorityChat, StubChat, Usage,
};

use std::collections::HashSet;
use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::codec::Vocab;
use crate::decoder::{constrained_beam_search_traced, DecodeConfig, DecodeError, DecodeResult, Scorer};
use crate::kg::{EntityId, KgError, KnowledgeGraph, QaRecord};
use crate::trie::{encode_paths, BuildReport, KgTrie, TrieCache, TrieKey};

const GENERATION_INSTRUCTION: &str = "Reasoning path is a sequence of triples in the KG that connects the topic entities in the question to answer entities. Given a question, please generate some reasoning paths in the KG starting from the topic entities to answer the question.";

const REASONING_INSTRUCTION: &str = "Based on the reasoning paths, please answer the given question. Please keep the answer as simple as possible and only return answers. Please return each answer in a new line.";

const EVIDENCE_HEADER: &str = "# Reasoning Paths:";
const EVIDENCE_ANSWER: &str = " # Answer: ";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("prompt slot `{0}` is empty")]
    EmptySlot(&'static str),
    #[error("few-shot prompt needs at least one example")]
    NoExamples,
    #[error("reasoning prompt needs at least one decoded result")]
    NoEvidence,
}

/// A worked example for the few-shot generation prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FewShotExample {
    pub question: String,
    pub entities: Vec<String>,
    pub path: String,
}

fn question_block(out: &mut String, question: &str, entities: &[String]) {
    let _ = write!(
        out,
        "# Question:\n{question}\n\n# Topic entities:\n{}\n",
        entities.join(", ")
    );
}

fn check_slots(question: &str, entities: &[String]) -> Result<(), PromptError> {
    if question.trim().is_empty() {
        return Err(PromptError::EmptySlot("question"));
    }
    if entities.is_empty() || entities.iter().any(|e| e.trim().is_empty()) {
        return Err(PromptError::EmptySlot("entities"));
    }
    Ok(())
}

/// Zero-shot prompt asking the model for reasoning paths from the topic
/// entities.
pub fn render_generation_prompt(question: &str, entities: &[String]) -> Result<String, PromptError> {
    check_slots(question, entities)?;
    let mut out = format!("{GENERATION_INSTRUCTION}\n\n");
    question_block(&mut out, question, entities);
    Ok(out)
}

/// Generation prompt preceded by numbered worked examples.
pub fn render_few_shot_prompt(
    question: &str,
    entities: &[String],
    examples: &[FewShotExample],
) -> Result<String, PromptError> {
    check_slots(question, entities)?;
    if examples.is_empty() {
        return Err(PromptError::NoExamples);
    }
    let mut out = format!("{GENERATION_INSTRUCTION}\n\n");
    for (i, ex) in examples.iter().enumerate() {
        check_slots(&ex.question, &ex.entities)?;
        if ex.path.trim().is_empty() {
            return Err(PromptError::EmptySlot("path"));
        }
        let _ = write!(out, "Example {}\n\n", i + 1);
        question_block(&mut out, &ex.question, &ex.entities);
        let _ = write!(out, "\n# Reasoning Path:\n{}\n\n", ex.path);
    }
    out.push_str("Input\n\n");
    question_block(&mut out, question, entities);
    Ok(out)
}

/// One evidence line per result (path, then its hypothesis answer), the
/// question, and the answering instruction.
pub fn render_reasoning_prompt(question: &str, results: &[DecodeResult]) -> Result<String, PromptError> {
    if question.trim().is_empty() {
        return Err(PromptError::EmptySlot("question"));
    }
    if results.is_empty() {
        return Err(PromptError::NoEvidence);
    }
    let mut out = format!("{EVIDENCE_HEADER}\n");
    for r in results {
        out.push_str(&r.path_text);
        if !r.answer_text.is_empty() {
            out.push_str(EVIDENCE_ANSWER);
            out.push_str(&r.answer_text);
        }
        out.push('\n');
    }
    let _ = write!(out, "\n# Question:\n{question}\n\n{REASONING_INSTRUCTION}\n");
    Ok(out)
}

/// Hypothesis answers listed in a reasoning prompt, in order.
pub(crate) fn evidence_answers(prompt: &str) -> impl Iterator<Item = &str> {
    prompt
        .lines()
        .skip_while(|l| *l != EVIDENCE_HEADER)
        .skip(1)
        .take_while(|l| !l.is_empty())
        .filter_map(|l| l.rsplit_once(EVIDENCE_ANSWER).map(|(_, a)| a.trim()))
        .filter(|a| !a.is_empty())
}

fn strip_marker(line: &str) -> &str {
    let line = line.trim();
    if let Some(rest) = line.strip_prefix(['-', '*', '•']) {
        return rest.trim_start();
    }
    let digits = line.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 {
        if let Some(rest) = line[digits..].strip_prefix(['.', ')']) {
            if rest.is_empty() || rest.starts_with(char::is_whitespace) {
                return rest.trim_start();
            }
        }
    }
    line
}

/// One answer per non-empty line, list markers removed, first occurrence kept.
pub fn parse_answers(text: &str) -> Vec<String> {
    let mut seen = HashSet::new();
    text.lines()
        .map(strip_marker)
        .filter(|a| !a.is_empty())
        .filter(|a| seen.insert(*a))
        .map(str::to_owned)
        .collect()
}

/// Where the pipeline gets a question's trie from.
#[derive(Clone)]
pub enum TrieSource<'a> {
    /// Look up by question entities, building on a miss.
    Cache(&'a TrieCache),
    /// Use this trie for every question.
    Fixed(Arc<KgTrie>),
    /// Build a fresh trie per question.
    OnDemand,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub hops: u32,
    pub decode: DecodeConfig,
    /// Worker threads for path enumeration and trie construction.
    pub build_jobs: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            hops: 2,
            decode: DecodeConfig::default(),
            build_jobs: 1,
        }
    }
}

/// Wall time per pipeline stage, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct StageTimes {
    pub retrieval: f64,
    pub tokenization: f64,
    pub trie: f64,
    pub decode: f64,
    pub reasoning: f64,
}

impl StageTimes {
    pub fn total(&self) -> f64 {
        self.retrieval + self.tokenization + self.trie + self.decode + self.reasoning
    }
}

/// Result of building one question's trie.
#[derive(Debug, Clone)]
pub struct TrieBuild {
    pub trie: KgTrie,
    pub paths_enumerated: usize,
    pub report: BuildReport,
    pub times: StageTimes,
}

/// Enumerates every path of up to `hops` hops from `entities`, formats and
/// tokenizes them, and stores them in one trie.
pub fn build_question_trie(
    kg: &KnowledgeGraph,
    vocab: &Vocab,
    entities: &[EntityId],
    hops: u32,
    jobs: usize,
) -> Result<TrieBuild, KgError> {
    let mut times = StageTimes::default();
    let t = Instant::now();
    let paths = kg.enumerate_paths_parallel(entities, hops as usize, jobs)?;
    times.retrieval = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let texts: Vec<String> = paths.iter().map(|p| kg.format_path(p)).collect();
    let (seqs, mut report) = encode_paths(vocab, &texts);
    times.tokenization = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let jobs = jobs.max(1);
    let trie = if jobs > 1 && seqs.len() >= 4096 {
        let chunk = seqs.len().div_ceil(jobs);
        let parts: Vec<Vec<_>> = seqs.chunks(chunk).map(<[_]>::to_vec).collect();
        KgTrie::build_partitioned(vocab.fingerprint(), hops, &parts)
    } else {
        KgTrie::build(vocab.fingerprint(), hops, &seqs)
    }
    .expect("encoded paths are nonempty");
    report.inserted = trie.n_paths();
    report.duplicates = seqs.len() - trie.n_paths();
    times.trie = t.elapsed().as_secs_f64();

    Ok(TrieBuild {
        trie,
        paths_enumerated: paths.len(),
        report,
        times,
    })
}

/// Everything measured while answering one question.
#[derive(Debug, Clone, Default, Serialize)]
pub struct AnswerTrace {
    pub times: StageTimes,
    pub trie_paths: usize,
    /// `Some(true)` when the trie came from the cache.
    pub cache_hit: Option<bool>,
    /// Beam search sessions against the scorer (0 or 1).
    pub decode_sessions: u32,
    pub scorer_calls: usize,
    pub decode_tokens: usize,
    pub chat_calls: u32,
    pub chat_prompt_tokens: u64,
    pub chat_completion_tokens: u64,
    pub tokens_estimated: bool,
    pub no_grounded_evidence: bool,
}

impl AnswerTrace {
    /// Model interactions: the decoding session plus chat calls.
    pub fn llm_calls(&self) -> u32 {
        self.decode_sessions + self.chat_calls
    }

    pub fn llm_tokens(&self) -> u64 {
        self.decode_tokens as u64 + self.chat_prompt_tokens + self.chat_completion_tokens
    }
}

/// Final answers together with the hypotheses they were derived from.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Answered {
    pub answers: Vec<String>,
    pub evidence: Vec<DecodeResult>,
    pub raw_response: String,
    pub trace: AnswerTrace,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("decoding failed: {source}")]
    Decode {
        #[source]
        source: DecodeError,
        trace: Box<AnswerTrace>,
    },
    #[error("chat call failed: {source}")]
    Chat {
        #[source]
        source: ChatError,
        trace: Box<AnswerTrace>,
    },
}

impl PipelineError {
    pub fn trace(&self) -> Option<&AnswerTrace> {
        match self {
            PipelineError::Decode { trace, .. } | PipelineError::Chat { trace, .. } => Some(trace),
            _ => None,
        }
    }
}

/// Shared, read-only inputs of the pipeline.
pub struct Pipeline<'a, S: ?Sized> {
    pub kg: &'a KnowledgeGraph,
    pub vocab: &'a Vocab,
    pub tries: TrieSource<'a>,
    pub scorer: &'a S,
    pub chat: &'a ChatClient,
    pub config: PipelineConfig,
}

impl<S: Scorer + ?Sized> Pipeline<'_, S> {
    /// Answers one question with a single decoding session and a single chat
    /// call. When no grounded path exists the chat model is not consulted and
    /// the answer set is empty.
    pub fn answer(&self, record: &QaRecord) -> Result<Answered, PipelineError> {
        let entities = self.kg.resolve_entities(&record.question_entities)?;
        let mut trace = AnswerTrace::default();

        let trie = self.trie_for(&entities, &mut trace)?;
        trace.trie_paths = trie.n_paths();
        if trie.is_empty() {
            trace.no_grounded_evidence = true;
            return Ok(Answered {
                trace,
                ..Answered::default()
            });
        }

        let prompt = render_generation_prompt(&record.question, &record.question_entities)?;
        let prompt_ids = self.vocab.encode(&prompt);
        let t = Instant::now();
        let decoded = constrained_beam_search_traced(
            self.scorer,
            self.vocab,
            &prompt_ids,
            &trie,
            &self.config.decode,
        );
        trace.times.decode = t.elapsed().as_secs_f64();
        trace.decode_sessions = 1;
        let decoded = match decoded {
            Ok(d) => d,
            Err(source) => {
                return Err(PipelineError::Decode {
                    source,
                    trace: Box::new(trace),
                })
            }
        };
        trace.scorer_calls = decoded.scorer_calls;
        trace.decode_tokens = decoded.tokens_processed;
        if decoded.results.is_empty() {
            trace.no_grounded_evidence = true;
            return Ok(Answered {
                trace,
                ..Answered::default()
            });
        }

        let reasoning = render_reasoning_prompt(&record.question, &decoded.results)?;
        let t = Instant::now();
        let reply = self
            .chat
            .complete(&reasoning, &|s| self.vocab.count_tokens(s));
        trace.times.reasoning = t.elapsed().as_secs_f64();
        trace.chat_calls = 1;
        let (reply, usage) = match reply {
            Ok(r) => r,
            Err(source) => {
                return Err(PipelineError::Chat {
                    source,
                    trace: Box::new(trace),
                })
            }
        };
        trace.chat_prompt_tokens = usage.prompt_tokens;
        trace.chat_completion_tokens = usage.completion_tokens;
        trace.tokens_estimated = usage.estimated;

        Ok(Answered {
            answers: parse_answers(&reply.text),
            evidence: decoded.results,
            raw_response: reply.text,
            trace,
        })
    }

    fn trie_for(&self, entities: &[EntityId], trace: &mut AnswerTrace) -> Result<Arc<KgTrie>, PipelineError> {
        let hops = self.config.hops;
        let jobs = self.config.build_jobs;
        match &self.tries {
            TrieSource::Fixed(t) => Ok(t.clone()),
            TrieSource::OnDemand => {
                let b = build_question_trie(self.kg, self.vocab, entities, hops, jobs)?;
                trace.times = b.times;
                Ok(Arc::new(b.trie))
            }
            TrieSource::Cache(cache) => {
                let key = TrieKey::new(entities, hops, self.vocab.fingerprint());
                let mut built = None;
                let trie = cache.get_or_build(&key, || {
                    let b = build_question_trie(self.kg, self.vocab, entities, hops, jobs)?;
                    built = Some(b.times);
                    Ok::<_, KgError>(b.trie)
                })?;
                trace.cache_hit = Some(built.is_none());
                if let Some(times) = built {
                    trace.times = times;
                }
                Ok(trie)
            }
        }
    }
}
