//! Graph-constrained beam search.
//!
//! Each hypothesis runs a small phase machine. The path scaffold and `<PATH>`
//! are forced at no cost, then every path token is restricted to the trie's
//! allowed-next set. Once the trie prefix is complete the answer scaffold is
//! forced and decoding continues freely until end-of-sequence or the answer
//! token budget. All hypotheses share one global top-K per step.

#[cfg(feature = "http")]
mod remote;
mod scorer;

#[cfg(feature = "http")]
pub use remote::RemoteScorer;
pub use scorer::{AnswerMode, Scorer, ScorerError, TableRow, TableScorer, DEFAULT_FLOOR};

use std::cmp::Ordering;
use std::collections::HashSet;

use serde::Serialize;
use thiserror::Error;

use crate::codec::{CodecError, TokenId, Vocab};
use crate::trie::{KgTrie, NodeId};

/// Forced before `<PATH>`.
pub const PATH_SCAFFOLD: &str = "# Reasoning Path:";
/// Forced after `</PATH>`.
pub const ANSWER_SCAFFOLD: &str = "# Answer:";

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeConfig {
    /// Beam width K; also the number of results returned.
    pub beam_width: usize,
    /// Answer token budget. Zero disables the answer phase entirely.
    pub max_answer_tokens: usize,
    pub path_scaffold: String,
    pub answer_scaffold: String,
    /// Rank by mean instead of summed log-probability.
    pub length_normalization: bool,
    /// When false the path segment is decoded freely (ablation mode).
    pub constrained: bool,
    /// Path token budget for unconstrained decoding.
    pub max_free_path_tokens: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            beam_width: 10,
            max_answer_tokens: 64,
            path_scaffold: PATH_SCAFFOLD.into(),
            answer_scaffold: ANSWER_SCAFFOLD.into(),
            length_normalization: false,
            constrained: true,
            max_free_path_tokens: 64,
        }
    }
}

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("beam width must be at least 1")]
    ZeroBeam,
    #[error("scorer vocabulary {scorer:016x} does not match trie vocabulary {trie:016x}")]
    FingerprintMismatch { scorer: u64, trie: u64 },
    #[error("scaffold `{0}` contains tokens outside the vocabulary")]
    UnknownScaffold(String),
    #[error("scorer failed on a context of {context_len} tokens: {source}")]
    Scorer {
        context_len: usize,
        #[source]
        source: ScorerError,
    },
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// One finished hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecodeResult {
    pub path_text: String,
    pub answer_text: String,
    pub log_score: f64,
    pub path_tokens: usize,
    pub answer_tokens: usize,
    /// Log-probability of every scored token, in order.
    pub step_log_probs: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Path,
    Answer,
    Done,
}

/// Hypotheses kept at one search step.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub kept: Vec<TraceEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    /// Generated tokens (scaffolds included).
    pub tokens: Vec<TokenId>,
    pub score: f64,
    pub phase: Phase,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DecodeOutput {
    pub results: Vec<DecodeResult>,
    pub trace: Vec<TraceStep>,
    pub scorer_calls: usize,
    /// Prompt tokens sent with the first request plus every generated token
    /// of the returned results.
    pub tokens_processed: usize,
}

#[derive(Debug, Clone)]
struct Beam {
    /// Tokens after the prompt.
    generated: Vec<TokenId>,
    score: f64,
    steps: Vec<f64>,
    phase: Phase,
    node: NodeId,
    path_start: usize,
    path_end: usize,
    answer_start: usize,
}

impl Beam {
    fn key(&self, normalize: bool) -> f64 {
        if normalize && !self.steps.is_empty() {
            self.score / self.steps.len() as f64
        } else {
            self.score
        }
    }
}

fn rank(a: &Beam, b: &Beam, normalize: bool) -> Ordering {
    b.key(normalize)
        .total_cmp(&a.key(normalize))
        .then_with(|| a.generated.cmp(&b.generated))
}

/// Runs the search and returns at most K results, best first.
pub fn constrained_beam_search<S: Scorer + ?Sized>(
    scorer: &S,
    vocab: &Vocab,
    prompt: &[TokenId],
    trie: &KgTrie,
    config: &DecodeConfig,
) -> Result<Vec<DecodeResult>, DecodeError> {
    BeamSearch::new(scorer, vocab, trie, config)?
        .run(prompt)
        .map(|o| o.results)
}

/// The search with its per-step trace and call accounting.
pub fn constrained_beam_search_traced<S: Scorer + ?Sized>(
    scorer: &S,
    vocab: &Vocab,
    prompt: &[TokenId],
    trie: &KgTrie,
    config: &DecodeConfig,
) -> Result<DecodeOutput, DecodeError> {
    BeamSearch::new(scorer, vocab, trie, config)?.run(prompt)
}

struct BeamSearch<'a, S: ?Sized> {
    scorer: &'a S,
    vocab: &'a Vocab,
    trie: &'a KgTrie,
    config: &'a DecodeConfig,
    path_scaffold: Vec<TokenId>,
    answer_scaffold: Vec<TokenId>,
    calls: usize,
}

impl<'a, S: Scorer + ?Sized> BeamSearch<'a, S> {
    fn new(
        scorer: &'a S,
        vocab: &'a Vocab,
        trie: &'a KgTrie,
        config: &'a DecodeConfig,
    ) -> Result<Self, DecodeError> {
        if config.beam_width == 0 {
            return Err(DecodeError::ZeroBeam);
        }
        if config.constrained && scorer.fingerprint() != trie.fingerprint() {
            return Err(DecodeError::FingerprintMismatch {
                scorer: scorer.fingerprint(),
                trie: trie.fingerprint(),
            });
        }
        let encode = |s: &str| {
            let seq = vocab.encode(s);
            if seq.contains(&vocab.unk()) {
                Err(DecodeError::UnknownScaffold(s.to_owned()))
            } else {
                Ok(seq)
            }
        };
        Ok(Self {
            scorer,
            vocab,
            trie,
            config,
            path_scaffold: encode(&config.path_scaffold)?,
            answer_scaffold: encode(&config.answer_scaffold)?,
            calls: 0,
        })
    }

    fn run(mut self, prompt: &[TokenId]) -> Result<DecodeOutput, DecodeError> {
        let k = self.config.beam_width;
        let normalize = self.config.length_normalization;
        let mut out = DecodeOutput::default();
        if self.config.constrained && self.trie.is_empty() {
            return Ok(out);
        }

        let mut start = Beam {
            generated: self.path_scaffold.clone(),
            score: 0.0,
            steps: Vec::new(),
            phase: Phase::Path,
            node: NodeId::ROOT,
            path_start: self.path_scaffold.len(),
            path_end: 0,
            answer_start: 0,
        };
        let open = self.vocab.path_open();
        if !self.config.constrained {
            start.generated.push(open);
        } else if let Some(node) = self.trie.child(NodeId::ROOT, open) {
            start.generated.push(open);
            start.node = node;
        }

        let mut live = vec![start];
        let mut finished: Vec<Beam> = Vec::new();
        let mut context = prompt.to_vec();
        while !live.is_empty() {
            let mut candidates = Vec::new();
            for beam in &live {
                context.truncate(prompt.len());
                context.extend_from_slice(&beam.generated);
                self.expand(beam, &context, &mut candidates)?;
            }
            candidates.sort_by(|a, b| rank(a, b, normalize));
            candidates.truncate(k);
            out.trace.push(TraceStep {
                kept: candidates
                    .iter()
                    .map(|b| TraceEntry {
                        tokens: b.generated.clone(),
                        score: b.score,
                        phase: b.phase,
                    })
                    .collect(),
            });
            live.clear();
            for c in candidates {
                if c.phase == Phase::Done {
                    finished.push(c);
                } else {
                    live.push(c);
                }
            }
            // Raw scores never increase, so once K finished hypotheses beat
            // every live one nothing can overtake them.
            if !normalize && finished.len() >= k && !live.is_empty() {
                finished.sort_by(|a, b| rank(a, b, false));
                let kth = finished[k - 1].score;
                if live.iter().all(|b| b.score < kth) {
                    break;
                }
            }
        }

        finished.sort_by(|a, b| rank(a, b, normalize));
        let mut seen = HashSet::new();
        for beam in finished {
            let r = self.result(&beam)?;
            if seen.insert((r.path_text.clone(), r.answer_text.clone())) {
                out.tokens_processed += beam.generated.len();
                out.results.push(r);
                if out.results.len() == k {
                    break;
                }
            }
        }
        out.tokens_processed += prompt.len();
        out.scorer_calls = self.calls;
        Ok(out)
    }

    fn call<T>(
        &mut self,
        context: &[TokenId],
        f: impl FnOnce(&S) -> Result<T, ScorerError>,
    ) -> Result<T, DecodeError> {
        self.calls += 1;
        f(self.scorer).map_err(|source| DecodeError::Scorer {
            context_len: context.len(),
            source,
        })
    }

    fn expand(
        &mut self,
        beam: &Beam,
        context: &[TokenId],
        out: &mut Vec<Beam>,
    ) -> Result<(), DecodeError> {
        match beam.phase {
            Phase::Path if self.config.constrained => {
                let trie = self.trie;
                let allowed = trie.children(beam.node);
                let logps =
                    self.call(context, |s| s.score_candidates(context, allowed))?;
                check_logps(&logps, allowed.len())?;
                for (&tok, &lp) in allowed.iter().zip(&logps) {
                    let node = trie.child(beam.node, tok).expect("allowed child");
                    let mut next = extend(beam, tok, lp);
                    next.node = node;
                    if trie.is_terminal(node) {
                        if !trie.children(node).is_empty() {
                            out.push(next.clone());
                        }
                        self.close_path(&mut next);
                    }
                    out.push(next);
                }
            }
            Phase::Path => {
                let n = self.config.beam_width;
                let top = self.call(context, |s| s.top_tokens(context, n))?;
                check_pairs(&top)?;
                for (tok, lp) in top {
                    let mut next = extend(beam, tok, lp);
                    let path_len = next.generated.len() - beam.path_start;
                    if tok == self.vocab.path_close() {
                        self.close_path(&mut next);
                    } else if path_len >= self.config.max_free_path_tokens {
                        next.path_end = next.generated.len();
                        next.phase = Phase::Done;
                    }
                    out.push(next);
                }
            }
            Phase::Answer => {
                let n = self.config.beam_width;
                let top = self.call(context, |s| s.top_tokens(context, n))?;
                check_pairs(&top)?;
                for (tok, lp) in top {
                    let mut next = extend(beam, tok, lp);
                    if tok == self.vocab.eos()
                        || next.generated.len() - next.answer_start >= self.config.max_answer_tokens
                    {
                        next.phase = Phase::Done;
                    }
                    out.push(next);
                }
            }
            Phase::Done => unreachable!("finished beams are not expanded"),
        }
        Ok(())
    }

    fn close_path(&self, beam: &mut Beam) {
        beam.path_end = beam.generated.len();
        if self.config.max_answer_tokens == 0 {
            beam.phase = Phase::Done;
            beam.answer_start = beam.path_end;
        } else {
            beam.generated.extend_from_slice(&self.answer_scaffold);
            beam.answer_start = beam.generated.len();
            beam.phase = Phase::Answer;
        }
    }

    fn result(&self, beam: &Beam) -> Result<DecodeResult, DecodeError> {
        let path = &beam.generated[beam.path_start..beam.path_end];
        let answer: Vec<TokenId> = if beam.answer_start > beam.path_end {
            beam.generated[beam.answer_start..]
                .iter()
                .copied()
                .filter(|&t| t != self.vocab.eos())
                .collect()
        } else {
            Vec::new()
        };
        Ok(DecodeResult {
            path_text: self.vocab.decode(path)?,
            answer_text: self.vocab.decode(&answer)?.trim().to_owned(),
            log_score: beam.score,
            path_tokens: path.len(),
            answer_tokens: answer.len(),
            step_log_probs: beam.steps.clone(),
        })
    }
}

fn extend(beam: &Beam, tok: TokenId, lp: f64) -> Beam {
    let mut next = beam.clone();
    next.generated.push(tok);
    next.score += lp;
    next.steps.push(lp);
    next
}

fn check_logps(logps: &[f64], expected: usize) -> Result<(), DecodeError> {
    if logps.len() != expected {
        return Err(protocol(format!(
            "expected {expected} log-probabilities, got {}",
            logps.len()
        )));
    }
    logps.iter().try_for_each(|&lp| check_one(lp))
}

fn check_pairs(pairs: &[(TokenId, f64)]) -> Result<(), DecodeError> {
    pairs.iter().try_for_each(|&(_, lp)| check_one(lp))
}

fn check_one(lp: f64) -> Result<(), DecodeError> {
    if lp.is_finite() && lp <= 1e-9 {
        Ok(())
    } else {
        Err(protocol(format!("invalid log-probability {lp}")))
    }
}

fn protocol(msg: String) -> DecodeError {
    DecodeError::Scorer {
        context_len: 0,
        source: ScorerError::Protocol(msg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::tests::t1;
    use crate::trie::tests::t1_trie;

    fn path_only(k: usize) -> DecodeConfig {
        DecodeConfig {
            beam_width: k,
            max_answer_tokens: 0,
            ..DecodeConfig::default()
        }
    }

    /// Independent oracle: score each stored sequence by walking it and asking
    /// the scorer for the allowed set at every branching step.
    fn oracle(
        scorer: &dyn Scorer,
        vocab: &Vocab,
        trie: &KgTrie,
    ) -> Vec<(String, f64)> {
        let scaffold = vocab.encode(PATH_SCAFFOLD);
        let mut out: Vec<(String, f64, Vec<TokenId>)> = trie
            .sequences()
            .into_iter()
            .map(|seq| {
                let mut score = 0.0;
                for i in 1..seq.len() {
                    let prefix = &seq[..i];
                    let allowed: Vec<TokenId> = trie
                        .sequences()
                        .iter()
                        .filter(|s| s.len() > i && s.starts_with(prefix))
                        .map(|s| s[i])
                        .collect::<std::collections::BTreeSet<_>>()
                        .into_iter()
                        .collect();
                    let ctx: Vec<TokenId> = scaffold.iter().chain(prefix).copied().collect();
                    let lps = scorer.score_candidates(&ctx, &allowed).unwrap();
                    let pos = allowed.iter().position(|&t| t == seq[i]).unwrap();
                    score += lps[pos];
                }
                let mut generated = scaffold.clone();
                generated.extend_from_slice(&seq);
                (vocab.decode(&seq).unwrap(), score, generated)
            })
            .collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.2.cmp(&b.2)));
        out.into_iter().map(|(t, s, _)| (t, s)).collect()
    }

    #[test]
    fn uniform_returns_all_five_paths() {
        let kg = t1();
        let (vocab, trie) = t1_trie();
        let scorer = TableScorer::uniform(&vocab);
        let results =
            constrained_beam_search(&scorer, &vocab, &[], &trie, &path_only(5)).unwrap();
        assert_eq!(results.len(), 5);
        for r in &results {
            assert!(kg.parse_path(&r.path_text).is_ok(), "{}", r.path_text);
        }
        // branching after "<PATH> A →" is 2, after "→ B" is 2 (→ or </PATH>), after "B →" is 2 (C, E)
        let one_hop_b = (0.25f64).ln();
        let two_hop_b = (0.125f64).ln();
        let by_text = |t: &str| results.iter().find(|r| r.path_text == t).unwrap().log_score;
        assert!((by_text("<PATH> A → r1 → B </PATH>") - one_hop_b).abs() < 1e-12);
        assert!((by_text("<PATH> A → r1 → B → r2 → C </PATH>") - two_hop_b).abs() < 1e-12);
        let expect = oracle(&scorer, &vocab, &trie);
        let got: Vec<_> = results.iter().map(|r| (r.path_text.clone(), r.log_score)).collect();
        assert_eq!(got.len(), expect.len());
        for ((gt, gs), (et, es)) in got.iter().zip(&expect) {
            assert_eq!(gt, et);
            assert!((gs - es).abs() < 1e-9);
        }
    }

    #[test]
    fn table_scorer_steers_toward_r3() {
        let (vocab, trie) = t1_trie();
        let id = |w| vocab.token_id(w).unwrap();
        let scorer = TableScorer::new(
            &vocab,
            vec![TableRow {
                suffix: vocab.encode("<PATH> A →"),
                dist: vec![(id("r1"), 0.1), (id("r3"), 0.9)],
            }],
        )
        .unwrap();
        let results =
            constrained_beam_search(&scorer, &vocab, &[], &trie, &path_only(5)).unwrap();
        let expect = oracle(&scorer, &vocab, &trie);
        assert_eq!(results[0].path_text, expect[0].0);
        // A-r3→D has a single continuation per step but "D" may close or extend
        assert_eq!(results[0].path_text, "<PATH> A → r3 → D </PATH>");
    }

    #[test]
    fn single_path_score_is_step_sum() {
        let vocab = Vocab::build(["# Reasoning Path: # Answer: <PATH> A → r1 → B </PATH>"]);
        let seq = vocab.encode("<PATH> A → r1 → B </PATH>");
        let trie = KgTrie::build(vocab.fingerprint(), 1, [seq]).unwrap();
        let scorer = TableScorer::uniform(&vocab);
        let r = constrained_beam_search(&scorer, &vocab, &[], &trie, &path_only(1)).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].log_score, 0.0);
        assert_eq!(r[0].step_log_probs.iter().sum::<f64>(), r[0].log_score);
    }

    #[test]
    fn answer_phase_echoes_tail() {
        let (vocab, trie) = t1_trie();
        let scorer = TableScorer::uniform(&vocab).with_answer_mode(AnswerMode::EchoTail);
        let config = DecodeConfig {
            beam_width: 5,
            ..DecodeConfig::default()
        };
        let results = constrained_beam_search(&scorer, &vocab, &[], &trie, &config).unwrap();
        assert_eq!(results.len(), 5);
        for r in &results {
            let tail = r.path_text.rsplit(" → ").next().unwrap().trim_end_matches(" </PATH>");
            assert_eq!(r.answer_text, tail);
            assert_eq!(r.answer_tokens, 1);
        }
    }

    #[test]
    fn answer_budget_caps_free_decoding() {
        let (vocab, trie) = t1_trie();
        let scorer = TableScorer::uniform(&vocab);
        let config = DecodeConfig {
            beam_width: 3,
            max_answer_tokens: 2,
            ..DecodeConfig::default()
        };
        let results = constrained_beam_search(&scorer, &vocab, &[], &trie, &config).unwrap();
        assert!(!results.is_empty());
        assert!(results.iter().all(|r| r.answer_tokens <= 2));
    }

    #[test]
    fn fingerprint_and_empty_trie() {
        let (vocab, trie) = t1_trie();
        let other = Vocab::build(["x"]);
        let scorer = TableScorer::uniform(&other);
        assert!(matches!(
            constrained_beam_search(&scorer, &vocab, &[], &trie, &path_only(2)),
            Err(DecodeError::FingerprintMismatch { .. })
        ));
        let scorer = TableScorer::uniform(&vocab);
        let empty = KgTrie::new(vocab.fingerprint(), 2);
        assert!(constrained_beam_search(&scorer, &vocab, &[], &empty, &path_only(2))
            .unwrap()
            .is_empty());
        assert!(matches!(
            constrained_beam_search(&scorer, &vocab, &[], &trie, &path_only(0)),
            Err(DecodeError::ZeroBeam)
        ));
    }

    struct Broken;
    impl Scorer for Broken {
        fn fingerprint(&self) -> u64 {
            t1_trie().1.fingerprint()
        }
        fn score_candidates(&self, _: &[TokenId], c: &[TokenId]) -> Result<Vec<f64>, ScorerError> {
            Ok(vec![0.5; c.len()])
        }
        fn top_tokens(&self, _: &[TokenId], _: usize) -> Result<Vec<(TokenId, f64)>, ScorerError> {
            Err(ScorerError::Timeout { endpoint: "x".into() })
        }
    }

    #[test]
    fn invalid_scorer_output_is_an_error() {
        let (vocab, trie) = t1_trie();
        let err = constrained_beam_search(&Broken, &vocab, &[TokenId(3)], &trie, &path_only(2))
            .unwrap_err();
        assert!(matches!(err, DecodeError::Scorer { source: ScorerError::Protocol(_), .. }));
    }

    #[test]
    fn deterministic_and_additive() {
        let (vocab, trie) = t1_trie();
        let scorer = TableScorer::uniform(&vocab).with_answer_mode(AnswerMode::EchoTail);
        let cfg = DecodeConfig { beam_width: 3, ..DecodeConfig::default() };
        let a = constrained_beam_search_traced(&scorer, &vocab, &[], &trie, &cfg).unwrap();
        let b = constrained_beam_search_traced(&scorer, &vocab, &[], &trie, &cfg).unwrap();
        assert_eq!(a, b);
        for r in &a.results {
            let sum: f64 = r.step_log_probs.iter().sum();
            assert!((sum - r.log_score).abs() < 1e-12);
        }
        assert!(a.scorer_calls > 0);
    }
}
