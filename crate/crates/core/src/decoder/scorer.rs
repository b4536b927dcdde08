use std::collections::HashMap;

use serde::Deserialize;
use thiserror::Error;

use crate::codec::{TokenId, Vocab};

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("request to {endpoint} timed out")]
    Timeout { endpoint: String },
    #[error("cannot reach {endpoint}: {message}")]
    Connection { endpoint: String, message: String },
    #[error("{endpoint} answered {status}: {message}")]
    Status {
        endpoint: String,
        status: u16,
        message: String,
    },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("invalid scorer table: {0}")]
    InvalidTable(String),
}

/// Next-token log-probability source.
///
/// Log-probabilities must be finite and non-positive. `score_candidates`
/// returns exactly one value per candidate, in candidate order.
pub trait Scorer: Send + Sync {
    /// Fingerprint of the vocabulary the token ids refer to.
    fn fingerprint(&self) -> u64;

    fn score_candidates(
        &self,
        context: &[TokenId],
        candidates: &[TokenId],
    ) -> Result<Vec<f64>, ScorerError>;

    /// Up to `n` `(token, log-probability)` pairs in descending probability.
    fn top_tokens(&self, context: &[TokenId], n: usize)
        -> Result<Vec<(TokenId, f64)>, ScorerError>;
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn fingerprint(&self) -> u64 {
        (**self).fingerprint()
    }

    fn score_candidates(&self, c: &[TokenId], k: &[TokenId]) -> Result<Vec<f64>, ScorerError> {
        (**self).score_candidates(c, k)
    }

    fn top_tokens(&self, c: &[TokenId], n: usize) -> Result<Vec<(TokenId, f64)>, ScorerError> {
        (**self).top_tokens(c, n)
    }
}

impl<S: Scorer + ?Sized> Scorer for Box<S> {
    fn fingerprint(&self) -> u64 {
        (**self).fingerprint()
    }

    fn score_candidates(&self, c: &[TokenId], k: &[TokenId]) -> Result<Vec<f64>, ScorerError> {
        (**self).score_candidates(c, k)
    }

    fn top_tokens(&self, c: &[TokenId], n: usize) -> Result<Vec<(TokenId, f64)>, ScorerError> {
        (**self).top_tokens(c, n)
    }
}

/// One row of a table scorer: when the context ends with `suffix`, the next
/// token follows `dist`.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub suffix: Vec<TokenId>,
    pub dist: Vec<(TokenId, f64)>,
}

/// How a table scorer proposes tokens after a path has been closed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnswerMode {
    /// Uniform over the whole vocabulary, like any unlisted context.
    #[default]
    Uniform,
    /// Spell out the last entity of the closed path, then end-of-sequence,
    /// each with probability one.
    EchoTail,
}

/// Deterministic stand-in for a language model.
///
/// The longest matching context suffix selects a row. Candidates missing from
/// a matched row receive `floor` probability. Contexts without a row are
/// uniform over the candidate set (or over the whole vocabulary for
/// `top_tokens`).
#[derive(Debug, Clone)]
pub struct TableScorer {
    fingerprint: u64,
    vocab_size: usize,
    rows: Vec<Row>,
    floor: f64,
    answer_mode: AnswerMode,
    path_close: TokenId,
    eos: TokenId,
    arrow: Option<TokenId>,
    answer_scaffold: Vec<TokenId>,
}

/// Context suffix, probability by token, and the same pairs in table order.
type Row = (Vec<TokenId>, HashMap<TokenId, f64>, Vec<(TokenId, f64)>);

pub const DEFAULT_FLOOR: f64 = 1e-6;

impl TableScorer {
    pub fn uniform(vocab: &Vocab) -> Self {
        Self::new(vocab, Vec::new()).expect("empty table is valid")
    }

    pub fn new(vocab: &Vocab, rows: Vec<TableRow>) -> Result<Self, ScorerError> {
        let mut built: Vec<Row> =
            Vec::with_capacity(rows.len());
        for row in rows {
            if built.iter().any(|(s, _, _)| *s == row.suffix) {
                return Err(ScorerError::InvalidTable(format!(
                    "duplicate context suffix {:?}",
                    row.suffix
                )));
            }
            if row.dist.is_empty() {
                return Err(ScorerError::InvalidTable("empty distribution".into()));
            }
            let mut mass: HashMap<TokenId, f64> = HashMap::new();
            for &(tok, p) in &row.dist {
                if !p.is_finite() || p <= 0.0 {
                    return Err(ScorerError::InvalidTable(format!(
                        "mass {p} for token {tok} is not positive"
                    )));
                }
                if tok.0 as usize >= vocab.len() {
                    return Err(ScorerError::InvalidTable(format!("token {tok} out of range")));
                }
                *mass.entry(tok).or_default() += p;
            }
            let total: f64 = mass.values().sum();
            let logp: HashMap<TokenId, f64> =
                mass.iter().map(|(&t, &p)| (t, (p / total).ln())).collect();
            let mut ranked: Vec<(TokenId, f64)> = logp.iter().map(|(&t, &l)| (t, l)).collect();
            ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            built.push((row.suffix, logp, ranked));
        }
        Ok(Self {
            fingerprint: vocab.fingerprint(),
            vocab_size: vocab.len(),
            rows: built,
            floor: DEFAULT_FLOOR,
            answer_mode: AnswerMode::Uniform,
            path_close: vocab.path_close(),
            eos: vocab.eos(),
            arrow: vocab.token_id(crate::kg::ARROW),
            answer_scaffold: vocab.encode(super::ANSWER_SCAFFOLD),
        })
    }

    /// Parses the JSON table format:
    /// `{"rows": [{"suffix": ["<PATH>", "A", "→"], "dist": {"r1": 0.9}}], "floor": 1e-6, "answer": "echo-tail"}`.
    /// Suffix and distribution entries are token strings of `vocab`.
    pub fn from_json(vocab: &Vocab, json: &str) -> Result<Self, ScorerError> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Spec {
            #[serde(default)]
            rows: Vec<RowSpec>,
            floor: Option<f64>,
            #[serde(default)]
            answer: AnswerMode,
        }
        #[derive(Deserialize)]
        struct RowSpec {
            suffix: Vec<String>,
            dist: std::collections::BTreeMap<String, f64>,
        }
        let spec: Spec =
            serde_json::from_str(json).map_err(|e| ScorerError::InvalidTable(e.to_string()))?;
        let tok = |s: &str| {
            vocab
                .token_id(s)
                .ok_or_else(|| ScorerError::InvalidTable(format!("unknown token `{s}`")))
        };
        let rows = spec
            .rows
            .iter()
            .map(|r| {
                Ok(TableRow {
                    suffix: r.suffix.iter().map(|s| tok(s)).collect::<Result<_, _>>()?,
                    dist: r
                        .dist
                        .iter()
                        .map(|(s, &p)| Ok((tok(s)?, p)))
                        .collect::<Result<_, ScorerError>>()?,
                })
            })
            .collect::<Result<Vec<_>, ScorerError>>()?;
        let mut scorer = Self::new(vocab, rows)?;
        if let Some(floor) = spec.floor {
            scorer = scorer.with_floor(floor)?;
        }
        Ok(scorer.with_answer_mode(spec.answer))
    }

    pub fn with_floor(mut self, floor: f64) -> Result<Self, ScorerError> {
        if !(floor > 0.0 && floor <= 1.0) {
            return Err(ScorerError::InvalidTable(format!("floor {floor} outside (0, 1]")));
        }
        self.floor = floor;
        Ok(self)
    }

    pub fn with_answer_mode(mut self, mode: AnswerMode) -> Self {
        self.answer_mode = mode;
        self
    }

    fn row_for(&self, context: &[TokenId]) -> Option<usize> {
        self.rows
            .iter()
            .enumerate()
            .filter(|(_, (suffix, _, _))| context.ends_with(suffix))
            .max_by_key(|(i, (suffix, _, _))| (suffix.len(), std::cmp::Reverse(*i)))
            .map(|(i, _)| i)
    }

    fn echo_tail(&self, context: &[TokenId]) -> Option<TokenId> {
        let close = context.iter().rposition(|&t| t == self.path_close)?;
        let after = &context[close + 1..];
        let generated = after.strip_prefix(self.answer_scaffold.as_slice())?;
        let arrow = self.arrow?;
        let body = &context[..close];
        let tail = &body[body.iter().rposition(|&t| t == arrow)? + 1..];
        Some(match generated.strip_prefix(&tail[..generated.len().min(tail.len())]) {
            Some([]) if generated.len() < tail.len() => tail[generated.len()],
            _ => self.eos,
        })
    }
}

impl Scorer for TableScorer {
    fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    fn score_candidates(
        &self,
        context: &[TokenId],
        candidates: &[TokenId],
    ) -> Result<Vec<f64>, ScorerError> {
        Ok(match self.row_for(context) {
            Some(i) => {
                let logp = &self.rows[i].1;
                let floor = self.floor.ln();
                candidates
                    .iter()
                    .map(|t| logp.get(t).copied().unwrap_or(floor))
                    .collect()
            }
            None => {
                let lp = -(candidates.len() as f64).ln();
                vec![lp; candidates.len()]
            }
        })
    }

    fn top_tokens(
        &self,
        context: &[TokenId],
        n: usize,
    ) -> Result<Vec<(TokenId, f64)>, ScorerError> {
        if let Some(i) = self.row_for(context) {
            return Ok(self.rows[i].2.iter().take(n).copied().collect());
        }
        if self.answer_mode == AnswerMode::EchoTail {
            if let Some(tok) = self.echo_tail(context) {
                return Ok(vec![(tok, 0.0)].into_iter().take(n).collect());
            }
        }
        let lp = -(self.vocab_size as f64).ln();
        Ok((0..self.vocab_size.min(n))
            .map(|i| (TokenId(i as u32), lp))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocab {
        Vocab::build(["<PATH> A → r1 → B → r3 → D </PATH> # Answer:"])
    }

    #[test]
    fn uniform_over_candidates() {
        let v = vocab();
        let s = TableScorer::uniform(&v);
        let a = v.token_id("A").unwrap();
        let b = v.token_id("B").unwrap();
        let lp = s.score_candidates(&[], &[a, b]).unwrap();
        assert_eq!(lp, vec![0.5f64.ln(), 0.5f64.ln()]);
        let top = s.top_tokens(&[], 3).unwrap();
        assert_eq!(top.len(), 3);
        assert!(top.iter().all(|&(_, l)| (l - -(v.len() as f64).ln()).abs() < 1e-15));
    }

    #[test]
    fn table_row_lookup() {
        let v = vocab();
        let id = |w| v.token_id(w).unwrap();
        let s = TableScorer::new(
            &v,
            vec![TableRow {
                suffix: v.encode("<PATH> A →"),
                dist: vec![(id("r1"), 0.9), (id("r3"), 0.1)],
            }],
        )
        .unwrap();
        let ctx = v.encode("# <PATH> A →");
        let lp = s.score_candidates(&ctx, &[id("r1"), id("r3")]).unwrap();
        assert!((lp[0] - 0.9f64.ln()).abs() < 1e-12);
        assert!((lp[1] - 0.1f64.ln()).abs() < 1e-12);
        let lp2 = s.score_candidates(&ctx, &[id("r1"), id("r3")]).unwrap();
        assert_eq!(lp, lp2);
        // unlisted candidate gets the floor
        assert_eq!(s.score_candidates(&ctx, &[id("B")]).unwrap(), vec![DEFAULT_FLOOR.ln()]);
        let top = s.top_tokens(&ctx, 5).unwrap();
        assert_eq!(top.iter().map(|t| t.0).collect::<Vec<_>>(), vec![id("r1"), id("r3")]);
    }

    #[test]
    fn longest_suffix_wins() {
        let v = vocab();
        let id = |w| v.token_id(w).unwrap();
        let s = TableScorer::new(
            &v,
            vec![
                TableRow { suffix: vec![id("→")], dist: vec![(id("r1"), 1.0)] },
                TableRow { suffix: v.encode("B →"), dist: vec![(id("r3"), 1.0)] },
            ],
        )
        .unwrap();
        assert_eq!(s.top_tokens(&v.encode("A → r1 → B →"), 1).unwrap()[0].0, id("r3"));
        assert_eq!(s.top_tokens(&v.encode("A →"), 1).unwrap()[0].0, id("r1"));
    }

    #[test]
    fn rejects_bad_rows() {
        let v = vocab();
        let a = v.token_id("A").unwrap();
        for dist in [vec![], vec![(a, 0.0)], vec![(a, f64::NAN)], vec![(a, -1.0)]] {
            assert!(TableScorer::new(&v, vec![TableRow { suffix: vec![], dist }]).is_err());
        }
        let dup = vec![
            TableRow { suffix: vec![a], dist: vec![(a, 1.0)] },
            TableRow { suffix: vec![a], dist: vec![(a, 1.0)] },
        ];
        assert!(TableScorer::new(&v, dup).is_err());
    }

    #[test]
    fn unnormalized_rows_are_rescaled() {
        let v = vocab();
        let id = |w| v.token_id(w).unwrap();
        let s = TableScorer::new(
            &v,
            vec![TableRow { suffix: vec![], dist: vec![(id("r1"), 3.0), (id("r3"), 1.0)] }],
        )
        .unwrap();
        let lp = s.score_candidates(&[], &[id("r1")]).unwrap();
        assert!((lp[0] - 0.75f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn json_spec() {
        let v = vocab();
        let s = TableScorer::from_json(
            &v,
            r#"{"rows":[{"suffix":["<PATH>","A","→"],"dist":{"r1":0.9,"r3":0.1}}],"answer":"echo-tail"}"#,
        )
        .unwrap();
        assert_eq!(s.answer_mode, AnswerMode::EchoTail);
        assert!(TableScorer::from_json(&v, r#"{"rows":[{"suffix":["zz"],"dist":{"A":1}}]}"#).is_err());
        assert!(TableScorer::from_json(&v, r#"{"bogus":1}"#).is_err());
    }

    #[test]
    fn echo_tail_spells_the_last_entity() {
        let v = vocab();
        let s = TableScorer::uniform(&v).with_answer_mode(AnswerMode::EchoTail);
        let mut ctx = v.encode("<PATH> A → r1 → B </PATH> # Answer:");
        let tok = s.top_tokens(&ctx, 4).unwrap();
        assert_eq!(tok, vec![(v.token_id("B").unwrap(), 0.0)]);
        ctx.push(tok[0].0);
        assert_eq!(s.top_tokens(&ctx, 4).unwrap(), vec![(v.eos(), 0.0)]);
    }
}
