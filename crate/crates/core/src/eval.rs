//! Answer-set metrics and the dataset runner.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::kg::{KnowledgeGraph, QaRecord};
use crate::reasoner::{Answered, PipelineError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("gold answer set is empty")]
    EmptyGold,
    #[error("dataset is empty")]
    EmptyDataset,
}

/// How answer strings are compared: trim, lowercase, and collapse internal
/// whitespace, then exact equality. Ids such as `m.0cr320w` stay literal.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MatchPolicy;

impl MatchPolicy {
    pub fn normalize(&self, s: &str) -> String {
        s.split_whitespace()
            .map(str::to_lowercase)
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn set<S: AsRef<str>>(&self, items: &[S]) -> HashSet<String> {
        items
            .iter()
            .map(|s| self.normalize(s.as_ref()))
            .filter(|s| !s.is_empty())
            .collect()
    }
}

/// 1 when any prediction matches any gold answer.
pub fn hit<P: AsRef<str>, G: AsRef<str>>(
    predictions: &[P],
    gold: &[G],
    policy: &MatchPolicy,
) -> Result<u8, MetricError> {
    if gold.is_empty() {
        return Err(MetricError::EmptyGold);
    }
    let gold = policy.set(gold);
    Ok(u8::from(
        predictions
            .iter()
            .any(|p| gold.contains(&policy.normalize(p.as_ref()))),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision, recall and F1 over the normalized, deduplicated answer sets.
pub fn prf1<P: AsRef<str>, G: AsRef<str>>(
    predictions: &[P],
    gold: &[G],
    policy: &MatchPolicy,
) -> Result<Prf1, MetricError> {
    if gold.is_empty() {
        return Err(MetricError::EmptyGold);
    }
    let pred = policy.set(predictions);
    let gold = policy.set(gold);
    if gold.is_empty() {
        return Err(MetricError::EmptyGold);
    }
    let common = pred.intersection(&gold).count() as f64;
    let precision = if pred.is_empty() {
        0.0
    } else {
        common / pred.len() as f64
    };
    let recall = common / gold.len() as f64;
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(Prf1 {
        precision,
        recall,
        f1,
    })
}

/// One multiple-choice outcome.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct McqRow {
    pub predicted: String,
    pub gold: String,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McqAccuracy {
    pub accuracy: f64,
    /// Predictions that were not one of the offered labels (counted wrong).
    pub flagged: usize,
}

pub fn mcq_accuracy(rows: &[McqRow]) -> Result<McqAccuracy, MetricError> {
    if rows.is_empty() {
        return Err(MetricError::EmptyDataset);
    }
    let mut correct = 0usize;
    let mut flagged = 0usize;
    for r in rows {
        let p = r.predicted.trim();
        if !r.labels.iter().any(|l| l == p) {
            flagged += 1;
        } else if p == r.gold.trim() {
            correct += 1;
        }
    }
    Ok(McqAccuracy {
        accuracy: correct as f64 / rows.len() as f64,
        flagged,
    })
}

/// Among questions answered correctly, the fraction whose emitted paths all
/// ground in `kg`. `None` when no question was answered correctly.
pub fn faithful_ratio<S: AsRef<str>>(rows: &[(Vec<S>, bool)], kg: &KnowledgeGraph) -> Option<f64> {
    let hits: Vec<_> = rows.iter().filter(|(_, hit)| *hit).collect();
    if hits.is_empty() {
        return None;
    }
    let faithful = hits
        .iter()
        .filter(|(paths, _)| paths.iter().all(|p| kg.parse_path(p.as_ref()).is_ok()))
        .count();
    Some(faithful as f64 / hits.len() as f64)
}

/// Maps a free-text answer onto a choice label: an exact label, or the label
/// of a choice whose text matches.
fn choice_label(answer: &str, record: &QaRecord, policy: &MatchPolicy) -> String {
    let choices = record.choices.as_deref().unwrap_or_default();
    let norm = policy.normalize(answer);
    let bare = norm.trim_end_matches(['.', ')', ':']);
    choices
        .iter()
        .find(|c| policy.normalize(&c.label) == bare)
        .or_else(|| choices.iter().find(|c| policy.normalize(&c.text) == norm))
        .map(|c| c.label.clone())
        .unwrap_or_else(|| answer.trim().to_owned())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub id: String,
    pub status: RowStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub predictions: Vec<String>,
    pub gold: Vec<String>,
    pub paths: Vec<String>,
    pub hit: u8,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Fraction of this question's emitted paths that ground; `None` when it
    /// emitted none.
    pub faithful: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mcq_correct: Option<bool>,
    pub no_grounded_evidence: bool,
    pub runtime_s: f64,
    pub llm_calls: u32,
    pub chat_calls: u32,
    pub llm_tokens: u64,
    pub cache_hit: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RowStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregates {
    pub records: usize,
    pub evaluated: usize,
    pub failures: usize,
    pub hit: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub faithful_ratio: Option<f64>,
    pub accuracy: Option<f64>,
    pub mcq_flagged: usize,
    pub no_grounded_evidence: usize,
    pub mean_runtime_s: f64,
    pub mean_llm_calls: f64,
    pub mean_chat_calls: f64,
    pub mean_llm_tokens: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub aggregates: Aggregates,
    pub rows: Vec<EvalRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    pub jobs: usize,
    /// When false every runtime is reported as 0 so reruns are byte-identical.
    pub timings: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            jobs: 1,
            timings: true,
        }
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn score_row(
    record: &QaRecord,
    outcome: Result<Answered, PipelineError>,
    runtime: f64,
    kg: &KnowledgeGraph,
    policy: &MatchPolicy,
) -> (EvalRow, Option<McqRow>) {
    let mut row = EvalRow {
        id: record.id.clone(),
        status: RowStatus::Ok,
        error: None,
        predictions: vec![],
        gold: record.answers.clone(),
        paths: vec![],
        hit: 0,
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
        faithful: None,
        mcq_correct: None,
        no_grounded_evidence: false,
        runtime_s: runtime,
        llm_calls: 0,
        chat_calls: 0,
        llm_tokens: 0,
        cache_hit: None,
    };
    let answered = match outcome {
        Ok(a) => a,
        Err(e) => {
            row.status = RowStatus::Failed;
            if let Some(t) = e.trace() {
                row.llm_calls = t.llm_calls();
                row.chat_calls = t.chat_calls;
            }
            row.error = Some(e.to_string());
            return (row, None);
        }
    };
    row.paths = answered.evidence.iter().map(|r| r.path_text.clone()).collect();
    if !row.paths.is_empty() {
        let ok = row.paths.iter().filter(|p| kg.parse_path(p).is_ok()).count();
        row.faithful = Some(ok as f64 / row.paths.len() as f64);
    }
    row.no_grounded_evidence = answered.trace.no_grounded_evidence;
    row.llm_calls = answered.trace.llm_calls();
    row.chat_calls = answered.trace.chat_calls;
    row.llm_tokens = answered.trace.llm_tokens();
    row.cache_hit = answered.trace.cache_hit;

    let mut mcq = None;
    if let Some(choices) = &record.choices {
        let predicted = answered
            .answers
            .first()
            .map(|a| choice_label(a, record, policy))
            .unwrap_or_default();
        let gold = record.answers.first().cloned().unwrap_or_default();
        row.mcq_correct = Some(predicted == gold);
        mcq = Some(McqRow {
            predicted,
            gold,
            labels: choices.iter().map(|c| c.label.clone()).collect(),
        });
    }
    row.predictions = answered.answers;
    match prf1(&row.predictions, &row.gold, policy) {
        Ok(m) => {
            row.hit = hit(&row.predictions, &row.gold, policy).unwrap_or(0);
            row.precision = m.precision;
            row.recall = m.recall;
            row.f1 = m.f1;
        }
        Err(e) => {
            row.status = RowStatus::Failed;
            row.error = Some(e.to_string());
        }
    }
    (row, mcq)
}

/// Runs `pipeline` on every record (up to `jobs` at a time) and scores the
/// answers. Failed records stay in `rows` but are left out of the aggregates.
pub fn run_eval<F>(
    records: &[QaRecord],
    kg: &KnowledgeGraph,
    pipeline: F,
    options: EvalOptions,
) -> Result<EvalReport, MetricError>
where
    F: Fn(&QaRecord) -> Result<Answered, PipelineError> + Sync,
{
    if records.is_empty() {
        return Err(MetricError::EmptyDataset);
    }
    let policy = MatchPolicy;
    let run_one = |r: &QaRecord| {
        let t = Instant::now();
        let outcome = pipeline(r);
        let runtime = if options.timings {
            t.elapsed().as_secs_f64()
        } else {
            0.0
        };
        score_row(r, outcome, runtime, kg, &policy)
    };

    let jobs = options.jobs.clamp(1, records.len());
    let scored: Vec<(EvalRow, Option<McqRow>)> = if jobs == 1 {
        records.iter().map(run_one).collect()
    } else {
        let chunk = records.len().div_ceil(jobs);
        std::thread::scope(|s| {
            let handles: Vec<_> = records
                .chunks(chunk)
                .map(|part| {
                    let run_one = &run_one;
                    s.spawn(move || part.iter().map(run_one).collect::<Vec<_>>())
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("eval worker panicked"))
                .collect()
        })
    };

    let ok: Vec<&EvalRow> = scored
        .iter()
        .map(|(r, _)| r)
        .filter(|r| r.status == RowStatus::Ok)
        .collect();
    let mcq_rows: Vec<McqRow> = scored
        .iter()
        .filter(|(r, _)| r.status == RowStatus::Ok)
        .filter_map(|(_, m)| m.clone())
        .collect();
    let mcq = mcq_accuracy(&mcq_rows).ok();
    let faithful_input: Vec<(Vec<String>, bool)> =
        ok.iter().map(|r| (r.paths.clone(), r.hit == 1)).collect();

    let aggregates = Aggregates {
        records: records.len(),
        evaluated: ok.len(),
        failures: records.len() - ok.len(),
        hit: mean(ok.iter().map(|r| f64::from(r.hit))),
        precision: mean(ok.iter().map(|r| r.precision)),
        recall: mean(ok.iter().map(|r| r.recall)),
        f1: mean(ok.iter().map(|r| r.f1)),
        faithful_ratio: faithful_ratio(&faithful_input, kg),
        accuracy: mcq.map(|m| m.accuracy),
        mcq_flagged: mcq.map_or(0, |m| m.flagged),
        no_grounded_evidence: ok.iter().filter(|r| r.no_grounded_evidence).count(),
        mean_runtime_s: mean(ok.iter().map(|r| r.runtime_s)),
        mean_llm_calls: mean(ok.iter().map(|r| f64::from(r.llm_calls))),
        mean_chat_calls: mean(ok.iter().map(|r| f64::from(r.chat_calls))),
        mean_llm_tokens: mean(ok.iter().map(|r| r.llm_tokens as f64)),
    };
    Ok(EvalReport {
        aggregates,
        rows: scored.into_iter().map(|(r, _)| r).collect(),
    })
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Plain-text summary table.
    pub fn summary(&self) -> String {
        let a = &self.aggregates;
        let opt = |x: Option<f64>| x.map_or_else(|| "n/a".to_owned(), |v| format!("{:.4}", v));
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(out, "{k:<22}{v:>12}");
        };
        line("records", a.records.to_string());
        line("evaluated", a.evaluated.to_string());
        line("failures", a.failures.to_string());
        line("hit", format!("{:.4}", a.hit));
        line("precision", format!("{:.4}", a.precision));
        line("recall", format!("{:.4}", a.recall));
        line("f1", format!("{:.4}", a.f1));
        line("faithful ratio", opt(a.faithful_ratio));
        if a.accuracy.is_some() {
            line("accuracy", opt(a.accuracy));
            line("mcq flagged", a.mcq_flagged.to_string());
        }
        line("no grounded evidence", a.no_grounded_evidence.to_string());
        line("mean runtime (s)", format!("{:.4}", a.mean_runtime_s));
        line("mean llm calls", format!("{:.2}", a.mean_llm_calls));
        line("mean chat calls", format!("{:.2}", a.mean_chat_calls));
        line("mean llm tokens", format!("{:.1}", a.mean_llm_tokens));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::DecodeResult;
    use crate::kg::tests::t1;
    use crate::kg::Choice;
    use crate::reasoner::AnswerTrace;

    const P: MatchPolicy = MatchPolicy;

    #[test]
    fn normalization() {
        assert_eq!(P.normalize("  MOBILE \t Alabama "), "mobile alabama");
        let once = P.normalize(" A  b ");
        assert_eq!(P.normalize(&once), once);
        assert_eq!(P.normalize("m.0cr320w"), "m.0cr320w");
    }

    #[test]
    fn hit_cases() {
        assert_eq!(hit(&["Jaxon Bieber"], &["Jaxon Bieber"], &P), Ok(1));
        assert_eq!(hit::<&str, _>(&[], &["x"], &P), Ok(0));
        assert_eq!(hit(&["MOBILE "], &["Mobile"], &P), Ok(1));
        assert_eq!(hit(&["a"], &[] as &[&str], &P), Err(MetricError::EmptyGold));
    }

    #[test]
    fn prf1_cases() {
        let m = prf1(&["a", "b"], &["b", "c"], &P).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.5, 0.5, 0.5));
        let m = prf1(&["x", "y"], &["y", "x"], &P).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
        let m = prf1::<&str, _>(&[], &["x"], &P).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        // duplicates collapse after normalization
        let m = prf1(&["A", "a ", "b"], &["a"], &P).unwrap();
        assert_eq!((m.precision, m.recall), (0.5, 1.0));
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    fn mcq(p: &str, g: &str) -> McqRow {
        McqRow {
            predicted: p.into(),
            gold: g.into(),
            labels: vec!["A".into(), "B".into(), "C".into(), "D".into()],
        }
    }

    #[test]
    fn mcq_cases() {
        let all = [mcq("A", "A"), mcq("B", "B")];
        assert_eq!(mcq_accuracy(&all).unwrap().accuracy, 1.0);
        let none = [mcq("A", "B"), mcq("C", "D")];
        assert_eq!(mcq_accuracy(&none).unwrap().accuracy, 0.0);
        let three = [mcq("A", "A"), mcq("B", "B"), mcq("C", "C"), mcq("A", "D")];
        assert_eq!(mcq_accuracy(&three).unwrap().accuracy, 0.75);
        let flagged = mcq_accuracy(&[mcq("E", "A"), mcq("A", "A")]).unwrap();
        assert_eq!((flagged.accuracy, flagged.flagged), (0.5, 1));
    }

    #[test]
    fn faithful_cases() {
        let kg = t1();
        let good = "<PATH> A → r1 → B </PATH>".to_string();
        let bad = "<PATH> A → r2 → B </PATH>".to_string();
        assert_eq!(
            faithful_ratio(&[(vec![good.clone()], true), (vec![good.clone()], true)], &kg),
            Some(1.0)
        );
        assert_eq!(
            faithful_ratio(&[(vec![good.clone(), bad.clone()], true), (vec![good.clone()], true)], &kg),
            Some(0.5)
        );
        // misses are excluded from the denominator
        assert_eq!(faithful_ratio(&[(vec![bad.clone()], false), (vec![good], true)], &kg), Some(1.0));
        assert_eq!(faithful_ratio(&[(vec![bad], false)], &kg), None);
    }

    fn rec(id: &str, gold: &[&str]) -> QaRecord {
        QaRecord {
            id: id.into(),
            question: format!("question {id}"),
            question_entities: vec!["A".into()],
            answers: gold.iter().map(|s| s.to_string()).collect(),
            choices: None,
        }
    }

    fn answered(answers: &[&str], paths: &[&str]) -> Answered {
        Answered {
            answers: answers.iter().map(|s| s.to_string()).collect(),
            evidence: paths
                .iter()
                .map(|p| DecodeResult {
                    path_text: p.to_string(),
                    answer_text: String::new(),
                    log_score: 0.0,
                    path_tokens: 0,
                    answer_tokens: 0,
                    step_log_probs: vec![],
                })
                .collect(),
            raw_response: String::new(),
            trace: AnswerTrace {
                decode_sessions: 1,
                chat_calls: 1,
                ..AnswerTrace::default()
            },
        }
    }

    fn toy(r: &QaRecord) -> Result<Answered, PipelineError> {
        let p = "<PATH> A → r1 → B </PATH>";
        match r.id.as_str() {
            "1" => Ok(answered(&["B"], &[p])),
            "2" => Ok(answered(&["B", "X"], &[p])),
            "3" => Ok(answered(&[], &[p])),
            _ => Err(PipelineError::Kg(crate::kg::KgError::UnknownEntity("Q".into()))),
        }
    }

    #[test]
    fn three_record_run() {
        let kg = t1();
        let records = [rec("1", &["B"]), rec("2", &["B", "C"]), rec("3", &["C"])];
        let no_time = EvalOptions {
            jobs: 1,
            timings: false,
        };
        let report = run_eval(&records, &kg, toy, no_time).unwrap();
        let a = &report.aggregates;
        assert_eq!(report.rows.len(), 3);
        assert_eq!(a.failures, 0);
        // hits 1,1,0; precision 1, .5, 0; recall 1, .5, 0; f1 1, .5, 0
        assert!((a.hit - 2.0 / 3.0).abs() < 1e-12);
        assert!((a.precision - 0.5).abs() < 1e-12);
        assert!((a.recall - 0.5).abs() < 1e-12);
        assert!((a.f1 - 0.5).abs() < 1e-12);
        assert_eq!(a.faithful_ratio, Some(1.0));
        assert_eq!(a.mean_llm_calls, 2.0);
        assert_eq!(a.mean_chat_calls, 1.0);
        let again = run_eval(&records, &kg, toy, EvalOptions { jobs: 3, ..no_time }).unwrap();
        assert_eq!(report.to_json(), again.to_json());
    }

    #[test]
    fn failures_are_excluded() {
        let kg = t1();
        let records = [rec("1", &["B"]), rec("4", &["B"]), rec("3", &["C"])];
        let report = run_eval(&records, &kg, toy, EvalOptions::default()).unwrap();
        assert_eq!(report.rows.len(), 3);
        assert_eq!(report.aggregates.failures, 1);
        assert_eq!(report.aggregates.evaluated, 2);
        assert_eq!(report.aggregates.hit, 0.5);
        assert_eq!(report.rows[1].status, RowStatus::Failed);
        assert!(report.rows[1].error.as_deref().unwrap().contains("Q"));
        let json: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(json["rows"][1]["status"], "failed");
        assert!(report.summary().contains("failures"));
    }

    #[test]
    fn empty_dataset_is_an_error() {
        assert_eq!(
            run_eval(&[], &t1(), toy, EvalOptions::default()).unwrap_err(),
            MetricError::EmptyDataset
        );
    }

    #[test]
    fn mcq_records_map_text_to_labels() {
        let kg = t1();
        let mut r = rec("1", &["B"]);
        r.choices = Some(vec![
            Choice {
                label: "A".into(),
                text: "apple".into(),
            },
            Choice {
                label: "B".into(),
                text: "banana".into(),
            },
        ]);
        let by_text = |_: &QaRecord| Ok(answered(&["Banana"], &[]));
        let rep = run_eval(&[r.clone()], &kg, by_text, EvalOptions::default()).unwrap();
        assert_eq!(rep.aggregates.accuracy, Some(1.0));
        let by_label = |_: &QaRecord| Ok(answered(&["B."], &[]));
        let rep = run_eval(&[r.clone()], &kg, by_label, EvalOptions::default()).unwrap();
        assert_eq!(rep.rows[0].mcq_correct, Some(true));
        let wrong = |_: &QaRecord| Ok(answered(&["cherry"], &[]));
        let rep = run_eval(&[r], &kg, wrong, EvalOptions::default()).unwrap();
        assert_eq!(rep.aggregates.accuracy, Some(0.0));
        assert_eq!(rep.aggregates.mcq_flagged, 1);
    }
}
