//! Supervised instances (question, shortest path, answer) for fine-tuning a
//! path generator.

use std::collections::HashSet;
use std::io::{self, Write};

use serde::Serialize;

use crate::decoder::{ANSWER_SCAFFOLD, PATH_SCAFFOLD};
use crate::kg::{KnowledgeGraph, QaRecord};
use crate::reasoner::render_generation_prompt;

/// Shortest paths kept per (question entity, answer) pair.
pub const DEFAULT_CAP_PER_PAIR: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InstanceMeta {
    pub record_id: String,
    pub src: String,
    pub dst: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TrainInstance {
    pub question: String,
    /// Empty when the answer is the question entity itself.
    pub path: String,
    pub answer: String,
    pub prompt: String,
    pub target: String,
    pub meta: InstanceMeta,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct TrainStats {
    pub records: usize,
    pub instances: usize,
    pub zero_hop: usize,
    /// Gold answers that are not KG entities.
    pub unresolved_answers: usize,
    /// Question entities that are not KG entities.
    pub unresolved_entities: usize,
    /// Resolvable pairs with no connecting path.
    pub unreachable_pairs: usize,
    pub duplicates: usize,
    /// Records that produced no instance.
    pub empty_records: usize,
    pub per_record: Vec<usize>,
}

/// The supervised output text for one instance.
pub fn render_target(path: &str, answer: &str) -> String {
    if path.is_empty() {
        format!("{PATH_SCAFFOLD}\n{ANSWER_SCAFFOLD} {answer}")
    } else {
        format!("{PATH_SCAFFOLD} {path}\n{ANSWER_SCAFFOLD} {answer}")
    }
}

fn record_instances(
    kg: &KnowledgeGraph,
    record: &QaRecord,
    cap: usize,
    stats: &mut TrainStats,
) -> Vec<TrainInstance> {
    let mut out = Vec::new();
    let Ok(prompt) = render_generation_prompt(&record.question, &record.question_entities) else {
        return out;
    };
    for src_name in &record.question_entities {
        let Some(src) = kg.entity_id(src_name) else {
            stats.unresolved_entities += 1;
            continue;
        };
        for answer in &record.answers {
            let Some(dst) = kg.entity_id(answer) else {
                stats.unresolved_answers += 1;
                continue;
            };
            let paths = kg.shortest_paths(src, dst, cap);
            if paths.is_empty() {
                stats.unreachable_pairs += 1;
                continue;
            }
            for p in paths {
                let path = if p.is_empty() {
                    String::new()
                } else {
                    kg.format_path(&p)
                };
                out.push(TrainInstance {
                    question: record.question.clone(),
                    target: render_target(&path, answer),
                    path,
                    answer: answer.clone(),
                    prompt: prompt.clone(),
                    meta: InstanceMeta {
                        record_id: record.id.clone(),
                        src: src_name.clone(),
                        dst: answer.clone(),
                    },
                });
            }
        }
    }
    out
}

/// One instance per shortest path between each question entity and each gold
/// answer found in `kg`, at most `cap_per_pair` per pair. Output follows input
/// order regardless of `jobs`.
pub fn generate_instances(
    kg: &KnowledgeGraph,
    records: &[QaRecord],
    cap_per_pair: usize,
    jobs: usize,
) -> (Vec<TrainInstance>, TrainStats) {
    let run = |part: &[QaRecord]| {
        let mut stats = TrainStats::default();
        let per: Vec<Vec<TrainInstance>> = part
            .iter()
            .map(|r| record_instances(kg, r, cap_per_pair, &mut stats))
            .collect();
        (per, stats)
    };
    let jobs = jobs.clamp(1, records.len().max(1));
    let parts: Vec<(Vec<Vec<TrainInstance>>, TrainStats)> = if jobs == 1 {
        vec![run(records)]
    } else {
        let chunk = records.len().div_ceil(jobs);
        std::thread::scope(|s| {
            let handles: Vec<_> = records
                .chunks(chunk)
                .map(|c| s.spawn(move || run(c)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("trainset worker panicked"))
                .collect()
        })
    };

    let mut stats = TrainStats {
        records: records.len(),
        ..TrainStats::default()
    };
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (per, s) in parts {
        stats.unresolved_answers += s.unresolved_answers;
        stats.unresolved_entities += s.unresolved_entities;
        stats.unreachable_pairs += s.unreachable_pairs;
        for batch in per {
            let before = out.len();
            for inst in batch {
                if !seen.insert((inst.question.clone(), inst.path.clone(), inst.answer.clone())) {
                    stats.duplicates += 1;
                    continue;
                }
                stats.zero_hop += usize::from(inst.path.is_empty());
                out.push(inst);
            }
            stats.per_record.push(out.len() - before);
            stats.empty_records += usize::from(out.len() == before);
        }
    }
    stats.instances = out.len();
    (out, stats)
}

/// Writes one JSON object per line.
pub fn write_jsonl<W: Write>(mut w: W, instances: &[TrainInstance]) -> io::Result<()> {
    for inst in instances {
        serde_json::to_writer(&mut w, inst)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
