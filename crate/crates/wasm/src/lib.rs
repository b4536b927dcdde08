//! In-browser demo over a small knowledge graph pasted as TSV.
//!
//! Every method returns JSON text so the page needs no bindings beyond strings.

use gcr_core::codec::Vocab;
use gcr_core::decoder::{constrained_beam_search, AnswerMode, DecodeConfig, TableScorer};
use gcr_core::kg::KnowledgeGraph;
use gcr_core::reasoner::render_generation_prompt;
use gcr_core::trie::{encode_paths, KgTrie};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

const MAX_HOPS: u32 = 4;

#[wasm_bindgen]
pub struct Demo {
    kg: KnowledgeGraph,
    vocab: Vocab,
}

fn split_entities(list: &str) -> Vec<String> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(tsv: &str) -> Result<Demo, String> {
        let kg = KnowledgeGraph::from_tsv(tsv.as_bytes()).map_err(|e| e.to_string())?;
        if kg.n_triples() == 0 {
            return Err("the graph has no triples".into());
        }
        let vocab = Vocab::for_graph(&kg);
        Ok(Demo { kg, vocab })
    }

    pub fn summary(&self) -> String {
        json!({
            "entities": self.kg.n_entities(),
            "relations": self.kg.n_relations(),
            "triples": self.kg.n_triples(),
            "vocab": self.vocab.len(),
        })
        .to_string()
    }

    /// Paths reachable from `entities` within `hops`, with trie size.
    pub fn paths(&self, entities: &str, hops: u32) -> Result<String, String> {
        let (texts, trie) = self.build(entities, hops)?;
        let by_hop: Vec<usize> = (1..=hops as usize)
            .map(|l| texts.iter().filter(|t| t.matches(" → ").count() == 2 * l).count())
            .collect();
        Ok(json!({
            "paths": texts,
            "by_hop": by_hop,
            "trie_paths": trie.n_paths(),
            "trie_nodes": trie.n_nodes(),
        })
        .to_string())
    }

    /// Tokens the trie allows after `prefix`, a space-separated token string.
    pub fn explore(&self, entities: &str, hops: u32, prefix: &str) -> Result<String, String> {
        let (_, trie) = self.build(entities, hops)?;
        let seq = self.vocab.encode(prefix);
        if seq.contains(&self.vocab.unk()) {
            return Err(format!("`{prefix}` contains a token outside the vocabulary"));
        }
        let next: Vec<&str> = match trie.allowed_next(&seq) {
            Ok(ids) => ids.iter().filter_map(|&t| self.vocab.token(t)).collect(),
            Err(_) => Vec::new(),
        };
        Ok(json!({
            "valid": trie.is_valid_prefix(&seq),
            "complete": trie.is_complete(&seq),
            "next": next,
        })
        .to_string())
    }

    /// Top-`beam` grounded paths under a uniform scorer that answers with the
    /// last entity of each path.
    pub fn decode(&self, entities: &str, hops: u32, beam: usize, question: &str) -> Result<String, String> {
        if beam == 0 {
            return Err("beam width must be at least 1".into());
        }
        let (_, trie) = self.build(entities, hops)?;
        let names = split_entities(entities);
        let prompt = render_generation_prompt(question, &names).map_err(|e| e.to_string())?;
        let scorer = TableScorer::uniform(&self.vocab).with_answer_mode(AnswerMode::EchoTail);
        let config = DecodeConfig {
            beam_width: beam,
            max_answer_tokens: 8,
            ..DecodeConfig::default()
        };
        let results = constrained_beam_search(&scorer, &self.vocab, &self.vocab.encode(&prompt), &trie, &config)
            .map_err(|e| e.to_string())?;
        let rows: Vec<Value> = results
            .iter()
            .map(|r| json!({"path": r.path_text, "answer": r.answer_text, "score": r.log_score}))
            .collect();
        Ok(Value::Array(rows).to_string())
    }
}

impl Demo {
    fn build(&self, entities: &str, hops: u32) -> Result<(Vec<String>, KgTrie), String> {
        if !(1..=MAX_HOPS).contains(&hops) {
            return Err(format!("hops must be between 1 and {MAX_HOPS}"));
        }
        let names = split_entities(entities);
        if names.is_empty() {
            return Err("give at least one entity".into());
        }
        let ids = self.kg.resolve_entities(&names).map_err(|e| e.to_string())?;
        let texts: Vec<String> = self
            .kg
            .enumerate_paths(&ids, hops as usize)
            .map_err(|e| e.to_string())?
            .iter()
            .map(|p| self.kg.format_path(p))
            .collect();
        let (seqs, _) = encode_paths(&self.vocab, &texts);
        let trie = KgTrie::build(self.vocab.fingerprint(), hops, &seqs).map_err(|e| e.to_string())?;
        Ok((texts, trie))
    }
}
