use std::collections::BTreeSet;

use gcr_core::codec::{TokenId, Vocab};
use gcr_core::decoder::{
    constrained_beam_search, constrained_beam_search_traced, AnswerMode, DecodeConfig, Phase, TableScorer,
};
use gcr_core::kg::{EntityId, KnowledgeGraph, ReasoningPath};
use gcr_core::reasoner::build_question_trie;
use gcr_core::trie::{encode_paths, KgTrie};
use proptest::prelude::*;

fn graph(triples: &[(u8, u8, u8)]) -> KnowledgeGraph {
    let mut kg = KnowledgeGraph::new();
    for (h, r, t) in triples {
        kg.insert(&format!("n{h}"), &format!("p{r}"), &format!("n{t}"));
    }
    kg
}

fn triples() -> impl Strategy<Value = Vec<(u8, u8, u8)>> {
    prop::collection::vec((0u8..12, 0u8..3, 0u8..12), 1..30)
}

/// Depth-first walk over the raw triple list, independent of adjacency indexes.
fn naive_paths(kg: &KnowledgeGraph, starts: &[EntityId], hops: usize) -> BTreeSet<String> {
    let all: Vec<_> = kg.triples().collect();
    let mut out = BTreeSet::new();
    let mut stack: Vec<ReasoningPath> = starts.iter().map(|&s| ReasoningPath::empty(s)).collect();
    while let Some(p) = stack.pop() {
        if !p.is_empty() {
            out.insert(kg.format_path(&p));
        }
        if p.len() == hops {
            continue;
        }
        for t in all.iter().filter(|t| t.head == p.end()) {
            let mut q = p.clone();
            q.steps.push((t.relation, t.tail));
            stack.push(q);
        }
    }
    out
}

fn sequences(kg: &KnowledgeGraph, vocab: &Vocab, starts: &[EntityId], hops: usize) -> Vec<Vec<TokenId>> {
    let texts: Vec<String> = kg
        .enumerate_paths(starts, hops)
        .unwrap()
        .iter()
        .map(|p| kg.format_path(p))
        .collect();
    encode_paths(vocab, &texts).0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn enumeration_matches_naive_walk(t in triples(), hops in 1usize..4, picks in prop::collection::vec(0usize..12, 1..4)) {
        let kg = graph(&t);
        let starts: Vec<EntityId> = picks.iter().map(|&i| EntityId((i % kg.n_entities()) as u32)).collect();
        let got = kg.enumerate_paths(&starts, hops).unwrap();
        let texts: Vec<String> = got.iter().map(|p| kg.format_path(p)).collect();
        let set: BTreeSet<String> = texts.iter().cloned().collect();
        prop_assert_eq!(set.len(), texts.len(), "duplicates in enumeration");
        prop_assert_eq!(set, naive_paths(&kg, &starts, hops));
        let par = kg.enumerate_paths_parallel(&starts, hops, 3).unwrap();
        prop_assert_eq!(par, got);
    }

    #[test]
    fn trie_answers_match_filtering(t in triples(), hops in 1usize..4, start in 0usize..12) {
        let kg = graph(&t);
        let vocab = Vocab::for_graph(&kg);
        let starts = [EntityId((start % kg.n_entities()) as u32)];
        let seqs = sequences(&kg, &vocab, &starts, hops);
        let trie = KgTrie::build(vocab.fingerprint(), hops as u32, &seqs).unwrap();
        prop_assert_eq!(trie.n_paths(), seqs.len());
        for s in &seqs {
            for i in 0..=s.len() {
                let p = &s[..i];
                let next: BTreeSet<TokenId> = seqs.iter().filter(|q| q.len() > i && q.starts_with(p)).map(|q| q[i]).collect();
                let got: BTreeSet<TokenId> = trie.allowed_next(p).unwrap().iter().copied().collect();
                prop_assert_eq!(got, next);
                prop_assert!(trie.is_valid_prefix(p));
                prop_assert_eq!(trie.is_complete(p), seqs.iter().any(|q| q.as_slice() == p));
            }
            let mut off = s.clone();
            off.insert(1, vocab.eos());
            prop_assert!(!trie.is_valid_prefix(&off));
        }
    }

    #[test]
    fn build_order_does_not_matter(t in triples(), start in 0usize..12, rot in 0usize..50) {
        let kg = graph(&t);
        let vocab = Vocab::for_graph(&kg);
        let mut seqs = sequences(&kg, &vocab, &[EntityId((start % kg.n_entities()) as u32)], 3);
        let a = KgTrie::build(vocab.fingerprint(), 3, &seqs).unwrap();
        if !seqs.is_empty() {
            let n = rot % seqs.len();
            seqs.rotate_left(n);
        }
        seqs.reverse();
        let b = KgTrie::build(vocab.fingerprint(), 3, &seqs).unwrap();
        prop_assert_eq!(a.to_bytes(), b.to_bytes());
        let parts: Vec<Vec<Vec<TokenId>>> = seqs.chunks(3).map(|c| c.to_vec()).collect();
        let parted = KgTrie::build_partitioned(vocab.fingerprint(), 3, &parts).unwrap();
        prop_assert_eq!(parted.to_bytes(), a.to_bytes());
    }

    #[test]
    fn decoded_paths_are_grounded(t in triples(), hops in 1u32..4, start in 0usize..12, k in 1usize..8, answer in 0usize..3) {
        let kg = graph(&t);
        let vocab = Vocab::for_graph(&kg);
        let starts = [EntityId((start % kg.n_entities()) as u32)];
        let trie = build_question_trie(&kg, &vocab, &starts, hops, 1).unwrap().trie;
        let scorer = TableScorer::uniform(&vocab).with_answer_mode(AnswerMode::EchoTail);
        let config = DecodeConfig { beam_width: k, max_answer_tokens: answer, ..DecodeConfig::default() };
        let prompt = vocab.encode("question");
        let results = constrained_beam_search(&scorer, &vocab, &prompt, &trie, &config).unwrap();
        prop_assert!(results.len() <= k);
        prop_assert_eq!(results.is_empty(), trie.is_empty());
        for r in &results {
            let p = kg.parse_path(&r.path_text);
            prop_assert!(p.is_ok(), "{} is not grounded", r.path_text);
            prop_assert!(p.unwrap().len() <= hops as usize);
        }
    }

    #[test]
    fn pruning_never_leaves_the_trie(t in triples(), start in 0usize..12, k in 1usize..6) {
        let kg = graph(&t);
        let vocab = Vocab::for_graph(&kg);
        let trie = build_question_trie(&kg, &vocab, &[EntityId((start % kg.n_entities()) as u32)], 3, 1).unwrap().trie;
        let scorer = TableScorer::uniform(&vocab).with_answer_mode(AnswerMode::EchoTail);
        let config = DecodeConfig { beam_width: k, max_answer_tokens: 3, ..DecodeConfig::default() };
        let scaffold = vocab.encode(&config.path_scaffold).len();
        let out = constrained_beam_search_traced(&scorer, &vocab, &[], &trie, &config).unwrap();
        let mut prev_best = 0.0f64;
        for step in &out.trace {
            prop_assert!(step.kept.len() <= k);
            for e in &step.kept {
                let path = &e.tokens[scaffold..];
                match e.phase {
                    Phase::Path => prop_assert!(trie.is_valid_prefix(path)),
                    _ => {
                        let close = path.iter().position(|&t| t == vocab.path_close()).unwrap();
                        prop_assert!(trie.is_complete(&path[..=close]));
                    }
                }
            }
            // every kept hypothesis extends a live one, and scores only fall
            if let Some(best) = step.kept.first() {
                prop_assert!(best.score <= prev_best + 1e-12);
                prev_best = best.score;
            }
        }
    }
}

#[test]
fn hand_traced_pruning_on_a_small_graph() {
    // A -r1-> B -r2-> C, A -r3-> D -r2-> C, B -r4-> E
    let kg = KnowledgeGraph::from_tsv("A\tr1\tB\nB\tr2\tC\nA\tr3\tD\nD\tr2\tC\nB\tr4\tE\n".as_bytes()).unwrap();
    let vocab = Vocab::for_graph(&kg);
    let trie = build_question_trie(&kg, &vocab, &[kg.entity_id("A").unwrap()], 2, 1).unwrap().trie;
    let scorer = TableScorer::uniform(&vocab);
    let config = DecodeConfig {
        beam_width: 2,
        max_answer_tokens: 0,
        ..DecodeConfig::default()
    };
    let out = constrained_beam_search_traced(&scorer, &vocab, &[], &trie, &config).unwrap();
    let text = |toks: &[TokenId]| vocab.decode(toks).unwrap();
    // step one: the start entity is the only child of <PATH>
    assert_eq!(out.trace[0].kept.len(), 1);
    assert!(text(&out.trace[0].kept[0].tokens).ends_with("<PATH> A"));
    assert_eq!(out.trace[0].kept[0].score, 0.0);
    // after the arrow both relations tie at ln(1/2); r1 sorts first
    let step = out
        .trace
        .iter()
        .find(|s| s.kept.iter().any(|e| text(&e.tokens).ends_with("r3")))
        .unwrap();
    let ends: Vec<String> = step.kept.iter().map(|e| text(&e.tokens)).collect();
    assert!(ends[0].ends_with("A → r1") && ends[1].ends_with("A → r3"), "{ends:?}");
    let paths: Vec<&str> = out.results.iter().map(|r| r.path_text.as_str()).collect();
    assert_eq!(paths.len(), 2);
    for p in paths {
        assert!(kg.parse_path(p).is_ok());
    }
}
