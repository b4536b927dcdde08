use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::num::NonZeroUsize;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use gcr_core::codec::{SpecialNames, Vocab};
use gcr_core::decoder::{
    constrained_beam_search, AnswerMode, DecodeConfig, RemoteScorer, Scorer, TableScorer,
};
use gcr_core::eval::{run_eval, EvalOptions};
use gcr_core::http::{HttpConfig, Secret};
use gcr_core::kg::{load_qa, KnowledgeGraph, QaRecord};
use gcr_core::reasoner::{
    backend_from_spec, build_question_trie, render_generation_prompt, ChatClient, Pipeline,
    PipelineConfig, TrieSource,
};
use gcr_core::trainset::{generate_instances, write_jsonl};
use gcr_core::trie::{KgTrie, TrieCache};
use serde_json::json;

use crate::config::RunConfig;
use crate::CliError;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn failure(msg: impl std::fmt::Display) -> CliError {
    CliError::Failure(msg.to_string())
}

fn open(path: &Path, what: &str) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| usage(format!("cannot read {what} file {}: {e}", path.display())))
}

fn load_kg(cfg: &RunConfig) -> Result<KnowledgeGraph, CliError> {
    let path = cfg.kg.as_deref().ok_or_else(|| usage("--kg is required"))?;
    let t = Instant::now();
    let kg = KnowledgeGraph::from_tsv(open(path, "KG")?)
        .map_err(|e| usage(format!("{}: {e}", path.display())))?;
    log::info!(
        "loaded {} triples, {} entities in {:.3}s",
        kg.n_triples(),
        kg.n_entities(),
        t.elapsed().as_secs_f64()
    );
    Ok(kg)
}

fn load_records(cfg: &RunConfig) -> Result<Vec<QaRecord>, CliError> {
    let path = cfg.qa.as_deref().ok_or_else(|| usage("--qa is required"))?;
    load_qa(open(path, "QA")?).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn load_vocab(cfg: &RunConfig, kg: &KnowledgeGraph) -> Result<Vocab, CliError> {
    match &cfg.vocab {
        Some(path) => Vocab::from_json(open(path, "vocab")?, &SpecialNames::default())
            .map_err(|e| usage(format!("{}: {e}", path.display()))),
        None => Ok(Vocab::for_graph(kg)),
    }
}

fn http_config(cfg: &RunConfig, key: Option<&str>) -> HttpConfig {
    HttpConfig {
        timeout: cfg.timeout,
        retries: cfg.retries,
        auth: key.map(Secret::new),
        max_in_flight: cfg.jobs.max(1),
        ..HttpConfig::default()
    }
}

fn make_scorer(cfg: &RunConfig, vocab: &Vocab) -> Result<Box<dyn Scorer>, CliError> {
    let spec = cfg.scorer.as_str();
    let scorer: Box<dyn Scorer> = match spec {
        "uniform" => Box::new(TableScorer::uniform(vocab)),
        "echo" => Box::new(TableScorer::uniform(vocab).with_answer_mode(AnswerMode::EchoTail)),
        s if s.starts_with("table:") => {
            let path = Path::new(&s["table:".len()..]);
            let text = fs::read_to_string(path)
                .map_err(|e| usage(format!("cannot read scorer table {}: {e}", path.display())))?;
            Box::new(TableScorer::from_json(vocab, &text).map_err(|e| usage(e.to_string()))?)
        }
        s if s.starts_with("http://") || s.starts_with("https://") => {
            Box::new(RemoteScorer::connect(s, http_config(cfg, None)).map_err(failure)?)
        }
        other => return Err(usage(format!("unknown scorer `{other}`"))),
    };
    if scorer.fingerprint() != vocab.fingerprint() {
        return Err(usage(format!(
            "scorer vocabulary {:016x} differs from the local vocabulary {:016x}",
            scorer.fingerprint(),
            vocab.fingerprint()
        )));
    }
    Ok(scorer)
}

fn make_chat(cfg: &RunConfig) -> Result<ChatClient, CliError> {
    let spec = cfg
        .chat
        .clone()
        .or_else(|| cfg.chat_endpoint.clone())
        .ok_or_else(|| usage("--chat (or GCR_CHAT_ENDPOINT) is required"))?;
    let backend = backend_from_spec(
        &spec,
        &cfg.chat_model,
        http_config(cfg, cfg.chat_key.as_deref()),
    )
    .map_err(|e| usage(e.to_string()))?;
    Ok(ChatClient::from_box(backend))
}

fn load_trie(path: &Path, vocab: &Vocab) -> Result<KgTrie, CliError> {
    let bytes =
        fs::read(path).map_err(|e| usage(format!("cannot read trie file {}: {e}", path.display())))?;
    let (trie, mismatch) = KgTrie::from_bytes_checked(&bytes, vocab.fingerprint())
        .map_err(|e| usage(format!("{}: {e}", path.display())))?;
    if let Some(m) = mismatch {
        return Err(usage(format!("{}: {m}", path.display())));
    }
    Ok(trie)
}

fn decode_config(cfg: &RunConfig) -> DecodeConfig {
    DecodeConfig {
        beam_width: cfg.beam,
        max_answer_tokens: cfg.max_answer_tokens,
        ..DecodeConfig::default()
    }
}

fn write_out(cfg: &RunConfig, bytes: &[u8]) -> Result<(), CliError> {
    match &cfg.out {
        Some(path) => fs::write(path, bytes)
            .map_err(|e| failure(format!("cannot write {}: {e}", path.display()))),
        None => io::stdout().write_all(bytes).map_err(failure),
    }
}

fn print_json(v: &serde_json::Value) -> Result<(), CliError> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v).map_err(failure)?;
    writeln!(out).map_err(failure)
}

pub fn build_trie(cfg: &RunConfig, entities: &[String]) -> Result<(), CliError> {
    let kg = load_kg(cfg)?;
    let vocab = load_vocab(cfg, &kg)?;
    let names: Vec<String> = if entities.is_empty() {
        if cfg.qa.is_none() {
            return Err(usage("give --entity or --qa"));
        }
        let mut all: Vec<String> = load_records(cfg)?
            .into_iter()
            .flat_map(|r| r.question_entities)
            .collect();
        all.sort();
        all.dedup();
        all
    } else {
        entities.to_vec()
    };
    let ids = kg.resolve_entities(&names).map_err(|e| usage(e.to_string()))?;
    let out = cfg.out.as_deref().ok_or_else(|| usage("--out is required"))?;
    let t = Instant::now();
    let built = build_question_trie(&kg, &vocab, &ids, cfg.hops, cfg.jobs).map_err(failure)?;
    let build_s = t.elapsed().as_secs_f64();
    let file = File::create(out).map_err(|e| failure(format!("cannot write {}: {e}", out.display())))?;
    built.trie.write_to(BufWriter::new(file)).map_err(failure)?;
    print_json(&json!({
        "out": out.display().to_string(),
        "entities": names,
        "hops": cfg.hops,
        "paths": built.trie.n_paths(),
        "nodes": built.trie.n_nodes(),
        "paths_enumerated": built.paths_enumerated,
        "duplicates": built.report.duplicates,
        "skipped_unknown": built.report.skipped_unknown,
        "skipped_lossy": built.report.skipped_lossy,
        "fingerprint": format!("{:016x}", built.trie.fingerprint()),
        "retrieval_s": built.times.retrieval,
        "tokenization_s": built.times.tokenization,
        "trie_s": built.times.trie,
        "build_s": build_s,
    }))
}

fn question_trie(
    cfg: &RunConfig,
    kg: &KnowledgeGraph,
    vocab: &Vocab,
    entities: &[String],
) -> Result<KgTrie, CliError> {
    let ids = kg.resolve_entities(entities).map_err(failure)?;
    match &cfg.trie {
        Some(path) => load_trie(path, vocab),
        None => Ok(build_question_trie(kg, vocab, &ids, cfg.hops, cfg.jobs)
            .map_err(failure)?
            .trie),
    }
}

pub fn decode(cfg: &RunConfig, question: &str, entities: &[String], as_json: bool) -> Result<(), CliError> {
    let kg = load_kg(cfg)?;
    let vocab = load_vocab(cfg, &kg)?;
    let scorer = make_scorer(cfg, &vocab)?;
    let trie = question_trie(cfg, &kg, &vocab, entities)?;
    let prompt = render_generation_prompt(question, entities).map_err(|e| usage(e.to_string()))?;
    let results = constrained_beam_search(
        scorer.as_ref(),
        &vocab,
        &vocab.encode(&prompt),
        &trie,
        &decode_config(cfg),
    )
    .map_err(failure)?;
    if as_json {
        return print_json(&json!(results));
    }
    if results.is_empty() {
        eprintln!("no grounded paths");
    }
    let mut out = io::stdout().lock();
    for (i, r) in results.iter().enumerate() {
        let _ = write!(out, "{}\t{:.6}\t{}", i + 1, r.log_score, r.path_text);
        if !r.answer_text.is_empty() {
            let _ = write!(out, "\t{}", r.answer_text);
        }
        let _ = writeln!(out);
    }
    Ok(())
}

pub fn answer(cfg: &RunConfig, question: &str, entities: &[String], as_json: bool) -> Result<(), CliError> {
    let kg = load_kg(cfg)?;
    let vocab = load_vocab(cfg, &kg)?;
    let scorer = make_scorer(cfg, &vocab)?;
    let chat = make_chat(cfg)?;
    let tries = match &cfg.trie {
        Some(path) => TrieSource::Fixed(Arc::new(load_trie(path, &vocab)?)),
        None => TrieSource::OnDemand,
    };
    let pipeline = Pipeline {
        kg: &kg,
        vocab: &vocab,
        tries,
        scorer: scorer.as_ref(),
        chat: &chat,
        config: PipelineConfig {
            hops: cfg.hops,
            decode: decode_config(cfg),
            build_jobs: cfg.jobs,
        },
    };
    let record = QaRecord {
        id: "cli".into(),
        question: question.to_owned(),
        question_entities: entities.to_vec(),
        answers: vec![],
        choices: None,
    };
    let answered = pipeline.answer(&record).map_err(|e| {
        if let Some(t) = e.trace() {
            log::error!("trace at failure: {}", json!(t));
        }
        failure(e)
    })?;
    if as_json {
        return print_json(&json!(answered));
    }
    let mut out = io::stdout().lock();
    for a in &answered.answers {
        let _ = writeln!(out, "{a}");
    }
    let t = &answered.trace;
    if t.no_grounded_evidence {
        eprintln!("no grounded evidence; the chat model was not consulted");
    }
    eprintln!(
        "evidence {} | llm calls {} (chat {}) | scorer calls {} | tokens {}{} | {:.3}s",
        answered.evidence.len(),
        t.llm_calls(),
        t.chat_calls,
        t.scorer_calls,
        t.llm_tokens(),
        if t.tokens_estimated { " (estimated)" } else { "" },
        t.times.total()
    );
    Ok(())
}

pub fn eval(cfg: &RunConfig, timings: bool) -> Result<(), CliError> {
    let kg = load_kg(cfg)?;
    let records = load_records(cfg)?;
    if records.is_empty() {
        return Err(usage("QA file has no records"));
    }
    let vocab = load_vocab(cfg, &kg)?;
    let scorer = make_scorer(cfg, &vocab)?;
    let chat = make_chat(cfg)?;
    let cache = TrieCache::new(NonZeroUsize::new(cfg.cache_capacity).expect("validated"));
    let tries = match &cfg.trie {
        Some(path) => TrieSource::Fixed(Arc::new(load_trie(path, &vocab)?)),
        None => TrieSource::Cache(&cache),
    };
    let pipeline = Pipeline {
        kg: &kg,
        vocab: &vocab,
        tries,
        scorer: scorer.as_ref(),
        chat: &chat,
        config: PipelineConfig {
            hops: cfg.hops,
            decode: decode_config(cfg),
            build_jobs: 1,
        },
    };
    let report = run_eval(
        &records,
        &kg,
        |r| pipeline.answer(r),
        EvalOptions {
            jobs: cfg.jobs,
            timings,
        },
    )
    .map_err(failure)?;
    log::info!("trie cache: {} hits, {} misses", cache.hits(), cache.misses());
    if let Some(path) = &cfg.out {
        let mut json = report.to_json();
        json.push('\n');
        fs::write(path, json).map_err(|e| failure(format!("cannot write {}: {e}", path.display())))?;
    }
    print!("{}", report.summary());
    if report.aggregates.evaluated == 0 {
        return Err(failure("every record failed"));
    }
    Ok(())
}

pub fn gen_train(cfg: &RunConfig, cap: usize) -> Result<(), CliError> {
    if cap == 0 {
        return Err(usage("--cap must be at least 1"));
    }
    let kg = load_kg(cfg)?;
    let records = load_records(cfg)?;
    let (instances, stats) = generate_instances(&kg, &records, cap, cfg.jobs);
    let mut buf = Vec::new();
    write_jsonl(&mut buf, &instances).map_err(failure)?;
    write_out(cfg, &buf)?;
    let stats = serde_json::to_string_pretty(&stats).map_err(failure)?;
    if cfg.out.is_some() {
        println!("{stats}");
    } else {
        eprintln!("{stats}");
    }
    Ok(())
}
