//! KG-Trie: a prefix tree over tokenized path sentences.
//!
//! Nodes live in an arena. Each node keeps its child keys sorted by token id in
//! a separate vector, so the allowed-next set for a prefix is a borrowed slice
//! and a single step costs one binary search.

mod cache;
mod format;

pub use cache::{TrieCache, TrieKey, DEFAULT_CAPACITY};
pub use format::{FormatError, FingerprintMismatch, MAGIC, VERSION};

use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{TokenId, Vocab};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TrieError {
    #[error("cannot insert an empty token sequence")]
    EmptySequence,
    #[error("sequence of {len} tokens is not a valid prefix")]
    InvalidPrefix { len: usize },
}

/// Handle to a node inside one [`KgTrie`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(u32);

impl NodeId {
    pub const ROOT: NodeId = NodeId(0);
}

#[derive(Debug, Clone, Default)]
struct Node {
    keys: Vec<TokenId>,
    kids: Vec<u32>,
    terminal: bool,
}

#[derive(Debug, Clone)]
pub struct KgTrie {
    nodes: Vec<Node>,
    n_paths: usize,
    fingerprint: u64,
    hops: u32,
}

impl KgTrie {
    /// An empty trie bound to a vocabulary fingerprint and the hop limit used
    /// to produce its paths.
    pub fn new(fingerprint: u64, hops: u32) -> Self {
        Self {
            nodes: vec![Node::default()],
            n_paths: 0,
            fingerprint,
            hops,
        }
    }

    pub fn build<I, S>(fingerprint: u64, hops: u32, sequences: I) -> Result<Self, TrieError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[TokenId]>,
    {
        let mut trie = Self::new(fingerprint, hops);
        for seq in sequences {
            trie.insert(seq.as_ref())?;
        }
        Ok(trie)
    }

    /// Builds one sub-trie per partition on its own thread and merges them.
    pub fn build_partitioned<S>(
        fingerprint: u64,
        hops: u32,
        partitions: &[Vec<S>],
    ) -> Result<Self, TrieError>
    where
        S: AsRef<[TokenId]> + Sync,
    {
        let parts: Vec<Result<KgTrie, TrieError>> = std::thread::scope(|scope| {
            let handles: Vec<_> = partitions
                .iter()
                .map(|p| scope.spawn(move || KgTrie::build(fingerprint, hops, p)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("trie build worker panicked"))
                .collect()
        });
        let mut trie = Self::new(fingerprint, hops);
        for part in parts {
            trie.merge(&part?);
        }
        Ok(trie)
    }

    /// Inserts a complete sequence. Returns `false` if it was already stored.
    pub fn insert(&mut self, seq: &[TokenId]) -> Result<bool, TrieError> {
        if seq.is_empty() {
            return Err(TrieError::EmptySequence);
        }
        let mut cur = 0usize;
        for &tok in seq {
            let node = &self.nodes[cur];
            cur = match node.keys.binary_search(&tok) {
                Ok(i) => node.kids[i] as usize,
                Err(i) => {
                    let child = self.nodes.len();
                    self.nodes.push(Node::default());
                    let node = &mut self.nodes[cur];
                    node.keys.insert(i, tok);
                    node.kids.insert(i, child as u32);
                    child
                }
            };
        }
        let node = &mut self.nodes[cur];
        if node.terminal {
            return Ok(false);
        }
        node.terminal = true;
        self.n_paths += 1;
        Ok(true)
    }

    /// Adds every sequence stored in `other`. Merging is a set union, so it is
    /// associative and commutative up to query equivalence.
    pub fn merge(&mut self, other: &KgTrie) {
        for seq in other.sequences() {
            self.insert(&seq).expect("stored sequences are nonempty");
        }
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.n_paths == 0
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn hops(&self) -> u32 {
        self.hops
    }

    pub fn child(&self, node: NodeId, tok: TokenId) -> Option<NodeId> {
        let n = &self.nodes[node.0 as usize];
        n.keys
            .binary_search(&tok)
            .ok()
            .map(|i| NodeId(n.kids[i]))
    }

    /// Sorted child tokens of `node`.
    pub fn children(&self, node: NodeId) -> &[TokenId] {
        &self.nodes[node.0 as usize].keys
    }

    pub fn is_terminal(&self, node: NodeId) -> bool {
        self.nodes[node.0 as usize].terminal
    }

    /// Follows `seq` from the root.
    pub fn walk(&self, seq: &[TokenId]) -> Option<NodeId> {
        seq.iter()
            .try_fold(NodeId::ROOT, |node, &tok| self.child(node, tok))
    }

    pub fn is_valid_prefix(&self, seq: &[TokenId]) -> bool {
        self.walk(seq).is_some()
    }

    /// Tokens that keep `seq` a valid prefix, in ascending id order.
    pub fn allowed_next(&self, seq: &[TokenId]) -> Result<&[TokenId], TrieError> {
        self.walk(seq)
            .map(|n| self.children(n))
            .ok_or(TrieError::InvalidPrefix { len: seq.len() })
    }

    /// True iff `seq` is exactly a stored sequence.
    pub fn is_complete(&self, seq: &[TokenId]) -> bool {
        self.walk(seq).is_some_and(|n| self.is_terminal(n))
    }

    /// All stored sequences in lexicographic token order.
    pub fn sequences(&self) -> Vec<Vec<TokenId>> {
        let mut out = Vec::with_capacity(self.n_paths);
        let mut prefix = Vec::new();
        // (node, next child index)
        let mut stack = vec![(0usize, 0usize)];
        while let Some(top) = stack.len().checked_sub(1) {
            let (node, next) = stack[top];
            let n = &self.nodes[node];
            if next == 0 && n.terminal && !prefix.is_empty() {
                out.push(prefix.clone());
            }
            if next < n.keys.len() {
                stack[top].1 += 1;
                prefix.push(n.keys[next]);
                stack.push((n.kids[next] as usize, 0));
            } else {
                stack.pop();
                prefix.pop();
            }
        }
        out
    }

    /// Tokenizes formatted path sentences and inserts them. Sentences that
    /// contain `<unk>` or do not decode back to themselves are skipped, since
    /// the scorer could never reproduce them.
    pub fn from_path_texts<I, S>(vocab: &Vocab, hops: u32, texts: I) -> (Self, BuildReport)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let (seqs, mut report) = encode_paths(vocab, texts);
        let mut trie = Self::new(vocab.fingerprint(), hops);
        for seq in &seqs {
            match trie.insert(seq) {
                Ok(true) => report.inserted += 1,
                Ok(false) => report.duplicates += 1,
                Err(_) => report.skipped_lossy += 1,
            }
        }
        (trie, report)
    }

    /// Builds from pre-tokenized records, bypassing the tokenizer.
    pub fn from_pretokenized(
        fingerprint: u64,
        hops: u32,
        records: &[PretokenizedPath],
    ) -> Result<Self, TrieError> {
        Self::build(fingerprint, hops, records.iter().map(|r| r.tokens.as_slice()))
    }
}

/// Tokenizes path sentences, dropping those containing `<unk>` or not
/// surviving a decode round trip. Only the skip counters of the report are set.
pub fn encode_paths<I, S>(vocab: &Vocab, texts: I) -> (Vec<Vec<TokenId>>, BuildReport)
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut report = BuildReport::default();
    let mut out = Vec::new();
    for text in texts {
        let text = text.as_ref();
        let seq = vocab.encode(text);
        if seq.contains(&vocab.unk()) {
            log::warn!("skipping path with unknown tokens: {text}");
            report.skipped_unknown += 1;
        } else if seq.is_empty() || vocab.decode(&seq).ok().as_deref() != Some(text) {
            log::warn!("skipping path that does not survive tokenization: {text}");
            report.skipped_lossy += 1;
        } else {
            out.push(seq);
        }
    }
    (out, report)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct BuildReport {
    pub inserted: usize,
    pub duplicates: usize,
    pub skipped_unknown: usize,
    pub skipped_lossy: usize,
}

/// One line of a pre-tokenized path file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PretokenizedPath {
    pub tokens: Vec<TokenId>,
    pub path: String,
}

pub fn load_pretokenized<R: BufRead>(reader: R) -> Result<Vec<PretokenizedPath>, FormatError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| FormatError::Corrupt(format!("line {}: {e}", idx + 1)))?;
        out.push(rec);
    }
    Ok(out)
}
