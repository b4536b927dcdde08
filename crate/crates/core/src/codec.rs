//! Token vocabulary shared by the trie and the scorer.
//!
//! The reference tokenizer splits on whitespace and maps each word to one id.
//! An external vocabulary (a JSON `token -> id` table) is matched word by word
//! with greedy longest-prefix pieces, continuation pieces carrying a `##`
//! prefix. The path markers are always atomic tokens.

use std::collections::HashMap;
use std::fmt;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decoder::{ANSWER_SCAFFOLD, PATH_SCAFFOLD};
use crate::kg::{KnowledgeGraph, ARROW, PATH_CLOSE, PATH_OPEN};

pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

const CONTINUATION: &str = "##";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenizerKind {
    ReferenceWhitespace,
    External,
}

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("token id {id} out of range for vocabulary of size {size}")]
    OutOfRange { id: u32, size: usize },
    #[error("vocabulary file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("vocabulary file is missing special token `{0}`")]
    MissingSpecial(String),
    #[error("vocabulary ids must be dense from 0: id {id} for `{token}` with {size} entries")]
    SparseIds { token: String, id: u32, size: usize },
    #[error("vocabulary id {0} is assigned twice")]
    DuplicateId(u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Surface strings of the special tokens in an external vocabulary.
#[derive(Debug, Clone)]
pub struct SpecialNames {
    pub path_open: String,
    pub path_close: String,
    pub eos: String,
    pub unk: String,
}

impl Default for SpecialNames {
    fn default() -> Self {
        Self {
            path_open: PATH_OPEN.into(),
            path_close: PATH_CLOSE.into(),
            eos: EOS.into(),
            unk: UNK.into(),
        }
    }
}

/// Bijective token table with the four special tokens.
///
/// The reference vocabulary fixes the specials at ids 0..=3 in the order
/// `<PATH>`, `</PATH>`, `</s>`, `<unk>`.
#[derive(Debug, Clone)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    kind: TokenizerKind,
    path_open: TokenId,
    path_close: TokenId,
    eos: TokenId,
    unk: TokenId,
    fingerprint: u64,
}

impl Vocab {
    /// Reference vocabulary: specials first, then distinct whitespace-separated
    /// words in first-seen order.
    pub fn build<I, S>(corpus: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut tokens: Vec<String> = [PATH_OPEN, PATH_CLOSE, EOS, UNK]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let mut index: HashMap<String, TokenId> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), TokenId(i as u32)))
            .collect();
        for text in corpus {
            for word in text.as_ref().split_whitespace() {
                if !index.contains_key(word) {
                    index.insert(word.to_owned(), TokenId(tokens.len() as u32));
                    tokens.push(word.to_owned());
                }
            }
        }
        let fingerprint = fingerprint(TokenizerKind::ReferenceWhitespace, &tokens);
        Self {
            tokens,
            index,
            kind: TokenizerKind::ReferenceWhitespace,
            path_open: TokenId(0),
            path_close: TokenId(1),
            eos: TokenId(2),
            unk: TokenId(3),
            fingerprint,
        }
    }

    /// Reference vocabulary covering every surface string of `kg` plus the
    /// decoder scaffolds, so that all formatted paths encode without `<unk>`.
    pub fn for_graph(kg: &KnowledgeGraph) -> Self {
        let fixed = [PATH_SCAFFOLD, ARROW, ANSWER_SCAFFOLD];
        Self::build(
            fixed
                .into_iter()
                .chain(kg.entity_names())
                .chain(kg.relation_names()),
        )
    }

    /// Loads an external `{"token": id}` table. Ids must be dense from 0.
    pub fn from_json<R: Read>(reader: R, specials: &SpecialNames) -> Result<Self, CodecError> {
        let table: HashMap<String, u32> = serde_json::from_reader(reader)?;
        let size = table.len();
        let mut tokens: Vec<Option<String>> = vec![None; size];
        for (token, &id) in &table {
            let slot = tokens.get_mut(id as usize).ok_or_else(|| CodecError::SparseIds {
                token: token.clone(),
                id,
                size,
            })?;
            if slot.is_some() {
                return Err(CodecError::DuplicateId(id));
            }
            *slot = Some(token.clone());
        }
        let tokens: Vec<String> = tokens.into_iter().map(Option::unwrap).collect();
        let index: HashMap<String, TokenId> =
            table.into_iter().map(|(t, id)| (t, TokenId(id))).collect();
        let special = |name: &str| {
            index
                .get(name)
                .copied()
                .ok_or_else(|| CodecError::MissingSpecial(name.to_owned()))
        };
        let path_open = special(&specials.path_open)?;
        let path_close = special(&specials.path_close)?;
        let eos = special(&specials.eos)?;
        let unk = special(&specials.unk)?;
        let fingerprint = fingerprint(TokenizerKind::External, &tokens);
        Ok(Self {
            tokens,
            index,
            kind: TokenizerKind::External,
            path_open,
            path_close,
            eos,
            unk,
            fingerprint,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn kind(&self) -> TokenizerKind {
        self.kind
    }

    pub fn path_open(&self) -> TokenId {
        self.path_open
    }

    pub fn path_close(&self) -> TokenId {
        self.path_close
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn unk(&self) -> TokenId {
        self.unk
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn token_id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id.0 as usize).map(String::as_str)
    }

    fn is_special(&self, id: TokenId) -> bool {
        id == self.path_open || id == self.path_close || id == self.eos || id == self.unk
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        let mut out = Vec::new();
        for word in text.split_whitespace() {
            match self.kind {
                TokenizerKind::ReferenceWhitespace => {
                    out.push(self.token_id(word).unwrap_or(self.unk));
                }
                TokenizerKind::External => self.encode_word_pieces(word, &mut out),
            }
        }
        out
    }

    fn encode_word_pieces(&self, word: &str, out: &mut Vec<TokenId>) {
        if let Some(id) = self.token_id(word) {
            out.push(id);
            return;
        }
        let mark = out.len();
        let mut rest = word;
        let mut first = true;
        while !rest.is_empty() {
            let piece = rest
                .char_indices()
                .map(|(i, c)| i + c.len_utf8())
                .rev()
                .find_map(|end| {
                    let candidate = &rest[..end];
                    let id = if first {
                        self.token_id(candidate)
                    } else {
                        self.token_id(&format!("{CONTINUATION}{candidate}"))
                    };
                    id.filter(|&id| !self.is_special(id)).map(|id| (id, end))
                });
            match piece {
                Some((id, end)) => {
                    out.push(id);
                    rest = &rest[end..];
                    first = false;
                }
                None => {
                    out.truncate(mark);
                    out.push(self.unk);
                    return;
                }
            }
        }
    }

    pub fn decode(&self, seq: &[TokenId]) -> Result<String, CodecError> {
        let mut s = String::new();
        for (i, &id) in seq.iter().enumerate() {
            let tok = self.token(id).ok_or(CodecError::OutOfRange {
                id: id.0,
                size: self.len(),
            })?;
            match self.kind {
                TokenizerKind::External if i > 0 && tok.starts_with(CONTINUATION) => {
                    s.push_str(&tok[CONTINUATION.len()..]);
                }
                _ => {
                    if i > 0 {
                        s.push(' ');
                    }
                    s.push_str(tok);
                }
            }
        }
        Ok(s)
    }

    /// Token-count estimate used for accounting when no model tokenizer is at hand.
    pub fn count_tokens(&self, text: &str) -> usize {
        self.encode(text).len()
    }
}

// FNV-1a; stable across platforms and releases, unlike `DefaultHasher`.
fn fingerprint(kind: TokenizerKind, tokens: &[String]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    let mut feed = |b: u8| {
        h ^= b as u64;
        h = h.wrapping_mul(PRIME);
    };
    feed(match kind {
        TokenizerKind::ReferenceWhitespace => 0,
        TokenizerKind::External => 1,
    });
    for t in tokens {
        t.bytes().for_each(&mut feed);
        feed(0xff);
    }
    h
}
