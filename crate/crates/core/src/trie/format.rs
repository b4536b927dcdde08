// Binary trie file:
//
//   "GCRT" | version u8 | vocab fingerprint u64 | hop limit u32 | path count u64
//   node := child_count varint, (token varint, node)*, terminal u8
//
// Fixed-width integers are little-endian; varints are unsigned LEB128. Nodes
// are written in preorder with children in ascending token order.

use std::io::{self, Write};

use thiserror::Error;

use super::{KgTrie, Node};
use crate::codec::TokenId;

pub const MAGIC: [u8; 4] = *b"GCRT";
pub const VERSION: u8 = 1;

const HEADER_LEN: usize = 4 + 1 + 8 + 4 + 8;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("not a trie file (bad magic)")]
    BadMagic,
    #[error("unsupported trie file version {0}, expected {VERSION}")]
    UnsupportedVersion(u8),
    #[error("trie file is truncated")]
    Truncated,
    #[error("corrupt trie file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Raised when a loaded trie was built against a different vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("trie vocabulary fingerprint {found:016x} differs from runtime vocabulary {expected:016x}")]
pub struct FingerprintMismatch {
    pub expected: u64,
    pub found: u64,
}

fn put_varint(out: &mut Vec<u8>, mut v: u64) {
    while v >= 0x80 {
        out.push((v as u8) | 0x80);
        v >>= 7;
    }
    out.push(v as u8);
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], FormatError> {
        let end = self.pos.checked_add(n).ok_or(FormatError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(FormatError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn byte(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    fn varint(&mut self, max_bits: u32) -> Result<u64, FormatError> {
        let mut v = 0u64;
        let mut shift = 0u32;
        loop {
            let b = self.byte()?;
            if shift >= max_bits || (shift > 0 && u64::from(b & 0x7f) >> (max_bits - shift) != 0) {
                return Err(FormatError::Corrupt("varint overflow".into()));
            }
            v |= u64::from(b & 0x7f) << shift;
            if b & 0x80 == 0 {
                return Ok(v);
            }
            shift += 7;
        }
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

impl KgTrie {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.nodes.len() * 3);
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&self.fingerprint.to_le_bytes());
        out.extend_from_slice(&self.hops.to_le_bytes());
        out.extend_from_slice(&(self.n_paths as u64).to_le_bytes());

        let mut stack: Vec<(usize, usize)> = vec![(0, 0)];
        put_varint(&mut out, self.nodes[0].keys.len() as u64);
        while let Some(top) = stack.len().checked_sub(1) {
            let (node, next) = stack[top];
            let n = &self.nodes[node];
            if next < n.keys.len() {
                stack[top].1 += 1;
                let child = n.kids[next] as usize;
                put_varint(&mut out, u64::from(n.keys[next].0));
                put_varint(&mut out, self.nodes[child].keys.len() as u64);
                stack.push((child, 0));
            } else {
                out.push(u8::from(n.terminal));
                stack.pop();
            }
        }
        out
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(&self.to_bytes())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        if bytes.len() < MAGIC.len() || bytes[..4] != MAGIC {
            return Err(FormatError::BadMagic);
        }
        let mut r = Reader { buf: bytes, pos: 4 };
        let version = r.byte()?;
        if version != VERSION {
            return Err(FormatError::UnsupportedVersion(version));
        }
        let fingerprint = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
        let hops = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        let declared = u64::from_le_bytes(r.take(8)?.try_into().unwrap());

        let mut nodes = vec![Node::default()];
        // (node index, children still to read)
        let mut stack: Vec<(usize, u64)> = Vec::new();
        let root_children = r.varint(64)?;
        stack.push((0, root_children));
        let mut n_paths = 0u64;
        while let Some(top) = stack.len().checked_sub(1) {
            let (node, left) = stack[top];
            if left > 0 {
                // every child needs at least a token, a count and a terminal byte
                if left > (r.remaining() / 3) as u64 {
                    return Err(FormatError::Truncated);
                }
                stack[top].1 -= 1;
                let tok = TokenId(r.varint(32)? as u32);
                if nodes[node].keys.last().is_some_and(|&last| last >= tok) {
                    return Err(FormatError::Corrupt(format!(
                        "child tokens out of order at token {tok}"
                    )));
                }
                let child = nodes.len();
                nodes.push(Node::default());
                nodes[node].keys.push(tok);
                nodes[node].kids.push(child as u32);
                let grand = r.varint(64)?;
                stack.push((child, grand));
            } else {
                let terminal = match r.byte()? {
                    0 => false,
                    1 => true,
                    b => return Err(FormatError::Corrupt(format!("terminal flag {b}"))),
                };
                if node == 0 && terminal {
                    return Err(FormatError::Corrupt("root marked terminal".into()));
                }
                if node != 0 && !terminal && nodes[node].keys.is_empty() {
                    return Err(FormatError::Corrupt("non-terminal leaf".into()));
                }
                nodes[node].terminal = terminal;
                n_paths += u64::from(terminal);
                stack.pop();
            }
        }
        if r.remaining() != 0 {
            return Err(FormatError::Corrupt(format!(
                "{} trailing bytes",
                r.remaining()
            )));
        }
        if n_paths != declared {
            return Err(FormatError::Corrupt(format!(
                "header declares {declared} paths, stream holds {n_paths}"
            )));
        }
        Ok(Self {
            nodes,
            n_paths: n_paths as usize,
            fingerprint,
            hops,
        })
    }

    /// Loads a trie and compares its fingerprint with the runtime vocabulary.
    /// A mismatch is returned alongside the trie for the caller to surface.
    pub fn from_bytes_checked(
        bytes: &[u8],
        expected_fingerprint: u64,
    ) -> Result<(Self, Option<FingerprintMismatch>), FormatError> {
        let trie = Self::from_bytes(bytes)?;
        let warning = (trie.fingerprint != expected_fingerprint).then_some(FingerprintMismatch {
            expected: expected_fingerprint,
            found: trie.fingerprint,
        });
        Ok((trie, warning))
    }
}
