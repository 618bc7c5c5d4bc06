//! Text vocabulary files.
//!
//! ```text
//! seqfuse-bpe v1
//! <pad> 0
//! ...
//! \x20in 301
//! #merges
//! \x20 i
//! ```
//!
//! Id lines separate token and id with a tab, merge lines use a space.
//! Token bytes in the printable ASCII range `!`..`~` are written as is,
//! except the backslash, which is doubled; every other byte becomes `\xHH`.
//! Merges list the two token spellings in priority order.

use std::fmt::Write as _;
use std::path::Path;

use seqfuse_core::tokenizer::{BpeVocabulary, RESERVED_COUNT, RESERVED_NAMES};

use crate::error::{read_file, write_file, Error, Result};

pub const VERSION_TAG: &str = "seqfuse-bpe v1";
const MERGES_SENTINEL: &str = "#merges";

pub fn escape(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len());
    for &b in bytes {
        match b {
            b'\\' => out.push_str("\\\\"),
            b'!'..=b'~' => out.push(b as char),
            _ => {
                let _ = write!(out, "\\x{b:02x}");
            }
        }
    }
    out
}

pub fn unescape(text: &str) -> Option<Vec<u8>> {
    let raw = text.as_bytes();
    let mut out = Vec::with_capacity(raw.len());
    let mut i = 0;
    while i < raw.len() {
        match raw[i] {
            b'\\' => match raw.get(i + 1)? {
                b'\\' => {
                    out.push(b'\\');
                    i += 2;
                }
                b'x' => {
                    let hex = text.get(i + 2..i + 4)?;
                    out.push(u8::from_str_radix(hex, 16).ok()?);
                    i += 4;
                }
                _ => return None,
            },
            b @ b'!'..=b'~' => {
                out.push(b);
                i += 1;
            }
            _ => return None,
        }
    }
    Some(out)
}

fn spelling(vocab: &BpeVocabulary, id: u32) -> String {
    match vocab.token_bytes(id) {
        Some(b) => escape(b),
        None => RESERVED_NAMES[id as usize].to_string(),
    }
}

pub fn to_text(vocab: &BpeVocabulary) -> String {
    let mut out = String::new();
    out.push_str(VERSION_TAG);
    out.push('\n');
    for id in 0..vocab.len() as u32 {
        let _ = writeln!(out, "{}\t{id}", spelling(vocab, id));
    }
    out.push_str(MERGES_SENTINEL);
    out.push('\n');
    for &(l, r) in vocab.merges() {
        let _ = writeln!(out, "{} {}", spelling(vocab, l), spelling(vocab, r));
    }
    out
}

/// Parses [`to_text`] output. `origin` only labels error messages.
pub fn from_text(text: &str, origin: &Path) -> Result<BpeVocabulary> {
    let bad = |line: usize, msg: &str| Error::format(origin, format!("line {line}: {msg}"));
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, VERSION_TAG)) => {}
        _ => return Err(bad(1, &format!("expected version tag `{VERSION_TAG}`"))),
    }
    let mut tokens = Vec::new();
    let mut reserved = 0;
    let mut saw_sentinel = false;
    for (n, line) in lines.by_ref() {
        if line == MERGES_SENTINEL {
            saw_sentinel = true;
            break;
        }
        let (spelled, id) = line
            .split_once('\t')
            .ok_or_else(|| bad(n, "expected token<TAB>id"))?;
        let id: usize = id.parse().map_err(|_| bad(n, "id is not an integer"))?;
        let expected = tokens.len() + RESERVED_COUNT;
        if id < RESERVED_COUNT || reserved < RESERVED_COUNT {
            if id != reserved || spelled != RESERVED_NAMES[reserved] {
                return Err(bad(n, "reserved tokens must come first, in order"));
            }
            reserved += 1;
            continue;
        }
        if id != expected {
            return Err(bad(n, &format!("expected id {expected}")));
        }
        tokens.push(unescape(spelled).ok_or_else(|| bad(n, "malformed escape"))?);
    }
    if !saw_sentinel {
        return Err(Error::format(
            origin,
            format!("missing `{MERGES_SENTINEL}` line"),
        ));
    }
    let lookup: std::collections::HashMap<Vec<u8>, u32> = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), (i + RESERVED_COUNT) as u32))
        .collect();
    let mut merges = Vec::new();
    for (n, line) in lines {
        let (l, r) = line
            .split_once(' ')
            .ok_or_else(|| bad(n, "expected `left right`"))?;
        let id = |s: &str| {
            unescape(s)
                .and_then(|b| lookup.get(&b).copied())
                .ok_or_else(|| bad(n, &format!("unknown token `{s}`")))
        };
        merges.push((id(l)?, id(r)?));
    }
    BpeVocabulary::from_parts(tokens, merges).map_err(|e| Error::format(origin, e.to_string()))
}

pub fn save(vocab: &BpeVocabulary, path: &Path) -> Result<()> {
    write_file(path, to_text(vocab).as_bytes())
}

pub fn load(path: &Path) -> Result<BpeVocabulary> {
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::format(path, "not UTF-8"))?;
    from_text(&text, path)
}
