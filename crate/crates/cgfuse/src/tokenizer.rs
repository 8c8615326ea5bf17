//! Subword tokenizer shared by the transformer and the graph node features.
//!
//! Text is first segmented into units: whitespace runs, word-character runs
//! (further split at underscores and at lower-to-upper camelCase boundaries),
//! and single other characters. A byte-pair vocabulary is then learned by
//! repeatedly merging the most frequent adjacent symbol pair inside units;
//! merging never crosses a unit boundary. Encoding greedily takes the
//! longest vocabulary match within each unit, so any text whose characters
//! are in the alphabet round-trips exactly.
//!
//! When asked for provenance, [`encode`] also reports which code token (by
//! index in lexing order) each subtoken came from, which is what ties
//! subword positions back to graph terminals.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::frontend;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const MASK: usize = 4;

const RESERVED: [&str; 5] = ["<pad>", "<bos>", "<eos>", "<unk>", "<mask>"];

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("training corpus is empty")]
    CorpusEmpty,
    #[error("vocab io error: {0}")]
    Io(String),
    #[error("vocab format error: {0}")]
    Format(String),
}

/// Bijective subword-to-id mapping with the five reserved markers at ids 0..5.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    entries: Vec<String>,
    ids: BTreeMap<String, usize>,
}

impl Vocab {
    fn from_tail(tail: Vec<String>) -> Result<Vocab, VocabError> {
        let mut entries: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        entries.extend(tail);
        let mut ids = BTreeMap::new();
        for (id, e) in entries.iter().enumerate() {
            if e.is_empty() {
                return Err(VocabError::Format(format!("empty entry at id {id}")));
            }
            if ids.insert(e.clone(), id).is_some() {
                return Err(VocabError::Format(format!("duplicate entry {e:?}")));
            }
        }
        Ok(Vocab { entries, ids })
    }

    pub fn size(&self) -> usize {
        self.entries.len()
    }

    pub fn id_of(&self, subword: &str) -> Option<usize> {
        self.ids.get(subword).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.entries[id]
    }

    /// Write the non-reserved entries, one per line, line number = id - 5.
    pub fn save(&self, path: &Path) -> Result<(), VocabError> {
        let mut out = String::new();
        for e in &self.entries[RESERVED.len()..] {
            out.push_str(&escape(e));
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| VocabError::Io(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Vocab, VocabError> {
        let text = std::fs::read_to_string(path).map_err(|e| VocabError::Io(e.to_string()))?;
        let tail = text.lines().map(unescape).collect::<Result<Vec<_>, _>>()?;
        Vocab::from_tail(tail)
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c if (c as u32) < 0x20 || c == '\x7f' => {
                out.push_str(&format!("\\x{:02x}", c as u32));
            }
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> Result<String, VocabError> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('n') => out.push('\n'),
            Some('t') => out.push('\t'),
            Some('r') => out.push('\r'),
            Some('x') => {
                let hi = chars.next();
                let lo = chars.next();
                let (Some(hi), Some(lo)) = (hi, lo) else {
                    return Err(VocabError::Format(format!("truncated escape in {s:?}")));
                };
                let code = u32::from_str_radix(&format!("{hi}{lo}"), 16)
                    .map_err(|_| VocabError::Format(format!("bad escape in {s:?}")))?;
                out.push(char::from_u32(code).expect("two hex digits stay in range"));
            }
            other => return Err(VocabError::Format(format!("bad escape {other:?} in {s:?}"))),
        }
    }
    Ok(out)
}

fn is_word_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

/// Byte ranges of the pre-split units of `text`.
fn segment(text: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let c = text[i..].chars().next().unwrap();
        if c.is_whitespace() {
            let mut j = i;
            while j < bytes.len() && text[j..].chars().next().unwrap().is_whitespace() {
                j += text[j..].chars().next().unwrap().len_utf8();
            }
            out.push((i, j));
            i = j;
        } else if is_word_char(c) {
            let mut j = i;
            // Word characters are single-byte; continuation bytes fail the test.
            while j < bytes.len() && is_word_char(bytes[j] as char) {
                j += 1;
            }
            split_word_units(text, i, j, &mut out);
            i = j;
        } else {
            let j = i + c.len_utf8();
            out.push((i, j));
            i = j;
        }
    }
    out
}

// Underscores become their own units; a lower-or-digit to upper transition
// starts a new unit ("calcTotalSize" -> "calc" "Total" "Size").
fn split_word_units(text: &str, start: usize, end: usize, out: &mut Vec<(usize, usize)>) {
    let mut unit_start = start;
    let mut prev: Option<char> = None;
    for (off, c) in text[start..end].char_indices() {
        let pos = start + off;
        if pos > unit_start {
            let boundary = c == '_'
                || prev == Some('_')
                || (c.is_ascii_uppercase()
                    && prev.is_some_and(|p| p.is_ascii_lowercase() || p.is_ascii_digit()));
            if boundary {
                out.push((unit_start, pos));
                unit_start = pos;
            }
        }
        prev = Some(c);
    }
    if unit_start < end {
        out.push((unit_start, end));
    }
}

/// Learn a subword vocabulary of at most `target_size` entries.
///
/// The alphabet (all ASCII plus every character seen in the corpus) is always
/// included as single-character fallback entries; pair merges are then
/// applied most-frequent first, ties broken toward the lexically smallest
/// pair, until the vocabulary is full or no adjacent pair repeats.
pub fn train_vocab(corpus: &[String], target_size: usize) -> Result<Vocab, VocabError> {
    assert!(target_size >= 300, "vocab target size below the supported minimum");
    let mut unit_freq: BTreeMap<&str, usize> = BTreeMap::new();
    for line in corpus {
        for (s, e) in segment(line) {
            *unit_freq.entry(&line[s..e]).or_default() += 1;
        }
    }
    if unit_freq.is_empty() {
        return Err(VocabError::CorpusEmpty);
    }

    let mut alphabet: Vec<char> = (0u32..128).map(|c| char::from_u32(c).unwrap()).collect();
    for unit in unit_freq.keys() {
        for c in unit.chars() {
            if !c.is_ascii() {
                alphabet.push(c);
            }
        }
    }
    alphabet.sort_unstable();
    alphabet.dedup();

    let mut tail: Vec<String> = alphabet.iter().map(|c| c.to_string()).collect();
    let mut known: std::collections::BTreeSet<String> = tail.iter().cloned().collect();

    // Each distinct unit as a symbol sequence, weighted by its frequency.
    let mut units: Vec<(Vec<String>, usize)> = unit_freq
        .iter()
        .map(|(u, f)| (u.chars().map(|c| c.to_string()).collect(), *f))
        .collect();

    while RESERVED.len() + tail.len() < target_size {
        let best = {
            let mut pair_counts: BTreeMap<(&str, &str), usize> = BTreeMap::new();
            for (syms, freq) in &units {
                for w in syms.windows(2) {
                    *pair_counts.entry((&w[0], &w[1])).or_default() += freq;
                }
            }
            // Most frequent pair; on ties the ascending map order keeps the
            // lexically smallest.
            let mut best: Option<((String, String), usize)> = None;
            for ((a, b), &count) in &pair_counts {
                if best.as_ref().is_none_or(|(_, c)| count > *c) {
                    best = Some(((a.to_string(), b.to_string()), count));
                }
            }
            best
        };
        let Some(((a, b), _)) = best else { break };
        let merged = format!("{a}{b}");
        for (syms, _) in &mut units {
            let mut i = 0;
            while i + 1 < syms.len() {
                if syms[i] == a && syms[i + 1] == b {
                    syms[i] = merged.clone();
                    syms.remove(i + 1);
                } else {
                    i += 1;
                }
            }
        }
        // The same string can be reachable through two different merge
        // orders; record it once.
        if known.insert(merged.clone()) {
            tail.push(merged);
        }
    }

    Vocab::from_tail(tail)
}

/// Encode text as subword ids with optional code-token provenance.
///
/// Each unit is covered left to right by the longest vocabulary entry that
/// matches; a character outside the vocabulary becomes [`UNK`]. With
/// `with_provenance` the text is also lexed as code and every subtoken lying
/// inside a code token's span reports that token's index (whitespace, and
/// everything when lexing fails, reports none).
pub fn encode(text: &str, vocab: &Vocab, with_provenance: bool) -> Vec<(usize, Option<usize>)> {
    let spans: Vec<frontend::Span> = if with_provenance {
        frontend::tokenize(text).map(|ts| ts.into_iter().map(|t| t.span).collect()).unwrap_or_default()
    } else {
        Vec::new()
    };
    let mut out = Vec::new();
    let mut tok_ptr = 0;
    let mut provenance = |start: usize, end: usize| -> Option<usize> {
        while tok_ptr < spans.len() && spans[tok_ptr].end <= start {
            tok_ptr += 1;
        }
        let sp = spans.get(tok_ptr)?;
        (sp.start <= start && end <= sp.end).then_some(tok_ptr)
    };
    for (s, e) in segment(text) {
        let unit = &text[s..e];
        let mut p = 0;
        while p < unit.len() {
            let mut matched = None;
            let mut end = unit.len();
            while end > p {
                if unit.is_char_boundary(end) {
                    if let Some(id) = vocab.id_of(&unit[p..end]) {
                        matched = Some((id, end));
                        break;
                    }
                }
                end -= 1;
            }
            let (id, next) = matched.unwrap_or_else(|| {
                let ch = unit[p..].chars().next().unwrap();
                (UNK, p + ch.len_utf8())
            });
            out.push((id, provenance(s + p, s + next)));
            p = next;
        }
    }
    out
}

pub fn decode(ids: &[usize], vocab: &Vocab) -> String {
    ids.iter().map(|&id| vocab.token(id)).collect()
}
