//! Tweet tokenizer, frequency-cutoff vocabulary and fixed-length encoding.
//!
//! Tokenizer rules, applied in order:
//!
//! 1. lowercase the whole string;
//! 2. collapse any run of more than three identical characters to three;
//! 3. split on whitespace; a chunk starting with `http://`, `https://` or
//!    `www.` becomes `<url>`;
//! 4. inside a chunk, `@name` becomes `<user>`, `#tag` stays one token
//!    including the `#`, runs of letters/digits/underscore (with inner
//!    apostrophes) form words, and every other character (punctuation,
//!    emoji, symbols) is a token of its own.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const URL_TOKEN: &str = "<url>";
pub const USER_TOKEN: &str = "<user>";
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const PAD_INDEX: u32 = 0;
pub const UNK_INDEX: u32 = 1;

/// Minimum corpus frequency for a dictionary word.
pub const DEFAULT_MIN_COUNT: usize = 10;

const MAX_RUN: usize = 3;

fn collapse_runs(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut prev = None;
    let mut run = 0;
    for c in s.chars() {
        if Some(c) == prev {
            run += 1;
        } else {
            prev = Some(c);
            run = 1;
        }
        if run <= MAX_RUN {
            out.push(c);
        }
    }
    out
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

fn is_url(chunk: &str) -> bool {
    chunk.starts_with("http://") || chunk.starts_with("https://") || chunk.starts_with("www.")
}

pub fn tokenize(text: &str) -> Vec<String> {
    let normalized = collapse_runs(&text.to_lowercase());
    let mut tokens = Vec::new();
    for chunk in normalized.split_whitespace() {
        if is_url(chunk) {
            tokens.push(URL_TOKEN.to_string());
            continue;
        }
        let chars: Vec<char> = chunk.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let word_end = |start: usize| {
                let mut j = start;
                while j < chars.len() {
                    if is_word_char(chars[j]) {
                        j += 1;
                    } else if chars[j] == '\''
                        && j > start
                        && j + 1 < chars.len()
                        && is_word_char(chars[j + 1])
                    {
                        j += 1;
                    } else {
                        break;
                    }
                }
                j
            };
            if (c == '@' || c == '#') && i + 1 < chars.len() && is_word_char(chars[i + 1]) {
                let end = word_end(i + 1);
                if c == '@' {
                    tokens.push(USER_TOKEN.to_string());
                } else {
                    tokens.push(chars[i..end].iter().collect());
                }
                i = end;
            } else if is_word_char(c) {
                let end = word_end(i);
                tokens.push(chars[i..end].iter().collect());
                i = end;
            } else {
                tokens.push(c.to_string());
                i += 1;
            }
        }
    }
    tokens
}

/// Token ↔ index dictionary with `<pad>` at 0 and `<unk>` at 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    token_to_index: HashMap<String, u32>,
    index_to_token: Vec<String>,
    min_count: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    min_count: usize,
    tokens: Vec<String>,
}

impl From<VocabularyRepr> for Vocabulary {
    fn from(r: VocabularyRepr) -> Self {
        Vocabulary::from_tokens(r.tokens.into_iter().skip(2), r.min_count)
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        VocabularyRepr {
            min_count: v.min_count,
            tokens: v.index_to_token,
        }
    }
}

impl Vocabulary {
    /// Vocabulary holding exactly `tokens` (in order) after the two reserved entries.
    pub fn from_tokens<I, S>(tokens: I, min_count: usize) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut index_to_token = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        index_to_token.extend(tokens.into_iter().map(Into::into));
        let token_to_index = index_to_token
            .iter()
            .enumerate()
            .skip(2)
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary {
            token_to_index,
            index_to_token,
            min_count,
        }
    }

    pub fn len(&self) -> usize {
        self.index_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 2
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    pub fn index(&self, token: &str) -> Option<u32> {
        self.token_to_index.get(token).copied()
    }

    pub fn index_or_unk(&self, token: &str) -> u32 {
        self.index(token).unwrap_or(UNK_INDEX)
    }

    pub fn token(&self, index: u32) -> Option<&str> {
        self.index_to_token.get(index as usize).map(String::as_str)
    }

    /// Non-reserved tokens in index order.
    pub fn content_tokens(&self) -> &[String] {
        &self.index_to_token[2..]
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "min_count {}", self.min_count)?;
        writeln!(w, "size {}", self.len())?;
        for t in &self.index_to_token {
            writeln!(w, "{t}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let mut header = |key: &str, line_no: usize| -> Result<usize> {
            let line = lines.next().transpose()?.unwrap_or_default();
            line.strip_prefix(key)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| Error::Parse {
                    line: line_no,
                    msg: format!("expected `{key}<n>` header"),
                })
        };
        let min_count = header("min_count ", 1)?;
        let size = header("size ", 2)?;
        let tokens = lines.collect::<std::io::Result<Vec<String>>>()?;
        if tokens.len() != size {
            return Err(Error::Parse {
                line: 2,
                msg: format!("header says {size} tokens, file has {}", tokens.len()),
            });
        }
        if size < 2 || tokens[0] != PAD_TOKEN || tokens[1] != UNK_TOKEN {
            return Err(Error::Parse {
                line: 3,
                msg: "vocabulary must start with <pad> and <unk>".into(),
            });
        }
        Ok(Vocabulary::from_tokens(tokens.into_iter().skip(2), min_count))
    }
}

/// Count tokens over any number of token streams.
pub fn count_tokens<'a, I>(streams: I) -> HashMap<String, usize>
where
    I: IntoIterator<Item = &'a [String]>,
{
    let mut counts: HashMap<String, usize> = HashMap::new();
    for stream in streams {
        for t in stream {
            *counts.entry(t.clone()).or_default() += 1;
        }
    }
    counts
}

/// Keep tokens with frequency ≥ `min_count`, ordered by descending
/// frequency then lexicographically.
pub fn vocab_from_counts(counts: HashMap<String, usize>, min_count: usize) -> Vocabulary {
    let mut kept: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Vocabulary::from_tokens(kept.into_iter().map(|(t, _)| t), min_count)
}

pub fn build_vocab<'a, I>(streams: I, min_count: usize) -> Vocabulary
where
    I: IntoIterator<Item = &'a [String]>,
{
    vocab_from_counts(count_tokens(streams), min_count)
}

/// Map tokens to indices, truncate or right-pad with `<pad>` to `max_len`.
/// `max_len` must cover the widest convolution window `min_len`.
pub fn encode_tokens(tokens: &[String], vocab: &Vocabulary, max_len: usize, min_len: usize) -> Result<Vec<u32>> {
    if max_len < min_len {
        return Err(Error::invalid(format!(
            "max_len {max_len} is shorter than the widest window {min_len}"
        )));
    }
    let mut out: Vec<u32> = tokens.iter().take(max_len).map(|t| vocab.index_or_unk(t)).collect();
    out.resize(max_len, PAD_INDEX);
    Ok(out)
}
