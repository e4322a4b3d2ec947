//! Tokenization, placeholder normalization, vocabularies and exact Jaccard
//! similarity over token sets.
//!
//! Everything here is a pure function over immutable inputs. A [`Sentence`]
//! keeps its token order for the neural model and a sorted, deduplicated
//! token set for the similarity routines.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_TOKEN: &str = "<num>";
pub const ENT_TOKEN: &str = "<ent>";

const PUNCT: &[char] = &['.', ',', '!', '?', ';', ':', '\'', '"', '(', ')'];

/// An ordered, non-empty token sequence with its cached token set.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Sentence {
    tokens: Vec<String>,
    token_set: Vec<String>,
}

impl Sentence {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::EmptySentence);
        }
        let mut token_set = tokens.clone();
        token_set.sort_unstable();
        token_set.dedup();
        Ok(Sentence { tokens, token_set })
    }

    /// Splits pre-tokenized text on whitespace.
    pub fn from_tokenized(line: &str) -> Result<Self> {
        Self::new(line.split_whitespace().map(str::to_owned).collect())
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Sorted, deduplicated tokens.
    pub fn token_set(&self) -> &[String] {
        &self.token_set
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_set.binary_search_by(|t| t.as_str().cmp(token)).is_ok()
    }

    pub fn same_set(&self, other: &Sentence) -> bool {
        self.token_set == other.token_set
    }

    pub fn join(&self) -> String {
        self.tokens.join(" ")
    }
}

impl TryFrom<Vec<String>> for Sentence {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Sentence::new(tokens)
    }
}

impl From<Sentence> for Vec<String> {
    fn from(s: Sentence) -> Self {
        s.tokens
    }
}

impl fmt::Debug for Sentence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Sentence({:?})", self.join())
    }
}

impl fmt::Display for Sentence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.join())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NormalizeOptions {
    pub lowercase: bool,
    /// Replace digit runs with `<num>` and capitalized multi-word runs with `<ent>`.
    pub placeholders: bool,
}

impl Default for NormalizeOptions {
    fn default() -> Self {
        NormalizeOptions { lowercase: true, placeholders: true }
    }
}

#[derive(Debug)]
enum Piece {
    Word(String),
    Punct(char),
    Number,
}

fn split_word(word: &str, placeholders: bool, out: &mut Vec<Piece>) {
    let mut current = String::new();
    let mut chars = word.chars().peekable();
    while let Some(c) = chars.next() {
        if PUNCT.contains(&c) {
            if !current.is_empty() {
                out.push(Piece::Word(std::mem::take(&mut current)));
            }
            out.push(Piece::Punct(c));
        } else if placeholders && c.is_ascii_digit() {
            if !current.is_empty() {
                out.push(Piece::Word(std::mem::take(&mut current)));
            }
            while chars.peek().is_some_and(|d| d.is_ascii_digit()) {
                chars.next();
            }
            out.push(Piece::Number);
        } else {
            current.push(c);
        }
    }
    if !current.is_empty() {
        out.push(Piece::Word(current));
    }
}

fn is_capitalized(word: &str) -> bool {
    word.chars().next().is_some_and(char::is_uppercase)
}

/// Tokenizes one raw sentence.
///
/// Punctuation from `.,!?;:'"()` is detached into single-character tokens.
/// With placeholders on, digit runs become `<num>` and runs of two or more
/// capitalized words become a single `<ent>`.
pub fn normalize_with(raw: &str, opts: NormalizeOptions) -> Result<Sentence> {
    let mut pieces = Vec::new();
    for word in raw.split_whitespace() {
        split_word(word, opts.placeholders, &mut pieces);
    }

    let mut tokens = Vec::with_capacity(pieces.len());
    let mut i = 0;
    while i < pieces.len() {
        if opts.placeholders {
            let run = pieces[i..]
                .iter()
                .take_while(|p| matches!(p, Piece::Word(w) if is_capitalized(w)))
                .count();
            if run >= 2 {
                tokens.push(ENT_TOKEN.to_owned());
                i += run;
                continue;
            }
        }
        match &pieces[i] {
            Piece::Word(w) if opts.lowercase => tokens.push(w.to_lowercase()),
            Piece::Word(w) => tokens.push(w.clone()),
            Piece::Punct(c) => tokens.push(c.to_string()),
            Piece::Number => tokens.push(NUM_TOKEN.to_owned()),
        }
        i += 1;
    }
    Sentence::new(tokens)
}

pub fn normalize(raw: &str) -> Result<Sentence> {
    normalize_with(raw, NormalizeOptions::default())
}

fn intersection_size(a: &[String], b: &[String]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// `(|A ∩ B|, |A ∪ B|)` over the token sets.
pub fn overlap(a: &Sentence, b: &Sentence) -> (usize, usize) {
    let inter = intersection_size(&a.token_set, &b.token_set);
    (inter, a.token_set.len() + b.token_set.len() - inter)
}

/// Exact Jaccard similarity of the two token sets.
pub fn jaccard(a: &Sentence, b: &Sentence) -> f64 {
    match overlap(a, b) {
        (_, 0) => 1.0,
        (inter, union) => inter as f64 / union as f64,
    }
}

/// `|A △ B| / |A ∪ B|`, computed as one division so that it is the correctly
/// rounded complement (`1 - 0.6` would not give `0.4`).
pub fn jaccard_distance(a: &Sentence, b: &Sentence) -> f64 {
    match overlap(a, b) {
        (_, 0) => 0.0,
        (inter, union) => (union - inter) as f64 / union as f64,
    }
}

pub const UNK: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const PAD: u32 = 3;
pub const SPECIALS: [&str; 4] = ["<unk>", "<bos>", "<eos>", "<pad>"];

pub const DEFAULT_VOCAB_SIZE: usize = 30_000;

/// Token/id bijection. Ids 0..4 are reserved for the special symbols.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    index: HashMap<String, u32>,
    tokens: Vec<String>,
    counts: Vec<u64>,
}

impl Vocabulary {
    /// Builds a vocabulary from `(token, count)` pairs already in rank order.
    pub fn from_ranked(entries: impl IntoIterator<Item = (String, u64)>) -> Result<Self> {
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut counts = vec![0; SPECIALS.len()];
        let mut index: HashMap<String, u32> =
            tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        for (token, count) in entries {
            if index.contains_key(&token) {
                return Err(Error::format("vocabulary", format!("duplicate token {token:?}")));
            }
            index.insert(token.clone(), tokens.len() as u32);
            tokens.push(token);
            counts.push(count);
        }
        Ok(Vocabulary { index, tokens, counts })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() == SPECIALS.len()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens.get(id as usize).map_or(SPECIALS[UNK as usize], String::as_str)
    }

    pub fn encode(&self, sentence: &Sentence) -> Vec<u32> {
        sentence.tokens().iter().map(|t| self.id(t)).collect()
    }

    /// Retained (non-special) tokens with their corpus counts, in rank order.
    pub fn ranked(&self) -> impl Iterator<Item = (&str, u64)> {
        self.tokens[SPECIALS.len()..]
            .iter()
            .zip(&self.counts[SPECIALS.len()..])
            .map(|(t, &c)| (t.as_str(), c))
    }

    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        for (token, count) in self.ranked() {
            writeln!(w, "{token}\t{count}")?;
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(r: R) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let (token, count) = line
                .split_once('\t')
                .ok_or_else(|| Error::format("vocabulary", format!("line {}: missing tab", n + 1)))?;
            let count = count
                .trim()
                .parse()
                .map_err(|e| Error::format("vocabulary", format!("line {}: {e}", n + 1)))?;
            entries.push((token.to_owned(), count));
        }
        Self::from_ranked(entries)
    }
}

/// Keeps the `max_size` most frequent tokens; frequency ties go to the
/// lexicographically smaller token.
pub fn build_vocab<'a>(
    corpus: impl IntoIterator<Item = &'a Sentence>,
    max_size: usize,
) -> Result<Vocabulary> {
    let mut freq: HashMap<&str, u64> = HashMap::new();
    let mut seen = false;
    for sentence in corpus {
        seen = true;
        for t in sentence.tokens() {
            *freq.entry(t.as_str()).or_default() += 1;
        }
    }
    if !seen {
        return Err(Error::EmptyCorpus);
    }
    let mut ranked: Vec<(&str, u64)> =
        freq.into_iter().filter(|(t, _)| !SPECIALS.contains(t)).collect();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(max_size);
    Vocabulary::from_ranked(ranked.into_iter().map(|(t, c)| (t.to_owned(), c)))
}

/// Reads a raw corpus (one sentence per line), normalizing each line.
/// Blank lines are skipped.
pub fn read_raw_corpus<R: BufRead>(r: R, opts: NormalizeOptions) -> Result<Vec<Sentence>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(normalize_with(&line, opts)?);
    }
    Ok(out)
}

/// Reads a normalized corpus: one sentence per line, tokens space-separated.
pub fn read_normalized_corpus<R: BufRead>(r: R) -> Result<Vec<Sentence>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(Sentence::from_tokenized(&line)?);
    }
    Ok(out)
}

pub fn write_normalized_corpus<W: Write>(mut w: W, corpus: &[Sentence]) -> Result<()> {
    for s in corpus {
        writeln!(w, "{}", s.join())?;
    }
    Ok(())
}
