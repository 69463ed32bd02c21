//! Corpus ingestion, vocabulary, and the seq2seq / language-model encodings.
//!
//! Corpus files are UTF-8 with one conversation per line. Turns are separated
//! by a TAB, tokens within a turn by spaces, and speakers alternate starting
//! with the first turn.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
/// Utterance separator, also used as the begin-of-sequence input.
pub const SEP: u32 = 2;
pub const EOS: u32 = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<unk>", "</s>", "<eos>"];

pub const DEFAULT_VOCAB_CAP: usize = 50_000;
pub const HISTORY_CAP: usize = 170;
pub const RESPONSE_CAP: usize = 30;
pub const LM_CAP: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Speaker {
    A,
    B,
}

impl Speaker {
    pub fn of_turn(index: usize) -> Self {
        if index.is_multiple_of(2) {
            Speaker::A
        } else {
            Speaker::B
        }
    }

    pub fn other(self) -> Self {
        match self {
            Speaker::A => Speaker::B,
            Speaker::B => Speaker::A,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Conversation {
    pub turns: Vec<Vec<String>>,
}

impl Conversation {
    pub fn new(turns: Vec<Vec<String>>) -> Self {
        Conversation { turns }
    }

    pub fn from_text(turns: &[&str]) -> Self {
        Conversation {
            turns: turns
                .iter()
                .map(|t| t.split_whitespace().map(str::to_string).collect())
                .collect(),
        }
    }

    pub fn speaker(&self, turn: usize) -> Speaker {
        Speaker::of_turn(turn)
    }

    pub fn num_tokens(&self) -> usize {
        self.turns.iter().map(Vec::len).sum()
    }

    pub fn parse_line(line: &str, line_no: usize) -> Result<Self> {
        let mut turns = Vec::new();
        for turn in line.split('\t') {
            let toks: Vec<String> = turn.split_whitespace().map(str::to_string).collect();
            if toks.is_empty() {
                return Err(Error::Parse {
                    line: line_no,
                    msg: "empty turn".into(),
                });
            }
            turns.push(toks);
        }
        Ok(Conversation { turns })
    }
}

impl fmt::Display for Conversation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.turns.iter().enumerate() {
            if i > 0 {
                f.write_str("\t")?;
            }
            f.write_str(&t.join(" "))?;
        }
        Ok(())
    }
}

pub fn read_corpus<R: Read>(reader: R) -> Result<Vec<Conversation>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        out.push(Conversation::parse_line(line, i + 1)?);
    }
    Ok(out)
}

pub fn load_corpus(path: &Path) -> Result<Vec<Conversation>> {
    read_corpus(fs::File::open(path)?)
}

pub fn write_corpus<W: Write>(mut w: W, corpus: &[Conversation]) -> Result<()> {
    for c in corpus {
        writeln!(w, "{c}")?;
    }
    Ok(())
}

/// Token ↔ id map. Ids 0..4 are the reserved tokens, the rest are ordered by
/// descending frequency with ties broken by first occurrence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn build(corpus: &[Conversation], cap: usize) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::contract("cannot build a vocabulary from an empty corpus"));
        }
        if cap < RESERVED.len() {
            return Err(Error::config(format!(
                "vocabulary cap {cap} is smaller than the {} reserved tokens",
                RESERVED.len()
            )));
        }
        // token -> (count, first occurrence)
        let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
        let mut seen = 0usize;
        for tok in corpus.iter().flat_map(|c| c.turns.iter().flatten()) {
            if RESERVED.contains(&tok.as_str()) {
                continue;
            }
            let e = counts.entry(tok.as_str()).or_insert((0, seen));
            e.0 += 1;
            seen += 1;
        }
        let mut ranked: Vec<(&str, usize, usize)> = counts.into_iter().map(|(t, (c, f))| (t, c, f)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
        ranked.truncate(cap - RESERVED.len());
        Ok(Self::from_tokens(
            RESERVED
                .iter()
                .map(|s| s.to_string())
                .chain(ranked.into_iter().map(|(t, _, _)| t.to_string()))
                .collect(),
        ))
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(RESERVED[UNK as usize]).to_string())
            .collect()
    }

    /// Fraction of corpus tokens that map to `<unk>`.
    pub fn unk_rate(&self, corpus: &[Conversation]) -> f64 {
        let (mut unk, mut total) = (0usize, 0usize);
        for tok in corpus.iter().flat_map(|c| c.turns.iter().flatten()) {
            total += 1;
            if self.id(tok) == UNK {
                unk += 1;
            }
        }
        if total == 0 {
            0.0
        } else {
            unk as f64 / total as f64
        }
    }

    /// One token per line; the line number is the id.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        for t in &self.tokens {
            writeln!(w, "{t}")?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut tokens = Vec::new();
        for (i, line) in BufReader::new(r).lines().enumerate() {
            let line = line?;
            if line.is_empty() || line.contains(char::is_whitespace) {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("invalid vocabulary entry {line:?}"),
                });
            }
            tokens.push(line);
        }
        Self::from_list(tokens)
    }

    /// Rebuilds a vocabulary from its id-ordered token list.
    pub fn from_list(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() || tokens.iter().zip(RESERVED).any(|(a, b)| a != b) {
            return Err(Error::config("vocabulary must start with the reserved tokens"));
        }
        let v = Self::from_tokens(tokens);
        if v.index.len() != v.tokens.len() {
            return Err(Error::config("vocabulary contains duplicate tokens"));
        }
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(fs::File::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(fs::File::open(path)?)
    }
}

/// History/response split for encoder-decoder models.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Seq2SeqExample {
    /// All turns but the last joined with `</s>`, keeping the most recent
    /// [`HISTORY_CAP`] ids.
    pub history: Vec<u32>,
    /// Speaker of the first (possibly truncated) turn left in `history`.
    pub first_speaker: Speaker,
    /// Final turn plus `<eos>`, keeping the first [`RESPONSE_CAP`] ids.
    pub response: Vec<u32>,
    pub response_mask: Vec<bool>,
    pub history_dropped: usize,
    pub response_dropped: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HistoryTurn {
    pub speaker: Speaker,
    /// Token positions inside `history`.
    pub span: Range<usize>,
}

impl Seq2SeqExample {
    /// Turn view of the history: maximal runs of non-separator ids.
    pub fn turns(&self) -> Vec<HistoryTurn> {
        let mut out = Vec::new();
        let mut speaker = self.first_speaker;
        let mut start = 0;
        for i in 0..=self.history.len() {
            if i == self.history.len() || self.history[i] == SEP {
                if i > start {
                    out.push(HistoryTurn {
                        speaker,
                        span: start..i,
                    });
                }
                if i < self.history.len() {
                    speaker = speaker.other();
                }
                start = i + 1;
            }
        }
        out
    }

    pub fn loss_tokens(&self) -> usize {
        self.response_mask.iter().filter(|&&m| m).count()
    }
}

/// A conversation flattened into one token stream for language modeling.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LmExample {
    pub ids: Vec<u32>,
    pub mask: Vec<bool>,
    pub dropped: usize,
    pub segment_size: usize,
}

impl LmExample {
    pub fn segments(&self) -> Vec<Range<usize>> {
        (0..self.ids.len())
            .step_by(self.segment_size)
            .map(|s| s..(s + self.segment_size).min(self.ids.len()))
            .collect()
    }

    pub fn loss_tokens(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EncodedExample {
    Seq2Seq(Seq2SeqExample),
    Lm(LmExample),
}

impl EncodedExample {
    pub fn loss_tokens(&self) -> usize {
        match self {
            EncodedExample::Seq2Seq(e) => e.loss_tokens(),
            EncodedExample::Lm(e) => e.loss_tokens(),
        }
    }

    pub fn max_id(&self) -> u32 {
        let ids: &mut dyn Iterator<Item = &u32> = match self {
            EncodedExample::Seq2Seq(e) => &mut e.history.iter().chain(&e.response),
            EncodedExample::Lm(e) => &mut e.ids.iter(),
        };
        ids.copied().max().unwrap_or(0)
    }
}

/// Why a conversation produced no example.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Skip {
    SingleTurn,
    Empty,
}

impl fmt::Display for Skip {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Skip::SingleTurn => f.write_str("conversation has a single turn"),
            Skip::Empty => f.write_str("conversation is empty"),
        }
    }
}

pub fn encode_seq2seq(c: &Conversation, v: &Vocabulary) -> std::result::Result<Seq2SeqExample, Skip> {
    if c.turns.is_empty() {
        return Err(Skip::Empty);
    }
    if c.turns.len() < 2 {
        return Err(Skip::SingleTurn);
    }
    let last = c.turns.len() - 1;
    // Ids of the joined history, tagged with the index of the turn each
    // belongs to (separators take the following turn's index).
    let mut history = Vec::new();
    let mut owner = Vec::new();
    for (i, turn) in c.turns[..last].iter().enumerate() {
        if i > 0 {
            history.push(SEP);
            owner.push(i);
        }
        history.extend(v.encode(turn));
        owner.extend(std::iter::repeat_n(i, turn.len()));
    }
    let history_dropped = history.len().saturating_sub(HISTORY_CAP);
    let history = history.split_off(history_dropped);
    let first_turn = if history.first() == Some(&SEP) {
        owner[history_dropped] - 1
    } else {
        owner[history_dropped]
    };

    let mut response = v.encode(&c.turns[last]);
    response.push(EOS);
    let response_dropped = response.len().saturating_sub(RESPONSE_CAP);
    response.truncate(RESPONSE_CAP);
    Ok(Seq2SeqExample {
        history,
        first_speaker: Speaker::of_turn(first_turn),
        response_mask: vec![true; response.len()],
        response,
        history_dropped,
        response_dropped,
    })
}

pub fn encode_lm(c: &Conversation, v: &Vocabulary, segment_size: usize) -> std::result::Result<LmExample, Skip> {
    if c.turns.is_empty() {
        return Err(Skip::Empty);
    }
    let mut ids = Vec::with_capacity(c.num_tokens() + c.turns.len());
    for (i, turn) in c.turns.iter().enumerate() {
        if i > 0 {
            ids.push(SEP);
        }
        ids.extend(v.encode(turn));
    }
    ids.push(EOS);
    let dropped = ids.len().saturating_sub(LM_CAP);
    ids.truncate(LM_CAP);
    Ok(LmExample {
        mask: vec![true; ids.len()],
        ids,
        dropped,
        segment_size: segment_size.max(1),
    })
}
