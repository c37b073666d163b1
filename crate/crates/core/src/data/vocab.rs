use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const UNK: TokenId = 3;
pub const MASK: TokenId = 4;
pub const BT_TAG: TokenId = 5;

/// Surface forms of the reserved ids, in id order.
pub const RESERVED: [&str; 6] = ["<pad>", "<s>", "</s>", "<unk>", "<mask>", "<bt>"];

pub fn is_reserved(id: TokenId) -> bool {
    (id as usize) < RESERVED.len()
}

/// Token ↔ id bijection with fixed reserved ids and the frequency table of
/// the corpus it was built from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    counts: Vec<u64>,
}

impl Vocab {
    /// Builds a vocabulary from whitespace-tokenized sentences. Tokens with
    /// `count >= min_freq` get ids in order of descending count, ties broken
    /// lexicographically.
    pub fn build<S: AsRef<str>>(corpus: &[S], min_freq: u64) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus("vocabulary source".into()));
        }
        let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
        for line in corpus {
            for tok in line.as_ref().split_whitespace() {
                if RESERVED.contains(&tok) {
                    continue;
                }
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut entries: Vec<(&str, u64)> = counts.into_iter().filter(|&(_, c)| c >= min_freq).collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        if entries.is_empty() {
            log::warn!("vocabulary has no tokens beyond the reserved set (min_freq={min_freq})");
        }
        Ok(Self::from_entries(entries.into_iter().map(|(t, c)| (t.to_string(), c))))
    }

    /// Vocabulary over a fixed token list, all counts zero.
    pub fn from_tokens<I: IntoIterator<Item = String>>(tokens: I) -> Self {
        Self::from_entries(tokens.into_iter().map(|t| (t, 0)))
    }

    fn from_entries<I: IntoIterator<Item = (String, u64)>>(entries: I) -> Self {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut counts = vec![0u64; RESERVED.len()];
        for (t, c) in entries {
            tokens.push(t);
            counts.push(c);
        }
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as TokenId)).collect();
        Vocab { tokens, index, counts }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn count(&self, id: TokenId) -> u64 {
        self.counts.get(id as usize).copied().unwrap_or(0)
    }

    pub fn count_of(&self, token: &str) -> u64 {
        self.id(token).map(|i| self.count(i)).unwrap_or(0)
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(String::as_str)
    }

    /// Maps raw text to ids. Reserved surface forms in raw text and unknown
    /// tokens both become UNK.
    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        text.split_whitespace()
            .map(|t| match self.index.get(t) {
                Some(&id) if !is_reserved(id) => id,
                _ => UNK,
            })
            .collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(RESERVED[UNK as usize]))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Frequency table for words of the building corpus.
    pub fn frequencies(&self) -> HashMap<String, u64> {
        self.tokens
            .iter()
            .zip(&self.counts)
            .skip(RESERVED.len())
            .map(|(t, &c)| (t.clone(), c))
            .collect()
    }

    /// One `token<TAB>id<TAB>count` row per entry, reserved tokens first.
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for (i, (t, c)) in self.tokens.iter().zip(&self.counts).enumerate() {
            let _ = writeln!(out, "{t}\t{i}\t{c}");
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            what: "vocab file",
            line,
            message,
        };
        let mut tokens = Vec::new();
        let mut counts = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let lineno = n + 1;
            let mut parts = line.split('\t');
            let (Some(tok), Some(id), Some(count), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
                return Err(err(lineno, "expected token<TAB>id<TAB>count".into()));
            };
            let id: usize = id.parse().map_err(|e| err(lineno, format!("bad id: {e}")))?;
            let count: u64 = count.parse().map_err(|e| err(lineno, format!("bad count: {e}")))?;
            if id != tokens.len() {
                return Err(err(lineno, format!("ids must be dense and ordered; expected {}", tokens.len())));
            }
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(err(lineno, "token must be non-empty without whitespace".into()));
            }
            if id < RESERVED.len() && tok != RESERVED[id] {
                return Err(err(lineno, format!("reserved id {id} must be {}", RESERVED[id])));
            }
            if id >= RESERVED.len() && RESERVED.contains(&tok) {
                return Err(err(lineno, format!("reserved token {tok} at non-reserved id")));
            }
            tokens.push(tok.to_string());
            counts.push(count);
        }
        if tokens.len() < RESERVED.len() {
            return Err(err(tokens.len() + 1, "missing reserved tokens".into()));
        }
        let index: HashMap<String, TokenId> = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as TokenId)).collect();
        if index.len() != tokens.len() {
            return Err(err(0, "duplicate token".into()));
        }
        Ok(Vocab { tokens, index, counts })
    }
}
