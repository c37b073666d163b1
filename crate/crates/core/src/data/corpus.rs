use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::vocab::{TokenId, Vocab};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Origin {
    SrcOriginal,
    TgtOriginal,
    Synthetic,
}

impl Origin {
    pub fn label(self) -> &'static str {
        match self {
            Origin::SrcOriginal => "src-original",
            Origin::TgtOriginal => "tgt-original",
            Origin::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Origin {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "src-original" => Ok(Origin::SrcOriginal),
            "tgt-original" => Ok(Origin::TgtOriginal),
            "synthetic" => Ok(Origin::Synthetic),
            other => Err(format!("unknown origin label `{other}`")),
        }
    }
}

/// Aligned source/target token sequences with an immutable origin label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SentencePair {
    src: Vec<TokenId>,
    tgt: Vec<TokenId>,
    origin: Origin,
}

impl SentencePair {
    pub fn new(src: Vec<TokenId>, tgt: Vec<TokenId>, origin: Origin) -> Result<Self> {
        if src.is_empty() || tgt.is_empty() {
            return Err(Error::InvalidPair("both sides must be non-empty".into()));
        }
        Ok(SentencePair { src, tgt, origin })
    }

    pub fn src(&self) -> &[TokenId] {
        &self.src
    }

    pub fn tgt(&self) -> &[TokenId] {
        &self.tgt
    }

    pub fn origin(&self) -> Origin {
        self.origin
    }

    /// Replaces the source side; the origin label is kept.
    pub fn with_src(&self, src: Vec<TokenId>) -> Result<Self> {
        SentencePair::new(src, self.tgt.clone(), self.origin)
    }

    /// The same pair translated in the opposite direction.
    pub fn reversed(&self) -> Self {
        SentencePair {
            src: self.tgt.clone(),
            tgt: self.src.clone(),
            origin: self.origin,
        }
    }
}

/// Paths of the three aligned files of a parallel corpus.
#[derive(Clone, Debug)]
pub struct CorpusFiles {
    pub src: PathBuf,
    pub tgt: PathBuf,
    pub origin: PathBuf,
}

impl CorpusFiles {
    /// `<prefix>.src`, `<prefix>.tgt`, `<prefix>.origin`.
    pub fn with_prefix(prefix: &Path) -> Self {
        let ext = |e: &str| {
            let mut p = prefix.as_os_str().to_owned();
            p.push(".");
            p.push(e);
            PathBuf::from(p)
        };
        CorpusFiles {
            src: ext("src"),
            tgt: ext("tgt"),
            origin: ext("origin"),
        }
    }

    pub fn exists(&self) -> bool {
        self.src.exists() && self.tgt.exists() && self.origin.exists()
    }
}

pub fn lines_text<'a, I: IntoIterator<Item = &'a [TokenId]>>(vocab: &Vocab, sentences: I) -> String {
    let mut out = String::new();
    for s in sentences {
        out.push_str(&vocab.decode(s));
        out.push('\n');
    }
    out
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
        }
    }
    fs::write(path, contents).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

pub fn write_corpus(files: &CorpusFiles, vocab: &Vocab, pairs: &[SentencePair]) -> Result<()> {
    write_file(&files.src, &lines_text(vocab, pairs.iter().map(|p| p.src())))?;
    write_file(&files.tgt, &lines_text(vocab, pairs.iter().map(|p| p.tgt())))?;
    let origins: String = pairs.iter().map(|p| format!("{}\n", p.origin())).collect();
    write_file(&files.origin, &origins)
}

/// Splits LF-terminated text into lines; a trailing newline does not
/// produce an extra empty line.
pub fn split_lines(text: &str) -> Vec<&str> {
    let mut lines: Vec<&str> = text.split('\n').collect();
    if lines.last() == Some(&"") {
        lines.pop();
    }
    lines
}

/// Parses three aligned documents into sentence pairs.
pub fn parse_corpus(src: &str, tgt: &str, origin: &str, vocab: &Vocab) -> Result<Vec<SentencePair>> {
    let (s, t, o) = (split_lines(src), split_lines(tgt), split_lines(origin));
    if s.len() != t.len() {
        return Err(Error::LengthMismatch {
            what: "source/target lines",
            left: s.len(),
            right: t.len(),
        });
    }
    if s.len() != o.len() {
        return Err(Error::LengthMismatch {
            what: "source/origin lines",
            left: s.len(),
            right: o.len(),
        });
    }
    let mut pairs = Vec::with_capacity(s.len());
    for (i, ((sl, tl), ol)) in s.iter().zip(&t).zip(&o).enumerate() {
        let origin: Origin = ol.trim().parse().map_err(|message| Error::Parse {
            what: "origin file",
            line: i + 1,
            message,
        })?;
        let pair = SentencePair::new(vocab.encode(sl), vocab.encode(tl), origin).map_err(|e| Error::Parse {
            what: "parallel corpus",
            line: i + 1,
            message: e.to_string(),
        })?;
        pairs.push(pair);
    }
    Ok(pairs)
}

pub fn read_corpus(files: &CorpusFiles, vocab: &Vocab) -> Result<Vec<SentencePair>> {
    parse_corpus(&read_file(&files.src)?, &read_file(&files.tgt)?, &read_file(&files.origin)?, vocab)
}

/// Reads a monolingual file, one sentence per line.
pub fn read_sentences(path: &Path, vocab: &Vocab) -> Result<Vec<Vec<TokenId>>> {
    Ok(split_lines(&read_file(path)?).into_iter().map(|l| vocab.encode(l)).collect())
}

/// Content digest of a corpus (token ids and origins), hex encoded.
pub fn corpus_digest(pairs: &[SentencePair]) -> String {
    let mut h = Sha256::new();
    for p in pairs {
        for side in [p.src(), p.tgt()] {
            h.update((side.len() as u64).to_le_bytes());
            for t in side {
                h.update(t.to_le_bytes());
            }
        }
        h.update([p.origin() as u8]);
    }
    hex::encode(h.finalize())
}

pub fn sentences_digest(sentences: &[Vec<TokenId>]) -> String {
    let mut h = Sha256::new();
    for s in sentences {
        h.update((s.len() as u64).to_le_bytes());
        for t in s {
            h.update(t.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}
