use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::beam::{beam_search, BeamConfig, Hypothesis};
use crate::data::corpus::{read_file, write_file};
use crate::data::vocab::TokenId;
use crate::data::{tag_bt_source, Origin, SentencePair};
use crate::error::{Error, Result};
use crate::model::Model;

/// Decodes every sentence in parallel; output order follows input order.
pub fn translate_all(model: &Model, sources: &[Vec<TokenId>], cfg: &BeamConfig) -> Result<Vec<Hypothesis>> {
    cfg.validate()?;
    sources.par_iter().map(|s| beam_search(model, s, cfg)).collect()
}

/// Per-line record of the `.meta` sidecar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeMeta {
    pub score: f64,
    pub truncated: bool,
}

impl From<&Hypothesis> for DecodeMeta {
    fn from(h: &Hypothesis) -> Self {
        DecodeMeta {
            score: h.score,
            truncated: h.truncated,
        }
    }
}

const META_HEADER: &str = "line\tscore\ttruncated";

pub fn meta_to_string(meta: &[DecodeMeta]) -> String {
    let mut s = format!("{META_HEADER}\n");
    for (i, m) in meta.iter().enumerate() {
        let _ = writeln!(s, "{}\t{}\t{}", i + 1, m.score, u8::from(m.truncated));
    }
    s
}

pub fn parse_meta(text: &str) -> Result<Vec<DecodeMeta>> {
    let err = |line, message: String| Error::Parse {
        what: "decode meta",
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    if lines.next().map(|(_, h)| h) != Some(META_HEADER) {
        return Err(err(1, "missing header".into()));
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(err(i + 1, format!("expected 3 fields, got {}", f.len())));
        }
        if f[0].parse::<usize>().ok() != Some(out.len() + 1) {
            return Err(err(i + 1, format!("expected line number {}", out.len() + 1)));
        }
        let score: f64 = f[1].parse().map_err(|e: std::num::ParseFloatError| err(i + 1, e.to_string()))?;
        let truncated = match f[2] {
            "0" => false,
            "1" => true,
            other => return Err(err(i + 1, format!("bad truncation flag `{other}`"))),
        };
        out.push(DecodeMeta { score, truncated });
    }
    Ok(out)
}

pub fn write_meta(path: &Path, meta: &[DecodeMeta]) -> Result<()> {
    write_file(path, &meta_to_string(meta))
}

pub fn read_meta(path: &Path) -> Result<Vec<DecodeMeta>> {
    parse_meta(&read_file(path)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackTranslation {
    pub pairs: Vec<SentencePair>,
    pub meta: Vec<DecodeMeta>,
}

impl BackTranslation {
    pub fn truncated(&self) -> usize {
        self.meta.iter().filter(|m| m.truncated).count()
    }
}

/// Translates target-side monolingual sentences with a target→source
/// model. Each synthetic pair keeps the genuine sentence as its target;
/// the decoded source is tagged when `tagged` is set.
pub fn back_translate(reverse_model: &Model, mono_tgt: &[Vec<TokenId>], cfg: &BeamConfig, tagged: bool) -> Result<BackTranslation> {
    let hyps = translate_all(reverse_model, mono_tgt, cfg)?;
    let mut pairs = Vec::with_capacity(hyps.len());
    for (h, tgt) in hyps.iter().zip(mono_tgt) {
        let src = h.content().to_vec();
        let src = if tagged { tag_bt_source(&src)? } else { src };
        pairs.push(SentencePair::new(src, tgt.clone(), Origin::Synthetic)?);
    }
    Ok(BackTranslation {
        meta: hyps.iter().map(DecodeMeta::from).collect(),
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn meta_round_trip() {
        let m = vec![
            DecodeMeta {
                score: -0.25,
                truncated: false,
            },
            DecodeMeta {
                score: -3.5,
                truncated: true,
            },
        ];
        assert_eq!(parse_meta(&meta_to_string(&m)).unwrap(), m);
        assert!(parse_meta("line\tscore\ttruncated\n2\t0\t0\n").is_err());
        assert!(parse_meta("line\tscore\ttruncated\n1\t0\tyes\n").is_err());
    }
}
