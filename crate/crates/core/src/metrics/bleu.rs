use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::vocab::TokenId;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BleuSmoothing {
    None,
    /// Adds `k` to matches and totals of every order n ≥ 2.
    AddK(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BleuConfig {
    pub max_n: usize,
    pub smoothing: BleuSmoothing,
}

impl Default for BleuConfig {
    fn default() -> Self {
        BleuConfig {
            max_n: 4,
            smoothing: BleuSmoothing::None,
        }
    }
}

/// Summed clipped matches and hypothesis n-gram totals per order, plus
/// corpus lengths.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BleuStats {
    pub matches: Vec<u64>,
    pub totals: Vec<u64>,
    pub hyp_len: u64,
    pub ref_len: u64,
}

fn ngram_counts(tokens: &[TokenId], n: usize) -> HashMap<&[TokenId], u64> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

pub(crate) fn check_lengths(hyps: usize, refs: usize) -> Result<()> {
    if hyps != refs {
        return Err(Error::LengthMismatch {
            what: "hypotheses and references",
            left: hyps,
            right: refs,
        });
    }
    if hyps == 0 {
        return Err(Error::EmptyCorpus("evaluation set".into()));
    }
    Ok(())
}

pub fn bleu_stats(hyps: &[Vec<TokenId>], refs: &[Vec<TokenId>], max_n: usize) -> Result<BleuStats> {
    check_lengths(hyps.len(), refs.len())?;
    let mut s = BleuStats {
        matches: vec![0; max_n],
        totals: vec![0; max_n],
        ..Default::default()
    };
    for (h, r) in hyps.iter().zip(refs) {
        s.hyp_len += h.len() as u64;
        s.ref_len += r.len() as u64;
        for n in 1..=max_n {
            let hc = ngram_counts(h, n);
            let rc = ngram_counts(r, n);
            for (g, c) in &hc {
                s.matches[n - 1] += (*c).min(rc.get(g).copied().unwrap_or(0));
                s.totals[n - 1] += c;
            }
        }
    }
    Ok(s)
}

impl BleuStats {
    pub fn score(&self, smoothing: BleuSmoothing) -> f64 {
        if self.hyp_len == 0 {
            return 0.0;
        }
        let max_n = self.matches.len();
        let mut log_sum = 0.0;
        for n in 0..max_n {
            let (m, t) = (self.matches[n] as f64, self.totals[n] as f64);
            let (m, t) = match smoothing {
                BleuSmoothing::AddK(k) if n > 0 => (m + k, t + k),
                _ => (m, t),
            };
            if m == 0.0 || t == 0.0 {
                return 0.0;
            }
            log_sum += (m / t).ln();
        }
        let bp = (1.0 - self.ref_len as f64 / self.hyp_len as f64).min(0.0).exp();
        100.0 * bp * (log_sum / max_n as f64).exp()
    }
}

/// Corpus BLEU in [0, 100] with counts summed over all sentences.
pub fn corpus_bleu(hyps: &[Vec<TokenId>], refs: &[Vec<TokenId>], cfg: &BleuConfig) -> Result<f64> {
    if cfg.max_n == 0 {
        return Err(Error::Config("max_n must be at least 1".into()));
    }
    Ok(bleu_stats(hyps, refs, cfg.max_n)?.score(cfg.smoothing))
}
