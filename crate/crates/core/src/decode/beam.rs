use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::data::vocab::{TokenId, BOS, BT_TAG, EOS, MASK, PAD};
use crate::error::{Error, Result};
use crate::model::{decode_step, encode, EncoderState, Model};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BeamConfig {
    pub beam_size: usize,
    /// Exponent α in `logprob / len^α`.
    pub length_penalty: f64,
    /// Output length cap including EOS; `None` means `2 * src_len + 8`.
    pub max_len: Option<usize>,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            beam_size: 5,
            length_penalty: 1.0,
            max_len: None,
        }
    }
}

impl BeamConfig {
    pub fn greedy() -> Self {
        BeamConfig {
            beam_size: 1,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::Config("beam_size must be at least 1".into()));
        }
        if !(self.length_penalty >= 0.0 && self.length_penalty.is_finite()) {
            return Err(Error::Config("length_penalty must be non-negative".into()));
        }
        if self.max_len == Some(0) {
            return Err(Error::Config("max_len must be positive".into()));
        }
        Ok(())
    }

    pub fn max_len_for(&self, src_len: usize) -> usize {
        self.max_len.unwrap_or(2 * src_len + 8)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    /// Output tokens without BOS; ends with EOS unless truncated.
    pub tokens: Vec<TokenId>,
    pub logprob: f64,
    pub score: f64,
    pub truncated: bool,
}

impl Hypothesis {
    fn new(tokens: Vec<TokenId>, logprob: f64, alpha: f64, truncated: bool) -> Self {
        let score = logprob / (tokens.len() as f64).powf(alpha);
        Hypothesis {
            tokens,
            logprob,
            score,
            truncated,
        }
    }

    /// Tokens without the trailing EOS.
    pub fn content(&self) -> &[TokenId] {
        match self.tokens.split_last() {
            Some((&EOS, rest)) => rest,
            _ => &self.tokens,
        }
    }
}

/// Next-token log-probabilities for a batch of equal-length prefixes, each
/// starting with BOS.
pub trait StepScorer {
    fn log_probs(&self, prefixes: &[Vec<TokenId>]) -> Result<Vec<Vec<f64>>>;
}

/// Scores prefixes with a model for one encoded source sentence.
pub struct ModelScorer<'m> {
    model: &'m Model,
    state: EncoderState,
}

impl<'m> ModelScorer<'m> {
    pub fn new(model: &'m Model, src: &[TokenId]) -> Result<Self> {
        Ok(ModelScorer {
            model,
            state: encode(model, src)?,
        })
    }
}

impl StepScorer for ModelScorer<'_> {
    fn log_probs(&self, prefixes: &[Vec<TokenId>]) -> Result<Vec<Vec<f64>>> {
        decode_step(self.model, &self.state, prefixes)
    }
}

fn banned(token: TokenId, step: usize) -> bool {
    matches!(token, PAD | BOS | MASK | BT_TAG) || (token == EOS && step == 0)
}

/// Descending score, then ascending token id, then ascending beam index.
fn candidate_order(a: &(f64, usize, TokenId), b: &(f64, usize, TokenId)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.2.cmp(&b.2)).then(a.1.cmp(&b.1))
}

fn search(scorer: &dyn StepScorer, beam_size: usize, alpha: f64, max_len: usize) -> Result<Hypothesis> {
    let mut live: Vec<(Vec<TokenId>, f64)> = vec![(Vec::new(), 0.0)];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for step in 0..max_len {
        let prefixes: Vec<Vec<TokenId>> = live
            .iter()
            .map(|(t, _)| std::iter::once(BOS).chain(t.iter().copied()).collect())
            .collect();
        let scores = scorer.log_probs(&prefixes)?;
        let mut cands = Vec::new();
        for (b, lp) in scores.iter().enumerate() {
            for (v, &l) in lp.iter().enumerate() {
                let tok = v as TokenId;
                if banned(tok, step) || !l.is_finite() {
                    continue;
                }
                cands.push((live[b].1 + l, b, tok));
            }
        }
        if cands.is_empty() {
            break;
        }
        cands.sort_by(candidate_order);
        cands.truncate(2 * beam_size);
        let mut next = Vec::with_capacity(beam_size);
        for (score, b, tok) in cands {
            let mut tokens = live[b].0.clone();
            tokens.push(tok);
            if tok == EOS {
                if finished.len() < beam_size {
                    finished.push(Hypothesis::new(tokens, score, alpha, false));
                }
            } else if next.len() < beam_size {
                next.push((tokens, score));
            }
            if next.len() == beam_size && finished.len() >= beam_size {
                break;
            }
        }
        if finished.len() >= beam_size || next.is_empty() {
            live = next;
            break;
        }
        live = next;
    }
    // Stable max: equal scores keep the earlier completion.
    let best = finished
        .into_iter()
        .reduce(|best, h| if h.score > best.score { h } else { best });
    match best {
        Some(h) => Ok(h),
        None => {
            let (tokens, lp) = live
                .into_iter()
                .reduce(|a, b| if b.1 > a.1 { b } else { a })
                .filter(|(t, _)| !t.is_empty())
                .ok_or_else(|| Error::Config("decoder produced no admissible token".into()))?;
            Ok(Hypothesis::new(tokens, lp, alpha, true))
        }
    }
}

/// Beam search returning the best length-normalized completed hypothesis.
///
/// The greedy completion is always part of the final pool, so a completed
/// beam result never scores below the greedy result. If nothing completes
/// within `max_len`, the highest-probability live entry is returned with
/// `truncated` set.
pub fn beam_search_with(scorer: &dyn StepScorer, src_len: usize, cfg: &BeamConfig) -> Result<Hypothesis> {
    cfg.validate()?;
    let max_len = cfg.max_len_for(src_len);
    let alpha = cfg.length_penalty;
    let beam = search(scorer, cfg.beam_size, alpha, max_len)?;
    if cfg.beam_size == 1 {
        return Ok(beam);
    }
    let greedy = search(scorer, 1, alpha, max_len)?;
    Ok(match (beam.truncated, greedy.truncated) {
        (false, false) if greedy.score > beam.score => greedy,
        (true, false) => greedy,
        (true, true) if greedy.logprob > beam.logprob => greedy,
        _ => beam,
    })
}

/// Translates one source sentence. The output length cap is also bounded
/// by the model's position table.
pub fn beam_search(model: &Model, src: &[TokenId], cfg: &BeamConfig) -> Result<Hypothesis> {
    let scorer = ModelScorer::new(model, src)?;
    let cap = model.config().max_positions;
    let cfg = BeamConfig {
        max_len: Some(cfg.max_len_for(src.len()).min(cap)),
        ..cfg.clone()
    };
    beam_search_with(&scorer, src.len(), &cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Deterministic next-token table keyed by prefix length.
    struct Forced(Vec<TokenId>, usize);

    impl StepScorer for Forced {
        fn log_probs(&self, prefixes: &[Vec<TokenId>]) -> Result<Vec<Vec<f64>>> {
            Ok(prefixes
                .iter()
                .map(|p| {
                    let want = self.0.get(p.len() - 1).copied().unwrap_or(EOS);
                    (0..self.1)
                        .map(|v| if v as TokenId == want { 0.0 } else { f64::NEG_INFINITY })
                        .collect()
                })
                .collect())
        }
    }

    #[test]
    fn forced_sequence_is_returned() {
        let s = Forced(vec![7, 9, 8], 10);
        let h = beam_search_with(&s, 3, &BeamConfig::default()).unwrap();
        assert_eq!(h.tokens, vec![7, 9, 8, EOS]);
        assert_eq!(h.logprob, 0.0);
        assert!(!h.truncated);
    }

    #[test]
    fn truncation_is_flagged() {
        let s = Forced(vec![7; 50], 10);
        let cfg = BeamConfig {
            max_len: Some(5),
            ..Default::default()
        };
        let h = beam_search_with(&s, 3, &cfg).unwrap();
        assert!(h.truncated);
        assert_eq!(h.tokens, vec![7; 5]);
    }

    /// Uniform scorer over a small vocabulary: every token (including EOS)
    /// has equal probability, so ties resolve by token id.
    struct Uniform(usize);

    impl StepScorer for Uniform {
        fn log_probs(&self, prefixes: &[Vec<TokenId>]) -> Result<Vec<Vec<f64>>> {
            let l = -(self.0 as f64).ln();
            Ok(prefixes.iter().map(|_| vec![l; self.0]).collect())
        }
    }

    #[test]
    fn ties_break_by_token_id() {
        let h = beam_search_with(&Uniform(8), 2, &BeamConfig::greedy()).unwrap();
        // EOS is banned at the first step, UNK (3) is the lowest admissible id.
        assert_eq!(h.tokens, vec![3, EOS]);
    }

    #[test]
    fn bad_config_rejected() {
        let cfg = BeamConfig {
            beam_size: 0,
            ..Default::default()
        };
        assert!(beam_search_with(&Uniform(8), 2, &cfg).is_err());
    }
}
