use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::vocab::{TokenId, MASK};
use crate::error::{Error, Result};

/// Span-infilling corruption for denoising pre-training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub mask_ratio: f64,
    pub poisson_lambda: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            mask_ratio: 0.35,
            poisson_lambda: 3.5,
            seed: 11,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mask_ratio) {
            return Err(Error::ExperimentConfig(format!("mask_ratio {} outside [0,1]", self.mask_ratio)));
        }
        if self.poisson_lambda.is_nan() || self.poisson_lambda <= 0.0 {
            return Err(Error::ExperimentConfig("poisson_lambda must be positive".into()));
        }
        Ok(())
    }
}

/// Masks spans totalling `mask_ratio` of the tokens in expectation and
/// collapses every maximal masked run into a single MASK token.
///
/// The masked count is `floor(ratio * len + u)` with `u ~ U[0,1)`, which is
/// unbiased for every sentence length. Span lengths are Poisson(λ) clamped
/// to at least one token; each span starts at a uniformly chosen unmasked
/// position and the last span is truncated to hit the count exactly.
///
/// Returns `(noised, target)` where `target` is the untouched input.
pub fn apply_denoise_noise<R: Rng>(
    sentence: &[TokenId],
    cfg: &NoiseConfig,
    rng: &mut R,
) -> Result<(Vec<TokenId>, Vec<TokenId>)> {
    if sentence.is_empty() {
        return Err(Error::InvalidPair("cannot noise an empty sentence".into()));
    }
    cfg.validate()?;
    let len = sentence.len();
    let u: f64 = rng.random();
    let goal = ((cfg.mask_ratio * len as f64 + u).floor() as usize).min(len);
    let mut masked = vec![false; len];
    let spans = Poisson::new(cfg.poisson_lambda).map_err(|e| Error::ExperimentConfig(e.to_string()))?;
    let mut count = 0;
    while count < goal {
        let free: Vec<usize> = (0..len).filter(|&i| !masked[i]).collect();
        let start = free[rng.random_range(0..free.len())];
        let span = (spans.sample(rng) as usize).max(1);
        let mut i = start;
        while i < len && i < start + span && count < goal {
            if !masked[i] {
                masked[i] = true;
                count += 1;
            }
            i += 1;
        }
    }
    let mut noised = Vec::with_capacity(len);
    for (i, &tok) in sentence.iter().enumerate() {
        if !masked[i] {
            noised.push(tok);
        } else if i == 0 || !masked[i - 1] {
            noised.push(MASK);
        }
    }
    Ok((noised, sentence.to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(ratio: f64) -> NoiseConfig {
        NoiseConfig {
            mask_ratio: ratio,
            ..NoiseConfig::default()
        }
    }

    #[test]
    fn zero_ratio_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s: Vec<TokenId> = (10..25).collect();
        let (n, t) = apply_denoise_noise(&s, &cfg(0.0), &mut rng).unwrap();
        assert_eq!(n, s);
        assert_eq!(t, s);
    }

    #[test]
    fn full_ratio_collapses_to_one_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s: Vec<TokenId> = (10..25).collect();
        let (n, t) = apply_denoise_noise(&s, &cfg(1.0), &mut rng).unwrap();
        assert_eq!(n, vec![MASK]);
        assert_eq!(t, s);
    }

    #[test]
    fn empty_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(apply_denoise_noise(&[], &cfg(0.3), &mut rng).is_err());
    }
}
