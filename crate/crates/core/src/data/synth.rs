//! Synthetic language pair: a seeded substitution cipher followed by a
//! pairwise swap of adjacent positions, with Zipfian sentence sampling.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::{Origin, SentencePair};
use super::vocab::{TokenId, Vocab, RESERVED};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthTaskSpec {
    pub content_vocab_size: usize,
    pub zipf_src: f64,
    pub zipf_tgt: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for SynthTaskSpec {
    fn default() -> Self {
        SynthTaskSpec {
            content_vocab_size: 200,
            zipf_src: 1.1,
            zipf_tgt: 1.3,
            min_len: 3,
            max_len: 20,
            seed: 7,
        }
    }
}

impl SynthTaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.content_vocab_size == 0 {
            return Err(Error::ExperimentConfig("content_vocab_size must be positive".into()));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::ExperimentConfig(format!(
                "invalid sentence length range {}..={}",
                self.min_len, self.max_len
            )));
        }
        if !(self.zipf_src > 0.0 && self.zipf_tgt > 0.0) {
            return Err(Error::ExperimentConfig("zipf exponents must be positive".into()));
        }
        Ok(())
    }
}

/// The instantiated language pair: cipher, samplers and the joint
/// vocabulary (`s0..` source words, then `t0..` target words).
#[derive(Clone, Debug)]
pub struct SynthTask {
    spec: SynthTaskSpec,
    forward: Vec<usize>,
    inverse: Vec<usize>,
    vocab: Vocab,
    src_dist: WeightedIndex<f64>,
    tgt_dist: WeightedIndex<f64>,
}

fn zipf_weights(n: usize, exponent: f64) -> Vec<f64> {
    (1..=n).map(|r| (r as f64).powf(-exponent)).collect()
}

impl SynthTask {
    pub fn new(spec: SynthTaskSpec) -> Result<Self> {
        spec.validate()?;
        let n = spec.content_vocab_size;
        let mut forward: Vec<usize> = (0..n).collect();
        forward.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
        let mut inverse = vec![0; n];
        for (s, &t) in forward.iter().enumerate() {
            inverse[t] = s;
        }
        let tokens = (0..n).map(|i| format!("s{i}")).chain((0..n).map(|i| format!("t{i}")));
        let vocab = Vocab::from_tokens(tokens);
        let dist = |e| WeightedIndex::new(zipf_weights(n, e)).map_err(|err| Error::ExperimentConfig(err.to_string()));
        Ok(SynthTask {
            src_dist: dist(spec.zipf_src)?,
            tgt_dist: dist(spec.zipf_tgt)?,
            spec,
            forward,
            inverse,
            vocab,
        })
    }

    pub fn spec(&self) -> &SynthTaskSpec {
        &self.spec
    }

    /// Joint vocabulary covering both languages.
    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn src_token(&self, word: usize) -> TokenId {
        (RESERVED.len() + word) as TokenId
    }

    pub fn tgt_token(&self, word: usize) -> TokenId {
        (RESERVED.len() + self.spec.content_vocab_size + word) as TokenId
    }

    fn src_word(&self, id: TokenId) -> Option<usize> {
        let i = (id as usize).checked_sub(RESERVED.len())?;
        (i < self.spec.content_vocab_size).then_some(i)
    }

    fn tgt_word(&self, id: TokenId) -> Option<usize> {
        let i = (id as usize).checked_sub(RESERVED.len() + self.spec.content_vocab_size)?;
        (i < self.spec.content_vocab_size).then_some(i)
    }

    /// Substitute every source word, then swap positions `(2i, 2i+1)`.
    pub fn translate(&self, src: &[TokenId]) -> Result<Vec<TokenId>> {
        let mut out = src
            .iter()
            .map(|&t| {
                self.src_word(t)
                    .map(|w| self.tgt_token(self.forward[w]))
                    .ok_or_else(|| Error::InvalidPair(format!("token {t} is not a source word")))
            })
            .collect::<Result<Vec<_>>>()?;
        swap_pairs(&mut out);
        Ok(out)
    }

    /// Exact inverse of [`SynthTask::translate`].
    pub fn invert(&self, tgt: &[TokenId]) -> Result<Vec<TokenId>> {
        let mut out = tgt.to_vec();
        swap_pairs(&mut out);
        out.iter()
            .map(|&t| {
                self.tgt_word(t)
                    .map(|w| self.src_token(self.inverse[w]))
                    .ok_or_else(|| Error::InvalidPair(format!("token {t} is not a target word")))
            })
            .collect()
    }

    fn sample_len<R: Rng>(&self, rng: &mut R) -> usize {
        rng.random_range(self.spec.min_len..=self.spec.max_len)
    }

    pub fn sample_src<R: Rng>(&self, rng: &mut R) -> Vec<TokenId> {
        let len = self.sample_len(rng);
        (0..len).map(|_| self.src_token(self.src_dist.sample(rng))).collect()
    }

    pub fn sample_tgt<R: Rng>(&self, rng: &mut R) -> Vec<TokenId> {
        let len = self.sample_len(rng);
        (0..len).map(|_| self.tgt_token(self.tgt_dist.sample(rng))).collect()
    }

    fn rng(&self, origin: Origin, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed ^ 0x5eed_0000_0000);
        rng.set_stream(stream.wrapping_mul(4) + origin as u64);
        rng
    }

    /// `n` pairs of the given origin from an independent random stream.
    pub fn parallel(&self, n: usize, origin: Origin, stream: u64) -> Result<Vec<SentencePair>> {
        let mut rng = self.rng(origin, stream);
        (0..n)
            .map(|_| match origin {
                Origin::SrcOriginal => {
                    let src = self.sample_src(&mut rng);
                    let tgt = self.translate(&src)?;
                    SentencePair::new(src, tgt, origin)
                }
                Origin::TgtOriginal => {
                    let tgt = self.sample_tgt(&mut rng);
                    let src = self.invert(&tgt)?;
                    SentencePair::new(src, tgt, origin)
                }
                Origin::Synthetic => Err(Error::InvalidPair("synthetic pairs come from back-translation".into())),
            })
            .collect()
    }

    /// Monolingual sentences in the source (`Origin::SrcOriginal`) or target
    /// (`Origin::TgtOriginal`) language.
    pub fn monolingual(&self, n: usize, side: Origin, stream: u64) -> Result<Vec<Vec<TokenId>>> {
        let mut rng = self.rng(side, stream ^ 0x4d4f_4e4f);
        match side {
            Origin::SrcOriginal => Ok((0..n).map(|_| self.sample_src(&mut rng)).collect()),
            Origin::TgtOriginal => Ok((0..n).map(|_| self.sample_tgt(&mut rng)).collect()),
            Origin::Synthetic => Err(Error::InvalidPair("no synthetic monolingual side".into())),
        }
    }
}

fn swap_pairs(tokens: &mut [TokenId]) {
    for chunk in tokens.chunks_exact_mut(2) {
        chunk.swap(0, 1);
    }
}

/// `n` pairs from stream 0 of the task defined by `spec`.
pub fn synth_parallel(spec: &SynthTaskSpec, n: usize, origin: Origin) -> Result<Vec<SentencePair>> {
    SynthTask::new(spec.clone())?.parallel(n, origin, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task() -> SynthTask {
        SynthTask::new(SynthTaskSpec::default()).unwrap()
    }

    #[test]
    fn single_token_has_no_swap_partner() {
        let t = task();
        let a = t.src_token(3);
        assert_eq!(t.translate(&[a]).unwrap(), vec![t.tgt_token(t.forward[3])]);
    }

    #[test]
    fn two_tokens_are_swapped() {
        let t = task();
        let (a, b) = (t.src_token(1), t.src_token(2));
        let out = t.translate(&[a, b]).unwrap();
        assert_eq!(out, vec![t.tgt_token(t.forward[2]), t.tgt_token(t.forward[1])]);
    }

    #[test]
    fn cipher_is_a_bijection() {
        let t = task();
        let mut seen = t.forward.clone();
        seen.sort();
        assert_eq!(seen, (0..200).collect::<Vec<_>>());
    }

    #[test]
    fn deterministic_per_stream_and_origin() {
        let spec = SynthTaskSpec::default();
        let a = synth_parallel(&spec, 20, Origin::SrcOriginal).unwrap();
        let b = synth_parallel(&spec, 20, Origin::SrcOriginal).unwrap();
        assert_eq!(a, b);
        let c = synth_parallel(&spec, 20, Origin::TgtOriginal).unwrap();
        assert_ne!(a, c);
        for p in &c {
            assert_eq!(p.origin(), Origin::TgtOriginal);
            assert_eq!(task().translate(p.src()).unwrap(), p.tgt());
        }
    }

    #[test]
    fn rejects_foreign_tokens() {
        let t = task();
        assert!(t.translate(&[t.tgt_token(0)]).is_err());
        assert!(t.invert(&[t.src_token(0)]).is_err());
    }
}
