use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::SentencePair;
use crate::model::NmtBatch;
use crate::error::Result;

/// Padded cost of a pair: the longer side plus its EOS/BOS.
fn cost(p: &SentencePair) -> usize {
    p.src().len().max(p.tgt().len()) + 1
}

/// Groups pair indices into length-sorted batches of at most
/// `batch_tokens` padded tokens (a single over-long pair still forms its
/// own batch), then shuffles the batch order with a stream derived from
/// `(seed, epoch)`.
pub fn make_batches(pairs: &[SentencePair], batch_tokens: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by_key(|&i| (cost(&pairs[i]), pairs[i].src().len(), i));
    let mut batches = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    let mut longest = 0;
    for i in order {
        let c = cost(&pairs[i]);
        let widest = longest.max(c);
        if !current.is_empty() && widest * (current.len() + 1) > batch_tokens {
            batches.push(std::mem::take(&mut current));
            longest = 0;
        }
        longest = longest.max(c);
        current.push(i);
    }
    if !current.is_empty() {
        batches.push(current);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    batches.shuffle(&mut rng);
    batches
}

pub fn batch_of(pairs: &[SentencePair], idx: &[usize]) -> Result<NmtBatch> {
    NmtBatch::from_pairs(idx.iter().map(|&i| (pairs[i].src(), pairs[i].tgt())))
}

/// Deterministic length-sorted batches without shuffling, for evaluation.
pub fn eval_batches(pairs: &[SentencePair], batch_tokens: usize) -> Result<Vec<NmtBatch>> {
    let mut idx = make_batches(pairs, batch_tokens, 0, 0);
    idx.sort_by_key(|b| b[0]);
    idx.iter().map(|b| batch_of(pairs, b)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Origin;

    fn pairs(lens: &[usize]) -> Vec<SentencePair> {
        lens.iter()
            .map(|&n| SentencePair::new(vec![7; n], vec![8; n], Origin::SrcOriginal).unwrap())
            .collect()
    }

    #[test]
    fn every_pair_once_within_budget() {
        let ps = pairs(&[3, 9, 4, 4, 12, 2, 7, 7, 7, 30]);
        let bs = make_batches(&ps, 24, 1, 0);
        let mut all: Vec<usize> = bs.iter().flatten().copied().collect();
        all.sort();
        assert_eq!(all, (0..ps.len()).collect::<Vec<_>>());
        for b in &bs {
            let w = b.iter().map(|&i| cost(&ps[i])).max().unwrap();
            assert!(b.len() == 1 || w * b.len() <= 24);
        }
    }

    #[test]
    fn order_depends_on_epoch_only_through_seed() {
        let ps = pairs(&[1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12]);
        assert_eq!(make_batches(&ps, 8, 3, 1), make_batches(&ps, 8, 3, 1));
        let a: Vec<_> = (0..6).map(|e| make_batches(&ps, 8, 3, e)).collect();
        assert!(a.windows(2).any(|w| w[0] != w[1]));
    }
}
