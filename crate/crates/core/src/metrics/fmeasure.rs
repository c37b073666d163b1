use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::data::vocab::TokenId;
use crate::error::Result;

use super::bleu::check_lengths;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bucket {
    All,
    Low,
    High,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FreqBuckets {
    /// Words with training count below this are Low, the rest High.
    pub threshold: u64,
}

impl Default for FreqBuckets {
    fn default() -> Self {
        FreqBuckets { threshold: 50 }
    }
}

impl FreqBuckets {
    pub fn bucket(&self, count: u64) -> Bucket {
        if count < self.threshold {
            Bucket::Low
        } else {
            Bucket::High
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub matches: u64,
    pub hyp_count: u64,
    pub ref_count: u64,
}

impl Prf {
    fn from_counts(matches: u64, hyp_count: u64, ref_count: u64) -> Self {
        let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(matches, hyp_count);
        let recall = ratio(matches, ref_count);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Prf {
            precision,
            recall,
            f1,
            matches,
            hyp_count,
            ref_count,
        }
    }
}

/// Target-side word counts of a corpus, the frequency basis for bucketing.
pub fn target_frequencies<'a>(targets: impl IntoIterator<Item = &'a [TokenId]>) -> HashMap<TokenId, u64> {
    let mut m = HashMap::new();
    for t in targets {
        for &w in t {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Aggregate-count precision/recall/F1 per frequency bucket. Word
/// frequencies come from `train_freqs`; unseen words count as 0 (Low).
pub fn word_fmeasure(
    hyps: &[Vec<TokenId>],
    refs: &[Vec<TokenId>],
    train_freqs: &HashMap<TokenId, u64>,
    buckets: &FreqBuckets,
) -> Result<BTreeMap<Bucket, Prf>> {
    check_lengths(hyps.len(), refs.len())?;
    // [matches, hyp, ref] per bucket
    let mut acc: BTreeMap<Bucket, [u64; 3]> = [Bucket::All, Bucket::Low, Bucket::High].into_iter().map(|b| (b, [0; 3])).collect();
    for (h, r) in hyps.iter().zip(refs) {
        let mut counts: HashMap<TokenId, (u64, u64)> = HashMap::new();
        for &w in h {
            counts.entry(w).or_default().0 += 1;
        }
        for &w in r {
            counts.entry(w).or_default().1 += 1;
        }
        for (w, (ch, cr)) in counts {
            let b = buckets.bucket(train_freqs.get(&w).copied().unwrap_or(0));
            for key in [Bucket::All, b] {
                let a = acc.get_mut(&key).unwrap();
                a[0] += ch.min(cr);
                a[1] += ch;
                a[2] += cr;
            }
        }
    }
    Ok(acc.into_iter().map(|(b, [m, h, r])| (b, Prf::from_counts(m, h, r))).collect())
}
