use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::bleu::{check_lengths, corpus_bleu, BleuConfig};
use super::fmeasure::{word_fmeasure, Bucket, FreqBuckets, Prf};
use super::ter::ter;
use crate::data::vocab::TokenId;
use crate::data::{strip_bt_tag, Origin, SentencePair};
use crate::error::{Error, Result};

/// Corpus BLEU on the whole test set and on each origin subset. A subset
/// with no sentences is `None`, never 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OriginBleu {
    pub all: f64,
    pub src: Option<f64>,
    pub tgt: Option<f64>,
}

pub fn split_eval_by_origin(testset: &[SentencePair], hyps: &[Vec<TokenId>], cfg: &BleuConfig) -> Result<OriginBleu> {
    check_lengths(hyps.len(), testset.len())?;
    let hyps: Vec<Vec<TokenId>> = hyps.iter().map(|h| strip_bt_tag(h)).collect();
    let subset = |o: Option<Origin>| -> Result<Option<f64>> {
        let (h, r): (Vec<_>, Vec<_>) = testset
            .iter()
            .zip(&hyps)
            .filter(|(p, _)| o.is_none_or(|o| p.origin() == o))
            .map(|(p, h)| (h.clone(), p.tgt().to_vec()))
            .unzip();
        if h.is_empty() {
            return Ok(None);
        }
        corpus_bleu(&h, &r, cfg).map(Some)
    };
    if let Some(i) = testset.iter().position(|p| p.origin() == Origin::Synthetic) {
        return Err(Error::InvalidPair(format!("test pair {i} is synthetic")));
    }
    Ok(OriginBleu {
        all: subset(None)?.expect("non-empty test set"),
        src: subset(Some(Origin::SrcOriginal))?,
        tgt: subset(Some(Origin::TgtOriginal))?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub bleu: f64,
    /// TER ×100.
    pub ter: f64,
    pub per_origin: OriginBleu,
    pub fmeasure: BTreeMap<Bucket, Prf>,
    pub sentences: usize,
    pub hyp_tokens: usize,
    pub ref_tokens: usize,
    pub freq_threshold: u64,
    /// Where the bucketing frequencies came from.
    pub freq_source: String,
    pub provenance: String,
}

/// Full battery on one test set. Back-translation tags are removed from
/// the hypotheses before scoring.
pub fn evaluate(
    testset: &[SentencePair],
    hyps: &[Vec<TokenId>],
    train_freqs: &HashMap<TokenId, u64>,
    buckets: &FreqBuckets,
    provenance: impl Into<String>,
) -> Result<EvalReport> {
    check_lengths(hyps.len(), testset.len())?;
    let cfg = BleuConfig::default();
    let hyps: Vec<Vec<TokenId>> = hyps.iter().map(|h| strip_bt_tag(h)).collect();
    let refs: Vec<Vec<TokenId>> = testset.iter().map(|p| p.tgt().to_vec()).collect();
    Ok(EvalReport {
        bleu: corpus_bleu(&hyps, &refs, &cfg)?,
        ter: ter(&hyps, &refs)?,
        per_origin: split_eval_by_origin(testset, &hyps, &cfg)?,
        fmeasure: word_fmeasure(&hyps, &refs, train_freqs, buckets)?,
        sentences: hyps.len(),
        hyp_tokens: hyps.iter().map(Vec::len).sum(),
        ref_tokens: refs.iter().map(Vec::len).sum(),
        freq_threshold: buckets.threshold,
        freq_source: "bitext target side".into(),
        provenance: provenance.into(),
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| x.to_string())
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn parse_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// One header and one value row per table layout: BLEU/TER,
    /// All/Src/Tgt, and the All/Low/High F-measure.
    pub fn to_tsv(&self) -> String {
        let o = &self.per_origin;
        let f = |b| self.fmeasure.get(&b).map(|p: &Prf| p.f1 * 100.0);
        let mut s = String::new();
        let _ = writeln!(s, "BLEU\tTER");
        let _ = writeln!(s, "{}\t{}", self.bleu, self.ter);
        let _ = writeln!(s, "All\tSrc\tTgt");
        let _ = writeln!(s, "{}\t{}\t{}", o.all, cell(o.src), cell(o.tgt));
        let _ = writeln!(s, "F-All\tF-Low\tF-High");
        let _ = writeln!(s, "{}\t{}\t{}", cell(f(Bucket::All)), cell(f(Bucket::Low)), cell(f(Bucket::High)));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(s: &[TokenId], t: &[TokenId], o: Origin) -> SentencePair {
        SentencePair::new(s.to_vec(), t.to_vec(), o).unwrap()
    }

    #[test]
    fn absent_subset_is_none() {
        let ts = vec![pair(&[6], &[7, 8, 9, 10], Origin::SrcOriginal)];
        let r = split_eval_by_origin(&ts, &[vec![7, 8, 9, 10]], &BleuConfig::default()).unwrap();
        assert_eq!(r.src, Some(r.all));
        assert_eq!(r.tgt, None);
    }

    #[test]
    fn tag_is_stripped() {
        use crate::data::vocab::BT_TAG;
        let ts = vec![pair(&[6], &[7, 8, 9, 10], Origin::TgtOriginal)];
        let rep = evaluate(&ts, &[vec![BT_TAG, 7, 8, 9, 10]], &HashMap::new(), &FreqBuckets::default(), "t").unwrap();
        assert!((rep.bleu - 100.0).abs() < 1e-9);
        assert_eq!(rep.ter, 0.0);
        assert_eq!(EvalReport::parse_json(&rep.to_json()).unwrap(), rep);
        assert!(rep.to_tsv().contains("All\tSrc\tTgt"));
    }
}
