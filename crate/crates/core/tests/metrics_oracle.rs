mod common;

use std::collections::HashMap;

use nmt_probe::data::vocab::TokenId;
use nmt_probe::metrics::{corpus_bleu, ter, ter_edits, word_fmeasure, BleuConfig, Bucket, FreqBuckets};
use rand::Rng;

#[test]
fn bleu_matches_brute_force_on_random_corpora() {
    let mut nonzero = 0;
    for seed in 0..50 {
        let mut r = common::rng(seed);
        let n = r.random_range(1..8);
        let sent = |r: &mut rand_chacha::ChaCha8Rng| -> Vec<TokenId> { (0..r.random_range(1..15)).map(|_| r.random_range(6..10)).collect() };
        let refs: Vec<Vec<TokenId>> = (0..n).map(|_| sent(&mut r)).collect();
        let hyps: Vec<Vec<TokenId>> = (0..n).map(|_| sent(&mut r)).collect();
        let fast = corpus_bleu(&hyps, &refs, &BleuConfig::default()).unwrap();
        let slow = common::brute_bleu(&hyps, &refs);
        assert!((fast - slow).abs() < 1e-9, "seed {seed}: {fast} vs {slow}");
        nonzero += usize::from(slow > 0.0);
    }
    assert!(nonzero > 10, "oracle corpora too sparse: {nonzero}");
}

#[test]
fn worked_examples() {
    let abcd: Vec<TokenId> = vec![6, 7, 8, 9];
    let abcde: Vec<TokenId> = vec![6, 7, 8, 9, 10];
    let b = corpus_bleu(std::slice::from_ref(&abcd), std::slice::from_ref(&abcde), &BleuConfig::default()).unwrap();
    assert!((b - 77.88).abs() < 0.01, "{b}");
    assert!((corpus_bleu(std::slice::from_ref(&abcde), std::slice::from_ref(&abcde), &BleuConfig::default()).unwrap() - 100.0).abs() < 1e-9);
    assert_eq!(ter(std::slice::from_ref(&abcde), std::slice::from_ref(&abcde)).unwrap(), 0.0);
    assert!((ter(&[vec![6, 7, 11, 9, 10]], &[abcde]).unwrap() - 20.0).abs() < 0.01);
    assert!((ter(&[vec![7, 6, 8, 9]], &[abcd]).unwrap() - 25.0).abs() < 0.01);
}

#[test]
fn fmeasure_hand_case() {
    let f = word_fmeasure(&[vec![6, 6, 7]], &[vec![6, 7, 7]], &HashMap::new(), &FreqBuckets::default()).unwrap();
    assert_eq!(f[&Bucket::All].f1, 2.0 / 3.0);
    assert_eq!(f[&Bucket::Low].f1, 2.0 / 3.0);
}

#[test]
fn ter_never_exceeds_plain_edit_distance() {
    for seed in 0..200 {
        let mut r = common::rng(1000 + seed);
        let h: Vec<TokenId> = (0..r.random_range(0..12)).map(|_| r.random_range(6..10)).collect();
        let rf: Vec<TokenId> = (0..r.random_range(1..12)).map(|_| r.random_range(6..10)).collect();
        let e = ter_edits(&h, &rf);
        assert!(e <= nmt_probe::metrics::edit_distance(&h, &rf));
        assert_eq!(e == 0, h == rf);
    }
}

#[test]
fn buckets_partition_counts() {
    for seed in 0..20 {
        let mut r = common::rng(2000 + seed);
        let sent = |r: &mut rand_chacha::ChaCha8Rng| -> Vec<TokenId> { (0..r.random_range(1..10)).map(|_| r.random_range(6..20)).collect() };
        let hyps: Vec<Vec<TokenId>> = (0..5).map(|_| sent(&mut r)).collect();
        let refs: Vec<Vec<TokenId>> = (0..5).map(|_| sent(&mut r)).collect();
        let freqs: HashMap<TokenId, u64> = (6..20).map(|w| (w, r.random_range(0..100))).collect();
        let f = word_fmeasure(&hyps, &refs, &freqs, &FreqBuckets::default()).unwrap();
        let (a, l, h) = (f[&Bucket::All], f[&Bucket::Low], f[&Bucket::High]);
        assert_eq!(a.matches, l.matches + h.matches);
        assert_eq!(a.hyp_count, l.hyp_count + h.hyp_count);
        assert_eq!(a.ref_count, l.ref_count + h.ref_count);
    }
}
