mod common;

use nmt_probe::data::vocab::{TokenId, BT_TAG, EOS, PAD};
use nmt_probe::decode::{beam_search, beam_search_with, BeamConfig, StepScorer};
use nmt_probe::error::Result;
use rand::Rng;

#[test]
fn beam_never_scores_below_greedy() {
    for seed in 0..50 {
        let m = common::tiny_model(12, seed);
        let mut r = common::rng(seed);
        let src: Vec<TokenId> = (0..r.random_range(1..6)).map(|_| r.random_range(6..12)).collect();
        let cap = BeamConfig {
            max_len: Some(10),
            ..Default::default()
        };
        let greedy = beam_search(&m, &src, &BeamConfig { beam_size: 1, ..cap.clone() }).unwrap();
        let beam = beam_search(&m, &src, &BeamConfig { beam_size: 4, ..cap }).unwrap();
        if !greedy.truncated {
            assert!(!beam.truncated, "seed {seed}");
            assert!(beam.score >= greedy.score - 1e-12, "seed {seed}: {} < {}", beam.score, greedy.score);
        }
    }
}

/// Puts almost all mass on the back-translation tag and on PAD.
struct TagLover;

impl StepScorer for TagLover {
    fn log_probs(&self, prefixes: &[Vec<TokenId>]) -> Result<Vec<Vec<f64>>> {
        Ok(prefixes
            .iter()
            .map(|p| {
                let mut v = vec![-20.0; 10];
                v[BT_TAG as usize] = -1e-6;
                v[PAD as usize] = -1e-3;
                if p.len() > 3 {
                    v[EOS as usize] = -1.0;
                }
                v
            })
            .collect())
    }
}

#[test]
fn banned_tokens_never_emitted() {
    for beam_size in [1, 3] {
        let h = beam_search_with(&TagLover, 4, &BeamConfig { beam_size, ..Default::default() }).unwrap();
        assert!(!h.tokens.contains(&BT_TAG) && !h.tokens.contains(&PAD), "{h:?}");
        assert_eq!(h.tokens.last(), Some(&EOS));
    }
}
