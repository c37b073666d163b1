mod common;

use nmt_probe::autograd::{Bindings, Tensor};
use nmt_probe::data::{Origin, SentencePair, SynthTask, SynthTaskSpec};
use nmt_probe::model::{EmbeddingTying, Model, ModelConfig, ParamGroup, Side};
use nmt_probe::train::{adam_step, train, train_with, FreezeMask, Grads, OptimState, TrainConfig, Validator};
use nmt_probe::{Error, Result};

fn small_task() -> SynthTask {
    SynthTask::new(SynthTaskSpec {
        content_vocab_size: 10,
        min_len: 2,
        max_len: 6,
        ..Default::default()
    })
    .unwrap()
}

fn small_model(seed: u64) -> Model {
    let v = small_task().vocab().len();
    Model::build(
        ModelConfig {
            num_layers: 1,
            d_model: 16,
            num_heads: 2,
            d_ff: 32,
            src_vocab_size: v,
            tgt_vocab_size: v,
            dropout_rate: 0.0,
            max_positions: 16,
            embedding_tying: EmbeddingTying::Untied,
        },
        seed,
    )
    .unwrap()
}

fn corpus(n: usize, stream: u64) -> Vec<SentencePair> {
    small_task().parallel(n, Origin::SrcOriginal, stream).unwrap()
}

fn quick(steps: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: 3e-3,
        warmup_steps: 20,
        total_steps: steps,
        batch_tokens: 128,
        dropout_rate: 0.0,
        validation_interval: 10,
        ..Default::default()
    }
}

#[test]
fn adam_matches_scalar_oracle() {
    let cfg = TrainConfig {
        beta1: 0.9,
        beta2: 0.98,
        adam_eps: 1e-9,
        ..Default::default()
    };
    let grads = [0.5, -1.0, 0.25, 2.0, -0.75, 0.1, 0.0, 1.5, -2.5, 0.3];
    let mut params: Bindings = [("w".to_string(), Tensor::scalar(1.0))].into();
    let mut state = OptimState::default();
    let (mut w, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
    for (t, &g) in grads.iter().enumerate() {
        let t = t as i32 + 1;
        let lr = 0.01 / f64::from(t);
        m = 0.9 * m + 0.1 * g;
        v = 0.98 * v + 0.02 * g * g;
        let mhat = m / (1.0 - 0.9f64.powi(t));
        let vhat = v / (1.0 - 0.98f64.powi(t));
        w -= lr * mhat / (vhat.sqrt() + 1e-9);
        let gr: Grads = [("w".to_string(), vec![g])].into();
        adam_step(&mut params, &gr, &mut state, &cfg, lr).unwrap();
        assert!((params["w"].data()[0] - w).abs() < 1e-12, "step {t}");
    }
    assert_eq!(state.t, 10);
}

#[test]
fn freeze_masks_hold_for_100_steps() {
    let data = corpus(60, 0);
    let valid = corpus(10, 1);
    for (enc, dec) in [(false, true), (true, false), (false, false)] {
        let mask = FreezeMask::from_sides(enc, dec);
        let start = small_model(3);
        let out = train(start.clone(), &data, &valid, &quick(100), &mask).unwrap();
        assert_eq!(out.steps, 100);
        let end = out.log.rows.last().unwrap();
        let frozen: Vec<ParamGroup> = mask.frozen().iter().copied().collect();
        assert!(common::groups_bit_equal(&start, &out.best, &frozen), "{mask}");
        assert_eq!(end.frozen_digest, start.digest(&frozen));
        let updated: Vec<ParamGroup> = ParamGroup::ALL.into_iter().filter(|g| !mask.is_frozen(*g)).collect();
        if !updated.is_empty() {
            assert!(!common::groups_bit_equal(&start, &out.best, &updated), "{mask}");
        }
        assert_eq!(mask.side_updated(Side::Encoder), enc);
        assert_eq!(mask.side_updated(Side::Decoder), dec);
    }
}

#[test]
fn loss_halves_within_200_steps() {
    let data = corpus(200, 0);
    let valid = corpus(20, 1);
    let out = train(small_model(1), &data, &valid, &quick(200), &FreezeMask::none()).unwrap();
    let first = out.log.rows.first().unwrap().train_loss;
    let last = out.log.rows.last().unwrap().train_loss;
    assert!(last < 0.5 * first, "loss {first} -> {last}");
}

struct Rigged {
    schedule: Vec<f64>,
    calls: usize,
}

impl Validator for Rigged {
    fn perplexity(&mut self, _model: &Model, _step: u64) -> Result<f64> {
        let p = self.schedule[self.calls.min(self.schedule.len() - 1)];
        self.calls += 1;
        Ok(p)
    }
}

#[test]
fn selection_returns_argmin_checkpoint() {
    let data = corpus(40, 0);
    let mut v = Rigged {
        schedule: vec![9.0, 3.0, 7.0, 8.0],
        calls: 0,
    };
    let out = train_with(small_model(2), &data, &mut v, &quick(40), &FreezeMask::none()).unwrap();
    assert_eq!(out.best_step, 20);
    assert_eq!(out.best_ppl, 3.0);
    let mut v = Rigged {
        schedule: vec![9.0, f64::NAN],
        calls: 0,
    };
    let err = train_with(small_model(2), &data, &mut v, &quick(40), &FreezeMask::none()).unwrap_err();
    assert!(matches!(err, Error::NonFinitePerplexity { step: 20 }), "{err}");
}

#[test]
fn training_is_deterministic() {
    let data = corpus(50, 0);
    let valid = corpus(10, 1);
    let cfg = TrainConfig {
        dropout_rate: 0.2,
        ..quick(30)
    };
    let a = train(small_model(4), &data, &valid, &cfg, &FreezeMask::none()).unwrap();
    let b = train(small_model(4), &data, &valid, &cfg, &FreezeMask::none()).unwrap();
    assert_eq!(a.best.full_digest(), b.best.full_digest());
    assert_eq!(a.log, b.log);
}
