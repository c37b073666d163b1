use std::fmt::Write as _;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::batching::{batch_of, eval_batches, make_batches};
use super::config::TrainConfig;
use super::optim::{adam_step, apply_freeze, clip_global_norm, FreezeMask, Grads, OptimState};
use crate::autograd::{Graph, Tensor};
use crate::data::vocab::TokenId;
use crate::data::SentencePair;
use crate::error::{Error, Result};
use crate::model::{batch_nll, nmt_loss_graph, Model, NmtBatch, ParamGroup};

/// Label-smoothed cross-entropy of `[B, T, V]` logits, averaged over
/// non-pad targets.
pub fn smoothed_cross_entropy(logits: &Tensor, targets: &[TokenId], smoothing: f64, pad: TokenId) -> Result<f64> {
    let v = logits.last_dim();
    let mut g = Graph::new();
    let l = g.constant(logits.clone().reshape(vec![logits.len() / v, v])?);
    g.cross_entropy(l, targets.to_vec(), smoothing, pad);
    Ok(g.forward(&Default::default())?.data()[0])
}

/// Source of the validation perplexity used for model selection.
pub trait Validator {
    fn perplexity(&mut self, model: &Model, step: u64) -> Result<f64>;
}

/// Token-weighted perplexity over a held-out corpus, without smoothing or
/// dropout.
pub struct CorpusValidator {
    batches: Vec<NmtBatch>,
}

impl CorpusValidator {
    pub fn new(valid: &[SentencePair], batch_tokens: usize) -> Result<Self> {
        if valid.is_empty() {
            return Err(Error::EmptyCorpus("validation corpus".into()));
        }
        Ok(CorpusValidator {
            batches: eval_batches(valid, batch_tokens)?,
        })
    }
}

impl Validator for CorpusValidator {
    fn perplexity(&mut self, model: &Model, _step: u64) -> Result<f64> {
        corpus_perplexity(model, &self.batches)
    }
}

pub fn corpus_perplexity(model: &Model, batches: &[NmtBatch]) -> Result<f64> {
    let (mut nll, mut tokens) = (0.0, 0usize);
    for b in batches {
        let (l, n) = batch_nll(model, b)?;
        nll += l * n as f64;
        tokens += n;
    }
    Ok((nll / tokens as f64).exp())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub step: u64,
    pub lr: f64,
    /// Token-weighted mean training loss since the previous row.
    pub train_loss: f64,
    pub valid_ppl: f64,
    /// Digest of the frozen groups, `-` when nothing is frozen.
    pub frozen_digest: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub rows: Vec<TrainLogRow>,
}

const LOG_HEADER: &str = "step\tlr\ttrain_loss\tvalid_ppl\tfrozen_digest";

impl TrainLog {
    pub fn to_tsv(&self) -> String {
        let mut s = format!("{LOG_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(s, "{}\t{:e}\t{}\t{}\t{}", r.step, r.lr, r.train_loss, r.valid_ppl, r.frozen_digest);
        }
        s
    }

    pub fn parse_tsv(text: &str) -> Result<Self> {
        let err = |line, message: String| Error::Parse {
            what: "train log",
            line,
            message,
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h == LOG_HEADER => {}
            _ => return Err(err(1, "missing header".into())),
        }
        let mut rows = Vec::new();
        for (i, line) in lines {
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 5 {
                return Err(err(i + 1, format!("expected 5 fields, got {}", f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| err(i + 1, e.to_string()));
            rows.push(TrainLogRow {
                step: f[0].parse().map_err(|e: std::num::ParseIntError| err(i + 1, e.to_string()))?,
                lr: num(f[1])?,
                train_loss: num(f[2])?,
                valid_ppl: num(f[3])?,
                frozen_digest: f[4].to_string(),
            });
        }
        Ok(TrainLog { rows })
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters at the evaluation with the lowest validation perplexity.
    pub best: Model,
    pub best_step: u64,
    pub best_ppl: f64,
    pub steps: u64,
    pub log: TrainLog,
}

/// Trains on `train_corpus`, selecting by perplexity on `valid_corpus`.
pub fn train(
    model: Model,
    train_corpus: &[SentencePair],
    valid_corpus: &[SentencePair],
    cfg: &TrainConfig,
    mask: &FreezeMask,
) -> Result<TrainOutcome> {
    let mut v = CorpusValidator::new(valid_corpus, cfg.batch_tokens)?;
    train_with(model, train_corpus, &mut v, cfg, mask)
}

/// Owned-parameter gradients of one batch; also returns the loss.
pub fn batch_gradients(model: &mut Model, batch: &NmtBatch, smoothing: f64, dropout_seed: u64) -> Result<(f64, Grads)> {
    let mut g = nmt_loss_graph(model, batch, smoothing, true, dropout_seed)?;
    let loss = g.forward(model.params())?.data()[0];
    model.zero_grads();
    g.backward_into(model.params_mut(), &Tensor::scalar(1.0))?;
    let grads = model
        .params_mut()
        .iter_mut()
        .map(|(n, t)| {
            let gr = t.grad_tensor().into_data();
            t.clear_grad();
            (n.clone(), gr)
        })
        .collect();
    Ok((loss, grads))
}

fn step_seed(seed: u64, step: u64) -> u64 {
    seed.rotate_left(17) ^ step.wrapping_mul(0xD1B5_4A32_D192_ED03)
}

pub fn train_with(
    mut model: Model,
    train_corpus: &[SentencePair],
    validator: &mut dyn Validator,
    cfg: &TrainConfig,
    mask: &FreezeMask,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    mask.check(&model)?;
    let max_len = model.config().max_positions - 1;
    let usable: Vec<SentencePair> = train_corpus
        .iter()
        .filter(|p| p.src().len() <= max_len && p.tgt().len() <= max_len)
        .cloned()
        .collect();
    if usable.len() < train_corpus.len() {
        warn!("skipping {} pairs longer than {max_len} tokens", train_corpus.len() - usable.len());
    }
    if usable.is_empty() {
        return Err(Error::EmptyCorpus("training corpus".into()));
    }
    let selection_dropout = model.config().dropout_rate;
    model.set_dropout(cfg.dropout_rate);
    let frozen: Vec<ParamGroup> = mask.frozen().iter().copied().collect();
    let frozen_digest = |m: &Model| if frozen.is_empty() { "-".to_string() } else { m.digest(&frozen) };

    let mut state = OptimState::default();
    let mut log = TrainLog::default();
    let mut best: Option<(Model, u64, f64)> = None;
    let (mut loss_sum, mut loss_tokens) = (0.0, 0usize);
    let mut step = 0u64;
    let mut epoch = 0u64;
    'outer: loop {
        if cfg.epochs.is_some_and(|e| epoch >= e) {
            break;
        }
        for idx in make_batches(&usable, cfg.batch_tokens, cfg.seed, epoch) {
            if step >= cfg.total_steps {
                break 'outer;
            }
            let batch = batch_of(&usable, &idx)?;
            if batch.target_tokens() == 0 {
                warn!("skipping an all-padding batch");
                continue;
            }
            step += 1;
            let (loss, mut grads) = batch_gradients(&mut model, &batch, cfg.label_smoothing, step_seed(cfg.seed, step))?;
            apply_freeze(&mut grads, &model, mask)?;
            if let Some((name, _)) = grads.iter().find(|(_, g)| g.iter().any(|x| !x.is_finite())) {
                return Err(Error::NonFiniteGradient {
                    step,
                    param: name.clone(),
                });
            }
            clip_global_norm(&mut grads, cfg.clip_norm);
            let lr = cfg.lr_at(step);
            adam_step(model.params_mut(), &grads, &mut state, cfg, lr)?;
            loss_sum += loss * batch.target_tokens() as f64;
            loss_tokens += batch.target_tokens();

            if step.is_multiple_of(cfg.validation_interval) || step == cfg.total_steps {
                evaluate(&model, validator, step, lr, &mut loss_sum, &mut loss_tokens, &mut log, &mut best, frozen_digest(&model))?;
            }
        }
        epoch += 1;
    }
    if log.rows.last().is_none_or(|r| r.step != step) && step > 0 {
        let lr = cfg.lr_at(step);
        evaluate(&model, validator, step, lr, &mut loss_sum, &mut loss_tokens, &mut log, &mut best, frozen_digest(&model))?;
    }
    let (mut best, best_step, best_ppl) = best.ok_or_else(|| Error::EmptyCorpus("no training steps were taken".into()))?;
    best.set_dropout(selection_dropout);
    Ok(TrainOutcome {
        best,
        best_step,
        best_ppl,
        steps: step,
        log,
    })
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    model: &Model,
    validator: &mut dyn Validator,
    step: u64,
    lr: f64,
    loss_sum: &mut f64,
    loss_tokens: &mut usize,
    log: &mut TrainLog,
    best: &mut Option<(Model, u64, f64)>,
    frozen_digest: String,
) -> Result<()> {
    let ppl = validator.perplexity(model, step)?;
    if !ppl.is_finite() {
        return Err(Error::NonFinitePerplexity { step });
    }
    let train_loss = if *loss_tokens > 0 { *loss_sum / *loss_tokens as f64 } else { f64::NAN };
    info!("step {step} lr {lr:.2e} loss {train_loss:.4} valid ppl {ppl:.3}");
    log.rows.push(TrainLogRow {
        step,
        lr,
        train_loss,
        valid_ppl: ppl,
        frozen_digest,
    });
    *loss_sum = 0.0;
    *loss_tokens = 0;
    if best.as_ref().is_none_or(|(_, _, b)| ppl < *b) {
        *best = Some((model.clone(), step, ppl));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_v() {
        let logits = Tensor::zeros(&[1, 2, 4]);
        let l = smoothed_cross_entropy(&logits, &[1, 3], 0.0, 0).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
        assert!(matches!(smoothed_cross_entropy(&logits, &[0, 0], 0.0, 0), Err(Error::AllPadding)));
    }

    #[test]
    fn log_round_trip() {
        let log = TrainLog {
            rows: vec![TrainLogRow {
                step: 3,
                lr: 1.5e-4,
                train_loss: 2.25,
                valid_ppl: 7.125,
                frozen_digest: "-".into(),
            }],
        };
        assert_eq!(TrainLog::parse_tsv(&log.to_tsv()).unwrap(), log);
        assert!(TrainLog::parse_tsv("nope\n").is_err());
    }
}
