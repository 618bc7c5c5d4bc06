//! Epoch-based mini-batch training with validation-accuracy model selection.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::encoder::{self, EmbeddingSequence};
use crate::error::{Error, Result};
use crate::heads;
use crate::metrics::{self, MetricsReport};
use crate::model::{Input, Model};
use crate::optim::{clip_global_norm, OptimizerConfig, OptimizerState};
use crate::rng::RandomSource;
use crate::tape::Tape;
use crate::tokenizer::TokenSequence;

/// Owned model input.
#[derive(Debug, Clone, PartialEq)]
pub enum Sample {
    Tokens(TokenSequence),
    Embeddings(EmbeddingSequence),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub sample: Sample,
    pub label: usize,
}

impl Example {
    pub fn tokens(tokens: TokenSequence, label: usize) -> Self {
        Example {
            sample: Sample::Tokens(tokens),
            label,
        }
    }

    pub fn input(&self) -> Input<'_> {
        match &self.sample {
            Sample::Tokens(t) => Input::Tokens(t),
            Sample::Embeddings(e) => Input::Embeddings(e),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub freeze_encoder: bool,
    /// Global gradient-norm ceiling; off when `None`.
    pub clip_norm: Option<f64>,
}

impl TrainConfig {
    pub fn new(optimizer: OptimizerConfig, seed: u64) -> Self {
        TrainConfig {
            optimizer,
            epochs: 5,
            batch_size: 32,
            seed,
            freeze_encoder: false,
            clip_norm: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::param("epochs and batch size must be positive"));
        }
        if let Some(c) = self.clip_norm {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::param(format!("clip norm {c} must be positive")));
            }
        }
        Ok(())
    }
}

/// Independent random streams derived from one run seed.
#[derive(Debug, Clone)]
pub struct RunStreams {
    pub init: RandomSource,
    pub shuffle: RandomSource,
    pub dropout: RandomSource,
    /// Span masks and dropout during denoising pretraining.
    pub pretrain: RandomSource,
}

impl RunStreams {
    pub fn new(seed: u64) -> Self {
        let root = RandomSource::new(seed);
        RunStreams {
            init: root.fork(1),
            shuffle: root.fork(2),
            dropout: root.fork(3),
            pretrain: root.fork(4),
        }
    }
}

/// Elapsed-time source for the training log.
pub trait Clock {
    fn seconds(&self) -> f64;
}

/// Always reports zero, keeping logs reproducible byte for byte.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn seconds(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub val_f1_weighted: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub predictions: Vec<usize>,
    pub mean_loss: f64,
}

/// Forward-only metrics over `examples`.
pub fn evaluate(model: &Model, examples: &[Example]) -> Result<Evaluation> {
    if examples.is_empty() {
        return Err(Error::data("cannot evaluate an empty split"));
    }
    let mut predictions = Vec::with_capacity(examples.len());
    let mut truth = Vec::with_capacity(examples.len());
    let mut loss = 0.0;
    for ex in examples {
        let p = model.probabilities(ex.input())?;
        loss += heads::cross_entropy_loss(&p, ex.label)?;
        predictions.push(heads::predict(&p));
        truth.push(ex.label);
    }
    let report = metrics::report(&truth, &predictions, model.config.classes)?;
    Ok(Evaluation {
        report,
        predictions,
        mean_loss: loss / examples.len() as f64,
    })
}

/// One optimizer step on the mean loss of `batch`. Returns the summed
/// per-sample loss measured before the update.
pub fn train_step(
    model: &mut Model,
    optimizer: &mut OptimizerState,
    batch: &[&Example],
    trainable: &[bool],
    clip_norm: Option<f64>,
    rng: &mut RandomSource,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::data("empty batch"));
    }
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape);
    let mut total = None;
    let mut summed = 0.0;
    for ex in batch {
        let (_, loss) = model.loss(&mut tape, &bound, ex.input(), ex.label, rng, true)?;
        summed += tape.value(loss).data()[0];
        total = Some(match total {
            None => loss,
            Some(acc) => tape.add(acc, loss)?,
        });
    }
    let total = total.expect("batch is non-empty");
    let mean = tape.affine(total, 1.0 / batch.len() as f64, 0.0);
    let grads = tape.backward(mean)?;
    let mut grads = model.params.collect_grads(&bound, &grads);
    if let Some(c) = clip_norm {
        clip_global_norm(&mut grads, c);
    }
    optimizer.step(&mut model.params, &grads, trainable)?;
    Ok(summed)
}

/// Trains for `config.epochs` epochs, reporting each epoch to `on_epoch`.
/// On return `model` holds the parameters of the epoch with the highest
/// validation accuracy, the earliest on ties.
pub fn train(
    model: &mut Model,
    train_set: &[Example],
    val_set: &[Example],
    config: &TrainConfig,
    clock: &dyn Clock,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainReport> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::data("training split is empty"));
    }
    if val_set.is_empty() {
        return Err(Error::data("validation split is empty"));
    }
    let streams = RunStreams::new(config.seed);
    let mut shuffle = streams.shuffle;
    let mut dropout = streams.dropout;
    let mut optimizer = OptimizerState::for_store(config.optimizer, &model.params)?;
    let trainable = model.trainable_mask(config.freeze_encoder);
    let start = clock.seconds();
    let mut logs = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, crate::params::ParamStore)> = None;

    for epoch in 1..=config.epochs {
        let order = shuffle.permutation(train_set.len());
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train_set[i]).collect();
            loss_sum += train_step(
                model,
                &mut optimizer,
                &batch,
                &trainable,
                config.clip_norm,
                &mut dropout,
            )?;
        }
        let val = evaluate(model, val_set)?;
        let log = EpochLog {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_accuracy: val.report.accuracy,
            val_f1_weighted: val.report.weighted.f1,
            wall_seconds: clock.seconds() - start,
        };
        on_epoch(&log);
        if best.as_ref().is_none_or(|b| log.val_accuracy > b.0) {
            best = Some((log.val_accuracy, epoch, model.params.clone()));
        }
        logs.push(log);
    }
    let (_, best_epoch, params) = best.expect("at least one epoch ran");
    model.params = params;
    Ok(TrainReport {
        epochs: logs,
        best_epoch,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub mask_rate: f64,
    pub mean_span: f64,
}

impl PretrainConfig {
    pub fn new(optimizer: OptimizerConfig, epochs: usize, seed: u64) -> Self {
        PretrainConfig {
            optimizer,
            epochs,
            batch_size: 32,
            seed,
            mask_rate: 0.15,
            mean_span: 3.0,
        }
    }
}

/// Span-mask denoising on the encoder of `model`; head parameters are left
/// untouched. Sequences too short to receive a mask are skipped. Returns the
/// mean loss of each epoch.
pub fn pretrain(
    model: &mut Model,
    corpus: &[TokenSequence],
    config: &PretrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<Vec<f64>> {
    if config.epochs == 0 || config.batch_size == 0 {
        return Err(Error::param("epochs and batch size must be positive"));
    }
    let encoder = model
        .encoder()
        .cloned()
        .ok_or_else(|| Error::param("pretraining needs an internal encoder"))?;
    let streams = RunStreams::new(config.seed);
    let mut rng = streams.pretrain;
    let mut shuffle = streams.shuffle;
    let mut optimizer = OptimizerState::for_store(config.optimizer, &model.params)?;
    let encoder_only: Vec<bool> = model.trainable_mask(true).iter().map(|m| !m).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let order = shuffle.permutation(corpus.len());
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let mut tape = Tape::new();
            let bound = model.params.bind(&mut tape);
            let mut total = None;
            let mut count = 0usize;
            for &i in chunk {
                let tokens = corpus[i].prefix(corpus[i].valid_len());
                let (corrupted, targets) =
                    encoder::span_mask(&tokens, &mut rng, config.mask_rate, config.mean_span)?;
                if targets.is_empty() {
                    continue;
                }
                let loss = encoder
                    .denoising_loss(&mut tape, &bound, &corrupted, &targets, true, &mut rng)?;
                loss_sum += tape.value(loss).data()[0];
                count += 1;
                total = Some(match total {
                    None => loss,
                    Some(acc) => tape.add(acc, loss)?,
                });
            }
            let Some(total) = total else { continue };
            seen += count;
            let mean = tape.affine(total, 1.0 / count as f64, 0.0);
            let grads = tape.backward(mean)?;
            let grads = model.params.collect_grads(&bound, &grads);
            optimizer.step(&mut model.params, &grads, &encoder_only)?;
        }
        if seen == 0 {
            return Err(Error::data("no sequence is long enough to mask"));
        }
        let mean = loss_sum / seen as f64;
        on_epoch(epoch, mean);
        history.push(mean);
    }
    Ok(history)
}
