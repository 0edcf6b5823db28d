use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::model::{rng_stream, STREAM_DROPOUT, STREAM_ORDER};
use super::{Batch, ModelConfig, Seq2Seq, Seq2SeqError, SeqPair, Vocab};
use crate::autodiff::{Adam, AdamConfig, ParamSet, Tape};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    /// Epoch whose parameters were kept, if any epoch ran.
    pub best_epoch: Option<usize>,
}

/// Encoded training example.
pub type Example = (Vec<usize>, Vec<usize>);

/// Optimizer, random streams and best-epoch bookkeeping for one model.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Seq2Seq,
    pub adam: Adam,
    pub order_rng: ChaCha8Rng,
    pub dropout_rng: ChaCha8Rng,
    best: Option<(f64, ParamSet)>,
}

impl Trainer {
    pub fn new(model: Seq2Seq) -> Self {
        let cfg = &model.config;
        let adam = Adam::new(AdamConfig {
            lr: cfg.lr,
            clip: cfg.clip_norm,
            ..AdamConfig::default()
        });
        Self {
            order_rng: rng_stream(cfg.seed, STREAM_ORDER),
            dropout_rng: rng_stream(cfg.seed, STREAM_DROPOUT),
            adam,
            model,
            best: None,
        }
    }

    pub fn encode(&self, pairs: &[SeqPair]) -> Vec<Example> {
        pairs
            .iter()
            .map(|p| {
                (
                    self.model.src_vocab.encode(&p.source),
                    self.model.tgt_vocab.encode(&p.target),
                )
            })
            .collect()
    }

    /// Shuffled minibatches of example indices for one epoch.
    pub fn epoch_batches(&mut self, n: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.order_rng);
        order
            .chunks(self.model.config.batch_size)
            .map(<[usize]>::to_vec)
            .collect()
    }

    /// One optimizer step on `examples`, with the loss scaled by `weight`.
    /// Returns the unscaled batch loss and its token count.
    pub fn step(
        &mut self,
        examples: &[(&[usize], &[usize])],
        weight: f64,
        epoch: usize,
    ) -> Result<(f64, usize), Seq2SeqError> {
        let batch = Batch::new(examples)?;
        let mut tape = Tape::new();
        let p = self.model.params.bind(&mut tape);
        let fwd = self
            .model
            .forward(&mut tape, &p, &batch, Some(&mut self.dropout_rng))?;
        let loss = tape.value(fwd.loss).data()[0];
        if !loss.is_finite() {
            return Err(Seq2SeqError::DivergedTraining { epoch });
        }
        let scaled = tape.scale(fwd.loss, weight);
        let grads = tape.backward(scaled)?;
        self.adam
            .step(&mut self.model.params, p.gradients(&tape, &grads))
            .map_err(|_| Seq2SeqError::DivergedTraining { epoch })?;
        Ok((loss, batch.target_tokens()))
    }

    /// Mean per-token validation loss.
    pub fn validation_loss(&self, val: &[Example]) -> Result<f64, Seq2SeqError> {
        let refs: Vec<(&[usize], &[usize])> = val
            .iter()
            .map(|(s, t)| (s.as_slice(), t.as_slice()))
            .collect();
        let (total, count) = self.model.loss_sum(&refs, self.model.config.batch_size)?;
        Ok(if count == 0 {
            0.0
        } else {
            total / count as f64
        })
    }

    /// Keeps the current parameters if `val_loss` is the lowest so far.
    pub fn record(&mut self, val_loss: f64) -> bool {
        let better = self.best.as_ref().is_none_or(|(b, _)| val_loss < *b);
        if better {
            self.best = Some((val_loss, self.model.params.clone()));
        }
        better
    }

    /// The model with the best recorded parameters (current ones if none).
    pub fn into_best(self) -> Seq2Seq {
        let mut model = self.model;
        if let Some((_, params)) = self.best {
            model.params = params;
        }
        model
    }

    /// One full epoch over `train`; returns the token-weighted mean loss.
    pub fn run_epoch(
        &mut self,
        train: &[Example],
        weight: f64,
        epoch: usize,
    ) -> Result<f64, Seq2SeqError> {
        let mut total = 0.0;
        let mut count = 0;
        for batch in self.epoch_batches(train.len()) {
            let refs: Vec<(&[usize], &[usize])> = batch
                .iter()
                .map(|&i| (train[i].0.as_slice(), train[i].1.as_slice()))
                .collect();
            let (loss, n) = self.step(&refs, weight, epoch)?;
            total += loss * n as f64;
            count += n;
        }
        Ok(total / count.max(1) as f64)
    }
}

/// Builds vocabularies from the training side, trains with teacher forcing
/// and returns the parameters of the epoch with the lowest validation loss.
/// `loss_weight` scales the gradient of every step.
pub fn train_supervised(
    train: &[SeqPair],
    val: &[SeqPair],
    config: &ModelConfig,
    loss_weight: f64,
) -> Result<(Seq2Seq, TrainingLog), Seq2SeqError> {
    if train.is_empty() {
        return Err(Seq2SeqError::EmptyDataset("training"));
    }
    if val.is_empty() {
        return Err(Seq2SeqError::EmptyDataset("validation"));
    }
    let src_vocab = Vocab::build(train.iter().map(|p| p.source.as_slice()));
    let tgt_vocab = Vocab::build(train.iter().map(|p| p.target.as_slice()));
    let model = Seq2Seq::new(config.clone(), src_vocab, tgt_vocab)?;
    train_model(model, train, val, loss_weight)
}

/// Trains an existing model; vocabularies are taken from it.
pub fn train_model(
    model: Seq2Seq,
    train: &[SeqPair],
    val: &[SeqPair],
    loss_weight: f64,
) -> Result<(Seq2Seq, TrainingLog), Seq2SeqError> {
    let mut trainer = Trainer::new(model);
    let train = trainer.encode(train);
    let val = trainer.encode(val);
    let mut log = TrainingLog::default();
    for epoch in 1..=trainer.model.config.max_epochs {
        let train_loss = trainer.run_epoch(&train, loss_weight, epoch)?;
        let val_loss = trainer.validation_loss(&val)?;
        if trainer.record(val_loss) {
            log.best_epoch = Some(epoch);
        }
        log.epochs.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
        });
    }
    Ok((trainer.into_best(), log))
}
