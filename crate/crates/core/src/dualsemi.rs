//! Joint semi-supervised training of a text-to-frame (NLU) and a
//! frame-to-text (NLG) model.
//!
//! Every step mixes four losses: the two supervised losses on a paired
//! batch, and two reconstruction losses on unpaired data. For unpaired
//! text, NLU greedily decodes a frame and NLG is trained to rebuild the
//! text from it; unpaired frames go the other way. The decoded sequence is
//! discrete, so each reconstruction loss only trains the model that
//! reconstructs.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Bound, NodeId, Tape};
use crate::corpus::frame::EMPTY_FRAME;
use crate::corpus::{linearize_frame, SentencePair, SlotFrame};
use crate::seq2seq::{
    rng_stream, Batch, ModelConfig, Seq2Seq, Seq2SeqError, SeqPair, Trainer, Vocab,
};

const STREAM_UNPAIRED: u64 = 3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DualError {
    #[error("mixing weight `{0}` must be in [0, 1]")]
    InvalidWeight(&'static str),
    #[error("non-finite component loss")]
    NonFiniteLoss,
    #[error("the paired set is empty")]
    EmptyPairedSet,
    #[error("the validation set is empty")]
    EmptyValidationSet,
    #[error("NLU and NLG vocabularies do not mirror each other")]
    VocabMismatch,
    #[error(transparent)]
    Model(#[from] Seq2SeqError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualConfig {
    /// Weight of the paired NLG loss.
    pub alpha: f64,
    /// Weight of the paired NLU loss.
    pub beta: f64,
    /// Weight of the NLG loss on unpaired text.
    pub gamma: f64,
    /// Weight of the NLU loss on unpaired frames.
    pub delta: f64,
    /// Size of each unpaired batch as a multiple of the paired batch size;
    /// zero disables the unpaired losses.
    pub unpaired_batch_ratio: usize,
    pub nlu: ModelConfig,
    pub nlg: ModelConfig,
}

impl Default for DualConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.1,
            gamma: 1.0,
            delta: 0.1,
            unpaired_batch_ratio: 1,
            nlu: ModelConfig::default(),
            nlg: ModelConfig::default(),
        }
    }
}

impl DualConfig {
    pub fn validate(&self) -> Result<(), DualError> {
        for (name, w) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("delta", self.delta),
        ] {
            if !(0.0..=1.0).contains(&w) {
                return Err(DualError::InvalidWeight(name));
            }
        }
        self.nlu.validate()?;
        self.nlg.validate()?;
        Ok(())
    }
}

/// Training data for joint learning. Paired examples run text to
/// linearized frame; unpaired frames are linearized token lists.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TripleDataset {
    pub paired: Vec<SeqPair>,
    pub unpaired_text: Vec<Vec<String>>,
    pub unpaired_frames: Vec<Vec<String>>,
}

impl TripleDataset {
    pub fn from_corpus(
        paired: &[SentencePair],
        text: Vec<Vec<String>>,
        frames: &[SlotFrame],
    ) -> Self {
        Self {
            paired: paired.iter().map(SeqPair::nlu).collect(),
            unpaired_text: text,
            unpaired_frames: frames.iter().map(linearize_frame).collect(),
        }
    }

    /// NLU vocabularies (text, frame) built from paired and unpaired data.
    pub fn vocabs(&self) -> (Vocab, Vocab) {
        let text = Vocab::build(
            self.paired
                .iter()
                .map(|p| p.source.as_slice())
                .chain(self.unpaired_text.iter().map(Vec::as_slice)),
        );
        let frames = Vocab::build(
            self.paired
                .iter()
                .map(|p| p.target.as_slice())
                .chain(self.unpaired_frames.iter().map(Vec::as_slice)),
        );
        (text, frames)
    }
}

/// `alpha * nlg_p + beta * nlu_p + gamma * nlg_u + delta * nlu_u`.
pub fn mixed_loss(
    nlg_p: f64,
    nlu_p: f64,
    nlg_u: f64,
    nlu_u: f64,
    cfg: &DualConfig,
) -> Result<f64, DualError> {
    let parts = [nlg_p, nlu_p, nlg_u, nlu_u];
    if parts.iter().any(|x| !x.is_finite()) {
        return Err(DualError::NonFiniteLoss);
    }
    Ok(cfg.alpha * nlg_p + cfg.beta * nlu_p + cfg.gamma * nlg_u + cfg.delta * nlu_u)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointEpochLog {
    pub epoch: usize,
    pub nlu_train: f64,
    pub nlg_train: f64,
    /// Mean reconstruction losses over the epoch; zero when not computed.
    pub nlg_unpaired: f64,
    pub nlu_unpaired: f64,
    pub nlu_val: f64,
    pub nlg_val: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct JointLog {
    pub epochs: Vec<JointEpochLog>,
    pub best_epoch: Option<usize>,
}

/// Loss nodes of one joint step. Unpaired losses are `None` when their
/// weight is zero or no unpaired batch was given.
#[derive(Debug, Clone, Copy)]
pub struct StepLosses {
    pub nlu_paired: NodeId,
    pub nlg_paired: NodeId,
    pub nlg_unpaired: Option<NodeId>,
    pub nlu_unpaired: Option<NodeId>,
    pub mixed: Option<NodeId>,
}

/// Inputs of one joint step, as vocabulary indices.
#[derive(Debug, Clone, Copy)]
pub struct StepData<'a> {
    /// NLU direction (text, frame).
    pub paired: &'a [(&'a [usize], &'a [usize])],
    pub text: &'a [&'a [usize]],
    pub frames: &'a [&'a [usize]],
}

/// Replaces empty decodes so they can serve as a source sequence.
fn as_source(mut seq: Vec<usize>, vocab: &Vocab) -> Vec<usize> {
    if seq.is_empty() {
        seq.push(vocab.index_of(EMPTY_FRAME));
    }
    seq
}

/// Records the four losses and their mixture on one tape with both models
/// bound.
pub fn step_losses(
    tape: &mut Tape,
    nlu: (&Seq2Seq, &Bound, &mut ChaCha8Rng),
    nlg: (&Seq2Seq, &Bound, &mut ChaCha8Rng),
    data: &StepData<'_>,
    cfg: &DualConfig,
) -> Result<StepLosses, DualError> {
    let (nlu, pu, nlu_rng) = nlu;
    let (nlg, pg, nlg_rng) = nlg;
    let batch = Batch::new(data.paired)?;
    let flipped: Vec<(&[usize], &[usize])> = data.paired.iter().map(|&(s, t)| (t, s)).collect();
    let fwd_u = nlu.forward(tape, pu, &batch, Some(&mut *nlu_rng))?;
    let fwd_g = nlg.forward(tape, pg, &Batch::new(&flipped)?, Some(&mut *nlg_rng))?;

    let mut nlg_unpaired = None;
    if cfg.gamma > 0.0 && !data.text.is_empty() {
        let frames = nlu.greedy_decode_on(tape, pu, data.text)?;
        let frames: Vec<Vec<usize>> = frames
            .into_iter()
            .map(|f| as_source(f, &nlg.src_vocab))
            .collect();
        let pairs: Vec<(&[usize], &[usize])> = frames
            .iter()
            .map(Vec::as_slice)
            .zip(data.text.iter().copied())
            .collect();
        nlg_unpaired = Some(
            nlg.forward(tape, pg, &Batch::new(&pairs)?, Some(&mut *nlg_rng))?
                .loss,
        );
    }
    let mut nlu_unpaired = None;
    if cfg.delta > 0.0 && !data.frames.is_empty() {
        let texts = nlg.greedy_decode_on(tape, pg, data.frames)?;
        let texts: Vec<Vec<usize>> = texts
            .into_iter()
            .map(|t| as_source(t, &nlu.src_vocab))
            .collect();
        let pairs: Vec<(&[usize], &[usize])> = texts
            .iter()
            .map(Vec::as_slice)
            .zip(data.frames.iter().copied())
            .collect();
        nlu_unpaired = Some(
            nlu.forward(tape, pu, &Batch::new(&pairs)?, Some(&mut *nlu_rng))?
                .loss,
        );
    }

    let mut terms = Vec::new();
    for (w, node) in [
        (cfg.alpha, Some(fwd_g.loss)),
        (cfg.beta, Some(fwd_u.loss)),
        (cfg.gamma, nlg_unpaired),
        (cfg.delta, nlu_unpaired),
    ] {
        if let (true, Some(node)) = (w > 0.0, node) {
            terms.push(tape.scale(node, w));
        }
    }
    let mut mixed = terms.first().copied();
    for &t in terms.iter().skip(1) {
        mixed = Some(tape.add(mixed.unwrap(), t).map_err(Seq2SeqError::from)?);
    }
    Ok(StepLosses {
        nlu_paired: fwd_u.loss,
        nlg_paired: fwd_g.loss,
        nlg_unpaired,
        nlu_unpaired,
        mixed,
    })
}

/// Endless shuffled pass over an unpaired set.
struct Cycle {
    order: Vec<usize>,
    pos: usize,
}

impl Cycle {
    fn new(n: usize) -> Self {
        Self {
            order: (0..n).collect(),
            pos: n,
        }
    }

    fn take(&mut self, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(k);
        if self.order.is_empty() {
            return out;
        }
        while out.len() < k.min(self.order.len()) {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

#[derive(Default)]
struct Mean {
    total: f64,
    count: usize,
}

impl Mean {
    fn add(&mut self, loss: f64, n: usize) {
        self.total += loss * n as f64;
        self.count += n;
    }

    fn get(&self) -> f64 {
        self.total / self.count.max(1) as f64
    }
}

/// Trains NLU and NLG jointly and returns both models from the epoch with
/// the lowest NLU validation loss. Paired batch order follows the NLU seed;
/// with equal seeds, zero unpaired weights and the same vocabularies the
/// run matches two separate supervised runs step for step.
pub fn train_joint(
    data: &TripleDataset,
    val: &[SeqPair],
    cfg: &DualConfig,
) -> Result<(Seq2Seq, Seq2Seq, JointLog), DualError> {
    cfg.validate()?;
    if data.paired.is_empty() {
        return Err(DualError::EmptyPairedSet);
    }
    if val.is_empty() {
        return Err(DualError::EmptyValidationSet);
    }
    let (text_vocab, frame_vocab) = data.vocabs();
    let nlu = Seq2Seq::new(cfg.nlu.clone(), text_vocab.clone(), frame_vocab.clone())?;
    let nlg = Seq2Seq::new(cfg.nlg.clone(), frame_vocab, text_vocab)?;
    train_joint_models(nlu, nlg, data, val, cfg)
}

/// As [`train_joint`], starting from given models whose vocabularies must
/// mirror each other.
pub fn train_joint_models(
    nlu: Seq2Seq,
    nlg: Seq2Seq,
    data: &TripleDataset,
    val: &[SeqPair],
    cfg: &DualConfig,
) -> Result<(Seq2Seq, Seq2Seq, JointLog), DualError> {
    cfg.validate()?;
    if data.paired.is_empty() {
        return Err(DualError::EmptyPairedSet);
    }
    if nlu.src_vocab != nlg.tgt_vocab || nlu.tgt_vocab != nlg.src_vocab {
        return Err(DualError::VocabMismatch);
    }
    let mut nlu = Trainer::new(nlu);
    let mut nlg = Trainer::new(nlg);
    let paired = nlu.encode(&data.paired);
    let val_u = nlu.encode(val);
    let flipped: Vec<SeqPair> = val.iter().map(SeqPair::flipped).collect();
    let val_g = nlg.encode(&flipped);
    let text: Vec<Vec<usize>> = data
        .unpaired_text
        .iter()
        .map(|t| nlu.model.src_vocab.encode(t))
        .collect();
    let frames: Vec<Vec<usize>> = data
        .unpaired_frames
        .iter()
        .map(|f| nlg.model.src_vocab.encode(f))
        .collect();
    let text: Vec<Vec<usize>> = text.into_iter().filter(|t| !t.is_empty()).collect();
    let frames: Vec<Vec<usize>> = frames.into_iter().filter(|f| !f.is_empty()).collect();

    let mut unpaired_rng = rng_stream(nlu.model.config.seed, STREAM_UNPAIRED);
    let mut text_cycle = Cycle::new(text.len());
    let mut frame_cycle = Cycle::new(frames.len());
    let unpaired_size = nlu.model.config.batch_size * cfg.unpaired_batch_ratio;
    let mut best_nlg = None;
    let mut log = JointLog::default();

    for epoch in 1..=nlu.model.config.max_epochs {
        let (mut m_u, mut m_g, mut m_gu, mut m_uu) = (
            Mean::default(),
            Mean::default(),
            Mean::default(),
            Mean::default(),
        );
        for batch in nlu.epoch_batches(paired.len()) {
            let pairs: Vec<(&[usize], &[usize])> = batch
                .iter()
                .map(|&i| (paired[i].0.as_slice(), paired[i].1.as_slice()))
                .collect();
            let text_idx = if cfg.gamma > 0.0 {
                text_cycle.take(unpaired_size, &mut unpaired_rng)
            } else {
                Vec::new()
            };
            let frame_idx = if cfg.delta > 0.0 {
                frame_cycle.take(unpaired_size, &mut unpaired_rng)
            } else {
                Vec::new()
            };
            let text_batch: Vec<&[usize]> = text_idx.iter().map(|&i| text[i].as_slice()).collect();
            let frame_batch: Vec<&[usize]> =
                frame_idx.iter().map(|&i| frames[i].as_slice()).collect();
            let step = StepData {
                paired: &pairs,
                text: &text_batch,
                frames: &frame_batch,
            };
            let mut tape = Tape::new();
            let pu = nlu.model.params.bind(&mut tape);
            let pg = nlg.model.params.bind(&mut tape);
            let losses = step_losses(
                &mut tape,
                (&nlu.model, &pu, &mut nlu.dropout_rng),
                (&nlg.model, &pg, &mut nlg.dropout_rng),
                &step,
                cfg,
            )?;
            let value = |n: Option<NodeId>| n.map_or(0.0, |n| tape.value(n).data()[0]);
            let (lu, lg) = (
                value(Some(losses.nlu_paired)),
                value(Some(losses.nlg_paired)),
            );
            let (lgu, luu) = (value(losses.nlg_unpaired), value(losses.nlu_unpaired));
            if mixed_loss(lg, lu, lgu, luu, cfg).is_err() {
                return Err(Seq2SeqError::DivergedTraining { epoch }.into());
            }
            m_u.add(lu, pairs.iter().map(|p| p.1.len() + 1).sum());
            m_g.add(lg, pairs.iter().map(|p| p.0.len() + 1).sum());
            if losses.nlg_unpaired.is_some() {
                m_gu.add(lgu, 1);
            }
            if losses.nlu_unpaired.is_some() {
                m_uu.add(luu, 1);
            }
            let Some(mixed) = losses.mixed else { continue };
            let grads = tape.backward(mixed).map_err(Seq2SeqError::from)?;
            let diverged = |_| Seq2SeqError::DivergedTraining { epoch };
            nlu.adam
                .step(&mut nlu.model.params, pu.gradients(&tape, &grads))
                .map_err(diverged)?;
            nlg.adam
                .step(&mut nlg.model.params, pg.gradients(&tape, &grads))
                .map_err(diverged)?;
        }
        let nlu_val = nlu.validation_loss(&val_u)?;
        let nlg_val = nlg.validation_loss(&val_g)?;
        if nlu.record(nlu_val) {
            best_nlg = Some(nlg.model.params.clone());
            log.best_epoch = Some(epoch);
        }
        log.epochs.push(JointEpochLog {
            epoch,
            nlu_train: m_u.get(),
            nlg_train: m_g.get(),
            nlg_unpaired: m_gu.get(),
            nlu_unpaired: m_uu.get(),
            nlu_val,
            nlg_val,
        });
    }
    let nlu = nlu.into_best();
    let mut nlg = nlg.model;
    if let Some(params) = best_nlg {
        nlg.params = params;
    }
    Ok((nlu, nlg, log))
}
