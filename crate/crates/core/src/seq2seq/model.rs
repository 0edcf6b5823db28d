use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::vocab::{BOS, EOS, PAD};
use super::{ModelConfig, Seq2SeqError, Vocab};
use crate::autodiff::{Array, Axis, Bound, NodeId, ParamSet, Tape};

const INIT_RANGE: f64 = 0.08;
const MASKED: f64 = -1e30;

pub(crate) const STREAM_INIT: u64 = 0;
pub(crate) const STREAM_ORDER: u64 = 1;
pub(crate) const STREAM_DROPOUT: u64 = 2;

/// Independent random stream `stream` derived from `seed`.
pub(crate) fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Padded, time-major source indices.
#[derive(Debug, Clone, PartialEq)]
struct Sources {
    size: usize,
    len: usize,
    tokens: Vec<usize>,
    /// Per time step, which rows hold a real token; `None` when all do.
    masks: Vec<Option<Vec<f64>>>,
}

impl Sources {
    fn new(sources: &[&[usize]]) -> Result<Self, Seq2SeqError> {
        if sources.is_empty() || sources.iter().any(|s| s.is_empty()) {
            return Err(Seq2SeqError::EmptySource);
        }
        let size = sources.len();
        let len = sources.iter().map(|s| s.len()).max().unwrap();
        let mut tokens = Vec::with_capacity(len * size);
        let mut masks = Vec::with_capacity(len);
        for t in 0..len {
            let mut mask = Vec::with_capacity(size);
            for s in sources {
                tokens.push(s.get(t).copied().unwrap_or(PAD));
                mask.push(if t < s.len() { 1.0 } else { 0.0 });
            }
            masks.push(if mask.iter().all(|&m| m == 1.0) {
                None
            } else {
                Some(mask)
            });
        }
        Ok(Self {
            size,
            len,
            tokens,
            masks,
        })
    }
}

/// A padded batch for teacher-forced training. Decoder inputs are the
/// target prefixed with `BOS`; outputs are the target followed by `EOS`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    src: Sources,
    tgt_len: usize,
    tgt_in: Vec<usize>,
    tgt_out: Vec<usize>,
}

impl Batch {
    pub fn new(examples: &[(&[usize], &[usize])]) -> Result<Self, Seq2SeqError> {
        let sources: Vec<&[usize]> = examples.iter().map(|e| e.0).collect();
        let src = Sources::new(&sources)?;
        let size = examples.len();
        let tgt_len = examples.iter().map(|e| e.1.len()).max().unwrap() + 1;
        let mut tgt_in = vec![PAD; tgt_len * size];
        let mut tgt_out = vec![PAD; tgt_len * size];
        for (b, (_, tgt)) in examples.iter().enumerate() {
            tgt_in[b] = BOS;
            for (t, &y) in tgt.iter().enumerate() {
                tgt_in[(t + 1) * size + b] = y;
                tgt_out[t * size + b] = y;
            }
            tgt_out[tgt.len() * size + b] = EOS;
        }
        Ok(Self {
            src,
            tgt_len,
            tgt_in,
            tgt_out,
        })
    }

    /// Single example with explicit decoder inputs and no loss targets.
    fn teacher(src: &[usize], teacher: &[usize]) -> Result<Self, Seq2SeqError> {
        let src = Sources::new(&[src])?;
        if teacher.is_empty() {
            return Err(Seq2SeqError::EmptySource);
        }
        Ok(Self {
            src,
            tgt_len: teacher.len(),
            tgt_in: teacher.to_vec(),
            tgt_out: vec![PAD; teacher.len()],
        })
    }

    pub fn size(&self) -> usize {
        self.src.size
    }

    /// Number of target positions that contribute to the loss.
    pub fn target_tokens(&self) -> usize {
        self.tgt_out.iter().filter(|&&y| y != PAD).count()
    }
}

/// Nodes produced by a teacher-forced forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// `[T * B, V]`, time-major.
    pub logits: NodeId,
    /// Mean NLL over non-padding target positions.
    pub loss: NodeId,
    /// Attention weights `[B, S]` per decoder step.
    pub attention: Vec<NodeId>,
}

struct Encoded {
    memory: NodeId,
    attn_mask: Option<NodeId>,
    init: Vec<(NodeId, NodeId)>,
}

fn drop<R: Rng + ?Sized>(
    tape: &mut Tape,
    x: NodeId,
    rate: f64,
    rng: &mut Option<&mut R>,
) -> NodeId {
    tape.dropout(x, rate, rng.as_deref_mut())
}

/// One LSTM step. `xproj` already holds `x W_ih + b`; gates are laid out
/// input, forget, cell, output.
fn lstm_cell(
    tape: &mut Tape,
    xproj: NodeId,
    w_hh: NodeId,
    state: Option<(NodeId, NodeId)>,
    h: usize,
) -> Result<(NodeId, NodeId), Seq2SeqError> {
    let z = match state {
        Some((hp, _)) => {
            let r = tape.matmul(hp, w_hh)?;
            tape.add(xproj, r)?
        }
        None => xproj,
    };
    let zi = tape.slice(z, Axis::Cols, 0, h)?;
    let zf = tape.slice(z, Axis::Cols, h, 2 * h)?;
    let zg = tape.slice(z, Axis::Cols, 2 * h, 3 * h)?;
    let zo = tape.slice(z, Axis::Cols, 3 * h, 4 * h)?;
    let i = tape.sigmoid(zi);
    let f = tape.sigmoid(zf);
    let g = tape.tanh(zg);
    let o = tape.sigmoid(zo);
    let ig = tape.mul(i, g)?;
    let c = match state {
        Some((_, cp)) => {
            let fc = tape.mul(f, cp)?;
            tape.add(fc, ig)?
        }
        None => ig,
    };
    let tc = tape.tanh(c);
    let hn = tape.mul(o, tc)?;
    Ok((hn, c))
}

/// `prev + mask * (next - prev)`, keeping the previous state on padded rows.
fn blend(
    tape: &mut Tape,
    prev: NodeId,
    next: NodeId,
    mask: NodeId,
) -> Result<NodeId, Seq2SeqError> {
    let d = tape.sub(next, prev)?;
    let md = tape.mul(mask, d)?;
    Ok(tape.add(prev, md)?)
}

/// Runs one LSTM direction over `steps` time steps of a time-major input
/// projection `[steps * batch, 4h]`. Returns outputs indexed by time and
/// the final state.
#[allow(clippy::too_many_arguments)]
fn lstm_layer(
    tape: &mut Tape,
    proj: NodeId,
    w_hh: NodeId,
    batch: usize,
    h: usize,
    masks: Option<&[Option<Vec<f64>>]>,
    reverse: bool,
    init: Option<(NodeId, NodeId)>,
) -> Result<(Vec<NodeId>, (NodeId, NodeId)), Seq2SeqError> {
    let steps = tape.value(proj).shape()[0] / batch;
    let mut outputs = vec![None; steps];
    let mut state = init;
    for k in 0..steps {
        let t = if reverse { steps - 1 - k } else { k };
        let xt = tape.slice(proj, Axis::Rows, t * batch, (t + 1) * batch)?;
        let (mut hn, mut cn) = lstm_cell(tape, xt, w_hh, state, h)?;
        if let Some(mask) = masks.and_then(|m| m[t].as_ref()) {
            let (hp, cp) = match state {
                Some(s) => s,
                None => {
                    let z = tape.constant(Array::zeros(&[batch, h]));
                    (z, z)
                }
            };
            let full: Vec<f64> = mask
                .iter()
                .flat_map(|&m| core::iter::repeat_n(m, h))
                .collect();
            let m = tape.constant(Array::from_vec(&[batch, h], full)?);
            hn = blend(tape, hp, hn, m)?;
            cn = blend(tape, cp, cn, m)?;
        }
        state = Some((hn, cn));
        outputs[t] = Some(hn);
    }
    let outputs = outputs
        .into_iter()
        .map(|o| o.expect("every step visited"))
        .collect();
    Ok((outputs, state.expect("at least one step")))
}

fn param_shapes(
    config: &ModelConfig,
    src_vocab: usize,
    tgt_vocab: usize,
) -> Vec<(String, Vec<usize>)> {
    let (e, h) = (config.embed_dim, config.hidden);
    let hd = h / 2;
    let mut shapes = vec![
        ("src_embed".into(), vec![src_vocab, e]),
        ("tgt_embed".into(), vec![tgt_vocab, e]),
        ("attn.w".into(), vec![2 * h, h]),
        ("attn.b".into(), vec![h]),
        ("out.w".into(), vec![h, tgt_vocab]),
        ("out.b".into(), vec![tgt_vocab]),
    ];
    for l in 0..config.layers {
        let input = if l == 0 { e } else { h };
        for dir in ["fw", "bw"] {
            shapes.push((format!("enc.{l}.{dir}.w_ih"), vec![input, 4 * hd]));
            shapes.push((format!("enc.{l}.{dir}.w_hh"), vec![hd, 4 * hd]));
            shapes.push((format!("enc.{l}.{dir}.b"), vec![4 * hd]));
        }
        for part in ["h", "c"] {
            shapes.push((format!("bridge.{l}.{part}.w"), vec![h, h]));
            shapes.push((format!("bridge.{l}.{part}.b"), vec![h]));
        }
        shapes.push((format!("dec.{l}.w_ih"), vec![input, 4 * h]));
        shapes.push((format!("dec.{l}.w_hh"), vec![h, 4 * h]));
        shapes.push((format!("dec.{l}.b"), vec![4 * h]));
    }
    shapes
}

/// Model configuration, vocabularies and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Seq2Seq {
    pub config: ModelConfig,
    pub src_vocab: Vocab,
    pub tgt_vocab: Vocab,
    pub params: ParamSet,
}

impl Seq2Seq {
    /// Fresh model with parameters drawn uniformly from `[-0.08, 0.08)`.
    pub fn new(
        config: ModelConfig,
        src_vocab: Vocab,
        tgt_vocab: Vocab,
    ) -> Result<Self, Seq2SeqError> {
        config.validate()?;
        let mut rng = rng_stream(config.seed, STREAM_INIT);
        let mut params = ParamSet::new();
        let mut shapes = param_shapes(&config, src_vocab.len(), tgt_vocab.len());
        shapes.sort();
        for (name, shape) in shapes {
            let value = Array::from_fn(&shape, |_| rng.random_range(-INIT_RANGE..INIT_RANGE));
            params.insert(name, value);
        }
        Ok(Self {
            config,
            src_vocab,
            tgt_vocab,
            params,
        })
    }

    /// Assembles a model from stored parts, checking every parameter.
    pub fn from_parts(
        config: ModelConfig,
        src_vocab: Vocab,
        tgt_vocab: Vocab,
        params: ParamSet,
    ) -> Result<Self, Seq2SeqError> {
        config.validate()?;
        let shapes = param_shapes(&config, src_vocab.len(), tgt_vocab.len());
        for (name, expected) in &shapes {
            let found = params
                .get(name)
                .map(|a| a.shape().to_vec())
                .unwrap_or_default();
            if &found != expected {
                return Err(Seq2SeqError::ParamShape {
                    name: name.clone(),
                    expected: expected.clone(),
                    found,
                });
            }
            if !params.get(name).unwrap().is_finite() {
                return Err(Seq2SeqError::InvalidConfig(format!(
                    "parameter `{name}` is not finite"
                )));
            }
        }
        if let Some((name, a)) = params
            .iter()
            .find(|(n, _)| !shapes.iter().any(|(s, _)| s == *n))
        {
            return Err(Seq2SeqError::ParamShape {
                name: name.clone(),
                expected: Vec::new(),
                found: a.shape().to_vec(),
            });
        }
        Ok(Self {
            config,
            src_vocab,
            tgt_vocab,
            params,
        })
    }

    fn encode<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        p: &Bound,
        src: &Sources,
        rng: &mut Option<&mut R>,
    ) -> Result<Encoded, Seq2SeqError> {
        let cfg = &self.config;
        let (b, hd) = (src.size, cfg.hidden / 2);
        let emb = tape.embedding(p.get("src_embed"), &src.tokens)?;
        let mut x = drop(tape, emb, cfg.dropout, rng);
        let mut finals = Vec::with_capacity(cfg.layers);
        let mut memory = None;
        for l in 0..cfg.layers {
            let mut dirs = Vec::with_capacity(2);
            for (dir, reverse) in [("fw", false), ("bw", true)] {
                let xw = tape.matmul(x, p.get(&format!("enc.{l}.{dir}.w_ih")))?;
                let proj = tape.add_row(xw, p.get(&format!("enc.{l}.{dir}.b")))?;
                let w_hh = p.get(&format!("enc.{l}.{dir}.w_hh"));
                dirs.push(lstm_layer(
                    tape,
                    proj,
                    w_hh,
                    b,
                    hd,
                    Some(&src.masks),
                    reverse,
                    None,
                )?);
            }
            let (bw_out, bw_last) = dirs.pop().unwrap();
            let (fw_out, fw_last) = dirs.pop().unwrap();
            finals.push((fw_last, bw_last));
            let per_step = fw_out
                .iter()
                .zip(&bw_out)
                .map(|(&f, &r)| tape.concat(&[f, r], Axis::Cols))
                .collect::<Result<Vec<_>, _>>()?;
            if l + 1 < cfg.layers {
                let joined = tape.concat(&per_step, Axis::Rows)?;
                x = drop(tape, joined, cfg.dropout, rng);
            } else {
                memory = Some(tape.stack(&per_step)?);
            }
        }
        let mut init = Vec::with_capacity(cfg.layers);
        for (l, ((hf, cf), (hb, cb))) in finals.into_iter().enumerate() {
            let hcat = tape.concat(&[hf, hb], Axis::Cols)?;
            let hw = tape.matmul(hcat, p.get(&format!("bridge.{l}.h.w")))?;
            let hb = tape.add_row(hw, p.get(&format!("bridge.{l}.h.b")))?;
            let h0 = tape.tanh(hb);
            let ccat = tape.concat(&[cf, cb], Axis::Cols)?;
            let cw = tape.matmul(ccat, p.get(&format!("bridge.{l}.c.w")))?;
            let c0 = tape.add_row(cw, p.get(&format!("bridge.{l}.c.b")))?;
            init.push((h0, c0));
        }
        let attn_mask = if src.masks.iter().all(Option::is_none) {
            None
        } else {
            let mut m = vec![0.0; b * src.len];
            for (t, mask) in src.masks.iter().enumerate() {
                if let Some(mask) = mask {
                    for (row, &keep) in mask.iter().enumerate() {
                        if keep == 0.0 {
                            m[row * src.len + t] = MASKED;
                        }
                    }
                }
            }
            Some(tape.constant(Array::from_vec(&[b, src.len], m)?))
        };
        Ok(Encoded {
            memory: memory.expect("at least one layer"),
            attn_mask,
            init,
        })
    }

    /// Global dot attention for decoder state `h` `[B, H]`; returns the
    /// attentional state and the attention weights.
    fn attend(
        &self,
        tape: &mut Tape,
        p: &Bound,
        enc: &Encoded,
        h: NodeId,
    ) -> Result<(NodeId, NodeId), Seq2SeqError> {
        let mut scores = tape.attn_scores(enc.memory, h)?;
        if let Some(mask) = enc.attn_mask {
            scores = tape.add(scores, mask)?;
        }
        let weights = tape.softmax(scores);
        let ctx = tape.attn_context(weights, enc.memory)?;
        let cat = tape.concat(&[ctx, h], Axis::Cols)?;
        let proj = tape.matmul(cat, p.get("attn.w"))?;
        let biased = tape.add_row(proj, p.get("attn.b"))?;
        Ok((tape.tanh(biased), weights))
    }

    fn output(&self, tape: &mut Tape, p: &Bound, h: NodeId) -> Result<NodeId, Seq2SeqError> {
        let o = tape.matmul(h, p.get("out.w"))?;
        Ok(tape.add_row(o, p.get("out.b"))?)
    }

    /// Teacher-forced pass over `batch`. Dropout is active only when `rng`
    /// is given.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        p: &Bound,
        batch: &Batch,
        mut rng: Option<&mut R>,
    ) -> Result<Forward, Seq2SeqError> {
        let cfg = &self.config;
        let enc = self.encode(tape, p, &batch.src, &mut rng)?;
        let b = batch.src.size;
        let emb = tape.embedding(p.get("tgt_embed"), &batch.tgt_in)?;
        let mut x = drop(tape, emb, cfg.dropout, &mut rng);
        let mut top = Vec::new();
        for l in 0..cfg.layers {
            let xw = tape.matmul(x, p.get(&format!("dec.{l}.w_ih")))?;
            let proj = tape.add_row(xw, p.get(&format!("dec.{l}.b")))?;
            let w_hh = p.get(&format!("dec.{l}.w_hh"));
            let (outs, _) = lstm_layer(
                tape,
                proj,
                w_hh,
                b,
                cfg.hidden,
                None,
                false,
                Some(enc.init[l]),
            )?;
            if l + 1 < cfg.layers {
                let joined = tape.concat(&outs, Axis::Rows)?;
                x = drop(tape, joined, cfg.dropout, &mut rng);
            } else {
                top = outs;
            }
        }
        let mut attentional = Vec::with_capacity(batch.tgt_len);
        let mut attention = Vec::with_capacity(batch.tgt_len);
        for &h in &top {
            let (ht, w) = self.attend(tape, p, &enc, h)?;
            attentional.push(ht);
            attention.push(w);
        }
        let joined = tape.concat(&attentional, Axis::Rows)?;
        let hidden = drop(tape, joined, cfg.dropout, &mut rng);
        let logits = self.output(tape, p, hidden)?;
        let loss = tape.nll_loss(logits, &batch.tgt_out, PAD)?;
        Ok(Forward {
            logits,
            loss,
            attention,
        })
    }

    /// Logits `[T, V]` for one source and decoder input sequence (which
    /// normally starts with `BOS`), without dropout.
    pub fn logits(&self, src: &[usize], teacher: &[usize]) -> Result<Array, Seq2SeqError> {
        let batch = Batch::teacher(src, teacher)?;
        let mut tape = Tape::new();
        let p = self.params.bind_frozen(&mut tape);
        let fwd = self.forward::<ChaCha8Rng>(&mut tape, &p, &batch, None)?;
        Ok(tape.value(fwd.logits).clone())
    }

    /// Summed NLL and number of scored target tokens over `examples`,
    /// evaluated in chunks of `batch_size` without dropout.
    pub fn loss_sum(
        &self,
        examples: &[(&[usize], &[usize])],
        batch_size: usize,
    ) -> Result<(f64, usize), Seq2SeqError> {
        let mut total = 0.0;
        let mut count = 0;
        for chunk in examples.chunks(batch_size.max(1)) {
            let batch = Batch::new(chunk)?;
            let mut tape = Tape::new();
            let p = self.params.bind_frozen(&mut tape);
            let fwd = self.forward::<ChaCha8Rng>(&mut tape, &p, &batch, None)?;
            let n = batch.target_tokens();
            total += tape.value(fwd.loss).data()[0] * n as f64;
            count += n;
        }
        Ok((total, count))
    }

    /// One decoder step for every row: embeds `inputs`, advances the layer
    /// states, attends and returns logits `[B, V]`.
    fn decoder_step(
        &self,
        tape: &mut Tape,
        p: &Bound,
        enc: &Encoded,
        states: &mut [(NodeId, NodeId)],
        inputs: &[usize],
    ) -> Result<NodeId, Seq2SeqError> {
        let mut x = tape.embedding(p.get("tgt_embed"), inputs)?;
        for (l, state) in states.iter_mut().enumerate() {
            let xw = tape.matmul(x, p.get(&format!("dec.{l}.w_ih")))?;
            let proj = tape.add_row(xw, p.get(&format!("dec.{l}.b")))?;
            *state = lstm_cell(
                tape,
                proj,
                p.get(&format!("dec.{l}.w_hh")),
                Some(*state),
                self.config.hidden,
            )?;
            x = state.0;
        }
        let (ht, _) = self.attend(tape, p, enc, x)?;
        self.output(tape, p, ht)
    }

    /// Greedy decoding recorded on `tape` with already bound parameters.
    /// The result is discrete, so nothing downstream of it is connected to
    /// the parameters.
    pub fn greedy_decode_on(
        &self,
        tape: &mut Tape,
        p: &Bound,
        sources: &[&[usize]],
    ) -> Result<Vec<Vec<usize>>, Seq2SeqError> {
        let src = Sources::new(sources)?;
        let enc = self.encode::<ChaCha8Rng>(tape, p, &src, &mut None)?;
        let mut states = enc.init.clone();
        let mut inputs = vec![BOS; src.size];
        let mut done = vec![false; src.size];
        let mut out = vec![Vec::new(); src.size];
        for _ in 0..self.config.max_decode_len {
            let logits = self.decoder_step(tape, p, &enc, &mut states, &inputs)?;
            let value = tape.value(logits);
            for row in 0..src.size {
                let scores = value.row(row);
                let mut best = 0;
                for (i, &s) in scores.iter().enumerate() {
                    if s > scores[best] {
                        best = i;
                    }
                }
                inputs[row] = best;
                if !done[row] {
                    if best == EOS {
                        done[row] = true;
                    } else {
                        out[row].push(best);
                    }
                }
            }
            if done.iter().all(|&d| d) {
                break;
            }
        }
        Ok(out)
    }

    pub fn greedy_decode_batch(
        &self,
        sources: &[&[usize]],
    ) -> Result<Vec<Vec<usize>>, Seq2SeqError> {
        let mut tape = Tape::new();
        let p = self.params.bind_frozen(&mut tape);
        self.greedy_decode_on(&mut tape, &p, sources)
    }

    /// Emits the argmax token per step from `BOS` until `EOS` or the
    /// length limit; the `EOS` itself is not returned.
    pub fn greedy_decode(&self, src: &[usize]) -> Result<Vec<usize>, Seq2SeqError> {
        Ok(self.greedy_decode_batch(&[src])?.pop().unwrap())
    }

    /// Decodes token strings to token strings.
    pub fn translate<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<String>, Seq2SeqError> {
        let src = self.src_vocab.encode(tokens);
        Ok(self.tgt_vocab.decode(&self.greedy_decode(&src)?))
    }
}
