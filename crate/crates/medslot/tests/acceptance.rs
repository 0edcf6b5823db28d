//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Runs as a plain binary so the lines always print.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use medslot::checkpoint::Checkpoint;
use medslot::formats::PairLine;
use medslot::pipeline;
use medslot::synth::{SynthCorpus, SynthOptions};
use medslot_core::autodiff::{Array, Axis, NodeId, Tape};
use medslot_core::corpus::{parse_linearized, SentencePair, SlotFrame, SlotLabel};
use medslot_core::distmatch::{match_patient, score_sentence, PrescriptionRecord, SynonymTable};
use medslot_core::dualsemi::{train_joint, train_joint_models, DualConfig, TripleDataset};
use medslot_core::seq2seq::{train_model, Batch, ModelConfig, Seq2Seq, SeqPair, Vocab};
use medslot_core::slotval::{evaluate, macro_f1, round2, score_pair, SlotScore};
use medslot_core::subword::{count_words, decode, encode, learn_bpe, BpeModel};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------- gradients

const H: f64 = 1e-5;
const FLOOR: f64 = 1e-6;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

type Primitive = (
    &'static str,
    Vec<Vec<usize>>,
    Box<dyn Fn(&mut Tape, &[NodeId]) -> NodeId>,
);

fn primitives() -> Vec<Primitive> {
    fn p(
        name: &'static str,
        shapes: &[&[usize]],
        f: impl Fn(&mut Tape, &[NodeId]) -> NodeId + 'static,
    ) -> Primitive {
        (
            name,
            shapes.iter().map(|s| s.to_vec()).collect(),
            Box::new(f),
        )
    }
    vec![
        p("add", &[&[3, 4], &[3, 4]], |t, x| {
            t.add(x[0], x[1]).unwrap()
        }),
        p("sub", &[&[3, 4], &[3, 4]], |t, x| {
            t.sub(x[0], x[1]).unwrap()
        }),
        p("mul", &[&[3, 4], &[3, 4]], |t, x| {
            t.mul(x[0], x[1]).unwrap()
        }),
        p("scale", &[&[2, 3]], |t, x| t.scale(x[0], 0.37)),
        p("add_row", &[&[4, 3], &[3]], |t, x| {
            t.add_row(x[0], x[1]).unwrap()
        }),
        p("matmul", &[&[3, 5], &[5, 2]], |t, x| {
            t.matmul(x[0], x[1]).unwrap()
        }),
        p("concat", &[&[2, 3], &[2, 2]], |t, x| {
            t.concat(x, Axis::Cols).unwrap()
        }),
        p("concat rows", &[&[2, 3], &[1, 3]], |t, x| {
            t.concat(x, Axis::Rows).unwrap()
        }),
        p("slice", &[&[3, 6]], |t, x| {
            t.slice(x[0], Axis::Cols, 1, 4).unwrap()
        }),
        p("tanh", &[&[3, 4]], |t, x| t.tanh(x[0])),
        p("sigmoid", &[&[3, 4]], |t, x| t.sigmoid(x[0])),
        p("softmax", &[&[3, 5]], |t, x| t.softmax(x[0])),
        p("embedding", &[&[6, 3]], |t, x| {
            t.embedding(x[0], &[5, 0, 5, 2]).unwrap()
        }),
        p("dropout", &[&[2, 3]], |t, x| {
            t.dropout_with_mask(x[0], vec![1.25, 0.0, 1.25, 1.25, 0.0, 1.25])
        }),
        p("sum", &[&[2, 5]], |t, x| t.sum(x[0])),
        p("stack", &[&[2, 3], &[2, 3]], |t, x| t.stack(x).unwrap()),
        p("attn_scores", &[&[2, 4, 3], &[2, 3]], |t, x| {
            t.attn_scores(x[0], x[1]).unwrap()
        }),
        p("attn_context", &[&[2, 4], &[2, 4, 3]], |t, x| {
            t.attn_context(x[0], x[1]).unwrap()
        }),
        p("nll", &[&[4, 5]], |t, x| {
            t.nll_loss(x[0], &[1, 0, 3, 4], 0).unwrap()
        }),
    ]
}

/// Central differences of `sum(f(x) * r)` against the tape's gradient.
fn primitive_error(prim: &Primitive, rng: &mut ChaCha8Rng) -> f64 {
    let (_, shapes, f) = prim;
    let inputs: Vec<Array> = shapes
        .iter()
        .map(|s| Array::from_fn(s, |_| rng.random_range(-1.0..1.0)))
        .collect();
    let build = |xs: &[Array], r: Option<&Array>| {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = xs.iter().map(|a| tape.param(a.clone())).collect();
        let out = f(&mut tape, &ids);
        let r = r
            .cloned()
            .unwrap_or_else(|| Array::zeros(tape.value(out).shape()));
        let rc = tape.constant(r);
        let prod = tape.mul(out, rc).unwrap();
        let loss = tape.sum(prod);
        (tape, ids, loss, out)
    };
    let (probe, _, _, out) = build(&inputs, None);
    let r = Array::from_fn(probe.value(out).shape(), |_| rng.random_range(-1.0..1.0));
    let (tape, ids, loss, _) = build(&inputs, Some(&r));
    let grads = tape.backward(loss).unwrap();
    let value = |xs: &[Array]| {
        let (t, _, l, _) = build(xs, Some(&r));
        t.value(l).data()[0]
    };
    let mut worst: f64 = 0.0;
    for (k, id) in ids.iter().enumerate() {
        let analytic = grads.get_or_zeros(*id, inputs[k].shape());
        for i in 0..inputs[k].len() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[i] += H;
            let mut minus = inputs.clone();
            minus[k].data_mut()[i] -= H;
            let numeric = (value(&plus) - value(&minus)) / (2.0 * H);
            worst = worst.max(rel_err(analytic.data()[i], numeric));
        }
    }
    worst
}

fn model_loss(model: &Seq2Seq, batch: &Batch) -> f64 {
    let mut tape = Tape::new();
    let p = model.params.bind(&mut tape);
    let fwd = model
        .forward::<ChaCha8Rng>(&mut tape, &p, batch, None)
        .unwrap();
    tape.value(fwd.loss).data()[0]
}

/// Full teacher-forced loss of a toy model (vocab 10, hidden 4, embed 6)
/// with parameters drawn from U(-0.6, 0.6) and a random two-pair batch.
fn model_error(rng: &mut ChaCha8Rng) -> f64 {
    let words: Vec<String> = (0..6).map(|i| format!("w{i}")).collect();
    let vocab = Vocab::build([words.as_slice()]);
    let config = ModelConfig {
        embed_dim: 6,
        hidden: 4,
        layers: 2,
        dropout: 0.0,
        ..ModelConfig::default()
    };
    let mut model = Seq2Seq::new(config, vocab.clone(), vocab).unwrap();
    let names: Vec<String> = model.params.iter().map(|(n, _)| n.clone()).collect();
    for name in &names {
        for x in model.params.get_mut(name).unwrap().data_mut() {
            *x = rng.random_range(-0.6..0.6);
        }
    }
    let mut seq =
        |len: usize| -> Vec<usize> { (0..len).map(|_| rng.random_range(4..10)).collect() };
    let (s1, t1, s2, t2) = (seq(2), seq(2), seq(1), seq(3));
    let batch = Batch::new(&[(&s1[..], &t1[..]), (&s2[..], &t2[..])]).unwrap();

    let mut tape = Tape::new();
    let p = model.params.bind(&mut tape);
    let fwd = model
        .forward::<ChaCha8Rng>(&mut tape, &p, &batch, None)
        .unwrap();
    let grads = tape.backward(fwd.loss).unwrap();
    let analytic = p.gradients(&tape, &grads);
    let mut worst: f64 = 0.0;
    for name in &names {
        let g = &analytic[name];
        for i in 0..g.len() {
            let orig = model.params.get(name).unwrap().data()[i];
            model.params.get_mut(name).unwrap().data_mut()[i] = orig + H;
            let plus = model_loss(&model, &batch);
            model.params.get_mut(name).unwrap().data_mut()[i] = orig - H;
            let minus = model_loss(&model, &batch);
            model.params.get_mut(name).unwrap().data_mut()[i] = orig;
            worst = worst.max(rel_err(g.data()[i], (plus - minus) / (2.0 * H)));
        }
    }
    worst
}

fn criterion_gradients() -> Outcome {
    let start = Instant::now();
    let prims = primitives();
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..100 {
        for prim in &prims {
            let e = primitive_error(prim, &mut rng);
            let w = worst.entry(prim.0).or_insert(0.0);
            *w = w.max(e);
        }
        let e = model_error(&mut rng);
        let w = worst.entry("seq2seq loss").or_insert(0.0);
        *w = w.max(e);
    }
    let elapsed = start.elapsed();
    let (name, max) = worst.iter().fold(
        ("", 0.0),
        |acc, (n, &e)| if e > acc.1 { (n, e) } else { acc },
    );
    outcome(
        max < 1e-4 && elapsed < Duration::from_secs(120),
        format!(
            "{} checks x 100 trials, max relative error {max:.2e} ({name}), {:.1}s",
            worst.len(),
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------- bpe

fn token() -> impl Strategy<Value = String> {
    prop_oneof![
        8 => "[a-z0-9.@é-]{1,10}".prop_filter("joiner suffix", |s| !s.ends_with("@@")),
        1 => prop::sample::select(vec!["m=", "do=", ";", "<empty>", r"\;", r"\m="]).prop_map(String::from),
    ]
}

fn criterion_bpe() -> Outcome {
    let corpus = SynthCorpus::generate(30, 3).pairs();
    let words = corpus
        .iter()
        .flat_map(|p| p.source_tokens.iter().map(String::as_str));
    let shared = learn_bpe(&count_words(words), 300);
    let mut runner = TestRunner::new(Config {
        cases: 10_000,
        failure_persistence: None,
        ..Config::default()
    });
    let strategy = (prop::collection::vec(token(), 0..12), 0usize..30);
    let result = runner.run(&strategy, |(tokens, merges)| {
        let own = learn_bpe(&count_words(tokens.iter().map(String::as_str)), merges);
        for model in [&shared, &own] {
            let pieces = encode(model, &tokens);
            prop_assert_eq!(decode(&pieces).unwrap(), tokens.clone());
        }
        Ok(())
    });
    let round_trip = result.is_ok();

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut deterministic = true;
    for _ in 0..50 {
        let mut words: Vec<String> = corpus
            .iter()
            .flat_map(|p| p.source_tokens.clone())
            .filter(|_| rng.random_bool(0.5))
            .collect();
        let a = learn_bpe(&count_words(words.iter().map(String::as_str)), 200);
        let b = learn_bpe(&count_words(words.iter().map(String::as_str)), 200);
        words.shuffle(&mut rng);
        let c = learn_bpe(&count_words(words.iter().map(String::as_str)), 200);
        deterministic &= a == b && a == c && BpeModel::from_merges(a.merges().to_vec()).is_ok();
    }
    let detail = match &result {
        Ok(()) => "10000 fuzzed token lists round-trip; learning deterministic over 50 corpora"
            .to_string(),
        Err(e) => format!("round trip failed: {e}"),
    };
    outcome(round_trip && deterministic, detail)
}

// ---------------------------------------------------------------- evaluator

const VALUE_KEYS: [&str; 6] = ["aspirin", "81 mg", "po", "twice a day", "7 days", "pain"];

/// Surface variants that all normalize to the same key.
fn decorate(key: &str, rng: &mut ChaCha8Rng) -> String {
    match rng.random_range(0..5) {
        0 => key.to_string(),
        1 => key.to_uppercase(),
        2 => format!("{key}."),
        3 => format!("({key})"),
        _ => key.replace(' ', "  "),
    }
}

/// A frame plus, per slot, the multiset of value keys it holds.
fn random_frame(rng: &mut ChaCha8Rng) -> (SlotFrame, Vec<(SlotLabel, &'static str)>) {
    let mut frame = SlotFrame::new();
    let mut keys = Vec::new();
    for _ in 0..rng.random_range(0..7) {
        let label = SlotLabel::ALL[rng.random_range(0..6)];
        let key = VALUE_KEYS[rng.random_range(0..VALUE_KEYS.len())];
        frame.insert(label, &decorate(key, rng)).unwrap();
        keys.push((label, key));
    }
    (frame, keys)
}

/// Pairs every predicted occurrence with an unused reference occurrence of
/// the same slot and key.
fn brute_force(
    pred: &[(SlotLabel, &str)],
    gold: &[(SlotLabel, &str)],
) -> BTreeMap<SlotLabel, (u64, u64, u64)> {
    let mut out = BTreeMap::new();
    for label in SlotLabel::ALL {
        let p: Vec<&str> = pred.iter().filter(|e| e.0 == label).map(|e| e.1).collect();
        let g: Vec<&str> = gold.iter().filter(|e| e.0 == label).map(|e| e.1).collect();
        let mut used = vec![false; g.len()];
        let mut tp = 0;
        for v in &p {
            if let Some(j) = (0..g.len()).find(|&j| !used[j] && g[j] == *v) {
                used[j] = true;
                tp += 1;
            }
        }
        out.insert(label, (tp, p.len() as u64 - tp, g.len() as u64 - tp));
    }
    out
}

fn criterion_evaluator() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut mismatches = 0;
    let mut total: BTreeMap<SlotLabel, (u64, u64, u64)> = BTreeMap::new();
    let mut preds = Vec::new();
    let mut golds = Vec::new();
    for i in 0..1000 {
        let (pf, pk) = random_frame(&mut rng);
        let (gf, gk) = random_frame(&mut rng);
        let oracle = brute_force(&pk, &gk);
        let mut scores = SlotScore::new();
        score_pair(&pf, &gf, &mut scores);
        for label in SlotLabel::ALL {
            let c = scores.get(label);
            if (c.true_positive, c.false_positive, c.false_negative) != oracle[&label] {
                mismatches += 1;
            }
            let t = total.entry(label).or_default();
            t.0 += oracle[&label].0;
            t.1 += oracle[&label].1;
            t.2 += oracle[&label].2;
        }
        let pair = |frame| SentencePair {
            doc_id: "d".into(),
            sentence_index: i,
            source_tokens: vec!["x".into()],
            target: frame,
        };
        preds.push(pair(pf));
        golds.push(pair(gf));
    }
    let report = evaluate(&preds, &golds).unwrap();
    let aggregate = SlotLabel::ALL.iter().all(|&l| {
        let c = report.scores.get(l);
        (c.true_positive, c.false_positive, c.false_negative) == total[&l]
    });
    outcome(
        mismatches == 0 && aggregate,
        format!("1000 frame pairs, {mismatches} per-slot count mismatches, corpus totals match: {aggregate}"),
    )
}

// -------------------------------------------------------------- macro mean

fn criterion_macro_mean() -> Outcome {
    let slots = [0.94, 0.92, 0.93, 0.89, 0.49, 0.50].map(Some);
    let m = macro_f1(&slots);
    let rounded = round2(m);
    outcome(
        (m - 0.778333).abs() < 1e-6 && rounded == 0.78,
        format!("macro {m:.6} rounds to {rounded:.2}"),
    )
}

// ------------------------------------------------------------- training data

fn to_pairs(lines: &[PairLine]) -> Vec<SentencePair> {
    lines
        .iter()
        .map(|l| SentencePair {
            doc_id: l.doc_id.clone(),
            sentence_index: l.sentence_index,
            source_tokens: l.src.clone(),
            target: parse_linearized(&l.tgt).unwrap(),
        })
        .collect()
}

fn f1_of(ckpt: &Checkpoint, set: &[PairLine]) -> f64 {
    let pred = pipeline::predict(ckpt, set).unwrap();
    evaluate(&to_pairs(&pred), &to_pairs(set))
        .unwrap()
        .macro_f1()
}

/// Sentences with a nonempty frame, each distinct source sentence once.
fn medication_lines_with(docs: usize, seed: u64, options: SynthOptions) -> Vec<PairLine> {
    let mut seen = BTreeSet::new();
    SynthCorpus::generate_with(docs, seed, options)
        .pairs()
        .iter()
        .filter(|p| !p.target.is_empty() && seen.insert(p.source_tokens.clone()))
        .map(PairLine::from_pair)
        .collect()
}

// ------------------------------------------------------------------ overfit

/// Batch size for the overfit run; the other hyperparameters are the
/// model defaults (embed 500, hidden 128, 2 layers, dropout 0.2, lr 0.001,
/// clip 2.0).
const OVERFIT_BATCH: usize = 4;

/// A lexicon small enough for 64 training sentences to cover it.
const OVERFIT_LEXICON: SynthOptions = SynthOptions {
    drugs: 4,
    variants: 1,
};

fn criterion_overfit() -> Outcome {
    let lines = medication_lines_with(60, 7, OVERFIT_LEXICON);
    let (train, rest) = lines.split_at(64);
    let (val, rest) = rest.split_at(16);
    let held_out = &rest[..32];
    let config = ModelConfig {
        max_epochs: 200,
        batch_size: OVERFIT_BATCH,
        ..ModelConfig::default()
    };
    let start = Instant::now();
    let (ckpt, log) = pipeline::train(train, val, &config, None).unwrap();
    let elapsed = start.elapsed();
    let (train_f1, held_f1) = (f1_of(&ckpt, train), f1_of(&ckpt, held_out));
    outcome(
        train_f1 >= 0.95 && held_f1 >= 0.80 && elapsed < Duration::from_secs(600),
        format!(
            "train F1 {train_f1:.3}, held-out F1 {held_f1:.3}, best epoch {:?}, {:.0}s",
            log.best_epoch,
            elapsed.as_secs_f64()
        ),
    )
}

// ----------------------------------------------------------- semi-supervised

fn semi_config(seed: u64, max_epochs: usize) -> ModelConfig {
    ModelConfig {
        embed_dim: 64,
        hidden: 64,
        layers: 2,
        dropout: 0.2,
        lr: 0.003,
        clip_norm: 2.0,
        max_epochs,
        batch_size: 4,
        max_decode_len: 40,
        seed,
    }
}

/// Paired-only epochs before joint training starts.
const SUPERVISED_EPOCHS: usize = 100;
/// Joint epochs, and the extra paired-only epochs the baseline gets.
const JOINT_EPOCHS: usize = 50;
const SEMI_PAIRED: usize = 64;
const SEMI_LEXICON: SynthOptions = SynthOptions {
    drugs: 8,
    variants: 2,
};

fn dual_config(seed: u64, gamma: f64, delta: f64, max_epochs: usize) -> DualConfig {
    DualConfig {
        alpha: 1.0,
        beta: 0.1,
        gamma,
        delta,
        unpaired_batch_ratio: 1,
        nlu: semi_config(seed, max_epochs),
        nlg: semi_config(seed, max_epochs),
    }
}

fn nlu_f1(model: Seq2Seq, test: &[PairLine]) -> f64 {
    f1_of(&Checkpoint { model, bpe: None }, test)
}

fn seq_pairs(lines: &[PairLine]) -> Vec<SeqPair> {
    lines
        .iter()
        .map(|l| SeqPair::new(l.src.clone(), l.tgt.clone()))
        .collect()
}

/// 5% of the medication sentences are paired; the source sides of half the
/// rest and the frames of the other half form the unpaired sets.
fn semi_split(seed: u64) -> (TripleDataset, Vec<SeqPair>, Vec<PairLine>) {
    let mut pool = medication_lines_with(320, 100 + seed, SEMI_LEXICON);
    pool.truncate(SEMI_PAIRED * 20);
    assert_eq!(pool.len(), SEMI_PAIRED * 20, "synthetic pool too small");
    pool.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let unpaired = &pool[SEMI_PAIRED..];
    let (texts, frames) = unpaired.split_at(unpaired.len() / 2);
    let data = TripleDataset {
        paired: seq_pairs(&pool[..SEMI_PAIRED]),
        unpaired_text: texts.iter().map(|l| l.src.clone()).collect(),
        unpaired_frames: frames.iter().map(|l| l.tgt.clone()).collect(),
    };
    let extra = medication_lines_with(24, 900 + seed, SEMI_LEXICON);
    (data, seq_pairs(&extra[..16]), extra[16..80].to_vec())
}

/// Paired-only NLU and NLG over the joint vocabularies.
fn paired_models(data: &TripleDataset, val: &[SeqPair], seed: u64) -> (Seq2Seq, Seq2Seq) {
    let (text_vocab, frame_vocab) = data.vocabs();
    let cfg = semi_config(seed, SUPERVISED_EPOCHS);
    let nlu = Seq2Seq::new(cfg.clone(), text_vocab.clone(), frame_vocab.clone()).unwrap();
    let (nlu, _) = train_model(nlu, &data.paired, val, 1.0).unwrap();
    let flipped: Vec<SeqPair> = data.paired.iter().map(SeqPair::flipped).collect();
    let flipped_val: Vec<SeqPair> = val.iter().map(SeqPair::flipped).collect();
    let nlg = Seq2Seq::new(cfg, frame_vocab, text_vocab).unwrap();
    let (nlg, _) = train_model(nlg, &flipped, &flipped_val, 1.0).unwrap();
    (nlu, nlg)
}

fn with_epochs(mut model: Seq2Seq, max_epochs: usize) -> Seq2Seq {
    model.config.max_epochs = max_epochs;
    model
}

fn criterion_semi() -> Outcome {
    let start = Instant::now();
    let mut semi = Vec::new();
    let mut base = Vec::new();
    for seed in 1..=3 {
        let (data, val, test) = semi_split(seed);
        let (nlu, nlg) = paired_models(&data, &val, seed);
        // the baseline gets the same extra epochs on paired data alone and
        // keeps whichever of the two models scores higher
        let (more, _) = train_model(
            with_epochs(nlu.clone(), JOINT_EPOCHS),
            &data.paired,
            &val,
            1.0,
        )
        .unwrap();
        base.push(nlu_f1(nlu.clone(), &test).max(nlu_f1(more, &test)));
        let cfg = dual_config(seed, 1.0, 0.1, JOINT_EPOCHS);
        let (nlu, nlg) = (
            with_epochs(nlu, JOINT_EPOCHS),
            with_epochs(nlg, JOINT_EPOCHS),
        );
        let (joint, _, _) = train_joint_models(nlu, nlg, &data, &val, &cfg).unwrap();
        semi.push(nlu_f1(joint, &test));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (m_semi, m_base) = (mean(&semi), mean(&base));

    // gamma = delta = 0 against supervised runs over the same vocabularies
    let (data, val, _) = semi_split(1);
    let cfg = dual_config(1, 0.0, 0.0, 5);
    let (text_vocab, frame_vocab) = data.vocabs();
    let nlu = Seq2Seq::new(cfg.nlu.clone(), text_vocab.clone(), frame_vocab.clone()).unwrap();
    let (joint_nlu, _, joint_log) = train_joint(&data, &val, &cfg).unwrap();
    let (sup_nlu, sup_log) = train_model(nlu, &data.paired, &val, cfg.beta).unwrap();
    let same_params =
        joint_nlu
            .params
            .iter()
            .zip(sup_nlu.params.iter())
            .all(|((na, a), (nb, b))| {
                na == nb
                    && a.shape() == b.shape()
                    && a.data()
                        .iter()
                        .zip(b.data())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
            && joint_nlu.params.len() == sup_nlu.params.len();
    let same_log = joint_log.epochs.len() == sup_log.epochs.len()
        && joint_log.epochs.iter().zip(&sup_log.epochs).all(|(j, s)| {
            j.nlu_train.to_bits() == s.train_loss.to_bits()
                && j.nlu_val.to_bits() == s.val_loss.to_bits()
        });
    let reduction = same_params && same_log;

    outcome(
        m_semi >= m_base && reduction,
        format!(
            "NLU F1 semi {m_semi:.3} {:?} vs paired-only {m_base:.3} {:?}; zero-weight reduction bit-identical: {reduction}; {:.0}s",
            semi.iter().map(|v| round2(*v)).collect::<Vec<_>>(),
            base.iter().map(|v| round2(*v)).collect::<Vec<_>>(),
            start.elapsed().as_secs_f64()
        ),
    )
}

// ------------------------------------------------------------------ matcher

fn tokens(s: &str) -> Vec<String> {
    medslot_core::corpus::tokenize(s)
}

fn rx(
    drug: &str,
    value: &str,
    unit: &str,
    form: &str,
    route: &str,
    freq: &str,
) -> PrescriptionRecord {
    PrescriptionRecord {
        patient_id: "p1".into(),
        drug: drug.into(),
        dose_value: value.into(),
        dose_unit: unit.into(),
        form: form.into(),
        route: route.into(),
        frequency: freq.into(),
    }
}

fn criterion_matcher() -> Outcome {
    let synonyms = SynonymTable::builtin();
    let record = rx("Tacrolimus", "1", "mg", "Capsule", "PO", "BID");
    // a discharge summary with one line per candidate, scores 0..=5
    let summary = [
        ("Patient ambulating well.", 0),
        ("Tacrolimus level was therapeutic on admission.", 1),
        ("Continue tacrolimus 1 mg and recheck levels.", 2),
        ("Tacrolimus 1mg by mouth daily was held.", 3),
        ("Tacrolimus 1 mg po twice a day with meals.", 4),
        ("Tacrolimus 1 mg capsule po twice a day.", 5),
        ("Follow up with transplant clinic.", 0),
    ];
    let lines: Vec<Vec<String>> = summary.iter().map(|(l, _)| tokens(l)).collect();
    let scores_ok = summary
        .iter()
        .zip(&lines)
        .all(|((_, expected), l)| score_sentence(&record, l, &synonyms).0 == *expected);
    let picked = match_patient(std::slice::from_ref(&record), &lines, 2, &synonyms);
    let picks_five = picked.len() == 1 && picked[0].sentence_index == 5 && picked[0].score == 5;
    let mut rejects = true;
    for min_score in 1..=5 {
        for (i, line) in lines.iter().enumerate() {
            let r = match_patient(
                std::slice::from_ref(&record),
                std::slice::from_ref(line),
                min_score,
                &synonyms,
            );
            rejects &= r.is_empty() == (summary[i].1 < min_score);
        }
    }

    // monotonicity: filling a blank field with a phrase from the sentence
    // adds exactly one point; appending tokens never removes one
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let drugs = ["aspirin", "heparin", "insulin glargine", "tacrolimus"];
    let doses = [("81", "mg"), ("5000", "units"), ("1", "mg")];
    let forms = ["tablet", "capsule", "injection"];
    let routes = ["po", "by mouth", "iv", "subcutaneously"];
    let freqs = ["daily", "bid", "twice a day", "q6h"];
    let mut violations = 0;
    for _ in 0..1000 {
        let dose = doses[rng.random_range(0..doses.len())];
        let full = rx(
            drugs[rng.random_range(0..drugs.len())],
            dose.0,
            dose.1,
            forms[rng.random_range(0..forms.len())],
            routes[rng.random_range(0..routes.len())],
            freqs[rng.random_range(0..freqs.len())],
        );
        let mut words: Vec<String> = Vec::new();
        for phrase in [
            full.drug.clone(),
            format!("{} {}", full.dose_value, full.dose_unit),
            full.form.clone(),
            full.route.clone(),
            full.frequency.clone(),
            "with".into(),
            "food".into(),
        ] {
            if rng.random_bool(0.6) {
                words.extend(tokens(&phrase));
            }
        }
        let field = rng.random_range(0..4);
        let mut blank = full.clone();
        let present = |p: &str| {
            let t = tokens(p);
            !t.is_empty() && words.windows(t.len()).any(|w| w == t.as_slice())
        };
        let (cleared, in_sentence) = match field {
            0 => (std::mem::take(&mut blank.form), present(&full.form)),
            1 => (std::mem::take(&mut blank.route), present(&full.route)),
            2 => (
                std::mem::take(&mut blank.frequency),
                present(&full.frequency),
            ),
            _ => {
                blank.dose_unit.clear();
                (
                    std::mem::take(&mut blank.dose_value),
                    present(&format!("{} {}", full.dose_value, full.dose_unit)),
                )
            }
        };
        let _ = cleared;
        let before = score_sentence(&blank, &words, &synonyms).0;
        let after = score_sentence(&full, &words, &synonyms).0;
        if after < before || (in_sentence && after != before + 1) {
            violations += 1;
        }
        let mut longer = words.clone();
        longer.extend(tokens("patient tolerated well"));
        if score_sentence(&full, &longer, &synonyms).0 < after {
            violations += 1;
        }
    }
    outcome(
        scores_ok && picks_five && rejects && violations == 0,
        format!(
            "line scores as designed: {scores_ok}, 5-point line chosen: {picks_five}, sub-threshold lines rejected: {rejects}, monotonicity violations: {violations}/1000"
        ),
    )
}

// -------------------------------------------------------------- end to end

fn cli(args: &[&str]) -> i32 {
    let mut argv = vec!["medslot", "--quiet", "--seed", "3"];
    argv.extend_from_slice(args);
    medslot::cli::run(argv)
}

fn well_formed(report: &Path) -> Result<f64, String> {
    let text = fs::read_to_string(report).map_err(|e| e.to_string())?;
    let json: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    for label in SlotLabel::ALL {
        for key in ["p", "r", "f1"] {
            let v = json[label.code()][key]
                .as_f64()
                .ok_or(format!("missing {}.{key}", label.code()))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{}.{key} = {v}", label.code()));
            }
        }
    }
    json["macro_f1"]
        .as_f64()
        .filter(|v| (0.0..=1.0).contains(v))
        .ok_or("bad macro_f1".into())
}

fn criterion_end_to_end() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let d = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    let steps: Vec<(&str, Vec<String>)> = vec![
        (
            "synth",
            vec![
                "synth".into(),
                "--docs".into(),
                "30".into(),
                "--out".into(),
                d("synth"),
            ],
        ),
        (
            "convert",
            vec![
                "convert".into(),
                "--docs".into(),
                d("synth/docs"),
                "--annotations".into(),
                d("synth/annotations"),
                "--out".into(),
                d("pairs.jsonl"),
            ],
        ),
        (
            "bpe learn",
            vec![
                "bpe".into(),
                "learn".into(),
                "--in".into(),
                d("pairs.jsonl"),
                "--merges".into(),
                "300".into(),
                "--out".into(),
                d("codes.bpe"),
            ],
        ),
        (
            "bpe apply",
            vec![
                "bpe".into(),
                "apply".into(),
                "--codes".into(),
                d("codes.bpe"),
                "--in".into(),
                d("pairs.jsonl"),
                "--out".into(),
                d("pairs.bpe.jsonl"),
            ],
        ),
        (
            "train",
            vec![
                "train".into(),
                "--pairs".into(),
                d("pairs.jsonl"),
                "--val".into(),
                d("pairs.jsonl"),
                "--bpe".into(),
                d("codes.bpe"),
                "--epochs".into(),
                SMOKE_EPOCHS.to_string(),
                "--out".into(),
                d("model.ckpt"),
            ],
        ),
        (
            "predict",
            vec![
                "predict".into(),
                "--model".into(),
                d("model.ckpt"),
                "--in".into(),
                d("pairs.jsonl"),
                "--out".into(),
                d("pred.jsonl"),
            ],
        ),
        (
            "evaluate",
            vec![
                "evaluate".into(),
                "--pred".into(),
                d("pred.jsonl"),
                "--ref".into(),
                d("pairs.jsonl"),
                "--out".into(),
                d("report.json"),
            ],
        ),
    ];
    for (name, args) in &steps {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let code = cli(&args);
        if code != 0 {
            return outcome(false, format!("`{name}` exited with {code}"));
        }
    }
    let elapsed = start.elapsed();
    match well_formed(&dir.path().join("report.json")) {
        Ok(m) => outcome(
            elapsed < Duration::from_secs(900),
            format!(
                "7 steps exit 0, report well-formed (macro F1 {m:.3}), {:.0}s",
                elapsed.as_secs_f64()
            ),
        ),
        Err(e) => outcome(false, format!("malformed report: {e}")),
    }
}

/// Epochs of the smoke run; the architecture is the default one.
const SMOKE_EPOCHS: usize = 10;

/// Number, name and check of one criterion.
type Criterion = (&'static str, &'static str, fn() -> Outcome);

fn main() {
    // cargo passes libtest flags; a name filter selects criteria by number
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let criteria: [Criterion; 8] = [
        ("1", "gradient check", criterion_gradients),
        ("2", "bpe round trip", criterion_bpe),
        ("3", "evaluator oracle", criterion_evaluator),
        ("4", "published macro mean", criterion_macro_mean),
        ("5", "supervised overfit", criterion_overfit),
        ("6", "semi-supervised", criterion_semi),
        ("7", "distant matcher", criterion_matcher),
        ("8", "end to end", criterion_end_to_end),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| f == id) {
            continue;
        }
        let o = run();
        println!(
            "{} criterion {id} ({name}): {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        if !o.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
