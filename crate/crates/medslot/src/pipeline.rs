//! The pipeline stages behind each subcommand, on in-memory data.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use medslot_core::corpus::{
    align_events_to_sentences, linearize_frame, parse_annotation_file, parse_linearized_lenient,
    ClinicalDocument, SentencePair,
};
use medslot_core::distmatch::{filter_corpus, match_patient, PrescriptionRecord, SynonymTable};
use medslot_core::dualsemi::{train_joint, DualConfig, JointLog, TripleDataset};
use medslot_core::seq2seq::{train_supervised, ModelConfig, SeqPair, TrainingLog};
use medslot_core::slotval::{evaluate, EvalReport};
use medslot_core::subword::{count_words, decode_lenient, encode, learn_bpe, BpeModel};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::formats::{NoteLine, PairLine};

const DECODE_CHUNK: usize = 64;

/// Converts every `<id>.txt` under `docs` with its `<id>.ann` from
/// `annotations`, in file-name order. A missing annotation file is an error.
pub fn convert(docs: &Path, annotations: &Path) -> Result<Vec<SentencePair>> {
    let mut files: Vec<PathBuf> = fs::read_dir(docs)
        .map_err(|e| Error::io(docs, e))?
        .map(|entry| entry.map(|e| e.path()).map_err(|e| Error::io(docs, e)))
        .collect::<Result<_>>()?;
    files.retain(|p| p.extension().is_some_and(|x| x == "txt") && p.is_file());
    files.sort();
    let mut pairs = Vec::new();
    for path in files {
        let doc_id = path
            .file_stem()
            .unwrap_or_default()
            .to_string_lossy()
            .into_owned();
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let ann_path = annotations.join(format!("{doc_id}.ann"));
        let ann = fs::read_to_string(&ann_path).map_err(|e| Error::io(&ann_path, e))?;
        let corpus_err = |source| Error::Corpus {
            path: ann_path.clone(),
            source,
        };
        let events = parse_annotation_file(&ann).map_err(corpus_err)?;
        let doc = ClinicalDocument::from_text(doc_id, &text);
        pairs.extend(align_events_to_sentences(&doc, &events).map_err(corpus_err)?);
    }
    Ok(pairs)
}

/// Learns merges over the source and target tokens of `pairs`.
pub fn bpe_learn(pairs: &[PairLine], num_merges: usize) -> BpeModel {
    let counts = count_words(
        pairs
            .iter()
            .flat_map(|p| p.src.iter().chain(&p.tgt))
            .map(String::as_str),
    );
    learn_bpe(&counts, num_merges)
}

/// Segments both sides of every pair.
pub fn bpe_apply(model: &BpeModel, pairs: &[PairLine]) -> Vec<PairLine> {
    pairs
        .iter()
        .map(|p| PairLine {
            doc_id: p.doc_id.clone(),
            sentence_index: p.sentence_index,
            src: encode(model, &p.src),
            tgt: encode(model, &p.tgt),
        })
        .collect()
}

/// Distant supervision over a prescription table and tokenized notes,
/// grouped by patient; sentence indices count within each patient.
pub fn match_records(
    records: &[PrescriptionRecord],
    notes: &[NoteLine],
    min_score: usize,
    max_len: usize,
    dedup: bool,
    synonyms: &SynonymTable,
) -> Vec<SentencePair> {
    let mut by_patient: BTreeMap<&str, (Vec<PrescriptionRecord>, Vec<Vec<String>>)> =
        BTreeMap::new();
    for r in records {
        by_patient
            .entry(&r.patient_id)
            .or_default()
            .0
            .push(r.clone());
    }
    for n in notes {
        if let Some(entry) = by_patient.get_mut(n.patient_id.as_str()) {
            entry.1.push(n.sentence.clone());
        }
    }
    let results: Vec<_> = by_patient
        .values()
        .flat_map(|(recs, sents)| match_patient(recs, sents, min_score, synonyms))
        .collect();
    filter_corpus(&results, max_len, dedup)
}

fn seq_pairs(pairs: &[PairLine], bpe: Option<&BpeModel>) -> Vec<SeqPair> {
    pairs
        .iter()
        .map(|p| match bpe {
            Some(m) => SeqPair::new(encode(m, &p.src), encode(m, &p.tgt)),
            None => SeqPair::new(p.src.clone(), p.tgt.clone()),
        })
        .collect()
}

/// Supervised NLU training on raw pairs; with `bpe`, both sides are
/// segmented first and the codes travel with the checkpoint.
pub fn train(
    pairs: &[PairLine],
    val: &[PairLine],
    config: &ModelConfig,
    bpe: Option<BpeModel>,
) -> Result<(Checkpoint, TrainingLog)> {
    let train = seq_pairs(pairs, bpe.as_ref());
    let val = seq_pairs(val, bpe.as_ref());
    let (model, log) = train_supervised(&train, &val, config, 1.0)?;
    Ok((Checkpoint { model, bpe }, log))
}

/// Joint NLU/NLG training; returns the NLU and NLG checkpoints.
pub fn train_semi(
    paired: &[PairLine],
    text: &[Vec<String>],
    frames: &[Vec<String>],
    val: &[PairLine],
    cfg: &DualConfig,
    bpe: Option<BpeModel>,
) -> Result<(Checkpoint, Checkpoint, JointLog)> {
    let seg = |t: &Vec<String>| match &bpe {
        Some(m) => encode(m, t),
        None => t.clone(),
    };
    let data = TripleDataset {
        paired: seq_pairs(paired, bpe.as_ref()),
        unpaired_text: text.iter().map(seg).collect(),
        unpaired_frames: frames.iter().map(seg).collect(),
    };
    let val = seq_pairs(val, bpe.as_ref());
    let (nlu, nlg, log) = train_joint(&data, &val, cfg)?;
    Ok((
        Checkpoint {
            model: nlu,
            bpe: bpe.clone(),
        },
        Checkpoint { model: nlg, bpe },
        log,
    ))
}

/// Decodes an NLU model over raw source sentences. Output frames are
/// repaired leniently and re-linearized.
pub fn predict(ckpt: &Checkpoint, inputs: &[PairLine]) -> Result<Vec<PairLine>> {
    let sources: Vec<Vec<usize>> = inputs
        .iter()
        .map(|p| {
            let src = match &ckpt.bpe {
                Some(m) => encode(m, &p.src),
                None => p.src.clone(),
            };
            ckpt.model.src_vocab.encode(&src)
        })
        .collect();
    let mut decoded = Vec::with_capacity(sources.len());
    for chunk in sources.chunks(DECODE_CHUNK) {
        let refs: Vec<&[usize]> = chunk.iter().map(Vec::as_slice).collect();
        decoded.extend(ckpt.model.greedy_decode_batch(&refs)?);
    }
    Ok(inputs
        .iter()
        .zip(decoded)
        .map(|(p, out)| {
            let pieces = ckpt.model.tgt_vocab.decode(&out);
            let tokens = if ckpt.bpe.is_some() {
                decode_lenient(&pieces)
            } else {
                pieces
            };
            PairLine {
                doc_id: p.doc_id.clone(),
                sentence_index: p.sentence_index,
                src: p.src.clone(),
                tgt: linearize_frame(&parse_linearized_lenient(&tokens)),
            }
        })
        .collect())
}

pub fn evaluate_pairs(pred: &[SentencePair], reference: &[SentencePair]) -> Result<EvalReport> {
    Ok(evaluate(pred, reference)?)
}
