//! On-disk formats: JSON-lines pairs, notes and unpaired data, the
//! prescription CSV, BPE merges files, training logs and reports.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use medslot_core::corpus::{linearize_frame, parse_linearized, SentencePair, SlotLabel};
use medslot_core::distmatch::PrescriptionRecord;
use medslot_core::dualsemi::JointLog;
use medslot_core::seq2seq::TrainingLog;
use medslot_core::slotval::EvalReport;
use medslot_core::subword::BpeModel;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};

pub const MERGES_HEADER: &str = "#bpe-v1";

/// Writes through a temporary file in the destination directory and renames
/// it into place, so a failed write never leaves a partial file.
pub fn write_atomic(
    path: &Path,
    fill: impl FnOnce(&mut dyn Write) -> std::io::Result<()>,
) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        fill(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// One line of a pairs file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairLine {
    pub doc_id: String,
    pub sentence_index: usize,
    pub src: Vec<String>,
    pub tgt: Vec<String>,
}

impl PairLine {
    pub fn from_pair(pair: &SentencePair) -> Self {
        Self {
            doc_id: pair.doc_id.clone(),
            sentence_index: pair.sentence_index,
            src: pair.source_tokens.clone(),
            tgt: linearize_frame(&pair.target),
        }
    }
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item =
            serde_json::from_str(line).map_err(|e| Error::format(path, i + 1, e.to_string()))?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    write_atomic(path, |w| {
        for item in items {
            serde_json::to_writer(&mut *w, item)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })
}

/// Reads raw pair lines, checking that every source is non-empty.
pub fn read_pair_lines(path: &Path) -> Result<Vec<PairLine>> {
    let lines: Vec<PairLine> = read_jsonl(path)?;
    if let Some(i) = lines.iter().position(|l| l.src.is_empty()) {
        return Err(Error::format(path, i + 1, "empty `src`"));
    }
    Ok(lines)
}

/// Reads pairs and parses every target as a linearized frame.
pub fn read_pairs(path: &Path) -> Result<Vec<SentencePair>> {
    let lines = read_pair_lines(path)?;
    lines
        .into_iter()
        .enumerate()
        .map(|(i, l)| {
            let target =
                parse_linearized(&l.tgt).map_err(|e| Error::format(path, i + 1, e.to_string()))?;
            Ok(SentencePair {
                doc_id: l.doc_id,
                sentence_index: l.sentence_index,
                source_tokens: l.src,
                target,
            })
        })
        .collect()
}

pub fn write_pairs(path: &Path, pairs: &[SentencePair]) -> Result<()> {
    let lines: Vec<PairLine> = pairs.iter().map(PairLine::from_pair).collect();
    write_jsonl(path, &lines)
}

/// One sentence of a patient's notes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoteLine {
    pub patient_id: String,
    pub sentence: Vec<String>,
}

/// A line of an unpaired file: text is read from `src` (or `sentence`),
/// frames from `tgt`; other fields are ignored.
#[derive(Debug, Deserialize)]
struct UnpairedLine {
    src: Option<Vec<String>>,
    sentence: Option<Vec<String>>,
    tgt: Option<Vec<String>>,
}

pub fn read_unpaired_text(path: &Path) -> Result<Vec<Vec<String>>> {
    let lines: Vec<UnpairedLine> = read_jsonl(path)?;
    lines
        .into_iter()
        .enumerate()
        .map(|(i, l)| match l.src.or(l.sentence) {
            Some(t) if !t.is_empty() => Ok(t),
            _ => Err(Error::format(
                path,
                i + 1,
                "expected a non-empty `src` or `sentence`",
            )),
        })
        .collect()
}

/// Frames of an unpaired file, validated and re-linearized.
pub fn read_unpaired_frames(path: &Path) -> Result<Vec<Vec<String>>> {
    let lines: Vec<UnpairedLine> = read_jsonl(path)?;
    lines
        .into_iter()
        .enumerate()
        .map(|(i, l)| {
            let tgt = l
                .tgt
                .ok_or_else(|| Error::format(path, i + 1, "missing `tgt`"))?;
            let frame =
                parse_linearized(&tgt).map_err(|e| Error::format(path, i + 1, e.to_string()))?;
            Ok(linearize_frame(&frame))
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordRow {
    patient_id: String,
    drug: String,
    dose_value: String,
    dose_unit: String,
    form: String,
    route: String,
    frequency: String,
}

const RECORD_HEADER: [&str; 7] = [
    "patient_id",
    "drug",
    "dose_value",
    "dose_unit",
    "form",
    "route",
    "frequency",
];

pub fn read_records(path: &Path) -> Result<Vec<PrescriptionRecord>> {
    let text = read_text(path)?;
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::format(path, 1, e.to_string()))?;
    if header.iter().collect::<Vec<_>>() != RECORD_HEADER {
        return Err(Error::format(
            path,
            1,
            format!("expected header `{}`", RECORD_HEADER.join(",")),
        ));
    }
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<RecordRow>().enumerate() {
        let row = row.map_err(|e| Error::format(path, i + 2, e.to_string()))?;
        let record = PrescriptionRecord {
            patient_id: row.patient_id,
            drug: row.drug,
            dose_value: row.dose_value,
            dose_unit: row.dose_unit,
            form: row.form,
            route: row.route,
            frequency: row.frequency,
        };
        record
            .validate()
            .map_err(|e| Error::format(path, i + 2, e.to_string()))?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_records(path: &Path, records: &[PrescriptionRecord]) -> Result<()> {
    write_atomic(path, |w| {
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        writer.write_record(RECORD_HEADER)?;
        for r in records {
            writer.serialize(RecordRow {
                patient_id: r.patient_id.clone(),
                drug: r.drug.clone(),
                dose_value: r.dose_value.clone(),
                dose_unit: r.dose_unit.clone(),
                form: r.form.clone(),
                route: r.route.clone(),
                frequency: r.frequency.clone(),
            })?;
        }
        writer.flush()
    })
}

pub fn merges_to_string(model: &BpeModel) -> String {
    let mut out = format!("{MERGES_HEADER} {}\n", model.merges().len());
    for (l, r) in model.merges() {
        out.push_str(l);
        out.push(' ');
        out.push_str(r);
        out.push('\n');
    }
    out
}

/// Parses a merges file; `Err((line, reason))` on malformed input.
pub fn parse_merges(text: &str) -> std::result::Result<BpeModel, (usize, String)> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    let count: usize = header
        .strip_prefix(MERGES_HEADER)
        .and_then(|n| n.trim().parse().ok())
        .ok_or((1, format!("expected `{MERGES_HEADER} <num_merges>` header")))?;
    let mut merges = Vec::with_capacity(count);
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(' ');
        match (parts.next(), parts.next(), parts.next()) {
            (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => {
                merges.push((l.to_string(), r.to_string()))
            }
            _ => return Err((i + 2, "expected `left right`".into())),
        }
    }
    if merges.len() != count {
        return Err((
            1,
            format!("header announces {count} merges, found {}", merges.len()),
        ));
    }
    BpeModel::from_merges(merges).map_err(|e| (1, e.to_string()))
}

pub fn read_merges(path: &Path) -> Result<BpeModel> {
    parse_merges(&read_text(path)?).map_err(|(line, reason)| Error::format(path, line, reason))
}

pub fn write_merges(path: &Path, model: &BpeModel) -> Result<()> {
    let text = merges_to_string(model);
    write_atomic(path, |w| w.write_all(text.as_bytes()))
}

pub fn write_training_log(path: &Path, log: &TrainingLog) -> Result<()> {
    write_atomic(path, |w| {
        writeln!(w, "epoch,train_loss,val_loss")?;
        for e in &log.epochs {
            writeln!(w, "{},{},{}", e.epoch, e.train_loss, e.val_loss)?;
        }
        Ok(())
    })
}

pub fn write_joint_log(path: &Path, log: &JointLog) -> Result<()> {
    write_atomic(path, |w| {
        writeln!(
            w,
            "epoch,nlu_train,nlg_train,nlg_unpaired,nlu_unpaired,nlu_val,nlg_val"
        )?;
        for e in &log.epochs {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                e.epoch,
                e.nlu_train,
                e.nlg_train,
                e.nlg_unpaired,
                e.nlu_unpaired,
                e.nlu_val,
                e.nlg_val
            )?;
        }
        Ok(())
    })
}

/// `{slot: {p, r, f1, tp, fp, fn}, macro_f1, pairs}`.
pub fn report_json(report: &EvalReport) -> serde_json::Value {
    let mut obj = serde_json::Map::new();
    for label in SlotLabel::ALL {
        let c = report.scores.get(label);
        obj.insert(
            label.code().to_string(),
            json!({
                "p": c.precision(),
                "r": c.recall(),
                "f1": c.f1(),
                "tp": c.true_positive,
                "fp": c.false_positive,
                "fn": c.false_negative,
            }),
        );
    }
    obj.insert("macro_f1".into(), json!(report.macro_f1()));
    obj.insert("pairs".into(), json!(report.pairs));
    serde_json::Value::Object(obj)
}

pub fn write_report(path: &Path, report: &EvalReport) -> Result<()> {
    let value = report_json(report);
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, &value)?;
        w.write_all(b"\n")
    })
}
