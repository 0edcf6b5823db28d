use alloc::string::String;
use alloc::vec::Vec;

use super::segment::{segment_sentences, Sentence};
use super::tokenize::tokenize;
use super::{ClinicalDocument, CorpusError, MedicationEvent, Position, SentencePair, SlotFrame};

/// Converts a document and its events into one unaligned pair per sentence.
///
/// Each slot entry goes to the sentence containing its start offset (an
/// offset falling between sentences goes to the next one). The value is
/// re-tokenized with the corpus tokenizer; offsets are discarded.
pub fn align_events_to_sentences(
    doc: &ClinicalDocument,
    events: &[MedicationEvent],
) -> Result<Vec<SentencePair>, CorpusError> {
    let sentences = segment_sentences(doc);
    let line_lengths: Vec<usize> = doc.lines.iter().map(|l| l.chars().count()).collect();
    let mut frames: Vec<SlotFrame> = sentences.iter().map(|_| SlotFrame::new()).collect();

    for entry in events.iter().flat_map(|e| e.entries.iter()) {
        let out_of_range = |position: Position| CorpusError::OffsetOutOfRange {
            doc_id: doc.doc_id.clone(),
            label: entry.label,
            position,
        };
        for pos in [entry.start, entry.end] {
            let valid = pos.line >= 1
                && line_lengths
                    .get(pos.line - 1)
                    .is_some_and(|&len| pos.char < len);
            if !valid {
                return Err(out_of_range(pos));
            }
        }
        let target =
            sentence_for(&sentences, entry.start).ok_or_else(|| out_of_range(entry.start))?;
        let value: String = tokenize(&entry.value).join(" ");
        frames[target]
            .insert(entry.label, &value)
            .map_err(|_| out_of_range(entry.start))?;
    }

    Ok(sentences
        .iter()
        .zip(frames)
        .map(|(s, target)| SentencePair {
            doc_id: doc.doc_id.clone(),
            sentence_index: s.index,
            source_tokens: s.token_texts(),
            target,
        })
        .collect())
}

fn sentence_for(sentences: &[Sentence], at: Position) -> Option<usize> {
    let last = sentences.len().checked_sub(1)?;
    let found = sentences.iter().position(|s| {
        s.tokens
            .last()
            .is_some_and(|t| Position::new(t.line, t.end) >= at)
    });
    Some(found.unwrap_or(last))
}
