use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::{CorpusError, EventEntry, MedicationEvent, Position, SlotLabel};

const NOT_MENTIONED: &str = "nm";

/// Parses an annotation file: one medication event per non-blank line,
/// entries `label="value" L:C L:C` joined by `||`. Entries whose value is
/// `nm` (not mentioned) are dropped.
pub fn parse_annotation_file(text: &str) -> Result<Vec<MedicationEvent>, CorpusError> {
    let mut events = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        events.push(parse_event_line(line, idx + 1)?);
    }
    Ok(events)
}

fn parse_event_line(line: &str, line_no: usize) -> Result<MedicationEvent, CorpusError> {
    let malformed = |reason: String| CorpusError::MalformedEntry { line_no, reason };
    let mut event = MedicationEvent::default();
    for raw in line.split("||") {
        let entry = raw.trim();
        let (code, rest) = entry
            .split_once('=')
            .ok_or_else(|| malformed(format!("entry `{entry}` has no `=`")))?;
        let label = SlotLabel::from_code(code.trim())
            .ok_or_else(|| malformed(format!("unknown slot label `{}`", code.trim())))?;
        let rest = rest.trim_start();
        let quoted = rest
            .strip_prefix('"')
            .ok_or_else(|| malformed(format!("value of `{label}` is not quoted")))?;
        let close = quoted
            .rfind('"')
            .ok_or_else(|| malformed(format!("value of `{label}` has no closing quote")))?;
        let value = &quoted[..close];
        let offsets = quoted[close + 1..].trim();
        if value == NOT_MENTIONED {
            if !offsets.is_empty() {
                return Err(malformed(format!("`{label}=\"nm\"` carries offsets")));
            }
            continue;
        }
        if value.trim().is_empty() {
            return Err(malformed(format!("empty value for `{label}`")));
        }
        let mut parts = offsets.split_whitespace();
        let (start, end) = match (parts.next(), parts.next(), parts.next()) {
            (Some(s), Some(e), None) => (
                parse_position(s).ok_or_else(|| malformed(format!("bad offset `{s}`")))?,
                parse_position(e).ok_or_else(|| malformed(format!("bad offset `{e}`")))?,
            ),
            _ => {
                return Err(malformed(format!(
                    "`{label}` needs exactly two `line:char` offsets, got `{offsets}`"
                )))
            }
        };
        if start > end {
            return Err(CorpusError::OffsetOrder {
                line_no,
                label,
                start,
                end,
            });
        }
        event.entries.push(EventEntry {
            label,
            value: value.to_string(),
            start,
            end,
        });
    }
    Ok(event)
}

fn parse_position(text: &str) -> Option<Position> {
    let (line, ch) = text.split_once(':')?;
    let digits = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
    if !digits(line) || !digits(ch) {
        return None;
    }
    Some(Position::new(line.parse().ok()?, ch.parse().ok()?))
}
