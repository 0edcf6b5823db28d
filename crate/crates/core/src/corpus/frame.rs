//! Slot labels, slot frames and their canonical token linearization.
//!
//! A frame is the unaligned semantic side of a sentence: a bag of
//! `(label, value)` entries with no positional information. Frames are
//! linearized into a flat token sequence for the decoder:
//!
//! ```text
//! m= tylenol ; do= 650 mg ; mo= po
//! ```
//!
//! An empty frame linearizes to the single token `<empty>`.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

/// Token separating two slot groups in a linearized frame.
pub const GROUP_SEPARATOR: &str = ";";
/// Token standing for a frame without entries.
pub const EMPTY_FRAME: &str = "<empty>";
const ESCAPE: char = '\\';

/// One of the six medication slots. The declaration order is the
/// canonical order used everywhere frames are sorted or printed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SlotLabel {
    /// Medication name.
    Name,
    /// Dosage.
    Dose,
    /// Mode (route) of administration.
    Mode,
    /// Frequency.
    Frequency,
    /// Duration.
    Duration,
    /// Reason for administration.
    Reason,
}

impl SlotLabel {
    pub const ALL: [SlotLabel; 6] = [
        SlotLabel::Name,
        SlotLabel::Dose,
        SlotLabel::Mode,
        SlotLabel::Frequency,
        SlotLabel::Duration,
        SlotLabel::Reason,
    ];

    /// Short surface form used in annotation files and reports.
    pub fn code(self) -> &'static str {
        match self {
            SlotLabel::Name => "m",
            SlotLabel::Dose => "do",
            SlotLabel::Mode => "mo",
            SlotLabel::Frequency => "f",
            SlotLabel::Duration => "du",
            SlotLabel::Reason => "r",
        }
    }

    /// Label token opening a group in a linearized frame, e.g. `do=`.
    pub fn token(self) -> &'static str {
        match self {
            SlotLabel::Name => "m=",
            SlotLabel::Dose => "do=",
            SlotLabel::Mode => "mo=",
            SlotLabel::Frequency => "f=",
            SlotLabel::Duration => "du=",
            SlotLabel::Reason => "r=",
        }
    }

    pub fn from_code(code: &str) -> Option<SlotLabel> {
        SlotLabel::ALL.into_iter().find(|l| l.code() == code)
    }

    pub fn from_token(token: &str) -> Option<SlotLabel> {
        SlotLabel::ALL.into_iter().find(|l| l.token() == token)
    }

    /// Position in [`SlotLabel::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for SlotLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for SlotLabel {
    type Err = FrameError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SlotLabel::from_code(s).ok_or_else(|| FrameError::UnknownLabel(s.to_string()))
    }
}

/// True for tokens that carry structure in a linearized frame, or are
/// escaped value tokens, and are never split by subword segmentation.
pub fn is_protected_token(token: &str) -> bool {
    token == GROUP_SEPARATOR
        || token == EMPTY_FRAME
        || token.starts_with(ESCAPE)
        || SlotLabel::from_token(token).is_some()
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FrameError {
    #[error("empty value for slot `{0}`")]
    EmptyValue(SlotLabel),
    #[error("unknown slot label `{0}`")]
    UnknownLabel(String),
    #[error("empty linearized frame")]
    EmptyInput,
    #[error("malformed linearized frame at token {position}: {reason}")]
    Malformed {
        position: usize,
        reason: &'static str,
    },
}

/// Unordered bag of slot entries attached to one sentence.
///
/// Entries are kept sorted by label (canonical order) and then by value,
/// so two frames holding the same multiset of entries compare equal.
/// Values are stored whitespace-normalized: trimmed, with internal runs
/// of whitespace collapsed to a single space.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SlotFrame {
    entries: Vec<(SlotLabel, String)>,
}

impl SlotFrame {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries<I, S>(entries: I) -> Result<Self, FrameError>
    where
        I: IntoIterator<Item = (SlotLabel, S)>,
        S: AsRef<str>,
    {
        let mut frame = SlotFrame::new();
        for (label, value) in entries {
            frame.insert(label, value.as_ref())?;
        }
        Ok(frame)
    }

    /// Adds an entry, keeping canonical order. Duplicate labels are allowed.
    pub fn insert(&mut self, label: SlotLabel, value: &str) -> Result<(), FrameError> {
        let value = collapse_whitespace(value);
        if value.is_empty() {
            return Err(FrameError::EmptyValue(label));
        }
        let entry = (label, value);
        let pos = self.entries.partition_point(|e| *e <= entry);
        self.entries.insert(pos, entry);
        Ok(())
    }

    pub fn entries(&self) -> &[(SlotLabel, String)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn values(&self, label: SlotLabel) -> impl Iterator<Item = &str> + '_ {
        self.entries
            .iter()
            .filter(move |(l, _)| *l == label)
            .map(|(_, v)| v.as_str())
    }

    pub fn labels(&self) -> impl Iterator<Item = SlotLabel> + '_ {
        self.entries.iter().map(|(l, _)| *l)
    }
}

impl fmt::Display for SlotFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tokens = linearize_frame(self);
        f.write_str(&tokens.join(" "))
    }
}

pub(crate) fn collapse_whitespace(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

fn escape_value_token(token: &str) -> String {
    if is_protected_token(token) {
        let mut out = String::with_capacity(token.len() + 1);
        out.push(ESCAPE);
        out.push_str(token);
        out
    } else {
        token.to_string()
    }
}

fn unescape_value_token(token: &str) -> &str {
    token.strip_prefix(ESCAPE).unwrap_or(token)
}

/// Canonical token sequence for a frame: `<label>= value tokens` groups in
/// canonical order separated by `;`, or `<empty>` for an empty frame.
///
/// Value tokens that collide with a structural token (or begin with a
/// backslash) are prefixed with `\` so the mapping stays invertible.
pub fn linearize_frame(frame: &SlotFrame) -> Vec<String> {
    if frame.is_empty() {
        return alloc::vec![EMPTY_FRAME.to_string()];
    }
    let mut out = Vec::new();
    for (i, (label, value)) in frame.entries.iter().enumerate() {
        if i > 0 {
            out.push(GROUP_SEPARATOR.to_string());
        }
        out.push(label.token().to_string());
        out.extend(value.split(' ').map(escape_value_token));
    }
    out
}

/// Strict inverse of [`linearize_frame`].
pub fn parse_linearized<S: AsRef<str>>(tokens: &[S]) -> Result<SlotFrame, FrameError> {
    match tokens {
        [] => return Err(FrameError::EmptyInput),
        [only] if only.as_ref() == EMPTY_FRAME => return Ok(SlotFrame::new()),
        _ => {}
    }
    let mut frame = SlotFrame::new();
    let mut current: Option<(SlotLabel, Vec<&str>)> = None;
    for (position, token) in tokens.iter().enumerate() {
        let token = token.as_ref();
        if token == GROUP_SEPARATOR {
            match current.take() {
                Some((label, values)) if !values.is_empty() => {
                    frame.insert(label, &values.join(" "))?;
                }
                _ => {
                    return Err(FrameError::Malformed {
                        position,
                        reason: "separator without a preceding group",
                    })
                }
            }
        } else if let Some(label) = SlotLabel::from_token(token) {
            if current.is_some() {
                return Err(FrameError::Malformed {
                    position,
                    reason: "label token inside a group",
                });
            }
            current = Some((label, Vec::new()));
        } else if token == EMPTY_FRAME {
            return Err(FrameError::Malformed {
                position,
                reason: "`<empty>` inside a non-empty frame",
            });
        } else {
            match current.as_mut() {
                Some((_, values)) => values.push(unescape_value_token(token)),
                None => {
                    return Err(FrameError::Malformed {
                        position,
                        reason: "value token before any label",
                    })
                }
            }
        }
    }
    match current {
        Some((label, values)) if !values.is_empty() => frame.insert(label, &values.join(" "))?,
        _ => {
            return Err(FrameError::Malformed {
                position: tokens.len(),
                reason: "frame ends without a value",
            })
        }
    }
    Ok(frame)
}

/// Best-effort parse for decoder output: stray value tokens, empty groups
/// and misplaced structural tokens are skipped instead of rejected.
pub fn parse_linearized_lenient<S: AsRef<str>>(tokens: &[S]) -> SlotFrame {
    let mut frame = SlotFrame::new();
    let mut current: Option<(SlotLabel, Vec<&str>)> = None;
    let flush = |current: &mut Option<(SlotLabel, Vec<&str>)>, frame: &mut SlotFrame| {
        if let Some((label, values)) = current.take() {
            if !values.is_empty() {
                // values are non-empty tokens, so insertion cannot fail
                let _ = frame.insert(label, &values.join(" "));
            }
        }
    };
    for token in tokens {
        let token = token.as_ref();
        if token == GROUP_SEPARATOR || token == EMPTY_FRAME {
            flush(&mut current, &mut frame);
        } else if let Some(label) = SlotLabel::from_token(token) {
            flush(&mut current, &mut frame);
            current = Some((label, Vec::new()));
        } else if let Some((_, values)) = current.as_mut() {
            let value = unescape_value_token(token);
            if !value.trim().is_empty() {
                values.push(value);
            }
        }
    }
    flush(&mut current, &mut frame);
    frame
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn toks(s: &str) -> Vec<&str> {
        s.split(' ').collect()
    }

    #[test]
    fn linearizes_in_canonical_order() {
        let frame =
            SlotFrame::from_entries([(SlotLabel::Name, "tylenol"), (SlotLabel::Dose, "650 mg")])
                .unwrap();
        assert_eq!(linearize_frame(&frame), toks("m= tylenol ; do= 650 mg"));

        let frame =
            SlotFrame::from_entries([(SlotLabel::Reason, "pain"), (SlotLabel::Name, "tylenol")])
                .unwrap();
        assert_eq!(linearize_frame(&frame), toks("m= tylenol ; r= pain"));
    }

    #[test]
    fn empty_frame_is_single_token() {
        assert_eq!(linearize_frame(&SlotFrame::new()), vec!["<empty>"]);
        assert_eq!(parse_linearized(&["<empty>"]).unwrap(), SlotFrame::new());
    }

    #[test]
    fn duplicate_labels_sorted_by_value() {
        let frame = SlotFrame::from_entries([
            (SlotLabel::Name, "lasix"),
            (SlotLabel::Dose, "20 mg"),
            (SlotLabel::Name, "aspirin"),
        ])
        .unwrap();
        assert_eq!(
            linearize_frame(&frame),
            toks("m= aspirin ; m= lasix ; do= 20 mg")
        );
    }

    #[test]
    fn values_are_whitespace_normalized() {
        let mut frame = SlotFrame::new();
        frame.insert(SlotLabel::Dose, "  650 \t mg ").unwrap();
        assert_eq!(
            frame.values(SlotLabel::Dose).collect::<Vec<_>>(),
            ["650 mg"]
        );
        assert_eq!(
            frame.insert(SlotLabel::Name, "   "),
            Err(FrameError::EmptyValue(SlotLabel::Name))
        );
    }

    #[test]
    fn structural_tokens_inside_values_are_escaped() {
        let frame = SlotFrame::from_entries([(SlotLabel::Reason, "a ; b m= \\x <empty>")]).unwrap();
        let tokens = linearize_frame(&frame);
        assert_eq!(tokens, toks("r= a \\; b \\m= \\\\x \\<empty>"));
        assert_eq!(parse_linearized(&tokens).unwrap(), frame);
    }

    #[test]
    fn strict_parse_rejects_malformed() {
        assert_eq!(parse_linearized::<&str>(&[]), Err(FrameError::EmptyInput));
        assert!(parse_linearized(&toks("tylenol m= x")).is_err());
        assert!(parse_linearized(&toks("m= ; do= 5")).is_err());
        assert!(parse_linearized(&toks("m= x do= 5")).is_err());
        assert!(parse_linearized(&toks("m= x ;")).is_err());
    }

    #[test]
    fn lenient_parse_skips_junk() {
        let frame = parse_linearized_lenient(&toks("junk m= lasix ; ; do= f= daily <empty>"));
        let expected =
            SlotFrame::from_entries([(SlotLabel::Name, "lasix"), (SlotLabel::Frequency, "daily")])
                .unwrap();
        assert_eq!(frame, expected);
    }

    #[test]
    fn label_codes_round_trip() {
        for label in SlotLabel::ALL {
            assert_eq!(label.code().parse::<SlotLabel>().unwrap(), label);
            assert_eq!(SlotLabel::from_token(label.token()), Some(label));
        }
        assert!(SlotLabel::Name < SlotLabel::Dose && SlotLabel::Duration < SlotLabel::Reason);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn label() -> impl Strategy<Value = SlotLabel> {
            (0usize..6).prop_map(|i| SlotLabel::ALL[i])
        }

        fn value() -> impl Strategy<Value = String> {
            prop::collection::vec(
                prop_oneof![
                    "[a-z0-9]{1,6}",
                    Just(";".to_string()),
                    Just("m=".to_string()),
                    Just("<empty>".to_string()),
                    Just("\\q".to_string()),
                ],
                1..4,
            )
            .prop_map(|ws| ws.join(" "))
        }

        proptest! {
            #[test]
            fn linearize_round_trips(entries in prop::collection::vec((label(), value()), 0..6)) {
                let frame = SlotFrame::from_entries(entries).unwrap();
                let tokens = linearize_frame(&frame);
                prop_assert_eq!(parse_linearized(&tokens).unwrap(), frame.clone());
                prop_assert_eq!(parse_linearized_lenient(&tokens), frame);
            }
        }
    }
}
