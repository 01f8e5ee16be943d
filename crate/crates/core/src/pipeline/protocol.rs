//! Whitespace-separated countermeasure protocol files.
//!
//! The utterance id sits in a configurable column and the label
//! (`bonafide`/`spoof`) in the last one. Files written here use
//! `SYN <utt_id> - <attack> <label>`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::Label;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolEntry {
    pub utt_id: String,
    pub label: Label,
    /// Attack tag, `-` for bonafide or when absent.
    pub attack: String,
}

pub fn parse_protocol_str(text: &str, utt_column: usize) -> Result<Vec<ProtocolEntry>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            continue;
        }
        let line_no = i + 1;
        if cols.len() < 2 || cols.len() <= utt_column || utt_column == cols.len() - 1 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected an id in column {utt_column} and a trailing label, found {} columns", cols.len()),
            });
        }
        let label = cols[cols.len() - 1].parse().map_err(|msg| Error::Parse { line: line_no, msg })?;
        let attack = if cols.len() >= 3 { cols[cols.len() - 2] } else { "-" };
        out.push(ProtocolEntry { utt_id: cols[utt_column].to_string(), label, attack: attack.to_string() });
    }
    Ok(out)
}

pub fn parse_protocol(path: &Path, utt_column: usize) -> Result<Vec<ProtocolEntry>> {
    parse_protocol_str(&fs::read_to_string(path)?, utt_column)
}

/// Serialization read back by `parse_protocol_str(_, 1)`.
pub fn render_protocol(entries: &[ProtocolEntry]) -> String {
    entries.iter().map(|e| format!("SYN {} - {} {}\n", e.utt_id, e.attack, e.label)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn asvspoof_style_line() {
        let e = parse_protocol_str("LA_0001 X - A01 spoof\n", 0).unwrap();
        assert_eq!(e, vec![ProtocolEntry { utt_id: "LA_0001".into(), label: Label::Spoof, attack: "A01".into() }]);
        let e = parse_protocol_str("LA_0079 LA_T_1138215 - - bonafide\n", 1).unwrap();
        assert_eq!(e[0].utt_id, "LA_T_1138215");
        assert_eq!(e[0].label, Label::Bonafide);
    }

    #[test]
    fn empty_and_rejections() {
        assert!(parse_protocol_str("", 1).unwrap().is_empty());
        assert!(matches!(parse_protocol_str("a b - - bonafide\nc d - - fake\n", 1), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_protocol_str("spoof\n", 0), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn round_trip() {
        let entries = vec![
            ProtocolEntry { utt_id: "u1".into(), label: Label::Bonafide, attack: "-".into() },
            ProtocolEntry { utt_id: "u2".into(), label: Label::Spoof, attack: "AM16".into() },
        ];
        assert_eq!(parse_protocol_str(&render_protocol(&entries), 1).unwrap(), entries);
    }
}
