//! Score and key files.
//!
//! Score file: one `<utt_id> <score>` line per utterance; lines starting with
//! `#` carry metadata. Key file: one `<utt_id> <bonafide|spoof>` line per
//! utterance.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::asoftmax::{BONAFIDE, SPOOF};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Bonafide,
    Spoof,
}

impl Label {
    /// Class index used by the classifier head.
    pub fn class_index(self) -> usize {
        match self {
            Label::Bonafide => BONAFIDE,
            Label::Spoof => SPOOF,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Bonafide => "bonafide",
            Label::Spoof => "spoof",
        })
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "bonafide" => Ok(Label::Bonafide),
            "spoof" => Ok(Label::Spoof),
            other => Err(format!("unknown label `{other}`")),
        }
    }
}

/// Higher scores mean more bonafide.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub utt_id: String,
    pub label: Label,
    pub score: f64,
}

impl ScoreRecord {
    pub fn new(utt_id: impl Into<String>, label: Label, score: f64) -> Self {
        ScoreRecord { utt_id: utt_id.into(), label, score }
    }
}

/// Checks the record-set invariants: finite scores and unique ids.
pub fn validate_records(records: &[ScoreRecord]) -> Result<()> {
    let mut seen = HashSet::new();
    for r in records {
        if !r.score.is_finite() {
            return Err(Error::Input(format!("non-finite score for `{}`", r.utt_id)));
        }
        if !seen.insert(r.utt_id.as_str()) {
            return Err(Error::Input(format!("duplicate utterance id `{}`", r.utt_id)));
        }
    }
    Ok(())
}

/// Parsed score file: metadata lines (without `#`) and `(utt_id, score)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreFile {
    pub metadata: Vec<String>,
    pub scores: Vec<(String, f64)>,
}

impl ScoreFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut out = ScoreFile::default();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if let Some(meta) = line.strip_prefix('#') {
                out.metadata.push(meta.trim().to_string());
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 2 {
                return Err(Error::Parse { line: line_no, msg: format!("expected 2 columns, found {}", cols.len()) });
            }
            let score: f64 = cols[1]
                .parse()
                .map_err(|_| Error::Parse { line: line_no, msg: format!("bad score `{}`", cols[1]) })?;
            if !score.is_finite() {
                return Err(Error::Parse { line: line_no, msg: "non-finite score".into() });
            }
            out.scores.push((cols[0].to_string(), score));
        }
        Ok(out)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Scores are written in shortest round-trip form.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for m in &self.metadata {
            s.push_str(&format!("# {m}\n"));
        }
        for (id, v) in &self.scores {
            s.push_str(&format!("{id} {v:?}\n"));
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.render())?;
        Ok(())
    }
}

pub fn parse_key_file(text: &str) -> Result<Vec<(String, Label)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 2 {
            return Err(Error::Parse { line: i + 1, msg: format!("expected 2 columns, found {}", cols.len()) });
        }
        let label = cols[1].parse().map_err(|msg| Error::Parse { line: i + 1, msg })?;
        out.push((cols[0].to_string(), label));
    }
    Ok(out)
}

pub fn read_key_file(path: &Path) -> Result<Vec<(String, Label)>> {
    parse_key_file(&fs::read_to_string(path)?)
}

pub fn render_key_file(keys: &[(String, Label)]) -> String {
    keys.iter().map(|(id, l)| format!("{id} {l}\n")).collect()
}

/// Pairs every scored utterance with its key. Scores without a key, or
/// repeated ids, are input errors; keys without a score are ignored.
pub fn join_scores(scores: &ScoreFile, keys: &[(String, Label)]) -> Result<Vec<ScoreRecord>> {
    let lookup: HashMap<&str, Label> = keys.iter().map(|(id, l)| (id.as_str(), *l)).collect();
    let records = scores
        .scores
        .iter()
        .map(|(id, s)| {
            lookup
                .get(id.as_str())
                .map(|&l| ScoreRecord::new(id.clone(), l, *s))
                .ok_or_else(|| Error::Input(format!("no key for utterance `{id}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    validate_records(&records)?;
    Ok(records)
}
