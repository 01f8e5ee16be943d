//! Textual checkpoints.
//!
//! ```text
//! rawbmamba-checkpoint 1
//! seed <u64>
//! config-begin
//! <TOML config>
//! config-end
//! param <name> <d0,d1,...> <values...>
//! end
//! ```
//!
//! Values use shortest round-trip formatting, so save → load is bitwise.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::config::TrainConfig;
use super::model::RawBMamba;
use crate::error::{Error, Result};
use crate::layers::Parameterized;

pub const CHECKPOINT_MAGIC: &str = "rawbmamba-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn render_checkpoint(model: &RawBMamba) -> String {
    let mut s = format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\nseed {}\nconfig-begin\n", model.config.seed);
    s.push_str(&model.config.to_toml_string());
    s.push_str("config-end\n");
    model.visit_params("", &mut |name, t| {
        let shape: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        s.push_str(&format!("param {name} {}", shape.join(",")));
        for v in t.data() {
            s.push_str(&format!(" {v:?}"));
        }
        s.push('\n');
    });
    s.push_str("end\n");
    s
}

pub fn save_checkpoint(model: &RawBMamba, path: &Path) -> Result<()> {
    fs::write(path, render_checkpoint(model))?;
    Ok(())
}

pub fn parse_checkpoint(text: &str) -> Result<RawBMamba> {
    let bad = |msg: String| Error::Checkpoint(msg);
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    let mut head = header.split_whitespace();
    if head.next() != Some(CHECKPOINT_MAGIC) {
        return Err(bad("not a checkpoint file".into()));
    }
    let version: u32 = head
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| bad("missing checkpoint version".into()))?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("checkpoint version {version}, this build reads version {CHECKPOINT_VERSION}")));
    }
    let seed: u64 = lines
        .next()
        .and_then(|l| l.strip_prefix("seed "))
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| bad("missing seed line".into()))?;
    if lines.next() != Some("config-begin") {
        return Err(bad("missing config block".into()));
    }
    let mut toml_text = String::new();
    loop {
        match lines.next() {
            Some("config-end") => break,
            Some(l) => {
                toml_text.push_str(l);
                toml_text.push('\n');
            }
            None => return Err(bad("unterminated config block".into())),
        }
    }
    let config = TrainConfig::from_toml_str(&toml_text).map_err(|e| bad(format!("embedded config: {e}")))?;
    if config.seed != seed {
        return Err(bad(format!("seed line {seed} disagrees with config seed {}", config.seed)));
    }

    let mut values: HashMap<String, (Vec<usize>, Vec<f64>)> = HashMap::new();
    let mut ended = false;
    for line in lines {
        if line == "end" {
            ended = true;
            break;
        }
        let mut cols = line.split(' ');
        if cols.next() != Some("param") {
            return Err(bad(format!("unexpected line `{}`", line.chars().take(40).collect::<String>())));
        }
        let name = cols.next().ok_or_else(|| bad("param line without a name".into()))?.to_string();
        let shape = cols
            .next()
            .ok_or_else(|| bad(format!("`{name}` has no shape")))?
            .split(',')
            .map(|d| d.parse::<usize>().map_err(|_| bad(format!("`{name}` has a bad shape"))))
            .collect::<Result<Vec<_>>>()?;
        let data = cols
            .map(|v| v.parse::<f64>().map_err(|_| bad(format!("`{name}` has a bad value `{v}`"))))
            .collect::<Result<Vec<_>>>()?;
        values.insert(name, (shape, data));
    }
    if !ended {
        return Err(bad("truncated checkpoint (no end marker)".into()));
    }

    let mut model = RawBMamba::new(&config)?;
    let mut failure = None;
    let mut used = 0;
    model.visit_params_mut("", &mut |name, t| {
        if failure.is_some() {
            return;
        }
        match values.get(name) {
            None => failure = Some(bad(format!("missing parameter `{name}`"))),
            Some((shape, data)) if shape.as_slice() != t.shape() || data.len() != t.numel() => {
                failure = Some(bad(format!("parameter `{name}` has shape {shape:?}, model expects {:?}", t.shape())))
            }
            Some((_, data)) => {
                used += 1;
                *t = t.with_data(data.clone()).expect("shape checked");
            }
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if used != values.len() {
        return Err(bad(format!("{} parameters in the file are unknown to this model", values.len() - used)));
    }
    Ok(model)
}

pub fn load_checkpoint(path: &Path) -> Result<RawBMamba> {
    parse_checkpoint(&fs::read_to_string(path)?)
}
