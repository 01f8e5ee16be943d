use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::audio::load_wav;
use super::model::RawBMamba;
use super::train::{batch_tensor, utterance_rng, Example};
use crate::error::{Error, Result};
use crate::metrics::{Label, ScoreFile};

pub const SCORE_DEFINITION: &str = "score = logit(bonafide) - logit(spoof)";

/// One scored utterance and its fused embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub utt_id: String,
    pub score: f64,
    pub embedding: Vec<f64>,
}

/// Scores in-memory waveforms; each utterance is independent of the others.
pub fn score_waves(model: &RawBMamba, items: &[(String, Vec<f64>)]) -> Result<Vec<Scored>> {
    let frozen = model.frozen();
    let mut out = Vec::with_capacity(items.len());
    for chunk in items.chunks(model.config.batch_size.max(1)) {
        let examples: Vec<Example> = chunk
            .iter()
            .map(|(id, w)| Example { utt_id: id.clone(), label: Label::Spoof, wave: w.clone() })
            .collect();
        let refs: Vec<&Example> = examples.iter().collect();
        let fused = frozen.forward(&batch_tensor(&refs)?)?;
        let dim = fused.embedding.shape()[1];
        for ((id, _), (score, emb)) in chunk.iter().zip(fused.scores().into_iter().zip(fused.embedding.data().chunks(dim))) {
            out.push(Scored { utt_id: id.clone(), score, embedding: emb.to_vec() });
        }
    }
    Ok(out)
}

/// Utterance id of a WAV path: its file stem.
pub fn utt_id_of(path: &Path) -> Result<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_string)
        .ok_or_else(|| Error::Format { path: path.to_path_buf(), msg: "cannot derive an utterance id".into() })
}

pub fn score_paths(model: &RawBMamba, paths: &[PathBuf]) -> Result<Vec<Scored>> {
    let items = paths
        .iter()
        .map(|p| {
            let id = utt_id_of(p)?;
            let wave = load_wav(p, model.config.samples, &mut utterance_rng(model.config.seed, &id))?;
            Ok((id, wave))
        })
        .collect::<Result<Vec<_>>>()?;
    score_waves(model, &items)
}

pub fn score_file(model: &RawBMamba, scored: &[Scored]) -> ScoreFile {
    ScoreFile {
        metadata: vec![
            SCORE_DEFINITION.to_string(),
            format!("preset = {}", model.config.preset),
            format!("fusion = {}", model.config.fusion),
        ],
        scores: scored.iter().map(|s| (s.utt_id.clone(), s.score)).collect(),
    }
}

/// `<utt_id> v0 v1 ...` per line.
pub fn render_embeddings(scored: &[Scored]) -> String {
    let mut s = String::new();
    for r in scored {
        s.push_str(&r.utt_id);
        for v in &r.embedding {
            let _ = write!(s, " {v:?}");
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::SeededRng;
    use crate::pipeline::config::TrainConfig;
    use crate::pipeline::synth::synth_waveform;

    fn model() -> RawBMamba {
        RawBMamba::new(&TrainConfig { samples: 2000, batch_size: 3, ..TrainConfig::tiny() }).unwrap()
    }

    #[test]
    fn empty_list_gives_empty_file() {
        let m = model();
        let scored = score_waves(&m, &[]).unwrap();
        let file = score_file(&m, &scored);
        assert!(file.scores.is_empty());
        assert_eq!(ScoreFile::parse(&file.render()).unwrap(), file);
        assert!(file.metadata.iter().any(|l| l == SCORE_DEFINITION));
    }

    #[test]
    fn scores_do_not_depend_on_order_or_batching() {
        let m = model();
        let mut rng = SeededRng::new(8);
        let items: Vec<(String, Vec<f64>)> = (0..7)
            .map(|i| {
                let label = if i % 2 == 0 { Label::Bonafide } else { Label::Spoof };
                (format!("x{i}"), synth_waveform(&mut rng, label, 2000))
            })
            .collect();
        let forward = score_waves(&m, &items).unwrap();
        let mut reversed_items = items.clone();
        reversed_items.reverse();
        let mut reversed = score_waves(&m, &reversed_items).unwrap();
        reversed.reverse();
        assert_eq!(forward, reversed);
        assert_eq!(forward[0].embedding.len(), m.backbone.fusion.fused_dim());
        let lines = render_embeddings(&forward);
        assert_eq!(lines.lines().count(), 7);
        assert!(lines.starts_with("x0 "));
    }
}
