use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::Serialize;

use super::audio::load_wav;
use super::config::TrainConfig;
use super::model::RawBMamba;
use super::optim::Adam;
use super::protocol::parse_protocol;
use crate::error::{Error, Result};
use crate::layers::SeededRng;
use crate::metrics::{compute_eer, Label, ScoreRecord};
use crate::tensor::Tensor;

/// One utterance held in memory at the configured length.
#[derive(Debug, Clone)]
pub struct Example {
    pub utt_id: String,
    pub label: Label,
    pub wave: Vec<f64>,
}

/// Per-utterance crop generator: depends only on the run seed and the id,
/// so loading order never changes the crop.
pub fn utterance_rng(seed: u64, utt_id: &str) -> SeededRng {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in utt_id.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3);
    }
    SeededRng::new(seed ^ h)
}

/// Reads every protocol entry from `wav_dir/<utt_id>.wav`.
pub fn load_corpus(protocol: &Path, wav_dir: &Path, config: &TrainConfig) -> Result<Vec<Example>> {
    parse_protocol(protocol, config.protocol_utt_column)?
        .into_iter()
        .map(|e| {
            let path = wav_dir.join(format!("{}.wav", e.utt_id));
            let wave = load_wav(&path, config.samples, &mut utterance_rng(config.seed, &e.utt_id))?;
            Ok(Example { utt_id: e.utt_id, label: e.label, wave })
        })
        .collect()
}

/// Stacks waveforms into a `(B, S)` constant.
pub fn batch_tensor(examples: &[&Example]) -> Result<Tensor> {
    let s = examples.first().map_or(0, |e| e.wave.len());
    let data: Vec<f64> = examples.iter().flat_map(|e| e.wave.iter().copied()).collect();
    Tensor::new(data, &[examples.len(), s])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub mean_loss: f64,
    /// EER of the scores produced during the epoch, before each update.
    pub running_eer: f64,
    /// EER of a separate pass over the training set, when one was run.
    pub train_eer: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: RawBMamba,
    pub epochs: Vec<EpochRecord>,
    /// Loss at every optimizer step.
    pub step_losses: Vec<f64>,
}

/// Scores with a gradient-free copy of `model`, `batch` utterances at a time.
pub fn score_examples(model: &RawBMamba, data: &[Example], batch: usize) -> Result<Vec<ScoreRecord>> {
    let frozen = model.frozen();
    let mut out = Vec::with_capacity(data.len());
    for chunk in data.chunks(batch.max(1)) {
        let refs: Vec<&Example> = chunk.iter().collect();
        let scores = frozen.forward(&batch_tensor(&refs)?)?.scores();
        out.extend(chunk.iter().zip(scores).map(|(e, s)| ScoreRecord::new(e.utt_id.clone(), e.label, s)));
    }
    Ok(out)
}

pub fn train(config: &TrainConfig, data: &[Example], mut on_epoch: impl FnMut(&EpochRecord)) -> Result<TrainOutcome> {
    let mut model = RawBMamba::new(config)?;
    if !data.iter().any(|e| e.label == Label::Bonafide) || !data.iter().any(|e| e.label == Label::Spoof) {
        return Err(Error::Input("training data must contain both classes".into()));
    }
    if let Some(e) = data.iter().find(|e| e.wave.len() != config.samples) {
        return Err(Error::Input(format!("`{}` has {} samples, expected {}", e.utt_id, e.wave.len(), config.samples)));
    }
    let mut opt = Adam::new(config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps);
    let mut shuffle_rng = SeededRng::new(config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epochs = Vec::new();
    let mut step_losses = Vec::new();

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        order.shuffle(shuffle_rng.inner());
        let mut seen = Vec::with_capacity(data.len());
        let mut loss_sum = 0.0;
        let mut steps = 0;
        for idx in order.chunks(config.batch_size) {
            let batch: Vec<&Example> = idx.iter().map(|&i| &data[i]).collect();
            let labels: Vec<usize> = batch.iter().map(|e| e.label.class_index()).collect();
            let step = step_losses.len();
            let non_finite = || Error::NonFiniteLoss { step, batch_ids: batch.iter().map(|e| e.utt_id.clone()).collect() };
            // NaN checks inside the model surface as numeric errors; both
            // paths report the offending batch
            let (loss, out) = match model.loss(&batch_tensor(&batch)?, &labels, step) {
                Err(Error::Numeric(_)) => return Err(non_finite()),
                r => r?,
            };
            let value = loss.item()?;
            if !value.is_finite() {
                return Err(non_finite());
            }
            seen.extend(batch.iter().zip(out.scores()).map(|(e, s)| ScoreRecord::new(e.utt_id.clone(), e.label, s)));
            loss.backward()?;
            drop((loss, out));
            opt.step(&mut model)?;
            model.after_step()?;
            step_losses.push(value);
            loss_sum += value;
            steps += 1;
        }
        let running_eer = compute_eer(&seen)?.eer;
        let train_eer = if config.stop_at_zero_eer && running_eer == 0.0 {
            Some(compute_eer(&score_examples(&model, data, config.batch_size)?)?.eer)
        } else {
            None
        };
        let record = EpochRecord {
            epoch,
            steps,
            mean_loss: loss_sum / steps as f64,
            running_eer,
            train_eer,
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        epochs.push(record);
        if train_eer == Some(0.0) {
            break;
        }
    }
    Ok(TrainOutcome { model, epochs, step_losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Parameterized;
    use crate::pipeline::synth::synth_waveform;

    fn short_tiny() -> TrainConfig {
        TrainConfig { samples: 4000, ..TrainConfig::tiny() }
    }

    fn corpus(seed: u64, per_class: usize, len: usize) -> Vec<Example> {
        let mut rng = SeededRng::new(seed);
        (0..2 * per_class)
            .map(|i| {
                let label = if i % 2 == 0 { Label::Bonafide } else { Label::Spoof };
                Example { utt_id: format!("u{i:03}"), label, wave: synth_waveform(&mut rng, label, len) }
            })
            .collect()
    }

    #[test]
    fn zero_rate_leaves_parameters_bitwise() {
        let cfg = TrainConfig { learning_rate: 0.0, epochs: 1, stop_at_zero_eer: false, ..short_tiny() };
        let data = corpus(1, 8, cfg.samples);
        let before = RawBMamba::new(&cfg).unwrap().named_params();
        let out = train(&cfg, &data, |_| {}).unwrap();
        assert_eq!(out.step_losses.len(), 2);
        for ((n0, t0), (n1, t1)) in before.iter().zip(out.model.named_params()) {
            assert_eq!(n0, &n1);
            assert_eq!(t0.data(), t1.data(), "{n0}");
        }
    }

    #[test]
    fn same_seed_same_loss_curve() {
        let cfg = TrainConfig { epochs: 2, stop_at_zero_eer: false, ..short_tiny() };
        let data = corpus(2, 8, cfg.samples);
        let a = train(&cfg, &data, |_| {}).unwrap();
        let b = train(&cfg, &data, |_| {}).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.step_losses), bits(&b.step_losses));
    }

    #[test]
    fn one_batch_overfits() {
        // at the preset rate the loss reaches exactly 0.0 within 50 steps,
        // after which no window can strictly decrease
        let cfg = TrainConfig { epochs: 200, stop_at_zero_eer: false, learning_rate: 3e-4, ..short_tiny() };
        let data = corpus(3, 4, cfg.samples);
        let out = train(&cfg, &data, |_| {}).unwrap();
        let l = &out.step_losses;
        assert_eq!(l.len(), 200);
        for i in 0..l.len() - 50 {
            assert!(l[i + 50] < l[i], "window at {i}: {} -> {}", l[i], l[i + 50]);
        }
    }

    #[test]
    fn single_class_and_bad_length_rejected() {
        let cfg = short_tiny();
        let data = corpus(4, 2, cfg.samples);
        let bona: Vec<Example> = data.iter().filter(|e| e.label == Label::Bonafide).cloned().collect();
        assert!(matches!(train(&cfg, &bona, |_| {}), Err(Error::Input(_))));
        let short = corpus(4, 2, 100);
        assert!(matches!(train(&cfg, &short, |_| {}), Err(Error::Input(_))));
    }

    #[test]
    fn non_finite_loss_names_batch() {
        let cfg = TrainConfig { epochs: 1, batch_size: 4, ..short_tiny() };
        let mut data = corpus(5, 2, cfg.samples);
        data[2].wave[10] = f64::INFINITY;
        match train(&cfg, &data, |_| {}) {
            Err(Error::NonFiniteLoss { step, batch_ids }) => {
                assert_eq!(step, 0);
                assert!(batch_ids.contains(&"u002".to_string()));
            }
            other => panic!("expected a non-finite loss, got {other:?}"),
        }
    }
}
