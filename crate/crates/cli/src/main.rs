use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rawbmamba::frontend::shape_probe;
use rawbmamba::metrics::{
    compute_eer, compute_min_tdcf, join_scores, read_key_file, render_key_file, ScoreFile, TDCF_VARIANT,
};
use rawbmamba::pipeline::{
    generate_synthetic_corpus, load_checkpoint, load_corpus, parse_protocol, render_embeddings, save_checkpoint,
    score_file, score_paths, score_examples, train, verify, Fault, Level, TrainConfig, SAMPLE_RATE,
};
use rawbmamba::Error;

#[derive(Parser)]
#[command(name = "rawbmamba", version, about = "Raw-waveform bidirectional Mamba spoofing countermeasure")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// TOML config file; falls back to $RAWBMAMBA_CONFIG, then to --preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Preset used when no config file is given.
    #[arg(long, default_value = "paper")]
    preset: String,
}

impl ConfigArgs {
    fn resolve(&self) -> rawbmamba::Result<TrainConfig> {
        TrainConfig::resolve(self.config.as_deref(), Some(&self.preset))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic corpus: wav/, protocol.txt and key.txt.
    GenSynth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 32)]
        per_class: usize,
        /// Samples per file.
        #[arg(long, default_value_t = 64_000)]
        samples: usize,
    },
    /// Train on a protocol and write a checkpoint.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        protocol: PathBuf,
        /// Directory with `<utt_id>.wav`; defaults to `wav/` next to the protocol.
        #[arg(long)]
        wav_dir: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Append one JSON record per epoch to this file.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Score utterances with a checkpoint.
    Score {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Score every entry of this protocol instead of explicit WAV paths.
        #[arg(long, conflicts_with = "wavs")]
        protocol: Option<PathBuf>,
        #[arg(long)]
        wav_dir: Option<PathBuf>,
        wavs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write one embedding vector per utterance.
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
    /// EER and min t-DCF of a score file against a key file.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        key: PathBuf,
        /// Exit with status 1 when the EER exceeds this value.
        #[arg(long)]
        max_eer: Option<f64>,
        #[arg(long)]
        json: bool,
    },
    /// Run the built-in numerical self-checks.
    Verify {
        #[arg(long, default_value = "quick")]
        level: String,
        /// Deliberately break a component (naive-zoh) to see the harness fail.
        #[arg(long)]
        inject_fault: Vec<String>,
        /// Write the JSON report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Print frontend output sizes (frames, freq, time, tokens, channels).
    ShapeProbe {
        #[command(flatten)]
        config: ConfigArgs,
        /// Override the configured input length.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Print the resolved configuration as TOML.
    PrintConfig {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

/// Success or a metric/verification failure; errors are mapped separately.
enum Outcome {
    Ok,
    Failed,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        e if e.is_io_or_format() => 3,
        Error::Input(_) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Failed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn default_wav_dir(protocol: &Path) -> PathBuf {
    protocol.parent().unwrap_or(Path::new(".")).join("wav")
}

fn run(command: Command) -> rawbmamba::Result<Outcome> {
    match command {
        Command::GenSynth { out, seed, per_class, samples } => {
            let manifest = generate_synthetic_corpus(seed, per_class, samples, &out)?;
            let keys: Vec<_> = manifest.items.iter().map(|(e, _)| (e.utt_id.clone(), e.label)).collect();
            fs::write(out.join("key.txt"), render_key_file(&keys))?;
            println!(
                "wrote {} files at {SAMPLE_RATE} Hz to {}",
                manifest.items.len(),
                out.join("wav").display()
            );
        }
        Command::Train { config, protocol, wav_dir, out, log } => {
            let cfg = config.resolve()?;
            let wav_dir = wav_dir.unwrap_or_else(|| default_wav_dir(&protocol));
            let data = load_corpus(&protocol, &wav_dir, &cfg)?;
            let mut log_file = match &log {
                Some(p) => Some(fs::File::create(p)?),
                None => None,
            };
            let mut write_error = None;
            let outcome = train(&cfg, &data, |rec| {
                let line = serde_json::to_string(rec).expect("record serializes");
                println!("{line}");
                if let Some(f) = log_file.as_mut() {
                    if let Err(e) = writeln!(f, "{line}") {
                        write_error.get_or_insert(e);
                    }
                }
            })?;
            if let Some(e) = write_error {
                return Err(e.into());
            }
            save_checkpoint(&outcome.model, &out)?;
            let eer = compute_eer(&score_examples(&outcome.model, &data, cfg.batch_size)?)?.eer;
            println!("train EER {eer:.4} after {} epochs; checkpoint {}", outcome.epochs.len(), out.display());
        }
        Command::Score { checkpoint, protocol, wav_dir, wavs, out, embeddings } => {
            let model = load_checkpoint(&checkpoint)?;
            let paths = match protocol {
                Some(p) => {
                    let dir = wav_dir.unwrap_or_else(|| default_wav_dir(&p));
                    parse_protocol(&p, model.config.protocol_utt_column)?
                        .into_iter()
                        .map(|e| dir.join(format!("{}.wav", e.utt_id)))
                        .collect()
                }
                None => wavs,
            };
            let scored = score_paths(&model, &paths)?;
            score_file(&model, &scored).write(&out)?;
            if let Some(path) = embeddings {
                fs::write(path, render_embeddings(&scored))?;
            }
            println!("scored {} utterances into {}", scored.len(), out.display());
        }
        Command::Eval { config, scores, key, max_eer, json } => {
            let cfg = config.resolve()?;
            let records = join_scores(&ScoreFile::read(&scores)?, &read_key_file(&key)?)?;
            let eer = compute_eer(&records)?;
            let tdcf = compute_min_tdcf(&records, &cfg.asv_rates(), &cfg.tdcf_costs())?;
            if json {
                let v = serde_json::json!({
                    "utterances": records.len(),
                    "eer": eer.eer,
                    "eer_threshold": eer.threshold,
                    "min_tdcf": tdcf.min_tdcf,
                    "min_tdcf_threshold": tdcf.threshold,
                    "tdcf_variant": TDCF_VARIANT,
                });
                println!("{}", serde_json::to_string_pretty(&v).expect("plain json"));
            } else {
                println!("utterances {}", records.len());
                println!("EER        {:.6} (threshold {})", eer.eer, eer.threshold);
                println!("min t-DCF  {:.6} ({TDCF_VARIANT})", tdcf.min_tdcf);
            }
            if max_eer.is_some_and(|m| eer.eer > m) {
                return Ok(Outcome::Failed);
            }
        }
        Command::Verify { level, inject_fault, report } => {
            let level: Level = level.parse()?;
            let faults = inject_fault.iter().map(|f| f.parse()).collect::<rawbmamba::Result<Vec<Fault>>>()?;
            let result = verify(level, &faults);
            for c in &result.checks {
                println!("{c}");
            }
            if let Some(path) = report {
                fs::write(path, result.to_json())?;
            }
            if !result.passed() {
                return Ok(Outcome::Failed);
            }
        }
        Command::ShapeProbe { config, samples } => {
            let cfg = config.resolve()?;
            let p = shape_probe(&cfg.frontend(), samples.unwrap_or(cfg.samples))?;
            println!(
                "F={} T={} f={} t={} L={} C={}",
                p.n_filters, p.frames, p.freq, p.time, p.tokens, p.channels
            );
        }
        Command::PrintConfig { config } => {
            print!("{}", config.resolve()?.to_toml_string());
        }
    }
    Ok(Outcome::Ok)
}
