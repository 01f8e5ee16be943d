//! Audio and protocol I/O, synthetic data, training, scoring, checkpoints and
//! the self-check harness.

pub mod audio;
pub mod checkpoint;
pub mod config;
pub mod model;
pub mod optim;
pub mod protocol;
pub mod score;
pub mod synth;
pub mod train;
pub mod verify;

pub use audio::{fit_length, load_wav, read_wav, write_wav, SAMPLE_RATE};
pub use checkpoint::{load_checkpoint, parse_checkpoint, render_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use config::{TrainConfig, CONFIG_ENV};
pub use model::RawBMamba;
pub use optim::Adam;
pub use protocol::{parse_protocol, parse_protocol_str, render_protocol, ProtocolEntry};
pub use score::{render_embeddings, score_file, score_paths, score_waves, Scored, SCORE_DEFINITION};
pub use synth::{generate_synthetic_corpus, synth_waveform, Manifest};
pub use train::{batch_tensor, load_corpus, score_examples, train, utterance_rng, EpochRecord, Example, TrainOutcome};
pub use verify::{verify, CheckResult, Fault, Level, VerifyReport};
