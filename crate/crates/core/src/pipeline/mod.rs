//! Synthetic data, training and the orchestration behind the command line.

pub mod dataset;
pub mod enhance;
pub mod gradcheck;
pub mod synth;
pub mod train;
pub mod wav;

pub use dataset::{Dataset, DatasetSpec, Mixture, Split};
pub use enhance::{bench, bench_csv, enhance_file, enhance_samples, evaluate, evaluate_files, write_bench_csv, BenchRow, EvalReport};
pub use gradcheck::{run_suite, CaseResult, Suite};
pub use synth::{derive_seed, measured_snr_db, synth_pair, MixtureSpec, NoiseKind, SpeechSpec, TEST_SNRS_DB, TRAIN_SNRS_DB};
pub use train::{train, AdamConfig, StepLog, TrainConfig, TrainOutcome};
pub use wav::{read_wav, write_wav, SAMPLE_RATE};
