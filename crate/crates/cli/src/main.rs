use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use semamba::models::{Checkpoint, ModelKind};
use semamba::pipeline::{self, Dataset, DatasetSpec, Suite, TrainConfig};
use semamba::{Error, Result};

#[derive(Parser)]
#[command(name = "semamba", version, about = "Selective state-space speech enhancement toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Basic,
    Advanced,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Ssm,
    Models,
    Losses,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic train/test mixture set.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
    },
    /// Train a model on a synthesized dataset.
    Train {
        #[arg(long, value_enum)]
        model: ModelArg,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint written by an earlier run with the same config.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Per-step JSON lines log; defaults to `<out>.log.jsonl`.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        w_time: Option<f64>,
        #[arg(long)]
        w_mag: Option<f64>,
        #[arg(long)]
        w_complex: Option<f64>,
        #[arg(long)]
        w_phase: Option<f64>,
        #[arg(long)]
        w_consistency: Option<f64>,
        #[arg(long)]
        w_gan: Option<f64>,
    },
    /// Enhance a 16 kHz mono 16-bit WAV file.
    Enhance {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Apply perceptual contrast stretching with this band table.
        #[arg(long)]
        pcs: Option<PathBuf>,
    },
    /// Print SI-SDR and STOI of an estimate against a reference as JSON.
    Eval {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        est: PathBuf,
    },
    /// Write FLOPs and scan timing over a doubling sweep of sequence lengths.
    Bench {
        /// Range `T0:T1`.
        #[arg(long)]
        sweep: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run finite-difference gradient checks.
    Gradcheck {
        #[arg(long, value_enum)]
        module: SuiteArg,
    },
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn parse_sweep(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::InvalidArgument(format!("--sweep expects T0:T1, got {s:?}"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Synth { spec, out, seed } => {
            let spec = DatasetSpec::from_toml(&read_text(&spec)?)?;
            let ds = spec.generate(seed)?;
            ds.write(&out)?;
            println!("wrote {} train and {} test mixtures to {}", ds.train.len(), ds.test.len(), out.display());
        }
        Command::Train {
            model,
            config,
            data,
            out,
            resume,
            log,
            w_time,
            w_mag,
            w_complex,
            w_phase,
            w_consistency,
            w_gan,
        } => {
            let kind = match model {
                ModelArg::Basic => ModelKind::Basic,
                ModelArg::Advanced => ModelKind::Advanced,
            };
            let mut cfg = TrainConfig::from_toml(&read_text(&config)?, kind)?;
            let w = &mut cfg.loss;
            for (slot, value) in [
                (&mut w.w_time, w_time),
                (&mut w.w_mag, w_mag),
                (&mut w.w_complex, w_complex),
                (&mut w.w_phase, w_phase),
                (&mut w.w_consistency, w_consistency),
                (&mut w.w_gan, w_gan),
            ] {
                if let Some(v) = value {
                    *slot = v;
                }
            }
            cfg.validate()?;
            let dataset = Dataset::load(&data)?;
            let resume = resume.map(|p| Checkpoint::load(&p, Some(kind))).transpose()?;
            let outcome = pipeline::train(&cfg, &dataset.train, resume, |ck| {
                log::info!("checkpoint at step {}", ck.meta.step);
                ck.save(&out)
            })?;
            outcome.checkpoint.save(&out)?;
            let log_path = log.unwrap_or_else(|| {
                let mut p = out.clone().into_os_string();
                p.push(".log.jsonl");
                PathBuf::from(p)
            });
            let mut lines = String::new();
            for entry in &outcome.log {
                lines.push_str(&serde_json::to_string(entry).map_err(|e| Error::Config(e.to_string()))?);
                lines.push('\n');
            }
            write_text(&log_path, &lines)?;
            if let (Some(first), Some(last)) = (outcome.log.first(), outcome.log.last()) {
                println!(
                    "trained steps {}..{}: loss {:.5} -> {:.5}",
                    first.step,
                    last.step + 1,
                    first.terms.total,
                    last.terms.total
                );
            }
        }
        Command::Enhance { input, ckpt, out, pcs } => {
            let clipped = pipeline::enhance_file(&input, &ckpt, &out, pcs.as_deref())?;
            if clipped > 0.0 {
                eprintln!("{:.3}% of output samples clipped", 100.0 * clipped);
            }
        }
        Command::Eval { reference, est } => {
            let report = pipeline::evaluate_files(&reference, &est)?;
            println!("{}", serde_json::to_string(&report).map_err(|e| Error::Config(e.to_string()))?);
        }
        Command::Bench { sweep, out } => {
            let (t0, t1) = parse_sweep(&sweep)?;
            let rows = pipeline::bench(t0, t1)?;
            pipeline::write_bench_csv(&out, &rows)?;
            println!("wrote {} rows to {}", rows.len(), out.display());
        }
        Command::Gradcheck { module } => {
            let suite = match module {
                SuiteArg::Ssm => Suite::Ssm,
                SuiteArg::Models => Suite::Models,
                SuiteArg::Losses => Suite::Losses,
            };
            let cases = pipeline::run_suite(suite)?;
            let mut stdout = std::io::stdout().lock();
            let mut all = true;
            for c in &cases {
                let r = &c.report;
                all &= r.passed;
                let _ = writeln!(
                    stdout,
                    "[{}] {suite}/{}: max rel error {:.3e} (tol {:.0e}, {} coords)",
                    if r.passed { "PASS" } else { "FAIL" },
                    c.name,
                    r.max_rel_error,
                    r.tol,
                    r.checked
                );
            }
            let _ = writeln!(stdout, "{suite}: {}", if all { "all passed" } else { "FAILED" });
            return Ok(all);
        }
    }
    Ok(true)
}

fn exit_code(e: &Error) -> u8 {
    if e.is_io() {
        4
    } else if matches!(e, Error::Numeric(_) | Error::NonFinite { .. } | Error::NonDeterministic) {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
