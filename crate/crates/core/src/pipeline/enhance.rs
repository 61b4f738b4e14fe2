//! Inference, evaluation and complexity benchmarking.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use super::wav::{read_wav, write_wav};
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::metrics::{count_attention_baseline, count_mamba_stack, si_sdr, stoi, time_scan};
use crate::models::{Checkpoint, ModelConfig, SpectralInput};
use crate::params::ParamSet;
use crate::spectral::{pcs_apply, PcsTable, Spectrogram, Stft};
use crate::ssm::{MambaConfig, ScanMode};

/// Enhanced waveform, same length as `noisy`. Inference runs in `f64`.
pub fn enhance_samples(config: &ModelConfig, params: &ParamSet<f64>, noisy: &[f64], pcs: Option<&PcsTable>) -> Result<Vec<f64>> {
    let stft = Stft::<f64>::new(config.stft())?;
    let compression = config.compression();
    let input = SpectralInput::from_wave(&stft, compression, noisy)?;
    let tape = Tape::new();
    let bound = params.bind(&tape, false);
    let pred = config.forward(&bound, &input)?;
    let spec = Spectrogram {
        mag: compression.decompress(pred.cmag.value().data())?,
        phase: pred.phase.to_tensor().into_data(),
        n_frames: input.n_frames(),
        n_bins: input.n_bins(),
        config: config.stft(),
        origin_len: noisy.len(),
    };
    let spec = match pcs {
        Some(table) => pcs_apply(&spec, table),
        None => spec,
    };
    stft.inverse(&spec)
}

/// Reads a 16 kHz mono WAV, enhances it with a checkpoint and writes the
/// result. Returns the fraction of output samples that clipped.
pub fn enhance_file(input: &Path, checkpoint: &Path, output: &Path, pcs: Option<&Path>) -> Result<f64> {
    let noisy = read_wav(input)?;
    let ck = Checkpoint::load(checkpoint, None)?;
    if ck.config.stft().sample_rate != super::wav::SAMPLE_RATE {
        return Err(Error::AudioFormat(format!(
            "checkpoint expects {} Hz audio",
            ck.config.stft().sample_rate
        )));
    }
    let table = pcs
        .map(|p| PcsTable::load(p, ck.config.stft().sample_rate as f64 / 2.0))
        .transpose()?;
    let out = enhance_samples(&ck.config, &ck.params.cast(), &noisy, table.as_ref())?;
    write_wav(output, &out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub si_sdr: f64,
    pub stoi: f64,
}

pub fn evaluate(reference: &[f64], estimate: &[f64], sample_rate: u32) -> Result<EvalReport> {
    Ok(EvalReport {
        si_sdr: si_sdr(estimate, reference)?,
        stoi: stoi(estimate, reference, sample_rate)?,
    })
}

pub fn evaluate_files(reference: &Path, estimate: &Path) -> Result<EvalReport> {
    evaluate(&read_wav(reference)?, &read_wav(estimate)?, super::wav::SAMPLE_RATE)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub seq_len: usize,
    pub flops_mamba: u64,
    pub flops_attention: u64,
    pub scan_seconds: f64,
}

/// Doubling sweep from `t0` up to `t1`: analytic FLOPs of one default-width
/// Mamba layer against one attention layer, and measured scan time.
pub fn bench(t0: usize, t1: usize) -> Result<Vec<BenchRow>> {
    if t0 == 0 || t1 < t0 {
        return Err(Error::InvalidArgument(format!("bad sweep range {t0}:{t1}")));
    }
    let cfg = MambaConfig::default();
    let mut rows = Vec::new();
    let mut t = t0;
    while t <= t1 {
        rows.push(BenchRow {
            seq_len: t,
            flops_mamba: count_mamba_stack(&cfg, 1, t).total_flops,
            flops_attention: count_attention_baseline(cfg.d_model, 1, t)?.total_flops,
            scan_seconds: time_scan(t, cfg.inner(), cfg.d_state, 3, ScanMode::Parallel)?,
        });
        t = match t.checked_mul(2) {
            Some(next) => next,
            None => break,
        };
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("T,flops_mamba,flops_attention,scan_seconds\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{:.6e}", r.seq_len, r.flops_mamba, r.flops_attention, r.scan_seconds);
    }
    s
}

pub fn write_bench_csv(path: &Path, rows: &[BenchRow]) -> Result<()> {
    fs::write(path, bench_csv(rows)).map_err(|e| Error::io(path, e))
}
