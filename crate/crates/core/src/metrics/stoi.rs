//! Short-time objective intelligibility (standard, non-extended variant).

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::resample::resample;
use crate::error::{Error, Result};

const FS: u32 = 10_000;
const FRAME: usize = 256;
const NFFT: usize = 512;
const BANDS: usize = 15;
const MIN_FREQ: f64 = 150.0;
/// Frames per short-time segment (384 ms).
const SEGMENT: usize = 30;
const BETA_DB: f64 = -15.0;
const DYN_RANGE_DB: f64 = 40.0;
const EPS: f64 = f64::EPSILON;

/// Symmetric Hann of `n` points without the zero end-points.
fn hann(n: usize) -> Vec<f64> {
    (1..=n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n + 1) as f64).cos())
        .collect()
}

fn frame_starts(len: usize) -> Vec<usize> {
    if len < FRAME {
        return Vec::new();
    }
    (0..=len - FRAME).step_by(FRAME / 2).collect()
}

/// Drops frames of `x` more than 40 dB below its loudest frame, applying
/// the same selection to `y`, and re-assembles both by overlap-add.
fn remove_silent_frames(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let w = hann(FRAME);
    let starts = frame_starts(x.len());
    let energy: Vec<f64> = starts
        .iter()
        .map(|&s| {
            let e: f64 = (0..FRAME).map(|i| (w[i] * x[s + i]).powi(2)).sum();
            20.0 * (e.sqrt() + EPS).log10()
        })
        .collect();
    let top = energy.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let keep: Vec<usize> = starts
        .iter()
        .zip(&energy)
        .filter(|(_, &e)| e > top - DYN_RANGE_DB)
        .map(|(&s, _)| s)
        .collect();
    let out_len = if keep.is_empty() { 0 } else { (keep.len() - 1) * FRAME / 2 + FRAME };
    let mut xs = vec![0.0; out_len];
    let mut ys = vec![0.0; out_len];
    for (j, &s) in keep.iter().enumerate() {
        let o = j * FRAME / 2;
        for i in 0..FRAME {
            xs[o + i] += w[i] * x[s + i];
            ys[o + i] += w[i] * y[s + i];
        }
    }
    (xs, ys)
}

/// One-third octave band matrix over the `NFFT/2 + 1` bins at 10 kHz,
/// as `(first_bin, end_bin)` per band.
fn band_edges() -> Vec<(usize, usize)> {
    let freqs: Vec<f64> = (0..=NFFT / 2).map(|k| k as f64 * FS as f64 / NFFT as f64).collect();
    let nearest = |target: f64| {
        freqs
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - target).abs().total_cmp(&(b.1 - target).abs()))
            .map(|(i, _)| i)
            .unwrap()
    };
    (0..BANDS)
        .map(|k| {
            let lo = MIN_FREQ * 2f64.powf((2 * k) as f64 / 6.0 - 1.0 / 6.0);
            let hi = MIN_FREQ * 2f64.powf((2 * k) as f64 / 6.0 + 1.0 / 6.0);
            (nearest(lo), nearest(hi))
        })
        .collect()
}

/// Band envelopes `[band][frame]`.
fn band_envelopes(x: &[f64]) -> Vec<Vec<f64>> {
    let w = hann(FRAME);
    let fft = FftPlanner::new().plan_fft_forward(NFFT);
    let bands = band_edges();
    let starts = frame_starts(x.len());
    let mut env: Vec<Vec<f64>> = (0..BANDS).map(|_| Vec::with_capacity(starts.len())).collect();
    let mut buf = vec![Complex::new(0.0, 0.0); NFFT];
    for &s in &starts {
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for i in 0..FRAME {
            buf[i].re = w[i] * x[s + i];
        }
        fft.process(&mut buf);
        for (b, &(lo, hi)) in bands.iter().enumerate() {
            let power: f64 = buf[lo..hi].iter().map(|c| c.norm_sqr()).sum();
            env[b].push(power.sqrt());
        }
    }
    env
}

fn centred_unit(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt() + EPS;
    v.iter_mut().for_each(|x| *x /= norm);
}

/// STOI of a degraded `est` against the clean `reference`, both at `sample_rate`.
pub fn stoi(est: &[f64], reference: &[f64], sample_rate: u32) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(Error::InvalidArgument(format!(
            "stoi: lengths differ ({} vs {})",
            est.len(),
            reference.len()
        )));
    }
    let x = resample(reference, sample_rate, FS);
    let y = resample(est, sample_rate, FS);
    let (x, y) = remove_silent_frames(&x, &y);
    let xe = band_envelopes(&x);
    let ye = band_envelopes(&y);
    let frames = xe[0].len();
    if frames < SEGMENT {
        return Err(Error::TooShort(format!(
            "stoi needs {SEGMENT} non-silent frames (384 ms at 10 kHz), got {frames}"
        )));
    }
    let clip = 10f64.powf(-BETA_DB / 20.0);
    let mut total = 0.0;
    let mut count = 0usize;
    for m in SEGMENT..=frames {
        for b in 0..BANDS {
            let mut xs = xe[b][m - SEGMENT..m].to_vec();
            let ys = &ye[b][m - SEGMENT..m];
            let xn = xs.iter().map(|v| v * v).sum::<f64>().sqrt();
            let yn = ys.iter().map(|v| v * v).sum::<f64>().sqrt();
            let scale = xn / (yn + EPS);
            let mut yp: Vec<f64> = ys
                .iter()
                .zip(&xs)
                .map(|(&yv, &xv)| (yv * scale).min(xv * (1.0 + clip)))
                .collect();
            centred_unit(&mut xs);
            centred_unit(&mut yp);
            total += xs.iter().zip(&yp).map(|(a, b)| a * b).sum::<f64>();
            count += 1;
        }
    }
    Ok(total / count as f64)
}
