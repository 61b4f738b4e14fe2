//! Deterministic speech-like clean signals, noises and mixtures at exact SNRs.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Training-split SNRs in dB.
pub const TRAIN_SNRS_DB: [f64; 4] = [0.0, 5.0, 10.0, 15.0];
/// Test-split SNRs in dB.
pub const TEST_SNRS_DB: [f64; 4] = [2.5, 7.5, 12.5, 17.5];
/// Peak ceiling applied jointly to clean and noisy signals.
pub const PEAK_LIMIT: f64 = 0.95;

const MAX_ATTEMPTS: u64 = 3;

/// Mixes two words into a well-spread 64-bit seed.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    White,
    Pink,
    Babble,
}

/// Generator settings for the speech-like clean source: a sequence of
/// syllables, each a pitched harmonic stack, an AR-filtered noise burst,
/// or a pause.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpeechSpec {
    pub f0_min_hz: f64,
    pub f0_max_hz: f64,
    pub max_harmonic_hz: f64,
    pub syllable_min_ms: f64,
    pub syllable_max_ms: f64,
    pub pause_fraction: f64,
    /// Share of non-pause syllables that are voiced.
    pub voiced_fraction: f64,
    pub ar_order: usize,
}

impl Default for SpeechSpec {
    fn default() -> Self {
        Self {
            f0_min_hz: 90.0,
            f0_max_hz: 240.0,
            max_harmonic_hz: 4000.0,
            syllable_min_ms: 80.0,
            syllable_max_ms: 250.0,
            pause_fraction: 0.15,
            voiced_fraction: 0.75,
            ar_order: 8,
        }
    }
}

impl SpeechSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.f0_min_hz > 0.0
            && self.f0_max_hz >= self.f0_min_hz
            && self.max_harmonic_hz > self.f0_min_hz
            && self.syllable_min_ms > 0.0
            && self.syllable_max_ms >= self.syllable_min_ms
            && (0.0..1.0).contains(&self.pause_fraction)
            && (0.0..=1.0).contains(&self.voiced_fraction)
            && self.ar_order > 0;
        if !ok {
            return Err(Error::Config(format!("invalid speech generator settings {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    #[serde(default)]
    pub speech: SpeechSpec,
    pub noise: NoiseKind,
    pub snr_db: f64,
    pub seed: u64,
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Stable all-pole coefficients from reflection coefficients in (−0.85, 0.85).
fn random_ar(rng: &mut ChaCha8Rng, order: usize) -> Vec<f64> {
    let mut a: Vec<f64> = Vec::with_capacity(order);
    for _ in 0..order {
        let k = uniform(rng, -0.85, 0.85);
        let prev = a.clone();
        for (i, ai) in a.iter_mut().enumerate() {
            *ai += k * prev[prev.len() - 1 - i];
        }
        a.push(k);
    }
    a
}

fn envelope(i: usize, len: usize) -> f64 {
    (PI * (i as f64 + 0.5) / len as f64).sin().sqrt()
}

fn voiced(rng: &mut ChaCha8Rng, s: &SpeechSpec, sr: f64, out: &mut [f64]) {
    let len = out.len();
    let f0 = uniform(rng, s.f0_min_hz, s.f0_max_hz);
    let f0_end = f0 * uniform(rng, 0.85, 1.15);
    let vib_rate = uniform(rng, 4.0, 6.5);
    let vib_depth = uniform(rng, 0.0, 0.02);
    let f1 = uniform(rng, 300.0, 900.0);
    let f2 = uniform(rng, 900.0, 2500.0);
    let level = uniform(rng, 0.3, 1.0);
    let n_harm = ((s.max_harmonic_hz / f0.max(f0_end)).floor() as usize).max(1);
    let weights: Vec<f64> = (1..=n_harm)
        .map(|k| {
            let f = k as f64 * f0;
            let formants = 1.0 + 4.0 * (-((f - f1) / 150.0).powi(2)).exp() + 3.0 * (-((f - f2) / 200.0).powi(2)).exp();
            formants / k as f64
        })
        .collect();
    let norm: f64 = weights.iter().map(|w| w * w).sum::<f64>().sqrt();
    let mut phases: Vec<f64> = (0..n_harm).map(|_| uniform(rng, 0.0, 2.0 * PI)).collect();
    for (i, o) in out.iter_mut().enumerate() {
        let t = i as f64 / len as f64;
        let pitch = (f0 + (f0_end - f0) * t) * (1.0 + vib_depth * (2.0 * PI * vib_rate * i as f64 / sr).sin());
        let mut acc = 0.0;
        for (k, (w, ph)) in weights.iter().zip(phases.iter_mut()).enumerate() {
            *ph += 2.0 * PI * (k + 1) as f64 * pitch / sr;
            if (k + 1) as f64 * pitch < sr / 2.0 {
                acc += w * ph.sin();
            }
        }
        *o += level * envelope(i, len) * acc / norm;
    }
    for ph in phases.iter_mut() {
        *ph %= 2.0 * PI;
    }
}

fn unvoiced(rng: &mut ChaCha8Rng, s: &SpeechSpec, out: &mut [f64]) {
    let len = out.len();
    let a = random_ar(rng, s.ar_order);
    let level = uniform(rng, 0.1, 0.4);
    let mut hist = vec![0.0; a.len()];
    let mut burst = Vec::with_capacity(len);
    for _ in 0..len {
        let e: f64 = rng.sample(StandardNormal);
        let y = e - a.iter().zip(&hist).map(|(c, h)| c * h).sum::<f64>();
        hist.rotate_right(1);
        hist[0] = y;
        burst.push(y);
    }
    let rms = (burst.iter().map(|v| v * v).sum::<f64>() / len as f64).sqrt().max(1e-12);
    for (i, (o, b)) in out.iter_mut().zip(&burst).enumerate() {
        *o += level * envelope(i, len) * b / rms;
    }
}

/// Speech-like clean signal of `n` samples.
pub fn speech_like(s: &SpeechSpec, n: usize, sample_rate: u32, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = sample_rate as f64;
    let mut out = vec![0.0; n];
    let mut pos = 0;
    while pos < n {
        let len = ((uniform(&mut rng, s.syllable_min_ms, s.syllable_max_ms) * sr / 1000.0) as usize).clamp(1, n - pos);
        let seg = &mut out[pos..pos + len];
        let r = uniform(&mut rng, 0.0, 1.0);
        if r >= s.pause_fraction {
            if uniform(&mut rng, 0.0, 1.0) < s.voiced_fraction {
                voiced(&mut rng, s, sr, seg);
            } else {
                unvoiced(&mut rng, s, seg);
            }
        }
        pos += len;
    }
    out
}

fn white(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// 1/f power spectrum by shaping white noise in the frequency domain.
fn pink(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = white(n, rng).into_iter().map(|v| Complex::new(v, 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let m = k.min(n - k).max(1) as f64;
        *c /= m.sqrt();
    }
    buf[0] = Complex::new(0.0, 0.0);
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

/// Several overlapping speech-like talkers.
fn babble(s: &SpeechSpec, n: usize, sample_rate: u32, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for _ in 0..6 {
        let talker = speech_like(s, n, sample_rate, rng.random());
        let gain = uniform(rng, 0.5, 1.0);
        out.iter_mut().zip(&talker).for_each(|(o, t)| *o += gain * t);
    }
    out
}

pub fn noise(kind: NoiseKind, speech: &SpeechSpec, n: usize, sample_rate: u32, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        NoiseKind::White => white(n, &mut rng),
        NoiseKind::Pink => pink(n, &mut rng),
        NoiseKind::Babble => babble(speech, n, sample_rate, &mut rng),
    }
}

fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// `10·log10(P_clean / P_(noisy − clean))`.
pub fn measured_snr_db(clean: &[f64], noisy: &[f64]) -> f64 {
    let resid: Vec<f64> = noisy.iter().zip(clean).map(|(n, c)| n - c).collect();
    10.0 * (power(clean) / power(&resid)).log10()
}

/// Clean and noisy waveforms for `spec`. Noise is scaled to the exact SNR,
/// then both signals share one gain bringing the larger peak to 0.95.
pub fn synth_pair(spec: &MixtureSpec, duration_s: f64, sample_rate: u32) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(duration_s >= 0.5) {
        return Err(Error::InvalidArgument(format!("duration {duration_s} s is below 0.5 s")));
    }
    spec.speech.validate()?;
    if !spec.snr_db.is_finite() {
        return Err(Error::InvalidArgument("SNR must be finite".into()));
    }
    let n = (duration_s * sample_rate as f64).round() as usize;
    let clean = (0..MAX_ATTEMPTS)
        .map(|attempt| speech_like(&spec.speech, n, sample_rate, derive_seed(spec.seed, 2 * attempt + 1)))
        .find(|c| power(c) > 0.0)
        .ok_or_else(|| Error::Numeric(format!("clean draw was silent {MAX_ATTEMPTS} times for seed {}", spec.seed)))?;
    let raw_noise = noise(spec.noise, &spec.speech, n, sample_rate, derive_seed(spec.seed, 2));
    let scale = (power(&clean) / (power(&raw_noise) * 10f64.powf(spec.snr_db / 10.0))).sqrt();
    let noisy: Vec<f64> = clean.iter().zip(&raw_noise).map(|(c, v)| c + scale * v).collect();
    let peak = clean.iter().chain(&noisy).fold(0.0f64, |m, v| m.max(v.abs()));
    let mut gain = PEAK_LIMIT / peak;
    while peak * gain > PEAK_LIMIT {
        gain = gain.next_down();
    }
    Ok((
        clean.iter().map(|v| v * gain).collect(),
        noisy.iter().map(|v| v * gain).collect(),
    ))
}
