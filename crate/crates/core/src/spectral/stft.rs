use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Analysis/synthesis geometry. The window is always a periodic Hann of
/// `win_len` samples centred inside `n_fft`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StftConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub win_len: usize,
    pub sample_rate: u32,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            n_fft: 400,
            hop: 100,
            win_len: 400,
            sample_rate: 16_000,
        }
    }
}

impl StftConfig {
    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Frame count for a signal of `len` samples (centred framing).
    pub fn n_frames(&self, len: usize) -> usize {
        1 + len / self.hop
    }

    pub fn bin_hz(&self, k: usize) -> f64 {
        k as f64 * self.sample_rate as f64 / self.n_fft as f64
    }

    fn window(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.n_fft];
        let off = (self.n_fft - self.win_len) / 2;
        for n in 0..self.win_len {
            let phase = 2.0 * std::f64::consts::PI * n as f64 / self.win_len as f64;
            w[off + n] = 0.5 - 0.5 * phase.cos();
        }
        w
    }

    /// Checks geometry and the squared-window overlap-add condition: the sum
    /// of `w²` over all hop shifts must be constant.
    pub fn validate(&self) -> Result<()> {
        if self.n_fft < 2 || self.hop == 0 || self.win_len == 0 || self.sample_rate == 0 {
            return Err(Error::InvalidArgument(format!("degenerate STFT config {self:?}")));
        }
        if self.win_len > self.n_fft {
            return Err(Error::InvalidArgument(format!(
                "win_len {} exceeds n_fft {}",
                self.win_len, self.n_fft
            )));
        }
        if self.hop > self.win_len {
            return Err(Error::Cola(format!("hop {} exceeds window {}", self.hop, self.win_len)));
        }
        let w = self.window();
        let sums: Vec<f64> = (0..self.hop)
            .map(|n| w.iter().skip(n).step_by(self.hop).map(|v| v * v).sum())
            .collect();
        let lo = sums.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = sums.iter().cloned().fold(0.0, f64::max);
        if lo <= 0.0 || (hi - lo) / hi > 1e-10 {
            return Err(Error::Cola(format!(
                "squared-window overlap-add ranges over [{lo:.6}, {hi:.6}] for hop {}",
                self.hop
            )));
        }
        Ok(())
    }
}

/// Magnitude/phase spectrogram, row-major `[frames, bins]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram<T> {
    pub mag: Vec<T>,
    pub phase: Vec<T>,
    pub n_frames: usize,
    pub n_bins: usize,
    pub config: StftConfig,
    pub origin_len: usize,
}

impl<T: Scalar> Spectrogram<T> {
    pub fn from_complex(re: &[T], im: &[T], n_frames: usize, config: StftConfig, origin_len: usize) -> Self {
        let mag = re.iter().zip(im).map(|(&r, &i)| r.hypot(i)).collect();
        let phase = re
            .iter()
            .zip(im)
            .map(|(&r, &i)| {
                let p = i.atan2(r);
                // keep the half-open range (−π, π]
                if p <= -T::PI() {
                    T::PI()
                } else {
                    p
                }
            })
            .collect();
        Self {
            mag,
            phase,
            n_frames,
            n_bins: config.n_bins(),
            config,
            origin_len,
        }
    }

    pub fn to_complex(&self) -> (Vec<T>, Vec<T>) {
        let re = self.mag.iter().zip(&self.phase).map(|(&m, &p)| m * p.cos()).collect();
        let im = self.mag.iter().zip(&self.phase).map(|(&m, &p)| m * p.sin()).collect();
        (re, im)
    }
}

/// STFT processor with cached FFT plans. Cheap to clone.
#[derive(Clone)]
pub struct Stft<T: Scalar> {
    config: StftConfig,
    window: Arc<Vec<T>>,
    fft: Arc<dyn Fft<T>>,
    ifft: Arc<dyn Fft<T>>,
}

impl<T: Scalar> std::fmt::Debug for Stft<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stft").field("config", &self.config).finish()
    }
}

impl<T: Scalar> Stft<T> {
    pub fn new(config: StftConfig) -> Result<Self> {
        config.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            config,
            window: Arc::new(config.window().into_iter().map(T::of).collect()),
            fft: planner.plan_fft_forward(config.n_fft),
            ifft: planner.plan_fft_inverse(config.n_fft),
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn window(&self) -> &[T] {
        &self.window
    }

    fn pad(&self) -> usize {
        self.config.n_fft / 2
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len == 0 {
            return Err(Error::TooShort("empty signal".into()));
        }
        if len < self.config.win_len || len <= self.pad() {
            return Err(Error::TooShort(format!(
                "{len} samples, need at least {} for one frame",
                self.config.win_len.max(self.pad() + 1)
            )));
        }
        Ok(())
    }

    fn reflect_pad(&self, x: &[T]) -> Vec<T> {
        let p = self.pad();
        let n = x.len();
        let mut out = Vec::with_capacity(n + 2 * p);
        out.extend((0..p).map(|i| x[p - i]));
        out.extend_from_slice(x);
        out.extend((0..p).map(|i| x[n - 2 - i]));
        out
    }

    fn reflect_pad_adjoint(&self, g: &[T], n: usize) -> Vec<T> {
        let p = self.pad();
        let mut out = g[p..p + n].to_vec();
        for i in 0..p {
            out[p - i] += g[i];
            out[n - 2 - i] += g[p + n + i];
        }
        out
    }

    /// Complex STFT as separate real/imaginary planes `[frames, bins]`.
    pub fn analyze(&self, wave: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        self.check_len(wave.len())?;
        if wave.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { op: "stft" });
        }
        let padded = self.reflect_pad(wave);
        let n = self.config.n_fft;
        let f = self.config.n_bins();
        let frames = self.config.n_frames(wave.len());
        let mut re = Vec::with_capacity(frames * f);
        let mut im = Vec::with_capacity(frames * f);
        let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
        for t in 0..frames {
            let seg = &padded[t * self.config.hop..t * self.config.hop + n];
            for ((b, &x), &w) in buf.iter_mut().zip(seg).zip(self.window.iter()) {
                *b = Complex::new(x * w, T::zero());
            }
            self.fft.process(&mut buf);
            re.extend(buf[..f].iter().map(|c| c.re));
            im.extend(buf[..f].iter().map(|c| c.im));
        }
        Ok((re, im))
    }

    /// Adjoint of [`Stft::analyze`]: maps plane gradients back to the signal.
    pub fn analyze_adjoint(&self, g_re: &[T], g_im: &[T], len: usize) -> Vec<T> {
        let n = self.config.n_fft;
        let f = self.config.n_bins();
        let frames = self.config.n_frames(len);
        let mut g_pad = vec![T::zero(); len + 2 * self.pad()];
        let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
        for t in 0..frames {
            buf.iter_mut().for_each(|b| *b = Complex::new(T::zero(), T::zero()));
            for k in 0..f {
                buf[k] = Complex::new(g_re[t * f + k], g_im[t * f + k]);
            }
            self.ifft.process(&mut buf);
            let base = t * self.config.hop;
            for (i, (b, &w)) in buf.iter().zip(self.window.iter()).enumerate() {
                g_pad[base + i] += b.re * w;
            }
        }
        self.reflect_pad_adjoint(&g_pad, len)
    }

    fn envelope(&self, frames: usize) -> Vec<T> {
        let n = self.config.n_fft;
        let mut env = vec![T::zero(); (frames - 1) * self.config.hop + n];
        for t in 0..frames {
            let base = t * self.config.hop;
            for (e, &w) in env[base..base + n].iter_mut().zip(self.window.iter()) {
                *e += w * w;
            }
        }
        env
    }

    fn irfft_frame(&self, re: &[T], im: &[T], buf: &mut [Complex<T>]) {
        let n = self.config.n_fft;
        let f = self.config.n_bins();
        buf[0] = Complex::new(re[0], T::zero());
        for k in 1..f {
            buf[k] = Complex::new(re[k], im[k]);
            if n - k != k {
                buf[n - k] = Complex::new(re[k], -im[k]);
            } else {
                buf[k].im = T::zero();
            }
        }
        self.ifft.process(buf);
    }

    /// Weighted overlap-add inverse of [`Stft::analyze`], trimmed to `len`.
    pub fn synthesize(&self, re: &[T], im: &[T], len: usize) -> Result<Vec<T>> {
        let f = self.config.n_bins();
        let frames = self.config.n_frames(len);
        if re.len() != frames * f || im.len() != frames * f {
            return Err(Error::shape(
                "istft",
                format!("{} values for {frames}×{f} frames of a {len}-sample signal", re.len()),
            ));
        }
        let n = self.config.n_fft;
        let inv_n = T::one() / T::of_usize(n);
        let env = self.envelope(frames);
        let mut acc = vec![T::zero(); env.len()];
        let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
        for t in 0..frames {
            self.irfft_frame(&re[t * f..(t + 1) * f], &im[t * f..(t + 1) * f], &mut buf);
            let base = t * self.config.hop;
            for (i, (b, &w)) in buf.iter().zip(self.window.iter()).enumerate() {
                acc[base + i] += b.re * inv_n * w;
            }
        }
        let p = self.pad();
        let out: Vec<T> = (p..p + len)
            .map(|j| {
                let e = env[j];
                if e > T::of(1e-11) {
                    acc[j] / e
                } else {
                    T::nan()
                }
            })
            .collect();
        if out.iter().any(|x| x.is_nan()) {
            return Err(Error::Cola("window envelope vanishes inside the signal".into()));
        }
        Ok(out)
    }

    /// Adjoint of [`Stft::synthesize`]: signal gradient to plane gradients.
    pub fn synthesize_adjoint(&self, g: &[T]) -> (Vec<T>, Vec<T>) {
        let len = g.len();
        let n = self.config.n_fft;
        let f = self.config.n_bins();
        let frames = self.config.n_frames(len);
        let inv_n = T::one() / T::of_usize(n);
        let env = self.envelope(frames);
        let p = self.pad();
        let mut g_pad = vec![T::zero(); env.len()];
        for (j, &gv) in g.iter().enumerate() {
            g_pad[p + j] = gv / env[p + j];
        }
        let mut g_re = Vec::with_capacity(frames * f);
        let mut g_im = Vec::with_capacity(frames * f);
        let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
        let two = T::of(2.0);
        for t in 0..frames {
            let base = t * self.config.hop;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = Complex::new(g_pad[base + i] * self.window[i], T::zero());
            }
            self.fft.process(&mut buf);
            for (k, b) in buf[..f].iter().enumerate() {
                let edge = k == 0 || 2 * k == n;
                let c = if edge { inv_n } else { two * inv_n };
                g_re.push(b.re * c);
                g_im.push(if edge { T::zero() } else { b.im * c });
            }
        }
        (g_re, g_im)
    }

    pub fn forward(&self, wave: &[T]) -> Result<Spectrogram<T>> {
        let (re, im) = self.analyze(wave)?;
        Ok(Spectrogram::from_complex(
            &re,
            &im,
            self.config.n_frames(wave.len()),
            self.config,
            wave.len(),
        ))
    }

    pub fn inverse(&self, spec: &Spectrogram<T>) -> Result<Vec<T>> {
        if spec.config != self.config {
            return Err(Error::InvalidArgument("spectrogram was made with a different STFT config".into()));
        }
        let (re, im) = spec.to_complex();
        self.synthesize(&re, &im, spec.origin_len)
    }

    /// Differentiable STFT: `[L]` signal to `[2, frames, bins]` (re, im).
    pub fn stft_var<'t>(&self, wave: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = wave.shape();
        if shape.len() != 1 {
            return Err(Error::shape("stft", format!("expected a 1-D signal, got {shape:?}")));
        }
        let len = shape[0];
        let (mut re, im) = self.analyze(wave.value().data())?;
        let frames = self.config.n_frames(len);
        re.extend(im);
        let out = Tensor::new(vec![2, frames, self.config.n_bins()], re)?;
        let this = self.clone();
        wave.tape().record("stft", &[wave], out, move |ctx| {
            let half = ctx.grad.len() / 2;
            vec![Some(this.analyze_adjoint(&ctx.grad[..half], &ctx.grad[half..], len))]
        })
    }

    /// Differentiable inverse: `[2, frames, bins]` to a `[len]` signal.
    pub fn istft_var<'t>(&self, spec: Var<'t, T>, len: usize) -> Result<Var<'t, T>> {
        let shape = spec.shape();
        let frames = self.config.n_frames(len);
        if shape != [2, frames, self.config.n_bins()] {
            return Err(Error::shape(
                "istft",
                format!("expected [2, {frames}, {}], got {shape:?}", self.config.n_bins()),
            ));
        }
        let wave = {
            let v = spec.value();
            let half = v.len() / 2;
            self.synthesize(&v.data()[..half], &v.data()[half..], len)?
        };
        let this = self.clone();
        spec.tape().record("istft", &[spec], Tensor::from_vec(wave), move |ctx| {
            let (mut g_re, g_im) = this.synthesize_adjoint(ctx.grad);
            g_re.extend(g_im);
            vec![Some(g_re)]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::<f64>::uniform(vec![n], -1.0, 1.0, &mut rng).into_data()
    }

    #[test]
    fn default_config_is_cola() {
        StftConfig::default().validate().unwrap();
        let half = StftConfig {
            hop: 200,
            ..StftConfig::default()
        };
        assert!(matches!(half.validate(), Err(Error::Cola(_))));
    }

    #[test]
    fn roundtrip_default_config() {
        let stft = Stft::<f64>::new(StftConfig::default()).unwrap();
        let x = noise(16_000, 1);
        let (re, im) = stft.analyze(&x).unwrap();
        let y = stft.synthesize(&re, &im, x.len()).unwrap();
        let err = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9, "max error {err}");
    }

    #[test]
    fn zero_signal_gives_zero_magnitude() {
        let stft = Stft::<f64>::new(StftConfig::default()).unwrap();
        let spec = stft.forward(&vec![0.0; 1000]).unwrap();
        assert!(spec.mag.iter().all(|&m| m == 0.0));
        assert!(stft.inverse(&spec).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn rejects_short_and_empty() {
        let stft = Stft::<f64>::new(StftConfig::default()).unwrap();
        assert!(matches!(stft.analyze(&[]), Err(Error::TooShort(_))));
        assert!(matches!(stft.analyze(&[0.0; 399]), Err(Error::TooShort(_))));
    }

    #[test]
    fn adjoints_pass_dot_product_test() {
        let cfg = StftConfig {
            n_fft: 32,
            hop: 8,
            win_len: 24,
            sample_rate: 8000,
        };
        let stft = Stft::<f64>::new(cfg).unwrap();
        let len = 101;
        let frames = cfg.n_frames(len);
        let f = cfg.n_bins();
        let x = noise(len, 2);
        let yr = noise(frames * f, 3);
        let yi = noise(frames * f, 4);
        let (ar, ai) = stft.analyze(&x).unwrap();
        let lhs: f64 = ar.iter().zip(&yr).map(|(a, b)| a * b).sum::<f64>()
            + ai.iter().zip(&yi).map(|(a, b)| a * b).sum::<f64>();
        let back = stft.analyze_adjoint(&yr, &yi, len);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0), "{lhs} vs {rhs}");

        let s = stft.synthesize(&yr, &yi, len).unwrap();
        let lhs: f64 = s.iter().zip(&x).map(|(a, b)| a * b).sum();
        let (gr, gi) = stft.synthesize_adjoint(&x);
        let rhs: f64 = gr.iter().zip(&yr).map(|(a, b)| a * b).sum::<f64>()
            + gi.iter().zip(&yi).map(|(a, b)| a * b).sum::<f64>();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }
}
