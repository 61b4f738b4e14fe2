//! Training objectives.

use serde::{Deserialize, Serialize};

use crate::autodiff::{concat, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::spectral::{Compression, Stft};
use crate::tensor::Tensor;

/// Weights of the composite objective. `w_gan` exists only so configs
/// carrying it fail loudly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub w_time: f64,
    pub w_mag: f64,
    pub w_complex: f64,
    pub w_phase: f64,
    pub w_consistency: f64,
    pub w_gan: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_time: 0.2,
            w_mag: 0.9,
            w_complex: 0.1,
            w_phase: 0.3,
            w_consistency: 0.1,
            w_gan: 0.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.w_gan != 0.0 {
            return Err(Error::NotImplemented("adversarial (GAN) loss term".into()));
        }
        let w = [self.w_time, self.w_mag, self.w_complex, self.w_phase, self.w_consistency];
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config(format!("loss weights must be finite and nonnegative: {self:?}")));
        }
        if w.iter().all(|&v| v == 0.0) {
            return Err(Error::Config("at least one loss weight must be positive".into()));
        }
        Ok(())
    }
}

/// Unweighted terms of one composite evaluation; `None` for terms whose
/// weight is zero and which were therefore not computed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossTerms {
    pub time: Option<f64>,
    pub mag: Option<f64>,
    pub complex: Option<f64>,
    pub phase: Option<f64>,
    pub consistency: Option<f64>,
    pub total: f64,
}

fn same_shape<T: Scalar>(op: &'static str, a: Var<'_, T>, b: Var<'_, T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Mean absolute difference.
pub fn mag_mae<'t, T: Scalar>(pred: Var<'t, T>, target: Var<'t, T>) -> Result<Var<'t, T>> {
    same_shape("mag_mae", pred, target)?;
    pred.sub(target)?.abs()?.mean()
}

/// Mean squared difference.
pub fn mse<'t, T: Scalar>(pred: Var<'t, T>, target: Var<'t, T>) -> Result<Var<'t, T>> {
    same_shape("mse", pred, target)?;
    pred.sub(target)?.square()?.mean()
}

/// Mean of `|wrap(a − b)|` with `wrap` into `(−π, π]`.
pub fn phase_distance<'t, T: Scalar>(pred: Var<'t, T>, target: Var<'t, T>) -> Result<Var<'t, T>> {
    same_shape("phase_distance", pred, target)?;
    pred.sub(target)?.anti_wrap()?.abs()?.mean()
}

/// `Σ |S − stft(istft(S))|² / (frames · bins)` for `S: [2, frames, bins]`.
pub fn consistency_loss<'t, T: Scalar>(stft: &Stft<T>, spec: Var<'t, T>, len: usize) -> Result<Var<'t, T>> {
    let shape = spec.shape();
    let projected = stft.stft_var(stft.istft_var(spec, len)?)?;
    let bins = T::of_usize(shape[1] * shape[2]);
    spec.sub(projected)?.square()?.sum()?.scale(T::one() / bins)
}

/// `[2, frames, bins]` from magnitude and phase maps.
pub fn polar_to_complex<'t, T: Scalar>(mag: Var<'t, T>, phase: Var<'t, T>) -> Result<Var<'t, T>> {
    same_shape("polar_to_complex", mag, phase)?;
    let mut shape = vec![1];
    shape.extend(mag.shape());
    let re = mag.mul(phase.cos()?)?.reshape(shape.clone())?;
    let im = mag.mul(phase.sin()?)?.reshape(shape)?;
    concat(&[re, im], 0)
}

/// Clean-side quantities for the composite loss, precomputed once.
#[derive(Clone, Debug)]
pub struct LossTarget<T: Scalar> {
    pub wave: Tensor<T>,
    pub cmag: Tensor<T>,
    pub phase: Tensor<T>,
    /// Compressed complex spectrum `[2, frames, bins]`.
    pub ccomplex: Tensor<T>,
}

impl<T: Scalar> LossTarget<T> {
    pub fn new(stft: &Stft<T>, compression: Compression, wave: &[T]) -> Result<Self> {
        let spec = stft.forward(wave)?;
        let shape = vec![spec.n_frames, spec.n_bins];
        let cmag = compression.compress(&spec.mag)?;
        let mut cc: Vec<T> = cmag.iter().zip(&spec.phase).map(|(&m, &p)| m * p.cos()).collect();
        cc.extend(cmag.iter().zip(&spec.phase).map(|(&m, &p)| m * p.sin()));
        Ok(Self {
            wave: Tensor::from_vec(wave.to_vec()),
            cmag: Tensor::new(shape.clone(), cmag)?,
            phase: Tensor::new(shape, spec.phase.clone())?,
            ccomplex: Tensor::new(vec![2, spec.n_frames, spec.n_bins], cc)?,
        })
    }
}

/// Spectral prediction: compressed magnitude and phase, each `[frames, bins]`.
#[derive(Clone, Copy)]
pub struct SpecPrediction<'t, T: Scalar> {
    pub cmag: Var<'t, T>,
    pub phase: Var<'t, T>,
}

/// Weighted sum of waveform L1, compressed-magnitude MSE, compressed-complex
/// MSE, wrapped phase distance and consistency.
pub fn composite_loss<'t, T: Scalar>(
    stft: &Stft<T>,
    compression: Compression,
    pred_wave: Var<'t, T>,
    pred: SpecPrediction<'t, T>,
    target: &LossTarget<T>,
    weights: &LossWeights,
) -> Result<(Var<'t, T>, LossTerms)> {
    weights.validate()?;
    let tape = pred_wave.tape();
    let mut terms = LossTerms::default();
    let mut parts: Vec<Var<'t, T>> = Vec::new();
    let mut add = |w: f64, v: Var<'t, T>, slot: &mut Option<f64>| -> Result<()> {
        *slot = Some(v.item().to_f64_lossy());
        parts.push(v.scale(T::of(w))?);
        Ok(())
    };
    if weights.w_time > 0.0 {
        let target_wave = tape.constant(target.wave.clone());
        add(weights.w_time, mag_mae(pred_wave, target_wave)?, &mut terms.time)?;
    }
    if weights.w_mag > 0.0 {
        add(weights.w_mag, mse(pred.cmag, tape.constant(target.cmag.clone()))?, &mut terms.mag)?;
    }
    if weights.w_complex > 0.0 {
        let cc = polar_to_complex(pred.cmag, pred.phase)?;
        add(weights.w_complex, mse(cc, tape.constant(target.ccomplex.clone()))?, &mut terms.complex)?;
    }
    if weights.w_phase > 0.0 {
        let v = phase_distance(pred.phase, tape.constant(target.phase.clone()))?;
        add(weights.w_phase, v, &mut terms.phase)?;
    }
    if weights.w_consistency > 0.0 {
        let spec = polar_to_complex(compression.decompress_var(pred.cmag)?, pred.phase)?;
        let v = consistency_loss(stft, spec, target.wave.len())?;
        add(weights.w_consistency, v, &mut terms.consistency)?;
    }
    let mut total = parts[0];
    for p in &parts[1..] {
        total = total.add(*p)?;
    }
    terms.total = total.item().to_f64_lossy();
    Ok((total, terms))
}
