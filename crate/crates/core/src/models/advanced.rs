//! Non-causal magnitude-and-phase enhancer built from time-frequency Mamba
//! blocks between a dilated dense encoder and two decoders.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{conv, conv_transpose, dense, init_conv, init_conv_transpose, init_dense};
use super::{SpectralInput, SsmSettings};
use crate::autodiff::{concat, Conv2dSpec, Var};
use crate::error::{Error, Result};
use crate::losses::SpecPrediction;
use crate::params::{Bound, ParamSet};
use crate::scalar::Scalar;
use crate::spectral::{Compression, StftConfig};
use crate::ssm::SeqMixer;
use crate::tensor::Tensor;

const FREQ_DOWN: Conv2dSpec = Conv2dSpec {
    stride: (1, 2),
    dilation: (1, 1),
    padding: (0, 0, 0, 0),
};

const POINTWISE: Conv2dSpec = Conv2dSpec {
    stride: (1, 1),
    dilation: (1, 1),
    padding: (0, 0, 0, 0),
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdvancedConfig {
    pub stft: StftConfig,
    pub compression_exponent: f64,
    pub channels: usize,
    pub dense_depth: usize,
    pub n_blocks: usize,
    pub ssm: SsmSettings,
    pub bidirectional: bool,
    /// Upper bound of the magnitude mask.
    pub mask_max: f64,
}

impl Default for AdvancedConfig {
    fn default() -> Self {
        Self {
            stft: StftConfig::default(),
            compression_exponent: 0.3,
            channels: 16,
            dense_depth: 4,
            n_blocks: 4,
            ssm: SsmSettings::default(),
            bidirectional: true,
            mask_max: 2.0,
        }
    }
}

impl AdvancedConfig {
    pub fn compression(&self) -> Compression {
        Compression::Power {
            exponent: self.compression_exponent,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        self.compression().validate()?;
        if self.channels == 0 || self.dense_depth == 0 || self.n_blocks == 0 {
            return Err(Error::Config("advanced model needs channels, dense_depth and n_blocks ≥ 1".into()));
        }
        if self.stft.n_bins() < 3 {
            return Err(Error::Config("advanced model needs at least 3 frequency bins".into()));
        }
        if !(self.mask_max > 0.0) {
            return Err(Error::Config("mask_max must be positive".into()));
        }
        self.ssm.mamba(self.channels).validate()
    }

    /// Frequency extent inside the TF blocks.
    pub fn inner_bins(&self) -> usize {
        (self.stft.n_bins() - 3) / 2 + 1
    }

    /// Extra bottom/right rows needed by the upsampling conv to restore the bins.
    pub fn up_output_padding(&self) -> usize {
        self.stft.n_bins() - ((self.inner_bins() - 1) * 2 + 3)
    }

    pub fn init<T: Scalar, R: Rng + ?Sized>(&self, set: &mut ParamSet<T>, rng: &mut R) {
        let c = self.channels;
        init_conv(set, "enc.in", 2, c, (1, 1), rng);
        init_dense(set, "enc.dense", c, self.dense_depth, rng);
        init_conv(set, "enc.down", c, c, (1, 3), rng);
        let mamba = self.ssm.mamba(c);
        for b in 0..self.n_blocks {
            SeqMixer::<T>::init(&mamba, self.bidirectional, &format!("tf.{b}.time"), set, rng);
            SeqMixer::<T>::init(&mamba, self.bidirectional, &format!("tf.{b}.freq"), set, rng);
        }
        init_dense(set, "mag.dense", c, self.dense_depth, rng);
        init_conv_transpose(set, "mag.up", c, c, (1, 3), rng);
        init_conv(set, "mag.out", c, 1, (1, 1), rng);
        set.insert("mag.slope", Tensor::ones(vec![self.stft.n_bins()]));
        init_dense(set, "pha.dense", c, self.dense_depth, rng);
        init_conv_transpose(set, "pha.up", c, c, (1, 3), rng);
        init_conv(set, "pha.out_r", c, 1, (1, 1), rng);
        init_conv(set, "pha.out_i", c, 1, (1, 1), rng);
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'_, 't, T>, input: &SpectralInput<T>) -> Result<SpecPrediction<'t, T>> {
        let tape = p.tape();
        let (frames, bins) = (input.n_frames(), input.n_bins());
        let plane = vec![1, frames, bins];
        let noisy_cmag = tape.constant(input.cmag.clone().reshape(plane.clone())?);
        let noisy_phase = tape.constant(input.phase.clone().reshape(plane.clone())?);
        let x = concat(&[noisy_cmag, noisy_phase], 0)?;

        let h = conv(p, "enc.in", x, POINTWISE)?.silu()?;
        let h = dense(p, "enc.dense", h, self.dense_depth)?;
        let mut h = conv(p, "enc.down", h, FREQ_DOWN)?.silu()?;
        for b in 0..self.n_blocks {
            h = self.tf_block(p, b, h)?;
        }

        let up = (0, self.up_output_padding());
        let m = dense(p, "mag.dense", h, self.dense_depth)?;
        let m = conv_transpose(p, "mag.up", m, FREQ_DOWN, up)?.silu()?;
        let m = conv(p, "mag.out", m, POINTWISE)?;
        let mask = m
            .mul(p.get("mag.slope")?)?
            .sigmoid()?
            .scale(T::of(self.mask_max))?;
        let cmag = mask.mul(noisy_cmag)?.reshape(vec![frames, bins])?;

        let q = dense(p, "pha.dense", h, self.dense_depth)?;
        let q = conv_transpose(p, "pha.up", q, FREQ_DOWN, up)?.silu()?;
        let cos = tape.constant(input.phase.map(|v| v.cos()).reshape(plane.clone())?);
        let sin = tape.constant(input.phase.map(|v| v.sin()).reshape(plane)?);
        let re = conv(p, "pha.out_r", q, POINTWISE)?.add(cos)?;
        let im = conv(p, "pha.out_i", q, POINTWISE)?.add(sin)?;
        let phase = im.atan2(re)?.reshape(vec![frames, bins])?;
        Ok(SpecPrediction { cmag, phase })
    }

    fn tf_block<'t, T: Scalar>(&self, p: &Bound<'_, 't, T>, b: usize, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let mamba = self.ssm.mamba(self.channels);
        let time = SeqMixer::bind(mamba, self.bidirectional, p, &format!("tf.{b}.time"))?;
        let freq = SeqMixer::bind(mamba, self.bidirectional, p, &format!("tf.{b}.freq"))?;
        tf_mamba_block(&time, &freq, x)
    }
}

/// Time pass (frequency bins as batch) then frequency pass (frames as
/// batch) over `[C, T, F]` features, each with one residual path.
pub fn tf_mamba_block<'t, T: Scalar>(time: &SeqMixer<'t, T>, freq: &SeqMixer<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
    if x.shape().len() != 3 {
        return Err(Error::shape("tf_mamba_block", format!("expected [C, T, F], got {:?}", x.shape())));
    }
    let by_bin = time.residual_forward(x.permute(&[2, 1, 0])?)?;
    let by_frame = freq.residual_forward(by_bin.permute(&[1, 0, 2])?)?;
    by_frame.permute(&[2, 0, 1])
}
