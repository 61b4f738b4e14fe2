//! Causal magnitude-only enhancer: conv encoder, Mamba stack, per-frame
//! linear decoder predicting the compressed clean magnitude.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{conv, init_conv, init_linear, linear};
use super::{SpectralInput, SsmSettings};
use crate::autodiff::Conv2dSpec;
use crate::error::{Error, Result};
use crate::losses::SpecPrediction;
use crate::params::{Bound, ParamSet};
use crate::scalar::Scalar;
use crate::spectral::StftConfig;
use crate::ssm::SeqMixer;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderLayer {
    pub channels: usize,
    /// `(time, freq)` kernel extent.
    pub kernel: (usize, usize),
    pub freq_stride: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasicConfig {
    pub stft: StftConfig,
    pub encoder: Vec<EncoderLayer>,
    pub d_model: usize,
    pub n_mamba: usize,
    pub ssm: SsmSettings,
    /// `false` swaps in bidirectional blocks and centred time padding.
    pub causal: bool,
}

impl Default for BasicConfig {
    fn default() -> Self {
        let layer = |channels, freq_stride| EncoderLayer {
            channels,
            kernel: (3, 3),
            freq_stride,
        };
        Self {
            stft: StftConfig::default(),
            encoder: vec![layer(16, 1), layer(32, 2), layer(48, 1), layer(64, 2)],
            d_model: 64,
            n_mamba: 2,
            ssm: SsmSettings::default(),
            causal: true,
        }
    }
}

impl BasicConfig {
    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        if self.encoder.is_empty() || self.n_mamba == 0 || self.d_model == 0 {
            return Err(Error::Config("basic model needs encoder layers, d_model > 0 and n_mamba ≥ 1".into()));
        }
        for l in &self.encoder {
            if l.channels == 0 || l.kernel.0 == 0 || l.kernel.1 == 0 || l.freq_stride == 0 {
                return Err(Error::Config(format!("degenerate encoder layer {l:?}")));
            }
        }
        if self.encoder_bins().last() == Some(&0) {
            return Err(Error::Config("encoder strides leave no frequency bins".into()));
        }
        self.ssm.mamba(self.d_model).validate()
    }

    /// Conv geometry of encoder layer `i`.
    pub fn layer_spec(&self, i: usize) -> Conv2dSpec {
        let l = &self.encoder[i];
        let (kt, kf) = l.kernel;
        let time = if self.causal {
            (kt - 1, 0)
        } else {
            ((kt - 1) / 2, kt - 1 - (kt - 1) / 2)
        };
        Conv2dSpec {
            stride: (1, l.freq_stride),
            dilation: (1, 1),
            padding: (time.0, time.1, (kf - 1) / 2, kf - 1 - (kf - 1) / 2),
        }
    }

    /// Frequency extent after each encoder layer, starting from the STFT bins.
    pub fn encoder_bins(&self) -> Vec<usize> {
        let mut f = self.stft.n_bins();
        let mut out = Vec::with_capacity(self.encoder.len());
        for (i, l) in self.encoder.iter().enumerate() {
            let spec = self.layer_spec(i);
            let padded = f + spec.padding.2 + spec.padding.3;
            f = if padded < l.kernel.1 {
                0
            } else {
                (padded - l.kernel.1) / l.freq_stride + 1
            };
            out.push(f);
        }
        out
    }

    /// Width of the flattened encoder output per frame.
    pub fn flat_features(&self) -> usize {
        self.encoder.last().map_or(0, |l| l.channels) * self.encoder_bins().last().copied().unwrap_or(0)
    }

    pub fn init<T: Scalar, R: Rng + ?Sized>(&self, set: &mut ParamSet<T>, rng: &mut R) {
        let mut ci = 1;
        for (i, l) in self.encoder.iter().enumerate() {
            init_conv(set, &format!("enc.{i}"), ci, l.channels, l.kernel, rng);
            ci = l.channels;
        }
        init_linear(set, "proj", self.flat_features(), self.d_model, rng);
        let mamba = self.ssm.mamba(self.d_model);
        for i in 0..self.n_mamba {
            SeqMixer::<T>::init(&mamba, !self.causal, &format!("mamba.{i}"), set, rng);
        }
        init_linear(set, "dec", self.d_model, self.stft.n_bins(), rng);
    }

    /// Predicted compressed magnitude `relu(noisy + decoder)`; the noisy
    /// phase passes through unchanged.
    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'_, 't, T>, input: &SpectralInput<T>) -> Result<SpecPrediction<'t, T>> {
        let tape = p.tape();
        let (frames, bins) = (input.n_frames(), input.n_bins());
        let noisy = tape.constant(input.cmag.clone());
        let mut h = noisy.reshape(vec![1, frames, bins])?;
        for i in 0..self.encoder.len() {
            h = conv(p, &format!("enc.{i}"), h, self.layer_spec(i))?.silu()?;
        }
        let h = h.permute(&[1, 0, 2])?.reshape(vec![frames, self.flat_features()])?;
        let mut h = linear(p, "proj", h)?;
        let mamba = self.ssm.mamba(self.d_model);
        for i in 0..self.n_mamba {
            h = SeqMixer::bind(mamba, !self.causal, p, &format!("mamba.{i}"))?.residual_forward(h)?;
        }
        let cmag = noisy.add(linear(p, "dec", h)?)?.relu()?;
        Ok(SpecPrediction {
            cmag,
            phase: tape.constant(input.phase.clone()),
        })
    }
}
