//! Enhancement models, their shipped presets and checkpoint storage.

mod advanced;
mod basic;
mod checkpoint;
mod layers;

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use advanced::{tf_mamba_block, AdvancedConfig};
pub use basic::{BasicConfig, EncoderLayer};
pub use checkpoint::{Checkpoint, OptimizerState, TrainMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::losses::{polar_to_complex, SpecPrediction};
use crate::params::{Bound, ParamSet};
use crate::scalar::Scalar;
use crate::spectral::{Compression, Stft, StftConfig};
use crate::ssm::{MambaConfig, ScanMode};
use crate::tensor::Tensor;

/// Mamba hyperparameters shared by every block of a model; the width comes
/// from the model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsmSettings {
    pub d_state: usize,
    pub expand: usize,
    pub conv_width: usize,
    pub scan: ScanMode,
}

impl Default for SsmSettings {
    fn default() -> Self {
        let m = MambaConfig::default();
        Self {
            d_state: m.d_state,
            expand: m.expand,
            conv_width: m.conv_width,
            scan: m.scan,
        }
    }
}

impl SsmSettings {
    pub fn mamba(&self, d_model: usize) -> MambaConfig {
        MambaConfig {
            d_model,
            d_state: self.d_state,
            expand: self.expand,
            conv_width: self.conv_width,
            scan: self.scan,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Basic,
    Advanced,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Basic => "basic",
            ModelKind::Advanced => "advanced",
        })
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "basic" => Ok(ModelKind::Basic),
            "advanced" => Ok(ModelKind::Advanced),
            other => Err(Error::Config(format!("unknown model kind {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    Basic(BasicConfig),
    Advanced(AdvancedConfig),
}

impl ModelConfig {
    pub fn basic() -> Self {
        ModelConfig::Basic(BasicConfig::default())
    }

    pub fn basic_noncausal() -> Self {
        ModelConfig::Basic(BasicConfig {
            causal: false,
            ..BasicConfig::default()
        })
    }

    pub fn advanced() -> Self {
        ModelConfig::Advanced(AdvancedConfig::default())
    }

    pub fn advanced_unidirectional() -> Self {
        ModelConfig::Advanced(AdvancedConfig {
            bidirectional: false,
            ..AdvancedConfig::default()
        })
    }

    /// The four shipped presets with their names.
    pub fn presets() -> Vec<(&'static str, ModelConfig)> {
        vec![
            ("basic", Self::basic()),
            ("basic-noncausal", Self::basic_noncausal()),
            ("advanced-uni", Self::advanced_unidirectional()),
            ("advanced", Self::advanced()),
        ]
    }

    pub fn default_for(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Basic => Self::basic(),
            ModelKind::Advanced => Self::advanced(),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ModelConfig::Basic(_) => ModelKind::Basic,
            ModelConfig::Advanced(_) => ModelKind::Advanced,
        }
    }

    pub fn stft(&self) -> StftConfig {
        match self {
            ModelConfig::Basic(c) => c.stft,
            ModelConfig::Advanced(c) => c.stft,
        }
    }

    pub fn compression(&self) -> Compression {
        match self {
            ModelConfig::Basic(_) => Compression::Log1p,
            ModelConfig::Advanced(c) => c.compression(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelConfig::Basic(c) => c.validate(),
            ModelConfig::Advanced(c) => c.validate(),
        }
    }

    /// Freshly initialised parameters; the inventory order is fixed by the config.
    pub fn init_params<T: Scalar>(&self, seed: u64) -> Result<ParamSet<T>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = ParamSet::new();
        match self {
            ModelConfig::Basic(c) => c.init(&mut set, &mut rng),
            ModelConfig::Advanced(c) => c.init(&mut set, &mut rng),
        }
        Ok(set)
    }

    /// Parameters with the output heads zeroed so the model reproduces its
    /// input spectrum.
    pub fn passthrough_params<T: Scalar>(&self, seed: u64) -> Result<ParamSet<T>> {
        let mut set = self.init_params(seed)?;
        match self {
            ModelConfig::Basic(_) => set.zero_prefix("dec."),
            ModelConfig::Advanced(_) => {
                set.zero_prefix("mag.out.");
                set.zero_prefix("pha.out_");
            }
        }
        Ok(set)
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'_, 't, T>, input: &SpectralInput<T>) -> Result<SpecPrediction<'t, T>> {
        match self {
            ModelConfig::Basic(c) => c.forward(p, input),
            ModelConfig::Advanced(c) => c.forward(p, input),
        }
    }

    /// Waveform of a prediction: decompress, recombine with phase, invert.
    pub fn synthesize<'t, T: Scalar>(&self, stft: &Stft<T>, pred: SpecPrediction<'t, T>, len: usize) -> Result<Var<'t, T>> {
        let mag = self.compression().decompress_var(pred.cmag)?;
        stft.istft_var(polar_to_complex(mag, pred.phase)?, len)
    }
}

/// Compressed magnitude and phase of a noisy waveform, each `[frames, bins]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralInput<T: Scalar> {
    pub cmag: Tensor<T>,
    pub phase: Tensor<T>,
    pub len: usize,
}

impl<T: Scalar> SpectralInput<T> {
    pub fn from_wave(stft: &Stft<T>, compression: Compression, wave: &[T]) -> Result<Self> {
        let spec = stft.forward(wave)?;
        let shape = vec![spec.n_frames, spec.n_bins];
        Ok(Self {
            cmag: Tensor::new(shape.clone(), compression.compress(&spec.mag)?)?,
            phase: Tensor::new(shape, spec.phase)?,
            len: wave.len(),
        })
    }

    pub fn n_frames(&self) -> usize {
        self.cmag.shape()[0]
    }

    pub fn n_bins(&self) -> usize {
        self.cmag.shape()[1]
    }
}
