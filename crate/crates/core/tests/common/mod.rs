#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use semamba::autodiff::Var;
use semamba::{Result, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor<f64> {
    Tensor::uniform(shape.to_vec(), lo, hi, &mut rng(seed))
}

/// Scalar probe `Σ wᵢ yᵢ` with fixed pseudo-random weights, so every output
/// coordinate contributes a distinct amount to the checked gradient.
pub fn probe<'t>(y: Var<'t, f64>, seed: u64) -> Result<Var<'t, f64>> {
    let w = uniform(&y.shape(), -1.0, 1.0, seed);
    y.mul(y.tape().constant(w))?.sum()
}

/// `max |a − b| / max |b|`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

use semamba::models::{AdvancedConfig, BasicConfig, EncoderLayer, SsmSettings};
use semamba::spectral::StftConfig;
use semamba::ssm::ScanMode;

pub fn tiny_stft_config() -> StftConfig {
    StftConfig {
        n_fft: 16,
        hop: 4,
        win_len: 16,
        sample_rate: 16000,
    }
}

pub fn tiny_ssm() -> SsmSettings {
    SsmSettings {
        d_state: 2,
        expand: 2,
        conv_width: 2,
        scan: ScanMode::Parallel,
    }
}

pub fn tiny_basic(causal: bool) -> BasicConfig {
    BasicConfig {
        stft: tiny_stft_config(),
        encoder: vec![
            EncoderLayer {
                channels: 2,
                kernel: (3, 3),
                freq_stride: 1,
            },
            EncoderLayer {
                channels: 2,
                kernel: (2, 3),
                freq_stride: 2,
            },
        ],
        d_model: 3,
        n_mamba: 2,
        ssm: tiny_ssm(),
        causal,
    }
}

pub fn tiny_advanced(bidirectional: bool) -> AdvancedConfig {
    AdvancedConfig {
        stft: tiny_stft_config(),
        compression_exponent: 0.3,
        channels: 2,
        dense_depth: 2,
        n_blocks: 1,
        ssm: tiny_ssm(),
        bidirectional,
        mask_max: 2.0,
    }
}
