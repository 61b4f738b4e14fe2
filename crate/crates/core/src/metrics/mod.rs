//! Evaluation metrics and complexity accounting.

pub mod flops;
mod resample;
mod si_sdr;
mod stoi;
mod timing;

pub use flops::{
    count_attention_baseline, count_mamba_stack, count_model, fit_quadratic, fit_scaling_exponent, CountOptions,
    FlopsReport, LayerCount,
};
pub use resample::resample;
pub use si_sdr::{si_sdr, SI_SDR_MAX_DB};
pub use stoi::stoi;
pub use timing::time_scan;
