//! STFT analysis/synthesis, magnitude compression and PCS post-processing.

pub mod compress;
pub mod pcs;
pub mod stft;

pub use compress::{compress_log1p, compress_power, decompress_expm1, decompress_power, Compression};
pub use pcs::{pcs_apply, PcsBand, PcsTable};
pub use stft::{Spectrogram, Stft, StftConfig};
