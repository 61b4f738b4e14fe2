//! Perceptual contrast stretching applied after enhancement.
//!
//! Each band carries a gain `γ`; magnitudes in the band become
//! `expm1(γ · log1p(m))`. Phase is never touched.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::spectral::stft::Spectrogram;

#[derive(Clone, Debug, PartialEq)]
pub struct PcsBand {
    pub low_hz: f64,
    pub high_hz: f64,
    pub gain: f64,
}

/// Band table partitioning `[0, nyquist]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PcsTable {
    bands: Vec<PcsBand>,
}

/// Gains shipped as the default table. Illustrative values only: they shape
/// the mid band up a little and are not calibrated against any listening data.
const ILLUSTRATIVE_GAINS: [f64; 8] = [1.0, 1.1, 1.3, 1.4, 1.4, 1.3, 1.2, 1.1];

impl PcsTable {
    pub fn new(bands: Vec<PcsBand>, nyquist_hz: f64) -> Result<Self> {
        if bands.is_empty() {
            return Err(Error::Config("PCS table has no bands".into()));
        }
        let mut edge = 0.0;
        for (i, b) in bands.iter().enumerate() {
            if !(b.gain > 0.0) || !b.gain.is_finite() {
                return Err(Error::Config(format!("band {i}: gain must be positive, got {}", b.gain)));
            }
            if (b.low_hz - edge).abs() > 1e-9 || !(b.high_hz > b.low_hz) {
                return Err(Error::Config(format!(
                    "band {i} [{}, {}] does not continue the partition at {edge} Hz",
                    b.low_hz, b.high_hz
                )));
            }
            edge = b.high_hz;
        }
        if (edge - nyquist_hz).abs() > 1e-9 {
            return Err(Error::Config(format!("bands end at {edge} Hz, expected {nyquist_hz} Hz")));
        }
        Ok(Self { bands })
    }

    /// Single band with unit gain: applying it is a bit-exact no-op.
    pub fn identity(nyquist_hz: f64) -> Self {
        Self {
            bands: vec![PcsBand {
                low_hz: 0.0,
                high_hz: nyquist_hz,
                gain: 1.0,
            }],
        }
    }

    /// Eight equal-width bands over `[0, 8 kHz]` with gains in `[1.0, 1.4]`.
    pub fn illustrative_default() -> Self {
        let width = 1000.0;
        let bands = ILLUSTRATIVE_GAINS
            .iter()
            .enumerate()
            .map(|(i, &gain)| PcsBand {
                low_hz: i as f64 * width,
                high_hz: (i + 1) as f64 * width,
                gain,
            })
            .collect();
        Self { bands }
    }

    pub fn bands(&self) -> &[PcsBand] {
        &self.bands
    }

    pub fn is_identity(&self) -> bool {
        self.bands.iter().all(|b| b.gain == 1.0)
    }

    /// Parses `low_hz high_hz gain` lines; `#` starts a comment.
    pub fn parse(text: &str, nyquist_hz: f64) -> Result<Self> {
        let mut bands = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let parsed: Vec<f64> = fields
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
            if parsed.len() != 3 {
                return Err(Error::Config(format!(
                    "line {}: expected `low_hz high_hz gain`, got {} fields",
                    lineno + 1,
                    parsed.len()
                )));
            }
            bands.push(PcsBand {
                low_hz: parsed[0],
                high_hz: parsed[1],
                gain: parsed[2],
            });
        }
        Self::new(bands, nyquist_hz)
    }

    pub fn load(path: &Path, nyquist_hz: f64) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, nyquist_hz)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# low_hz high_hz gain\n");
        for b in &self.bands {
            s.push_str(&format!("{} {} {}\n", b.low_hz, b.high_hz, b.gain));
        }
        s
    }

    /// Gain for a frequency; the top edge belongs to the last band.
    pub fn gain_at(&self, hz: f64) -> f64 {
        self.bands
            .iter()
            .find(|b| hz >= b.low_hz && hz < b.high_hz)
            .or_else(|| self.bands.last())
            .map(|b| b.gain)
            .unwrap_or(1.0)
    }
}

pub fn pcs_apply<T: Scalar>(spec: &Spectrogram<T>, table: &PcsTable) -> Spectrogram<T> {
    let gains: Vec<f64> = (0..spec.n_bins)
        .map(|k| table.gain_at(spec.config.bin_hz(k)))
        .collect();
    let mut out = spec.clone();
    for row in out.mag.chunks_mut(spec.n_bins) {
        for (m, &g) in row.iter_mut().zip(&gains) {
            if g != 1.0 {
                *m = (T::of(g) * m.ln_1p()).exp_m1();
            }
        }
    }
    out
}
