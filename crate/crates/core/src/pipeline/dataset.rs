//! Train/test mixture sets following the fixed SNR protocol, stored as WAV
//! pairs plus a JSON manifest.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::synth::{derive_seed, synth_pair, MixtureSpec, NoiseKind, SpeechSpec, TEST_SNRS_DB, TRAIN_SNRS_DB};
use super::wav::{read_wav, write_wav, SAMPLE_RATE};
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn snrs(self) -> &'static [f64; 4] {
        match self {
            Split::Train => &TRAIN_SNRS_DB,
            Split::Test => &TEST_SNRS_DB,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub n_train: usize,
    pub n_test: usize,
    pub duration_s: f64,
    pub noises: Vec<NoiseKind>,
    pub speech: SpeechSpec,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            n_train: 200,
            n_test: 40,
            duration_s: 2.0,
            noises: vec![NoiseKind::White, NoiseKind::Pink, NoiseKind::Babble],
            speech: SpeechSpec::default(),
        }
    }
}

impl DatasetSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.noises.is_empty() {
            return Err(Error::Config("at least one noise kind is required".into()));
        }
        if !(self.duration_s >= 0.5) {
            return Err(Error::Config(format!("duration {} s is below 0.5 s", self.duration_s)));
        }
        self.speech.validate()
    }

    /// Mixture specs for one split. SNRs cycle fastest, then noise kinds, so
    /// every (SNR, noise) pair recurs evenly.
    pub fn mixtures(&self, split: Split, seed: u64) -> Vec<MixtureSpec> {
        let count = match split {
            Split::Train => self.n_train,
            Split::Test => self.n_test,
        };
        let base = derive_seed(seed, split as u64 + 1);
        let snrs = split.snrs();
        (0..count)
            .map(|i| MixtureSpec {
                speech: self.speech,
                noise: self.noises[(i / snrs.len()) % self.noises.len()],
                snr_db: snrs[i % snrs.len()],
                seed: derive_seed(base, i as u64),
            })
            .collect()
    }

    /// Synthesises both splits in parallel; the result depends only on `seed`.
    pub fn generate(&self, seed: u64) -> Result<Dataset> {
        self.validate()?;
        let make = |split: Split| -> Result<Vec<Mixture>> {
            self.mixtures(split, seed)
                .into_par_iter()
                .enumerate()
                .map(|(i, spec)| {
                    let (clean, noisy) = synth_pair(&spec, self.duration_s, SAMPLE_RATE)?;
                    Ok(Mixture {
                        id: format!("{}_{i:04}", split.name()),
                        spec,
                        clean,
                        noisy,
                    })
                })
                .collect()
        };
        Ok(Dataset {
            train: make(Split::Train)?,
            test: make(Split::Test)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mixture {
    pub id: String,
    pub spec: MixtureSpec,
    pub clean: Vec<f64>,
    pub noisy: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Vec<Mixture>,
    pub test: Vec<Mixture>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    id: String,
    clean: String,
    noisy: String,
    spec: MixtureSpec,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    sample_rate: u32,
    train: Vec<ManifestEntry>,
    test: Vec<ManifestEntry>,
}

impl Dataset {
    /// Writes `<id>_clean.wav` / `<id>_noisy.wav` per mixture and the manifest.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let entries = |items: &[Mixture]| -> Result<Vec<ManifestEntry>> {
            items
                .iter()
                .map(|m| {
                    let clean = format!("{}_clean.wav", m.id);
                    let noisy = format!("{}_noisy.wav", m.id);
                    write_wav(&dir.join(&clean), &m.clean)?;
                    write_wav(&dir.join(&noisy), &m.noisy)?;
                    Ok(ManifestEntry {
                        id: m.id.clone(),
                        clean,
                        noisy,
                        spec: m.spec,
                    })
                })
                .collect()
        };
        let manifest = Manifest {
            sample_rate: SAMPLE_RATE,
            train: entries(&self.train)?,
            test: entries(&self.test)?,
        };
        let path = dir.join(MANIFEST);
        let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Config(e.to_string()))?;
        fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if manifest.sample_rate != SAMPLE_RATE {
            return Err(Error::AudioFormat(format!("dataset sample rate {}", manifest.sample_rate)));
        }
        let read = |entries: Vec<ManifestEntry>| -> Result<Vec<Mixture>> {
            entries
                .into_iter()
                .map(|e| {
                    let clean = read_wav(&dir.join(&e.clean))?;
                    let noisy = read_wav(&dir.join(&e.noisy))?;
                    if clean.len() != noisy.len() {
                        return Err(Error::InvalidArgument(format!("{}: clean/noisy lengths differ", e.id)));
                    }
                    Ok(Mixture {
                        id: e.id,
                        spec: e.spec,
                        clean,
                        noisy,
                    })
                })
                .collect()
        };
        Ok(Self {
            train: read(manifest.train)?,
            test: read(manifest.test)?,
        })
    }
}
