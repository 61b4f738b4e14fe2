//! Segment-sampled Adam training with per-step derived batch seeds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::Mixture;
use super::synth::derive_seed;
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::losses::{composite_loss, mag_mae, LossTarget, LossTerms, LossWeights};
use crate::models::{Checkpoint, ModelConfig, ModelKind, OptimizerState, SpectralInput, TrainMeta};
use crate::params::ParamSet;
use crate::spectral::Stft;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// The rate is multiplied by `decay_factor` after every `decay_every`
    /// fraction of the total steps.
    pub decay_every: f64,
    pub decay_factor: f64,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            decay_every: 0.3,
            decay_factor: 0.5,
            clip_norm: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub loss: LossWeights,
    pub optimizer: AdamConfig,
    pub batch_size: usize,
    /// Samples per training segment.
    pub segment_len: usize,
    pub steps: u64,
    pub seed: u64,
    /// Steps between checkpoints; 0 writes only the final one.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::basic(),
            loss: LossWeights::default(),
            optimizer: AdamConfig::default(),
            batch_size: 4,
            segment_len: 16_000,
            steps: 10_000,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    /// Parses TOML for a model kind. Without a `[model]` table the kind's
    /// default architecture is used; with one, its kind must agree.
    pub fn from_toml(text: &str, kind: ModelKind) -> Result<Self> {
        let value: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let has_model = value.contains_key("model");
        let mut cfg: Self = value.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        if !has_model {
            cfg.model = ModelConfig::default_for(kind);
        } else if cfg.model.kind() != kind {
            return Err(Error::Config(format!(
                "config describes a {} model but {kind} was requested",
                cfg.model.kind()
            )));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        let o = &self.optimizer;
        let ok = o.lr >= 0.0
            && o.lr.is_finite()
            && (0.0..1.0).contains(&o.beta1)
            && (0.0..1.0).contains(&o.beta2)
            && o.eps > 0.0
            && o.decay_every > 0.0
            && o.decay_factor > 0.0
            && o.clip_norm >= 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid optimizer settings {o:?}")));
        }
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::Config("steps and batch_size must be positive".into()));
        }
        let window = self.model.stft().win_len;
        if self.segment_len < window {
            return Err(Error::Config(format!(
                "segment length {} is shorter than the {window}-sample window",
                self.segment_len
            )));
        }
        Ok(())
    }

    /// Learning rate in effect at 0-based `step`.
    pub fn lr_at(&self, step: u64) -> f64 {
        let o = &self.optimizer;
        let period = ((o.decay_every * self.steps as f64).ceil() as u64).max(1);
        o.lr * o.decay_factor.powi((step / period) as i32)
    }
}

/// Per-step record of the training trajectory.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepLog {
    pub step: u64,
    pub lr: f64,
    pub batch_seed: u64,
    pub terms: LossTerms,
    pub grad_norm: f64,
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<StepLog>,
}

/// Segment pair `(clean, noisy)` cut at a random offset; short items are zero-padded.
fn cut_segment(m: &Mixture, len: usize, rng: &mut ChaCha8Rng) -> (Vec<f32>, Vec<f32>) {
    let take = |src: &[f64], off: usize| -> Vec<f32> {
        let mut v: Vec<f32> = src.iter().skip(off).take(len).map(|&x| x as f32).collect();
        v.resize(len, 0.0);
        v
    };
    let off = if m.clean.len() > len { rng.random_range(0..=m.clean.len() - len) } else { 0 };
    (take(&m.clean, off), take(&m.noisy, off))
}

fn item_gradient(
    config: &TrainConfig,
    stft: &Stft<f32>,
    params: &ParamSet<f32>,
    clean: &[f32],
    noisy: &[f32],
) -> Result<(Vec<f32>, LossTerms)> {
    let model = &config.model;
    let compression = model.compression();
    let tape = Tape::new();
    let bound = params.bind(&tape, true);
    let input = SpectralInput::from_wave(stft, compression, noisy)?;
    let target = LossTarget::new(stft, compression, clean)?;
    let pred = model.forward(&bound, &input)?;
    let (loss, terms) = match model.kind() {
        ModelKind::Basic => {
            let loss = mag_mae(pred.cmag, tape.constant(target.cmag.clone()))?;
            let v = loss.item() as f64;
            (
                loss,
                LossTerms {
                    mag: Some(v),
                    total: v,
                    ..LossTerms::default()
                },
            )
        }
        ModelKind::Advanced => {
            let wave = model.synthesize(stft, pred, clean.len())?;
            composite_loss(stft, compression, wave, pred, &target, &config.loss)?
        }
    };
    loss.backward()?;
    Ok((bound.flat_grads(), terms))
}

fn mean_terms(items: &[LossTerms]) -> LossTerms {
    let n = items.len() as f64;
    let avg = |f: fn(&LossTerms) -> Option<f64>| -> Option<f64> {
        items.iter().map(f).sum::<Option<f64>>().map(|s| s / n)
    };
    LossTerms {
        time: avg(|t| t.time),
        mag: avg(|t| t.mag),
        complex: avg(|t| t.complex),
        phase: avg(|t| t.phase),
        consistency: avg(|t| t.consistency),
        total: items.iter().map(|t| t.total).sum::<f64>() / n,
    }
}

/// Trains from scratch, or from `resume` when given, up to `config.steps`.
/// `on_checkpoint` receives every intermediate checkpoint at the configured
/// cadence. Each batch is drawn from a seed derived from `(seed, step)`,
/// gradients are reduced serially in item order, so the trajectory is
/// independent of thread count.
pub fn train<F>(config: &TrainConfig, data: &[Mixture], resume: Option<Checkpoint>, mut on_checkpoint: F) -> Result<TrainOutcome>
where
    F: FnMut(&Checkpoint) -> Result<()>,
{
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let stft = Stft::<f32>::new(config.model.stft())?;
    let (mut params, mut m, mut v, start) = match resume {
        Some(ck) => {
            if ck.config != config.model {
                return Err(Error::Config("checkpoint model config differs from the training config".into()));
            }
            if ck.meta.seed != config.seed {
                return Err(Error::Config(format!(
                    "checkpoint was trained with seed {}, config has {}",
                    ck.meta.seed, config.seed
                )));
            }
            let n = ck.params.numel();
            let (m, v) = match ck.optimizer {
                Some(o) => (o.m, o.v),
                None => (vec![0.0; n], vec![0.0; n]),
            };
            (ck.params, m, v, ck.meta.step)
        }
        None => {
            let p = config.model.init_params::<f32>(config.seed)?;
            let n = p.numel();
            (p, vec![0.0; n], vec![0.0; n], 0)
        }
    };
    let snapshot = |params: &ParamSet<f32>, m: &[f32], v: &[f32], step: u64| Checkpoint {
        config: config.model.clone(),
        params: params.clone(),
        meta: TrainMeta { step, seed: config.seed },
        optimizer: Some(OptimizerState {
            step,
            m: m.to_vec(),
            v: v.to_vec(),
        }),
    };

    let o = config.optimizer;
    let mut log = Vec::with_capacity(config.steps.saturating_sub(start) as usize);
    for step in start..config.steps {
        let batch_seed = derive_seed(config.seed, step);
        let mut rng = ChaCha8Rng::seed_from_u64(batch_seed);
        let batch: Vec<(Vec<f32>, Vec<f32>)> = (0..config.batch_size)
            .map(|_| {
                let item = &data[rng.random_range(0..data.len())];
                cut_segment(item, config.segment_len, &mut rng)
            })
            .collect();
        let results: Vec<Result<(Vec<f32>, LossTerms)>> = batch
            .par_iter()
            .map(|(clean, noisy)| item_gradient(config, &stft, &params, clean, noisy))
            .collect();
        let mut grad = vec![0.0f32; params.numel()];
        let mut terms = Vec::with_capacity(results.len());
        for r in results {
            let (g, t) = r.map_err(|e| match e {
                Error::NonFinite { op } => {
                    Error::Numeric(format!("non-finite value in {op} at step {step}, batch seed {batch_seed}"))
                }
                other => other,
            })?;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
            terms.push(t);
        }
        let scale = 1.0 / config.batch_size as f32;
        grad.iter_mut().for_each(|g| *g *= scale);
        let terms = mean_terms(&terms);
        let grad_norm = grad.iter().map(|&g| (g as f64).powi(2)).sum::<f64>().sqrt();
        if !terms.total.is_finite() || !grad_norm.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss {} (grad norm {grad_norm}) at step {step}, batch seed {batch_seed}",
                terms.total
            )));
        }
        if o.clip_norm > 0.0 && grad_norm > o.clip_norm {
            let c = (o.clip_norm / grad_norm) as f32;
            grad.iter_mut().for_each(|g| *g *= c);
        }

        let lr = config.lr_at(step);
        let t = (step + 1) as i32;
        let bias1 = (1.0 - o.beta1.powi(t)) as f32;
        let bias2 = (1.0 - o.beta2.powi(t)) as f32;
        let (b1, b2, eps, lr32) = (o.beta1 as f32, o.beta2 as f32, o.eps as f32, lr as f32);
        let mut flat = params.flatten();
        for i in 0..flat.len() {
            let g = grad[i];
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            let update = (m[i] / bias1) / ((v[i] / bias2).sqrt() + eps);
            flat[i] -= lr32 * update;
        }
        params.unflatten(&flat)?;

        log::debug!("step {step} lr {lr:.3e} loss {:.5} grad norm {grad_norm:.4}", terms.total);
        log.push(StepLog {
            step,
            lr,
            batch_seed,
            terms,
            grad_norm,
        });
        let done = step + 1;
        if config.checkpoint_every > 0 && done % config.checkpoint_every == 0 && done < config.steps {
            on_checkpoint(&snapshot(&params, &m, &v, done))?;
        }
    }
    Ok(TrainOutcome {
        checkpoint: snapshot(&params, &m, &v, config.steps.max(start)),
        log,
    })
}
