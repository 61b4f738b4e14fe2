mod common;

use std::f64::consts::PI;

use common::{probe, rng, tiny_advanced, tiny_basic, uniform};
use rand::seq::SliceRandom;
use semamba::autodiff::{grad_check, grad_check_with, GradCheckOptions, Tape};
use semamba::losses::{composite_loss, mag_mae, LossTarget, LossWeights};
use semamba::models::{tf_mamba_block, Checkpoint, ModelConfig, ModelKind, OptimizerState, SpectralInput, TrainMeta};
use semamba::spectral::Stft;
use semamba::ssm::{init_bimamba, MambaConfig, SeqMixer};
use semamba::{Error, ParamSet, Tensor};

fn input_for(cfg: &ModelConfig, wave: &[f64]) -> (Stft<f64>, SpectralInput<f64>) {
    let stft = Stft::new(cfg.stft()).unwrap();
    let input = SpectralInput::from_wave(&stft, cfg.compression(), wave).unwrap();
    (stft, input)
}

fn predict(cfg: &ModelConfig, params: &ParamSet<f64>, input: &SpectralInput<f64>) -> (Tensor<f64>, Tensor<f64>) {
    let tape = Tape::new();
    let bound = params.bind(&tape, false);
    let pred = cfg.forward(&bound, input).unwrap();
    (pred.cmag.to_tensor(), pred.phase.to_tensor())
}

fn enhance(cfg: &ModelConfig, params: &ParamSet<f64>, wave: &[f64]) -> Vec<f64> {
    let (stft, input) = input_for(cfg, wave);
    let tape = Tape::new();
    let bound = params.bind(&tape, false);
    let pred = cfg.forward(&bound, &input).unwrap();
    cfg.synthesize(&stft, pred, wave.len()).unwrap().to_tensor().into_data()
}

#[test]
fn basic_is_causal_per_frame() {
    let cfg = ModelConfig::Basic(tiny_basic(true));
    let params = cfg.init_params::<f64>(3).unwrap();
    let (_, input) = input_for(&cfg, &uniform(&[96], -1.0, 1.0, 4).into_data());
    let (base, _) = predict(&cfg, &params, &input);
    let (frames, bins) = (input.n_frames(), input.n_bins());
    let mut r = rng(5);
    for _ in 0..20 {
        let t = rand::Rng::random_range(&mut r, 0..frames);
        let mut perturbed = input.clone();
        for f in 0..bins {
            perturbed.cmag.data_mut()[t * bins + f] += 0.3;
        }
        let (out, _) = predict(&cfg, &params, &perturbed);
        assert_eq!(&out.data()[..t * bins], &base.data()[..t * bins], "frame {t}");
    }
}

#[test]
fn basic_waveform_causality_respects_window_support() {
    let cfg = ModelConfig::Basic(tiny_basic(true));
    let params = cfg.init_params::<f64>(6).unwrap();
    let wave = uniform(&[128], -1.0, 1.0, 7).into_data();
    let base = enhance(&cfg, &params, &wave);
    let n_fft = cfg.stft().n_fft;
    for p in [40usize, 70, 100] {
        let mut w = wave.clone();
        w[p] += 0.5;
        let out = enhance(&cfg, &params, &w);
        let safe = p + 1 - n_fft;
        assert_eq!(&out[..safe], &base[..safe], "perturbation at {p}");
    }
}

#[test]
fn noncausal_basic_looks_ahead() {
    let cfg = ModelConfig::Basic(tiny_basic(false));
    let params = cfg.init_params::<f64>(3).unwrap();
    let (_, input) = input_for(&cfg, &uniform(&[96], -1.0, 1.0, 4).into_data());
    let (base, _) = predict(&cfg, &params, &input);
    let mut perturbed = input.clone();
    let bins = input.n_bins();
    perturbed.cmag.data_mut()[10 * bins + 2] += 0.3;
    let (out, _) = predict(&cfg, &params, &perturbed);
    assert_ne!(&out.data()[..10 * bins], &base.data()[..10 * bins]);
}

#[test]
fn basic_zero_input_gives_zero_output() {
    let cfg = ModelConfig::basic();
    let params = cfg.passthrough_params::<f64>(0).unwrap();
    let out = enhance(&cfg, &params, &vec![0.0; 4000]);
    assert_eq!(out.len(), 4000);
    assert!(out.iter().all(|&v| v == 0.0));
}

#[test]
fn untrained_basic_is_finite_and_length_matched() {
    let cfg = ModelConfig::basic();
    let params = cfg.init_params::<f64>(1).unwrap();
    let wave = uniform(&[16000], -0.5, 0.5, 2).into_data();
    let out = enhance(&cfg, &params, &wave);
    assert_eq!(out.len(), 16000);
    assert!(out.iter().all(|v| v.is_finite()));
}

#[test]
fn advanced_passthrough_reconstructs_input() {
    let cfg = ModelConfig::Advanced(tiny_advanced(true));
    let params = cfg.passthrough_params::<f64>(2).unwrap();
    let wave = uniform(&[200], -1.0, 1.0, 8).into_data();
    let stft = Stft::new(cfg.stft()).unwrap();
    let direct = stft.inverse(&stft.forward(&wave).unwrap()).unwrap();
    let out = enhance(&cfg, &params, &wave);
    let err = out.iter().zip(&direct).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    assert!(err < 1e-9, "{err}");
}

#[test]
fn advanced_outputs_are_in_range() {
    for bi in [false, true] {
        let cfg = ModelConfig::Advanced(tiny_advanced(bi));
        let params = cfg.init_params::<f64>(9).unwrap();
        let (_, input) = input_for(&cfg, &uniform(&[160], -1.0, 1.0, 10).into_data());
        let (cmag, phase) = predict(&cfg, &params, &input);
        assert!(cmag.data().iter().all(|&m| m >= 0.0));
        assert!(phase.data().iter().all(|&p| p > -PI && p <= PI));
        let out = enhance(&cfg, &params, &uniform(&[160], -1.0, 1.0, 10).into_data());
        assert_eq!(out.len(), 160);
        assert!(out.iter().all(|v| v.is_finite()));
    }
}

fn tf_parts(seed: u64) -> (MambaConfig, ParamSet<f64>) {
    let cfg = common::tiny_ssm().mamba(2);
    let mut set = ParamSet::new();
    init_bimamba(&cfg, "time", &mut set, &mut rng(seed));
    init_bimamba(&cfg, "freq", &mut set, &mut rng(seed + 1));
    (cfg, set)
}

fn run_tf(cfg: MambaConfig, set: &ParamSet<f64>, x: &Tensor<f64>) -> Tensor<f64> {
    let tape = Tape::new();
    let p = set.bind(&tape, false);
    let time = SeqMixer::bind(cfg, true, &p, "time").unwrap();
    let freq = SeqMixer::bind(cfg, true, &p, "freq").unwrap();
    tf_mamba_block(&time, &freq, tape.constant(x.clone())).unwrap().to_tensor()
}

#[test]
fn zeroed_tf_block_is_identity() {
    let (cfg, mut set) = tf_parts(1);
    set.zero_prefix("");
    let x = uniform(&[2, 6, 5], -1.0, 1.0, 3);
    assert_eq!(run_tf(cfg, &set, &x), x);
}

#[test]
fn time_pass_commutes_with_bin_shuffle() {
    let (cfg, mut set) = tf_parts(4);
    // isolate the time pass
    set.zero_prefix("freq.");
    let x = uniform(&[2, 6, 5], -1.0, 1.0, 5);
    let mut perm: Vec<usize> = (0..5).collect();
    perm.shuffle(&mut rng(6));
    let shuffle = |t: &Tensor<f64>| {
        let mut out = t.clone();
        for c in 0..2 {
            for tt in 0..6 {
                for (f, &src) in perm.iter().enumerate() {
                    out.data_mut()[(c * 6 + tt) * 5 + f] = t.data()[(c * 6 + tt) * 5 + src];
                }
            }
        }
        out
    };
    let a = shuffle(&run_tf(cfg, &set, &x));
    let b = run_tf(cfg, &set, &shuffle(&x));
    assert_eq!(a, b);
}

#[test]
fn tf_block_gradients_pass_check() {
    let (cfg, set) = tf_parts(7);
    let x = uniform(&[2, 6, 5], -1.0, 1.0, 8);
    let n = set.numel();
    let mut flat = set.flatten();
    flat.extend_from_slice(x.data());
    let r = grad_check(
        |v| {
            let p = set.bind_flat(v.slice(0, 0, n)?)?;
            let time = SeqMixer::bind(cfg, true, &p, "time")?;
            let freq = SeqMixer::bind(cfg, true, &p, "freq")?;
            let xv = v.slice(0, n, 60)?.reshape(vec![2, 6, 5])?;
            probe(tf_mamba_block(&time, &freq, xv)?, 9)
        },
        &Tensor::from_vec(flat),
        1e-4,
    )
    .unwrap();
    assert!(r.passed, "{r:?}");
}

#[test]
fn basic_loss_gradients_pass_check() {
    let cfg = ModelConfig::Basic(tiny_basic(true));
    let params = cfg.init_params::<f64>(11).unwrap();
    let noisy = uniform(&[48], -1.0, 1.0, 12).into_data();
    let clean = uniform(&[48], -1.0, 1.0, 13).into_data();
    let (stft, input) = input_for(&cfg, &noisy);
    let target = LossTarget::new(&stft, cfg.compression(), &clean).unwrap();
    let r = grad_check(
        |v| {
            let p = params.bind_flat(v)?;
            let pred = cfg.forward(&p, &input)?;
            mag_mae(pred.cmag, v.tape().constant(target.cmag.clone()))
        },
        &Tensor::from_vec(params.flatten()),
        1e-4,
    )
    .unwrap();
    assert!(r.passed, "{r:?}");
}

#[test]
fn advanced_loss_gradients_pass_check() {
    for bi in [false, true] {
        let cfg = ModelConfig::Advanced(tiny_advanced(bi));
        let params = cfg.init_params::<f64>(14).unwrap();
        let noisy = uniform(&[40], -1.0, 1.0, 15).into_data();
        let clean = uniform(&[40], -1.0, 1.0, 16).into_data();
        let (stft, input) = input_for(&cfg, &noisy);
        let target = LossTarget::new(&stft, cfg.compression(), &clean).unwrap();
        let weights = LossWeights::default();
        let r = grad_check_with(
            |v| {
                let p = params.bind_flat(v)?;
                let pred = cfg.forward(&p, &input)?;
                let wave = cfg.synthesize(&stft, pred, 40)?;
                Ok(composite_loss(&stft, cfg.compression(), wave, pred, &target, &weights)?.0)
            },
            &Tensor::from_vec(params.flatten()),
            1e-4,
            &GradCheckOptions {
                max_coords: Some(300),
                seed: 1,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(r.passed, "bidirectional={bi}: {r:?}");
    }
}

fn sample_checkpoint(cfg: ModelConfig) -> Checkpoint {
    let params = cfg.init_params::<f32>(21).unwrap();
    let n = params.numel();
    Checkpoint {
        config: cfg,
        params,
        meta: TrainMeta { step: 17, seed: 99 },
        optimizer: Some(OptimizerState {
            step: 17,
            m: vec![0.25; n],
            v: vec![1e-3; n],
        }),
    }
}

#[test]
fn checkpoint_roundtrip_is_exact() {
    let ck = sample_checkpoint(ModelConfig::Basic(tiny_basic(true)));
    let bytes = ck.to_bytes().unwrap();
    let back = Checkpoint::from_bytes(&bytes, Some(ModelKind::Basic)).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.to_bytes().unwrap(), bytes);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    ck.save(&path).unwrap();
    assert_eq!(Checkpoint::load(&path, None).unwrap(), ck);
}

#[test]
fn checkpoint_errors_are_classified() {
    let ck = sample_checkpoint(ModelConfig::Basic(tiny_basic(true)));
    let bytes = ck.to_bytes().unwrap();

    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&bad_magic, None), Err(Error::CheckpointVersion(_))));

    let mut bad_version = bytes.clone();
    bad_version[8] = 7;
    assert!(matches!(Checkpoint::from_bytes(&bad_version, None), Err(Error::CheckpointVersion(_))));

    assert!(matches!(
        Checkpoint::from_bytes(&bytes, Some(ModelKind::Advanced)),
        Err(Error::CheckpointKind { .. })
    ));

    let truncated = &bytes[..bytes.len() - 9];
    assert!(matches!(Checkpoint::from_bytes(truncated, None), Err(Error::CheckpointCorrupt(_))));

    let mut flipped = bytes.clone();
    let mid = bytes.len() - 40;
    flipped[mid] ^= 0x10;
    assert!(matches!(Checkpoint::from_bytes(&flipped, None), Err(Error::CheckpointCorrupt(_))));

    // a config whose inventory differs from the stored table
    let mut other = ck.clone();
    if let ModelConfig::Basic(b) = &mut other.config {
        b.n_mamba = 1;
    }
    let mismatched = Checkpoint {
        params: ck.params.clone(),
        ..other
    };
    let bytes = mismatched.to_bytes().unwrap();
    assert!(matches!(Checkpoint::from_bytes(&bytes, None), Err(Error::CheckpointInventory(_))));
}

#[test]
fn presets_validate_and_serialize() {
    for (name, cfg) in ModelConfig::presets() {
        cfg.validate().unwrap();
        let text = toml::to_string(&cfg).unwrap();
        let back: ModelConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg, "{name}");
    }
    let typo = "kind = \"basic\"\nd_modle = 8\n";
    assert!(toml::from_str::<ModelConfig>(typo).is_err());
}
