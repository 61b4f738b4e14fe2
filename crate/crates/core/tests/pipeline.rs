mod common;

use std::collections::BTreeSet;

use semamba::models::{BasicConfig, Checkpoint, EncoderLayer, ModelConfig, SsmSettings, TrainMeta};
use semamba::pipeline::dataset::{DatasetSpec, Mixture, Split};
use semamba::pipeline::synth::{synth_pair, MixtureSpec, NoiseKind, SpeechSpec, PEAK_LIMIT};
use semamba::pipeline::wav::{quantize, read_wav, write_wav};
use semamba::pipeline::{enhance_file, enhance_samples, train, AdamConfig, TrainConfig};
use semamba::spectral::{PcsTable, Stft};
use semamba::Error;

fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

fn mixture(noise: NoiseKind, snr_db: f64, seed: u64) -> MixtureSpec {
    MixtureSpec {
        speech: SpeechSpec::default(),
        noise,
        snr_db,
        seed,
    }
}

#[test]
fn mixtures_hit_the_target_snr_and_peak_limit() {
    for (i, noise) in [NoiseKind::White, NoiseKind::Pink, NoiseKind::Babble].into_iter().enumerate() {
        for snr in [-5.0, 0.0, 2.5, 7.5, 15.0, 17.5, 30.0] {
            let (clean, noisy) = synth_pair(&mixture(noise, snr, 10 + i as u64), 0.75, 16000).unwrap();
            assert_eq!(clean.len(), 12000);
            let residual: Vec<f64> = noisy.iter().zip(&clean).map(|(n, c)| n - c).collect();
            let measured = 10.0 * (power(&clean) / power(&residual)).log10();
            assert!((measured - snr).abs() < 0.01, "{noise:?} {snr}: {measured}");
            let peak = clean.iter().chain(&noisy).fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(peak <= PEAK_LIMIT && peak > PEAK_LIMIT - 1e-12);
        }
    }
}

#[test]
fn synthesis_is_deterministic_per_seed() {
    let spec = mixture(NoiseKind::Babble, 5.0, 99);
    let a = synth_pair(&spec, 0.5, 16000).unwrap();
    let b = synth_pair(&spec, 0.5, 16000).unwrap();
    assert!(a.0.iter().zip(&b.0).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert!(a.1.iter().zip(&b.1).all(|(x, y)| x.to_bits() == y.to_bits()));
    let c = synth_pair(&mixture(NoiseKind::Babble, 5.0, 100), 0.5, 16000).unwrap();
    assert_ne!(a.0, c.0);
}

#[test]
fn short_durations_are_rejected() {
    assert!(matches!(
        synth_pair(&mixture(NoiseKind::White, 0.0, 1), 0.49, 16000),
        Err(Error::InvalidArgument(_))
    ));
}

#[test]
fn splits_use_exactly_the_protocol_snrs() {
    let spec = DatasetSpec::default();
    let snrs = |split| -> BTreeSet<u64> { spec.mixtures(split, 3).iter().map(|m| m.snr_db.to_bits()).collect() };
    let want = |v: &[f64]| -> BTreeSet<u64> { v.iter().map(|x| x.to_bits()).collect() };
    assert_eq!(snrs(Split::Train), want(&[0.0, 5.0, 10.0, 15.0]));
    assert_eq!(snrs(Split::Test), want(&[2.5, 7.5, 12.5, 17.5]));
    let train = spec.mixtures(Split::Train, 3);
    assert_eq!(train.len(), 200);
    let kinds: BTreeSet<String> = train.iter().map(|m| format!("{:?}", m.noise)).collect();
    assert_eq!(kinds.len(), 3);
    let seeds: BTreeSet<u64> = train.iter().chain(&spec.mixtures(Split::Test, 3)).map(|m| m.seed).collect();
    assert_eq!(seeds.len(), 240);
}

fn small_dataset() -> DatasetSpec {
    DatasetSpec {
        n_train: 6,
        n_test: 2,
        duration_s: 0.5,
        ..DatasetSpec::default()
    }
}

#[test]
fn dataset_roundtrips_through_wav_files() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small_dataset().generate(5).unwrap();
    ds.write(dir.path()).unwrap();
    let loaded = semamba::pipeline::Dataset::load(dir.path()).unwrap();
    assert_eq!(loaded.train.len(), 6);
    for (a, b) in ds.train.iter().zip(&loaded.train) {
        assert_eq!(a.spec, b.spec);
        assert_eq!(quantize(&a.noisy), b.noisy);
        assert_eq!(quantize(&a.clean), b.clean);
    }
    let again = tempfile::tempdir().unwrap();
    small_dataset().generate(5).unwrap().write(again.path()).unwrap();
    for entry in std::fs::read_dir(dir.path()).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(
            std::fs::read(dir.path().join(&name)).unwrap(),
            std::fs::read(again.path().join(&name)).unwrap()
        );
    }
}

#[test]
fn wav_reader_rejects_other_formats() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, rate: u32, channels: u16| {
        let spec = hound::WavSpec {
            channels,
            sample_rate: rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let path = dir.path().join(name);
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for _ in 0..100 {
            w.write_sample(0i16).unwrap();
        }
        w.finalize().unwrap();
        path
    };
    assert!(matches!(read_wav(&write("a.wav", 8000, 1)), Err(Error::AudioFormat(_))));
    assert!(matches!(read_wav(&write("b.wav", 16000, 2)), Err(Error::AudioFormat(_))));
    assert_eq!(read_wav(&write("c.wav", 16000, 1)).unwrap().len(), 100);
    let missing = read_wav(&dir.path().join("missing.wav")).unwrap_err();
    assert!(missing.is_io());
}

#[test]
fn writer_reports_clipping() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.wav");
    let mut samples = vec![0.1; 1000];
    samples[3] = 1.5;
    samples[4] = -2.0;
    assert_eq!(write_wav(&path, &samples).unwrap(), 0.002);
    let back = read_wav(&path).unwrap();
    assert_eq!(back[3], 32767.0 / 32768.0);
    assert_eq!(back[4], -1.0);
}

fn toy_model() -> ModelConfig {
    let layer = |channels, freq_stride| EncoderLayer {
        channels,
        kernel: (3, 3),
        freq_stride,
    };
    ModelConfig::Basic(BasicConfig {
        encoder: vec![layer(4, 2), layer(4, 2)],
        d_model: 16,
        n_mamba: 1,
        ssm: SsmSettings {
            d_state: 4,
            ..SsmSettings::default()
        },
        ..BasicConfig::default()
    })
}

fn toy_config(steps: u64, seed: u64) -> TrainConfig {
    TrainConfig {
        model: toy_model(),
        optimizer: AdamConfig {
            lr: 2e-3,
            ..AdamConfig::default()
        },
        batch_size: 4,
        segment_len: 2000,
        steps,
        seed,
        ..TrainConfig::default()
    }
}

fn train_data() -> Vec<Mixture> {
    small_dataset().generate(11).unwrap().train
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let mut cfg = toy_config(4, 1);
    cfg.optimizer.lr = 0.0;
    let out = train(&cfg, &train_data(), None, |_| Ok(())).unwrap();
    let init = cfg.model.init_params::<f32>(1).unwrap();
    let bits = |p: &semamba::ParamSet<f32>| p.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&out.checkpoint.params), bits(&init));
    assert_eq!(out.log.len(), 4);
    assert!(out.log.iter().all(|l| l.grad_norm > 0.0));
}

#[test]
fn training_reduces_loss_for_several_seeds() {
    let data = train_data();
    for seed in [1, 2, 3] {
        let out = train(&toy_config(200, seed), &data, None, |_| Ok(())).unwrap();
        let mean = |s: &[semamba::pipeline::StepLog]| s.iter().map(|l| l.terms.total).sum::<f64>() / s.len() as f64;
        let first = mean(&out.log[..10]);
        let last = mean(&out.log[190..]);
        assert!(last < first, "seed {seed}: {first} -> {last}");
    }
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let data = train_data();
    let mut cfg = toy_config(6, 4);
    cfg.checkpoint_every = 3;
    let mut saved = Vec::new();
    let full = train(&cfg, &data, None, |ck| {
        saved.push(ck.to_bytes()?);
        Ok(())
    })
    .unwrap();
    assert_eq!(saved.len(), 1);
    let mid = Checkpoint::from_bytes(&saved[0], None).unwrap();
    assert_eq!(mid.meta, TrainMeta { step: 3, seed: 4 });
    let resumed = train(&cfg, &data, Some(mid), |_| Ok(())).unwrap();
    assert_eq!(resumed.checkpoint.to_bytes().unwrap(), full.checkpoint.to_bytes().unwrap());
    assert_eq!(resumed.log, full.log[3..]);
}

#[test]
fn resume_rejects_a_different_seed() {
    let data = train_data();
    let first = train(&toy_config(1, 4), &data, None, |_| Ok(())).unwrap();
    let err = train(&toy_config(2, 5), &data, Some(first.checkpoint), |_| Ok(()));
    assert!(matches!(err, Err(Error::Config(_))));
}

#[test]
fn non_finite_input_aborts_with_batch_seed() {
    let mut data = train_data();
    for m in &mut data {
        m.noisy.iter_mut().step_by(500).for_each(|v| *v = f64::NAN);
    }
    match train(&toy_config(2, 1), &data, None, |_| Ok(())) {
        Err(Error::Numeric(msg)) => assert!(msg.contains("batch seed"), "{msg}"),
        other => panic!("expected a numeric error, got {:?}", other.map(|o| o.log)),
    }
}

fn save_passthrough(config: &ModelConfig, path: &std::path::Path) {
    Checkpoint {
        config: config.clone(),
        params: config.passthrough_params(3).unwrap(),
        meta: TrainMeta::default(),
        optimizer: None,
    }
    .save(path)
    .unwrap();
}

#[test]
fn passthrough_checkpoint_reproduces_stft_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let (_, noisy) = synth_pair(&mixture(NoiseKind::Pink, 5.0, 8), 0.5, 16000).unwrap();
    let input = dir.path().join("in.wav");
    write_wav(&input, &noisy).unwrap();
    let samples = read_wav(&input).unwrap();
    for config in [toy_model(), ModelConfig::advanced_unidirectional()] {
        let ckpt = dir.path().join("pass.ckpt");
        save_passthrough(&config, &ckpt);
        let out = dir.path().join("out.wav");
        enhance_file(&input, &ckpt, &out, None).unwrap();
        let enhanced = read_wav(&out).unwrap();
        let stft = Stft::<f64>::new(config.stft()).unwrap();
        let expected = stft.inverse(&stft.forward(&samples).unwrap()).unwrap();
        assert_eq!(enhanced.len(), samples.len());
        let worst = enhanced.iter().zip(&expected).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(worst <= 1.0 / 32768.0, "{}: {worst}", config.kind());
    }
}

#[test]
fn identity_pcs_table_gives_identical_output_file() {
    let dir = tempfile::tempdir().unwrap();
    let (_, noisy) = synth_pair(&mixture(NoiseKind::White, 10.0, 9), 0.5, 16000).unwrap();
    let input = dir.path().join("in.wav");
    write_wav(&input, &noisy).unwrap();
    let config = toy_model();
    let ckpt = dir.path().join("m.ckpt");
    Checkpoint {
        config: config.clone(),
        params: config.init_params(6).unwrap(),
        meta: TrainMeta::default(),
        optimizer: None,
    }
    .save(&ckpt)
    .unwrap();
    let table = dir.path().join("identity.txt");
    std::fs::write(&table, PcsTable::identity(8000.0).to_text()).unwrap();
    let (plain, stretched) = (dir.path().join("a.wav"), dir.path().join("b.wav"));
    enhance_file(&input, &ckpt, &plain, None).unwrap();
    enhance_file(&input, &ckpt, &stretched, Some(&table)).unwrap();
    assert_eq!(std::fs::read(&plain).unwrap(), std::fs::read(&stretched).unwrap());

    let default_table = PcsTable::illustrative_default();
    let params = config.init_params::<f64>(6).unwrap();
    let with = enhance_samples(&config, &params, &noisy, Some(&default_table)).unwrap();
    let without = enhance_samples(&config, &params, &noisy, None).unwrap();
    assert_eq!(with.len(), without.len());
    assert_ne!(with, without);
}

#[test]
fn enhance_rejects_wrong_kind_or_rate() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in8k.wav");
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: 8000,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(&input, spec).unwrap();
    for i in 0..8000 {
        w.write_sample(((i % 50) * 100) as i16).unwrap();
    }
    w.finalize().unwrap();
    let ckpt = dir.path().join("m.ckpt");
    save_passthrough(&toy_model(), &ckpt);
    let err = enhance_file(&input, &ckpt, &dir.path().join("o.wav"), None).unwrap_err();
    assert!(matches!(err, Error::AudioFormat(_)));
    assert!(matches!(
        Checkpoint::load(&ckpt, Some(semamba::models::ModelKind::Advanced)),
        Err(Error::CheckpointKind { .. })
    ));
}
