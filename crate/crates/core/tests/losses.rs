mod common;

use std::f64::consts::PI;

use common::uniform;
use proptest::prelude::*;
use semamba::autodiff::{grad_check, wrap_angle, Tape};
use semamba::losses::{
    composite_loss, consistency_loss, mag_mae, phase_distance, LossTarget, LossWeights, SpecPrediction,
};
use semamba::spectral::{Compression, Stft, StftConfig};
use semamba::Tensor;

fn tiny_stft() -> Stft<f64> {
    Stft::new(StftConfig {
        n_fft: 16,
        hop: 4,
        win_len: 16,
        sample_rate: 16000,
    })
    .unwrap()
}

fn flat_complex(stft: &Stft<f64>, wave: &[f64]) -> Tensor<f64> {
    let (mut re, im) = stft.analyze(wave).unwrap();
    let frames = re.len() / stft.config().n_bins();
    re.extend(im);
    Tensor::new(vec![2, frames, stft.config().n_bins()], re).unwrap()
}

#[test]
fn mag_mae_matches_summation() {
    let a = uniform(&[4, 5], 0.0, 3.0, 1);
    let b = uniform(&[4, 5], 0.0, 3.0, 2);
    let oracle: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / 20.0;
    let tape = Tape::new();
    let v = mag_mae(tape.constant(a), tape.constant(b)).unwrap().item();
    assert!((v - oracle).abs() < 1e-15);
    let c = tape.constant(Tensor::<f64>::zeros(vec![3]));
    assert!(mag_mae(c, tape.constant(Tensor::zeros(vec![4]))).is_err());
}

proptest! {
    #[test]
    fn phase_distance_is_minimal_shift(a in -PI..PI, b in -PI..PI) {
        let tape = Tape::new();
        let d = phase_distance(tape.constant(Tensor::from_vec(vec![a])), tape.constant(Tensor::from_vec(vec![b])))
            .unwrap()
            .item();
        let brute = [-1.0, 0.0, 1.0].iter().map(|k| (a - b + 2.0 * PI * k).abs()).fold(f64::INFINITY, f64::min);
        prop_assert!((d - brute).abs() < 1e-12);
    }
}

#[test]
fn consistency_of_analysed_signal_vanishes() {
    let stft = tiny_stft();
    for seed in 0..5 {
        let wave = uniform(&[64], -1.0, 1.0, seed).into_data();
        let tape = Tape::new();
        let spec = tape.constant(flat_complex(&stft, &wave));
        let v = consistency_loss(&stft, spec, 64).unwrap().item();
        assert!(v < 1e-18, "{v}");
    }
}

#[test]
fn random_spectrum_is_inconsistent_and_projection_is_idempotent() {
    let stft = tiny_stft();
    let s = uniform(&[2, 17, 9], -1.0, 1.0, 3);
    let tape = Tape::new();
    let v = consistency_loss(&stft, tape.constant(s.clone()), 64).unwrap().item();
    assert!(v > 1e-3);
    let half = s.len() / 2;
    let wave = stft.synthesize(&s.data()[..half], &s.data()[half..], 64).unwrap();
    let projected = flat_complex(&stft, &wave);
    let again = consistency_loss(&stft, tape.constant(projected), 64).unwrap().item();
    assert!(again < 1e-18, "{again}");
}

#[test]
fn consistency_gradient_through_istft_and_stft() {
    let stft = tiny_stft();
    let s = uniform(&[2, 17, 9], -1.0, 1.0, 4);
    let r = grad_check(|v| consistency_loss(&stft, v, 64), &s, 1e-4).unwrap();
    assert!(r.passed, "{r:?}");
}

struct Case {
    stft: Stft<f64>,
    target: LossTarget<f64>,
    pred_wave: Tensor<f64>,
    pred_cmag: Tensor<f64>,
    pred_phase: Tensor<f64>,
}

fn case(compression: Compression, seed: u64) -> Case {
    let stft = tiny_stft();
    let clean = uniform(&[64], -1.0, 1.0, seed).into_data();
    let target = LossTarget::new(&stft, compression, &clean).unwrap();
    Case {
        pred_wave: uniform(&[64], -1.0, 1.0, seed + 1),
        pred_cmag: uniform(&[17, 9], 0.1, 2.0, seed + 2),
        pred_phase: uniform(&[17, 9], -3.0, 3.0, seed + 3),
        stft,
        target,
    }
}

fn evaluate(c: &Case, compression: Compression, w: &LossWeights) -> semamba::losses::LossTerms {
    let tape = Tape::new();
    let pred = SpecPrediction {
        cmag: tape.constant(c.pred_cmag.clone()),
        phase: tape.constant(c.pred_phase.clone()),
    };
    composite_loss(&c.stft, compression, tape.constant(c.pred_wave.clone()), pred, &c.target, w)
        .unwrap()
        .1
}

#[test]
fn composite_equals_weighted_independent_terms() {
    let compression = Compression::Power { exponent: 0.3 };
    let c = case(compression, 10);
    let w = LossWeights {
        w_time: 0.7,
        w_mag: 1.3,
        w_complex: 0.4,
        w_phase: 0.25,
        w_consistency: 2.0,
        w_gan: 0.0,
    };
    let terms = evaluate(&c, compression, &w);

    let n = 17.0 * 9.0;
    let time = c.pred_wave.data().iter().zip(c.target.wave.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / 64.0;
    let mag = c.pred_cmag.data().iter().zip(c.target.cmag.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n;
    let (tre, tim) = c.target.ccomplex.data().split_at(17 * 9);
    let mut complex = 0.0;
    let mut phase = 0.0;
    let mut re = Vec::new();
    let mut im = Vec::new();
    for i in 0..17 * 9 {
        let (m, p) = (c.pred_cmag.data()[i], c.pred_phase.data()[i]);
        complex += (m * p.cos() - tre[i]).powi(2) + (m * p.sin() - tim[i]).powi(2);
        phase += wrap_angle(p - c.target.phase.data()[i]).abs();
        let raw = m.powf(1.0 / 0.3);
        re.push(raw * p.cos());
        im.push(raw * p.sin());
    }
    complex /= 2.0 * n;
    phase /= n;
    let wave = c.stft.synthesize(&re, &im, 64).unwrap();
    let (re2, im2) = c.stft.analyze(&wave).unwrap();
    let consistency = (0..re.len()).map(|i| (re[i] - re2[i]).powi(2) + (im[i] - im2[i]).powi(2)).sum::<f64>() / n;

    let close = |a: Option<f64>, b: f64| (a.unwrap() - b).abs() <= 1e-12 * b.abs().max(1.0);
    assert!(close(terms.time, time));
    assert!(close(terms.mag, mag));
    assert!(close(terms.complex, complex));
    assert!(close(terms.phase, phase));
    assert!(close(terms.consistency, consistency));
    let manual = 0.7 * time + 1.3 * mag + 0.4 * complex + 0.25 * phase + 2.0 * consistency;
    assert!((terms.total - manual).abs() < 1e-12 * manual);
}

#[test]
fn composite_is_linear_in_each_weight() {
    let compression = Compression::Log1p;
    let c = case(compression, 20);
    let base = LossWeights::default();
    let t0 = evaluate(&c, compression, &base);
    let doubled = LossWeights {
        w_phase: 2.0 * base.w_phase,
        ..base
    };
    let t1 = evaluate(&c, compression, &doubled);
    let contribution = base.w_phase * t0.phase.unwrap();
    assert!((t1.total - t0.total - contribution).abs() < 1e-12);
}

#[test]
fn time_term_of_impulse_offset() {
    let compression = Compression::Log1p;
    let stft = tiny_stft();
    let clean = uniform(&[64], -1.0, 1.0, 30).into_data();
    let target = LossTarget::new(&stft, compression, &clean).unwrap();
    let mut pred = clean.clone();
    pred[17] += 0.25;
    let w = LossWeights {
        w_time: 1.0,
        w_mag: 0.0,
        w_complex: 0.0,
        w_phase: 0.0,
        w_consistency: 0.0,
        w_gan: 0.0,
    };
    let tape = Tape::new();
    let spec = SpecPrediction {
        cmag: tape.constant(target.cmag.clone()),
        phase: tape.constant(target.phase.clone()),
    };
    let (_, terms) = composite_loss(&stft, compression, tape.constant(Tensor::from_vec(pred)), spec, &target, &w).unwrap();
    assert!((terms.total - 0.25 / 64.0).abs() < 1e-15);
    assert!(terms.mag.is_none());
}

#[test]
fn identical_prediction_gives_zero() {
    let compression = Compression::Power { exponent: 0.3 };
    let stft = tiny_stft();
    let clean = uniform(&[64], -1.0, 1.0, 40).into_data();
    let target = LossTarget::new(&stft, compression, &clean).unwrap();
    let w = LossWeights {
        w_time: 1.0,
        w_mag: 1.0,
        w_complex: 1.0,
        w_phase: 1.0,
        w_consistency: 1.0,
        w_gan: 0.0,
    };
    let tape = Tape::new();
    let spec = SpecPrediction {
        cmag: tape.constant(target.cmag.clone()),
        phase: tape.constant(target.phase.clone()),
    };
    let (_, terms) = composite_loss(&stft, compression, tape.constant(target.wave.clone()), spec, &target, &w).unwrap();
    assert_eq!(terms.time, Some(0.0));
    assert_eq!(terms.mag, Some(0.0));
    assert_eq!(terms.phase, Some(0.0));
    assert!(terms.total < 1e-18, "{terms:?}");
}

#[test]
fn composite_gradients_pass_check() {
    let compression = Compression::Power { exponent: 0.3 };
    let c = case(compression, 50);
    let w = LossWeights::default();
    let n = 17 * 9;
    let mut flat = c.pred_wave.data().to_vec();
    flat.extend_from_slice(c.pred_cmag.data());
    flat.extend_from_slice(c.pred_phase.data());
    let r = grad_check(
        |v| {
            let pred = SpecPrediction {
                cmag: v.slice(0, 64, n)?.reshape(vec![17, 9])?,
                phase: v.slice(0, 64 + n, n)?.reshape(vec![17, 9])?,
            };
            Ok(composite_loss(&c.stft, compression, v.slice(0, 0, 64)?, pred, &c.target, &w)?.0)
        },
        &Tensor::from_vec(flat),
        1e-4,
    )
    .unwrap();
    assert!(r.passed, "{r:?}");
}
