mod common;

use common::{rel_err, uniform};
use semamba::spectral::{compress_log1p, decompress_expm1, pcs_apply, Compression, PcsTable, Stft, StftConfig};
use semamba::Error;

fn config(n_fft: usize, hop: usize, win_len: usize) -> StftConfig {
    StftConfig {
        n_fft,
        hop,
        win_len,
        sample_rate: 16000,
    }
}

#[test]
fn roundtrip_holds_for_several_geometries() {
    for (cfg, len) in [
        (config(400, 100, 400), 16000),
        (config(512, 128, 512), 4001),
        (config(64, 16, 64), 999),
        (config(512, 100, 400), 3000),
    ] {
        let stft = Stft::<f64>::new(cfg).unwrap();
        let x = uniform(&[len], -1.0, 1.0, len as u64).into_data();
        let spec = stft.forward(&x).unwrap();
        assert_eq!(spec.n_frames, cfg.n_frames(len));
        assert_eq!(spec.n_bins, cfg.n_bins());
        let back = stft.inverse(&spec).unwrap();
        assert_eq!(back.len(), len);
        assert!(rel_err(&back, &x) < 1e-12, "{cfg:?}");
    }
}

#[test]
fn single_precision_roundtrip() {
    let stft = Stft::<f32>::new(StftConfig::default()).unwrap();
    let x: Vec<f32> = uniform(&[8000], -1.0, 1.0, 9).into_data().iter().map(|&v| v as f32).collect();
    let back = stft.inverse(&stft.forward(&x).unwrap()).unwrap();
    let err = back.iter().zip(&x).fold(0.0f32, |m, (a, b)| m.max((a - b).abs()));
    assert!(err < 1e-5, "{err}");
}

#[test]
fn overlap_violations_are_rejected() {
    for cfg in [config(400, 150, 400), config(400, 300, 400), config(400, 500, 400)] {
        assert!(matches!(Stft::<f64>::new(cfg), Err(Error::Cola(_))), "{cfg:?}");
    }
    assert!(Stft::<f64>::new(config(256, 64, 300)).is_err());
}

#[test]
fn pure_tone_peaks_at_its_bin() {
    let cfg = StftConfig::default();
    let stft = Stft::<f64>::new(cfg).unwrap();
    let k = 25;
    let hz = cfg.bin_hz(k);
    let x: Vec<f64> = (0..8000)
        .map(|n| (2.0 * std::f64::consts::PI * hz * n as f64 / 16000.0).sin())
        .collect();
    let spec = stft.forward(&x).unwrap();
    let mid = spec.n_frames / 2;
    let row = &spec.mag[mid * spec.n_bins..(mid + 1) * spec.n_bins];
    let peak = row.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
    assert_eq!(peak, k);
}

#[test]
fn compression_laws_invert() {
    let m = uniform(&[200], 0.0, 30.0, 11).into_data();
    for law in [Compression::Log1p, Compression::Power { exponent: 0.3 }, Compression::Power { exponent: 1.0 }] {
        let back = law.decompress(&law.compress(&m).unwrap()).unwrap();
        assert!(rel_err(&back, &m) < 1e-13, "{law:?}");
    }
    let c = compress_log1p(&m).unwrap();
    assert_eq!(decompress_expm1(&c).len(), m.len());
    assert!(Compression::Power { exponent: 0.0 }.validate().is_err());
    assert!(Compression::Power { exponent: 1.5 }.validate().is_err());
    assert!(compress_log1p(&[-1.0]).is_err());
}

#[test]
fn pcs_follows_the_per_band_law() {
    let cfg = StftConfig::default();
    let stft = Stft::<f64>::new(cfg).unwrap();
    let spec = stft.forward(&uniform(&[4000], -1.0, 1.0, 12).into_data()).unwrap();
    let table = PcsTable::illustrative_default();
    let out = pcs_apply(&spec, &table);
    for (i, (&got, &m)) in out.mag.iter().zip(&spec.mag).enumerate() {
        let g = table.gain_at(cfg.bin_hz(i % spec.n_bins));
        let want = (g * m.ln_1p()).exp_m1();
        assert!((got - want).abs() <= 1e-12 * want.max(1.0));
    }
    assert_eq!(out.phase, spec.phase);
}

#[test]
fn pcs_gains_below_one_attenuate() {
    let stft = Stft::<f64>::new(StftConfig::default()).unwrap();
    let spec = stft.forward(&uniform(&[4000], -1.0, 1.0, 13).into_data()).unwrap();
    let table = PcsTable::parse("0 4000 0.8\n4000 8000 1.0\n", 8000.0).unwrap();
    let out = pcs_apply(&spec, &table);
    assert!(out.mag.iter().zip(&spec.mag).all(|(a, b)| a <= b));
}

#[test]
fn pcs_tables_must_partition_the_band() {
    for text in ["0 4000 1.2\n", "0 4000 1.2\n5000 8000 1.0\n", "0 8000 -1\n", "0 8000\n", "a b c\n"] {
        assert!(matches!(PcsTable::parse(text, 8000.0), Err(Error::Config(_))), "{text:?}");
    }
    let t = PcsTable::parse("# comment\n0 8000 1   # unit\n", 8000.0).unwrap();
    assert!(t.is_identity());
}
