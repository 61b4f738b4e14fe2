//! Finite-difference gradient suites over tiny instances of every
//! differentiable component, shared by the CLI and the test targets.

use std::f64::consts::PI;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{concat, grad_check_with, Conv2dSpec, GradCheckOptions, GradCheckReport, Var};
use crate::error::{Error, Result};
use crate::losses::{composite_loss, consistency_loss, mag_mae, mse, phase_distance, LossTarget, LossWeights, SpecPrediction};
use crate::models::{tf_mamba_block, AdvancedConfig, BasicConfig, EncoderLayer, ModelConfig, SpectralInput, SsmSettings};
use crate::params::ParamSet;
use crate::spectral::{Compression, Stft, StftConfig};
use crate::ssm::{init_bimamba, selection_project, selective_scan, BiMamba, MambaBlock, MambaConfig, ScanMode, SeqMixer};
use crate::tensor::Tensor;

/// Tolerance for single primitives.
pub const PRIMITIVE_TOL: f64 = 1e-6;
/// Tolerance for composite blocks, models and losses.
pub const COMPOSITE_TOL: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Primitives,
    Ssm,
    Models,
    Losses,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Primitives, Suite::Ssm, Suite::Models, Suite::Losses];
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Suite::Primitives => "primitives",
            Suite::Ssm => "ssm",
            Suite::Models => "models",
            Suite::Losses => "losses",
        })
    }
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "primitives" => Ok(Suite::Primitives),
            "ssm" => Ok(Suite::Ssm),
            "models" => Ok(Suite::Models),
            "losses" => Ok(Suite::Losses),
            other => Err(Error::InvalidArgument(format!("unknown gradient suite {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CaseResult {
    pub name: String,
    pub report: GradCheckReport,
}

pub fn run_suite(suite: Suite) -> Result<Vec<CaseResult>> {
    let mut cases = Cases::default();
    match suite {
        Suite::Primitives => primitives(&mut cases)?,
        Suite::Ssm => ssm(&mut cases)?,
        Suite::Models => models(&mut cases)?,
        Suite::Losses => losses(&mut cases)?,
    }
    Ok(cases.0)
}

#[derive(Default)]
struct Cases(Vec<CaseResult>);

impl Cases {
    fn check<F>(&mut self, name: &str, tol: f64, point: Tensor<f64>, f: F) -> Result<()>
    where
        F: for<'t> Fn(Var<'t, f64>) -> Result<Var<'t, f64>>,
    {
        self.check_sampled(name, tol, point, None, f)
    }

    fn check_sampled<F>(&mut self, name: &str, tol: f64, point: Tensor<f64>, max_coords: Option<usize>, f: F) -> Result<()>
    where
        F: for<'t> Fn(Var<'t, f64>) -> Result<Var<'t, f64>>,
    {
        let opts = GradCheckOptions {
            max_coords,
            seed: self.0.len() as u64,
            ..GradCheckOptions::default()
        };
        let report = grad_check_with(f, &point, tol, &opts)?;
        self.0.push(CaseResult {
            name: name.to_string(),
            report,
        });
        Ok(())
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor<f64> {
    Tensor::uniform(shape.to_vec(), lo, hi, &mut rng(seed))
}

/// Values with magnitude in `[0.2, 1.5]` and random sign, away from kinks at 0.
fn off_zero(shape: &[usize], seed: u64) -> Tensor<f64> {
    let signs = uniform(shape, -1.0, 1.0, seed + 1);
    let mut t = uniform(shape, 0.2, 1.5, seed);
    t.data_mut().iter_mut().zip(signs.data()).for_each(|(v, s)| *v = v.copysign(*s));
    t
}

/// Scalar `Σ wᵢ yᵢ` with fixed pseudo-random weights.
fn probe<'t>(y: Var<'t, f64>, seed: u64) -> Result<Var<'t, f64>> {
    let w = uniform(&y.shape(), -1.0, 1.0, seed);
    y.mul(y.tape().constant(w))?.sum()
}

fn concat_points(parts: &[&Tensor<f64>]) -> Tensor<f64> {
    Tensor::from_vec(parts.iter().flat_map(|t| t.data().iter().copied()).collect())
}

/// Splits a flat variable into pieces of the given shapes.
fn split<'t>(v: Var<'t, f64>, shapes: &[&[usize]]) -> Result<Vec<Var<'t, f64>>> {
    let mut pos = 0;
    shapes
        .iter()
        .map(|s| {
            let n: usize = s.iter().product();
            let out = v.slice(0, pos, n)?.reshape(s.to_vec());
            pos += n;
            out
        })
        .collect()
}

type Unary = for<'t> fn(Var<'t, f64>) -> Result<Var<'t, f64>>;
type BinaryOp = for<'t> fn(Var<'t, f64>, Var<'t, f64>) -> Result<Var<'t, f64>>;

fn primitives(cases: &mut Cases) -> Result<()> {
    let smooth = uniform(&[3, 4], -1.5, 1.5, 1);
    let unary: [(&str, Unary, Tensor<f64>); 18] = [
        ("neg", |v| v.neg(), smooth.clone()),
        ("scale", |v| v.scale(-1.7), smooth.clone()),
        ("add_scalar", |v| v.add_scalar(0.3), smooth.clone()),
        ("exp", |v| v.exp(), smooth.clone()),
        ("expm1", |v| v.expm1(), smooth.clone()),
        ("log1p", |v| v.log1p(), uniform(&[3, 4], -0.5, 2.0, 2)),
        ("softplus", |v| v.softplus(), smooth.clone()),
        ("sigmoid", |v| v.sigmoid(), smooth.clone()),
        ("silu", |v| v.silu(), smooth.clone()),
        ("tanh", |v| v.tanh(), smooth.clone()),
        ("relu", |v| v.relu(), off_zero(&[3, 4], 3)),
        ("abs", |v| v.abs(), off_zero(&[3, 4], 5)),
        ("square", |v| v.square(), smooth.clone()),
        ("cos", |v| v.cos(), smooth.clone()),
        ("sin", |v| v.sin(), smooth.clone()),
        ("powf", |v| v.powf(0.3), uniform(&[3, 4], 0.2, 2.0, 7)),
        ("sum", |v| v.sum(), smooth.clone()),
        ("mean", |v| v.mean(), smooth.clone()),
    ];
    for (i, (name, op, point)) in unary.into_iter().enumerate() {
        let seed = 100 + i as u64;
        cases.check(name, PRIMITIVE_TOL, point, move |v| probe(op(v)?, seed))?;
    }

    // keep wrapped inputs away from the ±π discontinuities
    let mut wrapped = uniform(&[12], -2.8, 2.8, 8);
    for (i, v) in wrapped.data_mut().iter_mut().enumerate() {
        *v += 2.0 * PI * (i % 3) as f64;
    }
    cases.check("anti_wrap", PRIMITIVE_TOL, wrapped, |v| probe(v.anti_wrap()?, 9))?;

    let pair = |seed| concat_points(&[&off_zero(&[3, 4], seed), &off_zero(&[3, 4], seed + 10)]);
    let binary: [(&str, BinaryOp); 4] = [
        ("add", |a, b| a.add(b)),
        ("sub", |a, b| a.sub(b)),
        ("mul", |a, b| a.mul(b)),
        ("atan2", |a, b| a.atan2(b)),
    ];
    for (i, (name, op)) in binary.into_iter().enumerate() {
        let seed = 200 + i as u64;
        cases.check(name, PRIMITIVE_TOL, pair(seed), move |v| {
            let p = split(v, &[&[3, 4], &[3, 4]])?;
            probe(op(p[0], p[1])?, seed)
        })?;
    }
    cases.check("matmul", PRIMITIVE_TOL, uniform(&[2 * 3 * 4 + 4 * 5], -1.0, 1.0, 11), |v| {
        let p = split(v, &[&[2, 3, 4], &[4, 5]])?;
        probe(p[0].matmul(p[1])?, 12)
    })?;

    let block = uniform(&[2, 3, 4], -1.5, 1.5, 13);
    let structural: [(&str, Unary); 7] = [
        ("reshape", |v| v.reshape(vec![6, 4])),
        ("permute", |v| v.permute(&[2, 0, 1])),
        ("flip", |v| v.flip(1)),
        ("slice", |v| v.slice(2, 1, 2)),
        ("pad", |v| v.pad(1, 2, 1)),
        ("concat", |v| concat(&[v, v.flip(2)?.square()?], 1)),
        ("layernorm", |v| v.layernorm(1e-5)),
    ];
    for (i, (name, op)) in structural.into_iter().enumerate() {
        let seed = 300 + i as u64;
        cases.check(name, PRIMITIVE_TOL, block.clone(), move |v| probe(op(v)?, seed))?;
    }

    cases.check(
        "conv1d_depthwise_causal",
        PRIMITIVE_TOL,
        uniform(&[2 * 6 * 3 + 3 * 3], -1.0, 1.0, 14),
        |v| {
            let p = split(v, &[&[2, 6, 3], &[3, 3]])?;
            probe(p[0].conv1d_depthwise_causal(p[1])?, 15)
        },
    )?;
    let conv = Conv2dSpec {
        stride: (1, 2),
        dilation: (2, 1),
        padding: (2, 0, 1, 1),
    };
    cases.check("conv2d", PRIMITIVE_TOL, uniform(&[2 * 5 * 7 + 3 * 2 * 2 * 3 + 3], -1.0, 1.0, 16), move |v| {
        let p = split(v, &[&[2, 5, 7], &[3, 2, 2, 3], &[3]])?;
        probe(p[0].conv2d(p[1], p[2], conv)?, 17)
    })?;
    let up = Conv2dSpec {
        stride: (1, 2),
        dilation: (1, 1),
        padding: (0, 0, 1, 0),
    };
    cases.check(
        "conv_transpose2d",
        PRIMITIVE_TOL,
        uniform(&[2 * 3 * 4 + 2 * 3 * 2 * 3 + 3], -1.0, 1.0, 18),
        move |v| {
            let p = split(v, &[&[2, 3, 4], &[2, 3, 2, 3], &[3]])?;
            probe(p[0].conv_transpose2d(p[1], p[2], up, (0, 1))?, 19)
        },
    )?;

    let stft = Stft::<f64>::new(tiny_stft())?;
    let s = stft.clone();
    cases.check("stft", PRIMITIVE_TOL, uniform(&[40], -1.0, 1.0, 20), move |v| probe(s.stft_var(v)?, 21))?;
    let frames = tiny_stft().n_frames(40);
    let bins = tiny_stft().n_bins();
    cases.check("istft", PRIMITIVE_TOL, uniform(&[2 * frames * bins], -1.0, 1.0, 22), move |v| {
        probe(stft.istft_var(v.reshape(vec![2, frames, bins])?, 40)?, 23)
    })?;
    let mags = uniform(&[3, 4], 0.1, 2.0, 24);
    for (name, law) in [
        ("compress_log1p", Compression::Log1p),
        ("compress_power", Compression::Power { exponent: 0.3 }),
    ] {
        cases.check(name, PRIMITIVE_TOL, mags.clone(), move |v| probe(law.compress_var(v)?, 25))?;
        let dname = name.replace("compress", "decompress");
        cases.check(&dname, PRIMITIVE_TOL, mags.clone(), move |v| probe(law.decompress_var(v)?, 26))?;
    }

    // T = 70 exercises the blocked parallel path
    let (t, c, s) = (70, 2, 2);
    let scan_point = concat_points(&[
        &uniform(&[t, c], -2.0, 2.0, 27),
        &uniform(&[t, c], 0.01, 1.0, 28),
        &uniform(&[c, s], -3.0, -0.1, 29),
        &uniform(&[t, s], -1.0, 1.0, 30),
        &uniform(&[t, s], -1.0, 1.0, 31),
        &uniform(&[c], -1.0, 1.0, 32),
    ]);
    for (name, mode) in [("scan_sequential", ScanMode::Sequential), ("scan_parallel", ScanMode::Parallel)] {
        cases.check(name, PRIMITIVE_TOL, scan_point.clone(), move |v| {
            let p = split(v, &[&[t, c], &[t, c], &[c, s], &[t, s], &[t, s], &[c]])?;
            probe(selective_scan(p[0], p[1], p[2], p[3], p[4], p[5], mode)?, 33)
        })?;
    }
    Ok(())
}

fn tiny_mamba() -> MambaConfig {
    MambaConfig {
        d_model: 4,
        d_state: 3,
        expand: 2,
        conv_width: 3,
        scan: ScanMode::Parallel,
    }
}

fn with_input(set: &ParamSet<f64>, x: &Tensor<f64>) -> Tensor<f64> {
    let mut flat = set.flatten();
    flat.extend_from_slice(x.data());
    Tensor::from_vec(flat)
}

fn ssm(cases: &mut Cases) -> Result<()> {
    let (wd, bias, wb, wc) = (
        uniform(&[3, 3], -0.5, 0.5, 40),
        uniform(&[3], -1.0, 1.0, 41),
        uniform(&[3, 2], -0.5, 0.5, 42),
        uniform(&[3, 2], -0.5, 0.5, 43),
    );
    let (a, d) = (uniform(&[3, 2], -2.0, -0.5, 44), uniform(&[3], -1.0, 1.0, 45));
    cases.check("selection_scan", COMPOSITE_TOL, uniform(&[5, 3], -2.0, 2.0, 46), move |x| {
        let t = x.tape();
        let sel = selection_project(
            x,
            t.constant(wd.clone()),
            t.constant(bias.clone()),
            t.constant(wb.clone()),
            t.constant(wc.clone()),
        )?;
        probe(selective_scan(x, sel.delta, t.constant(a.clone()), sel.b, sel.c, t.constant(d.clone()), ScanMode::Parallel)?, 47)
    })?;

    let cfg = tiny_mamba();
    let mut set = ParamSet::<f64>::new();
    cfg.init("m", &mut set, &mut rng(48));
    let n = set.numel();
    let x = uniform(&[5, 4], -2.0, 2.0, 49);
    let point = with_input(&set, &x);
    cases.check("mamba_block", COMPOSITE_TOL, point, |v| {
        let bound = set.bind_flat(v.slice(0, 0, n)?)?;
        let xv = v.slice(0, n, 20)?.reshape(vec![5, 4])?;
        probe(MambaBlock::bind(cfg, &bound, "m")?.forward(xv)?, 50)
    })?;

    let mut set = ParamSet::<f64>::new();
    init_bimamba(&cfg, "b", &mut set, &mut rng(51));
    let n = set.numel();
    let x = uniform(&[2, 4, 4], -2.0, 2.0, 52);
    let point = with_input(&set, &x);
    cases.check("bimamba", COMPOSITE_TOL, point, |v| {
        let bound = set.bind_flat(v.slice(0, 0, n)?)?;
        let xv = v.slice(0, n, 32)?.reshape(vec![2, 4, 4])?;
        probe(BiMamba::bind(cfg, &bound, "b")?.forward(xv)?, 53)
    })
}

fn tiny_stft() -> StftConfig {
    StftConfig {
        n_fft: 16,
        hop: 4,
        win_len: 16,
        sample_rate: 16000,
    }
}

fn tiny_ssm() -> SsmSettings {
    SsmSettings {
        d_state: 2,
        expand: 2,
        conv_width: 2,
        scan: ScanMode::Parallel,
    }
}

/// Smallest configurations that still exercise every layer type.
pub fn tiny_model_configs() -> Vec<(&'static str, ModelConfig)> {
    let basic = |causal| BasicConfig {
        stft: tiny_stft(),
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
    };
    let advanced = |bidirectional| AdvancedConfig {
        stft: tiny_stft(),
        compression_exponent: 0.3,
        channels: 2,
        dense_depth: 2,
        n_blocks: 1,
        ssm: tiny_ssm(),
        bidirectional,
        mask_max: 2.0,
    };
    vec![
        ("basic", ModelConfig::Basic(basic(true))),
        ("basic-noncausal", ModelConfig::Basic(basic(false))),
        ("advanced-uni", ModelConfig::Advanced(advanced(false))),
        ("advanced", ModelConfig::Advanced(advanced(true))),
    ]
}

fn models(cases: &mut Cases) -> Result<()> {
    let cfg = MambaConfig {
        d_model: 2,
        d_state: 2,
        expand: 2,
        conv_width: 2,
        scan: ScanMode::Parallel,
    };
    let mut set = ParamSet::<f64>::new();
    let mut r = rng(60);
    SeqMixer::<f64>::init(&cfg, true, "time", &mut set, &mut r);
    SeqMixer::<f64>::init(&cfg, true, "freq", &mut set, &mut r);
    let n = set.numel();
    let x = uniform(&[2, 6, 5], -1.0, 1.0, 61);
    let point = with_input(&set, &x);
    cases.check("tf_mamba_block", COMPOSITE_TOL, point, |v| {
        let p = set.bind_flat(v.slice(0, 0, n)?)?;
        let time = SeqMixer::bind(cfg, true, &p, "time")?;
        let freq = SeqMixer::bind(cfg, true, &p, "freq")?;
        let xv = v.slice(0, n, 60)?.reshape(vec![2, 6, 5])?;
        probe(tf_mamba_block(&time, &freq, xv)?, 62)
    })?;

    let len = 44;
    let weights = LossWeights::default();
    for (i, (name, cfg)) in tiny_model_configs().into_iter().enumerate() {
        let seed = 70 + 10 * i as u64;
        let params = cfg.init_params::<f64>(seed)?;
        let noisy = uniform(&[len], -1.0, 1.0, seed + 1).into_data();
        let clean = uniform(&[len], -1.0, 1.0, seed + 2).into_data();
        let stft = Stft::new(cfg.stft())?;
        let input = SpectralInput::from_wave(&stft, cfg.compression(), &noisy)?;
        let target = LossTarget::new(&stft, cfg.compression(), &clean)?;
        let point = Tensor::from_vec(params.flatten());
        let name = format!("{name}_model_loss");
        match cfg {
            ModelConfig::Basic(_) => cases.check(&name, COMPOSITE_TOL, point, |v| {
                let pred = cfg.forward(&params.bind_flat(v)?, &input)?;
                mag_mae(pred.cmag, v.tape().constant(target.cmag.clone()))
            })?,
            ModelConfig::Advanced(_) => cases.check_sampled(&name, COMPOSITE_TOL, point, Some(300), |v| {
                let pred = cfg.forward(&params.bind_flat(v)?, &input)?;
                let wave = cfg.synthesize(&stft, pred, len)?;
                Ok(composite_loss(&stft, cfg.compression(), wave, pred, &target, &weights)?.0)
            })?,
        }
    }
    Ok(())
}

fn halves<'t>(v: Var<'t, f64>) -> Result<Vec<Var<'t, f64>>> {
    split(v, &[&[4, 5], &[4, 5]])
}

fn losses(cases: &mut Cases) -> Result<()> {
    let pair = concat_points(&[&uniform(&[4, 5], 0.1, 2.0, 80), &uniform(&[4, 5], 0.1, 2.0, 81)]);
    cases.check("mag_mae", COMPOSITE_TOL, pair.clone(), move |v| {
        let p = halves(v)?;
        mag_mae(p[0], p[1])
    })?;
    cases.check("mse", COMPOSITE_TOL, pair, move |v| {
        let p = halves(v)?;
        mse(p[0], p[1])
    })?;
    let phases = concat_points(&[&uniform(&[4, 5], -3.0, 3.0, 82), &uniform(&[4, 5], -3.0, 3.0, 83)]);
    cases.check("phase_distance", COMPOSITE_TOL, phases, move |v| {
        let p = halves(v)?;
        phase_distance(p[0], p[1])
    })?;

    let stft = Stft::<f64>::new(tiny_stft())?;
    let len = 40;
    let (frames, bins) = (tiny_stft().n_frames(len), tiny_stft().n_bins());
    let s = stft.clone();
    cases.check("consistency_loss", COMPOSITE_TOL, uniform(&[2 * frames * bins], -1.0, 1.0, 84), move |v| {
        consistency_loss(&s, v.reshape(vec![2, frames, bins])?, len)
    })?;

    let clean = uniform(&[len], -1.0, 1.0, 85).into_data();
    let compression = Compression::Power { exponent: 0.3 };
    let target = LossTarget::new(&stft, compression, &clean)?;
    let weights = LossWeights::default();
    let n = frames * bins;
    let point = concat_points(&[
        &uniform(&[len], -1.0, 1.0, 86),
        &uniform(&[n], 0.2, 1.5, 87),
        &uniform(&[n], -2.5, 2.5, 88),
    ]);
    cases.check("composite_loss", COMPOSITE_TOL, point, move |v| {
        let p = split(v, &[&[len], &[frames, bins], &[frames, bins]])?;
        let pred = SpecPrediction { cmag: p[1], phase: p[2] };
        Ok(composite_loss(&stft, compression, p[0], pred, &target, &weights)?.0)
    })
}
