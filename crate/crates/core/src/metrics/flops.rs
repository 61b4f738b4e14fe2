//! Analytic operation and parameter counts.
//!
//! FLOPs are `2 × multiply-adds`. Bias additions, activations,
//! normalisations and other elementwise work are not counted. STFT/iSTFT
//! cost is excluded unless requested.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::models::{AdvancedConfig, BasicConfig, ModelConfig};
use crate::ssm::MambaConfig;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LayerCount {
    pub name: String,
    pub flops: u64,
    pub params: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlopsReport {
    pub layers: Vec<LayerCount>,
    pub total_flops: u64,
    pub total_params: u64,
    /// Sequence length (frames) the counts refer to.
    pub seq_len: usize,
    /// Fitted `d log(flops) / d log(T)` when a sweep was run.
    pub scaling_exponent: Option<f64>,
}

impl FlopsReport {
    fn new(seq_len: usize) -> Self {
        Self {
            layers: Vec::new(),
            total_flops: 0,
            total_params: 0,
            seq_len,
            scaling_exponent: None,
        }
    }

    fn push(&mut self, name: impl Into<String>, macs: u64, params: u64) {
        let flops = 2 * macs;
        self.total_flops += flops;
        self.total_params += params;
        self.layers.push(LayerCount {
            name: name.into(),
            flops,
            params,
        });
    }

    /// FLOPs of layers whose name starts with `prefix`.
    pub fn flops_with_prefix(&self, prefix: &str) -> u64 {
        self.layers.iter().filter(|l| l.name.starts_with(prefix)).map(|l| l.flops).sum()
    }

    /// Aligned-column text table.
    pub fn to_table(&self) -> String {
        let width = self.layers.iter().map(|l| l.name.len()).max().unwrap_or(5).max(5);
        let mut out = format!("{:<width$}  {:>16}  {:>12}\n", "layer", "flops", "params");
        for l in &self.layers {
            out.push_str(&format!("{:<width$}  {:>16}  {:>12}\n", l.name, l.flops, l.params));
        }
        out.push_str(&format!(
            "{:<width$}  {:>16}  {:>12}\n",
            "total", self.total_flops, self.total_params
        ));
        out
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CountOptions {
    /// Add analysis and synthesis transform cost for `samples`-long input.
    pub include_fft: bool,
}

/// Conv with `[co, ci, kh, kw]` weights evaluated at `positions` outputs.
fn conv(r: &mut FlopsReport, name: &str, ci: usize, co: usize, k: (usize, usize), positions: usize) {
    let taps = (ci * co * k.0 * k.1) as u64;
    r.push(name, taps * positions as u64, taps + co as u64);
}

/// Transposed conv scattering each of `positions` inputs through the kernel.
fn conv_transpose(r: &mut FlopsReport, name: &str, ci: usize, co: usize, k: (usize, usize), positions: usize) {
    let taps = (ci * co * k.0 * k.1) as u64;
    r.push(name, taps * positions as u64, taps + co as u64);
}

fn linear(r: &mut FlopsReport, name: &str, d_in: usize, d_out: usize, rows: usize, bias: bool) {
    let w = (d_in * d_out) as u64;
    r.push(name, w * rows as u64, w + if bias { d_out as u64 } else { 0 });
}

/// One Mamba block over `batch` sequences of length `len`.
fn mamba(r: &mut FlopsReport, name: &str, cfg: &MambaConfig, batch: usize, len: usize) {
    let (d, c, s, k) = (cfg.d_model, cfg.inner(), cfg.d_state, cfg.conv_width);
    let rows = batch * len;
    r.push(format!("{name}.norm"), 0, 2 * d as u64);
    linear(r, &format!("{name}.in_proj"), d, 2 * c, rows, false);
    r.push(format!("{name}.conv"), (rows * c * k) as u64, (c * k + c) as u64);
    linear(r, &format!("{name}.delta_proj"), c, c, rows, true);
    linear(r, &format!("{name}.bc_proj"), c, 2 * s, rows, false);
    // Δ·B·x, Ā·h + ·, C·h per state lane, plus the D skip
    r.push(format!("{name}.scan"), (rows * c * (3 * s + 1)) as u64, (c * s + c) as u64);
    linear(r, &format!("{name}.out_proj"), c, d, rows, false);
}

fn mixer(r: &mut FlopsReport, name: &str, cfg: &MambaConfig, bidirectional: bool, batch: usize, len: usize) {
    if bidirectional {
        mamba(r, &format!("{name}.fwd"), cfg, batch, len);
        mamba(r, &format!("{name}.bwd"), cfg, batch, len);
        linear(r, &format!("{name}.merge"), 2 * cfg.d_model, cfg.d_model, batch * len, true);
    } else {
        mamba(r, name, cfg, batch, len);
    }
}

/// Real FFT estimate `2.5·N·log2(N)` plus windowing, per frame, both directions.
fn transforms(r: &mut FlopsReport, n_fft: usize, frames: usize) {
    let per = 2.5 * n_fft as f64 * (n_fft as f64).log2() + 2.0 * n_fft as f64;
    let flops = (2.0 * per * frames as f64).round() as u64;
    r.total_flops += flops;
    r.layers.push(LayerCount {
        name: "stft+istft".into(),
        flops,
        params: 0,
    });
}

fn count_basic(cfg: &BasicConfig, frames: usize, r: &mut FlopsReport) {
    let bins = cfg.encoder_bins();
    let mut ci = 1;
    for (i, l) in cfg.encoder.iter().enumerate() {
        conv(r, &format!("enc.{i}"), ci, l.channels, l.kernel, frames * bins[i]);
        ci = l.channels;
    }
    linear(r, "proj", cfg.flat_features(), cfg.d_model, frames, true);
    let m = cfg.ssm.mamba(cfg.d_model);
    for i in 0..cfg.n_mamba {
        mixer(r, &format!("mamba.{i}"), &m, !cfg.causal, 1, frames);
    }
    linear(r, "dec", cfg.d_model, cfg.stft.n_bins(), frames, true);
}

fn dense(r: &mut FlopsReport, name: &str, c: usize, depth: usize, positions: usize) {
    for i in 0..depth {
        conv(r, &format!("{name}.{i}"), c * (i + 1), c, (3, 3), positions);
    }
}

fn count_advanced(cfg: &AdvancedConfig, frames: usize, r: &mut FlopsReport) {
    let (c, f, fi) = (cfg.channels, cfg.stft.n_bins(), cfg.inner_bins());
    conv(r, "enc.in", 2, c, (1, 1), frames * f);
    dense(r, "enc.dense", c, cfg.dense_depth, frames * f);
    conv(r, "enc.down", c, c, (1, 3), frames * fi);
    let m = cfg.ssm.mamba(c);
    for b in 0..cfg.n_blocks {
        mixer(r, &format!("tf.{b}.time"), &m, cfg.bidirectional, fi, frames);
        mixer(r, &format!("tf.{b}.freq"), &m, cfg.bidirectional, frames, fi);
    }
    for head in ["mag", "pha"] {
        dense(r, &format!("{head}.dense"), c, cfg.dense_depth, frames * fi);
        conv_transpose(r, &format!("{head}.up"), c, c, (1, 3), frames * fi);
    }
    conv(r, "mag.out", c, 1, (1, 1), frames * f);
    r.push("mag.slope", 0, f as u64);
    conv(r, "pha.out_r", c, 1, (1, 1), frames * f);
    conv(r, "pha.out_i", c, 1, (1, 1), frames * f);
}

/// Per-layer counts of a model processing `frames` STFT frames.
pub fn count_model(config: &ModelConfig, frames: usize, opts: CountOptions) -> Result<FlopsReport> {
    config.validate()?;
    if frames == 0 {
        return Err(Error::InvalidArgument("count_model: frames must be positive".into()));
    }
    let mut r = FlopsReport::new(frames);
    match config {
        ModelConfig::Basic(c) => count_basic(c, frames, &mut r),
        ModelConfig::Advanced(c) => count_advanced(c, frames, &mut r),
    }
    if opts.include_fft {
        transforms(&mut r, config.stft().n_fft, frames);
    }
    Ok(r)
}

/// A plain stack of `n_layers` Mamba blocks of width `cfg.d_model`.
pub fn count_mamba_stack(cfg: &MambaConfig, n_layers: usize, seq_len: usize) -> FlopsReport {
    let mut r = FlopsReport::new(seq_len);
    for l in 0..n_layers {
        mamba(&mut r, &format!("mamba.{l}"), cfg, 1, seq_len);
    }
    r
}

/// Pre-norm Transformer encoder layers (multi-head self-attention plus a
/// 4× feed-forward), for complexity comparison only.
pub fn count_attention_baseline(d_model: usize, n_layers: usize, seq_len: usize) -> Result<FlopsReport> {
    if d_model == 0 || n_layers == 0 || seq_len == 0 {
        return Err(Error::InvalidArgument("attention baseline dimensions must be positive".into()));
    }
    let (d, t) = (d_model, seq_len);
    let mut r = FlopsReport::new(seq_len);
    for l in 0..n_layers {
        let p = format!("attn.{l}");
        r.push(format!("{p}.norm1"), 0, 2 * d as u64);
        linear(&mut r, &format!("{p}.qkv"), d, 3 * d, t, true);
        r.push(format!("{p}.scores"), (t * t * d) as u64, 0);
        r.push(format!("{p}.context"), (t * t * d) as u64, 0);
        linear(&mut r, &format!("{p}.out"), d, d, t, true);
        r.push(format!("{p}.norm2"), 0, 2 * d as u64);
        linear(&mut r, &format!("{p}.ffn.up"), d, 4 * d, t, true);
        linear(&mut r, &format!("{p}.ffn.down"), 4 * d, d, t, true);
    }
    Ok(r)
}

/// Least-squares slope of `log y` against `log x`.
pub fn fit_scaling_exponent(points: &[(f64, f64)]) -> f64 {
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Least-squares `y ≈ c0 + c1·u + c2·u²` with `u = x / max(x)`; returns
/// `[c0, c1, c2]` in the scaled variable.
pub fn fit_quadratic(points: &[(f64, f64)]) -> [f64; 3] {
    let xmax = points.iter().map(|p| p.0).fold(0.0, f64::max);
    let mut a = [[0.0f64; 3]; 3];
    let mut b = [0.0f64; 3];
    for &(x, y) in points {
        let u = x / xmax;
        let basis = [1.0, u, u * u];
        for i in 0..3 {
            for j in 0..3 {
                a[i][j] += basis[i] * basis[j];
            }
            b[i] += basis[i] * y;
        }
    }
    // Gaussian elimination with partial pivoting on the 3×3 normal system
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut c = [0.0; 3];
    for i in (0..3).rev() {
        let tail: f64 = (i + 1..3).map(|k| a[i][k] * c[k]).sum();
        c[i] = (b[i] - tail) / a[i][i];
    }
    c
}

/// Sweep `count(T)` over `lengths`, returning `(T, flops)` pairs and the
/// fitted exponent.
pub fn sweep<F>(lengths: &[usize], mut count: F) -> Result<(Vec<(usize, u64)>, f64)>
where
    F: FnMut(usize) -> Result<u64>,
{
    let mut pts = Vec::with_capacity(lengths.len());
    for &t in lengths {
        pts.push((t, count(t)?));
    }
    let fpts: Vec<(f64, f64)> = pts.iter().map(|&(t, f)| (t as f64, f as f64)).collect();
    Ok((pts, fit_scaling_exponent(&fpts)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_linear_layer() {
        let mut r = FlopsReport::new(10);
        linear(&mut r, "fc", 3, 4, 10, true);
        assert_eq!(r.total_params, 16);
        assert_eq!(r.total_flops, 240);
    }

    #[test]
    fn quadratic_fit_recovers_coefficients() {
        let pts: Vec<(f64, f64)> = (1..=8).map(|i| (i as f64, 1.0 + 2.0 * i as f64 + 3.0 * (i * i) as f64)).collect();
        let c = fit_quadratic(&pts);
        // in u = x/8: c1 = 2·8, c2 = 3·64
        assert!((c[0] - 1.0).abs() < 1e-9 && (c[1] - 16.0).abs() < 1e-9 && (c[2] - 192.0).abs() < 1e-9);
    }
}
