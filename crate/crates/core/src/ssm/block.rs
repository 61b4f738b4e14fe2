//! Mamba block and its bidirectional wrapper.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::scan::{selective_scan, ScanMode};
use crate::autodiff::{concat, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MambaConfig {
    pub d_model: usize,
    pub d_state: usize,
    pub expand: usize,
    pub conv_width: usize,
    pub scan: ScanMode,
}

impl Default for MambaConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            d_state: 16,
            expand: 2,
            conv_width: 4,
            scan: ScanMode::Parallel,
        }
    }
}

impl MambaConfig {
    pub fn inner(&self) -> usize {
        self.expand * self.d_model
    }

    /// Scalar parameter count of one block.
    pub fn param_count(&self) -> usize {
        let (d, c, s, k) = (self.d_model, self.inner(), self.d_state, self.conv_width);
        2 * d + d * 2 * c + c * k + c + c * c + c + 2 * c * s + c * s + c + c * d
    }

    /// Scalar parameter count of a bidirectional pair with its merge.
    pub fn bidirectional_param_count(&self) -> usize {
        2 * self.param_count() + 2 * self.d_model * self.d_model + self.d_model
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.d_state == 0 || self.expand == 0 || self.conv_width == 0 {
            return Err(Error::Config(format!("mamba dimensions must be positive: {self:?}")));
        }
        Ok(())
    }

    /// Registers freshly initialised block parameters under `prefix`.
    pub fn init<T: Scalar, R: Rng + ?Sized>(&self, prefix: &str, set: &mut ParamSet<T>, rng: &mut R) {
        let (d, c, s, k) = (self.d_model, self.inner(), self.d_state, self.conv_width);
        let bound = |n: usize| 1.0 / (n as f64).sqrt();
        set.insert(format!("{prefix}.norm.weight"), Tensor::ones(vec![d]));
        set.insert(format!("{prefix}.norm.bias"), Tensor::zeros(vec![d]));
        set.insert(format!("{prefix}.in_proj"), Tensor::uniform(vec![d, 2 * c], -bound(d), bound(d), rng));
        set.insert(format!("{prefix}.conv.weight"), Tensor::uniform(vec![c, k], -bound(k), bound(k), rng));
        set.insert(format!("{prefix}.conv.bias"), Tensor::uniform(vec![c], -bound(k), bound(k), rng));
        set.insert(format!("{prefix}.ssm.w_delta"), Tensor::uniform(vec![c, c], -bound(c), bound(c), rng));
        let dt_bias: Vec<T> = (0..c)
            .map(|_| {
                let dt = rng.random_range(0.001f64.ln()..0.1f64.ln()).exp();
                // inverse of softplus
                T::of(dt + (-(-dt).exp_m1()).ln())
            })
            .collect();
        set.insert(format!("{prefix}.ssm.delta_bias"), Tensor::from_vec(dt_bias));
        set.insert(format!("{prefix}.ssm.w_b"), Tensor::uniform(vec![c, s], -bound(c), bound(c), rng));
        set.insert(format!("{prefix}.ssm.w_c"), Tensor::uniform(vec![c, s], -bound(c), bound(c), rng));
        let a_log: Vec<T> = (0..c).flat_map(|_| (0..s).map(|j| T::of(((j + 1) as f64).ln()))).collect();
        set.insert(format!("{prefix}.ssm.a_log"), Tensor::new(vec![c, s], a_log).expect("shape"));
        set.insert(format!("{prefix}.ssm.d"), Tensor::ones(vec![c]));
        set.insert(format!("{prefix}.out_proj"), Tensor::uniform(vec![c, d], -bound(c), bound(c), rng));
    }
}

/// Input-dependent step size and projections `(Δ, B, C)` of a selective layer.
pub struct Selection<'t, T: Scalar> {
    pub delta: Var<'t, T>,
    pub b: Var<'t, T>,
    pub c: Var<'t, T>,
}

/// Computes `Δ = softplus(x·W_Δ + bias)`, `B = x·W_B`, `C = x·W_C`.
pub fn selection_project<'t, T: Scalar>(
    x: Var<'t, T>,
    w_delta: Var<'t, T>,
    delta_bias: Var<'t, T>,
    w_b: Var<'t, T>,
    w_c: Var<'t, T>,
) -> Result<Selection<'t, T>> {
    Ok(Selection {
        delta: x.matmul(w_delta)?.add(delta_bias)?.softplus()?,
        b: x.matmul(w_b)?,
        c: x.matmul(w_c)?,
    })
}

/// A Mamba block bound to a tape.
pub struct MambaBlock<'t, T: Scalar> {
    cfg: MambaConfig,
    norm_weight: Var<'t, T>,
    norm_bias: Var<'t, T>,
    in_proj: Var<'t, T>,
    conv_weight: Var<'t, T>,
    conv_bias: Var<'t, T>,
    w_delta: Var<'t, T>,
    delta_bias: Var<'t, T>,
    w_b: Var<'t, T>,
    w_c: Var<'t, T>,
    a_log: Var<'t, T>,
    d: Var<'t, T>,
    out_proj: Var<'t, T>,
}

impl<'t, T: Scalar> MambaBlock<'t, T> {
    pub fn bind(cfg: MambaConfig, params: &Bound<'_, 't, T>, prefix: &str) -> Result<Self> {
        let p = |n: &str| params.get(&format!("{prefix}.{n}"));
        Ok(Self {
            cfg,
            norm_weight: p("norm.weight")?,
            norm_bias: p("norm.bias")?,
            in_proj: p("in_proj")?,
            conv_weight: p("conv.weight")?,
            conv_bias: p("conv.bias")?,
            w_delta: p("ssm.w_delta")?,
            delta_bias: p("ssm.delta_bias")?,
            w_b: p("ssm.w_b")?,
            w_c: p("ssm.w_c")?,
            a_log: p("ssm.a_log")?,
            d: p("ssm.d")?,
            out_proj: p("out_proj")?,
        })
    }

    /// `x: [..., T, d_model]` → same shape; residual around the mixer.
    pub fn forward(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = x.shape();
        if shape.len() < 2 || shape[shape.len() - 1] != self.cfg.d_model {
            return Err(Error::shape("mamba", format!("input {shape:?}, d_model {}", self.cfg.d_model)));
        }
        let last = shape.len() - 1;
        let c = self.cfg.inner();
        let h = x
            .layernorm(T::of(NORM_EPS))?
            .mul(self.norm_weight)?
            .add(self.norm_bias)?;
        let z = h.matmul(self.in_proj)?;
        let u = z.slice(last, 0, c)?;
        let gate = z.slice(last, c, c)?;
        let u = u.conv1d_depthwise_causal(self.conv_weight)?.add(self.conv_bias)?.silu()?;
        let sel = selection_project(u, self.w_delta, self.delta_bias, self.w_b, self.w_c)?;
        let a = self.a_log.exp()?.neg()?;
        let y = selective_scan(u, sel.delta, a, sel.b, sel.c, self.d, self.cfg.scan)?;
        let out = y.mul(gate.silu()?)?.matmul(self.out_proj)?;
        x.add(out)
    }
}

/// Registers a bidirectional pair plus the width-1 merge under `prefix`.
pub fn init_bimamba<T: Scalar, R: Rng + ?Sized>(cfg: &MambaConfig, prefix: &str, set: &mut ParamSet<T>, rng: &mut R) {
    cfg.init(&format!("{prefix}.fwd"), set, rng);
    cfg.init(&format!("{prefix}.bwd"), set, rng);
    let d = cfg.d_model;
    let b = 1.0 / ((2 * d) as f64).sqrt();
    set.insert(format!("{prefix}.merge.weight"), Tensor::uniform(vec![2 * d, d], -b, b, rng));
    set.insert(format!("{prefix}.merge.bias"), Tensor::zeros(vec![d]));
}

/// Forward and time-reversed Mamba branches concatenated on channels and
/// merged back to `d_model`.
pub struct BiMamba<'t, T: Scalar> {
    fwd: MambaBlock<'t, T>,
    bwd: MambaBlock<'t, T>,
    merge_weight: Var<'t, T>,
    merge_bias: Var<'t, T>,
}

impl<'t, T: Scalar> BiMamba<'t, T> {
    pub fn bind(cfg: MambaConfig, params: &Bound<'_, 't, T>, prefix: &str) -> Result<Self> {
        Ok(Self {
            fwd: MambaBlock::bind(cfg, params, &format!("{prefix}.fwd"))?,
            bwd: MambaBlock::bind(cfg, params, &format!("{prefix}.bwd"))?,
            merge_weight: params.get(&format!("{prefix}.merge.weight"))?,
            merge_bias: params.get(&format!("{prefix}.merge.bias"))?,
        })
    }

    pub fn forward(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let nd = x.shape().len();
        if nd < 2 {
            return Err(Error::shape("bimamba", format!("input {:?}", x.shape())));
        }
        let time = nd - 2;
        let f = self.fwd.forward(x)?;
        let b = self.bwd.forward(x.flip(time)?)?.flip(time)?;
        concat(&[f, b], nd - 1)?.matmul(self.merge_weight)?.add(self.merge_bias)
    }
}

/// Either a causal or a bidirectional sequence mixer.
pub enum SeqMixer<'t, T: Scalar> {
    Causal(MambaBlock<'t, T>),
    Bidirectional(BiMamba<'t, T>),
}

impl<'t, T: Scalar> SeqMixer<'t, T> {
    pub fn init<U: Scalar, R: Rng + ?Sized>(
        cfg: &MambaConfig,
        bidirectional: bool,
        prefix: &str,
        set: &mut ParamSet<U>,
        rng: &mut R,
    ) {
        if bidirectional {
            init_bimamba(cfg, prefix, set, rng);
        } else {
            cfg.init(prefix, set, rng);
        }
    }

    pub fn bind(cfg: MambaConfig, bidirectional: bool, params: &Bound<'_, 't, T>, prefix: &str) -> Result<Self> {
        Ok(if bidirectional {
            Self::Bidirectional(BiMamba::bind(cfg, params, prefix)?)
        } else {
            Self::Causal(MambaBlock::bind(cfg, params, prefix)?)
        })
    }

    pub fn forward(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        match self {
            Self::Causal(m) => m.forward(x),
            Self::Bidirectional(m) => m.forward(x),
        }
    }

    /// Mixer with exactly one residual path: the causal block already adds
    /// its input, the bidirectional merge gets one added here. Zeroed
    /// weights therefore give the identity in both cases.
    pub fn residual_forward(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        match self {
            Self::Causal(m) => m.forward(x),
            Self::Bidirectional(m) => x.add(m.forward(x)?),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> MambaConfig {
        MambaConfig {
            d_model: 4,
            d_state: 3,
            expand: 2,
            conv_width: 3,
            scan: ScanMode::Sequential,
        }
    }

    #[test]
    fn zero_weights_make_identity() {
        let cfg = small();
        let mut set = ParamSet::<f64>::new();
        cfg.init("m", &mut set, &mut ChaCha8Rng::seed_from_u64(1));
        set.zero_prefix("m.");
        let tape = Tape::new();
        let bound = set.bind(&tape, false);
        let block = MambaBlock::bind(cfg, &bound, "m").unwrap();
        let x = Tensor::uniform(vec![6, 4], -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(2));
        let y = block.forward(tape.constant(x.clone())).unwrap();
        assert_eq!(y.to_tensor(), x);
    }

    #[test]
    fn bimamba_with_averaging_merge_is_identity() {
        let cfg = small();
        let mut set = ParamSet::<f64>::new();
        init_bimamba(&cfg, "b", &mut set, &mut ChaCha8Rng::seed_from_u64(1));
        set.zero_prefix("b.fwd.");
        set.zero_prefix("b.bwd.");
        let w = set.get_mut("b.merge.weight").unwrap();
        w.data_mut().iter_mut().for_each(|v| *v = 0.0);
        for i in 0..4 {
            w.data_mut()[i * 4 + i] = 0.5;
            w.data_mut()[(i + 4) * 4 + i] = 0.5;
        }
        let tape = Tape::new();
        let bound = set.bind(&tape, false);
        let block = BiMamba::bind(cfg, &bound, "b").unwrap();
        let x = Tensor::uniform(vec![2, 5, 4], -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(3));
        let y = block.forward(tape.constant(x.clone())).unwrap();
        for (a, b) in y.to_tensor().data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn inverse_softplus_bias_lands_in_range() {
        let cfg = small();
        let mut set = ParamSet::<f64>::new();
        cfg.init("m", &mut set, &mut ChaCha8Rng::seed_from_u64(9));
        for &b in set.get("m.ssm.delta_bias").unwrap().data() {
            let dt = crate::autodiff::softplus(b);
            assert!((0.001..=0.1).contains(&dt), "{dt}");
        }
    }
}
