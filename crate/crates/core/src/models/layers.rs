use rand::Rng;

use crate::autodiff::{concat, Conv2dSpec, Var};
use crate::error::Result;
use crate::params::{Bound, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn bound(fan_in: usize) -> f64 {
    1.0 / (fan_in as f64).sqrt()
}

/// Registers `{name}.weight: [co, ci, kh, kw]` and `{name}.bias: [co]`.
pub(crate) fn init_conv<T: Scalar, R: Rng + ?Sized>(
    set: &mut ParamSet<T>,
    name: &str,
    ci: usize,
    co: usize,
    kernel: (usize, usize),
    rng: &mut R,
) {
    let b = bound(ci * kernel.0 * kernel.1);
    set.insert(format!("{name}.weight"), Tensor::uniform(vec![co, ci, kernel.0, kernel.1], -b, b, rng));
    set.insert(format!("{name}.bias"), Tensor::uniform(vec![co], -b, b, rng));
}

/// Registers `{name}.weight: [ci, co, kh, kw]` and `{name}.bias: [co]`.
pub(crate) fn init_conv_transpose<T: Scalar, R: Rng + ?Sized>(
    set: &mut ParamSet<T>,
    name: &str,
    ci: usize,
    co: usize,
    kernel: (usize, usize),
    rng: &mut R,
) {
    let b = bound(ci * kernel.0 * kernel.1);
    set.insert(format!("{name}.weight"), Tensor::uniform(vec![ci, co, kernel.0, kernel.1], -b, b, rng));
    set.insert(format!("{name}.bias"), Tensor::uniform(vec![co], -b, b, rng));
}

/// Registers `{name}.weight: [d_in, d_out]` and `{name}.bias: [d_out]`.
pub(crate) fn init_linear<T: Scalar, R: Rng + ?Sized>(
    set: &mut ParamSet<T>,
    name: &str,
    d_in: usize,
    d_out: usize,
    rng: &mut R,
) {
    let b = bound(d_in);
    set.insert(format!("{name}.weight"), Tensor::uniform(vec![d_in, d_out], -b, b, rng));
    set.insert(format!("{name}.bias"), Tensor::uniform(vec![d_out], -b, b, rng));
}

pub(crate) fn conv<'t, T: Scalar>(p: &Bound<'_, 't, T>, name: &str, x: Var<'t, T>, spec: Conv2dSpec) -> Result<Var<'t, T>> {
    x.conv2d(p.get(&format!("{name}.weight"))?, p.get(&format!("{name}.bias"))?, spec)
}

pub(crate) fn conv_transpose<'t, T: Scalar>(
    p: &Bound<'_, 't, T>,
    name: &str,
    x: Var<'t, T>,
    spec: Conv2dSpec,
    output_padding: (usize, usize),
) -> Result<Var<'t, T>> {
    x.conv_transpose2d(
        p.get(&format!("{name}.weight"))?,
        p.get(&format!("{name}.bias"))?,
        spec,
        output_padding,
    )
}

pub(crate) fn linear<'t, T: Scalar>(p: &Bound<'_, 't, T>, name: &str, x: Var<'t, T>) -> Result<Var<'t, T>> {
    x.matmul(p.get(&format!("{name}.weight"))?)?.add(p.get(&format!("{name}.bias"))?)
}

/// Dilation of dense layer `i`.
pub(crate) fn dense_dilation(i: usize) -> usize {
    1 << i
}

pub(crate) fn init_dense<T: Scalar, R: Rng + ?Sized>(
    set: &mut ParamSet<T>,
    prefix: &str,
    channels: usize,
    depth: usize,
    rng: &mut R,
) {
    for i in 0..depth {
        init_conv(set, &format!("{prefix}.{i}"), channels * (i + 1), channels, (3, 3), rng);
    }
}

/// Dilated dense block on `[C, T, F]`: layer `i` sees the concatenation of
/// the block input and every earlier layer output, with time dilation `2^i`.
pub(crate) fn dense<'t, T: Scalar>(p: &Bound<'_, 't, T>, prefix: &str, x: Var<'t, T>, depth: usize) -> Result<Var<'t, T>> {
    let mut skip = x;
    let mut out = x;
    for i in 0..depth {
        let d = dense_dilation(i);
        let spec = Conv2dSpec {
            stride: (1, 1),
            dilation: (d, 1),
            padding: (d, d, 1, 1),
        };
        out = conv(p, &format!("{prefix}.{i}"), skip, spec)?.silu()?;
        if i + 1 < depth {
            skip = concat(&[out, skip], 0)?;
        }
    }
    Ok(out)
}
