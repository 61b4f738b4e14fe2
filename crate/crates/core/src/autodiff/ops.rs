//! Differentiable primitives.
//!
//! Binary element-wise ops accept a right-hand side whose shape equals the
//! left-hand shape, is a suffix of it (broadcast over leading axes), or is a
//! single element.

use super::conv::{gather, scatter, weight_grad, Conv2dSpec, Geometry};
use super::tape::{BackwardCtx, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{numel, split_axis, Tensor};

fn broadcast_ok(lhs: &[usize], rhs: &[usize]) -> bool {
    numel(rhs) == 1 || (rhs.len() <= lhs.len() && lhs[lhs.len() - rhs.len()..] == *rhs)
}

/// Sums `g` (lhs-shaped) down to an rhs of `n` elements repeated cyclically.
fn reduce_cyclic<T: Scalar>(g: &[T], n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n];
    for chunk in g.chunks(n) {
        out.iter_mut().zip(chunk).for_each(|(o, &v)| *o += v);
    }
    out
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn softplus<T: Scalar>(x: T) -> T {
    if x > T::of(30.0) {
        x
    } else {
        x.max(T::zero()) + (-x.abs()).exp().ln_1p()
    }
}

/// Maps an angle difference into `(−π, π]`.
#[inline]
pub fn wrap_angle<T: Scalar>(x: T) -> T {
    let two_pi = T::PI() + T::PI();
    let mut r = x - two_pi * (x / two_pi).round();
    if r <= -T::PI() {
        r += two_pi;
    } else if r > T::PI() {
        r -= two_pi;
    }
    r
}

impl<'t, T: Scalar> Var<'t, T> {
    fn unary(
        self,
        op: &'static str,
        f: impl Fn(T) -> T,
        // derivative from (input, output)
        df: fn(T, T) -> T,
    ) -> Result<Self> {
        let out = self.value().map(f);
        self.tape().record(op, &[self], out, move |ctx: &BackwardCtx<'_, T>| {
            let x = ctx.inputs[0].data();
            let y = ctx.output.data();
            let g = ctx
                .grad
                .iter()
                .zip(x.iter().zip(y))
                .map(|(&g, (&x, &y))| g * df(x, y))
                .collect();
            vec![Some(g)]
        })
    }

    fn binary(
        self,
        rhs: Self,
        op: &'static str,
        f: fn(T, T) -> T,
        // partials (d/da, d/db) at (a, b)
        df: fn(T, T) -> (T, T),
    ) -> Result<Self> {
        let value = {
            let a = self.value();
            let b = rhs.value();
            if !broadcast_ok(a.shape(), b.shape()) {
                return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
            }
            let n = b.len();
            let data = a
                .data()
                .iter()
                .enumerate()
                .map(|(i, &x)| f(x, b.data()[i % n]))
                .collect();
            Tensor::new(a.shape().to_vec(), data)?
        };
        self.tape().record(op, &[self, rhs], value, move |ctx| {
            let a = ctx.inputs[0].data();
            let b = ctx.inputs[1].data();
            let n = b.len();
            let mut ga = Vec::with_capacity(a.len());
            let mut gb = Vec::with_capacity(a.len());
            for (i, (&g, &x)) in ctx.grad.iter().zip(a).enumerate() {
                let (da, db) = df(x, b[i % n]);
                ga.push(g * da);
                gb.push(g * db);
            }
            let gb = if n == a.len() { gb } else { reduce_cyclic(&gb, n) };
            vec![Some(ga), Some(gb)]
        })
    }

    pub fn add(self, rhs: Self) -> Result<Self> {
        self.binary(rhs, "add", |a, b| a + b, |_, _| (T::one(), T::one()))
    }

    pub fn sub(self, rhs: Self) -> Result<Self> {
        self.binary(rhs, "sub", |a, b| a - b, |_, _| (T::one(), -T::one()))
    }

    pub fn mul(self, rhs: Self) -> Result<Self> {
        self.binary(rhs, "mul", |a, b| a * b, |a, b| (b, a))
    }

    /// Four-quadrant arctangent with `self` as the ordinate: `atan2(self, x)`.
    pub fn atan2(self, x: Self) -> Result<Self> {
        if self.shape() != x.shape() {
            return Err(Error::shape("atan2", format!("{:?} vs {:?}", self.shape(), x.shape())));
        }
        self.binary(x, "atan2", |y, x| y.atan2(x), |y, x| {
            let r2 = x * x + y * y;
            (x / r2, -y / r2)
        })
    }

    pub fn scale(self, k: T) -> Result<Self> {
        let out = self.value().map(|x| x * k);
        self.tape().record("scale", &[self], out, move |ctx| {
            vec![Some(ctx.grad.iter().map(|&g| g * k).collect())]
        })
    }

    pub fn add_scalar(self, k: T) -> Result<Self> {
        let out = self.value().map(|x| x + k);
        self.tape()
            .record("add_scalar", &[self], out, |ctx| vec![Some(ctx.grad.to_vec())])
    }

    pub fn neg(self) -> Result<Self> {
        self.scale(-T::one())
    }

    pub fn exp(self) -> Result<Self> {
        self.unary("exp", T::exp, |_, y| y)
    }

    pub fn expm1(self) -> Result<Self> {
        self.unary("expm1", T::exp_m1, |_, y| y + T::one())
    }

    pub fn log1p(self) -> Result<Self> {
        self.unary("log1p", T::ln_1p, |x, _| T::one() / (T::one() + x))
    }

    pub fn softplus(self) -> Result<Self> {
        self.unary("softplus", softplus, |x, _| sigmoid(x))
    }

    pub fn sigmoid(self) -> Result<Self> {
        self.unary("sigmoid", sigmoid, |_, y| y * (T::one() - y))
    }

    pub fn silu(self) -> Result<Self> {
        self.unary("silu", |x| x * sigmoid(x), |x, _| {
            let s = sigmoid(x);
            s * (T::one() + x * (T::one() - s))
        })
    }

    pub fn tanh(self) -> Result<Self> {
        self.unary("tanh", T::tanh, |_, y| T::one() - y * y)
    }

    pub fn relu(self) -> Result<Self> {
        self.unary("relu", |x| x.max(T::zero()), |x, _| {
            if x > T::zero() {
                T::one()
            } else {
                T::zero()
            }
        })
    }

    pub fn abs(self) -> Result<Self> {
        self.unary("abs", num_traits::Float::abs, |x, _| {
            if x > T::zero() {
                T::one()
            } else if x < T::zero() {
                -T::one()
            } else {
                T::zero()
            }
        })
    }

    pub fn square(self) -> Result<Self> {
        self.unary("square", |x| x * x, |x, _| x + x)
    }

    pub fn cos(self) -> Result<Self> {
        self.unary("cos", T::cos, |x, _| -x.sin())
    }

    pub fn sin(self) -> Result<Self> {
        self.unary("sin", T::sin, |x, _| x.cos())
    }

    /// Element-wise `x^p` for nonnegative `x`.
    pub fn powf(self, p: T) -> Result<Self> {
        if self.value().data().iter().any(|&x| x < T::zero()) {
            return Err(Error::InvalidArgument("powf of a negative base".into()));
        }
        let out = self.value().map(|x| x.powf(p));
        self.tape().record("powf", &[self], out, move |ctx| {
            let g = ctx
                .grad
                .iter()
                .zip(ctx.inputs[0].data())
                .map(|(&g, &x)| {
                    if x == T::zero() {
                        if p > T::one() {
                            T::zero()
                        } else if p == T::one() {
                            g
                        } else {
                            // derivative is unbounded at the origin; clamp to zero
                            T::zero()
                        }
                    } else {
                        g * p * x.powf(p - T::one())
                    }
                })
                .collect();
            vec![Some(g)]
        })
    }

    /// Wraps values into `(−π, π]`; the derivative is one almost everywhere.
    pub fn anti_wrap(self) -> Result<Self> {
        self.unary("anti_wrap", wrap_angle, |_, _| T::one())
    }

    pub fn sum(self) -> Result<Self> {
        let s = self.value().sum();
        self.tape().record("sum", &[self], Tensor::scalar(s), |ctx| {
            vec![Some(vec![ctx.grad[0]; ctx.inputs[0].len()])]
        })
    }

    pub fn mean(self) -> Result<Self> {
        let (s, n) = {
            let v = self.value();
            (v.sum(), v.len())
        };
        let inv = T::one() / T::of_usize(n);
        self.tape().record("mean", &[self], Tensor::scalar(s * inv), move |ctx| {
            vec![Some(vec![ctx.grad[0] * inv; ctx.inputs[0].len()])]
        })
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let out = self.to_tensor().reshape(shape)?;
        self.tape()
            .record("reshape", &[self], out, |ctx| vec![Some(ctx.grad.to_vec())])
    }

    /// Axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn permute(self, perm: &[usize]) -> Result<Self> {
        let shape = self.shape();
        let nd = shape.len();
        let mut seen = vec![false; nd];
        if perm.len() != nd || perm.iter().any(|&p| p >= nd || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::shape("permute", format!("{perm:?} for rank {nd}")));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let index = permute_index(&shape, perm);
        let out = {
            let v = self.value();
            let data = index.iter().map(|&i| v.data()[i]).collect();
            Tensor::new(out_shape, data)?
        };
        self.tape().record("permute", &[self], out, move |ctx| {
            let mut g = vec![T::zero(); ctx.grad.len()];
            for (o, &i) in index.iter().enumerate() {
                g[i] = ctx.grad[o];
            }
            vec![Some(g)]
        })
    }

    pub fn flip(self, axis: usize) -> Result<Self> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(Error::shape("flip", format!("axis {axis} for {shape:?}")));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let flip = move |src: &[T]| {
            let mut dst = Vec::with_capacity(src.len());
            for o in 0..outer {
                for k in (0..n).rev() {
                    let base = (o * n + k) * inner;
                    dst.extend_from_slice(&src[base..base + inner]);
                }
            }
            dst
        };
        let out = Tensor::new(shape.clone(), flip(self.value().data()))?;
        self.tape()
            .record("flip", &[self], out, move |ctx| vec![Some(flip(ctx.grad))])
    }

    /// Contiguous range `[start, start + len)` along `axis`.
    pub fn slice(self, axis: usize, start: usize, len: usize) -> Result<Self> {
        let shape = self.shape();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::shape(
                "slice",
                format!("[{start}, +{len}) on axis {axis} of {shape:?}"),
            ));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let out = {
            let v = self.value();
            let mut data = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let base = (o * n + start) * inner;
                data.extend_from_slice(&v.data()[base..base + len * inner]);
            }
            Tensor::new(out_shape, data)?
        };
        self.tape().record("slice", &[self], out, move |ctx| {
            let mut g = vec![T::zero(); outer * n * inner];
            for o in 0..outer {
                let base = (o * n + start) * inner;
                g[base..base + len * inner]
                    .copy_from_slice(&ctx.grad[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(g)]
        })
    }

    /// Zero padding along `axis`.
    pub fn pad(self, axis: usize, before: usize, after: usize) -> Result<Self> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(Error::shape("pad", format!("axis {axis} for {shape:?}")));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let m = n + before + after;
        let mut out_shape = shape.clone();
        out_shape[axis] = m;
        let out = {
            let v = self.value();
            let mut data = vec![T::zero(); outer * m * inner];
            for o in 0..outer {
                let dst = (o * m + before) * inner;
                data[dst..dst + n * inner]
                    .copy_from_slice(&v.data()[o * n * inner..(o + 1) * n * inner]);
            }
            Tensor::new(out_shape, data)?
        };
        self.tape().record("pad", &[self], out, move |ctx| {
            let mut g = Vec::with_capacity(outer * n * inner);
            for o in 0..outer {
                let src = (o * m + before) * inner;
                g.extend_from_slice(&ctx.grad[src..src + n * inner]);
            }
            vec![Some(g)]
        })
    }

    /// `[..., k] × [k, n] → [..., n]`.
    pub fn matmul(self, w: Self) -> Result<Self> {
        let xs = self.shape();
        let ws = w.shape();
        if ws.len() != 2 || xs.last() != Some(&ws[0]) {
            return Err(Error::shape("matmul", format!("{xs:?} × {ws:?}")));
        }
        let k = ws[0];
        let n = ws[1];
        let m = numel(&xs) / k;
        let mut out_shape = xs.clone();
        *out_shape.last_mut().unwrap() = n;
        let out = Tensor::new(out_shape, matmul_kernel(self.value().data(), w.value().data(), m, k, n))?;
        self.tape().record("matmul", &[self, w], out, move |ctx| {
            let x = ctx.inputs[0].data();
            let wv = ctx.inputs[1].data();
            let g = ctx.grad;
            // dX = G Wᵀ
            let mut gx = vec![T::zero(); m * k];
            for r in 0..m {
                let grow = &g[r * n..(r + 1) * n];
                for (c, gxv) in gx[r * k..(r + 1) * k].iter_mut().enumerate() {
                    let wrow = &wv[c * n..(c + 1) * n];
                    *gxv = grow.iter().zip(wrow).map(|(&a, &b)| a * b).sum();
                }
            }
            // dW = Xᵀ G
            let mut gw = vec![T::zero(); k * n];
            for r in 0..m {
                let grow = &g[r * n..(r + 1) * n];
                for c in 0..k {
                    let xv = x[r * k + c];
                    if xv == T::zero() {
                        continue;
                    }
                    for (acc, &gv) in gw[c * n..(c + 1) * n].iter_mut().zip(grow) {
                        *acc += xv * gv;
                    }
                }
            }
            vec![Some(gx), Some(gw)]
        })
    }

    /// Layer normalization over the last axis, without affine terms.
    pub fn layernorm(self, eps: T) -> Result<Self> {
        let shape = self.shape();
        let d = *shape.last().unwrap();
        let inv_d = T::one() / T::of_usize(d);
        let out = {
            let v = self.value();
            let mut data = Vec::with_capacity(v.len());
            for row in v.data().chunks(d) {
                let mu = row.iter().copied().sum::<T>() * inv_d;
                let var = row.iter().map(|&x| (x - mu) * (x - mu)).sum::<T>() * inv_d;
                let r = T::one() / (var + eps).sqrt();
                data.extend(row.iter().map(|&x| (x - mu) * r));
            }
            Tensor::new(shape, data)?
        };
        self.tape().record("layernorm", &[self], out, move |ctx| {
            let x = ctx.inputs[0].data();
            let xhat = ctx.output.data();
            let mut gx = Vec::with_capacity(x.len());
            for ((row, hrow), grow) in x.chunks(d).zip(xhat.chunks(d)).zip(ctx.grad.chunks(d)) {
                let mu = row.iter().copied().sum::<T>() * inv_d;
                let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() * inv_d;
                let r = T::one() / (var + eps).sqrt();
                let gmean = grow.iter().copied().sum::<T>() * inv_d;
                let ghmean = grow.iter().zip(hrow).map(|(&g, &h)| g * h).sum::<T>() * inv_d;
                gx.extend(grow.iter().zip(hrow).map(|(&g, &h)| r * (g - gmean - h * ghmean)));
            }
            vec![Some(gx)]
        })
    }

    /// Depthwise causal convolution along the time axis of `[..., T, C]`
    /// with kernel `[C, K]`: `y[t, c] = Σ_j w[c, j] · x[t − (K−1) + j, c]`.
    pub fn conv1d_depthwise_causal(self, w: Self) -> Result<Self> {
        let xs = self.shape();
        let ws = w.shape();
        if xs.len() < 2 || ws.len() != 2 || ws[0] != xs[xs.len() - 1] {
            return Err(Error::shape("conv1d_depthwise_causal", format!("{xs:?} with kernel {ws:?}")));
        }
        let c = ws[0];
        let k = ws[1];
        let t = xs[xs.len() - 2];
        let batch = numel(&xs) / (t * c);
        let out = {
            let x = self.value();
            let wv = w.value();
            let (x, wv) = (x.data(), wv.data());
            let mut y = vec![T::zero(); x.len()];
            for b in 0..batch {
                let base = b * t * c;
                for ti in 0..t {
                    for j in 0..k {
                        let lag = k - 1 - j;
                        if lag > ti {
                            continue;
                        }
                        let src = base + (ti - lag) * c;
                        let dst = base + ti * c;
                        for ch in 0..c {
                            y[dst + ch] += wv[ch * k + j] * x[src + ch];
                        }
                    }
                }
            }
            Tensor::new(xs, y)?
        };
        self.tape().record("conv1d_depthwise_causal", &[self, w], out, move |ctx| {
            let x = ctx.inputs[0].data();
            let wv = ctx.inputs[1].data();
            let g = ctx.grad;
            let mut gx = vec![T::zero(); x.len()];
            let mut gw = vec![T::zero(); c * k];
            for b in 0..batch {
                let base = b * t * c;
                for ti in 0..t {
                    for j in 0..k {
                        let lag = k - 1 - j;
                        if lag > ti {
                            continue;
                        }
                        let src = base + (ti - lag) * c;
                        let dst = base + ti * c;
                        for ch in 0..c {
                            gx[src + ch] += wv[ch * k + j] * g[dst + ch];
                            gw[ch * k + j] += x[src + ch] * g[dst + ch];
                        }
                    }
                }
            }
            vec![Some(gx), Some(gw)]
        })
    }

    /// 2-D convolution of `[Ci, H, W]` with `[Co, Ci, KH, KW]` plus bias `[Co]`.
    pub fn conv2d(self, w: Self, bias: Self, spec: Conv2dSpec) -> Result<Self> {
        let xs = self.shape();
        let ws = w.shape();
        if xs.len() != 3 || ws.len() != 4 || ws[1] != xs[0] || bias.shape() != [ws[0]] {
            return Err(Error::shape(
                "conv2d",
                format!("input {xs:?}, weight {ws:?}, bias {:?}", bias.shape()),
            ));
        }
        let (oh, ow) = spec
            .conv_out((xs[1], xs[2]), (ws[2], ws[3]))
            .ok_or_else(|| Error::shape("conv2d", format!("kernel {ws:?} larger than padded input {xs:?}")))?;
        let geo = Geometry {
            ci: xs[0],
            co: ws[0],
            kh: ws[2],
            kw: ws[3],
            ih: xs[1],
            iw: xs[2],
            oh,
            ow,
            spec,
        };
        let mut y = gather(self.value().data(), w.value().data(), &geo);
        add_channel_bias(&mut y, bias.value().data(), oh * ow);
        let out = Tensor::new(vec![ws[0], oh, ow], y)?;
        self.tape().record("conv2d", &[self, w, bias], out, move |ctx| {
            let gx = scatter(ctx.grad, ctx.inputs[1].data(), &geo);
            let gw = weight_grad(ctx.grad, ctx.inputs[0].data(), &geo);
            let gb = ctx.grad.chunks(geo.oh * geo.ow).map(|c| c.iter().copied().sum()).collect();
            vec![Some(gx), Some(gw), Some(gb)]
        })
    }

    /// Transposed 2-D convolution of `[Ci, H, W]` with `[Ci, Co, KH, KW]`
    /// plus bias `[Co]`. `output_padding` extends the bottom/right edge.
    pub fn conv_transpose2d(
        self,
        w: Self,
        bias: Self,
        spec: Conv2dSpec,
        output_padding: (usize, usize),
    ) -> Result<Self> {
        let xs = self.shape();
        let ws = w.shape();
        if xs.len() != 3 || ws.len() != 4 || ws[0] != xs[0] || bias.shape() != [ws[1]] {
            return Err(Error::shape(
                "conv_transpose2d",
                format!("input {xs:?}, weight {ws:?}, bias {:?}", bias.shape()),
            ));
        }
        let (oh, ow) = spec
            .transposed_out((xs[1], xs[2]), (ws[2], ws[3]))
            .ok_or_else(|| Error::shape("conv_transpose2d", "padding exceeds output"))?;
        let (oh, ow) = (oh + output_padding.0, ow + output_padding.1);
        if output_padding.0 >= spec.stride.0.max(spec.dilation.0) || output_padding.1 >= spec.stride.1.max(spec.dilation.1) {
            return Err(Error::shape("conv_transpose2d", "output padding must be below stride"));
        }
        // the transposed op is the input-adjoint of a conv mapping [Co, oh, ow] -> [Ci, H, W]
        let geo = Geometry {
            ci: ws[1],
            co: ws[0],
            kh: ws[2],
            kw: ws[3],
            ih: oh,
            iw: ow,
            oh: xs[1],
            ow: xs[2],
            spec,
        };
        let mut y = scatter(self.value().data(), w.value().data(), &geo);
        add_channel_bias(&mut y, bias.value().data(), oh * ow);
        let out = Tensor::new(vec![ws[1], oh, ow], y)?;
        self.tape().record("conv_transpose2d", &[self, w, bias], out, move |ctx| {
            let gx = gather(ctx.grad, ctx.inputs[1].data(), &geo);
            let gw = weight_grad(ctx.inputs[0].data(), ctx.grad, &geo);
            let gb = ctx.grad.chunks(geo.ih * geo.iw).map(|c| c.iter().copied().sum()).collect();
            vec![Some(gx), Some(gw), Some(gb)]
        })
    }
}

fn add_channel_bias<T: Scalar>(y: &mut [T], bias: &[T], plane: usize) {
    for (chunk, &b) in y.chunks_mut(plane).zip(bias) {
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

pub(crate) fn matmul_kernel<T: Scalar>(x: &[T], w: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for r in 0..m {
        let orow = &mut out[r * n..(r + 1) * n];
        for c in 0..k {
            let xv = x[r * k + c];
            if xv == T::zero() {
                continue;
            }
            for (o, &wv) in orow.iter_mut().zip(&w[c * n..(c + 1) * n]) {
                *o += xv * wv;
            }
        }
    }
    out
}

/// For each output position of a permutation, the flat source index.
fn permute_index(shape: &[usize], perm: &[usize]) -> Vec<usize> {
    let in_strides = crate::tensor::strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = numel(shape);
    let mut index = Vec::with_capacity(n);
    let mut counter = vec![0usize; shape.len()];
    let mut offset = 0usize;
    for _ in 0..n {
        index.push(offset);
        for ax in (0..out_shape.len()).rev() {
            counter[ax] += 1;
            offset += src_strides[ax];
            if counter[ax] < out_shape[ax] {
                break;
            }
            offset -= src_strides[ax] * out_shape[ax];
            counter[ax] = 0;
        }
    }
    index
}

/// Concatenation along `axis`; all other extents must agree.
pub fn concat<'t, T: Scalar>(parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
    let shapes: Vec<Vec<usize>> = parts.iter().map(|p| p.shape()).collect();
    let base = &shapes[0];
    if axis >= base.len() {
        return Err(Error::shape("concat", format!("axis {axis} for {base:?}")));
    }
    for s in &shapes {
        if s.len() != base.len() || s.iter().zip(base).enumerate().any(|(i, (a, b))| i != axis && a != b) {
            return Err(Error::shape("concat", format!("{s:?} vs {base:?}")));
        }
    }
    let (outer, _, inner) = split_axis(base, axis);
    let extents: Vec<usize> = shapes.iter().map(|s| s[axis]).collect();
    let total: usize = extents.iter().sum();
    let mut out_shape = base.clone();
    out_shape[axis] = total;
    let mut data = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for (p, &e) in parts.iter().zip(&extents) {
            let v = p.value();
            data.extend_from_slice(&v.data()[o * e * inner..(o + 1) * e * inner]);
        }
    }
    let out = Tensor::new(out_shape, data)?;
    first.tape().record("concat", parts, out, move |ctx| {
        let mut grads: Vec<Vec<T>> = extents.iter().map(|&e| Vec::with_capacity(outer * e * inner)).collect();
        let mut pos = 0;
        for _ in 0..outer {
            for (g, &e) in grads.iter_mut().zip(&extents) {
                g.extend_from_slice(&ctx.grad[pos..pos + e * inner]);
                pos += e * inner;
            }
        }
        grads.into_iter().map(Some).collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    #[test]
    fn analytic_values() {
        let tape = Tape::<f64>::new();
        let z = tape.constant(Tensor::scalar(0.0));
        assert_eq!(z.silu().unwrap().item(), 0.0);
        assert!((z.softplus().unwrap().item() - std::f64::consts::LN_2).abs() < 1e-15);
        let x = tape.constant(Tensor::from_vec(vec![1.0, 0.0, 0.0, 0.0]).reshape(vec![4, 1]).unwrap());
        let k = tape.constant(Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap());
        let y = x.conv1d_depthwise_causal(k).unwrap();
        assert_eq!(y.value().data(), &[1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn causal_kernel_orientation() {
        // kernel [a, b]: y[t] = a·x[t−1] + b·x[t]
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new(vec![3, 1], vec![1.0, 0.0, 0.0]).unwrap());
        let k = tape.constant(Tensor::new(vec![1, 2], vec![2.0, 3.0]).unwrap());
        let y = x.conv1d_depthwise_causal(k).unwrap();
        assert_eq!(y.value().data(), &[3.0, 2.0, 0.0]);
    }

    #[test]
    fn backward_of_sum_and_square() {
        let tape = Tape::<f64>::new();
        let x = tape.var(Tensor::from_vec(vec![1.0, 2.0, 3.0]));
        let loss = x.square().unwrap().sum().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[2.0, 4.0, 6.0]);
        assert!(matches!(loss.backward(), Err(Error::TapeConsumed)));

        let tape = Tape::<f64>::new();
        let x = tape.var(Tensor::ones(vec![2, 3]));
        assert!(matches!(x.backward(), Err(Error::NonScalarLoss(_))));
        x.sum().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn flip_concat_slice_roundtrip() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let b = tape.constant(Tensor::new(vec![2, 1], vec![7., 8.]).unwrap());
        assert_eq!(a.flip(1).unwrap().flip(1).unwrap().to_tensor(), a.to_tensor());
        assert_eq!(a.flip(0).unwrap().value().data(), &[4., 5., 6., 1., 2., 3.]);
        let c = concat(&[a, b], 1).unwrap();
        assert_eq!(c.value().data(), &[1., 2., 3., 7., 4., 5., 6., 8.]);
        assert_eq!(c.slice(1, 0, 3).unwrap().to_tensor(), a.to_tensor());
        assert_eq!(c.slice(1, 3, 1).unwrap().to_tensor(), b.to_tensor());
    }

    #[test]
    fn permute_matches_manual_transpose() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let t = a.permute(&[1, 0]).unwrap();
        assert_eq!(t.shape(), vec![3, 2]);
        assert_eq!(t.value().data(), &[1., 4., 2., 5., 3., 6.]);
        assert!(a.permute(&[0, 0]).is_err());
    }

    #[test]
    fn non_finite_output_is_rejected() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::scalar(1000.0));
        assert!(matches!(x.exp(), Err(Error::NonFinite { op: "exp" })));
    }

    #[test]
    fn wrap_angle_range() {
        let pi = std::f64::consts::PI;
        assert!((wrap_angle(pi - 0.1 - (-pi + 0.1)) - (-0.2)).abs() < 1e-12);
        assert_eq!(wrap_angle(-pi), pi);
        assert_eq!(wrap_angle(pi), pi);
    }
}
