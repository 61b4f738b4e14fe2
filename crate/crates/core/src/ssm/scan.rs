//! Selective scan: `h_n = Ā_n h_{n−1} + B̄_n x_n`, `y_n = C_n·h_n + D x_n`
//! over a diagonal state, with `Ā = exp(ΔA)` and `B̄ = ΔB`.
//!
//! Layouts (row-major, leading batch axes allowed):
//! `x, Δ: [..., T, C]`, `A: [C, S]`, `B, C: [..., T, S]`, `D: [C]`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{numel, Tensor};

/// Time steps per block in the blocked parallel scan.
pub const SCAN_BLOCK: usize = 64;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanMode {
    Sequential,
    #[default]
    Parallel,
}

/// Element of the associative scan: the affine map `h ↦ a·h + b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffinePair<T> {
    pub a: T,
    pub b: T,
}

/// Composition "apply `first`, then `second`":
/// `(a₁, b₁) ∘ (a₂, b₂) = (a₂a₁, a₂b₁ + b₂)`.
#[inline]
pub fn combine<T: Scalar>(first: AffinePair<T>, second: AffinePair<T>) -> AffinePair<T> {
    AffinePair {
        a: second.a * first.a,
        b: second.a * first.b + second.b,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScanDims {
    pub batch: usize,
    pub t: usize,
    pub c: usize,
    pub s: usize,
}

impl ScanDims {
    /// Validates shapes of a scan call and extracts its dimensions.
    pub fn infer(x: &[usize], delta: &[usize], a: &[usize], b: &[usize], c: &[usize], d: &[usize]) -> Result<Self> {
        let bad = |what: String| Err(Error::shape("selective_scan", what));
        if x.len() < 2 || a.len() != 2 || d.len() != 1 {
            return bad(format!("x {x:?}, A {a:?}, D {d:?}"));
        }
        let (ch, st) = (a[0], a[1]);
        let t = x[x.len() - 2];
        if x[x.len() - 1] != ch || d[0] != ch || delta != x {
            return bad(format!("x {x:?}, Δ {delta:?}, A {a:?}, D {d:?}"));
        }
        let lead = &x[..x.len() - 2];
        let mut bs = lead.to_vec();
        bs.extend([t, st]);
        if b != bs.as_slice() || c != bs.as_slice() {
            return bad(format!("B {b:?} and C {c:?} must be {bs:?}"));
        }
        Ok(Self {
            batch: numel(lead),
            t,
            c: ch,
            s: st,
        })
    }
}

/// Borrowed operands for one scan call.
#[derive(Clone, Copy)]
pub struct ScanInputs<'a, T> {
    pub x: &'a [T],
    pub delta: &'a [T],
    pub a: &'a [T],
    pub b: &'a [T],
    pub c: &'a [T],
    pub d: &'a [T],
}

impl<'a, T: Scalar> ScanInputs<'a, T> {
    fn item(&self, dims: &ScanDims, i: usize) -> Self {
        let tc = dims.t * dims.c;
        let ts = dims.t * dims.s;
        Self {
            x: &self.x[i * tc..(i + 1) * tc],
            delta: &self.delta[i * tc..(i + 1) * tc],
            a: self.a,
            b: &self.b[i * ts..(i + 1) * ts],
            c: &self.c[i * ts..(i + 1) * ts],
            d: self.d,
        }
    }
}

/// Runs steps `[t0, t1)` of one sequence from state `h`, writing `y` rows.
#[inline]
fn run_steps<T: Scalar>(inp: &ScanInputs<'_, T>, dims: &ScanDims, t0: usize, t1: usize, h: &mut [T], y: &mut [T]) {
    let (c, s) = (dims.c, dims.s);
    for t in t0..t1 {
        let brow = &inp.b[t * s..(t + 1) * s];
        let crow = &inp.c[t * s..(t + 1) * s];
        let yrow = &mut y[(t - t0) * c..(t - t0 + 1) * c];
        for ch in 0..c {
            let dt = inp.delta[t * c + ch];
            let xv = inp.x[t * c + ch];
            let dtx = dt * xv;
            let hrow = &mut h[ch * s..(ch + 1) * s];
            let arow = &inp.a[ch * s..(ch + 1) * s];
            let mut acc = T::zero();
            for k in 0..s {
                let abar = (dt * arow[k]).exp();
                hrow[k] = abar * hrow[k] + dtx * brow[k];
                acc += crow[k] * hrow[k];
            }
            yrow[ch] = acc + inp.d[ch] * xv;
        }
    }
}

fn scan_item_sequential<T: Scalar>(inp: &ScanInputs<'_, T>, dims: &ScanDims, y: &mut [T]) {
    let mut h = vec![T::zero(); dims.c * dims.s];
    run_steps(inp, dims, 0, dims.t, &mut h, y);
}

/// Blocked three-phase scan: per-block aggregates in parallel, a serial
/// carry over blocks, then per-block replay from the carried state.
fn scan_item_blocked<T: Scalar>(inp: &ScanInputs<'_, T>, dims: &ScanDims, y: &mut [T]) {
    let (c, s) = (dims.c, dims.s);
    let lanes = c * s;
    let n_blocks = dims.t.div_ceil(SCAN_BLOCK);
    // up-sweep: compose each block's affine maps lane by lane
    let aggregates: Vec<Vec<AffinePair<T>>> = (0..n_blocks)
        .into_par_iter()
        .map(|blk| {
            let t0 = blk * SCAN_BLOCK;
            let t1 = (t0 + SCAN_BLOCK).min(dims.t);
            let mut agg = vec![AffinePair { a: T::one(), b: T::zero() }; lanes];
            for t in t0..t1 {
                let brow = &inp.b[t * s..(t + 1) * s];
                for ch in 0..c {
                    let dt = inp.delta[t * c + ch];
                    let dtx = dt * inp.x[t * c + ch];
                    for k in 0..s {
                        let step = AffinePair {
                            a: (dt * inp.a[ch * s + k]).exp(),
                            b: dtx * brow[k],
                        };
                        let lane = &mut agg[ch * s + k];
                        *lane = combine(*lane, step);
                    }
                }
            }
            agg
        })
        .collect();
    // carry: state entering each block
    let mut carries = Vec::with_capacity(n_blocks);
    let mut h = vec![T::zero(); lanes];
    for agg in &aggregates {
        carries.push(h.clone());
        for (hv, p) in h.iter_mut().zip(agg) {
            *hv = p.a * *hv + p.b;
        }
    }
    // down-sweep: replay each block from its carry
    y.par_chunks_mut(SCAN_BLOCK * c)
        .zip(carries.into_par_iter())
        .enumerate()
        .for_each(|(blk, (ychunk, mut h))| {
            let t0 = blk * SCAN_BLOCK;
            let t1 = (t0 + SCAN_BLOCK).min(dims.t);
            run_steps(inp, dims, t0, t1, &mut h, ychunk);
        });
}

pub fn scan_raw<T: Scalar>(inp: &ScanInputs<'_, T>, dims: &ScanDims, mode: ScanMode) -> Vec<T> {
    let tc = dims.t * dims.c;
    let mut y = vec![T::zero(); dims.batch * tc];
    match mode {
        ScanMode::Sequential => {
            for (i, yi) in y.chunks_mut(tc).enumerate() {
                scan_item_sequential(&inp.item(dims, i), dims, yi);
            }
        }
        ScanMode::Parallel => {
            y.par_chunks_mut(tc).enumerate().for_each(|(i, yi)| {
                let item = inp.item(dims, i);
                if dims.t > SCAN_BLOCK {
                    scan_item_blocked(&item, dims, yi);
                } else {
                    scan_item_sequential(&item, dims, yi);
                }
            });
        }
    }
    y
}

fn scan_tensors<T: Scalar>(
    x: &Tensor<T>,
    delta: &Tensor<T>,
    a: &Tensor<T>,
    b: &Tensor<T>,
    c: &Tensor<T>,
    d: &Tensor<T>,
    mode: ScanMode,
) -> Result<Tensor<T>> {
    let dims = ScanDims::infer(x.shape(), delta.shape(), a.shape(), b.shape(), c.shape(), d.shape())?;
    let inp = ScanInputs {
        x: x.data(),
        delta: delta.data(),
        a: a.data(),
        b: b.data(),
        c: c.data(),
        d: d.data(),
    };
    Tensor::new(x.shape().to_vec(), scan_raw(&inp, &dims, mode))
}

/// Reference recurrence, one time step after another.
pub fn selective_scan_sequential<T: Scalar>(
    x: &Tensor<T>,
    delta: &Tensor<T>,
    a: &Tensor<T>,
    b: &Tensor<T>,
    c: &Tensor<T>,
    d: &Tensor<T>,
) -> Result<Tensor<T>> {
    scan_tensors(x, delta, a, b, c, d, ScanMode::Sequential)
}

/// Blocked associative scan, parallel over blocks and batch items.
pub fn selective_scan_parallel<T: Scalar>(
    x: &Tensor<T>,
    delta: &Tensor<T>,
    a: &Tensor<T>,
    b: &Tensor<T>,
    c: &Tensor<T>,
    d: &Tensor<T>,
) -> Result<Tensor<T>> {
    scan_tensors(x, delta, a, b, c, d, ScanMode::Parallel)
}

struct ItemGrads<T> {
    x: Vec<T>,
    delta: Vec<T>,
    a: Vec<T>,
    b: Vec<T>,
    c: Vec<T>,
    d: Vec<T>,
}

/// Reverse sweep for one sequence. States are recomputed forward first.
fn backward_item<T: Scalar>(inp: &ScanInputs<'_, T>, dims: &ScanDims, gy: &[T]) -> ItemGrads<T> {
    let (tn, c, s) = (dims.t, dims.c, dims.s);
    let lanes = c * s;
    let mut hs = vec![T::zero(); tn * lanes];
    {
        let mut h = vec![T::zero(); lanes];
        for t in 0..tn {
            for ch in 0..c {
                let dt = inp.delta[t * c + ch];
                let dtx = dt * inp.x[t * c + ch];
                for k in 0..s {
                    let l = ch * s + k;
                    h[l] = (dt * inp.a[l]).exp() * h[l] + dtx * inp.b[t * s + k];
                }
            }
            hs[t * lanes..(t + 1) * lanes].copy_from_slice(&h);
        }
    }
    let mut g = ItemGrads {
        x: vec![T::zero(); tn * c],
        delta: vec![T::zero(); tn * c],
        a: vec![T::zero(); lanes],
        b: vec![T::zero(); tn * s],
        c: vec![T::zero(); tn * s],
        d: vec![T::zero(); c],
    };
    // gh carries dL/dh_t including the path through h_{t+1}
    let mut gh = vec![T::zero(); lanes];
    for t in (0..tn).rev() {
        let h_t = &hs[t * lanes..(t + 1) * lanes];
        for ch in 0..c {
            let gyv = gy[t * c + ch];
            let dt = inp.delta[t * c + ch];
            let xv = inp.x[t * c + ch];
            g.d[ch] += gyv * xv;
            let mut gx = gyv * inp.d[ch];
            let mut gdt = T::zero();
            for k in 0..s {
                let l = ch * s + k;
                let av = inp.a[l];
                let bv = inp.b[t * s + k];
                g.c[t * s + k] += gyv * h_t[l];
                let ghl = gh[l] + gyv * inp.c[t * s + k];
                let abar = (dt * av).exp();
                let h_prev = if t > 0 { hs[(t - 1) * lanes + l] } else { T::zero() };
                let g_abar = ghl * h_prev * abar;
                gdt += g_abar * av + ghl * bv * xv;
                g.a[l] += g_abar * dt;
                g.b[t * s + k] += ghl * dt * xv;
                gx += ghl * dt * bv;
                gh[l] = ghl * abar;
            }
            g.x[t * c + ch] = gx;
            g.delta[t * c + ch] = gdt;
        }
    }
    g
}

/// Differentiable selective scan on the tape.
pub fn selective_scan<'t, T: Scalar>(
    x: Var<'t, T>,
    delta: Var<'t, T>,
    a: Var<'t, T>,
    b: Var<'t, T>,
    c: Var<'t, T>,
    d: Var<'t, T>,
    mode: ScanMode,
) -> Result<Var<'t, T>> {
    let out = scan_tensors(
        &x.value(),
        &delta.value(),
        &a.value(),
        &b.value(),
        &c.value(),
        &d.value(),
        mode,
    )?;
    let dims = ScanDims::infer(
        &x.shape(),
        &delta.shape(),
        &a.shape(),
        &b.shape(),
        &c.shape(),
        &d.shape(),
    )?;
    x.tape().record("selective_scan", &[x, delta, a, b, c, d], out, move |ctx| {
        let inp = ScanInputs {
            x: ctx.inputs[0].data(),
            delta: ctx.inputs[1].data(),
            a: ctx.inputs[2].data(),
            b: ctx.inputs[3].data(),
            c: ctx.inputs[4].data(),
            d: ctx.inputs[5].data(),
        };
        let tc = dims.t * dims.c;
        let items: Vec<ItemGrads<T>> = (0..dims.batch)
            .into_par_iter()
            .map(|i| backward_item(&inp.item(&dims, i), &dims, &ctx.grad[i * tc..(i + 1) * tc]))
            .collect();
        let mut gx = Vec::with_capacity(dims.batch * tc);
        let mut gdelta = Vec::with_capacity(dims.batch * tc);
        let mut gb = Vec::with_capacity(dims.batch * dims.t * dims.s);
        let mut gc = Vec::with_capacity(dims.batch * dims.t * dims.s);
        let mut ga = vec![T::zero(); dims.c * dims.s];
        let mut gd = vec![T::zero(); dims.c];
        for it in items {
            gx.extend(it.x);
            gdelta.extend(it.delta);
            gb.extend(it.b);
            gc.extend(it.c);
            ga.iter_mut().zip(&it.a).for_each(|(acc, &v)| *acc += v);
            gd.iter_mut().zip(&it.d).for_each(|(acc, &v)| *acc += v);
        }
        vec![Some(gx), Some(gdelta), Some(ga), Some(gb), Some(gc), Some(gd)]
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn single_step_unrolls() {
        // T=1, C=1, S=2
        let x = t(&[1, 1], &[0.7]);
        let delta = t(&[1, 1], &[0.3]);
        let a = t(&[1, 2], &[-1.0, -2.0]);
        let b = t(&[1, 2], &[0.5, -1.5]);
        let c = t(&[1, 2], &[2.0, 0.25]);
        let d = t(&[1], &[0.9]);
        let y = selective_scan_sequential(&x, &delta, &a, &b, &c, &d).unwrap();
        let expect = 2.0 * (0.3 * 0.5 * 0.7) + 0.25 * (0.3 * -1.5 * 0.7) + 0.9 * 0.7;
        assert!((y.data()[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn zero_input_zero_output() {
        let x = Tensor::<f64>::zeros(vec![5, 3]);
        let delta = Tensor::full(vec![5, 3], 0.1);
        let a = Tensor::full(vec![3, 4], -1.0);
        let b = Tensor::ones(vec![5, 4]);
        let c = Tensor::ones(vec![5, 4]);
        let d = Tensor::ones(vec![3]);
        let y = selective_scan_parallel(&x, &delta, &a, &b, &c, &d).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_step_algebra() {
        // scalar lane: h2 = a2·a1·0 + a2·b̄1·x1 + b̄2·x2, C = 1, D = 0
        let x = t(&[2, 1], &[1.3, -0.4]);
        let delta = t(&[2, 1], &[0.2, 0.5]);
        let a = t(&[1, 1], &[-0.8]);
        let b = t(&[2, 1], &[0.6, 1.1]);
        let c = t(&[2, 1], &[1.0, 1.0]);
        let d = t(&[1], &[0.0]);
        let y = selective_scan_parallel(&x, &delta, &a, &b, &c, &d).unwrap();
        let a2 = (0.5f64 * -0.8).exp();
        let h2 = a2 * (0.2 * 0.6 * 1.3) + 0.5 * 1.1 * -0.4;
        assert!((y.data()[1] - h2).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let x = Tensor::<f64>::zeros(vec![5, 3]);
        let delta = Tensor::zeros(vec![5, 2]);
        let a = Tensor::zeros(vec![3, 4]);
        let b = Tensor::zeros(vec![5, 4]);
        let d = Tensor::zeros(vec![3]);
        assert!(selective_scan_sequential(&x, &delta, &a, &b, &b, &d).is_err());
    }
}
