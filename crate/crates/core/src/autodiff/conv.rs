//! Direct 2-D convolution kernels over `[channels, height, width]` maps.
//!
//! Three kernels cover both `conv2d` and `conv_transpose2d`: the gather
//! (forward), its adjoint with respect to the input (scatter), and the
//! weight correlation. Output channels are processed in parallel; every
//! channel is reduced in a fixed order so results are bitwise reproducible.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Stride, dilation and zero padding of a 2-D convolution. Padding is
/// `(top, bottom, left, right)` so causal time padding can be expressed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv2dSpec {
    pub stride: (usize, usize),
    pub dilation: (usize, usize),
    pub padding: (usize, usize, usize, usize),
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Self {
            stride: (1, 1),
            dilation: (1, 1),
            padding: (0, 0, 0, 0),
        }
    }
}

impl Conv2dSpec {
    /// Output extent of a forward convolution, `None` if the kernel does not fit.
    pub fn conv_out(&self, input: (usize, usize), kernel: (usize, usize)) -> Option<(usize, usize)> {
        let (pt, pb, pl, pr) = self.padding;
        let span_h = self.dilation.0 * (kernel.0 - 1) + 1;
        let span_w = self.dilation.1 * (kernel.1 - 1) + 1;
        let h = input.0 + pt + pb;
        let w = input.1 + pl + pr;
        if h < span_h || w < span_w {
            return None;
        }
        Some(((h - span_h) / self.stride.0 + 1, (w - span_w) / self.stride.1 + 1))
    }

    /// Output extent of a transposed convolution before output padding.
    pub fn transposed_out(&self, input: (usize, usize), kernel: (usize, usize)) -> Option<(usize, usize)> {
        let (pt, pb, pl, pr) = self.padding;
        let h = (input.0 - 1) * self.stride.0 + self.dilation.0 * (kernel.0 - 1) + 1;
        let w = (input.1 - 1) * self.stride.1 + self.dilation.1 * (kernel.1 - 1) + 1;
        if h <= pt + pb || w <= pl + pr {
            return None;
        }
        Some((h - pt - pb, w - pl - pr))
    }
}

/// Range of output positions `o` with `0 <= o*stride + offset < in_len`.
#[inline]
fn valid(out_len: usize, stride: usize, offset: isize, in_len: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if offset >= 0 { 0 } else { ((-offset) + s - 1) / s };
    let room = in_len as isize - offset;
    let hi = if room <= 0 { 0 } else { (room + s - 1) / s };
    let lo = lo as usize;
    let hi = (hi as usize).min(out_len);
    (lo, hi.max(lo))
}

pub(crate) struct Geometry {
    pub ci: usize,
    pub co: usize,
    pub kh: usize,
    pub kw: usize,
    /// spatial extent of the "input" side of the gather
    pub ih: usize,
    pub iw: usize,
    /// spatial extent of the "output" side of the gather
    pub oh: usize,
    pub ow: usize,
    pub spec: Conv2dSpec,
}

impl Geometry {
    #[inline]
    fn offsets(&self, kh: usize, kw: usize) -> (isize, isize) {
        let (pt, _, pl, _) = self.spec.padding;
        (
            (kh * self.spec.dilation.0) as isize - pt as isize,
            (kw * self.spec.dilation.1) as isize - pl as isize,
        )
    }
}

/// `out[co, y, x] = Σ w[co, ci, a, b] · inp[ci, y·sh + a·dh − pt, x·sw + b·dw − pl]`
pub(crate) fn gather<T: Scalar>(inp: &[T], w: &[T], g: &Geometry) -> Vec<T> {
    let (sh, sw) = g.spec.stride;
    let plane_in = g.ih * g.iw;
    let plane_out = g.oh * g.ow;
    let mut out = vec![T::zero(); g.co * plane_out];
    out.par_chunks_mut(plane_out).enumerate().for_each(|(co, dst)| {
        for ci in 0..g.ci {
            let src = &inp[ci * plane_in..(ci + 1) * plane_in];
            for a in 0..g.kh {
                for b in 0..g.kw {
                    let wv = w[((co * g.ci + ci) * g.kh + a) * g.kw + b];
                    if wv == T::zero() {
                        continue;
                    }
                    let (off_h, off_w) = g.offsets(a, b);
                    let (ylo, yhi) = valid(g.oh, sh, off_h, g.ih);
                    let (xlo, xhi) = valid(g.ow, sw, off_w, g.iw);
                    for y in ylo..yhi {
                        let iy = (y * sh) as isize + off_h;
                        let row = &src[iy as usize * g.iw..(iy as usize + 1) * g.iw];
                        let drow = &mut dst[y * g.ow..(y + 1) * g.ow];
                        if sw == 1 {
                            let start = (xlo as isize + off_w) as usize;
                            let n = xhi - xlo;
                            for (d, &s) in drow[xlo..xhi].iter_mut().zip(&row[start..start + n]) {
                                *d += wv * s;
                            }
                        } else {
                            for x in xlo..xhi {
                                let ix = ((x * sw) as isize + off_w) as usize;
                                drow[x] += wv * row[ix];
                            }
                        }
                    }
                }
            }
        }
    });
    out
}

/// Adjoint of [`gather`] with respect to `inp`.
pub(crate) fn scatter<T: Scalar>(grad_out: &[T], w: &[T], g: &Geometry) -> Vec<T> {
    let (sh, sw) = g.spec.stride;
    let plane_in = g.ih * g.iw;
    let plane_out = g.oh * g.ow;
    let mut gin = vec![T::zero(); g.ci * plane_in];
    gin.par_chunks_mut(plane_in).enumerate().for_each(|(ci, dst)| {
        for co in 0..g.co {
            let src = &grad_out[co * plane_out..(co + 1) * plane_out];
            for a in 0..g.kh {
                for b in 0..g.kw {
                    let wv = w[((co * g.ci + ci) * g.kh + a) * g.kw + b];
                    if wv == T::zero() {
                        continue;
                    }
                    let (off_h, off_w) = g.offsets(a, b);
                    let (ylo, yhi) = valid(g.oh, sh, off_h, g.ih);
                    let (xlo, xhi) = valid(g.ow, sw, off_w, g.iw);
                    for y in ylo..yhi {
                        let iy = ((y * sh) as isize + off_h) as usize;
                        let srow = &src[y * g.ow..(y + 1) * g.ow];
                        let drow = &mut dst[iy * g.iw..(iy + 1) * g.iw];
                        for x in xlo..xhi {
                            let ix = ((x * sw) as isize + off_w) as usize;
                            drow[ix] += wv * srow[x];
                        }
                    }
                }
            }
        }
    });
    gin
}

/// Gradient of [`gather`] with respect to `w`.
pub(crate) fn weight_grad<T: Scalar>(grad_out: &[T], inp: &[T], g: &Geometry) -> Vec<T> {
    let (sh, sw) = g.spec.stride;
    let plane_in = g.ih * g.iw;
    let plane_out = g.oh * g.ow;
    let per_co = g.ci * g.kh * g.kw;
    let mut gw = vec![T::zero(); g.co * per_co];
    gw.par_chunks_mut(per_co).enumerate().for_each(|(co, dst)| {
        let gsrc = &grad_out[co * plane_out..(co + 1) * plane_out];
        for ci in 0..g.ci {
            let src = &inp[ci * plane_in..(ci + 1) * plane_in];
            for a in 0..g.kh {
                for b in 0..g.kw {
                    let (off_h, off_w) = g.offsets(a, b);
                    let (ylo, yhi) = valid(g.oh, sh, off_h, g.ih);
                    let (xlo, xhi) = valid(g.ow, sw, off_w, g.iw);
                    let mut acc = T::zero();
                    for y in ylo..yhi {
                        let iy = ((y * sh) as isize + off_h) as usize;
                        let row = &src[iy * g.iw..(iy + 1) * g.iw];
                        let grow = &gsrc[y * g.ow..(y + 1) * g.ow];
                        for x in xlo..xhi {
                            let ix = ((x * sw) as isize + off_w) as usize;
                            acc += grow[x] * row[ix];
                        }
                    }
                    dst[(ci * g.kh + a) * g.kw + b] = acc;
                }
            }
        }
    });
    gw
}
