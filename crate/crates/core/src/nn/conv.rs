//! Stride-1 3D cross-correlation with zero "same" padding.

use super::{ConvKernel, Real, Tensor};
use crate::error::{Error, Result};

/// Valid output range along one axis for a tap offset `d`.
#[inline]
fn span(len: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (len as isize - d).min(len as isize).max(0) as usize;
    (lo, hi.max(lo))
}

#[inline]
fn axpy<T: Real>(acc: &mut [T], a: T, x: &[T]) {
    for (o, &v) in acc.iter_mut().zip(x) {
        *o += a * v;
    }
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

fn check<T: Real>(x: &Tensor<T>, kernel_c_in: usize) -> Result<[usize; 3]> {
    if x.shape.len() != 4 {
        return Err(Error::ShapeMismatch(format!("conv3d input must be rank 4, got {:?}", x.shape)));
    }
    if x.shape[0] != kernel_c_in {
        return Err(Error::ShapeMismatch(format!(
            "conv3d input has {} channels, kernel expects {kernel_c_in}",
            x.shape[0]
        )));
    }
    Ok([x.shape[1], x.shape[2], x.shape[3]])
}

/// Visit every (tap, row) pair of a convolution: `f(tap, out_offset,
/// in_offset, row_len)` where offsets index within one channel plane.
#[inline]
fn for_each_row(dims: [usize; 3], k: usize, mut f: impl FnMut(usize, usize, usize, usize)) {
    let [d, h, w] = dims;
    let pad = (k / 2) as isize;
    for kz in 0..k {
        let dz = kz as isize - pad;
        let (z0, z1) = span(d, dz);
        for ky in 0..k {
            let dy = ky as isize - pad;
            let (y0, y1) = span(h, dy);
            for kx in 0..k {
                let dx = kx as isize - pad;
                let (x0, x1) = span(w, dx);
                if x1 <= x0 {
                    continue;
                }
                let tap = (kz * k + ky) * k + kx;
                for z in z0..z1 {
                    let zi = (z as isize + dz) as usize;
                    for y in y0..y1 {
                        let yi = (y as isize + dy) as usize;
                        let out = (z * h + y) * w + x0;
                        let inp = (zi * h + yi) * w + (x0 as isize + dx) as usize;
                        f(tap, out, inp, x1 - x0);
                    }
                }
            }
        }
    }
}

pub fn conv3d<T: Real>(x: &Tensor<T>, kernel: &ConvKernel<T>) -> Result<Tensor<T>> {
    let dims = check(x, kernel.c_in())?;
    let (co, ci, k) = (kernel.c_out(), kernel.c_in(), kernel.size());
    let taps = k * k * k;
    let plane: usize = dims.iter().product();
    let mut out = Tensor::zeros(&[co, dims[0], dims[1], dims[2]]);
    for o in 0..co {
        let out_plane = &mut out.data[o * plane..(o + 1) * plane];
        out_plane.fill(kernel.bias.data[o]);
        for c in 0..ci {
            let in_plane = &x.data[c * plane..(c + 1) * plane];
            let wbase = (o * ci + c) * taps;
            let weights = &kernel.weight.data[wbase..wbase + taps];
            for_each_row(dims, k, |tap, op, ip, len| {
                let wv = weights[tap];
                if wv != T::zero() {
                    axpy(&mut out_plane[op..op + len], wv, &in_plane[ip..ip + len]);
                }
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Gradients of a convolution given the upstream gradient of its output.
pub fn conv3d_backward<T: Real>(
    x: &Tensor<T>,
    kernel: &ConvKernel<T>,
    grad_out: &Tensor<T>,
    need_input: bool,
) -> Result<ConvGrads<T>> {
    let dims = check(x, kernel.c_in())?;
    let (co, ci, k) = (kernel.c_out(), kernel.c_in(), kernel.size());
    let taps = k * k * k;
    let plane: usize = dims.iter().product();
    if grad_out.data.len() != co * plane {
        return Err(Error::ShapeMismatch("conv3d upstream gradient shape".into()));
    }

    let mut bias = Tensor::zeros(&[co]);
    for o in 0..co {
        bias.data[o] = grad_out.data[o * plane..(o + 1) * plane].iter().copied().sum();
    }

    let mut weight = Tensor::zeros(&kernel.weight.shape);
    for o in 0..co {
        let g_plane = &grad_out.data[o * plane..(o + 1) * plane];
        for c in 0..ci {
            let in_plane = &x.data[c * plane..(c + 1) * plane];
            let wbase = (o * ci + c) * taps;
            let wgrad = &mut weight.data[wbase..wbase + taps];
            for_each_row(dims, k, |tap, op, ip, len| {
                wgrad[tap] += dot(&g_plane[op..op + len], &in_plane[ip..ip + len]);
            });
        }
    }

    let input = if need_input {
        let mut gx = Tensor::zeros(&x.shape);
        for c in 0..ci {
            let gx_plane = &mut gx.data[c * plane..(c + 1) * plane];
            for o in 0..co {
                let g_plane = &grad_out.data[o * plane..(o + 1) * plane];
                let wbase = (o * ci + c) * taps;
                let weights = &kernel.weight.data[wbase..wbase + taps];
                for_each_row(dims, k, |tap, op, ip, len| {
                    let wv = weights[tap];
                    if wv != T::zero() {
                        axpy(&mut gx_plane[ip..ip + len], wv, &g_plane[op..op + len]);
                    }
                });
            }
        }
        Some(gx)
    } else {
        None
    };

    Ok(ConvGrads { input, weight, bias })
}
