//! Spatial resampling and pooling kernels on NCHW tensors.

use super::{Float, Tensor};
use crate::error::{Error, Result};

/// Integer-factor nearest-neighbour upsampling.
pub fn upsample_nearest<T: Float>(x: &Tensor<T>, factor: usize) -> Tensor<T> {
    let (n, c, h, w) = x.dims4();
    let (oh, ow) = (h * factor, w * factor);
    let mut out = vec![T::zero(); n * c * oh * ow];
    for plane in 0..n * c {
        let src = &x.data()[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
        for y in 0..oh {
            let row = &src[(y / factor) * w..(y / factor + 1) * w];
            for (xx, v) in dst[y * ow..(y + 1) * ow].iter_mut().enumerate() {
                *v = row[xx / factor];
            }
        }
    }
    Tensor::from_vec([n, c, oh, ow], out)
}

/// Adjoint of [`upsample_nearest`]: sums each `factor`×`factor` block.
pub fn upsample_nearest_backward<T: Float>(grad: &Tensor<T>, factor: usize) -> Tensor<T> {
    let (n, c, oh, ow) = grad.dims4();
    let (h, w) = (oh / factor, ow / factor);
    let mut out = vec![T::zero(); n * c * h * w];
    for plane in 0..n * c {
        let src = &grad.data()[plane * oh * ow..(plane + 1) * oh * ow];
        let dst = &mut out[plane * h * w..(plane + 1) * h * w];
        for y in 0..oh {
            for xx in 0..ow {
                dst[(y / factor) * w + xx / factor] += src[y * ow + xx];
            }
        }
    }
    Tensor::from_vec([n, c, h, w], out)
}

/// Non-overlapping average pooling with window = stride = `k`.
pub fn avg_pool<T: Float>(x: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4();
    if h % k != 0 || w % k != 0 {
        return Err(Error::Shape(format!("avg_pool({k}) needs dimensions divisible by {k}, got {h}x{w}")));
    }
    let (oh, ow) = (h / k, w / k);
    let scale = T::one() / T::from_usize(k * k).unwrap();
    let mut out = vec![T::zero(); n * c * oh * ow];
    for plane in 0..n * c {
        let src = &x.data()[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
        for y in 0..h {
            for xx in 0..w {
                dst[(y / k) * ow + xx / k] += src[y * w + xx] * scale;
            }
        }
    }
    Ok(Tensor::from_vec([n, c, oh, ow], out))
}

pub fn avg_pool_backward<T: Float>(grad: &Tensor<T>, k: usize) -> Tensor<T> {
    let scale = T::one() / T::from_usize(k * k).unwrap();
    upsample_nearest(grad, k).map(|v| v * scale)
}

/// 2×2 max pooling, stride 2. Returns the pooled tensor and the flat
/// argmax index (into the input) of each output cell.
pub fn max_pool2<T: Float>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let (n, c, h, w) = x.dims4();
    if h < 2 || w < 2 {
        return Err(Error::Shape(format!("max_pool2 needs at least 2x2, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for y in 0..oh {
            for xx in 0..ow {
                let mut best = base + 2 * y * w + 2 * xx;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * y + dy) * w + 2 * xx + dx;
                    if x.data()[idx] > x.data()[best] {
                        best = idx;
                    }
                }
                out.push(x.data()[best]);
                arg.push(best);
            }
        }
    }
    Ok((Tensor::from_vec([n, c, oh, ow], out), arg))
}

/// Nearest-neighbour resize to an arbitrary size (half-pixel centres).
pub fn resize_nearest<T: Float>(x: &Tensor<T>, oh: usize, ow: usize) -> Tensor<T> {
    let (n, c, h, w) = x.dims4();
    if (oh, ow) == (h, w) {
        return x.clone();
    }
    let ys: Vec<usize> = (0..oh).map(|y| (((y as f64 + 0.5) * h as f64 / oh as f64) as usize).min(h - 1)).collect();
    let xs: Vec<usize> = (0..ow).map(|x| (((x as f64 + 0.5) * w as f64 / ow as f64) as usize).min(w - 1)).collect();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let src = &x.data()[plane * h * w..(plane + 1) * h * w];
        for &sy in &ys {
            for &sx in &xs {
                out.push(src[sy * w + sx]);
            }
        }
    }
    Tensor::from_vec([n, c, oh, ow], out)
}

fn bilinear_taps(out: usize, input: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / out as f64;
    (0..out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear resize with half-pixel centres (no corner alignment).
pub fn resize_bilinear<T: Float>(x: &Tensor<T>, oh: usize, ow: usize) -> Tensor<T> {
    let (n, c, h, w) = x.dims4();
    if (oh, ow) == (h, w) {
        return x.clone();
    }
    let ty = bilinear_taps(oh, h);
    let tx = bilinear_taps(ow, w);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let src = &x.data()[plane * h * w..(plane + 1) * h * w];
        for &(y0, y1, fy) in &ty {
            for &(x0, x1, fx) in &tx {
                let v00 = src[y0 * w + x0].f64();
                let v01 = src[y0 * w + x1].f64();
                let v10 = src[y1 * w + x0].f64();
                let v11 = src[y1 * w + x1].f64();
                let top = v00 + (v01 - v00) * fx;
                let bot = v10 + (v11 - v10) * fx;
                out.push(T::of(top + (bot - top) * fy));
            }
        }
    }
    Tensor::from_vec([n, c, oh, ow], out)
}
