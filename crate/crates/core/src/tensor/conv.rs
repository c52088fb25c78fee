//! 2-D convolution via im2col + GEMM, processed one sample at a time so the
//! column buffer stays small.

use super::{Float, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvSpec {
    pub const fn new(stride: usize, padding: usize, dilation: usize) -> Self {
        Self { stride, padding, dilation }
    }

    /// Stride-1 convolution preserving spatial size for an odd kernel.
    pub const fn same(kernel: usize, dilation: usize) -> Self {
        Self { stride: 1, padding: dilation * (kernel - 1) / 2, dilation }
    }

    pub fn out_size(&self, input: usize, kernel: usize) -> Option<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input + 2 * self.padding;
        if padded < span || self.stride == 0 {
            return None;
        }
        Some((padded - span) / self.stride + 1)
    }
}

struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    spec: ConvSpec,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.spec.stride == 1 && self.spec.padding == 0
    }
}

fn geometry<T: Float>(x: &Tensor<T>, w: &Tensor<T>, spec: ConvSpec) -> Result<Geometry> {
    if x.rank() != 4 || w.rank() != 4 {
        return Err(Error::Shape(format!("conv2d expects NCHW input and OIHW kernel, got {:?} / {:?}", x.shape(), w.shape())));
    }
    let (_, cin, h, wd) = x.dims4();
    let (_, wcin, kh, kw) = w.dims4();
    if cin != wcin {
        return Err(Error::Shape(format!("conv2d: input has {cin} channels, kernel expects {wcin}")));
    }
    let oh = spec.out_size(h, kh);
    let ow = spec.out_size(wd, kw);
    match (oh, ow) {
        (Some(oh), Some(ow)) if oh > 0 && ow > 0 => Ok(Geometry { cin, h, w: wd, kh, kw, oh, ow, spec }),
        _ => Err(Error::Shape(format!("conv2d: kernel {kh}x{kw} with {spec:?} does not fit {h}x{wd}"))),
    }
}

/// Output columns `lo..hi` whose input column `x0 + ox·stride` lies in `0..w`.
fn valid_span(x0: isize, stride: usize, w: usize, ow: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if x0 >= 0 { 0 } else { ((-x0 + s - 1) / s) as usize };
    let room = w as isize - x0;
    let hi = if room <= 0 { 0 } else { (((room + s - 1) / s) as usize).min(ow) };
    (lo.min(hi), hi)
}

fn im2col<T: Float>(g: &Geometry, x: &[T], cols: &mut [T]) {
    let ConvSpec { stride, padding, dilation } = g.spec;
    let p = g.cols();
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                let x0 = (kj * dilation) as isize - padding as isize;
                let (lo, hi) = valid_span(x0, stride, g.w, g.ow);
                for oy in 0..g.oh {
                    let iy = (oy * stride + ki * dilation) as isize - padding as isize;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize || lo == hi {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    line[..lo].fill(T::zero());
                    line[hi..].fill(T::zero());
                    let first = (x0 + (lo * stride) as isize) as usize;
                    if stride == 1 {
                        line[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                    } else {
                        for (v, &s) in line[lo..hi].iter_mut().zip(src[first..].iter().step_by(stride)) {
                            *v = s;
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Float>(g: &Geometry, cols: &[T], x: &mut [T]) {
    let ConvSpec { stride, padding, dilation } = g.spec;
    let p = g.cols();
    for c in 0..g.cin {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                let x0 = (kj * dilation) as isize - padding as isize;
                let (lo, hi) = valid_span(x0, stride, g.w, g.ow);
                if lo == hi {
                    continue;
                }
                let first = (x0 + (lo * stride) as isize) as usize;
                for oy in 0..g.oh {
                    let iy = (oy * stride + ki * dilation) as isize - padding as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let line = &src[oy * g.ow + lo..oy * g.ow + hi];
                    if stride == 1 {
                        for (d, &v) in dst[first..first + hi - lo].iter_mut().zip(line) {
                            *d += v;
                        }
                    } else {
                        for (d, &v) in dst[first..].iter_mut().step_by(stride).zip(line) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `x` (N,Cin,H,W) with `w` (Cout,Cin,kh,kw).
pub fn conv2d<T: Float>(x: &Tensor<T>, w: &Tensor<T>, bias: Option<&Tensor<T>>, spec: ConvSpec) -> Result<Tensor<T>> {
    let g = geometry(x, w, spec)?;
    let (n, ..) = x.dims4();
    let cout = w.shape()[0];
    if let Some(b) = bias {
        if b.numel() != cout {
            return Err(Error::Shape(format!("conv2d bias has {} entries for {cout} outputs", b.numel())));
        }
    }
    let (k, p) = (g.rows(), g.cols());
    let in_len = g.cin * g.h * g.w;
    let mut out = vec![T::zero(); n * cout * p];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); k * p] };
    for s in 0..n {
        let xs = &x.data()[s * in_len..(s + 1) * in_len];
        let src: &[T] = if g.is_pointwise() {
            xs
        } else {
            im2col(&g, xs, &mut cols);
            &cols
        };
        let dst = &mut out[s * cout * p..(s + 1) * cout * p];
        if let Some(b) = bias {
            for (o, &bv) in b.data().iter().enumerate() {
                dst[o * p..(o + 1) * p].fill(bv);
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        T::gemm(cout, k, p, T::one(), w.data(), k as isize, 1, src, p as isize, 1, beta, dst, p as isize, 1);
    }
    Tensor::new(vec![n, cout, g.oh, g.ow], out)
}

/// Gradients of [`conv2d`] with respect to input, kernel and bias.
pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

pub fn conv2d_backward<T: Float>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad_out: &Tensor<T>,
    spec: ConvSpec,
    want: [bool; 3],
) -> Result<ConvGrads<T>> {
    let g = geometry(x, w, spec)?;
    let (n, ..) = x.dims4();
    let cout = w.shape()[0];
    let (k, p) = (g.rows(), g.cols());
    let in_len = g.cin * g.h * g.w;
    let [want_x, want_w, want_b] = want;

    let mut gx = want_x.then(|| vec![T::zero(); x.numel()]);
    let mut gw = want_w.then(|| vec![T::zero(); w.numel()]);
    let mut gb = want_b.then(|| vec![T::zero(); cout]);
    let mut cols = if g.is_pointwise() || !want_w { Vec::new() } else { vec![T::zero(); k * p] };
    let mut gcols = if want_x && !g.is_pointwise() { vec![T::zero(); k * p] } else { Vec::new() };

    for s in 0..n {
        let gy = &grad_out.data()[s * cout * p..(s + 1) * cout * p];
        if let Some(gb) = gb.as_mut() {
            for (o, acc) in gb.iter_mut().enumerate() {
                *acc += gy[o * p..(o + 1) * p].iter().copied().sum::<T>();
            }
        }
        let xs = &x.data()[s * in_len..(s + 1) * in_len];
        if let Some(gw) = gw.as_mut() {
            let src: &[T] = if g.is_pointwise() {
                xs
            } else {
                im2col(&g, xs, &mut cols);
                &cols
            };
            // gW += gY · colsᵀ
            T::gemm(cout, p, k, T::one(), gy, p as isize, 1, src, 1, p as isize, T::one(), gw, k as isize, 1);
        }
        if let Some(gx) = gx.as_mut() {
            let dst = &mut gx[s * in_len..(s + 1) * in_len];
            if g.is_pointwise() {
                T::gemm(k, cout, p, T::one(), w.data(), 1, k as isize, gy, p as isize, 1, T::zero(), dst, p as isize, 1);
            } else {
                // gcols = Wᵀ · gY, scattered back onto the input grid
                T::gemm(k, cout, p, T::one(), w.data(), 1, k as isize, gy, p as isize, 1, T::zero(), &mut gcols, p as isize, 1);
                col2im(&g, &gcols, dst);
            }
        }
    }
    Ok(ConvGrads {
        input: gx.map(|d| Tensor::from_vec(x.shape().to_vec(), d)),
        weight: gw.map(|d| Tensor::from_vec(w.shape().to_vec(), d)),
        bias: gb.map(|d| Tensor::from_vec(vec![cout], d)),
    })
}

/// Naive seven-loop convolution used as an independent reference in tests.
#[cfg(test)]
pub(crate) fn conv2d_reference(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>, spec: ConvSpec) -> Tensor<f64> {
    let (n, cin, h, wd) = x.dims4();
    let (cout, _, kh, kw) = w.dims4();
    let oh = spec.out_size(h, kh).unwrap();
    let ow = spec.out_size(wd, kw).unwrap();
    let mut out = Tensor::zeros([n, cout, oh, ow]);
    for s in 0..n {
        for o in 0..cout {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = b.map_or(0.0, |b| b.data()[o]);
                    for c in 0..cin {
                        for i in 0..kh {
                            for j in 0..kw {
                                let iy = (y * spec.stride + i * spec.dilation) as isize - spec.padding as isize;
                                let ix = (xx * spec.stride + j * spec.dilation) as isize - spec.padding as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    acc += w.at4(o, c, i, j) * x.at4(s, c, iy as usize, ix as usize);
                                }
                            }
                        }
                    }
                    out.set4(s, o, y, xx, acc);
                }
            }
        }
    }
    out
}
