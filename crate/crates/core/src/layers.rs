//! Attention normalization, foreground partial convolution and dilated
//! residual blocks.

use rand::Rng;

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::{Bound, Conv2d, Init, ParamStore};
use crate::tensor::conv::{conv2d, ConvSpec};
use crate::tensor::resize::{resize_bilinear, resize_nearest};
use crate::tensor::{Float, Tensor};

pub const DEFAULT_EPS: f64 = 1e-5;

/// Per-channel batch mean and `sqrt(E[x²] − μ² + eps)` of an NCHW tensor.
pub fn channel_stats<T: Float>(x: &Tensor<T>, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let (n, c, h, w) = x.dims4();
    let count = (n * h * w) as f64;
    let mut mu = vec![0.0; c];
    let mut sq = vec![0.0; c];
    for b in 0..n {
        for (ch, (m, s)) in mu.iter_mut().zip(sq.iter_mut()).enumerate() {
            let plane = &x.data()[(b * c + ch) * h * w..(b * c + ch + 1) * h * w];
            for &v in plane {
                *m += v.f64();
                *s += v.f64() * v.f64();
            }
        }
    }
    mu.iter_mut().for_each(|m| *m /= count);
    let sigma = mu.iter().zip(&sq).map(|(m, s)| (s / count - m * m + eps).max(0.0).sqrt()).collect();
    (mu, sigma)
}

/// Resizes a `N×(1+k)×H×W` conditioning stack (sketch first) to `h×w`:
/// nearest for the binary sketch, bilinear for the smooth channels.
pub fn resize_condition<T: Float>(d: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let c = d.shape()[1];
    let sketch = resize_nearest(&d.narrow(1, 0, 1)?, h, w);
    if c == 1 {
        return Ok(sketch);
    }
    let rest = resize_bilinear(&d.narrow(1, 1, c - 1)?, h, w);
    Tensor::concat(&[&sketch, &rest], 1)
}

/// Instance normalization without affine parameters.
pub fn instance_norm<'g, T: Float>(x: &Var<'g, T>) -> Result<Var<'g, T>> {
    x.normalize(&[2, 3], DEFAULT_EPS)
}

/// Attention normalization layer.
///
/// Normalizes `x` with batch statistics, modulates it with an attention map
/// `α = sigmoid(·)` and bias `β` predicted from the conditioning `d`, then
/// returns `concat(post(relu(α⊙x̂ + β)), x̂)` along channels.
#[derive(Clone, Debug)]
pub struct Anl {
    pub embed: Conv2d,
    pub attention: Conv2d,
    pub bias: Conv2d,
    pub post: Conv2d,
    pub eps: f64,
    pub channels: usize,
}

impl Anl {
    /// `channels` is C of `x`; the post convolution outputs `out_channels`.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        cond_channels: usize,
        embed_channels: usize,
        out_channels: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Self {
        let same = ConvSpec::same(kernel, 1);
        Self {
            embed: Conv2d::new(store, &format!("{name}.embed"), cond_channels, embed_channels, kernel, same, true, Init::RELU, rng),
            attention: Conv2d::new(store, &format!("{name}.attention"), embed_channels, channels, kernel, same, true, Init::LINEAR, rng),
            bias: Conv2d::new(store, &format!("{name}.bias"), embed_channels, channels, kernel, same, true, Init::LINEAR, rng),
            post: Conv2d::new(store, &format!("{name}.post"), channels, out_channels, kernel, same, true, Init::RELU, rng),
            eps: DEFAULT_EPS,
            channels,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.post.out_channels + self.channels
    }

    /// `(α, β)` for conditioning `d`.
    pub fn modulation<'g, T: Float>(&self, p: &Bound<'g, '_, T>, d: &Var<'g, T>) -> Result<(Var<'g, T>, Var<'g, T>)> {
        let e = self.embed.forward(p, d)?.relu();
        Ok((self.attention.forward(p, &e)?.sigmoid(), self.bias.forward(p, &e)?))
    }

    pub fn forward<'g, T: Float>(&self, p: &Bound<'g, '_, T>, x: &Var<'g, T>, d: &Var<'g, T>) -> Result<Var<'g, T>> {
        let (n, c, h, w) = x.dims4();
        let (dn, _, dh, dw) = d.dims4();
        if (h, w) != (dh, dw) || (dn != n && dn != 1) {
            return Err(Error::Internal(format!("conditioning {:?} does not match features {:?}", d.shape(), x.shape())));
        }
        if c != self.channels {
            return Err(Error::Shape(format!("ANL expects {} channels, got {c}", self.channels)));
        }
        let x_hat = x.normalize(&[0, 2, 3], self.eps)?;
        let (alpha, beta) = self.modulation(p, d)?;
        let y = self.post.forward(p, &alpha.mul(&x_hat)?.add(&beta)?.relu())?;
        Var::concat(&[&y, &x_hat], 1)
    }
}

/// Convolution over valid pixels only, with mask update.
#[derive(Clone, Debug)]
pub struct PartialConv2d {
    pub conv: Conv2d,
}

impl PartialConv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if kernel % 2 == 0 || stride == 0 {
            return Err(Error::invalid(format!("partial conv needs odd kernel and stride >= 1, got k={kernel} s={stride}")));
        }
        let spec = ConvSpec::new(stride, kernel / 2, 1);
        Ok(Self { conv: Conv2d::new(store, name, in_channels, out_channels, kernel, spec, true, Init::RELU, rng) })
    }

    /// `mask` is `N×1×H×W` (or `1×1×H×W`, shared) with 0/1 entries. Windows
    /// with any valid pixel produce `W·(x⊙m)·a/sum(m) + b`; the rest `b`.
    /// `a` is the number of in-bounds taps (`k²` away from the border), so
    /// zero padding is neither valid nor a hole and an all-ones mask gives
    /// the ordinary convolution.
    pub fn forward<'g, T: Float>(&self, p: &Bound<'g, '_, T>, x: &Var<'g, T>, mask: &Tensor<T>) -> Result<(Var<'g, T>, Tensor<T>)> {
        let (_, _, h, w) = x.dims4();
        let (_, mc, mh, mw) = mask.dims4();
        if (mh, mw) != (h, w) || mc != 1 {
            return Err(Error::Shape(format!("partial conv mask {:?} does not fit input {:?}", mask.shape(), x.shape())));
        }
        let k = self.conv.kernel;
        let g = x.graph();
        let masked = x.mul(&g.constant(mask.clone()))?;
        let raw = masked.conv2d(&p.get(self.conv.weight), None, self.conv.spec)?;
        let ones = Tensor::<T>::ones([1, 1, k, k]);
        let window = conv2d(mask, &ones, None, self.conv.spec)?;
        let area = conv2d(&Tensor::ones([1, 1, h, w]), &ones, None, self.conv.spec)?;
        let ratio = window.broadcast_map(&area, |s, a| if s > T::of(0.5) { a / s } else { T::zero() })?;
        let updated = window.map(|s| if s > T::of(0.5) { T::one() } else { T::zero() });
        let mut out = raw.mul(&g.constant(ratio))?;
        if let Some(b) = self.conv.bias {
            out = out.add(&p.get(b).reshape(&[1, self.conv.out_channels, 1, 1])?)?;
        }
        Ok((out, updated))
    }
}

/// `x + conv(relu(conv(x)))` with both convolutions dilated.
#[derive(Clone, Debug)]
pub struct DilatedResBlock {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub dilation: usize,
}

impl DilatedResBlock {
    pub fn new<T: Float, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, channels: usize, dilation: usize, rng: &mut R) -> Self {
        let spec = ConvSpec::same(3, dilation);
        Self {
            conv1: Conv2d::new(store, &format!("{name}.conv1"), channels, channels, 3, spec, true, Init::RELU, rng),
            conv2: Conv2d::new(store, &format!("{name}.conv2"), channels, channels, 3, spec, true, Init::Kaiming { gain: 0.5 }, rng),
            dilation,
        }
    }

    pub fn forward<'g, T: Float>(&self, p: &Bound<'g, '_, T>, x: &Var<'g, T>) -> Result<Var<'g, T>> {
        let hidden = self.conv1.forward(p, x)?.relu();
        x.add(&self.conv2.forward(p, &hidden)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_of_two_points() {
        let x = Tensor::<f64>::from_vec([1, 1, 1, 2], vec![1.0, 3.0]);
        let (mu, sigma) = channel_stats(&x, 0.0);
        assert_eq!((mu[0], sigma[0]), (2.0, 1.0));
    }
}
