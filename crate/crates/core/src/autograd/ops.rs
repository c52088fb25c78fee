use std::sync::Arc;

use super::Var;
use crate::error::{Error, Result};
use crate::tensor::conv::{self, ConvSpec};
use crate::tensor::{reduce_to_shape, resize, sum_axes, Float, Tensor};

fn broadcast_to<T: Float>(g: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
    Tensor::zeros(shape.to_vec()).broadcast_map(g, |_, b| b)
}

fn count_over<T: Float>(shape: &[usize], axes: &[usize]) -> T {
    T::from_usize(axes.iter().map(|&a| shape[a]).product::<usize>().max(1)).unwrap()
}

impl<'g, T: Float> Var<'g, T> {
    fn unary(&self, value: impl Into<Arc<Tensor<T>>>, backward: impl Fn(&Tensor<T>) -> Tensor<T> + 'static) -> Self {
        self.graph.record(value, &[self], move |g, _| Ok(vec![Some(backward(g))]))
    }

    // ---- elementwise arithmetic with broadcasting ----

    pub fn add(&self, other: &Self) -> Result<Self> {
        let out = self.value.broadcast_map(&other.value, |a, b| a + b)?;
        let (sa, sb) = (self.shape().to_vec(), other.shape().to_vec());
        Ok(self.graph.record(out, &[self, other], move |g, want| {
            Ok(vec![want[0].then(|| reduce_to_shape(g, &sa)), want[1].then(|| reduce_to_shape(g, &sb))])
        }))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        let out = self.value.broadcast_map(&other.value, |a, b| a - b)?;
        let (sa, sb) = (self.shape().to_vec(), other.shape().to_vec());
        Ok(self.graph.record(out, &[self, other], move |g, want| {
            Ok(vec![
                want[0].then(|| reduce_to_shape(g, &sa)),
                want[1].then(|| reduce_to_shape(&g.map(|v| -v), &sb)),
            ])
        }))
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        let out = self.value.broadcast_map(&other.value, |a, b| a * b)?;
        let (a, b) = (self.shared_value(), other.shared_value());
        Ok(self.graph.record(out, &[self, other], move |g, want| {
            let ga = if want[0] { Some(reduce_to_shape(&g.broadcast_map(&b, |x, y| x * y)?, a.shape())) } else { None };
            let gb = if want[1] { Some(reduce_to_shape(&g.broadcast_map(&a, |x, y| x * y)?, b.shape())) } else { None };
            Ok(vec![ga, gb])
        }))
    }

    pub fn div(&self, other: &Self) -> Result<Self> {
        let out = self.value.broadcast_map(&other.value, |a, b| a / b)?;
        let (a, b) = (self.shared_value(), other.shared_value());
        Ok(self.graph.record(out, &[self, other], move |g, want| {
            let ga = if want[0] { Some(reduce_to_shape(&g.broadcast_map(&b, |x, y| x / y)?, a.shape())) } else { None };
            let gb = if want[1] {
                let q = a.broadcast_map(&b, |x, y| -x / (y * y))?;
                Some(reduce_to_shape(&g.broadcast_map(&q, |x, y| x * y)?, b.shape()))
            } else {
                None
            };
            Ok(vec![ga, gb])
        }))
    }

    pub fn add_scalar(&self, k: f64) -> Self {
        let k = T::of(k);
        self.unary(self.value.map(|v| v + k), |g| g.clone())
    }

    pub fn mul_scalar(&self, k: f64) -> Self {
        let k = T::of(k);
        self.unary(self.value.map(|v| v * k), move |g| g.map(|v| v * k))
    }

    pub fn neg(&self) -> Self {
        self.mul_scalar(-1.0)
    }

    /// `1 - x`
    pub fn one_minus(&self) -> Self {
        self.unary(self.value.map(|v| T::one() - v), |g| g.map(|v| -v))
    }

    // ---- pointwise nonlinearities ----

    pub fn relu(&self) -> Self {
        let x = self.shared_value();
        self.unary(self.value.map(|v| v.max(T::zero())), move |g| g.zip_map(&x, |g, x| if x > T::zero() { g } else { T::zero() }))
    }

    pub fn leaky_relu(&self, slope: f64) -> Self {
        let s = T::of(slope);
        let x = self.shared_value();
        self.unary(
            self.value.map(|v| if v > T::zero() { v } else { v * s }),
            move |g| g.zip_map(&x, |g, x| if x > T::zero() { g } else { g * s }),
        )
    }

    pub fn sigmoid(&self) -> Self {
        let y = Arc::new(self.value.map(|v| T::one() / (T::one() + (-v).exp())));
        let yb = Arc::clone(&y);
        self.unary(y, move |g| g.zip_map(&yb, |g, y| g * y * (T::one() - y)))
    }

    pub fn tanh(&self) -> Self {
        let y = Arc::new(self.value.map(|v| v.tanh()));
        let yb = Arc::clone(&y);
        self.unary(y, move |g| g.zip_map(&yb, |g, y| g * (T::one() - y * y)))
    }

    pub fn abs(&self) -> Self {
        let x = self.shared_value();
        self.unary(self.value.map(|v| v.abs()), move |g| {
            g.zip_map(&x, |g, x| {
                if x > T::zero() {
                    g
                } else if x < T::zero() {
                    -g
                } else {
                    T::zero()
                }
            })
        })
    }

    pub fn square(&self) -> Self {
        let x = self.shared_value();
        self.unary(self.value.map(|v| v * v), move |g| g.zip_map(&x, |g, x| g * (x + x)))
    }

    pub fn sqrt(&self) -> Self {
        let y = Arc::new(self.value.map(|v| v.sqrt()));
        let yb = Arc::clone(&y);
        self.unary(y, move |g| g.zip_map(&yb, |g, y| g / (y + y)))
    }

    pub fn exp(&self) -> Self {
        let y = Arc::new(self.value.map(|v| v.exp()));
        let yb = Arc::clone(&y);
        self.unary(y, move |g| g.zip_map(&yb, |g, y| g * y))
    }

    pub fn ln(&self) -> Self {
        let x = self.shared_value();
        self.unary(self.value.map(|v| v.ln()), move |g| g.zip_map(&x, |g, x| g / x))
    }

    // ---- reductions ----

    pub fn sum_all(&self) -> Self {
        let shape = self.shape().to_vec();
        self.unary(Tensor::scalar(self.value.sum()), move |g| Tensor::full(shape.clone(), g.data()[0]))
    }

    pub fn mean_all(&self) -> Self {
        let n = T::from_usize(self.value.numel().max(1)).unwrap();
        let shape = self.shape().to_vec();
        self.unary(Tensor::scalar(self.value.sum() / n), move |g| Tensor::full(shape.clone(), g.data()[0] / n))
    }

    /// Sum over `axes`, keeping them as size-1 dimensions.
    pub fn sum_axes(&self, axes: &[usize]) -> Result<Self> {
        self.check_axes(axes)?;
        let shape = self.shape().to_vec();
        let out = sum_axes(&self.value, axes);
        Ok(self.graph.record(out, &[self], move |g, _| Ok(vec![Some(broadcast_to(g, &shape)?)])))
    }

    pub fn mean_axes(&self, axes: &[usize]) -> Result<Self> {
        let n: T = count_over(self.shape(), axes);
        Ok(self.sum_axes(axes)?.mul_scalar(1.0 / n.f64()))
    }

    fn check_axes(&self, axes: &[usize]) -> Result<()> {
        if axes.iter().any(|&a| a >= self.value.rank()) {
            return Err(Error::Shape(format!("axes {axes:?} out of range for {:?}", self.shape())));
        }
        Ok(())
    }

    // ---- shape manipulation ----

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let out = self.value.reshape(shape.to_vec())?;
        let orig = self.shape().to_vec();
        Ok(self.graph.record(out, &[self], move |g, _| Ok(vec![Some(g.reshape(orig.clone())?)])))
    }

    pub fn concat(parts: &[&Self], axis: usize) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let values: Vec<&Tensor<T>> = parts.iter().map(|p| p.value()).collect();
        let out = Tensor::concat(&values, axis)?;
        let sizes: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        Ok(first.graph.record(out, parts, move |g, want| {
            let mut start = 0;
            let mut grads = Vec::with_capacity(sizes.len());
            for (i, &len) in sizes.iter().enumerate() {
                grads.push(if want[i] { Some(g.narrow(axis, start, len)?) } else { None });
                start += len;
            }
            Ok(grads)
        }))
    }

    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Self> {
        let out = self.value.narrow(axis, start, len)?;
        let shape = self.shape().to_vec();
        Ok(self.graph.record(out, &[self], move |g, _| {
            let outer: usize = shape[..axis].iter().product();
            let inner: usize = shape[axis + 1..].iter().product();
            let mut full = Tensor::zeros(shape.clone());
            let d = shape[axis];
            let data = full.data_mut();
            for o in 0..outer {
                let dst = (o * d + start) * inner;
                let src = o * len * inner;
                data[dst..dst + len * inner].copy_from_slice(&g.data()[src..src + len * inner]);
            }
            Ok(vec![Some(full)])
        }))
    }

    // ---- spatial ----

    pub fn conv2d(&self, weight: &Self, bias: Option<&Self>, spec: ConvSpec) -> Result<Self> {
        let out = conv::conv2d(&self.value, &weight.value, bias.map(|b| b.value()), spec)?;
        let (x, w) = (self.shared_value(), weight.shared_value());
        let mut parents = vec![self, weight];
        if let Some(b) = bias {
            parents.push(b);
        }
        let bias_shape = bias.map(|b| b.shape().to_vec());
        Ok(self.graph.record(out, &parents, move |g, want| {
            let want_b = want.get(2).copied().unwrap_or(false);
            let grads = conv::conv2d_backward(&x, &w, g, spec, [want[0], want[1], want_b])?;
            let mut out = vec![grads.input, grads.weight];
            if let Some(bs) = &bias_shape {
                out.push(grads.bias.map(|b| b.into_reshape(bs.clone())).transpose()?);
            }
            Ok(out)
        }))
    }

    pub fn upsample_nearest(&self, factor: usize) -> Self {
        self.unary(resize::upsample_nearest(&self.value, factor), move |g| resize::upsample_nearest_backward(g, factor))
    }

    pub fn avg_pool(&self, k: usize) -> Result<Self> {
        Ok(self.unary(resize::avg_pool(&self.value, k)?, move |g| resize::avg_pool_backward(g, k)))
    }

    pub fn max_pool2(&self) -> Result<Self> {
        let (out, arg) = resize::max_pool2(&self.value)?;
        let shape = self.shape().to_vec();
        Ok(self.unary(out, move |g| {
            let mut gx = Tensor::zeros(shape.clone());
            let data = gx.data_mut();
            for (&idx, &gv) in arg.iter().zip(g.data()) {
                data[idx] += gv;
            }
            gx
        }))
    }

    // ---- normalisation & classification ----

    /// `(x - mean) / sqrt(var + eps)` with population statistics taken over
    /// `axes` (keepdim). Axes `[0, 2, 3]` give batch statistics per channel,
    /// `[2, 3]` per-sample instance statistics.
    pub fn normalize(&self, axes: &[usize], eps: f64) -> Result<Self> {
        self.check_axes(axes)?;
        let x = &*self.value;
        let n: T = count_over(x.shape(), axes);
        let mean = sum_axes(x, axes).map(|v| v / n);
        let centered = x.broadcast_map(&mean, |a, m| a - m)?;
        let var = sum_axes(&centered.map(|v| v * v), axes).map(|v| v / n);
        let inv_std = var.map(|v| T::one() / (v + T::of(eps)).sqrt());
        let y = Arc::new(centered.broadcast_map(&inv_std, |a, s| a * s)?);
        let yb = Arc::clone(&y);
        let axes = axes.to_vec();
        Ok(self.graph.record(y, &[self], move |g, _| {
            let gmean = sum_axes(g, &axes).map(|v| v / n);
            let gy = g.zip_map(&yb, |a, b| a * b);
            let gymean = sum_axes(&gy, &axes).map(|v| v / n);
            let t = g.broadcast_map(&gmean, |a, m| a - m)?;
            let proj = yb.broadcast_map(&gymean, |y, m| y * m)?;
            let inner = t.zip_map(&proj, |a, b| a - b);
            Ok(vec![Some(inner.broadcast_map(&inv_std, |a, s| a * s)?)])
        }))
    }

    /// Softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Self> {
        self.check_axes(&[axis])?;
        let y = Arc::new(softmax_along(&self.value, axis));
        let yb = Arc::clone(&y);
        Ok(self.unary(y, move |g| {
            let gy = g.zip_map(&yb, |a, b| a * b);
            let s = sum_axes(&gy, &[axis]);
            let t = g.broadcast_map(&s, |a, b| a - b).expect("softmax grad broadcast");
            t.zip_map(&yb, |a, b| a * b)
        }))
    }

    /// Mean softmax cross-entropy of NCHW logits against per-pixel labels
    /// (length N·H·W, row-major over n, h, w).
    pub fn cross_entropy(&self, labels: &[usize]) -> Result<Self> {
        let (n, c, h, w) = self.dims4();
        if labels.len() != n * h * w {
            return Err(Error::Shape(format!("cross_entropy: {} labels for {n}x{h}x{w} pixels", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::invalid(format!("label {bad} out of range for {c} classes")));
        }
        let probs = softmax_along(&self.value, 1);
        let hw = h * w;
        let mut total = 0.0f64;
        for s in 0..n {
            for p in 0..hw {
                let l = labels[s * hw + p];
                let logits_at = |k: usize| self.value.data()[(s * c + k) * hw + p].f64();
                let max = (0..c).map(logits_at).fold(f64::NEG_INFINITY, f64::max);
                let lse = max + (0..c).map(|k| (logits_at(k) - max).exp()).sum::<f64>().ln();
                total += lse - logits_at(l);
            }
        }
        let count = (n * hw) as f64;
        let labels = labels.to_vec();
        Ok(self.unary(Tensor::scalar(T::of(total / count)), move |g| {
            let scale = g.data()[0] / T::of(count);
            let mut gx = probs.clone();
            for s in 0..n {
                for p in 0..hw {
                    let idx = (s * c + labels[s * hw + p]) * hw + p;
                    gx.data_mut()[idx] -= T::one();
                }
            }
            gx.map_inplace(|v| v * scale);
            gx
        }))
    }

    // ---- linear algebra ----

    /// Batched matrix product of rank-3 tensors, optionally transposing
    /// either operand's trailing two axes.
    pub fn bmm(&self, other: &Self, trans_a: bool, trans_b: bool) -> Result<Self> {
        let out = bmm(&self.value, &other.value, trans_a, trans_b)?;
        let (a, b) = (self.shared_value(), other.shared_value());
        Ok(self.graph.record(out, &[self, other], move |g, want| {
            // C = op(A)·op(B)
            let ga = if want[0] {
                Some(if trans_a { bmm(&b, g, trans_b, true)? } else { bmm(g, &b, false, !trans_b)? })
            } else {
                None
            };
            let gb = if want[1] {
                Some(if trans_b { bmm(g, &a, true, trans_a)? } else { bmm(&a, g, !trans_a, false)? })
            } else {
                None
            };
            Ok(vec![ga, gb])
        }))
    }
}

fn softmax_along<T: Float>(x: &Tensor<T>, axis: usize) -> Tensor<T> {
    let shape = x.shape();
    let outer: usize = shape[..axis].iter().product();
    let d = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out = x.clone();
    let data = out.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * d + k) * inner + i;
            let max = (0..d).map(|k| data[at(k)]).fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for k in 0..d {
                let e = (data[at(k)] - max).exp();
                data[at(k)] = e;
                sum += e;
            }
            for k in 0..d {
                data[at(k)] /= sum;
            }
        }
    }
    out
}

pub(crate) fn bmm<T: Float>(a: &Tensor<T>, b: &Tensor<T>, ta: bool, tb: bool) -> Result<Tensor<T>> {
    if a.rank() != 3 || b.rank() != 3 || a.shape()[0] != b.shape()[0] {
        return Err(Error::Shape(format!("bmm needs matching rank-3 operands, got {:?} and {:?}", a.shape(), b.shape())));
    }
    let (batch, ar, ac) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let (br, bc) = (b.shape()[1], b.shape()[2]);
    let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
    let (k2, n) = if tb { (bc, br) } else { (br, bc) };
    if k != k2 {
        return Err(Error::Shape(format!("bmm inner dimensions differ: {k} vs {k2}")));
    }
    let (rsa, csa) = if ta { (1, ac as isize) } else { (ac as isize, 1) };
    let (rsb, csb) = if tb { (1, bc as isize) } else { (bc as isize, 1) };
    let mut out = vec![T::zero(); batch * m * n];
    for s in 0..batch {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            &a.data()[s * ar * ac..(s + 1) * ar * ac],
            rsa,
            csa,
            &b.data()[s * br * bc..(s + 1) * br * bc],
            rsb,
            csb,
            T::zero(),
            &mut out[s * m * n..(s + 1) * m * n],
            n as isize,
            1,
        );
    }
    Tensor::new(vec![batch, m, n], out)
}
