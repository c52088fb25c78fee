use super::{Float, Tensor};
use crate::error::{Error, Result};

/// Numpy-style broadcast of two shapes.
pub fn broadcast_shapes(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let pa = pad_left(a, rank);
    let pb = pad_left(b, rank);
    pa.iter()
        .zip(&pb)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Ok(x),
            (1, _) => Ok(y),
            (_, 1) => Ok(x),
            _ => Err(Error::Shape(format!("cannot broadcast {a:?} with {b:?}"))),
        })
        .collect()
}

fn pad_left(shape: &[usize], rank: usize) -> Vec<usize> {
    let mut out = vec![1; rank - shape.len()];
    out.extend_from_slice(shape);
    out
}

/// Strides of `shape` viewed inside `out_shape`, zero on broadcast axes.
fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let padded = pad_left(shape, out_shape.len());
    let mut strides = vec![0; padded.len()];
    let mut acc = 1;
    for i in (0..padded.len()).rev() {
        strides[i] = if padded[i] == 1 && out_shape[i] != 1 { 0 } else { acc };
        acc *= padded[i];
    }
    strides
}

/// Visits every index of `out_shape` in row-major order, passing the
/// matching flat offsets into two broadcast operands. The innermost axis is
/// handed over as a run so callers can keep a tight loop.
fn for_each_run(
    out_shape: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize, usize, usize, usize),
) {
    let rank = out_shape.len();
    if rank == 0 || out_shape.iter().any(|&d| d == 0) {
        if rank == 0 {
            f(0, 0, 0, 1, 0, 0);
        }
        return;
    }
    let inner = out_shape[rank - 1];
    let (ia, ib) = (sa[rank - 1], sb[rank - 1]);
    let outer: usize = out_shape[..rank - 1].iter().product();
    let mut idx = vec![0usize; rank - 1];
    let (mut oa, mut ob) = (0usize, 0usize);
    for run in 0..outer {
        f(run * inner, oa, ob, inner, ia, ib);
        // increment the multi-index over the outer axes
        for ax in (0..rank - 1).rev() {
            idx[ax] += 1;
            oa += sa[ax];
            ob += sb[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            oa -= sa[ax] * idx[ax];
            ob -= sb[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
}

pub(crate) fn broadcast_binary<T: Float>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    let out_shape = broadcast_shapes(&a.shape, &b.shape)?;
    let sa = broadcast_strides(&a.shape, &out_shape);
    let sb = broadcast_strides(&b.shape, &out_shape);
    let n: usize = out_shape.iter().product();
    let mut out = vec![T::zero(); n];
    for_each_run(&out_shape, &sa, &sb, |o, oa, ob, len, ia, ib| {
        for k in 0..len {
            out[o + k] = f(a.data[oa + k * ia], b.data[ob + k * ib]);
        }
    });
    Ok(Tensor { shape: out_shape, data: out })
}

/// Sums `grad` down to `shape`, undoing a broadcast from `shape` to
/// `grad.shape()`.
pub fn reduce_to_shape<T: Float>(grad: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if grad.shape == shape {
        return grad.clone();
    }
    let out_shape = grad.shape.clone();
    let st = broadcast_strides(shape, &out_shape);
    let zeros = vec![0; out_shape.len()];
    let n: usize = shape.iter().product();
    let mut out = vec![T::zero(); n];
    for_each_run(&out_shape, &zeros, &st, |o, _, ot, len, _, it| {
        if it == 0 {
            let mut acc = T::zero();
            for k in 0..len {
                acc += grad.data[o + k];
            }
            out[ot] += acc;
        } else {
            for k in 0..len {
                out[ot + k * it] += grad.data[o + k];
            }
        }
    });
    Tensor { shape: shape.to_vec(), data: out }
}

/// Sum over `axes`, keeping them as size-1 dimensions.
pub fn sum_axes<T: Float>(x: &Tensor<T>, axes: &[usize]) -> Tensor<T> {
    let mut shape = x.shape.clone();
    for &a in axes {
        shape[a] = 1;
    }
    reduce_to_shape(x, &shape)
}
