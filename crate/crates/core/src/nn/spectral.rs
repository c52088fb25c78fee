//! Spectral normalisation by one-step power iteration.

use rand::Rng;

use crate::autograd::Var;
use crate::error::Result;
use crate::tensor::{Float, Tensor};

/// Persistent left singular-vector estimates, one per normalised kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralState<T> {
    pub u: Vec<Tensor<T>>,
}

impl<T: Float> SpectralState<T> {
    /// Random unit vectors for kernels with the given output sizes.
    pub fn new<R: Rng + ?Sized>(out_sizes: &[usize], rng: &mut R) -> Self {
        let u = out_sizes
            .iter()
            .map(|&o| {
                let t = Tensor::randn([o], 1.0, rng);
                normalized(&t)
            })
            .collect();
        Self { u }
    }
}

fn normalized<T: Float>(t: &Tensor<T>) -> Tensor<T> {
    let norm = t.data().iter().map(|v| v.f64() * v.f64()).sum::<f64>().sqrt();
    t.scale(T::of(1.0 / (norm + 1e-12)))
}

/// `W v` for the kernel flattened to `rows × cols`.
fn mat_vec<T: Float>(w: &[T], rows: usize, cols: usize, v: &[T]) -> Tensor<T> {
    Tensor::from_fn([rows], |r| w[r * cols..(r + 1) * cols].iter().zip(v).map(|(&a, &b)| a * b).sum())
}

fn mat_t_vec<T: Float>(w: &[T], rows: usize, cols: usize, u: &[T]) -> Tensor<T> {
    let mut out = vec![T::zero(); cols];
    for r in 0..rows {
        let ur = u[r];
        for (o, &a) in out.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
            *o += a * ur;
        }
    }
    Tensor::from_vec([cols], out)
}

/// Returns `W / sigma(W)` where `sigma` is estimated as `uᵀ W v` from the
/// stored `u`. With `update`, one power-iteration step refreshes `u` first.
/// Gradients flow through `W` (including through `sigma`), not through `u`
/// or `v`.
pub fn spectral_normalized<'g, T: Float>(w: &Var<'g, T>, u: &mut Tensor<T>, update: bool) -> Result<Var<'g, T>> {
    let rows = w.shape()[0];
    let cols = w.value().numel() / rows;
    let wd = w.value().data();
    let mut v = normalized(&mat_t_vec(wd, rows, cols, u.data()));
    if update {
        *u = normalized(&mat_vec(wd, rows, cols, v.data()));
        v = normalized(&mat_t_vec(wd, rows, cols, u.data()));
    }
    let g = w.graph();
    let wm = w.reshape(&[1, rows, cols])?;
    let vv = g.constant(v.into_reshape([1, cols, 1])?);
    let uu = g.constant(u.reshape([1, rows, 1])?);
    let sigma = wm.bmm(&vv, false, false)?.mul(&uu)?.sum_all();
    w.div(&sigma)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autograd::Graph;
    use crate::gradcheck::{check_gradients, FdOptions};

    fn singular_values(t: &Tensor<f64>) -> Vec<f64> {
        let rows = t.shape()[0];
        let cols = t.numel() / rows;
        let m = nalgebra::DMatrix::from_row_slice(rows, cols, t.data());
        let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        s
    }

    fn normalized_after(w: &Tensor<f64>, iterations: usize, rng: &mut ChaCha8Rng) -> f64 {
        let mut state = SpectralState::new(&[w.shape()[0]], rng);
        let g = Graph::new();
        let wv = g.constant(w.clone());
        let mut out = wv.clone();
        for _ in 0..iterations {
            out = spectral_normalized(&wv, &mut state.u[0], true).unwrap();
        }
        singular_values(out.value())[0]
    }

    #[test]
    fn power_iteration_bounds_the_spectrum() {
        // Convergence rate is (s2/s1)^2 per iteration, so draws whose top two
        // singular values nearly coincide get a longer budget.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut slow = 0;
        for _ in 0..200 {
            let w = Tensor::<f64>::randn([6, 3, 3, 3], 0.7, &mut rng);
            let sv = singular_values(&w);
            let iterations = if sv[1] / sv[0] < 0.95 { 50 } else {
                slow += 1;
                400
            };
            let s = normalized_after(&w, iterations, &mut rng);
            assert!(s <= 1.0 + 1e-2 && s >= 1.0 - 1e-9, "sigma {s} after {iterations}");
        }
        assert!(slow < 50, "{slow} near-degenerate draws");
    }

    #[test]
    fn gradient_flows_through_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = Tensor::<f64>::randn([3, 2, 2, 2], 1.0, &mut rng);
        let u = SpectralState::<f64>::new(&[3], &mut rng).u.remove(0);
        let probe = Tensor::<f64>::randn([3, 2, 2, 2], 1.0, &mut rng);
        check_gradients(&[w], FdOptions::default(), move |g, v| {
            let mut u = u.clone();
            let wn = spectral_normalized(&v[0], &mut u, false)?;
            Ok(wn.mul(&g.constant(probe.clone()))?.sum_all())
        });
    }
}
