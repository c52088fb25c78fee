//! Central finite-difference checks of reverse-mode gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct FdOptions {
    pub eps: f64,
    /// Relative tolerance; see [`gradient_error`] for the error measure.
    pub tolerance: f64,
    /// Probe at most this many coordinates per input (all when `None`).
    pub max_probes: Option<usize>,
    pub seed: u64,
    /// Absolute disagreement always accepted, scaled by `max(1, |f(x)|)`;
    /// covers inputs whose true gradient is zero, where the numeric estimate
    /// is pure rounding noise.
    pub abs_tolerance: f64,
}

impl Default for FdOptions {
    fn default() -> Self {
        Self { eps: 1e-6, tolerance: 1e-3, max_probes: None, seed: 0, abs_tolerance: 1e-8 }
    }
}

impl FdOptions {
    pub fn probes(mut self, n: usize) -> Self {
        self.max_probes = Some(n);
        self
    }
}

/// Largest relative disagreement between analytic and central-difference
/// gradients over every input.
///
/// For each input the error is `max_i |analytic_i - numeric_i|` over the
/// probed coordinates, divided by `max(max_i |numeric_i|, 1e-8)`. Inputs
/// whose absolute disagreement stays within `opts.abs_tolerance` are skipped.
pub fn gradient_error<F>(inputs: &[Tensor<f64>], opts: FdOptions, f: F) -> Result<f64>
where
    F: for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Result<Var<'g, f64>>,
{
    Ok(gradient_errors(inputs, opts, f)?.into_iter().filter(|e| e.max_abs_diff > e.noise_floor).map(|e| e.relative).fold(0.0, f64::max))
}

/// Per-input comparison of analytic and numeric gradients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeError {
    pub relative: f64,
    pub max_abs_diff: f64,
    pub max_numeric: f64,
    /// `abs_tolerance · max(1, |f(x)|)`.
    pub noise_floor: f64,
}

/// Like [`gradient_error`], reported separately for each input.
pub fn gradient_errors<F>(inputs: &[Tensor<f64>], opts: FdOptions, f: F) -> Result<Vec<ProbeError>>
where
    F: for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Result<Var<'g, f64>>,
{
    let (analytic, f0): (Vec<Tensor<f64>>, f64) = {
        let g = Graph::new();
        let vars: Vec<_> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
        let loss = f(&g, &vars)?;
        let grads = g.backward(&loss)?;
        (vars.iter().map(|v| grads.get_or_zeros(v)).collect(), loss.item())
    };
    let noise_floor = opts.abs_tolerance * f0.abs().max(1.0);
    let eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
        let g = Graph::new();
        let vars: Vec<_> = perturbed.iter().map(|t| g.constant(t.clone())).collect();
        Ok(f(&g, &vars)?.item())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let probes: Vec<usize> = match opts.max_probes {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        let mut max_diff = 0.0f64;
        let mut max_num = 0.0f64;
        for &j in &probes {
            let orig = input.data()[j];
            work[i].data_mut()[j] = orig + opts.eps;
            let up = eval(&work)?;
            work[i].data_mut()[j] = orig - opts.eps;
            let down = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * opts.eps);
            max_diff = max_diff.max((numeric - analytic[i].data()[j]).abs());
            max_num = max_num.max(numeric.abs());
        }
        report.push(ProbeError { relative: max_diff / max_num.max(1e-8), max_abs_diff: max_diff, max_numeric: max_num, noise_floor });
    }
    Ok(report)
}

/// Panics when [`gradient_error`] exceeds `opts.tolerance`.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], opts: FdOptions, f: F)
where
    F: for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Result<Var<'g, f64>>,
{
    let report = gradient_errors(inputs, opts, f).expect("gradient probe failed");
    for (i, e) in report.iter().enumerate() {
        assert!(
            e.relative <= opts.tolerance || e.max_abs_diff <= e.noise_floor,
            "input {i}: relative gradient error {:.3e} exceeds {:.1e} (abs diff {:.3e}, max numeric {:.3e})",
            e.relative,
            opts.tolerance,
            e.max_abs_diff,
            e.max_numeric
        );
    }
}
