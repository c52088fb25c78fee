use rand::Rng;

use super::{Bound, ParamId, ParamStore};
use crate::autograd::Var;
use crate::error::Result;
use crate::tensor::conv::ConvSpec;
use crate::tensor::{Float, Tensor};

/// Weight initialisation scheme.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// He-normal, `std = gain / sqrt(fan_in)`.
    Kaiming { gain: f64 },
    Normal { std: f64 },
    Zeros,
}

impl Init {
    pub const RELU: Init = Init::Kaiming { gain: std::f64::consts::SQRT_2 };
    pub const LINEAR: Init = Init::Kaiming { gain: 1.0 };
}

/// 2-D convolution layer with square kernel.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub spec: ConvSpec,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        spec: ConvSpec,
        bias: bool,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let shape = [out_channels, in_channels, kernel, kernel];
        let fan_in = (in_channels * kernel * kernel) as f64;
        let w = match init {
            Init::Kaiming { gain } => Tensor::randn(shape, gain / fan_in.sqrt(), rng),
            Init::Normal { std } => Tensor::randn(shape, std, rng),
            Init::Zeros => Tensor::zeros(shape),
        };
        let weight = store.add(format!("{name}.weight"), w);
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros([out_channels])));
        Self { weight, bias, spec, in_channels, out_channels, kernel }
    }

    pub fn forward<'g, T: Float>(&self, p: &Bound<'g, '_, T>, x: &Var<'g, T>) -> Result<Var<'g, T>> {
        let w = p.get(self.weight);
        let b = self.bias.map(|b| p.get(b));
        x.conv2d(&w, b.as_ref(), self.spec)
    }

    /// Convolution with an externally supplied (e.g. reparameterised) kernel.
    pub fn forward_with<'g, T: Float>(&self, p: &Bound<'g, '_, T>, x: &Var<'g, T>, weight: &Var<'g, T>) -> Result<Var<'g, T>> {
        let b = self.bias.map(|b| p.get(b));
        x.conv2d(weight, b.as_ref(), self.spec)
    }
}
