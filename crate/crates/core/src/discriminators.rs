//! Patch discriminators: a two-scale pair for the parser and a single
//! spectrally normalized stack for the inpainter.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::layers::instance_norm;
use crate::nn::{spectral_normalized, Bound, Conv2d, Init, ParamStore, SpectralState};
use crate::tensor::conv::ConvSpec;
use crate::tensor::Float;

pub const LEAKY_SLOPE: f64 = 0.2;
pub const KERNEL: usize = 4;

/// Logits and shallow-to-deep intermediate features, one entry per scale.
#[derive(Debug)]
pub struct DiscOutputs<'g, T: Float> {
    pub logits: Vec<Var<'g, T>>,
    pub features: Vec<Vec<Var<'g, T>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatchDiscConfig {
    pub base_channels: usize,
    pub max_channels: usize,
    pub num_scales: usize,
}

impl Default for PatchDiscConfig {
    fn default() -> Self {
        Self { base_channels: 64, max_channels: 512, num_scales: 2 }
    }
}

impl PatchDiscConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.max_channels < self.base_channels || self.num_scales == 0 {
            return Err(Error::config("patch discriminator needs positive widths and at least one scale"));
        }
        Ok(())
    }
}

/// Strides of the patch stack: three halving convolutions, then two stride-1.
pub const PATCH_STRIDES: [usize; 5] = [2, 2, 2, 1, 1];
/// Strides of the spectral-norm stack.
pub const SN_STRIDES: [usize; 5] = [2, 2, 2, 2, 1];

fn stack<T: Float>(
    store: &mut ParamStore<T>,
    name: &str,
    in_channels: usize,
    base: usize,
    max: usize,
    strides: &[usize],
    rng: &mut ChaCha8Rng,
) -> Vec<Conv2d> {
    let mut cin = in_channels;
    strides
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let last = i + 1 == strides.len();
            let cout = if last { 1 } else { (base << i).min(max) };
            let init = if last { Init::LINEAR } else { Init::Kaiming { gain: std::f64::consts::SQRT_2 } };
            let conv = Conv2d::new(store, &format!("{name}.conv{i}"), cin, cout, KERNEL, ConvSpec::new(s, 1, 1), true, init, rng);
            cin = cout;
            conv
        })
        .collect()
}

/// Multi-scale PatchGAN over `concat(conditioning, parsing)`.
#[derive(Clone, Debug)]
pub struct ParserDiscriminator {
    pub config: PatchDiscConfig,
    pub in_channels: usize,
    scales: Vec<Vec<Conv2d>>,
}

impl ParserDiscriminator {
    /// `in_channels` counts conditioning plus parsing channels.
    pub fn new<T: Float>(config: PatchDiscConfig, in_channels: usize, seed: u64) -> Result<(Self, ParamStore<T>)> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let scales = (0..config.num_scales)
            .map(|k| stack(&mut s, &format!("parser_d.scale{k}"), in_channels, config.base_channels, config.max_channels, &PATCH_STRIDES, &mut rng))
            .collect();
        Ok((Self { config, in_channels, scales }, s))
    }

    pub fn forward<'g, T: Float>(&self, p: &Bound<'g, '_, T>, input: &Var<'g, T>) -> Result<DiscOutputs<'g, T>> {
        if input.shape().len() != 4 || input.shape()[1] != self.in_channels {
            return Err(Error::invalid(format!("parser discriminator expects {} channels, got {:?}", self.in_channels, input.shape())));
        }
        let mut out = DiscOutputs { logits: Vec::new(), features: Vec::new() };
        let mut x_scale = input.clone();
        for (k, convs) in self.scales.iter().enumerate() {
            if k > 0 {
                x_scale = x_scale.avg_pool(2)?;
            }
            let mut x = x_scale.clone();
            let mut feats = Vec::with_capacity(convs.len() - 1);
            for (i, conv) in convs.iter().enumerate() {
                x = conv.forward(p, &x)?;
                if i + 1 == convs.len() {
                    break;
                }
                if i > 0 {
                    x = instance_norm(&x)?;
                }
                x = x.leaky_relu(LEAKY_SLOPE);
                feats.push(x.clone());
            }
            out.logits.push(x);
            out.features.push(feats);
        }
        Ok(out)
    }
}

/// Five spectrally normalized convolutions over `concat(image, sketch, color, mask)`.
#[derive(Clone, Debug)]
pub struct InpainterDiscriminator {
    pub in_channels: usize,
    convs: Vec<Conv2d>,
}

impl InpainterDiscriminator {
    pub const IN_CHANNELS: usize = 8;

    pub fn new<T: Float>(base_channels: usize, seed: u64) -> Result<(Self, ParamStore<T>, SpectralState<T>)> {
        if base_channels == 0 {
            return Err(Error::config("discriminator base_channels must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let convs = stack(&mut s, "inpainter_d", Self::IN_CHANNELS, base_channels, 8 * base_channels, &SN_STRIDES, &mut rng);
        let sizes: Vec<usize> = convs.iter().map(|c| c.out_channels).collect();
        let state = SpectralState::new(&sizes, &mut rng);
        Ok((Self { in_channels: Self::IN_CHANNELS, convs }, s, state))
    }

    /// Patch logits. With `update`, each kernel's power-iteration vector
    /// advances one step.
    pub fn forward<'g, T: Float>(
        &self,
        p: &Bound<'g, '_, T>,
        input: &Var<'g, T>,
        state: &mut SpectralState<T>,
        update: bool,
    ) -> Result<DiscOutputs<'g, T>> {
        if input.shape().len() != 4 || input.shape()[1] != self.in_channels {
            return Err(Error::invalid(format!("inpainter discriminator expects {} channels, got {:?}", self.in_channels, input.shape())));
        }
        if state.u.len() != self.convs.len() {
            return Err(Error::invalid("spectral state does not match the discriminator"));
        }
        let mut x = input.clone();
        let mut feats = Vec::with_capacity(self.convs.len() - 1);
        for (i, (conv, u)) in self.convs.iter().zip(state.u.iter_mut()).enumerate() {
            let w = spectral_normalized(&p.get(conv.weight), u, update)?;
            x = conv.forward_with(p, &x, &w)?;
            if i + 1 < self.convs.len() {
                x = x.leaky_relu(LEAKY_SLOPE);
                feats.push(x.clone());
            }
        }
        Ok(DiscOutputs { logits: vec![x], features: vec![feats] })
    }

    pub fn weight_names(&self) -> Vec<String> {
        (0..self.convs.len()).map(|i| format!("inpainter_d.conv{i}.weight")).collect()
    }
}

/// Receptive field and output size of a stack of `kernel`-sized convolutions
/// with padding 1 applied to an input of length `n`.
pub fn patch_geometry(n: usize, kernel: usize, strides: &[usize]) -> (usize, usize) {
    let mut size = n;
    for &s in strides {
        size = (size + 2 - kernel) / s + 1;
    }
    let rf = strides.iter().rev().fold(1, |rf, &s| (rf - 1) * s + kernel);
    (rf, size)
}
