//! Parsing-aware inpainting network: a partial-convolution image encoder and
//! a parsing encoder feed a dilated residual trunk, decoded with attention
//! normalization at every scale.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::data::{BinaryMask, Image, DEFAULT_NUM_CLASSES};
use crate::error::{Error, Result};
use crate::layers::{resize_condition, Anl, DilatedResBlock, PartialConv2d};
use crate::nn::{Bound, Conv2d, Init, ParamStore};
use crate::tensor::conv::ConvSpec;
use crate::tensor::{Float, Tensor};

/// Sketch, color (3) and noise.
pub const CONDITION_CHANNELS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InpainterConfig {
    pub encoder_depth: usize,
    pub base_channels: usize,
    pub max_channels: usize,
    pub num_classes: usize,
    pub dilations: Vec<usize>,
    pub anl_embed_channels: usize,
    /// U-net skips from both encoders into the decoder.
    pub skip_connections: bool,
}

impl Default for InpainterConfig {
    fn default() -> Self {
        Self {
            encoder_depth: 4,
            base_channels: 64,
            max_channels: 256,
            num_classes: DEFAULT_NUM_CLASSES,
            dilations: vec![2, 2, 4, 4],
            anl_embed_channels: 64,
            skip_connections: true,
        }
    }
}

impl InpainterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.encoder_depth < 2 {
            return Err(Error::config(format!("encoder_depth must be at least 2, got {}", self.encoder_depth)));
        }
        if self.dilations.is_empty() || self.dilations.contains(&0) {
            return Err(Error::config("dilations must be a nonempty list of positive integers"));
        }
        if self.base_channels == 0 || self.max_channels < self.base_channels || self.anl_embed_channels == 0 {
            return Err(Error::config("inpainter channel widths must be positive with max_channels >= base_channels"));
        }
        if self.num_classes < 2 || self.num_classes > 256 {
            return Err(Error::config(format!("num_classes must be in 2..=256, got {}", self.num_classes)));
        }
        Ok(())
    }

    pub fn channels(&self, level: usize) -> usize {
        (self.base_channels << level.min(20)).min(self.max_channels)
    }
}

#[derive(Clone, Debug)]
struct DecoderLevel {
    anl: Anl,
    up: Conv2d,
    fuse: Option<Conv2d>,
}

#[derive(Clone, Debug)]
pub struct Inpainter {
    pub config: InpainterConfig,
    image_encoder: Vec<PartialConv2d>,
    parsing_encoder: Vec<Conv2d>,
    trunk: Vec<DilatedResBlock>,
    decoder: Vec<DecoderLevel>,
    head: Conv2d,
}

impl Inpainter {
    pub fn new<T: Float>(config: InpainterConfig, seed: u64) -> Result<(Self, ParamStore<T>)> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let depth = config.encoder_depth;
        let same = ConvSpec::same(3, 1);

        let mut image_encoder = vec![PartialConv2d::new(&mut s, "inpainter.image.stem", 3, config.channels(0), 3, 1, &mut rng)?];
        let mut parsing_encoder =
            vec![Conv2d::new(&mut s, "inpainter.parsing.stem", config.num_classes, config.channels(0), 3, same, true, Init::RELU, &mut rng)];
        for l in 1..=depth {
            let (cin, cout) = (config.channels(l - 1), config.channels(l));
            image_encoder.push(PartialConv2d::new(&mut s, &format!("inpainter.image.down{l}"), cin, cout, 3, 2, &mut rng)?);
            parsing_encoder.push(Conv2d::new(
                &mut s,
                &format!("inpainter.parsing.down{l}"),
                cin,
                cout,
                3,
                ConvSpec::new(2, 1, 1),
                true,
                Init::RELU,
                &mut rng,
            ));
        }
        let width = 2 * config.channels(depth);
        let trunk = config
            .dilations
            .iter()
            .enumerate()
            .map(|(i, &d)| DilatedResBlock::new(&mut s, &format!("inpainter.trunk{i}"), width, d, &mut rng))
            .collect();
        let mut decoder = Vec::with_capacity(depth);
        let mut cin = width;
        for l in (1..=depth).rev() {
            let cout = config.channels(l - 1);
            let anl = Anl::new(&mut s, &format!("inpainter.up{l}.anl"), cin, CONDITION_CHANNELS, config.anl_embed_channels, cin, 3, &mut rng);
            let up = Conv2d::new(&mut s, &format!("inpainter.up{l}.conv"), anl.out_channels(), cout, 3, same, true, Init::RELU, &mut rng);
            let fuse = config
                .skip_connections
                .then(|| Conv2d::new(&mut s, &format!("inpainter.up{l}.fuse"), 3 * cout, cout, 3, same, true, Init::RELU, &mut rng));
            decoder.push(DecoderLevel { anl, up, fuse });
            cin = cout;
        }
        let head = Conv2d::new(&mut s, "inpainter.head", cin, 3, 3, same, true, Init::LINEAR, &mut rng);
        Ok((Self { config, image_encoder, parsing_encoder, trunk, decoder, head }, s))
    }

    fn check_inputs(&self, image: &[usize], mask: &[usize], parsing: &[usize], cond: &[usize]) -> Result<()> {
        let fits = |s: &[usize], c: usize| s.len() == 4 && s[1] == c && s[2] == image[2] && s[3] == image[3] && (s[0] == image[0] || s[0] == 1);
        if image.len() != 4 || image[1] != 3 {
            return Err(Error::invalid(format!("inpainter image must be N×3×H×W, got {image:?}")));
        }
        if !fits(mask, 1) || !fits(parsing, self.config.num_classes) || !fits(cond, CONDITION_CHANNELS) {
            return Err(Error::invalid(format!(
                "inpainter inputs do not align: image {image:?}, mask {mask:?}, parsing {parsing:?}, condition {cond:?}"
            )));
        }
        let f = 1 << self.config.encoder_depth;
        if image[2] % f != 0 || image[3] % f != 0 {
            return Err(Error::invalid(format!("inpainter input {}x{} must be divisible by {f}", image[2], image[3])));
        }
        Ok(())
    }

    /// Generated image in `[-1, 1]`, `N×3×H×W`. `composed_mask` marks pixels
    /// the image encoder may trust; `cond` stacks sketch, color and noise.
    pub fn forward<'g, T: Float>(
        &self,
        p: &Bound<'g, '_, T>,
        image: &Var<'g, T>,
        composed_mask: &Tensor<T>,
        parsing: &Var<'g, T>,
        cond: &Tensor<T>,
    ) -> Result<Var<'g, T>> {
        self.check_inputs(image.shape(), composed_mask.shape(), parsing.shape(), cond.shape())?;
        let mut skips = Vec::with_capacity(self.config.encoder_depth + 1);
        let (mut xi, mut mask) = (image.clone(), composed_mask.clone());
        let mut xp = parsing.clone();
        for (pconv, conv) in self.image_encoder.iter().zip(&self.parsing_encoder) {
            let (y, m) = pconv.forward(p, &xi, &mask)?;
            xi = y.relu();
            mask = m;
            xp = conv.forward(p, &xp)?.relu();
            skips.push((xi.clone(), xp.clone()));
        }
        skips.pop();
        let mut x = Var::concat(&[&xi, &xp], 1)?;
        for block in &self.trunk {
            x = block.forward(p, &x)?;
        }
        let g = p.graph();
        for level in &self.decoder {
            let (_, _, h, w) = x.dims4();
            let d = g.constant(resize_condition(cond, h, w)?);
            x = level.anl.forward(p, &x, &d)?;
            x = level.up.forward(p, &x.upsample_nearest(2))?.relu();
            let (si, sp) = skips.pop().expect("one skip per level");
            if let Some(fuse) = &level.fuse {
                x = fuse.forward(p, &Var::concat(&[&x, &si, &sp], 1)?)?.relu();
            }
        }
        Ok(self.head.forward(p, &x)?.tanh())
    }

    /// Inference on constant parameters.
    pub fn generate<T: Float>(
        &self,
        params: &ParamStore<T>,
        image: &Tensor<T>,
        composed_mask: &Tensor<T>,
        parsing: &Tensor<T>,
        cond: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let g = Graph::new();
        let p = params.bind(&g, false);
        let out = self.forward(&p, &g.constant(image.clone()), composed_mask, &g.constant(parsing.clone()), cond)?;
        Ok(out.value().clone())
    }
}

/// `generated⊙M + original⊙(1−M)`.
pub fn composite_output(generated: &Image, original: &Image, mask: &BinaryMask) -> Result<Image> {
    let (h, w) = original.dims();
    if generated.dims() != (h, w) || mask.dims() != (h, w) {
        return Err(Error::invalid(format!(
            "composite shapes differ: generated {:?}, original {:?}, mask {:?}",
            generated.dims(),
            original.dims(),
            mask.dims()
        )));
    }
    let n = h * w;
    let data = (0..3 * n)
        .map(|i| if mask.values()[i % n] != 0 { generated.data()[i] } else { original.data()[i] })
        .collect();
    Image::from_planar(h, w, data)
}

/// Tensor version of [`composite_output`] with a broadcastable `N×1×H×W` mask.
pub fn composite_tensor<T: Float>(generated: &Tensor<T>, original: &Tensor<T>, mask: &Tensor<T>) -> Result<Tensor<T>> {
    let keep = original.broadcast_map(mask, |o, m| o * (T::one() - m))?;
    let fill = generated.broadcast_map(mask, |g, m| g * m)?;
    Ok(keep.zip_map(&fill, |a, b| a + b))
}
