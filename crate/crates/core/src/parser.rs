//! Free-form parsing network: a U-Net that completes a parsing map from the
//! incomplete map, sketch, color strokes, mask and noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::data::{ParsingMap, DEFAULT_NUM_CLASSES};
use crate::error::{Error, Result};
use crate::layers::{instance_norm, resize_condition, Anl};
use crate::nn::{Bound, Conv2d, Init, ParamStore};
use crate::tensor::conv::ConvSpec;
use crate::tensor::{Float, Tensor};

/// Conditioning channels besides the one-hot parsing: sketch, color (3),
/// mask, noise.
pub const EXTRA_INPUT_CHANNELS: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParserConfig {
    /// Number of stride-2 levels.
    pub depth: usize,
    pub base_channels: usize,
    pub max_channels: usize,
    pub num_classes: usize,
    pub noise_channels: usize,
    /// Attention normalization before each decoder upsampling.
    pub use_anl: bool,
    pub anl_embed_channels: usize,
}

impl Default for ParserConfig {
    fn default() -> Self {
        Self {
            depth: 5,
            base_channels: 64,
            max_channels: 512,
            num_classes: DEFAULT_NUM_CLASSES,
            noise_channels: 1,
            use_anl: false,
            anl_embed_channels: 64,
        }
    }
}

impl ParserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 3 {
            return Err(Error::config(format!("parser depth must be at least 3, got {}", self.depth)));
        }
        if self.base_channels == 0 || !self.base_channels.is_power_of_two() || self.max_channels < self.base_channels {
            return Err(Error::config("parser channels must be a power of two not above max_channels"));
        }
        if self.num_classes < 2 || self.num_classes > 256 {
            return Err(Error::config(format!("num_classes must be in 2..=256, got {}", self.num_classes)));
        }
        if self.noise_channels != 1 {
            return Err(Error::config("only a single noise channel is supported"));
        }
        Ok(())
    }

    pub fn input_channels(&self) -> usize {
        self.num_classes + EXTRA_INPUT_CHANNELS
    }

    pub fn channels(&self, level: usize) -> usize {
        (self.base_channels << level.min(20)).min(self.max_channels)
    }
}

#[derive(Clone, Debug)]
struct UpBlock {
    anl: Option<Anl>,
    up: Conv2d,
    fuse: Conv2d,
}

/// Parser architecture; parameters live in a separate [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Parser {
    pub config: ParserConfig,
    stem: Conv2d,
    down: Vec<Conv2d>,
    up: Vec<UpBlock>,
    head: Conv2d,
}

impl Parser {
    pub fn new<T: Float>(config: ParserConfig, seed: u64) -> Result<(Self, ParamStore<T>)> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let same = ConvSpec::same(3, 1);
        let stem = Conv2d::new(&mut s, "parser.stem", config.input_channels(), config.channels(0), 3, same, true, Init::RELU, &mut rng);
        let down = (1..=config.depth)
            .map(|l| {
                let spec = ConvSpec::new(2, 1, 1);
                Conv2d::new(&mut s, &format!("parser.down{l}"), config.channels(l - 1), config.channels(l), 3, spec, true, Init::RELU, &mut rng)
            })
            .collect();
        let cond = 4 + config.noise_channels;
        let up = (1..=config.depth)
            .rev()
            .map(|l| {
                let (cin, cout) = (config.channels(l), config.channels(l - 1));
                let anl = config
                    .use_anl
                    .then(|| Anl::new(&mut s, &format!("parser.up{l}.anl"), cin, cond, config.anl_embed_channels, cin, 3, &mut rng));
                let up_in = if anl.is_some() { 2 * cin } else { cin };
                UpBlock {
                    anl,
                    up: Conv2d::new(&mut s, &format!("parser.up{l}.conv"), up_in, cout, 3, same, true, Init::RELU, &mut rng),
                    fuse: Conv2d::new(&mut s, &format!("parser.up{l}.fuse"), 2 * cout, cout, 3, same, true, Init::RELU, &mut rng),
                }
            })
            .collect();
        let head = Conv2d::new(&mut s, "parser.head", config.channels(0), config.num_classes, 1, ConvSpec::new(1, 0, 1), true, Init::LINEAR, &mut rng);
        Ok((Self { config, stem, down, up, head }, s))
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 4 || shape[1] != self.config.input_channels() {
            return Err(Error::invalid(format!(
                "parser input must be N×{}×H×W (one-hot {} + sketch + color + mask + noise), got {shape:?}",
                self.config.input_channels(),
                self.config.num_classes
            )));
        }
        let f = 1 << self.config.depth;
        if shape[2] % f != 0 || shape[3] % f != 0 {
            return Err(Error::invalid(format!("parser input {}x{} must be divisible by {f}", shape[2], shape[3])));
        }
        Ok(())
    }

    /// Raw logits `N×C×H×W`. ANL conditioning is taken from the input
    /// values as a constant.
    pub fn forward<'g, T: Float>(&self, p: &Bound<'g, '_, T>, input: &Var<'g, T>) -> Result<Var<'g, T>> {
        self.check_input(input.shape())?;
        let c = self.config.num_classes;
        let cond = if self.config.use_anl {
            let v = input.value();
            Some(Tensor::concat(&[&v.narrow(1, c, 4)?, &v.narrow(1, c + 5, self.config.noise_channels)?], 1)?)
        } else {
            None
        };
        let mut x = instance_norm(&self.stem.forward(p, input)?)?.relu();
        let mut skips = vec![x.clone()];
        for conv in &self.down {
            x = instance_norm(&conv.forward(p, &x)?)?.relu();
            skips.push(x.clone());
        }
        skips.pop();
        for block in &self.up {
            if let (Some(anl), Some(cond)) = (&block.anl, &cond) {
                let (_, _, h, w) = x.dims4();
                let d = p.graph().constant(resize_condition(cond, h, w)?);
                x = anl.forward(p, &x, &d)?;
            }
            x = instance_norm(&block.up.forward(p, &x.upsample_nearest(2))?)?.relu();
            let skip = skips.pop().expect("one skip per level");
            x = instance_norm(&block.fuse.forward(p, &Var::concat(&[&x, &skip], 1)?)?)?.relu();
        }
        self.head.forward(p, &x)
    }

    /// Convenience inference on constant parameters.
    pub fn logits<T: Float>(&self, params: &ParamStore<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
        let g = Graph::new();
        let p = params.bind(&g, false);
        Ok(self.forward(&p, &g.constant(input.clone()))?.value().clone())
    }
}

/// Per-pixel argmax of sample `n`; ties go to the lowest label.
pub fn logits_to_parsing<T: Float>(logits: &Tensor<T>, n: usize) -> Result<ParsingMap> {
    ParsingMap::from_scores(logits, n)
}

/// Mean per-pixel softmax cross-entropy against `targets` (one map per sample).
pub fn parsing_loss<'g, T: Float>(logits: &Var<'g, T>, targets: &[&ParsingMap]) -> Result<Var<'g, T>> {
    let (n, c, h, w) = logits.dims4();
    if targets.len() != n {
        return Err(Error::invalid(format!("{} targets for batch of {n}", targets.len())));
    }
    let mut labels = Vec::with_capacity(n * h * w);
    for t in targets {
        if t.dims() != (h, w) {
            return Err(Error::invalid(format!("target {:?} vs logits {h}x{w}", t.dims())));
        }
        if let Some(&bad) = t.labels().iter().find(|&&l| l as usize >= c) {
            return Err(Error::invalid(format!("target label {bad} not below {c} classes")));
        }
        labels.extend(t.labels().iter().map(|&l| l as usize));
    }
    logits.cross_entropy(&labels)
}
