use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{CannyParams, MaskParams, DEFAULT_FACE_LABELS};
use crate::discriminators::PatchDiscConfig;
use crate::error::{Error, Result};
use crate::inpainter::InpainterConfig;
use crate::losses::{GanMode, LossWeights};
use crate::nn::AdamConfig;
use crate::parser::ParserConfig;

pub const DEFAULT_HEIGHT: usize = 512;
pub const DEFAULT_WIDTH: usize = 320;
pub const PARSER_BATCH: usize = 20;
pub const INPAINTER_BATCH: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Parser,
    Inpainter,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Parser => "parser",
            Stage::Inpainter => "inpainter",
        }
    }

    pub fn default_batch(self) -> usize {
        match self {
            Stage::Parser => PARSER_BATCH,
            Stage::Inpainter => INPAINTER_BATCH,
        }
    }
}

/// Where training pairs come from: a manifest, or procedurally drawn persons.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum DataSource {
    Manifest { path: PathBuf },
    Synthetic { count: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// Draw masks, strokes and noise once per item instead of every step.
    #[serde(default)]
    pub fixed_examples: bool,
    #[serde(default)]
    pub mask: Option<MaskParams>,
    #[serde(default)]
    pub strokes: Option<MaskParams>,
    #[serde(default)]
    pub canny: CannyParams,
    #[serde(default = "default_face_labels")]
    pub face_labels: Vec<u8>,
}

fn default_face_labels() -> Vec<u8> {
    DEFAULT_FACE_LABELS.to_vec()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub parser: ParserConfig,
    pub inpainter: InpainterConfig,
    pub parser_disc: PatchDiscConfig,
    pub inpainter_disc_channels: usize,
    pub parser_gan: GanMode,
    pub inpainter_gan: GanMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            parser: ParserConfig::default(),
            inpainter: InpainterConfig::default(),
            parser_disc: PatchDiscConfig::default(),
            inpainter_disc_channels: 64,
            parser_gan: GanMode::Lsgan,
            inpainter_gan: GanMode::Hinge,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub stage: Stage,
    pub data: DataConfig,
    #[serde(default = "default_height")]
    pub height: usize,
    #[serde(default = "default_width")]
    pub width: usize,
    /// Defaults to 20 for the parser and 8 for the inpainter.
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Caps the number of G/D cycles regardless of `epochs`.
    #[serde(default)]
    pub max_steps: Option<u64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub optimizer: AdamConfig,
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default)]
    pub model: ModelConfig,
    /// Probability of feeding the ground-truth parsing (instead of the frozen
    /// parser's prediction) to the inpainter during training.
    #[serde(default = "default_teacher_mixing")]
    pub teacher_mixing: f64,
    /// Required for the inpainter stage.
    #[serde(default)]
    pub parser_checkpoint: Option<PathBuf>,
    /// VGG19 safetensors for the perceptual and style terms; both terms are
    /// disabled without it.
    #[serde(default)]
    pub feature_weights: Option<PathBuf>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub checkpoint_every: Option<u64>,
}

fn default_height() -> usize {
    DEFAULT_HEIGHT
}
fn default_width() -> usize {
    DEFAULT_WIDTH
}
fn default_epochs() -> usize {
    1
}
fn default_teacher_mixing() -> f64 {
    0.5
}

/// The subset of the configuration that determines training behaviour; its
/// hash guards resumption.
#[derive(Serialize)]
struct Fingerprinted<'a> {
    stage: Stage,
    data: &'a DataConfig,
    height: usize,
    width: usize,
    batch_size: usize,
    seed: u64,
    optimizer: &'a AdamConfig,
    weights: &'a LossWeights,
    model: &'a ModelConfig,
    teacher_mixing: f64,
    perceptual: bool,
}

impl TrainConfig {
    pub fn new(stage: Stage, source: DataSource) -> Self {
        Self {
            stage,
            data: DataConfig {
                source,
                fixed_examples: false,
                mask: None,
                strokes: None,
                canny: CannyParams::default(),
                face_labels: default_face_labels(),
            },
            height: DEFAULT_HEIGHT,
            width: DEFAULT_WIDTH,
            batch_size: None,
            epochs: 1,
            max_steps: None,
            seed: 0,
            optimizer: AdamConfig::default(),
            weights: LossWeights::default(),
            model: ModelConfig::default(),
            teacher_mixing: 0.5,
            parser_checkpoint: None,
            feature_weights: None,
            output_dir: None,
            checkpoint_every: None,
        }
    }

    /// Small networks at 64×96 over eight fixed synthetic items.
    pub fn toy(stage: Stage) -> Self {
        let mut c = Self::new(stage, DataSource::Synthetic { count: 8, seed: 2024 });
        c.data.fixed_examples = true;
        c.height = 96;
        c.width = 64;
        c.batch_size = Some(match stage {
            Stage::Parser => 8,
            Stage::Inpainter => 1,
        });
        c.max_steps = Some(match stage {
            Stage::Parser => 2000,
            Stage::Inpainter => 3000,
        });
        c.epochs = 1_000_000;
        c.optimizer.lr = match stage {
            Stage::Parser => 3e-3,
            Stage::Inpainter => 2e-3,
        };
        c.model.parser = ParserConfig { depth: 4, base_channels: 16, max_channels: 128, ..ParserConfig::default() };
        c.model.inpainter = InpainterConfig {
            encoder_depth: 3,
            base_channels: 16,
            max_channels: 64,
            dilations: vec![2, 2, 4, 4],
            anl_embed_channels: 16,
            ..InpainterConfig::default()
        };
        c.model.parser_disc = PatchDiscConfig { base_channels: 16, max_channels: 64, num_scales: 2 };
        c.model.inpainter_disc_channels = 16;
        c
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml_str(&text)?;
        config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(config)
    }

    /// Makes relative paths relative to `base` (the config file's directory).
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let DataSource::Manifest { path } = &mut self.data.source {
            fix(path);
        }
        for p in [&mut self.parser_checkpoint, &mut self.feature_weights, &mut self.output_dir].into_iter().flatten() {
            fix(p);
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size.unwrap_or(self.stage.default_batch())
    }

    pub fn mask_params(&self) -> MaskParams {
        self.data.mask.unwrap_or_else(|| MaskParams::for_size(self.height, self.width))
    }

    pub fn stroke_params(&self) -> MaskParams {
        self.data.strokes.unwrap_or_else(|| MaskParams::color_strokes(self.height, self.width))
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.batch_size() == 0 || self.epochs == 0 {
            return Err(Error::config("height, width, batch_size and epochs must be positive"));
        }
        if let DataSource::Synthetic { count, .. } = self.data.source {
            if count == 0 {
                return Err(Error::config("synthetic dataset needs count >= 1"));
            }
        }
        if !(0.0..=1.0).contains(&self.teacher_mixing) {
            return Err(Error::config(format!("teacher_mixing must lie in [0, 1], got {}", self.teacher_mixing)));
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0 && (0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.eps > 0.0) {
            return Err(Error::config("optimizer needs lr > 0, betas in [0, 1) and eps > 0"));
        }
        self.weights.validate()?;
        self.model.parser.validate()?;
        self.model.inpainter.validate()?;
        self.model.parser_disc.validate()?;
        if self.model.inpainter_disc_channels == 0 {
            return Err(Error::config("inpainter_disc_channels must be positive"));
        }
        if self.model.inpainter.num_classes != self.model.parser.num_classes {
            return Err(Error::config("parser and inpainter must agree on num_classes"));
        }
        let f = 1usize << self.model.parser.depth.max(self.model.inpainter.encoder_depth);
        if self.height % f != 0 || self.width % f != 0 {
            return Err(Error::config(format!("image size {}x{} must be divisible by {f}", self.height, self.width)));
        }
        if self.data.face_labels.is_empty() {
            return Err(Error::config("face_labels must not be empty"));
        }
        Ok(())
    }

    /// Hex SHA-256 of everything that affects the optimisation trajectory.
    pub fn fingerprint(&self) -> String {
        let f = Fingerprinted {
            stage: self.stage,
            data: &self.data,
            height: self.height,
            width: self.width,
            batch_size: self.batch_size(),
            seed: self.seed,
            optimizer: &self.optimizer,
            weights: &self.weights,
            model: &self.model,
            teacher_mixing: self.teacher_mixing,
            perceptual: self.feature_weights.is_some(),
        };
        let json = serde_json::to_string(&f).expect("config serializes");
        hex(&Sha256::digest(json.as_bytes()))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
