//! Two-stage adversarial training: the parser first, then the inpainter
//! against the frozen parser.

mod checkpoint;
mod config;
mod eval;

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use checkpoint::{Checkpoint, FORMAT_VERSION, MAGIC};
pub use config::{DataConfig, DataSource, ModelConfig, Stage, TrainConfig, DEFAULT_HEIGHT, DEFAULT_WIDTH, INPAINTER_BATCH, PARSER_BATCH};
pub use eval::{evaluate, evaluate_items, evaluation_example, metrics_for_outputs, parsing_accuracy, ParsingAccuracy};

use crate::autograd::{Graph, Var};
use crate::data::{
    self, face_mask_from_parsing, foreground_mask_from_parsing, generate_freeform_mask, generate_strokes, io, make_training_example,
    synthetic, EditInputs, ExampleOptions, Image, ParsingMap,
};
use crate::discriminators::{InpainterDiscriminator, ParserDiscriminator};
use crate::error::{Error, Result};
use crate::inpainter::Inpainter;
use crate::losses::{
    discriminator_loss, feature_matching_loss, generator_loss, inpainter_total, parser_total, perceptual_loss, region_l1_loss, mask_loss,
    style_loss, tv_loss, InpainterTerms, LossReport, ParserTerms, Vgg19,
};
use crate::nn::{Adam, ParamStore, SpectralState};
use crate::parser::{parsing_loss, Parser, ParserConfig};
use crate::pipeline::{batch_one_hot, complete_parsing};
use crate::tensor::Tensor;

/// Deterministic sub-seed for a named purpose and index path.
pub fn derive_seed(seed: u64, label: &str, parts: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    for p in parts {
        h.update(p.to_le_bytes());
    }
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

/// One training item.
#[derive(Clone, Debug, PartialEq)]
pub struct Item {
    pub name: String,
    pub image: Image,
    pub parsing: ParsingMap,
}

/// Loads the configured dataset at the configured resolution.
pub fn load_items(config: &TrainConfig) -> Result<Vec<Item>> {
    let c = config.model.parser.num_classes;
    let items: Vec<Item> = match &config.data.source {
        DataSource::Synthetic { count, seed } => synthetic::dataset(*count, config.height, config.width, *seed)?
            .into_iter()
            .enumerate()
            .map(|(i, (image, parsing))| Item { name: format!("synthetic_{i:04}"), image, parsing })
            .collect(),
        DataSource::Manifest { path } => {
            let entries = io::read_manifest(path)?;
            let pairs = io::load_dataset(path, c)?;
            entries
                .into_iter()
                .zip(pairs)
                .map(|(e, (image, parsing))| {
                    let name = e.image_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                    Item { name, image, parsing }
                })
                .collect()
        }
    };
    if items.is_empty() {
        return Err(Error::config("dataset is empty"));
    }
    for it in &items {
        if it.image.dims() != (config.height, config.width) {
            return Err(Error::config(format!(
                "item {} is {}x{} but the configured size is {}x{} (preprocess the dataset first)",
                it.name,
                it.image.width(),
                it.image.height(),
                config.width,
                config.height
            )));
        }
        if it.parsing.num_classes() != c {
            return Err(Error::config(format!("item {} has {} classes, expected {c}", it.name, it.parsing.num_classes())));
        }
    }
    Ok(items)
}

/// Builds the randomized conditioning for `item` under `seed`.
pub fn training_example(config: &TrainConfig, item: &Item, seed: u64) -> Result<EditInputs> {
    let (h, w) = (config.height, config.width);
    let mask = generate_freeform_mask(h, w, derive_seed(seed, "mask", &[]), &config.mask_params())?;
    let strokes = generate_strokes(h, w, derive_seed(seed, "strokes", &[]), &config.stroke_params())?;
    make_training_example(
        &item.image,
        &item.parsing,
        &mask,
        &strokes,
        derive_seed(seed, "noise", &[]),
        &ExampleOptions { canny: config.data.canny },
    )
}

/// Per-item tensors reused by both steps of a cycle.
#[derive(Clone, Debug)]
struct Prepared {
    inputs: EditInputs,
    /// Frozen-parser completion, cached only with fixed examples.
    completed: Option<ParsingMap>,
}

/// Generator loss report and discriminator loss of one G/D cycle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: u64,
    pub generator: LossReport,
    pub discriminator: LossReport,
}

impl StepRecord {
    pub fn is_finite(&self) -> bool {
        self.generator.is_finite() && self.discriminator.is_finite()
    }
}

/// Stacked inputs of one mini-batch.
#[derive(Clone, Debug)]
pub struct Batch {
    pub indices: Vec<usize>,
    targets: Vec<ParsingMap>,
    parser_input: Tensor<f32>,
    onehot: Tensor<f32>,
    image: Tensor<f32>,
    incomplete: Tensor<f32>,
    composed: Tensor<f32>,
    mask: Tensor<f32>,
    foreground: Tensor<f32>,
    face: Tensor<f32>,
    cond: Tensor<f32>,
    /// sketch, color and mask planes fed to the inpainter discriminator.
    side: Tensor<f32>,
    /// Parsing fed to the inpainter after teacher mixing.
    parsing_in: Option<Tensor<f32>>,
}

impl Batch {
    pub fn parsing_input(&self) -> Option<&Tensor<f32>> {
        self.parsing_in.as_ref()
    }
}

enum Nets {
    Parser {
        net: Parser,
        disc: ParserDiscriminator,
    },
    Inpainter {
        net: Inpainter,
        disc: InpainterDiscriminator,
        spectral: SpectralState<f32>,
        parser: Parser,
        parser_params: ParamStore<f32>,
        vgg: Option<Vgg19<f32>>,
    },
}

pub struct Trainer {
    config: TrainConfig,
    fingerprint: String,
    nets: Nets,
    g_params: ParamStore<f32>,
    d_params: ParamStore<f32>,
    opt_g: Adam<f32>,
    opt_d: Adam<f32>,
    step: u64,
    items: Vec<Item>,
    cache: Vec<Option<Prepared>>,
}

fn frozen_parser(config: &TrainConfig, resume: Option<&Checkpoint>) -> Result<(ParserConfig, ParamStore<f32>)> {
    let from = |ckpt: &Checkpoint, prefix: &str, pc: ParserConfig| -> Result<(ParserConfig, ParamStore<f32>)> {
        let (_, mut params) = Parser::new::<f32>(pc.clone(), 0)?;
        ckpt.load_params(prefix, &mut params)?;
        Ok((pc, params))
    };
    if let Some(ckpt) = resume.filter(|c| c.config.stage == Stage::Inpainter) {
        return from(ckpt, "parser", ckpt.config.model.parser.clone());
    }
    let path = config
        .parser_checkpoint
        .as_ref()
        .ok_or_else(|| Error::config("the inpainter stage needs parser_checkpoint"))?;
    if !path.exists() {
        return Err(Error::config(format!("parser checkpoint {} does not exist", path.display())));
    }
    let ckpt = Checkpoint::load(path)?;
    if ckpt.config.stage != Stage::Parser {
        return Err(Error::config(format!("{} is not a parser checkpoint", path.display())));
    }
    if ckpt.config.model.parser.num_classes != config.model.inpainter.num_classes {
        return Err(Error::config("parser checkpoint and inpainter disagree on num_classes"));
    }
    from(&ckpt, "g", ckpt.config.model.parser.clone())
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        Self::build(config, None)
    }

    /// Restores a trainer from `ckpt`; `config` must hash to the stored fingerprint.
    pub fn resume(ckpt: &Checkpoint, config: TrainConfig) -> Result<Self> {
        let mut t = Self::build(config, Some(ckpt))?;
        if t.fingerprint != ckpt.fingerprint {
            return Err(Error::config(format!(
                "configuration fingerprint {} does not match checkpoint {}",
                &t.fingerprint[..12],
                &ckpt.fingerprint[..ckpt.fingerprint.len().min(12)]
            )));
        }
        ckpt.load_params("g", &mut t.g_params)?;
        ckpt.load_params("d", &mut t.d_params)?;
        ckpt.load_adam("opt_g", &t.g_params, &mut t.opt_g)?;
        ckpt.load_adam("opt_d", &t.d_params, &mut t.opt_d)?;
        if let Nets::Inpainter { spectral, .. } = &mut t.nets {
            ckpt.load_spectral(spectral)?;
        }
        t.step = ckpt.step;
        Ok(t)
    }

    fn build(mut config: TrainConfig, resume: Option<&Checkpoint>) -> Result<Self> {
        config.validate()?;
        let seed = config.seed;
        let (nets, g_params, d_params) = match config.stage {
            Stage::Parser => {
                let (net, g) = Parser::new::<f32>(config.model.parser.clone(), derive_seed(seed, "init.g", &[]))?;
                let d_in = 2 * config.model.parser.num_classes + crate::parser::EXTRA_INPUT_CHANNELS;
                let (disc, d) = ParserDiscriminator::new::<f32>(config.model.parser_disc.clone(), d_in, derive_seed(seed, "init.d", &[]))?;
                (Nets::Parser { net, disc }, g, d)
            }
            Stage::Inpainter => {
                let (pc, parser_params) = frozen_parser(&config, resume)?;
                config.model.parser = pc.clone();
                let parser = Parser::new::<f32>(pc, 0)?.0;
                let (net, g) = Inpainter::new::<f32>(config.model.inpainter.clone(), derive_seed(seed, "init.g", &[]))?;
                let (disc, d, spectral) =
                    InpainterDiscriminator::new::<f32>(config.model.inpainter_disc_channels, derive_seed(seed, "init.d", &[]))?;
                let vgg = config.feature_weights.as_deref().map(Vgg19::load).transpose()?;
                (Nets::Inpainter { net, disc, spectral, parser, parser_params, vgg }, g, d)
            }
        };
        let items = load_items(&config)?;
        let opt_g = Adam::new(config.optimizer, &g_params);
        let opt_d = Adam::new(config.optimizer, &d_params);
        Ok(Self {
            fingerprint: config.fingerprint(),
            cache: vec![None; items.len()],
            config,
            nets,
            g_params,
            d_params,
            opt_g,
            opt_d,
            step: 0,
            items,
        })
    }

    /// Effective configuration (for the inpainter stage, `model.parser`
    /// reflects the frozen parser).
    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// Completed G/D cycles.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn generator_params(&self) -> &ParamStore<f32> {
        &self.g_params
    }

    pub fn discriminator_params(&self) -> &ParamStore<f32> {
        &self.d_params
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.items.len().div_ceil(self.config.batch_size()) as u64
    }

    /// Cycles the configuration asks for in total.
    pub fn total_steps(&self) -> u64 {
        let by_epochs = (self.config.epochs as u64).saturating_mul(self.steps_per_epoch());
        self.config.max_steps.map_or(by_epochs, |m| m.min(by_epochs))
    }

    fn batch_indices(&self, step: u64) -> Vec<usize> {
        let spe = self.steps_per_epoch();
        let (epoch, k) = (step / spe, (step % spe) as usize);
        let mut order: Vec<usize> = (0..self.items.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, "epoch", &[epoch])));
        let b = self.config.batch_size();
        order[k * b..((k + 1) * b).min(order.len())].to_vec()
    }

    fn prepare(&mut self, index: usize, step: u64) -> Result<Prepared> {
        if let Some(p) = &self.cache[index] {
            return Ok(p.clone());
        }
        let fixed = self.config.data.fixed_examples;
        let seed = if fixed {
            derive_seed(self.config.seed, "example", &[index as u64])
        } else {
            derive_seed(self.config.seed, "example", &[step, index as u64])
        };
        let inputs = training_example(&self.config, &self.items[index], seed)?;
        let mut p = Prepared { inputs, completed: None };
        if fixed {
            if let Nets::Inpainter { parser, parser_params, .. } = &self.nets {
                p.completed = Some(complete_parsing(parser, parser_params, &[&p.inputs])?.remove(0));
            }
            self.cache[index] = Some(p.clone());
        }
        Ok(p)
    }

    /// Assembles the mini-batch used by cycle `step`.
    pub fn batch(&mut self, step: u64) -> Result<Batch> {
        let indices = self.batch_indices(step);
        let prepared = indices.iter().map(|&i| self.prepare(i, step)).collect::<Result<Vec<_>>>()?;
        let targets: Vec<ParsingMap> = indices.iter().map(|&i| self.items[i].parsing.clone()).collect();
        let stack = |f: &dyn Fn(usize, &Prepared) -> Result<Tensor<f32>>| -> Result<Tensor<f32>> {
            data::batch(&prepared.iter().enumerate().map(|(k, p)| f(k, p)).collect::<Result<Vec<_>>>()?)
        };
        let labels = &self.config.data.face_labels;
        let items = &self.items;
        let ix = &indices;
        let parser_input = stack(&|_, p| Ok(p.inputs.parser_input()))?;
        let image = stack(&|k, _| Ok(items[ix[k]].image.to_tensor()))?;
        let incomplete = stack(&|_, p| Ok(p.inputs.incomplete_image.to_tensor()))?;
        let composed = stack(&|_, p| Ok(p.inputs.composed_mask.to_tensor()))?;
        let mask = stack(&|_, p| Ok(p.inputs.mask.to_tensor()))?;
        let foreground = stack(&|k, _| Ok(foreground_mask_from_parsing(&items[ix[k]].parsing).to_tensor()))?;
        let face = stack(&|k, _| Ok(face_mask_from_parsing(&items[ix[k]].parsing, labels)?.to_tensor()))?;
        let cond = stack(&|_, p| Ok(p.inputs.condition()))?;
        let side = stack(&|_, p| {
            Tensor::concat(&[&p.inputs.sketch_masked.to_tensor(), &p.inputs.color_masked.pixels.to_tensor(), &p.inputs.mask.to_tensor()], 1)
        })?;
        let onehot = batch_one_hot(&targets)?;

        let parsing_in = match &self.nets {
            Nets::Parser { .. } => None,
            Nets::Inpainter { parser, parser_params, .. } => {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, "teacher", &[step]));
                let use_truth: Vec<bool> = indices.iter().map(|_| rng.random_bool(self.config.teacher_mixing)).collect();
                let need: Vec<&EditInputs> =
                    prepared.iter().zip(&use_truth).filter(|(p, t)| !**t && p.completed.is_none()).map(|(p, _)| &p.inputs).collect();
                let mut fresh = complete_parsing(parser, parser_params, &need)?.into_iter();
                let maps = prepared
                    .iter()
                    .zip(&use_truth)
                    .zip(&targets)
                    .map(|((p, &truth), gt)| {
                        if truth {
                            gt.clone()
                        } else {
                            p.completed.clone().unwrap_or_else(|| fresh.next().expect("one completion per request"))
                        }
                    })
                    .collect::<Vec<_>>();
                Some(batch_one_hot(&maps)?)
            }
        };
        Ok(Batch { indices, targets, parser_input, onehot, image, incomplete, composed, mask, foreground, face, cond, side, parsing_in })
    }

    /// One optimizer step on the generator; D parameters are frozen. Returns
    /// the report and the detached fake discriminator input.
    pub fn generator_step(&mut self, b: &Batch) -> Result<(LossReport, Tensor<f32>)> {
        let Self { config, nets, g_params, d_params, opt_g, .. } = self;
        let g = Graph::new();
        let gp = g_params.bind(&g, true);
        let dp = d_params.bind(&g, false);
        let (total, report, fake_in) = match nets {
            Nets::Parser { net, disc } => {
                let x = g.constant(b.parser_input.clone());
                let logits = net.forward(&gp, &x)?;
                let targets: Vec<&ParsingMap> = b.targets.iter().collect();
                let parsing = parsing_loss(&logits, &targets)?;
                let probs = logits.softmax(1)?;
                let fake_in = Var::concat(&[&x, &probs], 1)?;
                let real_in = g.constant(Tensor::concat(&[&b.parser_input, &b.onehot], 1)?);
                let fake = disc.forward(&dp, &fake_in)?;
                let real = disc.forward(&dp, &real_in)?;
                let terms = ParserTerms {
                    parsing,
                    feat: Some(feature_matching_loss(&real.features, &fake.features)?),
                    adv: Some(generator_loss(&fake.logits, config.model.parser_gan)?),
                };
                let (total, report) = parser_total(&terms, &config.weights.gamma)?;
                (total, report, fake_in.value().clone())
            }
            Nets::Inpainter { net, disc, spectral, vgg, .. } => {
                let parsing = b.parsing_in.as_ref().expect("inpainter batches carry parsing");
                let gen = net.forward(&gp, &g.constant(b.incomplete.clone()), &b.composed, &g.constant(parsing.clone()), &b.cond)?;
                let real = g.constant(b.image.clone());
                let w = &config.weights.lambda;
                let on = |weight: f64| weight > 0.0;
                let vgg = vgg.as_ref();
                let fake_in = Var::concat(&[&gen, &g.constant(b.side.clone())], 1)?;
                let fake = disc.forward(&dp, &fake_in, spectral, false)?;
                let terms = InpainterTerms {
                    mask: mask_loss(&gen, &real, &b.mask)?,
                    foreground: on(w.foreground).then(|| region_l1_loss(&gen, &real, &b.foreground)).transpose()?,
                    face: on(w.face).then(|| region_l1_loss(&gen, &real, &b.face)).transpose()?,
                    face_tv: on(w.face_tv).then(|| tv_loss(&gen, Some(&b.face))).transpose()?,
                    perceptual: vgg.filter(|_| on(w.perceptual)).map(|v| perceptual_loss(&gen, &real, v)).transpose()?,
                    style: vgg.filter(|_| on(w.style)).map(|v| style_loss(&gen, &real, v)).transpose()?,
                    adv: Some(generator_loss(&fake.logits, config.model.inpainter_gan)?),
                };
                let (total, report) = inpainter_total(&terms, w)?;
                (total, report, fake_in.value().clone())
            }
        };
        let grads = g.backward(&total)?;
        let gg = gp.grads(&grads);
        opt_g.apply(g_params, &gg)?;
        Ok((report, fake_in))
    }

    /// One optimizer step on the discriminator against `fake_in`; generator
    /// parameters are not touched.
    pub fn discriminator_step(&mut self, b: &Batch, fake_in: &Tensor<f32>) -> Result<LossReport> {
        let Self { config, nets, d_params, opt_d, .. } = self;
        let g = Graph::new();
        let dp = d_params.bind(&g, true);
        let n = b.indices.len();
        let (real_in, mode) = match nets {
            Nets::Parser { .. } => (Tensor::concat(&[&b.parser_input, &b.onehot], 1)?, config.model.parser_gan),
            Nets::Inpainter { .. } => (Tensor::concat(&[&b.image, &b.side], 1)?, config.model.inpainter_gan),
        };
        let both = g.constant(Tensor::concat(&[&real_in, fake_in], 0)?);
        let logits = match nets {
            Nets::Parser { disc, .. } => disc.forward(&dp, &both)?.logits,
            Nets::Inpainter { disc, spectral, .. } => disc.forward(&dp, &both, spectral, true)?.logits,
        };
        let real: Vec<Var<f32>> = logits.iter().map(|l| l.narrow(0, 0, n)).collect::<Result<_>>()?;
        let fake: Vec<Var<f32>> = logits.iter().map(|l| l.narrow(0, n, n)).collect::<Result<_>>()?;
        let loss = discriminator_loss(&real, &fake, mode)?;
        let value = f64::from(loss.item());
        let grads = g.backward(&loss)?;
        let dg = dp.grads(&grads);
        opt_d.apply(d_params, &dg)?;
        let mut report = LossReport::default();
        report.terms.insert("adv".into(), value);
        report.weights.insert("adv".into(), 1.0);
        report.total = value;
        Ok(report)
    }

    /// One full G/D cycle.
    pub fn train_step(&mut self) -> Result<StepRecord> {
        let step = self.step;
        let b = self.batch(step)?;
        let (generator, fake) = self.generator_step(&b)?;
        let discriminator = self.discriminator_step(&b, &fake)?;
        self.step += 1;
        let record = StepRecord { step, epoch: step / self.steps_per_epoch(), generator, discriminator };
        tracing::debug!(step, g = record.generator.total, d = record.discriminator.total, "train step");
        Ok(record)
    }

    /// Trains until `until` cycles are complete or `observe` returns false.
    /// Records are appended to the JSON-lines log and periodic checkpoints
    /// written when an output directory is configured.
    pub fn run(&mut self, until: u64, mut observe: impl FnMut(&Trainer, &StepRecord) -> Result<bool>) -> Result<Vec<StepRecord>> {
        let mut log = match &self.config.output_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let path = dir.join(format!("{}_log.jsonl", self.config.stage.as_str()));
                Some((OpenOptions::new().create(true).append(true).open(&path).map_err(|e| Error::io(&path, e))?, path))
            }
            None => None,
        };
        let mut records = Vec::new();
        while self.step < until {
            let record = self.train_step()?;
            if let Some((f, path)) = &mut log {
                let line = serde_json::to_string(&record).map_err(|e| Error::Internal(e.to_string()))?;
                writeln!(f, "{line}").map_err(|e| Error::io(path.clone(), e))?;
            }
            if let (Some(every), Some(_)) = (self.config.checkpoint_every, &self.config.output_dir) {
                if every > 0 && self.step % every == 0 {
                    self.checkpoint().save(&self.checkpoint_path(Some(self.step)))?;
                }
            }
            let go_on = observe(self, &record)?;
            records.push(record);
            if !go_on {
                break;
            }
        }
        Ok(records)
    }

    /// `<output_dir>/<stage>[_step<N>].fegan`.
    pub fn checkpoint_path(&self, step: Option<u64>) -> PathBuf {
        let dir = self.config.output_dir.clone().unwrap_or_else(|| PathBuf::from("."));
        match step {
            Some(s) => dir.join(format!("{}_step{s:06}.fegan", self.config.stage.as_str())),
            None => dir.join(format!("{}.fegan", self.config.stage.as_str())),
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(self.config.clone(), self.step);
        c.fingerprint = self.fingerprint.clone();
        c.add_params("g", &self.g_params);
        c.add_params("d", &self.d_params);
        c.add_adam("opt_g", &self.g_params, &self.opt_g);
        c.add_adam("opt_d", &self.d_params, &self.opt_d);
        if let Nets::Inpainter { spectral, parser_params, .. } = &self.nets {
            c.add_spectral(spectral);
            c.add_params("parser", parser_params);
        }
        c
    }

    /// Frozen parser of the inpainter stage, or the trained one of the parser stage.
    pub fn parser(&self) -> (&Parser, &ParamStore<f32>) {
        match &self.nets {
            Nets::Parser { net, .. } => (net, &self.g_params),
            Nets::Inpainter { parser, parser_params, .. } => (parser, parser_params),
        }
    }

    pub fn inpainter(&self) -> Option<(&Inpainter, &ParamStore<f32>)> {
        match &self.nets {
            Nets::Parser { .. } => None,
            Nets::Inpainter { net, .. } => Some((net, &self.g_params)),
        }
    }

    /// The inputs cycle `step` would train on, per item (fixed examples give
    /// the same inputs at every step).
    pub fn example(&mut self, index: usize, step: u64) -> Result<EditInputs> {
        Ok(self.prepare(index, step)?.inputs)
    }
}

/// Runs a whole stage and writes the final checkpoint when an output
/// directory is configured.
pub fn train_stage(config: TrainConfig) -> Result<Checkpoint> {
    let mut t = Trainer::new(config)?;
    finish(&mut t)
}

/// Continues the stage stored in `ckpt` up to the configured step count.
pub fn resume(ckpt: &Checkpoint, config: TrainConfig) -> Result<Checkpoint> {
    let mut t = Trainer::resume(ckpt, config)?;
    finish(&mut t)
}

fn finish(t: &mut Trainer) -> Result<Checkpoint> {
    let total = t.total_steps();
    t.run(total, |_, r| {
        if !r.is_finite() {
            return Err(Error::Internal(format!("non-finite loss at step {}", r.step)));
        }
        Ok(true)
    })?;
    let ckpt = t.checkpoint();
    if t.config.output_dir.is_some() {
        ckpt.save(&t.checkpoint_path(None))?;
    }
    Ok(ckpt)
}

/// Reads a JSON-lines training log.
pub fn read_log(path: &Path) -> Result<Vec<StepRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::invalid(format!("bad log line: {e}"))))
        .collect()
}
