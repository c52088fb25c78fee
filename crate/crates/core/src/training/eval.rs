use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{derive_seed, training_example, DataSource, Item, TrainConfig};
use crate::data::{BinaryMask, EditInputs, Image, ParsingMap};
use crate::error::{Error, Result};
use crate::metrics::{masked_psnr, psnr, ssim, ImageMetrics, MetricsReport, SSIM_WINDOW};
use crate::nn::ParamStore;
use crate::parser::{logits_to_parsing, Parser};
use crate::pipeline::EditModel;
use crate::tensor::Tensor;

use super::checkpoint::Checkpoint;

/// Fixed conditioning for evaluating item `index`.
pub fn evaluation_example(config: &TrainConfig, item: &Item, index: usize, seed: u64) -> Result<EditInputs> {
    training_example(config, item, derive_seed(seed, "eval", &[index as u64]))
}

/// Per-image PSNR/SSIM (full frame) and PSNR inside the mask. SSIM is
/// omitted (NaN-free zero) only when the image is smaller than its window.
pub fn metrics_for_outputs(entries: &[(String, Image, Image, BinaryMask)]) -> Result<MetricsReport> {
    let images = entries
        .iter()
        .map(|(name, output, truth, mask)| {
            let (h, w) = truth.dims();
            Ok(ImageMetrics {
                name: name.clone(),
                psnr: psnr(output, truth)?,
                ssim: if h >= SSIM_WINDOW && w >= SSIM_WINDOW { ssim(output, truth)? } else { 0.0 },
                masked_psnr: masked_psnr(output, truth, mask)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport::from_images(images, None))
}

/// Edits every item with its evaluation mask and scores the composited output.
pub fn evaluate_items(model: &EditModel, config: &TrainConfig, items: &[Item], seed: u64) -> Result<MetricsReport> {
    let entries = items
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let inputs = evaluation_example(config, item, i, seed)?;
            let out = model.edit(&inputs)?;
            Ok((item.name.clone(), out.image, item.image.clone(), inputs.mask))
        })
        .collect::<Result<Vec<_>>>()?;
    metrics_for_outputs(&entries)
}

/// Scores an inpainter checkpoint on the items of `manifest`.
pub fn evaluate(ckpt: &Checkpoint, manifest: &Path, seed: u64) -> Result<MetricsReport> {
    let model = EditModel::from_checkpoint(ckpt)?;
    let mut config = ckpt.config.clone();
    config.data.source = DataSource::Manifest { path: manifest.to_path_buf() };
    let items = super::load_items(&config)?;
    evaluate_items(&model, &config, &items, seed)
}

/// Fraction of correctly labelled pixels outside and inside the edit mask.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParsingAccuracy {
    pub outside: f64,
    pub inside: f64,
}

/// Raw parser predictions (no compositing) scored against `truth`.
pub fn parsing_accuracy(parser: &Parser, params: &ParamStore<f32>, examples: &[(&EditInputs, &ParsingMap)]) -> Result<ParsingAccuracy> {
    if examples.is_empty() {
        return Err(Error::invalid("no examples to score"));
    }
    let x = crate::data::batch(&examples.iter().map(|(e, _)| e.parser_input::<f32>()).collect::<Vec<Tensor<f32>>>())?;
    let logits = parser.logits(params, &x)?;
    let (mut hit, mut count) = ([0usize; 2], [0usize; 2]);
    for (i, (e, truth)) in examples.iter().enumerate() {
        let pred = logits_to_parsing(&logits, i)?;
        for ((&p, &t), &m) in pred.labels().iter().zip(truth.labels()).zip(e.mask.values()) {
            let k = usize::from(m != 0);
            count[k] += 1;
            hit[k] += usize::from(p == t);
        }
    }
    let frac = |k: usize| if count[k] == 0 { 1.0 } else { hit[k] as f64 / count[k] as f64 };
    Ok(ParsingAccuracy { outside: frac(0), inside: frac(1) })
}
