use serde::{Deserialize, Serialize};

use super::{
    check_dims, compose_mask, extract_color_domain, extract_sketch, foreground_mask_from_parsing, BinaryMask, CannyParams,
    EditInputs, Image, MaskKind, NoiseMap, ParsingMap,
};
use crate::error::Result;

/// Value written into erased image pixels.
pub const HOLE_FILL: f32 = -1.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExampleOptions {
    #[serde(default)]
    pub canny: CannyParams,
}

/// Assembles the conditioning bundle for one (image, parsing) pair.
///
/// `stroke_mask` selects where color hints are revealed inside `mask`.
pub fn make_training_example(
    image: &Image,
    parsing: &ParsingMap,
    mask: &BinaryMask,
    stroke_mask: &BinaryMask,
    seed: u64,
    options: &ExampleOptions,
) -> Result<EditInputs> {
    let dims = image.dims();
    check_dims("parsing", dims, parsing.dims())?;
    check_dims("mask", dims, mask.dims())?;
    check_dims("stroke mask", dims, stroke_mask.dims())?;
    let (h, w) = dims;
    let n = h * w;
    let m = mask.values();

    let hole: Vec<f32> = image.data().iter().enumerate().map(|(i, &v)| if m[i % n] == 1 { HOLE_FILL } else { v }).collect();
    let incomplete_image = Image::from_planar(h, w, hole)?;

    let mut incomplete_parsing = parsing.one_hot::<f32>();
    for (i, v) in incomplete_parsing.data_mut().iter_mut().enumerate() {
        if m[i % n] == 1 {
            *v = 0.0;
        }
    }

    let sketch_masked = extract_sketch(image, &options.canny)?.and(mask, MaskKind::Sketch)?;
    let reveal = stroke_mask.and(mask, MaskKind::Stroke)?;
    let color_masked = extract_color_domain(image, parsing)?.masked(&reveal)?;
    let composed_mask = compose_mask(mask, &foreground_mask_from_parsing(parsing))?;

    Ok(EditInputs {
        incomplete_image,
        incomplete_parsing,
        sketch_masked,
        color_masked,
        mask: mask.clone().with_kind(MaskKind::Edit),
        composed_mask,
        noise: NoiseMap::sample(h, w, seed),
    })
}
