//! End-to-end editing with a trained parser and inpainter.

use crate::data::{
    self, compose_mask, foreground_mask_from_parsing, BinaryMask, ColorDomain, EditInputs, Image, MaskKind, NoiseMap, ParsingMap,
    HOLE_FILL,
};
use crate::error::{Error, Result};
use crate::inpainter::{composite_output, Inpainter};
use crate::nn::ParamStore;
use crate::parser::{logits_to_parsing, Parser};
use crate::tensor::resize::{resize_bilinear, resize_nearest};
use crate::tensor::Tensor;
use crate::training::{Checkpoint, Stage};

/// Known labels outside the edit mask, predicted labels inside.
pub fn complete_parsing(parser: &Parser, params: &ParamStore<f32>, inputs: &[&EditInputs]) -> Result<Vec<ParsingMap>> {
    if inputs.is_empty() {
        return Ok(Vec::new());
    }
    let x = data::batch(&inputs.iter().map(|e| e.parser_input::<f32>()).collect::<Vec<_>>())?;
    let logits = parser.logits(params, &x)?;
    inputs
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let predicted = logits_to_parsing(&logits, i)?;
            known_parsing(e)?.composite(&predicted, &e.mask)
        })
        .collect()
}

/// Argmax of the incomplete one-hot; labels inside the mask are meaningless.
pub fn known_parsing(e: &EditInputs) -> Result<ParsingMap> {
    let (h, w) = e.dims();
    let t = e.incomplete_parsing.reshape([1, e.num_classes(), h, w])?;
    ParsingMap::from_scores(&t, 0)
}

/// Result of one edit at model resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct EditOutput {
    /// Generated pixels inside the mask, input pixels elsewhere.
    pub image: Image,
    pub generated: Image,
    pub parsing: ParsingMap,
}

/// A frozen parser and inpainter loaded from an inpainter-stage checkpoint.
#[derive(Clone, Debug)]
pub struct EditModel {
    parser: Parser,
    parser_params: ParamStore<f32>,
    inpainter: Inpainter,
    inpainter_params: ParamStore<f32>,
    height: usize,
    width: usize,
    num_classes: usize,
    fingerprint: String,
}

impl EditModel {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.config.stage != Stage::Inpainter {
            return Err(Error::config("editing needs an inpainter-stage checkpoint"));
        }
        let model = &ckpt.config.model;
        let (parser, mut parser_params) = Parser::new::<f32>(model.parser.clone(), 0)?;
        ckpt.load_params("parser", &mut parser_params)?;
        let (inpainter, mut inpainter_params) = Inpainter::new::<f32>(model.inpainter.clone(), 0)?;
        ckpt.load_params("g", &mut inpainter_params)?;
        Ok(Self {
            parser,
            parser_params,
            inpainter,
            inpainter_params,
            height: ckpt.config.height,
            width: ckpt.config.width,
            num_classes: model.parser.num_classes,
            fingerprint: ckpt.fingerprint.clone(),
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    /// `(height, width)` the networks were trained at.
    pub fn resolution(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn parse(&self, inputs: &EditInputs) -> Result<ParsingMap> {
        self.check(inputs)?;
        Ok(complete_parsing(&self.parser, &self.parser_params, &[inputs])?.remove(0))
    }

    pub fn edit(&self, inputs: &EditInputs) -> Result<EditOutput> {
        let parsing = self.parse(inputs)?;
        let (h, w) = inputs.dims();
        let onehot = parsing.one_hot::<f32>().into_reshape([1, self.num_classes, h, w])?;
        let out = self.inpainter.generate(
            &self.inpainter_params,
            &inputs.incomplete_image.to_tensor(),
            &inputs.composed_mask.to_tensor(),
            &onehot,
            &inputs.condition(),
        )?;
        let generated = Image::from_tensor(&out, 0)?;
        let image = composite_output(&generated, &inputs.incomplete_image, &inputs.mask)?;
        Ok(EditOutput { image, generated, parsing })
    }

    fn check(&self, inputs: &EditInputs) -> Result<()> {
        if inputs.num_classes() != self.num_classes {
            return Err(Error::invalid(format!("inputs carry {} classes, model has {}", inputs.num_classes(), self.num_classes)));
        }
        self.parser.check_input(&[1, self.parser_input_channels(), inputs.dims().0, inputs.dims().1])
    }

    fn parser_input_channels(&self) -> usize {
        self.num_classes + crate::parser::EXTRA_INPUT_CHANNELS
    }
}

/// Stacks per-sample `C×H×W` one-hot maps into `N×C×H×W`.
pub fn batch_one_hot(maps: &[ParsingMap]) -> Result<Tensor<f32>> {
    let items = maps
        .iter()
        .map(|m| {
            let (h, w) = m.dims();
            m.one_hot::<f32>().into_reshape([1, m.num_classes(), h, w])
        })
        .collect::<Result<Vec<_>>>()?;
    data::batch(&items)
}

/// Editing layers as a user supplies them, all at the image's native size.
#[derive(Clone, Debug, PartialEq)]
pub struct UserLayers {
    pub image: Image,
    pub mask: BinaryMask,
    pub sketch: BinaryMask,
    pub stroke_mask: BinaryMask,
    /// Stroke RGB in `[-1, 1]`; only read where `stroke_mask` is set.
    pub stroke_colors: Image,
    /// Parsing of the unedited image. Without it the parser first labels the
    /// whole frame from the sketch and strokes alone.
    pub parsing: Option<ParsingMap>,
}

impl UserLayers {
    pub fn dims(&self) -> (usize, usize) {
        self.image.dims()
    }

    fn check(&self) -> Result<()> {
        let want = self.dims();
        let mut named = vec![
            ("mask", self.mask.dims()),
            ("sketch", self.sketch.dims()),
            ("strokes", self.stroke_mask.dims()),
            ("stroke colors", self.stroke_colors.dims()),
        ];
        if let Some(p) = &self.parsing {
            named.push(("parsing", p.dims()));
        }
        for (name, got) in named {
            if got != want {
                return Err(Error::Shape(format!("{name} is {}x{} but the image is {}x{}", got.1, got.0, want.1, want.0)));
            }
        }
        Ok(())
    }
}

/// Bilinear; returns a clone when already `h×w`.
pub fn resize_image(img: &Image, h: usize, w: usize) -> Result<Image> {
    if img.dims() == (h, w) {
        return Ok(img.clone());
    }
    Image::from_tensor(&resize_bilinear(&img.to_tensor::<f32>(), h, w), 0)
}

/// Nearest-neighbour, for sparse color hints.
pub fn resize_colors(img: &Image, h: usize, w: usize) -> Result<Image> {
    if img.dims() == (h, w) {
        return Ok(img.clone());
    }
    Image::from_tensor(&resize_nearest(&img.to_tensor::<f32>(), h, w), 0)
}

pub fn resize_mask(m: &BinaryMask, h: usize, w: usize) -> Result<BinaryMask> {
    if m.dims() == (h, w) {
        return Ok(m.clone());
    }
    BinaryMask::from_tensor(&resize_nearest(&m.to_tensor::<f32>(), h, w), 0, m.kind())
}

/// Nearest-neighbour on pixel centres.
pub fn resize_labels(p: &ParsingMap, h: usize, w: usize) -> Result<ParsingMap> {
    if p.dims() == (h, w) {
        return Ok(p.clone());
    }
    let (sh, sw) = p.dims();
    let labels = (0..h * w)
        .map(|i| {
            let (y, x) = (i / w, i % w);
            let sy = (((y as f64 + 0.5) * sh as f64 / h as f64) as usize).min(sh - 1);
            let sx = (((x as f64 + 0.5) * sw as f64 / w as f64) as usize).min(sw - 1);
            p.get(sy, sx)
        })
        .collect();
    ParsingMap::new(h, w, p.num_classes(), labels)
}

/// Assembles network inputs from user layers at their own resolution.
pub fn user_inputs(
    image: &Image,
    parsing: Option<&ParsingMap>,
    mask: &BinaryMask,
    sketch: &BinaryMask,
    stroke_mask: &BinaryMask,
    stroke_colors: &Image,
    num_classes: usize,
    seed: u64,
) -> Result<EditInputs> {
    let (h, w) = image.dims();
    let n = h * w;
    let m = mask.values();
    let hole = image.data().iter().enumerate().map(|(i, &v)| if m[i % n] == 1 { HOLE_FILL } else { v }).collect();
    let mut incomplete_parsing = match parsing {
        Some(p) => p.one_hot::<f32>(),
        None => Tensor::zeros([num_classes, h, w]),
    };
    for (i, v) in incomplete_parsing.data_mut().iter_mut().enumerate() {
        if m[i % n] == 1 {
            *v = 0.0;
        }
    }
    let foreground = match parsing {
        Some(p) => foreground_mask_from_parsing(p),
        None => BinaryMask::ones(h, w, MaskKind::Foreground),
    };
    let reveal = stroke_mask.and(mask, MaskKind::Stroke)?;
    Ok(EditInputs {
        incomplete_image: Image::from_planar(h, w, hole)?,
        incomplete_parsing,
        sketch_masked: sketch.and(mask, MaskKind::Sketch)?,
        color_masked: ColorDomain { pixels: stroke_colors.clone() }.masked(&reveal)?,
        mask: mask.clone().with_kind(MaskKind::Edit),
        composed_mask: compose_mask(mask, &foreground)?,
        noise: NoiseMap::sample(h, w, seed),
    })
}

impl EditModel {
    /// Parsing at model resolution for the given layers. Unknown parsing is
    /// first predicted over the whole frame.
    fn model_parsing(&self, layers: &UserLayers, h: usize, w: usize, seed: u64) -> Result<(ParsingMap, BinaryMask)> {
        let mask = resize_mask(&layers.mask, h, w)?;
        let sketch = resize_mask(&layers.sketch, h, w)?;
        let strokes = resize_mask(&layers.stroke_mask, h, w)?;
        let colors = resize_colors(&layers.stroke_colors, h, w)?;
        let image = resize_image(&layers.image, h, w)?;
        let known = match &layers.parsing {
            Some(p) => resize_labels(p, h, w)?,
            None => {
                let all = BinaryMask::ones(h, w, MaskKind::Edit);
                let first = user_inputs(&image, None, &all, &sketch, &strokes, &colors, self.num_classes, seed)?;
                self.parse(&first)?
            }
        };
        let inputs = user_inputs(&image, Some(&known), &mask, &sketch, &strokes, &colors, self.num_classes, seed)?;
        Ok((self.parse(&inputs)?, mask))
    }

    /// Completed parsing at native resolution; known labels are kept outside the mask.
    pub fn parse_layers(&self, layers: &UserLayers, seed: u64) -> Result<ParsingMap> {
        layers.check()?;
        let (mh, mw) = self.resolution();
        let (parsing, _) = self.model_parsing(layers, mh, mw, seed)?;
        let (h, w) = layers.dims();
        let native = resize_labels(&parsing, h, w)?;
        match &layers.parsing {
            Some(known) => known.composite(&native, &layers.mask),
            None => Ok(native),
        }
    }

    /// Runs at model resolution and composites the result into the
    /// native-resolution image: pixels outside the mask are the input's.
    pub fn edit_layers(&self, layers: &UserLayers, seed: u64) -> Result<EditOutput> {
        layers.check()?;
        let (mh, mw) = self.resolution();
        let (h, w) = layers.dims();
        let (parsing, mask) = self.model_parsing(layers, mh, mw, seed)?;
        let image = resize_image(&layers.image, mh, mw)?;
        let sketch = resize_mask(&layers.sketch, mh, mw)?;
        let strokes = resize_mask(&layers.stroke_mask, mh, mw)?;
        let colors = resize_colors(&layers.stroke_colors, mh, mw)?;
        let inputs = user_inputs(&image, Some(&parsing), &mask, &sketch, &strokes, &colors, self.num_classes, seed)?;
        let onehot = parsing.one_hot::<f32>().into_reshape([1, self.num_classes, mh, mw])?;
        let out = self.inpainter.generate(
            &self.inpainter_params,
            &inputs.incomplete_image.to_tensor(),
            &inputs.composed_mask.to_tensor(),
            &onehot,
            &inputs.condition(),
        )?;
        let generated = resize_image(&Image::from_tensor(&out, 0)?, h, w)?;
        let image = composite_output(&generated, &layers.image, &layers.mask)?;
        let native = resize_labels(&parsing, h, w)?;
        let parsing = match &layers.parsing {
            Some(known) => known.composite(&native, &layers.mask)?,
            None => native,
        };
        Ok(EditOutput { image, generated, parsing })
    }
}
