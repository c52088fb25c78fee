//! Model inputs: images, parsing maps, masks and the assembled conditioning
//! bundle, plus the operations that manufacture them.

mod color;
mod example;
pub mod io;
mod masks;
mod sketch;
pub mod synthetic;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use color::extract_color_domain;
pub use example::{make_training_example, ExampleOptions, HOLE_FILL};
pub use masks::{
    compose_mask, face_mask_from_parsing, foreground_mask_from_parsing, generate_freeform_mask, generate_strokes,
    MaskParams,
};
pub use sketch::{extract_sketch, CannyParams};

use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// Number of semantic classes in the default human-parsing label set.
pub const DEFAULT_NUM_CLASSES: usize = 20;
pub const LABEL_HAIR: u8 = 2;
pub const LABEL_FACE: u8 = 13;
pub const DEFAULT_FACE_LABELS: [u8; 2] = [LABEL_HAIR, LABEL_FACE];

fn check_dims(what: &str, a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::invalid(format!("{what}: {}x{} vs {}x{}", a.0, a.1, b.0, b.1)));
    }
    Ok(())
}

/// RGB picture with values in `[-1, 1]`, stored channel-planar (3×H×W).
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    /// Builds an image from planar data, clamping into `[-1, 1]`.
    pub fn from_planar(height: usize, width: usize, mut data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if data.len() != 3 * height * width {
            return Err(Error::invalid(format!("expected {} values, got {}", 3 * height * width, data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("image contains non-finite values"));
        }
        data.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(3 * height * width);
        for c in rgb {
            data.extend(std::iter::repeat_n(c.clamp(-1.0, 1.0), height * width));
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v.clamp(-1.0, 1.0);
    }

    pub fn rgb(&self, y: usize, x: usize) -> [f32; 3] {
        [self.get(0, y, x), self.get(1, y, x), self.get(2, y, x)]
    }

    /// `1×3×H×W` tensor.
    pub fn to_tensor<T: Float>(&self) -> Tensor<T> {
        Tensor::from_vec([1, 3, self.height, self.width], self.data.iter().map(|&v| T::of(v as f64)).collect())
    }

    /// Reads sample `n` of an `N×3×H×W` tensor, clamping into `[-1, 1]`.
    pub fn from_tensor<T: Float>(t: &Tensor<T>, n: usize) -> Result<Self> {
        let (_, c, h, w) = t.dims4();
        if c != 3 {
            return Err(Error::Shape(format!("image tensor needs 3 channels, got {c}")));
        }
        let plane = 3 * h * w;
        let data = t.data()[n * plane..(n + 1) * plane].iter().map(|v| v.f64() as f32).collect();
        Self::from_planar(h, w, data)
    }

    /// Luminance in `[0, 1]` (Rec. 601 weights).
    pub fn luminance(&self) -> Vec<f32> {
        let (r, g, b) = (self.plane(0), self.plane(1), self.plane(2));
        (0..self.height * self.width)
            .map(|i| (0.299 * (r[i] + 1.0) + 0.587 * (g[i] + 1.0) + 0.114 * (b[i] + 1.0)) * 0.5)
            .collect()
    }
}

/// Per-pixel semantic labels; label 0 is background.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParsingMap {
    height: usize,
    width: usize,
    num_classes: usize,
    labels: Vec<u8>,
}

impl ParsingMap {
    pub fn new(height: usize, width: usize, num_classes: usize, labels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("parsing dimensions must be positive"));
        }
        if num_classes == 0 || num_classes > 256 {
            return Err(Error::invalid(format!("num_classes must be in 1..=256, got {num_classes}")));
        }
        if labels.len() != height * width {
            return Err(Error::invalid(format!("expected {} labels, got {}", height * width, labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(Error::invalid(format!("label {bad} out of range for {num_classes} classes")));
        }
        Ok(Self { height, width, num_classes, labels })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    /// `C×H×W` one-hot expansion.
    pub fn one_hot<T: Float>(&self) -> Tensor<T> {
        let n = self.height * self.width;
        let mut out = vec![T::zero(); self.num_classes * n];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l as usize * n + i] = T::one();
        }
        Tensor::from_vec([self.num_classes, self.height, self.width], out)
    }

    /// Per-pixel argmax of sample `n` of an `N×C×H×W` tensor; ties go to the
    /// lowest label.
    pub fn from_scores<T: Float>(t: &Tensor<T>, n: usize) -> Result<Self> {
        let (_, c, h, w) = t.dims4();
        let plane = h * w;
        let base = n * c * plane;
        let d = t.data();
        let labels = (0..plane)
            .map(|i| {
                let mut best = 0;
                for k in 1..c {
                    if d[base + k * plane + i] > d[base + best * plane + i] {
                        best = k;
                    }
                }
                best as u8
            })
            .collect();
        Self::new(h, w, c, labels)
    }

    /// Labels where `mask` is set come from `inside`, the rest from `self`.
    pub fn composite(&self, inside: &ParsingMap, mask: &BinaryMask) -> Result<Self> {
        check_dims("parsing composite", self.dims(), inside.dims())?;
        check_dims("parsing composite mask", self.dims(), mask.dims())?;
        let labels = self
            .labels
            .iter()
            .zip(&inside.labels)
            .zip(mask.values())
            .map(|((&a, &b), &m)| if m == 1 { b } else { a })
            .collect();
        Self::new(self.height, self.width, self.num_classes.max(inside.num_classes), labels)
    }
}

/// What a [`BinaryMask`] represents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    /// `M`: pixels the user erased.
    Edit,
    /// `M_f`: person pixels.
    Foreground,
    /// `M′ = (1−M)⊙M_f`.
    Composed,
    /// Region weighted by the foreground loss.
    ForegroundLoss,
    Face,
    Sketch,
    Stroke,
}

/// Strictly binary H×W field tagged with its meaning.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    kind: MaskKind,
    values: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, kind: MaskKind, values: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("mask dimensions must be positive"));
        }
        if values.len() != height * width {
            return Err(Error::invalid(format!("expected {} mask values, got {}", height * width, values.len())));
        }
        if values.iter().any(|&v| v > 1) {
            return Err(Error::invalid("mask values must be 0 or 1"));
        }
        Ok(Self { height, width, kind, values })
    }

    pub fn zeros(height: usize, width: usize, kind: MaskKind) -> Self {
        Self { height, width, kind, values: vec![0; height * width] }
    }

    pub fn ones(height: usize, width: usize, kind: MaskKind) -> Self {
        Self { height, width, kind, values: vec![1; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn with_kind(mut self, kind: MaskKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.values[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.values.iter().map(|&v| v as usize).sum()
    }

    pub fn coverage(&self) -> f64 {
        self.count() as f64 / self.values.len() as f64
    }

    pub fn and(&self, other: &BinaryMask, kind: MaskKind) -> Result<Self> {
        check_dims("mask intersection", self.dims(), other.dims())?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a & b).collect();
        Ok(Self { height: self.height, width: self.width, kind, values })
    }

    /// `1×1×H×W` tensor of 0/1 values.
    pub fn to_tensor<T: Float>(&self) -> Tensor<T> {
        Tensor::from_vec([1, 1, self.height, self.width], self.values.iter().map(|&v| T::of(v as f64)).collect())
    }

    /// Thresholds sample `n` of an `N×1×H×W` tensor at 0.5.
    pub fn from_tensor<T: Float>(t: &Tensor<T>, n: usize, kind: MaskKind) -> Result<Self> {
        let (_, _, h, w) = t.dims4();
        let values = t.data()[n * h * w..(n + 1) * h * w].iter().map(|v| u8::from(v.f64() >= 0.5)).collect();
        Self::new(h, w, kind, values)
    }
}

/// Per-region constant color field with values in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ColorDomain {
    pub pixels: Image,
}

impl ColorDomain {
    /// Zeroes every pixel outside `mask`.
    pub fn masked(&self, mask: &BinaryMask) -> Result<Self> {
        check_dims("color mask", self.pixels.dims(), mask.dims())?;
        let n = mask.values.len();
        let data = self.pixels.data.iter().enumerate().map(|(i, &v)| if mask.values[i % n] == 1 { v } else { 0.0 }).collect();
        Ok(Self { pixels: Image { height: mask.height, width: mask.width, data } })
    }
}

/// Single-channel i.i.d. standard-normal field reproducible from its seed.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseMap {
    height: usize,
    width: usize,
    seed: u64,
    values: Vec<f32>,
}

impl NoiseMap {
    pub fn sample(height: usize, width: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..height * width).map(|_| StandardNormal.sample(&mut rng)).collect();
        Self { height, width, seed, values }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn to_tensor<T: Float>(&self) -> Tensor<T> {
        Tensor::from_vec([1, 1, self.height, self.width], self.values.iter().map(|&v| T::of(v as f64)).collect())
    }
}

/// Everything both networks are conditioned on for one example.
#[derive(Clone, Debug, PartialEq)]
pub struct EditInputs {
    pub incomplete_image: Image,
    /// `C×H×W` one-hot, zero inside the edit mask.
    pub incomplete_parsing: Tensor<f32>,
    pub sketch_masked: BinaryMask,
    pub color_masked: ColorDomain,
    pub mask: BinaryMask,
    pub composed_mask: BinaryMask,
    pub noise: NoiseMap,
}

impl EditInputs {
    pub fn dims(&self) -> (usize, usize) {
        self.mask.dims()
    }

    pub fn num_classes(&self) -> usize {
        self.incomplete_parsing.shape()[0]
    }

    /// `1×(C+6)×H×W`: incomplete parsing, sketch, color, mask, noise.
    pub fn parser_input<T: Float>(&self) -> Tensor<T> {
        let (h, w) = self.dims();
        let c = self.num_classes();
        let parsing = self.incomplete_parsing.cast::<T>().into_reshape([1, c, h, w]).expect("one-hot shape");
        Tensor::concat(
            &[&parsing, &self.sketch_masked.to_tensor(), &self.color_masked.pixels.to_tensor(), &self.mask.to_tensor(), &self.noise.to_tensor()],
            1,
        )
        .expect("conditioning planes share spatial size")
    }

    /// `1×5×H×W`: sketch, color, noise.
    pub fn condition<T: Float>(&self) -> Tensor<T> {
        Tensor::concat(&[&self.sketch_masked.to_tensor(), &self.color_masked.pixels.to_tensor(), &self.noise.to_tensor()], 1)
            .expect("conditioning planes share spatial size")
    }
}

/// Stacks `1×…` tensors along the batch axis.
pub fn batch<T: Float>(items: &[Tensor<T>]) -> Result<Tensor<T>> {
    Tensor::concat(&items.iter().collect::<Vec<_>>(), 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_is_reproducible_and_standard() {
        let a = NoiseMap::sample(64, 64, 11);
        assert_eq!(a, NoiseMap::sample(64, 64, 11));
        assert_ne!(a.values(), NoiseMap::sample(64, 64, 12).values());
        let n = a.values().len() as f64;
        let mean = a.values().iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = a.values().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.05 && (var - 1.0).abs() < 0.05, "{mean} {var}");
    }

    #[test]
    fn parsing_rejects_out_of_range_labels() {
        assert!(ParsingMap::new(1, 2, 20, vec![0, 20]).is_err());
        let p = ParsingMap::new(1, 3, 4, vec![0, 3, 1]).unwrap();
        let oh = p.one_hot::<f32>();
        assert_eq!(oh.shape(), &[4, 1, 3]);
        assert_eq!(oh.data(), &[1., 0., 0., 0., 0., 1., 0., 0., 0., 0., 1., 0.]);
    }

    #[test]
    fn argmax_ties_go_to_lowest_label() {
        let t = Tensor::<f32>::from_vec([1, 3, 1, 2], vec![1.0, 0.0, 1.0, 2.0, 0.5, 2.0]);
        assert_eq!(ParsingMap::from_scores(&t, 0).unwrap().labels(), &[0, 1]);
    }

    #[test]
    fn masks_must_be_binary() {
        assert!(BinaryMask::new(1, 2, MaskKind::Edit, vec![0, 2]).is_err());
        assert_eq!(BinaryMask::new(1, 4, MaskKind::Edit, vec![0, 1, 1, 0]).unwrap().coverage(), 0.5);
    }
}
