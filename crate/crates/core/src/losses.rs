//! Reconstruction, texture and adversarial losses, and their weighted
//! combination into the two training objectives.
//!
//! Every L1 term is a mean over all elements.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::tensor::conv::ConvSpec;
use crate::tensor::{Float, Tensor};

fn check_same(a: &[usize], b: &[usize], what: &str) -> Result<()> {
    if a != b {
        return Err(Error::invalid(format!("{what}: shapes {a:?} and {b:?} differ")));
    }
    Ok(())
}

/// `mean |gen⊙M − real⊙M|` with `mask` broadcast over channels.
pub fn mask_loss<'g, T: Float>(gen: &Var<'g, T>, real: &Var<'g, T>, mask: &Tensor<T>) -> Result<Var<'g, T>> {
    check_same(gen.shape(), real.shape(), "mask loss")?;
    let m = gen.graph().constant(mask.clone());
    Ok(gen.mul(&m)?.sub(&real.mul(&m)?)?.abs().mean_all())
}

/// Same reduction as [`mask_loss`] over an arbitrary region (foreground, face).
pub fn region_l1_loss<'g, T: Float>(gen: &Var<'g, T>, real: &Var<'g, T>, region: &Tensor<T>) -> Result<Var<'g, T>> {
    mask_loss(gen, real, region)
}

/// `mean|x[h,w+1] − x[h,w]| + mean|x[h+1,w] − x[h,w]|`. With a region, each
/// difference is weighted by the region value at its anchor `(h, w)`; the
/// denominators stay the full difference counts. A direction with no pairs
/// contributes zero.
pub fn tv_loss<'g, T: Float>(x: &Var<'g, T>, region: Option<&Tensor<T>>) -> Result<Var<'g, T>> {
    let (_, _, h, w) = x.dims4();
    if let Some(r) = region {
        let (_, rc, rh, rw) = r.dims4();
        if rc != 1 || (rh, rw) != (h, w) {
            return Err(Error::invalid(format!("tv region {:?} does not fit {:?}", r.shape(), x.shape())));
        }
    }
    let g = x.graph();
    let mut total = g.constant(Tensor::scalar(T::zero()));
    for (axis, len) in [(3, w), (2, h)] {
        if len < 2 {
            continue;
        }
        let mut d = x.narrow(axis, 1, len - 1)?.sub(&x.narrow(axis, 0, len - 1)?)?.abs();
        if let Some(r) = region {
            d = d.mul(&g.constant(r.narrow(axis, 0, len - 1)?))?;
        }
        total = total.add(&d.mean_all())?;
    }
    Ok(total)
}

/// Gram matrices `F Fᵀ / (C·H·W)`, shape `N×C×C`.
pub fn gram<'g, T: Float>(f: &Var<'g, T>) -> Result<Var<'g, T>> {
    let (n, c, h, w) = f.dims4();
    let flat = f.reshape(&[n, c, h * w])?;
    Ok(flat.bmm(&flat, false, true)?.mul_scalar(1.0 / (c * h * w) as f64))
}

/// Fixed feature network for the perceptual and style terms.
pub trait FeatureExtractor<T: Float>: Send + Sync {
    fn perceptual_features<'g>(&self, x: &Var<'g, T>) -> Result<Vec<Var<'g, T>>>;
    fn style_features<'g>(&self, x: &Var<'g, T>) -> Result<Vec<Var<'g, T>>>;
}

fn layered_l1<'g, T: Float>(a: &[Var<'g, T>], b: &[Var<'g, T>]) -> Result<Var<'g, T>> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::invalid(format!("feature lists of length {} and {}", a.len(), b.len())));
    }
    let mut total: Option<Var<'g, T>> = None;
    for (x, y) in a.iter().zip(b) {
        check_same(x.shape(), y.shape(), "feature layer")?;
        let term = x.sub(y)?.abs().mean_all();
        total = Some(match total {
            Some(t) => t.add(&term)?,
            None => term,
        });
    }
    Ok(total.expect("nonempty"))
}

/// `Σ_l mean|φ_l(gen) − φ_l(real)|`.
pub fn perceptual_loss<'g, T: Float>(gen: &Var<'g, T>, real: &Var<'g, T>, extractor: &dyn FeatureExtractor<T>) -> Result<Var<'g, T>> {
    check_same(gen.shape(), real.shape(), "perceptual loss")?;
    layered_l1(&extractor.perceptual_features(gen)?, &extractor.perceptual_features(real)?)
}

/// `Σ_l mean|G(φ_l(gen)) − G(φ_l(real))|`.
pub fn style_loss<'g, T: Float>(gen: &Var<'g, T>, real: &Var<'g, T>, extractor: &dyn FeatureExtractor<T>) -> Result<Var<'g, T>> {
    check_same(gen.shape(), real.shape(), "style loss")?;
    let grams = |fs: Vec<Var<'g, T>>| fs.iter().map(gram).collect::<Result<Vec<_>>>();
    layered_l1(&grams(extractor.style_features(gen)?)?, &grams(extractor.style_features(real)?)?)
}

/// Mean over every (scale, layer) pair of `mean|fake − real|`; real
/// features are treated as constants.
pub fn feature_matching_loss<'g, T: Float>(real: &[Vec<Var<'g, T>>], fake: &[Vec<Var<'g, T>>]) -> Result<Var<'g, T>> {
    if real.len() != fake.len() || real.iter().zip(fake).any(|(r, f)| r.len() != f.len()) {
        return Err(Error::invalid("feature matching: scale or layer counts differ"));
    }
    let pairs: Vec<_> = real.iter().zip(fake).flat_map(|(r, f)| r.iter().zip(f)).collect();
    if pairs.is_empty() {
        return Err(Error::invalid("feature matching: no features"));
    }
    let mut total: Option<Var<'g, T>> = None;
    for (r, f) in &pairs {
        check_same(r.shape(), f.shape(), "feature matching")?;
        let term = f.sub(&r.detach())?.abs().mean_all();
        total = Some(match total {
            Some(t) => t.add(&term)?,
            None => term,
        });
    }
    Ok(total.expect("nonempty").mul_scalar(1.0 / pairs.len() as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GanMode {
    Lsgan,
    Hinge,
}

impl FromStr for GanMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lsgan" => Ok(GanMode::Lsgan),
            "hinge" => Ok(GanMode::Hinge),
            other => Err(Error::invalid(format!("unknown gan mode {other:?}; expected lsgan or hinge"))),
        }
    }
}

fn scale_mean<'g, T: Float>(maps: &[Var<'g, T>], f: impl Fn(&Var<'g, T>) -> Result<Var<'g, T>>) -> Result<Var<'g, T>> {
    if maps.is_empty() {
        return Err(Error::invalid("no logits maps"));
    }
    let mut total = f(&maps[0])?;
    for m in &maps[1..] {
        total = total.add(&f(m)?)?;
    }
    Ok(total.mul_scalar(1.0 / maps.len() as f64))
}

/// Generator term, averaged over scales. The hinge form can be negative.
pub fn generator_loss<'g, T: Float>(fake: &[Var<'g, T>], mode: GanMode) -> Result<Var<'g, T>> {
    scale_mean(fake, |f| {
        Ok(match mode {
            GanMode::Lsgan => f.add_scalar(-1.0).square().mean_all(),
            GanMode::Hinge => f.mean_all().neg(),
        })
    })
}

/// Discriminator term, averaged over scales.
pub fn discriminator_loss<'g, T: Float>(real: &[Var<'g, T>], fake: &[Var<'g, T>], mode: GanMode) -> Result<Var<'g, T>> {
    if real.len() != fake.len() {
        return Err(Error::invalid(format!("{} real vs {} fake logits maps", real.len(), fake.len())));
    }
    let r = scale_mean(real, |r| {
        Ok(match mode {
            GanMode::Lsgan => r.add_scalar(-1.0).square().mean_all().mul_scalar(0.5),
            GanMode::Hinge => r.neg().add_scalar(1.0).relu().mean_all(),
        })
    })?;
    let f = scale_mean(fake, |f| {
        Ok(match mode {
            GanMode::Lsgan => f.square().mean_all().mul_scalar(0.5),
            GanMode::Hinge => f.add_scalar(1.0).relu().mean_all(),
        })
    })?;
    r.add(&f)
}

/// `(g_loss, d_loss)` from one set of real and fake logits.
pub fn gan_losses<'g, T: Float>(real: &[Var<'g, T>], fake: &[Var<'g, T>], mode: GanMode) -> Result<(Var<'g, T>, Var<'g, T>)> {
    Ok((generator_loss(fake, mode)?, discriminator_loss(real, fake, mode)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParserWeights {
    pub parsing: f64,
    pub feat: f64,
    pub adv: f64,
}

impl Default for ParserWeights {
    fn default() -> Self {
        Self { parsing: 10.0, feat: 10.0, adv: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InpainterWeights {
    pub mask: f64,
    pub foreground: f64,
    pub face: f64,
    pub face_tv: f64,
    pub perceptual: f64,
    pub style: f64,
    pub adv: f64,
}

impl Default for InpainterWeights {
    fn default() -> Self {
        Self { mask: 5.0, foreground: 50.0, face: 1.0, face_tv: 0.1, perceptual: 0.05, style: 200.0, adv: 0.001 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub gamma: ParserWeights,
    pub lambda: InpainterWeights,
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let g = self.gamma;
        let l = self.lambda;
        let all = [g.parsing, g.feat, g.adv, l.mask, l.foreground, l.face, l.face_tv, l.perceptual, l.style, l.adv];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::config("loss weights must be finite and nonnegative"));
        }
        Ok(())
    }
}

/// Per-term values, the weights applied and the weighted total.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub terms: BTreeMap<String, f64>,
    pub weights: BTreeMap<String, f64>,
    pub total: f64,
}

impl LossReport {
    fn from_pairs(pairs: &[(&str, f64, Option<f64>)]) -> Self {
        let mut report = LossReport::default();
        for &(name, weight, value) in pairs {
            if let Some(v) = value {
                report.terms.insert(name.to_string(), v);
                report.weights.insert(name.to_string(), weight);
                report.total += weight * v;
            }
        }
        report
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.terms.values().all(|v| v.is_finite())
    }
}

/// Terms of the parsing objective.
#[derive(Clone, Debug, PartialEq)]
pub struct ParserTerms<V> {
    pub parsing: V,
    pub feat: Option<V>,
    pub adv: Option<V>,
}

/// Terms of the inpainting objective; absent terms are disabled.
#[derive(Clone, Debug, PartialEq)]
pub struct InpainterTerms<V> {
    pub mask: V,
    pub foreground: Option<V>,
    pub face: Option<V>,
    pub face_tv: Option<V>,
    pub perceptual: Option<V>,
    pub style: Option<V>,
    pub adv: Option<V>,
}

impl<V> ParserTerms<V> {
    fn named(&self, w: &ParserWeights) -> Vec<(&'static str, f64, Option<&V>)> {
        vec![("parsing", w.parsing, Some(&self.parsing)), ("feat", w.feat, self.feat.as_ref()), ("adv", w.adv, self.adv.as_ref())]
    }
}

impl<V> InpainterTerms<V> {
    fn named(&self, w: &InpainterWeights) -> Vec<(&'static str, f64, Option<&V>)> {
        vec![
            ("mask", w.mask, Some(&self.mask)),
            ("foreground", w.foreground, self.foreground.as_ref()),
            ("face", w.face, self.face.as_ref()),
            ("face_tv", w.face_tv, self.face_tv.as_ref()),
            ("perceptual", w.perceptual, self.perceptual.as_ref()),
            ("style", w.style, self.style.as_ref()),
            ("adv", w.adv, self.adv.as_ref()),
        ]
    }
}

fn report_f64(named: Vec<(&'static str, f64, Option<&f64>)>) -> LossReport {
    LossReport::from_pairs(&named.into_iter().map(|(n, w, v)| (n, w, v.copied())).collect::<Vec<_>>())
}

fn combine<'g, T: Float>(named: Vec<(&'static str, f64, Option<&Var<'g, T>>)>) -> Result<(Var<'g, T>, LossReport)> {
    let mut total: Option<Var<'g, T>> = None;
    for (_, w, v) in &named {
        if let Some(v) = v {
            let term = v.mul_scalar(*w);
            total = Some(match total {
                Some(t) => t.add(&term)?,
                None => term,
            });
        }
    }
    let report = LossReport::from_pairs(&named.iter().map(|(n, w, v)| (*n, *w, v.map(|v| v.item().f64()))).collect::<Vec<_>>());
    Ok((total.expect("first term always present"), report))
}

/// `γ1·L_parsing + γ2·L_feat + γ3·L_adv` on plain values.
pub fn parser_objective(terms: &ParserTerms<f64>, weights: &ParserWeights) -> LossReport {
    report_f64(terms.named(weights))
}

/// `Σ λᵢ·termᵢ` over mask, foreground, face, face TV, perceptual, style, adv.
pub fn inpainter_objective(terms: &InpainterTerms<f64>, weights: &InpainterWeights) -> LossReport {
    report_f64(terms.named(weights))
}

/// Differentiable parser objective plus its report.
pub fn parser_total<'g, T: Float>(terms: &ParserTerms<Var<'g, T>>, weights: &ParserWeights) -> Result<(Var<'g, T>, LossReport)> {
    combine(terms.named(weights))
}

/// Differentiable inpainter objective plus its report.
pub fn inpainter_total<'g, T: Float>(terms: &InpainterTerms<Var<'g, T>>, weights: &InpainterWeights) -> Result<(Var<'g, T>, LossReport)> {
    combine(terms.named(weights))
}

/// Convolution layers of the VGG19 feature stack, by torchvision index.
const VGG_CONVS: [usize; 14] = [0, 2, 5, 7, 10, 12, 14, 16, 19, 21, 23, 25, 28, 30];
/// Indices followed by a 2×2 max pool.
const VGG_POOL_AFTER: [usize; 4] = [2, 7, 16, 25];
/// relu1_2, relu2_2, relu3_2, relu4_2, relu5_2 (after these convolutions).
const VGG_TAPS: [usize; 5] = [2, 7, 12, 21, 30];
const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// VGG19 truncated after relu5_2, loaded from a safetensors file with
/// torchvision names (`features.{i}.weight`, `features.{i}.bias`). Inputs
/// are images in `[-1, 1]`.
#[derive(Clone, Debug)]
pub struct Vgg19<T: Float> {
    layers: Vec<(usize, Tensor<T>, Tensor<T>)>,
}

impl<T: Float> Vgg19<T> {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_safetensors(&bytes)
    }

    pub fn from_safetensors(bytes: &[u8]) -> Result<Self> {
        let st = safetensors::SafeTensors::deserialize(bytes).map_err(|e| Error::config(format!("feature network: {e}")))?;
        let fetch = |name: &str| -> Result<Tensor<T>> {
            let view = st.tensor(name).map_err(|_| Error::config(format!("feature network is missing {name}")))?;
            if view.dtype() != safetensors::Dtype::F32 {
                return Err(Error::config(format!("{name}: expected f32, found {:?}", view.dtype())));
            }
            let data: Vec<T> = view.data().chunks_exact(4).map(|c| T::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)).collect();
            Ok(Tensor::from_vec(view.shape().to_vec(), data))
        };
        let mut layers = Vec::with_capacity(VGG_CONVS.len());
        let mut cin = 3;
        for &i in &VGG_CONVS {
            let w = fetch(&format!("features.{i}.weight"))?;
            let b = fetch(&format!("features.{i}.bias"))?;
            let s = w.shape().to_vec();
            if s.len() != 4 || s[1] != cin || s[2] != 3 || s[3] != 3 || b.shape() != [s[0]] {
                return Err(Error::config(format!("features.{i}: unexpected shapes {s:?} / {:?}", b.shape())));
            }
            cin = s[0];
            layers.push((i, w, b));
        }
        Ok(Self { layers })
    }

    fn taps<'g>(&self, x: &Var<'g, T>, wanted: &[usize]) -> Result<Vec<Var<'g, T>>> {
        let g = x.graph();
        let (_, c, _, _) = x.dims4();
        if c != 3 {
            return Err(Error::invalid(format!("feature network expects 3 channels, got {c}")));
        }
        let mean = Tensor::from_fn([1, 3, 1, 1], |i| T::of(IMAGENET_MEAN[i]));
        let inv_std = Tensor::from_fn([1, 3, 1, 1], |i| T::of(1.0 / IMAGENET_STD[i]));
        let mut h = x.add_scalar(1.0).mul_scalar(0.5).sub(&g.constant(mean))?.mul(&g.constant(inv_std))?;
        let last = *wanted.iter().max().unwrap_or(&0);
        let mut out = Vec::with_capacity(wanted.len());
        for (i, w, b) in &self.layers {
            if *i > last {
                break;
            }
            h = h.conv2d(&g.constant(w.clone()), Some(&g.constant(b.clone())), ConvSpec::same(3, 1))?.relu();
            if wanted.contains(i) {
                out.push(h.clone());
            }
            if VGG_POOL_AFTER.contains(i) {
                h = h.max_pool2()?;
            }
        }
        Ok(out)
    }
}

impl<T: Float> FeatureExtractor<T> for Vgg19<T> {
    fn perceptual_features<'g>(&self, x: &Var<'g, T>) -> Result<Vec<Var<'g, T>>> {
        self.taps(x, &VGG_TAPS[..4])
    }

    fn style_features<'g>(&self, x: &Var<'g, T>) -> Result<Vec<Var<'g, T>>> {
        self.taps(x, &VGG_TAPS)
    }
}
