use std::f32::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_dims, BinaryMask, MaskKind, ParsingMap};
use crate::error::{Error, Result};

pub const MIN_COVERAGE: f64 = 0.05;
pub const MAX_COVERAGE: f64 = 0.5;
const MAX_ATTEMPTS: usize = 1000;

/// `M′ = (1−M) ⊙ M_f`.
pub fn compose_mask(mask: &BinaryMask, foreground: &BinaryMask) -> Result<BinaryMask> {
    check_dims("compose_mask", mask.dims(), foreground.dims())?;
    let values = mask.values().iter().zip(foreground.values()).map(|(&m, &f)| (1 - m) * f).collect();
    BinaryMask::new(mask.height(), mask.width(), MaskKind::Composed, values)
}

pub fn foreground_mask_from_parsing(parsing: &ParsingMap) -> BinaryMask {
    let values = parsing.labels().iter().map(|&l| u8::from(l != 0)).collect();
    BinaryMask::new(parsing.height(), parsing.width(), MaskKind::Foreground, values).expect("binary by construction")
}

pub fn face_mask_from_parsing(parsing: &ParsingMap, face_labels: &[u8]) -> Result<BinaryMask> {
    if face_labels.is_empty() {
        return Err(Error::invalid("face label set is empty"));
    }
    if let Some(&bad) = face_labels.iter().find(|&&l| l == 0 || l as usize >= parsing.num_classes()) {
        return Err(Error::invalid(format!("face label {bad} outside 1..{}", parsing.num_classes())));
    }
    let values = parsing.labels().iter().map(|l| u8::from(face_labels.contains(l))).collect();
    BinaryMask::new(parsing.height(), parsing.width(), MaskKind::Face, values)
}

/// Random-walk brush strokes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskParams {
    /// Upper bound on strokes per mask; the count is drawn from `1..=num_strokes`.
    pub num_strokes: usize,
    pub max_vertices: usize,
    /// Inclusive brush diameter range in pixels.
    pub brush_width_range: [u32; 2],
    /// Largest direction change between consecutive segments, radians.
    pub angle_range: f32,
    /// Segment length range as a fraction of `min(H, W)`.
    pub segment_length: [f32; 2],
}

impl MaskParams {
    /// Defaults with brush widths proportional to `min(height, width)`.
    pub fn for_size(height: usize, width: usize) -> Self {
        let s = height.min(width) as f32;
        Self {
            num_strokes: 4,
            max_vertices: 6,
            brush_width_range: [((s / 26.0).round() as u32).max(1), ((s / 8.0).round() as u32).max(2)],
            angle_range: 2.0 * PI / 5.0,
            segment_length: [0.1, 0.3],
        }
    }

    /// Thin strokes used to simulate sparse color hints.
    pub fn color_strokes(height: usize, width: usize) -> Self {
        let s = height.min(width) as f32;
        let w = ((s / 40.0).round() as u32).max(1);
        Self { num_strokes: 4, max_vertices: 4, brush_width_range: [w, 2 * w], angle_range: PI / 4.0, segment_length: [0.1, 0.3] }
    }

    fn validate(&self, height: usize, width: usize) -> Result<()> {
        let [lo, hi] = self.brush_width_range;
        if height == 0 || width == 0 {
            return Err(Error::invalid("mask dimensions must be positive"));
        }
        if lo == 0 || lo > hi {
            return Err(Error::invalid(format!("brush width range [{lo}, {hi}] is empty")));
        }
        if hi as usize >= height.min(width) {
            return Err(Error::invalid(format!("brush width {hi} not below min(H, W) = {}", height.min(width))));
        }
        if self.max_vertices == 0 {
            return Err(Error::invalid("max_vertices must be at least 1"));
        }
        if !(self.angle_range.is_finite() && self.angle_range >= 0.0) {
            return Err(Error::invalid("angle_range must be finite and non-negative"));
        }
        let [a, b] = self.segment_length;
        if !(a > 0.0 && a <= b && b.is_finite()) {
            return Err(Error::invalid(format!("segment length range [{a}, {b}] invalid")));
        }
        Ok(())
    }
}

impl Default for MaskParams {
    fn default() -> Self {
        Self::for_size(512, 320)
    }
}

/// Sets every pixel within `radius` of segment `p0→p1`.
fn stamp_segment(values: &mut [u8], h: usize, w: usize, p0: (f32, f32), p1: (f32, f32), radius: f32) {
    let (y0, x0) = p0;
    let (y1, x1) = p1;
    let ymin = (y0.min(y1) - radius).floor().max(0.0) as usize;
    let ymax = ((y0.max(y1) + radius).ceil() as usize).min(h - 1);
    let xmin = (x0.min(x1) - radius).floor().max(0.0) as usize;
    let xmax = ((x0.max(x1) + radius).ceil() as usize).min(w - 1);
    let (dy, dx) = (y1 - y0, x1 - x0);
    let len2 = dy * dy + dx * dx;
    let r2 = radius * radius;
    for y in ymin..=ymax {
        for x in xmin..=xmax {
            let (py, px) = (y as f32 + 0.5 - y0, x as f32 + 0.5 - x0);
            let t = if len2 > 0.0 { ((py * dy + px * dx) / len2).clamp(0.0, 1.0) } else { 0.0 };
            let (ey, ex) = (py - t * dy, px - t * dx);
            if ey * ey + ex * ex <= r2 {
                values[y * w + x] = 1;
            }
        }
    }
}

fn draw_strokes(h: usize, w: usize, p: &MaskParams, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let mut values = vec![0u8; h * w];
    if p.num_strokes == 0 {
        return values;
    }
    let side = h.min(w) as f32;
    let strokes = rng.random_range(1..=p.num_strokes);
    for _ in 0..strokes {
        let mut pos = (rng.random_range(0.0..h as f32), rng.random_range(0.0..w as f32));
        let mut angle = rng.random_range(0.0..2.0 * PI);
        let radius = rng.random_range(p.brush_width_range[0]..=p.brush_width_range[1]) as f32 / 2.0;
        for _ in 0..rng.random_range(1..=p.max_vertices) {
            if p.angle_range > 0.0 {
                angle += rng.random_range(-p.angle_range..=p.angle_range);
            }
            let len = side * rng.random_range(p.segment_length[0]..=p.segment_length[1]);
            let next = (
                (pos.0 + len * angle.sin()).clamp(0.0, h as f32 - 1.0),
                (pos.1 + len * angle.cos()).clamp(0.0, w as f32 - 1.0),
            );
            stamp_segment(&mut values, h, w, pos, next, radius);
            pos = next;
        }
    }
    values
}

/// Free-form edit mask whose coverage lies in `[0.05, 0.5]`. Draws are
/// repeated from the same seeded stream until the bound holds.
pub fn generate_freeform_mask(height: usize, width: usize, seed: u64, params: &MaskParams) -> Result<BinaryMask> {
    params.validate(height, width)?;
    if params.num_strokes == 0 {
        return Err(Error::invalid("num_strokes = 0 cannot reach the minimum mask coverage"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_ATTEMPTS {
        let values = draw_strokes(height, width, params, &mut rng);
        let coverage = values.iter().map(|&v| v as f64).sum::<f64>() / values.len() as f64;
        if (MIN_COVERAGE..=MAX_COVERAGE).contains(&coverage) {
            return BinaryMask::new(height, width, MaskKind::Edit, values);
        }
    }
    Err(Error::invalid(format!(
        "no mask with coverage in [{MIN_COVERAGE}, {MAX_COVERAGE}] after {MAX_ATTEMPTS} draws; adjust stroke parameters"
    )))
}

/// Unconstrained stroke mask (e.g. sparse color hints).
pub fn generate_strokes(height: usize, width: usize, seed: u64, params: &MaskParams) -> Result<BinaryMask> {
    params.validate(height, width)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    BinaryMask::new(height, width, MaskKind::Stroke, draw_strokes(height, width, params, &mut rng))
}
