//! Procedural person-like images with exact parsing labels, used for toy
//! training runs, tests and demos when no real dataset is at hand.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::io::{save_image, save_parsing, write_manifest, ManifestEntry};
use super::{Image, ParsingMap, DEFAULT_NUM_CLASSES};
use crate::error::{Error, Result};

const HAIR: u8 = 2;
const UPPER: u8 = 5;
const PANTS: u8 = 9;
const SKIRT: u8 = 12;
const FACE: u8 = 13;
const LEFT_ARM: u8 = 14;
const RIGHT_ARM: u8 = 15;
const LEFT_LEG: u8 = 16;
const RIGHT_LEG: u8 = 17;
const LEFT_SHOE: u8 = 18;
const RIGHT_SHOE: u8 = 19;

enum Shape {
    Ellipse { cy: f32, cx: f32, ry: f32, rx: f32 },
    Rect { y0: f32, y1: f32, x0: f32, x1: f32 },
}

impl Shape {
    fn contains(&self, y: f32, x: f32) -> bool {
        match *self {
            Shape::Ellipse { cy, cx, ry, rx } => ((y - cy) / ry).powi(2) + ((x - cx) / rx).powi(2) <= 1.0,
            Shape::Rect { y0, y1, x0, x1 } => (y0..y1).contains(&y) && (x0..x1).contains(&x),
        }
    }
}

fn random_color(rng: &mut ChaCha8Rng) -> [f32; 3] {
    [rng.random_range(-0.9..0.9), rng.random_range(-0.9..0.9), rng.random_range(-0.9..0.9)]
}

fn skin(rng: &mut ChaCha8Rng) -> [f32; 3] {
    let t: f32 = rng.random_range(0.0..1.0);
    [0.8 - 0.5 * t, 0.45 - 0.5 * t, 0.2 - 0.5 * t]
}

/// One `height×width` person image and its parsing map.
pub fn person(height: usize, width: usize, seed: u64) -> Result<(Image, ParsingMap)> {
    if height < 16 || width < 16 {
        return Err(Error::invalid(format!("synthetic person needs at least 16x16, got {height}x{width}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (height as f32, width as f32);
    let cx = w * rng.random_range(0.42..0.58);
    let scale = rng.random_range(0.9..1.05);
    let head_ry = 0.075 * h * scale;
    let head_rx = 0.11 * w * scale;
    let head_cy = 0.05 * h + head_ry * 1.2;
    let torso_top = head_cy + head_ry * 1.05;
    let torso_half = w * rng.random_range(0.15..0.2) * scale;
    let waist = torso_top + 0.3 * h * scale;
    let hem = waist + 0.22 * h * scale;
    let feet = (hem + 0.17 * h).min(0.93 * h);
    let arm_w = 0.07 * w * scale;
    let leg_gap = 0.02 * w;
    let skirt = rng.random_bool(0.35);

    let skin_color = skin(&mut rng);
    let mut colors = [[0.0f32; 3]; DEFAULT_NUM_CLASSES];
    for c in colors.iter_mut() {
        *c = random_color(&mut rng);
    }
    for l in [FACE, LEFT_ARM, RIGHT_ARM, LEFT_LEG, RIGHT_LEG] {
        colors[l as usize] = skin_color;
    }
    colors[HAIR as usize] = [rng.random_range(-0.9..-0.2), rng.random_range(-0.95..-0.5), rng.random_range(-1.0..-0.6)];
    let shoe = random_color(&mut rng);
    colors[LEFT_SHOE as usize] = shoe;
    colors[RIGHT_SHOE as usize] = shoe;
    let bg_top = random_color(&mut rng);
    let bg_bottom = random_color(&mut rng);

    // painter's order: later shapes overwrite earlier ones
    let mut layers: Vec<(u8, Shape)> = vec![
        (LEFT_LEG, Shape::Rect { y0: waist, y1: feet, x0: cx - torso_half * 0.8, x1: cx - leg_gap }),
        (RIGHT_LEG, Shape::Rect { y0: waist, y1: feet, x0: cx + leg_gap, x1: cx + torso_half * 0.8 }),
        (LEFT_SHOE, Shape::Rect { y0: feet, y1: feet + 0.04 * h, x0: cx - torso_half * 0.95, x1: cx - leg_gap }),
        (RIGHT_SHOE, Shape::Rect { y0: feet, y1: feet + 0.04 * h, x0: cx + leg_gap, x1: cx + torso_half * 0.95 }),
    ];
    if skirt {
        layers.push((SKIRT, Shape::Rect { y0: waist - 0.02 * h, y1: waist + 0.16 * h, x0: cx - torso_half * 1.15, x1: cx + torso_half * 1.15 }));
    } else {
        layers.push((PANTS, Shape::Rect { y0: waist - 0.02 * h, y1: hem, x0: cx - torso_half * 0.85, x1: cx - leg_gap }));
        layers.push((PANTS, Shape::Rect { y0: waist - 0.02 * h, y1: hem, x0: cx + leg_gap, x1: cx + torso_half * 0.85 }));
        layers.push((PANTS, Shape::Rect { y0: waist - 0.02 * h, y1: waist + 0.05 * h, x0: cx - torso_half * 0.85, x1: cx + torso_half * 0.85 }));
    }
    let arm_end = torso_top + 0.33 * h * scale;
    layers.extend([
        (LEFT_ARM, Shape::Rect { y0: torso_top + 0.02 * h, y1: arm_end, x0: cx - torso_half - arm_w, x1: cx - torso_half }),
        (RIGHT_ARM, Shape::Rect { y0: torso_top + 0.02 * h, y1: arm_end, x0: cx + torso_half, x1: cx + torso_half + arm_w }),
        (UPPER, Shape::Rect { y0: torso_top, y1: waist, x0: cx - torso_half, x1: cx + torso_half }),
        (HAIR, Shape::Ellipse { cy: head_cy - 0.2 * head_ry, cx, ry: head_ry * 1.1, rx: head_rx * 1.15 }),
        (FACE, Shape::Ellipse { cy: head_cy + 0.15 * head_ry, cx, ry: head_ry * 0.85, rx: head_rx * 0.85 }),
    ]);

    let phase: f32 = rng.random_range(0.0..std::f32::consts::TAU);
    let n = height * width;
    let mut labels = vec![0u8; n];
    let mut data = vec![0.0f32; 3 * n];
    for y in 0..height {
        for x in 0..width {
            let (fy, fx) = (y as f32 + 0.5, x as f32 + 0.5);
            let label = layers.iter().rev().find(|(_, s)| s.contains(fy, fx)).map_or(0, |(l, _)| *l);
            let i = y * width + x;
            labels[i] = label;
            let t = fy / h;
            let rgb: [f32; 3] = if label == 0 {
                std::array::from_fn(|c| bg_top[c] * (1.0 - t) + bg_bottom[c] * t)
            } else {
                let shade = 0.08 * (std::f32::consts::TAU * 2.0 * t + phase).sin() + 0.05 * (fx / w - 0.5);
                std::array::from_fn(|c| colors[label as usize][c] + shade)
            };
            for c in 0..3 {
                data[c * n + i] = rgb[c];
            }
        }
    }
    Ok((Image::from_planar(height, width, data)?, ParsingMap::new(height, width, DEFAULT_NUM_CLASSES, labels)?))
}

/// `count` persons with seeds `seed, seed+1, …`.
pub fn dataset(count: usize, height: usize, width: usize, seed: u64) -> Result<Vec<(Image, ParsingMap)>> {
    (0..count as u64).map(|i| person(height, width, seed.wrapping_add(i))).collect()
}

/// Writes a dataset as PNG pairs plus `manifest.jsonl` under `dir`; returns
/// the manifest path.
pub fn write_dataset(dir: &Path, count: usize, height: usize, width: usize, seed: u64) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(count);
    for (i, (image, parsing)) in dataset(count, height, width, seed)?.into_iter().enumerate() {
        let image_path = PathBuf::from(format!("image_{i:04}.png"));
        let parsing_path = PathBuf::from(format!("parsing_{i:04}.png"));
        save_image(&image, &dir.join(&image_path))?;
        save_parsing(&parsing, &dir.join(&parsing_path))?;
        entries.push(ManifestEntry { image_path, parsing_path });
    }
    let manifest = dir.join("manifest.jsonl");
    write_manifest(&manifest, &entries)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn persons_have_every_core_part() {
        let (image, parsing) = person(96, 64, 5).unwrap();
        assert_eq!(image.dims(), (96, 64));
        for label in [0, HAIR, FACE, UPPER, LEFT_ARM, RIGHT_LEG] {
            assert!(parsing.labels().contains(&label), "label {label} missing");
        }
        assert_ne!(person(96, 64, 6).unwrap().0, image);
    }
}
