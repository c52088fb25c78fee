//! Canny edge detection on image luminance.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{BinaryMask, Image, MaskKind};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CannyParams {
    /// Hysteresis thresholds on the gradient magnitude of `[0, 1]` luminance.
    pub low: f32,
    pub high: f32,
    /// Standard deviation of the Gaussian pre-blur, in pixels.
    pub sigma: f32,
}

impl Default for CannyParams {
    fn default() -> Self {
        Self { low: 0.1, high: 0.2, sigma: 1.0 }
    }
}

/// Replicate-padded separable convolution of an H×W plane.
fn separable(src: &[f32], h: usize, w: usize, kx: &[f32], ky: &[f32]) -> Vec<f32> {
    let rx = (kx.len() / 2) as isize;
    let ry = (ky.len() / 2) as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = kx.iter().enumerate().map(|(i, &k)| k * src[y * w + clamp(x as isize + i as isize - rx, w)]).sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = ky.iter().enumerate().map(|(i, &k)| k * tmp[clamp(y as isize + i as isize - ry, h) * w + x]).sum();
        }
    }
    out
}

fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f32> = (-r..=r).map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f32 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Gradient components of a plane: Sobel responses scaled by 1/4, so a unit
/// luminance ramp of slope `s` per pixel reads as `2s`.
pub(crate) fn sobel(src: &[f32], h: usize, w: usize) -> (Vec<f32>, Vec<f32>) {
    let gx = separable(src, h, w, &[-0.5, 0.0, 0.5], &[0.25, 0.5, 0.25]);
    let gy = separable(src, h, w, &[0.25, 0.5, 0.25], &[-0.5, 0.0, 0.5]);
    (gx.into_iter().map(|v| v * 2.0).collect(), gy.into_iter().map(|v| v * 2.0).collect())
}

/// Binary edge map of `image` (1 on edges).
pub fn extract_sketch(image: &Image, params: &CannyParams) -> Result<BinaryMask> {
    let CannyParams { low, high, sigma } = *params;
    if !(0.0 <= low && low < high) {
        return Err(Error::invalid(format!("canny thresholds need 0 <= low < high, got low={low} high={high}")));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("canny sigma must be non-negative, got {sigma}")));
    }
    let (h, w) = image.dims();
    let g = gaussian_kernel(sigma);
    let blurred = separable(&image.luminance(), h, w, &g, &g);
    let (gx, gy) = sobel(&blurred, h, w);
    let mag: Vec<f32> = gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).collect();

    // non-maximum suppression along the quantised gradient direction; the
    // forward neighbour must be strictly smaller so plateaus keep one pixel
    let at = |y: isize, x: isize| -> f32 {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0.0
        } else {
            mag[y as usize * w + x as usize]
        }
    };
    let mut thin = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let m = mag[i];
            if m < low {
                continue;
            }
            let angle = gy[i].atan2(gx[i]).to_degrees().rem_euclid(180.0);
            let (dy, dx) = match angle {
                a if !(22.5..157.5).contains(&a) => (0, 1),
                a if a < 67.5 => (1, 1),
                a if a < 112.5 => (1, 0),
                _ => (1, -1),
            };
            let (yi, xi) = (y as isize, x as isize);
            if m >= at(yi - dy, xi - dx) && m > at(yi + dy, xi + dx) {
                thin[i] = m;
            }
        }
    }

    let mut edges = vec![0u8; h * w];
    let mut queue: VecDeque<usize> = (0..h * w).filter(|&i| thin[i] >= high).collect();
    for &i in &queue {
        edges[i] = 1;
    }
    while let Some(i) = queue.pop_front() {
        let (y, x) = ((i / w) as isize, (i % w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (ny, nx) = (y + dy, x + dx);
                if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if edges[j] == 0 && thin[j] >= low {
                    edges[j] = 1;
                    queue.push_back(j);
                }
            }
        }
    }
    BinaryMask::new(h, w, MaskKind::Sketch, edges)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_is_normalised() {
        let k = gaussian_kernel(1.0);
        assert_eq!(k.len(), 7);
        assert!((k.iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn sobel_reads_ramp_slope() {
        let (h, w) = (5, 6);
        let ramp: Vec<f32> = (0..h * w).map(|i| 0.1 * (i % w) as f32).collect();
        let (gx, gy) = sobel(&ramp, h, w);
        assert!((gx[2 * w + 3] - 0.2).abs() < 1e-6);
        assert!(gy[2 * w + 3].abs() < 1e-6);
    }
}
