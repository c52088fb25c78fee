//! Image quality metrics: PSNR, SSIM and the Fréchet distance between
//! Gaussian feature statistics.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::data::{BinaryMask, Image};
use crate::error::{Error, Result};

pub const PSNR_CAP_DB: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const EIGEN_CLIP: f64 = 1e-8;

fn unit(v: f32) -> f64 {
    (v as f64 + 1.0) / 2.0
}

fn check_pair(a: &Image, b: &Image) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::invalid(format!("image sizes differ: {:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

fn psnr_from_mse(mse: f64) -> f64 {
    if mse < 1e-10 {
        PSNR_CAP_DB
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
    }
}

/// PSNR in dB of two `[-1, 1]` images after mapping both to `[0, 1]`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.data().len() as f64;
    let mse = a.data().iter().zip(b.data()).map(|(&x, &y)| (unit(x) - unit(y)).powi(2)).sum::<f64>() / n;
    Ok(psnr_from_mse(mse))
}

/// PSNR restricted to pixels inside `mask` (all channels). An empty mask
/// gives the cap.
pub fn masked_psnr(a: &Image, b: &Image, mask: &BinaryMask) -> Result<f64> {
    check_pair(a, b)?;
    if mask.dims() != a.dims() {
        return Err(Error::invalid(format!("mask {:?} does not match image {:?}", mask.dims(), a.dims())));
    }
    let plane = mask.values().len();
    let (mut sum, mut count) = (0.0, 0usize);
    for (i, (&x, &y)) in a.data().iter().zip(b.data()).enumerate() {
        if mask.values()[i % plane] != 0 {
            sum += (unit(x) - unit(y)).powi(2);
            count += 1;
        }
    }
    Ok(if count == 0 { PSNR_CAP_DB } else { psnr_from_mse(sum / count as f64) })
}

/// Normalised 1-D Gaussian of `size` taps.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Valid-mode separable filtering of a `h×w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = k.iter().enumerate().map(|(i, &kv)| kv * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k.iter().enumerate().map(|(i, &kv)| kv * rows[(y + i) * ow + x]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean SSIM over all valid 11×11 windows of the luminance of two images
/// (Gaussian window σ = 1.5, K1 = 0.01, K2 = 0.03, dynamic range 1).
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_pair(a, b)?;
    let (h, w) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!("ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}")));
    }
    let x: Vec<f64> = a.luminance().into_iter().map(f64::from).collect();
    let y: Vec<f64> = b.luminance().into_iter().map(f64::from).collect();
    let k = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
    let (mx, _, _) = filter_valid(&x, h, w, &k);
    let (my, _, _) = filter_valid(&y, h, w, &k);
    let (mxx, _, _) = filter_valid(&prod(&x, &x), h, w, &k);
    let (myy, _, _) = filter_valid(&prod(&y, &y), h, w, &k);
    let (mxy, _, _) = filter_valid(&prod(&x, &y), h, w, &k);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = mxx[i] - ux * ux;
            let vy = myy[i] - uy * uy;
            let cxy = mxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / mx.len() as f64)
}

/// Mean vector and covariance of a feature distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianStats {
    pub mean: Vec<f64>,
    /// Row-major `D×D`.
    pub cov: Vec<f64>,
}

impl GaussianStats {
    pub fn new(mean: Vec<f64>, cov: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 || cov.len() != d * d {
            return Err(Error::invalid(format!("covariance of {} entries for dimension {d}", cov.len())));
        }
        for i in 0..d {
            for j in 0..i {
                let (a, b) = (cov[i * d + j], cov[j * d + i]);
                if (a - b).abs() > 1e-9 * (1.0 + a.abs().max(b.abs())) {
                    return Err(Error::invalid("covariance is not symmetric"));
                }
            }
        }
        Ok(Self { mean, cov })
    }

    /// Sample mean and unbiased covariance of feature rows.
    pub fn from_samples(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n < 2 {
            return Err(Error::invalid("need at least two samples"));
        }
        let d = rows[0].len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::invalid("feature rows have different lengths"));
        }
        let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
        let mut cov = vec![0.0; d * d];
        for r in rows {
            for i in 0..d {
                for j in 0..d {
                    cov[i * d + j] += (r[i] - mean[i]) * (r[j] - mean[j]);
                }
            }
        }
        cov.iter_mut().for_each(|c| *c /= (n - 1) as f64);
        Self::new(mean, cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim(), self.dim(), &self.cov)
    }
}

/// Symmetric PSD square root; eigenvalues in `[-1e-8, 0)` are clipped, more
/// negative ones are an error.
fn psd_sqrt(m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(m);
    let scale = eig.eigenvalues.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < -EIGEN_CLIP * scale {
            return Err(Error::invalid(format!("matrix is not positive semidefinite (eigenvalue {v:.3e})")));
        }
        *v = v.max(0.0).sqrt();
    }
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose())
}

/// `|μ1 − μ2|² + Tr(Σ1 + Σ2 − 2(Σ1Σ2)^{1/2})`.
///
/// The cross term uses `Tr((Σ1Σ2)^{1/2}) = Tr((√Σ1 Σ2 √Σ1)^{1/2})`, which
/// only needs symmetric square roots.
pub fn frechet_distance(s1: &GaussianStats, s2: &GaussianStats) -> Result<f64> {
    if s1.dim() != s2.dim() {
        return Err(Error::invalid(format!("dimensions differ: {} vs {}", s1.dim(), s2.dim())));
    }
    let (a, b) = (s1.matrix(), s2.matrix());
    let ra = psd_sqrt(a.clone())?;
    psd_sqrt(b.clone())?;
    let inner = &ra * &b * &ra;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross = psd_sqrt(inner)?.trace();
    let dm = DVector::from_row_slice(&s1.mean) - DVector::from_row_slice(&s2.mean);
    Ok((dm.norm_squared() + a.trace() + b.trace() - 2.0 * cross).max(0.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
    /// PSNR inside the edit mask.
    pub masked_psnr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub images: Vec<ImageMetrics>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_masked_psnr: f64,
    pub fid: Option<f64>,
}

impl MetricsReport {
    pub fn from_images(images: Vec<ImageMetrics>, fid: Option<f64>) -> Self {
        let n = images.len().max(1) as f64;
        let mean = |f: fn(&ImageMetrics) -> f64| images.iter().map(f).sum::<f64>() / n;
        Self { mean_psnr: mean(|m| m.psnr), mean_ssim: mean(|m| m.ssim), mean_masked_psnr: mean(|m| m.masked_psnr), fid, images }
    }
}
