use fegan_core::data::{BinaryMask, Image, MaskKind};
use fegan_core::metrics::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(h: usize, w: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_planar(h, w, (0..3 * h * w).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn gray(h: usize, w: usize, unit_value: f32) -> Image {
    Image::filled(h, w, [2.0 * unit_value - 1.0; 3])
}

#[test]
fn psnr_closed_forms() {
    let a = random_image(8, 8, 1);
    assert_eq!(psnr(&a, &a).unwrap(), 100.0);
    let db = psnr(&gray(6, 5, 0.3), &gray(6, 5, 0.4)).unwrap();
    assert!((db - 20.0).abs() < 1e-5, "{db}");
    assert_eq!(psnr(&a, &random_image(8, 9, 1)).unwrap_err().code(), "invalid_argument");
}

#[test]
fn psnr_matches_scalar_mse() {
    let a = random_image(7, 9, 2);
    let b = random_image(7, 9, 3);
    let mut mse = 0.0;
    for c in 0..3 {
        for y in 0..7 {
            for x in 0..9 {
                let d = (a.get(c, y, x) as f64 - b.get(c, y, x) as f64) / 2.0;
                mse += d * d;
            }
        }
    }
    mse /= (3 * 7 * 9) as f64;
    assert!((psnr(&a, &b).unwrap() - 10.0 * (1.0 / mse).log10()).abs() < 1e-9);
}

#[test]
fn masked_psnr_only_sees_the_mask() {
    let a = random_image(6, 6, 4);
    let mut b = a.clone();
    let mut values = vec![0u8; 36];
    values[7] = 1;
    let m = BinaryMask::new(6, 6, MaskKind::Edit, values).unwrap();
    for c in 0..3 {
        b.set(c, 1, 1, (a.get(c, 1, 1) + 0.2).min(1.0) - 0.4 * f32::from(a.get(c, 1, 1) > 0.8));
        b.set(c, 4, 4, -a.get(c, 4, 4));
    }
    let want = {
        let mut s = 0.0;
        for c in 0..3 {
            let d = (a.get(c, 1, 1) as f64 - b.get(c, 1, 1) as f64) / 2.0;
            s += d * d;
        }
        10.0 * (3.0 / s).log10()
    };
    assert!((masked_psnr(&a, &b, &m).unwrap() - want).abs() < 1e-9);
    assert_eq!(masked_psnr(&a, &b, &BinaryMask::zeros(6, 6, MaskKind::Edit)).unwrap(), 100.0);
}

/// Direct 2-D Gaussian window evaluation of mean SSIM.
fn ssim_oracle(a: &Image, b: &Image) -> f64 {
    let (h, w) = a.dims();
    let la = a.luminance();
    let lb = b.luminance();
    let r = 5i64;
    let mut weights = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            weights.push((-((dy * dy + dx * dx) as f64) / (2.0 * 1.5 * 1.5)).exp());
        }
    }
    let s: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|v| *v /= s);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    let mut count = 0;
    for cy in 5..h - 5 {
        for cx in 5..w - 5 {
            let (mut ux, mut uy, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            let mut k = 0;
            for y in cy - 5..=cy + 5 {
                for x in cx - 5..=cx + 5 {
                    let (p, q) = (la[y * w + x] as f64, lb[y * w + x] as f64);
                    let wt = weights[k];
                    k += 1;
                    ux += wt * p;
                    uy += wt * q;
                    xx += wt * p * p;
                    yy += wt * q * q;
                    xy += wt * p * q;
                }
            }
            let (vx, vy, cov) = (xx - ux * ux, yy - uy * uy, xy - ux * uy);
            total += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    total / count as f64
}

#[test]
fn ssim_cases() {
    let a = random_image(16, 14, 5);
    let b = random_image(16, 14, 6);
    assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
    assert!((ssim(&a, &b).unwrap() - ssim_oracle(&a, &b)).abs() < 1e-9);
    let (u1, u2) = (0.2f64, 0.4f64);
    let c1 = 0.01f64.powi(2);
    let want = (2.0 * u1 * u2 + c1) / (u1 * u1 + u2 * u2 + c1);
    let got = ssim(&gray(12, 12, 0.2), &gray(12, 12, 0.4)).unwrap();
    assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    assert_eq!(ssim(&random_image(10, 20, 1), &random_image(10, 20, 2)).unwrap_err().code(), "invalid_argument");
}

#[test]
fn gaussian_window_is_normalised_and_symmetric() {
    let k = gaussian_window(11, 1.5);
    assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    for i in 0..5 {
        assert_eq!(k[i], k[10 - i]);
    }
}

fn stats(mean: &[f64], cov: &[f64]) -> GaussianStats {
    GaussianStats::new(mean.to_vec(), cov.to_vec()).unwrap()
}

fn random_psd(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    let m = &a * a.transpose();
    (0..d * d).map(|i| m[(i / d, i % d)]).collect()
}

/// Trace of `(AB)^{1/2}` by Denman–Beavers iteration on the product.
fn trace_sqrt_product(a: &[f64], b: &[f64], d: usize) -> f64 {
    let m = DMatrix::from_row_slice(d, d, a) * DMatrix::from_row_slice(d, d, b);
    let mut y = m.clone();
    let mut z = DMatrix::<f64>::identity(d, d);
    for _ in 0..100 {
        let yi = y.clone().try_inverse().unwrap();
        let zi = z.clone().try_inverse().unwrap();
        let ny = (&y + zi) * 0.5;
        z = (&z + yi) * 0.5;
        y = ny;
    }
    y.trace()
}

#[test]
fn frechet_distance_cases() {
    let s = stats(&[0.5, -1.0], &[2.0, 0.3, 0.3, 1.0]);
    assert!(frechet_distance(&s, &s).unwrap().abs() < 1e-10);
    let one = frechet_distance(&stats(&[0.0], &[1.0]), &stats(&[2.0], &[4.0])).unwrap();
    assert!((one - 5.0).abs() < 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let (c1, c2) = (random_psd(3, &mut rng), random_psd(3, &mut rng));
        let m1: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let m2: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let (s1, s2) = (stats(&m1, &c1), stats(&m2, &c2));
        let dm: f64 = m1.iter().zip(&m2).map(|(a, b)| (a - b).powi(2)).sum();
        let tr = |c: &[f64]| c[0] + c[4] + c[8];
        let want = dm + tr(&c1) + tr(&c2) - 2.0 * trace_sqrt_product(&c1, &c2, 3);
        let got = frechet_distance(&s1, &s2).unwrap();
        assert!((got - want).abs() < 1e-6 * want.abs().max(1.0), "{got} vs {want}");
        assert!((got - frechet_distance(&s2, &s1).unwrap()).abs() < 1e-8);
    }
}

#[test]
fn frechet_rejects_bad_statistics() {
    let neg = stats(&[0.0, 0.0], &[1.0, 0.0, 0.0, -0.5]);
    let ok = stats(&[0.0, 0.0], &[1.0, 0.0, 0.0, 1.0]);
    assert_eq!(frechet_distance(&neg, &ok).unwrap_err().code(), "invalid_argument");
    assert_eq!(frechet_distance(&ok, &stats(&[0.0], &[1.0])).unwrap_err().code(), "invalid_argument");
    assert!(GaussianStats::new(vec![0.0, 0.0], vec![1.0, 0.5, 0.0, 1.0]).is_err());
    // tiny negative rounding is clipped
    let nearly = stats(&[0.0, 0.0], &[1.0, 0.0, 0.0, -1e-12]);
    assert!(frechet_distance(&nearly, &ok).is_ok());
}

#[test]
fn sample_statistics() {
    let rows = vec![vec![1.0, 2.0], vec![3.0, 2.0], vec![2.0, 5.0]];
    let s = GaussianStats::from_samples(&rows).unwrap();
    assert_eq!(s.mean, vec![2.0, 3.0]);
    assert_eq!(s.cov, vec![1.0, -0.0, -0.0, 3.0]);
}

#[test]
fn report_means_are_arithmetic_means() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let images: Vec<ImageMetrics> = (0..7)
        .map(|i| ImageMetrics {
            name: format!("img{i}"),
            psnr: rng.random_range(10.0..40.0),
            ssim: rng.random_range(0.0..1.0),
            masked_psnr: rng.random_range(10.0..40.0),
        })
        .collect();
    let report = MetricsReport::from_images(images.clone(), None);
    let mut sum = 0.0;
    for m in &images {
        sum += m.psnr;
    }
    assert!((report.mean_psnr - sum / 7.0).abs() < 1e-12);
    assert!((report.mean_ssim - images.iter().map(|m| m.ssim).sum::<f64>() / 7.0).abs() < 1e-12);
    let json = serde_json::to_string(&report).unwrap();
    assert_eq!(serde_json::from_str::<MetricsReport>(&json).unwrap(), report);
}

proptest! {
    #[test]
    fn psnr_falls_as_noise_grows(seed in any::<u64>(), a1 in 0.01f32..0.2, step in 0.01f32..0.2) {
        let base = Image::from_planar(6, 6, random_image(6, 6, seed).data().iter().map(|v| v * 0.5).collect()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 5);
        let signs: Vec<f32> = (0..108).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
        let noisy = |amp: f32| Image::from_planar(6, 6, base.data().iter().zip(&signs).map(|(v, s)| v + s * amp).collect()).unwrap();
        let p1 = psnr(&base, &noisy(a1)).unwrap();
        let p2 = psnr(&base, &noisy(a1 + step)).unwrap();
        prop_assert!(p2 < p1);
    }

    #[test]
    fn frechet_is_symmetric_and_zero_only_on_equal(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c1, c2) = (random_psd(2, &mut rng), random_psd(2, &mut rng));
        let s1 = stats(&[rng.random_range(-1.0..1.0), 0.0], &c1);
        let s2 = stats(&[0.0, rng.random_range(-1.0..1.0)], &c2);
        let d12 = frechet_distance(&s1, &s2).unwrap();
        prop_assert!((d12 - frechet_distance(&s2, &s1).unwrap()).abs() < 1e-8 * d12.max(1.0));
        prop_assert!(frechet_distance(&s1, &s1).unwrap() < 1e-8);
        prop_assert!(d12 >= 0.0);
    }
}
