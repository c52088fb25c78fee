//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `cargo test -p fegan-cli --test acceptance -- [filter]` runs the criteria
//! whose name contains `filter`.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use common::*;
use fegan_cli::api::{EditOptions, EditRequest, EditResponse, HealthResponse};
use fegan_cli::service::{router, AppState, ServiceConfig};
use fegan_core::data::{compose_mask, BinaryMask, Image, MaskKind};
use fegan_core::gradcheck::{gradient_errors, FdOptions};
use fegan_core::layers::{channel_stats, Anl, DilatedResBlock, PartialConv2d, DEFAULT_EPS};
use fegan_core::losses::*;
use fegan_core::metrics::{frechet_distance, masked_psnr, psnr, ssim, GaussianStats};
use fegan_core::nn::{Bound, ParamStore};
use fegan_core::parser::parsing_loss;
use fegan_core::pipeline::EditModel;
use fegan_core::training::{parsing_accuracy, Stage, StepRecord, TrainConfig, Trainer};
use fegan_core::{Graph, Result as CoreResult, Tensor, Var};
use http_body_util::BodyExt;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tower::ServiceExt;

type Check = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(shape.to_vec(), 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(1.0)
}

fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>, stride: usize, pad: usize, dil: usize) -> Tensor<f64> {
    let (n, c, h, wd) = x.dims4();
    let (o, _, k, _) = w.dims4();
    let oh = (h + 2 * pad - dil * (k - 1) - 1) / stride + 1;
    let ow = (wd + 2 * pad - dil * (k - 1) - 1) / stride + 1;
    Tensor::from_fn([n, o, oh, ow], |i| {
        let (bn, oc, y, xx) = (i / (o * oh * ow), (i / (oh * ow)) % o, (i / ow) % oh, i % ow);
        let mut acc = b.map_or(0.0, |b| b.data()[oc]);
        for ic in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let iy = (y * stride + ky * dil) as isize - pad as isize;
                    let ix = (xx * stride + kx * dil) as isize - pad as isize;
                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                        acc += w.at4(oc, ic, ky, kx) * x.at4(bn, ic, iy as usize, ix as usize);
                    }
                }
            }
        }
        acc
    })
}

fn param(store: &ParamStore<f64>, name: &str) -> Tensor<f64> {
    store.get(store.find(name).unwrap()).clone()
}

fn max_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn mean_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

fn value<'g>(f: impl FnOnce(&'g Graph<f64>) -> CoreResult<Var<'g, f64>>, g: &'g Graph<f64>) -> f64 {
    f(g).unwrap().item()
}

struct Stub;

impl FeatureExtractor<f64> for Stub {
    fn perceptual_features<'g>(&self, x: &Var<'g, f64>) -> CoreResult<Vec<Var<'g, f64>>> {
        Ok(vec![x.clone(), x.avg_pool(2)?.relu()])
    }

    fn style_features<'g>(&self, x: &Var<'g, f64>) -> CoreResult<Vec<Var<'g, f64>>> {
        self.perceptual_features(x)
    }
}

fn pool_relu(x: &Tensor<f64>) -> Tensor<f64> {
    let (n, c, h, w) = x.dims4();
    Tensor::from_fn([n, c, h / 2, w / 2], |i| {
        let (b, ch, y, xx) = (i / (c * (h / 2) * (w / 2)), (i / ((h / 2) * (w / 2))) % c, (i / (w / 2)) % (h / 2), i % (w / 2));
        let s = x.at4(b, ch, 2 * y, 2 * xx) + x.at4(b, ch, 2 * y + 1, 2 * xx) + x.at4(b, ch, 2 * y, 2 * xx + 1) + x.at4(b, ch, 2 * y + 1, 2 * xx + 1);
        (s / 4.0).max(0.0)
    })
}

fn gram_oracle(f: &Tensor<f64>) -> Vec<f64> {
    let (n, c, h, w) = f.dims4();
    let mut out = Vec::new();
    for b in 0..n {
        for i in 0..c {
            for j in 0..c {
                let s: f64 = (0..h * w).map(|p| f.at4(b, i, p / w, p % w) * f.at4(b, j, p / w, p % w)).sum();
                out.push(s / (c * h * w) as f64);
            }
        }
    }
    out
}

fn tv_oracle(x: &Tensor<f64>, r: Option<&Tensor<f64>>) -> f64 {
    let (n, c, h, w) = x.dims4();
    let weight = |b: usize, y: usize, xx: usize| r.map_or(1.0, |r| r.at4(b, 0, y, xx));
    let (mut sx, mut sy) = (0.0, 0.0);
    for b in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    if xx + 1 < w {
                        sx += weight(b, y, xx) * (x.at4(b, ch, y, xx + 1) - x.at4(b, ch, y, xx)).abs();
                    }
                    if y + 1 < h {
                        sy += weight(b, y, xx) * (x.at4(b, ch, y + 1, xx) - x.at4(b, ch, y, xx)).abs();
                    }
                }
            }
        }
    }
    sx / (n * c * h * (w - 1)) as f64 + sy / (n * c * (h - 1) * w) as f64
}

fn unit(v: f32) -> f64 {
    (f64::from(v) + 1.0) / 2.0
}

fn ssim_oracle(a: &Image, b: &Image) -> f64 {
    let (h, w) = a.dims();
    let lum = |img: &Image, y: usize, x: usize| 0.299 * unit(img.get(0, y, x)) + 0.587 * unit(img.get(1, y, x)) + 0.114 * unit(img.get(2, y, x));
    let g: Vec<f64> = (0..11).map(|i| (-((i as f64 - 5.0).powi(2)) / (2.0 * 1.5 * 1.5)).exp()).collect();
    let norm: f64 = g.iter().sum::<f64>().powi(2);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    let mut count = 0;
    for y0 in 0..=h - 11 {
        for x0 in 0..=w - 11 {
            let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in 0..11 {
                for dx in 0..11 {
                    let k = g[dy] * g[dx] / norm;
                    let (p, q) = (lum(a, y0 + dy, x0 + dx), lum(b, y0 + dy, x0 + dx));
                    mx += k * p;
                    my += k * q;
                    xx += k * p * p;
                    yy += k * q * q;
                    xy += k * p * q;
                }
            }
            let (vx, vy, cxy) = (xx - mx * mx, yy - my * my, xy - mx * my);
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    total / count as f64
}

/// Frechet distance of 2-D Gaussians: for `A = Σ1Σ2` with positive
/// eigenvalues, `Tr √A = √(tr A + 2√det A)`.
fn frechet_2d(m1: [f64; 2], s1: [f64; 4], m2: [f64; 2], s2: [f64; 4]) -> f64 {
    let a = [s1[0] * s2[0] + s1[1] * s2[2], s1[0] * s2[1] + s1[1] * s2[3], s1[2] * s2[0] + s1[3] * s2[2], s1[2] * s2[1] + s1[3] * s2[3]];
    let det = a[0] * a[3] - a[1] * a[2];
    let tr_sqrt = (a[0] + a[3] + 2.0 * det.sqrt()).sqrt();
    (m1[0] - m2[0]).powi(2) + (m1[1] - m2[1]).powi(2) + s1[0] + s1[3] + s2[0] + s2[3] - 2.0 * tr_sqrt
}

fn random_image(h: usize, w: usize, seed: u64) -> Image {
    let t = Tensor::<f64>::randn([3 * h * w], 0.5, &mut ChaCha8Rng::seed_from_u64(seed));
    Image::from_planar(h, w, t.data().iter().map(|&v| v.clamp(-1.0, 1.0) as f32).collect()).unwrap()
}

fn formula_suite() -> Check {
    let tol = 1e-6;
    let mut checked = 0;

    for mv in 0..16u8 {
        for fv in 0..16u8 {
            let bits = |v: u8| (0..4).map(|i| (v >> i) & 1).collect::<Vec<u8>>();
            let m = BinaryMask::new(2, 2, MaskKind::Edit, bits(mv)).unwrap();
            let f = BinaryMask::new(2, 2, MaskKind::Foreground, bits(fv)).unwrap();
            let got = compose_mask(&m, &f).unwrap();
            for i in 0..4 {
                ensure(got.values()[i] == (1 - bits(mv)[i]) * bits(fv)[i], || format!("compose_mask {mv:04b}/{fv:04b}"))?;
            }
        }
    }
    checked += 1;

    let x = randn(&[3, 4, 5, 6], 1).map(|v| 1.5 * v + 0.3);
    let (mu, sigma) = channel_stats(&x, DEFAULT_EPS);
    for c in 0..4 {
        let vals: Vec<f64> = (0..3).flat_map(|n| (0..30).map(move |p| (n, p))).map(|(n, p)| x.at4(n, c, p / 6, p % 6)).collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64;
        ensure((mu[c] - m).abs() < tol && (sigma[c] - (var + DEFAULT_EPS).sqrt()).abs() < tol, || format!("channel_stats c={c}"))?;
    }
    checked += 1;

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::<f64>::new();
    let anl = Anl::new(&mut store, "anl", 3, 4, 5, 2, 3, &mut rng);
    let (x, d) = (randn(&[2, 3, 6, 5], 3).map(|v| v * 2.0 - 0.4), randn(&[2, 4, 6, 5], 4));
    let g = Graph::new();
    let got = anl.forward(&store.bind(&g, false), &g.constant(x.clone()), &g.constant(d.clone())).unwrap().value().clone();
    let (mu, sigma) = channel_stats(&x, DEFAULT_EPS);
    let (n, c, h, w) = x.dims4();
    let x_hat = Tensor::from_fn([n, c, h, w], |i| (x.data()[i] - mu[(i / (h * w)) % c]) / sigma[(i / (h * w)) % c]);
    let conv = |inp: &Tensor<f64>, name: &str| {
        conv_oracle(inp, &param(&store, &format!("anl.{name}.weight")), Some(&param(&store, &format!("anl.{name}.bias"))), 1, 1, 1)
    };
    let e = conv(&d, "embed").map(|v| v.max(0.0));
    let alpha = conv(&e, "attention").map(|v| 1.0 / (1.0 + (-v).exp()));
    let beta = conv(&e, "bias");
    let modulated = Tensor::from_fn(x_hat.shape().to_vec(), |i| (alpha.data()[i] * x_hat.data()[i] + beta.data()[i]).max(0.0));
    let want = Tensor::concat(&[&conv(&modulated, "post"), &x_hat], 1).unwrap();
    ensure(max_diff(&got, &want) < tol, || format!("attention_normalize diff {:.2e}", max_diff(&got, &want)))?;
    checked += 1;

    let mut store = ParamStore::<f64>::new();
    let pconv = PartialConv2d::new(&mut store, "pc", 2, 3, 3, 1, &mut rng).unwrap();
    let x = randn(&[1, 2, 7, 6], 5);
    let mask = Tensor::from_fn([1, 1, 7, 6], |i| if (2..5).contains(&(i / 6)) && (1..5).contains(&(i % 6)) { 0.0 } else { 1.0 });
    let g = Graph::new();
    let (got, got_mask) = pconv.forward(&store.bind(&g, false), &g.constant(x.clone()), &mask).unwrap();
    let (wt, b) = (param(&store, "pc.weight"), param(&store, "pc.bias"));
    for oc in 0..3 {
        for y in 0..7 {
            for xx in 0..6 {
                let (mut raw, mut valid, mut area) = (0.0, 0.0, 0.0);
                for ky in 0..3 {
                    for kx in 0..3 {
                        let (iy, ix) = (y as isize + ky as isize - 1, xx as isize + kx as isize - 1);
                        if iy < 0 || ix < 0 || iy >= 7 || ix >= 6 {
                            continue;
                        }
                        let (iy, ix) = (iy as usize, ix as usize);
                        area += 1.0;
                        let m = mask.at4(0, 0, iy, ix);
                        valid += m;
                        for ic in 0..2 {
                            raw += wt.at4(oc, ic, ky, kx) * x.at4(0, ic, iy, ix) * m;
                        }
                    }
                }
                let want = if valid > 0.0 { raw * area / valid + b.data()[oc] } else { b.data()[oc] };
                ensure((got.value().at4(0, oc, y, xx) - want).abs() < tol, || format!("partial_conv at ({oc},{y},{xx})"))?;
                ensure(got_mask.at4(0, 0, y, xx) == f64::from(u8::from(valid > 0.0)), || "partial_conv mask update".into())?;
            }
        }
    }
    checked += 1;

    let (a, b) = (randn(&[2, 3, 4, 6], 6), randn(&[2, 3, 4, 6], 7));
    let m = Tensor::from_fn([2, 1, 4, 6], |i| f64::from(u8::from(i % 3 == 0)));
    let g = Graph::new();
    let (va, vb) = (g.constant(a.clone()), g.constant(b.clone()));
    let masked_l1 = {
        let mut s = 0.0;
        for i in 0..a.numel() {
            let (bn, rest) = (i / 72, i % 24);
            let mm = m.data()[bn * 24 + rest];
            s += (a.data()[i] * mm - b.data()[i] * mm).abs();
        }
        s / a.numel() as f64
    };
    ensure((mask_loss(&va, &vb, &m).unwrap().item() - masked_l1).abs() < tol, || "mask loss".into())?;
    ensure((region_l1_loss(&va, &vb, &m).unwrap().item() - masked_l1).abs() < tol, || "region loss".into())?;
    ensure((tv_loss(&va, None).unwrap().item() - tv_oracle(&a, None)).abs() < tol, || "tv loss".into())?;
    ensure((tv_loss(&va, Some(&m)).unwrap().item() - tv_oracle(&a, Some(&m))).abs() < tol, || "masked tv loss".into())?;
    let perceptual = mean_abs(a.data(), b.data()) + mean_abs(pool_relu(&a).data(), pool_relu(&b).data());
    ensure((perceptual_loss(&va, &vb, &Stub).unwrap().item() - perceptual).abs() < tol, || "perceptual loss".into())?;
    let style = mean_abs(&gram_oracle(&a), &gram_oracle(&b)) + mean_abs(&gram_oracle(&pool_relu(&a)), &gram_oracle(&pool_relu(&b)));
    ensure((style_loss(&va, &vb, &Stub).unwrap().item() - style).abs() < tol, || "style loss".into())?;
    let (r1, r2, f1, f2) = (randn(&[1, 2, 4, 4], 8), randn(&[1, 3, 2, 2], 9), randn(&[1, 2, 4, 4], 10), randn(&[1, 3, 2, 2], 11));
    let fm = feature_matching_loss(&[vec![g.constant(r1.clone()), g.constant(r2.clone())]], &[vec![g.constant(f1.clone()), g.constant(f2.clone())]]);
    let want = (mean_abs(r1.data(), f1.data()) + mean_abs(r2.data(), f2.data())) / 2.0;
    ensure((fm.unwrap().item() - want).abs() < tol, || "feature matching loss".into())?;
    let (real, fake) = (randn(&[2, 1, 3, 3], 12), randn(&[2, 1, 3, 3], 13));
    let mean = |t: &Tensor<f64>, f: fn(f64) -> f64| t.data().iter().map(|&v| f(v)).sum::<f64>() / t.numel() as f64;
    let cases = [
        (GanMode::Lsgan, mean(&fake, |v| (v - 1.0).powi(2)), 0.5 * mean(&real, |v| (v - 1.0).powi(2)) + 0.5 * mean(&fake, |v| v * v)),
        (GanMode::Hinge, -mean(&fake, |v| v), mean(&real, |v| (1.0 - v).max(0.0)) + mean(&fake, |v| (1.0 + v).max(0.0))),
    ];
    for (mode, gw, dw) in cases {
        let (gl, dl) = gan_losses(&[g.constant(real.clone())], &[g.constant(fake.clone())], mode).unwrap();
        ensure((gl.item() - gw).abs() < tol && (dl.item() - dw).abs() < tol, || format!("{mode:?} losses"))?;
    }
    let logits = randn(&[1, 4, 3, 3], 14);
    let labels: Vec<u8> = (0..9).map(|i| (i * 7 % 4) as u8).collect();
    let target = fegan_core::data::ParsingMap::new(3, 3, 4, labels.clone()).unwrap();
    let ce: f64 = (0..9)
        .map(|p| {
            let z: Vec<f64> = (0..4).map(|c| logits.at4(0, c, p / 3, p % 3)).collect();
            let lse = z.iter().map(|v| v.exp()).sum::<f64>().ln();
            lse - z[labels[p] as usize]
        })
        .sum::<f64>()
        / 9.0;
    ensure((value(|g| parsing_loss(&g.constant(logits.clone()), &[&target]), &g) - ce).abs() < tol, || "parsing loss".into())?;
    checked += 10;

    let (ia, ib) = (random_image(20, 17, 15), random_image(20, 17, 16));
    let mse = ia.data().iter().zip(ib.data()).map(|(&x, &y)| (unit(x) - unit(y)).powi(2)).sum::<f64>() / ia.data().len() as f64;
    ensure((psnr(&ia, &ib).unwrap() - 10.0 * (1.0 / mse).log10()).abs() < tol, || "psnr".into())?;
    let half = BinaryMask::new(20, 17, MaskKind::Edit, (0..340).map(|i| u8::from(i < 170)).collect()).unwrap();
    let mse_in = (0..3).flat_map(|c| (0..170).map(move |p| (c, p))).map(|(c, p)| (unit(ia.plane(c)[p]) - unit(ib.plane(c)[p])).powi(2)).sum::<f64>() / 510.0;
    ensure((masked_psnr(&ia, &ib, &half).unwrap() - 10.0 * (1.0 / mse_in).log10()).abs() < tol, || "masked psnr".into())?;
    let (s, so) = (ssim(&ia, &ib).unwrap(), ssim_oracle(&ia, &ib));
    ensure((s - so).abs() < tol, || format!("ssim {s} vs {so}"))?;
    let (m1, s1, m2, s2) = ([0.3, -1.2], [2.0, 0.4, 0.4, 1.0], [1.1, 0.5], [0.7, -0.2, -0.2, 1.5]);
    let fd = frechet_distance(&GaussianStats::new(m1.to_vec(), s1.to_vec()).unwrap(), &GaussianStats::new(m2.to_vec(), s2.to_vec()).unwrap()).unwrap();
    ensure((fd - frechet_2d(m1, s1, m2, s2)).abs() < tol, || format!("frechet {fd}"))?;
    checked += 4;
    Ok(format!("{checked} formulas within {tol:.0e} of scalar oracles"))
}

fn weighted_sum<'g>(g: &'g Graph<f64>, y: &Var<'g, f64>, seed: u64) -> CoreResult<Var<'g, f64>> {
    Ok(y.mul(&g.constant(randn(y.shape(), seed)))?.sum_all())
}

fn gradient_suite() -> Check {
    let opts = FdOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut worst = 0.0f64;
    let mut probes = 0;
    let mut live = 0;
    let mut check = |name: &str, inputs: &[Tensor<f64>], f: &dyn for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> CoreResult<Var<'g, f64>>| {
        let report = gradient_errors(inputs, opts, f).map_err(|e| format!("{name}: {e}"))?;
        for (i, e) in report.iter().enumerate() {
            if e.max_numeric > 1e-6 {
                worst = worst.max(e.relative);
                live += 1;
            }
            ensure(e.relative <= opts.tolerance || e.max_abs_diff <= e.noise_floor, || format!("{name} input {i}: relative error {:.2e}", e.relative))?;
        }
        probes += inputs.len();
        Ok::<(), String>(())
    };

    let mut store = ParamStore::<f64>::new();
    let anl = Anl::new(&mut store, "anl", 2, 3, 3, 2, 3, &mut rng);
    let mut inputs = vec![randn(&[2, 2, 4, 4], 21), randn(&[2, 3, 4, 4], 22)];
    inputs.extend(store.tensors());
    check("attention normalization", &inputs, &|g, v| {
        let p = Bound::from_vars(&store, v[2..].to_vec())?;
        weighted_sum(g, &anl.forward(&p, &v[0], &v[1])?, 1)
    })?;

    let mut store = ParamStore::<f64>::new();
    let pconv = PartialConv2d::new(&mut store, "pc", 2, 2, 3, 2, &mut rng).unwrap();
    let mask = Tensor::from_fn([1, 1, 6, 6], |i| f64::from(u8::from(!((1..4).contains(&(i / 6)) && (2..5).contains(&(i % 6))))));
    let mut inputs = vec![randn(&[1, 2, 6, 6], 23)];
    inputs.extend(store.tensors());
    check("partial convolution", &inputs, &|g, v| {
        let p = Bound::from_vars(&store, v[1..].to_vec())?;
        weighted_sum(g, &pconv.forward(&p, &v[0], &mask)?.0, 2)
    })?;

    let mut store = ParamStore::<f64>::new();
    let block = DilatedResBlock::new(&mut store, "res", 2, 2, &mut rng);
    let mut inputs = vec![randn(&[1, 2, 6, 6], 24)];
    inputs.extend(store.tensors());
    check("dilated residual block", &inputs, &|g, v| {
        let p = Bound::from_vars(&store, v[1..].to_vec())?;
        weighted_sum(g, &block.forward(&p, &v[0])?, 3)
    })?;

    let pair = [randn(&[1, 2, 4, 4], 25), randn(&[1, 2, 4, 4], 26)];
    let region = Tensor::from_fn([1, 1, 4, 4], |i| f64::from(u8::from(i % 3 != 1)));
    check("mask loss", &pair, &|_, v| mask_loss(&v[0], &v[1], &region))?;
    check("region loss", &pair, &|_, v| region_l1_loss(&v[0], &v[1], &region))?;
    check("tv loss", &pair[..1], &|_, v| tv_loss(&v[0], Some(&region)))?;
    check("perceptual loss", &pair, &|_, v| perceptual_loss(&v[0], &v[1], &Stub))?;
    check("style loss", &pair, &|_, v| style_loss(&v[0], &v[1], &Stub))?;
    check("feature matching loss", &pair[1..], &|g, v| feature_matching_loss(&[vec![g.constant(pair[0].clone())]], &[vec![v[0].clone()]]))?;
    for mode in [GanMode::Lsgan, GanMode::Hinge] {
        check("generator loss", &pair[1..], &|_, v| generator_loss(&[v[0].clone()], mode))?;
        check("discriminator loss", &pair, &|_, v| discriminator_loss(&[v[0].clone()], &[v[1].clone()], mode))?;
    }
    let target = fegan_core::data::ParsingMap::new(2, 3, 4, vec![0, 3, 1, 2, 2, 0]).unwrap();
    check("parsing loss", &[randn(&[1, 4, 2, 3], 27)], &|_, v| parsing_loss(&v[0], &[&target]))?;
    let w = InpainterWeights::default();
    check("inpainter objective", &pair, &|_, v| {
        let terms = InpainterTerms {
            mask: mask_loss(&v[0], &v[1], &region)?,
            foreground: Some(region_l1_loss(&v[0], &v[1], &region)?),
            face: Some(region_l1_loss(&v[0], &v[1], &region)?),
            face_tv: Some(tv_loss(&v[0], Some(&region))?),
            perceptual: Some(perceptual_loss(&v[0], &v[1], &Stub)?),
            style: Some(style_loss(&v[0], &v[1], &Stub)?),
            adv: Some(generator_loss(&[v[0].clone()], GanMode::Hinge)?),
        };
        Ok(inpainter_total(&terms, &w)?.0)
    })?;
    ensure(live * 10 >= probes * 9, || format!("only {live} of {probes} inputs have a nonzero gradient"))?;
    Ok(format!("{probes} probed inputs ({live} with nonzero gradient), worst relative error {worst:.2e} (limit 1e-3)"))
}

fn normalization_property() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let mut store = ParamStore::<f32>::new();
    let anl = Anl::new(&mut store, "anl", 8, 3, 4, 4, 3, &mut rng);
    let (mut worst_mu, mut worst_var) = (0.0f64, 0.0f64);
    for seed in 0..8u64 {
        let scale = 0.5 + seed as f64;
        let offset = seed as f64 - 3.0;
        let x = Tensor::<f32>::randn([4, 8, 16, 16], scale, &mut ChaCha8Rng::seed_from_u64(100 + seed)).map(|v| v + offset as f32);
        let d = Tensor::<f32>::randn([4, 3, 16, 16], 1.0, &mut ChaCha8Rng::seed_from_u64(200 + seed));
        let g = Graph::new();
        let out = anl.forward(&store.bind(&g, false), &g.constant(x), &g.constant(d)).unwrap();
        let x_hat = out.value().narrow(1, 4, 8).unwrap();
        let (mu, sigma) = channel_stats(&x_hat, 0.0);
        for c in 0..8 {
            worst_mu = worst_mu.max(mu[c].abs());
            worst_var = worst_var.max((sigma[c] * sigma[c] - 1.0).abs());
        }
    }
    ensure(worst_mu <= 1e-4 && worst_var <= 1e-3, || format!("max |mu| {worst_mu:.2e}, max |var-1| {worst_var:.2e}"))?;
    Ok(format!("8 batches N=4 C=8 16x16: max |mu| {worst_mu:.1e}, max |var-1| {worst_var:.1e}"))
}

fn partial_conv_isolation() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let mut store = ParamStore::<f32>::new();
    let first = PartialConv2d::new(&mut store, "a", 3, 6, 5, 1, &mut rng).unwrap();
    let second = PartialConv2d::new(&mut store, "b", 6, 4, 3, 2, &mut rng).unwrap();
    let (h, w) = (24, 20);
    let hole = |i: usize| (6..18).contains(&(i / w)) && (4..15).contains(&(i % w));
    let mask = Tensor::<f32>::from_fn([1, 1, h, w], |i| if hole(i) { 0.0 } else { 1.0 });
    let x = Tensor::<f32>::randn([2, 3, h, w], 1.0, &mut rng);
    let run = |x: &Tensor<f32>| {
        let g = Graph::new();
        let p = store.bind(&g, false);
        let (y, m) = first.forward(&p, &g.constant(x.clone()), &mask).unwrap();
        let (z, m2) = second.forward(&p, &y, &m).unwrap();
        (y.value().clone(), z.value().clone(), m2)
    };
    let (y0, z0, m0) = run(&x);
    let mut worst = 0.0f32;
    for trial in 0..5u64 {
        let noise = Tensor::<f32>::randn([2, 3, h, w], 100.0, &mut ChaCha8Rng::seed_from_u64(trial));
        let perturbed = Tensor::from_fn(x.shape().to_vec(), |i| if hole(i % (h * w)) { noise.data()[i] } else { x.data()[i] });
        let (y1, z1, m1) = run(&perturbed);
        for (a, b) in y0.data().iter().zip(y1.data()).chain(z0.data().iter().zip(z1.data())) {
            worst = worst.max((a - b).abs());
        }
        ensure(m0 == m1, || "mask update changed".into())?;
    }
    ensure(worst == 0.0, || format!("max abs diff {worst:e}"))?;
    Ok("two stacked partial convs, 5 hole perturbations: max abs diff 0".into())
}

fn objective_weighting() -> Check {
    let gamma = ParserWeights::default();
    let lambda = InpainterWeights::default();
    ensure((gamma.parsing, gamma.feat, gamma.adv) == (10.0, 10.0, 1.0), || format!("gamma {gamma:?}"))?;
    let l = [lambda.mask, lambda.foreground, lambda.face, lambda.face_tv, lambda.perceptual, lambda.style, lambda.adv];
    ensure(l == [5.0, 50.0, 1.0, 0.1, 0.05, 200.0, 0.001], || format!("lambda {lambda:?}"))?;
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    for _ in 0..100 {
        let t = Tensor::<f64>::randn([10], 2.0, &mut rng).map(f64::abs);
        let v = t.data();
        let p = parser_objective(&ParserTerms { parsing: v[0], feat: Some(v[1]), adv: Some(v[2]) }, &gamma);
        worst = worst.max(rel_err(p.total, 10.0 * v[0] + 10.0 * v[1] + 1.0 * v[2]));
        let terms = InpainterTerms {
            mask: v[3],
            foreground: Some(v[4]),
            face: Some(v[5]),
            face_tv: Some(v[6]),
            perceptual: Some(v[7]),
            style: Some(v[8]),
            adv: Some(v[9]),
        };
        let i = inpainter_objective(&terms, &lambda);
        let hand = 5.0 * v[3] + 50.0 * v[4] + 1.0 * v[5] + 0.1 * v[6] + 0.05 * v[7] + 200.0 * v[8] + 0.001 * v[9];
        worst = worst.max(rel_err(i.total, hand));
        let g = Graph::<f64>::new();
        let c = |x: f64| g.constant(Tensor::scalar(x));
        let terms_v = InpainterTerms {
            mask: c(v[3]),
            foreground: Some(c(v[4])),
            face: Some(c(v[5])),
            face_tv: Some(c(v[6])),
            perceptual: Some(c(v[7])),
            style: Some(c(v[8])),
            adv: Some(c(v[9])),
        };
        worst = worst.max(rel_err(inpainter_total(&terms_v, &lambda).unwrap().0.item(), hand));
    }
    ensure(worst <= 1e-6, || format!("relative error {worst:e}"))?;
    Ok(format!("100 random term sets: max relative error {worst:.1e}"))
}

struct ToyRun {
    dir: tempfile::TempDir,
}

fn toy_stage_one(run: &mut Option<ToyRun>) -> Check {
    let config = TrainConfig::toy(Stage::Parser);
    ensure((config.height, config.width) == (96, 64) && config.data.fixed_examples, || "toy preset is not 64x96".into())?;
    let budget = config.max_steps.unwrap();
    let mut t = Trainer::new(config).map_err(|e| e.to_string())?;
    let examples: Vec<_> = (0..t.items().len()).map(|i| t.example(i, 0)).collect::<CoreResult<_>>().map_err(|e| e.to_string())?;
    let truth: Vec<_> = t.items().iter().map(|i| i.parsing.clone()).collect();
    ensure(examples.len() == 8, || format!("{} toy examples", examples.len()))?;
    let start = Instant::now();
    let mut reached = None;
    let mut last = None;
    t.run(budget, |t, r: &StepRecord| {
        if !r.is_finite() {
            return Ok(false);
        }
        if (r.step + 1) % 25 == 0 {
            let (p, params) = t.parser();
            let pairs: Vec<_> = examples.iter().zip(&truth).collect();
            let acc = parsing_accuracy(p, params, &pairs)?;
            last = Some(acc);
            if acc.outside >= 0.99 && acc.inside >= 0.90 {
                reached = Some((r.step + 1, acc));
                return Ok(false);
            }
        }
        Ok(true)
    })
    .map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let (steps, acc) = reached.ok_or_else(|| format!("not reached in {budget} steps; last {last:?}"))?;
    ensure(secs < 1800.0, || format!("took {secs:.0}s"))?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    t.checkpoint().save(&dir.path().join("parser.fegan")).map_err(|e| e.to_string())?;
    *run = Some(ToyRun { dir });
    Ok(format!("outside {:.4} inside {:.4} after {steps} steps in {secs:.0}s", acc.outside, acc.inside))
}

fn controllability(run: &Option<ToyRun>) -> Check {
    let run = run.as_ref().ok_or("needs the toy parser")?;
    let ckpt = fegan_core::training::Checkpoint::load(&run.dir.path().join("parser.fegan")).map_err(|e| e.to_string())?;
    let (parser, mut params) = fegan_core::parser::Parser::new::<f32>(ckpt.config.model.parser.clone(), 0).map_err(|e| e.to_string())?;
    ckpt.load_params("g", &mut params).map_err(|e| e.to_string())?;
    let mut t = Trainer::new(ckpt.config.clone()).map_err(|e| e.to_string())?;
    for i in 0..t.items().len() {
        let e = t.example(i, 0).map_err(|e| e.to_string())?;
        let base = fegan_core::pipeline::complete_parsing(&parser, &params, &[&e]).map_err(|e| e.to_string())?.remove(0);
        for rgb in [[1.0f32, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0], [1.0, 1.0, 1.0]] {
            let mut edited = e.clone();
            let (h, w) = e.dims();
            for p in 0..h * w {
                if e.mask.values()[p] == 1 && e.color_masked.pixels.data().iter().skip(p).step_by(h * w).any(|&v| v != 0.0) {
                    for (c, v) in rgb.iter().enumerate() {
                        edited.color_masked.pixels.set(c, p / w, p % w, *v);
                    }
                }
            }
            let changed = fegan_core::pipeline::complete_parsing(&parser, &params, &[&edited]).map_err(|e| e.to_string())?.remove(0);
            let diff = base.labels().iter().zip(changed.labels()).zip(e.mask.values()).filter(|((a, b), &m)| m == 1 && a != b).count();
            if diff > 0 {
                return Ok(format!("example {i}: recoloring strokes changed {diff} labels inside the mask"));
            }
        }
    }
    Err("no probe example changed its parsing".into())
}

fn toy_stage_two(run: &Option<ToyRun>) -> Check {
    let run = run.as_ref().ok_or("needs the toy parser")?;
    let mut config = TrainConfig::toy(Stage::Inpainter);
    config.parser_checkpoint = Some(run.dir.path().join("parser.fegan"));
    let budget = config.max_steps.unwrap();
    let mut t = Trainer::new(config).map_err(|e| e.to_string())?;
    let examples: Vec<_> = (0..t.items().len()).map(|i| t.example(i, 0)).collect::<CoreResult<_>>().map_err(|e| e.to_string())?;
    let truth: Vec<_> = t.items().iter().map(|i| i.image.clone()).collect();
    let start = Instant::now();
    let mut reached = None;
    let mut last = f64::NAN;
    let mut non_finite = None;
    t.run(budget, |t, r| {
        if !r.is_finite() {
            non_finite = Some(r.step);
            return Ok(false);
        }
        if (r.step + 1) % 100 == 0 {
            let model = EditModel::from_checkpoint(&t.checkpoint())?;
            let mut total = 0.0;
            for (e, img) in examples.iter().zip(&truth) {
                total += masked_psnr(&model.edit(e)?.image, img, &e.mask)?;
            }
            last = total / examples.len() as f64;
            if last > 25.0 && reached.is_none() {
                reached = Some((r.step + 1, last));
            }
        }
        Ok(reached.is_none() || r.step + 1 < 2000)
    })
    .map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    ensure(non_finite.is_none(), || format!("non-finite loss at step {non_finite:?}"))?;
    let (steps, psnr) = reached.ok_or_else(|| format!("masked PSNR {last:.2} dB after {budget} steps"))?;
    ensure(secs < 2700.0, || format!("took {secs:.0}s"))?;
    ensure(t.step() >= 2000, || format!("trace covers only {} steps", t.step()))?;
    Ok(format!("masked PSNR {psnr:.2} dB after {steps} steps, finite loss trace over {} steps in {secs:.0}s", t.step()))
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Vec<u8>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json").body(Body::from(body)).unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    (status, res.into_body().collect().await.unwrap().to_bytes().to_vec())
}

fn service_contract() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let ckpt = train_tiny(dir.path());
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(|e| e.to_string())?;
    runtime.block_on(async {
        let state = AppState::new(ServiceConfig::default());
        let app = router(state.clone());
        let (status, body) = call(&app, "GET", "/v1/health", Vec::new()).await;
        let h: HealthResponse = serde_json::from_slice(&body).map_err(|e| e.to_string())?;
        ensure(status == StatusCode::SERVICE_UNAVAILABLE && !h.ready, || "health before load is not not-ready".into())?;
        let model = EditModel::load(&ckpt).map_err(|e| e.to_string())?;
        let fingerprint = model.fingerprint().to_string();
        state.install(model);
        let (status, body) = call(&app, "GET", "/v1/health", Vec::new()).await;
        let h: HealthResponse = serde_json::from_slice(&body).map_err(|e| e.to_string())?;
        ensure(status == StatusCode::OK && h.ready && h.fingerprint.as_deref() == Some(&fingerprint), || "health after load".into())?;

        let (hh, ww) = (37, 29);
        let request = |l: &Layers, seed: u64| EditRequest {
            image: STANDARD.encode(&l.image_png),
            mask: STANDARD.encode(&l.mask_png),
            sketch: STANDARD.encode(&l.sketch_png),
            strokes: STANDARD.encode(&l.strokes_png),
            parsing: None,
            seed,
            options: EditOptions { return_parsing: true },
        };
        let zero = layers(hh, ww, &BinaryMask::zeros(hh, ww, MaskKind::Edit), 1);
        let (status, body) = call(&app, "POST", "/v1/edit", serde_json::to_vec(&request(&zero, 3)).unwrap()).await;
        ensure(status == StatusCode::OK, || format!("zero-mask edit returned {status}"))?;
        let r: EditResponse = serde_json::from_slice(&body).map_err(|e| e.to_string())?;
        let diff = max_u8_diff(&STANDARD.decode(&r.image).unwrap(), &zero.image_png);
        ensure(diff <= 1, || format!("zero-mask edit differs by {diff}/255"))?;

        let edit = layers(hh, ww, &rect_mask(hh, ww, 5, 4, 30, 20), 2);
        let body = serde_json::to_vec(&request(&edit, 11)).unwrap();
        let handles: Vec<_> = (0..4)
            .map(|_| {
                let (app, body) = (app.clone(), body.clone());
                tokio::spawn(async move { call(&app, "POST", "/v1/edit", body).await })
            })
            .collect();
        let mut seen = Vec::new();
        for h in handles {
            let (status, body) = h.await.unwrap();
            ensure(status == StatusCode::OK, || format!("edit returned {status}"))?;
            let r: EditResponse = serde_json::from_slice(&body).map_err(|e| e.to_string())?;
            seen.push((STANDARD.decode(&r.image).unwrap(), r.parsing.map(|p| STANDARD.decode(p).unwrap()), r.fingerprint));
        }
        ensure(seen.windows(2).all(|w| w[0] == w[1]), || "fixed-seed responses differ".into())?;
        Ok::<_, String>(format!("not-ready then ready health, zero-mask diff {diff}/255, 4 concurrent fixed-seed edits byte-identical"))
    })
}

fn main() {
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let selected = |name: &str| filter.as_deref().is_none_or(|f| name.contains(f));
    let mut toy = None;
    let mut results: Vec<(String, bool, String, Duration)> = Vec::new();
    let mut record = |name: &str, f: &mut dyn FnMut() -> Check| {
        if !selected(name) {
            return;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let (pass, detail) = match outcome {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        println!("{} {name}: {detail} [{:.1}s]", if pass { "PASS" } else { "FAIL" }, elapsed.as_secs_f64());
        results.push((name.to_string(), pass, detail, elapsed));
    };

    record("formula oracle suite", &mut || {
        let start = Instant::now();
        let r = formula_suite()?;
        ensure(start.elapsed().as_secs() < 120, || "over 2 minutes".into())?;
        Ok(r)
    });
    record("gradient suite", &mut || {
        let start = Instant::now();
        let r = gradient_suite()?;
        ensure(start.elapsed().as_secs() < 300, || "over 5 minutes".into())?;
        Ok(r)
    });
    record("normalization property", &mut normalization_property);
    record("partial-conv isolation", &mut partial_conv_isolation);
    record("objective weighting", &mut objective_weighting);
    record("service contract", &mut service_contract);
    record("toy stage-1 parser", &mut || toy_stage_one(&mut toy));
    record("toy parser controllability", &mut || controllability(&toy));
    record("toy stage-2 inpainter", &mut || toy_stage_two(&toy));

    let failed = results.iter().filter(|r| !r.1).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
