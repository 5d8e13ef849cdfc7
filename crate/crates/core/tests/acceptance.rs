//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines always reach the output.
//! Pass a substring (e.g. `overfit`) to run matching criteria only.

mod common;

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use panogan::dataio::{duplicate_rotate, polar, ImageTensor, SamplePair, TensorBatch};
use panogan::discriminator::alignment_scores;
use panogan::generator::afm_fuse;
use panogan::losses::{adversarial_loss, reconstruction_loss, total_objective, IterationLosses, LossConfig, LossWeights, Side};
use panogan::metrics::{
    accuracy_from_predictions, inception_from_predictions, kl_from_predictions, psnr, sharpness_difference, ssim,
    AccuracyFilter, ClassifierOracle, InceptionMode, SyntheticClassifier, UniformClassifier, SSIM_C1, SSIM_C2,
};
use panogan::nn::{instance_norm, Module};
use panogan::training::{
    iteration_terms, objective_tensor, reconstruction_only, Checkpoint, FitOptions, LogRecord, Pass, Trainer,
};
use panogan::{PanoGan, Precision, RunConfig};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    format!("error: {e}")
}

fn values(t: &Tensor) -> Vec<f64> {
    t.flatten_all()
        .and_then(|t| t.to_dtype(DType::F64))
        .and_then(|t| t.to_vec1())
        .expect("tensor readable")
}

fn random_image(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> ImageTensor {
    ImageTensor::from_fn(c, h, w, |_, _, _| rng.gen_range(-1.0f32..=1.0)).unwrap()
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], dtype: DType) -> Tensor {
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_vec(data, shape, &Device::Cpu).unwrap().to_dtype(dtype).unwrap()
}

// ---------------------------------------------------------------- criterion 1

/// `out(y, x) = in(x, n − 1 − y)`: quarter-turn counter-clockwise.
fn oracle_rot90(img: &ImageTensor) -> ImageTensor {
    let n = img.width();
    let mut out = img.clone();
    for c in 0..img.channels() {
        for y in 0..n {
            for x in 0..n {
                out.set(c, y, x, img.get(c, x, n - 1 - y));
            }
        }
    }
    out
}

/// Per-pixel polar resampler: angle clockwise from the top, radius linear in
/// the row index up to half the side, bilinear with clamped coordinates.
fn oracle_polar(img: &ImageTensor, height: usize, width: usize) -> Vec<f64> {
    let n = img.width();
    let last = (n - 1) as f64;
    let centre = last / 2.0;
    let mut out = Vec::with_capacity(3 * height * width);
    for c in 0..img.channels() {
        for v in 0..height {
            for u in 0..width {
                let theta = 2.0 * PI * (u as f64) / (width as f64);
                let rho = (v as f64) * (n as f64 / 2.0) / (height as f64);
                let row = (centre - rho * theta.cos()).max(0.0).min(last);
                let col = (centre + rho * theta.sin()).max(0.0).min(last);
                let (r0, c0) = (row.floor(), col.floor());
                let (dr, dc) = (row - r0, col - c0);
                let (r0, c0) = (r0 as usize, c0 as usize);
                let (r1, c1) = ((r0 + 1).min(n - 1), (c0 + 1).min(n - 1));
                let px = |r: usize, q: usize| f64::from(img.get(c, r, q));
                out.push(
                    px(r0, c0) * (1.0 - dr) * (1.0 - dc)
                        + px(r0, c1) * (1.0 - dr) * dc
                        + px(r1, c0) * dr * (1.0 - dc)
                        + px(r1, c1) * dr * dc,
                );
            }
        }
    }
    out
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut rotation_failures = 0;
    let mut polar_max = 0.0f64;
    for _ in 0..100 {
        let img = random_image(&mut rng, 3, 256, 256);
        let tiled = duplicate_rotate(&img, 256).map_err(fail)?;
        let q0 = tiled.crop_columns(0, 256).map_err(fail)?;
        let mut expected = q0.clone();
        for k in 1..4 {
            expected = oracle_rot90(&expected);
            let qk = tiled.crop_columns(256 * k, 256).map_err(fail)?;
            let exact = qk.data().iter().zip(expected.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            rotation_failures += usize::from(!exact);
        }
        let got = polar(&img, 256, 1024).map_err(fail)?;
        let want = oracle_polar(&img, 256, 1024);
        let diff = got
            .data()
            .iter()
            .zip(&want)
            .fold(0.0f64, |m, (a, b)| m.max((f64::from(*a) - b).abs()));
        polar_max = polar_max.max(diff);
    }
    let elapsed = start.elapsed();
    check(
        rotation_failures == 0 && polar_max <= 1e-6 && elapsed < Duration::from_secs(60),
        format!(
            "100 inputs, {rotation_failures} non-exact rotated quarters, polar max |diff| {polar_max:.2e} (<= 1e-6), {:.1}s (< 60s)",
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- criterion 2

fn toy_model(height: usize, layers: usize, scales: usize, precision: Precision, seed: u64) -> (RunConfig, PanoGan) {
    let config = common::toy_config(height, layers, scales, 4, precision);
    let model = PanoGan::new(config.model.clone(), seed, &Device::Cpu).unwrap();
    (config, model)
}

fn bits_equal(a: &Tensor, b: &Tensor) -> bool {
    a.dims() == b.dims() && values(a).iter().zip(values(b)).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn criterion_2() -> Outcome {
    let (_, model) = toy_model(16, 4, 3, Precision::F64, 2);
    let g = model.generator();
    let cfg = g.config().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random_tensor(&mut rng, &[2, 3, 16, 64], DType::F64);
    let enc = g.encode(&x).map_err(fail)?;

    let mut zero_alpha_exact = true;
    let mut worst_ratio = 0.0f64;
    for j in 0..cfg.feedback_layers {
        let (n, _, h, w) = enc[j].dims4().map_err(fail)?;
        let d_ch = cfg.junction_channels(j) - cfg.encoder_channels(j);
        let d = (d_ch > 0).then(|| random_tensor(&mut rng, &[n, d_ch, h, w], DType::F64));
        let fb = g.feedback_channels()[j];
        let hg = random_tensor(&mut rng, &[n, fb, h, w], DType::F64);
        let hs = random_tensor(&mut rng, &[n, fb, h, w], DType::F64);
        let skip = match &d {
            Some(d) => Tensor::cat(&[&enc[j], d], 1).map_err(fail)?,
            None => enc[j].clone(),
        };
        let fuse = |alpha| afm_fuse(&enc[j], d.as_ref(), &hg, &hs, alpha, g.afm_transform(j)).map_err(fail);
        zero_alpha_exact &= bits_equal(&fuse(0.0)?, &skip);
        let offset = |t: Tensor| values(&(t - &skip).unwrap()).iter().map(|v| v.abs()).sum::<f64>();
        let ratio = offset(fuse(0.5)?) / offset(fuse(1.0)?);
        worst_ratio = worst_ratio.max((ratio - 0.5).abs());
    }

    // Plain U-Net built from the generator's own layers, with no feedback modules.
    let mut d: Option<Tensor> = None;
    for j in (0..cfg.num_layers).rev() {
        let junction = match &d {
            Some(d) => Tensor::cat(&[&enc[j], d], 1).map_err(fail)?,
            None => enc[j].clone(),
        };
        let y = g.decoder_layer(j).forward(&junction).map_err(fail)?;
        d = Some(if j == 0 {
            y.tanh().map_err(fail)?
        } else {
            instance_norm(&y).map_err(fail)?.relu().map_err(fail)?
        });
    }
    let reference = d.unwrap();
    let bypass = g.decode(&enc, None).map_err(fail)?;
    let bypass_exact = bits_equal(&bypass.raw, &reference) && bits_equal(&g.forward(&x, None).map_err(fail)?.raw, &reference);

    check(
        zero_alpha_exact && bypass_exact && worst_ratio <= 1e-5,
        format!(
            "alpha=0 equals skip concat bit-exactly: {zero_alpha_exact}; no-feedback decode equals plain U-Net bit-exactly: {bypass_exact}; alpha ratio |r-0.5| max {worst_ratio:.2e} (<= 1e-5)"
        ),
    )
}

// ---------------------------------------------------------------- criterion 3

fn grad_mass(store: &panogan::nn::ParamStore, grads: &candle_core::backprop::GradStore) -> f64 {
    store
        .iter()
        .filter_map(|(_, v)| grads.get(v.as_tensor()))
        .map(|g| values(g).iter().map(|x| x.abs()).sum::<f64>())
        .sum()
}

fn criterion_3() -> Outcome {
    let (config, model) = toy_model(16, 4, 3, Precision::F64, 3);
    let batch = common::batch(&config, &common::pairs(2, 16, 3));
    let d = model.require_discriminators().map_err(fail)?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let candidate = random_tensor(&mut rng, &[2, 3, 16, 64], DType::F64);
    let a = d.image.extract_pyramid(&batch.input, &batch.panorama).map_err(fail)?;
    let b = d.segmentation.extract_pyramid(&batch.input, &candidate).map_err(fail)?;
    let ab = alignment_scores(&a, &b).map_err(fail)?;
    let ba = alignment_scores(&b, &a).map_err(fail)?;

    let mut oracle_max = 0.0f64;
    for (l, map) in ab.iter().enumerate() {
        let (n, c, h, w) = a.levels[l].dims4().map_err(fail)?;
        let (xa, xb, got) = (values(&a.levels[l]), values(&b.levels[l]), values(map));
        for i in 0..n {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for ch in 0..c {
                        let k = ((i * c + ch) * h + y) * w + x;
                        acc += xa[k] * xb[k];
                    }
                    oracle_max = oracle_max.max((acc / c as f64 - got[(i * h + y) * w + x]).abs());
                }
            }
        }
    }
    let commutes = ab.iter().zip(&ba).all(|(x, y)| bits_equal(x, y));

    let terms = iteration_terms(&model, &batch, 2, Pass::Objective).map_err(fail)?;
    let only_alignment = LossConfig {
        weights: LossWeights {
            adversarial: 0.0,
            alignment: 1.0,
            reconstruction: 0.0,
        },
        ..LossConfig::default()
    };
    let grads = objective_tensor(&terms, &only_alignment).map_err(fail)?.backward().map_err(fail)?;
    let g_mass = grad_mass(model.generator().params(), &grads);
    let dg_mass = grad_mass(d.image.params(), &grads);
    let ds_mass = grad_mass(d.segmentation.params(), &grads);
    check(
        oracle_max <= 1e-6 && commutes && g_mass > 0.0 && dg_mass > 0.0 && ds_mass > 0.0,
        format!(
            "oracle max |diff| {oracle_max:.2e} (<= 1e-6); S_g == S_s: {commutes}; sum |dL_fa| over G {g_mass:.3e}, D_g {dg_mass:.3e}, D_s {ds_mass:.3e} (all > 0)"
        ),
    )
}

// ---------------------------------------------------------------- criterion 4

fn criterion_4() -> Outcome {
    let scalar = |t: Tensor| t.to_scalar::<f64>().unwrap();
    let zeros = Tensor::zeros((2, 1, 4, 16), DType::F64, &Device::Cpu).map_err(fail)?;
    let one = scalar(adversarial_loss(&[zeros.clone()], &[zeros.clone()], Side::Discriminator).map_err(fail)?);
    let five = scalar(adversarial_loss(&vec![zeros.clone(); 5], &vec![zeros; 5], Side::Discriminator).map_err(fail)?);

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let real_img = random_tensor(&mut rng, &[2, 3, 8, 32], DType::F64);
    let real_seg = random_tensor(&mut rng, &[2, 3, 8, 32], DType::F64);
    let shift = |t: &Tensor| (t + 0.1).unwrap();
    let recon = scalar(reconstruction_loss(&shift(&real_img), &real_img, &shift(&real_seg), &real_seg).map_err(fail)?);

    // Averaging on a real three-iteration trace, by hand.
    let (config, model) = toy_model(16, 4, 3, Precision::F64, 4);
    let batch = common::batch(&config, &common::pairs(2, 16, 4));
    let terms = iteration_terms(&model, &batch, 2, Pass::Objective).map_err(fail)?;
    let per: Vec<IterationLosses> = terms.iter().map(|t| t.objective).collect();
    let mut worst_rel = 0.0f64;
    for include in [true, false] {
        let used: Vec<&IterationLosses> = if include { per.iter().collect() } else { per[1..].iter().collect() };
        let n = used.len() as f64;
        let hand: f64 = used
            .iter()
            .map(|it| it.adv_g + it.adv_s + it.align_g + it.align_s + it.recon_img + it.recon_seg)
            .sum::<f64>()
            / n;
        let cfg = LossConfig {
            include_forward_pass: include,
            ..LossConfig::default()
        };
        let reported = total_objective(&per, cfg.weights, include).map_err(fail)?.l_total;
        let tensor = scalar(objective_tensor(&terms, &cfg).map_err(fail)?);
        for v in [reported, tensor] {
            worst_rel = worst_rel.max((v - hand).abs() / hand.abs());
        }
    }
    let ok = (one + 1.3863).abs() <= 1e-4 && (five + 6.9315).abs() <= 5e-4 && (recon - 0.2).abs() <= 1e-6 && worst_rel <= 1e-7;
    check(
        ok,
        format!(
            "zero-logit D loss {one:.6} (-1.3863 +- 1e-4), r=5 {five:.6} (-6.9315 +- 5e-4), offset reconstruction {recon:.8} (0.2 +- 1e-6), averaging rel err {worst_rel:.2e} (<= 1e-7)"
        ),
    )
}

// ---------------------------------------------------------------- criterion 5

fn criterion_5() -> Outcome {
    let (config, model) = toy_model(8, 3, 3, Precision::F64, 5);
    let batch = common::batch(&config, &common::pairs(2, 8, 5));
    let loss_cfg = LossConfig::default();
    let objective = || -> f64 {
        let terms = iteration_terms(&model, &batch, 2, Pass::Objective).unwrap();
        objective_tensor(&terms, &loss_cfg).unwrap().to_scalar::<f64>().unwrap()
    };
    let terms = iteration_terms(&model, &batch, 2, Pass::Objective).map_err(fail)?;
    let grads = objective_tensor(&terms, &loss_cfg).map_err(fail)?.backward().map_err(fail)?;

    let d = model.require_discriminators().map_err(fail)?;
    let mut vars: Vec<(String, Var)> = Vec::new();
    for (prefix, store) in [("G/", model.generator().params()), ("D_g/", d.image.params()), ("D_s/", d.segmentation.params())] {
        vars.extend(store.iter().map(|(n, v)| (format!("{prefix}{n}"), v.clone())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-6;
    let mut worst = 0.0f64;
    let mut lines = Vec::new();
    for _ in 0..10 {
        let (name, var) = &vars[rng.gen_range(0..vars.len())];
        let original = var.as_tensor().detach().copy().map_err(fail)?;
        let mut flat = values(&original);
        let idx = rng.gen_range(0..flat.len());
        let analytic = grads.get(var.as_tensor()).map(|g| values(g)[idx]).unwrap_or(0.0);
        let base = flat[idx];
        let mut at = |v: f64| {
            flat[idx] = v;
            var.set(&Tensor::from_vec(flat.clone(), original.dims(), &Device::Cpu).unwrap()).unwrap();
            objective()
        };
        let numeric = (at(base + h) - at(base - h)) / (2.0 * h);
        var.set(&original).map_err(fail)?;
        // Gradients below 1e-7 in magnitude are compared absolutely.
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-7);
        worst = worst.max(rel);
        lines.push(format!("{name}[{idx}] {analytic:.4e}/{numeric:.4e}"));
    }
    check(
        worst <= 1e-3,
        format!("10 sampled parameters, max relative error {worst:.2e} (<= 1e-3); {}", lines.join(", ")),
    )
}

// ---------------------------------------------------------------- criterion 6

fn moving_start_end(series: &[f64], window: usize) -> (f64, f64) {
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    (mean(&series[..window]), mean(&series[series.len() - window..]))
}

fn train_log(config: RunConfig, pairs: &[SamplePair], options: &FitOptions) -> Result<(Trainer, Vec<LogRecord>), String> {
    let mut trainer = Trainer::new(config, &Device::Cpu).map_err(fail)?;
    let log = trainer.fit(pairs, options).map_err(fail)?.log;
    Ok((trainer, log))
}

const OVERFIT_LR_G: f64 = 1e-3;

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let mut config = common::toy_config(64, 6, 5, 4, Precision::F32);
    config.train.feedback_loops = 2;
    config.train.batch_size = 1;
    config.train.epochs = 50;
    // Smoke-test step sizes: ten times the defaults, same G:D ratio.
    config.train.lr_g = OVERFIT_LR_G;
    config.train.lr_d = OVERFIT_LR_G / 10.0;
    let pairs = common::pairs(4, 64, 6);
    let (_, log) = train_log(config, &pairs, &FitOptions::default())?;
    let l_re: Vec<f64> = log.iter().map(|r| r.report.breakdown.l_re).collect();
    let (first, last) = moving_start_end(&l_re, 10);
    let drop = 1.0 - last / first;
    let elapsed = start.elapsed();
    check(
        l_re.len() == 200 && drop >= 0.5 && elapsed < Duration::from_secs(600),
        format!(
            "{} steps at 64x256, L_re moving average {first:.4} -> {last:.4} ({:.1}% drop, >= 50%), {:.0}s (< 600s)",
            l_re.len(),
            100.0 * drop,
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- criterion 7

const TREND_HEIGHT: usize = 32;
const TREND_EPOCHS: usize = 10;

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let train = common::pairs(64, TREND_HEIGHT, 70);
    let test = common::pairs(16, TREND_HEIGHT, 71);
    let mut wins = 0;
    let mut lines = Vec::new();
    for seed in 0..5u64 {
        let mut config = common::toy_config(TREND_HEIGHT, 5, 5, 4, Precision::F32);
        config.train.seed = seed;
        config.train.feedback_loops = 2;
        config.train.batch_size = 4;
        config.train.epochs = TREND_EPOCHS;
        let (trainer, _) = train_log(config.clone(), &train, &FitOptions::default())?;
        let batch = common::batch(&config, &test);
        let per = reconstruction_only(trainer.model(), &batch, 2).map_err(fail)?;
        let (j0, j2) = (per[0].reconstruction(), per[2].reconstruction());
        wins += usize::from(j2 <= j0);
        lines.push(format!("seed {seed}: j0 {j0:.4} j2 {j2:.4}"));
    }
    let elapsed = start.elapsed();
    check(
        wins >= 4 && elapsed < Duration::from_secs(1800),
        format!(
            "L_re(j=2) <= L_re(j=0) in {wins}/5 seeds (>= 4) on held-out pairs after {TREND_EPOCHS} epochs with k=2 [{}], {:.0}s (< 1800s)",
            lines.join("; "),
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- criterion 8

fn unit(img: &ImageTensor) -> Vec<f64> {
    img.to_unit_range()
}

fn oracle_ssim(x: &ImageTensor, y: &ImageTensor) -> f64 {
    let (c, h, w) = x.dims();
    let size = {
        let s = h.min(w).min(11);
        if s % 2 == 0 {
            s - 1
        } else {
            s
        }
    };
    let half = (size / 2) as f64;
    let mut kernel = vec![vec![0.0; size]; size];
    let mut total = 0.0;
    for (i, row) in kernel.iter_mut().enumerate() {
        for (j, k) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - half, j as f64 - half);
            *k = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            total += *k;
        }
    }
    let (xs, ys) = (unit(x), unit(y));
    let mut acc = 0.0;
    let mut count = 0;
    for ch in 0..c {
        for top in 0..=h - size {
            for left in 0..=w - size {
                let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..size {
                    for j in 0..size {
                        let k = kernel[i][j] / total;
                        let p = (ch * h + top + i) * w + left + j;
                        mx += k * xs[p];
                        my += k * ys[p];
                        sxx += k * xs[p] * xs[p];
                        syy += k * ys[p] * ys[p];
                        sxy += k * xs[p] * ys[p];
                    }
                }
                let (vx, vy, cov) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
                acc += (2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2) / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
                count += 1;
            }
        }
    }
    acc / count as f64
}

fn oracle_psnr(x: &ImageTensor, y: &ImageTensor) -> f64 {
    let (xs, ys) = (unit(x), unit(y));
    let mse = xs.iter().zip(&ys).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / xs.len() as f64;
    10.0 * (1.0 / mse).log10()
}

fn oracle_sd(x: &ImageTensor, y: &ImageTensor) -> f64 {
    let (c, h, w) = x.dims();
    let (xs, ys) = (unit(x), unit(y));
    let at = |v: &[f64], ch: usize, i: usize, j: usize| v[(ch * h + i) * w + j];
    let mut sum = 0.0;
    let mut n = 0.0;
    for ch in 0..c {
        for i in 0..h - 1 {
            for j in 0..w - 1 {
                let gx = (at(&xs, ch, i + 1, j) - at(&xs, ch, i, j)).abs() + (at(&xs, ch, i, j + 1) - at(&xs, ch, i, j)).abs();
                let gy = (at(&ys, ch, i + 1, j) - at(&ys, ch, i, j)).abs() + (at(&ys, ch, i, j + 1) - at(&ys, ch, i, j)).abs();
                sum += (gx - gy).abs();
                n += 1.0;
            }
        }
    }
    10.0 * (1.0 / (sum / n)).log10()
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random_image(&mut rng, 3, 32, 128);
    let self_ssim = ssim(&x, &x).map_err(fail)?;

    // 0.1 in [0, 1] units is 0.2 in storage units.
    let base = ImageTensor::from_fn(3, 32, 128, |_, _, _| rng.gen_range(-1.0f32..0.8)).unwrap();
    let shifted = ImageTensor::from_fn(3, 32, 128, |c, y, xx| base.get(c, y, xx) + 0.2).unwrap();
    let offset_psnr = psnr(&base, &shifted).map_err(fail)?;

    let set: Vec<ImageTensor> = (0..8).map(|_| random_image(&mut rng, 3, 16, 64)).collect();
    let uniform = UniformClassifier { classes: 10 };
    let uniform_is = inception_from_predictions(
        &set.iter().map(|i| uniform.predict(i).unwrap()).collect::<Vec<_>>(),
        InceptionMode::All,
    )
    .map_err(fail)?;
    let oracle = SyntheticClassifier::new(10, 3, 4, 8).map_err(fail)?;
    let preds: Vec<Vec<f64>> = set.iter().map(|i| oracle.predict(i).unwrap()).collect();
    let kl = kl_from_predictions(&preds, &preds).map_err(fail)?.mean;
    let mut accuracies = Vec::new();
    for k in [1, 5] {
        for filter in [AccuracyFilter::All, AccuracyFilter::Conf50] {
            if let Some(a) = accuracy_from_predictions(&preds, &preds, k, filter).map_err(fail)? {
                accuracies.push(a);
            }
        }
    }
    let all_exact = accuracies.len() >= 2 && accuracies.iter().all(|&a| a == 100.0);

    let mut pixel_max = 0.0f64;
    for _ in 0..20 {
        let a = random_image(&mut rng, 3, 8, 8);
        let b = random_image(&mut rng, 3, 8, 8);
        for (got, want) in [
            (ssim(&a, &b).map_err(fail)?, oracle_ssim(&a, &b)),
            (psnr(&a, &b).map_err(fail)?, oracle_psnr(&a, &b)),
            (sharpness_difference(&a, &b).map_err(fail)?, oracle_sd(&a, &b)),
        ] {
            pixel_max = pixel_max.max((got - want).abs());
        }
    }

    let ok = (self_ssim - 1.0).abs() <= 1e-6
        && (offset_psnr - 20.0).abs() <= 1e-3
        && (uniform_is - 1.0).abs() <= 1e-6
        && kl.abs() <= 1e-9
        && all_exact
        && pixel_max <= 1e-6;
    check(
        ok,
        format!(
            "SSIM(x,x) {self_ssim:.9}, PSNR offset 0.1 {offset_psnr:.5} dB, uniform IS {uniform_is:.9}, identical KL {kl:.1e}, identical accuracy {accuracies:?}, 8x8 oracle max |diff| {pixel_max:.2e}"
        ),
    )
}

// ---------------------------------------------------------------- criterion 9

fn criterion_9() -> Outcome {
    let mut config = common::toy_config(16, 4, 3, 4, Precision::F32);
    config.train.epochs = 3;
    config.train.batch_size = 2;
    config.train.seed = 9;
    let pairs = common::pairs(6, 16, 9);

    let (trainer_a, log_a) = train_log(config.clone(), &pairs, &FitOptions::default())?;
    let (_, log_b) = train_log(config.clone(), &pairs, &FitOptions::default())?;
    let json = |log: &[LogRecord]| log.iter().map(|r| serde_json::to_string(r).unwrap()).collect::<Vec<_>>();
    let identical_logs = log_a == log_b && json(&log_a) == json(&log_b);

    let dir = tempfile::tempdir().map_err(fail)?;
    let path = dir.path().join("a.safetensors");
    trainer_a.save(&path).map_err(fail)?;
    let restored = Checkpoint::load(&path, &Device::Cpu).map_err(fail)?.build_model(&Device::Cpu).map_err(fail)?;
    let batch: TensorBatch = common::batch(&config, &pairs[..2]);
    let before = trainer_a.model().infer(&batch.input, 2).map_err(fail)?;
    let after = restored.infer(&batch.input, 2).map_err(fail)?;
    let round_trip = bits_equal(&before.raw, &after.raw);

    // Interrupt after 4 of 9 steps (mid-epoch), persist, restore and finish.
    let mut partial = Trainer::new(config.clone(), &Device::Cpu).map_err(fail)?;
    let head = partial
        .fit(
            &pairs,
            &FitOptions {
                max_steps: Some(4),
                ..FitOptions::default()
            },
        )
        .map_err(fail)?
        .log;
    let mid = dir.path().join("mid.safetensors");
    partial.save(&mid).map_err(fail)?;
    let mut resumed = Trainer::load(&mid, &Device::Cpu).map_err(fail)?;
    let tail = resumed.fit(&pairs, &FitOptions::default()).map_err(fail)?.log;
    let resume_equal = head[..] == log_a[..4] && tail[..] == log_a[4..];
    let same_params = resumed.model().generator().params().fingerprint().map_err(fail)?
        == trainer_a.model().generator().params().fingerprint().map_err(fail)?;

    check(
        identical_logs && round_trip && resume_equal && same_params,
        format!(
            "two runs bit-identical logs ({} steps): {identical_logs}; checkpoint round-trip outputs bit-exact: {round_trip}; resume at step 4 of {} reproduces the log suffix: {resume_equal}, final parameters: {same_params}",
            log_a.len(),
            log_a.len()
        ),
    )
}

// ---------------------------------------------------------------- harness

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("1 preprocessing exactness", criterion_1),
        ("2 feedback module contracts", criterion_2),
        ("3 alignment mechanism", criterion_3),
        ("4 loss closed forms", criterion_4),
        ("5 gradient correctness", criterion_5),
        ("6 overfit smoke test", criterion_6),
        ("7 feedback-loop trend", criterion_7),
        ("8 metric oracles", criterion_8),
        ("9 determinism and persistence", criterion_9),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
