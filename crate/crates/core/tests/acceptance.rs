//! Acceptance suite. Prints one line per criterion and exits non-zero when any
//! criterion fails.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use faceshield::diffusion::{ddim_step, forward_noise};
use faceshield::editor::{
    loss_cls, loss_rec, loss_size, map_perturbation, skin_mask, AttributeSpec, DEFAULT_SIGMA_B,
};
use faceshield::graph::Mat;
use faceshield::harness::{
    gaussian_blur, jpeg_roundtrip, quality_gates, robustness_eval, verify_run_dir, QualityGates,
    Transform, MANIFEST_FILE,
};
use faceshield::image::ImageTensor;
use faceshield::losses::{loss_dev, loss_diff, loss_id};
use faceshield::metrics::{
    att_id, att_id_from_cosines, defense_suite, psnr, ssim, vision_suite, FeatureDistance,
    SwapPipeline,
};
use faceshield::models::stack::{ModelStack, ScheduleConfig, ToyStack};
use faceshield::models::traits::{NoiseMapSet, StyleVector};
use faceshield::optimize::{
    curve_stats, pgd_ascend, run_defense, OptimizationMode, RunConfig,
};
use faceshield::swap::SwapConfig;
use faceshield::util::{gaussian_mat, rng_for};
use rand::Rng;

enum Status {
    Pass,
    Fail,
    Blocked,
}

struct Outcome {
    status: Status,
    detail: String,
}

fn verdict(ok: bool, detail: String) -> Outcome {
    Outcome {
        status: if ok { Status::Pass } else { Status::Fail },
        detail,
    }
}

type Check = Result<Outcome, String>;

fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{text}");
    let _ = out.flush();
}

fn run(n: usize, title: &str, limit: Option<Duration>, f: impl FnOnce() -> Check) -> bool {
    let start = Instant::now();
    let outcome = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(o)) => o,
        Ok(Err(e)) => verdict(false, format!("error: {e}")),
        Err(_) => verdict(false, "panicked".into()),
    };
    let secs = start.elapsed();
    let mut outcome = outcome;
    if let (Status::Pass, Some(limit)) = (&outcome.status, limit) {
        if secs > limit {
            outcome = verdict(
                false,
                format!("{}; exceeded the {}s runtime limit", outcome.detail, limit.as_secs()),
            );
        }
    }
    let tag = match outcome.status {
        Status::Pass => "PASS",
        Status::Fail => "FAIL",
        Status::Blocked => "BLOCKED",
    };
    emit(&format!(
        "acceptance criterion {n:>2} {tag:<7} {title} ({:.1}s): {}",
        secs.as_secs_f64(),
        outcome.detail
    ));
    !matches!(outcome.status, Status::Fail)
}

fn e<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn diffusion_algebra() -> Check {
    let schedule = e(ScheduleConfig::default().build())?;
    let mut rng = rng_for(1, "acceptance-diffusion");
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let x0 = gaussian_mat(&mut rng, 1, 16);
        let eps = gaussian_mat(&mut rng, 1, 16);
        let t = rng.gen_range(1..=schedule.steps());
        let noised = e(forward_noise(&x0, t, &eps, &schedule))?;
        let (_, x0_hat) = e(ddim_step(&noised.x_t, t, 0, &eps, &schedule))?;
        let err = (&x0_hat - &x0).mapv(|v| v * v).sum().sqrt() / x0.mapv(|v| v * v).sum().sqrt();
        worst = worst.max(err);
    }
    let x0 = Mat::from_shape_vec((1, 4), vec![1.5, -2.0, 1.0, -1.25]).expect("row");
    let draws = 10_000;
    let mut stat_worst = 0.0f64;
    for t in [50, 150, 300] {
        let ab = schedule.alpha_bar(t);
        let mut sum = Mat::zeros((1, 4));
        let mut sq = Mat::zeros((1, 4));
        for _ in 0..draws {
            let eps = gaussian_mat(&mut rng, 1, 4);
            let x = e(forward_noise(&x0, t, &eps, &schedule))?.x_t;
            sum += &x;
            sq += &x.mapv(|v| v * v);
        }
        for j in 0..4 {
            let mean = sum[[0, j]] / draws as f64;
            let var = sq[[0, j]] / draws as f64 - mean * mean;
            let want_mean = ab.sqrt() * x0[[0, j]];
            let want_var = 1.0 - ab;
            stat_worst = stat_worst
                .max((mean - want_mean).abs() / want_mean.abs())
                .max((var - want_var).abs() / want_var);
        }
    }
    Ok(verdict(
        worst <= 1e-6 && stat_worst <= 0.05,
        format!(
            "max DDIM inversion relative error {worst:.2e} (limit 1e-6); max forward-noise statistic deviation {:.2}% (limit 5%)",
            100.0 * stat_worst
        ),
    ))
}

/// Worst relative error of directional central differences against the
/// analytic gradient over `probes` random points and directions.
fn fd_check(
    x0: &Mat,
    probes: usize,
    spread: f64,
    seed: u64,
    f: &dyn Fn(&Mat) -> Result<(f64, Mat), String>,
) -> Result<f64, String> {
    let mut rng = rng_for(seed, "acceptance-fd");
    let h = 1e-4;
    let mut worst = 0.0f64;
    for _ in 0..probes {
        let x = x0 + &gaussian_mat(&mut rng, 1, x0.len()).mapv(|v| v * spread);
        let mut d = gaussian_mat(&mut rng, 1, x0.len());
        let norm = d.mapv(|v| v * v).sum().sqrt();
        d.mapv_inplace(|v| v / norm);
        let (_, g) = f(&x)?;
        let analytic = (&g * &d).sum();
        let (fp, _) = f(&(&x + &(&d * h)))?;
        let (fm, _) = f(&(&x - &(&d * h)))?;
        let numeric = (fp - fm) / (2.0 * h);
        let scale = analytic.abs().max(numeric.abs());
        if scale > 1e-9 {
            worst = worst.max((analytic - numeric).abs() / scale);
        }
    }
    Ok(worst)
}

fn gradient_suite(stack: &ToyStack) -> Check {
    let face = &common::sources(1)[0];
    let src = &face.image;
    let models = e(stack.models_for(face))?;
    let z_src = e(models.codec.encode(src))?;
    let eps = 75.0 / 255.0;
    let mut lines = Vec::new();
    let mut ok = true;
    let mut record = |name: &str, worst: f64| {
        ok &= worst <= 1e-3;
        lines.push(format!("{name} {worst:.1e}"));
    };

    record(
        "L_id",
        fd_check(&z_src, 10, eps / 2.0, 11, &|z| e(loss_id(z, src, &models)))?,
    );
    record(
        "L_dev",
        fd_check(&z_src, 10, eps / 2.0, 12, &|z| {
            e(loss_dev(z, src, &models, 5, 1.0, &mut rng_for(7, "dev")))
        })?,
    );
    record(
        "L_diff",
        fd_check(&z_src, 10, eps / 2.0, 13, &|z| {
            e(loss_diff(z, &z_src, &models, 5, 1.0, &mut rng_for(7, "diff")))
        })?,
    );

    let (layers, dim) = models.generator.style_shape();
    let w0 = e(models.inverter.invert(src))?.to_row();
    let delta = gaussian_mat(&mut rng_for(3, "delta"), 1, z_src.len()).mapv(|v| 0.1 * v);
    let noise: NoiseMapSet = e(map_perturbation(
        &delta,
        models.codec.latent_shape(),
        &models.generator.noise_shapes(),
    ))?;
    let mask = e(skin_mask(src, models.parser.as_ref(), DEFAULT_SIGMA_B))?;
    let spec = AttributeSpec::default();
    let style = |w: &Mat| e(StyleVector::from_row(w, layers, dim));
    let gen = models.generator.as_ref();
    record(
        "L_rec",
        fd_check(&w0, 10, 0.05, 14, &|w| {
            e(loss_rec(src, &style(w)?, &noise, gen, &mask))
        })?,
    );
    record(
        "L_cls",
        fd_check(&w0, 10, 0.05, 15, &|w| {
            e(loss_cls(&style(w)?, &noise, gen, models.classifier.as_ref(), &spec))
        })?,
    );
    record(
        "L_size",
        fd_check(&w0, 10, 0.05, 16, &|w| {
            e(loss_size(
                src,
                &style(w)?,
                &noise,
                gen,
                models.parser.as_ref(),
                &spec,
                DEFAULT_SIGMA_B,
            ))
        })?,
    );
    Ok(verdict(
        ok,
        format!("max relative error per loss: {} (limit 1e-3)", lines.join(", ")),
    ))
}

fn pgd_contract(stack: &ToyStack) -> Check {
    let face = &common::sources(1)[0];
    let models = e(stack.models_for(face))?;
    let cfg = common::ci_config();
    let result = e(run_defense(&face.image, &models, &cfg))?;
    let worst = result
        .trace
        .records
        .iter()
        .map(|r| r.budget_linf)
        .fold(result.budget_linf(), f64::max);
    let budget_ok = worst <= cfg.epsilon + 1e-6 && !result.trace.records.is_empty();

    // Unclipped concave quadratic: f(z) = -0.5 sum c_i (z_i - m_i)^2.
    let mut rng = rng_for(5, "acceptance-quadratic");
    let n = 32;
    let c: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
    let m: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let z0 = Mat::from_shape_vec((1, n), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .expect("row");
    let eta = 1.0 / 255.0;
    let steps = 25;
    let objective = |z: &Mat| {
        let g = Mat::from_shape_fn((1, n), |(_, i)| -c[i] * (z[[0, i]] - m[i]));
        let v = -0.5 * (0..n).map(|i| c[i] * (z[[0, i]] - m[i]).powi(2)).sum::<f64>();
        Ok((v, g))
    };
    let mut iterates = Vec::new();
    e(pgd_ascend(&z0, &z0, 1e9, eta, steps, objective, |_, _, z, _| {
        iterates.push(z.clone());
        Ok(())
    }))?;
    let mut oracle = z0.clone();
    let mut delta = vec![0.0; n];
    let mut exact = iterates.len() == steps;
    for got in &iterates {
        for i in 0..n {
            let g = -c[i] * (oracle[[0, i]] - m[i]);
            delta[i] += eta * if g > 0.0 { 1.0 } else if g < 0.0 { -1.0 } else { 0.0 };
        }
        oracle = Mat::from_shape_fn((1, n), |(_, i)| z0[[0, i]] + delta[i]);
        exact &= *got == oracle;
    }
    Ok(verdict(
        budget_ok && exact,
        format!(
            "max |z - E(I_src)|_inf over {} records = {worst:.9} (budget {:.9}); sign-step oracle {}",
            result.trace.records.len(),
            cfg.epsilon,
            if exact { "matches exactly" } else { "MISMATCH" }
        ),
    ))
}

fn att_id_exactness(stack: &ToyStack) -> Check {
    let face = &common::sources(1)[0];
    let models = e(stack.models())?;
    let pipeline = common::pipeline(&models);
    let targets = common::targets();
    let clean = e(pipeline.swap(&face.image, &targets[0], 3))?;
    let again = e(pipeline.swap(&face.image, &targets[0], 3))?;
    let paired = e(att_id(&face.image, &clean, &again, models.embedder.as_ref()))?;
    let suite = e(defense_suite(
        &face.image,
        &targets[..2],
        &face.image,
        &pipeline,
        models.embedder.as_ref(),
        &FeatureDistance(models.embedder.clone()),
    ))?;
    let probe = e(att_id_from_cosines(0.8, 0.6))?;
    let clamp = e(att_id_from_cosines(1e-5, -0.2))?;
    let ok = paired.value == 0.0
        && suite.att_id == Some(0.0)
        && (probe.value - 0.25).abs() <= 1e-12
        && !probe.clamped
        && clamp.clamped;
    Ok(verdict(
        ok,
        format!(
            "seed-paired att_id {} (suite {:?}); (0.8, 0.6) probe {}; clamp flag on baseline 1e-5: {}",
            paired.value, suite.att_id, probe.value, clamp.clamped
        ),
    ))
}

fn alternating_vs_joint(stack: &ToyStack) -> Check {
    let mut lines = Vec::new();
    let mut ok = true;
    for face in common::sources(3) {
        let models = e(stack.models_for(&face))?;
        let alt_cfg = common::ci_config();
        let joint_cfg = RunConfig {
            mode: OptimizationMode::Joint,
            ..common::ci_config()
        };
        let alt = e(curve_stats(
            &e(run_defense(&face.image, &models, &alt_cfg))?
                .trace
                .attack_series(),
        ))?;
        let joint = e(curve_stats(
            &e(run_defense(&face.image, &models, &joint_cfg))?
                .trace
                .attack_series(),
        ))?;
        let ratio = joint.tail_variance / alt.tail_variance;
        ok &= alt.tail_mean > alt.head_mean && ratio >= 2.0;
        lines.push(format!(
            "identity {}: alternating head/tail mean {:.2}/{:.2}, tail variance ratio joint/alternating {:.1}",
            face.identity_id, alt.head_mean, alt.tail_mean, ratio
        ));
    }
    Ok(verdict(ok, lines.join("; ")))
}

struct SharedRuns {
    att_full75: Vec<f64>,
    att_full25: Vec<f64>,
    att_noedit75: Vec<f64>,
    ssim_full75: Vec<f64>,
    ssim_noedit75: Vec<f64>,
}

fn reference_runs(stack: &ToyStack) -> Result<SharedRuns, String> {
    let targets = common::targets();
    let mut runs = SharedRuns {
        att_full75: Vec::new(),
        att_full25: Vec::new(),
        att_noedit75: Vec::new(),
        ssim_full75: Vec::new(),
        ssim_noedit75: Vec::new(),
    };
    for face in common::sources(5) {
        let models = e(stack.models_for(&face))?;
        let pipeline = common::pipeline(&models);
        let scorer = FeatureDistance(models.embedder.clone());
        let measure = |cfg: &RunConfig| -> Result<(f64, f64), String> {
            let r = e(run_defense(&face.image, &models, cfg))?;
            let d = e(defense_suite(
                &face.image,
                &targets,
                &r.protected_image,
                &pipeline,
                models.embedder.as_ref(),
                &scorer,
            ))?;
            let v = e(vision_suite(&face.image, &r.protected_image, &scorer))?;
            Ok((d.att_id.unwrap_or(f64::NAN), v.ssim))
        };
        let full = RunConfig::default();
        let (a75, s75) = measure(&full)?;
        let (a25, _) = measure(&RunConfig {
            epsilon: 25.0 / 255.0,
            ..full.clone()
        })?;
        let (an, sn) = measure(&RunConfig {
            skip_edit: true,
            ..full.clone()
        })?;
        runs.att_full75.push(a75);
        runs.att_full25.push(a25);
        runs.att_noedit75.push(an);
        runs.ssim_full75.push(s75);
        runs.ssim_noedit75.push(sn);
    }
    Ok(runs)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn efficacy_trend(runs: &SharedRuns) -> Check {
    let (hi, lo) = (mean(&runs.att_full75), mean(&runs.att_full25));
    Ok(verdict(
        hi > lo && lo > 0.0,
        format!(
            "mean att_id over 5 images: eps 75/255 = {hi:.4}, eps 25/255 = {lo:.4} (per image 75: {:.3?}, 25: {:.3?})",
            runs.att_full75, runs.att_full25
        ),
    ))
}

fn ablation_sign(runs: &SharedRuns) -> Check {
    let (af, an) = (mean(&runs.att_full75), mean(&runs.att_noedit75));
    let (sf, sn) = (mean(&runs.ssim_full75), mean(&runs.ssim_noedit75));
    let att_ok = an > af;
    let ssim_ok = sn < sf;
    Ok(verdict(
        att_ok && ssim_ok,
        format!(
            "drop_l_edit vs full: mean att_id {an:.4} vs {af:.4} ({}), mean vision SSIM {sn:.4} vs {sf:.4} ({})",
            if att_ok { "higher, as required" } else { "NOT higher" },
            if ssim_ok { "lower, as required" } else { "NOT lower" }
        ),
    ))
}

fn random_image<R: Rng>(rng: &mut R, h: usize, w: usize) -> ImageTensor {
    let data = (0..h * w * 3).map(|_| rng.gen::<f64>()).collect();
    ImageTensor::new(h, w, 3, data).expect("image")
}

fn psnr_oracle(a: &ImageTensor, b: &ImageTensor) -> f64 {
    let n = a.data().len() as f64;
    let mse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        / n;
    -10.0 * mse.log10()
}

/// Mean SSIM over valid 11x11 windows of Rec.601 luma with a Gaussian (1.5)
/// window, using centred second moments.
fn ssim_oracle(a: &ImageTensor, b: &ImageTensor) -> f64 {
    let luma = |img: &ImageTensor, y: usize, x: usize| {
        0.299 * img.get(y, x, 0) + 0.587 * img.get(y, x, 1) + 0.114 * img.get(y, x, 2)
    };
    let mut weights = [[0.0; 11]; 11];
    let mut z = 0.0;
    for (i, row) in weights.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            z += *v;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let (h, w) = (a.height(), a.width());
    let mut total = 0.0;
    let mut count = 0.0;
    for y0 in 0..=h - 11 {
        for x0 in 0..=w - 11 {
            let (mut mx, mut my) = (0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let wt = weights[i][j] / z;
                    mx += wt * luma(a, y0 + i, x0 + j);
                    my += wt * luma(b, y0 + i, x0 + j);
                }
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let wt = weights[i][j] / z;
                    let dx = luma(a, y0 + i, x0 + j) - mx;
                    let dy = luma(b, y0 + i, x0 + j) - my;
                    vx += wt * dx * dx;
                    vy += wt * dy * dy;
                    cxy += wt * dx * dy;
                }
            }
            total += (2.0 * mx * my + c1) * (2.0 * cxy + c2)
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1.0;
        }
    }
    total / count
}

fn metric_kernels() -> Check {
    let mut rng = rng_for(8, "acceptance-metrics");
    let (mut dp, mut ds) = (0.0f64, 0.0f64);
    let mut identity_ok = true;
    for _ in 0..20 {
        let (h, w) = (rng.gen_range(11..28), rng.gen_range(11..28));
        let a = random_image(&mut rng, h, w);
        let mut b = a.clone();
        let amp = rng.gen_range(0.01..0.5);
        for v in b.data_mut() {
            *v = (*v + amp * (rng.gen::<f64>() - 0.5)).clamp(0.0, 1.0);
        }
        dp = dp.max((e(psnr(&a, &b))? - psnr_oracle(&a, &b)).abs());
        ds = ds.max((e(ssim(&a, &b))? - ssim_oracle(&a, &b)).abs());
        identity_ok &= e(ssim(&a, &a))? == 1.0 && e(psnr(&a, &a))? == f64::INFINITY;
    }
    Ok(verdict(
        dp <= 1e-9 && ds <= 1e-9 && identity_ok,
        format!(
            "max |PSNR - oracle| {dp:.1e}, max |SSIM - oracle| {ds:.1e} (limit 1e-9) over 20 pairs; ssim(a,a) = 1 and psnr(a,a) = +inf: {identity_ok}"
        ),
    ))
}

fn robustness_harness(stack: &ToyStack) -> Check {
    let mut impulse = ImageTensor::zeros(15, 15, 1);
    impulse.set(7, 7, 0, 1.0);
    let blurred = e(gaussian_blur(&impulse, 1.0))?;
    let k: Vec<f64> = (-3..=3).map(|d: i32| (-(d * d) as f64 / 2.0).exp()).collect();
    let ks: f64 = k.iter().sum();
    let mut blur_err = 0.0f64;
    for y in 0..15 {
        for x in 0..15 {
            let (dy, dx) = (y as i32 - 7, x as i32 - 7);
            let want = if dy.abs() <= 3 && dx.abs() <= 3 {
                k[(dy + 3) as usize] * k[(dx + 3) as usize] / (ks * ks)
            } else {
                0.0
            };
            blur_err = blur_err.max((blurred.get(y, x, 0) - want).abs());
        }
    }

    let mut probe = ImageTensor::zeros(32, 32, 3);
    for y in 0..32 {
        for x in 0..32 {
            for c in 0..3 {
                let v = 0.5 + 0.4 * ((x as f64 * 0.9 + c as f64).sin() * (y as f64 * 0.6).cos());
                probe.set(y, x, c, v);
            }
        }
    }
    let q: Vec<f64> = [30u8, 60, 90]
        .iter()
        .map(|&q| e(jpeg_roundtrip(&probe, q)).and_then(|r| e(psnr(&probe, &r))))
        .collect::<Result<_, _>>()?;
    let monotone = q[0] < q[1] && q[1] < q[2];

    let face = &common::sources(1)[0];
    let models = e(stack.models_for(face))?;
    let protected = e(run_defense(&face.image, &models, &common::tiny_config()))?.protected_image;
    let targets = &common::targets()[..2];
    let pipeline = common::pipeline(&models);
    let scorer = FeatureDistance(models.embedder.clone());
    let transforms = Transform::standard_set();
    let rows = e(robustness_eval(
        &protected,
        &face.image,
        targets,
        &transforms,
        &pipeline,
        models.embedder.as_ref(),
        &scorer,
    ))?;
    let direct = e(defense_suite(
        &face.image,
        targets,
        &protected,
        &pipeline,
        models.embedder.as_ref(),
        &scorer,
    ))?;
    let rows_ok = rows.len() == transforms.len()
        && rows.iter().zip(&transforms).all(|(r, t)| r.transform == *t)
        && rows.iter().all(|r| r.defense.att_id.is_some())
        && rows[0].defense == direct;
    Ok(verdict(
        blur_err <= 1e-9 && monotone && rows_ok,
        format!(
            "blur impulse error {blur_err:.1e}; JPEG PSNR q30/60/90 = {:.2}/{:.2}/{:.2} dB; {} rows for {} transforms, identity row equals the direct suite: {}",
            q[0],
            q[1],
            q[2],
            rows.len(),
            transforms.len(),
            rows_ok
        ),
    ))
}

fn read_dir_files(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).expect("dir") {
            let p = entry.expect("entry").path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).expect("prefix").to_string_lossy().into_owned();
                let mut bytes = fs::read(&p).expect("file");
                if rel == MANIFEST_FILE {
                    let mut v: serde_json::Value = serde_json::from_slice(&bytes).expect("json");
                    v["created_unix"] = serde_json::Value::Null;
                    bytes = serde_json::to_vec(&v).expect("json");
                }
                out.insert(rel, bytes);
            }
        }
    }
    out
}

fn probe_outputs(models: &ModelStack, images: &[ImageTensor]) -> Result<Vec<Vec<f64>>, String> {
    let mut out = Vec::new();
    let zero = NoiseMapSet::zeros(&models.generator.noise_shapes());
    for img in images {
        let z = e(models.codec.encode(img))?;
        out.push(z.iter().copied().collect());
        out.push(e(models.codec.decode(&z))?.into_data());
        let id = e(models.embedder.embed(img))?;
        out.push(id.0.clone());
        let cond = faceshield::models::traits::ConditionEmbedding::Identity(id);
        out.push(e(models.denoiser.predict(&z, 500, &cond))?.iter().copied().collect());
        let w = e(models.inverter.invert(img))?;
        out.push(w.data.clone());
        out.push(e(models.generator.generate(&w, &zero))?.into_data());
        for a in models.classifier.attributes().to_vec() {
            out.push(vec![e(models.classifier.classify(img, a))?.0]);
        }
        let regions = AttributeSpec::default().regions();
        out.push(e(models.parser.parse(img, &regions))?.values().to_vec());
    }
    Ok(out)
}

fn determinism_and_persistence(stack: &ToyStack) -> Check {
    let tmp = e(tempfile::tempdir())?;
    let mut manifest = faceshield::harness::ExperimentManifest::default();
    manifest.run = common::tiny_config();
    manifest.epsilons = vec![25.0 / 255.0, 75.0 / 255.0];
    manifest.targets.identities = 2;
    manifest.sources.identities = 2;
    manifest.swap = SwapConfig {
        num_steps: 5,
        ..SwapConfig::default()
    };
    let config = tmp.path().join("config.json");
    e(fs::write(&config, e(serde_json::to_string(&manifest))?))?;
    let ck = common::stack_dir();
    let commands: Vec<Vec<&str>> = vec![
        vec!["train-toys"],
        vec!["protect"],
        vec!["swap", "--source-index", "1"],
        vec!["evaluate", "--protected", "PROTECTED"],
        vec!["ablate"],
        vec!["robustness", "--protected", "PROTECTED"],
        vec!["transfer", "--protected", "PROTECTED"],
        vec!["sweep", "--sources", "1"],
        vec!["curves"],
    ];
    let protected = tmp.path().join("a/protect/protected.png");
    let mut mismatched = Vec::new();
    for cmd in &commands {
        for round in ["a", "b"] {
            let dir = tmp.path().join(round).join(cmd[0]);
            let mut argv = vec![
                "faceshield".to_string(),
                "--config".into(),
                config.to_string_lossy().into_owned(),
                "--checkpoint-dir".into(),
                ck.to_string_lossy().into_owned(),
                "--out".into(),
                dir.to_string_lossy().into_owned(),
            ];
            argv.extend(cmd.iter().map(|s| {
                if *s == "PROTECTED" {
                    protected.to_string_lossy().into_owned()
                } else {
                    s.to_string()
                }
            }));
            let out = e(std::process::Command::new(env!("CARGO_BIN_EXE_faceshield"))
                .args(&argv[1..])
                .output())?;
            if !out.status.success() {
                return Err(format!(
                    "`{}` exited with {:?}: {}",
                    cmd.join(" "),
                    out.status.code(),
                    String::from_utf8_lossy(&out.stderr).trim()
                ));
            }
            e(verify_run_dir(&dir))?;
        }
        let a = read_dir_files(&tmp.path().join("a").join(cmd[0]));
        let b = read_dir_files(&tmp.path().join("b").join(cmd[0]));
        if a != b || a.is_empty() {
            mismatched.push(cmd[0]);
        }
    }

    let saved = tmp.path().join("stack");
    e(stack.save(&saved))?;
    let loaded = e(ToyStack::load(&saved))?;
    let images: Vec<ImageTensor> = common::sources(3).into_iter().map(|f| f.image).collect();
    let same_outputs =
        probe_outputs(&e(stack.models())?, &images)? == probe_outputs(&e(loaded.models())?, &images)?;
    let same_sums = e(stack.checksums())? == e(loaded.checksums())?;
    Ok(verdict(
        mismatched.is_empty() && same_outputs && same_sums,
        format!(
            "{} subcommands rerun bit-for-bit{}; checkpoint round trip: outputs identical {same_outputs}, checksums identical {same_sums}",
            commands.len() - mismatched.len(),
            if mismatched.is_empty() {
                String::new()
            } else {
                format!(" (differing: {})", mismatched.join(", "))
            }
        ),
    ))
}

fn gates_line(g: &QualityGates) -> String {
    format!(
        "codec PSNR {:.2} dB (>= {}), generator PSNR {:.2} dB (>= {}), same/cross identity cosine {:.3}/{:.3}, swap cosine to source/target {:.3}/{:.3} over {} pairs",
        g.codec_psnr,
        QualityGates::CODEC_PSNR_MIN,
        g.generator_psnr,
        QualityGates::GENERATOR_PSNR_MIN,
        g.same_identity_cosine,
        g.cross_identity_cosine,
        g.swap_source_cosine,
        g.swap_target_cosine,
        g.swap_pairs
    )
}

fn main() {
    let _ = env_logger::builder().is_test(true).try_init();
    let started = Instant::now();
    let stack = common::stack();
    let gates = quality_gates(stack, &SwapConfig::default(), 20);
    let gates_ok = matches!(&gates, Ok(g) if g.passed());
    let blocked = || -> Check {
        Ok(Outcome {
            status: Status::Blocked,
            detail: "toy-model quality gates failed".into(),
        })
    };
    let min = |m: u64| Some(Duration::from_secs(60 * m));

    let mut ok = true;
    ok &= run(1, "diffusion algebra", min(1), diffusion_algebra);
    ok &= run(2, "gradient suite", min(5), || gradient_suite(stack));
    ok &= run(3, "PGD contract", None, || pgd_contract(stack));
    ok &= run(4, "identity loss rate exactness", None, || {
        att_id_exactness(stack)
    });
    if gates_ok {
        ok &= run(5, "alternating vs joint loss curves", min(15), || {
            alternating_vs_joint(stack)
        });
        let t = Instant::now();
        let runs = reference_runs(stack);
        let shared = t.elapsed();
        emit(&format!(
            "acceptance note: criteria 6 and 7 share {:.1}s of reference-config runs",
            shared.as_secs_f64()
        ));
        match runs {
            Ok(runs) => {
                let limit = Duration::from_secs(30 * 60).checked_sub(shared);
                ok &= run(6, "defense efficacy trend", limit.or(Some(Duration::ZERO)), || {
                    efficacy_trend(&runs)
                });
                ok &= run(7, "ablation sign check", None, || ablation_sign(&runs));
            }
            Err(err) => {
                for (n, title) in [(6, "defense efficacy trend"), (7, "ablation sign check")] {
                    let msg = err.clone();
                    ok &= run(n, title, None, || Err(msg));
                }
            }
        }
    } else {
        run(5, "alternating vs joint loss curves", None, blocked);
        run(6, "defense efficacy trend", None, blocked);
        run(7, "ablation sign check", None, blocked);
    }
    ok &= run(8, "metric kernels", None, metric_kernels);
    ok &= run(9, "robustness harness", None, || robustness_harness(stack));
    ok &= run(10, "determinism and persistence", None, || {
        determinism_and_persistence(stack)
    });
    ok &= run(11, "toy-model quality gates", None, || match &gates {
        Ok(g) => Ok(verdict(g.passed(), gates_line(g))),
        Err(err) => Err(err.to_string()),
    });
    emit(&format!(
        "acceptance summary: {} in {:.1}s",
        if ok { "all criteria passed" } else { "at least one criterion FAILED" },
        started.elapsed().as_secs_f64()
    ));
    if !ok {
        std::process::exit(1);
    }
}
