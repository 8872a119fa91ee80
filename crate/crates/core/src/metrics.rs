//! Image-quality and identity metrics: PSNR, SSIM, a feature-space perceptual
//! distance and the identity loss rate of a protected source.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::models::stack::ModelStack;
use crate::models::traits::FaceEmbedder;
use crate::swap::{swap, SwapConfig};

/// Floor on the clean-swap cosine in the identity loss rate.
pub const ATT_ID_FLOOR: f64 = 1e-3;

/// `10 log10(1 / MSE)` for images in `[0, 1]`; `+inf` when the images are equal.
pub fn psnr(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
        }
    }
}

impl SsimConfig {
    pub fn describe(&self) -> String {
        format!(
            "gaussian {w}x{w} sigma {s}, K1 {k1}, K2 {k2}, valid windows, Rec.601 luma",
            w = self.window,
            s = self.sigma,
            k1 = self.k1,
            k2 = self.k2
        )
    }
}

/// Rec. 601 luma plane; single-channel images pass through.
pub fn luminance(image: &ImageTensor) -> Vec<f64> {
    let c = image.channels();
    if c != 3 {
        return image
            .data()
            .chunks(c)
            .map(|px| px.iter().sum::<f64>() / c as f64)
            .collect();
    }
    image
        .data()
        .chunks(3)
        .map(|px| 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2])
        .collect()
}

fn window_weights(size: usize, sigma: f64) -> Vec<f64> {
    let r = (size as f64 - 1.0) / 2.0;
    let k: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let z: f64 = k.iter().sum();
    k.into_iter().map(|v| v / z).collect()
}

/// Mean structural similarity over every full window of the luma planes.
pub fn ssim_with(a: &ImageTensor, b: &ImageTensor, cfg: &SsimConfig) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let (h, w) = (a.height(), a.width());
    if cfg.window == 0 || h < cfg.window || w < cfg.window {
        return Err(Error::invalid(format!(
            "image {h}x{w} smaller than the {0}x{0} window",
            cfg.window
        )));
    }
    if !(cfg.sigma > 0.0) {
        return Err(Error::invalid("window sigma must be > 0"));
    }
    let (x, y) = (luminance(a), luminance(b));
    let k = window_weights(cfg.window, cfg.sigma);
    let c1 = (cfg.k1).powi(2);
    let c2 = (cfg.k2).powi(2);
    let n = cfg.window;
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..=h - n {
        for j in 0..=w - n {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for di in 0..n {
                for dj in 0..n {
                    let wt = k[di] * k[dj];
                    let p = (i + di) * w + j + dj;
                    mx += wt * x[p];
                    my += wt * y[p];
                    sxx += wt * x[p] * x[p];
                    syy += wt * y[p] * y[p];
                    sxy += wt * x[p] * y[p];
                }
            }
            let (vx, vy, cxy) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

pub fn ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    ssim_with(a, b, &SsimConfig::default())
}

/// Scores perceptual dissimilarity; a pretrained scorer can replace the default.
pub trait PerceptualScorer: Send + Sync {
    fn name(&self) -> &str;
    fn distance(&self, a: &ImageTensor, b: &ImageTensor) -> Result<f64>;
}

/// Mean over the embedder's layers of the mean squared difference between
/// unit-normalised activations.
pub fn perceptual_distance(
    a: &ImageTensor,
    b: &ImageTensor,
    embedder: &dyn FaceEmbedder,
) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let fa = embedder.feature_layers(a)?;
    let fb = embedder.feature_layers(b)?;
    if fa.is_empty() || fa.len() != fb.len() {
        return Err(Error::invalid(
            "feature extractor returned no comparable layers",
        ));
    }
    let unit = |v: &[f64]| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter()
            .map(|x| if n > 0.0 { x / n } else { 0.0 })
            .collect::<Vec<_>>()
    };
    let mut total = 0.0;
    for (la, lb) in fa.iter().zip(&fb) {
        if la.len() != lb.len() || la.is_empty() {
            return Err(Error::shape(la.len(), lb.len()));
        }
        let (ua, ub) = (unit(la), unit(lb));
        total += ua
            .iter()
            .zip(&ub)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / la.len() as f64;
    }
    Ok(total / fa.len() as f64)
}

/// [`perceptual_distance`] over a face embedder's activations.
#[derive(Clone)]
pub struct FeatureDistance(pub Arc<dyn FaceEmbedder>);

impl PerceptualScorer for FeatureDistance {
    fn name(&self) -> &str {
        "perceptual"
    }

    fn distance(&self, a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
        perceptual_distance(a, b, self.0.as_ref())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttId {
    pub value: f64,
    /// Set when the clean-swap cosine was raised to the floor.
    pub clamped: bool,
}

/// `1 - adversarial / baseline` with the baseline cosine floored at [`ATT_ID_FLOOR`].
pub fn att_id_from_cosines(baseline: f64, adversarial: f64) -> Result<AttId> {
    if !baseline.is_finite() || !adversarial.is_finite() {
        return Err(Error::NonFinite("identity cosine".into()));
    }
    let clamped = baseline < ATT_ID_FLOOR;
    Ok(AttId {
        value: 1.0 - adversarial / baseline.max(ATT_ID_FLOOR),
        clamped,
    })
}

/// Identity loss rate of the protected swap relative to the clean swap.
pub fn att_id(
    src: &ImageTensor,
    clean_swap: &ImageTensor,
    protected_swap: &ImageTensor,
    embedder: &dyn FaceEmbedder,
) -> Result<AttId> {
    let e = embedder.embed(src)?;
    let baseline = e.cosine(&embedder.embed(clean_swap)?);
    let adversarial = e.cosine(&embedder.embed(protected_swap)?);
    att_id_from_cosines(baseline, adversarial)
}

/// A face-swap pipeline evaluated under seed pairing.
pub trait SwapPipeline: Send + Sync {
    fn name(&self) -> &str;
    fn swap(&self, source: &ImageTensor, target: &ImageTensor, seed: u64) -> Result<ImageTensor>;
}

/// The diffusion swap over a model stack.
#[derive(Debug, Clone)]
pub struct DiffusionSwap {
    pub name: String,
    pub models: ModelStack,
    pub config: SwapConfig,
}

impl SwapPipeline for DiffusionSwap {
    fn name(&self) -> &str {
        &self.name
    }

    fn swap(&self, source: &ImageTensor, target: &ImageTensor, seed: u64) -> Result<ImageTensor> {
        let cfg = SwapConfig {
            seed: self.config.seed.wrapping_add(seed),
            ..self.config
        };
        swap(source, target, &self.models, &cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    Defense,
    Vision,
}

/// Metrics of one comparison. `psnr` is `+inf` for identical images and is
/// written as the string `"inf"` in JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    pub ssim: f64,
    #[serde(with = "inf_float")]
    pub psnr: f64,
    pub perceptual: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub att_id: Option<AttId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub kind: ReportKind,
    pub ssim: f64,
    #[serde(with = "inf_float")]
    pub psnr: f64,
    pub perceptual: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub att_id: Option<f64>,
    /// Number of targets whose baseline cosine hit the floor.
    pub att_id_clamped: usize,
    pub n_targets: usize,
    pub per_target: Vec<PairMetrics>,
    pub ssim_variant: String,
    pub perceptual_scorer: String,
}

impl MetricReport {
    fn from_rows(kind: ReportKind, rows: Vec<PairMetrics>, scorer: &str) -> Self {
        let n = rows.len() as f64;
        let mean = |f: &dyn Fn(&PairMetrics) -> f64| rows.iter().map(f).sum::<f64>() / n;
        let att: Vec<AttId> = rows.iter().filter_map(|r| r.att_id).collect();
        Self {
            kind,
            ssim: mean(&|r| r.ssim),
            psnr: mean(&|r| r.psnr),
            perceptual: mean(&|r| r.perceptual),
            att_id: (!att.is_empty())
                .then(|| att.iter().map(|a| a.value).sum::<f64>() / att.len() as f64),
            att_id_clamped: att.iter().filter(|a| a.clamped).count(),
            n_targets: rows.len(),
            per_target: rows,
            ssim_variant: SsimConfig::default().describe(),
            perceptual_scorer: scorer.to_string(),
        }
    }
}

fn pair(a: &ImageTensor, b: &ImageTensor, scorer: &dyn PerceptualScorer) -> Result<PairMetrics> {
    Ok(PairMetrics {
        ssim: ssim(a, b)?,
        psnr: psnr(a, b)?,
        perceptual: scorer.distance(a, b)?,
        att_id: None,
    })
}

/// Compares clean and protected swaps onto every target; target `k` uses swap seed `k`
/// for both sides.
pub fn defense_suite(
    src: &ImageTensor,
    targets: &[ImageTensor],
    protected: &ImageTensor,
    pipeline: &dyn SwapPipeline,
    embedder: &dyn FaceEmbedder,
    scorer: &dyn PerceptualScorer,
) -> Result<MetricReport> {
    if targets.is_empty() {
        return Err(Error::invalid("defense suite needs at least one target"));
    }
    src.ensure_same_shape(protected)?;
    let rows = targets
        .iter()
        .enumerate()
        .map(|(k, target)| {
            let clean = pipeline.swap(src, target, k as u64)?;
            let adv = pipeline.swap(protected, target, k as u64)?;
            let mut row = pair(&clean, &adv, scorer)?;
            row.att_id = Some(att_id(src, &clean, &adv, embedder)?);
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport::from_rows(
        ReportKind::Defense,
        rows,
        scorer.name(),
    ))
}

/// Imperceptibility of the protected image against its source.
pub fn vision_suite(
    src: &ImageTensor,
    protected: &ImageTensor,
    scorer: &dyn PerceptualScorer,
) -> Result<MetricReport> {
    let row = pair(src, protected, scorer)?;
    Ok(MetricReport::from_rows(
        ReportKind::Vision,
        vec![row],
        scorer.name(),
    ))
}

mod inf_float {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("bad float `{s}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_values() {
        let a = ImageTensor::filled(4, 4, 3, 0.5);
        let b = ImageTensor::filled(4, 4, 3, 0.6);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
    }

    #[test]
    fn ssim_of_constants() {
        let a = ImageTensor::filled(16, 16, 3, 0.0);
        let b = ImageTensor::filled(16, 16, 3, 1.0);
        let (c1, c2) = (1e-4, 9e-4);
        let want = (c1 * c2) / ((1.0 + c1) * c2);
        assert!((ssim(&a, &b).unwrap() - want).abs() < 1e-12);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!(ssim(
            &ImageTensor::filled(8, 8, 3, 0.0),
            &ImageTensor::filled(8, 8, 3, 0.0)
        )
        .is_err());
    }

    #[test]
    fn att_id_probes() {
        assert!((att_id_from_cosines(0.8, 0.6).unwrap().value - 0.25).abs() < 1e-12);
        assert_eq!(att_id_from_cosines(0.7, 0.7).unwrap().value, 0.0);
        assert_eq!(att_id_from_cosines(0.7, 0.0).unwrap().value, 1.0);
        let c = att_id_from_cosines(1e-5, 0.2).unwrap();
        assert!(c.clamped);
        assert!((c.value - (1.0 - 0.2 / 1e-3)).abs() < 1e-9);
        assert!(!att_id_from_cosines(0.5, 0.2).unwrap().clamped);
    }

    #[test]
    fn report_json_keeps_infinity() {
        let row = PairMetrics {
            ssim: 1.0,
            psnr: f64::INFINITY,
            perceptual: 0.0,
            att_id: None,
        };
        let r = MetricReport::from_rows(ReportKind::Vision, vec![row], "perceptual");
        let text = serde_json::to_string(&r).unwrap();
        assert!(text.contains("\"psnr\":\"inf\""));
        let back: MetricReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, r);
    }
}
