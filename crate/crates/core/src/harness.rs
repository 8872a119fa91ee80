//! Experiment plumbing: image transforms, robustness / transfer / ablation
//! evaluations, epsilon sweeps, plots and self-describing run directories.

use std::collections::BTreeMap;
use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::codecs::jpeg::JpegEncoder;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::metrics::{
    defense_suite, psnr, vision_suite, DiffusionSwap, MetricReport, PerceptualScorer, SwapPipeline,
};
use crate::models::dataset::{heldout_identities, training_identities, Dataset};
use crate::models::stack::{ModelStack, ToyStack, ToyTrainConfig};
use crate::models::traits::{FaceEmbedder, NoiseMapSet};
use crate::optimize::{run_defense, DefenseResult, RunConfig};
use crate::resample;
use crate::swap::SwapConfig;
use crate::util::{cosine, mean, sha256_hex};

/// Per-channel Gaussian blur with 3-sigma truncation and reflect padding.
pub fn gaussian_blur(image: &ImageTensor, sigma: f64) -> Result<ImageTensor> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!(
            "sigma must be finite and >= 0, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(image.clone());
    }
    let (h, w, c) = image.shape();
    let map = resample::gaussian_blur((h, w), c, sigma)?;
    let mut out = vec![0.0; image.len()];
    map.apply_slice(image.data(), &mut out);
    ImageTensor::new(h, w, c, out)
}

/// Baseline JPEG encode at `quality` followed by a decode.
pub fn jpeg_roundtrip(image: &ImageTensor, quality: u8) -> Result<ImageTensor> {
    let buf = jpeg_bytes(image, quality)?;
    let decoded = image::load_from_memory_with_format(&buf, image::ImageFormat::Jpeg)?.to_rgb8();
    Ok(ImageTensor::from_rgb8(&decoded))
}

/// Baseline JPEG encoding of `image` at `quality`.
pub fn jpeg_bytes(image: &ImageTensor, quality: u8) -> Result<Vec<u8>> {
    if !(1..=100).contains(&quality) {
        return Err(Error::invalid(format!(
            "JPEG quality must lie in 1..=100, got {quality}"
        )));
    }
    if image.channels() != 3 {
        return Err(Error::invalid("JPEG encoding needs an RGB image"));
    }
    let mut cur = Cursor::new(Vec::new());
    JpegEncoder::new_with_quality(&mut cur, quality).encode_image(&image.to_rgb8())?;
    Ok(cur.into_inner())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Transform {
    Identity,
    Blur { sigma: f64 },
    Jpeg { quality: u8 },
}

impl Transform {
    pub fn label(&self) -> String {
        match self {
            Transform::Identity => "identity".into(),
            Transform::Blur { sigma } => format!("blur_sigma{sigma}"),
            Transform::Jpeg { quality } => format!("jpeg_q{quality}"),
        }
    }

    pub fn apply(&self, image: &ImageTensor) -> Result<ImageTensor> {
        match *self {
            Transform::Identity => Ok(image.clone()),
            Transform::Blur { sigma } => gaussian_blur(image, sigma),
            Transform::Jpeg { quality } => jpeg_roundtrip(image, quality),
        }
    }

    /// Identity, JPEG at 30/60/90 and blur at sigma 0.5/1.0.
    pub fn standard_set() -> Vec<Transform> {
        vec![
            Transform::Identity,
            Transform::Jpeg { quality: 30 },
            Transform::Jpeg { quality: 60 },
            Transform::Jpeg { quality: 90 },
            Transform::Blur { sigma: 0.5 },
            Transform::Blur { sigma: 1.0 },
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub transform: Transform,
    pub label: String,
    pub defense: MetricReport,
}

/// Applies each transform to the protected image and reruns the defense suite
/// against the untransformed source.
pub fn robustness_eval(
    protected: &ImageTensor,
    src: &ImageTensor,
    targets: &[ImageTensor],
    transforms: &[Transform],
    pipeline: &dyn SwapPipeline,
    embedder: &dyn FaceEmbedder,
    scorer: &dyn PerceptualScorer,
) -> Result<Vec<RobustnessRow>> {
    transforms
        .iter()
        .map(|t| {
            let transformed = t.apply(protected)?;
            Ok(RobustnessRow {
                transform: *t,
                label: t.label(),
                defense: defense_suite(src, targets, &transformed, pipeline, embedder, scorer)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRow {
    pub pipeline: String,
    /// The pipeline the protection was optimised against.
    pub defense_target: bool,
    pub defense: MetricReport,
}

pub fn transfer_eval(
    protected: &ImageTensor,
    src: &ImageTensor,
    targets: &[ImageTensor],
    pipelines: &[&dyn SwapPipeline],
    defense_target: &str,
    embedder: &dyn FaceEmbedder,
    scorer: &dyn PerceptualScorer,
) -> Result<Vec<TransferRow>> {
    if pipelines.len() < 2 {
        return Err(Error::invalid(
            "transfer evaluation needs at least two pipelines",
        ));
    }
    if !pipelines.iter().any(|p| p.name() == defense_target) {
        return Err(Error::invalid(format!(
            "no pipeline named `{defense_target}`"
        )));
    }
    pipelines
        .iter()
        .map(|p| {
            Ok(TransferRow {
                pipeline: p.name().to_string(),
                defense_target: p.name() == defense_target,
                defense: defense_suite(src, targets, protected, *p, embedder, scorer)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationSwitch {
    /// Zero the diffusion-loss weight.
    DropLDiff,
    /// Skip the editing phase and fusion.
    DropLEdit,
}

impl AblationSwitch {
    pub fn name(self) -> &'static str {
        match self {
            AblationSwitch::DropLDiff => "drop_l_diff",
            AblationSwitch::DropLEdit => "drop_l_edit",
        }
    }

    pub fn apply(self, cfg: &mut RunConfig) {
        match self {
            AblationSwitch::DropLDiff => cfg.adv_weights.lambda3 = 0.0,
            AblationSwitch::DropLEdit => cfg.skip_edit = true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationVariant {
    pub name: String,
    pub switches: Vec<AblationSwitch>,
    pub defense: MetricReport,
    pub vision: MetricReport,
}

/// One variant per subset of `switches` (full method first).
pub fn ablation_variants(switches: &[AblationSwitch]) -> Result<Vec<Vec<AblationSwitch>>> {
    let mut uniq = switches.to_vec();
    uniq.sort();
    uniq.dedup();
    if uniq.len() != switches.len() {
        return Err(Error::invalid("duplicate ablation switch"));
    }
    Ok((0..1usize << uniq.len())
        .map(|mask| {
            uniq.iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, s)| *s)
                .collect()
        })
        .collect())
}

fn variant_name(switches: &[AblationSwitch]) -> String {
    if switches.is_empty() {
        "full".into()
    } else {
        switches
            .iter()
            .map(|s| s.name())
            .collect::<Vec<_>>()
            .join("+")
    }
}

#[allow(clippy::too_many_arguments)]
pub fn ablation_run(
    src: &ImageTensor,
    models: &ModelStack,
    cfg: &RunConfig,
    switches: &[AblationSwitch],
    targets: &[ImageTensor],
    pipeline: &dyn SwapPipeline,
    scorer: &dyn PerceptualScorer,
) -> Result<Vec<(AblationVariant, DefenseResult)>> {
    ablation_variants(switches)?
        .into_iter()
        .map(|set| {
            let mut c = cfg.clone();
            for s in &set {
                s.apply(&mut c);
            }
            let result = run_defense(src, models, &c)?;
            let variant = AblationVariant {
                name: variant_name(&set),
                defense: defense_suite(
                    src,
                    targets,
                    &result.protected_image,
                    pipeline,
                    models.embedder.as_ref(),
                    scorer,
                )?,
                vision: vision_suite(src, &result.protected_image, scorer)?,
                switches: set,
            };
            Ok((variant, result))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub att_id: f64,
    pub defense_ssim: f64,
    pub defense_psnr: f64,
    pub defense_perceptual: f64,
    pub vision_ssim: f64,
    pub vision_psnr: f64,
    pub vision_perceptual: f64,
}

/// Runs the defense once per budget, averaging over `sources`.
pub fn sweep_epsilon(
    sources: &[(ImageTensor, ModelStack)],
    cfg: &RunConfig,
    epsilons: &[f64],
    targets: &[ImageTensor],
    pipeline_for: &dyn Fn(&ModelStack) -> Box<dyn SwapPipeline>,
    scorer_for: &dyn Fn(&ModelStack) -> Box<dyn PerceptualScorer>,
) -> Result<Vec<SweepRow>> {
    if epsilons.is_empty() || sources.is_empty() {
        return Err(Error::invalid(
            "sweep needs at least one epsilon and one source",
        ));
    }
    let n = sources.len() as f64;
    epsilons
        .iter()
        .map(|&eps| {
            let c = RunConfig {
                epsilon: eps,
                ..cfg.clone()
            };
            let mut row = SweepRow {
                epsilon: eps,
                att_id: 0.0,
                defense_ssim: 0.0,
                defense_psnr: 0.0,
                defense_perceptual: 0.0,
                vision_ssim: 0.0,
                vision_psnr: 0.0,
                vision_perceptual: 0.0,
            };
            for (src, models) in sources {
                let r = run_defense(src, models, &c)?;
                let pipeline = pipeline_for(models);
                let scorer = scorer_for(models);
                let d = defense_suite(
                    src,
                    targets,
                    &r.protected_image,
                    pipeline.as_ref(),
                    models.embedder.as_ref(),
                    scorer.as_ref(),
                )?;
                let v = vision_suite(src, &r.protected_image, scorer.as_ref())?;
                row.att_id += d.att_id.unwrap_or(0.0) / n;
                row.defense_ssim += d.ssim / n;
                row.defense_psnr += d.psnr / n;
                row.defense_perceptual += d.perceptual / n;
                row.vision_ssim += v.ssim / n;
                row.vision_psnr += v.psnr / n;
                row.vision_perceptual += v.perceptual / n;
            }
            Ok(row)
        })
        .collect()
}

pub fn write_csv<T: Serialize>(rows: &[T], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Static line chart of one or more series; no text is rendered.
pub fn plot_lines(series: &[(&str, Vec<(f64, f64)>)], path: impl AsRef<Path>) -> Result<()> {
    use plotters::prelude::*;

    let pts: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|(_, s)| s.iter().copied())
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    if pts.is_empty() {
        return Err(Error::invalid("nothing to plot"));
    }
    let range = |f: fn(&(f64, f64)) -> f64| {
        let lo = pts.iter().map(f).fold(f64::INFINITY, f64::min);
        let hi = pts.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 };
        (lo - pad)..(hi + pad)
    };
    let plot_err = |e: &dyn std::fmt::Display| Error::invalid(format!("plot: {e}"));
    const SIZE: (u32, u32) = (640, 400);
    let mut buf = vec![0u8; (SIZE.0 * SIZE.1 * 3) as usize];
    {
        let root = BitMapBackend::with_buffer(&mut buf, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(|e| plot_err(&e))?;
        let mut chart = ChartBuilder::on(&root)
            .margin(24)
            .build_cartesian_2d(range(|p| p.0), range(|p| p.1))
            .map_err(|e| plot_err(&e))?;
        let palette = [BLUE, RED, GREEN, MAGENTA, CYAN, BLACK];
        for (i, (_, s)) in series.iter().enumerate() {
            let color = palette[i % palette.len()];
            let s: Vec<_> = s
                .iter()
                .copied()
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .collect();
            chart
                .draw_series(LineSeries::new(s.iter().copied(), color.stroke_width(2)))
                .map_err(|e| plot_err(&e))?;
            chart
                .draw_series(s.iter().map(|p| Circle::new(*p, 3, color.filled())))
                .map_err(|e| plot_err(&e))?;
        }
        let area = chart.plotting_area();
        let (xr, yr) = (area.get_x_range(), area.get_y_range());
        area.draw(&PathElement::new(
            vec![
                (xr.start, yr.start),
                (xr.end, yr.start),
                (xr.end, yr.end),
                (xr.start, yr.end),
                (xr.start, yr.start),
            ],
            BLACK,
        ))
        .map_err(|e| plot_err(&e))?;
        root.present().map_err(|e| plot_err(&e))?;
    }
    image::RgbImage::from_raw(SIZE.0, SIZE.1, buf)
        .expect("plot buffer size")
        .save(path)?;
    Ok(())
}

/// One chart per sweep metric: identity loss rate, vision SSIM, vision PSNR
/// and vision perceptual distance against epsilon.
pub fn plot_sweep(rows: &[SweepRow], dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let charts: [(&str, fn(&SweepRow) -> f64); 4] = [
        ("sweep_att_id.png", |r| r.att_id),
        ("sweep_vision_ssim.png", |r| r.vision_ssim),
        ("sweep_vision_psnr.png", |r| r.vision_psnr),
        ("sweep_vision_perceptual.png", |r| r.vision_perceptual),
    ];
    charts
        .iter()
        .map(|(name, f)| {
            let path = dir.join(name);
            let pts = rows.iter().map(|r| (r.epsilon * 255.0, f(r))).collect();
            plot_lines(&[(name, pts)], &path)?;
            Ok(path)
        })
        .collect()
}

/// Toy-stack quality measurements that gate the defense experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityGates {
    pub codec_psnr: f64,
    pub generator_psnr: f64,
    pub same_identity_cosine: f64,
    pub cross_identity_cosine: f64,
    /// Mean cosine of the swap output to the source identity.
    pub swap_source_cosine: f64,
    /// Mean cosine of the swap output to the target identity.
    pub swap_target_cosine: f64,
    pub swap_pairs: usize,
}

impl QualityGates {
    pub const CODEC_PSNR_MIN: f64 = 30.0;
    pub const GENERATOR_PSNR_MIN: f64 = 28.0;

    pub fn codec_ok(&self) -> bool {
        self.codec_psnr >= Self::CODEC_PSNR_MIN
    }

    pub fn generator_ok(&self) -> bool {
        self.generator_psnr >= Self::GENERATOR_PSNR_MIN
    }

    pub fn embedder_ok(&self) -> bool {
        self.same_identity_cosine > self.cross_identity_cosine
    }

    pub fn swap_ok(&self) -> bool {
        self.swap_source_cosine > self.swap_target_cosine
    }

    pub fn passed(&self) -> bool {
        self.codec_ok() && self.generator_ok() && self.embedder_ok() && self.swap_ok()
    }
}

/// Measures the gates on held-out samples of the training identities; swap
/// pairs use unseen target identities.
pub fn quality_gates(stack: &ToyStack, swap: &SwapConfig, pairs: usize) -> Result<QualityGates> {
    let models = stack.models()?;
    let seed = stack.config.seed;
    let held = stack.config.samples_per_identity;
    let ids = training_identities(stack.config.identities.min(8));
    let probes = Dataset::generate(&ids, held..held + 2, seed)?;

    let mut codec = Vec::new();
    let mut generator = Vec::new();
    let zero = NoiseMapSet::zeros(&models.generator.noise_shapes());
    for img in probes.images() {
        let rec = models.codec.decode(&models.codec.encode(img)?)?.clamped();
        codec.push(psnr(img, &rec)?);
        let w = models.inverter.invert(img)?;
        generator.push(psnr(img, &models.generator.generate(&w, &zero)?)?);
    }

    let embeds = probes
        .faces
        .iter()
        .map(|f| Ok((f.identity_id, models.embedder.embed(&f.image)?.0)))
        .collect::<Result<Vec<_>>>()?;
    let (mut same, mut cross) = (Vec::new(), Vec::new());
    for (i, (a, ea)) in embeds.iter().enumerate() {
        for (b, eb) in &embeds[i + 1..] {
            let c = cosine(ea, eb);
            if a == b {
                same.push(c);
            } else {
                cross.push(c);
            }
        }
    }

    let sources = Dataset::generate(
        &training_identities(stack.config.identities.min(pairs as u32).max(1)),
        held..held + 1,
        seed,
    )?;
    let targets = Dataset::generate(&heldout_identities(7), 0..1, seed)?;
    let pipeline = DiffusionSwap {
        name: "primary".into(),
        models: models.clone(),
        config: *swap,
    };
    let (mut to_src, mut to_tar) = (Vec::new(), Vec::new());
    for k in 0..pairs {
        let src = &sources.faces[k % sources.len()].image;
        let tar = &targets.faces[k % targets.len()].image;
        let out = models.embedder.embed(&pipeline.swap(src, tar, k as u64)?)?.0;
        to_src.push(cosine(&out, &models.embedder.embed(src)?.0));
        to_tar.push(cosine(&out, &models.embedder.embed(tar)?.0));
    }

    Ok(QualityGates {
        codec_psnr: mean(&codec),
        generator_psnr: mean(&generator),
        same_identity_cosine: mean(&same),
        cross_identity_cosine: mean(&cross),
        swap_source_cosine: mean(&to_src),
        swap_target_cosine: mean(&to_tar),
        swap_pairs: pairs,
    })
}

/// Where synthetic sources and targets come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FaceSet {
    /// Number of identities; sources use training identities, targets unseen ones.
    pub identities: u32,
    /// Sample index per identity.
    pub sample: u32,
    pub seed: u64,
}

impl Default for FaceSet {
    fn default() -> Self {
        Self {
            identities: 5,
            sample: 16,
            seed: 0,
        }
    }
}

/// Everything one experiment needs; loaded from the `--config` JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentManifest {
    pub name: String,
    pub run: RunConfig,
    pub swap: SwapConfig,
    pub toy: ToyTrainConfig,
    pub sources: FaceSet,
    pub targets: FaceSet,
    /// Optional dataset directory written by `train-toys`; synthetic faces are regenerated otherwise.
    pub dataset: Option<PathBuf>,
    pub checkpoint_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub epsilons: Vec<f64>,
    pub transforms: Vec<Transform>,
    pub ablation: Vec<AblationSwitch>,
    /// Seeds of extra toy stacks used as transfer pipelines.
    pub transfer_seeds: Vec<u64>,
}

impl Default for ExperimentManifest {
    fn default() -> Self {
        Self {
            name: "reference".into(),
            run: RunConfig::default(),
            swap: SwapConfig::default(),
            toy: ToyTrainConfig::default(),
            sources: FaceSet::default(),
            targets: FaceSet {
                identities: 7,
                sample: 0,
                seed: 0,
            },
            dataset: None,
            checkpoint_dir: None,
            output_dir: None,
            epsilons: (0..9).map(|k| (25.0 + 10.0 * k as f64) / 255.0).collect(),
            transforms: Transform::standard_set(),
            ablation: vec![AblationSwitch::DropLDiff, AblationSwitch::DropLEdit],
            transfer_seeds: vec![1],
        }
    }
}

impl ExperimentManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let m: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        self.run.validate()?;
        self.swap.validate(self.run.schedule.steps)?;
        if self.sources.identities == 0 || self.targets.identities == 0 {
            return Err(Error::invalid("source and target sets must be nonempty"));
        }
        if self.epsilons.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
            return Err(Error::invalid("sweep epsilons must be finite and >= 0"));
        }
        if let Some(d) = &self.dataset {
            if !d.exists() {
                return Err(Error::invalid(format!(
                    "dataset {} does not exist",
                    d.display()
                )));
            }
        }
        ablation_variants(&self.ablation)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    pub created_unix: u64,
    pub model_checksums: Vec<(String, String)>,
    pub files: Vec<FileEntry>,
    #[serde(default)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

/// Output directory that records a checksum for every file written through it.
#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
    files: Vec<String>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl RunDir {
    pub fn create(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root)?;
        Ok(Self {
            root,
            files: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn track(&mut self, rel: &str) -> Result<PathBuf> {
        if rel == MANIFEST_FILE {
            return Err(Error::invalid("manifest.json is reserved"));
        }
        let p = self.root.join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        if !self.files.iter().any(|f| f == rel) {
            self.files.push(rel.to_string());
        }
        Ok(p)
    }

    pub fn write_bytes(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let p = self.track(rel)?;
        fs::write(p, bytes)?;
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_bytes(rel, text.as_bytes())
    }

    pub fn write_png(&mut self, rel: &str, image: &ImageTensor) -> Result<()> {
        let p = self.track(rel)?;
        image.save_png(p)
    }

    pub fn write_csv<T: Serialize>(&mut self, rel: &str, rows: &[T]) -> Result<()> {
        let p = self.track(rel)?;
        write_csv(rows, p)
    }

    /// Registers a file produced elsewhere under this directory.
    pub fn adopt(&mut self, rel: &str) -> Result<PathBuf> {
        self.track(rel)
    }

    /// Writes `manifest.json` with a checksum for every tracked file.
    pub fn finish(
        self,
        command: &str,
        seed: u64,
        model_checksums: Vec<(String, String)>,
        extra: BTreeMap<String, serde_json::Value>,
    ) -> Result<RunManifest> {
        let mut files = self.files.clone();
        files.sort();
        let files = files
            .into_iter()
            .map(|f| {
                Ok(FileEntry {
                    sha256: sha256_hex(&fs::read(self.root.join(&f))?),
                    path: f,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let manifest = RunManifest {
            command: command.to_string(),
            seed,
            created_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            model_checksums,
            files,
            extra,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(self.root.join(MANIFEST_FILE), text)?;
        Ok(manifest)
    }
}

/// Recomputes every checksum listed in a run directory's manifest.
pub fn verify_run_dir(root: impl AsRef<Path>) -> Result<RunManifest> {
    let root = root.as_ref();
    let manifest: RunManifest =
        serde_json::from_str(&fs::read_to_string(root.join(MANIFEST_FILE))?)?;
    for f in &manifest.files {
        let got = sha256_hex(&fs::read(root.join(&f.path))?);
        if got != f.sha256 {
            return Err(Error::Checkpoint(format!(
                "checksum mismatch for {}",
                f.path
            )));
        }
    }
    Ok(manifest)
}
