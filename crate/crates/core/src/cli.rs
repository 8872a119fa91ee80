//! Command-line driver. Every subcommand writes into `--out` through a
//! [`RunDir`], which records checksums in `manifest.json`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::{
    ablation_run, jpeg_bytes, plot_lines, plot_sweep, quality_gates, robustness_eval,
    sweep_epsilon, transfer_eval, ExperimentManifest, RunDir, Transform,
};
use crate::image::ImageTensor;
use crate::metrics::{
    defense_suite, vision_suite, DiffusionSwap, FeatureDistance, MetricReport, PerceptualScorer,
    SwapPipeline,
};
use crate::models::dataset::{heldout_identities, training_identities, Dataset};
use crate::models::stack::{ModelStack, ToyStack};
use crate::optimize::{curve_stats, run_defense, CurveStats, DefenseResult, OptimizationMode};
use crate::swap::NoiseMode;
use crate::util::cosine;

/// Exit status for success.
pub const EXIT_OK: i32 = 0;
/// Exit status for usage and validation errors.
pub const EXIT_INVALID: i32 = 1;
/// Exit status for failures while running.
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "faceshield",
    version,
    about = "Protect face images against diffusion face swapping"
)]
struct Cli {
    /// Experiment manifest (JSON); built-in reference defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the run and swap seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; defaults to `<output_dir or runs>/<subcommand>`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Toy checkpoint cache; trained on first use.
    #[arg(long, global = true)]
    checkpoint_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
struct SourceArgs {
    /// Source PNG; a held-out synthetic face is used when omitted.
    #[arg(long)]
    image: Option<PathBuf>,
    /// Index into the manifest's synthetic source set.
    #[arg(long, default_value_t = 0)]
    source_index: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train (or load) the toy model stack and report its quality gates.
    TrainToys {
        /// Retrain even when a matching checkpoint exists.
        #[arg(long)]
        force: bool,
        /// Also write the training dataset under `<out>/dataset`.
        #[arg(long)]
        save_dataset: bool,
    },
    /// Run the defense on one source image.
    Protect {
        #[command(flatten)]
        source: SourceArgs,
    },
    /// Swap a source identity onto a target.
    Swap {
        #[command(flatten)]
        source: SourceArgs,
        /// Target PNG; a synthetic held-out target is used when omitted.
        #[arg(long)]
        target: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        target_index: usize,
    },
    /// Defense and vision metrics of a protected image.
    Evaluate {
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long)]
        protected: PathBuf,
    },
    /// Rerun the defense under every subset of the manifest's ablation switches.
    Ablate {
        #[command(flatten)]
        source: SourceArgs,
    },
    /// Defense metrics after blur and JPEG transforms of the protected image.
    Robustness {
        #[command(flatten)]
        source: SourceArgs,
        /// Protected PNG; the defense is run first when omitted.
        #[arg(long)]
        protected: Option<PathBuf>,
    },
    /// Defense metrics under several swap pipelines.
    Transfer {
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long)]
        protected: Option<PathBuf>,
    },
    /// Sweep the perturbation budget over the manifest's epsilon list.
    Sweep {
        /// Use only the first N synthetic sources.
        #[arg(long)]
        sources: Option<usize>,
    },
    /// Loss curves of the alternating run and the joint baseline.
    Curves {
        #[command(flatten)]
        source: SourceArgs,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::TrainToys { .. } => "train-toys",
            Command::Protect { .. } => "protect",
            Command::Swap { .. } => "swap",
            Command::Evaluate { .. } => "evaluate",
            Command::Ablate { .. } => "ablate",
            Command::Robustness { .. } => "robustness",
            Command::Transfer { .. } => "transfer",
            Command::Sweep { .. } => "sweep",
            Command::Curves { .. } => "curves",
        }
    }
}

/// Maps an error to the process exit status.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidArgument(_)
        | Error::ShapeMismatch { .. }
        | Error::TimestepOutOfRange { .. }
        | Error::UnknownRegion(_)
        | Error::UnknownAttribute(_) => EXIT_INVALID,
        _ => EXIT_RUNTIME,
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    EXIT_OK
                }
                _ => EXIT_INVALID,
            };
        }
    };
    let ctx = match Context::new(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INVALID;
        }
    };
    match dispatch(&ctx, &cli.command) {
        Ok(out) => {
            println!("{}", out.display());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

struct Context {
    manifest: ExperimentManifest,
    out: Option<PathBuf>,
    checkpoint_dir: PathBuf,
}

impl Context {
    fn new(cli: &Cli) -> Result<Self> {
        let mut manifest = match &cli.config {
            Some(p) => ExperimentManifest::load(p).map_err(|e| {
                Error::invalid(format!("cannot load config {}: {e}", p.display()))
            })?,
            None => ExperimentManifest::default(),
        };
        if let Some(seed) = cli.seed {
            manifest.run.seed = seed;
            manifest.swap.seed = seed;
        }
        manifest.validate()?;
        let checkpoint_dir = cli
            .checkpoint_dir
            .clone()
            .or_else(|| manifest.checkpoint_dir.clone())
            .unwrap_or_else(|| PathBuf::from("checkpoints"));
        Ok(Self {
            manifest,
            out: cli.out.clone(),
            checkpoint_dir,
        })
    }

    fn out_dir(&self, command: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| {
            self.manifest
                .output_dir
                .clone()
                .unwrap_or_else(|| PathBuf::from("runs"))
                .join(command)
        })
    }

    fn stack(&self) -> Result<ToyStack> {
        ToyStack::load_or_train(&self.checkpoint_dir, &self.manifest.toy)
    }

    fn transfer_stack(&self, seed: u64) -> Result<ToyStack> {
        let mut cfg = self.manifest.toy.clone();
        cfg.seed = seed;
        ToyStack::load_or_train(
            self.checkpoint_dir.join(format!("transfer-seed-{seed}")),
            &cfg,
        )
    }

    fn source_faces(&self) -> Result<Dataset> {
        match &self.manifest.dataset {
            Some(dir) => Dataset::load(dir),
            None => {
                let s = &self.manifest.sources;
                Dataset::generate(
                    &training_identities(s.identities),
                    s.sample..s.sample + 1,
                    s.seed,
                )
            }
        }
    }

    fn target_faces(&self) -> Result<Dataset> {
        let t = &self.manifest.targets;
        Dataset::generate(
            &heldout_identities(t.identities),
            t.sample..t.sample + 1,
            t.seed,
        )
    }

    fn targets(&self) -> Result<Vec<ImageTensor>> {
        Ok(self
            .target_faces()?
            .faces
            .into_iter()
            .map(|f| f.image)
            .collect())
    }

    /// The source image and the model view used to protect it: synthetic faces
    /// get their exact parser, external images the learned one.
    fn source(&self, stack: &ToyStack, args: &SourceArgs) -> Result<(ImageTensor, ModelStack)> {
        let models = stack.models()?;
        match &args.image {
            Some(path) => {
                let img = load_input(path)?;
                check_shape(&img, &models)?;
                Ok((img, models))
            }
            None => {
                let faces = self.source_faces()?;
                let face = faces.faces.get(args.source_index).ok_or_else(|| {
                    Error::invalid(format!(
                        "source index {} out of range (have {})",
                        args.source_index,
                        faces.len()
                    ))
                })?;
                Ok((face.image.clone(), stack.models_for(face)?))
            }
        }
    }

    fn pipeline(&self, models: &ModelStack) -> DiffusionSwap {
        DiffusionSwap {
            name: "primary".into(),
            models: models.clone(),
            config: self.manifest.swap,
        }
    }

    fn begin(&self, command: &str) -> Result<RunDir> {
        let mut dir = RunDir::create(self.out_dir(command))?;
        dir.write_json("config.json", &self.manifest)?;
        Ok(dir)
    }

    fn finish(
        &self,
        dir: RunDir,
        command: &str,
        stack: Option<&ToyStack>,
        extra: BTreeMap<String, serde_json::Value>,
    ) -> Result<PathBuf> {
        let root = dir.root().to_path_buf();
        let checksums = match stack {
            Some(s) => s.checksums()?,
            None => Vec::new(),
        };
        dir.finish(command, self.manifest.run.seed, checksums, extra)?;
        Ok(root)
    }
}

fn load_input(path: &Path) -> Result<ImageTensor> {
    ImageTensor::load_png(path)
        .map_err(|e| Error::invalid(format!("cannot read {}: {e}", path.display())))
}

fn check_shape(img: &ImageTensor, models: &ModelStack) -> Result<()> {
    let want = models.codec.image_shape();
    if img.shape() != want {
        return Err(Error::shape(want, img.shape()));
    }
    Ok(())
}

fn scorer(models: &ModelStack) -> FeatureDistance {
    FeatureDistance(models.embedder.clone())
}

fn write_result(dir: &mut RunDir, prefix: &str, result: &DefenseResult) -> Result<()> {
    dir.write_png(&format!("{prefix}protected.png"), &result.protected_image)?;
    let trace = dir.adopt(&format!("{prefix}trace.csv"))?;
    result.trace.write_csv(trace)?;
    for snap in &result.trace.snapshots {
        dir.write_png(
            &format!("{prefix}snapshots/{}.png", snap.label),
            &snap.image,
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct ProtectReport {
    epsilon: f64,
    budget_linf: f64,
    records: usize,
    final_l_adv: Option<f64>,
    final_l_edit: Option<f64>,
    vision: MetricReport,
}

fn protect_report(
    src: &ImageTensor,
    result: &DefenseResult,
    epsilon: f64,
    scorer: &dyn PerceptualScorer,
) -> Result<ProtectReport> {
    let last = result.trace.records.last();
    Ok(ProtectReport {
        epsilon,
        budget_linf: result.budget_linf(),
        records: result.trace.records.len(),
        final_l_adv: last.map(|r| r.l_adv),
        final_l_edit: last.map(|r| r.l_edit),
        vision: vision_suite(src, &result.protected_image, scorer)?,
    })
}

fn protected_or_run(
    ctx: &Context,
    dir: &mut RunDir,
    src: &ImageTensor,
    models: &ModelStack,
    protected: Option<&Path>,
) -> Result<ImageTensor> {
    match protected {
        Some(p) => {
            let img = load_input(p)?;
            src.ensure_same_shape(&img)?;
            Ok(img)
        }
        None => {
            let result = run_defense(src, models, &ctx.manifest.run)?;
            write_result(dir, "", &result)?;
            Ok(result.protected_image)
        }
    }
}

#[derive(Serialize)]
struct FlatRow<'a> {
    name: &'a str,
    att_id: Option<f64>,
    att_id_clamped: usize,
    ssim: f64,
    psnr: f64,
    perceptual: f64,
}

impl<'a> FlatRow<'a> {
    fn new(name: &'a str, r: &MetricReport) -> Self {
        Self {
            name,
            att_id: r.att_id,
            att_id_clamped: r.att_id_clamped,
            ssim: r.ssim,
            psnr: r.psnr,
            perceptual: r.perceptual,
        }
    }
}

fn dispatch(ctx: &Context, command: &Command) -> Result<PathBuf> {
    let name = command.name();
    match command {
        Command::TrainToys {
            force,
            save_dataset,
        } => {
            let stack = if *force {
                let s = ToyStack::train(&ctx.manifest.toy)?;
                s.save(&ctx.checkpoint_dir)?;
                s
            } else {
                ctx.stack()?
            };
            let mut dir = ctx.begin(name)?;
            let gates = quality_gates(&stack, &ctx.manifest.swap, 20)?;
            dir.write_json("report.json", &gates)?;
            let curve: Vec<(f64, f64)> = stack
                .denoiser_curve
                .iter()
                .enumerate()
                .map(|(i, v)| (i as f64, *v))
                .collect();
            #[derive(Serialize)]
            struct Row {
                epoch: usize,
                loss: f64,
            }
            let rows: Vec<Row> = curve
                .iter()
                .map(|(e, l)| Row {
                    epoch: *e as usize,
                    loss: *l,
                })
                .collect();
            dir.write_csv("denoiser_curve.csv", &rows)?;
            plot_lines(&[("denoiser", curve)], dir.adopt("denoiser_curve.png")?)?;
            if *save_dataset {
                let m = ctx.manifest.toy.dataset()?.save(dir.path("dataset"))?;
                dir.adopt("dataset/manifest.json")?;
                for e in &m.entries {
                    dir.adopt(&format!("dataset/{}", e.path.display()))?;
                }
            }
            let mut extra = BTreeMap::new();
            extra.insert("gates_passed".into(), gates.passed().into());
            ctx.finish(dir, name, Some(&stack), extra)
        }
        Command::Protect { source } => {
            let stack = ctx.stack()?;
            let (src, models) = ctx.source(&stack, source)?;
            let mut dir = ctx.begin(name)?;
            dir.write_png("source.png", &src)?;
            let result = run_defense(&src, &models, &ctx.manifest.run)?;
            write_result(&mut dir, "", &result)?;
            let report = protect_report(&src, &result, ctx.manifest.run.epsilon, &scorer(&models))?;
            dir.write_json("report.json", &report)?;
            ctx.finish(dir, name, Some(&stack), BTreeMap::new())
        }
        Command::Swap {
            source,
            target,
            target_index,
        } => {
            let stack = ctx.stack()?;
            let (src, models) = ctx.source(&stack, source)?;
            let tar = match target {
                Some(p) => {
                    let img = load_input(p)?;
                    check_shape(&img, &models)?;
                    img
                }
                None => {
                    let mut targets = ctx.targets()?;
                    if *target_index >= targets.len() {
                        return Err(Error::invalid(format!(
                            "target index {target_index} out of range (have {})",
                            targets.len()
                        )));
                    }
                    targets.swap_remove(*target_index)
                }
            };
            let out = ctx.pipeline(&models).swap(&src, &tar, 0)?;
            let mut dir = ctx.begin(name)?;
            dir.write_png("source.png", &src)?;
            dir.write_png("target.png", &tar)?;
            dir.write_png("swap.png", &out)?;
            let e = |img: &ImageTensor| models.embedder.embed(img).map(|v| v.0);
            let eo = e(&out)?;
            let report = serde_json::json!({
                "cosine_to_source": cosine(&eo, &e(&src)?),
                "cosine_to_target": cosine(&eo, &e(&tar)?),
            });
            dir.write_json("report.json", &report)?;
            ctx.finish(dir, name, Some(&stack), BTreeMap::new())
        }
        Command::Evaluate { source, protected } => {
            let stack = ctx.stack()?;
            let (src, models) = ctx.source(&stack, source)?;
            let prot = load_input(protected)?;
            src.ensure_same_shape(&prot)?;
            let sc = scorer(&models);
            let vision = vision_suite(&src, &prot, &sc)?;
            let defense = defense_suite(
                &src,
                &ctx.targets()?,
                &prot,
                &ctx.pipeline(&models),
                models.embedder.as_ref(),
                &sc,
            )?;
            let mut dir = ctx.begin(name)?;
            dir.write_json(
                "report.json",
                &serde_json::json!({ "vision": vision, "defense": defense }),
            )?;
            ctx.finish(dir, name, Some(&stack), BTreeMap::new())
        }
        Command::Ablate { source } => {
            let stack = ctx.stack()?;
            let (src, models) = ctx.source(&stack, source)?;
            let runs = ablation_run(
                &src,
                &models,
                &ctx.manifest.run,
                &ctx.manifest.ablation,
                &ctx.targets()?,
                &ctx.pipeline(&models),
                &scorer(&models),
            )?;
            let mut dir = ctx.begin(name)?;
            dir.write_png("source.png", &src)?;
            #[derive(Serialize)]
            struct Row<'a> {
                name: &'a str,
                att_id: Option<f64>,
                defense_ssim: f64,
                defense_psnr: f64,
                defense_perceptual: f64,
                vision_ssim: f64,
                vision_psnr: f64,
                vision_perceptual: f64,
            }
            let mut rows = Vec::new();
            for (variant, result) in &runs {
                write_result(&mut dir, &format!("{}/", variant.name), result)?;
                rows.push(Row {
                    name: &variant.name,
                    att_id: variant.defense.att_id,
                    defense_ssim: variant.defense.ssim,
                    defense_psnr: variant.defense.psnr,
                    defense_perceptual: variant.defense.perceptual,
                    vision_ssim: variant.vision.ssim,
                    vision_psnr: variant.vision.psnr,
                    vision_perceptual: variant.vision.perceptual,
                });
            }
            let variants: Vec<_> = runs.iter().map(|(v, _)| v).collect();
            dir.write_json("report.json", &variants)?;
            dir.write_csv("ablation.csv", &rows)?;
            ctx.finish(dir, name, Some(&stack), BTreeMap::new())
        }
        Command::Robustness { source, protected } => {
            let stack = ctx.stack()?;
            let (src, models) = ctx.source(&stack, source)?;
            let mut dir = ctx.begin(name)?;
            dir.write_png("source.png", &src)?;
            let prot = protected_or_run(ctx, &mut dir, &src, &models, protected.as_deref())?;
            let rows = robustness_eval(
                &prot,
                &src,
                &ctx.targets()?,
                &ctx.manifest.transforms,
                &ctx.pipeline(&models),
                models.embedder.as_ref(),
                &scorer(&models),
            )?;
            for t in &ctx.manifest.transforms {
                if let Transform::Jpeg { quality } = t {
                    dir.write_bytes(
                        &format!("transforms/{}.jpg", t.label()),
                        &jpeg_bytes(&prot, *quality)?,
                    )?;
                } else {
                    dir.write_png(&format!("transforms/{}.png", t.label()), &t.apply(&prot)?)?;
                }
            }
            let flat: Vec<_> = rows
                .iter()
                .map(|r| FlatRow::new(&r.label, &r.defense))
                .collect();
            dir.write_json("report.json", &rows)?;
            dir.write_csv("robustness.csv", &flat)?;
            ctx.finish(dir, name, Some(&stack), BTreeMap::new())
        }
        Command::Transfer { source, protected } => {
            let stack = ctx.stack()?;
            let (src, models) = ctx.source(&stack, source)?;
            let mut dir = ctx.begin(name)?;
            dir.write_png("source.png", &src)?;
            let prot = protected_or_run(ctx, &mut dir, &src, &models, protected.as_deref())?;
            let mut pipelines = vec![
                ctx.pipeline(&models),
                DiffusionSwap {
                    name: "primary-ddim10-cfg2".into(),
                    models: models.clone(),
                    config: crate::swap::SwapConfig {
                        num_steps: 10,
                        guidance_scale: 2.0,
                        noise_mode: NoiseMode::PureGaussian,
                        ..ctx.manifest.swap
                    },
                },
            ];
            for &seed in &ctx.manifest.transfer_seeds {
                pipelines.push(DiffusionSwap {
                    name: format!("toy-seed-{seed}"),
                    models: ctx.transfer_stack(seed)?.models()?,
                    config: ctx.manifest.swap,
                });
            }
            let refs: Vec<&dyn SwapPipeline> =
                pipelines.iter().map(|p| p as &dyn SwapPipeline).collect();
            let rows = transfer_eval(
                &prot,
                &src,
                &ctx.targets()?,
                &refs,
                "primary",
                models.embedder.as_ref(),
                &scorer(&models),
            )?;
            let flat: Vec<_> = rows
                .iter()
                .map(|r| FlatRow::new(&r.pipeline, &r.defense))
                .collect();
            dir.write_json("report.json", &rows)?;
            dir.write_csv("transfer.csv", &flat)?;
            ctx.finish(dir, name, Some(&stack), BTreeMap::new())
        }
        Command::Sweep { sources } => {
            if ctx.manifest.epsilons.is_empty() {
                return Err(Error::invalid("the manifest's epsilon list is empty"));
            }
            let stack = ctx.stack()?;
            let faces = ctx.source_faces()?;
            let take = sources.unwrap_or(faces.len()).min(faces.len());
            let pairs = faces.faces[..take]
                .iter()
                .map(|f| Ok((f.image.clone(), stack.models_for(f)?)))
                .collect::<Result<Vec<_>>>()?;
            let swap = ctx.manifest.swap;
            let rows = sweep_epsilon(
                &pairs,
                &ctx.manifest.run,
                &ctx.manifest.epsilons,
                &ctx.targets()?,
                &|m: &ModelStack| {
                    Box::new(DiffusionSwap {
                        name: "primary".into(),
                        models: m.clone(),
                        config: swap,
                    }) as Box<dyn SwapPipeline>
                },
                &|m: &ModelStack| Box::new(scorer(m)) as Box<dyn PerceptualScorer>,
            )?;
            let mut dir = ctx.begin(name)?;
            dir.write_csv("sweep.csv", &rows)?;
            dir.write_json("report.json", &rows)?;
            for p in plot_sweep(&rows, dir.root())? {
                let rel = p
                    .strip_prefix(dir.root())
                    .map_err(|_| Error::invalid("plot written outside the run directory"))?
                    .to_string_lossy()
                    .into_owned();
                dir.adopt(&rel)?;
            }
            ctx.finish(dir, name, Some(&stack), BTreeMap::new())
        }
        Command::Curves { source } => {
            let stack = ctx.stack()?;
            let (src, models) = ctx.source(&stack, source)?;
            let mut dir = ctx.begin(name)?;
            let mut series = Vec::new();
            let mut stats: BTreeMap<&str, CurveStats> = BTreeMap::new();
            for (label, mode) in [
                ("alternating", OptimizationMode::Alternating),
                ("joint", OptimizationMode::Joint),
            ] {
                let cfg = crate::optimize::RunConfig {
                    mode,
                    ..ctx.manifest.run.clone()
                };
                let result = run_defense(&src, &models, &cfg)?;
                write_result(&mut dir, &format!("{label}/"), &result)?;
                let attack = result.trace.attack_series();
                stats.insert(label, curve_stats(&attack)?);
                series.push((
                    label,
                    attack
                        .iter()
                        .enumerate()
                        .map(|(i, v)| (i as f64, *v))
                        .collect::<Vec<_>>(),
                ));
            }
            plot_lines(&series, dir.adopt("curves.png")?)?;
            dir.write_json("report.json", &stats)?;
            ctx.finish(dir, name, Some(&stack), BTreeMap::new())
        }
    }
}
