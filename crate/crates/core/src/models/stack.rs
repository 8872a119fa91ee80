//! The full toy model stack: training, persistence and a cached loader.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::diffusion::{NoiseSchedule, ScheduleKind};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::models::checkpoint::Checkpoint;
use crate::models::classifier::{train_toy_classifier, ToyClassifier};
use crate::models::codec::{train_toy_codec, PcaCodec, DEFAULT_LATENT_SHAPE};
use crate::models::dataset::{training_identities, Dataset};
use crate::models::denoiser::{train_toy_denoiser, DenoiserConfig, ToyDenoiser};
use crate::models::embedder::{train_toy_embedder, EmbedderConfig, ToyEmbedder};
use crate::models::parser::{train_soft_segmenter, ExactParser, SoftSegmenter};
use crate::models::stylegen::{
    train_toy_generator_and_inverter, StyleConfig, ToyInversionEncoder, ToyStyleGenerator,
};
use crate::models::synth::SyntheticFace;
use crate::models::traits::{
    AttributeClassifier, FaceEmbedder, FaceParser, InversionEncoder, LatentCodec, NoisePredictor,
    StyleGenerator,
};
use crate::util::sha256_hex;

/// Diffusion schedule parameters recorded with every stack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            beta_min: 1e-4,
            beta_max: 0.02,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::new(
            self.steps,
            self.beta_min,
            self.beta_max,
            ScheduleKind::Linear,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyTrainConfig {
    pub identities: u32,
    pub samples_per_identity: u32,
    pub seed: u64,
    pub schedule: ScheduleConfig,
    pub codec_epochs: usize,
    pub embedder_epochs: usize,
    pub denoiser_epochs: usize,
    pub style_epochs: usize,
    pub classifier_epochs: usize,
    pub segmenter_epochs: usize,
}

impl Default for ToyTrainConfig {
    fn default() -> Self {
        Self {
            identities: 32,
            samples_per_identity: 16,
            seed: 0,
            schedule: ScheduleConfig::default(),
            codec_epochs: 10,
            embedder_epochs: 40,
            denoiser_epochs: 300,
            style_epochs: 5,
            classifier_epochs: 60,
            segmenter_epochs: 6,
        }
    }
}

impl ToyTrainConfig {
    pub fn dataset(&self) -> Result<Dataset> {
        Dataset::generate(
            &training_identities(self.identities),
            0..self.samples_per_identity,
            self.seed,
        )
    }

    pub fn fingerprint(&self) -> String {
        sha256_hex(
            serde_json::to_string(self)
                .expect("serialisable")
                .as_bytes(),
        )
    }
}

/// Trait-object view of a model set, as consumed by the pipeline.
#[derive(Clone)]
pub struct ModelStack {
    pub schedule: NoiseSchedule,
    pub codec: Arc<dyn LatentCodec>,
    pub embedder: Arc<dyn FaceEmbedder>,
    pub denoiser: Arc<dyn NoisePredictor>,
    pub generator: Arc<dyn StyleGenerator>,
    pub inverter: Arc<dyn InversionEncoder>,
    pub parser: Arc<dyn FaceParser>,
    pub classifier: Arc<dyn AttributeClassifier>,
}

impl std::fmt::Debug for ModelStack {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelStack")
            .field("timesteps", &self.schedule.steps())
            .field("latent_shape", &self.codec.latent_shape())
            .finish_non_exhaustive()
    }
}

impl ModelStack {
    pub fn with_parser(&self, parser: Arc<dyn FaceParser>) -> Self {
        Self {
            parser,
            ..self.clone()
        }
    }

    /// Checks that the member models agree on shapes and timesteps.
    pub fn validate(&self) -> Result<()> {
        let image = self.codec.image_shape();
        if self.embedder.image_shape() != image || self.generator.image_shape() != image {
            return Err(Error::invalid("models disagree on the image shape"));
        }
        if self.denoiser.latent_dim() != self.codec.latent_dim() {
            return Err(Error::shape(
                self.codec.latent_dim(),
                self.denoiser.latent_dim(),
            ));
        }
        if self.denoiser.identity_dim() != self.embedder.embedding_dim() {
            return Err(Error::shape(
                self.embedder.embedding_dim(),
                self.denoiser.identity_dim(),
            ));
        }
        if self.denoiser.timesteps() != self.schedule.steps() {
            return Err(Error::invalid(format!(
                "denoiser trained for T = {}, schedule has T = {}",
                self.denoiser.timesteps(),
                self.schedule.steps()
            )));
        }
        if self.generator.style_shape() != self.inverter.style_shape() {
            return Err(Error::invalid(
                "generator and inverter disagree on the style shape",
            ));
        }
        Ok(())
    }
}

/// Concrete toy models; persisted as one checkpoint per model plus `stack.json`.
#[derive(Debug, Clone)]
pub struct ToyStack {
    pub config: ToyTrainConfig,
    pub codec: Arc<PcaCodec>,
    pub embedder: Arc<ToyEmbedder>,
    pub denoiser: Arc<ToyDenoiser>,
    pub generator: Arc<ToyStyleGenerator>,
    pub inverter: Arc<ToyInversionEncoder>,
    pub segmenter: Arc<SoftSegmenter>,
    pub classifier: Arc<ToyClassifier>,
    /// Per-epoch denoiser training loss.
    pub denoiser_curve: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StackRecord {
    config: ToyTrainConfig,
    fingerprint: String,
    files: Vec<(String, String)>,
    denoiser_curve: Vec<f64>,
}

const FILES: [&str; 7] = [
    "codec",
    "embedder",
    "denoiser",
    "style_generator",
    "inversion_encoder",
    "soft_segmenter",
    "classifier",
];

impl ToyStack {
    pub fn train(config: &ToyTrainConfig) -> Result<Self> {
        let dataset = config.dataset()?;
        Self::train_on(&dataset, config)
    }

    pub fn train_on(dataset: &Dataset, config: &ToyTrainConfig) -> Result<Self> {
        let seed = config.seed;
        let schedule = config.schedule.build()?;
        log::info!("training codec");
        let codec = train_toy_codec(dataset, DEFAULT_LATENT_SHAPE, config.codec_epochs, seed)?;
        log::info!("training embedder");
        let embedder = train_toy_embedder(
            dataset,
            &EmbedderConfig::default(),
            config.embedder_epochs,
            seed,
        )?;
        let x = dataset.image_matrix()?;
        let g = Graph::new();
        let xv = g.constant(x);
        let latents = (*g.value(codec.encode_var(&g, xv))).clone();
        let identities = (*g.value(embedder.embed_var(&g, xv))).clone();
        log::info!("training denoiser");
        let (denoiser, denoiser_curve) = train_toy_denoiser(
            &latents,
            &identities,
            &schedule,
            &DenoiserConfig::default(),
            config.denoiser_epochs,
            seed,
        )?;
        log::info!("training generator and inverter");
        let (generator, inverter) = train_toy_generator_and_inverter(
            dataset,
            &StyleConfig::default(),
            config.style_epochs,
            seed,
        )?;
        log::info!("training parser head and classifier");
        let segmenter = train_soft_segmenter(dataset, config.segmenter_epochs, seed)?;
        let classifier = train_toy_classifier(dataset, config.classifier_epochs, seed)?;
        Ok(Self {
            config: config.clone(),
            codec: Arc::new(codec),
            embedder: Arc::new(embedder),
            denoiser: Arc::new(denoiser),
            generator: Arc::new(generator),
            inverter: Arc::new(inverter),
            segmenter: Arc::new(segmenter),
            classifier: Arc::new(classifier),
            denoiser_curve,
        })
    }

    /// Pipeline view with the soft segmenter as parser.
    pub fn models(&self) -> Result<ModelStack> {
        let stack = ModelStack {
            schedule: self.config.schedule.build()?,
            codec: self.codec.clone(),
            embedder: self.embedder.clone(),
            denoiser: self.denoiser.clone(),
            generator: self.generator.clone(),
            inverter: self.inverter.clone(),
            parser: self.segmenter.clone(),
            classifier: self.classifier.clone(),
        };
        stack.validate()?;
        Ok(stack)
    }

    /// Pipeline view whose parser reports `face`'s construction masks.
    pub fn models_for(&self, face: &SyntheticFace) -> Result<ModelStack> {
        Ok(self
            .models()?
            .with_parser(Arc::new(ExactParser::new(face, self.segmenter.clone()))))
    }

    fn checkpoints(&self) -> Vec<(&'static str, Checkpoint)> {
        let meta = serde_json::json!({ "seed": self.config.seed, "train_config": self.config });
        vec![
            ("codec", self.codec.to_checkpoint(meta.clone())),
            ("embedder", self.embedder.to_checkpoint(meta.clone())),
            ("denoiser", self.denoiser.to_checkpoint(meta.clone())),
            (
                "style_generator",
                self.generator.to_checkpoint(meta.clone()),
            ),
            (
                "inversion_encoder",
                self.inverter.to_checkpoint(meta.clone()),
            ),
            ("soft_segmenter", self.segmenter.to_checkpoint(meta.clone())),
            ("classifier", self.classifier.to_checkpoint(meta)),
        ]
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut files = Vec::new();
        for (name, ck) in self.checkpoints() {
            let bytes = ck.to_bytes()?;
            let file = format!("{name}.safetensors");
            write_atomic(&dir.join(&file), &bytes)?;
            files.push((file, sha256_hex(&bytes)));
        }
        let record = StackRecord {
            config: self.config.clone(),
            fingerprint: self.config.fingerprint(),
            files,
            denoiser_curve: self.denoiser_curve.clone(),
        };
        write_atomic(
            &dir.join("stack.json"),
            serde_json::to_string_pretty(&record)?.as_bytes(),
        )
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let record: StackRecord =
            serde_json::from_str(&std::fs::read_to_string(dir.join("stack.json"))?)?;
        let mut cks = Vec::new();
        for name in FILES {
            let file = format!("{name}.safetensors");
            let bytes = std::fs::read(dir.join(&file))?;
            let expected = record
                .files
                .iter()
                .find(|(f, _)| *f == file)
                .map(|(_, h)| h.as_str());
            if expected != Some(sha256_hex(&bytes).as_str()) {
                return Err(Error::Checkpoint(format!("checksum mismatch for {file}")));
            }
            cks.push(Checkpoint::from_bytes(&bytes)?);
        }
        Ok(Self {
            codec: Arc::new(PcaCodec::from_checkpoint(&cks[0])?),
            embedder: Arc::new(ToyEmbedder::from_checkpoint(&cks[1])?),
            denoiser: Arc::new(ToyDenoiser::from_checkpoint(&cks[2])?),
            generator: Arc::new(ToyStyleGenerator::from_checkpoint(&cks[3])?),
            inverter: Arc::new(ToyInversionEncoder::from_checkpoint(&cks[4])?),
            segmenter: Arc::new(SoftSegmenter::from_checkpoint(&cks[5])?),
            classifier: Arc::new(ToyClassifier::from_checkpoint(&cks[6])?),
            config: record.config,
            denoiser_curve: record.denoiser_curve,
        })
    }

    /// SHA-256 of every checkpoint, keyed by file name.
    pub fn checksums(&self) -> Result<Vec<(String, String)>> {
        self.checkpoints()
            .into_iter()
            .map(|(name, ck)| Ok((format!("{name}.safetensors"), sha256_hex(&ck.to_bytes()?))))
            .collect()
    }

    /// Loads the stack cached in `dir` when it was trained with `config`,
    /// otherwise trains and caches it.
    pub fn load_or_train(dir: impl AsRef<Path>, config: &ToyTrainConfig) -> Result<Self> {
        let dir = dir.as_ref();
        if let Ok(stack) = Self::load(dir) {
            if stack.config == *config {
                return Ok(stack);
            }
        }
        let stack = Self::train(config)?;
        stack.save(dir)?;
        Ok(stack)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp: PathBuf = path.with_extension(format!("tmp{}", std::process::id()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
