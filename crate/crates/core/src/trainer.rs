//! Contrastive training loop, checkpoint selection and seed ensembling.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{sample_sentences, Corpus, SamplerConfig, Split, Study};
use crate::encoder::{EncoderError, EncoderParams, EncoderShape, TextFeaturizer, TowerTrace};
use crate::metrics::{macro_auroc, MetricError};
use crate::optim::{learning_rate_at, Adam};
use crate::relaxed_loss::{info_nce_loss, BatchEmbeddings, LossError, SimConfig};
use crate::zero_shot::{build_prompts, InferenceTemperature, PromptEmbeddings, PromptPair, ZeroShotError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{0} split is empty")]
    EmptySplit(Split),
    #[error("non-finite loss at epoch {epoch}, iteration {iteration}")]
    NonFiniteLoss { epoch: usize, iteration: usize },
    #[error("parameters became non-finite at epoch {epoch}, iteration {iteration}")]
    NonFiniteParameters { epoch: usize, iteration: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint for epoch {0} has no validation score")]
    Unscored(usize),
    #[error("no checkpoints")]
    NoCheckpoints,
    #[error("no models to ensemble")]
    NoModels,
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    ZeroShot(#[from] ZeroShotError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup_iters: usize,
    pub betas: (f64, f64),
    pub eps: f64,
    pub seed: u64,
    /// Sentences drawn per report when sampling is enabled.
    pub n_sentences: usize,
    pub sim: SimConfig,
    pub sampling_enabled: bool,
    pub tau_learnable: bool,
    pub encoder: EncoderShape,
    pub inference_temperature: InferenceTemperature,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 64,
            base_lr: 1e-4,
            warmup_iters: 100,
            betas: (0.9, 0.999),
            eps: 1e-8,
            seed: 0,
            n_sentences: 3,
            sim: SimConfig::default(),
            sampling_enabled: true,
            tau_learnable: true,
            encoder: EncoderShape::default(),
            inference_temperature: InferenceTemperature::Off,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::InvalidConfig(msg));
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size must be >= 2, got {}", self.batch_size));
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return bad(format!("base_lr must be positive, got {}", self.base_lr));
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return bad(format!("betas must lie in [0, 1), got ({b1}, {b2})"));
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if self.n_sentences == 0 {
            return bad("n_sentences must be >= 1".into());
        }
        if self.encoder.embed_dim == 0 || self.encoder.hidden_dim == Some(0) {
            return bad("encoder dimensions must be >= 1".into());
        }
        let t0 = self.encoder.init_temperature;
        if !(t0.is_finite() && t0 > 0.0) {
            return bad(format!("init_temperature must be positive, got {t0}"));
        }
        self.sim.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub params: EncoderParams,
    /// 1-based.
    pub epoch: usize,
    pub valid_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub valid_macro_auroc: f64,
    pub lr_last_iter: f64,
}

#[derive(Debug, Clone)]
pub struct EpochOutcome {
    pub record: EpochRecord,
    pub checkpoint: Checkpoint,
    pub iteration_losses: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub featurizer: TextFeaturizer,
    pub checkpoints: Vec<Checkpoint>,
    pub history: Vec<EpochRecord>,
}

/// Vocabulary over training sentences plus every prompt, so prompt tokens
/// always have a feature.
pub fn build_featurizer(corpus: &Corpus) -> Result<TextFeaturizer, TrainError> {
    let prompts = build_prompts(corpus.labels())?;
    let train = corpus.split(Split::Train);
    let texts = train
        .iter()
        .flat_map(|s| s.report.sentences().iter().map(String::as_str))
        .chain(
            prompts
                .iter()
                .flat_map(|p| [p.positive_text.as_str(), p.negative_text.as_str()]),
        );
    Ok(TextFeaturizer::from_texts(texts)?)
}

const INIT_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1;
const SAMPLE_STREAM: u64 = 2;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stateful training run. Initialization, batch order and sentence sampling
/// draw from separate streams of the seed, so toggling sampling leaves the
/// batch order unchanged.
pub struct Trainer<'a> {
    cfg: TrainConfig,
    train: Vec<&'a Study>,
    valid: Vec<&'a Study>,
    prompts: Vec<PromptPair>,
    featurizer: TextFeaturizer,
    params: EncoderParams,
    adam: Adam,
    shuffle_rng: ChaCha8Rng,
    sample_rng: ChaCha8Rng,
    sampler: SamplerConfig,
    iteration: usize,
    total_iters: usize,
    epoch: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(corpus: &'a Corpus, cfg: &TrainConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        let train = corpus.split(Split::Train);
        let valid = corpus.split(Split::Valid);
        if train.is_empty() {
            return Err(TrainError::EmptySplit(Split::Train));
        }
        if valid.is_empty() {
            return Err(TrainError::EmptySplit(Split::Valid));
        }
        if train.len() < cfg.batch_size {
            return Err(TrainError::InvalidConfig(format!(
                "batch_size {} exceeds the {} training studies",
                cfg.batch_size,
                train.len()
            )));
        }
        let featurizer = build_featurizer(corpus)?;
        let prompts = build_prompts(corpus.labels())?;
        let params = EncoderParams::init(
            corpus.image_dim(),
            featurizer.dim(),
            &cfg.encoder,
            &mut stream_rng(cfg.seed, INIT_STREAM),
        );
        let adam = Adam::new(&params, cfg.betas, cfg.eps);
        let total_iters = cfg.epochs * (train.len() / cfg.batch_size);
        Ok(Self {
            cfg: cfg.clone(),
            train,
            valid,
            prompts,
            featurizer,
            params,
            adam,
            shuffle_rng: stream_rng(cfg.seed, SHUFFLE_STREAM),
            sample_rng: stream_rng(cfg.seed, SAMPLE_STREAM),
            sampler: SamplerConfig {
                n: cfg.n_sentences,
                seed: cfg.seed,
            },
            iteration: 0,
            total_iters,
            epoch: 0,
        })
    }

    pub fn params(&self) -> &EncoderParams {
        &self.params
    }

    pub fn featurizer(&self) -> &TextFeaturizer {
        &self.featurizer
    }

    pub fn total_iters(&self) -> usize {
        self.total_iters
    }

    fn text_for(&mut self, study: &Study) -> String {
        if self.cfg.sampling_enabled {
            sample_sentences(&study.report, &self.sampler, &mut self.sample_rng).join(" ")
        } else {
            study.report.joined()
        }
    }

    fn step(&mut self, batch: &[&'a Study]) -> Result<f64, TrainError> {
        let texts: Vec<String> = batch.iter().map(|s| self.text_for(s)).collect();
        let params = &self.params;
        let featurizer = &self.featurizer;
        let image_traces: Vec<TowerTrace> = batch
            .par_iter()
            .map(|s| params.image.trace(&s.image_features))
            .collect();
        let text_traces: Vec<TowerTrace> = texts
            .par_iter()
            .map(|t| params.text.trace(&featurizer.featurize(t)))
            .collect();
        let embeddings = BatchEmbeddings::new(
            image_traces.iter().map(|t| t.embedding.clone()).collect(),
            text_traces.iter().map(|t| t.embedding.clone()).collect(),
        )?;
        let out = info_nce_loss(&embeddings, params.temperature(), &self.cfg.sim)?;
        if !out.loss.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                epoch: self.epoch,
                iteration: self.iteration,
            });
        }

        let mut grads = params.zeros_like();
        for (trace, g) in image_traces.iter().zip(&out.grad_u) {
            params.image.backward(trace, g, &mut grads.image);
        }
        for (trace, g) in text_traces.iter().zip(&out.grad_v) {
            params.text.backward(trace, g, &mut grads.text);
        }
        grads.log_temperature = if self.cfg.tau_learnable { out.grad_log_tau } else { 0.0 };

        let lr = learning_rate_at(
            self.iteration,
            self.cfg.base_lr,
            self.cfg.warmup_iters,
            self.total_iters,
        );
        self.adam.step(&mut self.params, &grads, lr);
        let tau = self.params.temperature();
        let finite = self.params.slices().iter().all(|s| s.iter().all(|x| x.is_finite()));
        if !(finite && tau > 0.0 && tau.is_finite()) {
            return Err(TrainError::NonFiniteParameters {
                epoch: self.epoch,
                iteration: self.iteration,
            });
        }
        self.iteration += 1;
        Ok(out.loss)
    }

    /// Zero-shot macro AUROC of the current parameters on the validation split.
    pub fn validation_score(&self) -> Result<f64, TrainError> {
        let scores = zero_shot_scores(
            &self.valid,
            &self.prompts,
            &self.params,
            &self.featurizer,
            self.cfg.inference_temperature,
        );
        let truth = label_truth(&self.valid, &self.prompts);
        Ok(macro_auroc(&scores, &truth)?)
    }

    pub fn run_epoch(&mut self) -> Result<EpochOutcome, TrainError> {
        self.epoch += 1;
        let mut order = self.train.clone();
        order.shuffle(&mut self.shuffle_rng);
        let mut losses = Vec::with_capacity(order.len() / self.cfg.batch_size);
        for batch in order.chunks_exact(self.cfg.batch_size) {
            losses.push(self.step(batch)?);
        }
        let lr_last_iter = learning_rate_at(
            self.iteration.saturating_sub(1),
            self.cfg.base_lr,
            self.cfg.warmup_iters,
            self.total_iters,
        );
        let score = self.validation_score()?;
        let mean_loss = losses.iter().sum::<f64>() / losses.len() as f64;
        log::info!("epoch {} loss {mean_loss:.5} valid macro AUROC {score:.4}", self.epoch);
        Ok(EpochOutcome {
            record: EpochRecord {
                epoch: self.epoch,
                mean_loss,
                valid_macro_auroc: score,
                lr_last_iter,
            },
            checkpoint: Checkpoint {
                params: self.params.clone(),
                epoch: self.epoch,
                valid_score: Some(score),
            },
            iteration_losses: losses,
        })
    }
}

/// Label-major zero-shot probabilities: `out[k][i]` is label `k` on study `i`.
fn zero_shot_scores(
    studies: &[&Study],
    prompts: &[PromptPair],
    params: &EncoderParams,
    featurizer: &TextFeaturizer,
    temperature: InferenceTemperature,
) -> Vec<Vec<f64>> {
    let embeddings = PromptEmbeddings::new(prompts, params, featurizer, temperature);
    let rows: Vec<Vec<f64>> = studies
        .par_iter()
        .map(|s| embeddings.probabilities(&params.image.encode(&s.image_features)))
        .collect();
    (0..prompts.len())
        .map(|k| rows.iter().map(|r| r[k]).collect())
        .collect()
}

fn label_truth(studies: &[&Study], prompts: &[PromptPair]) -> Vec<Vec<bool>> {
    prompts
        .iter()
        .map(|p| studies.iter().map(|s| s.has_label(&p.label)).collect())
        .collect()
}

/// Runs every epoch and keeps one checkpoint per epoch.
pub fn train(corpus: &Corpus, cfg: &TrainConfig) -> Result<TrainOutput, TrainError> {
    let mut trainer = Trainer::new(corpus, cfg)?;
    let mut checkpoints = Vec::with_capacity(cfg.epochs);
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let outcome = trainer.run_epoch()?;
        history.push(outcome.record);
        checkpoints.push(outcome.checkpoint);
    }
    Ok(TrainOutput {
        featurizer: trainer.featurizer,
        checkpoints,
        history,
    })
}

/// Highest validation score, earliest epoch on ties.
pub fn select_best(checkpoints: &[Checkpoint]) -> Result<&Checkpoint, TrainError> {
    let mut best: Option<(&Checkpoint, f64)> = None;
    for c in checkpoints {
        let score = c.valid_score.ok_or(TrainError::Unscored(c.epoch))?;
        match best {
            Some((_, b)) if score <= b => {}
            _ => best = Some((c, score)),
        }
    }
    best.map(|(c, _)| c).ok_or(TrainError::NoCheckpoints)
}

/// Mean of per-model zero-shot probabilities for one image.
pub fn ensemble_predict(
    models: &[&EncoderParams],
    image: &[f64],
    prompts: &[PromptPair],
    featurizer: &TextFeaturizer,
    temperature: InferenceTemperature,
) -> Result<Vec<f64>, TrainError> {
    ensemble_predict_all(models, [image], prompts, featurizer, temperature).map(|mut rows| rows.remove(0))
}

/// [`ensemble_predict`] over many images, one row per image.
pub fn ensemble_predict_all<'i, I>(
    models: &[&EncoderParams],
    images: I,
    prompts: &[PromptPair],
    featurizer: &TextFeaturizer,
    temperature: InferenceTemperature,
) -> Result<Vec<Vec<f64>>, TrainError>
where
    I: IntoIterator<Item = &'i [f64]>,
{
    if models.is_empty() {
        return Err(TrainError::NoModels);
    }
    let images: Vec<&[f64]> = images.into_iter().collect();
    let embeddings: Vec<PromptEmbeddings> = models
        .iter()
        .map(|m| PromptEmbeddings::new(prompts, m, featurizer, temperature))
        .collect();
    let k = models.len() as f64;
    Ok(images
        .par_iter()
        .map(|x| {
            let mut acc = vec![0.0; prompts.len()];
            for (m, e) in models.iter().zip(&embeddings) {
                for (a, p) in acc.iter_mut().zip(e.probabilities(&m.image.encode(x))) {
                    *a += p;
                }
            }
            acc.iter().map(|a| a / k).collect()
        })
        .collect())
}
