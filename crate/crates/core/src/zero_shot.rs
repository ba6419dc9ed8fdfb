//! Prompt construction and two-way softmax zero-shot classification.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{EncoderParams, TextFeaturizer};
use crate::relaxed_loss::cosine_similarity;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ZeroShotError {
    #[error("no labels given")]
    NoLabels,
    #[error("label {0} is empty")]
    EmptyLabel(usize),
}

/// Positive (`"{label}"`) and negative (`"no {label}"`) prompt for a label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPair {
    pub label: String,
    pub positive_text: String,
    pub negative_text: String,
}

impl PromptPair {
    pub fn new(label: &str) -> Self {
        Self {
            label: label.to_string(),
            positive_text: label.to_string(),
            negative_text: format!("no {}", label.to_lowercase()),
        }
    }

    fn swapped(&self) -> Self {
        Self {
            label: self.label.clone(),
            positive_text: self.negative_text.clone(),
            negative_text: self.positive_text.clone(),
        }
    }
}

pub fn build_prompts<S: AsRef<str>>(labels: &[S]) -> Result<Vec<PromptPair>, ZeroShotError> {
    if labels.is_empty() {
        return Err(ZeroShotError::NoLabels);
    }
    labels
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let l = l.as_ref();
            if l.trim().is_empty() {
                Err(ZeroShotError::EmptyLabel(i))
            } else {
                Ok(PromptPair::new(l))
            }
        })
        .collect()
}

/// Whether cosines are divided by the learned temperature before the
/// softmax at inference time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InferenceTemperature {
    #[default]
    Off,
    Tau,
}

/// `exp(a) / (exp(a) + exp(b))`, evaluated so that swapping the arguments
/// yields exactly one minus the result.
pub fn two_way_softmax(a: f64, b: f64) -> f64 {
    if a >= b {
        1.0 / (1.0 + (b - a).exp())
    } else {
        1.0 - 1.0 / (1.0 + (a - b).exp())
    }
}

/// Prompt embeddings computed once for a fixed model.
#[derive(Debug, Clone)]
pub struct PromptEmbeddings {
    positive: Vec<Vec<f64>>,
    negative: Vec<Vec<f64>>,
    scale: f64,
}

impl PromptEmbeddings {
    pub fn new(
        prompts: &[PromptPair],
        params: &EncoderParams,
        featurizer: &TextFeaturizer,
        temperature: InferenceTemperature,
    ) -> Self {
        let embed = |t: &str| params.text.encode(&featurizer.featurize(t));
        Self {
            positive: prompts.iter().map(|p| embed(&p.positive_text)).collect(),
            negative: prompts.iter().map(|p| embed(&p.negative_text)).collect(),
            scale: match temperature {
                InferenceTemperature::Off => 1.0,
                InferenceTemperature::Tau => 1.0 / params.temperature(),
            },
        }
    }

    /// Per-label probabilities for an already encoded image.
    pub fn probabilities(&self, image_embedding: &[f64]) -> Vec<f64> {
        self.positive
            .iter()
            .zip(&self.negative)
            .map(|(pos, neg)| {
                let s_pos = cosine_similarity(image_embedding, pos) * self.scale;
                let s_neg = cosine_similarity(image_embedding, neg) * self.scale;
                two_way_softmax(s_pos, s_neg)
            })
            .collect()
    }
}

/// Probability of the positive prompt for every label.
pub fn classify(
    image: &[f64],
    prompts: &[PromptPair],
    params: &EncoderParams,
    featurizer: &TextFeaturizer,
    temperature: InferenceTemperature,
) -> Vec<f64> {
    PromptEmbeddings::new(prompts, params, featurizer, temperature).probabilities(&params.image.encode(image))
}

/// Probabilities with the two prompts of every label exchanged.
pub fn classify_swapped(
    image: &[f64],
    prompts: &[PromptPair],
    params: &EncoderParams,
    featurizer: &TextFeaturizer,
    temperature: InferenceTemperature,
) -> Vec<f64> {
    let swapped: Vec<PromptPair> = prompts.iter().map(PromptPair::swapped).collect();
    classify(image, &swapped, params, featurizer, temperature)
}

/// Zero-shot probability matrix, one row per image.
pub fn predict_all<'a, I>(
    images: I,
    prompts: &[PromptPair],
    params: &EncoderParams,
    featurizer: &TextFeaturizer,
    temperature: InferenceTemperature,
) -> Vec<Vec<f64>>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let embeddings = PromptEmbeddings::new(prompts, params, featurizer, temperature);
    images
        .into_iter()
        .map(|x| embeddings.probabilities(&params.image.encode(x)))
        .collect()
}
