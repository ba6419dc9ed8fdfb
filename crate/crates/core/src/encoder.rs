//! Image and text towers that map feature vectors onto the unit sphere of a
//! shared embedding space, plus the bag-of-tokens text featurizer.
//!
//! Each tower is an affine map (optionally preceded by one tanh hidden
//! layer) followed by L2 normalization. Backward passes are written out by
//! hand; `trace` records what the backward pass needs.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EncoderError {
    #[error("vocabulary is empty")]
    EmptyVocabulary,
    #[error("duplicate vocabulary token {0:?}")]
    DuplicateToken(String),
    #[error("{what}: expected dimension {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("parameter {0} is not finite")]
    NonFinite(&'static str),
}

/// Dense `y = W x + b` with row-major weights of shape `rows x cols`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Affine {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Affine {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            weights: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }

    /// Weights uniform in `±1/sqrt(cols)`, zero bias.
    pub fn init<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (cols.max(1) as f64).sqrt();
        Self {
            rows,
            cols,
            weights: (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect(),
            bias: vec![0.0; rows],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut a = Self::zeros(n, n);
        for i in 0..n {
            a.weights[i * n + i] = 1.0;
        }
        a
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        self.weights
            .chunks_exact(self.cols)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b)
            .collect()
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Affine, want_dx: bool) -> Vec<f64> {
        let mut dx = if want_dx { vec![0.0; self.cols] } else { Vec::new() };
        for (r, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.bias[r] += g;
            let row = r * self.cols..(r + 1) * self.cols;
            for (gw, xi) in grad.weights[row.clone()].iter_mut().zip(x) {
                *gw += g * xi;
            }
            if want_dx {
                for (d, w) in dx.iter_mut().zip(&self.weights[row]) {
                    *d += g * w;
                }
            }
        }
        dx
    }

    fn scale(&mut self, c: f64) {
        self.weights
            .iter_mut()
            .chain(self.bias.iter_mut())
            .for_each(|w| *w *= c);
    }
}

/// One encoder: optional tanh hidden layer, affine output, L2 normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tower {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<Affine>,
    pub output: Affine,
}

/// Intermediate values of one tower forward pass.
#[derive(Debug, Clone)]
pub struct TowerTrace {
    input: Vec<f64>,
    hidden: Option<Vec<f64>>,
    norm: f64,
    pub embedding: Vec<f64>,
}

impl TowerTrace {
    /// True when the affine output was zero and the fallback basis vector
    /// was returned.
    pub fn used_fallback(&self) -> bool {
        self.norm == 0.0
    }
}

impl Tower {
    pub fn init<R: Rng + ?Sized>(input_dim: usize, embed_dim: usize, hidden_dim: Option<usize>, rng: &mut R) -> Self {
        match hidden_dim {
            Some(h) => Self {
                hidden: Some(Affine::init(h, input_dim, rng)),
                output: Affine::init(embed_dim, h, rng),
            },
            None => Self {
                hidden: None,
                output: Affine::init(embed_dim, input_dim, rng),
            },
        }
    }

    pub fn linear(output: Affine) -> Self {
        Self { hidden: None, output }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.as_ref().map_or(self.output.cols, |h| h.cols)
    }

    pub fn embed_dim(&self) -> usize {
        self.output.rows
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            hidden: self.hidden.as_ref().map(|h| Affine::zeros(h.rows, h.cols)),
            output: Affine::zeros(self.output.rows, self.output.cols),
        }
    }

    fn pre_activation(&self, x: &[f64]) -> (Option<Vec<f64>>, Vec<f64>) {
        match &self.hidden {
            Some(h) => {
                let act: Vec<f64> = h.apply(x).into_iter().map(f64::tanh).collect();
                let z = self.output.apply(&act);
                (Some(act), z)
            }
            None => (None, self.output.apply(x)),
        }
    }

    pub fn trace(&self, x: &[f64]) -> TowerTrace {
        let (hidden, z) = self.pre_activation(x);
        let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        let embedding = if norm > 0.0 && norm.is_finite() {
            z.iter().map(|v| v / norm).collect()
        } else {
            basis_vector(z.len())
        };
        TowerTrace {
            input: x.to_vec(),
            hidden,
            norm: if norm.is_finite() { norm } else { 0.0 },
            embedding,
        }
    }

    pub fn encode(&self, x: &[f64]) -> Vec<f64> {
        self.trace(x).embedding
    }

    /// Back-propagates `dL/d embedding` into `grad`.
    pub fn backward(&self, trace: &TowerTrace, d_embedding: &[f64], grad: &mut Tower) {
        if trace.used_fallback() {
            return;
        }
        let u = &trace.embedding;
        let proj: f64 = d_embedding.iter().zip(u).map(|(g, ui)| g * ui).sum();
        let dz: Vec<f64> = d_embedding
            .iter()
            .zip(u)
            .map(|(g, ui)| (g - proj * ui) / trace.norm)
            .collect();
        match (&self.hidden, &trace.hidden) {
            (Some(hidden), Some(act)) => {
                let g_hidden = grad.hidden.as_mut().expect("gradient tower mirrors parameters");
                let dh = self.output.backward(act, &dz, &mut grad.output, true);
                let da: Vec<f64> = dh.iter().zip(act).map(|(d, h)| d * (1.0 - h * h)).collect();
                hidden.backward(&trace.input, &da, g_hidden, false);
            }
            _ => {
                self.output.backward(&trace.input, &dz, &mut grad.output, false);
            }
        }
    }

    fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(4);
        if let Some(h) = &self.hidden {
            out.push(h.weights.as_slice());
            out.push(h.bias.as_slice());
        }
        out.push(self.output.weights.as_slice());
        out.push(self.output.bias.as_slice());
        out
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(4);
        if let Some(h) = &mut self.hidden {
            out.push(h.weights.as_mut_slice());
            out.push(h.bias.as_mut_slice());
        }
        out.push(self.output.weights.as_mut_slice());
        out.push(self.output.bias.as_mut_slice());
        out
    }

    /// Multiplies every weight and bias by `c`.
    pub fn scale(&mut self, c: f64) {
        if let Some(h) = &mut self.hidden {
            h.scale(c);
        }
        self.output.scale(c);
    }
}

/// The first standard basis vector, returned for zero pre-activations.
fn basis_vector(dim: usize) -> Vec<f64> {
    let mut e = vec![0.0; dim];
    if let Some(first) = e.first_mut() {
        *first = 1.0;
    }
    e
}

/// Shape options for [`EncoderParams::init`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderShape {
    pub embed_dim: usize,
    #[serde(default)]
    pub hidden_dim: Option<usize>,
    pub init_temperature: f64,
}

impl Default for EncoderShape {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            hidden_dim: None,
            init_temperature: 0.07,
        }
    }
}

/// Trainable parameters: both towers and the log of the contrastive
/// temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderParams {
    pub image: Tower,
    pub text: Tower,
    pub log_temperature: f64,
}

impl EncoderParams {
    pub fn init<R: Rng + ?Sized>(image_dim: usize, text_dim: usize, shape: &EncoderShape, rng: &mut R) -> Self {
        let image = Tower::init(image_dim, shape.embed_dim, shape.hidden_dim, rng);
        let text = Tower::init(text_dim, shape.embed_dim, shape.hidden_dim, rng);
        Self {
            image,
            text,
            log_temperature: shape.init_temperature.ln(),
        }
    }

    pub fn temperature(&self) -> f64 {
        self.log_temperature.exp()
    }

    pub fn embed_dim(&self) -> usize {
        self.image.embed_dim()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            image: self.image.zeros_like(),
            text: self.text.zeros_like(),
            log_temperature: 0.0,
        }
    }

    /// Every parameter buffer in a fixed order: image tower, text tower,
    /// log temperature.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = self.image.slices();
        out.extend(self.text.slices());
        out.push(std::slice::from_ref(&self.log_temperature));
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.image.slices_mut();
        out.extend(self.text.slices_mut());
        out.push(std::slice::from_mut(&mut self.log_temperature));
        out
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.image.embed_dim() != self.text.embed_dim() {
            return Err(EncoderError::Dimension {
                what: "text embedding",
                expected: self.image.embed_dim(),
                got: self.text.embed_dim(),
            });
        }
        for (name, tower) in [("image tower", &self.image), ("text tower", &self.text)] {
            if tower.slices().iter().any(|s| s.iter().any(|x| !x.is_finite())) {
                return Err(EncoderError::NonFinite(name));
            }
            if let Some(h) = &tower.hidden {
                if h.rows != tower.output.cols {
                    return Err(EncoderError::Dimension {
                        what: name,
                        expected: h.rows,
                        got: tower.output.cols,
                    });
                }
            }
        }
        if !self.log_temperature.is_finite() || self.temperature() <= 0.0 {
            return Err(EncoderError::NonFinite("log_temperature"));
        }
        Ok(())
    }
}

pub fn encode_image(features: &[f64], params: &EncoderParams) -> Vec<f64> {
    params.image.encode(features)
}

pub fn encode_text(features: &[f64], params: &EncoderParams) -> Vec<f64> {
    params.text.encode(features)
}

/// Bag-of-tokens text features with L2-normalized counts.
#[derive(Debug, Clone, PartialEq)]
pub struct TextFeaturizer {
    vocabulary: Vec<String>,
    index: HashMap<String, usize>,
}

impl Serialize for TextFeaturizer {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.vocabulary.serialize(s)
    }
}

impl<'de> Deserialize<'de> for TextFeaturizer {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let vocabulary = Vec::<String>::deserialize(d)?;
        TextFeaturizer::new(vocabulary).map_err(serde::de::Error::custom)
    }
}

/// Lowercases and splits on runs of non-alphanumeric characters.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

impl TextFeaturizer {
    pub fn new(vocabulary: Vec<String>) -> Result<Self, EncoderError> {
        if vocabulary.is_empty() {
            return Err(EncoderError::EmptyVocabulary);
        }
        let mut index = HashMap::with_capacity(vocabulary.len());
        for (i, tok) in vocabulary.iter().enumerate() {
            if index.insert(tok.clone(), i).is_some() {
                return Err(EncoderError::DuplicateToken(tok.clone()));
            }
        }
        Ok(Self { vocabulary, index })
    }

    /// Sorted vocabulary of every token appearing in `texts`.
    pub fn from_texts<'a, I: IntoIterator<Item = &'a str>>(texts: I) -> Result<Self, EncoderError> {
        let mut tokens: Vec<String> = texts.into_iter().flat_map(tokenize).collect();
        tokens.sort();
        tokens.dedup();
        Self::new(tokens)
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    pub fn dim(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn featurize(&self, text: &str) -> Vec<f64> {
        let mut counts = vec![0.0; self.vocabulary.len()];
        for tok in tokenize(text) {
            if let Some(&i) = self.index.get(&tok) {
                counts[i] += 1.0;
            }
        }
        let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm > 0.0 {
            counts.iter_mut().for_each(|c| *c /= norm);
        }
        counts
    }
}

pub fn featurize_text(text: &str, featurizer: &TextFeaturizer) -> Vec<f64> {
    featurizer.featurize(text)
}
