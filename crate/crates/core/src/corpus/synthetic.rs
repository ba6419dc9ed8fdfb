//! Synthetic multi-label image-report corpora.
//!
//! Every label owns a random unit prototype in image-feature space and a
//! pool of template sentences. A study's image is the sum of its active
//! prototypes plus isotropic Gaussian noise; its report has one template
//! sentence per active label and an optional filler sentence. Label sets
//! overlap freely across studies, which produces the false-negative pairs
//! a contrastive objective has to cope with.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError, RawReport, ReportParser, Split, Study};

const LABEL_NAMES: &[&str] = &[
    "atelectasis",
    "cardiomegaly",
    "consolidation",
    "edema",
    "pleural effusion",
    "pneumothorax",
    "pneumonia",
    "fracture",
    "lung opacity",
    "lung lesion",
    "enlarged cardiomediastinum",
    "pleural other",
    "support devices",
];

const MODIFIERS: &[&str] = &[
    "",
    "mild ",
    "moderate ",
    "severe ",
    "small ",
    "new ",
    "persistent ",
    "stable ",
];

// `{}` is replaced by the (modifier + label) phrase.
const FRAMES: &[&str] = &[
    "There is {}.",
    "{} is present.",
    "Findings are consistent with {}.",
    "{} is seen.",
    "Appearance suggests {}.",
    "{} has developed.",
    "Evidence of {} is noted.",
    "Imaging demonstrates {}.",
];

const FILLERS: &[&str] = &[
    "No acute osseous abnormality.",
    "The visualized upper abdomen is unremarkable.",
    "Comparison is made to the prior radiograph.",
    "The patient is slightly rotated.",
    "The trachea is midline.",
    "Overall exam quality is limited.",
    "Degenerative changes of the spine are unchanged.",
    "Soft tissues are within normal limits.",
];

const INDICATIONS: &[&str] = &[
    "Cough.",
    "Shortness of breath.",
    "Fever and chills.",
    "Chest pain.",
    "Preoperative evaluation.",
];

/// Per-label Bernoulli probability: one value for all labels, or one each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Prevalence {
    Uniform(f64),
    PerLabel(Vec<f64>),
}

impl Prevalence {
    fn for_label(&self, k: usize) -> f64 {
        match self {
            Prevalence::Uniform(p) => *p,
            Prevalence::PerLabel(ps) => ps[k],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSizes {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_labels: usize,
    pub prototype_dim: usize,
    pub label_prevalence: Prevalence,
    pub image_noise_sigma: f64,
    /// Template pool size per label.
    pub sentences_per_label: usize,
    pub filler_sentence_rate: f64,
    pub corpus_sizes: CorpusSizes,
    pub seed: u64,
    /// Fraction of reports written without section headers.
    pub headerless_rate: f64,
}

fn default_headerless_rate() -> f64 {
    0.2
}

impl Default for SyntheticSpec {
    /// The reference desk-scale corpus: eight overlapping labels.
    fn default() -> Self {
        Self {
            num_labels: 8,
            prototype_dim: 64,
            label_prevalence: Prevalence::Uniform(0.3),
            image_noise_sigma: 0.5,
            sentences_per_label: 6,
            filler_sentence_rate: 0.5,
            corpus_sizes: CorpusSizes {
                train: 2000,
                valid: 200,
                test: 500,
            },
            seed: 20240501,
            headerless_rate: default_headerless_rate(),
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let fail = |msg: String| Err(CorpusError::InvalidSpec(msg));
        if self.num_labels < 2 {
            return fail(format!("num_labels must be >= 2 (got {})", self.num_labels));
        }
        if self.prototype_dim == 0 {
            return fail("prototype_dim must be >= 1".into());
        }
        match &self.label_prevalence {
            Prevalence::PerLabel(ps) if ps.len() != self.num_labels => {
                return fail(format!(
                    "label_prevalence has {} entries but num_labels is {}",
                    ps.len(),
                    self.num_labels
                ));
            }
            _ => {}
        }
        for k in 0..self.num_labels {
            let p = self.label_prevalence.for_label(k);
            if !(p > 0.0 && p <= 1.0) {
                return fail(format!("label_prevalence must lie in (0, 1] (got {p})"));
            }
        }
        if !(self.image_noise_sigma >= 0.0 && self.image_noise_sigma.is_finite()) {
            return fail("image_noise_sigma must be a non-negative finite number".into());
        }
        let pool = MODIFIERS.len() * FRAMES.len();
        if self.sentences_per_label == 0 || self.sentences_per_label > pool {
            return fail(format!("sentences_per_label must lie in 1..={pool}"));
        }
        if !(0.0..1.0).contains(&self.filler_sentence_rate) {
            return fail("filler_sentence_rate must lie in [0, 1)".into());
        }
        if !(0.0..=1.0).contains(&self.headerless_rate) {
            return fail("headerless_rate must lie in [0, 1]".into());
        }
        let s = self.corpus_sizes;
        if s.train == 0 || s.valid == 0 || s.test == 0 {
            return fail("all corpus sizes must be >= 1".into());
        }
        Ok(())
    }
}

/// Label name for index `k`; the first thirteen are chest X-ray findings.
pub fn label_name(k: usize) -> String {
    LABEL_NAMES
        .get(k)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("pathology{k}"))
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn template_pool<R: Rng>(label: &str, size: usize, rng: &mut R) -> Vec<String> {
    let mut combos: Vec<(usize, usize)> = (0..FRAMES.len())
        .flat_map(|f| (0..MODIFIERS.len()).map(move |m| (f, m)))
        .collect();
    combos.shuffle(rng);
    combos
        .into_iter()
        .take(size)
        .map(|(f, m)| {
            let frame = FRAMES[f];
            let phrase = format!("{}{}", MODIFIERS[m], label);
            if frame.starts_with("{}") {
                frame.replacen("{}", &capitalize(&phrase), 1)
            } else {
                frame.replacen("{}", &phrase, 1)
            }
        })
        .collect()
}

fn unit_gaussian<R: Rng>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Generates train, valid and test studies deterministically from `spec.seed`.
pub fn generate_synthetic_corpus(spec: &SyntheticSpec) -> Result<Corpus, CorpusError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let names: Vec<String> = (0..spec.num_labels).map(label_name).collect();
    let prototypes: Vec<Vec<f64>> = (0..spec.num_labels)
        .map(|_| unit_gaussian(spec.prototype_dim, &mut rng))
        .collect();
    let pools: Vec<Vec<String>> = names
        .iter()
        .map(|n| template_pool(n, spec.sentences_per_label, &mut rng))
        .collect();
    let noise = Normal::new(0.0, spec.image_noise_sigma).map_err(|e| CorpusError::InvalidSpec(e.to_string()))?;
    let parser = ReportParser::default();

    let sizes = spec.corpus_sizes;
    let mut studies = Vec::with_capacity(sizes.train + sizes.valid + sizes.test);
    for (split, count) in [
        (Split::Train, sizes.train),
        (Split::Valid, sizes.valid),
        (Split::Test, sizes.test),
    ] {
        for i in 0..count {
            let id = format!("{}-{i:05}", split.as_str());
            let active: Vec<usize> = (0..spec.num_labels)
                .filter(|&k| rng.random_bool(spec.label_prevalence.for_label(k)))
                .collect();

            let mut image = vec![0.0; spec.prototype_dim];
            for &k in &active {
                for (x, p) in image.iter_mut().zip(&prototypes[k]) {
                    *x += p;
                }
            }
            for x in image.iter_mut() {
                *x += noise.sample(&mut rng);
            }

            let mut sentences: Vec<String> = active
                .iter()
                .map(|&k| pools[k][rng.random_range(0..pools[k].len())].clone())
                .collect();
            let wants_filler = rng.random_bool(spec.filler_sentence_rate);
            if wants_filler || active.is_empty() {
                sentences.push(FILLERS[rng.random_range(0..FILLERS.len())].to_string());
            }
            sentences.shuffle(&mut rng);

            let body = sentences.join(" ");
            let indication = INDICATIONS[rng.random_range(0..INDICATIONS.len())];
            let raw_text = if rng.random_bool(spec.headerless_rate) {
                format!("{indication}\n\n{body}\n")
            } else {
                format!("INDICATION: {indication}\n\nFINDINGS: {body}\n")
            };
            let report = parser.parse(&RawReport::new(id.clone(), raw_text.clone()))?;
            debug_assert_eq!(report.sentences(), sentences.as_slice());

            studies.push(Study {
                id,
                image_features: image,
                report,
                raw_report: raw_text,
                labels: active.iter().map(|&k| names[k].clone()).collect::<BTreeSet<_>>(),
                split,
            });
        }
    }
    Corpus::with_labels(studies, names)
}
