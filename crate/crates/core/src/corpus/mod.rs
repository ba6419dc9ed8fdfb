//! Studies, report parsing, sentence sampling, synthetic corpora and
//! label-overlap diagnostics.

mod overlap;
mod report;
mod sampler;
mod synthetic;

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use overlap::label_overlap_histogram;
pub use report::{
    parse_report, RawReport, ReportParser, SentenceSplitter, SourceSection, StructuredReport, DEFAULT_ABBREVIATIONS,
};
pub use sampler::{combination_count, sample_sentences, SamplerConfig};
pub use synthetic::{generate_synthetic_corpus, CorpusSizes, Prevalence, SyntheticSpec};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("report {0} is empty")]
    EmptyReport(String),
    #[error("report {0} has no extractable sentences")]
    NoContent(String),
    #[error("report {0} contains a blank sentence")]
    BlankSentence(String),
    #[error("C({m}, {n}) does not fit in 64 bits")]
    Overflow { m: u64, n: u64 },
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("invalid study {id}: {reason}")]
    InvalidStudy { id: String, reason: String },
    #[error("corpus has no studies")]
    EmptyCorpus,
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

/// One image (as pre-extracted features), its parsed report and its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Study {
    pub id: String,
    pub image_features: Vec<f64>,
    pub report: StructuredReport,
    /// The unparsed report text the structured report came from.
    pub raw_report: String,
    pub labels: BTreeSet<String>,
    pub split: Split,
}

impl Study {
    pub fn has_label(&self, label: &str) -> bool {
        self.labels.contains(label)
    }
}

/// A set of studies plus the label vocabulary they draw from (sorted).
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    studies: Vec<Study>,
    labels: Vec<String>,
}

/// Wire form of a study: one JSON object per line.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StudyLine {
    id: String,
    image_features: Vec<f64>,
    report: String,
    labels: Vec<String>,
    split: Split,
}

impl Corpus {
    /// Builds a corpus whose label vocabulary is the union of study labels.
    pub fn from_studies(studies: Vec<Study>) -> Result<Self, CorpusError> {
        let labels: BTreeSet<String> = studies.iter().flat_map(|s| s.labels.iter().cloned()).collect();
        Self::with_labels(studies, labels.into_iter().collect())
    }

    /// Builds a corpus with an explicit label vocabulary.
    pub fn with_labels(studies: Vec<Study>, mut labels: Vec<String>) -> Result<Self, CorpusError> {
        labels.sort();
        labels.dedup();
        let dim = studies.first().map(|s| s.image_features.len());
        for s in &studies {
            let invalid = |reason: &str| CorpusError::InvalidStudy {
                id: s.id.clone(),
                reason: reason.to_string(),
            };
            if Some(s.image_features.len()) != dim {
                return Err(invalid("image feature dimension differs from the first study"));
            }
            if s.image_features.iter().any(|x| !x.is_finite()) {
                return Err(invalid("image features must be finite"));
            }
            if let Some(l) = s.labels.iter().find(|l| labels.binary_search(l).is_err()) {
                return Err(invalid(&format!("label {l:?} not in the label vocabulary")));
            }
        }
        Ok(Self { studies, labels })
    }

    pub fn studies(&self) -> &[Study] {
        &self.studies
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.studies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.studies.is_empty()
    }

    pub fn image_dim(&self) -> usize {
        self.studies.first().map_or(0, |s| s.image_features.len())
    }

    pub fn split(&self, split: Split) -> Vec<&Study> {
        self.studies.iter().filter(|s| s.split == split).collect()
    }

    pub fn split_counts(&self) -> BTreeMap<Split, usize> {
        let mut counts = BTreeMap::new();
        for s in &self.studies {
            *counts.entry(s.split).or_insert(0) += 1;
        }
        counts
    }

    /// Reads a JSONL corpus, parsing every report with `parser`.
    pub fn read_jsonl<R: BufRead>(reader: R, parser: &ReportParser) -> Result<Self, CorpusError> {
        let mut studies = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: StudyLine =
                serde_json::from_str(&line).map_err(|source| CorpusError::Parse { line: i + 1, source })?;
            let report = parser.parse(&RawReport::new(rec.id.clone(), rec.report.clone()))?;
            studies.push(Study {
                id: rec.id,
                image_features: rec.image_features,
                report,
                raw_report: rec.report,
                labels: rec.labels.into_iter().collect(),
                split: rec.split,
            });
        }
        if studies.is_empty() {
            return Err(CorpusError::EmptyCorpus);
        }
        Self::from_studies(studies)
    }

    pub fn write_jsonl<W: Write>(&self, mut writer: W) -> Result<(), CorpusError> {
        for s in &self.studies {
            let rec = StudyLine {
                id: s.id.clone(),
                image_features: s.image_features.clone(),
                report: s.raw_report.clone(),
                labels: s.labels.iter().cloned().collect(),
                split: s.split,
            };
            serde_json::to_writer(&mut writer, &rec).map_err(std::io::Error::from)?;
            writer.write_all(b"\n")?;
        }
        writer.flush()?;
        Ok(())
    }
}
