//! On-disk formats for trained models and run outputs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderParams, TextFeaturizer};
use crate::trainer::{Checkpoint, EpochRecord, TrainConfig};

/// Run-specific facts excluded from reproducibility comparisons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub tool: String,
    pub version: String,
    pub created_unix: u64,
}

impl Meta {
    pub fn now() -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }
}

/// A self-contained scored model: everything zero-shot inference needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<Meta>,
    pub epoch: usize,
    pub valid_score: Option<f64>,
    pub labels: Vec<String>,
    pub vocabulary: TextFeaturizer,
    pub config: TrainConfig,
    pub params: EncoderParams,
}

impl ModelFile {
    pub fn new(checkpoint: &Checkpoint, labels: &[String], featurizer: &TextFeaturizer, config: &TrainConfig) -> Self {
        Self {
            meta: None,
            epoch: checkpoint.epoch,
            valid_score: checkpoint.valid_score,
            labels: labels.to_vec(),
            vocabulary: featurizer.clone(),
            config: config.clone(),
            params: checkpoint.params.clone(),
        }
    }

    pub fn with_meta(mut self, meta: Meta) -> Self {
        self.meta = Some(meta);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub meta: Meta,
    pub command: String,
    pub config_hash: String,
    /// Paths relative to the output directory, sorted.
    pub files: Vec<String>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> std::io::Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

/// `epoch, mean_loss, valid_macro_auroc, lr_last_iter`.
pub fn write_history<W: Write>(writer: W, history: &[EpochRecord]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    for record in history {
        w.serialize(record)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::encoder::EncoderShape;

    #[test]
    fn model_file_round_trips() {
        let f = TextFeaturizer::from_texts(["edema", "no"]).unwrap();
        let params = EncoderParams::init(3, f.dim(), &EncoderShape::default(), &mut ChaCha8Rng::seed_from_u64(1));
        let cp = Checkpoint {
            params,
            epoch: 4,
            valid_score: Some(0.75),
        };
        let m = ModelFile::new(&cp, &["edema".into()], &f, &TrainConfig::default()).with_meta(Meta::now());
        let back: ModelFile = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn history_header() {
        let mut buf = Vec::new();
        let rec = EpochRecord {
            epoch: 1,
            mean_loss: 2.5,
            valid_macro_auroc: 0.6,
            lr_last_iter: 1e-4,
        };
        write_history(&mut buf, &[rec]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "epoch,mean_loss,valid_macro_auroc,lr_last_iter"
        );
        assert_eq!(text.lines().count(), 2);
    }
}
