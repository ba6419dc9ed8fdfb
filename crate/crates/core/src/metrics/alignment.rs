use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::corpus::Study;
use crate::encoder::{EncoderParams, TextFeaturizer};
use crate::relaxed_loss::cosine_similarity;

/// Mean image-text cosine at report and at sentence granularity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub sentence_level: f64,
    pub report_level: f64,
}

impl Alignment {
    /// `report_level - sentence_level`.
    pub fn gap(&self) -> f64 {
        self.report_level - self.sentence_level
    }
}

/// Report level: cosine between each image and its joined report, averaged
/// over studies. Sentence level: per study, the mean cosine between the
/// image and each sentence, averaged over studies.
pub fn alignment<'a, I>(
    studies: I,
    params: &EncoderParams,
    featurizer: &TextFeaturizer,
) -> Result<Alignment, MetricError>
where
    I: IntoIterator<Item = &'a Study>,
{
    let encode_text = |t: &str| params.text.encode(&featurizer.featurize(t));
    let mut report_sum = 0.0;
    let mut sentence_sum = 0.0;
    let mut count = 0usize;
    for study in studies {
        let image = params.image.encode(&study.image_features);
        report_sum += cosine_similarity(&image, &encode_text(&study.report.joined()));
        let sentences = study.report.sentences();
        let per_study: f64 = sentences
            .iter()
            .map(|s| cosine_similarity(&image, &encode_text(s)))
            .sum::<f64>()
            / sentences.len() as f64;
        sentence_sum += per_study;
        count += 1;
    }
    if count == 0 {
        return Err(MetricError::EmptyInput);
    }
    Ok(Alignment {
        sentence_level: sentence_sum / count as f64,
        report_level: report_sum / count as f64,
    })
}
