//! Random sentence sub-sampling of structured reports.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusError, StructuredReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    /// Sentences per sample.
    pub n: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { n: 3, seed: 0 }
    }
}

impl SamplerConfig {
    pub fn new(n: usize, seed: u64) -> Result<Self, CorpusError> {
        let cfg = Self { n, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.n == 0 {
            return Err(CorpusError::InvalidSpec("sampler n must be >= 1".into()));
        }
        Ok(())
    }

    /// A fresh generator seeded from `seed`.
    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

/// Draws `min(m, n)` distinct sentences uniformly without replacement and
/// returns them in document order.
pub fn sample_sentences<'a, R: Rng + ?Sized>(
    report: &'a StructuredReport,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Vec<&'a str> {
    let sentences = report.sentences();
    let m = sentences.len();
    if m <= cfg.n {
        return sentences.iter().map(String::as_str).collect();
    }
    let mut picked = index::sample(rng, m, cfg.n).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| sentences[i].as_str()).collect()
}

/// Exact binomial coefficient `C(m, n)`; zero when `n > m`.
pub fn combination_count(m: u64, n: u64) -> Result<u64, CorpusError> {
    if n > m {
        return Ok(0);
    }
    let k = n.min(m - n);
    let mut acc: u128 = 1;
    for i in 1..=k as u128 {
        // acc == C(m - k + i - 1, i - 1) here, so the division is exact.
        acc = acc
            .checked_mul(m as u128 - k as u128 + i)
            .ok_or(CorpusError::Overflow { m, n })?
            / i;
    }
    u64::try_from(acc).map_err(|_| CorpusError::Overflow { m, n })
}
