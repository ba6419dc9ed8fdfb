use std::collections::{BTreeMap, HashMap};

use super::{CorpusError, Study};

/// For each `k` in `1..=max_shared`, the average over studies of how many
/// other studies share exactly `k` labels with it.
pub fn label_overlap_histogram(studies: &[Study], max_shared: usize) -> Result<BTreeMap<usize, f64>, CorpusError> {
    if studies.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let mut index: HashMap<&str, usize> = HashMap::new();
    for l in studies.iter().flat_map(|s| s.labels.iter()) {
        let next = index.len();
        index.entry(l.as_str()).or_insert(next);
    }
    let words = index.len().div_ceil(64).max(1);
    let masks: Vec<Vec<u64>> = studies
        .iter()
        .map(|s| {
            let mut m = vec![0u64; words];
            for l in &s.labels {
                let b = index[l.as_str()];
                m[b / 64] |= 1 << (b % 64);
            }
            m
        })
        .collect();

    let mut totals = vec![0u64; max_shared + 1];
    for (i, a) in masks.iter().enumerate() {
        for b in &masks[i + 1..] {
            let shared: u32 = a.iter().zip(b).map(|(x, y)| (x & y).count_ones()).sum();
            let shared = shared as usize;
            if (1..=max_shared).contains(&shared) {
                // The pair counts once for each side.
                totals[shared] += 2;
            }
        }
    }
    let n = studies.len() as f64;
    Ok((1..=max_shared).map(|k| (k, totals[k] as f64 / n)).collect())
}
