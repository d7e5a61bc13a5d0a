//! Seeded two-source training mixture.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dataset::QASample;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MixtureError {
    #[error("{source_name} pool has {available} samples, {needed} requested")]
    InsufficientPool {
        source_name: &'static str,
        needed: usize,
        available: usize,
    },
    #[error("ratio must lie in [0, 1], got {0}")]
    InvalidRatio(f64),
}

fn draw(
    pool: &[QASample],
    n: usize,
    name: &'static str,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<QASample>, MixtureError> {
    if n > pool.len() {
        return Err(MixtureError::InsufficientPool {
            source_name: name,
            needed: n,
            available: pool.len(),
        });
    }
    let mut picked: Vec<usize> = rand::seq::index::sample(rng, pool.len(), n).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| pool[i].clone()).collect())
}

/// Draws `round(total·ratio)` samples from `hotpot` and the rest from
/// `twowiki`, without replacement, then shuffles. Same seed, same mixture.
pub fn sample_training_mixture(
    hotpot: &[QASample],
    twowiki: &[QASample],
    total: usize,
    ratio: f64,
    seed: u64,
) -> Result<Vec<QASample>, MixtureError> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(MixtureError::InvalidRatio(ratio));
    }
    let n_hotpot = ((total as f64) * ratio).round() as usize;
    let n_twowiki = total - n_hotpot.min(total);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = draw(hotpot, n_hotpot, "hotpotqa", &mut rng)?;
    out.extend(draw(twowiki, n_twowiki, "2wikimultihopqa", &mut rng)?);
    out.shuffle(&mut rng);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::SourceDataset;
    use crate::metrics::GoldAnswerSet;

    fn pool(source: SourceDataset, n: usize) -> Vec<QASample> {
        (0..n)
            .map(|i| QASample {
                id: format!("{source}-{i}"),
                question: format!("question {i}"),
                golds: GoldAnswerSet::single("yes").unwrap(),
                source_dataset: source.clone(),
            })
            .collect()
    }

    #[test]
    fn even_split_is_reproducible() {
        let h = pool(SourceDataset::HotpotQA, 300);
        let w = pool(SourceDataset::TwoWikiMultiHopQA, 300);
        let a = sample_training_mixture(&h, &w, 180, 0.5, 7).unwrap();
        let b = sample_training_mixture(&h, &w, 180, 0.5, 7).unwrap();
        assert_eq!(a, b);
        let hot = a.iter().filter(|s| s.source_dataset == SourceDataset::HotpotQA).count();
        assert_eq!((hot, a.len() - hot), (90, 90));
        let mut ids: Vec<_> = a.iter().map(|s| s.id.clone()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 180);
        assert_ne!(a, sample_training_mixture(&h, &w, 180, 0.5, 8).unwrap());
    }

    #[test]
    fn degenerate_ratio_and_shortage() {
        let h = pool(SourceDataset::HotpotQA, 50);
        let w = pool(SourceDataset::TwoWikiMultiHopQA, 5);
        let all_hot = sample_training_mixture(&h, &w, 40, 1.0, 1).unwrap();
        assert!(all_hot.iter().all(|s| s.source_dataset == SourceDataset::HotpotQA));
        assert!(matches!(
            sample_training_mixture(&h, &w, 60, 1.0, 1),
            Err(MixtureError::InsufficientPool { needed: 60, available: 50, .. })
        ));
        assert!(matches!(
            sample_training_mixture(&h, &w, 20, 0.5, 1),
            Err(MixtureError::InsufficientPool { needed: 10, available: 5, .. })
        ));
        assert!(sample_training_mixture(&h, &w, 10, 1.5, 1).is_err());
    }
}
