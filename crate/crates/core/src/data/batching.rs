//! Single-source batch composition: each batch holds items from one source.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SourceBatch<T> {
    pub source: String,
    pub items: Vec<T>,
}

fn epoch_seed(seed: u64, epoch: u64) -> u64 {
    seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// One epoch of batches.
///
/// Every source is shuffled, cut into full batches (the remainder is
/// dropped), and batches are then drawn one at a time from a source picked
/// with probability proportional to its remaining batch count. Sources
/// smaller than `batch_size` contribute nothing and are logged.
pub fn make_batches_single_source<T: Clone>(
    datasets: &BTreeMap<String, Vec<T>>,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<Vec<SourceBatch<T>>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument(
            "batch size must be at least 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed(seed, epoch));
    let mut queues: Vec<(String, Vec<Vec<T>>)> = Vec::new();
    for (source, items) in datasets {
        if items.len() < batch_size {
            log::warn!(
                "source {source} has {} items, fewer than batch size {batch_size}; skipped",
                items.len()
            );
            continue;
        }
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.shuffle(&mut rng);
        let mut batches: Vec<Vec<T>> = order
            .chunks_exact(batch_size)
            .map(|c| c.iter().map(|&i| items[i].clone()).collect())
            .collect();
        // Drawn from the back below; reverse so batches come out in shuffle order.
        batches.reverse();
        queues.push((source.clone(), batches));
    }

    let total: usize = queues.iter().map(|(_, b)| b.len()).sum();
    let mut out = Vec::with_capacity(total);
    for remaining in (1..=total).rev() {
        let mut pick = rng.gen_range(0..remaining);
        let slot = queues
            .iter()
            .position(|(_, b)| {
                if pick < b.len() {
                    true
                } else {
                    pick -= b.len();
                    false
                }
            })
            .expect("pick is below the remaining count");
        let (source, batches) = &mut queues[slot];
        let items = batches.pop().expect("picked source has a batch");
        out.push(SourceBatch {
            source: source.clone(),
            items,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn sources(sizes: &[(&str, usize)]) -> BTreeMap<String, Vec<(String, usize)>> {
        sizes
            .iter()
            .map(|(s, n)| (s.to_string(), (0..*n).map(|i| (s.to_string(), i)).collect()))
            .collect()
    }

    #[test]
    fn counts_and_homogeneity() {
        let data = sources(&[("a", 100), ("b", 300)]);
        let batches = make_batches_single_source(&data, 50, 3, 0).unwrap();
        assert_eq!(batches.len(), 8);
        assert_eq!(batches.iter().filter(|b| b.source == "a").count(), 2);
        assert_eq!(batches.iter().filter(|b| b.source == "b").count(), 6);
        let mut seen = HashSet::new();
        for b in &batches {
            assert_eq!(b.items.len(), 50);
            assert!(b.items.iter().all(|(s, _)| *s == b.source));
            for it in &b.items {
                assert!(seen.insert(it.clone()));
            }
        }
        assert_eq!(seen.len(), 400);
    }

    #[test]
    fn small_source_is_skipped_and_epochs_differ() {
        let data = sources(&[("a", 10), ("tiny", 3)]);
        let e0 = make_batches_single_source(&data, 4, 1, 0).unwrap();
        assert_eq!(e0.len(), 2);
        assert!(e0.iter().all(|b| b.source == "a"));
        let e1 = make_batches_single_source(&data, 4, 1, 1).unwrap();
        assert_ne!(e0, e1);
        assert_eq!(e0, make_batches_single_source(&data, 4, 1, 0).unwrap());
    }

    #[test]
    fn zero_batch_size_rejected() {
        assert!(make_batches_single_source(&sources(&[("a", 3)]), 0, 0, 0).is_err());
    }
}
