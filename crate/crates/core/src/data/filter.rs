//! Consistency filtering: drop pairs whose document an embedding model does
//! not place near the query.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::embed::{cosine_with_sq_norms, sq_norm, TextEmbedder};
use crate::data::pairs::TextPair;
use crate::error::{Error, Result};

/// Per-pair keep decisions plus the surviving pairs in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub kept: Vec<TextPair>,
    pub decisions: Vec<bool>,
}

impl FilterOutcome {
    fn from_decisions(pairs: &[TextPair], decisions: Vec<bool>) -> Self {
        let kept = pairs
            .iter()
            .zip(&decisions)
            .filter(|(_, &k)| k)
            .map(|(p, _)| p.clone())
            .collect();
        Self { kept, decisions }
    }
}

type Rows = Vec<Vec<f64>>;

fn embed_sides(pairs: &[TextPair], embedder: &dyn TextEmbedder) -> Result<(Rows, Rows)> {
    let queries: Vec<String> = pairs.iter().map(|p| p.query.clone()).collect();
    let documents: Vec<String> = pairs.iter().map(|p| p.document.clone()).collect();
    let q = embedder.embed(&queries)?;
    let d = embedder.embed(&documents)?;
    if q.len() != pairs.len() || d.len() != pairs.len() {
        return Err(Error::InvalidArgument(format!(
            "embedder returned {} / {} vectors for {} pairs",
            q.len(),
            d.len(),
            pairs.len()
        )));
    }
    Ok((q, d))
}

/// Top-k consistency filter.
///
/// Pairs are shuffled (seeded) into neighbor pools of `sample_size`; within a
/// pool, each query ranks every pool document by cosine similarity and its
/// pair survives iff its own document is among the `k` best. Ties rank the
/// lower pair index first.
pub fn consistency_filter_topk(
    pairs: &[TextPair],
    embedder: &dyn TextEmbedder,
    k: usize,
    sample_size: usize,
    seed: u64,
) -> Result<FilterOutcome> {
    if pairs.is_empty() {
        return Err(Error::Empty("pair list"));
    }
    if k == 0 || sample_size == 0 {
        return Err(Error::InvalidArgument(format!(
            "k {k} and sample size {sample_size} must be positive"
        )));
    }
    if sample_size > pairs.len() {
        return Err(Error::InvalidArgument(format!(
            "sample size {sample_size} exceeds {} pairs",
            pairs.len()
        )));
    }
    let (q, d) = embed_sides(pairs, embedder)?;
    let dn: Vec<f64> = d.iter().map(|v| sq_norm(v)).collect();

    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut decisions = vec![false; pairs.len()];
    for pool in order.chunks(sample_size) {
        let mut pool = pool.to_vec();
        pool.sort_unstable();
        for &i in &pool {
            let qn = sq_norm(&q[i]);
            let own = cosine_with_sq_norms(&q[i], qn, &d[i], dn[i]);
            let mut rank = 0;
            for &j in &pool {
                if j == i {
                    continue;
                }
                let s = cosine_with_sq_norms(&q[i], qn, &d[j], dn[j]);
                if s > own || (s == own && j < i) {
                    rank += 1;
                    if rank >= k {
                        break;
                    }
                }
            }
            decisions[i] = rank < k;
        }
    }
    Ok(FilterOutcome::from_decisions(pairs, decisions))
}

/// Keeps a pair iff `cos(query, document) >= threshold`.
pub fn consistency_filter_threshold(
    pairs: &[TextPair],
    embedder: &dyn TextEmbedder,
    threshold: f64,
) -> Result<FilterOutcome> {
    if !(-1.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidArgument(format!(
            "threshold {threshold} outside [-1, 1]"
        )));
    }
    if pairs.is_empty() {
        return Ok(FilterOutcome {
            kept: Vec::new(),
            decisions: Vec::new(),
        });
    }
    let (q, d) = embed_sides(pairs, embedder)?;
    let decisions = q
        .iter()
        .zip(&d)
        .map(|(a, b)| cosine_with_sq_norms(a, sq_norm(a), b, sq_norm(b)) >= threshold)
        .collect();
    Ok(FilterOutcome::from_decisions(pairs, decisions))
}
