//! Hard-negative mining and negative sub-sampling.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::embed::{cosine_with_sq_norms, sq_norm, TextEmbedder};
use crate::data::pairs::TextPair;
use crate::error::{Error, Result};

/// For each pair, the `top` corpus documents most similar to its query,
/// excluding the positive, in descending similarity (ties: lower corpus
/// index first). Duplicate texts are listed once.
pub fn mine_hard_negatives(
    pairs: &[TextPair],
    corpus: &[String],
    embedder: &dyn TextEmbedder,
    top: usize,
) -> Result<Vec<TextPair>> {
    if corpus.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    if top == 0 {
        return Err(Error::InvalidArgument("top must be at least 1".into()));
    }
    for (i, p) in pairs.iter().enumerate() {
        if !corpus.contains(&p.document) {
            return Err(Error::PositiveNotInCorpus(i));
        }
    }
    if pairs.is_empty() {
        return Ok(Vec::new());
    }
    let docs = embedder.embed(corpus)?;
    let queries: Vec<String> = pairs.iter().map(|p| p.query.clone()).collect();
    let q = embedder.embed(&queries)?;
    let dn: Vec<f64> = docs.iter().map(|v| sq_norm(v)).collect();

    let mut out = Vec::with_capacity(pairs.len());
    for (p, qv) in pairs.iter().zip(&q) {
        let qn = sq_norm(qv);
        let mut scored: Vec<(f64, usize)> = docs
            .iter()
            .enumerate()
            .map(|(j, dv)| (cosine_with_sq_norms(qv, qn, dv, dn[j]), j))
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut negatives: Vec<String> = Vec::with_capacity(top);
        for (_, j) in scored {
            if negatives.len() == top {
                break;
            }
            let text = &corpus[j];
            if text != &p.document && !negatives.contains(text) {
                negatives.push(text.clone());
            }
        }
        let mut mined = p.clone();
        mined.hard_negatives = Some(negatives);
        out.push(mined);
    }
    Ok(out)
}

/// Uniform sample without replacement of `min(h, mined.len())` items.
pub fn sample_negatives<T: Clone>(mined: &[T], h: usize, seed: u64) -> Vec<T> {
    let amount = h.min(mined.len());
    if amount == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    index::sample(&mut rng, mined.len(), amount)
        .into_iter()
        .map(|i| mined[i].clone())
        .collect()
}

/// Random in-corpus negatives for sources where mining does not help: a
/// sample of `h` corpus texts other than the positive.
pub fn random_negatives(positive: &str, corpus: &[String], h: usize, seed: u64) -> Vec<String> {
    let pool: Vec<&String> = corpus.iter().filter(|t| t.as_str() != positive).collect();
    sample_negatives(&pool, h, seed)
        .into_iter()
        .cloned()
        .collect()
}
