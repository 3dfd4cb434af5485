//! Training losses: masked language modeling, InfoNCE with optional hard
//! negatives, and exact large-batch contrastive gradients via GradCache.

use longembed_autodiff::{Graph, Tensor, TensorError, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::tokenizer::MaskingVocab;
use crate::encoder::{Encoder, TokenBatch};
use crate::error::{Error, Result};
use crate::params::{BoundParams, Params};
use crate::rope::RopePolicy;

pub const DEFAULT_MASK_RATE: f64 = 0.30;
pub const DEFAULT_TEMPERATURE: f64 = 0.05;

/// A corrupted batch and the original ids at the selected positions.
#[derive(Debug, Clone, PartialEq)]
pub struct MlmBatch {
    pub inputs: TokenBatch,
    /// One entry per `[batch, seq]` cell; `Some(original)` where selected.
    pub labels: Vec<Option<u32>>,
    pub mask_rate: f64,
}

impl MlmBatch {
    pub fn selected(&self) -> usize {
        self.labels.iter().flatten().count()
    }
}

/// Selects every maskable real token with probability `rate`, then corrupts
/// the selection 80% to `[MASK]`, 10% to a random regular token and leaves
/// 10% unchanged.
pub fn mlm_mask(
    tokens: &TokenBatch,
    vocab: &MaskingVocab,
    rate: f64,
    seed: u64,
) -> Result<MlmBatch> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "mask rate {rate} outside (0, 1)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids = tokens.ids().to_vec();
    let mut labels = vec![None; ids.len()];
    for (i, (id, &m)) in ids.iter_mut().zip(tokens.mask()).enumerate() {
        if m == 0 || !vocab.is_maskable(*id) || !rng.gen_bool(rate) {
            continue;
        }
        labels[i] = Some(*id);
        let roll: f64 = rng.gen();
        if roll < 0.8 {
            *id = vocab.mask_id;
        } else if roll < 0.9 {
            *id = rng.gen_range(vocab.first_regular..vocab.raw_vocab);
        }
    }
    if labels.iter().all(Option::is_none) {
        return Err(Error::EmptyMaskSelection);
    }
    let inputs = TokenBatch::new(ids, tokens.mask().to_vec(), tokens.batch(), tokens.seq())?;
    Ok(MlmBatch {
        inputs,
        labels,
        mask_rate: rate,
    })
}

/// Mean cross-entropy of `logits: [.., vocab]` over labeled positions.
pub fn mlm_loss(g: &mut Graph, logits: Var, labels: &[Option<u32>]) -> Result<Var> {
    if labels.iter().all(Option::is_none) {
        return Err(Error::NoLabels);
    }
    let shape = g.value(logits).shape().to_vec();
    let vocab = *shape.last().unwrap_or(&0);
    let rows = shape.iter().product::<usize>() / vocab.max(1);
    let flat = g.reshape(logits, &[rows, vocab])?;
    let targets: Vec<Option<usize>> = labels.iter().map(|l| l.map(|t| t as usize)).collect();
    Ok(g.cross_entropy(flat, &targets)?)
}

/// Full MLM loss of `encoder` on a masked batch. Vocabulary logits are only
/// formed at the labeled positions.
pub fn mlm_objective(
    encoder: &Encoder,
    g: &mut Graph,
    w: &BoundParams,
    batch: &MlmBatch,
    policy: &RopePolicy,
) -> Result<Var> {
    let positions: Vec<usize> = batch
        .labels
        .iter()
        .enumerate()
        .filter(|(_, l)| l.is_some())
        .map(|(i, _)| i)
        .collect();
    if positions.is_empty() {
        return Err(Error::NoLabels);
    }
    let labels: Vec<Option<u32>> = positions.iter().map(|&i| batch.labels[i]).collect();
    let hidden = encoder.forward(g, w, &batch.inputs, policy)?;
    let logits = encoder.mlm_logits(g, w, hidden, &positions)?;
    mlm_loss(g, logits, &labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContrastiveConfig {
    pub temperature: f64,
    /// Adds the document-to-query in-batch term and averages the two.
    #[serde(default)]
    pub bidirectional: bool,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            bidirectional: false,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "temperature {} must be positive",
                self.temperature
            )));
        }
        Ok(())
    }
}

fn normalize(g: &mut Graph, x: Var) -> Result<Var> {
    g.l2_normalize(x).map_err(|e| match e {
        TensorError::ZeroNorm { row, .. } => Error::ZeroNormEmbedding(row),
        other => other.into(),
    })
}

/// In-batch InfoNCE over cosine similarities, query to document.
pub fn info_nce(
    g: &mut Graph,
    queries: Var,
    documents: Var,
    cfg: &ContrastiveConfig,
) -> Result<Var> {
    info_nce_hard(g, queries, documents, None, cfg)
}

/// InfoNCE where query `i` also competes against its own hard negatives,
/// `hard: [n, H, d]`. `None` is the plain in-batch loss.
pub fn info_nce_hard(
    g: &mut Graph,
    queries: Var,
    documents: Var,
    hard: Option<Var>,
    cfg: &ContrastiveConfig,
) -> Result<Var> {
    cfg.validate()?;
    let qs = g.value(queries).shape().to_vec();
    let ds = g.value(documents).shape().to_vec();
    if qs.len() != 2 || qs != ds {
        return Err(Error::InvalidArgument(format!(
            "query {qs:?} and document {ds:?} embeddings must match"
        )));
    }
    let (n, d) = (qs[0], qs[1]);
    let inv_t = 1.0 / cfg.temperature;

    let q = normalize(g, queries)?;
    let k = normalize(g, documents)?;
    let kt = g.transpose(k)?;
    let sims = g.matmul(q, kt)?;
    let sims = g.scale(sims, inv_t)?;

    let logits = match hard {
        None => sims,
        Some(h) => {
            let hs = g.value(h).shape().to_vec();
            if hs.len() != 3 || hs[0] != n || hs[2] != d {
                return Err(Error::InvalidArgument(format!(
                    "hard negatives {hs:?} for {n} pairs of width {d}"
                )));
            }
            let hn = normalize(g, h)?;
            let hn_t = g.permute(hn, &[0, 2, 1])?;
            let q3 = g.reshape(q, &[n, 1, d])?;
            let hsim = g.matmul(q3, hn_t)?;
            let hsim = g.reshape(hsim, &[n, hs[1]])?;
            let hsim = g.scale(hsim, inv_t)?;
            g.concat(&[sims, hsim], 1)?
        }
    };
    let targets: Vec<Option<usize>> = (0..n).map(Some).collect();
    let forward = g.cross_entropy(logits, &targets)?;
    if !cfg.bidirectional {
        return Ok(forward);
    }
    let st = g.transpose(sims)?;
    let backward = g.cross_entropy(st, &targets)?;
    let both = g.add(forward, backward)?;
    Ok(g.scale(both, 0.5)?)
}

/// Tokenized contrastive examples: `n` queries, `n` positives and, when
/// present, `hard_per_pair` negatives per pair stored pair-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveInputs {
    pub queries: TokenBatch,
    pub documents: TokenBatch,
    pub negatives: Option<TokenBatch>,
    pub hard_per_pair: usize,
}

impl ContrastiveInputs {
    pub fn new(
        queries: TokenBatch,
        documents: TokenBatch,
        negatives: Option<(TokenBatch, usize)>,
    ) -> Result<Self> {
        let n = queries.batch();
        if documents.batch() != n {
            return Err(Error::InvalidArgument(format!(
                "{n} queries but {} documents",
                documents.batch()
            )));
        }
        let (negatives, hard_per_pair) = match negatives {
            Some((t, h)) if h > 0 => {
                if t.batch() != n * h {
                    return Err(Error::InvalidArgument(format!(
                        "{} negatives for {n} pairs with {h} each",
                        t.batch()
                    )));
                }
                (Some(t), h)
            }
            _ => (None, 0),
        };
        Ok(Self {
            queries,
            documents,
            negatives,
            hard_per_pair,
        })
    }

    pub fn len(&self) -> usize {
        self.queries.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn real_tokens(&self) -> usize {
        self.queries.real_tokens()
            + self.documents.real_tokens()
            + self.negatives.as_ref().map_or(0, TokenBatch::real_tokens)
    }

    fn chunk(&self, start: usize, end: usize) -> Result<Self> {
        let h = self.hard_per_pair;
        Ok(Self {
            queries: self.queries.rows(start, end)?,
            documents: self.documents.rows(start, end)?,
            negatives: match &self.negatives {
                Some(t) => Some(t.rows(start * h, end * h)?),
                None => None,
            },
            hard_per_pair: h,
        })
    }
}

struct Embedded {
    queries: Var,
    documents: Var,
    negatives: Option<Var>,
}

fn embed_inputs(
    encoder: &Encoder,
    g: &mut Graph,
    w: &BoundParams,
    inputs: &ContrastiveInputs,
    policy: &RopePolicy,
) -> Result<Embedded> {
    Ok(Embedded {
        queries: encoder.pooled(g, w, &inputs.queries, policy)?,
        documents: encoder.pooled(g, w, &inputs.documents, policy)?,
        negatives: match &inputs.negatives {
            Some(t) => Some(encoder.pooled(g, w, t, policy)?),
            None => None,
        },
    })
}

fn loss_on(
    g: &mut Graph,
    e: &Embedded,
    n: usize,
    h: usize,
    cfg: &ContrastiveConfig,
) -> Result<Var> {
    let hard = match e.negatives {
        Some(v) => {
            let d = g.value(v).shape()[1];
            Some(g.reshape(v, &[n, h, d])?)
        }
        None => None,
    };
    info_nce_hard(g, e.queries, e.documents, hard, cfg)
}

/// Loss value and parameter gradients from one forward/backward over the
/// whole batch.
pub fn contrastive_grads(
    encoder: &Encoder,
    inputs: &ContrastiveInputs,
    cfg: &ContrastiveConfig,
    policy: &RopePolicy,
) -> Result<(f64, Params)> {
    let mut g = Graph::new();
    let w = encoder.weights.bind(&mut g, true)?;
    let e = embed_inputs(encoder, &mut g, &w, inputs, policy)?;
    let loss = loss_on(&mut g, &e, inputs.len(), inputs.hard_per_pair, cfg)?;
    g.backward(loss)?;
    Ok((g.value(loss).item()?, w.grads(&g)?))
}

/// Same result as [`contrastive_grads`] while only ever holding the
/// activations of `chunk` pairs.
///
/// 1. Embed every chunk without recording gradients.
/// 2. Evaluate the loss on those embeddings and take its gradient with
///    respect to each embedding row.
/// 3. Re-encode each chunk and backpropagate `sum(embedding * cached_grad)`,
///    accumulating parameter gradients.
pub fn gradcache_grads(
    encoder: &Encoder,
    inputs: &ContrastiveInputs,
    chunk: usize,
    cfg: &ContrastiveConfig,
    policy: &RopePolicy,
) -> Result<(f64, Params)> {
    let n = inputs.len();
    if chunk == 0 || chunk > n || !n.is_multiple_of(chunk) {
        return Err(Error::ChunkTiling { n, chunk });
    }
    let h = inputs.hard_per_pair;
    let chunks: Vec<ContrastiveInputs> = (0..n / chunk)
        .map(|c| inputs.chunk(c * chunk, (c + 1) * chunk))
        .collect::<Result<_>>()?;

    // Pass 1: embeddings only.
    let mut q_rows = Vec::new();
    let mut d_rows = Vec::new();
    let mut n_rows = Vec::new();
    for part in &chunks {
        let mut g = Graph::new();
        let w = encoder.weights.bind(&mut g, false)?;
        let e = embed_inputs(encoder, &mut g, &w, part, policy)?;
        q_rows.extend_from_slice(g.value(e.queries).data());
        d_rows.extend_from_slice(g.value(e.documents).data());
        if let Some(v) = e.negatives {
            n_rows.extend_from_slice(g.value(v).data());
        }
    }
    let dim = encoder.config.hidden_dim;

    // Pass 2: loss and its gradient with respect to the cached embeddings.
    let mut g = Graph::new();
    let cached = Embedded {
        queries: g.variable(Tensor::new(vec![n, dim], q_rows)?)?,
        documents: g.variable(Tensor::new(vec![n, dim], d_rows)?)?,
        negatives: if h > 0 {
            Some(g.variable(Tensor::new(vec![n * h, dim], n_rows)?)?)
        } else {
            None
        },
    };
    let loss = loss_on(&mut g, &cached, n, h, cfg)?;
    g.backward(loss)?;
    let loss_value = g.value(loss).item()?;
    let gq = g.grad_or_zeros(cached.queries)?;
    let gd = g.grad_or_zeros(cached.documents)?;
    let gn = match cached.negatives {
        Some(v) => Some(g.grad_or_zeros(v)?),
        None => None,
    };

    // Pass 3: re-encode with gradient injection.
    let mut total = encoder.weights.zeros_like();
    for (c, part) in chunks.iter().enumerate() {
        let mut g = Graph::new();
        let w = encoder.weights.bind(&mut g, true)?;
        let e = embed_inputs(encoder, &mut g, &w, part, policy)?;
        let mut terms = vec![
            inject(&mut g, e.queries, &gq, c * chunk * dim, chunk, dim)?,
            inject(&mut g, e.documents, &gd, c * chunk * dim, chunk, dim)?,
        ];
        if let (Some(v), Some(gn)) = (e.negatives, &gn) {
            terms.push(inject(&mut g, v, gn, c * chunk * h * dim, chunk * h, dim)?);
        }
        let mut surrogate = terms[0];
        for &t in &terms[1..] {
            surrogate = g.add(surrogate, t)?;
        }
        g.backward(surrogate)?;
        total.accumulate(&w.grads(&g)?)?;
    }
    Ok((loss_value, total))
}

/// `sum(emb * upstream[offset..offset + rows * dim])`.
fn inject(
    g: &mut Graph,
    emb: Var,
    upstream: &Tensor,
    offset: usize,
    rows: usize,
    dim: usize,
) -> Result<Var> {
    let slab = Tensor::new(
        vec![rows, dim],
        upstream.data()[offset..offset + rows * dim].to_vec(),
    )?;
    let slab = g.constant(slab)?;
    let p = g.mul(emb, slab)?;
    Ok(g.sum(p)?)
}
