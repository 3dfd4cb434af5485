//! Bidirectional transformer encoder with rotary attention and SwiGLU
//! feed-forward blocks, plus pooling and output normalization.

use std::fmt;
use std::str::FromStr;

use longembed_autodiff::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::prefix::TaskKind;
use crate::data::tokenizer::PAD_ID;
use crate::error::{Error, Result};
use crate::params::{BoundParams, Params};
use crate::rope::{effective_rope, rope_tables, RopeParams, RopePolicy, DEFAULT_ROPE_BASE};

const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;
/// Additive attention bias for padded keys; large enough that the softmax
/// weight underflows to exactly zero.
const MASK_BIAS: f64 = -1e9;

/// Smallest multiple of 64 that holds `raw` tokens.
pub fn pad_vocab(raw: usize) -> usize {
    raw.max(1).div_ceil(64) * 64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    Mean,
    Cls,
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pooling::Mean => "mean",
            Pooling::Cls => "cls",
        })
    }
}

impl FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Pooling::Mean),
            "cls" => Ok(Pooling::Cls),
            other => Err(Error::InvalidArgument(format!("unknown pooling {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    /// Padded vocabulary size.
    pub vocab_size: usize,
    pub trained_context: usize,
    #[serde(default = "default_rope_base")]
    pub rope_base: f64,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default)]
    pub pooling: Pooling,
    #[serde(default = "default_tied")]
    pub tie_mlm_head: bool,
}

fn default_rope_base() -> f64 {
    DEFAULT_ROPE_BASE
}

fn default_tied() -> bool {
    true
}

impl EncoderConfig {
    /// The CPU-friendly default shape: 4 layers, width 128, 4 heads, FFN 256,
    /// context 128.
    pub fn desk(raw_vocab: usize) -> Self {
        Self {
            num_layers: 4,
            hidden_dim: 128,
            num_heads: 4,
            ffn_dim: 256,
            vocab_size: pad_vocab(raw_vocab),
            trained_context: 128,
            rope_base: DEFAULT_ROPE_BASE,
            dropout: 0.0,
            pooling: Pooling::Mean,
            tie_mlm_head: true,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads.max(1)
    }

    pub fn rope(&self) -> RopeParams {
        RopeParams {
            base: self.rope_base,
            head_dim: self.head_dim(),
            trained_context: self.trained_context,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.num_layers == 0 || self.hidden_dim == 0 || self.num_heads == 0 || self.ffn_dim == 0
        {
            return bad(format!("encoder dimensions must be positive: {self:?}"));
        }
        if !self.hidden_dim.is_multiple_of(self.num_heads) {
            return bad(format!(
                "hidden {} is not divisible by {} heads",
                self.hidden_dim, self.num_heads
            ));
        }
        if self.vocab_size == 0 || !self.vocab_size.is_multiple_of(64) {
            return bad(format!(
                "vocab size {} is not a positive multiple of 64",
                self.vocab_size
            ));
        }
        if self.dropout != 0.0 {
            return bad(format!("dropout must be 0, got {}", self.dropout));
        }
        self.rope().validate()
    }

    /// Every weight name with its shape, in a stable order.
    pub fn weight_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (d, f, v) = (self.hidden_dim, self.ffn_dim, self.vocab_size);
        let mut out = vec![
            ("tok_emb".to_string(), vec![v, d]),
            ("emb_ln.gamma".into(), vec![d]),
            ("emb_ln.beta".into(), vec![d]),
        ];
        for l in 0..self.num_layers {
            let p = |s: &str| format!("layers.{l}.{s}");
            out.extend([
                (p("ln1.gamma"), vec![d]),
                (p("ln1.beta"), vec![d]),
                (p("attn.wq"), vec![d, d]),
                (p("attn.wk"), vec![d, d]),
                (p("attn.wv"), vec![d, d]),
                (p("attn.wo"), vec![d, d]),
                (p("ln2.gamma"), vec![d]),
                (p("ln2.beta"), vec![d]),
                (p("ffn.w_gate"), vec![d, f]),
                (p("ffn.w_up"), vec![d, f]),
                (p("ffn.w_down"), vec![f, d]),
            ]);
        }
        out.extend([
            ("final_ln.gamma".into(), vec![d]),
            ("final_ln.beta".into(), vec![d]),
            ("mlm.dense".into(), vec![d, d]),
            ("mlm.ln.gamma".into(), vec![d]),
            ("mlm.ln.beta".into(), vec![d]),
            ("mlm.bias".into(), vec![v]),
        ]);
        if !self.tie_mlm_head {
            out.push(("mlm.decoder".into(), vec![d, v]));
        }
        out
    }
}

/// Right-padded token ids with a prefix mask per row.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenBatch {
    ids: Vec<u32>,
    mask: Vec<u8>,
    batch: usize,
    seq: usize,
}

impl TokenBatch {
    /// Pads every row to the longest one.
    pub fn from_rows(rows: &[Vec<u32>]) -> Result<Self> {
        let seq = rows.iter().map(Vec::len).max().unwrap_or(0);
        Self::padded(rows, seq)
    }

    /// Pads every row to exactly `seq` tokens.
    pub fn padded(rows: &[Vec<u32>], seq: usize) -> Result<Self> {
        if rows.is_empty() || seq == 0 {
            return Err(Error::Empty("token batch"));
        }
        let mut ids = Vec::with_capacity(rows.len() * seq);
        let mut mask = Vec::with_capacity(ids.capacity());
        for (r, row) in rows.iter().enumerate() {
            if row.is_empty() {
                return Err(Error::EmptyRow(r));
            }
            if row.len() > seq {
                return Err(Error::SequenceTooLong {
                    len: row.len(),
                    limit: seq,
                });
            }
            ids.extend_from_slice(row);
            ids.extend(std::iter::repeat_n(PAD_ID, seq - row.len()));
            mask.extend(std::iter::repeat_n(1u8, row.len()));
            mask.extend(std::iter::repeat_n(0u8, seq - row.len()));
        }
        Ok(Self {
            ids,
            mask,
            batch: rows.len(),
            seq,
        })
    }

    /// Explicit ids and mask, `[batch, seq]` row-major. The mask must be a
    /// run of ones followed by zeros in every row.
    pub fn new(ids: Vec<u32>, mask: Vec<u8>, batch: usize, seq: usize) -> Result<Self> {
        if batch == 0 || seq == 0 || ids.len() != batch * seq || mask.len() != ids.len() {
            return Err(Error::InvalidArgument(format!(
                "{} ids / {} mask entries for batch {batch} x seq {seq}",
                ids.len(),
                mask.len()
            )));
        }
        for (r, row) in mask.chunks(seq).enumerate() {
            let real = row.iter().take_while(|&&m| m == 1).count();
            if row[real..].iter().any(|&m| m != 0) {
                return Err(Error::InvalidArgument(format!(
                    "mask row {r} is not right-padded"
                )));
            }
        }
        Ok(Self {
            ids,
            mask,
            batch,
            seq,
        })
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn seq(&self) -> usize {
        self.seq
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn mask(&self) -> &[u8] {
        &self.mask
    }

    pub fn row_len(&self, r: usize) -> usize {
        self.mask[r * self.seq..(r + 1) * self.seq]
            .iter()
            .filter(|&&m| m == 1)
            .count()
    }

    /// Number of real (unpadded) tokens.
    pub fn real_tokens(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1).count()
    }

    /// Rows `start..end` as their own batch, keeping the sequence length.
    pub fn rows(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.batch {
            return Err(Error::InvalidArgument(format!(
                "row range {start}..{end} of {}",
                self.batch
            )));
        }
        let span = start * self.seq..end * self.seq;
        Ok(Self {
            ids: self.ids[span.clone()].to_vec(),
            mask: self.mask[span].to_vec(),
            batch: end - start,
            seq: self.seq,
        })
    }

    /// Drops trailing columns that are padding in every row.
    pub fn trimmed(&self) -> Self {
        let seq = (0..self.batch)
            .map(|r| self.row_len(r))
            .max()
            .unwrap_or(1)
            .max(1);
        if seq == self.seq {
            return self.clone();
        }
        let mut ids = Vec::with_capacity(self.batch * seq);
        let mut mask = Vec::with_capacity(ids.capacity());
        for r in 0..self.batch {
            ids.extend_from_slice(&self.ids[r * self.seq..r * self.seq + seq]);
            mask.extend_from_slice(&self.mask[r * self.seq..r * self.seq + seq]);
        }
        Self {
            ids,
            mask,
            batch: self.batch,
            seq,
        }
    }
}

/// Config plus weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub weights: Params,
}

impl Encoder {
    /// Fresh weights: matrices uniform with standard deviation 0.02, layer
    /// norms at identity, biases zero.
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let half_width = INIT_STD * 3f64.sqrt();
        let mut weights = Params::new();
        for (name, shape) in config.weight_shapes() {
            let t = if name.ends_with(".gamma") {
                Tensor::full(&shape, 1.0)
            } else if name.ends_with(".beta") || name == "mlm.bias" {
                Tensor::zeros(&shape)
            } else {
                Tensor::from_fn(&shape, |_| rng.gen_range(-half_width..half_width))
            };
            weights.insert(name, t);
        }
        Ok(Self { config, weights })
    }

    /// Wraps existing weights after checking names and shapes.
    pub fn from_weights(config: EncoderConfig, weights: Params) -> Result<Self> {
        config.validate()?;
        let expected = config.weight_shapes();
        for (name, shape) in &expected {
            let t = weights.get(name).ok_or_else(|| Error::WeightShape {
                name: name.clone(),
                detail: "missing".into(),
            })?;
            if t.shape() != shape.as_slice() {
                return Err(Error::WeightShape {
                    name: name.clone(),
                    detail: format!("expected {shape:?}, found {:?}", t.shape()),
                });
            }
        }
        if weights.len() != expected.len() {
            let extra = weights
                .names()
                .find(|n| !expected.iter().any(|(e, _)| e == *n))
                .cloned();
            return Err(Error::WeightShape {
                name: extra.unwrap_or_default(),
                detail: "unexpected weight".into(),
            });
        }
        Ok(Self { config, weights })
    }

    fn check_batch(&self, batch: &TokenBatch, policy: &RopePolicy) -> Result<()> {
        let limit = policy.max_len(&self.config.rope());
        if batch.seq() > limit {
            return Err(Error::SequenceTooLong {
                len: batch.seq(),
                limit,
            });
        }
        if let Some(bad) = batch
            .ids()
            .iter()
            .find(|&&t| t as usize >= self.config.vocab_size)
        {
            return Err(Error::InvalidArgument(format!(
                "token id {bad} outside vocabulary {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    /// Hidden states `[batch, seq, hidden]` recorded on `g`.
    pub fn forward(
        &self,
        g: &mut Graph,
        w: &BoundParams,
        batch: &TokenBatch,
        policy: &RopePolicy,
    ) -> Result<Var> {
        self.check_batch(batch, policy)?;
        let cfg = &self.config;
        let (b, s, d) = (batch.batch(), batch.seq(), cfg.hidden_dim);
        let (heads, hd) = (cfg.num_heads, cfg.head_dim());

        let rope = effective_rope(&cfg.rope(), policy, s)?;
        let (cos, sin) = rope_tables(&rope.positions.positions(s), rope.base, hd);

        let bias = Tensor::new(
            vec![b, 1, 1, s],
            batch
                .mask()
                .iter()
                .map(|&m| if m == 1 { 0.0 } else { MASK_BIAS })
                .collect(),
        )?;
        let bias = g.constant(bias)?;

        let ids: Vec<usize> = batch.ids().iter().map(|&t| t as usize).collect();
        let x = g.embedding(w.var("tok_emb")?, &ids)?;
        let x = g.reshape(x, &[b, s, d])?;
        let mut h = layer_norm(g, w, "emb_ln", x)?;

        let scale = 1.0 / (hd as f64).sqrt();
        for l in 0..cfg.num_layers {
            let p = |n: &str| format!("layers.{l}.{n}");
            // Attention block.
            let a = layer_norm(g, w, &p("ln1"), h)?;
            let split = |g: &mut Graph, name: &str| -> Result<Var> {
                let t = g.matmul(a, w.var(name)?)?;
                let t = g.reshape(t, &[b, s, heads, hd])?;
                Ok(g.permute(t, &[0, 2, 1, 3])?)
            };
            let q = split(g, &p("attn.wq"))?;
            let k = split(g, &p("attn.wk"))?;
            let v = split(g, &p("attn.wv"))?;
            let q = g.rotate_pairs(q, &cos, &sin)?;
            let k = g.rotate_pairs(k, &cos, &sin)?;
            let kt = g.permute(k, &[0, 1, 3, 2])?;
            let scores = g.matmul(q, kt)?;
            let scores = g.scale(scores, scale)?;
            let scores = g.add(scores, bias)?;
            let attn = g.softmax(scores)?;
            let ctx = g.matmul(attn, v)?;
            let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
            let ctx = g.reshape(ctx, &[b, s, d])?;
            let out = g.matmul(ctx, w.var(&p("attn.wo"))?)?;
            h = g.add(h, out)?;

            // SwiGLU feed-forward block.
            let f = layer_norm(g, w, &p("ln2"), h)?;
            let gate = g.matmul(f, w.var(&p("ffn.w_gate"))?)?;
            let gate = g.silu(gate)?;
            let up = g.matmul(f, w.var(&p("ffn.w_up"))?)?;
            let prod = g.mul(gate, up)?;
            let down = g.matmul(prod, w.var(&p("ffn.w_down"))?)?;
            h = g.add(h, down)?;
        }
        layer_norm(g, w, "final_ln", h)
    }

    /// Pooled `[batch, hidden]` embeddings (before any normalization).
    pub fn pooled(
        &self,
        g: &mut Graph,
        w: &BoundParams,
        batch: &TokenBatch,
        policy: &RopePolicy,
    ) -> Result<Var> {
        let hidden = self.forward(g, w, batch, policy)?;
        match self.config.pooling {
            Pooling::Mean => mean_pool(g, hidden, batch),
            Pooling::Cls => {
                let first = g.slice(hidden, 1, 0, 1)?;
                Ok(g.reshape(first, &[batch.batch(), self.config.hidden_dim])?)
            }
        }
    }

    /// Inference-only hidden states.
    pub fn encode(&self, batch: &TokenBatch, policy: &RopePolicy) -> Result<Tensor> {
        let mut g = Graph::new();
        let w = self.weights.bind(&mut g, false)?;
        let h = self.forward(&mut g, &w, batch, policy)?;
        Ok(g.value(h).clone())
    }

    /// Inference-only pooled embeddings, normalized according to `task`.
    pub fn embed(&self, batch: &TokenBatch, task: TaskKind, policy: &RopePolicy) -> Result<Tensor> {
        let mut g = Graph::new();
        let w = self.weights.bind(&mut g, false)?;
        let v = self.pooled(&mut g, &w, batch, policy)?;
        finalize_embedding(g.value(v), task)
    }

    /// Vocabulary logits `[positions.len(), vocab]` at the given flat
    /// `batch * seq + pos` indices of `hidden`.
    pub fn mlm_logits(
        &self,
        g: &mut Graph,
        w: &BoundParams,
        hidden: Var,
        positions: &[usize],
    ) -> Result<Var> {
        let shape = g.value(hidden).shape().to_vec();
        let d = self.config.hidden_dim;
        let rows = shape.iter().product::<usize>() / d;
        let flat = g.reshape(hidden, &[rows, d])?;
        let picked = g.embedding(flat, positions)?;
        let t = g.matmul(picked, w.var("mlm.dense")?)?;
        let t = g.silu(t)?;
        let t = layer_norm(g, w, "mlm.ln", t)?;
        let decoder = if self.config.tie_mlm_head {
            g.transpose(w.var("tok_emb")?)?
        } else {
            w.var("mlm.decoder")?
        };
        let logits = g.matmul(t, decoder)?;
        Ok(g.add(logits, w.var("mlm.bias")?)?)
    }
}

fn layer_norm(g: &mut Graph, w: &BoundParams, prefix: &str, x: Var) -> Result<Var> {
    let gamma = w.var(&format!("{prefix}.gamma"))?;
    let beta = w.var(&format!("{prefix}.beta"))?;
    Ok(g.layer_norm(x, gamma, beta, LN_EPS)?)
}

/// Mean of the hidden states at unmasked positions, `[batch, hidden]`.
pub fn mean_pool(g: &mut Graph, hidden: Var, batch: &TokenBatch) -> Result<Var> {
    let (b, s) = (batch.batch(), batch.seq());
    let shape = g.value(hidden).shape().to_vec();
    if shape.len() != 3 || shape[0] != b || shape[1] != s {
        return Err(Error::InvalidArgument(format!(
            "hidden {shape:?} does not match batch {b} x {s}"
        )));
    }
    let mut weights = Vec::with_capacity(b * s);
    for (r, row) in batch.mask().chunks(s).enumerate() {
        let count = row.iter().filter(|&&m| m == 1).count();
        if count == 0 {
            return Err(Error::EmptyRow(r));
        }
        weights.extend(
            row.iter()
                .map(|&m| if m == 1 { 1.0 / count as f64 } else { 0.0 }),
        );
    }
    let pool = g.constant(Tensor::new(vec![b, 1, s], weights)?)?;
    let pooled = g.matmul(pool, hidden)?;
    Ok(g.reshape(pooled, &[b, shape[2]])?)
}

/// Classification embeddings stay raw; every other task gets unit rows.
pub fn finalize_embedding(v: &Tensor, task: TaskKind) -> Result<Tensor> {
    if !v.is_finite() {
        return Err(Error::InvalidArgument(
            "embedding contains non-finite values".into(),
        ));
    }
    if !task.normalizes() {
        return Ok(v.clone());
    }
    let d = *v.shape().last().unwrap_or(&1);
    let mut out = v.clone();
    for (r, row) in out.data_mut().chunks_mut(d).enumerate() {
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroNormEmbedding(r));
        }
        row.iter_mut().for_each(|x| *x /= norm);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> EncoderConfig {
        EncoderConfig {
            num_layers: 2,
            hidden_dim: 16,
            num_heads: 2,
            ffn_dim: 24,
            vocab_size: 64,
            trained_context: 16,
            rope_base: DEFAULT_ROPE_BASE,
            dropout: 0.0,
            pooling: Pooling::Mean,
            tie_mlm_head: true,
        }
    }

    #[test]
    fn vocab_padding() {
        assert_eq!(pad_vocab(64), 64);
        assert_eq!(pad_vocab(30522), 30528);
        assert_eq!(pad_vocab(1), 64);
        assert_eq!(pad_vocab(65), 128);
    }

    #[test]
    fn config_validation() {
        assert!(tiny().validate().is_ok());
        let mut c = tiny();
        c.vocab_size = 100;
        assert!(c.validate().is_err());
        let mut c = tiny();
        c.dropout = 0.1;
        assert!(c.validate().is_err());
        let mut c = tiny();
        c.num_heads = 3;
        assert!(c.validate().is_err());
    }

    #[test]
    fn output_shape_and_identical_rows() {
        let enc = Encoder::new(tiny(), 1).unwrap();
        let rows = vec![vec![2, 10, 11, 3], vec![2, 10, 11, 3], vec![2, 12, 3]];
        let batch = TokenBatch::from_rows(&rows).unwrap();
        let h = enc.encode(&batch, &RopePolicy::none()).unwrap();
        assert_eq!(h.shape(), &[3, 4, 16]);
        let per = 4 * 16;
        assert_eq!(&h.data()[..per], &h.data()[per..2 * per]);
    }

    #[test]
    fn too_long_and_bad_weights() {
        let enc = Encoder::new(tiny(), 1).unwrap();
        let batch = TokenBatch::from_rows(&[vec![5; 17]]).unwrap();
        assert!(matches!(
            enc.encode(&batch, &RopePolicy::none()),
            Err(Error::SequenceTooLong { len: 17, limit: 16 })
        ));
        assert!(enc
            .encode(&batch, &RopePolicy::dynamic_ntk(2.0, 64))
            .is_ok());

        let mut w = enc.weights.clone();
        w.insert("layers.0.attn.wq", Tensor::zeros(&[16, 8]));
        let err = Encoder::from_weights(tiny(), w).unwrap_err();
        assert!(matches!(err, Error::WeightShape { ref name, .. } if name == "layers.0.attn.wq"));
    }

    #[test]
    fn pooling_examples() {
        let mut g = Graph::new();
        let batch = TokenBatch::from_rows(&[vec![5, 6, 7]]).unwrap();
        let h = g
            .constant(Tensor::new(vec![1, 3, 2], vec![1.5, -2.0, 1.5, -2.0, 1.5, -2.0]).unwrap())
            .unwrap();
        let p = mean_pool(&mut g, h, &batch).unwrap();
        assert_eq!(g.value(p).data(), &[1.5, -2.0]);

        let batch = TokenBatch::from_rows(&[vec![5, 6], vec![5]]).unwrap();
        let h = g
            .constant(Tensor::new(vec![2, 2, 1], vec![1.0, 3.0, 4.0, 100.0]).unwrap())
            .unwrap();
        let p = mean_pool(&mut g, h, &batch).unwrap();
        assert_eq!(g.value(p).data(), &[2.0, 4.0]);

        let empty = TokenBatch::new(vec![5, 0], vec![1, 0], 2, 1).unwrap();
        let h = g.constant(Tensor::zeros(&[2, 1, 1])).unwrap();
        assert!(matches!(
            mean_pool(&mut g, h, &empty),
            Err(Error::EmptyRow(1))
        ));
    }

    #[test]
    fn finalize_rules() {
        let v = Tensor::new(vec![1, 2], vec![3.0, 4.0]).unwrap();
        assert_eq!(finalize_embedding(&v, TaskKind::Classification).unwrap(), v);
        let n = finalize_embedding(&v, TaskKind::SearchQuery).unwrap();
        assert!((n.data()[0] - 0.6).abs() < 1e-15 && (n.data()[1] - 0.8).abs() < 1e-15);
        let again = finalize_embedding(&n, TaskKind::SearchDocument).unwrap();
        assert!(again.max_abs_diff(&n).unwrap() <= 1e-12);
        let z = Tensor::zeros(&[1, 2]);
        assert!(matches!(
            finalize_embedding(&z, TaskKind::Clustering),
            Err(Error::ZeroNormEmbedding(0))
        ));
    }

    #[test]
    fn mask_must_be_prefix() {
        assert!(TokenBatch::new(vec![1, 2], vec![0, 1], 1, 2).is_err());
        assert!(TokenBatch::new(vec![1, 2], vec![1, 0], 1, 2).is_ok());
    }
}
