//! Retrieval evaluation and the context-extrapolation sweep.

use std::collections::BTreeMap;
use std::path::Path;

use longembed_autodiff::Tensor;
use serde::{Deserialize, Serialize};

use crate::data::embed::{dot, TextEmbedder};
use crate::data::pairs::read_jsonl;
use crate::data::prefix::{apply_prefix, PairTask, TaskKind};
use crate::data::tokenizer::Tokenizer;
use crate::encoder::{Encoder, TokenBatch};
use crate::error::{Error, Result};
use crate::rope::{effective_rope, RopeKind, RopePolicy, DEFAULT_DYNAMIC_ALPHA};

/// Texts per forward pass when embedding.
pub const EMBED_BATCH: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdText {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Qrel {
    pub query_id: String,
    pub doc_id: String,
    #[serde(default = "one")]
    pub relevance: u32,
}

fn one() -> u32 {
    1
}

/// Queries, a corpus and graded judgments.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RetrievalTask {
    pub queries: Vec<IdText>,
    pub corpus: Vec<IdText>,
    /// query id -> doc id -> grade
    pub qrels: BTreeMap<String, BTreeMap<String, u32>>,
}

impl RetrievalTask {
    pub fn new(queries: Vec<IdText>, corpus: Vec<IdText>, qrels: &[Qrel]) -> Result<Self> {
        let mut map: BTreeMap<String, BTreeMap<String, u32>> = BTreeMap::new();
        for q in qrels {
            map.entry(q.query_id.clone())
                .or_default()
                .insert(q.doc_id.clone(), q.relevance);
        }
        let task = Self {
            queries,
            corpus,
            qrels: map,
        };
        task.validate()?;
        Ok(task)
    }

    pub fn load(queries: &Path, corpus: &Path, qrels: &Path) -> Result<Self> {
        let qrels: Vec<Qrel> = read_jsonl(qrels)?;
        Self::new(read_jsonl(queries)?, read_jsonl(corpus)?, &qrels)
    }

    pub fn validate(&self) -> Result<()> {
        if self.queries.is_empty() || self.corpus.is_empty() {
            return Err(Error::Empty("retrieval task"));
        }
        let ids: std::collections::HashSet<&str> =
            self.corpus.iter().map(|d| d.id.as_str()).collect();
        if ids.len() != self.corpus.len() {
            return Err(Error::InvalidArgument("duplicate corpus ids".into()));
        }
        for (q, docs) in &self.qrels {
            if let Some(missing) = docs.keys().find(|d| !ids.contains(d.as_str())) {
                return Err(Error::InvalidArgument(format!(
                    "qrel {q} -> {missing}: document not in corpus"
                )));
            }
        }
        Ok(())
    }

    /// Judgments with every positive grade collapsed to 1.
    pub fn binary_qrels(&self) -> BTreeMap<String, BTreeMap<String, u32>> {
        self.qrels
            .iter()
            .map(|(q, docs)| {
                (
                    q.clone(),
                    docs.iter()
                        .map(|(d, &g)| (d.clone(), u32::from(g > 0)))
                        .collect(),
                )
            })
            .collect()
    }
}

fn gain(grade: u32) -> f64 {
    2f64.powi(grade as i32) - 1.0
}

fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

/// NDCG@k of `ranking` (best first) with gain `2^rel - 1`. `None` when no
/// document is relevant, so callers skip rather than count a zero.
pub fn ndcg_at_k<S: AsRef<str>>(
    ranking: &[S],
    qrels: &BTreeMap<String, u32>,
    k: usize,
) -> Result<Option<f64>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let mut ideal: Vec<u32> = qrels.values().copied().filter(|&g| g > 0).collect();
    if ideal.is_empty() {
        return Ok(None);
    }
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| gain(g) * discount(i + 1))
        .sum();
    let dcg: f64 = ranking
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, d)| gain(qrels.get(d.as_ref()).copied().unwrap_or(0)) * discount(i + 1))
        .sum();
    Ok(Some(dcg / idcg))
}

/// Corpus indices ordered by descending score; ties go to the smaller doc id.
pub fn rank_documents(scores: &[f64], doc_ids: &[String]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| doc_ids[a].cmp(&doc_ids[b]))
    });
    order
}

/// Expected NDCG@k of a uniformly random ranking, averaged over the queries
/// that have a relevant document.
pub fn random_ranking_ndcg(task: &RetrievalTask, k: usize, binary: bool) -> Result<f64> {
    let qrels = if binary {
        task.binary_qrels()
    } else {
        task.qrels.clone()
    };
    let n = task.corpus.len();
    let mut total = 0.0;
    let mut count = 0;
    for q in &task.queries {
        let Some(rels) = qrels.get(&q.id) else {
            continue;
        };
        let mut grades: Vec<u32> = rels.values().copied().filter(|&g| g > 0).collect();
        if grades.is_empty() {
            continue;
        }
        grades.sort_unstable_by(|a, b| b.cmp(a));
        let idcg: f64 = grades
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, &g)| gain(g) * discount(i + 1))
            .sum();
        let mean_gain = grades.iter().map(|&g| gain(g)).sum::<f64>() / n as f64;
        let expected: f64 = (1..=k.min(n)).map(|r| discount(r) * mean_gain).sum();
        total += expected / idcg;
        count += 1;
    }
    if count == 0 {
        return Err(Error::InvalidArgument(
            "no query has a relevant document".into(),
        ));
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryScore {
    pub query_id: String,
    /// `None` when the query has no relevant document.
    pub ndcg: Option<f64>,
    pub top: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub k: usize,
    pub mean_ndcg: f64,
    pub evaluated: usize,
    pub per_query: Vec<QueryScore>,
}

/// Scores precomputed embeddings (`[queries, d]` and `[docs, d]`) by dot
/// product, which is cosine similarity for unit rows.
pub fn score_embeddings(
    task: &RetrievalTask,
    query_emb: &Tensor,
    doc_emb: &Tensor,
    k: usize,
    binary: bool,
) -> Result<RetrievalReport> {
    task.validate()?;
    if query_emb.shape()[0] != task.queries.len() || doc_emb.shape()[0] != task.corpus.len() {
        return Err(Error::InvalidArgument(
            "embedding rows do not match the task".into(),
        ));
    }
    let qrels = if binary {
        task.binary_qrels()
    } else {
        task.qrels.clone()
    };
    let doc_ids: Vec<String> = task.corpus.iter().map(|d| d.id.clone()).collect();
    let nd = doc_emb.shape()[0];
    let empty = BTreeMap::new();
    let mut per_query = Vec::with_capacity(task.queries.len());
    let (mut sum, mut evaluated) = (0.0, 0);
    for (qi, q) in task.queries.iter().enumerate() {
        let qv = query_emb.row(qi);
        let scores: Vec<f64> = (0..nd).map(|j| dot(qv, doc_emb.row(j))).collect();
        let order = rank_documents(&scores, &doc_ids);
        let ranking: Vec<&str> = order.iter().map(|&j| doc_ids[j].as_str()).collect();
        let ndcg = ndcg_at_k(&ranking, qrels.get(&q.id).unwrap_or(&empty), k)?;
        if let Some(v) = ndcg {
            sum += v;
            evaluated += 1;
        }
        per_query.push(QueryScore {
            query_id: q.id.clone(),
            ndcg,
            top: ranking.iter().take(k).map(|s| s.to_string()).collect(),
        });
    }
    if evaluated == 0 {
        return Err(Error::InvalidArgument(
            "no query has a relevant document".into(),
        ));
    }
    Ok(RetrievalReport {
        k,
        mean_ndcg: sum / evaluated as f64,
        evaluated,
        per_query,
    })
}

/// Inference wrapper: tokenizes, truncates, batches and embeds text.
#[derive(Debug, Clone, Copy)]
pub struct TextEncoder<'a> {
    pub encoder: &'a Encoder,
    pub tokenizer: &'a Tokenizer,
    pub max_tokens: usize,
    pub policy: RopePolicy,
}

/// What an embedding pass actually ran with.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedRun {
    pub embeddings: Tensor,
    pub policy: RopePolicy,
    /// Rotary base of each forward pass, in order.
    pub bases: Vec<f64>,
}

impl<'a> TextEncoder<'a> {
    pub fn new(
        encoder: &'a Encoder,
        tokenizer: &'a Tokenizer,
        max_tokens: usize,
        policy: RopePolicy,
    ) -> Self {
        Self {
            encoder,
            tokenizer,
            max_tokens,
            policy,
        }
    }

    /// Embeds `texts` with the task prefix, truncation to `max_tokens` and
    /// the task's normalization rule. Inputs longer than the trained context
    /// switch a policy of `none` to dynamic NTK with alpha 2.
    pub fn embed_task(&self, texts: &[String], task: TaskKind) -> Result<EmbedRun> {
        let prefixed: Vec<String> = texts.iter().map(|t| apply_prefix(task, t)).collect();
        self.embed_raw(&prefixed, task)
    }

    /// Like [`TextEncoder::embed_task`] without adding a prefix.
    pub fn embed_raw(&self, texts: &[String], task: TaskKind) -> Result<EmbedRun> {
        if self.max_tokens == 0 {
            return Err(Error::InvalidArgument(
                "max_tokens must be at least 1".into(),
            ));
        }
        if texts.is_empty() {
            return Err(Error::Empty("text list"));
        }
        let rows: Vec<Vec<u32>> = texts
            .iter()
            .map(|t| self.tokenizer.encode_for_model(t, self.max_tokens))
            .collect();
        let longest = rows.iter().map(Vec::len).max().unwrap_or(0);
        let rope = self.encoder.config.rope();
        let mut policy = self.policy;
        if longest > rope.trained_context {
            if policy.kind == RopeKind::None {
                policy = RopePolicy::dynamic_ntk(DEFAULT_DYNAMIC_ALPHA, longest);
            }
            policy.target_context = policy.target_context.max(longest);
        }
        let mut data = Vec::with_capacity(texts.len() * self.encoder.config.hidden_dim);
        let mut bases = Vec::new();
        for batch in rows.chunks(EMBED_BATCH) {
            let tb = TokenBatch::from_rows(batch)?;
            bases.push(effective_rope(&rope, &policy, tb.seq())?.base);
            data.extend_from_slice(self.encoder.embed(&tb, task, &policy)?.data());
        }
        let embeddings = Tensor::new(vec![texts.len(), self.encoder.config.hidden_dim], data)?;
        Ok(EmbedRun {
            embeddings,
            policy,
            bases,
        })
    }
}

/// Prefix-free, normalized embeddings for filtering and mining.
impl TextEmbedder for TextEncoder<'_> {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let run = self.embed_raw(texts, TaskKind::SearchQuery)?;
        let d = self.encoder.config.hidden_dim;
        Ok(run
            .embeddings
            .data()
            .chunks(d)
            .map(<[f64]>::to_vec)
            .collect())
    }
}

/// Mean NDCG@k of `encoder` on `task` with exhaustive cosine search.
/// Queries and documents are prefixed according to `kind`; relevance is
/// binary.
pub fn retrieval_eval(
    enc: &TextEncoder,
    task: &RetrievalTask,
    k: usize,
    kind: PairTask,
) -> Result<RetrievalReport> {
    task.validate()?;
    let queries: Vec<String> = task.queries.iter().map(|q| q.text.clone()).collect();
    let docs: Vec<String> = task.corpus.iter().map(|d| d.text.clone()).collect();
    let q = enc.embed_task(&queries, kind.query_kind())?;
    let d = enc.embed_task(&docs, kind.document_kind())?;
    score_embeddings(task, &q.embeddings, &d.embeddings, k, true)
}

/// Builds a retrieval task at a given document length.
pub trait ProbeTask {
    fn task_at(&self, length: usize) -> Result<RetrievalTask>;
}

/// One cell of the extrapolation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub length: usize,
    pub policy: String,
    pub kind: RopeKind,
    pub alpha: f64,
    /// Rotary base at this length, when the policy accepts it.
    pub base: Option<f64>,
    pub ndcg: Option<f64>,
    /// Why the cell is empty, e.g. a length the policy cannot handle.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Evaluates every (length, policy) pair on the probe task truncated to
/// that length. A policy of kind `none` cannot exceed the trained context;
/// those cells record the error instead of a score.
pub fn extrapolation_sweep(
    encoder: &Encoder,
    tokenizer: &Tokenizer,
    lengths: &[usize],
    policies: &[RopePolicy],
    probe: &dyn ProbeTask,
    k: usize,
) -> Result<Vec<SweepRow>> {
    if lengths.is_empty() || policies.is_empty() {
        return Err(Error::Empty("sweep grid"));
    }
    if lengths.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument(
            "sweep lengths must be ascending".into(),
        ));
    }
    let rope = encoder.config.rope();
    let mut rows = Vec::new();
    for &length in lengths {
        let task = probe.task_at(length)?;
        for policy in policies {
            let mut row = SweepRow {
                length,
                policy: policy.label(),
                kind: policy.kind,
                alpha: policy.alpha,
                base: None,
                ndcg: None,
                error: None,
            };
            if policy.kind == RopeKind::None && length > rope.trained_context {
                row.error = Some(
                    Error::SequenceTooLong {
                        len: length,
                        limit: rope.trained_context,
                    }
                    .to_string(),
                );
                rows.push(row);
                continue;
            }
            let mut p = *policy;
            p.target_context = p.target_context.max(length);
            let enc = TextEncoder::new(encoder, tokenizer, length, p);
            row.base = Some(effective_rope(&rope, &p, length)?.base);
            row.ndcg = Some(retrieval_eval(&enc, &task, k, PairTask::Retrieval)?.mean_ndcg);
            rows.push(row);
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rels(pairs: &[(&str, u32)]) -> BTreeMap<String, u32> {
        pairs.iter().map(|(d, g)| (d.to_string(), *g)).collect()
    }

    #[test]
    fn ndcg_examples() {
        let q = rels(&[("a", 1)]);
        assert_eq!(ndcg_at_k(&["a", "b"], &q, 10).unwrap(), Some(1.0));
        let v = ndcg_at_k(&["b", "a", "c"], &q, 10).unwrap().unwrap();
        assert!((v - 1.0 / 3f64.log2()).abs() < 1e-15);
        assert!((v - 0.6309).abs() < 1e-4);
        assert_eq!(ndcg_at_k(&["b", "c", "a"], &q, 2).unwrap(), Some(0.0));
        assert_eq!(ndcg_at_k(&["a"], &rels(&[("a", 0)]), 10).unwrap(), None);
        assert!(ndcg_at_k(&["a"], &q, 0).is_err());
    }

    #[test]
    fn graded_perfect_ranking() {
        let q = rels(&[("a", 3), ("b", 1), ("c", 2)]);
        assert_eq!(ndcg_at_k(&["a", "c", "b"], &q, 10).unwrap(), Some(1.0));
        assert!(ndcg_at_k(&["b", "c", "a"], &q, 10).unwrap().unwrap() < 1.0);
    }

    #[test]
    fn ties_break_by_doc_id() {
        let ids: Vec<String> = ["d2", "d1", "d3"].iter().map(|s| s.to_string()).collect();
        assert_eq!(rank_documents(&[0.5, 0.5, 0.9], &ids), vec![2, 1, 0]);
    }

    fn id(i: &str, t: &str) -> IdText {
        IdText {
            id: i.into(),
            text: t.into(),
        }
    }

    #[test]
    fn single_doc_task_and_random_baseline() {
        let task = RetrievalTask::new(
            vec![id("q", "x")],
            vec![id("d", "y")],
            &[Qrel {
                query_id: "q".into(),
                doc_id: "d".into(),
                relevance: 1,
            }],
        )
        .unwrap();
        let e = Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap();
        assert_eq!(
            score_embeddings(&task, &e, &e, 10, true).unwrap().mean_ndcg,
            1.0
        );
        assert_eq!(random_ranking_ndcg(&task, 10, true).unwrap(), 1.0);
    }

    #[test]
    fn task_validation() {
        let bad = RetrievalTask::new(
            vec![id("q", "x")],
            vec![id("d", "y")],
            &[Qrel {
                query_id: "q".into(),
                doc_id: "zz".into(),
                relevance: 1,
            }],
        );
        assert!(bad.is_err());
        assert!(matches!(
            RetrievalTask::new(vec![], vec![id("d", "y")], &[]),
            Err(Error::Empty(_))
        ));
    }
}
