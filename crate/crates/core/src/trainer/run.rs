use std::collections::BTreeMap;
use std::time::Instant;

use longembed_autodiff::{Graph, TensorError};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::batching::make_batches_single_source;
use crate::data::mining::sample_negatives;
use crate::data::packing::PackedChunk;
use crate::data::pairs::TextPair;
use crate::data::prefix::{apply_prefix, PairTask};
use crate::data::tokenizer::Tokenizer;
use crate::encoder::{Encoder, TokenBatch};
use crate::error::{Error, Result};
use crate::objectives::{
    contrastive_grads, gradcache_grads, mlm_mask, mlm_objective, ContrastiveInputs,
};
use crate::params::Params;
use crate::rope::RopePolicy;
use crate::trainer::optimizer::AdamW;
use crate::trainer::plan::{Stage, TrainPlan};

/// Training data for one stage.
#[derive(Debug, Clone, Copy)]
pub enum StageData<'a> {
    Chunks(&'a [PackedChunk]),
    Pairs(&'a [TextPair]),
}

impl StageData<'_> {
    fn label(&self) -> &'static str {
        match self {
            StageData::Chunks(_) => "packed chunks",
            StageData::Pairs(_) => "text pairs",
        }
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub stage: Stage,
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub grad_norm: f64,
    pub tokens_per_sec: f64,
    pub wall_clock: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageReport {
    pub stage: Stage,
    pub total_steps: usize,
    pub records: Vec<StepRecord>,
}

impl StageReport {
    pub fn first_loss(&self) -> Option<f64> {
        self.records.first().map(|r| r.loss)
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.loss)
    }
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut x =
        seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    x ^= x >> 31;
    x.wrapping_mul(0xBF58_476D_1CE4_E5B9)
}

/// An optimizer step's worth of work, resolved to tokens.
enum MicroBatch {
    Mlm(TokenBatch),
    Contrastive(ContrastiveInputs),
}

impl MicroBatch {
    fn tokens(&self) -> usize {
        match self {
            MicroBatch::Mlm(t) => t.real_tokens(),
            MicroBatch::Contrastive(c) => c.real_tokens(),
        }
    }
}

/// Yields micro-batches forever, reshuffling at every epoch boundary.
struct Feeder<'a> {
    plan: &'a TrainPlan,
    tokenizer: &'a Tokenizer,
    data: StageData<'a>,
    seed: u64,
    max_tokens: usize,
    epoch: u64,
    queue: std::vec::IntoIter<MicroBatch>,
    by_source: BTreeMap<String, Vec<&'a TextPair>>,
}

impl<'a> Feeder<'a> {
    fn new(
        plan: &'a TrainPlan,
        tokenizer: &'a Tokenizer,
        data: StageData<'a>,
        seed: u64,
        max_tokens: usize,
    ) -> Result<Self> {
        let mut by_source: BTreeMap<String, Vec<&TextPair>> = BTreeMap::new();
        if let StageData::Pairs(pairs) = data {
            for p in pairs {
                by_source.entry(p.source.clone()).or_default().push(p);
            }
        }
        Ok(Self {
            plan,
            tokenizer,
            data,
            seed,
            max_tokens,
            epoch: 0,
            queue: Vec::new().into_iter(),
            by_source,
        })
    }

    /// Micro-batches available in one epoch.
    fn per_epoch(&self) -> usize {
        let b = self.plan.batch_size;
        match self.data {
            StageData::Chunks(c) => c.len() / b,
            StageData::Pairs(_) => self.by_source.values().map(|v| v.len() / b).sum(),
        }
    }

    fn refill(&mut self) -> Result<()> {
        let epoch = self.epoch;
        self.epoch += 1;
        let plan = self.plan;
        let batches = match self.data {
            StageData::Chunks(chunks) => {
                let mut order: Vec<usize> = (0..chunks.len()).collect();
                order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(self.seed, epoch, 0)));
                order
                    .chunks_exact(plan.batch_size)
                    .map(|idx| {
                        let seq = chunks[idx[0]].tokens.len();
                        let mut ids = Vec::with_capacity(idx.len() * seq);
                        let mut mask = Vec::with_capacity(ids.capacity());
                        for &i in idx {
                            ids.extend_from_slice(&chunks[i].tokens);
                            mask.extend_from_slice(&chunks[i].mask);
                        }
                        Ok(MicroBatch::Mlm(TokenBatch::new(ids, mask, idx.len(), seq)?))
                    })
                    .collect::<Result<Vec<_>>>()?
            }
            StageData::Pairs(_) => {
                let batches =
                    make_batches_single_source(&self.by_source, plan.batch_size, self.seed, epoch)?;
                batches
                    .iter()
                    .enumerate()
                    .map(|(b, batch)| {
                        let task = plan
                            .source_tasks
                            .get(&batch.source)
                            .copied()
                            .unwrap_or_default();
                        let salt = mix(self.seed, epoch, b as u64);
                        self.contrastive(&batch.items, task, salt)
                            .map(MicroBatch::Contrastive)
                    })
                    .collect::<Result<Vec<_>>>()?
            }
        };
        self.queue = batches.into_iter();
        Ok(())
    }

    fn contrastive(
        &self,
        pairs: &[&TextPair],
        task: PairTask,
        salt: u64,
    ) -> Result<ContrastiveInputs> {
        let max = self.max_tokens;
        let tok = |kind, text: &str| {
            self.tokenizer
                .encode_for_model(&apply_prefix(kind, text), max)
        };
        let queries: Vec<Vec<u32>> = pairs
            .iter()
            .map(|p| tok(task.query_kind(), &p.query))
            .collect();
        let documents: Vec<Vec<u32>> = pairs
            .iter()
            .map(|p| tok(task.document_kind(), &p.document))
            .collect();
        let h = if self.plan.stage == Stage::Finetune {
            self.plan.hard_negatives
        } else {
            0
        };
        let negatives = if h > 0 {
            let mut rows = Vec::with_capacity(pairs.len() * h);
            for (i, p) in pairs.iter().enumerate() {
                let picked = sample_negatives(p.negatives(), h, mix(salt, i as u64, 1));
                if picked.len() != h {
                    return Err(Error::NotEnoughNegatives {
                        pair: i,
                        available: picked.len(),
                        required: h,
                    });
                }
                rows.extend(picked.iter().map(|n| tok(task.document_kind(), n)));
            }
            Some((TokenBatch::from_rows(&rows)?, h))
        } else {
            None
        };
        ContrastiveInputs::new(
            TokenBatch::from_rows(&queries)?,
            TokenBatch::from_rows(&documents)?,
            negatives,
        )
    }

    fn next(&mut self) -> Result<MicroBatch> {
        loop {
            if let Some(b) = self.queue.next() {
                return Ok(b);
            }
            self.refill()?;
        }
    }
}

fn check_data(plan: &TrainPlan, data: &StageData) -> Result<()> {
    let mismatch = || Error::StageDataMismatch {
        stage: plan.stage.as_str(),
        data: data.label(),
    };
    match (plan.stage, data) {
        (Stage::Mlm, StageData::Chunks(chunks)) => {
            if chunks.is_empty() {
                return Err(Error::Empty("chunk list"));
            }
            let len = chunks[0].tokens.len();
            if len > plan.max_seq {
                return Err(Error::SequenceTooLong {
                    len,
                    limit: plan.max_seq,
                });
            }
            if chunks
                .iter()
                .any(|c| c.tokens.len() != len || c.mask.len() != len)
            {
                return Err(Error::InvalidArgument(
                    "chunks must share one length".into(),
                ));
            }
            Ok(())
        }
        (Stage::Mlm, _) => Err(mismatch()),
        (_, StageData::Chunks(_)) => Err(mismatch()),
        (stage, StageData::Pairs(pairs)) => {
            if pairs.is_empty() {
                return Err(Error::Empty("pair list"));
            }
            for p in pairs.iter() {
                p.validate()?;
            }
            if stage == Stage::Finetune {
                if pairs.iter().all(|p| p.hard_negatives.is_none()) {
                    return Err(mismatch());
                }
                if let Some((i, p)) = pairs
                    .iter()
                    .enumerate()
                    .find(|(_, p)| p.negatives().len() < plan.hard_negatives)
                {
                    return Err(Error::NotEnoughNegatives {
                        pair: i,
                        available: p.negatives().len(),
                        required: plan.hard_negatives,
                    });
                }
            }
            Ok(())
        }
    }
}

/// Optimizer steps a plan will take on `data`.
pub fn planned_steps(plan: &TrainPlan, tokenizer: &Tokenizer, data: StageData) -> Result<usize> {
    plan.validate()?;
    check_data(plan, &data)?;
    let feeder = Feeder::new(plan, tokenizer, data, 0, plan.max_seq)?;
    let per_epoch = feeder.per_epoch() / plan.accumulation;
    if per_epoch == 0 {
        return Err(Error::InvalidArgument(format!(
            "not enough data for one step of {} x {} items",
            plan.batch_size, plan.accumulation
        )));
    }
    Ok(plan.steps.unwrap_or(per_epoch * plan.epochs))
}

/// Runs one training stage in place on `encoder`.
///
/// Each optimizer step averages the gradients of `plan.accumulation`
/// micro-batches. MLM micro-batches are shuffled packed chunks; contrastive
/// micro-batches come from one source each, carry task prefixes, and for
/// finetuning exactly `plan.hard_negatives` sampled negatives per pair. The
/// callback sees every step record as it is produced. On error the encoder
/// keeps the weights of the last completed step.
pub fn run_stage(
    plan: &TrainPlan,
    encoder: &mut Encoder,
    tokenizer: &Tokenizer,
    data: StageData,
    seed: u64,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<StageReport> {
    let total = planned_steps(plan, tokenizer, data)?;
    if tokenizer.padded_vocab_size() > encoder.config.vocab_size {
        return Err(Error::InvalidArgument(format!(
            "tokenizer needs {} ids but the encoder has {}",
            tokenizer.padded_vocab_size(),
            encoder.config.vocab_size
        )));
    }
    let max_tokens = plan.max_seq.min(encoder.config.trained_context);
    if let StageData::Chunks(chunks) = data {
        let len = chunks[0].tokens.len();
        if len > max_tokens {
            return Err(Error::SequenceTooLong {
                len,
                limit: max_tokens,
            });
        }
    }
    let mut feeder = Feeder::new(plan, tokenizer, data, seed, max_tokens)?;
    let schedule = plan.schedule();
    let mut opt = AdamW::new(plan.optimizer, &encoder.weights);
    let policy = RopePolicy::none();
    let masking = tokenizer.masking_vocab();
    let start = Instant::now();
    let mut records = Vec::with_capacity(total);

    for step in 1..=total {
        let step_start = Instant::now();
        let mut grads: Option<Params> = None;
        let mut loss_sum = 0.0;
        let mut tokens = 0;
        for micro in 0..plan.accumulation {
            let batch = feeder.next()?;
            tokens += batch.tokens();
            let (loss, g) = match &batch {
                MicroBatch::Mlm(t) => {
                    let masked = mlm_mask(
                        t,
                        &masking,
                        plan.mask_rate,
                        mix(seed, step as u64, micro as u64 + 7),
                    )?;
                    let mut graph = Graph::new();
                    let w = encoder.weights.bind(&mut graph, true)?;
                    let loss = mlm_objective(encoder, &mut graph, &w, &masked, &policy)
                        .map_err(|e| non_finite(e, step))?;
                    graph.backward(loss)?;
                    (graph.value(loss).item()?, w.grads(&graph)?)
                }
                MicroBatch::Contrastive(inputs) => match plan.gradcache_chunk {
                    Some(chunk) => gradcache_grads(encoder, inputs, chunk, &plan.loss, &policy),
                    None => contrastive_grads(encoder, inputs, &plan.loss, &policy),
                }
                .map_err(|e| non_finite(e, step))?,
            };
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { step });
            }
            loss_sum += loss;
            match grads.as_mut() {
                Some(acc) => acc.accumulate(&g)?,
                None => grads = Some(g),
            }
        }
        let mut grads = grads.expect("accumulation is at least 1");
        if plan.accumulation > 1 {
            grads.scale(1.0 / plan.accumulation as f64);
        }
        let lr = schedule.lr_at(step, total)?;
        // Update a copy so a failing step leaves the encoder untouched.
        let mut next = encoder.weights.clone();
        let stats = opt.step(&mut next, &mut grads, lr)?;
        encoder.weights = next;

        let secs = step_start.elapsed().as_secs_f64();
        let record = StepRecord {
            stage: plan.stage,
            step,
            lr,
            loss: loss_sum / plan.accumulation as f64,
            grad_norm: stats.grad_norm,
            tokens_per_sec: if secs > 0.0 {
                tokens as f64 / secs
            } else {
                0.0
            },
            wall_clock: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "{} step {step}/{total} loss {:.5} lr {:.3e}",
            plan.stage,
            record.loss,
            lr
        );
        on_step(&record);
        records.push(record);
    }
    Ok(StageReport {
        stage: plan.stage,
        total_steps: total,
        records,
    })
}

fn non_finite(e: Error, step: usize) -> Error {
    match e {
        Error::Tensor(TensorError::NonFinite { .. }) => Error::NonFiniteLoss { step },
        other => other,
    }
}
