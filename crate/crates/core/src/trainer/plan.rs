use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::prefix::PairTask;
use crate::error::{Error, Result};
use crate::objectives::{ContrastiveConfig, DEFAULT_MASK_RATE};
use crate::trainer::optimizer::{AdamWConfig, ADAM_EPS};
use crate::trainer::schedule::{Schedule, ScheduleKind, Warmup};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Mlm,
    #[serde(alias = "contrastive_pretrain")]
    Pretrain,
    Finetune,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Mlm, Stage::Pretrain, Stage::Finetune];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Mlm => "mlm",
            Stage::Pretrain => "pretrain",
            Stage::Finetune => "finetune",
        }
    }

    pub fn is_contrastive(self) -> bool {
        self != Stage::Mlm
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlm" => Ok(Stage::Mlm),
            "pretrain" | "contrastive_pretrain" => Ok(Stage::Pretrain),
            "finetune" => Ok(Stage::Finetune),
            other => Err(Error::InvalidArgument(format!("unknown stage {other:?}"))),
        }
    }
}

/// Everything one training stage needs to know.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainPlan {
    pub stage: Stage,
    pub lr: f64,
    pub optimizer: AdamWConfig,
    pub schedule: ScheduleKind,
    pub warmup: Warmup,
    /// Items per micro-batch: chunks for MLM, pairs otherwise.
    pub batch_size: usize,
    /// Micro-batches summed into one optimizer step.
    pub accumulation: usize,
    pub max_seq: usize,
    pub epochs: usize,
    /// Fixed number of optimizer steps; when set, epochs repeat as needed
    /// and `epochs` is ignored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    pub hard_negatives: usize,
    pub mask_rate: f64,
    #[serde(default)]
    pub loss: ContrastiveConfig,
    /// GradCache chunk size for contrastive stages; `None` runs one
    /// monolithic backward per micro-batch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gradcache_chunk: Option<usize>,
    /// Prefix convention per source; unlisted sources are retrieval data.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub source_tasks: BTreeMap<String, PairTask>,
}

impl TrainPlan {
    /// The published full-scale hyperparameters.
    pub fn full_scale(stage: Stage) -> Self {
        let contrastive_opt = AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: ADAM_EPS,
            weight_decay: 0.01,
            grad_clip: Some(1.0),
        };
        let base = Self {
            stage,
            lr: 0.0,
            optimizer: contrastive_opt,
            schedule: ScheduleKind::LinearDecay,
            warmup: Warmup::Steps(0),
            batch_size: 0,
            accumulation: 1,
            max_seq: 2048,
            epochs: 1,
            steps: None,
            hard_negatives: 0,
            mask_rate: DEFAULT_MASK_RATE,
            loss: ContrastiveConfig::default(),
            gradcache_chunk: None,
            source_tasks: BTreeMap::new(),
        };
        match stage {
            Stage::Mlm => Self {
                lr: 5e-4,
                optimizer: AdamWConfig {
                    beta1: 0.9,
                    beta2: 0.98,
                    eps: ADAM_EPS,
                    weight_decay: 1e-5,
                    grad_clip: None,
                },
                schedule: ScheduleKind::LinearDecay,
                warmup: Warmup::Fraction(0.06),
                batch_size: 4096 / 8,
                accumulation: 8,
                ..base
            },
            Stage::Pretrain => Self {
                lr: 2e-4,
                schedule: ScheduleKind::InverseSqrt,
                warmup: Warmup::Steps(700),
                batch_size: 16384,
                ..base
            },
            Stage::Finetune => Self {
                lr: 2e-5,
                schedule: ScheduleKind::LinearCooldown,
                warmup: Warmup::Steps(400),
                batch_size: 256,
                hard_negatives: 7,
                ..base
            },
        }
    }

    /// CPU-sized variant: short sequences, small batches, warmups scaled to
    /// runs of a few hundred steps and higher peak rates for a model that
    /// starts far from convergence.
    pub fn desk(stage: Stage) -> Self {
        let full = Self::full_scale(stage);
        match stage {
            Stage::Mlm => Self {
                lr: 2e-3,
                batch_size: 64,
                accumulation: 1,
                max_seq: 128,
                ..full
            },
            Stage::Pretrain => Self {
                lr: 1e-3,
                warmup: Warmup::Steps(30),
                batch_size: 128,
                max_seq: 128,
                gradcache_chunk: Some(32),
                ..full
            },
            Stage::Finetune => Self {
                lr: 2e-4,
                warmup: Warmup::Steps(10),
                batch_size: 32,
                max_seq: 128,
                ..full
            },
        }
    }

    pub fn schedule(&self) -> Schedule {
        Schedule {
            kind: self.schedule,
            peak_lr: self.lr,
            warmup: self.warmup,
        }
    }

    /// Micro-batch items consumed per optimizer step.
    pub fn items_per_step(&self) -> usize {
        self.batch_size * self.accumulation
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return bad(format!(
                "lr {} must be a finite non-negative number",
                self.lr
            ));
        }
        let o = &self.optimizer;
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.eps > 0.0) {
            return bad(format!("invalid optimizer settings {o:?}"));
        }
        if o.weight_decay < 0.0 || o.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return bad(format!("invalid decay or clip in {o:?}"));
        }
        if self.batch_size == 0 || self.accumulation == 0 || self.max_seq < 2 {
            return bad("batch_size, accumulation must be positive and max_seq at least 2".into());
        }
        if self.steps.is_none() && self.epochs == 0 {
            return bad("either steps or a positive epoch count is required".into());
        }
        if let Warmup::Fraction(f) = self.warmup {
            if !(0.0..=1.0).contains(&f) {
                return bad(format!("warmup fraction {f} outside [0, 1]"));
            }
        }
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return bad(format!("mask rate {} outside (0, 1)", self.mask_rate));
        }
        if let Some(c) = self.gradcache_chunk {
            if c == 0 || !self.batch_size.is_multiple_of(c) {
                return Err(Error::ChunkTiling {
                    n: self.batch_size,
                    chunk: c,
                });
            }
        }
        if self.stage == Stage::Finetune && self.hard_negatives == 0 {
            return bad("finetuning needs at least one hard negative per pair".into());
        }
        self.loss.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_plans_validate() {
        for s in Stage::ALL {
            TrainPlan::desk(s).validate().unwrap();
            TrainPlan::full_scale(s).validate().unwrap();
            assert_eq!(s.as_str().parse::<Stage>().unwrap(), s);
        }
    }

    #[test]
    fn bad_chunk_rejected() {
        let mut p = TrainPlan::desk(Stage::Pretrain);
        p.gradcache_chunk = Some(3);
        assert!(matches!(p.validate(), Err(Error::ChunkTiling { .. })));
    }
}
