use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    LinearDecay,
    InverseSqrt,
    LinearCooldown,
}

/// Warmup length, as a share of all steps or as a fixed count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Warmup {
    Fraction(f64),
    Steps(usize),
}

impl Warmup {
    pub fn steps(&self, total: usize) -> usize {
        match *self {
            Warmup::Fraction(f) => (f * total as f64).round() as usize,
            Warmup::Steps(s) => s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub kind: ScheduleKind,
    pub peak_lr: f64,
    pub warmup: Warmup,
}

impl Schedule {
    /// Learning rate at `step` of `total`: linear warmup from 0, then linear
    /// decay to 0 at `total` or `peak * sqrt(warmup / step)`.
    pub fn lr_at(&self, step: usize, total: usize) -> Result<f64> {
        if step > total {
            return Err(Error::StepOutOfRange { step, total });
        }
        let warm = self.warmup.steps(total);
        let peak = self.peak_lr;
        if step < warm {
            return Ok(peak * (step as f64 / warm as f64));
        }
        Ok(match self.kind {
            ScheduleKind::LinearDecay | ScheduleKind::LinearCooldown => {
                if total == warm {
                    peak
                } else {
                    peak * ((total - step) as f64 / (total - warm) as f64)
                }
            }
            ScheduleKind::InverseSqrt => {
                if step == 0 {
                    peak
                } else {
                    peak * (warm.max(1) as f64 / step as f64).sqrt().min(1.0)
                }
            }
        })
    }
}
