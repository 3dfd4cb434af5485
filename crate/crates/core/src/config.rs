//! Run configuration: a TOML file with one section per training stage plus
//! the model shape, layered over built-in defaults and then over
//! `section.key=value` overrides.
//!
//! ```toml
//! seed = 7
//!
//! [model]
//! num_layers = 2
//! hidden_dim = 64
//!
//! [pretrain]
//! lr = 1e-3
//! warmup = { steps = 20 }
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::encoder::{EncoderConfig, Pooling};
use crate::error::{Error, Result};
use crate::rope::DEFAULT_ROPE_BASE;
use crate::trainer::plan::{Stage, TrainPlan};

/// Model shape without the vocabulary, which comes from the tokenizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub trained_context: usize,
    pub rope_base: f64,
    pub pooling: Pooling,
    pub tie_mlm_head: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let d = EncoderConfig::desk(1);
        Self {
            num_layers: d.num_layers,
            hidden_dim: d.hidden_dim,
            num_heads: d.num_heads,
            ffn_dim: d.ffn_dim,
            trained_context: d.trained_context,
            rope_base: DEFAULT_ROPE_BASE,
            pooling: d.pooling,
            tie_mlm_head: d.tie_mlm_head,
        }
    }
}

impl ModelConfig {
    pub fn encoder_config(&self, vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            num_layers: self.num_layers,
            hidden_dim: self.hidden_dim,
            num_heads: self.num_heads,
            ffn_dim: self.ffn_dim,
            vocab_size,
            trained_context: self.trained_context,
            rope_base: self.rope_base,
            dropout: 0.0,
            pooling: self.pooling,
            tie_mlm_head: self.tie_mlm_head,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub mlm: TrainPlan,
    pub pretrain: TrainPlan,
    pub finetune: TrainPlan,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model: ModelConfig::default(),
            mlm: TrainPlan::desk(Stage::Mlm),
            pretrain: TrainPlan::desk(Stage::Pretrain),
            finetune: TrainPlan::desk(Stage::Finetune),
        }
    }
}

impl RunConfig {
    pub fn plan(&self, stage: Stage) -> &TrainPlan {
        match stage {
            Stage::Mlm => &self.mlm,
            Stage::Pretrain => &self.pretrain,
            Stage::Finetune => &self.finetune,
        }
    }

    /// Defaults, then the optional file, then each `key=value` override.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table =
            Table::try_from(Self::default()).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let file: Table = text
                .parse()
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            merge(&mut table, file);
        }
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Self = Value::Table(table)
            .try_into()
            .map_err(|e| Error::Config(e.to_string()))?;
        for (stage, plan) in [
            (Stage::Mlm, &cfg.mlm),
            (Stage::Pretrain, &cfg.pretrain),
            (Stage::Finetune, &cfg.finetune),
        ] {
            if plan.stage != stage {
                return Err(Error::Config(format!(
                    "section [{stage}] declares stage {}",
                    plan.stage
                )));
            }
            plan.validate()?;
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Recursive merge; tables merge key by key, anything else is replaced.
fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Applies `dotted.key=value`. The value is read as TOML when it parses and
/// as a bare string otherwise; `none` removes the key (for optional
/// settings such as `finetune.optimizer.grad_clip`).
pub fn apply_override(table: &mut Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key {key:?}")));
    }
    let raw = raw.trim();
    let (last, parents) = path.split_last().expect("split yields at least one part");
    let mut node = &mut *table;
    for p in parents {
        node = match node
            .entry(p.to_string())
            .or_insert_with(|| Value::Table(Table::new()))
        {
            Value::Table(t) => t,
            _ => return Err(Error::Config(format!("{key}: {p} is not a section"))),
        };
    }
    if raw == "none" {
        node.remove(*last);
        return Ok(());
    }
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    node.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::schedule::Warmup;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, text).unwrap();
        assert_eq!(RunConfig::load(Some(&p), &[]).unwrap(), cfg);
    }

    #[test]
    fn file_then_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(
            &p,
            "seed = 3\n[model]\nnum_layers = 2\n[pretrain]\nlr = 0.5\n",
        )
        .unwrap();
        let o = vec![
            "pretrain.lr=0.25".to_string(),
            "finetune.warmup={ steps = 3 }".to_string(),
            "finetune.optimizer.grad_clip=none".to_string(),
            "model.pooling=cls".to_string(),
        ];
        let cfg = RunConfig::load(Some(&p), &o).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.model.num_layers, 2);
        assert_eq!(cfg.pretrain.lr, 0.25);
        assert_eq!(cfg.finetune.warmup, Warmup::Steps(3));
        assert_eq!(cfg.finetune.optimizer.grad_clip, None);
        assert_eq!(cfg.model.pooling, Pooling::Cls);
    }

    #[test]
    fn unknown_keys_fail() {
        assert!(matches!(
            RunConfig::load(None, &["mlm.learning_rate=1".into()]),
            Err(Error::Config(_))
        ));
        assert!(RunConfig::load(None, &["nonsense".into()]).is_err());
    }
}
