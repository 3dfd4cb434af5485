//! Rotary position embeddings and context-length extrapolation.
//!
//! Angles follow the usual interleaved pairing: dims `(2i, 2i+1)` at position
//! `m` rotate by `m * base^(-2i / head_dim)`. Three policies stretch a model
//! trained on `L` tokens to longer inputs:
//!
//! - position interpolation squeezes positions by `L / L'`,
//! - NTK-aware scaling raises the base by `s^(D / (D - 2))` with `s = L' / L`,
//! - dynamic NTK uses the live length and a damping factor `alpha`, leaving
//!   inputs that fit in `L` untouched.

use longembed_autodiff::{Graph, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_ROPE_BASE: f64 = 1_000.0;
pub const DEFAULT_DYNAMIC_ALPHA: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RopeParams {
    pub base: f64,
    pub head_dim: usize,
    pub trained_context: usize,
}

impl RopeParams {
    pub fn new(base: f64, head_dim: usize, trained_context: usize) -> Result<Self> {
        let p = Self {
            base,
            head_dim,
            trained_context,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.head_dim.is_multiple_of(2) {
            return Err(Error::OddHeadDim(self.head_dim));
        }
        if self.head_dim < 4 {
            return Err(Error::InvalidArgument(format!(
                "head_dim {} must be at least 4",
                self.head_dim
            )));
        }
        if !(self.base > 1.0) || !self.base.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "rope base {} must exceed 1",
                self.base
            )));
        }
        if self.trained_context == 0 {
            return Err(Error::InvalidArgument(
                "trained context must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RopeKind {
    None,
    PositionInterpolation,
    NtkAware,
    DynamicNtk,
}

impl RopeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RopeKind::None => "none",
            RopeKind::PositionInterpolation => "position_interpolation",
            RopeKind::NtkAware => "ntk_aware",
            RopeKind::DynamicNtk => "dynamic_ntk",
        }
    }
}

impl std::str::FromStr for RopeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(RopeKind::None),
            "position_interpolation" | "pi" => Ok(RopeKind::PositionInterpolation),
            "ntk_aware" | "ntk" => Ok(RopeKind::NtkAware),
            "dynamic_ntk" | "dynamic" => Ok(RopeKind::DynamicNtk),
            other => Err(Error::InvalidArgument(format!(
                "unknown rope policy {other:?}"
            ))),
        }
    }
}

/// Extrapolation strategy applied at encode time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RopePolicy {
    pub kind: RopeKind,
    pub alpha: f64,
    pub target_context: usize,
}

impl RopePolicy {
    pub fn none() -> Self {
        Self {
            kind: RopeKind::None,
            alpha: 1.0,
            target_context: 0,
        }
    }

    pub fn position_interpolation(target_context: usize) -> Self {
        Self {
            kind: RopeKind::PositionInterpolation,
            alpha: 1.0,
            target_context,
        }
    }

    pub fn ntk_aware(target_context: usize) -> Self {
        Self {
            kind: RopeKind::NtkAware,
            alpha: 1.0,
            target_context,
        }
    }

    pub fn dynamic_ntk(alpha: f64, target_context: usize) -> Self {
        Self {
            kind: RopeKind::DynamicNtk,
            alpha,
            target_context,
        }
    }

    pub fn validate(&self, params: &RopeParams) -> Result<()> {
        if self.kind == RopeKind::None {
            return Ok(());
        }
        if self.target_context < params.trained_context {
            return Err(Error::TargetShorterThanTrained {
                target: self.target_context,
                trained: params.trained_context,
            });
        }
        if !(self.alpha >= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha {} must be at least 1",
                self.alpha
            )));
        }
        Ok(())
    }

    /// Longest sequence this policy accepts.
    pub fn max_len(&self, params: &RopeParams) -> usize {
        match self.kind {
            RopeKind::None => params.trained_context,
            _ => self.target_context.max(params.trained_context),
        }
    }

    pub fn label(&self) -> String {
        match self.kind {
            RopeKind::DynamicNtk => format!("dynamic_ntk(alpha={})", self.alpha),
            kind => kind.as_str().to_string(),
        }
    }
}

/// Rotation frequency of pair `i`: `base^(-2i / head_dim)`.
pub fn inv_frequencies(base: f64, head_dim: usize) -> Vec<f64> {
    (0..head_dim / 2)
        .map(|i| base.powf(-((2 * i) as f64) / head_dim as f64))
        .collect()
}

/// `(cos, sin)` tables of shape `[positions.len(), head_dim / 2]`.
pub fn rope_tables(positions: &[f64], base: f64, head_dim: usize) -> (Vec<f64>, Vec<f64>) {
    let freqs = inv_frequencies(base, head_dim);
    let mut cos = Vec::with_capacity(positions.len() * freqs.len());
    let mut sin = Vec::with_capacity(cos.capacity());
    for &m in positions {
        for &f in &freqs {
            let angle = m * f;
            cos.push(angle.cos());
            sin.push(angle.sin());
        }
    }
    (cos, sin)
}

/// Rotates `x: [seq, head_dim]` with one position per row.
pub fn apply_rope(x: &Tensor, positions: &[f64], base: f64) -> Result<Tensor> {
    let [seq, head_dim] = x.shape() else {
        return Err(Error::InvalidArgument(format!(
            "apply_rope expects [seq, head_dim], got {:?}",
            x.shape()
        )));
    };
    let (seq, head_dim) = (*seq, *head_dim);
    if head_dim % 2 != 0 {
        return Err(Error::OddHeadDim(head_dim));
    }
    if positions.len() != seq {
        return Err(Error::PositionLengthMismatch {
            positions: positions.len(),
            seq,
        });
    }
    let (cos, sin) = rope_tables(positions, base, head_dim);
    let mut g = Graph::new();
    let v = g.constant(x.clone())?;
    let y = g.rotate_pairs(v, &cos, &sin)?;
    Ok(g.value(y).clone())
}

/// Position interpolation: `m * L / L'`.
pub fn interpolate_positions(m: f64, trained: usize, target: usize) -> Result<f64> {
    if target < trained {
        return Err(Error::TargetShorterThanTrained { target, trained });
    }
    if trained == 0 || !(m >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "position {m} with trained context {trained}"
        )));
    }
    Ok(m * trained as f64 / target as f64)
}

fn check_dim(head_dim: usize) -> Result<()> {
    if head_dim <= 2 {
        return Err(Error::InvalidArgument(format!(
            "head_dim {head_dim} must exceed 2"
        )));
    }
    if !head_dim.is_multiple_of(2) {
        return Err(Error::OddHeadDim(head_dim));
    }
    Ok(())
}

fn scaled_base(base: f64, factor: f64, head_dim: usize) -> f64 {
    base * factor.powf(head_dim as f64 / (head_dim as f64 - 2.0))
}

/// NTK-aware base: `b * s^(D / (D - 2))`.
pub fn ntk_base(base: f64, scale: f64, head_dim: usize) -> Result<f64> {
    check_dim(head_dim)?;
    if !(scale >= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "ntk scale {scale} must be at least 1"
        )));
    }
    Ok(scaled_base(base, scale, head_dim))
}

/// Dynamic NTK base: `b * (alpha * s - (alpha - 1))^(D / (D - 2))`, exactly `b`
/// for `s <= 1`.
pub fn dynamic_ntk_base(base: f64, scale: f64, alpha: f64, head_dim: usize) -> Result<f64> {
    check_dim(head_dim)?;
    if !(alpha >= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha {alpha} must be at least 1"
        )));
    }
    if scale <= 1.0 {
        return Ok(base);
    }
    let factor = (alpha * scale - (alpha - 1.0)).max(1.0);
    Ok(scaled_base(base, factor, head_dim))
}

/// How positions are fed to the rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PositionMap {
    Identity,
    Interpolate { trained: usize, target: usize },
}

impl PositionMap {
    pub fn apply(&self, m: usize) -> f64 {
        match *self {
            PositionMap::Identity => m as f64,
            PositionMap::Interpolate { trained, target } => {
                m as f64 * trained as f64 / target as f64
            }
        }
    }

    pub fn positions(&self, seq: usize) -> Vec<f64> {
        (0..seq).map(|m| self.apply(m)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveRope {
    pub base: f64,
    pub positions: PositionMap,
}

/// Resolves a policy into the base and position map used for a sequence of
/// `seq_len` tokens.
///
/// Every policy leaves sequences that fit the trained context untouched, so
/// short inputs encode identically whichever policy is active.
pub fn effective_rope(
    params: &RopeParams,
    policy: &RopePolicy,
    seq_len: usize,
) -> Result<EffectiveRope> {
    if seq_len == 0 {
        return Err(Error::InvalidArgument(
            "sequence length must be positive".into(),
        ));
    }
    params.validate()?;
    policy.validate(params)?;
    let unchanged = EffectiveRope {
        base: params.base,
        positions: PositionMap::Identity,
    };
    let trained = params.trained_context;
    if policy.kind == RopeKind::None || seq_len <= trained {
        return Ok(unchanged);
    }
    let target = policy.target_context;
    Ok(match policy.kind {
        RopeKind::None => unchanged,
        RopeKind::PositionInterpolation => EffectiveRope {
            base: params.base,
            positions: PositionMap::Interpolate { trained, target },
        },
        RopeKind::NtkAware => {
            let s = target as f64 / trained as f64;
            EffectiveRope {
                base: ntk_base(params.base, s, params.head_dim)?,
                positions: PositionMap::Identity,
            }
        }
        RopeKind::DynamicNtk => {
            let s = seq_len as f64 / trained as f64;
            let base = dynamic_ntk_base(params.base, s, policy.alpha, params.head_dim)?;
            EffectiveRope {
                base,
                positions: PositionMap::Identity,
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> RopeParams {
        RopeParams::new(1000.0, 8, 64).unwrap()
    }

    #[test]
    fn params_validation() {
        assert!(matches!(
            RopeParams::new(1000.0, 7, 64),
            Err(Error::OddHeadDim(7))
        ));
        assert!(RopeParams::new(1000.0, 2, 64).is_err());
        assert!(RopeParams::new(1.0, 8, 64).is_err());
    }

    #[test]
    fn zero_position_is_identity() {
        let x = Tensor::from_fn(&[1, 8], |i| i as f64 - 3.5);
        let y = apply_rope(&x, &[0.0], 1000.0).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn apply_rope_errors() {
        let x = Tensor::zeros(&[2, 6]);
        assert!(matches!(
            apply_rope(&x, &[0.0], 1000.0),
            Err(Error::PositionLengthMismatch { .. })
        ));
        let odd = Tensor::zeros(&[2, 5]);
        assert!(matches!(
            apply_rope(&odd, &[0.0, 1.0], 1000.0),
            Err(Error::OddHeadDim(5))
        ));
    }

    #[test]
    fn interpolation_arithmetic() {
        assert_eq!(interpolate_positions(0.0, 2048, 8192).unwrap(), 0.0);
        assert_eq!(interpolate_positions(4096.0, 2048, 8192).unwrap(), 1024.0);
        assert_eq!(interpolate_positions(123.0, 64, 64).unwrap(), 123.0);
        assert!(interpolate_positions(1.0, 64, 32).is_err());
    }

    #[test]
    fn ntk_values() {
        assert_eq!(ntk_base(10_000.0, 1.0, 128).unwrap(), 10_000.0);
        let b = ntk_base(10_000.0, 4.0, 128).unwrap();
        assert!((b - 40_889.0).abs() < 1.0, "{b}");
        let b = ntk_base(1000.0, 2.0, 64).unwrap();
        assert_eq!(b, 1000.0 * 2f64.powf(64.0 / 62.0));
        assert!(ntk_base(1000.0, 2.0, 2).is_err());
    }

    #[test]
    fn dynamic_values() {
        for alpha in [1.0, 1.5, 2.0, 2.7, 8.0] {
            assert_eq!(dynamic_ntk_base(1000.0, 1.0, alpha, 64).unwrap(), 1000.0);
            assert_eq!(dynamic_ntk_base(1000.0, 0.25, alpha, 64).unwrap(), 1000.0);
        }
        let b = dynamic_ntk_base(1000.0, 2.0, 2.0, 64).unwrap();
        assert_eq!(b, 1000.0 * 3f64.powf(64.0 / 62.0));
        assert!(dynamic_ntk_base(1000.0, 2.0, 0.5, 64).is_err());
    }

    #[test]
    fn effective_rope_dispatch() {
        let p = params();
        let none = effective_rope(&p, &RopePolicy::none(), 10).unwrap();
        assert_eq!(
            none,
            EffectiveRope {
                base: 1000.0,
                positions: PositionMap::Identity
            }
        );

        let dynamic = effective_rope(&p, &RopePolicy::dynamic_ntk(2.0, 256), 64).unwrap();
        assert_eq!(dynamic, none);

        let pi = effective_rope(&p, &RopePolicy::position_interpolation(256), 200).unwrap();
        assert_eq!(pi.positions.apply(128), 32.0);
        assert_eq!(pi.base, 1000.0);

        let ntk = effective_rope(&p, &RopePolicy::ntk_aware(256), 200).unwrap();
        assert_eq!(ntk.base, ntk_base(1000.0, 4.0, 8).unwrap());
        assert_eq!(ntk.positions, PositionMap::Identity);

        let dynamic = effective_rope(&p, &RopePolicy::dynamic_ntk(2.0, 256), 128).unwrap();
        assert_eq!(dynamic.base, dynamic_ntk_base(1000.0, 2.0, 2.0, 8).unwrap());

        assert!(effective_rope(&p, &RopePolicy::ntk_aware(32), 10).is_err());
        assert!(effective_rope(&p, &RopePolicy::none(), 0).is_err());
    }
}
