use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::Params;

pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    pub weight_decay: f64,
    /// Maximum global gradient norm; `None` disables clipping.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_clip: Option<f64>,
}

fn default_eps() -> f64 {
    ADAM_EPS
}

/// What one update did to the gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub grad_norm: f64,
    pub clipped: bool,
}

/// Scales `grads` so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut Params, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

/// AdamW with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    m: Params,
    v: Params,
    t: u64,
}

impl AdamW {
    pub fn new(config: AdamWConfig, params: &Params) -> Self {
        Self {
            config,
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update at learning rate `lr`; `grads` is clipped in place first
    /// when clipping is configured.
    pub fn step(&mut self, params: &mut Params, grads: &mut Params, lr: f64) -> Result<StepStats> {
        let c = self.config;
        let grad_norm = grads.global_norm();
        let clipped = match c.grad_clip {
            Some(max) => {
                clip_global_norm(grads, max);
                grad_norm > max
            }
            None => false,
        };
        for (name, g) in grads.iter() {
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
        }
        if grads.len() != params.len() {
            return Err(Error::InvalidArgument(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }

        self.t += 1;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let decay = 1.0 - lr * c.weight_decay;
        for (name, p) in params.iter_mut() {
            let g = grads.get(name).ok_or_else(|| Error::WeightShape {
                name: name.clone(),
                detail: "no gradient".into(),
            })?;
            let m = self.m.get_mut(name).expect("moments mirror parameters");
            let v = self.v.get_mut(name).expect("moments mirror parameters");
            if g.shape() != p.shape() {
                return Err(Error::WeightShape {
                    name: name.clone(),
                    detail: format!("gradient {:?} vs parameter {:?}", g.shape(), p.shape()),
                });
            }
            let (m, v) = (m.data_mut(), v.data_mut());
            for (i, (pi, gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *pi = *pi * decay - lr * m_hat / (v_hat.sqrt() + c.eps);
            }
        }
        Ok(StepStats { grad_norm, clipped })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use longembed_autodiff::Tensor;

    fn one(name: &str, v: f64) -> Params {
        [(name.to_string(), Tensor::full(&[1], v))]
            .into_iter()
            .collect()
    }

    fn cfg(wd: f64, clip: Option<f64>) -> AdamWConfig {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: ADAM_EPS,
            weight_decay: wd,
            grad_clip: clip,
        }
    }

    #[test]
    fn decoupled_decay_only() {
        let mut p = one("w", 3.0);
        let mut opt = AdamW::new(cfg(0.01, None), &p);
        opt.step(&mut p, &mut one("w", 0.0), 0.1).unwrap();
        assert_eq!(p.get("w").unwrap().data()[0], 3.0 * (1.0 - 0.1 * 0.01));

        let mut p = one("w", 3.0);
        let mut opt = AdamW::new(cfg(0.0, None), &p);
        opt.step(&mut p, &mut one("w", 0.0), 0.1).unwrap();
        assert_eq!(p.get("w").unwrap().data()[0], 3.0);
    }

    #[test]
    fn first_step_by_hand() {
        let mut p = one("w", 1.0);
        let mut opt = AdamW::new(cfg(0.0, None), &p);
        opt.step(&mut p, &mut one("w", 1.0), 0.1).unwrap();
        // m_hat = 1, v_hat = 1 after bias correction.
        let expected = 1.0 - 0.1 * 1.0 / (1.0 + 1e-8);
        assert!((p.get("w").unwrap().data()[0] - expected).abs() < 1e-15);
        assert_eq!(opt.steps_taken(), 1);
    }

    #[test]
    fn clipping_and_non_finite() {
        let mut g: Params = [(
            "a".to_string(),
            Tensor::new(vec![2], vec![3.0, 4.0]).unwrap(),
        )]
        .into_iter()
        .collect();
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!(g.global_norm() <= 1.0 + 1e-12);
        let before = g.clone();
        clip_global_norm(&mut g, 2.0);
        assert_eq!(g, before);

        let mut p = one("w", 1.0);
        let mut opt = AdamW::new(cfg(0.0, Some(1.0)), &p);
        let err = opt.step(&mut p, &mut one("w", f64::NAN), 0.1).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(_)));
        assert_eq!(p.get("w").unwrap().data()[0], 1.0);
    }
}
