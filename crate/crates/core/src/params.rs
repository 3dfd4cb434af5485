use std::collections::BTreeMap;

use longembed_autodiff::{Graph, Tensor, Var};

use crate::error::{Error, Result};

/// Named tensors in a fixed (sorted) order: weights, gradients and optimizer
/// moments all share this shape.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Params(BTreeMap<String, Tensor>);

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.0.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.0.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.0.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.0.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.0.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.0.keys()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.0.values().map(Tensor::numel).sum()
    }

    /// Zero tensors with the same names and shapes.
    pub fn zeros_like(&self) -> Self {
        Self(
            self.0
                .iter()
                .map(|(k, t)| (k.clone(), Tensor::zeros(t.shape())))
                .collect(),
        )
    }

    /// `self += other`, name by name.
    pub fn accumulate(&mut self, other: &Params) -> Result<()> {
        for (name, t) in &other.0 {
            let dst = self.0.get_mut(name).ok_or_else(|| Error::WeightShape {
                name: name.clone(),
                detail: "not present".into(),
            })?;
            if dst.shape() != t.shape() {
                return Err(Error::WeightShape {
                    name: name.clone(),
                    detail: format!("{:?} vs {:?}", dst.shape(), t.shape()),
                });
            }
            dst.data_mut()
                .iter_mut()
                .zip(t.data())
                .for_each(|(d, s)| *d += s);
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.0.values_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.0
            .values()
            .flat_map(|t| t.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Largest `|a - b| / max(|a|, |b|)` over matching entries (0 where both are 0).
    pub fn max_rel_diff(&self, other: &Params) -> f64 {
        let mut worst = 0.0f64;
        for (name, a) in &self.0 {
            let Some(b) = other.0.get(name) else {
                return f64::INFINITY;
            };
            if a.shape() != b.shape() {
                return f64::INFINITY;
            }
            for (x, y) in a.data().iter().zip(b.data()) {
                let scale = x.abs().max(y.abs());
                if scale > 0.0 {
                    worst = worst.max((x - y).abs() / scale);
                }
            }
        }
        worst
    }

    /// Registers every tensor as a graph leaf.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Result<BoundParams> {
        let mut vars = BTreeMap::new();
        for (name, t) in &self.0 {
            vars.insert(name.clone(), g.leaf(t.clone(), trainable)?);
        }
        Ok(BoundParams(vars))
    }
}

impl FromIterator<(String, Tensor)> for Params {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

/// Graph handles for a [`Params`] set.
#[derive(Debug, Clone)]
pub struct BoundParams(BTreeMap<String, Var>);

impl BoundParams {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.0.get(name).copied().ok_or_else(|| Error::WeightShape {
            name: name.to_string(),
            detail: "missing weight".into(),
        })
    }

    /// Reads every gradient after `backward`; unreached weights get zeros.
    pub fn grads(&self, g: &Graph) -> Result<Params> {
        self.0
            .iter()
            .map(|(name, &v)| Ok((name.clone(), g.grad_or_zeros(v)?)))
            .collect()
    }
}
