//! Central finite-difference verification of analytic gradients.

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Outcome of [`finite_diff_check`] for one input leaf.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafReport {
    pub leaf: usize,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub leaves: Vec<LeafReport>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.leaves.iter().all(|l| l.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.leaves
            .iter()
            .map(|l| l.max_rel_error)
            .fold(0.0, f64::max)
    }
}

/// Magnitude below which differences are measured absolutely rather than
/// relative to the gradient, so entries that are zero up to rounding do not
/// report spurious relative error.
pub const REL_ERROR_FLOOR: f64 = 1e-4;

/// Relative error with [`REL_ERROR_FLOOR`] as the smallest denominator.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares the gradient of the scalar built by `f` against central
/// differences `(f(x + ε) - f(x - ε)) / 2ε`, element by element, for every
/// input.
pub fn finite_diff_check<F>(
    f: F,
    inputs: &[Tensor],
    epsilon: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(epsilon > 0.0 && epsilon <= 1e-2) {
        return Err(TensorError::InvalidArgument(format!(
            "epsilon {epsilon} outside (0, 1e-2]"
        )));
    }
    let mut g = Graph::new();
    let vars = inputs
        .iter()
        .map(|t| g.variable(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let analytic = vars
        .iter()
        .map(|&v| g.grad_or_zeros(v))
        .collect::<Result<Vec<_>>>()?;

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars = perturbed
            .iter()
            .map(|t| g.constant(t.clone()))
            .collect::<Result<Vec<_>>>()?;
        let out = f(&mut g, &vars)?;
        g.value(out).item()
    };

    let mut work = inputs.to_vec();
    let mut leaves = Vec::with_capacity(inputs.len());
    for (leaf, grad) in analytic.iter().enumerate() {
        let (mut max_abs, mut max_rel) = (0.0f64, 0.0f64);
        for i in 0..work[leaf].numel() {
            let original = work[leaf].data()[i];
            work[leaf].data_mut()[i] = original + epsilon;
            let plus = eval(&work)?;
            work[leaf].data_mut()[i] = original - epsilon;
            let minus = eval(&work)?;
            work[leaf].data_mut()[i] = original;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = grad.data()[i];
            max_abs = max_abs.max((a - numeric).abs());
            max_rel = max_rel.max(relative_error(a, numeric));
        }
        leaves.push(LeafReport {
            leaf,
            max_abs_error: max_abs,
            max_rel_error: max_rel,
            passed: max_rel <= tolerance,
        });
    }
    Ok(GradCheckReport { leaves })
}
