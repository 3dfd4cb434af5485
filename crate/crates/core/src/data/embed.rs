use crate::error::Result;

/// Anything that maps texts to dense vectors, one per text.
pub trait TextEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>>;
}

impl<F> TextEmbedder for F
where
    F: Fn(&[String]) -> Result<Vec<Vec<f64>>>,
{
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        self(texts)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sq_norm(a: &[f64]) -> f64 {
    dot(a, a)
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    cosine_with_sq_norms(a, sq_norm(a), b, sq_norm(b))
}

/// Cosine from precomputed squared norms. Taking one square root of the
/// product keeps exactly parallel integer vectors at exactly 1.
pub(crate) fn cosine_with_sq_norms(a: &[f64], na: f64, b: &[f64], nb: f64) -> f64 {
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_basics() {
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 2.0]), 0.0);
        assert!((cosine(&[3.0, 4.0], &[6.0, 8.0]) - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 1.0]), 0.0);
    }
}
