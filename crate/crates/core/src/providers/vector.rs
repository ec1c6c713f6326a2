use serde::{Deserialize, Serialize};

use super::ProviderError;

/// Fixed-dimension embedding. Vectors handed out by an
/// [`EmbeddingService`](super::EmbeddingService) are unit length, or exactly
/// zero for empty text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }

    /// Scale to unit length. The zero vector stays zero.
    pub fn normalized(mut self) -> Self {
        let norm = self.norm();
        if norm > 0.0 {
            for x in &mut self.0 {
                *x /= norm;
            }
        }
        self
    }
}

/// Cosine of the angle between `a` and `b`, clamped to `[-1, 1]`. Zero when
/// either vector is zero.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, ProviderError> {
    if a.dim() != b.dim() {
        return Err(ProviderError::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.values().iter().zip(b.values()) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Exact top-`k` by cosine similarity to `query`: score descending, ties by
/// ascending key.
pub fn rank_by_similarity<'a, K, I>(
    query: &EmbeddingVector,
    candidates: I,
    k: usize,
) -> Result<Vec<(K, f64)>, ProviderError>
where
    K: Ord,
    I: IntoIterator<Item = (K, &'a EmbeddingVector)>,
{
    let mut scored = candidates
        .into_iter()
        .map(|(key, v)| cosine_similarity(query, v).map(|s| (key, s)))
        .collect::<Result<Vec<_>, _>>()?;
    scored.sort_by(|(ka, sa), (kb, sb)| sb.total_cmp(sa).then_with(|| ka.cmp(kb)));
    scored.truncate(k);
    Ok(scored)
}
