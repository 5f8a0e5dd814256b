//! Discrete distributions over finite alphabets and the elementwise algebra
//! shared by propagation and learning.
//!
//! Everything is in the probability domain with 64-bit floats. Messages are
//! only ever proportional to distributions, so [`normalize`] is applied after
//! every block traversal.

use crate::error::{Error, Result};

/// Tolerance on `Σ p = 1` guaranteed by [`normalize`].
pub const NORMALIZATION_TOLERANCE: f64 = 1e-12;

/// Finite alphabet `{x¹, …, xᴹ}`; only its size matters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Alphabet(usize);

impl Alphabet {
    pub fn new(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidParameter("alphabet size must be >= 1".into()));
        }
        Ok(Alphabet(size))
    }

    pub fn size(self) -> usize {
        self.0
    }
}

/// Normalized nonnegative vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    values: Vec<f64>,
}

impl Distribution {
    pub fn uniform(size: usize) -> Self {
        assert!(size > 0, "empty alphabet");
        Distribution {
            values: vec![1.0 / size as f64; size],
        }
    }

    /// Delta at the 0-based symbol `index`.
    pub fn delta(size: usize, index: usize) -> Result<Self> {
        if index >= size {
            return Err(Error::InvalidIndex {
                index: index + 1,
                len: size,
            });
        }
        let mut values = vec![0.0; size];
        values[index] = 1.0;
        Ok(Distribution { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn alphabet(&self) -> Alphabet {
        Alphabet(self.values.len())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Lowest index of the maximum entry.
    pub fn argmax(&self) -> usize {
        argmax(&self.values)
    }

    pub fn max_abs_diff(&self, other: &Distribution) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl std::ops::Index<usize> for Distribution {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}

/// Forward and backward messages on one edge.
#[derive(Debug, Clone, PartialEq)]
pub struct MessagePair {
    pub forward: Distribution,
    pub backward: Distribution,
}

impl MessagePair {
    pub fn new(forward: Distribution, backward: Distribution) -> Result<Self> {
        if forward.len() != backward.len() {
            return Err(Error::LengthMismatch {
                left: forward.len(),
                right: backward.len(),
            });
        }
        Ok(MessagePair { forward, backward })
    }

    pub fn posterior(&self) -> Result<Distribution> {
        hadamard_posterior(&self.forward, &self.backward)
    }
}

/// Scales a nonnegative vector to sum to one.
///
/// Inputs that already sum to one within a few ulps are returned unchanged,
/// which makes the operation exactly idempotent.
pub fn normalize(v: &[f64]) -> Result<Distribution> {
    normalize_vec(v.to_vec())
}

pub(crate) fn normalize_vec(mut values: Vec<f64>) -> Result<Distribution> {
    debug_assert!(values.iter().all(|x| *x >= 0.0), "negative message entry");
    let sum: f64 = values.iter().sum();
    if !(sum > 0.0) || !sum.is_finite() {
        return Err(Error::AllZeroVector);
    }
    let slack = 4.0 * f64::EPSILON * values.len() as f64;
    if (sum - 1.0).abs() > slack {
        for x in values.iter_mut() {
            *x /= sum;
        }
    }
    Ok(Distribution { values })
}

/// `p ∝ f ⊙ b`.
pub fn hadamard_posterior(f: &Distribution, b: &Distribution) -> Result<Distribution> {
    posterior_of(f.values(), b.values())
}

/// Same as [`hadamard_posterior`] on raw (possibly unnormalized) vectors.
pub fn posterior_of(f: &[f64], b: &[f64]) -> Result<Distribution> {
    if f.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: f.len(),
            right: b.len(),
        });
    }
    normalize_vec(f.iter().zip(b).map(|(x, y)| x * y).collect())
}

/// `u .^ exponent`, normalized.
///
/// Entries are divided by the maximum before exponentiation so large
/// exponents do not underflow to an all-zero vector.
pub fn sharpen(u: &Distribution, exponent: f64) -> Result<Distribution> {
    if !(exponent > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sharpening exponent must be > 0, got {exponent}"
        )));
    }
    if exponent == 1.0 {
        return Ok(u.clone());
    }
    let max = u.values.iter().copied().fold(0.0, f64::max);
    normalize_vec(u.values.iter().map(|x| (x / max).powf(exponent)).collect())
}

/// `I_Max(p) + δ·1`, not normalized. Ties go to the lowest index.
pub fn max_indicator(p: &[f64], delta: f64) -> Vec<f64> {
    let k = argmax(p);
    let mut e = vec![delta; p.len()];
    e[k] += 1.0;
    e
}

/// `Σ p log(p/q)` with `0 log 0 = 0`.
pub fn kl_divergence(p: &Distribution, q: &Distribution) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    let mut d = 0.0;
    for (index, (&pj, &qj)) in p.values.iter().zip(&q.values).enumerate() {
        if pj > 0.0 {
            if qj <= 0.0 {
                return Err(Error::SupportMismatch { index });
            }
            d += pj * (pj / qj).ln();
        }
    }
    Ok(d.max(0.0))
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}
