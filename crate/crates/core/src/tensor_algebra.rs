//! Truncated tensor algebra over R^d.
//!
//! An element of T^N(R^d) collects one coefficient per word over the alphabet
//! {1, ..., d} of length at most N:
//!
//! ```text
//!   T^N(R^d) = R  (+)  R^d  (+)  (R^d)^(x)2  (+)  ...  (+)  (R^d)^(x)N
//! ```
//!
//! Coefficients live in a single flat array, level-major: the level-0 scalar
//! first, then the d level-1 entries, then the d^2 level-2 entries, and so on.
//! Within a level, words are ordered lexicographically, so the word
//! (i_1, ..., i_k) with letters in 1..=d sits at in-level index
//! (i_1 - 1) d^(k-1) + ... + (i_k - 1).
//!
//! Multiplication is the tensor product truncated at level N: level n of a*b
//! is the convolution sum over k = 0..=n of a_k (x) b_(n-k). The exponential
//! of a level-1 increment v puts v^(x)n / n! at level n; together with the
//! product it is the basic building block of path signatures.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of coefficients in T^N(R^d), which is sum_{k=0}^{N} d^k.
pub fn algebra_len(dim: usize, depth: usize) -> usize {
    let mut len = 1usize;
    let mut pow = 1usize;
    for _ in 0..depth {
        pow *= dim;
        len += pow;
    }
    len
}

/// Offset of the level-k block inside the flat coefficient array.
pub fn level_offset(dim: usize, level: usize) -> usize {
    let mut off = 0usize;
    let mut pow = 1usize;
    for _ in 0..level {
        off += pow;
        pow *= dim;
    }
    off
}

/// An element of the truncated tensor algebra T^N(R^d).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncatedTensor {
    dim: usize,
    depth: usize,
    coeffs: Vec<f64>,
}

impl TruncatedTensor {
    /// The zero element.
    pub fn zero(dim: usize, depth: usize) -> Result<Self> {
        if dim < 1 {
            return Err(Error::Invalid("tensor dimension must be >= 1".into()));
        }
        Ok(Self {
            dim,
            depth,
            coeffs: vec![0.0; algebra_len(dim, depth)],
        })
    }

    /// The multiplicative unit: 1 at level 0, zero elsewhere.
    pub fn unit(dim: usize, depth: usize) -> Result<Self> {
        let mut t = Self::zero(dim, depth)?;
        t.coeffs[0] = 1.0;
        Ok(t)
    }

    /// Wraps an existing flat coefficient array.
    pub fn from_coeffs(dim: usize, depth: usize, coeffs: Vec<f64>) -> Result<Self> {
        if dim < 1 {
            return Err(Error::Invalid("tensor dimension must be >= 1".into()));
        }
        let want = algebra_len(dim, depth);
        if coeffs.len() != want {
            return Err(Error::Shape(format!(
                "tensor coefficients: got {} values, want {} for dim {} depth {}",
                coeffs.len(),
                want,
                dim,
                depth
            )));
        }
        if coeffs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor coefficients".into()));
        }
        Ok(Self { dim, depth, coeffs })
    }

    /// Truncated exponential of a level-1 increment: level n holds
    /// increment^(x)n / n!.
    pub fn exp(increment: &[f64], depth: usize) -> Result<Self> {
        let d = increment.len();
        if d < 1 {
            return Err(Error::Invalid("exp: increment must be non-empty".into()));
        }
        if increment.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("exp: increment".into()));
        }
        let mut t = Self::zero(d, depth)?;
        t.coeffs[0] = 1.0;
        let mut off_prev = 0usize;
        let mut len_prev = 1usize;
        for n in 1..=depth {
            let off = off_prev + len_prev;
            let inv = 1.0 / n as f64;
            for u in 0..len_prev {
                let a = t.coeffs[off_prev + u] * inv;
                for (i, &dx) in increment.iter().enumerate() {
                    t.coeffs[off + u * d + i] = a * dx;
                }
            }
            off_prev = off;
            len_prev *= d;
        }
        Ok(t)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    /// The level-k coefficient block.
    pub fn level(&self, k: usize) -> &[f64] {
        let off = level_offset(self.dim, k);
        let len = self.dim.pow(k as u32);
        &self.coeffs[off..off + len]
    }

    fn check_same(&self, other: &Self, what: &str) -> Result<()> {
        if self.dim != other.dim || self.depth != other.depth {
            return Err(Error::Shape(format!(
                "{what}: dim/depth ({}, {}) vs ({}, {})",
                self.dim, self.depth, other.dim, other.depth
            )));
        }
        Ok(())
    }

    /// Coefficient-wise sum.
    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same(other, "add")?;
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Self {
            dim: self.dim,
            depth: self.depth,
            coeffs,
        })
    }

    /// Coefficient-wise scaling.
    pub fn scale(&self, c: f64) -> Self {
        Self {
            dim: self.dim,
            depth: self.depth,
            coeffs: self.coeffs.iter().map(|a| a * c).collect(),
        }
    }

    /// Truncated tensor product. Level n of the result is the convolution
    /// sum over k = 0..=n of self_k (x) other_(n-k); words longer than the
    /// truncation depth are dropped.
    pub fn tensor_mul(&self, other: &Self) -> Result<Self> {
        self.check_same(other, "tensor_mul")?;
        let d = self.dim;
        let mut offs = Vec::with_capacity(self.depth + 1);
        let mut pows = Vec::with_capacity(self.depth + 1);
        {
            let mut off = 0usize;
            let mut pow = 1usize;
            for _ in 0..=self.depth {
                offs.push(off);
                pows.push(pow);
                off += pow;
                pow *= d;
            }
        }
        let mut out = vec![0.0; self.coeffs.len()];
        for n in 0..=self.depth {
            for k in 0..=n {
                let (off_a, len_a) = (offs[k], pows[k]);
                let (off_b, len_b) = (offs[n - k], pows[n - k]);
                for u in 0..len_a {
                    let a = self.coeffs[off_a + u];
                    let base = offs[n] + u * len_b;
                    for v in 0..len_b {
                        out[base + v] += a * other.coeffs[off_b + v];
                    }
                }
            }
        }
        Ok(Self {
            dim: d,
            depth: self.depth,
            coeffs: out,
        })
    }

    /// Euclidean norm of the full flat coefficient array, level 0 included.
    pub fn l2_norm(&self) -> f64 {
        self.coeffs.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Euclidean distance between two elements of the same algebra.
    pub fn l2_distance(&self, other: &Self) -> Result<f64> {
        self.check_same(other, "l2_distance")?;
        Ok(self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }
}
