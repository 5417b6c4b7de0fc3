//! Truncated path signatures.
//!
//! The signature of a path collects its iterated integrals up to a truncation
//! depth. For a piecewise-linear path it has a closed form: each linear
//! segment contributes the tensor exponential of its increment, and the
//! signature of the whole path is the left-to-right product of the segment
//! exponentials (the multiplicative property of signatures over
//! concatenation). Folding segments this way is exact, not a quadrature.
//!
//! Signatures only see increments, so two paths that differ by a constant
//! shift have the same signature, and reparametrizing the time axis without
//! changing the traversed polyline leaves it unchanged. Prepending the
//! running time as an extra channel (time augmentation) makes the signature
//! a faithful summary of the sampled path up to translation; adding a
//! basepoint knot pins the translation too.

use crate::error::{Error, Result};
use crate::paths::PiecewiseLinearPath;
use crate::tensor_algebra::TruncatedTensor;

/// The depth-N signature of a piecewise-linear path.
pub fn path_signature(path: &PiecewiseLinearPath, depth: usize) -> Result<TruncatedTensor> {
    if depth < 1 {
        return Err(Error::Invalid("signature depth must be >= 1".into()));
    }
    let d = path.dim();
    let n = path.n_knots();
    let mut increment = vec![0.0; d];
    let mut sig: Option<TruncatedTensor> = None;
    for i in 0..n - 1 {
        let a = path.knot_value(i);
        let b = path.knot_value(i + 1);
        for j in 0..d {
            increment[j] = b[j] - a[j];
        }
        let seg = TruncatedTensor::exp(&increment, depth)?;
        sig = Some(match sig {
            None => seg,
            Some(s) => s.tensor_mul(&seg)?,
        });
    }
    // A partition always has >= 2 knots, so at least one segment contributed.
    Ok(sig.unwrap())
}

/// Arithmetic mean of the signatures of a family of paths, accumulated in
/// index order so the result is reproducible bit for bit.
pub fn expected_signature(paths: &[PiecewiseLinearPath], depth: usize) -> Result<TruncatedTensor> {
    if paths.is_empty() {
        return Err(Error::Invalid("expected_signature over an empty family".into()));
    }
    let mut acc = path_signature(&paths[0], depth)?;
    for p in &paths[1..] {
        acc = acc.add(&path_signature(p, depth)?)?;
    }
    Ok(acc.scale(1.0 / paths.len() as f64))
}

/// Applies a linear functional, given as a row-major (out_dim x sig_len)
/// weight matrix, to the flat signature coefficients.
pub fn linear_functional_apply(weights: &[f64], sig: &TruncatedTensor) -> Result<Vec<f64>> {
    let n = sig.coeffs().len();
    if weights.is_empty() || !weights.len().is_multiple_of(n) {
        return Err(Error::Shape(format!(
            "linear functional: {} weights is not a multiple of signature length {}",
            weights.len(),
            n
        )));
    }
    let out_dim = weights.len() / n;
    let mut out = vec![0.0; out_dim];
    for (r, o) in out.iter_mut().enumerate() {
        let row = &weights[r * n..(r + 1) * n];
        *o = row.iter().zip(sig.coeffs()).map(|(w, c)| w * c).sum();
    }
    Ok(out)
}
