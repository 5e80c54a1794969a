//! Forward kernels shared by the pure API and the tape.

use crate::error::{Error, Result};
use crate::numerics::matrix::{dot, Matrix};

fn check_len(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension(format!(
            "{what}: expected length {expected}, got {got}"
        )));
    }
    Ok(())
}

/// Normalized values and inverse standard deviation, before the affine step.
pub(crate) fn normalize(x: &[f64], eps: f64) -> (Vec<f64>, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let denom = (var + eps).sqrt();
    if denom == 0.0 {
        return (vec![0.0; x.len()], 0.0);
    }
    let inv = 1.0 / denom;
    (x.iter().map(|v| (v - mean) * inv).collect(), inv)
}

/// Layer normalization with population variance: `gain ⊙ (x − μ)/√(σ² + eps) + bias`.
///
/// A zero-variance input with `eps == 0` normalizes to zeros, so the output is `bias`.
pub fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64], eps: f64) -> Result<Vec<f64>> {
    check_len("layer_norm gain", x.len(), gain.len())?;
    check_len("layer_norm bias", x.len(), bias.len())?;
    if x.is_empty() {
        return Err(Error::Dimension("layer_norm of empty vector".into()));
    }
    if !(eps >= 0.0) {
        return Err(Error::Dimension(format!("layer_norm eps must be >= 0, got {eps}")));
    }
    let (normed, _) = normalize(x, eps);
    Ok(normed
        .iter()
        .zip(gain)
        .zip(bias)
        .map(|((n, g), b)| g * n + b)
        .collect())
}

/// Cosine similarity; zero when either argument has zero norm.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    check_len("cosine", u.len(), v.len())?;
    Ok(cosine_unchecked(u, v))
}

#[inline]
pub(crate) fn cosine_unchecked(u: &[f64], v: &[f64]) -> f64 {
    let nu = dot(u, u).sqrt();
    let nv = dot(v, v).sqrt();
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    (dot(u, v) / (nu * nv)).clamp(-1.0, 1.0)
}

/// Positions of the minimum and maximum, first occurrence wins.
pub(crate) fn argmin_argmax(s: &[f64]) -> (usize, usize) {
    let mut lo = 0;
    let mut hi = 0;
    for (i, &v) in s.iter().enumerate().skip(1) {
        if v < s[lo] {
            lo = i;
        }
        if v > s[hi] {
            hi = i;
        }
    }
    (lo, hi)
}

/// Min-max scaling to `[0, 1]`. An all-equal input maps to all ones.
pub fn min_max_scale(s: &[f64]) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Err(Error::Dimension("min_max_scale of empty vector".into()));
    }
    let (lo, hi) = argmin_argmax(s);
    let (min, max) = (s[lo], s[hi]);
    let range = max - min;
    if range == 0.0 {
        return Ok(vec![1.0; s.len()]);
    }
    Ok(s.iter().map(|v| (v - min) / range).collect())
}

/// Column-wise maximum over the rows where `mask` is set, plus the winning
/// row per column (lowest index on ties).
pub fn max_pool_rows_with_argmax(m: &Matrix, mask: &[bool]) -> Result<(Vec<f64>, Vec<usize>)> {
    check_len("max_pool_rows mask", m.rows(), mask.len())?;
    if !mask.iter().any(|&b| b) {
        return Err(Error::EmptyDomain("max pooling over an all-masked domain".into()));
    }
    let mut best = vec![f64::NEG_INFINITY; m.cols()];
    let mut arg = vec![usize::MAX; m.cols()];
    for (r, _) in mask.iter().enumerate().filter(|(_, &keep)| keep) {
        for (c, &v) in m.row(r).iter().enumerate() {
            if v > best[c] || arg[c] == usize::MAX {
                best[c] = v;
                arg[c] = r;
            }
        }
    }
    Ok((best, arg))
}

pub fn max_pool_rows(m: &Matrix, mask: &[bool]) -> Result<Vec<f64>> {
    max_pool_rows_with_argmax(m, mask).map(|(v, _)| v)
}

/// Numerically stable softmax.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Softmax restricted to unmasked entries; masked entries get probability 0.
pub fn masked_softmax(x: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    check_len("masked_softmax mask", x.len(), mask.len())?;
    let max = x
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&v, _)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::EmptyDomain("softmax over an all-masked vector".into()));
    }
    let exps: Vec<f64> = x
        .iter()
        .zip(mask)
        .map(|(&v, &m)| if m { (v - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// `log(softmax(x))` over unmasked entries; masked entries are `-inf`.
pub fn masked_log_softmax(x: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    check_len("masked_log_softmax mask", x.len(), mask.len())?;
    let max = x
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&v, _)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::EmptyDomain("softmax over an all-masked vector".into()));
    }
    let total: f64 = x
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&v, _)| (v - max).exp())
        .sum();
    let log_z = max + total.ln();
    Ok(x
        .iter()
        .zip(mask)
        .map(|(&v, &m)| if m { v - log_z } else { f64::NEG_INFINITY })
        .collect())
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Tanh approximation of GELU.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

#[inline]
pub(crate) fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let d_inner = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner
}
