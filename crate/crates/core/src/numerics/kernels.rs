use crate::error::{Error, Result};

use super::Tensor;

/// Norm below which [`cosine_similarity`] reports 0 instead of dividing.
pub const COSINE_EPS: f64 = 1e-12;

fn as_matrix(t: &Tensor, op: &str) -> Result<(usize, usize)> {
    match t.shape() {
        &[r, c] => Ok((r, c)),
        s => Err(Error::shape(format!("{op}: expected a matrix, got {s:?}"))),
    }
}

/// `a[m×k] · b[k×n]`, accumulated in f32 in i-p-j order.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = as_matrix(a, "matmul")?;
    let (k2, n) = as_matrix(b, "matmul")?;
    if k != k2 {
        return Err(Error::shape(format!(
            "matmul: inner dimensions disagree for {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0f32; m * n];
    for (i, out_row) in out.chunks_exact_mut(n.max(1)).enumerate().take(m) {
        let a_row = &ad[i * k..(i + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &bd[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// `a[m×k] · b[n×k]ᵀ`.
pub fn matmul_transposed(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    matmul(a, &b.transpose()?)
}

/// Row-wise softmax with per-row max subtraction.
pub fn softmax_rows(m: &Tensor) -> Result<Tensor> {
    let (r, c) = as_matrix(m, "softmax_rows")?;
    if c == 0 {
        return Err(Error::shape("softmax_rows: rows have zero length"));
    }
    let mut out = m.clone();
    for i in 0..r {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f64;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += f64::from(*v);
        }
        for v in row.iter_mut() {
            *v = (f64::from(*v) / sum) as f32;
        }
    }
    Ok(out)
}

/// Normalises every vector along the last axis to zero mean and unit
/// variance. No affine term is applied.
pub fn layer_norm(x: &Tensor, eps: f32) -> Result<Tensor> {
    let d = x.last_dim();
    if x.ndim() == 0 || d == 0 {
        return Err(Error::shape(format!(
            "layer_norm: last axis must be non-empty, got {:?}",
            x.shape()
        )));
    }
    if eps.is_nan() || eps < 0.0 {
        return Err(Error::Domain(format!("layer_norm: eps must be >= 0, got {eps}")));
    }
    let mut out = x.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let mean = row.iter().map(|&v| f64::from(v)).sum::<f64>() / d as f64;
        let var = row
            .iter()
            .map(|&v| (f64::from(v) - mean).powi(2))
            .sum::<f64>()
            / d as f64;
        let inv = 1.0 / (var + f64::from(eps)).sqrt();
        for v in row.iter_mut() {
            *v = ((f64::from(*v) - mean) * inv) as f32;
        }
    }
    if !out.is_finite() {
        return Err(Error::Domain(
            "layer_norm produced non-finite values (zero variance with eps = 0)".into(),
        ));
    }
    Ok(out)
}

/// Cosine of the angle between two equal-length slices, 0 if either norm is
/// below [`COSINE_EPS`].
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape(format!(
            "cosine_similarity: lengths {} and {} (both must match and be >= 1)",
            a.len(),
            b.len()
        )));
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    let (na, nb) = (na.sqrt(), nb.sqrt());
    if na < COSINE_EPS || nb < COSINE_EPS {
        return Ok(0.0);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Tanh approximation of GELU.
pub fn gelu(x: f32) -> f32 {
    const C: f32 = 0.797_884_6; // sqrt(2 / pi)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}
