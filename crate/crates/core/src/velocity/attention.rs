use crate::error::{Error, Result};
use crate::numerics::{matmul, matmul_transposed, softmax_rows, Tensor};

use super::tap::LayerKV;

fn cols(t: &Tensor, name: &str) -> Result<(usize, usize)> {
    match t.shape() {
        &[r, c] => Ok((r, c)),
        s => Err(Error::shape(format!("{name}: expected a matrix, got {s:?}"))),
    }
}

/// `softmax(q kᵀ / sqrt(d)) v` for a single head.
pub fn attention(q: &Tensor, k: &Tensor, v: &Tensor, head_dim: usize) -> Result<Tensor> {
    let (_, dq) = cols(q, "query")?;
    let (nk, dk) = cols(k, "key")?;
    let (nv, _) = cols(v, "value")?;
    if dq != head_dim || dk != head_dim {
        return Err(Error::shape(format!(
            "attention: head_dim {head_dim} but query has {dq} and key has {dk} columns"
        )));
    }
    if nk != nv {
        return Err(Error::shape(format!(
            "attention: {nk} keys but {nv} values"
        )));
    }
    let scale = 1.0 / (head_dim as f32).sqrt();
    let logits = matmul_transposed(q, k)?.scale(scale);
    matmul(&softmax_rows(&logits)?, v)
}

/// Self-attention over an augmented context: the editing path's keys and
/// values are concatenated (editing rows first) with the reconstruction
/// path's, and the editing queries attend over the union.
///
/// An empty reconstruction context (zero rows) reduces to plain attention.
pub fn enriched_attention(
    q: &Tensor,
    k_edit: &Tensor,
    v_edit: &Tensor,
    k_res: &Tensor,
    v_res: &Tensor,
    head_dim: usize,
) -> Result<Tensor> {
    let (ne, _) = cols(k_edit, "k_edit")?;
    let (nev, dv) = cols(v_edit, "v_edit")?;
    let (nr, dkr) = cols(k_res, "k_res")?;
    let (nrv, dvr) = cols(v_res, "v_res")?;
    if ne != nev || nr != nrv {
        return Err(Error::shape(format!(
            "enriched_attention: token counts disagree (k_edit {ne} / v_edit {nev}, k_res {nr} / v_res {nrv})"
        )));
    }
    if nr == 0 {
        return attention(q, k_edit, v_edit, head_dim);
    }
    if dkr != head_dim || dvr != dv {
        return Err(Error::shape(format!(
            "enriched_attention: reconstruction context is {dkr}/{dvr} wide, expected {head_dim}/{dv}"
        )));
    }
    let k_aug = Tensor::concat_rows(&[k_edit, k_res])?;
    let v_aug = Tensor::concat_rows(&[v_edit, v_res])?;
    attention(q, &k_aug, &v_aug, head_dim)
}

/// Multi-head attention over `[tokens × model_dim]` projections. When
/// `context` is given, every head is enriched with the matching column slice
/// of the context keys and values.
pub fn multi_head_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    num_heads: usize,
    context: Option<&LayerKV>,
) -> Result<Tensor> {
    let (n, d_model) = cols(q, "query")?;
    if num_heads == 0 || d_model % num_heads != 0 {
        return Err(Error::shape(format!(
            "model dim {d_model} is not divisible into {num_heads} heads"
        )));
    }
    let hd = d_model / num_heads;
    let mut out = Tensor::zeros(&[n, d_model]);
    for h in 0..num_heads {
        let (a, b) = (h * hd, (h + 1) * hd);
        let qh = q.slice_cols(a, b)?;
        let kh = k.slice_cols(a, b)?;
        let vh = v.slice_cols(a, b)?;
        let head = match context {
            None => attention(&qh, &kh, &vh, hd)?,
            Some(ctx) => {
                if ctx.k.last_dim() != d_model || ctx.v.last_dim() != d_model {
                    return Err(Error::shape(format!(
                        "context keys {:?} / values {:?} do not match model dim {d_model}",
                        ctx.k.shape(),
                        ctx.v.shape()
                    )));
                }
                enriched_attention(
                    &qh,
                    &kh,
                    &vh,
                    &ctx.k.slice_cols(a, b)?,
                    &ctx.v.slice_cols(a, b)?,
                    hd,
                )?
            }
        };
        out.set_cols(a, &head)?;
    }
    Ok(out)
}
