//! Identity classification losses: plain softmax cross-entropy over raw
//! logits, and the temperature-scaled softmax with an additive angular
//! margin over normalized features and normalized weight columns.

use super::{BatchEmbeddings, HeadWeights, LossConfig, LossError, LossOutput, MarginLogit};
use crate::numerics::{dot, l2_normalize, log_sum_exp, NumericsError};

fn validate_batch(batch: &BatchEmbeddings, heads: &HeadWeights) -> Result<(usize, usize), LossError> {
    let d = heads.identity_head.rows();
    let c = heads.identity_head.cols();
    if c < 2 {
        return Err(LossError::InvalidConfig(format!(
            "need at least 2 classes, head has {c}"
        )));
    }
    for (i, (emb, &label)) in batch.embeddings.iter().zip(&batch.labels).enumerate() {
        if emb.len() != d {
            return Err(NumericsError::DimMismatch {
                left: emb.len(),
                right: d,
            }
            .into());
        }
        if label >= c {
            return Err(LossError::InvalidLabel {
                sample: i,
                label,
                classes: c,
            });
        }
    }
    Ok((d, c))
}

/// Softmax cross-entropy over raw logits `W^T x (+ b)`, averaged over the
/// batch. Gradients cover embeddings, weight columns, and (when enabled)
/// the bias.
pub fn softmax_ce(
    batch: &BatchEmbeddings,
    heads: &HeadWeights,
    with_bias: bool,
) -> Result<LossOutput, LossError> {
    let (d, c) = validate_batch(batch, heads)?;
    let n = batch.len();
    if n == 0 {
        return Err(LossError::InvalidConfig("empty batch".into()));
    }

    let cols: Vec<Vec<f64>> = (0..c).map(|j| heads.identity_head.col_vec(j)).collect();
    let inv_n = 1.0 / n as f64;

    let mut value = 0.0;
    let mut grad_emb = vec![vec![0.0; d]; n];
    let mut grads = heads.zeros_like();

    for (i, (x, &y)) in batch.embeddings.iter().zip(&batch.labels).enumerate() {
        let mut logits: Vec<f64> = cols.iter().map(|w| dot(w, x)).collect();
        if with_bias {
            for (z, b) in logits.iter_mut().zip(&heads.bias) {
                *z += b;
            }
        }
        let lse = log_sum_exp(&logits)?;
        value += (lse - logits[y]) * inv_n;

        for j in 0..c {
            let g = ((logits[j] - lse).exp() - if j == y { 1.0 } else { 0.0 }) * inv_n;
            for r in 0..d {
                grad_emb[i][r] += g * cols[j][r];
                grads.identity_head.add_at(r, j, g * x[r]);
            }
            if with_bias {
                grads.bias[j] += g;
            }
        }
    }

    LossOutput {
        value,
        grad_embeddings: grad_emb,
        grad_weights: Some(grads),
        margin_overflows: 0,
    }
    .check_finite()
}

/// Additive-angular-margin softmax: features and weight columns are
/// l2-normalized, the target cosine gets the margin `m`, and all logits are
/// scaled by the temperature `s`. Averaged over the batch; gradients flow
/// through both normalizations.
pub fn am_softmax(
    batch: &BatchEmbeddings,
    heads: &HeadWeights,
    cfg: &LossConfig,
) -> Result<LossOutput, LossError> {
    cfg.validate()?;
    let (d, c) = validate_batch(batch, heads)?;
    let n = batch.len();
    if n == 0 {
        return Err(LossError::InvalidConfig("empty batch".into()));
    }

    // Normalize the stored columns once; gradients are mapped back through
    // this projection below.
    let mut w_hat = Vec::with_capacity(c);
    let mut w_norm = Vec::with_capacity(c);
    for j in 0..c {
        let (hat, nj) = l2_normalize(&heads.identity_head.col_vec(j))?;
        w_hat.push(hat);
        w_norm.push(nj);
    }

    let margin = MarginLogit::new(cfg.s, cfg.m);
    let inv_n = 1.0 / n as f64;

    let mut value = 0.0;
    let mut grad_emb = vec![vec![0.0; d]; n];
    let mut grads = heads.zeros_like();
    let mut margin_overflows = 0;

    for (i, (x, &y)) in batch.embeddings.iter().zip(&batch.labels).enumerate() {
        let (x_hat, x_norm) = l2_normalize(x)?;
        let cos: Vec<f64> = w_hat.iter().map(|w| dot(w, &x_hat)).collect();

        if margin.overflows(cos[y]) {
            margin_overflows += 1;
        }
        let (z_y, dz_y) = margin.target(cos[y]);
        let logits: Vec<f64> = (0..c)
            .map(|j| if j == y { z_y } else { margin.plain(cos[j]) })
            .collect();
        let lse = log_sum_exp(&logits)?;
        value += (lse - logits[y]) * inv_n;

        // dL/d cos_j, including the margin chain on the target
        let mut radial = 0.0; // coefficient on x_hat in the embedding gradient
        for j in 0..c {
            let p = (logits[j] - lse).exp();
            let dldz = p - if j == y { 1.0 } else { 0.0 };
            let t = dldz * if j == y { dz_y } else { cfg.s } * inv_n;

            // d cos_j / dx = (w_hat_j - cos_j * x_hat) / |x|
            for r in 0..d {
                grad_emb[i][r] += t * w_hat[j][r];
            }
            radial -= t * cos[j];

            // d cos_j / dW_j = (x_hat - cos_j * w_hat_j) / |W_j|
            let tw = t / w_norm[j];
            for r in 0..d {
                grads
                    .identity_head
                    .add_at(r, j, tw * (x_hat[r] - cos[j] * w_hat[j][r]));
            }
        }
        for r in 0..d {
            grad_emb[i][r] = (grad_emb[i][r] + radial * x_hat[r]) / x_norm;
        }
    }

    LossOutput {
        value,
        grad_embeddings: grad_emb,
        grad_weights: Some(grads),
        margin_overflows,
    }
    .check_finite()
}
