//! Per-attribute two-way angular-margin classification on embedding
//! slices. Each of the M binary attributes owns a contiguous slice of the
//! embedding and a pair of weight columns ("not present" / "present"); the
//! margin is applied to the column matching the attribute bit.

use super::{BatchEmbeddings, HeadWeights, LossConfig, LossError, LossOutput, MarginLogit, SlicePlan};
use crate::numerics::{dot, l2_normalize, log_sum_exp};

fn validate(
    batch: &BatchEmbeddings,
    heads: &HeadWeights,
    plan: &SlicePlan,
) -> Result<(), LossError> {
    let attrs = batch.attributes.as_ref().ok_or(LossError::MissingAttributes)?;
    if plan.attr_count == 0 {
        return Err(LossError::InvalidConfig(
            "attribute loss called with zero attribute slices".into(),
        ));
    }
    if heads.attribute_heads.len() != plan.attr_count {
        return Err(LossError::InvalidConfig(format!(
            "{} attribute heads but slice plan has {}",
            heads.attribute_heads.len(),
            plan.attr_count
        )));
    }
    for (k, head) in heads.attribute_heads.iter().enumerate() {
        if head.rows() != plan.slice_dim || head.cols() != 2 {
            return Err(LossError::InvalidConfig(format!(
                "attribute head {k} is {}x{}, expected {}x2",
                head.rows(),
                head.cols(),
                plan.slice_dim
            )));
        }
    }
    for (i, (emb, bits)) in batch.embeddings.iter().zip(attrs).enumerate() {
        if emb.len() != plan.embed_dim {
            return Err(LossError::SlicePlanOverflow {
                needed: plan.embed_dim,
                available: emb.len(),
            });
        }
        if bits.len() != plan.attr_count {
            return Err(LossError::InvalidConfig(format!(
                "sample {i} has {} attribute bits, expected {}",
                bits.len(),
                plan.attr_count
            )));
        }
    }
    Ok(())
}

/// Sum over attributes of a two-class margin softmax on the attribute's
/// slice, averaged over the batch. Gradients land only on the attribute
/// slices of the embeddings and on the attribute head columns.
pub fn attribute_am(
    batch: &BatchEmbeddings,
    heads: &HeadWeights,
    cfg: &LossConfig,
    plan: &SlicePlan,
) -> Result<LossOutput, LossError> {
    cfg.validate()?;
    validate(batch, heads, plan)?;
    let attrs = batch.attributes.as_ref().unwrap();
    let n = batch.len();
    if n == 0 {
        return Err(LossError::InvalidConfig("empty batch".into()));
    }

    // Normalize each head's two columns once per call.
    let mut col_hat = Vec::with_capacity(plan.attr_count);
    let mut col_norm = Vec::with_capacity(plan.attr_count);
    for head in &heads.attribute_heads {
        let (c0, n0) = l2_normalize(&head.col_vec(0))?;
        let (c1, n1) = l2_normalize(&head.col_vec(1))?;
        col_hat.push([c0, c1]);
        col_norm.push([n0, n1]);
    }

    let margin = MarginLogit::new(cfg.s, cfg.m);
    let inv_n = 1.0 / n as f64;
    let q = plan.slice_dim;

    let mut value = 0.0;
    let mut grad_emb = vec![vec![0.0; plan.embed_dim]; n];
    let mut grads = heads.zeros_like();
    let mut margin_overflows = 0;

    for (i, (emb, bits)) in batch.embeddings.iter().zip(attrs).enumerate() {
        for k in 0..plan.attr_count {
            let range = plan.attr_range(k);
            let slice = &emb[range.clone()];
            let (v_hat, v_norm) = l2_normalize(slice)?;

            let target = bits[k] as usize;
            let other = 1 - target;
            let cos_t = dot(&col_hat[k][target], &v_hat);
            let cos_o = dot(&col_hat[k][other], &v_hat);

            if margin.overflows(cos_t) {
                margin_overflows += 1;
            }
            let (z_t, dz_t) = margin.target(cos_t);
            let z_o = margin.plain(cos_o);
            let lse = log_sum_exp(&[z_t, z_o])?;
            value += (lse - z_t) * inv_n;

            let p_t = (z_t - lse).exp();
            let p_o = (z_o - lse).exp();
            let t_t = (p_t - 1.0) * dz_t * inv_n;
            let t_o = p_o * cfg.s * inv_n;

            // slice gradient through the slice normalization
            let radial = -(t_t * cos_t + t_o * cos_o);
            let gslice = &mut grad_emb[i][range];
            for r in 0..q {
                gslice[r] += (t_t * col_hat[k][target][r]
                    + t_o * col_hat[k][other][r]
                    + radial * v_hat[r])
                    / v_norm;
            }

            // column gradients through the column normalization
            for (t_col, col) in [(t_t, target), (t_o, other)] {
                let tw = t_col / col_norm[k][col];
                let cos = if col == target { cos_t } else { cos_o };
                for r in 0..q {
                    grads.attribute_heads[k].add_at(
                        r,
                        col,
                        tw * (v_hat[r] - cos * col_hat[k][col][r]),
                    );
                }
            }
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

/// Predicts each attribute bit by comparing the two column cosines on the
/// attribute's slice (no margin at prediction time).
pub fn predict_attributes(
    embedding: &[f64],
    heads: &HeadWeights,
    plan: &SlicePlan,
) -> Result<Vec<bool>, LossError> {
    if embedding.len() != plan.embed_dim {
        return Err(LossError::SlicePlanOverflow {
            needed: plan.embed_dim,
            available: embedding.len(),
        });
    }
    let mut bits = Vec::with_capacity(plan.attr_count);
    for (k, head) in heads.attribute_heads.iter().enumerate() {
        let slice = &embedding[plan.attr_range(k)];
        let (v_hat, _) = l2_normalize(slice)?;
        let (c0, _) = l2_normalize(&head.col_vec(0))?;
        let (c1, _) = l2_normalize(&head.col_vec(1))?;
        bits.push(dot(&c1, &v_hat) > dot(&c0, &v_hat));
    }
    Ok(bits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Mat;
    use crate::rng::Rng;

    /// One attribute, slice aligned with the "present" column and
    /// orthogonal to "absent": reduces to a 2-class margin softmax with
    /// target cosine 1 and other cosine 0.
    #[test]
    fn aligned_single_attribute() {
        let plan = SlicePlan::new(1, 2, 2).unwrap();
        let batch = BatchEmbeddings {
            embeddings: vec![vec![0.0, 1.0]],
            labels: vec![0],
            attributes: Some(vec![vec![true]]),
            pk_shape: None,
        };
        let heads = HeadWeights {
            identity_head: Mat::zeros(0, 2),
            attribute_heads: vec![Mat::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0])],
            bias: vec![],
        };
        let cfg = LossConfig {
            s: 1.0,
            m: 0.0,
            ..LossConfig::default()
        };
        let out = attribute_am(&batch, &heads, &cfg, &plan).unwrap();
        let expected = (-1.0f64).exp().ln_1p();
        assert!((out.value - expected).abs() < 1e-6, "value {}", out.value);
    }

    /// The absent case with mirrored geometry gives the identical loss.
    #[test]
    fn absent_is_symmetric() {
        let plan = SlicePlan::new(1, 2, 2).unwrap();
        let heads = HeadWeights {
            identity_head: Mat::zeros(0, 2),
            attribute_heads: vec![Mat::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0])],
            bias: vec![],
        };
        let cfg = LossConfig {
            s: 3.0,
            m: 0.2,
            ..LossConfig::default()
        };
        let present = BatchEmbeddings {
            embeddings: vec![vec![0.3, 0.9]],
            labels: vec![0],
            attributes: Some(vec![vec![true]]),
            pk_shape: None,
        };
        let absent = BatchEmbeddings {
            embeddings: vec![vec![0.9, 0.3]],
            labels: vec![0],
            attributes: Some(vec![vec![false]]),
            pk_shape: None,
        };
        let a = attribute_am(&present, &heads, &cfg, &plan).unwrap();
        let b = attribute_am(&absent, &heads, &cfg, &plan).unwrap();
        assert!((a.value - b.value).abs() < 1e-15);
    }

    /// M = 3 equals the sum of three independent single-attribute losses on
    /// the corresponding slices.
    #[test]
    fn additive_over_attributes() {
        let mut rng = Rng::new(33);
        let q = 2;
        let plan3 = SlicePlan::new(3, q, 6).unwrap();
        let heads3 = HeadWeights {
            identity_head: Mat::zeros(0, 2),
            attribute_heads: (0..3)
                .map(|_| Mat::from_vec(q, 2, (0..q * 2).map(|_| rng.normal()).collect()))
                .collect(),
            bias: vec![],
        };
        let emb: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
        let bits = vec![true, false, true];
        let batch3 = BatchEmbeddings {
            embeddings: vec![emb.clone()],
            labels: vec![0],
            attributes: Some(vec![bits.clone()]),
            pk_shape: None,
        };
        let cfg = LossConfig {
            s: 5.0,
            m: 0.25,
            ..LossConfig::default()
        };
        let total = attribute_am(&batch3, &heads3, &cfg, &plan3).unwrap();

        let mut sum = 0.0;
        for k in 0..3 {
            let plan1 = SlicePlan::new(1, q, q).unwrap();
            let batch1 = BatchEmbeddings {
                embeddings: vec![emb[k * q..(k + 1) * q].to_vec()],
                labels: vec![0],
                attributes: Some(vec![vec![bits[k]]]),
                pk_shape: None,
            };
            let heads1 = HeadWeights {
                identity_head: Mat::zeros(0, 2),
                attribute_heads: vec![heads3.attribute_heads[k].clone()],
                bias: vec![],
            };
            sum += attribute_am(&batch1, &heads1, &cfg, &plan1).unwrap().value;
        }
        assert!((total.value - sum).abs() < 1e-12);
    }

    #[test]
    fn missing_attributes_is_error() {
        let plan = SlicePlan::new(1, 2, 2).unwrap();
        let batch = BatchEmbeddings {
            embeddings: vec![vec![1.0, 0.0]],
            labels: vec![0],
            attributes: None,
            pk_shape: None,
        };
        let heads = HeadWeights {
            identity_head: Mat::zeros(0, 2),
            attribute_heads: vec![Mat::eye(2)],
            bias: vec![],
        };
        assert!(matches!(
            attribute_am(&batch, &heads, &LossConfig::default(), &plan),
            Err(LossError::MissingAttributes)
        ));
    }

    #[test]
    fn gradient_zero_outside_attribute_slices() {
        let mut rng = Rng::new(5);
        let plan = SlicePlan::new(2, 2, 8).unwrap();
        let heads = HeadWeights {
            identity_head: Mat::zeros(4, 3),
            attribute_heads: (0..2)
                .map(|_| Mat::from_vec(2, 2, (0..4).map(|_| rng.normal()).collect()))
                .collect(),
            bias: vec![],
        };
        let batch = BatchEmbeddings {
            embeddings: vec![(0..8).map(|_| rng.normal()).collect()],
            labels: vec![0],
            attributes: Some(vec![vec![true, false]]),
            pk_shape: None,
        };
        let out = attribute_am(&batch, &heads, &LossConfig::default(), &plan).unwrap();
        for r in plan.id_range() {
            assert_eq!(out.grad_embeddings[0][r], 0.0);
        }
    }

    #[test]
    fn predict_recovers_aligned_bits() {
        let plan = SlicePlan::new(2, 2, 4).unwrap();
        let heads = HeadWeights {
            identity_head: Mat::zeros(0, 2),
            attribute_heads: vec![
                Mat::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]),
                Mat::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]),
            ],
            bias: vec![],
        };
        // slice 0 points at the "present" column, slice 1 at "absent"
        let emb = vec![0.1, 0.9, 0.9, 0.1];
        let bits = predict_attributes(&emb, &heads, &plan).unwrap();
        assert_eq!(bits, vec![true, false]);
    }
}
