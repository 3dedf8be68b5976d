//! Joint losses: margin softmax plus the gamma-weighted batch-hard term,
//! and the full three-term loss that adds lambda-weighted attribute
//! classification with the identity terms restricted to the identity slice.

use super::{
    am_softmax, attribute_am, batch_hard, BatchEmbeddings, HeadWeights, LossConfig, LossError,
    LossOutput, SlicePlan,
};

/// Per-term values of a joint loss, before weighting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointParts {
    pub am: f64,
    pub bh: f64,
    pub attr: f64,
}

/// `am_softmax + gamma * batch_hard` over the same batch. The batch-hard
/// term uses unnormalized Euclidean distances unless
/// `cfg.normalize_triplet_features` is set.
pub fn joint(
    batch: &BatchEmbeddings,
    heads: &HeadWeights,
    cfg: &LossConfig,
) -> Result<LossOutput, LossError> {
    joint_with_parts(batch, heads, cfg).map(|(out, _)| out)
}

pub fn joint_with_parts(
    batch: &BatchEmbeddings,
    heads: &HeadWeights,
    cfg: &LossConfig,
) -> Result<(LossOutput, JointParts), LossError> {
    let am = am_softmax(batch, heads, cfg)?;
    let bh = batch_hard(batch, cfg)?;

    let mut grad_embeddings = am.grad_embeddings;
    for (g, gb) in grad_embeddings.iter_mut().zip(&bh.grad_embeddings) {
        for (v, vb) in g.iter_mut().zip(gb) {
            *v += cfg.gamma * vb;
        }
    }

    let parts = JointParts {
        am: am.value,
        bh: bh.value,
        attr: 0.0,
    };
    let out = LossOutput {
        value: am.value + cfg.gamma * bh.value,
        grad_embeddings,
        grad_weights: am.grad_weights,
        margin_overflows: am.margin_overflows,
    }
    .check_finite()?;
    Ok((out, parts))
}

/// The full loss: margin softmax on the identity slice, lambda-weighted
/// attribute loss on the attribute slices, and gamma-weighted batch-hard
/// on the identity slice only.
pub fn full_joint(
    batch: &BatchEmbeddings,
    heads: &HeadWeights,
    cfg: &LossConfig,
    plan: &SlicePlan,
) -> Result<LossOutput, LossError> {
    full_joint_with_parts(batch, heads, cfg, plan).map(|(out, _)| out)
}

pub fn full_joint_with_parts(
    batch: &BatchEmbeddings,
    heads: &HeadWeights,
    cfg: &LossConfig,
    plan: &SlicePlan,
) -> Result<(LossOutput, JointParts), LossError> {
    if batch.attributes.is_none() {
        return Err(LossError::MissingAttributes);
    }
    for emb in &batch.embeddings {
        if emb.len() != plan.embed_dim {
            return Err(LossError::SlicePlanOverflow {
                needed: plan.embed_dim,
                available: emb.len(),
            });
        }
    }
    if heads.identity_head.rows() != plan.id_dim() {
        return Err(LossError::InvalidConfig(format!(
            "identity head expects {} dims but the identity slice has {}",
            heads.identity_head.rows(),
            plan.id_dim()
        )));
    }

    let id_range = plan.id_range();
    let id_batch = BatchEmbeddings {
        embeddings: batch
            .embeddings
            .iter()
            .map(|e| e[id_range.clone()].to_vec())
            .collect(),
        labels: batch.labels.clone(),
        attributes: None,
        pk_shape: batch.pk_shape,
    };

    let am = am_softmax(&id_batch, heads, cfg)?;
    let bh = batch_hard(&id_batch, cfg)?;
    let attr = attribute_am(batch, heads, cfg, plan)?;

    // attribute gradients live on the leading slices; scatter the identity
    // terms into the trailing slice
    let mut grad_embeddings: Vec<Vec<f64>> = attr
        .grad_embeddings
        .into_iter()
        .map(|g| g.into_iter().map(|v| cfg.lambda * v).collect())
        .collect();
    for (i, g) in grad_embeddings.iter_mut().enumerate() {
        let slice = &mut g[id_range.clone()];
        for (r, v) in slice.iter_mut().enumerate() {
            *v += am.grad_embeddings[i][r] + cfg.gamma * bh.grad_embeddings[i][r];
        }
    }

    let mut grad_weights = am.grad_weights.expect("am_softmax always returns head grads");
    let attr_grads = attr.grad_weights.expect("attribute_am always returns head grads");
    for (dst, src) in grad_weights
        .attribute_heads
        .iter_mut()
        .zip(&attr_grads.attribute_heads)
    {
        for (a, b) in dst.data_mut().iter_mut().zip(src.data()) {
            *a += cfg.lambda * b;
        }
    }

    let parts = JointParts {
        am: am.value,
        bh: bh.value,
        attr: attr.value,
    };
    let out = LossOutput {
        value: am.value + cfg.lambda * attr.value + cfg.gamma * bh.value,
        grad_embeddings,
        grad_weights: Some(grad_weights),
        margin_overflows: am.margin_overflows + attr.margin_overflows,
    }
    .check_finite()?;
    Ok((out, parts))
}
