//! Triplet losses: the all-triplets form over every valid (anchor,
//! positive, negative) combination, and the batch-hard form that keeps only
//! the farthest positive and nearest negative per anchor within a PK batch.
//!
//! Distances are Euclidean, on raw features by default or on l2-normalized
//! features when `normalize_triplet_features` is set; in the normalized
//! case gradients are mapped back through the normalization.

use super::{BatchEmbeddings, LossConfig, LossError, LossOutput, Reduction};
use crate::numerics::{dot, euclidean_distance, l2_normalize};

/// Distances below this are treated as having zero gradient (the sqrt kink).
const MIN_GRAD_DIST: f64 = 1e-12;

struct Features {
    feats: Vec<Vec<f64>>,
    /// Original norms when the features were normalized.
    norms: Option<Vec<f64>>,
}

impl Features {
    fn prepare(batch: &BatchEmbeddings, normalize: bool) -> Result<Self, LossError> {
        if normalize {
            let mut feats = Vec::with_capacity(batch.len());
            let mut norms = Vec::with_capacity(batch.len());
            for emb in &batch.embeddings {
                let (hat, n) = l2_normalize(emb)?;
                feats.push(hat);
                norms.push(n);
            }
            Ok(Features {
                feats,
                norms: Some(norms),
            })
        } else {
            Ok(Features {
                feats: batch.embeddings.clone(),
                norms: None,
            })
        }
    }

    /// Maps feature-space gradients back to embedding space.
    fn back_map(&self, grad_feats: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
        match &self.norms {
            None => grad_feats,
            Some(norms) => grad_feats
                .into_iter()
                .zip(self.feats.iter().zip(norms))
                .map(|(g, (hat, &n))| {
                    let radial = dot(&g, hat);
                    g.iter()
                        .zip(hat)
                        .map(|(gi, hi)| (gi - radial * hi) / n)
                        .collect()
                })
                .collect(),
        }
    }
}

/// Adds the gradient of `weight * (D_ap - D_an)` for one selected triplet
/// into `grad`, in feature space.
fn accumulate_pair_grads(
    grad: &mut [Vec<f64>],
    feats: &[Vec<f64>],
    (a, p, n): (usize, usize, usize),
    (d_ap, d_an): (f64, f64),
    weight: f64,
) {
    if d_ap > MIN_GRAD_DIST {
        let w = weight / d_ap;
        for r in 0..feats[a].len() {
            let diff = feats[a][r] - feats[p][r];
            grad[a][r] += w * diff;
            grad[p][r] -= w * diff;
        }
    }
    if d_an > MIN_GRAD_DIST {
        let w = weight / d_an;
        for r in 0..feats[a].len() {
            let diff = feats[a][r] - feats[n][r];
            grad[a][r] -= w * diff;
            grad[n][r] += w * diff;
        }
    }
}

/// Sum of the surrogate over every valid ordered triplet: anchors and
/// positives share an identity (a != p), negatives differ.
pub fn triplet_all(batch: &BatchEmbeddings, cfg: &LossConfig) -> Result<LossOutput, LossError> {
    cfg.validate()?;
    let n = batch.len();
    let features = Features::prepare(batch, cfg.normalize_triplet_features)?;
    let feats = &features.feats;

    let mut value = 0.0;
    let mut count = 0usize;
    let mut grad = vec![vec![0.0; batch.embeddings.first().map_or(0, |e| e.len())]; n];

    for a in 0..n {
        for p in 0..n {
            if p == a || batch.labels[p] != batch.labels[a] {
                continue;
            }
            let d_ap = euclidean_distance(&feats[a], &feats[p])?;
            for neg in 0..n {
                if batch.labels[neg] == batch.labels[a] {
                    continue;
                }
                let d_an = euclidean_distance(&feats[a], &feats[neg])?;
                let arg = cfg.triplet_margin + d_ap - d_an;
                value += cfg.surrogate.value(arg);
                count += 1;
                let w = cfg.surrogate.derivative(arg);
                if w != 0.0 {
                    accumulate_pair_grads(&mut grad, feats, (a, p, neg), (d_ap, d_an), w);
                }
            }
        }
    }

    if count == 0 {
        return Err(LossError::NoValidTriplet);
    }
    if let Reduction::Mean = cfg.reduction {
        let n_terms = count as f64;
        value /= n_terms;
        for g in &mut grad {
            for v in g.iter_mut() {
                *v /= n_terms;
            }
        }
    }

    LossOutput {
        value,
        grad_embeddings: features.back_map(grad),
        grad_weights: None,
        margin_overflows: 0,
    }
    .check_finite()
}

/// Batch-hard triplet loss over a PK batch: per anchor, the farthest
/// same-identity sample (self excluded) and the nearest other-identity
/// sample form the only contributing triplet. Ties break to the lowest
/// sample index; gradients route only through the selected pairs.
pub fn batch_hard(batch: &BatchEmbeddings, cfg: &LossConfig) -> Result<LossOutput, LossError> {
    cfg.validate()?;
    batch.validate_pk()?;
    let n = batch.len();
    let features = Features::prepare(batch, cfg.normalize_triplet_features)?;
    let feats = &features.feats;

    // full distance matrix; n = P*K stays small
    let mut dist = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = euclidean_distance(&feats[i], &feats[j])?;
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }

    let mut value = 0.0;
    let mut grad = vec![vec![0.0; feats[0].len()]; n];

    for a in 0..n {
        let mut hardest_pos: Option<(usize, f64)> = None;
        let mut hardest_neg: Option<(usize, f64)> = None;
        for other in 0..n {
            if other == a {
                continue;
            }
            let d = dist[a][other];
            if batch.labels[other] == batch.labels[a] {
                // strict > keeps the lowest index on ties
                if hardest_pos.is_none_or(|(_, best)| d > best) {
                    hardest_pos = Some((other, d));
                }
            } else if hardest_neg.is_none_or(|(_, best)| d < best) {
                hardest_neg = Some((other, d));
            }
        }
        // the PK invariant guarantees both exist
        let (p, d_ap) = hardest_pos.expect("K >= 2 guarantees a positive");
        let (neg, d_an) = hardest_neg.expect("P >= 2 guarantees a negative");

        let arg = cfg.triplet_margin + d_ap - d_an;
        value += cfg.surrogate.value(arg);
        let w = cfg.surrogate.derivative(arg);
        if w != 0.0 {
            accumulate_pair_grads(&mut grad, feats, (a, p, neg), (d_ap, d_an), w);
        }
    }

    if let Reduction::Mean = cfg.reduction {
        let n_anchors = n as f64;
        value /= n_anchors;
        for g in &mut grad {
            for v in g.iter_mut() {
                *v /= n_anchors;
            }
        }
    }

    LossOutput {
        value,
        grad_embeddings: features.back_map(grad),
        grad_weights: None,
        margin_overflows: 0,
    }
    .check_finite()
}
