//! Retrieval evaluation: probes are ranked against the gallery by cosine
//! similarity on l2-normalized embeddings, gallery items sharing both
//! identity and camera with the probe are discarded (cross-camera matching
//! only), and the ranked relevance lists aggregate into CMC and mAP.

use thiserror::Error;

use crate::losses::{predict_attributes, HeadWeights, LossError, SlicePlan};
use crate::numerics::{dot, l2_normalize, NumericsError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("gallery is empty after same-view filtering (query {query})")]
    EmptyGalleryAfterFilter { query: usize },
    #[error("query {query} has no relevant gallery item")]
    NoRelevant { query: usize },
    #[error("ranked list is empty")]
    EmptyRanking,
    #[error(transparent)]
    Loss(#[from] LossError),
}

#[derive(Debug, Clone)]
pub struct EvalItem {
    pub embedding: Vec<f64>,
    pub identity: i64,
    pub camera: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// `cmc[k-1]` is the rank-k accuracy.
    pub cmc: Vec<f64>,
    pub map: f64,
    pub per_query_ap: Vec<f64>,
}

impl EvalReport {
    /// Rank-k accuracy, 1-indexed; saturates at the last computed rank.
    pub fn rank(&self, k: usize) -> f64 {
        assert!(k >= 1, "ranks are 1-indexed");
        self.cmc[(k - 1).min(self.cmc.len() - 1)]
    }

    /// CSV with one `rank_k` row per rank plus a final `map` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        for (i, v) in self.cmc.iter().enumerate() {
            out.push_str(&format!("rank_{},{v}\n", i + 1));
        }
        out.push_str(&format!("map,{}\n", self.map));
        out
    }

    /// Markdown table in the usual Rank-1/5/10 + mAP layout.
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| Rank-1 | Rank-5 | Rank-10 | mAP |\n|---|---|---|---|\n");
        out.push_str(&format!(
            "| {:.4} | {:.4} | {:.4} | {:.4} |\n",
            self.rank(1),
            self.rank(5),
            self.rank(10),
            self.map
        ));
        out
    }
}

/// Filters out gallery items sharing both identity and camera with the
/// probe, then returns gallery indices sorted by descending cosine
/// similarity (ties break toward the lower index).
pub fn rank_gallery(probe: &EvalItem, gallery: &[EvalItem]) -> Result<Vec<usize>, EvalError> {
    let (probe_hat, _) = l2_normalize(&probe.embedding)?;
    let mut scored: Vec<(usize, f64)> = Vec::new();
    for (i, item) in gallery.iter().enumerate() {
        if item.identity == probe.identity && item.camera == probe.camera {
            continue;
        }
        let (hat, _) = l2_normalize(&item.embedding)?;
        scored.push((i, dot(&probe_hat, &hat)));
    }
    if scored.is_empty() {
        return Err(EvalError::EmptyGalleryAfterFilter { query: 0 });
    }
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite cosines").then(a.0.cmp(&b.0)));
    Ok(scored.into_iter().map(|(i, _)| i).collect())
}

/// Average precision of a ranked binary relevance list, no interpolation:
/// mean over relevant positions r of (hits up to r) / r.
pub fn average_precision(flags: &[bool]) -> Result<f64, EvalError> {
    if flags.is_empty() {
        return Err(EvalError::EmptyRanking);
    }
    let relevant = flags.iter().filter(|&&f| f).count();
    if relevant == 0 {
        return Err(EvalError::NoRelevant { query: 0 });
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (r, &flag) in flags.iter().enumerate() {
        if flag {
            hits += 1;
            sum += hits as f64 / (r + 1) as f64;
        }
    }
    Ok(sum / relevant as f64)
}

/// 1-indexed rank of the first relevant item.
pub fn first_hit_rank(flags: &[bool]) -> Result<usize, EvalError> {
    flags
        .iter()
        .position(|&f| f)
        .map(|p| p + 1)
        .ok_or(EvalError::NoRelevant { query: 0 })
}

/// CMC from per-query first-hit ranks: `cmc[k-1]` is the fraction of
/// queries whose first hit lands at rank <= k.
pub fn cmc_from_ranks(hit_ranks: &[usize], max_k: usize) -> Vec<f64> {
    let n = hit_ranks.len().max(1) as f64;
    (1..=max_k)
        .map(|k| hit_ranks.iter().filter(|&&r| r <= k).count() as f64 / n)
        .collect()
}

/// Full protocol: rank every probe against the gallery, aggregate AP into
/// mAP and first hits into the CMC curve.
pub fn evaluate(probes: &[EvalItem], gallery: &[EvalItem]) -> Result<EvalReport, EvalError> {
    let mut per_query_ap = Vec::with_capacity(probes.len());
    let mut hit_ranks = Vec::with_capacity(probes.len());
    let mut max_len = 0usize;

    for (q, probe) in probes.iter().enumerate() {
        let ranked = rank_gallery(probe, gallery).map_err(|e| match e {
            EvalError::EmptyGalleryAfterFilter { .. } => {
                EvalError::EmptyGalleryAfterFilter { query: q }
            }
            other => other,
        })?;
        let flags: Vec<bool> = ranked
            .iter()
            .map(|&i| gallery[i].identity == probe.identity)
            .collect();
        let ap = average_precision(&flags).map_err(|e| match e {
            EvalError::NoRelevant { .. } => EvalError::NoRelevant { query: q },
            other => other,
        })?;
        per_query_ap.push(ap);
        hit_ranks.push(first_hit_rank(&flags)?);
        max_len = max_len.max(flags.len());
    }

    let map = per_query_ap.iter().sum::<f64>() / per_query_ap.len() as f64;
    let cmc = cmc_from_ranks(&hit_ranks, max_len.max(10));
    Ok(EvalReport {
        cmc,
        map,
        per_query_ap,
    })
}

/// Fraction of correctly predicted attribute bits over (samples x
/// attributes), using the trained attribute heads on each embedding.
pub fn attribute_accuracy(
    embeddings: &[Vec<f64>],
    truth: &[Vec<bool>],
    heads: &HeadWeights,
    plan: &SlicePlan,
) -> Result<f64, EvalError> {
    assert_eq!(embeddings.len(), truth.len());
    if embeddings.is_empty() || plan.attr_count == 0 {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    let mut total = 0usize;
    for (emb, bits) in embeddings.iter().zip(truth) {
        let pred = predict_attributes(emb, heads, plan)?;
        for (p, t) in pred.iter().zip(bits) {
            correct += (p == t) as usize;
            total += 1;
        }
    }
    Ok(correct as f64 / total as f64)
}
