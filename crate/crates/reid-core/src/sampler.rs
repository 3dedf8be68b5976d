//! PK batch construction: every batch holds P distinct identities with K
//! samples each, planned one epoch at a time. Identities are drawn without
//! replacement until the pool runs dry, then the pool reshuffles, so an
//! epoch of ceil(identities / P) batches covers every identity when the
//! identity count divides by P. This keeps training uniform across
//! identities regardless of how many samples each one has.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::Rng;

#[derive(Debug, Error, PartialEq)]
pub enum SamplerError {
    #[error("need at least {needed} eligible identities, found {found}")]
    TooFewIdentities { needed: usize, found: usize },
    #[error("invalid sampler config: {0}")]
    InvalidConfig(String),
}

/// What to do with identities that own fewer than K samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReplacementPolicy {
    /// Keep them: draw all their samples, then fill up to K with
    /// replacement. Dropping rare identities would skew the classifier's
    /// class set.
    Resample,
    /// Exclude them from the identity pool entirely.
    SkipIdentity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub p: usize,
    pub k: usize,
    pub seed: u64,
    pub replacement_policy: ReplacementPolicy,
}

impl SamplerConfig {
    pub fn new(p: usize, k: usize, seed: u64) -> Self {
        SamplerConfig {
            p,
            k,
            seed,
            replacement_policy: ReplacementPolicy::Resample,
        }
    }

    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.p < 2 || self.k < 2 {
            return Err(SamplerError::InvalidConfig(format!(
                "need P >= 2 and K >= 2, got P={} K={}",
                self.p, self.k
            )));
        }
        Ok(())
    }
}

pub fn batch_size(cfg: &SamplerConfig) -> usize {
    cfg.p * cfg.k
}

/// One epoch worth of batches; each entry lists dataset sample indices,
/// grouped K-at-a-time per identity.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochPlan {
    pub batches: Vec<Vec<usize>>,
}

/// Plans an epoch over `per_identity`: one `(identity, sample indices)`
/// entry per identity, in a caller-fixed order. Deterministic in
/// `(per_identity, cfg)`.
pub fn plan_epoch(
    per_identity: &[(i64, Vec<usize>)],
    cfg: &SamplerConfig,
) -> Result<EpochPlan, SamplerError> {
    cfg.validate()?;
    let eligible: Vec<usize> = per_identity
        .iter()
        .enumerate()
        .filter(|(_, (_, samples))| match cfg.replacement_policy {
            ReplacementPolicy::Resample => !samples.is_empty(),
            ReplacementPolicy::SkipIdentity => samples.len() >= cfg.k,
        })
        .map(|(i, _)| i)
        .collect();
    if eligible.len() < cfg.p {
        return Err(SamplerError::TooFewIdentities {
            needed: cfg.p,
            found: eligible.len(),
        });
    }

    let mut rng = Rng::new(cfg.seed);
    let n_batches = eligible.len().div_ceil(cfg.p);

    let mut pool: Vec<usize> = eligible.clone();
    rng.shuffle(&mut pool);

    let mut batches = Vec::with_capacity(n_batches);
    for _ in 0..n_batches {
        let mut chosen: Vec<usize> = Vec::with_capacity(cfg.p);
        while chosen.len() < cfg.p {
            if pool.is_empty() {
                pool = eligible.clone();
                rng.shuffle(&mut pool);
            }
            let id = pool.pop().expect("pool refilled above");
            // a refilled pool may repeat an identity already in this batch
            if !chosen.contains(&id) {
                chosen.push(id);
            }
        }

        let mut batch = Vec::with_capacity(cfg.p * cfg.k);
        for &idx in &chosen {
            let samples = &per_identity[idx].1;
            if samples.len() >= cfg.k {
                let mut order: Vec<usize> = (0..samples.len()).collect();
                rng.shuffle(&mut order);
                batch.extend(order[..cfg.k].iter().map(|&o| samples[o]));
            } else {
                // resample policy: every sample once, then repeats
                let mut order: Vec<usize> = (0..samples.len()).collect();
                rng.shuffle(&mut order);
                batch.extend(order.iter().map(|&o| samples[o]));
                for _ in samples.len()..cfg.k {
                    batch.push(samples[rng.below(samples.len())]);
                }
            }
        }
        batches.push(batch);
    }

    Ok(EpochPlan { batches })
}
