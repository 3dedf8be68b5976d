//! Forward values and analytic gradients for the loss stack: plain softmax
//! cross-entropy, temperature-scaled softmax with an additive angular margin
//! on normalized features and weights, per-attribute two-way margin
//! classifiers on embedding slices, triplet losses (all-triplets and
//! batch-hard mining), and their weighted joint combinations.
//!
//! All losses return a [`LossOutput`]: the scalar value plus gradients with
//! respect to the batch embeddings and (where applicable) the head weights.
//! Gradients are hand-derived and flow through both the feature
//! normalization and the weight-column normalization. Per-sample terms are
//! accumulated in a fixed order so results are bit-reproducible.

mod attribute;
mod joint;
mod softmax;
mod triplet;

pub use attribute::{attribute_am, predict_attributes};
pub use joint::{full_joint, full_joint_with_parts, joint, joint_with_parts, JointParts};
pub use softmax::{am_softmax, softmax_ce};
pub use triplet::{batch_hard, triplet_all};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{Mat, NumericsError, COS_CLAMP};

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("label {label} out of range for {classes} classes (sample {sample})")]
    InvalidLabel {
        sample: usize,
        label: usize,
        classes: usize,
    },
    #[error("batch has no attribute bit-vectors but the loss needs them")]
    MissingAttributes,
    #[error("slice plan needs {needed} dims but the embedding has {available}")]
    SlicePlanOverflow { needed: usize, available: usize },
    #[error("no valid triplet in the batch")]
    NoValidTriplet,
    #[error("bad PK shape: {reason}")]
    BadPkShape { reason: String },
    #[error("invalid loss config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss value {0}")]
    NonFinite(f64),
}

/// Surrogate applied to the triplet argument `m + D_ap - D_an`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Surrogate {
    Hinge,
    Softplus,
}

impl Surrogate {
    pub fn value(self, arg: f64) -> f64 {
        match self {
            Surrogate::Hinge => arg.max(0.0),
            // max(x,0) + ln(1+exp(-|x|)) is stable for large |x|
            Surrogate::Softplus => arg.max(0.0) + (-arg.abs()).exp().ln_1p(),
        }
    }

    /// Subgradient at the hinge kink (arg == 0) is 0, keeping inactive
    /// triplets silent.
    pub fn derivative(self, arg: f64) -> f64 {
        match self {
            Surrogate::Hinge => {
                if arg > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Surrogate::Softplus => 1.0 / (1.0 + (-arg).exp()),
        }
    }
}

/// How triplet-family losses reduce their per-term sums. The softmax-family
/// losses always average over the batch, as their definitions do.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reduction {
    /// Plain sum over triplets/anchors (the double-sum as written).
    Sum,
    /// Mean over contributing terms; eases learning-rate portability
    /// across different P, K.
    Mean,
}

/// All scalar knobs of the loss stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Temperature: scale of the normalized logits (hypersphere radius).
    pub s: f64,
    /// Additive angular margin, radians.
    pub m: f64,
    /// Triplet margin.
    pub triplet_margin: f64,
    /// Weight of the metric (batch-hard) term in joint losses.
    pub gamma: f64,
    /// Weight of the attribute term in the full joint loss.
    pub lambda: f64,
    pub surrogate: Surrogate,
    /// When set, triplet distances are taken between l2-normalized
    /// features instead of raw ones.
    pub normalize_triplet_features: bool,
    pub reduction: Reduction,
}

impl Default for LossConfig {
    fn default() -> Self {
        // s and the triplet margin are conventional defaults; both are
        // configurable everywhere they are used.
        LossConfig {
            s: 30.0,
            m: 0.0,
            triplet_margin: 0.3,
            gamma: 0.0,
            lambda: 0.0,
            surrogate: Surrogate::Hinge,
            normalize_triplet_features: false,
            reduction: Reduction::Sum,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        if !self.s.is_finite() || self.s <= 0.0 {
            return Err(LossError::InvalidConfig(format!(
                "temperature s must be positive, got {}",
                self.s
            )));
        }
        if !(0.0..std::f64::consts::FRAC_PI_2).contains(&self.m) {
            return Err(LossError::InvalidConfig(format!(
                "margin m must lie in [0, pi/2), got {}",
                self.m
            )));
        }
        if self.triplet_margin < 0.0 || self.gamma < 0.0 || self.lambda < 0.0 {
            return Err(LossError::InvalidConfig(
                "triplet_margin, gamma, lambda must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// How an embedding splits into per-attribute slices plus the identity
/// remainder: attribute slice `k` covers `[k*slice_dim, (k+1)*slice_dim)`,
/// the identity part covers everything after `attr_count * slice_dim`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlicePlan {
    pub attr_count: usize,
    pub slice_dim: usize,
    pub embed_dim: usize,
}

impl SlicePlan {
    pub fn new(attr_count: usize, slice_dim: usize, embed_dim: usize) -> Result<Self, LossError> {
        let needed = attr_count * slice_dim;
        if needed > embed_dim {
            return Err(LossError::SlicePlanOverflow {
                needed,
                available: embed_dim,
            });
        }
        Ok(SlicePlan {
            attr_count,
            slice_dim,
            embed_dim,
        })
    }

    pub fn attr_range(&self, k: usize) -> std::ops::Range<usize> {
        debug_assert!(k < self.attr_count);
        k * self.slice_dim..(k + 1) * self.slice_dim
    }

    pub fn id_range(&self) -> std::ops::Range<usize> {
        self.attr_count * self.slice_dim..self.embed_dim
    }

    pub fn id_dim(&self) -> usize {
        self.embed_dim - self.attr_count * self.slice_dim
    }
}

/// A batch of embeddings with identity labels, optional attribute
/// bit-vectors, and an optional PK shape (P identities x K samples).
#[derive(Debug, Clone)]
pub struct BatchEmbeddings {
    pub embeddings: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub attributes: Option<Vec<Vec<bool>>>,
    pub pk_shape: Option<(usize, usize)>,
}

impl BatchEmbeddings {
    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    /// Checks the PK invariant: exactly P distinct labels, each appearing
    /// exactly K times.
    pub fn validate_pk(&self) -> Result<(usize, usize), LossError> {
        let (p, k) = self.pk_shape.ok_or_else(|| LossError::BadPkShape {
            reason: "pk_shape not set".into(),
        })?;
        if p < 2 || k < 2 {
            return Err(LossError::BadPkShape {
                reason: format!("need P >= 2 and K >= 2, got P={p} K={k}"),
            });
        }
        if self.len() != p * k {
            return Err(LossError::BadPkShape {
                reason: format!("batch size {} != P*K = {}", self.len(), p * k),
            });
        }
        let mut counts = std::collections::BTreeMap::new();
        for &l in &self.labels {
            *counts.entry(l).or_insert(0usize) += 1;
        }
        if counts.len() != p || counts.values().any(|&c| c != k) {
            return Err(LossError::BadPkShape {
                reason: format!(
                    "expected {p} identities x {k} samples, got counts {counts:?}"
                ),
            });
        }
        Ok((p, k))
    }
}

/// Classifier head weights. Columns are re-normalized to unit norm inside
/// every margin-loss forward pass; the stored values stay raw so gradients
/// can flow through the normalization. The bias is only read by the plain
/// softmax loss and stays identically zero under every margin loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadWeights {
    /// d_id x c; column j belongs to identity class j.
    pub identity_head: Mat,
    /// One q x 2 matrix per attribute; column 0 is "not present",
    /// column 1 is "present".
    pub attribute_heads: Vec<Mat>,
    pub bias: Vec<f64>,
}

impl HeadWeights {
    pub fn zeros_like(&self) -> HeadWeights {
        HeadWeights {
            identity_head: Mat::zeros(self.identity_head.rows(), self.identity_head.cols()),
            attribute_heads: self
                .attribute_heads
                .iter()
                .map(|m| Mat::zeros(m.rows(), m.cols()))
                .collect(),
            bias: vec![0.0; self.bias.len()],
        }
    }

    pub fn classes(&self) -> usize {
        self.identity_head.cols()
    }

    /// Adds `scale * other` into `self`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &HeadWeights, scale: f64) {
        for (a, b) in self
            .identity_head
            .data_mut()
            .iter_mut()
            .zip(other.identity_head.data())
        {
            *a += scale * b;
        }
        for (am, bm) in self.attribute_heads.iter_mut().zip(&other.attribute_heads) {
            for (a, b) in am.data_mut().iter_mut().zip(bm.data()) {
                *a += scale * b;
            }
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += scale * b;
        }
    }
}

/// Scalar loss value plus gradients mirroring the input shapes.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub value: f64,
    pub grad_embeddings: Vec<Vec<f64>>,
    /// Present for losses that touch head weights.
    pub grad_weights: Option<HeadWeights>,
    /// How many target cosines fell past alpha + m > pi, where the
    /// unconditional margin expansion bends back. The formula is applied
    /// as written; callers surface the count.
    pub margin_overflows: usize,
}

impl LossOutput {
    pub(crate) fn check_finite(self) -> Result<Self, LossError> {
        if !self.value.is_finite() {
            return Err(LossError::NonFinite(self.value));
        }
        Ok(self)
    }
}

/// Additive-angular-margin transform of the target cosine, with the
/// analytic expansion cos(a+m) = cos a * cos m - sin a * sin m evaluated on
/// the clamped cosine. Returns the scaled logit and its derivative with
/// respect to the (unclamped) cosine.
#[derive(Debug, Clone, Copy)]
pub(crate) struct MarginLogit {
    s: f64,
    cos_m: f64,
    sin_m: f64,
}

impl MarginLogit {
    pub(crate) fn new(s: f64, m: f64) -> Self {
        MarginLogit {
            s,
            cos_m: m.cos(),
            sin_m: m.sin(),
        }
    }

    pub(crate) fn target(&self, cos: f64) -> (f64, f64) {
        let clamped = cos.clamp(-COS_CLAMP, COS_CLAMP);
        let sin = (1.0 - clamped * clamped).sqrt();
        let z = self.s * (clamped * self.cos_m - sin * self.sin_m);
        let dz = if cos.abs() >= COS_CLAMP {
            // the clamp is flat: the implemented function has zero slope here
            0.0
        } else {
            self.s * (self.cos_m + clamped * self.sin_m / sin)
        };
        (z, dz)
    }

    pub(crate) fn plain(&self, cos: f64) -> f64 {
        self.s * cos
    }

    /// True when alpha + m > pi, i.e. the margin pushed the target past
    /// the antipode and the expansion is no longer monotone.
    pub(crate) fn overflows(&self, cos: f64) -> bool {
        cos < -self.cos_m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn surrogate_values() {
        assert_eq!(Surrogate::Hinge.value(0.2), 0.2);
        assert_eq!(Surrogate::Hinge.value(-0.5), 0.0);
        assert_eq!(Surrogate::Hinge.value(0.0), 0.0);
        assert_eq!(Surrogate::Hinge.derivative(0.0), 0.0);
        let sp = Surrogate::Softplus;
        assert!((sp.value(0.0) - 2.0f64.ln()).abs() < 1e-12);
        // stability at large arguments
        assert!((sp.value(800.0) - 800.0).abs() < 1e-9);
        assert!(sp.value(-800.0).abs() < 1e-9);
        assert!((sp.derivative(0.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn slice_plan_partitions() {
        let plan = SlicePlan::new(2, 2, 8).unwrap();
        assert_eq!(plan.attr_range(0), 0..2);
        assert_eq!(plan.attr_range(1), 2..4);
        assert_eq!(plan.id_range(), 4..8);
        assert_eq!(plan.id_dim(), 4);
    }

    #[test]
    fn slice_plan_market_scale() {
        // 27 attributes x 16 dims out of a 2048-dim embedding
        let plan = SlicePlan::new(27, 16, 2048).unwrap();
        assert_eq!(plan.id_dim(), 1616);
    }

    #[test]
    fn slice_plan_no_attributes() {
        let plan = SlicePlan::new(0, 16, 8).unwrap();
        assert_eq!(plan.id_range(), 0..8);
    }

    #[test]
    fn slice_plan_overflow() {
        assert_eq!(
            SlicePlan::new(3, 4, 8),
            Err(LossError::SlicePlanOverflow {
                needed: 12,
                available: 8
            })
        );
    }

    #[test]
    fn config_validation() {
        let mut cfg = LossConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.m = 2.0;
        assert!(cfg.validate().is_err());
        cfg.m = 0.5;
        cfg.s = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn pk_validation() {
        let batch = BatchEmbeddings {
            embeddings: vec![vec![0.0]; 4],
            labels: vec![0, 0, 1, 1],
            attributes: None,
            pk_shape: Some((2, 2)),
        };
        assert_eq!(batch.validate_pk().unwrap(), (2, 2));

        let bad = BatchEmbeddings {
            labels: vec![0, 0, 0, 1],
            ..batch.clone()
        };
        assert!(bad.validate_pk().is_err());
    }

    #[test]
    fn margin_logit_matches_direct_cos() {
        let ml = MarginLogit::new(2.0, 0.4);
        let alpha = 1.1f64;
        let (z, _) = ml.target(alpha.cos());
        assert!((z - 2.0 * (alpha + 0.4).cos()).abs() < 1e-12);
    }
}
