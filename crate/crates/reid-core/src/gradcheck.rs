//! Finite-difference verification of every analytic gradient in the loss
//! stack.
//!
//! For each loss kind, random cases are drawn, the full parameter vector
//! (batch embeddings plus head weights where the loss has any) is flattened,
//! and the analytic gradient is compared against the central-difference
//! estimate from [`crate::numerics::finite_diff_grad`].
//!
//! Cases are resampled until they sit away from non-differentiable spots:
//! hinge arguments and hardest-pair selection gaps must clear a slack of
//! 1e-3, pair distances must clear the sqrt kink, and cosines must stay
//! inside the clamp. Per-case error is the largest absolute gradient
//! deviation divided by the gradient's magnitude (floored at 1e-3 so that
//! near-zero gradients are compared absolutely, which is all a fixed-step
//! central difference can resolve there).

use crate::losses::{
    am_softmax, attribute_am, batch_hard, full_joint, joint, softmax_ce, BatchEmbeddings,
    HeadWeights, LossConfig, LossError, LossOutput, SlicePlan, Surrogate,
};
use crate::numerics::{euclidean_distance, finite_diff_grad, l2_normalize, Mat};
use crate::rng::Rng;

/// Step used for all central differences.
pub const FD_STEP: f64 = 1e-6;
/// Maximum tolerated relative error.
pub const GRAD_TOLERANCE: f64 = 1e-5;
/// Hinge arguments, selection gaps, and distances must clear this slack
/// for a case to be used.
const KINK_SLACK: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    SoftmaxCe,
    AmSoftmax,
    AttributeAm,
    TripletHinge,
    TripletSoftplus,
    BatchHardHinge,
    BatchHardSoftplus,
    BatchHardNormalized,
    Joint,
    JointNormalized,
    FullJoint,
}

pub const ALL_KINDS: [LossKind; 11] = [
    LossKind::SoftmaxCe,
    LossKind::AmSoftmax,
    LossKind::AttributeAm,
    LossKind::TripletHinge,
    LossKind::TripletSoftplus,
    LossKind::BatchHardHinge,
    LossKind::BatchHardSoftplus,
    LossKind::BatchHardNormalized,
    LossKind::Joint,
    LossKind::JointNormalized,
    LossKind::FullJoint,
];

impl LossKind {
    pub fn label(&self) -> &'static str {
        match self {
            LossKind::SoftmaxCe => "softmax_ce",
            LossKind::AmSoftmax => "am_softmax",
            LossKind::AttributeAm => "attribute_am",
            LossKind::TripletHinge => "triplet_all[hinge]",
            LossKind::TripletSoftplus => "triplet_all[softplus]",
            LossKind::BatchHardHinge => "batch_hard[hinge]",
            LossKind::BatchHardSoftplus => "batch_hard[softplus]",
            LossKind::BatchHardNormalized => "batch_hard[normalized]",
            LossKind::Joint => "joint",
            LossKind::JointNormalized => "joint[normalized]",
            LossKind::FullJoint => "full_joint",
        }
    }

    fn uses_heads(&self) -> bool {
        !matches!(
            self,
            LossKind::TripletHinge
                | LossKind::TripletSoftplus
                | LossKind::BatchHardHinge
                | LossKind::BatchHardSoftplus
                | LossKind::BatchHardNormalized
        )
    }

    fn uses_triplets(&self) -> bool {
        !matches!(
            self,
            LossKind::SoftmaxCe | LossKind::AmSoftmax | LossKind::AttributeAm
        )
    }
}

struct Case {
    batch: BatchEmbeddings,
    heads: HeadWeights,
    cfg: LossConfig,
    plan: SlicePlan,
    with_bias: bool,
}

impl Case {
    fn eval(&self, kind: LossKind) -> Result<LossOutput, LossError> {
        match kind {
            LossKind::SoftmaxCe => softmax_ce(&self.batch, &self.heads, self.with_bias),
            LossKind::AmSoftmax => am_softmax(&self.batch, &self.heads, &self.cfg),
            LossKind::AttributeAm => attribute_am(&self.batch, &self.heads, &self.cfg, &self.plan),
            LossKind::TripletHinge | LossKind::TripletSoftplus => {
                crate::losses::triplet_all(&self.batch, &self.cfg)
            }
            LossKind::BatchHardHinge
            | LossKind::BatchHardSoftplus
            | LossKind::BatchHardNormalized => batch_hard(&self.batch, &self.cfg),
            LossKind::Joint | LossKind::JointNormalized => {
                joint(&self.batch, &self.heads, &self.cfg)
            }
            LossKind::FullJoint => full_joint(&self.batch, &self.heads, &self.cfg, &self.plan),
        }
    }

    fn flatten(&self, kind: LossKind) -> Vec<f64> {
        let mut out = Vec::new();
        for e in &self.batch.embeddings {
            out.extend_from_slice(e);
        }
        if kind.uses_heads() {
            out.extend_from_slice(self.heads.identity_head.data());
            for h in &self.heads.attribute_heads {
                out.extend_from_slice(h.data());
            }
            if self.with_bias {
                out.extend_from_slice(&self.heads.bias);
            }
        }
        out
    }

    fn with_flat(&self, kind: LossKind, flat: &[f64]) -> Case {
        let mut batch = self.batch.clone();
        let mut heads = self.heads.clone();
        let mut pos = 0;
        for e in &mut batch.embeddings {
            let len = e.len();
            e.copy_from_slice(&flat[pos..pos + len]);
            pos += len;
        }
        if kind.uses_heads() {
            let len = heads.identity_head.data().len();
            heads
                .identity_head
                .data_mut()
                .copy_from_slice(&flat[pos..pos + len]);
            pos += len;
            for h in &mut heads.attribute_heads {
                let len = h.data().len();
                h.data_mut().copy_from_slice(&flat[pos..pos + len]);
                pos += len;
            }
            if self.with_bias {
                let len = heads.bias.len();
                heads.bias.copy_from_slice(&flat[pos..pos + len]);
                pos += len;
            }
        }
        debug_assert_eq!(pos, flat.len());
        Case {
            batch,
            heads,
            cfg: self.cfg.clone(),
            plan: self.plan,
            with_bias: self.with_bias,
        }
    }

    fn flatten_gradient(&self, kind: LossKind, out: &LossOutput) -> Vec<f64> {
        let mut flat = Vec::new();
        for g in &out.grad_embeddings {
            flat.extend_from_slice(g);
        }
        if kind.uses_heads() {
            let g = out
                .grad_weights
                .as_ref()
                .expect("head-using loss must return weight gradients");
            flat.extend_from_slice(g.identity_head.data());
            for h in &g.attribute_heads {
                flat.extend_from_slice(h.data());
            }
            if self.with_bias {
                flat.extend_from_slice(&g.bias);
            }
        }
        flat
    }
}

fn pk_labels(p: usize, k: usize) -> Vec<usize> {
    let mut labels = Vec::with_capacity(p * k);
    for id in 0..p {
        labels.extend(std::iter::repeat_n(id, k));
    }
    labels
}

fn draw_case(kind: LossKind, rng: &mut Rng) -> Case {
    let (p, k) = (2 + rng.below(2), 2 + rng.below(2));
    let n = p * k;
    let (attr_count, q) = match kind {
        LossKind::AttributeAm | LossKind::FullJoint => (1 + rng.below(3), 2),
        _ => (0, 0),
    };
    let id_dim = 3 + rng.below(3);
    let d = id_dim + attr_count * q;
    let c = p.max(2 + rng.below(3));

    let embeddings: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let scale = rng.uniform(0.7, 1.6);
            (0..d).map(|_| scale * rng.normal()).collect()
        })
        .collect();
    let labels = pk_labels(p, k);
    let attributes = (attr_count > 0).then(|| {
        let per_id: Vec<Vec<bool>> = (0..p)
            .map(|_| (0..attr_count).map(|_| rng.next_f64() < 0.5).collect())
            .collect();
        labels.iter().map(|&l| per_id[l].clone()).collect()
    });

    let head_dim = if matches!(kind, LossKind::FullJoint) { id_dim } else { d };
    let heads = HeadWeights {
        identity_head: Mat::from_vec(head_dim, c, (0..head_dim * c).map(|_| rng.normal()).collect()),
        attribute_heads: (0..attr_count)
            .map(|_| Mat::from_vec(q, 2, (0..2 * q).map(|_| rng.normal()).collect()))
            .collect(),
        bias: (0..c).map(|_| 0.3 * rng.normal()).collect(),
    };

    let surrogate = match kind {
        LossKind::TripletSoftplus | LossKind::BatchHardSoftplus => Surrogate::Softplus,
        _ => Surrogate::Hinge,
    };
    let normalize = matches!(
        kind,
        LossKind::BatchHardNormalized | LossKind::JointNormalized
    );
    let cfg = LossConfig {
        s: rng.uniform(1.0, 8.0),
        m: match kind {
            LossKind::AmSoftmax | LossKind::AttributeAm | LossKind::FullJoint => {
                rng.uniform(0.1, 0.5)
            }
            _ => rng.uniform(0.0, 0.4),
        },
        triplet_margin: rng.uniform(0.2, 0.6),
        gamma: rng.uniform(0.3, 1.0),
        lambda: rng.uniform(0.2, 0.6),
        surrogate,
        normalize_triplet_features: normalize,
        reduction: crate::losses::Reduction::Sum,
    };

    Case {
        batch: BatchEmbeddings {
            embeddings,
            labels,
            attributes,
            pk_shape: Some((p, k)),
        },
        heads,
        cfg,
        plan: SlicePlan::new(attr_count, q, d).expect("dims chosen to fit"),
        with_bias: matches!(kind, LossKind::SoftmaxCe),
    }
}

/// A case is safe for central differences when nothing sits near a kink:
/// the hardest-pair selection is stable, hinge arguments are away from
/// zero, distances are away from the sqrt kink, and norms are healthy.
fn case_is_safe(kind: LossKind, case: &Case) -> bool {
    let batch = &case.batch;
    let cfg = &case.cfg;

    // healthy norms for anything that normalizes
    for e in &batch.embeddings {
        if crate::numerics::norm(e) < 0.3 {
            return false;
        }
    }
    if kind.uses_heads() {
        for j in 0..case.heads.identity_head.cols() {
            if case.heads.identity_head.col_norm(j) < 0.3 {
                return false;
            }
        }
        for h in &case.heads.attribute_heads {
            for j in 0..2 {
                if h.col_norm(j) < 0.3 {
                    return false;
                }
            }
        }
        if case.plan.attr_count > 0 {
            for e in &batch.embeddings {
                for k in 0..case.plan.attr_count {
                    if crate::numerics::norm(&e[case.plan.attr_range(k)]) < 0.3 {
                        return false;
                    }
                }
            }
        }
    }

    if !kind.uses_triplets() {
        return true;
    }

    // triplet checks run on the distances the loss will actually see
    let feat_range = if matches!(kind, LossKind::FullJoint) {
        case.plan.id_range()
    } else {
        0..batch.embeddings[0].len()
    };
    let feats: Vec<Vec<f64>> = batch
        .embeddings
        .iter()
        .map(|e| {
            let f = e[feat_range.clone()].to_vec();
            if cfg.normalize_triplet_features {
                l2_normalize(&f).map(|(hat, _)| hat).unwrap_or(f)
            } else {
                f
            }
        })
        .collect();
    let n = feats.len();
    let mut dist = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let dd = euclidean_distance(&feats[i], &feats[j]).unwrap();
            if dd < 10.0 * KINK_SLACK {
                return false; // too close to the sqrt kink / a tie
            }
            dist[i][j] = dd;
            dist[j][i] = dd;
        }
    }

    match kind {
        LossKind::TripletHinge | LossKind::TripletSoftplus => {
            for a in 0..n {
                for p in 0..n {
                    if p == a || batch.labels[p] != batch.labels[a] {
                        continue;
                    }
                    for neg in 0..n {
                        if batch.labels[neg] == batch.labels[a] {
                            continue;
                        }
                        let arg = cfg.triplet_margin + dist[a][p] - dist[a][neg];
                        if matches!(cfg.surrogate, Surrogate::Hinge) && arg.abs() < KINK_SLACK {
                            return false;
                        }
                    }
                }
            }
            true
        }
        _ => {
            // batch-hard and joints: selection must be stable and the
            // selected hinge away from zero
            for a in 0..n {
                let mut pos: Vec<f64> = (0..n)
                    .filter(|&o| o != a && batch.labels[o] == batch.labels[a])
                    .map(|o| dist[a][o])
                    .collect();
                let mut neg: Vec<f64> = (0..n)
                    .filter(|&o| batch.labels[o] != batch.labels[a])
                    .map(|o| dist[a][o])
                    .collect();
                pos.sort_by(|x, y| y.partial_cmp(x).unwrap());
                neg.sort_by(|x, y| x.partial_cmp(y).unwrap());
                if pos.len() > 1 && pos[0] - pos[1] < KINK_SLACK {
                    return false;
                }
                if neg.len() > 1 && neg[1] - neg[0] < KINK_SLACK {
                    return false;
                }
                let arg = cfg.triplet_margin + pos[0] - neg[0];
                if matches!(cfg.surrogate, Surrogate::Hinge) && arg.abs() < KINK_SLACK {
                    return false;
                }
            }
            true
        }
    }
}

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub kind: LossKind,
    pub cases: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

/// Runs `cases` finite-difference comparisons for one loss kind. With
/// `corrupt` set, a small bias is injected into the analytic gradient
/// before comparing; the outcome must then fail (negative control).
pub fn check_loss_gradients(
    kind: LossKind,
    cases: usize,
    seed: u64,
    corrupt: bool,
) -> Result<CheckOutcome, LossError> {
    let mut rng = Rng::new(seed ^ (kind.label().len() as u64).wrapping_mul(0x9e37_79b9));
    let mut max_rel_err: f64 = 0.0;

    for _ in 0..cases {
        let case = loop {
            let candidate = draw_case(kind, &mut rng);
            if case_is_safe(kind, &candidate) {
                break candidate;
            }
        };

        let analytic_out = case.eval(kind)?;
        let mut analytic = case.flatten_gradient(kind, &analytic_out);
        if corrupt {
            analytic[0] += 1e-3;
        }

        let flat = case.flatten(kind);
        let fd = finite_diff_grad(
            |x| case.with_flat(kind, x).eval(kind).map(|o| o.value),
            &flat,
            FD_STEP,
        )?;

        let mag = analytic
            .iter()
            .chain(&fd)
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let denom = mag.max(KINK_SLACK);
        let worst = analytic
            .iter()
            .zip(&fd)
            .fold(0.0f64, |m, (a, f)| m.max((a - f).abs()));
        max_rel_err = max_rel_err.max(worst / denom);
    }

    Ok(CheckOutcome {
        kind,
        cases,
        max_rel_err,
        tolerance: GRAD_TOLERANCE,
    })
}
