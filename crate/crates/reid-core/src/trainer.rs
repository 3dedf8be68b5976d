//! The optimization loop: Adam with linear warmup and step decay, driving
//! any configured loss variant over PK batches.
//!
//! [`Trainer`] owns the dataset, parameters, and moments and advances one
//! epoch at a time; [`train`] wraps it into a single call. Everything is
//! single-writer and seeded, so two runs with the same configs produce
//! bit-identical parameters and metric logs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, Split};
use crate::losses::{
    am_softmax, batch_hard, full_joint_with_parts, joint_with_parts, BatchEmbeddings, LossConfig,
    LossError, LossOutput, Surrogate,
};
use crate::model::{
    backward_batch, forward_batch, init_params, update_output_stats, ModelConfig, ModelError,
    ModelParams,
};
use crate::sampler::{plan_epoch, SamplerConfig, SamplerError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config conflict: {0}")]
    ConfigConflict(String),
    #[error("non-finite loss {value} at epoch {epoch} step {step}; aborting")]
    NonFiniteLoss { epoch: usize, step: usize, value: f64 },
    #[error("epoch {epoch} out of range (configured epochs: {epochs})")]
    OutOfRange { epoch: usize, epochs: usize },
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
}

/// The loss combinations studied in the ablation, plus the attribute
/// variant of the full model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossVariant {
    /// Margin softmax with m = 0, no triplet term.
    Am0,
    /// Margin softmax with m = 0.5, no triplet term.
    Am,
    /// Batch-hard triplet loss alone.
    Bh,
    /// m = 0 softmax plus batch-hard on normalized features.
    Am0Bh1,
    /// m = 0.5 softmax plus batch-hard.
    AmBh,
    /// m = 0 softmax plus batch-hard (the main setting).
    Am0Bh,
    /// m = 0 softmax plus batch-hard with the softplus surrogate.
    Am0BhSp,
    /// Full model: identity + attributes + batch-hard on the identity slice.
    Am0BhAttr,
}

/// The seven rows of the loss-combination ablation.
pub const ABLATION_VARIANTS: [LossVariant; 7] = [
    LossVariant::Am0,
    LossVariant::Am,
    LossVariant::Bh,
    LossVariant::Am0Bh1,
    LossVariant::AmBh,
    LossVariant::Am0Bh,
    LossVariant::Am0BhSp,
];

impl LossVariant {
    pub fn name(&self) -> &'static str {
        match self {
            LossVariant::Am0 => "AM0",
            LossVariant::Am => "AM",
            LossVariant::Bh => "BH",
            LossVariant::Am0Bh1 => "AM0BH1",
            LossVariant::AmBh => "AMBH",
            LossVariant::Am0Bh => "AM0BH",
            LossVariant::Am0BhSp => "AM0BHsp",
            LossVariant::Am0BhAttr => "AM0BH_Attr",
        }
    }

    pub fn parse(s: &str) -> Option<LossVariant> {
        match s {
            "AM0" => Some(LossVariant::Am0),
            "AM" => Some(LossVariant::Am),
            "BH" => Some(LossVariant::Bh),
            "AM0BH1" => Some(LossVariant::Am0Bh1),
            "AMBH" => Some(LossVariant::AmBh),
            "AM0BH" => Some(LossVariant::Am0Bh),
            "AM0BHsp" => Some(LossVariant::Am0BhSp),
            "AM0BH_Attr" => Some(LossVariant::Am0BhAttr),
            _ => None,
        }
    }

    pub fn uses_softmax(&self) -> bool {
        !matches!(self, LossVariant::Bh)
    }

    pub fn uses_triplet(&self) -> bool {
        !matches!(self, LossVariant::Am0 | LossVariant::Am)
    }

    pub fn uses_attributes(&self) -> bool {
        matches!(self, LossVariant::Am0BhAttr)
    }

    /// Forces the variant-defining knobs onto a base config: the margin
    /// (0 or 0.5), the surrogate, triplet-feature normalization, and which
    /// weights stay active. gamma/lambda values come from the base config.
    pub fn effective_loss_config(&self, base: &LossConfig) -> LossConfig {
        let mut cfg = base.clone();
        cfg.m = match self {
            LossVariant::Am | LossVariant::AmBh => 0.5,
            _ => 0.0,
        };
        cfg.surrogate = match self {
            LossVariant::Am0BhSp => Surrogate::Softplus,
            _ => Surrogate::Hinge,
        };
        cfg.normalize_triplet_features = matches!(self, LossVariant::Am0Bh1);
        if !self.uses_triplet() {
            cfg.gamma = 0.0;
        }
        if !self.uses_attributes() {
            cfg.lambda = 0.0;
        }
        cfg
    }
}

/// A step-decay point: from `epoch` onward the learning rate is `lr`
/// (until a later decay point takes over).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayPoint {
    pub epoch: usize,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub warmup_epochs: usize,
    /// Warmup starts here...
    pub start_lr: f64,
    /// ...and ramps linearly to here.
    pub base_lr: f64,
    pub decay: Vec<DecayPoint>,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub variant: LossVariant,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 150,
            warmup_epochs: 20,
            start_lr: 1e-5,
            base_lr: 1e-3,
            decay: vec![
                DecayPoint { epoch: 90, lr: 1e-4 },
                DecayPoint { epoch: 130, lr: 1e-5 },
            ],
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            variant: LossVariant::Am0Bh,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::ConfigConflict("epochs must be positive".into()));
        }
        if self.warmup_epochs >= self.epochs {
            return Err(TrainError::ConfigConflict(format!(
                "warmup ({}) must be shorter than the run ({})",
                self.warmup_epochs, self.epochs
            )));
        }
        if self.start_lr <= 0.0 || self.base_lr <= 0.0 {
            return Err(TrainError::ConfigConflict("learning rates must be positive".into()));
        }
        let mut last = self.base_lr;
        let mut last_epoch = self.warmup_epochs;
        for d in &self.decay {
            if d.epoch < last_epoch || d.lr <= 0.0 || d.lr > last {
                return Err(TrainError::ConfigConflict(
                    "decay points must be ordered with non-increasing positive rates".into(),
                ));
            }
            last = d.lr;
            last_epoch = d.epoch;
        }
        Ok(())
    }

    /// Proportionally rescales the warmup/decay schedule to a shorter run
    /// (used by the bundled benchmark presets).
    pub fn scaled_to(&self, epochs: usize) -> TrainConfig {
        let ratio = epochs as f64 / self.epochs as f64;
        let scale = |e: usize| ((e as f64 * ratio).round() as usize).min(epochs.saturating_sub(1));
        TrainConfig {
            epochs,
            warmup_epochs: scale(self.warmup_epochs).max(1),
            decay: self
                .decay
                .iter()
                .map(|d| DecayPoint {
                    epoch: scale(d.epoch),
                    lr: d.lr,
                })
                .collect(),
            ..self.clone()
        }
    }
}

/// Learning rate at an epoch: linear interpolation start->base over the
/// warmup, flat base afterwards, then step decay.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> Result<f64, TrainError> {
    if epoch >= cfg.epochs {
        return Err(TrainError::OutOfRange {
            epoch,
            epochs: cfg.epochs,
        });
    }
    if epoch < cfg.warmup_epochs {
        let t = epoch as f64 / cfg.warmup_epochs as f64;
        return Ok(cfg.start_lr + t * (cfg.base_lr - cfg.start_lr));
    }
    let mut lr = cfg.base_lr;
    for d in &cfg.decay {
        if epoch >= d.epoch {
            lr = d.lr;
        }
    }
    Ok(lr)
}

/// Adam moments mirroring the parameter shapes.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update over all trainable tensors.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamState,
    lr: f64,
    cfg: &TrainConfig,
) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);

    let mut p_t = params.trainable_tensors_mut();
    let g_t = grads.trainable_tensors();
    let mut m_t = state.m.trainable_tensors_mut();
    let mut v_t = state.v.trainable_tensors_mut();
    debug_assert_eq!(p_t.len(), g_t.len());

    for i in 0..p_t.len() {
        let (p, g, m, v) = (&mut p_t[i], g_t[i], &mut m_t[i], &mut v_t[i]);
        for j in 0..p.len() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] -= lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
        }
    }
}

/// One metrics-log row; loss components are zero when the variant has no
/// such term.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_am: f64,
    pub loss_bh: f64,
    pub loss_attr: f64,
}

impl MetricsRow {
    pub const CSV_HEADER: &'static str = "epoch,step,lr,loss_total,loss_am,loss_bh,loss_attr";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch, self.step, self.lr, self.loss_total, self.loss_am, self.loss_bh, self.loss_attr
        )
    }
}

pub fn metrics_log_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(MetricsRow::CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}

/// Owns everything one training run needs and advances epoch by epoch.
pub struct Trainer {
    dataset: Dataset,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    sampler_cfg: SamplerConfig,
    loss_cfg: LossConfig,
    per_identity: Vec<(i64, Vec<usize>)>,
    class_of: std::collections::BTreeMap<i64, usize>,
    params: ModelParams,
    adam: AdamState,
    epoch: usize,
    global_step: usize,
    log: Vec<MetricsRow>,
    margin_overflow_total: usize,
}

impl Trainer {
    pub fn new(
        dataset: Dataset,
        model_cfg: ModelConfig,
        train_cfg: TrainConfig,
        sampler_cfg: SamplerConfig,
        base_loss_cfg: LossConfig,
    ) -> Result<Trainer, TrainError> {
        model_cfg
            .validate()
            .map_err(|e| TrainError::ConfigConflict(e.to_string()))?;
        train_cfg.validate()?;
        sampler_cfg
            .validate()
            .map_err(|e| TrainError::ConfigConflict(e.to_string()))?;
        let loss_cfg = train_cfg.variant.effective_loss_config(&base_loss_cfg);
        loss_cfg
            .validate()
            .map_err(|e| TrainError::ConfigConflict(e.to_string()))?;

        let variant = train_cfg.variant;
        if variant.uses_attributes() {
            if dataset.attribute_count == 0 {
                return Err(TrainError::ConfigConflict(format!(
                    "variant {} needs attributes but the dataset has none",
                    variant.name()
                )));
            }
            if model_cfg.attribute_count != dataset.attribute_count {
                return Err(TrainError::ConfigConflict(format!(
                    "model expects {} attributes, dataset has {}",
                    model_cfg.attribute_count, dataset.attribute_count
                )));
            }
        }
        if dataset.input_dim != model_cfg.input_dim {
            return Err(TrainError::ConfigConflict(format!(
                "dataset features are {}-dim, model expects {}",
                dataset.input_dim, model_cfg.input_dim
            )));
        }

        let per_identity = dataset.train_per_identity();
        if per_identity.is_empty() {
            return Err(TrainError::ConfigConflict("dataset has no train split".into()));
        }
        if model_cfg.class_count != per_identity.len() {
            return Err(TrainError::ConfigConflict(format!(
                "model has {} identity classes, train split has {}",
                model_cfg.class_count,
                per_identity.len()
            )));
        }
        let class_of = dataset.train_class_map();
        let params = init_params(&model_cfg, train_cfg.seed);
        let adam = AdamState::new(&params);

        Ok(Trainer {
            dataset,
            model_cfg,
            train_cfg,
            sampler_cfg,
            loss_cfg,
            per_identity,
            class_of,
            params,
            adam,
            epoch: 0,
            global_step: 0,
            log: Vec::new(),
            margin_overflow_total: 0,
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn model_config(&self) -> &ModelConfig {
        &self.model_cfg
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn log(&self) -> &[MetricsRow] {
        &self.log
    }

    pub fn into_outcome(self) -> TrainOutcome {
        TrainOutcome {
            params: self.params,
            model_config: self.model_cfg,
            log: self.log,
        }
    }

    fn step_loss(&self, batch: &BatchEmbeddings) -> Result<(LossOutput, f64, f64, f64), TrainError> {
        let variant = self.train_cfg.variant;
        let cfg = &self.loss_cfg;
        Ok(if variant.uses_attributes() {
            let plan = self.model_cfg.slice_plan();
            let (out, parts) = full_joint_with_parts(batch, &self.params.heads, cfg, &plan)?;
            (out, parts.am, parts.bh, parts.attr)
        } else if variant.uses_softmax() && variant.uses_triplet() {
            let (out, parts) = joint_with_parts(batch, &self.params.heads, cfg)?;
            (out, parts.am, parts.bh, 0.0)
        } else if variant.uses_softmax() {
            let out = am_softmax(batch, &self.params.heads, cfg)?;
            let am = out.value;
            (out, am, 0.0, 0.0)
        } else {
            let out = batch_hard(batch, cfg)?;
            let bh = out.value;
            (out, 0.0, bh, 0.0)
        })
    }

    /// Runs one epoch and returns its metric rows.
    pub fn run_epoch(&mut self) -> Result<Vec<MetricsRow>, TrainError> {
        if self.epoch >= self.train_cfg.epochs {
            return Err(TrainError::OutOfRange {
                epoch: self.epoch,
                epochs: self.train_cfg.epochs,
            });
        }
        let lr = lr_at(self.epoch, &self.train_cfg)?;
        let epoch_sampler = SamplerConfig {
            seed: self
                .sampler_cfg
                .seed
                .wrapping_add((self.epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)),
            ..self.sampler_cfg.clone()
        };
        let plan = plan_epoch(&self.per_identity, &epoch_sampler)?;

        let mut rows = Vec::with_capacity(plan.batches.len());
        let mut epoch_overflows = 0usize;
        for indices in &plan.batches {
            let raws: Vec<Vec<f64>> = indices
                .iter()
                .map(|&i| self.dataset.samples[i].features.clone())
                .collect();
            let labels: Vec<usize> = indices
                .iter()
                .map(|&i| self.class_of[&self.dataset.samples[i].identity])
                .collect();
            let attributes = self.train_cfg.variant.uses_attributes().then(|| {
                indices
                    .iter()
                    .map(|&i| self.dataset.samples[i].attributes.clone())
                    .collect()
            });

            let (embeddings, cache) = forward_batch(&self.params, &self.model_cfg, &raws)?;
            let batch = BatchEmbeddings {
                embeddings,
                labels,
                attributes,
                pk_shape: Some((self.sampler_cfg.p, self.sampler_cfg.k)),
            };

            let (loss, am, bh, attr) = match self.step_loss(&batch) {
                Ok(parts) => parts,
                Err(TrainError::Loss(LossError::NonFinite(value))) => {
                    return Err(TrainError::NonFiniteLoss {
                        epoch: self.epoch,
                        step: self.global_step,
                        value,
                    })
                }
                Err(other) => return Err(other),
            };
            epoch_overflows += loss.margin_overflows;

            let mut grads = backward_batch(&self.params, &cache, &loss.grad_embeddings);
            if let Some(head_grads) = &loss.grad_weights {
                grads.heads.add_scaled(head_grads, 1.0);
            }
            adam_step(&mut self.params, &grads, &mut self.adam, lr, &self.train_cfg);
            update_output_stats(&mut self.params, &cache.pre_norm_embeddings());

            if !self.params.all_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch: self.epoch,
                    step: self.global_step,
                    value: f64::NAN,
                });
            }

            rows.push(MetricsRow {
                epoch: self.epoch,
                step: self.global_step,
                lr,
                loss_total: loss.value,
                loss_am: am,
                loss_bh: bh,
                loss_attr: attr,
            });
            self.global_step += 1;
        }

        if epoch_overflows > 0 {
            self.margin_overflow_total += epoch_overflows;
            eprintln!(
                "epoch {}: margin expansion left its monotone regime {} time(s)",
                self.epoch, epoch_overflows
            );
        }

        self.epoch += 1;
        self.log.extend(rows.iter().cloned());
        Ok(rows)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub model_config: ModelConfig,
    pub log: Vec<MetricsRow>,
}

/// Runs the full configured number of epochs.
pub fn train(
    dataset: Dataset,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    sampler_cfg: SamplerConfig,
    loss_cfg: LossConfig,
) -> Result<TrainOutcome, TrainError> {
    let epochs = train_cfg.epochs;
    let mut trainer = Trainer::new(dataset, model_cfg, train_cfg, sampler_cfg, loss_cfg)?;
    for _ in 0..epochs {
        trainer.run_epoch()?;
    }
    Ok(trainer.into_outcome())
}

/// Embeds every sample of a split for retrieval: forward pass, then the
/// identity slice when the model carries attribute slices (the test
/// protocol evaluates the identity part of the embedding).
pub fn embed_split(
    params: &ModelParams,
    cfg: &ModelConfig,
    dataset: &Dataset,
    split: Split,
) -> Result<Vec<crate::eval::EvalItem>, ModelError> {
    let mut items = Vec::new();
    for idx in dataset.indices_of(split) {
        let s = &dataset.samples[idx];
        let emb = crate::model::forward(params, cfg, &s.features)?;
        let emb = if cfg.attribute_count > 0 {
            emb[cfg.slice_plan().id_range()].to_vec()
        } else {
            emb
        };
        items.push(crate::eval::EvalItem {
            embedding: emb,
            identity: s.identity,
            camera: s.camera,
        });
    }
    Ok(items)
}

/// Mean cosine similarity over same-identity pairs and different-identity
/// pairs of the given items.
pub fn mean_intra_inter_cosine(items: &[crate::eval::EvalItem]) -> (f64, f64) {
    let mut intra = (0.0, 0usize);
    let mut inter = (0.0, 0usize);
    for i in 0..items.len() {
        for j in (i + 1)..items.len() {
            let c = crate::numerics::cosine_similarity(&items[i].embedding, &items[j].embedding)
                .unwrap_or(0.0);
            if items[i].identity == items[j].identity {
                intra.0 += c;
                intra.1 += 1;
            } else {
                inter.0 += c;
                inter.1 += 1;
            }
        }
    }
    (
        intra.0 / intra.1.max(1) as f64,
        inter.0 / inter.1.max(1) as f64,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, SynthConfig};
    use crate::eval::evaluate;
    use crate::losses::Reduction;

    #[test]
    fn lr_schedule_hits_reference_points() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at(0, &cfg).unwrap(), 1e-5);
        assert_eq!(lr_at(20, &cfg).unwrap(), 1e-3);
        assert_eq!(lr_at(90, &cfg).unwrap(), 1e-4);
        assert_eq!(lr_at(130, &cfg).unwrap(), 1e-5);
        // warmup midpoint
        assert!((lr_at(10, &cfg).unwrap() - 5.05e-4).abs() < 1e-12);
        assert!(matches!(lr_at(150, &cfg), Err(TrainError::OutOfRange { .. })));
    }

    #[test]
    fn lr_non_increasing_after_warmup() {
        let cfg = TrainConfig::default();
        let mut prev = f64::INFINITY;
        for e in cfg.warmup_epochs..cfg.epochs {
            let lr = lr_at(e, &cfg).unwrap();
            assert!(lr <= prev);
            prev = lr;
        }
    }

    fn tiny_model_cfg(classes: usize) -> ModelConfig {
        ModelConfig {
            input_dim: 4,
            hidden_dims: vec![8],
            embed_dim: 4,
            batch_norm_output: true,
            attribute_count: 0,
            attribute_slice_dim: 0,
            class_count: classes,
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let cfg = tiny_model_cfg(2);
        let mut params = init_params(&cfg, 0);
        let before = params.clone();
        let grads = params.zeros_like();
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, 1e-3, &TrainConfig::default());
        assert_eq!(params, before);
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        let cfg = tiny_model_cfg(2);
        let mut params = init_params(&cfg, 0);
        let before = params.flatten();
        let mut grads = params.zeros_like();
        grads.layers[0].weight.set(0, 0, 0.37); // one nonzero gradient
        let mut state = AdamState::new(&params);
        let tc = TrainConfig::default();
        adam_step(&mut params, &grads, &mut state, 1e-3, &tc);
        let after = params.flatten();
        // delta = -lr * g / (|g| + eps') ~ -lr * sign(g)
        let delta = after[0] - before[0];
        assert!((delta + 1e-3).abs() < 1e-8, "delta {delta}");
        // untouched coordinates stay put
        assert_eq!(before[1..], after[1..]);
    }

    #[test]
    fn adam_converges_to_lr_magnitude_updates() {
        let cfg = tiny_model_cfg(2);
        let mut params = init_params(&cfg, 0);
        let mut grads = params.zeros_like();
        grads.layers[0].weight.set(0, 0, -2.5);
        let mut state = AdamState::new(&params);
        let tc = TrainConfig::default();
        for _ in 0..500 {
            adam_step(&mut params, &grads, &mut state, 1e-3, &tc);
        }
        let before_last = params.flatten()[0];
        adam_step(&mut params, &grads, &mut state, 1e-3, &tc);
        let last = params.flatten()[0];
        let step = last - before_last;
        assert!((step - 1e-3).abs() < 1e-6, "step {step}");
    }

    fn small_synth(seed: u64) -> SynthConfig {
        SynthConfig {
            n_identities: 8,
            samples_per_identity_min: 6,
            samples_per_identity_max: 6,
            input_dim: 4,
            n_cameras: 2,
            attribute_count: 0,
            identity_spread: 1.0,
            nuisance_scale: 0.2,
            noise_sigma: 0.05,
            seed,
        }
    }

    /// Two train + two held-out identities on a nearly noiseless,
    /// linearly separable dataset: AM0BH training must end at rank-1 = 1.
    #[test]
    fn separable_two_identities_reach_perfect_rank1() {
        let ds = generate(&SynthConfig {
            n_identities: 4,
            nuisance_scale: 0.05,
            noise_sigma: 0.02,
            ..small_synth(11)
        })
        .unwrap();
        let mcfg = tiny_model_cfg(2);
        let tcfg = TrainConfig {
            epochs: 30,
            warmup_epochs: 5,
            decay: vec![DecayPoint { epoch: 20, lr: 1e-4 }],
            variant: LossVariant::Am0Bh,
            seed: 3,
            ..TrainConfig::default()
        };
        let scfg = SamplerConfig::new(2, 3, 1);
        let lcfg = LossConfig {
            s: 16.0,
            gamma: 0.5,
            reduction: Reduction::Mean,
            ..LossConfig::default()
        };
        let out = train(ds.clone(), mcfg.clone(), tcfg, scfg, lcfg).unwrap();
        let probes = embed_split(&out.params, &mcfg, &ds, Split::Probe).unwrap();
        let gallery = embed_split(&out.params, &mcfg, &ds, Split::Gallery).unwrap();
        let report = evaluate(&probes, &gallery).unwrap();
        assert_eq!(report.rank(1), 1.0, "mAP {}", report.map);
    }

    #[test]
    fn identical_seeds_produce_identical_logs() {
        let ds = generate(&small_synth(12)).unwrap();
        let mcfg = tiny_model_cfg(4);
        let tcfg = TrainConfig {
            epochs: 4,
            warmup_epochs: 2,
            decay: vec![],
            variant: LossVariant::Am0Bh,
            seed: 7,
            ..TrainConfig::default()
        };
        let scfg = SamplerConfig::new(2, 3, 5);
        let lcfg = LossConfig {
            gamma: 0.4,
            ..LossConfig::default()
        };
        let a = train(ds.clone(), mcfg.clone(), tcfg.clone(), scfg.clone(), lcfg.clone()).unwrap();
        let b = train(ds, mcfg, tcfg, scfg, lcfg).unwrap();
        assert_eq!(metrics_log_csv(&a.log), metrics_log_csv(&b.log));
        assert_eq!(a.params, b.params);
    }

    /// AM0BH with gamma = 0 must follow AM0 step for step.
    #[test]
    fn gamma_zero_joint_equals_am0_run() {
        let ds = generate(&small_synth(13)).unwrap();
        let mcfg = tiny_model_cfg(4);
        let scfg = SamplerConfig::new(2, 3, 5);
        let base = TrainConfig {
            epochs: 3,
            warmup_epochs: 1,
            decay: vec![],
            seed: 9,
            ..TrainConfig::default()
        };
        let lcfg_zero_gamma = LossConfig {
            gamma: 0.0,
            ..LossConfig::default()
        };
        let joint_run = train(
            ds.clone(),
            mcfg.clone(),
            TrainConfig { variant: LossVariant::Am0Bh, ..base.clone() },
            scfg.clone(),
            lcfg_zero_gamma.clone(),
        )
        .unwrap();
        let am0_run = train(
            ds,
            mcfg,
            TrainConfig { variant: LossVariant::Am0, ..base },
            scfg,
            lcfg_zero_gamma,
        )
        .unwrap();
        for (a, b) in joint_run.log.iter().zip(&am0_run.log) {
            assert!((a.loss_total - b.loss_total).abs() < 1e-12);
        }
    }

    #[test]
    fn attr_variant_without_attributes_is_config_conflict() {
        let ds = generate(&small_synth(14)).unwrap();
        let mcfg = tiny_model_cfg(4);
        let tcfg = TrainConfig {
            variant: LossVariant::Am0BhAttr,
            ..TrainConfig::default()
        };
        let err = Trainer::new(ds, mcfg, tcfg, SamplerConfig::new(2, 2, 0), LossConfig::default())
            .err()
            .expect("must conflict");
        assert!(matches!(err, TrainError::ConfigConflict(_)));
    }

    /// Training separates classes on the separable dataset: intra-class
    /// cosine rises, inter-class cosine falls, for every variant.
    #[test]
    fn every_variant_improves_cosine_structure() {
        let mut synth = small_synth(15);
        synth.n_identities = 20;
        synth.attribute_count = 2;
        synth.nuisance_scale = 0.4;
        let ds = generate(&synth).unwrap();

        for variant in [
            LossVariant::Am0,
            LossVariant::Am,
            LossVariant::Bh,
            LossVariant::Am0Bh1,
            LossVariant::AmBh,
            LossVariant::Am0Bh,
            LossVariant::Am0BhSp,
            LossVariant::Am0BhAttr,
        ] {
            let mcfg = ModelConfig {
                input_dim: 4,
                hidden_dims: vec![16],
                embed_dim: 8,
                batch_norm_output: true,
                attribute_count: if variant.uses_attributes() { 2 } else { 0 },
                attribute_slice_dim: if variant.uses_attributes() { 2 } else { 0 },
                class_count: 10,
            };
            let tcfg = TrainConfig {
                epochs: 40,
                warmup_epochs: 3,
                decay: vec![DecayPoint { epoch: 30, lr: 1e-4 }],
                variant,
                seed: 2,
                ..TrainConfig::default()
            };
            let scfg = SamplerConfig::new(3, 3, 8);
            let lcfg = LossConfig {
                s: 16.0,
                gamma: 0.5,
                lambda: 0.25,
                reduction: Reduction::Mean,
                ..LossConfig::default()
            };
            let test_items = |params: &ModelParams| {
                let mut items = embed_split(params, &mcfg, &ds, Split::Probe).unwrap();
                items.extend(embed_split(params, &mcfg, &ds, Split::Gallery).unwrap());
                items
            };
            let init = init_params(&mcfg, tcfg.seed);
            let (intra0, inter0) = mean_intra_inter_cosine(&test_items(&init));

            let out = train(ds.clone(), mcfg.clone(), tcfg, scfg, lcfg).unwrap();
            let (intra1, inter1) = mean_intra_inter_cosine(&test_items(&out.params));

            assert!(
                intra1 > intra0,
                "{}: intra {intra0:.3} -> {intra1:.3}",
                variant.name()
            );
            assert!(
                inter1 < inter0,
                "{}: inter {inter0:.3} -> {inter1:.3}",
                variant.name()
            );
        }
    }

    /// A diverging learning rate must abort with the non-finite-loss error
    /// rather than skipping batches.
    #[test]
    fn diverging_run_aborts_with_non_finite_loss() {
        let ds = generate(&small_synth(16)).unwrap();
        let mcfg = tiny_model_cfg(4);
        // Steps this size push the squared pairwise distances past the
        // floating-point range within a couple of batches.
        let tcfg = TrainConfig {
            epochs: 40,
            warmup_epochs: 1,
            start_lr: 1e150,
            base_lr: 1e150,
            decay: vec![],
            variant: LossVariant::Am0Bh,
            seed: 1,
            ..TrainConfig::default()
        };
        let scfg = SamplerConfig::new(2, 3, 2);
        let lcfg = LossConfig {
            gamma: 1.0,
            ..LossConfig::default()
        };
        let err = train(ds, mcfg, tcfg, scfg, lcfg).expect_err("must diverge");
        assert!(
            matches!(err, TrainError::NonFiniteLoss { .. }),
            "got {err:?}"
        );
    }

    /// Trained parameters beat the untrained initialization on retrieval.
    #[test]
    fn training_beats_untrained_initialization() {
        let mut synth = small_synth(17);
        synth.n_identities = 16;
        synth.nuisance_scale = 0.8;
        let ds = generate(&synth).unwrap();
        let mcfg = ModelConfig {
            class_count: 8,
            ..tiny_model_cfg(8)
        };
        let tcfg = TrainConfig {
            epochs: 25,
            warmup_epochs: 3,
            decay: vec![],
            variant: LossVariant::Am0Bh,
            seed: 4,
            ..TrainConfig::default()
        };
        let scfg = SamplerConfig::new(3, 3, 4);
        let lcfg = LossConfig {
            s: 10.0,
            gamma: 0.5,
            reduction: Reduction::Mean,
            ..LossConfig::default()
        };
        let report_for = |params: &ModelParams| {
            let probes = embed_split(params, &mcfg, &ds, Split::Probe).unwrap();
            let gallery = embed_split(params, &mcfg, &ds, Split::Gallery).unwrap();
            evaluate(&probes, &gallery).unwrap()
        };
        let untrained = report_for(&init_params(&mcfg, tcfg.seed));
        let out = train(ds.clone(), mcfg.clone(), tcfg, scfg, lcfg).unwrap();
        let trained = report_for(&out.params);
        assert!(
            trained.map > untrained.map,
            "trained mAP {} vs untrained {}",
            trained.map,
            untrained.map
        );
    }

    /// Full gradient path: joint loss through the embedder down to the
    /// first-layer weights, against finite differences over every
    /// trainable parameter.
    #[test]
    fn end_to_end_gradient_matches_finite_differences() {
        use crate::model::{backward_batch, forward_batch};
        use crate::numerics::finite_diff_grad;

        let mcfg = ModelConfig {
            input_dim: 3,
            hidden_dims: vec![4],
            embed_dim: 3,
            batch_norm_output: true,
            attribute_count: 0,
            attribute_slice_dim: 0,
            class_count: 2,
        };
        let params = init_params(&mcfg, 6);
        let raws: Vec<Vec<f64>> = vec![
            vec![0.5, -0.2, 0.9],
            vec![0.1, 0.7, -0.4],
            vec![-0.6, 0.2, 0.3],
            vec![0.9, -0.8, 0.1],
        ];
        let batch_meta = BatchEmbeddings {
            embeddings: vec![],
            labels: vec![0, 0, 1, 1],
            attributes: None,
            pk_shape: Some((2, 2)),
        };
        let lcfg = LossConfig {
            s: 4.0,
            m: 0.2,
            gamma: 0.6,
            triplet_margin: 0.4,
            ..LossConfig::default()
        };

        let loss_of = |p: &ModelParams| -> Result<f64, TrainError> {
            let (embeddings, _) = forward_batch(p, &mcfg, &raws)?;
            let batch = BatchEmbeddings {
                embeddings,
                ..batch_meta.clone()
            };
            Ok(crate::losses::joint(&batch, &p.heads, &lcfg)?.value)
        };

        // analytic: forward, loss backward, model backward, merge heads
        let (embeddings, cache) = forward_batch(&params, &mcfg, &raws).unwrap();
        let batch = BatchEmbeddings {
            embeddings,
            ..batch_meta.clone()
        };
        let loss = crate::losses::joint(&batch, &params.heads, &lcfg).unwrap();
        let mut grads = backward_batch(&params, &cache, &loss.grad_embeddings);
        grads.heads.add_scaled(loss.grad_weights.as_ref().unwrap(), 1.0);
        let analytic = grads.flatten();

        let fd = finite_diff_grad(
            |x| {
                let mut probe = params.clone();
                probe.unflatten(x);
                loss_of(&probe)
            },
            &params.flatten(),
            1e-6,
        )
        .unwrap();

        let scale = fd
            .iter()
            .chain(&analytic)
            .fold(1e-3f64, |m, v| m.max(v.abs()));
        let max_err = analytic
            .iter()
            .zip(&fd)
            .map(|(a, f)| (a - f).abs())
            .fold(0.0f64, f64::max);
        assert!(
            max_err / scale < 1e-4,
            "end-to-end rel err {:.3e}",
            max_err / scale
        );
    }
}

