//! The desk-scale embedding function: a feedforward network (affine layers
//! with rectifier nonlinearities on the hidden layers, a linear embedding
//! output) followed by an optional output standardization with running
//! statistics and a learned affine, standing in for the pooling + batch
//! norm stage of the full-scale architecture.
//!
//! The embedding splits into M leading attribute slices of width Q plus the
//! identity remainder. Classifier heads (identity and per-attribute) live
//! next to the network parameters so one checkpoint carries everything.
//!
//! Forward always reads the running statistics, so it is a pure function of
//! `(params, input)`; only the trainer refreshes the statistics, between
//! steps.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::losses::{HeadWeights, SlicePlan};
use crate::numerics::Mat;
use crate::rng::Rng;

pub const BN_EPS: f64 = 1e-5;
/// EMA factor for the running statistics update.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input has {got} dims, model expects {expected}")]
    DimMismatch { got: usize, expected: usize },
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("not a model checkpoint (format tag {0:?})")]
    WrongFormat(String),
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub embed_dim: usize,
    pub batch_norm_output: bool,
    /// Number of binary attributes M (0 disables the attribute slices).
    pub attribute_count: usize,
    /// Width Q of each attribute slice.
    pub attribute_slice_dim: usize,
    /// Identity class count c.
    pub class_count: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_dim == 0 || self.embed_dim == 0 {
            return Err(ModelError::InvalidConfig(
                "input_dim and embed_dim must be positive".into(),
            ));
        }
        if self.class_count < 2 {
            return Err(ModelError::InvalidConfig(format!(
                "need at least 2 identity classes, got {}",
                self.class_count
            )));
        }
        let attr_total = self.attribute_count * self.attribute_slice_dim;
        if attr_total >= self.embed_dim && self.attribute_count > 0 {
            return Err(ModelError::InvalidConfig(format!(
                "attribute slices need {attr_total} dims, embedding has {} and the identity slice would be empty",
                self.embed_dim
            )));
        }
        Ok(())
    }

    pub fn id_dim(&self) -> usize {
        self.embed_dim - self.attribute_count * self.attribute_slice_dim
    }

    pub fn slice_plan(&self) -> SlicePlan {
        SlicePlan::new(self.attribute_count, self.attribute_slice_dim, self.embed_dim)
            .expect("validated config always yields a plan")
    }

    /// Full layer widths: input, hidden..., embedding.
    fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden_dims.len() + 2);
        w.push(self.input_dim);
        w.extend_from_slice(&self.hidden_dims);
        w.push(self.embed_dim);
        w
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    /// out x in.
    pub weight: Mat,
    pub bias: Vec<f64>,
}

/// Per-dimension standardization with running statistics and a learned
/// affine. The statistics are constants during forward/backward and only
/// refreshed by the trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputNorm {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub layers: Vec<Affine>,
    pub output_norm: Option<OutputNorm>,
    pub heads: HeadWeights,
}

impl ModelParams {
    pub fn zeros_like(&self) -> ModelParams {
        ModelParams {
            layers: self
                .layers
                .iter()
                .map(|l| Affine {
                    weight: Mat::zeros(l.weight.rows(), l.weight.cols()),
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
            output_norm: self.output_norm.as_ref().map(|n| OutputNorm {
                running_mean: vec![0.0; n.running_mean.len()],
                running_var: vec![0.0; n.running_var.len()],
                scale: vec![0.0; n.scale.len()],
                shift: vec![0.0; n.shift.len()],
            }),
            heads: self.heads.zeros_like(),
        }
    }

    /// Trainable tensors in a fixed order: layer weights and biases, norm
    /// scale and shift, identity head, attribute heads. Running statistics
    /// and the (fixed zero) head bias are excluded.
    pub fn trainable_tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.layers {
            out.push(l.weight.data());
            out.push(&l.bias);
        }
        if let Some(n) = &self.output_norm {
            out.push(&n.scale);
            out.push(&n.shift);
        }
        out.push(self.heads.identity_head.data());
        for h in &self.heads.attribute_heads {
            out.push(h.data());
        }
        out
    }

    pub fn trainable_tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.layers {
            let Affine { weight, bias } = l;
            out.push(weight.data_mut());
            out.push(bias.as_mut_slice());
        }
        if let Some(n) = &mut self.output_norm {
            out.push(n.scale.as_mut_slice());
            out.push(n.shift.as_mut_slice());
        }
        out.push(self.heads.identity_head.data_mut());
        for h in &mut self.heads.attribute_heads {
            out.push(h.data_mut());
        }
        out
    }

    /// Flattens the trainable tensors (for finite-difference checks).
    pub fn flatten(&self) -> Vec<f64> {
        self.trainable_tensors().concat()
    }

    pub fn unflatten(&mut self, flat: &[f64]) {
        let mut pos = 0;
        for t in self.trainable_tensors_mut() {
            t.copy_from_slice(&flat[pos..pos + t.len()]);
            pos += t.len();
        }
        assert_eq!(pos, flat.len(), "flat vector length mismatch");
    }

    pub fn all_finite(&self) -> bool {
        self.trainable_tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Draws layer weights from a variance-scaled symmetric (Glorot-uniform)
/// distribution, zero biases, unit norm statistics, and unit-normalized
/// head columns. Deterministic per seed.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> ModelParams {
    let mut rng = Rng::new(seed);
    let widths = cfg.widths();
    let layers = widths
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            Affine {
                weight: Mat::from_vec(
                    fan_out,
                    fan_in,
                    (0..fan_in * fan_out)
                        .map(|_| rng.uniform(-limit, limit))
                        .collect(),
                ),
                bias: vec![0.0; fan_out],
            }
        })
        .collect();

    let output_norm = cfg.batch_norm_output.then(|| OutputNorm {
        running_mean: vec![0.0; cfg.embed_dim],
        running_var: vec![1.0; cfg.embed_dim],
        scale: vec![1.0; cfg.embed_dim],
        shift: vec![0.0; cfg.embed_dim],
    });

    let mut unit_columns = |rows: usize, cols: usize| -> Mat {
        let mut m = Mat::zeros(rows, cols);
        for j in 0..cols {
            let col = loop {
                let v = rng.normal_vec(rows, 1.0);
                if let Ok((hat, _)) = crate::numerics::l2_normalize(&v) {
                    break hat;
                }
            };
            for (r, v) in col.iter().enumerate() {
                m.set(r, j, *v);
            }
        }
        m
    };

    let heads = HeadWeights {
        identity_head: unit_columns(cfg.id_dim(), cfg.class_count),
        attribute_heads: (0..cfg.attribute_count)
            .map(|_| unit_columns(cfg.attribute_slice_dim, 2))
            .collect(),
        bias: vec![0.0; cfg.class_count],
    };

    ModelParams {
        layers,
        output_norm,
        heads,
    }
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Per sample: inputs to each affine layer.
    inputs: Vec<Vec<Vec<f64>>>,
    /// Per sample: pre-activations of each layer (the last one is the
    /// embedding before output normalization).
    preacts: Vec<Vec<Vec<f64>>>,
}

impl ForwardCache {
    /// Embeddings before output normalization, one per sample (used by the
    /// trainer to refresh running statistics).
    pub fn pre_norm_embeddings(&self) -> Vec<&[f64]> {
        self.preacts
            .iter()
            .map(|p| p.last().expect("at least one layer").as_slice())
            .collect()
    }
}

fn forward_one(
    params: &ModelParams,
    raw: &[f64],
    inputs: &mut Vec<Vec<f64>>,
    preacts: &mut Vec<Vec<f64>>,
) -> Vec<f64> {
    let n_layers = params.layers.len();
    let mut h = raw.to_vec();
    for (l, layer) in params.layers.iter().enumerate() {
        inputs.push(h.clone());
        let mut a = layer.weight.matvec(&h);
        for (ai, bi) in a.iter_mut().zip(&layer.bias) {
            *ai += bi;
        }
        preacts.push(a.clone());
        if l < n_layers - 1 {
            for v in a.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        h = a;
    }
    if let Some(norm) = &params.output_norm {
        for (r, v) in h.iter_mut().enumerate() {
            *v = norm.scale[r] * (*v - norm.running_mean[r])
                / (norm.running_var[r] + BN_EPS).sqrt()
                + norm.shift[r];
        }
    }
    h
}

/// Embeds a single sample.
pub fn forward(
    params: &ModelParams,
    cfg: &ModelConfig,
    raw: &[f64],
) -> Result<Vec<f64>, ModelError> {
    if raw.len() != cfg.input_dim {
        return Err(ModelError::DimMismatch {
            got: raw.len(),
            expected: cfg.input_dim,
        });
    }
    let (mut inputs, mut preacts) = (Vec::new(), Vec::new());
    Ok(forward_one(params, raw, &mut inputs, &mut preacts))
}

/// Embeds a batch and keeps the activations needed by [`backward_batch`].
pub fn forward_batch(
    params: &ModelParams,
    cfg: &ModelConfig,
    raws: &[Vec<f64>],
) -> Result<(Vec<Vec<f64>>, ForwardCache), ModelError> {
    let mut embeddings = Vec::with_capacity(raws.len());
    let mut cache = ForwardCache {
        inputs: Vec::with_capacity(raws.len()),
        preacts: Vec::with_capacity(raws.len()),
    };
    for raw in raws {
        if raw.len() != cfg.input_dim {
            return Err(ModelError::DimMismatch {
                got: raw.len(),
                expected: cfg.input_dim,
            });
        }
        let (mut inputs, mut preacts) = (Vec::new(), Vec::new());
        embeddings.push(forward_one(params, raw, &mut inputs, &mut preacts));
        cache.inputs.push(inputs);
        cache.preacts.push(preacts);
    }
    Ok((embeddings, cache))
}

/// Backpropagates embedding gradients into layer and norm-affine gradients.
/// Head gradients come from the loss and are merged by the caller.
pub fn backward_batch(
    params: &ModelParams,
    cache: &ForwardCache,
    grad_embeddings: &[Vec<f64>],
) -> ModelParams {
    let mut grads = params.zeros_like();
    let n_layers = params.layers.len();

    for (sample, grad_out) in grad_embeddings.iter().enumerate() {
        let inputs = &cache.inputs[sample];
        let preacts = &cache.preacts[sample];

        let mut g: Vec<f64> = if let Some(norm) = &params.output_norm {
            let gn = grads.output_norm.as_mut().expect("same shape");
            let e = preacts.last().expect("at least one layer");
            let mut mapped = vec![0.0; grad_out.len()];
            for r in 0..grad_out.len() {
                let inv_std = 1.0 / (norm.running_var[r] + BN_EPS).sqrt();
                gn.scale[r] += grad_out[r] * (e[r] - norm.running_mean[r]) * inv_std;
                gn.shift[r] += grad_out[r];
                mapped[r] = grad_out[r] * norm.scale[r] * inv_std;
            }
            mapped
        } else {
            grad_out.clone()
        };

        for l in (0..n_layers).rev() {
            if l < n_layers - 1 {
                for (gv, av) in g.iter_mut().zip(&preacts[l]) {
                    if *av <= 0.0 {
                        *gv = 0.0;
                    }
                }
            }
            let layer = &params.layers[l];
            let glayer = &mut grads.layers[l];
            let h_in = &inputs[l];
            for r in 0..layer.weight.rows() {
                glayer.bias[r] += g[r];
                let row = glayer.weight.row_mut(r);
                for (cidx, hv) in h_in.iter().enumerate() {
                    row[cidx] += g[r] * hv;
                }
            }
            // g_in = W^T g
            let mut g_in = vec![0.0; layer.weight.cols()];
            for r in 0..layer.weight.rows() {
                let row = layer.weight.row(r);
                for (cidx, gi) in g_in.iter_mut().enumerate() {
                    *gi += row[cidx] * g[r];
                }
            }
            g = g_in;
        }
    }
    grads
}

/// EMA update of the output-normalization statistics from a batch of
/// pre-normalization embeddings. No-op when the norm stage is disabled.
pub fn update_output_stats(params: &mut ModelParams, pre_norm: &[&[f64]]) {
    let Some(norm) = &mut params.output_norm else {
        return;
    };
    if pre_norm.is_empty() {
        return;
    }
    let n = pre_norm.len() as f64;
    let d = norm.running_mean.len();
    for r in 0..d {
        let mean = pre_norm.iter().map(|e| e[r]).sum::<f64>() / n;
        let var = pre_norm.iter().map(|e| (e[r] - mean) * (e[r] - mean)).sum::<f64>() / n;
        norm.running_mean[r] = (1.0 - BN_MOMENTUM) * norm.running_mean[r] + BN_MOMENTUM * mean;
        norm.running_var[r] = (1.0 - BN_MOMENTUM) * norm.running_var[r] + BN_MOMENTUM * var;
    }
}

/// Splits an embedding into the identity part and the M attribute slices.
/// Concatenating the returned pieces in (attributes, identity) order
/// reconstructs the input.
pub fn split_embedding(
    embedding: &[f64],
    cfg: &ModelConfig,
) -> Result<(Vec<f64>, Vec<Vec<f64>>), crate::losses::LossError> {
    let plan = SlicePlan::new(cfg.attribute_count, cfg.attribute_slice_dim, embedding.len())?;
    let f_id = embedding[plan.id_range()].to_vec();
    let f_attr = (0..plan.attr_count)
        .map(|k| embedding[plan.attr_range(k)].to_vec())
        .collect();
    Ok((f_id, f_attr))
}

const CHECKPOINT_FORMAT: &str = "reid-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    config: ModelConfig,
    params: ModelParams,
}

/// Writes config + parameters as versioned JSON. `f64` values survive the
/// round trip exactly (shortest-roundtrip formatting).
pub fn save_checkpoint(
    path: &Path,
    cfg: &ModelConfig,
    params: &ModelParams,
) -> Result<(), CheckpointError> {
    let ckpt = Checkpoint {
        format: CHECKPOINT_FORMAT.to_string(),
        version: CHECKPOINT_VERSION,
        config: cfg.clone(),
        params: params.clone(),
    };
    let mut file = std::fs::File::create(path)?;
    file.write_all(serde_json::to_string(&ckpt)?.as_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, ModelParams), CheckpointError> {
    let mut text = String::new();
    std::fs::File::open(path)?.read_to_string(&mut text)?;
    let ckpt: Checkpoint = serde_json::from_str(&text)?;
    if ckpt.format != CHECKPOINT_FORMAT {
        return Err(CheckpointError::WrongFormat(ckpt.format));
    }
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(ckpt.version));
    }
    Ok((ckpt.config, ckpt.params))
}
