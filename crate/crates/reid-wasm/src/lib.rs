//! Browser bindings for the training library: a live 2-D embedding demo
//! (train epoch by epoch, watch the test identities separate, read CMC and
//! mAP), plus the margin-softmax loss curve for slider exploration.
//!
//! The embedding dimension is fixed at 2 so the test split plots directly;
//! everything else reuses the library unchanged.

use wasm_bindgen::prelude::*;

use reid_core::data::{generate, Dataset, Split, SynthConfig};
use reid_core::eval::{evaluate, EvalItem};
use reid_core::losses::{LossConfig, Reduction};
use reid_core::model::ModelConfig;
use reid_core::numerics::log_sum_exp;
use reid_core::sampler::SamplerConfig;
use reid_core::trainer::{embed_split, LossVariant, TrainConfig, Trainer};

fn text_err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Per-angle values of the two-class margin softmax loss: the target logit
/// sits at angle `alpha` (with margin `m` and temperature `s`), the
/// competitor at a fixed cosine. Returns `points` interleaved
/// (alpha, loss) pairs for alpha in [0, pi].
#[wasm_bindgen]
pub fn margin_loss_curve(s: f64, m: f64, competitor_cos: f64, points: usize) -> Vec<f64> {
    let n = points.max(2);
    let mut out = Vec::with_capacity(2 * n);
    for i in 0..n {
        let alpha = std::f64::consts::PI * i as f64 / (n - 1) as f64;
        let target = s * (alpha + m).cos();
        let other = s * competitor_cos;
        let loss = log_sum_exp(&[target, other]).expect("two logits") - target;
        out.push(alpha);
        out.push(loss);
    }
    out
}

struct DemoState {
    trainer: Trainer,
    dataset: Dataset,
    loss_history: Vec<f64>,
}

/// An interactive training run on a small synthetic identity dataset with
/// a 2-D embedding.
#[wasm_bindgen]
pub struct Demo {
    state: DemoState,
    total_epochs: usize,
}

impl Demo {
    fn new_impl(
        data_seed: u32,
        train_seed: u32,
        variant: &str,
        gamma: f64,
        nuisance: f64,
        epochs: usize,
    ) -> Result<Demo, String> {
        let variant = LossVariant::parse(variant)
            .ok_or_else(|| format!("unknown variant {variant:?}"))?;
        if variant.uses_attributes() {
            return Err("the browser demo has no attribute annotations".into());
        }
        let epochs = epochs.clamp(10, 500);

        let synth = SynthConfig {
            n_identities: 16,
            samples_per_identity_min: 8,
            samples_per_identity_max: 10,
            input_dim: 8,
            n_cameras: 3,
            attribute_count: 0,
            identity_spread: 1.0,
            nuisance_scale: nuisance.clamp(0.0, 4.0),
            noise_sigma: 0.05,
            seed: data_seed as u64,
        };
        let dataset = generate(&synth).map_err(text_err)?;
        let class_count = dataset.train_per_identity().len();

        let model = ModelConfig {
            input_dim: synth.input_dim,
            hidden_dims: vec![32, 16],
            embed_dim: 2,
            batch_norm_output: true,
            attribute_count: 0,
            attribute_slice_dim: 0,
            class_count,
        };
        let train_cfg = TrainConfig {
            variant,
            seed: train_seed as u64,
            ..TrainConfig::default().scaled_to(epochs)
        };
        let sampler = SamplerConfig::new(4, 4, train_seed as u64);
        let loss = LossConfig {
            s: 10.0,
            gamma: gamma.clamp(0.0, 5.0),
            triplet_margin: 0.3,
            reduction: Reduction::Mean,
            ..LossConfig::default()
        };

        let trainer =
            Trainer::new(dataset.clone(), model, train_cfg, sampler, loss).map_err(text_err)?;
        Ok(Demo {
            state: DemoState {
                trainer,
                dataset,
                loss_history: Vec::new(),
            },
            total_epochs: epochs,
        })
    }

    fn run_epochs_impl(&mut self, n: usize) -> Result<(), String> {
        for _ in 0..n {
            if self.state.trainer.epoch() >= self.total_epochs {
                break;
            }
            let rows = self.state.trainer.run_epoch().map_err(text_err)?;
            let mean = rows.iter().map(|r| r.loss_total).sum::<f64>() / rows.len().max(1) as f64;
            self.state.loss_history.push(mean);
        }
        Ok(())
    }

    fn epoch_impl(&self) -> usize {
        self.state.trainer.epoch()
    }

    fn loss_history_impl(&self) -> Vec<f64> {
        self.state.loss_history.clone()
    }

    fn test_items(&self) -> Result<(Vec<EvalItem>, Vec<EvalItem>), String> {
        let params = self.state.trainer.params();
        let cfg = self.state.trainer.model_config();
        let probes =
            embed_split(params, cfg, &self.state.dataset, Split::Probe).map_err(text_err)?;
        let gallery =
            embed_split(params, cfg, &self.state.dataset, Split::Gallery).map_err(text_err)?;
        Ok((probes, gallery))
    }

    fn test_embeddings_impl(&self) -> Result<Vec<f64>, String> {
        let (probes, gallery) = self.test_items()?;
        let mut out = Vec::new();
        for item in probes.iter().chain(&gallery) {
            out.push(item.embedding[0]);
            out.push(item.embedding[1]);
            out.push(item.identity as f64);
            out.push(item.camera as f64);
        }
        Ok(out)
    }

    fn metrics_json_impl(&self) -> Result<String, String> {
        let (probes, gallery) = self.test_items()?;
        let report = evaluate(&probes, &gallery).map_err(text_err)?;
        let value = serde_json::json!({
            "epoch": self.state.trainer.epoch(),
            "rank1": report.rank(1),
            "rank5": report.rank(5),
            "map": report.map,
            "loss": self.state.loss_history.last().copied().unwrap_or(f64::NAN),
        });
        Ok(value.to_string())
    }

    fn cmc_impl(&self) -> Result<Vec<f64>, String> {
        let (probes, gallery) = self.test_items()?;
        let report = evaluate(&probes, &gallery).map_err(text_err)?;
        Ok((1..=10).map(|k| report.rank(k)).collect())
    }
}

#[wasm_bindgen]
impl Demo {
    /// `variant` is one of AM0, AM, BH, AM0BH1, AMBH, AM0BH, AM0BHsp.
    #[wasm_bindgen(constructor)]
    pub fn new(
        data_seed: u32,
        train_seed: u32,
        variant: &str,
        gamma: f64,
        nuisance: f64,
        epochs: usize,
    ) -> Result<Demo, JsValue> {
        Demo::new_impl(data_seed, train_seed, variant, gamma, nuisance, epochs)
            .map_err(|e| JsValue::from_str(&e))
    }

    /// Advances up to `n` epochs (stops at the configured total).
    pub fn run_epochs(&mut self, n: usize) -> Result<(), JsValue> {
        self.run_epochs_impl(n).map_err(|e| JsValue::from_str(&e))
    }

    pub fn epoch(&self) -> usize {
        self.epoch_impl()
    }

    pub fn total_epochs(&self) -> usize {
        self.total_epochs
    }

    pub fn done(&self) -> bool {
        self.state.trainer.epoch() >= self.total_epochs
    }

    /// Mean training loss per completed epoch.
    pub fn loss_history(&self) -> Vec<f64> {
        self.loss_history_impl()
    }

    /// Current 2-D embeddings of the test split, flattened as
    /// (x, y, identity, camera) per sample.
    pub fn test_embeddings(&self) -> Result<Vec<f64>, JsValue> {
        self.test_embeddings_impl().map_err(|e| JsValue::from_str(&e))
    }

    /// Retrieval metrics of the current parameters as a JSON object:
    /// `{"epoch":..,"rank1":..,"rank5":..,"map":..,"loss":..}`.
    pub fn metrics_json(&self) -> Result<String, JsValue> {
        self.metrics_json_impl().map_err(|e| JsValue::from_str(&e))
    }

    /// CMC curve (rank-1 ..= rank-10) of the current parameters.
    pub fn cmc(&self) -> Result<Vec<f64>, JsValue> {
        self.cmc_impl().map_err(|e| JsValue::from_str(&e))
    }
}
