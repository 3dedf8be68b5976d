//! Flat key=value run configuration: one file covers the generator, model,
//! trainer, sampler, and loss knobs. CLI flags override file values, and
//! the effective config is echoed into every output directory so a run can
//! be reproduced from its artifacts alone.

use reid_core::benchmark;
use reid_core::data::SynthConfig;
use reid_core::losses::{LossConfig, Reduction, Surrogate};
use reid_core::model::ModelConfig;
use reid_core::sampler::SamplerConfig;
use reid_core::trainer::{DecayPoint, LossVariant, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    // data generation
    pub n_identities: usize,
    pub samples_per_identity_min: usize,
    pub samples_per_identity_max: usize,
    pub input_dim: usize,
    pub n_cameras: usize,
    pub attribute_count: usize,
    pub identity_spread: f64,
    pub nuisance_scale: f64,
    pub noise_sigma: f64,
    // model
    pub hidden_dims: Vec<usize>,
    pub embed_dim: usize,
    pub batch_norm_output: bool,
    pub attribute_slice_dim: usize,
    // training
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub start_lr: f64,
    pub base_lr: f64,
    pub decay_epochs: Vec<DecayPoint>,
    pub variant: LossVariant,
    pub seed: u64,
    // sampler
    pub p: usize,
    pub k: usize,
    // loss
    pub s: f64,
    pub triplet_margin: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub surrogate: Surrogate,
    pub normalize_triplet_features: bool,
    pub reduction: Reduction,
}

impl Default for RunConfig {
    /// The bundled benchmark configuration.
    fn default() -> Self {
        let setup = benchmark::benchmark_setup(LossVariant::Am0Bh, benchmark::BENCH_DATA_SEED, 0);
        RunConfig {
            n_identities: setup.synth.n_identities,
            samples_per_identity_min: setup.synth.samples_per_identity_min,
            samples_per_identity_max: setup.synth.samples_per_identity_max,
            input_dim: setup.synth.input_dim,
            n_cameras: setup.synth.n_cameras,
            attribute_count: setup.synth.attribute_count,
            identity_spread: setup.synth.identity_spread,
            nuisance_scale: setup.synth.nuisance_scale,
            noise_sigma: setup.synth.noise_sigma,
            hidden_dims: setup.model.hidden_dims.clone(),
            embed_dim: setup.model.embed_dim,
            batch_norm_output: setup.model.batch_norm_output,
            attribute_slice_dim: benchmark::BENCH_Q,
            epochs: setup.train.epochs,
            warmup_epochs: setup.train.warmup_epochs,
            start_lr: setup.train.start_lr,
            base_lr: setup.train.base_lr,
            decay_epochs: setup.train.decay.clone(),
            variant: setup.train.variant,
            seed: benchmark::BENCH_DATA_SEED,
            p: setup.sampler.p,
            k: setup.sampler.k,
            s: setup.loss.s,
            triplet_margin: setup.loss.triplet_margin,
            gamma: setup.loss.gamma,
            lambda: setup.loss.lambda,
            surrogate: setup.loss.surrogate,
            normalize_triplet_features: setup.loss.normalize_triplet_features,
            reduction: setup.loss.reduction,
        }
    }
}

fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

impl RunConfig {
    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            n_identities: self.n_identities,
            samples_per_identity_min: self.samples_per_identity_min,
            samples_per_identity_max: self.samples_per_identity_max,
            input_dim: self.input_dim,
            n_cameras: self.n_cameras,
            attribute_count: self.attribute_count,
            identity_spread: self.identity_spread,
            nuisance_scale: self.nuisance_scale,
            noise_sigma: self.noise_sigma,
            seed: self.seed,
        }
    }

    /// Model config for a dataset with the given feature width, train
    /// class count, and attribute count.
    pub fn model_config(&self, input_dim: usize, class_count: usize, dataset_attrs: usize) -> ModelConfig {
        let attrs = if self.variant.uses_attributes() {
            dataset_attrs
        } else {
            0
        };
        ModelConfig {
            input_dim,
            hidden_dims: self.hidden_dims.clone(),
            embed_dim: self.embed_dim + attrs * self.attribute_slice_dim,
            batch_norm_output: self.batch_norm_output,
            attribute_count: attrs,
            attribute_slice_dim: if attrs > 0 { self.attribute_slice_dim } else { 0 },
            class_count,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            warmup_epochs: self.warmup_epochs,
            start_lr: self.start_lr,
            base_lr: self.base_lr,
            decay: self.decay_epochs.clone(),
            variant: self.variant,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig::new(self.p, self.k, self.seed)
    }

    /// Base loss config; the variant mapping pins the margin and surrogate
    /// when training starts.
    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            s: self.s,
            m: 0.0,
            triplet_margin: self.triplet_margin,
            gamma: self.gamma,
            lambda: self.lambda,
            surrogate: self.surrogate,
            normalize_triplet_features: self.normalize_triplet_features,
            reduction: self.reduction,
        }
    }

    /// Serializes as `key = value` lines; parseable by [`RunConfig::parse`].
    pub fn to_text(&self) -> String {
        let mut out = String::from("# reid run configuration\n");
        let mut push = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        push("n_identities", self.n_identities.to_string());
        push(
            "samples_per_identity_min",
            self.samples_per_identity_min.to_string(),
        );
        push(
            "samples_per_identity_max",
            self.samples_per_identity_max.to_string(),
        );
        push("input_dim", self.input_dim.to_string());
        push("n_cameras", self.n_cameras.to_string());
        push("attribute_count", self.attribute_count.to_string());
        push("identity_spread", fmt_f64(self.identity_spread));
        push("nuisance_scale", fmt_f64(self.nuisance_scale));
        push("noise_sigma", fmt_f64(self.noise_sigma));
        push(
            "hidden_dims",
            self.hidden_dims
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        push("embed_dim", self.embed_dim.to_string());
        push("batch_norm_output", self.batch_norm_output.to_string());
        push("attribute_slice_dim", self.attribute_slice_dim.to_string());
        push("epochs", self.epochs.to_string());
        push("warmup_epochs", self.warmup_epochs.to_string());
        push("start_lr", fmt_f64(self.start_lr));
        push("base_lr", fmt_f64(self.base_lr));
        push(
            "decay_epochs",
            self.decay_epochs
                .iter()
                .map(|d| format!("{}:{}", d.epoch, d.lr))
                .collect::<Vec<_>>()
                .join(","),
        );
        push("variant", self.variant.name().to_string());
        push("seed", self.seed.to_string());
        push("p", self.p.to_string());
        push("k", self.k.to_string());
        push("s", fmt_f64(self.s));
        push("triplet_margin", fmt_f64(self.triplet_margin));
        push("gamma", fmt_f64(self.gamma));
        push("lambda", fmt_f64(self.lambda));
        push(
            "surrogate",
            match self.surrogate {
                Surrogate::Hinge => "hinge".into(),
                Surrogate::Softplus => "softplus".into(),
            },
        );
        push(
            "normalize_triplet_features",
            self.normalize_triplet_features.to_string(),
        );
        push(
            "reduction",
            match self.reduction {
                Reduction::Sum => "sum".into(),
                Reduction::Mean => "mean".into(),
            },
        );
        out
    }

    /// Parses a key=value file on top of the defaults.
    pub fn parse(text: &str) -> Result<RunConfig, String> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key = value, got {raw:?}", lineno + 1))?;
            cfg.apply_kv(key.trim(), value.trim())
                .map_err(|e| format!("line {}: {e}", lineno + 1))?;
        }
        Ok(cfg)
    }

    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String>
        where
            T::Err: std::fmt::Display,
        {
            v.parse()
                .map_err(|e| format!("bad value {v:?} for {key}: {e}"))
        }
        match key {
            "n_identities" => self.n_identities = num(key, value)?,
            "samples_per_identity_min" => self.samples_per_identity_min = num(key, value)?,
            "samples_per_identity_max" => self.samples_per_identity_max = num(key, value)?,
            "input_dim" => self.input_dim = num(key, value)?,
            "n_cameras" => self.n_cameras = num(key, value)?,
            "attribute_count" => self.attribute_count = num(key, value)?,
            "identity_spread" => self.identity_spread = num(key, value)?,
            "nuisance_scale" => self.nuisance_scale = num(key, value)?,
            "noise_sigma" => self.noise_sigma = num(key, value)?,
            "hidden_dims" => {
                self.hidden_dims = if value.is_empty() {
                    Vec::new()
                } else {
                    value
                        .split(',')
                        .map(|v| num("hidden_dims", v.trim()))
                        .collect::<Result<_, _>>()?
                }
            }
            "embed_dim" => self.embed_dim = num(key, value)?,
            "batch_norm_output" => self.batch_norm_output = num(key, value)?,
            "attribute_slice_dim" => self.attribute_slice_dim = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "warmup_epochs" => self.warmup_epochs = num(key, value)?,
            "start_lr" => self.start_lr = num(key, value)?,
            "base_lr" => self.base_lr = num(key, value)?,
            "decay_epochs" => {
                let mut decay = Vec::new();
                if !value.is_empty() {
                    for part in value.split(',') {
                        let (e, lr) = part
                            .split_once(':')
                            .ok_or_else(|| format!("bad decay point {part:?}, want epoch:lr"))?;
                        decay.push(DecayPoint {
                            epoch: num("decay epoch", e.trim())?,
                            lr: num("decay lr", lr.trim())?,
                        });
                    }
                }
                self.decay_epochs = decay;
            }
            "variant" => {
                self.variant = LossVariant::parse(value)
                    .ok_or_else(|| format!("unknown variant {value:?}"))?
            }
            "seed" => self.seed = num(key, value)?,
            "p" => self.p = num(key, value)?,
            "k" => self.k = num(key, value)?,
            "s" => self.s = num(key, value)?,
            "triplet_margin" => self.triplet_margin = num(key, value)?,
            "gamma" => self.gamma = num(key, value)?,
            "lambda" => self.lambda = num(key, value)?,
            "surrogate" => {
                self.surrogate = match value {
                    "hinge" => Surrogate::Hinge,
                    "softplus" => Surrogate::Softplus,
                    other => return Err(format!("unknown surrogate {other:?}")),
                }
            }
            "normalize_triplet_features" => self.normalize_triplet_features = num(key, value)?,
            "reduction" => {
                self.reduction = match value {
                    "sum" => Reduction::Sum,
                    "mean" => Reduction::Mean,
                    other => return Err(format!("unknown reduction {other:?}")),
                }
            }
            other => return Err(format!("unknown config key {other:?}")),
        }
        Ok(())
    }

    /// Per-dataset hyperparameter presets. Attribute presets exist only
    /// where the underlying datasets have attribute annotations.
    pub fn apply_preset(&mut self, name: &str) -> Result<(), String> {
        match (name, self.variant.uses_attributes()) {
            ("market", false) => self.gamma = 0.43,
            ("duke", false) => self.gamma = 0.5,
            ("msmt", false) => self.gamma = 0.4,
            ("market", true) => {
                self.lambda = 0.25;
                self.gamma = 0.54;
            }
            ("duke", true) => {
                self.lambda = 0.2;
                self.gamma = 0.33;
            }
            ("msmt", true) => {
                return Err("msmt has no attribute annotations; use a non-attribute variant".into())
            }
            (other, _) => return Err(format!("unknown preset {other:?} (market, duke, msmt)")),
        }
        Ok(())
    }
}
