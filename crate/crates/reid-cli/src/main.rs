//! `reid`: synthetic identity datasets, metric-embedding training,
//! retrieval evaluation, gradient checking, loss ablations, and parameter
//! sweeps, all from one binary.
//!
//! Exit codes: 0 success, 1 validation/config errors, 2 runtime failures.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use reid_core::data::{self, Dataset, Split};
use reid_core::eval::{self, EvalReport};
use reid_core::gradcheck::{check_loss_gradients, ALL_KINDS, GRAD_TOLERANCE};
use reid_core::model::{load_checkpoint, save_checkpoint};
use reid_core::trainer::{
    embed_split, metrics_log_csv, train, TrainOutcome, ABLATION_VARIANTS,
};

#[derive(Debug)]
enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => m,
        }
    }
}

fn validation(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

fn runtime(msg: impl Into<String>) -> CliError {
    CliError::Runtime(msg.into())
}

#[derive(Parser)]
#[command(
    name = "reid",
    about = "Metric embedding learning at desk scale: margin softmax + batch-hard triplet losses, PK sampling, CMC/mAP evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every command that builds a run configuration. Flags
/// mirror the config-file keys (kebab-case) and override file values.
#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// Key=value config file; defaults are the bundled benchmark.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n_identities: Option<usize>,
    #[arg(long)]
    samples_per_identity_min: Option<usize>,
    #[arg(long)]
    samples_per_identity_max: Option<usize>,
    #[arg(long)]
    input_dim: Option<usize>,
    #[arg(long)]
    n_cameras: Option<usize>,
    #[arg(long)]
    attribute_count: Option<usize>,
    #[arg(long)]
    identity_spread: Option<f64>,
    #[arg(long)]
    nuisance_scale: Option<f64>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    /// Comma-separated hidden layer widths.
    #[arg(long)]
    hidden_dims: Option<String>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    batch_norm_output: Option<bool>,
    #[arg(long)]
    attribute_slice_dim: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    warmup_epochs: Option<usize>,
    #[arg(long)]
    start_lr: Option<f64>,
    #[arg(long)]
    base_lr: Option<f64>,
    /// Comma-separated epoch:lr decay points.
    #[arg(long)]
    decay_epochs: Option<String>,
    /// AM0, AM, BH, AM0BH1, AMBH, AM0BH, AM0BHsp, AM0BH_Attr.
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    s: Option<f64>,
    #[arg(long)]
    triplet_margin: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    /// hinge or softplus.
    #[arg(long)]
    surrogate: Option<String>,
    #[arg(long)]
    normalize_triplet_features: Option<bool>,
    /// sum or mean.
    #[arg(long)]
    reduction: Option<String>,
    /// Per-dataset hyperparameter preset: market, duke, or msmt.
    #[arg(long)]
    preset: Option<String>,
}

impl ConfigArgs {
    fn build(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    validation(format!("cannot read config {}: {e}", path.display()))
                })?;
                RunConfig::parse(&text).map_err(validation)?
            }
            None => RunConfig::default(),
        };
        let mut set = |key: &str, value: Option<String>| -> Result<(), CliError> {
            if let Some(v) = value {
                cfg.apply_kv(key, &v).map_err(validation)?;
            }
            Ok(())
        };
        set("n_identities", self.n_identities.map(|v| v.to_string()))?;
        set(
            "samples_per_identity_min",
            self.samples_per_identity_min.map(|v| v.to_string()),
        )?;
        set(
            "samples_per_identity_max",
            self.samples_per_identity_max.map(|v| v.to_string()),
        )?;
        set("input_dim", self.input_dim.map(|v| v.to_string()))?;
        set("n_cameras", self.n_cameras.map(|v| v.to_string()))?;
        set("attribute_count", self.attribute_count.map(|v| v.to_string()))?;
        set("identity_spread", self.identity_spread.map(|v| v.to_string()))?;
        set("nuisance_scale", self.nuisance_scale.map(|v| v.to_string()))?;
        set("noise_sigma", self.noise_sigma.map(|v| v.to_string()))?;
        set("hidden_dims", self.hidden_dims.clone())?;
        set("embed_dim", self.embed_dim.map(|v| v.to_string()))?;
        set(
            "batch_norm_output",
            self.batch_norm_output.map(|v| v.to_string()),
        )?;
        set(
            "attribute_slice_dim",
            self.attribute_slice_dim.map(|v| v.to_string()),
        )?;
        set("epochs", self.epochs.map(|v| v.to_string()))?;
        set("warmup_epochs", self.warmup_epochs.map(|v| v.to_string()))?;
        set("start_lr", self.start_lr.map(|v| v.to_string()))?;
        set("base_lr", self.base_lr.map(|v| v.to_string()))?;
        set("decay_epochs", self.decay_epochs.clone())?;
        set("variant", self.variant.clone())?;
        set("seed", self.seed.map(|v| v.to_string()))?;
        set("p", self.p.map(|v| v.to_string()))?;
        set("k", self.k.map(|v| v.to_string()))?;
        set("s", self.s.map(|v| v.to_string()))?;
        set("triplet_margin", self.triplet_margin.map(|v| v.to_string()))?;
        set("gamma", self.gamma.map(|v| v.to_string()))?;
        set("lambda", self.lambda.map(|v| v.to_string()))?;
        set("surrogate", self.surrogate.clone())?;
        set(
            "normalize_triplet_features",
            self.normalize_triplet_features.map(|v| v.to_string()),
        )?;
        set("reduction", self.reduction.clone())?;
        if let Some(preset) = &self.preset {
            cfg.apply_preset(preset).map_err(validation)?;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic identity dataset and write it as CSV.
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output dataset path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a variant on a dataset; writes checkpoint.json, metrics.csv,
    /// and config.txt into the output directory.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset's probe/gallery split; writes
    /// report.csv and report.md.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Compare every analytic loss gradient against central finite
    /// differences; prints one line per loss.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        cases: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Negative control: corrupt the analytic gradients (the check
        /// must then fail).
        #[arg(long, hide = true)]
        corrupt: bool,
    },
    /// Run all seven ablation variants with shared seeds; writes a
    /// mean +/- std table over repeats.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
    },
    /// Sweep one axis (Q, P, K, gamma, lambda) over a list of values;
    /// writes (value, rank1, map) rows.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Q, P, K, gamma, or lambda.
        #[arg(long)]
        axis: String,
        /// Comma-separated values for the axis.
        #[arg(long)]
        values: String,
    },
}

/// Resolves a path against `REID_OUT_ROOT` when it is relative.
fn resolve_out(path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os("REID_OUT_ROOT") {
        Some(root) => PathBuf::from(root).join(path),
        None => path.to_path_buf(),
    }
}

fn prepare_out_dir(dir: &Path) -> Result<PathBuf, CliError> {
    let dir = resolve_out(dir);
    std::fs::create_dir_all(&dir)
        .map_err(|e| runtime(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    data::read_dataset(path).map_err(|e| match e {
        data::DataError::Io(io) => runtime(format!("{}: {io}", path.display())),
        other => validation(format!("{}: {other}", path.display())),
    })
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents)
        .map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))
}

fn run_training(cfg: &RunConfig, dataset: &Dataset) -> Result<TrainOutcome, CliError> {
    let class_count = dataset.train_per_identity().len();
    let model_cfg = cfg.model_config(dataset.input_dim, class_count, dataset.attribute_count);
    train(
        dataset.clone(),
        model_cfg,
        cfg.train_config(),
        cfg.sampler_config(),
        cfg.loss_config(),
    )
    .map_err(|e| match e {
        reid_core::trainer::TrainError::ConfigConflict(_) => validation(e.to_string()),
        other => runtime(other.to_string()),
    })
}

fn evaluate_outcome(outcome: &TrainOutcome, dataset: &Dataset) -> Result<EvalReport, CliError> {
    let probes = embed_split(&outcome.params, &outcome.model_config, dataset, Split::Probe)
        .map_err(|e| runtime(e.to_string()))?;
    let gallery = embed_split(&outcome.params, &outcome.model_config, dataset, Split::Gallery)
        .map_err(|e| runtime(e.to_string()))?;
    eval::evaluate(&probes, &gallery).map_err(|e| runtime(e.to_string()))
}

fn cmd_synth(cfg: &ConfigArgs, out: &Path) -> Result<(), CliError> {
    let run_cfg = cfg.build()?;
    let synth = run_cfg.synth_config();
    synth.validate().map_err(|e| validation(e.to_string()))?;
    let dataset = data::generate(&synth).map_err(|e| validation(e.to_string()))?;
    let out = resolve_out(out);
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| runtime(format!("cannot create {}: {e}", parent.display())))?;
        }
    }
    data::write_dataset(&out, &dataset).map_err(|e| runtime(e.to_string()))?;
    let (train_n, probe_n, gallery_n) = (
        dataset.indices_of(Split::Train).len(),
        dataset.indices_of(Split::Probe).len(),
        dataset.indices_of(Split::Gallery).len(),
    );
    println!(
        "wrote {}: {} samples ({} train / {} probe / {} gallery), {} identities, {} cameras, {} attributes",
        out.display(),
        dataset.samples.len(),
        train_n,
        probe_n,
        gallery_n,
        synth.n_identities,
        synth.n_cameras,
        dataset.attribute_count
    );
    Ok(())
}

fn cmd_train(cfg: &ConfigArgs, dataset_path: &Path, out_dir: &Path) -> Result<(), CliError> {
    let run_cfg = cfg.build()?;
    let dataset = load_dataset(dataset_path)?;
    let out_dir = prepare_out_dir(out_dir)?;
    let outcome = run_training(&run_cfg, &dataset)?;

    save_checkpoint(
        &out_dir.join("checkpoint.json"),
        &outcome.model_config,
        &outcome.params,
    )
    .map_err(|e| runtime(e.to_string()))?;
    write_file(&out_dir.join("metrics.csv"), &metrics_log_csv(&outcome.log))?;
    write_file(&out_dir.join("config.txt"), &run_cfg.to_text())?;

    let last = outcome.log.last().expect("training ran at least one step");
    println!(
        "trained {} for {} epochs ({} steps); final loss {:.6}",
        run_cfg.variant.name(),
        run_cfg.epochs,
        outcome.log.len(),
        last.loss_total
    );
    println!("artifacts in {}", out_dir.display());
    Ok(())
}

fn cmd_eval(checkpoint: &Path, dataset_path: &Path, out_dir: &Path) -> Result<(), CliError> {
    let (model_cfg, params) = load_checkpoint(checkpoint).map_err(|e| match e {
        reid_core::model::CheckpointError::Io(io) => {
            runtime(format!("{}: {io}", checkpoint.display()))
        }
        other => validation(other.to_string()),
    })?;
    let dataset = load_dataset(dataset_path)?;
    if dataset.input_dim != model_cfg.input_dim {
        return Err(validation(format!(
            "checkpoint expects {}-dim inputs, dataset has {}",
            model_cfg.input_dim, dataset.input_dim
        )));
    }
    let out_dir = prepare_out_dir(out_dir)?;

    let probes = embed_split(&params, &model_cfg, &dataset, Split::Probe)
        .map_err(|e| runtime(e.to_string()))?;
    let gallery = embed_split(&params, &model_cfg, &dataset, Split::Gallery)
        .map_err(|e| runtime(e.to_string()))?;
    let report = eval::evaluate(&probes, &gallery).map_err(|e| runtime(e.to_string()))?;

    write_file(&out_dir.join("report.csv"), &report.to_csv())?;
    let mut md = report.to_markdown();
    if model_cfg.attribute_count > 0 && dataset.attribute_count == model_cfg.attribute_count {
        let plan = model_cfg.slice_plan();
        let mut embs = Vec::new();
        let mut bits = Vec::new();
        for split in [Split::Probe, Split::Gallery] {
            for i in dataset.indices_of(split) {
                let s = &dataset.samples[i];
                embs.push(
                    reid_core::model::forward(&params, &model_cfg, &s.features)
                        .map_err(|e| runtime(e.to_string()))?,
                );
                bits.push(s.attributes.clone());
            }
        }
        let acc = eval::attribute_accuracy(&embs, &bits, &params.heads, &plan)
            .map_err(|e| runtime(e.to_string()))?;
        md.push_str(&format!("\nattribute accuracy: {acc:.4}\n"));
    }
    write_file(&out_dir.join("report.md"), &md)?;
    print!("{md}");
    Ok(())
}

fn cmd_gradcheck(cases: usize, seed: u64, corrupt: bool) -> Result<(), CliError> {
    if cases == 0 {
        return Err(validation("need at least one case"));
    }
    println!("{:<24} {:>8} {:>14}  result", "loss", "cases", "max rel err");
    let mut all_pass = true;
    for kind in ALL_KINDS {
        let outcome = check_loss_gradients(kind, cases, seed, corrupt)
            .map_err(|e| runtime(e.to_string()))?;
        all_pass &= outcome.passed();
        println!(
            "{:<24} {:>8} {:>14.3e}  {}",
            kind.label(),
            outcome.cases,
            outcome.max_rel_err,
            if outcome.passed() { "pass" } else { "FAIL" }
        );
    }
    if !all_pass {
        return Err(runtime(format!(
            "at least one analytic gradient deviates from finite differences beyond {GRAD_TOLERANCE:e}"
        )));
    }
    println!("all gradients match finite differences (tolerance {GRAD_TOLERANCE:e})");
    Ok(())
}

struct VariantStats {
    rank1: Vec<f64>,
    rank5: Vec<f64>,
    rank10: Vec<f64>,
    map: Vec<f64>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn cmd_ablate(
    cfg: &ConfigArgs,
    dataset_path: &Path,
    out_dir: &Path,
    repeats: usize,
) -> Result<(), CliError> {
    if repeats == 0 {
        return Err(validation("need at least one repeat"));
    }
    let base_cfg = cfg.build()?;
    let dataset = load_dataset(dataset_path)?;
    let out_dir = prepare_out_dir(out_dir)?;

    let mut csv = String::from("variant,repeat,seed,rank1,rank5,rank10,map\n");
    let mut md = String::from(
        "| Loss | Rank-1 | Rank-5 | Rank-10 | mAP |\n|---|---|---|---|---|\n",
    );
    for variant in ABLATION_VARIANTS {
        let mut stats = VariantStats {
            rank1: Vec::new(),
            rank5: Vec::new(),
            rank10: Vec::new(),
            map: Vec::new(),
        };
        for rep in 0..repeats {
            let mut run_cfg = base_cfg.clone();
            run_cfg.variant = variant;
            run_cfg.seed = base_cfg.seed.wrapping_add(rep as u64);
            let outcome = run_training(&run_cfg, &dataset)?;
            let report = evaluate_outcome(&outcome, &dataset)?;
            csv.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                variant.name(),
                rep,
                run_cfg.seed,
                report.rank(1),
                report.rank(5),
                report.rank(10),
                report.map
            ));
            stats.rank1.push(report.rank(1));
            stats.rank5.push(report.rank(5));
            stats.rank10.push(report.rank(10));
            stats.map.push(report.map);
        }
        let cells: Vec<String> = [&stats.rank1, &stats.rank5, &stats.rank10, &stats.map]
            .iter()
            .map(|xs| {
                let (m, s) = mean_std(xs);
                format!("{m:.4} ± {s:.4}")
            })
            .collect();
        md.push_str(&format!("| {} | {} |\n", variant.name(), cells.join(" | ")));
    }
    write_file(&out_dir.join("ablation.csv"), &csv)?;
    write_file(&out_dir.join("ablation.md"), &md)?;
    write_file(&out_dir.join("config.txt"), &base_cfg.to_text())?;
    print!("{md}");
    println!("ablation artifacts in {}", out_dir.display());
    Ok(())
}

fn cmd_sweep(
    cfg: &ConfigArgs,
    dataset_path: &Path,
    out_dir: &Path,
    axis: &str,
    values: &str,
) -> Result<(), CliError> {
    let base_cfg = cfg.build()?;
    let dataset = load_dataset(dataset_path)?;

    let axis_lc = axis.to_ascii_lowercase();
    if !["q", "p", "k", "gamma", "lambda"].contains(&axis_lc.as_str()) {
        return Err(validation(format!(
            "invalid axis {axis:?}: choose Q, P, K, gamma, or lambda"
        )));
    }
    if axis_lc == "q" && !base_cfg.variant.uses_attributes() {
        return Err(validation(format!(
            "axis Q only applies to attribute variants, not {}",
            base_cfg.variant.name()
        )));
    }
    if axis_lc == "lambda" && !base_cfg.variant.uses_attributes() {
        return Err(validation(format!(
            "axis lambda only applies to attribute variants, not {}",
            base_cfg.variant.name()
        )));
    }
    if axis_lc == "gamma" && !base_cfg.variant.uses_triplet() {
        return Err(validation(format!(
            "axis gamma needs a triplet term; variant {} has none",
            base_cfg.variant.name()
        )));
    }
    let parsed: Vec<f64> = values
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|e| validation(format!("bad sweep value {v:?}: {e}")))
        })
        .collect::<Result<_, _>>()?;
    if parsed.is_empty() {
        return Err(validation("no sweep values given"));
    }

    let out_dir = prepare_out_dir(out_dir)?;
    let mut csv = format!("{axis_lc},rank1,map\n");
    for &value in &parsed {
        let mut run_cfg = base_cfg.clone();
        match axis_lc.as_str() {
            "q" => run_cfg.attribute_slice_dim = as_count(value, "Q")?,
            "p" => run_cfg.p = as_count(value, "P")?,
            "k" => run_cfg.k = as_count(value, "K")?,
            "gamma" => run_cfg.gamma = value,
            "lambda" => run_cfg.lambda = value,
            _ => unreachable!(),
        }
        let outcome = run_training(&run_cfg, &dataset)?;
        let report = evaluate_outcome(&outcome, &dataset)?;
        println!(
            "{axis_lc} = {value}: rank1 {:.4}, mAP {:.4}",
            report.rank(1),
            report.map
        );
        csv.push_str(&format!("{value},{},{}\n", report.rank(1), report.map));
    }
    write_file(&out_dir.join("sweep.csv"), &csv)?;
    write_file(&out_dir.join("config.txt"), &base_cfg.to_text())?;
    println!("sweep artifacts in {}", out_dir.display());
    Ok(())
}

fn as_count(value: f64, name: &str) -> Result<usize, CliError> {
    if value.fract() != 0.0 || value < 1.0 {
        return Err(validation(format!("{name} values must be positive integers, got {value}")));
    }
    Ok(value as usize)
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Synth { cfg, out } => cmd_synth(cfg, out),
        Command::Train {
            cfg,
            dataset,
            out_dir,
        } => cmd_train(cfg, dataset, out_dir),
        Command::Eval {
            checkpoint,
            dataset,
            out_dir,
        } => cmd_eval(checkpoint, dataset, out_dir),
        Command::Gradcheck {
            cases,
            seed,
            corrupt,
        } => cmd_gradcheck(*cases, *seed, *corrupt),
        Command::Ablate {
            cfg,
            dataset,
            out_dir,
            repeats,
        } => cmd_ablate(cfg, dataset, out_dir, *repeats),
        Command::Sweep {
            cfg,
            dataset,
            out_dir,
            axis,
            values,
        } => cmd_sweep(cfg, dataset, out_dir, axis, values),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version print and exit cleanly; usage problems are
            // validation errors
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
