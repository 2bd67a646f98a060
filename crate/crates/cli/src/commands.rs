//! Command implementations behind the `softmoe` binary: train a model to a
//! checkpoint, run a named experiment to a results table, or time the
//! subset-selection latency protocol.

use std::path::{Path, PathBuf};

use softmoe_core::datasets::NormTaskConfig;
use softmoe_core::experiments::{
    classification_task, emit_results, latency_rows, run_accuracy_vs_n, run_latency_bench,
    run_norm_experiment, run_specialization_table, ExperimentConfig, ResultFormat, ResultRow,
};
use softmoe_core::layer::SoftMoELayer;
use softmoe_core::training::{train_model, HeadKind, Model, ModelConfig, TrainConfig, TrainTask};
use softmoe_core::{Error as CoreError, RngStream};

use crate::checkpoint::{save_model, CheckpointError};
use crate::config::{ConfigError, RunConfig, TrainSpec};

/// Failure classes, one exit code each: config/usage = 2, I/O = 3, other = 1.
#[derive(Clone, Debug, PartialEq)]
pub enum CliError {
    Config(String),
    Io(String),
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Run(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Io(m) => write!(f, "I/O error: {m}"),
            CliError::Run(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.message)
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match &e {
            CoreError::InvalidConfig { .. }
            | CoreError::SubsetSizeOutOfRange { .. }
            | CoreError::LabelOutOfRange { .. } => CliError::Config(e.to_string()),
            CoreError::Io { .. }
            | CoreError::IdxWrongMagic { .. }
            | CoreError::IdxTruncated { .. }
            | CoreError::IdxCountMismatch { .. } => CliError::Io(e.to_string()),
            _ => CliError::Run(e.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match &e {
            CheckpointError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Run(e.to_string()),
        }
    }
}

/// Resolve an output path: explicit flag, else `$SOFTMOE_OUT_DIR/<default>`,
/// else `./<default>`.
pub fn resolve_out(out: Option<PathBuf>, default_name: &str) -> PathBuf {
    match out {
        Some(path) => path,
        None => match std::env::var_os("SOFTMOE_OUT_DIR") {
            Some(dir) => Path::new(&dir).join(default_name),
            None => PathBuf::from(default_name),
        },
    }
}

fn format_for(path: &Path, cfg: &RunConfig) -> Result<ResultFormat, CliError> {
    if path.extension().is_some_and(|e| e == "json") {
        return Ok(ResultFormat::Json);
    }
    Ok(cfg.out_format()?)
}

fn build_train_task(spec: &TrainSpec, seed: u64) -> Result<(TrainTask, Model), CliError> {
    match &spec.dataset {
        softmoe_core::experiments::DatasetSpec::Norm { input_dim } => {
            let task_cfg =
                NormTaskConfig::new(*input_dim, spec.tokens, spec.token_dim, spec.batch_size)?;
            let model_cfg = ModelConfig {
                tokens: spec.tokens,
                token_dim: spec.token_dim,
                layers: spec.layers,
                experts: spec.experts,
                hidden_budget: spec.hidden_budget,
                head: HeadKind::Summation,
                output_bias_init: task_cfg.mean_norm()
                    / (spec.tokens * spec.token_dim) as f64,
            };
            let model = Model::init(&model_cfg, &mut RngStream::new(seed, "model-init"))?;
            Ok((TrainTask::NormRegression(task_cfg), model))
        }
        _ => {
            // reuse the experiment-side dataset materialization
            let exp_cfg = ExperimentConfig {
                name: "train".to_string(),
                layers: spec.layers,
                n_list: vec![spec.experts],
                hidden_budget: spec.hidden_budget,
                tokens: spec.tokens,
                token_dim: spec.token_dim,
                k_list: vec![],
                seeds: vec![seed],
                epochs: spec.epochs,
                batch_size: spec.batch_size,
                learning_rate: spec.learning_rate,
                stop_at_accuracy: spec.stop_at_accuracy,
                dataset: spec.dataset.clone(),
            };
            let task = classification_task(&exp_cfg, &mut RngStream::new(seed, "dataset"))?;
            let model_cfg = ModelConfig {
                tokens: spec.tokens,
                token_dim: spec.token_dim,
                layers: spec.layers,
                experts: spec.experts,
                hidden_budget: spec.hidden_budget,
                head: spec.head.clone(),
                output_bias_init: 0.0,
            };
            let model = Model::init(&model_cfg, &mut RngStream::new(seed, "model-init"))?;
            Ok((task, model))
        }
    }
}

/// `softmoe train`: train one model per the config, write the checkpoint to
/// `out` and the per-epoch trace to `<out>.trace.csv`.
pub fn cmd_train(
    config_path: &Path,
    out: Option<PathBuf>,
    seed: Option<u64>,
    mnist_dir: Option<&Path>,
) -> Result<PathBuf, CliError> {
    let cfg = RunConfig::load(config_path)?;
    let spec = cfg.train_spec(seed, mnist_dir)?;
    let (task, mut model) = build_train_task(&spec, spec.seed)?;
    let trace = train_model(
        &mut model,
        &task,
        &TrainConfig {
            epochs: spec.epochs,
            batch_size: spec.batch_size,
            learning_rate: spec.learning_rate,
            stop_at_accuracy: spec.stop_at_accuracy,
        },
        &RngStream::new(spec.seed, "train"),
    )?;

    let out_path = resolve_out(out, "model.smoe");
    save_model(&model, &out_path)?;

    let mut rows = Vec::new();
    for stats in &trace.epochs {
        rows.push(ResultRow {
            experiment: "train".to_string(),
            n: spec.experts,
            k: 0,
            seed: spec.seed,
            metric: format!("train_loss_epoch{:04}", stats.epoch),
            value: stats.train_loss,
        });
        if let Some(acc) = stats.test_accuracy {
            rows.push(ResultRow {
                experiment: "train".to_string(),
                n: spec.experts,
                k: 0,
                seed: spec.seed,
                metric: format!("test_accuracy_epoch{:04}", stats.epoch),
                value: acc,
            });
        }
    }
    let trace_path = trace_path_for(&out_path);
    emit_results(&rows, &trace_path, ResultFormat::Csv)?;

    match (trace.final_loss(), trace.final_accuracy()) {
        (Some(loss), Some(acc)) => println!(
            "trained {} epochs: final loss {loss:.6}, test accuracy {acc:.4}",
            trace.epochs.len()
        ),
        (Some(loss), None) => println!(
            "trained {} epochs: final loss {loss:.6}",
            trace.epochs.len()
        ),
        _ => println!("trained 0 epochs (initial model saved)"),
    }
    println!("checkpoint: {}", out_path.display());
    println!("trace:      {}", trace_path.display());
    Ok(out_path)
}

/// `<out>.trace.csv` next to a checkpoint path.
pub fn trace_path_for(out_path: &Path) -> PathBuf {
    let mut name = out_path.file_name().unwrap_or_default().to_os_string();
    name.push(".trace.csv");
    out_path.with_file_name(name)
}

/// The experiments `softmoe experiment` can run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExperimentKind {
    Norm,
    Specialization,
    AccuracyVsN,
    Latency,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Norm => "norm",
            ExperimentKind::Specialization => "specialization",
            ExperimentKind::AccuracyVsN => "accuracy-vs-n",
            ExperimentKind::Latency => "latency",
        }
    }
}

/// `softmoe experiment <name>`: run the named study and emit its rows.
pub fn cmd_experiment(
    kind: ExperimentKind,
    config_path: &Path,
    out: Option<PathBuf>,
    seed: Option<u64>,
    mnist_dir: Option<&Path>,
) -> Result<PathBuf, CliError> {
    let cfg = RunConfig::load(config_path)?;
    let out_path = resolve_out(out, &format!("{}.csv", kind.name()));
    let format = format_for(&out_path, &cfg)?;

    let rows = match kind {
        ExperimentKind::Norm => {
            let exp = cfg.experiment_config(kind.name(), seed, mnist_dir)?;
            if !matches!(exp.dataset, softmoe_core::experiments::DatasetSpec::Norm { .. }) {
                return Err(CliError::Config(
                    "the norm experiment requires `dataset = norm`".to_string(),
                ));
            }
            run_norm_experiment(&exp)?
        }
        ExperimentKind::Specialization => {
            let exp = cfg.experiment_config(kind.name(), seed, mnist_dir)?;
            run_specialization_table(&exp)?
        }
        ExperimentKind::AccuracyVsN => {
            let exp = cfg.experiment_config(kind.name(), seed, mnist_dir)?;
            run_accuracy_vs_n(&exp)?
        }
        ExperimentKind::Latency => {
            let spec = cfg.latency_spec(seed)?;
            let mut init = RngStream::new(spec.seed, "latency-init");
            let layers: Vec<SoftMoELayer> = (0..spec.layers)
                .map(|_| {
                    SoftMoELayer::init(spec.token_dim, spec.experts, spec.hidden_budget, &mut init)
                })
                .collect::<softmoe_core::Result<_>>()?;
            let reports = run_latency_bench(
                &layers,
                spec.tokens,
                &spec.k_list,
                &spec.batch_sizes,
                spec.warmup,
                spec.timed,
                &mut RngStream::new(spec.seed, "latency-data"),
            )?;
            for r in &reports {
                println!(
                    "k={} batch={}: {:.3} +- {:.3} ms over {} passes",
                    r.k, r.batch_size, r.mean_ms, r.std_ms, r.timed_count
                );
            }
            latency_rows(kind.name(), spec.experts, &reports)
        }
    };

    emit_results(&rows, &out_path, format)?;
    println!("{} rows -> {}", rows.len(), out_path.display());
    Ok(out_path)
}

/// `softmoe bench`: the latency protocol with the config's geometry
/// (defaults match the headline stack: 6 layers, n=8, width 2048, d=256).
pub fn cmd_bench(
    config_path: Option<&Path>,
    out: Option<PathBuf>,
    seed: Option<u64>,
) -> Result<PathBuf, CliError> {
    let cfg = match config_path {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let spec = cfg.latency_spec(seed)?;
    let mut init = RngStream::new(spec.seed, "latency-init");
    let layers: Vec<SoftMoELayer> = (0..spec.layers)
        .map(|_| SoftMoELayer::init(spec.token_dim, spec.experts, spec.hidden_budget, &mut init))
        .collect::<softmoe_core::Result<_>>()?;
    let reports = run_latency_bench(
        &layers,
        spec.tokens,
        &spec.k_list,
        &spec.batch_sizes,
        spec.warmup,
        spec.timed,
        &mut RngStream::new(spec.seed, "latency-data"),
    )?;
    for r in &reports {
        println!(
            "k={} batch={}: {:.3} +- {:.3} ms over {} passes",
            r.k, r.batch_size, r.mean_ms, r.std_ms, r.timed_count
        );
    }
    let out_path = resolve_out(out, "latency.csv");
    let format = format_for(&out_path, &cfg)?;
    emit_results(&latency_rows("bench", spec.experts, &reports), &out_path, format)?;
    println!("report -> {}", out_path.display());
    Ok(out_path)
}

/// Sum a row group back out of an emitted trace (test support).
pub fn count_csv_rows(path: &Path) -> Result<usize, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(e.to_string()))?;
    Ok(text.lines().count().saturating_sub(1))
}
