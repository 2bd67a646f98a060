//! Experiment runners: the norm-regression study, the specialization table,
//! the accuracy-vs-n sweep, and the latency benchmark, all emitting tabular
//! rows for external plotting.
//!
//! Every runner is deterministic given its config and seeds (the latency
//! benchmark's timings excepted), so result files are reproducible.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::datasets::{gen_cluster_dataset, ClusterTaskConfig, NormTaskConfig};
use crate::error::{Error, Result};
use crate::layer::SoftMoELayer;
use crate::selection::{
    algorithm1_predict, batched_select, exhaustive_best_subset, random_subset, SubsetMask,
};
use crate::tensor::{sample_gaussian, Matrix, RngStream};
use crate::training::{
    classification_accuracy, train_model, HeadKind, Model, ModelConfig, TrainConfig, TrainTask,
};

/// Which dataset an experiment runs on.
#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSpec {
    /// Fresh batches of the norm-regression task.
    Norm { input_dim: usize },
    /// Synthetic Gaussian clusters (the default classification dataset;
    /// nothing is downloaded).
    Cluster {
        classes: usize,
        mean_scale: f64,
        within_class_std: f64,
        train_size: usize,
        test_size: usize,
    },
    /// Local MNIST IDX files; opt-in.
    Mnist { dir: std::path::PathBuf },
}

/// Full description of one experiment run.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub name: String,
    pub layers: usize,
    /// Expert counts to sweep.
    pub n_list: Vec<usize>,
    /// Total hidden budget H, shared across the sweep.
    pub hidden_budget: usize,
    /// Tokens per input, `m`.
    pub tokens: usize,
    /// Token dimension, `d`.
    pub token_dim: usize,
    /// Subset sizes; each `k` is paired with every `n >= k`.
    pub k_list: Vec<usize>,
    /// Seeds for randomized baselines (and model init, via the first).
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub stop_at_accuracy: Option<f64>,
    pub dataset: DatasetSpec,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig {
                message: "seed list must be nonempty".to_string(),
            });
        }
        if self.n_list.is_empty() {
            return Err(Error::InvalidConfig {
                message: "n list must be nonempty".to_string(),
            });
        }
        let max_n = *self.n_list.iter().max().unwrap();
        for &k in &self.k_list {
            if k < 1 || k > max_n {
                return Err(Error::SubsetSizeOutOfRange { k, n: max_n });
            }
        }
        Ok(())
    }
}

/// One emitted metric value. `n = 0` or `k = 0` mean "not applicable" and
/// `seed = u64::MAX` marks rows that do not depend on a baseline seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub n: usize,
    pub k: usize,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

/// Seed value for rows that are not tied to a baseline seed.
pub const NO_SEED: u64 = u64::MAX;

impl ResultRow {
    fn new(experiment: &str, n: usize, k: usize, seed: u64, metric: String, value: f64) -> Self {
        ResultRow {
            experiment: experiment.to_string(),
            n,
            k,
            seed,
            metric,
            value,
        }
    }
}

/// Output format for [`emit_results`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResultFormat {
    Csv,
    Json,
}

/// Write rows to `path` in the given format, preserving row order.
/// CSV files carry the header `experiment,n,k,seed,metric,value`.
pub fn emit_results(rows: &[ResultRow], path: &Path, format: ResultFormat) -> Result<()> {
    match format {
        ResultFormat::Csv => {
            let mut writer = csv::Writer::from_path(path).map_err(|e| Error::Io {
                message: e.to_string(),
            })?;
            for row in rows {
                writer.serialize(row).map_err(|e| Error::Io {
                    message: e.to_string(),
                })?;
            }
            // serialize() writes the header lazily; force it out for empty inputs
            if rows.is_empty() {
                writer
                    .write_record(["experiment", "n", "k", "seed", "metric", "value"])
                    .map_err(|e| Error::Io {
                        message: e.to_string(),
                    })?;
            }
            writer.flush()?;
        }
        ResultFormat::Json => {
            let mut file = std::fs::File::create(path)?;
            let text = serde_json::to_string_pretty(rows).map_err(|e| Error::Io {
                message: e.to_string(),
            })?;
            file.write_all(text.as_bytes())?;
            file.write_all(b"\n")?;
        }
    }
    Ok(())
}

/// Read back a JSON result file written by [`emit_results`].
pub fn read_results_json(path: &Path) -> Result<Vec<ResultRow>> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Io {
        message: e.to_string(),
    })
}

/// `(alg - mean(random)) / std(random)` with the n-1 sample std.
/// `None` when fewer than two samples or the std is zero (undefined).
pub fn stddev_statistic(alg_accuracy: f64, random_accuracies: &[f64]) -> Option<f64> {
    if random_accuracies.len() < 2 {
        return None;
    }
    let n = random_accuracies.len() as f64;
    let mean = random_accuracies.iter().sum::<f64>() / n;
    let var = random_accuracies
        .iter()
        .map(|a| (a - mean) * (a - mean))
        .sum::<f64>()
        / (n - 1.0);
    let std = var.sqrt();
    if std == 0.0 {
        return None;
    }
    Some((alg_accuracy - mean) / std)
}

/// Number of distinct masks in a list.
pub fn unique_subset_count(masks: &[SubsetMask]) -> usize {
    masks.iter().collect::<HashSet<_>>().len()
}

/// Mean and n-1 sample std of a slice.
pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

// ---------------------------------------------------------------------------
// Subset-accuracy evaluation
// ---------------------------------------------------------------------------

/// Per-datapoint outcomes of the three selection methods on one model.
#[derive(Clone, Debug)]
pub struct SubsetEvaluation {
    pub full_correct: Vec<bool>,
    pub alg1_correct: Vec<bool>,
    pub exhaustive_found: Vec<bool>,
    /// First correct mask per datapoint (lexicographic), when one exists.
    pub exhaustive_masks: Vec<Option<SubsetMask>>,
    /// The mask Algorithm 1 picked per datapoint (first layer).
    pub alg1_masks: Vec<SubsetMask>,
}

impl SubsetEvaluation {
    pub fn full_accuracy(&self) -> f64 {
        fraction(&self.full_correct)
    }

    pub fn alg1_accuracy(&self) -> f64 {
        fraction(&self.alg1_correct)
    }

    pub fn exhaustive_accuracy(&self) -> f64 {
        fraction(&self.exhaustive_found)
    }

    /// Datapoints where Algorithm 1 was correct but the exhaustive search
    /// reported no subset; structurally impossible, so this must be zero.
    pub fn dominance_violations(&self) -> usize {
        self.alg1_correct
            .iter()
            .zip(&self.exhaustive_found)
            .filter(|(alg, ex)| **alg && !**ex)
            .count()
    }
}

fn fraction(flags: &[bool]) -> f64 {
    flags.iter().filter(|f| **f).count() as f64 / flags.len() as f64
}

/// Run full, Algorithm-1, and exhaustive predictions over a test set.
pub fn evaluate_subsets(
    model: &Model,
    data: &[(Matrix, usize)],
    k: usize,
) -> Result<SubsetEvaluation> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut eval = SubsetEvaluation {
        full_correct: Vec::with_capacity(data.len()),
        alg1_correct: Vec::with_capacity(data.len()),
        exhaustive_found: Vec::with_capacity(data.len()),
        exhaustive_masks: Vec::with_capacity(data.len()),
        alg1_masks: Vec::with_capacity(data.len()),
    };
    for (x, label) in data {
        eval.full_correct.push(model.predict(x)? == *label);
        let (pred, masks) = algorithm1_predict(model, x, k)?;
        eval.alg1_correct.push(pred == *label);
        eval.alg1_masks.push(masks.into_iter().next().unwrap());
        let found = exhaustive_best_subset(model, x, *label, k)?;
        eval.exhaustive_found.push(found.is_some());
        eval.exhaustive_masks.push(found);
    }
    Ok(eval)
}

/// Accuracy when each datapoint gets an independent uniformly random size-k
/// subset (the same subset in every layer).
pub fn random_subset_accuracy(
    model: &Model,
    data: &[(Matrix, usize)],
    k: usize,
    stream: &mut RngStream,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = model.n();
    let mut correct = 0usize;
    for (x, label) in data {
        let mask = random_subset(n, k, stream)?;
        if model.predict_masked(x, &mask)? == *label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Algorithm-1 accuracy over a test set.
pub fn algorithm1_accuracy(model: &Model, data: &[(Matrix, usize)], k: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut correct = 0usize;
    for (x, label) in data {
        if algorithm1_predict(model, x, k)?.0 == *label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

// ---------------------------------------------------------------------------
// Training helpers shared by the classification runners
// ---------------------------------------------------------------------------

/// Materialize the classification dataset an experiment config names.
pub fn classification_task(cfg: &ExperimentConfig, stream: &mut RngStream) -> Result<TrainTask> {
    match &cfg.dataset {
        DatasetSpec::Cluster {
            classes,
            mean_scale,
            within_class_std,
            train_size,
            test_size,
        } => {
            let task_cfg = ClusterTaskConfig::with_random_means(
                *classes,
                cfg.tokens,
                cfg.token_dim,
                *mean_scale,
                *within_class_std,
                *train_size,
                *test_size,
                &mut stream.fork("cluster-means"),
            )?;
            let (train, test) = gen_cluster_dataset(&task_cfg, &mut stream.fork("cluster-data"))?;
            Ok(TrainTask::Classification { train, test })
        }
        DatasetSpec::Mnist { dir } => {
            let images = dir.join("train-images-idx3-ubyte");
            let labels = dir.join("train-labels-idx1-ubyte");
            let t_images = dir.join("t10k-images-idx3-ubyte");
            let t_labels = dir.join("t10k-labels-idx1-ubyte");
            let train_store = crate::datasets::load_mnist_idx(&images, &labels)?;
            let test_store = crate::datasets::load_mnist_idx(&t_images, &t_labels)?;
            Ok(TrainTask::Classification {
                train: crate::datasets::patchify_store(&train_store, true)?,
                test: crate::datasets::patchify_store(&test_store, true)?,
            })
        }
        DatasetSpec::Norm { .. } => Err(Error::InvalidConfig {
            message: "this experiment needs a classification dataset".to_string(),
        }),
    }
}

fn dataset_classes(cfg: &ExperimentConfig) -> Result<usize> {
    match &cfg.dataset {
        DatasetSpec::Cluster { classes, .. } => Ok(*classes),
        DatasetSpec::Mnist { .. } => Ok(10),
        DatasetSpec::Norm { .. } => Err(Error::InvalidConfig {
            message: "norm task has no classes".to_string(),
        }),
    }
}

/// Train one classification model for the sweep cell `n`; returns the model
/// and its final test accuracy.
pub fn train_classifier(
    cfg: &ExperimentConfig,
    n: usize,
    task: &TrainTask,
    init_seed: u64,
) -> Result<(Model, f64)> {
    let model_cfg = ModelConfig {
        tokens: cfg.tokens,
        token_dim: cfg.token_dim,
        layers: cfg.layers,
        experts: n,
        hidden_budget: cfg.hidden_budget,
        head: HeadKind::Linear {
            classes: dataset_classes(cfg)?,
        },
        output_bias_init: 0.0,
    };
    let mut model = Model::init(&model_cfg, &mut RngStream::new(init_seed, "model-init"))?;
    let train_cfg = TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        stop_at_accuracy: cfg.stop_at_accuracy,
    };
    train_model(
        &mut model,
        task,
        &train_cfg,
        &RngStream::new(init_seed, "train"),
    )?;
    let test = match task {
        TrainTask::Classification { test, .. } => test,
        TrainTask::NormRegression(_) => unreachable!("classifier task"),
    };
    let accuracy = classification_accuracy(&model, test)?;
    Ok((model, accuracy))
}

// ---------------------------------------------------------------------------
// Runners
// ---------------------------------------------------------------------------

/// Norm-regression study: for each `n` and both tokenizations of the input
/// vector, train a summation-head model and record the per-epoch loss.
/// The hidden budget is pinned to `10 * token_dim` for every tokenization,
/// so the expert weight budget is `20 * token_dim^2` regardless of `n`.
pub fn run_norm_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let input_dim = match cfg.dataset {
        DatasetSpec::Norm { input_dim } => input_dim,
        _ => {
            return Err(Error::InvalidConfig {
                message: "norm experiment requires the norm dataset".to_string(),
            })
        }
    };
    let mut shapes = vec![(cfg.tokens, cfg.token_dim)];
    if cfg.tokens != cfg.token_dim {
        shapes.push((cfg.token_dim, cfg.tokens));
    }

    let mut rows = Vec::new();
    for &(m, d) in &shapes {
        for &n in &cfg.n_list {
            for &seed in &cfg.seeds {
                let trace = norm_training_trace(input_dim, m, d, n, cfg, seed)?;
                for stats in &trace.epochs {
                    rows.push(ResultRow::new(
                        &cfg.name,
                        n,
                        0,
                        seed,
                        format!("loss_{m}x{d}_epoch{:04}", stats.epoch),
                        stats.train_loss,
                    ));
                }
                if let Some(final_loss) = trace.final_loss() {
                    rows.push(ResultRow::new(
                        &cfg.name,
                        n,
                        0,
                        seed,
                        format!("final_loss_{m}x{d}"),
                        final_loss,
                    ));
                }
            }
        }
    }
    Ok(rows)
}

/// One norm-task training run; shared by the runner and the CLI.
/// A zero `cfg.hidden_budget` selects the default budget `10 * token_dim`.
pub fn norm_training_trace(
    input_dim: usize,
    tokens: usize,
    token_dim: usize,
    n: usize,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<crate::training::TrainingTrace> {
    let task_cfg = NormTaskConfig::new(input_dim, tokens, token_dim, cfg.batch_size)?;
    let hidden_budget = if cfg.hidden_budget > 0 {
        cfg.hidden_budget
    } else {
        10 * token_dim
    };
    let model_cfg = ModelConfig {
        tokens,
        token_dim,
        layers: cfg.layers,
        experts: n,
        hidden_budget,
        head: HeadKind::Summation,
        // start the summed prediction at the exact target mean
        output_bias_init: task_cfg.mean_norm() / (tokens * token_dim) as f64,
    };
    let mut model = Model::init(&model_cfg, &mut RngStream::new(seed, "model-init"))?;
    train_model(
        &mut model,
        &TrainTask::NormRegression(task_cfg),
        &TrainConfig {
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            learning_rate: cfg.learning_rate,
            stop_at_accuracy: None,
        },
        &RngStream::new(seed, "train"),
    )
}

/// Specialization table: for each `n` (with `k = n/4`), the exhaustive
/// best-subset accuracy, the random-subset mean and std over seeds, the
/// Algorithm-1 accuracy, and supporting diagnostics.
pub fn run_specialization_table(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let init_seed = cfg.seeds[0];
    let task = classification_task(cfg, &mut RngStream::new(init_seed, "dataset"))?;
    let test = match &task {
        TrainTask::Classification { test, .. } => test.clone(),
        TrainTask::NormRegression(_) => unreachable!("cluster_task yields classification"),
    };

    let mut rows = Vec::new();
    for &n in &cfg.n_list {
        if n % 4 != 0 {
            return Err(Error::InvalidConfig {
                message: format!("specialization table needs 4 | n, got n={n}"),
            });
        }
        let k = n / 4;
        let (model, base_accuracy) = train_classifier(cfg, n, &task, init_seed)?;
        rows.push(ResultRow::new(
            &cfg.name,
            n,
            n,
            NO_SEED,
            "base_accuracy".to_string(),
            base_accuracy,
        ));

        let eval = evaluate_subsets(&model, &test, k)?;
        rows.push(ResultRow::new(
            &cfg.name,
            n,
            k,
            NO_SEED,
            "best_subset_accuracy".to_string(),
            eval.exhaustive_accuracy(),
        ));
        rows.push(ResultRow::new(
            &cfg.name,
            n,
            k,
            NO_SEED,
            "alg1_accuracy".to_string(),
            eval.alg1_accuracy(),
        ));
        rows.push(ResultRow::new(
            &cfg.name,
            n,
            k,
            NO_SEED,
            "dominance_violations".to_string(),
            eval.dominance_violations() as f64,
        ));
        let found_masks: Vec<SubsetMask> = eval
            .exhaustive_masks
            .iter()
            .flatten()
            .cloned()
            .collect();
        rows.push(ResultRow::new(
            &cfg.name,
            n,
            k,
            NO_SEED,
            "best_subset_unique_count".to_string(),
            unique_subset_count(&found_masks) as f64,
        ));
        rows.push(ResultRow::new(
            &cfg.name,
            n,
            k,
            NO_SEED,
            "alg1_unique_count".to_string(),
            unique_subset_count(&eval.alg1_masks) as f64,
        ));

        let mut random_accs = Vec::with_capacity(cfg.seeds.len());
        for &seed in &cfg.seeds {
            let acc = random_subset_accuracy(
                &model,
                &test,
                k,
                &mut RngStream::new(seed, "random-subset"),
            )?;
            rows.push(ResultRow::new(
                &cfg.name,
                n,
                k,
                seed,
                "random_accuracy".to_string(),
                acc,
            ));
            random_accs.push(acc);
        }
        let (mean, std) = mean_and_std(&random_accs);
        rows.push(ResultRow::new(
            &cfg.name,
            n,
            k,
            NO_SEED,
            "random_accuracy_mean".to_string(),
            mean,
        ));
        rows.push(ResultRow::new(
            &cfg.name,
            n,
            k,
            NO_SEED,
            "random_accuracy_std".to_string(),
            std,
        ));
        match stddev_statistic(eval.alg1_accuracy(), &random_accs) {
            Some(stat) => rows.push(ResultRow::new(
                &cfg.name,
                n,
                k,
                NO_SEED,
                "alg1_stddevs_above_random".to_string(),
                stat,
            )),
            None => eprintln!(
                "warning: stddev statistic undefined for n={n} (zero std or too few seeds); row omitted"
            ),
        }
    }
    Ok(rows)
}

/// Accuracy-vs-n sweep: per `(n, k)` cell (k <= n), Algorithm-1 accuracy and
/// the random-selection mean over seeds. Models across `n` must have matched
/// base accuracy (within +-0.5% absolute of each other).
pub fn run_accuracy_vs_n(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let init_seed = cfg.seeds[0];
    let task = classification_task(cfg, &mut RngStream::new(init_seed, "dataset"))?;
    let test = match &task {
        TrainTask::Classification { test, .. } => test.clone(),
        TrainTask::NormRegression(_) => unreachable!("cluster_task yields classification"),
    };

    let mut rows = Vec::new();
    let mut base_accuracies = Vec::new();
    let mut models = Vec::new();
    for &n in &cfg.n_list {
        let (model, base_accuracy) = train_classifier(cfg, n, &task, init_seed)?;
        rows.push(ResultRow::new(
            &cfg.name,
            n,
            n,
            NO_SEED,
            "base_accuracy".to_string(),
            base_accuracy,
        ));
        base_accuracies.push(base_accuracy);
        models.push((n, model));
    }
    let spread = base_accuracies.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - base_accuracies.iter().cloned().fold(f64::INFINITY, f64::min);
    if spread > 0.01 {
        return Err(Error::InvalidConfig {
            message: format!(
                "base accuracies not matched within +-0.5%: spread {spread:.4} over n={:?}",
                cfg.n_list
            ),
        });
    }

    for (n, model) in &models {
        for &k in &cfg.k_list {
            if k > *n {
                continue;
            }
            let alg1 = algorithm1_accuracy(model, &test, k)?;
            rows.push(ResultRow::new(
                &cfg.name,
                *n,
                k,
                NO_SEED,
                "alg1_accuracy".to_string(),
                alg1,
            ));
            let mut random_accs = Vec::with_capacity(cfg.seeds.len());
            for &seed in &cfg.seeds {
                random_accs.push(random_subset_accuracy(
                    model,
                    &test,
                    k,
                    &mut RngStream::new(seed, "random-subset"),
                )?);
            }
            let (mean, _) = mean_and_std(&random_accs);
            rows.push(ResultRow::new(
                &cfg.name,
                *n,
                k,
                NO_SEED,
                "random_accuracy_mean".to_string(),
                mean,
            ));
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Latency benchmark
// ---------------------------------------------------------------------------

/// Wall-clock samples for one `(k, batch)` cell of the latency protocol.
#[derive(Clone, Debug, Serialize)]
pub struct LatencyReport {
    pub k: usize,
    pub batch_size: usize,
    pub warmup_count: usize,
    pub timed_count: usize,
    /// Per-pass wall time, milliseconds; exactly `timed_count` samples.
    pub samples_ms: Vec<f64>,
    pub mean_ms: f64,
    pub std_ms: f64,
}

/// Time forward passes through a stack of layers with Algorithm-1 selection
/// at budget `k` in each layer: `warmup` untimed passes, then `timed` timed
/// passes per `(k, batch)` cell. Inputs are standard-normal token matrices.
///
/// The timed region runs single-threaded with no concurrent work.
pub fn run_latency_bench(
    layers: &[SoftMoELayer],
    tokens: usize,
    k_list: &[usize],
    batch_sizes: &[usize],
    warmup: usize,
    timed: usize,
    stream: &mut RngStream,
) -> Result<Vec<LatencyReport>> {
    if layers.is_empty() {
        return Err(Error::InvalidConfig {
            message: "latency bench needs at least one layer".to_string(),
        });
    }
    if warmup == 0 || timed == 0 {
        return Err(Error::InvalidConfig {
            message: "warmup and timed pass counts must be positive".to_string(),
        });
    }
    let n = layers[0].n();
    let d = layers[0].d();
    let mut reports = Vec::new();
    for &k in k_list {
        if k < 1 || k > n {
            return Err(Error::SubsetSizeOutOfRange { k, n });
        }
        for &batch in batch_sizes {
            if batch == 0 {
                return Err(Error::InvalidConfig {
                    message: "batch size must be positive".to_string(),
                });
            }
            let inputs: Vec<Matrix> = (0..batch)
                .map(|_| sample_gaussian(stream, tokens, d, 0.0, 1.0))
                .collect::<Result<_>>()?;

            let run_pass = |xs: &[Matrix]| -> Result<f64> {
                let mut current = xs.to_vec();
                for layer in layers {
                    let acts = batched_select(layer, &current, k)?;
                    current = acts.into_iter().map(|a| a.output).collect();
                }
                // fold the outputs into a scalar so the passes cannot be elided
                Ok(current
                    .iter()
                    .map(|m| m.get(0, 0))
                    .sum())
            };

            let mut sink = 0.0;
            for _ in 0..warmup {
                sink += run_pass(&inputs)?;
            }
            let mut samples_ms = Vec::with_capacity(timed);
            for _ in 0..timed {
                let start = Instant::now();
                sink += run_pass(&inputs)?;
                samples_ms.push(start.elapsed().as_secs_f64() * 1e3);
            }
            std::hint::black_box(sink);
            let (mean_ms, std_ms) = mean_and_std(&samples_ms);
            reports.push(LatencyReport {
                k,
                batch_size: batch,
                warmup_count: warmup,
                timed_count: timed,
                samples_ms,
                mean_ms,
                std_ms,
            });
        }
    }
    Ok(reports)
}

/// Flatten latency reports into result rows (mean, std, and per-pass samples).
pub fn latency_rows(experiment: &str, n: usize, reports: &[LatencyReport]) -> Vec<ResultRow> {
    let mut rows = Vec::new();
    for r in reports {
        rows.push(ResultRow::new(
            experiment,
            n,
            r.k,
            NO_SEED,
            format!("latency_mean_ms_batch{}", r.batch_size),
            r.mean_ms,
        ));
        rows.push(ResultRow::new(
            experiment,
            n,
            r.k,
            NO_SEED,
            format!("latency_std_ms_batch{}", r.batch_size),
            r.std_ms,
        ));
        for (i, s) in r.samples_ms.iter().enumerate() {
            rows.push(ResultRow::new(
                experiment,
                n,
                r.k,
                NO_SEED,
                format!("latency_sample_ms_batch{}_{i:03}", r.batch_size),
                *s,
            ));
        }
    }
    rows
}
