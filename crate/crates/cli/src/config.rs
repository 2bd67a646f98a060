//! Flat key=value run configuration with typed validation.
//!
//! The format is line oriented: blank lines and `#` comments are ignored,
//! everything else must be `key = value`. Lists are comma separated. Every
//! key is validated by name; unknown keys are rejected so typos fail fast.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use softmoe_core::experiments::{DatasetSpec, ExperimentConfig};
use softmoe_core::training::HeadKind;

/// A config error carries the offending key (and line, when known).
#[derive(Clone, Debug, PartialEq)]
pub struct ConfigError {
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.message)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError {
        message: message.into(),
    })
}

const KNOWN_KEYS: &[&str] = &[
    "name",
    "layers",
    "n_list",
    "experts",
    "hidden_budget",
    "tokens",
    "token_dim",
    "k_list",
    "seeds",
    "seed",
    "epochs",
    "batch_size",
    "learning_rate",
    "stop_at_accuracy",
    "dataset",
    "input_dim",
    "classes",
    "mean_scale",
    "within_class_std",
    "train_size",
    "test_size",
    "mnist_dir",
    "batch_sizes",
    "warmup",
    "timed",
    "out_format",
];

/// Parsed but not yet validated key/value document.
#[derive(Clone, Debug, Default)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return err(format!("line {}: expected `key = value`, got `{line}`", lineno + 1));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return err(format!("line {}: unknown key `{key}`", lineno + 1));
            }
            if values.insert(key.clone(), value).is_some() {
                return err(format!("line {}: duplicate key `{key}`", lineno + 1));
            }
        }
        Ok(RunConfig { values })
    }

    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError {
                message: format!("cannot read {}: {e}", path.display()),
            })?;
        RunConfig::parse(&text)
    }

    /// Override a key programmatically (used for command-line flags).
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.values.insert(key.to_string(), value.into());
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn parse_one<T: std::str::FromStr>(&self, key: &str, raw: &str) -> Result<T, ConfigError> {
        raw.parse().or_else(|_| {
            err(format!(
                "key `{key}`: cannot parse `{raw}` as {}",
                std::any::type_name::<T>()
            ))
        })
    }

    fn typed<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(raw) => self.parse_one(key, raw),
        }
    }

    fn required<T: std::str::FromStr>(&self, key: &str) -> Result<T, ConfigError> {
        match self.get(key) {
            None => err(format!("missing required key `{key}`")),
            Some(raw) => self.parse_one(key, raw),
        }
    }

    fn list<T: std::str::FromStr>(&self, key: &str, default: Vec<T>) -> Result<Vec<T>, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(raw) => raw
                .split(',')
                .map(|item| self.parse_one(key, item.trim()))
                .collect(),
        }
    }

    fn dataset(&self, mnist_dir_flag: Option<&Path>) -> Result<DatasetSpec, ConfigError> {
        match self.get("dataset").unwrap_or("cluster") {
            "norm" => Ok(DatasetSpec::Norm {
                input_dim: self.typed("input_dim", 10)?,
            }),
            "cluster" => Ok(DatasetSpec::Cluster {
                classes: self.typed("classes", 10)?,
                mean_scale: self.typed("mean_scale", 1.0)?,
                within_class_std: self.typed("within_class_std", 0.5)?,
                train_size: self.typed("train_size", 4000)?,
                test_size: self.typed("test_size", 2000)?,
            }),
            "mnist" => {
                let dir = match mnist_dir_flag {
                    Some(dir) => dir.to_path_buf(),
                    None => PathBuf::from(
                        self.get("mnist_dir")
                            .ok_or(ConfigError {
                                message: "mnist dataset needs `mnist_dir` or --mnist-dir"
                                    .to_string(),
                            })?,
                    ),
                };
                Ok(DatasetSpec::Mnist { dir })
            }
            other => err(format!(
                "key `dataset`: expected norm, cluster, or mnist, got `{other}`"
            )),
        }
    }

    /// Build the experiment config, applying `--seed` (rebases the seed list
    /// to `seed, seed+1, ..`) and `--mnist-dir` when given.
    pub fn experiment_config(
        &self,
        default_name: &str,
        seed_flag: Option<u64>,
        mnist_dir_flag: Option<&Path>,
    ) -> Result<ExperimentConfig, ConfigError> {
        let mut seeds: Vec<u64> = self.list("seeds", (0..10).collect())?;
        if let Some(base) = seed_flag {
            seeds = (0..seeds.len() as u64).map(|i| base + i).collect();
        }
        let cfg = ExperimentConfig {
            name: self
                .get("name")
                .unwrap_or(default_name)
                .to_string(),
            layers: self.typed("layers", 1)?,
            n_list: self.list("n_list", vec![2, 4, 8, 16, 32])?,
            hidden_budget: self.typed("hidden_budget", 32)?,
            tokens: self.typed("tokens", 4)?,
            token_dim: self.typed("token_dim", 16)?,
            k_list: self.list("k_list", vec![])?,
            seeds,
            epochs: self.typed("epochs", 30)?,
            batch_size: self.typed("batch_size", 64)?,
            learning_rate: self.typed("learning_rate", 1e-3)?,
            stop_at_accuracy: match self.get("stop_at_accuracy") {
                None => None,
                Some(raw) => Some(self.parse_one("stop_at_accuracy", raw)?),
            },
            dataset: self.dataset(mnist_dir_flag)?,
        };
        cfg.validate().map_err(|e| ConfigError {
            message: e.to_string(),
        })?;
        Ok(cfg)
    }

    /// Single-model training spec for `softmoe train`.
    pub fn train_spec(
        &self,
        seed_flag: Option<u64>,
        mnist_dir_flag: Option<&Path>,
    ) -> Result<TrainSpec, ConfigError> {
        let dataset = self.dataset(mnist_dir_flag)?;
        let experts: usize = self.required("experts")?;
        let (tokens, token_dim) = match &dataset {
            DatasetSpec::Mnist { .. } => (4, 196),
            DatasetSpec::Norm { input_dim } => {
                let tokens = self.typed("tokens", 2)?;
                let token_dim = self.typed("token_dim", input_dim / 2)?;
                if tokens * token_dim != *input_dim {
                    return err(format!(
                        "tokens x token_dim = {tokens}x{token_dim} must cover input_dim {input_dim}"
                    ));
                }
                (tokens, token_dim)
            }
            DatasetSpec::Cluster { .. } => {
                (self.typed("tokens", 4)?, self.typed("token_dim", 16)?)
            }
        };
        let head = match dataset {
            DatasetSpec::Norm { .. } => HeadKind::Summation,
            DatasetSpec::Cluster { classes, .. } => HeadKind::Linear { classes },
            DatasetSpec::Mnist { .. } => HeadKind::Linear { classes: 10 },
        };
        let seed = match seed_flag {
            Some(s) => s,
            None => self.typed("seed", 0)?,
        };
        let spec = TrainSpec {
            seed,
            experts,
            layers: self.typed("layers", 1)?,
            hidden_budget: self.typed("hidden_budget", 32)?,
            tokens,
            token_dim,
            head,
            epochs: self.typed("epochs", 30)?,
            batch_size: self.typed("batch_size", 64)?,
            learning_rate: self.typed("learning_rate", 1e-3)?,
            stop_at_accuracy: match self.get("stop_at_accuracy") {
                None => None,
                Some(raw) => Some(self.parse_one("stop_at_accuracy", raw)?),
            },
            dataset,
        };
        if spec.hidden_budget < 1 {
            return err("hidden_budget must be >= 1");
        }
        Ok(spec)
    }

    /// Latency-bench knobs (shared by `experiment latency` and `bench`).
    pub fn latency_spec(&self, seed_flag: Option<u64>) -> Result<LatencySpec, ConfigError> {
        let experts: usize = self.typed("experts", 8)?;
        let seed = match seed_flag {
            Some(s) => s,
            None => self.typed("seed", 0)?,
        };
        let spec = LatencySpec {
            seed,
            layers: self.typed("layers", 6)?,
            experts,
            hidden_budget: self.typed("hidden_budget", 8 * 2048)?,
            tokens: self.typed("tokens", 16)?,
            token_dim: self.typed("token_dim", 256)?,
            k_list: self.list("k_list", vec![experts, experts / 2, experts / 4])?,
            batch_sizes: self.list("batch_sizes", vec![1])?,
            warmup: self.typed("warmup", 100)?,
            timed: self.typed("timed", 100)?,
        };
        for &k in &spec.k_list {
            if k < 1 || k > spec.experts {
                return err(format!("k_list entry {k} out of range [1, {}]", spec.experts));
            }
        }
        Ok(spec)
    }

    /// `csv` (default) or `json`.
    pub fn out_format(&self) -> Result<softmoe_core::experiments::ResultFormat, ConfigError> {
        match self.get("out_format").unwrap_or("csv") {
            "csv" => Ok(softmoe_core::experiments::ResultFormat::Csv),
            "json" => Ok(softmoe_core::experiments::ResultFormat::Json),
            other => err(format!("key `out_format`: expected csv or json, got `{other}`")),
        }
    }
}

/// Everything `softmoe train` needs.
#[derive(Clone, Debug)]
pub struct TrainSpec {
    pub seed: u64,
    pub experts: usize,
    pub layers: usize,
    pub hidden_budget: usize,
    pub tokens: usize,
    pub token_dim: usize,
    pub head: HeadKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub stop_at_accuracy: Option<f64>,
    pub dataset: DatasetSpec,
}

/// Everything the latency bench needs.
#[derive(Clone, Debug)]
pub struct LatencySpec {
    pub seed: u64,
    pub layers: usize,
    pub experts: usize,
    pub hidden_budget: usize,
    pub tokens: usize,
    pub token_dim: usize,
    pub k_list: Vec<usize>,
    pub batch_sizes: Vec<usize>,
    pub warmup: usize,
    pub timed: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_blank_lines() {
        let cfg = RunConfig::parse("# a comment\n\nepochs = 5\n  n_list = 2, 4 \n").unwrap();
        let exp = cfg.experiment_config("x", None, None).unwrap();
        assert_eq!(exp.epochs, 5);
        assert_eq!(exp.n_list, vec![2, 4]);
    }

    #[test]
    fn rejects_unknown_and_duplicate_keys() {
        assert!(RunConfig::parse("nonsense = 1").is_err());
        assert!(RunConfig::parse("epochs = 1\nepochs = 2").is_err());
        assert!(RunConfig::parse("epochs").is_err());
    }

    #[test]
    fn rejects_bad_numbers_with_key_name() {
        let cfg = RunConfig::parse("epochs = banana").unwrap();
        let e = cfg.experiment_config("x", None, None).unwrap_err();
        assert!(e.message.contains("epochs"), "{e}");
    }

    #[test]
    fn rejects_k_larger_than_n() {
        let cfg = RunConfig::parse("n_list = 4\nk_list = 8").unwrap();
        assert!(cfg.experiment_config("x", None, None).is_err());
    }

    #[test]
    fn seed_flag_rebases_seed_list() {
        let cfg = RunConfig::parse("seeds = 0, 1, 2").unwrap();
        let exp = cfg.experiment_config("x", Some(100), None).unwrap();
        assert_eq!(exp.seeds, vec![100, 101, 102]);
    }

    #[test]
    fn train_spec_needs_experts() {
        let cfg = RunConfig::parse("dataset = cluster").unwrap();
        assert!(cfg.train_spec(None, None).is_err());
        let cfg = RunConfig::parse("dataset = cluster\nexperts = 4").unwrap();
        let spec = cfg.train_spec(None, None).unwrap();
        assert_eq!(spec.experts, 4);
        assert_eq!(spec.head, HeadKind::Linear { classes: 10 });
    }

    #[test]
    fn norm_train_spec_checks_token_shape() {
        let cfg = RunConfig::parse("dataset = norm\nexperts = 2\ntokens = 3\ntoken_dim = 5")
            .unwrap();
        assert!(cfg.train_spec(None, None).is_err());
        let cfg = RunConfig::parse("dataset = norm\nexperts = 2\ntokens = 2\ntoken_dim = 5")
            .unwrap();
        assert_eq!(cfg.train_spec(None, None).unwrap().head, HeadKind::Summation);
    }

    #[test]
    fn mnist_needs_a_directory() {
        let cfg = RunConfig::parse("dataset = mnist\nexperts = 8").unwrap();
        assert!(cfg.train_spec(None, None).is_err());
        let spec = cfg.train_spec(None, Some(Path::new("/data"))).unwrap();
        assert_eq!(spec.tokens, 4);
        assert_eq!(spec.token_dim, 196);
    }

    #[test]
    fn latency_defaults_follow_expert_count() {
        let cfg = RunConfig::parse("experts = 8").unwrap();
        let spec = cfg.latency_spec(None).unwrap();
        assert_eq!(spec.k_list, vec![8, 4, 2]);
        assert_eq!(spec.warmup, 100);
        assert_eq!(spec.timed, 100);
        let bad = RunConfig::parse("experts = 4\nk_list = 5").unwrap();
        assert!(bad.latency_spec(None).is_err());
    }
}
