use std::fs;
use std::path::{Path, PathBuf};

use partfuse::model::{ModelConfig, MODEL_KEYS};
use partfuse::ClusterParams;

use crate::error::{CliError, CliResult};

/// Every knob of a run: model, clustering, corpus and file locations.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub cluster: ClusterParams,
    pub train_shapes: usize,
    pub test_shapes: usize,
    pub points: usize,
    pub jitter: f64,
    pub data_seed: u64,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Split that `infer` and `eval` read.
    pub split: String,
    pub gradcheck_points: usize,
    pub gradcheck_fraction: f64,
    pub gradcheck_tolerance: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            cluster: ClusterParams::default(),
            train_shapes: 200,
            test_shapes: 50,
            points: 1024,
            jitter: 0.1,
            data_seed: 1,
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            split: "test".to_string(),
            gradcheck_points: 32,
            gradcheck_fraction: 0.01,
            gradcheck_tolerance: 1e-4,
        }
    }
}

/// Run-level keys; model keys come from [`MODEL_KEYS`].
pub const RUN_KEYS: &[&str] = &[
    "bandwidth",
    "lambda",
    "cluster_epsilon",
    "cluster_max_iter",
    "cluster_tol",
    "train_shapes",
    "test_shapes",
    "points",
    "jitter",
    "data_seed",
    "data_dir",
    "out_dir",
    "split",
    "gradcheck_points",
    "gradcheck_fraction",
    "gradcheck_tolerance",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> CliResult<T> {
    value
        .trim()
        .parse()
        .map_err(|_| CliError::Config(format!("{key}: cannot parse {value:?}")))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let key = key.trim();
        match key {
            "bandwidth" => self.cluster.bandwidth = parse(key, value)?,
            "lambda" => self.cluster.lambda = parse(key, value)?,
            "cluster_epsilon" => self.cluster.epsilon = parse(key, value)?,
            "cluster_max_iter" => self.cluster.max_iter = parse(key, value)?,
            "cluster_tol" => self.cluster.tol = parse(key, value)?,
            "train_shapes" => self.train_shapes = parse(key, value)?,
            "test_shapes" => self.test_shapes = parse(key, value)?,
            "points" => self.points = parse(key, value)?,
            "jitter" => self.jitter = parse(key, value)?,
            "data_seed" => self.data_seed = parse(key, value)?,
            "data_dir" => self.data_dir = PathBuf::from(value.trim()),
            "out_dir" => self.out_dir = PathBuf::from(value.trim()),
            "split" => self.split = value.trim().to_string(),
            "gradcheck_points" => self.gradcheck_points = parse(key, value)?,
            "gradcheck_fraction" => self.gradcheck_fraction = parse(key, value)?,
            "gradcheck_tolerance" => self.gradcheck_tolerance = parse(key, value)?,
            _ if MODEL_KEYS.contains(&key) => self
                .model
                .set(key, value)
                .map_err(|e| CliError::Config(e.to_string()))?,
            _ => return Err(CliError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> CliResult<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key=value", i + 1)))?;
            self.set(k, v)
                .map_err(|e| CliError::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> CliResult<()> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    /// Applies one `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> CliResult<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("override {kv:?} is not key=value")))?;
        self.set(k, v)
    }

    pub fn validate(&self) -> CliResult<()> {
        let invalid = |e: partfuse::Error| CliError::Config(e.to_string());
        self.model.validate().map_err(invalid)?;
        self.cluster.validate().map_err(invalid)?;
        if self.points == 0 || self.gradcheck_points == 0 {
            return Err(CliError::Config("point counts must be at least 1".into()));
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err(CliError::Config("jitter must be non-negative".into()));
        }
        if self.split != "train" && self.split != "test" {
            return Err(CliError::Config(format!(
                "split must be train or test, got {:?}",
                self.split
            )));
        }
        if !(self.gradcheck_fraction > 0.0 && self.gradcheck_fraction <= 1.0) {
            return Err(CliError::Config(
                "gradcheck_fraction must be in (0, 1]".into(),
            ));
        }
        if !(self.gradcheck_tolerance > 0.0) {
            return Err(CliError::Config(
                "gradcheck_tolerance must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Run-level `(key, value)` pairs; [`set`](Self::set) reads them back.
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = self
            .model
            .entries()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        let run = [
            self.cluster.bandwidth.to_string(),
            self.cluster.lambda.to_string(),
            self.cluster.epsilon.to_string(),
            self.cluster.max_iter.to_string(),
            self.cluster.tol.to_string(),
            self.train_shapes.to_string(),
            self.test_shapes.to_string(),
            self.points.to_string(),
            self.jitter.to_string(),
            self.data_seed.to_string(),
            self.data_dir.display().to_string(),
            self.out_dir.display().to_string(),
            self.split.clone(),
            self.gradcheck_points.to_string(),
            self.gradcheck_fraction.to_string(),
            self.gradcheck_tolerance.to_string(),
        ];
        out.extend(RUN_KEYS.iter().map(|k| k.to_string()).zip(run));
        out
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.out_dir.join("model.ckpt")
    }

    pub fn predictions_dir(&self) -> PathBuf {
        self.out_dir.join("predictions")
    }
}
