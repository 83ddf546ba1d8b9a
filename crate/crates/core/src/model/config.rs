use crate::data::{class_counts, AugmentParams};
use crate::error::{Error, Result};
use crate::fusion::FusionMode;

/// Scalar type of the network graph. Parameters are stored in `f64`
/// either way.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl std::fmt::Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(Error::invalid(format!("unknown precision {s:?}"))),
        }
    }
}

/// Architecture and training hyper-parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Decoder output width `l`.
    pub feature_dim: usize,
    /// Semantic class count per level; its length is the level count.
    pub classes: Vec<usize>,
    pub fusion: FusionMode,
    /// Feed arg-max one-hot rows to the fusion module instead of `P_sem`.
    pub one_hot: bool,
    /// Block gradients from the fusion module into the semantic branch.
    pub stop_grad: bool,
    /// Extra linear map from `F_sem` added into `F_ins`.
    pub two_dir: bool,
    pub encoder_width: usize,
    pub sem_hidden: usize,
    pub offset_hidden: usize,
    pub learning_rate: f64,
    pub iterations: usize,
    pub decay: f64,
    /// Fractions of `iterations` at which the rate is multiplied by `decay`.
    pub milestones: Vec<f64>,
    pub batch_size: usize,
    pub seed: u64,
    pub augment: AugmentParams,
    pub log_every: usize,
    pub precision: Precision,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            feature_dim: 64,
            classes: class_counts(),
            fusion: FusionMode::Cross,
            one_hot: false,
            stop_grad: true,
            two_dir: false,
            encoder_width: 64,
            sem_hidden: 32,
            offset_hidden: 32,
            learning_rate: 0.1,
            iterations: 2000,
            decay: 0.1,
            milestones: vec![0.5, 0.75],
            batch_size: 8,
            seed: 0,
            augment: AugmentParams::default(),
            log_every: 100,
            precision: Precision::F32,
        }
    }
}

/// Every key accepted by [`ModelConfig::set`], in serialization order.
pub const MODEL_KEYS: &[&str] = &[
    "feature_dim",
    "classes",
    "fusion",
    "one_hot",
    "stop_grad",
    "two_dir",
    "encoder_width",
    "sem_hidden",
    "offset_hidden",
    "learning_rate",
    "iterations",
    "decay",
    "milestones",
    "batch_size",
    "seed",
    "augment_scale_min",
    "augment_scale_max",
    "augment_rotation_deg",
    "augment_translation",
    "log_every",
    "precision",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::invalid(format!("{key}: cannot parse {value:?}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(|v| parse(key, v)).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl ModelConfig {
    pub fn levels(&self) -> usize {
        self.classes.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0
            || self.encoder_width == 0
            || self.sem_hidden == 0
            || self.offset_hidden == 0
        {
            return Err(Error::invalid("layer widths must be at least 1"));
        }
        if self.classes.is_empty() || self.classes.contains(&0) {
            return Err(Error::invalid(
                "need at least one level and one class per level",
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if !(self.decay > 0.0 && self.decay.is_finite()) {
            return Err(Error::invalid("decay must be positive"));
        }
        let mut prev = 0.0;
        for &m in &self.milestones {
            if !(m > prev && m < 1.0) {
                return Err(Error::invalid(
                    "milestones must be strictly increasing within (0, 1)",
                ));
            }
            prev = m;
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if self.log_every == 0 {
            return Err(Error::invalid("log_every must be at least 1"));
        }
        self.augment.validate()
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "feature_dim" => self.feature_dim = parse(key, value)?,
            "classes" => self.classes = parse_list(key, value)?,
            "fusion" => self.fusion = value.trim().parse()?,
            "one_hot" => self.one_hot = parse(key, value)?,
            "stop_grad" => self.stop_grad = parse(key, value)?,
            "two_dir" => self.two_dir = parse(key, value)?,
            "encoder_width" => self.encoder_width = parse(key, value)?,
            "sem_hidden" => self.sem_hidden = parse(key, value)?,
            "offset_hidden" => self.offset_hidden = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "iterations" => self.iterations = parse(key, value)?,
            "decay" => self.decay = parse(key, value)?,
            "milestones" => {
                self.milestones = if value.trim().is_empty() {
                    Vec::new()
                } else {
                    parse_list(key, value)?
                }
            }
            "batch_size" => self.batch_size = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "augment_scale_min" => self.augment.scale_min = parse(key, value)?,
            "augment_scale_max" => self.augment.scale_max = parse(key, value)?,
            "augment_rotation_deg" => self.augment.max_rotation_deg = parse(key, value)?,
            "augment_translation" => self.augment.max_translation = parse(key, value)?,
            "log_every" => self.log_every = parse(key, value)?,
            "precision" => self.precision = value.trim().parse()?,
            _ => return Err(Error::invalid(format!("unknown model key {key:?}"))),
        }
        Ok(())
    }

    /// `(key, value)` pairs that [`set`](Self::set) reads back losslessly.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        MODEL_KEYS
            .iter()
            .map(|&k| {
                let v = match k {
                    "feature_dim" => self.feature_dim.to_string(),
                    "classes" => join(&self.classes),
                    "fusion" => self.fusion.to_string(),
                    "one_hot" => self.one_hot.to_string(),
                    "stop_grad" => self.stop_grad.to_string(),
                    "two_dir" => self.two_dir.to_string(),
                    "encoder_width" => self.encoder_width.to_string(),
                    "sem_hidden" => self.sem_hidden.to_string(),
                    "offset_hidden" => self.offset_hidden.to_string(),
                    "learning_rate" => self.learning_rate.to_string(),
                    "iterations" => self.iterations.to_string(),
                    "decay" => self.decay.to_string(),
                    "milestones" => join(&self.milestones),
                    "batch_size" => self.batch_size.to_string(),
                    "seed" => self.seed.to_string(),
                    "augment_scale_min" => self.augment.scale_min.to_string(),
                    "augment_scale_max" => self.augment.scale_max.to_string(),
                    "augment_rotation_deg" => self.augment.max_rotation_deg.to_string(),
                    "augment_translation" => self.augment.max_translation.to_string(),
                    "log_every" => self.log_every.to_string(),
                    "precision" => self.precision.to_string(),
                    _ => unreachable!("key list and match disagree"),
                };
                (k, v)
            })
            .collect()
    }
}

/// Learning rate at `iter`: the base rate times `decay` once per milestone
/// already reached.
pub fn lr_schedule(iter: usize, config: &ModelConfig) -> f64 {
    let t = iter as f64;
    let total = config.iterations as f64;
    config
        .milestones
        .iter()
        .filter(|&&m| t >= m * total)
        .fold(config.learning_rate, |lr, _| lr * config.decay)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_examples() {
        let c = ModelConfig {
            iterations: 1000,
            ..ModelConfig::default()
        };
        assert_eq!(lr_schedule(0, &c), 0.1);
        assert_eq!(lr_schedule(499, &c), 0.1);
        assert!((lr_schedule(500, &c) - 0.01).abs() < 1e-15);
        assert!((lr_schedule(749, &c) - 0.01).abs() < 1e-15);
        assert!((lr_schedule(750, &c) - 0.001).abs() < 1e-15);
    }

    #[test]
    fn entries_round_trip() {
        let mut c = ModelConfig {
            fusion: FusionMode::Single,
            classes: vec![2, 5],
            learning_rate: 0.037,
            seed: 99,
            precision: Precision::F64,
            ..ModelConfig::default()
        };
        c.augment.max_translation = 0.2;
        let mut back = ModelConfig::default();
        for (k, v) in c.entries() {
            back.set(k, &v).unwrap();
        }
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = ModelConfig::default();
        assert!(c.set("nope", "1").is_err());
        assert!(c.set("feature_dim", "x").is_err());
        c.milestones = vec![0.75, 0.5];
        assert!(c.validate().is_err());
        assert!(ModelConfig::default().validate().is_ok());
    }
}
