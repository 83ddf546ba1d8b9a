use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::fusion::FusionMode;
use crate::numerics::Matrix;

/// Named parameter tensors in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    names: Vec<String>,
    tensors: Vec<Matrix<f64>>,
    index: BTreeMap<String, usize>,
}

/// Encoder prefixes: one shared trunk, or one per level for `single`.
pub(crate) fn encoder_name(config: &ModelConfig, level: usize) -> String {
    if config.fusion == FusionMode::Single {
        format!("enc{}", level + 1)
    } else {
        "enc".to_string()
    }
}

/// `(name, rows, cols)` of every tensor; biases are the `1 × n` entries
/// whose name ends in `.b`, `.b1` or `.b2`.
pub fn param_layout(config: &ModelConfig) -> Vec<(String, usize, usize)> {
    let h = config.encoder_width;
    let l = config.feature_dim;
    let k = config.levels();
    let mut out = Vec::new();
    let linear = |out: &mut Vec<(String, usize, usize)>,
                  name: &str,
                  w: &str,
                  b: &str,
                  i: usize,
                  o: usize| {
        out.push((format!("{name}.{w}"), i, o));
        out.push((format!("{name}.{b}"), 1, o));
    };
    let encoders = if config.fusion == FusionMode::Single {
        k
    } else {
        1
    };
    for e in 0..encoders {
        let name = encoder_name(config, e);
        linear(&mut out, &name, "w1", "b1", 3, h);
        linear(&mut out, &name, "w2", "b2", h, h);
    }
    let fused = config.fusion.fused_width(l, k);
    for level in 1..=k {
        let c = config.classes[level - 1];
        let p = format!("l{level}");
        linear(&mut out, &format!("{p}.dsem"), "w", "b", 2 * h, l);
        linear(&mut out, &format!("{p}.dins"), "w", "b", 2 * h, l);
        if config.two_dir {
            linear(&mut out, &format!("{p}.twodir"), "w", "b", l, l);
        }
        linear(
            &mut out,
            &format!("{p}.sem"),
            "w1",
            "b1",
            l,
            config.sem_hidden,
        );
        linear(
            &mut out,
            &format!("{p}.sem"),
            "w2",
            "b2",
            config.sem_hidden,
            c,
        );
        linear(
            &mut out,
            &format!("{p}.off"),
            "w1",
            "b1",
            fused,
            config.offset_hidden,
        );
        linear(
            &mut out,
            &format!("{p}.oi"),
            "w",
            "b",
            config.offset_hidden,
            3,
        );
        linear(
            &mut out,
            &format!("{p}.os"),
            "w",
            "b",
            config.offset_hidden,
            3,
        );
    }
    out
}

pub(crate) fn is_bias(name: &str) -> bool {
    name.rsplit('.').next().is_some_and(|s| s.starts_with('b'))
}

/// Glorot-uniform bound `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Weights uniform in `[-a, a]` with the Glorot bound, biases zero;
/// deterministic per seed.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tensors = param_layout(config)
        .into_iter()
        .map(|(name, r, c)| {
            let m = if is_bias(&name) {
                Matrix::zeros(r, c)
            } else {
                let a = glorot_bound(r, c);
                Matrix::from_fn(r, c, |_, _| rng.random_range(-a..=a))
            };
            (name, m)
        })
        .collect();
    ModelParams::from_named(tensors)
}

impl ModelParams {
    pub fn from_named(named: Vec<(String, Matrix<f64>)>) -> Result<Self> {
        let mut index = BTreeMap::new();
        let mut names = Vec::with_capacity(named.len());
        let mut tensors = Vec::with_capacity(named.len());
        for (i, (n, t)) in named.into_iter().enumerate() {
            if !t.is_finite() {
                return Err(Error::invalid(format!("parameter {n} is not finite")));
            }
            if index.insert(n.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate parameter {n}")));
            }
            names.push(n);
            tensors.push(t);
        }
        Ok(Self {
            names,
            tensors,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Matrix<f64>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Matrix<f64>] {
        &mut self.tensors
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Result<&Matrix<f64>> {
        self.position(name)
            .map(|i| &self.tensors[i])
            .ok_or_else(|| Error::invalid(format!("missing parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Matrix<f64>> {
        match self.position(name) {
            Some(i) => Ok(&mut self.tensors[i]),
            None => Err(Error::invalid(format!("missing parameter {name}"))),
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Matrix::len).sum()
    }

    /// Checks names and shapes against the layout `config` implies.
    pub fn check(&self, config: &ModelConfig) -> Result<()> {
        let layout = param_layout(config);
        if layout.len() != self.len() {
            return Err(Error::invalid(format!(
                "config expects {} parameter tensors, found {}",
                layout.len(),
                self.len()
            )));
        }
        for ((name, r, c), (n, t)) in layout.iter().zip(self.names.iter().zip(&self.tensors)) {
            if name != n || t.shape() != (*r, *c) {
                return Err(Error::invalid(format!(
                    "parameter {n} {:?} does not match expected {name} ({r}, {c})",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Matrix::is_finite)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let c = ModelConfig::default();
        let a = init_params(&c, 3).unwrap();
        assert_eq!(a, init_params(&c, 3).unwrap());
        assert_ne!(a, init_params(&c, 4).unwrap());
        a.check(&c).unwrap();
        for (n, t) in a.names().iter().zip(a.tensors()) {
            if is_bias(n) {
                assert!(t.as_slice().iter().all(|&v| v == 0.0), "{n}");
            } else {
                let bound = glorot_bound(t.rows(), t.cols());
                assert!(t.as_slice().iter().all(|v| v.abs() <= bound), "{n}");
            }
        }
    }

    #[test]
    fn glorot_example() {
        assert!((glorot_bound(64, 64) - 0.21650635094610965).abs() < 1e-15);
    }

    #[test]
    fn single_mode_has_one_encoder_per_level() {
        let c = ModelConfig {
            fusion: FusionMode::Single,
            ..ModelConfig::default()
        };
        let p = init_params(&c, 0).unwrap();
        for k in 1..=3 {
            assert!(p.get(&format!("enc{k}.w1")).is_ok());
        }
        assert!(p.get("enc.w1").is_err());
    }

    #[test]
    fn fused_width_drives_offset_head() {
        for mode in FusionMode::ALL {
            let c = ModelConfig {
                fusion: mode,
                ..ModelConfig::default()
            };
            let p = init_params(&c, 0).unwrap();
            assert_eq!(p.get("l2.off.w1").unwrap().rows(), mode.fused_width(64, 3));
        }
    }
}
