use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::forward::{build_forward, loss_and_gradient_in, total_loss_nodes};
use super::params::{is_bias, ModelParams};
use crate::data::LabeledShape;
use crate::error::Result;

/// Settings of a finite-difference gradient check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradcheckParams {
    /// Fraction of each tensor's entries to probe; at least one per tensor.
    pub fraction: f64,
    /// Central-difference step.
    pub step: f64,
    /// Largest accepted relative error.
    pub tolerance: f64,
    /// Denominator floor of the relative error.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradcheckParams {
    fn default() -> Self {
        Self {
            fraction: 0.01,
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-5,
            seed: 0,
        }
    }
}

/// One probed parameter entry.
#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckEntry {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradcheckReport {
    pub entries: Vec<GradcheckEntry>,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_error).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| !(e.rel_error <= self.tolerance))
            .count()
    }

    pub fn passed(&self) -> bool {
        !self.entries.is_empty() && self.failures() == 0
    }
}

/// Copy of `params` with every bias drawn uniform in `[-amount, amount]`,
/// which moves zero-initialized units off their ReLU kinks.
pub fn jitter_biases(params: &ModelParams, amount: f64, seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = params.clone();
    let names = params.names().to_vec();
    for (name, t) in names.iter().zip(out.tensors_mut()) {
        if is_bias(name) {
            t.as_mut_slice()
                .iter_mut()
                .for_each(|x| *x = rng.random_range(-amount..=amount));
        }
    }
    out
}

/// Largest gradient magnitude that the offset losses alone send into the
/// semantic head. The head reaches those losses only through the fusion
/// module, so it is exactly zero with `stop_grad` or `one_hot` on.
pub fn fusion_leak_into_semantic(
    params: &ModelParams,
    config: &ModelConfig,
    shape: &LabeledShape,
) -> Result<f64> {
    let mut fg = build_forward::<f64>(params, config, &shape.points)?;
    let losses = total_loss_nodes(&mut fg, shape)?;
    let g = &mut fg.graph;
    let mut total = losses.inst_offset[0];
    for &n in losses.inst_offset[1..].iter().chain(&losses.region_offset) {
        total = g.add(total, n)?;
    }
    let grads = g.backward(total)?;
    let mut worst: f64 = 0.0;
    for (name, &id) in params.names().iter().zip(&fg.params) {
        if name.contains(".sem.") {
            if let Some(m) = grads.get_ref(id) {
                worst = worst.max(m.max_abs());
            }
        }
    }
    Ok(worst)
}

fn loss_at(params: &ModelParams, config: &ModelConfig, shape: &LabeledShape) -> Result<f64> {
    let mut fg = build_forward::<f64>(params, config, &shape.points)?;
    let l = total_loss_nodes(&mut fg, shape)?;
    Ok(fg.graph.value(l.total)[(0, 0)])
}

/// Compares `f64` backpropagated gradients of the total loss with central
/// differences on a random subset of entries.
pub fn gradient_check(
    params: &ModelParams,
    config: &ModelConfig,
    shape: &LabeledShape,
    check: &GradcheckParams,
) -> Result<GradcheckReport> {
    params.check(config)?;
    let (_, grads) = loss_and_gradient_in::<f64>(params, config, shape)?;
    let mut rng = ChaCha8Rng::seed_from_u64(check.seed);
    let mut probe = params.clone();
    let mut entries = Vec::new();
    for (t, name) in params.names().iter().enumerate() {
        let len = params.tensors()[t].len();
        let count = ((len as f64 * check.fraction).ceil() as usize).clamp(1, len);
        let mut picks = sample(&mut rng, len, count).into_vec();
        picks.sort_unstable();
        for i in picks {
            let x = params.tensors()[t].as_slice()[i];
            probe.tensors_mut()[t].as_mut_slice()[i] = x + check.step;
            let up = loss_at(&probe, config, shape)?;
            probe.tensors_mut()[t].as_mut_slice()[i] = x - check.step;
            let down = loss_at(&probe, config, shape)?;
            probe.tensors_mut()[t].as_mut_slice()[i] = x;
            let numeric = (up - down) / (2.0 * check.step);
            let analytic = grads[t].as_slice()[i];
            let rel_error =
                (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(check.floor);
            entries.push(GradcheckEntry {
                tensor: name.clone(),
                index: i,
                analytic,
                numeric,
                rel_error,
            });
        }
    }
    Ok(GradcheckReport {
        entries,
        tolerance: check.tolerance,
    })
}
