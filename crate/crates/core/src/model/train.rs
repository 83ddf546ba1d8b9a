use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{lr_schedule, ModelConfig};
use super::forward::{loss_and_gradient, LossBreakdown};
use super::params::{init_params, ModelParams};
use crate::data::{augment, derive_seed, LabeledShape};
use crate::error::{Error, Result};

const SHUFFLE_STREAM: u64 = 0x5348_5546;
const AUGMENT_STREAM: u64 = 0x4155_474d;

/// Mean per-shape losses of one logged iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogEntry {
    pub iteration: usize,
    pub learning_rate: f64,
    pub loss: LossBreakdown,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub entries: Vec<LogEntry>,
}

impl TrainLog {
    /// Tab-separated table with one row per entry.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("iteration\tlr\ttotal\tsemantic\tinst_offset\tregion_offset\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                e.iteration,
                e.learning_rate,
                e.loss.total(),
                e.loss.semantic,
                e.loss.inst_offset,
                e.loss.region_offset
            ));
        }
        out
    }
}

/// Endless stream of shape indices, reshuffled each epoch.
struct Sampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    next: usize,
}

impl Sampler {
    fn new(n: usize, seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, SHUFFLE_STREAM)),
            order: (0..n).collect(),
            next: n,
        }
    }

    fn take(&mut self) -> usize {
        if self.next == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.next = 0;
        }
        self.next += 1;
        self.order[self.next - 1]
    }
}

/// Trains from the config's seed; see [`train_from`].
pub fn train(dataset: &[LabeledShape], config: &ModelConfig) -> Result<(ModelParams, TrainLog)> {
    let init = init_params(config, config.seed)?;
    train_from(dataset, config, init, |_| {})
}

/// Plain SGD on mini-batches of augmented shapes. The gradient is the mean
/// over the batch, accumulated in batch order. `on_log` sees each entry as
/// it is recorded.
pub fn train_from(
    dataset: &[LabeledShape],
    config: &ModelConfig,
    mut params: ModelParams,
    mut on_log: impl FnMut(&LogEntry),
) -> Result<(ModelParams, TrainLog)> {
    config.validate()?;
    params.check(config)?;
    if dataset.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    for (i, s) in dataset.iter().enumerate() {
        if s.num_levels() != config.levels() || s.class_counts() != config.classes {
            return Err(Error::invalid(format!(
                "shape {i} has class counts {:?}, model expects {:?}",
                s.class_counts(),
                config.classes
            )));
        }
    }
    let mut sampler = Sampler::new(dataset.len(), config.seed);
    let mut log = TrainLog::default();
    let inv_batch = 1.0 / config.batch_size as f64;
    for it in 0..config.iterations {
        let lr = lr_schedule(it, config);
        let mut sum: Option<Vec<_>> = None;
        let mut loss = LossBreakdown::default();
        for j in 0..config.batch_size {
            let idx = sampler.take();
            let aug_seed = derive_seed(
                derive_seed(config.seed, AUGMENT_STREAM),
                (it * config.batch_size + j) as u64,
            );
            let shape = augment(&dataset[idx], &config.augment, aug_seed)?;
            let (l, grads) = match loss_and_gradient(&params, config, &shape) {
                Ok(v) => v,
                Err(Error::NonFinite { .. }) => return Err(Error::Diverged { iteration: it }),
                Err(e) => return Err(e),
            };
            loss.add(&l);
            match &mut sum {
                None => sum = Some(grads),
                Some(acc) => {
                    for (a, g) in acc.iter_mut().zip(&grads) {
                        for (x, &y) in a.as_mut_slice().iter_mut().zip(g.as_slice()) {
                            *x += y;
                        }
                    }
                }
            }
        }
        let loss = loss.scaled(inv_batch);
        if !loss.total().is_finite() {
            return Err(Error::Diverged { iteration: it });
        }
        let step = lr * inv_batch;
        for (p, g) in params
            .tensors_mut()
            .iter_mut()
            .zip(sum.expect("batch_size >= 1"))
        {
            for (x, &d) in p.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *x -= step * d;
            }
        }
        if !params.is_finite() {
            return Err(Error::Diverged { iteration: it });
        }
        if it % config.log_every == 0 || it + 1 == config.iterations {
            let entry = LogEntry {
                iteration: it,
                learning_rate: lr,
                loss,
            };
            on_log(&entry);
            log.entries.push(entry);
        }
    }
    Ok((params, log))
}
