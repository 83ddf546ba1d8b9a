//! Test-time grouping: region-center push, flat-kernel mean-shift and
//! per-class instance extraction.

use std::cmp::Ordering;

use crate::data::Point;
use crate::error::{Error, Result};
use crate::fusion::{argmax_row, ProbMatrix};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClusterParams<T> {
    pub bandwidth: T,
    pub lambda: T,
    /// Below this norm of `O_I - O_S` the push term is dropped.
    pub epsilon: T,
    pub max_iter: usize,
    pub tol: T,
}

impl<T: Scalar> Default for ClusterParams<T> {
    fn default() -> Self {
        Self {
            bandwidth: T::lit(0.1),
            lambda: T::lit(0.05),
            epsilon: T::lit(1e-8),
            max_iter: 300,
            tol: T::lit(1e-6),
        }
    }
}

impl<T: Scalar> ClusterParams<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth > T::zero() && self.bandwidth.is_finite()) {
            return Err(Error::invalid(format!(
                "bandwidth must be positive, got {}",
                self.bandwidth
            )));
        }
        if !(self.lambda >= T::zero() && self.lambda.is_finite()) {
            return Err(Error::invalid(format!(
                "lambda must be non-negative, got {}",
                self.lambda
            )));
        }
        if !(self.epsilon >= T::zero() && self.tol >= T::zero()) {
            return Err(Error::invalid("epsilon and tol must be non-negative"));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be at least 1"));
        }
        Ok(())
    }
}

fn dist2<T: Scalar, const D: usize>(a: &[T; D], b: &[T; D]) -> T {
    let mut s = T::zero();
    for j in 0..D {
        let d = a[j] - b[j];
        s += d * d;
    }
    s
}

/// `p + O_I + λ (O_I − O_S) / ‖O_I − O_S‖`, with the push dropped when the
/// direction is degenerate.
pub fn apply_region_push<T: Scalar>(
    points: &[[T; 3]],
    inst_offset: &[[T; 3]],
    region_offset: &[[T; 3]],
    params: &ClusterParams<T>,
) -> Result<Vec<[T; 3]>> {
    if inst_offset.len() != points.len() || region_offset.len() != points.len() {
        return Err(Error::Shape(format!(
            "{} points, {} instance offsets, {} region offsets",
            points.len(),
            inst_offset.len(),
            region_offset.len()
        )));
    }
    Ok(points
        .iter()
        .zip(inst_offset)
        .zip(region_offset)
        .map(|((p, oi), os)| {
            let d: [T; 3] = std::array::from_fn(|j| oi[j] - os[j]);
            let n = dist2(&d, &[T::zero(); 3]).sqrt();
            let mut q: [T; 3] = std::array::from_fn(|j| p[j] + oi[j]);
            if n >= params.epsilon && n > T::zero() && params.lambda != T::zero() {
                for j in 0..3 {
                    q[j] += params.lambda * d[j] / n;
                }
            }
            q
        })
        .collect())
}

/// Result of [`mean_shift`]: surviving modes and, per input point, the index
/// of its mode.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanShift<T, const D: usize> {
    pub modes: Vec<[T; D]>,
    pub labels: Vec<usize>,
}

fn lex_cmp<T: Scalar, const D: usize>(a: &[T; D], b: &[T; D]) -> Ordering {
    for j in 0..D {
        match a[j].partial_cmp(&b[j]).unwrap_or(Ordering::Equal) {
            Ordering::Equal => {}
            o => return o,
        }
    }
    Ordering::Equal
}

/// Points sorted lexicographically; neighbor queries sweep the first axis.
struct Index<'a, T, const D: usize> {
    sorted: &'a [[T; D]],
}

impl<T: Scalar, const D: usize> Index<'_, T, D> {
    /// Sum and count of points within `radius` of `c`, in sorted order.
    fn ball(&self, c: &[T; D], radius: T) -> ([T; D], usize) {
        let r2 = radius * radius;
        let lo = c[0] - radius;
        let hi = c[0] + radius;
        let start = self.sorted.partition_point(|p| p[0] < lo);
        let mut sum = [T::zero(); D];
        let mut count = 0;
        for p in &self.sorted[start..] {
            if p[0] > hi {
                break;
            }
            if dist2(p, c) <= r2 {
                for j in 0..D {
                    sum[j] += p[j];
                }
                count += 1;
            }
        }
        (sum, count)
    }
}

/// Flat-kernel mean-shift seeded at every point. Converged modes closer than
/// the bandwidth are merged, keeping the one with the largest support (ties
/// to the lower index); each point then joins its nearest surviving mode.
/// The outcome does not depend on input order.
pub fn mean_shift<T: Scalar, const D: usize>(
    points: &[[T; D]],
    params: &ClusterParams<T>,
) -> Result<MeanShift<T, D>> {
    assert!(D >= 1, "mean_shift needs at least one dimension");
    params.validate()?;
    if points.is_empty() {
        return Ok(MeanShift {
            modes: Vec::new(),
            labels: Vec::new(),
        });
    }
    if points.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
        return Err(Error::invalid(
            "mean_shift input contains non-finite coordinates",
        ));
    }
    let bw = params.bandwidth;
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| lex_cmp(&points[a], &points[b]));
    let sorted: Vec<[T; D]> = order.iter().map(|&i| points[i]).collect();
    let index = Index { sorted: &sorted };

    let mut converged: Vec<([T; D], usize)> = Vec::with_capacity(sorted.len());
    let tol2 = params.tol * params.tol;
    for seed in &sorted {
        let mut c = *seed;
        let mut support = 0;
        for _ in 0..params.max_iter {
            let (sum, count) = index.ball(&c, bw);
            if count == 0 {
                break;
            }
            let inv = T::one() / T::from_usize(count).expect("count fits in scalar");
            let next: [T; D] = std::array::from_fn(|j| sum[j] * inv);
            support = count;
            let moved = dist2(&next, &c);
            c = next;
            if moved <= tol2 {
                break;
            }
        }
        converged.push((c, support));
    }

    let mut rank: Vec<usize> = (0..converged.len()).collect();
    rank.sort_by(|&a, &b| {
        converged[b]
            .1
            .cmp(&converged[a].1)
            .then_with(|| lex_cmp(&converged[a].0, &converged[b].0))
            .then(a.cmp(&b))
    });
    let bw2 = bw * bw;
    let mut modes: Vec<[T; D]> = Vec::new();
    for &r in &rank {
        let c = converged[r].0;
        if modes.iter().all(|m| dist2(m, &c) >= bw2) {
            modes.push(c);
        }
    }

    let mut labels = vec![0; points.len()];
    for (i, p) in points.iter().enumerate() {
        let mut best = 0;
        let mut best_d = dist2(p, &modes[0]);
        for (m, mode) in modes.iter().enumerate().skip(1) {
            let d = dist2(p, mode);
            if d < best_d {
                best = m;
                best_d = d;
            }
        }
        labels[i] = best;
    }
    Ok(MeanShift { modes, labels })
}

/// Network outputs for one level, as consumed by [`cluster_instances`].
#[derive(Clone, Debug, PartialEq)]
pub struct LevelOutputs {
    pub sem_probs: ProbMatrix<f64>,
    pub inst_offset: Vec<Point>,
    pub region_offset: Vec<Point>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InstanceInfo {
    /// 1-based semantic label.
    pub label: usize,
    pub confidence: f64,
}

/// One level of predictions. Instance ids index `instances`.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelPrediction {
    /// Per-point 1-based semantic label.
    pub sem: Vec<usize>,
    /// Per-point instance id.
    pub inst: Vec<usize>,
    pub instances: Vec<InstanceInfo>,
}

impl LevelPrediction {
    pub fn num_instances(&self) -> usize {
        self.instances.len()
    }

    /// Member point indices of every instance.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.instances.len()];
        for (i, &id) in self.inst.iter().enumerate() {
            out[id].push(i);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InstancePrediction {
    pub levels: Vec<LevelPrediction>,
}

/// Groups one level: push, split by predicted class, mean-shift per class,
/// renumber instances by (class, mode index).
pub fn cluster_level(
    points: &[Point],
    outputs: &LevelOutputs,
    params: &ClusterParams<f64>,
) -> Result<LevelPrediction> {
    let n = points.len();
    if outputs.sem_probs.rows() != n {
        return Err(Error::Shape(format!(
            "{} probability rows for {n} points",
            outputs.sem_probs.rows()
        )));
    }
    let shifted = apply_region_push(points, &outputs.inst_offset, &outputs.region_offset, params)?;
    let probs = outputs.sem_probs.matrix();
    let classes = outputs.sem_probs.classes();
    let sem: Vec<usize> = (0..n).map(|i| argmax_row(probs.row(i)) + 1).collect();
    let mut inst = vec![0; n];
    let mut instances = Vec::new();
    for class in 1..=classes {
        let members: Vec<usize> = (0..n).filter(|&i| sem[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        let pts: Vec<Point> = members.iter().map(|&i| shifted[i]).collect();
        let ms = mean_shift(&pts, params)?;
        let base = instances.len();
        let mut sums = vec![0.0; ms.modes.len()];
        let mut counts = vec![0usize; ms.modes.len()];
        for (&i, &m) in members.iter().zip(&ms.labels) {
            inst[i] = base + m;
            sums[m] += probs[(i, class - 1)];
            counts[m] += 1;
        }
        for (s, c) in sums.into_iter().zip(counts) {
            instances.push(InstanceInfo {
                label: class,
                confidence: if c == 0 {
                    0.0
                } else {
                    (s / c as f64).clamp(0.0, 1.0)
                },
            });
        }
    }
    // Modes that attracted no point would leave holes in the id range.
    let used = {
        let mut u = vec![false; instances.len()];
        for &id in &inst {
            u[id] = true;
        }
        u
    };
    if used.iter().all(|&u| u) {
        return Ok(LevelPrediction {
            sem,
            inst,
            instances,
        });
    }
    let mut remap = vec![usize::MAX; instances.len()];
    let mut kept = Vec::new();
    for (id, info) in instances.into_iter().enumerate() {
        if used[id] {
            remap[id] = kept.len();
            kept.push(info);
        }
    }
    for id in &mut inst {
        *id = remap[*id];
    }
    Ok(LevelPrediction {
        sem,
        inst,
        instances: kept,
    })
}

/// Clusters every level independently.
pub fn cluster_instances(
    points: &[Point],
    outputs: &[LevelOutputs],
    params: &ClusterParams<f64>,
) -> Result<InstancePrediction> {
    let levels = outputs
        .iter()
        .map(|o| cluster_level(points, o, params))
        .collect::<Result<Vec<_>>>()?;
    Ok(InstancePrediction { levels })
}
