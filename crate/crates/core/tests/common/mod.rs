//! Independent reference implementations and fixtures shared by the
//! integration tests and the acceptance binary.
#![allow(dead_code)]

use std::collections::BTreeSet;

use partfuse::cluster::{cluster_level, LevelOutputs, LevelPrediction};
use partfuse::data::{scissor_with_blade_gap, LabeledShape, LevelLabels};
use partfuse::metrics::{evaluate_level, GtInstance, PredInstance, ShapeInstances};
use partfuse::{ClusterParams, Matrix, ProbMatrix};
use rand::Rng;

pub type Rows = Vec<Vec<f64>>;

pub fn to_rows(m: &Matrix) -> Rows {
    m.row_iter().map(<[f64]>::to_vec).collect()
}

pub fn max_abs_diff(a: &Rows, b: &Rows) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut worst: f64 = 0.0;
    for (x, y) in a.iter().zip(b) {
        assert_eq!(x.len(), y.len());
        for (u, v) in x.iter().zip(y) {
            worst = worst.max((u - v).abs());
        }
    }
    worst
}

/// `Z[m] = Σ_p P[p][m] F[p] / max(Σ_p P[p][m], 1e-12)`, summed point by point.
pub fn part_features_loop(p: &Rows, f: &Rows) -> Rows {
    let c = p.first().map_or(0, Vec::len);
    let l = f.first().map_or(0, Vec::len);
    let mut z = vec![vec![0.0; l]; c];
    for m in 0..c {
        let mut mass = 0.0;
        let mut acc = vec![0.0; l];
        for (pp, fp) in p.iter().zip(f) {
            mass += pp[m];
            for j in 0..l {
                acc[j] += pp[m] * fp[j];
            }
        }
        let d = f64::max(mass, 1e-12);
        for j in 0..l {
            z[m][j] = acc[j] / d;
        }
    }
    z
}

/// `F̂[p] = Σ_m P[p][m] Z[m]`.
pub fn point_features_loop(p: &Rows, z: &Rows) -> Rows {
    let l = z.first().map_or(0, Vec::len);
    p.iter()
        .map(|pp| {
            let mut out = vec![0.0; l];
            for (m, zm) in z.iter().enumerate() {
                for j in 0..l {
                    out[j] += pp[m] * zm[j];
                }
            }
            out
        })
        .collect()
}

/// Fused feature of every level `k`: `[F̂(k,1) | … | F̂(k,K) | F(k) | pos]`.
pub fn cross_level_loop(probs: &[Rows], feats: &[Rows], pos: &Rows) -> Vec<Rows> {
    feats
        .iter()
        .map(|f| {
            let blocks: Vec<Rows> = probs
                .iter()
                .map(|p| point_features_loop(p, &part_features_loop(p, f)))
                .collect();
            (0..pos.len())
                .map(|i| {
                    let mut row = Vec::new();
                    for b in &blocks {
                        row.extend_from_slice(&b[i]);
                    }
                    row.extend_from_slice(&f[i]);
                    row.extend_from_slice(&pos[i]);
                    row
                })
                .collect()
        })
        .collect()
}

/// One random fusion problem over `levels` levels.
pub struct FusionCase {
    pub probs: Vec<ProbMatrix>,
    pub feats: Vec<Matrix>,
    pub positions: Matrix,
}

/// Random case with `N ≤ max_n`, `c ≤ max_c`, `l ≤ max_l`; some classes
/// receive no probability mass.
pub fn random_fusion_case(
    rng: &mut impl Rng,
    levels: usize,
    max_n: usize,
    max_c: usize,
    max_l: usize,
) -> FusionCase {
    let n = rng.random_range(1..=max_n);
    let l = rng.random_range(1..=max_l);
    let probs = (0..levels)
        .map(|_| {
            let c = rng.random_range(1..=max_c);
            let dead: Vec<bool> = (0..c).map(|m| m > 0 && rng.random_bool(0.2)).collect();
            let rows: Rows = (0..n)
                .map(|_| {
                    let raw: Vec<f64> = dead
                        .iter()
                        .map(|&d| if d { 0.0 } else { rng.random_range(0.0..1.0) })
                        .collect();
                    let s: f64 = raw.iter().sum();
                    if s > 0.0 {
                        raw.iter().map(|v| v / s).collect()
                    } else {
                        (0..c).map(|m| if m == 0 { 1.0 } else { 0.0 }).collect()
                    }
                })
                .collect();
            ProbMatrix::new(Matrix::from_rows(&rows).unwrap()).unwrap()
        })
        .collect();
    let feats = (0..levels)
        .map(|_| Matrix::from_fn(n, l, |_, _| rng.random_range(-3.0..3.0)))
        .collect();
    let positions = Matrix::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.0));
    FusionCase {
        probs,
        feats,
        positions,
    }
}

fn iou_sets(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.union(b).count();
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// AP of one category in one shape, from every operating point of the
/// ranked list: the mean over recall levels `j / G` of the best precision
/// reached at recall at least `j / G`.
pub fn ap_oracle(shape: &ShapeInstances, category: usize, threshold: f64) -> Option<f64> {
    let gts: Vec<BTreeSet<usize>> = shape
        .gts
        .iter()
        .filter(|g| g.label == category)
        .map(|g| g.points.iter().copied().collect())
        .collect();
    if gts.is_empty() {
        return None;
    }
    let mut preds: Vec<&PredInstance> =
        shape.preds.iter().filter(|p| p.label == category).collect();
    preds.sort_by(|a, b| {
        b.confidence
            .partial_cmp(&a.confidence)
            .unwrap()
            .then(a.id.cmp(&b.id))
    });
    let mut used = vec![false; gts.len()];
    let mut tp = 0usize;
    let mut points: Vec<(usize, f64)> = Vec::new();
    for (k, p) in preds.iter().enumerate() {
        let set: BTreeSet<usize> = p.points.iter().copied().collect();
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if used[g] {
                continue;
            }
            let iou = iou_sets(&set, gt);
            match best {
                Some((_, b)) if iou <= b => {}
                _ => best = Some((g, iou)),
            }
        }
        if let Some((g, iou)) = best {
            if iou > threshold {
                used[g] = true;
                tp += 1;
            }
        }
        points.push((tp, tp as f64 / (k + 1) as f64));
    }
    let total = gts.len();
    let g = total as f64;
    let mut ap = 0.0;
    for j in 1..=total {
        let best = points
            .iter()
            .filter(|(t, _)| *t >= j)
            .map(|&(_, p)| p)
            .fold(None, |m: Option<f64>, p| Some(m.map_or(p, |m| m.max(p))));
        if let Some(p) = best {
            ap += p / g;
        }
    }
    Some(ap)
}

const GT_LAYOUTS: [&[&[usize]]; 5] = [
    &[],
    &[&[0, 1, 2, 3]],
    &[&[0, 1, 2, 3], &[4, 5, 6, 7]],
    &[&[0, 1], &[2, 3, 4], &[5, 6, 7]],
    &[&[0, 1, 2], &[3, 4, 5]],
];

const PRED_MASKS: [&[usize]; 6] = [
    &[0, 1, 2, 3],
    &[4, 5, 6, 7],
    &[0, 1],
    &[2, 3, 4],
    &[1, 2, 3, 4, 5],
    &[0, 1, 2, 3, 4, 5, 6, 7],
];

const CONFIDENCES: [f64; 3] = [0.25, 0.5, 0.75];

/// Every micro-case over 8 points: up to 3 ground-truth instances from
/// fixed layouts with all labelings in {1, 2}, and up to 3 predictions with
/// every choice of mask, label and confidence (ties included).
pub fn micro_cases() -> Vec<ShapeInstances> {
    let mut gt_sets: Vec<Vec<GtInstance>> = Vec::new();
    for layout in GT_LAYOUTS {
        for labels in 0..(1usize << layout.len()) {
            gt_sets.push(
                layout
                    .iter()
                    .enumerate()
                    .map(|(i, pts)| GtInstance {
                        label: 1 + ((labels >> i) & 1),
                        points: pts.to_vec(),
                    })
                    .collect(),
            );
        }
    }
    let choices = PRED_MASKS.len() * 2 * CONFIDENCES.len();
    let mut pred_sets: Vec<Vec<PredInstance>> = Vec::new();
    for n in 0..=3u32 {
        for code in 0..choices.pow(n) {
            let mut rest = code;
            let preds = (0..n as usize)
                .map(|id| {
                    let c = rest % choices;
                    rest /= choices;
                    PredInstance {
                        id,
                        label: 1 + (c / PRED_MASKS.len()) % 2,
                        confidence: CONFIDENCES[c / (2 * PRED_MASKS.len())],
                        points: PRED_MASKS[c % PRED_MASKS.len()].to_vec(),
                    }
                })
                .collect();
            pred_sets.push(preds);
        }
    }
    let mut out = Vec::with_capacity(gt_sets.len() * pred_sets.len());
    for gts in &gt_sets {
        for preds in &pred_sets {
            out.push(ShapeInstances {
                gts: gts.clone(),
                preds: preds.clone(),
            });
        }
    }
    out
}

/// Network outputs equal to the ground truth of one level: one-hot class
/// probabilities and exact offsets.
pub fn oracle_outputs(level: &LevelLabels) -> LevelOutputs {
    let n = level.sem.len();
    let p = Matrix::from_fn(n, level.classes, |i, m| {
        if level.sem[i] == m + 1 {
            1.0
        } else {
            0.0
        }
    });
    LevelOutputs {
        sem_probs: ProbMatrix::new(p).unwrap(),
        inst_offset: level.inst_offset.clone(),
        region_offset: level.region_offset.clone(),
    }
}

/// Level and class of the two scissor blades.
pub const BLADE_LEVEL: usize = 1;
pub const BLADE_CLASS: usize = 1;

/// Two-blade scissor with blade centers 0.05 apart.
pub fn blade_scissor() -> LabeledShape {
    scissor_with_blade_gap(0.05, 1024, 0).unwrap()
}

/// Clusters the blade level from oracle outputs and returns the prediction,
/// the number of blade instances and the blade AP50.
pub fn blade_scenario(
    shape: &LabeledShape,
    bandwidth: f64,
    lambda: f64,
) -> (LevelPrediction, usize, f64) {
    let level = &shape.levels[BLADE_LEVEL];
    let params = ClusterParams {
        bandwidth,
        lambda,
        ..ClusterParams::default()
    };
    let pred = cluster_level(&shape.points, &oracle_outputs(level), &params).unwrap();
    let blades = pred
        .instances
        .iter()
        .filter(|i| i.label == BLADE_CLASS)
        .count();
    let names = (1..=level.classes).map(|c| format!("c{c}")).collect();
    let metrics = evaluate_level(&[level], &[&pred], names).unwrap();
    let ap50 = metrics.ap[BLADE_CLASS - 1][1].unwrap();
    (pred, blades, ap50)
}

/// Same partition up to renaming of ids.
pub fn same_partition(a: &[usize], b: &[usize]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let mut fwd = std::collections::HashMap::new();
    let mut back = std::collections::HashMap::new();
    a.iter()
        .zip(b)
        .all(|(x, y)| *fwd.entry(x).or_insert(y) == y && *back.entry(y).or_insert(x) == x)
}

/// 1D two-mode sample: `per_mode` points around 0 and around 1 with
/// Gaussian noise of standard deviation `sigma`.
pub fn two_mode_sample(rng: &mut impl Rng, per_mode: usize, sigma: f64) -> Vec<[f64; 1]> {
    let normal = rand_distr::Normal::new(0.0, sigma).unwrap();
    let mut out = Vec::with_capacity(2 * per_mode);
    for center in [0.0, 1.0] {
        for _ in 0..per_mode {
            out.push([center + rng.sample(normal)]);
        }
    }
    out
}
