//! Instance AP, shape-averaged AP, semantic mIoU and coverage scores.

mod report;

pub use report::{evaluate, evaluate_level, LevelMetrics, MetricsReport, AP_THRESHOLDS};

/// `|A ∩ B| / |A ∪ B|` for sorted, duplicate-free index sets; 0 when both
/// are empty.
pub fn mask_iou(a: &[usize], b: &[usize]) -> f64 {
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// A ground-truth instance: 1-based category and sorted member indices.
#[derive(Clone, Debug, PartialEq)]
pub struct GtInstance {
    pub label: usize,
    pub points: Vec<usize>,
}

/// A predicted instance with its ranking score.
#[derive(Clone, Debug, PartialEq)]
pub struct PredInstance {
    pub id: usize,
    pub label: usize,
    pub confidence: f64,
    pub points: Vec<usize>,
}

/// Ground truth and predictions of one shape at one level.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ShapeInstances {
    pub gts: Vec<GtInstance>,
    pub preds: Vec<PredInstance>,
}

impl ShapeInstances {
    pub fn num_gt(&self, category: usize) -> usize {
        self.gts.iter().filter(|g| g.label == category).count()
    }
}

/// Per-prediction outcome after greedy matching, in ranked order.
fn ranked_hits(shapes: &[ShapeInstances], category: usize, threshold: f64) -> Vec<bool> {
    let mut ranked: Vec<(usize, &PredInstance)> = shapes
        .iter()
        .enumerate()
        .flat_map(|(s, sh)| {
            sh.preds
                .iter()
                .filter(|p| p.label == category)
                .map(move |p| (s, p))
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.1.confidence
            .total_cmp(&a.1.confidence)
            .then(a.1.id.cmp(&b.1.id))
            .then(a.0.cmp(&b.0))
    });
    let mut taken: Vec<Vec<bool>> = shapes.iter().map(|s| vec![false; s.gts.len()]).collect();
    ranked
        .into_iter()
        .map(|(s, p)| {
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in shapes[s].gts.iter().enumerate() {
                if gt.label != category || taken[s][g] {
                    continue;
                }
                let iou = mask_iou(&p.points, &gt.points);
                if best.is_none_or(|(_, b)| iou > b) {
                    best = Some((g, iou));
                }
            }
            match best {
                Some((g, iou)) if iou > threshold => {
                    taken[s][g] = true;
                    true
                }
                _ => false,
            }
        })
        .collect()
}

/// Area under the precision-recall curve with each precision replaced by
/// the maximum precision at equal or higher recall.
pub fn ap_from_hits(hits: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut precision = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (i, &h) in hits.iter().enumerate() {
        tp += h as usize;
        precision.push(tp as f64 / (i + 1) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let g = num_gt as f64;
    hits.iter()
        .zip(&precision)
        .filter(|(&h, _)| h)
        .fold(0.0, |acc, (_, &p)| acc + p / g)
}

/// Average precision of one category, pooling predictions over shapes
/// (ranked by confidence, ties by instance id) and matching within each
/// shape. `None` when the category has no ground-truth instance.
pub fn average_precision(
    shapes: &[ShapeInstances],
    category: usize,
    threshold: f64,
) -> Option<f64> {
    let num_gt: usize = shapes.iter().map(|s| s.num_gt(category)).sum();
    if num_gt == 0 {
        return None;
    }
    Some(ap_from_hits(
        &ranked_hits(shapes, category, threshold),
        num_gt,
    ))
}

/// Per-shape AP averaged over the categories present in that shape, then
/// averaged over shapes that have ground truth.
pub fn shape_ap(shapes: &[ShapeInstances], threshold: f64) -> Option<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for shape in shapes {
        let cats: std::collections::BTreeSet<usize> = shape.gts.iter().map(|g| g.label).collect();
        if cats.is_empty() {
            continue;
        }
        let one = std::slice::from_ref(shape);
        let sum: f64 = cats
            .iter()
            .map(|&c| average_precision(one, c, threshold).unwrap_or(0.0))
            .sum();
        total += sum / cats.len() as f64;
        count += 1;
    }
    (count > 0).then(|| total / count as f64)
}

/// Point-count confusion matrix over 1-based labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Confusion {
    classes: usize,
    /// `counts[gt-1][pred-1]`
    counts: Vec<Vec<u64>>,
}

impl Confusion {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn add(&mut self, pred: &[usize], gt: &[usize]) -> crate::Result<()> {
        if pred.len() != gt.len() {
            return Err(crate::Error::Shape(format!(
                "{} predicted labels for {} points",
                pred.len(),
                gt.len()
            )));
        }
        for (&p, &g) in pred.iter().zip(gt) {
            for l in [p, g] {
                if l == 0 || l > self.classes {
                    return Err(crate::Error::invalid(format!(
                        "label {l} outside 1..={}",
                        self.classes
                    )));
                }
            }
            self.counts[g - 1][p - 1] += 1;
        }
        Ok(())
    }

    /// Mean IoU over classes present in either labeling.
    pub fn miou(&self) -> Option<f64> {
        let mut total = 0.0;
        let mut present = 0usize;
        for c in 0..self.classes {
            let tp = self.counts[c][c];
            let gt: u64 = self.counts[c].iter().sum();
            let pred: u64 = self.counts.iter().map(|r| r[c]).sum();
            let union = gt + pred - tp;
            if union > 0 {
                total += tp as f64 / union as f64;
                present += 1;
            }
        }
        (present > 0).then(|| total / present as f64)
    }
}

pub fn semantic_miou(pred: &[usize], gt: &[usize], classes: usize) -> crate::Result<f64> {
    let mut conf = Confusion::new(classes);
    conf.add(pred, gt)?;
    Ok(conf.miou().unwrap_or(0.0))
}

/// Coverage scores of one partition against another.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Coverage {
    pub m_cov: f64,
    pub m_wcov: f64,
    pub m_prec: f64,
    pub m_rec: f64,
}

/// Class-agnostic coverage. Matches need IoU above 0.5; at that threshold a
/// ground-truth instance can overlap at most one disjoint prediction that
/// well, so greedy matching is order-independent.
pub fn coverage_metrics(preds: &[Vec<usize>], gts: &[Vec<usize>]) -> Coverage {
    if gts.is_empty() {
        return Coverage::default();
    }
    let total: usize = gts.iter().map(Vec::len).sum();
    let mut cov = 0.0;
    let mut wcov = 0.0;
    let mut taken = vec![false; preds.len()];
    let mut tp = 0usize;
    for g in gts {
        let mut best = 0.0f64;
        let mut best_free: Option<(usize, f64)> = None;
        for (j, p) in preds.iter().enumerate() {
            let iou = mask_iou(p, g);
            best = best.max(iou);
            if !taken[j] && best_free.is_none_or(|(_, b)| iou > b) {
                best_free = Some((j, iou));
            }
        }
        cov += best;
        if total > 0 {
            wcov += best * g.len() as f64 / total as f64;
        }
        if let Some((j, iou)) = best_free {
            if iou > 0.5 {
                taken[j] = true;
                tp += 1;
            }
        }
    }
    Coverage {
        m_cov: cov / gts.len() as f64,
        m_wcov: wcov,
        m_prec: if preds.is_empty() {
            0.0
        } else {
            tp as f64 / preds.len() as f64
        },
        m_rec: tp as f64 / gts.len() as f64,
    }
}
