use std::fmt::Write as _;

use super::{
    average_precision, coverage_metrics, shape_ap, Confusion, Coverage, GtInstance, PredInstance,
    ShapeInstances,
};
use crate::cluster::{InstancePrediction, LevelPrediction};
use crate::data::{LabeledShape, LevelLabels, CLASS_NAMES};
use crate::error::{Error, Result};

pub const AP_THRESHOLDS: [f64; 3] = [0.25, 0.5, 0.75];

#[derive(Clone, Debug, PartialEq)]
pub struct LevelMetrics {
    pub class_names: Vec<String>,
    /// AP25, AP50, AP75 per category; `None` for categories without GT.
    pub ap: Vec<[Option<f64>; 3]>,
    /// Category means of `ap`.
    pub map: [Option<f64>; 3],
    pub s_ap50: Option<f64>,
    pub miou: Option<f64>,
    /// Shape-averaged coverage scores.
    pub coverage: Coverage,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub levels: Vec<LevelMetrics>,
}

fn gt_instances(level: &LevelLabels) -> Vec<GtInstance> {
    level
        .instances()
        .into_values()
        .map(|points| GtInstance {
            label: level.sem[points[0]],
            points,
        })
        .collect()
}

fn pred_instances(level: &LevelPrediction) -> Vec<PredInstance> {
    level
        .members()
        .into_iter()
        .zip(&level.instances)
        .enumerate()
        .map(|(id, (points, info))| PredInstance {
            id,
            label: info.label,
            confidence: info.confidence,
            points,
        })
        .collect()
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Metrics for one level over a set of shapes.
pub fn evaluate_level(
    gts: &[&LevelLabels],
    preds: &[&LevelPrediction],
    class_names: Vec<String>,
) -> Result<LevelMetrics> {
    if gts.len() != preds.len() {
        return Err(Error::Shape(format!(
            "{} ground-truth shapes, {} predictions",
            gts.len(),
            preds.len()
        )));
    }
    let classes = gts.first().map_or(class_names.len(), |g| g.classes);
    let mut confusion = Confusion::new(classes);
    let mut shapes = Vec::with_capacity(gts.len());
    let mut coverage = Vec::with_capacity(gts.len());
    for (g, p) in gts.iter().zip(preds) {
        if g.classes != classes {
            return Err(Error::invalid("class counts differ between shapes"));
        }
        confusion.add(&p.sem, &g.sem)?;
        let si = ShapeInstances {
            gts: gt_instances(g),
            preds: pred_instances(p),
        };
        let gp: Vec<Vec<usize>> = si.gts.iter().map(|x| x.points.clone()).collect();
        let pp: Vec<Vec<usize>> = si.preds.iter().map(|x| x.points.clone()).collect();
        coverage.push(coverage_metrics(&pp, &gp));
        shapes.push(si);
    }
    let ap: Vec<[Option<f64>; 3]> = (1..=classes)
        .map(|c| AP_THRESHOLDS.map(|t| average_precision(&shapes, c, t)))
        .collect();
    let map = std::array::from_fn(|t| mean(ap.iter().filter_map(|a| a[t])));
    let n = coverage.len().max(1) as f64;
    let sum = |f: fn(&Coverage) -> f64| coverage.iter().map(f).fold(0.0, |a, v| a + v) / n;
    Ok(LevelMetrics {
        class_names,
        ap,
        map,
        s_ap50: shape_ap(&shapes, 0.5),
        miou: confusion.miou(),
        coverage: Coverage {
            m_cov: sum(|c| c.m_cov),
            m_wcov: sum(|c| c.m_wcov),
            m_prec: sum(|c| c.m_prec),
            m_rec: sum(|c| c.m_rec),
        },
    })
}

fn names_for(level: usize, classes: usize) -> Vec<String> {
    match CLASS_NAMES.get(level) {
        Some(names) if names.len() == classes => names.iter().map(|s| s.to_string()).collect(),
        _ => (1..=classes).map(|c| format!("class{c}")).collect(),
    }
}

/// Evaluates predictions against ground truth, shape by shape.
pub fn evaluate(gts: &[LabeledShape], preds: &[InstancePrediction]) -> Result<MetricsReport> {
    if gts.len() != preds.len() {
        return Err(Error::Shape(format!(
            "{} ground-truth shapes, {} predictions",
            gts.len(),
            preds.len()
        )));
    }
    let k = gts.first().map_or(0, LabeledShape::num_levels);
    for (i, (g, p)) in gts.iter().zip(preds).enumerate() {
        if g.num_levels() != k || p.levels.len() != k {
            return Err(Error::Shape(format!("shape {i}: level count mismatch")));
        }
        if p.levels.iter().any(|l| l.inst.len() != g.num_points()) {
            return Err(Error::Shape(format!(
                "shape {i}: prediction length differs from point count"
            )));
        }
    }
    let levels = (0..k)
        .map(|level| {
            let g: Vec<&LevelLabels> = gts.iter().map(|s| &s.levels[level]).collect();
            let p: Vec<&LevelPrediction> = preds.iter().map(|s| &s.levels[level]).collect();
            evaluate_level(&g, &p, names_for(level, g[0].classes))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport { levels })
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{:.2}", 100.0 * v))
}

fn raw(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |v| format!("{v}"))
}

impl MetricsReport {
    /// Mean over levels of the level mAP50.
    pub fn mean_ap50(&self) -> Option<f64> {
        mean(self.levels.iter().filter_map(|l| l.map[1]))
    }

    /// Per-category AP table followed by a per-level summary table, in
    /// percent.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("level\tcategory\tAP25\tAP50\tAP75\n");
        for (k, level) in self.levels.iter().enumerate() {
            for (name, ap) in level.class_names.iter().zip(&level.ap) {
                writeln!(
                    out,
                    "{}\t{name}\t{}\t{}\t{}",
                    k + 1,
                    pct(ap[0]),
                    pct(ap[1]),
                    pct(ap[2])
                )
                .unwrap();
            }
        }
        out.push_str("\nlevel\tmAP25\tmAP50\tmAP75\ts-AP50\tmIoU\tmCov\tmWCov\tmPrec\tmRec\n");
        for (k, l) in self.levels.iter().enumerate() {
            let c = l.coverage;
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                k + 1,
                pct(l.map[0]),
                pct(l.map[1]),
                pct(l.map[2]),
                pct(l.s_ap50),
                pct(l.miou),
                pct(Some(c.m_cov)),
                pct(Some(c.m_wcov)),
                pct(Some(c.m_prec)),
                pct(Some(c.m_rec)),
            )
            .unwrap();
        }
        out
    }

    /// `key=value` lines with unrounded fractions.
    pub fn to_summary(&self) -> String {
        let mut out = String::new();
        writeln!(out, "mean_ap50={}", raw(self.mean_ap50())).unwrap();
        for (k, l) in self.levels.iter().enumerate() {
            let p = format!("level{}", k + 1);
            for (t, name) in ["ap25", "ap50", "ap75"].iter().enumerate() {
                writeln!(out, "{p}.m{name}={}", raw(l.map[t])).unwrap();
            }
            writeln!(out, "{p}.s_ap50={}", raw(l.s_ap50)).unwrap();
            writeln!(out, "{p}.miou={}", raw(l.miou)).unwrap();
            writeln!(out, "{p}.mcov={}", l.coverage.m_cov).unwrap();
            writeln!(out, "{p}.mwcov={}", l.coverage.m_wcov).unwrap();
            writeln!(out, "{p}.mprec={}", l.coverage.m_prec).unwrap();
            writeln!(out, "{p}.mrec={}", l.coverage.m_rec).unwrap();
            for (name, ap) in l.class_names.iter().zip(&l.ap) {
                for (t, th) in ["ap25", "ap50", "ap75"].iter().enumerate() {
                    writeln!(out, "{p}.{name}.{th}={}", raw(ap[t])).unwrap();
                }
            }
        }
        out
    }
}
