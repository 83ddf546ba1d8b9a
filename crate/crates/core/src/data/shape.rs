use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::Matrix;

pub type Point = [f64; 3];

/// Annotations of one hierarchy level.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelLabels {
    /// Size of this level's label space.
    pub classes: usize,
    /// 1-based semantic label per point.
    pub sem: Vec<usize>,
    /// Instance id per point, unique across classes within the level.
    pub inst: Vec<usize>,
    /// Offset from each point to its instance center.
    pub inst_offset: Vec<Point>,
    /// Offset from each point to its semantic region center.
    pub region_offset: Vec<Point>,
}

impl LevelLabels {
    /// Builds a level and precomputes both ground-truth offset fields.
    pub fn new(
        points: &[Point],
        classes: usize,
        sem: Vec<usize>,
        inst: Vec<usize>,
    ) -> Result<Self> {
        if sem.len() != points.len() || inst.len() != points.len() {
            return Err(Error::Shape(format!(
                "{} points but {} labels and {} instance ids",
                points.len(),
                sem.len(),
                inst.len()
            )));
        }
        let (inst_offset, region_offset) = compute_gt_centers(points, &sem, &inst);
        Ok(Self {
            classes,
            sem,
            inst,
            inst_offset,
            region_offset,
        })
    }

    /// Point indices of every instance, keyed by instance id.
    pub fn instances(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut map: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &id) in self.inst.iter().enumerate() {
            map.entry(id).or_default().push(i);
        }
        map
    }
}

/// Point cloud with K levels of (semantic label, instance id) annotations.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledShape {
    pub points: Vec<Point>,
    /// Ordered coarse to fine.
    pub levels: Vec<LevelLabels>,
}

impl LabeledShape {
    pub fn num_points(&self) -> usize {
        self.points.len()
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.classes).collect()
    }

    /// The shape restricted to `idx`, with centers recomputed from the
    /// kept points.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        if let Some(&i) = idx.iter().find(|&&i| i >= self.points.len()) {
            return Err(Error::invalid(format!("point index {i} out of range")));
        }
        let points: Vec<Point> = idx.iter().map(|&i| self.points[i]).collect();
        let levels = self
            .levels
            .iter()
            .map(|l| {
                let sem = idx.iter().map(|&i| l.sem[i]).collect();
                let inst = idx.iter().map(|&i| l.inst[i]).collect();
                LevelLabels::new(&points, l.classes, sem, inst)
            })
            .collect::<Result<_>>()?;
        Ok(Self { points, levels })
    }

    pub fn positions(&self) -> Matrix {
        Matrix::from_fn(self.points.len(), 3, |i, j| self.points[i][j])
    }

    /// Checks labels, per-instance semantic consistency, hierarchy refinement
    /// and finiteness. The unit-ball bound is checked separately since
    /// augmentation relaxes it.
    pub fn validate(&self) -> Result<()> {
        let n = self.points.len();
        if self.points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite point coordinate"));
        }
        for (k, level) in self.levels.iter().enumerate() {
            if level.sem.len() != n
                || level.inst.len() != n
                || level.inst_offset.len() != n
                || level.region_offset.len() != n
            {
                return Err(Error::Shape(format!(
                    "level {} has inconsistent lengths",
                    k + 1
                )));
            }
            for &s in &level.sem {
                if s == 0 || s > level.classes {
                    return Err(Error::LabelRange {
                        level: k + 1,
                        label: s,
                        classes: level.classes,
                    });
                }
            }
            let mut label_of: BTreeMap<usize, usize> = BTreeMap::new();
            for (&id, &s) in level.inst.iter().zip(&level.sem) {
                if *label_of.entry(id).or_insert(s) != s {
                    return Err(Error::invalid(format!(
                        "level {}: instance {id} mixes semantic labels",
                        k + 1
                    )));
                }
            }
            if level
                .inst_offset
                .iter()
                .chain(&level.region_offset)
                .flatten()
                .any(|v| !v.is_finite())
            {
                return Err(Error::invalid(format!(
                    "level {}: non-finite offset",
                    k + 1
                )));
            }
        }
        for k in 1..self.levels.len() {
            let (coarse, fine) = (&self.levels[k - 1], &self.levels[k]);
            let mut parent: BTreeMap<usize, usize> = BTreeMap::new();
            for (&f, &c) in fine.inst.iter().zip(&coarse.inst) {
                if *parent.entry(f).or_insert(c) != c {
                    return Err(Error::invalid(format!(
                        "level {} instance {f} straddles two level-{k} instances",
                        k + 1
                    )));
                }
            }
        }
        Ok(())
    }

    /// Largest point norm.
    pub fn max_norm(&self) -> f64 {
        self.points.iter().map(|p| norm(*p)).fold(0.0, f64::max)
    }
}

pub(crate) fn norm(p: Point) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

/// Moves the centroid to the origin and scales the farthest point onto the
/// unit sphere. A zero-extent cloud maps to all zeros.
pub fn normalize_to_unit_sphere(points: &[Point]) -> Vec<Point> {
    if points.is_empty() {
        return Vec::new();
    }
    let n = points.len() as f64;
    let mut c = [0.0; 3];
    for p in points {
        for j in 0..3 {
            c[j] += p[j];
        }
    }
    for v in &mut c {
        *v /= n;
    }
    let centered: Vec<Point> = points
        .iter()
        .map(|p| [p[0] - c[0], p[1] - c[1], p[2] - c[2]])
        .collect();
    let r = centered.iter().map(|&p| norm(p)).fold(0.0, f64::max);
    if r == 0.0 {
        return vec![[0.0; 3]; points.len()];
    }
    centered
        .into_iter()
        .map(|p| [p[0] / r, p[1] / r, p[2] / r])
        .collect()
}

fn mean_of(points: &[Point], idx: &[usize]) -> Point {
    let mut c = [0.0; 3];
    for &i in idx {
        for j in 0..3 {
            c[j] += points[i][j];
        }
    }
    let n = idx.len() as f64;
    [c[0] / n, c[1] / n, c[2] / n]
}

/// Ground-truth offsets for one level: to the instance centroid, and to the
/// semantic region center (unweighted mean of the centers of the class's
/// instances, taken in ascending instance id order).
pub fn compute_gt_centers(
    points: &[Point],
    sem: &[usize],
    inst: &[usize],
) -> (Vec<Point>, Vec<Point>) {
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &id) in inst.iter().enumerate() {
        members.entry(id).or_default().push(i);
    }
    let centers: BTreeMap<usize, Point> = members
        .iter()
        .map(|(&id, idx)| (id, mean_of(points, idx)))
        .collect();
    let pairs: std::collections::BTreeSet<(usize, usize)> =
        sem.iter().copied().zip(inst.iter().copied()).collect();
    let mut by_class: BTreeMap<usize, Vec<Point>> = BTreeMap::new();
    for (m, id) in pairs {
        by_class.entry(m).or_default().push(centers[&id]);
    }
    let region: BTreeMap<usize, Point> = by_class
        .into_iter()
        .map(|(m, cs)| {
            let mut c = [0.0; 3];
            for p in &cs {
                for j in 0..3 {
                    c[j] += p[j];
                }
            }
            let n = cs.len() as f64;
            (m, [c[0] / n, c[1] / n, c[2] / n])
        })
        .collect();
    let diff = |a: Point, b: Point| [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    let inst_offset = points
        .iter()
        .zip(inst)
        .map(|(&p, id)| diff(centers[id], p))
        .collect();
    let region_offset = points
        .iter()
        .zip(sem)
        .map(|(&p, m)| diff(region[m], p))
        .collect();
    (inst_offset, region_offset)
}

/// Fills unannotated levels so the result has exactly `k` levels.
///
/// A missing level copies the nearest coarser annotated level; when no
/// coarser level exists it copies the nearest finer one.
pub fn duplicate_missing_levels(
    points: Vec<Point>,
    levels: Vec<Option<LevelLabels>>,
    k: usize,
) -> Result<LabeledShape> {
    if levels.len() > k {
        return Err(Error::invalid(format!(
            "shape has {} levels, cannot reduce to {k}",
            levels.len()
        )));
    }
    if levels.iter().all(Option::is_none) {
        return Err(Error::invalid("shape has no annotated level"));
    }
    let mut slots = levels;
    slots.resize(k, None);
    let mut out: Vec<LevelLabels> = Vec::with_capacity(k);
    for i in 0..k {
        let level = match &slots[i] {
            Some(l) => l.clone(),
            None => (0..i)
                .rev()
                .find_map(|j| slots[j].clone())
                .or_else(|| (i + 1..k).find_map(|j| slots[j].clone()))
                .expect("at least one annotated level"),
        };
        out.push(level);
    }
    Ok(LabeledShape {
        points,
        levels: out,
    })
}

impl LabeledShape {
    /// Pads to `k` levels by duplicating the finest existing level.
    pub fn with_levels(self, k: usize) -> Result<Self> {
        let levels = self.levels.into_iter().map(Some).collect();
        duplicate_missing_levels(self.points, levels, k)
    }
}
