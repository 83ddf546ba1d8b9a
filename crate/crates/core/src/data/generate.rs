//! Deterministic synthetic shapes with three annotated hierarchy levels.
//!
//! Every family is assembled from boxes, cylinders and spheres sampled
//! uniformly by volume, so ground-truth centers are exact point centroids.
//! All families share one label space per level (see [`CLASS_NAMES`]).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::shape::{normalize_to_unit_sphere, LabeledShape, LevelLabels, Point};
use crate::error::{Error, Result};

pub const NUM_LEVELS: usize = 3;

/// Semantic class names per level, coarse to fine; label `m` is `names[m - 1]`.
pub const CLASS_NAMES: [&[&str]; NUM_LEVELS] = [
    &[
        "blade-group",
        "handle-group",
        "tabletop",
        "leg-group",
        "base-assembly",
        "head-group",
        "chassis",
        "wheel-group",
    ],
    &[
        "blade",
        "handle-pair",
        "tabletop",
        "leg-pair",
        "base",
        "pole",
        "head",
        "chassis",
        "axle-assembly",
    ],
    &[
        "blade", "handle", "tabletop", "leg", "base", "pole", "shade", "bulb", "chassis", "axle",
        "wheel",
    ],
];

pub fn class_counts() -> Vec<usize> {
    CLASS_NAMES.iter().map(|n| n.len()).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeFamily {
    Scissor {
        blades: usize,
    },
    Table {
        legs: usize,
    },
    Lamp {
        heads: usize,
    },
    /// Each axle carries two wheels.
    Wheelset {
        axles: usize,
    },
}

impl ShapeFamily {
    pub fn name(&self) -> &'static str {
        match self {
            ShapeFamily::Scissor { .. } => "scissor",
            ShapeFamily::Table { .. } => "table",
            ShapeFamily::Lamp { .. } => "lamp",
            ShapeFamily::Wheelset { .. } => "wheelset",
        }
    }

    pub fn part_count(&self) -> usize {
        match *self {
            ShapeFamily::Scissor { blades } => blades,
            ShapeFamily::Table { legs } => legs,
            ShapeFamily::Lamp { heads } => heads,
            ShapeFamily::Wheelset { axles } => axles,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShapeSpec {
    pub family: ShapeFamily,
    /// Relative perturbation of primitive sizes and placements.
    pub jitter: f64,
    pub points: usize,
}

impl ShapeSpec {
    pub fn new(family: ShapeFamily, points: usize) -> Self {
        Self {
            family,
            jitter: 0.1,
            points,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.family.part_count() == 0 {
            return Err(Error::invalid(format!(
                "{} needs at least one part",
                self.family.name()
            )));
        }
        if self.points < 64 {
            return Err(Error::invalid(format!(
                "at least 64 points per shape required, got {}",
                self.points
            )));
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return Err(Error::invalid("jitter must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
enum Primitive {
    Cuboid {
        center: Point,
        axes: [Point; 3],
        half: Point,
    },
    Cylinder {
        center: Point,
        axis: Point,
        radius: f64,
        half_len: f64,
    },
    Ball {
        center: Point,
        radius: f64,
    },
}

impl Primitive {
    fn aligned_box(center: Point, half: Point) -> Self {
        Primitive::Cuboid {
            center,
            axes: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            half,
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Point {
        match *self {
            Primitive::Cuboid { center, axes, half } => {
                let mut p = center;
                for (axis, h) in axes.iter().zip(half) {
                    let t = rng.random_range(-h..=h);
                    for j in 0..3 {
                        p[j] += t * axis[j];
                    }
                }
                p
            }
            Primitive::Cylinder {
                center,
                axis,
                radius,
                half_len,
            } => {
                let (u, v) = perpendicular_basis(axis);
                let r = radius * rng.random::<f64>().sqrt();
                let phi = rng.random_range(0.0..std::f64::consts::TAU);
                let h = rng.random_range(-half_len..=half_len);
                let (s, c) = phi.sin_cos();
                let mut p = center;
                for j in 0..3 {
                    p[j] += h * axis[j] + r * (c * u[j] + s * v[j]);
                }
                p
            }
            Primitive::Ball { center, radius } => loop {
                let d: Point = [
                    rng.random_range(-1.0..=1.0),
                    rng.random_range(-1.0..=1.0),
                    rng.random_range(-1.0..=1.0),
                ];
                if d[0] * d[0] + d[1] * d[1] + d[2] * d[2] <= 1.0 {
                    break [
                        center[0] + radius * d[0],
                        center[1] + radius * d[1],
                        center[2] + radius * d[2],
                    ];
                }
            },
        }
    }
}

fn cross(a: Point, b: Point) -> Point {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn unit(a: Point) -> Point {
    let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

fn perpendicular_basis(axis: Point) -> (Point, Point) {
    let e = if axis[0].abs() < 0.9 {
        [1.0, 0.0, 0.0]
    } else {
        [0.0, 1.0, 0.0]
    };
    let u = unit(cross(axis, e));
    (u, cross(axis, u))
}

/// One primitive with its (semantic label, instance id) at every level.
#[derive(Clone, Debug)]
struct Part {
    prim: Primitive,
    weight: f64,
    labels: [(usize, usize); NUM_LEVELS],
}

struct Jitter<'a> {
    rng: &'a mut ChaCha8Rng,
    amount: f64,
}

impl Jitter<'_> {
    /// `v` scaled by a factor in `[1 - amount, 1 + amount]`.
    fn scale(&mut self, v: f64) -> f64 {
        if self.amount == 0.0 {
            return v;
        }
        v * (1.0 + self.rng.random_range(-self.amount..=self.amount))
    }

    /// `v` shifted by up to `amount * reach`.
    fn shift(&mut self, v: f64, reach: f64) -> f64 {
        if self.amount == 0.0 {
            return v;
        }
        v + reach * self.rng.random_range(-self.amount..=self.amount)
    }
}

fn scissor_parts(blades: usize, j: &mut Jitter) -> Vec<Part> {
    let n = blades;
    let mid = (n as f64 - 1.0) / 2.0;
    let mut parts = Vec::with_capacity(2 * n);
    for i in 0..n {
        let x = (i as f64 - mid) * 0.56;
        let hx = j.scale(0.13);
        let hz = j.scale(0.2);
        let cx = j.shift(x, 0.1);
        let cz = j.shift(-0.65, 0.1);
        parts.push(Part {
            prim: Primitive::aligned_box([cx, 0.0, cz], [hx, 0.02, hz]),
            weight: 0.6,
            labels: [(2, 0), (2, 0), (2, i)],
        });
    }
    for i in 0..n {
        let theta = j.shift((i as f64 - mid) * 16f64.to_radians(), 0.05);
        let u = [theta.sin(), 0.0, theta.cos()];
        let v = [0.0, 1.0, 0.0];
        let w = cross(u, v);
        let half_len = j.scale(0.425);
        // blade spans [-0.25, 0.6] along its axis through the pivot
        let c = 0.6 - half_len;
        parts.push(Part {
            prim: Primitive::Cuboid {
                center: [u[0] * c, 0.0, u[2] * c],
                axes: [u, v, w],
                half: [half_len, 0.012, j.scale(0.045)],
            },
            weight: 1.0,
            labels: [(1, 1), (1, 1 + i), (1, n + i)],
        });
    }
    parts
}

fn table_parts(legs: usize, j: &mut Jitter) -> Vec<Part> {
    let mut parts = vec![Part {
        prim: Primitive::aligned_box([0.0, 0.0, 0.45], [j.scale(0.6), j.scale(0.4), 0.04]),
        weight: 2.0,
        labels: [(3, 0), (3, 0), (3, 0)],
    }];
    let (rx, ry) = (j.scale(0.5), j.scale(0.3));
    for i in 0..legs {
        let phi = std::f64::consts::TAU * i as f64 / legs as f64 + std::f64::consts::FRAC_PI_4;
        let x = j.shift(rx * std::f64::consts::SQRT_2 * phi.cos(), 0.2);
        let y = j.shift(ry * std::f64::consts::SQRT_2 * phi.sin(), 0.2);
        parts.push(Part {
            prim: Primitive::Cylinder {
                center: [x, y, -0.02],
                axis: [0.0, 0.0, 1.0],
                radius: j.scale(0.04),
                half_len: 0.43,
            },
            weight: 0.5,
            labels: [(4, 1), (4, 1 + i / 2), (4, 1 + i)],
        });
    }
    parts
}

fn lamp_parts(heads: usize, j: &mut Jitter) -> Vec<Part> {
    let mut parts = vec![
        Part {
            prim: Primitive::Cylinder {
                center: [0.0, 0.0, -0.7],
                axis: [0.0, 0.0, 1.0],
                radius: j.scale(0.35),
                half_len: 0.05,
            },
            weight: 1.0,
            labels: [(5, 0), (5, 0), (5, 0)],
        },
        Part {
            prim: Primitive::Cylinder {
                center: [0.0, 0.0, -0.15],
                axis: [0.0, 0.0, 1.0],
                radius: 0.03,
                half_len: 0.55,
            },
            weight: 0.4,
            labels: [(5, 0), (6, 1), (6, 1)],
        },
    ];
    let reach = j.scale(0.42);
    for i in 0..heads {
        let phi = j.shift(std::f64::consts::TAU * i as f64 / heads as f64, 0.5);
        let (x, y) = (reach * phi.cos(), reach * phi.sin());
        let z = j.shift(0.38, 0.3);
        parts.push(Part {
            prim: Primitive::Cylinder {
                center: [x, y, z],
                axis: [0.0, 0.0, 1.0],
                radius: j.scale(0.13),
                half_len: 0.07,
            },
            weight: 0.6,
            labels: [(6, 1), (7, 2 + i), (7, 2 + 2 * i)],
        });
        parts.push(Part {
            prim: Primitive::Ball {
                center: [x, y, z - 0.14],
                radius: j.scale(0.06),
            },
            weight: 0.25,
            labels: [(6, 1), (7, 2 + i), (8, 3 + 2 * i)],
        });
    }
    parts
}

fn wheelset_parts(axles: usize, j: &mut Jitter) -> Vec<Part> {
    let mut parts = vec![Part {
        prim: Primitive::aligned_box([0.0, 0.0, 0.2], [j.scale(0.75), j.scale(0.3), 0.1]),
        weight: 1.5,
        labels: [(7, 0), (8, 0), (9, 0)],
    }];
    let wheel_radius = j.scale(0.18);
    for a in 0..axles {
        let x = if axles == 1 {
            0.0
        } else {
            -0.55 + 1.1 * a as f64 / (axles - 1) as f64
        };
        let x = j.shift(x, 0.05);
        parts.push(Part {
            prim: Primitive::Cylinder {
                center: [x, 0.0, -0.1],
                axis: [0.0, 1.0, 0.0],
                radius: 0.03,
                half_len: 0.42,
            },
            weight: 0.25,
            labels: [(8, 1), (9, 1 + a), (10, 1 + 3 * a)],
        });
        for (side, y) in [-0.45, 0.45].into_iter().enumerate() {
            parts.push(Part {
                prim: Primitive::Cylinder {
                    center: [x, y, -0.1],
                    axis: [0.0, 1.0, 0.0],
                    radius: wheel_radius,
                    half_len: 0.04,
                },
                weight: 0.45,
                labels: [(8, 1), (9, 1 + a), (11, 2 + 3 * a + side)],
            });
        }
    }
    parts
}

/// Rounds toward zero to 9 significant digits, so the value survives a
/// `{:.8e}` text round trip bit-exactly and never grows in magnitude.
pub(crate) fn quantize(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let q: f64 = format!("{x:.8e}").parse().expect("formatted float parses");
    if q.abs() <= x.abs() {
        return q;
    }
    let s = format!("{q:.8e}");
    let (mantissa, exp) = s.split_once('e').expect("exponent");
    let m: f64 = mantissa.parse().expect("mantissa");
    let e: i32 = exp.parse().expect("exponent");
    let step = 1e-8 * m.signum();
    format!("{:.8}e{e}", m - step)
        .parse()
        .expect("stepped float parses")
}

fn assemble(parts: &[Part], total: usize, rng: &mut ChaCha8Rng) -> Result<LabeledShape> {
    let weight_sum: f64 = parts.iter().map(|p| p.weight).sum();
    let mut counts: Vec<usize> = parts
        .iter()
        .map(|p| (total as f64 * p.weight / weight_sum).floor() as usize)
        .collect();
    let assigned: usize = counts.iter().sum();
    // the first part absorbs the rounding remainder; same-weight parts stay equal
    counts[0] += total - assigned;

    let mut raw: Vec<Point> = Vec::with_capacity(total);
    let mut tags: Vec<&Part> = Vec::with_capacity(total);
    for (part, &count) in parts.iter().zip(&counts) {
        for _ in 0..count {
            raw.push(part.prim.sample(rng));
            tags.push(part);
        }
    }
    let points: Vec<Point> = normalize_to_unit_sphere(&raw)
        .into_iter()
        .map(|p| p.map(quantize))
        .collect();
    let counts = class_counts();
    let levels = (0..NUM_LEVELS)
        .map(|k| {
            let sem = tags.iter().map(|p| p.labels[k].0).collect();
            let inst = tags.iter().map(|p| p.labels[k].1).collect();
            LevelLabels::new(&points, counts[k], sem, inst)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LabeledShape { points, levels })
}

/// Deterministic in `(spec, seed)`.
pub fn generate_shape(spec: &ShapeSpec, seed: u64) -> Result<LabeledShape> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let parts = {
        let mut j = Jitter {
            rng: &mut rng,
            amount: spec.jitter,
        };
        match spec.family {
            ShapeFamily::Scissor { blades } => scissor_parts(blades, &mut j),
            ShapeFamily::Table { legs } => table_parts(legs, &mut j),
            ShapeFamily::Lamp { heads } => lamp_parts(heads, &mut j),
            ShapeFamily::Wheelset { axles } => wheelset_parts(axles, &mut j),
        }
    };
    assemble(&parts, spec.points, &mut rng)
}

/// Unjittered two-blade scissor whose blade centers sit exactly `gap` apart
/// (up to coordinate quantization) in the normalized frame.
pub fn scissor_with_blade_gap(gap: f64, points: usize, seed: u64) -> Result<LabeledShape> {
    let spec = ShapeSpec {
        family: ShapeFamily::Scissor { blades: 2 },
        jitter: 0.0,
        points,
    };
    let shape = generate_shape(&spec, seed)?;
    let blades = &shape.levels[1];
    let members = blades.instances();
    let centers: Vec<(usize, Point)> = [1usize, 2]
        .iter()
        .map(|&id| {
            let idx = &members[&id];
            let mut c = [0.0; 3];
            for &i in idx {
                for j in 0..3 {
                    c[j] += shape.points[i][j];
                }
            }
            (id, c.map(|v| v / idx.len() as f64))
        })
        .collect();
    let (a, b) = (centers[0].1, centers[1].1);
    let mid = [
        (a[0] + b[0]) / 2.0,
        (a[1] + b[1]) / 2.0,
        (a[2] + b[2]) / 2.0,
    ];
    let dir = unit([b[0] - a[0], b[1] - a[1], b[2] - a[2]]);
    let mut points_out = shape.points.clone();
    for (k, &(id, c)) in centers.iter().enumerate() {
        let sign = if k == 0 { -1.0 } else { 1.0 };
        let target: Point = std::array::from_fn(|j| mid[j] + sign * dir[j] * gap / 2.0);
        let delta: Point = std::array::from_fn(|j| target[j] - c[j]);
        for &i in &members[&id] {
            points_out[i] = std::array::from_fn(|j| quantize(points_out[i][j] + delta[j]));
        }
    }
    let levels = shape
        .levels
        .iter()
        .map(|l| LevelLabels::new(&points_out, l.classes, l.sem.clone(), l.inst.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = LabeledShape {
        points: points_out,
        levels,
    };
    if out.max_norm() > 1.0 {
        return Err(Error::invalid(
            "blade gap pushes the scissor outside the unit ball",
        ));
    }
    Ok(out)
}

/// Mixes a base seed with an index (SplitMix64 finalizer).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Spec of the `index`-th corpus shape: families cycle, part counts are drawn.
pub fn corpus_spec(index: usize, points: usize, jitter: f64, seed: u64) -> ShapeSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2 * index as u64));
    let family = match index % 4 {
        0 => ShapeFamily::Scissor { blades: 2 },
        1 => ShapeFamily::Table {
            legs: rng.random_range(3..=6),
        },
        2 => ShapeFamily::Lamp {
            heads: rng.random_range(1..=4),
        },
        _ => ShapeFamily::Wheelset {
            axles: rng.random_range(1..=3),
        },
    };
    ShapeSpec {
        family,
        jitter,
        points,
    }
}

/// `count` shapes, deterministic in `seed`.
pub fn generate_corpus(
    count: usize,
    points: usize,
    jitter: f64,
    seed: u64,
) -> Result<Vec<LabeledShape>> {
    (0..count)
        .map(|i| {
            let spec = corpus_spec(i, points, jitter, seed);
            generate_shape(&spec, derive_seed(seed, 2 * i as u64 + 1))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn center(shape: &LabeledShape, idx: &[usize]) -> Point {
        let mut c = [0.0; 3];
        for &i in idx {
            for j in 0..3 {
                c[j] += shape.points[i][j];
            }
        }
        c.map(|v| v / idx.len() as f64)
    }

    #[test]
    fn scissor_has_two_blades_and_one_handle_pair() {
        let spec = ShapeSpec::new(ShapeFamily::Scissor { blades: 2 }, 1024);
        let s = generate_shape(&spec, 0).unwrap();
        s.validate().unwrap();
        let mid = &s.levels[1];
        let inst = mid.instances();
        let blades: Vec<_> = inst
            .iter()
            .filter(|(_, idx)| mid.sem[idx[0]] == 1)
            .collect();
        let handles: Vec<_> = inst
            .iter()
            .filter(|(_, idx)| mid.sem[idx[0]] == 2)
            .collect();
        assert_eq!(blades.len(), 2);
        assert_eq!(handles.len(), 1);
        assert_eq!(blades[0].1.len(), blades[1].1.len());
        // mirror images about the shape's symmetry plane
        let (a, b) = (center(&s, blades[0].1), center(&s, blades[1].1));
        assert!(a[0] < 0.0 && b[0] > 0.0);
        assert!((a[0] + b[0]).abs() < 0.05, "{a:?} {b:?}");
        // the close-centers regime clustering has to cope with
        let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
        assert!(d < 0.1, "blade centers {d} apart");
    }

    #[test]
    fn table_levels() {
        let spec = ShapeSpec::new(ShapeFamily::Table { legs: 4 }, 1024);
        let s = generate_shape(&spec, 1).unwrap();
        s.validate().unwrap();
        let coarse: std::collections::BTreeSet<_> = s.levels[0].sem.iter().collect();
        assert_eq!(coarse.len(), 2);
        let fine = &s.levels[2];
        let legs = fine
            .instances()
            .values()
            .filter(|idx| fine.sem[idx[0]] == 4)
            .count();
        assert_eq!(legs, 4);
    }

    #[test]
    fn deterministic_per_seed() {
        for family in [
            ShapeFamily::Scissor { blades: 3 },
            ShapeFamily::Table { legs: 5 },
            ShapeFamily::Lamp { heads: 2 },
            ShapeFamily::Wheelset { axles: 2 },
        ] {
            let spec = ShapeSpec::new(family, 256);
            assert_eq!(
                generate_shape(&spec, 7).unwrap(),
                generate_shape(&spec, 7).unwrap()
            );
            assert_ne!(
                generate_shape(&spec, 7).unwrap(),
                generate_shape(&spec, 8).unwrap()
            );
        }
    }

    #[test]
    fn degenerate_specs_rejected() {
        assert!(generate_shape(&ShapeSpec::new(ShapeFamily::Table { legs: 0 }, 256), 0).is_err());
        assert!(generate_shape(&ShapeSpec::new(ShapeFamily::Lamp { heads: 1 }, 10), 0).is_err());
    }

    #[test]
    fn blade_gap_is_exact() {
        let s = scissor_with_blade_gap(0.05, 1024, 3).unwrap();
        let mid = &s.levels[1];
        let inst = mid.instances();
        let a = center(&s, &inst[&1]);
        let b = center(&s, &inst[&2]);
        let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
        assert!((d - 0.05).abs() < 1e-8, "{d}");
        assert!(s.max_norm() <= 1.0);
    }

    #[test]
    fn quantize_is_idempotent_and_shrinks() {
        for x in [
            1.0,
            -0.123456789123,
            0.99999999999,
            3.3e-7,
            -7.77777777777e3,
        ] {
            let q = quantize(x);
            assert!(q.abs() <= x.abs());
            assert!((q - x).abs() <= x.abs() * 2e-8);
            let back: f64 = format!("{q:.8e}").parse().unwrap();
            assert_eq!(back, q);
        }
    }
}
