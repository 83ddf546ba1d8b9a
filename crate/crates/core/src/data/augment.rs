use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::shape::{LabeledShape, Point};
use crate::error::{Error, Result};

/// Training-time augmentation: one uniform scale, one small rotation, one
/// translation per shape.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub scale_min: f64,
    pub scale_max: f64,
    /// Per-axis bound on roll, pitch and yaw, in degrees.
    pub max_rotation_deg: f64,
    /// Per-axis bound on the translation.
    pub max_translation: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            scale_min: 0.75,
            scale_max: 1.25,
            max_rotation_deg: 10.0,
            max_translation: 0.125,
        }
    }
}

impl AugmentParams {
    pub fn identity() -> Self {
        Self {
            scale_min: 1.0,
            scale_max: 1.0,
            max_rotation_deg: 0.0,
            max_translation: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale_min > 0.0 && self.scale_min <= self.scale_max) {
            return Err(Error::invalid(
                "augmentation scale range must be positive and ordered",
            ));
        }
        if !(self.max_rotation_deg >= 0.0 && self.max_translation >= 0.0) {
            return Err(Error::invalid("augmentation bounds must be non-negative"));
        }
        Ok(())
    }
}

/// A concrete similarity transform `p ↦ s R p + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transform {
    pub scale: f64,
    pub rotation: [[f64; 3]; 3],
    pub translation: Point,
}

impl Transform {
    pub fn sample(params: &AugmentParams, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = rng.random_range(params.scale_min..=params.scale_max);
        let b = params.max_rotation_deg.to_radians();
        let angles: [f64; 3] = std::array::from_fn(|_| rng.random_range(-b..=b));
        let t = params.max_translation;
        let translation: Point = std::array::from_fn(|_| rng.random_range(-t..=t));
        Self {
            scale,
            rotation: rotation_xyz(angles),
            translation,
        }
    }

    fn linear(&self, v: Point) -> Point {
        let r = &self.rotation;
        std::array::from_fn(|i| self.scale * (r[i][0] * v[0] + r[i][1] * v[1] + r[i][2] * v[2]))
    }

    pub fn apply_point(&self, p: Point) -> Point {
        let q = self.linear(p);
        std::array::from_fn(|i| q[i] + self.translation[i])
    }

    /// Offsets are differences of points, so translation drops out.
    pub fn apply_offset(&self, o: Point) -> Point {
        self.linear(o)
    }

    pub fn apply(&self, shape: &LabeledShape) -> LabeledShape {
        let mut out = shape.clone();
        for p in &mut out.points {
            *p = self.apply_point(*p);
        }
        for level in &mut out.levels {
            for o in level
                .inst_offset
                .iter_mut()
                .chain(level.region_offset.iter_mut())
            {
                *o = self.apply_offset(*o);
            }
        }
        out
    }
}

/// `Rz(yaw) · Ry(pitch) · Rx(roll)` for `angles = [roll, pitch, yaw]`.
fn rotation_xyz(angles: [f64; 3]) -> [[f64; 3]; 3] {
    let (sx, cx) = angles[0].sin_cos();
    let (sy, cy) = angles[1].sin_cos();
    let (sz, cz) = angles[2].sin_cos();
    [
        [cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx],
        [sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx],
        [-sy, cy * sx, cy * cx],
    ]
}

/// Applies one random transform, deterministic per seed, to points and both
/// offset fields. Labels are untouched.
pub fn augment(shape: &LabeledShape, params: &AugmentParams, seed: u64) -> Result<LabeledShape> {
    params.validate()?;
    Ok(Transform::sample(params, seed).apply(shape))
}
