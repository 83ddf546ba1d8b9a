//! Semantic-probability-guided instance feature fusion.
//!
//! Given per-point class probabilities `P` (N×c) and instance features `F`
//! (N×l), each class gets a part feature
//!
//! ```text
//! Z = (P / (1ᵀP))ᵀ F                       (c×l, probability-weighted class means)
//! ```
//!
//! and each point gets back the mixture of part features under its own
//! probabilities, `F̂ = P Z` (N×l). The fused feature handed to the offset
//! heads is `[F̂ | F | positions]`. Cross-level fusion aggregates the level-k
//! features under every level's probabilities and concatenates all of them.
//!
//! Everything here is expressed as [`Graph`] nodes so it is differentiable;
//! the eager helpers build a throwaway graph.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::{Graph, Matrix, NodeId};
use crate::scalar::Scalar;

/// How instance features are fused before offset regression.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum FusionMode {
    /// Offset heads read raw instance features.
    None,
    /// Per-level fusion inside independent per-level networks (no shared trunk).
    Single,
    /// Per-level fusion on the shared multi-level network.
    Multi,
    /// Every level's features aggregated under every level's probabilities.
    #[default]
    Cross,
}

impl FusionMode {
    pub const ALL: [FusionMode; 4] = [
        FusionMode::None,
        FusionMode::Single,
        FusionMode::Multi,
        FusionMode::Cross,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::None => "none",
            FusionMode::Single => "single",
            FusionMode::Multi => "multi",
            FusionMode::Cross => "cross",
        }
    }

    /// Width of the fused feature for feature dim `l` and `levels` levels.
    pub fn fused_width(self, l: usize, levels: usize) -> usize {
        match self {
            FusionMode::None => l,
            FusionMode::Single | FusionMode::Multi => 2 * l + 3,
            FusionMode::Cross => levels * l + l + 3,
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(FusionMode::None),
            "single" => Ok(FusionMode::Single),
            "multi" => Ok(FusionMode::Multi),
            "cross" => Ok(FusionMode::Cross),
            other => Err(Error::invalid(format!(
                "unknown fusion mode {other:?} (expected none, single, multi or cross)"
            ))),
        }
    }
}

/// Row-stochastic N×c matrix of class probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbMatrix<T>(Matrix<T>);

impl<T: Scalar> ProbMatrix<T> {
    /// Accepts entries in [0, 1] with rows summing to one within 1e-9, or
    /// within `64 ε` when the scalar type is coarser than that.
    pub fn new(p: Matrix<T>) -> Result<Self> {
        let tol = T::lit(1e-9).max(T::epsilon() * T::lit(64.0));
        for (i, row) in p.row_iter().enumerate() {
            if row.iter().any(|&v| !(v >= T::zero() && v <= T::one())) {
                return Err(Error::invalid(format!(
                    "row {i} has an entry outside [0, 1]"
                )));
            }
            let s: T = row.iter().copied().sum();
            if (s - T::one()).abs() > tol {
                return Err(Error::invalid(format!("row {i} sums to {s}, not 1")));
            }
        }
        Ok(Self(p))
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix<T> {
        self.0
    }

    pub fn rows(&self) -> usize {
        self.0.rows()
    }

    pub fn classes(&self) -> usize {
        self.0.cols()
    }

    /// Zero-based argmax per row, ties to the lowest class.
    pub fn argmax(&self) -> Vec<usize> {
        self.0.row_iter().map(argmax_row).collect()
    }
}

pub(crate) fn argmax_row<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Replaces each row with the indicator of its argmax (lowest index on ties).
pub fn one_hot_projection<T: Scalar>(p: &Matrix<T>) -> Matrix<T> {
    let mut out = Matrix::zeros(p.rows(), p.cols());
    if p.cols() == 0 {
        return out;
    }
    for i in 0..p.rows() {
        let j = argmax_row(p.row(i));
        out[(i, j)] = T::one();
    }
    out
}

fn expect_rows<T: Scalar>(g: &Graph<T>, a: NodeId, b: NodeId, op: &'static str) -> Result<()> {
    if g.shape(a).0 != g.shape(b).0 {
        return Err(Error::NodeShape {
            op,
            lhs: a,
            rhs: b,
            lhs_shape: g.shape(a),
            rhs_shape: g.shape(b),
        });
    }
    Ok(())
}

/// `Z = (P / (1ᵀP))ᵀ F` as graph nodes; empty classes get a zero row.
pub fn part_features_node<T: Scalar>(g: &mut Graph<T>, p: NodeId, f: NodeId) -> Result<NodeId> {
    expect_rows(g, p, f, "aggregate_part_features")?;
    let mass = g.col_sum(p)?;
    let weights = g.div_row(p, mass)?;
    g.matmul_tn(weights, f)
}

/// `F̂ = P Z` as a graph node.
pub fn point_features_node<T: Scalar>(g: &mut Graph<T>, p: NodeId, z: NodeId) -> Result<NodeId> {
    g.matmul(p, z)
}

/// `[F̂ | F | positions]` for one level. With `stop_grad`, `P` receives no gradient.
pub fn fuse_single_level_node<T: Scalar>(
    g: &mut Graph<T>,
    p: NodeId,
    f: NodeId,
    positions: NodeId,
    stop_grad: bool,
) -> Result<NodeId> {
    expect_rows(g, p, positions, "fuse_single_level")?;
    let p = if stop_grad { g.stop_gradient(p)? } else { p };
    let z = part_features_node(g, p, f)?;
    let agg = point_features_node(g, p, z)?;
    g.concat_cols(&[agg, f, positions])
}

/// Cross-level fusion: output k is `[F̂⁽ᵏ'¹⁾ | … | F̂⁽ᵏ'ᴷ⁾ | F⁽ᵏ⁾ | positions]`.
pub fn fuse_cross_level_node<T: Scalar>(
    g: &mut Graph<T>,
    probs: &[NodeId],
    feats: &[NodeId],
    positions: NodeId,
    stop_grad: bool,
) -> Result<Vec<NodeId>> {
    if probs.len() != feats.len() || probs.is_empty() {
        return Err(Error::invalid(format!(
            "cross-level fusion needs one probability and one feature matrix per level (got {} and {})",
            probs.len(),
            feats.len()
        )));
    }
    for (&p, &f) in probs.iter().zip(feats) {
        expect_rows(g, p, positions, "fuse_cross_level")?;
        expect_rows(g, f, positions, "fuse_cross_level")?;
    }
    let probs: Vec<NodeId> = if stop_grad {
        probs
            .iter()
            .map(|&p| g.stop_gradient(p))
            .collect::<Result<_>>()?
    } else {
        probs.to_vec()
    };
    let mut out = Vec::with_capacity(feats.len());
    for &f in feats {
        let mut parts = Vec::with_capacity(probs.len() + 2);
        for &p in &probs {
            let z = part_features_node(g, p, f)?;
            parts.push(point_features_node(g, p, z)?);
        }
        parts.push(f);
        parts.push(positions);
        out.push(g.concat_cols(&parts)?);
    }
    Ok(out)
}

/// Eager part features `Z` (c×l).
pub fn aggregate_part_features<T: Scalar>(p: &ProbMatrix<T>, f: &Matrix<T>) -> Result<Matrix<T>> {
    let mut g = Graph::new();
    let pn = g.leaf(p.matrix().clone())?;
    let fnode = g.leaf(f.clone())?;
    let z = part_features_node(&mut g, pn, fnode)?;
    Ok(g.value(z).clone())
}

/// Eager aggregated point features `F̂ = P Z` (N×l).
pub fn fuse_point_features<T: Scalar>(p: &ProbMatrix<T>, z: &Matrix<T>) -> Result<Matrix<T>> {
    if p.classes() != z.rows() {
        return Err(Error::Shape(format!(
            "P has {} classes but Z has {} rows",
            p.classes(),
            z.rows()
        )));
    }
    p.matrix().matmul(z)
}

/// Eager single-level fused feature.
pub fn fuse_single_level<T: Scalar>(
    p: &ProbMatrix<T>,
    f: &Matrix<T>,
    positions: &Matrix<T>,
) -> Result<Matrix<T>> {
    let mut g = Graph::new();
    let pn = g.leaf(p.matrix().clone())?;
    let fnode = g.leaf(f.clone())?;
    let pos = g.leaf(positions.clone())?;
    let out = fuse_single_level_node(&mut g, pn, fnode, pos, false)?;
    Ok(g.value(out).clone())
}

/// Eager cross-level fused features, one per level.
pub fn fuse_cross_level<T: Scalar>(
    probs: &[ProbMatrix<T>],
    feats: &[Matrix<T>],
    positions: &Matrix<T>,
) -> Result<Vec<Matrix<T>>> {
    let mut g = Graph::new();
    let pn = probs
        .iter()
        .map(|p| g.leaf(p.matrix().clone()))
        .collect::<Result<Vec<_>>>()?;
    let fnodes = feats
        .iter()
        .map(|f| g.leaf(f.clone()))
        .collect::<Result<Vec<_>>>()?;
    let pos = g.leaf(positions.clone())?;
    let outs = fuse_cross_level_node(&mut g, &pn, &fnodes, pos, false)?;
    Ok(outs.into_iter().map(|o| g.value(o).clone()).collect())
}
