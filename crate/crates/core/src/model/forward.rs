use super::config::ModelConfig;
use super::config::Precision;
use super::params::{encoder_name, ModelParams};
use crate::data::{LabeledShape, Point};
use crate::error::{Error, Result};
use crate::fusion::{one_hot_projection, part_features_node, FusionMode, ProbMatrix};
use crate::numerics::{Graph, Matrix, NodeId};
use crate::scalar::Scalar;

/// Graph nodes of one level's outputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LevelNodes {
    pub f_sem: NodeId,
    pub f_ins: NodeId,
    pub p_sem: NodeId,
    pub o_inst: NodeId,
    pub o_region: NodeId,
}

/// A built forward graph. `params[i]` is the leaf of the i-th tensor of
/// the [`ModelParams`] it was built from.
#[derive(Clone, Debug)]
pub struct ForwardGraph<T = f64> {
    pub graph: Graph<T>,
    pub params: Vec<NodeId>,
    pub positions: NodeId,
    pub levels: Vec<LevelNodes>,
}

/// Per-level network outputs as plain values.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelOutput {
    pub f_sem: Matrix<f64>,
    pub f_ins: Matrix<f64>,
    pub p_sem: ProbMatrix<f64>,
    pub o_inst: Matrix<f64>,
    pub o_region: Matrix<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutputs {
    pub levels: Vec<LevelOutput>,
}

pub fn positions_matrix<T: Scalar>(points: &[Point]) -> Matrix<T> {
    Matrix::from_fn(points.len(), 3, |i, j| T::lit(points[i][j]))
}

struct Builder<'a, T> {
    g: Graph<T>,
    params: &'a ModelParams,
    leaves: Vec<NodeId>,
}

impl<T: Scalar> Builder<'_, T> {
    fn p(&self, name: &str) -> Result<NodeId> {
        self.params
            .position(name)
            .map(|i| self.leaves[i])
            .ok_or_else(|| Error::invalid(format!("missing parameter {name}")))
    }

    fn linear(&mut self, x: NodeId, name: &str, w: &str, b: &str) -> Result<NodeId> {
        let w = self.p(&format!("{name}.{w}"))?;
        let b = self.p(&format!("{name}.{b}"))?;
        self.g.affine(x, w, b)
    }

    fn relu_linear(&mut self, x: NodeId, name: &str, w: &str, b: &str) -> Result<NodeId> {
        let y = self.linear(x, name, w, b)?;
        self.g.relu(y)
    }

    /// Per-point MLP and its column-max code. Conceptually the code is
    /// appended to every row; [`decoder`](Self::decoder) consumes the pair.
    fn encoder(&mut self, x: NodeId, name: &str) -> Result<(NodeId, NodeId)> {
        let h1 = self.relu_linear(x, name, "w1", "b1")?;
        let h2 = self.relu_linear(h1, name, "w2", "b2")?;
        let code = self.g.col_max(h2)?;
        Ok((h2, code))
    }

    /// `relu([h | 1·code] W + b)`, with the code rows of `W` applied once.
    fn decoder(&mut self, (h, code): (NodeId, NodeId), name: &str) -> Result<NodeId> {
        let w = self.p(&format!("{name}.w"))?;
        let b = self.p(&format!("{name}.b"))?;
        let width = self.g.shape(h).1;
        let w_local = self.g.rows(w, 0, width)?;
        let w_code = self.g.rows(w, width, width)?;
        let local = self.g.matmul(h, w_local)?;
        let shared = self.g.matmul(code, w_code)?;
        let bias = self.g.add(shared, b)?;
        let y = self.g.add_row(local, bias)?;
        self.g.relu(y)
    }

    /// First offset-head layer over `[P₁Z₁ | … | PᵣZᵣ | F | positions]`,
    /// evaluated as `Σ Pᵢ (Zᵢ Wᵢ) + F W_F + positions W_pos + b` so the
    /// aggregated blocks are never materialized.
    fn fused_hidden(
        &mut self,
        name: &str,
        aggregated: &[(NodeId, NodeId)],
        f: NodeId,
        positions: NodeId,
    ) -> Result<NodeId> {
        let w = self.p(&format!("{name}.w1"))?;
        let b = self.p(&format!("{name}.b1"))?;
        if aggregated.is_empty() {
            let y = self.g.affine(f, w, b)?;
            return self.g.relu(y);
        }
        let l = self.g.shape(f).1;
        let mut acc = None;
        for (i, &(p, z)) in aggregated.iter().enumerate() {
            let wi = self.g.rows(w, i * l, l)?;
            let zw = self.g.matmul(z, wi)?;
            let t = self.g.matmul(p, zw)?;
            acc = Some(match acc {
                None => t,
                Some(a) => self.g.add(a, t)?,
            });
        }
        let k = aggregated.len();
        let w_f = self.g.rows(w, k * l, l)?;
        let w_pos = self.g.rows(w, (k + 1) * l, 3)?;
        let tf = self.g.matmul(f, w_f)?;
        let tp = self.g.matmul(positions, w_pos)?;
        let mut y = self.g.add(acc.expect("at least one block"), tf)?;
        y = self.g.add(y, tp)?;
        y = self.g.add_row(y, b)?;
        self.g.relu(y)
    }
}

/// Builds the forward graph for one point set in scalar type `T`.
pub fn build_forward<T: Scalar>(
    params: &ModelParams,
    config: &ModelConfig,
    points: &[Point],
) -> Result<ForwardGraph<T>> {
    if points.is_empty() {
        return Err(Error::invalid("forward needs at least one point"));
    }
    let mut b = Builder {
        g: Graph::new(),
        params,
        leaves: Vec::with_capacity(params.len()),
    };
    for t in params.tensors() {
        let id = b.g.leaf(t.cast())?;
        b.leaves.push(id);
    }
    let positions = b.g.constant(positions_matrix(points))?;
    let k = config.levels();

    let shared = if config.fusion == FusionMode::Single {
        None
    } else {
        Some(b.encoder(positions, &encoder_name(config, 0))?)
    };
    let mut f_sem = Vec::with_capacity(k);
    let mut f_ins = Vec::with_capacity(k);
    let mut p_sem = Vec::with_capacity(k);
    for level in 0..k {
        let e = match shared {
            Some(e) => e,
            None => b.encoder(positions, &encoder_name(config, level))?,
        };
        let p = format!("l{}", level + 1);
        let fs = b.decoder(e, &format!("{p}.dsem"))?;
        let mut fi = b.decoder(e, &format!("{p}.dins"))?;
        if config.two_dir {
            let t = b.linear(fs, &format!("{p}.twodir"), "w", "b")?;
            fi = b.g.add(fi, t)?;
        }
        let s1 = b.relu_linear(fs, &format!("{p}.sem"), "w1", "b1")?;
        let logits = b.linear(s1, &format!("{p}.sem"), "w2", "b2")?;
        f_sem.push(fs);
        f_ins.push(fi);
        p_sem.push(b.g.row_softmax(logits)?);
    }

    let mut fusion_probs = Vec::with_capacity(k);
    if config.fusion != FusionMode::None {
        for &p in &p_sem {
            let q = if config.one_hot {
                let hot = one_hot_projection(b.g.value(p));
                b.g.constant(hot)?
            } else if config.stop_grad {
                b.g.stop_gradient(p)?
            } else {
                p
            };
            fusion_probs.push(q);
        }
    }

    let mut levels = Vec::with_capacity(k);
    for level in 0..k {
        let sources: Vec<usize> = match config.fusion {
            FusionMode::None => Vec::new(),
            FusionMode::Single | FusionMode::Multi => vec![level],
            FusionMode::Cross => (0..k).collect(),
        };
        let mut aggregated = Vec::with_capacity(sources.len());
        for r in sources {
            let z = part_features_node(&mut b.g, fusion_probs[r], f_ins[level])?;
            aggregated.push((fusion_probs[r], z));
        }
        let p = format!("l{}", level + 1);
        let h = b.fused_hidden(&format!("{p}.off"), &aggregated, f_ins[level], positions)?;
        let o_inst = b.linear(h, &format!("{p}.oi"), "w", "b")?;
        let o_region = b.linear(h, &format!("{p}.os"), "w", "b")?;
        levels.push(LevelNodes {
            f_sem: f_sem[level],
            f_ins: f_ins[level],
            p_sem: p_sem[level],
            o_inst,
            o_region,
        });
    }
    Ok(ForwardGraph {
        graph: b.g,
        params: b.leaves,
        positions,
        levels,
    })
}

impl<T: Scalar> ForwardGraph<T> {
    /// Output values widened to `f64`; probability rows are renormalized
    /// after widening.
    pub fn outputs(&self) -> Result<ForwardOutputs> {
        let v = |id| self.graph.value(id).cast::<f64>();
        let levels = self
            .levels
            .iter()
            .map(|l| {
                Ok(LevelOutput {
                    f_sem: v(l.f_sem),
                    f_ins: v(l.f_ins),
                    p_sem: ProbMatrix::new(renormalize(v(l.p_sem)))?,
                    o_inst: v(l.o_inst),
                    o_region: v(l.o_region),
                })
            })
            .collect::<Result<_>>()?;
        Ok(ForwardOutputs { levels })
    }
}

fn renormalize(mut p: Matrix<f64>) -> Matrix<f64> {
    for r in 0..p.rows() {
        let row = p.row_mut(r);
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= s);
    }
    p
}

/// Runs the network on one point set at the configured precision.
pub fn forward(
    params: &ModelParams,
    config: &ModelConfig,
    points: &[Point],
) -> Result<ForwardOutputs> {
    match config.precision {
        Precision::F32 => build_forward::<f32>(params, config, points)?.outputs(),
        Precision::F64 => build_forward::<f64>(params, config, points)?.outputs(),
    }
}

/// Loss nodes of one shape.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LossNodes {
    pub semantic: Vec<NodeId>,
    pub inst_offset: Vec<NodeId>,
    pub region_offset: Vec<NodeId>,
    pub total: NodeId,
}

fn one_hot_labels<T: Scalar>(labels: &[usize], classes: usize, level: usize) -> Result<Matrix<T>> {
    let mut y = Matrix::zeros(labels.len(), classes);
    for (i, &s) in labels.iter().enumerate() {
        if s == 0 || s > classes {
            return Err(Error::LabelRange {
                level: level + 1,
                label: s,
                classes,
            });
        }
        y[(i, s - 1)] = T::one();
    }
    Ok(y)
}

/// `(1/N) Σ −ln clamp(p_i[label_i])` as a node.
pub fn semantic_loss_node<T: Scalar>(
    g: &mut Graph<T>,
    p: NodeId,
    labels: &[usize],
    level: usize,
) -> Result<NodeId> {
    let (n, c) = g.shape(p);
    if labels.len() != n {
        return Err(Error::Shape(format!(
            "{} labels for {n} rows",
            labels.len()
        )));
    }
    let y = g.constant(one_hot_labels(labels, c, level)?)?;
    let lp = g.log_clamped(p)?;
    let picked = g.mul(y, lp)?;
    let s = g.sum(picked)?;
    g.scale(s, -1.0 / n as f64)
}

/// `(1/N) Σ ‖o_i − o*_i‖₂` as a node.
pub fn offset_loss_node<T: Scalar>(
    g: &mut Graph<T>,
    o: NodeId,
    target: &[Point],
) -> Result<NodeId> {
    let t = g.constant(positions_matrix(target))?;
    let d = g.sub(o, t)?;
    let norms = g.row_norm(d)?;
    g.mean(norms)
}

/// Sum over levels of the semantic loss and both offset losses.
pub fn total_loss_nodes<T: Scalar>(
    fg: &mut ForwardGraph<T>,
    shape: &LabeledShape,
) -> Result<LossNodes> {
    if shape.num_levels() != fg.levels.len() {
        return Err(Error::invalid(format!(
            "shape has {} levels, model has {}",
            shape.num_levels(),
            fg.levels.len()
        )));
    }
    let g = &mut fg.graph;
    let mut out = LossNodes {
        semantic: Vec::new(),
        inst_offset: Vec::new(),
        region_offset: Vec::new(),
        total: NodeId(0),
    };
    let mut terms = Vec::new();
    for (k, (nodes, labels)) in fg.levels.iter().zip(&shape.levels).enumerate() {
        let s = semantic_loss_node(g, nodes.p_sem, &labels.sem, k)?;
        let i = offset_loss_node(g, nodes.o_inst, &labels.inst_offset)?;
        let r = offset_loss_node(g, nodes.o_region, &labels.region_offset)?;
        out.semantic.push(s);
        out.inst_offset.push(i);
        out.region_offset.push(r);
        terms.extend([s, i, r]);
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = g.add(total, t)?;
    }
    out.total = total;
    Ok(out)
}

/// Eager semantic cross-entropy.
pub fn loss_semantic(p: &ProbMatrix<f64>, labels: &[usize]) -> Result<f64> {
    let mut g = Graph::new();
    let pn = g.leaf(p.matrix().clone())?;
    let l = semantic_loss_node(&mut g, pn, labels, 0)?;
    Ok(g.value(l)[(0, 0)])
}

/// Eager mean Euclidean offset error.
pub fn loss_offset(o: &Matrix<f64>, target: &[Point]) -> Result<f64> {
    if o.shape() != (target.len(), 3) {
        return Err(Error::Shape(format!(
            "offsets {:?} for {} targets",
            o.shape(),
            target.len()
        )));
    }
    let mut g = Graph::new();
    let on = g.leaf(o.clone())?;
    let l = offset_loss_node(&mut g, on, target)?;
    Ok(g.value(l)[(0, 0)])
}

/// Eager total loss of precomputed outputs.
pub fn total_loss(outputs: &ForwardOutputs, shape: &LabeledShape) -> Result<f64> {
    if outputs.levels.len() != shape.num_levels() {
        return Err(Error::invalid("output and shape level counts differ"));
    }
    let mut total = 0.0;
    for (o, l) in outputs.levels.iter().zip(&shape.levels) {
        total += loss_semantic(&o.p_sem, &l.sem)?;
        total += loss_offset(&o.o_inst, &l.inst_offset)?;
        total += loss_offset(&o.o_region, &l.region_offset)?;
    }
    Ok(total)
}

/// Loss terms of one shape, summed over levels.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub semantic: f64,
    pub inst_offset: f64,
    pub region_offset: f64,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.semantic + self.inst_offset + self.region_offset
    }

    pub fn add(&mut self, other: &Self) {
        self.semantic += other.semantic;
        self.inst_offset += other.inst_offset;
        self.region_offset += other.region_offset;
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            semantic: self.semantic * s,
            inst_offset: self.inst_offset * s,
            region_offset: self.region_offset * s,
        }
    }
}

/// Loss of one shape and its gradient with respect to every tensor of
/// `params`, in tensor order, at the configured precision.
pub fn loss_and_gradient(
    params: &ModelParams,
    config: &ModelConfig,
    shape: &LabeledShape,
) -> Result<(LossBreakdown, Vec<Matrix<f64>>)> {
    match config.precision {
        Precision::F32 => loss_and_gradient_in::<f32>(params, config, shape),
        Precision::F64 => loss_and_gradient_in::<f64>(params, config, shape),
    }
}

/// [`loss_and_gradient`] with the graph built in scalar type `T`.
pub fn loss_and_gradient_in<T: Scalar>(
    params: &ModelParams,
    config: &ModelConfig,
    shape: &LabeledShape,
) -> Result<(LossBreakdown, Vec<Matrix<f64>>)> {
    let mut fg = build_forward::<T>(params, config, &shape.points)?;
    let losses = total_loss_nodes(&mut fg, shape)?;
    let grads = fg.graph.backward(losses.total)?;
    let value = |ids: &[NodeId]| {
        ids.iter()
            .map(|&i| fg.graph.value(i)[(0, 0)].to_f64().expect("float"))
            .sum::<f64>()
    };
    let breakdown = LossBreakdown {
        semantic: value(&losses.semantic),
        inst_offset: value(&losses.inst_offset),
        region_offset: value(&losses.region_offset),
    };
    Ok((
        breakdown,
        fg.params.iter().map(|&id| grads.get(id).cast()).collect(),
    ))
}
