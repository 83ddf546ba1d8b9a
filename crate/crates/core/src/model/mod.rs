//! Point network with two decoders per level, prediction heads, losses and
//! the SGD training loop.

mod checkpoint;
mod config;
mod forward;
mod gradcheck;
mod params;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use config::{lr_schedule, ModelConfig, Precision, MODEL_KEYS};
pub use forward::{
    build_forward, forward, loss_and_gradient, loss_and_gradient_in, loss_offset, loss_semantic,
    offset_loss_node, positions_matrix, semantic_loss_node, total_loss, total_loss_nodes,
    ForwardGraph, ForwardOutputs, LevelNodes, LevelOutput, LossBreakdown, LossNodes,
};
pub use gradcheck::{
    fusion_leak_into_semantic, gradient_check, jitter_biases, GradcheckEntry, GradcheckParams,
    GradcheckReport,
};
pub use params::{glorot_bound, init_params, param_layout, ModelParams};
pub use train::{train, train_from, LogEntry, TrainLog};

use crate::cluster::{cluster_instances, ClusterParams, InstancePrediction, LevelOutputs};
use crate::data::{LabeledShape, Point};
use crate::error::Result;

fn rows_to_points(m: &crate::numerics::Matrix<f64>) -> Vec<Point> {
    m.row_iter().map(|r| [r[0], r[1], r[2]]).collect()
}

/// Network outputs in the form the clustering stage consumes.
pub fn level_outputs(outputs: &ForwardOutputs) -> Vec<LevelOutputs> {
    outputs
        .levels
        .iter()
        .map(|l| LevelOutputs {
            sem_probs: l.p_sem.clone(),
            inst_offset: rows_to_points(&l.o_inst),
            region_offset: rows_to_points(&l.o_region),
        })
        .collect()
}

/// Forward pass followed by clustering.
pub fn predict(
    params: &ModelParams,
    config: &ModelConfig,
    points: &[Point],
    cluster: &ClusterParams<f64>,
) -> Result<(ForwardOutputs, InstancePrediction)> {
    let out = forward(params, config, points)?;
    let pred = cluster_instances(points, &level_outputs(&out), cluster)?;
    Ok((out, pred))
}

/// Mean instance-offset error over levels and shapes.
pub fn mean_offset_error(
    params: &ModelParams,
    config: &ModelConfig,
    shapes: &[LabeledShape],
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for s in shapes {
        let out = forward(params, config, &s.points)?;
        for (o, l) in out.levels.iter().zip(&s.levels) {
            total += loss_offset(&o.o_inst, &l.inst_offset)?;
            count += 1;
        }
    }
    Ok(if count == 0 {
        0.0
    } else {
        total / count as f64
    })
}
