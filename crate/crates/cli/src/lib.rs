//! Command-line driver: data generation, training, inference, evaluation,
//! ablation sweeps, gradient checks and PLY export.

pub mod commands;
pub mod config;
pub mod error;
pub mod ply;

pub use commands::{
    ablation_tsv, canonical_variant, cmd_ablate, cmd_eval, cmd_export_ply, cmd_gen_data,
    cmd_gradcheck, cmd_infer, cmd_train, generate_split, load_split, AblationRow, Dataset,
    GradcheckOutcome, ABLATE_BANDWIDTHS, ABLATE_LAMBDAS,
};
pub use config::{RunConfig, RUN_KEYS};
pub use error::{CliError, CliResult};
