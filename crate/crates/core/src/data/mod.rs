//! Synthetic hierarchical shapes, ground-truth centers, augmentation and
//! the `.pls`/`.plp` text formats.

mod augment;
mod generate;
mod pls;
mod shape;

pub use augment::{augment, AugmentParams, Transform};
pub use generate::{
    class_counts, corpus_spec, derive_seed, generate_corpus, generate_shape,
    scissor_with_blade_gap, ShapeFamily, ShapeSpec, CLASS_NAMES, NUM_LEVELS,
};
pub use pls::{
    read_plp, read_pls, read_pls_file, write_plp, write_pls, write_pls_file, PredictionFile,
};
pub use shape::{
    compute_gt_centers, duplicate_missing_levels, normalize_to_unit_sphere, LabeledShape,
    LevelLabels, Point,
};
