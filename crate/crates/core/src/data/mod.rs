//! Controlled moving-digit sequences.

mod container;
mod generate;
mod glyph;
mod idx;

pub use container::{
    decode_dataset, encode_dataset, encode_pgm, load_dataset, save_dataset, write_pgm,
    DATASET_MAGIC, DATASET_VERSION,
};
pub use generate::{
    deviation_suite, generate, generate_from, reflect, trajectory, CompositeMode, RenderMode, SequenceBatch,
    SequenceMeta, SuiteKind, SuiteLevel, TrajectoryConfig,
};
pub use glyph::{digit_glyph, Sprite};
pub use idx::{load_idx, parse_images, parse_labels, sprites_from_idx};
