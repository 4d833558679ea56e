//! Test-time embedding selection for arbitrary focals and the evaluation sweeps.

pub mod evaluate;
pub mod select;

pub use evaluate::{
    average_results, evaluate_over_focals, evaluate_samples, focal_rows_csv, ground_truths, intrinsic_input,
    mismatch_rows_csv, mismatch_sweep, parse_results_csv, EvalOptions, FocalRow, IntrinsicInput, MismatchRow,
    NOT_APPLICABLE, RESULT_COLUMNS,
};
pub use select::{
    bank_space_vector, blend, select_embedding, select_neighbors, AdaptedEmbedding, Extrapolation,
    InterpolationPolicy, InterpolationSpace, Provenance,
};
