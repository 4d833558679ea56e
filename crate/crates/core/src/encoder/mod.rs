//! Intrinsic encoder: per-focal descriptions are encoded, averaged and
//! normalized into a frozen embedding bank.

pub mod analysis;
pub mod bank;
pub mod descriptions;
pub mod text;

pub use analysis::{pca_projection, similarity_matrix, PcaOptions, PcaProjection, SimilarityMatrix};
pub use bank::{
    build_bank, description_file_name, format_focal, load_descriptions, write_descriptions, BankEntry,
    DescriptionSet, IntrinsicEmbeddingBank,
};
pub use descriptions::describe_focal;
pub use text::{tokenize, ExternalEncoder, ReferenceEncoder, TextEncoder};
