//! Dense row-major matrices, products, SVD and projection similarity.

mod matrix;
mod similarity;
mod svd;

pub use matrix::Matrix;
pub use similarity::{cosine_similarity_flat, mean_abs_column_cosine, projection_similarity, sign_align, SimilarityMetric};
pub use svd::{svd, Svd};
