use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// How adjacent projection matrices are compared.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityMetric {
    /// Flattened cosine after per-column sign alignment.
    #[default]
    AlignedFlatCosine,
    /// Mean of |cos| between matching columns.
    MeanAbsColumnCosine,
}

/// `<vec(a), vec(b)> / (|a|_F |b|_F)`, clamped to [-1, 1].
pub fn cosine_similarity_flat<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(shape_err(
            "cosine_similarity_flat",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let (na, nb) = (a.frobenius_norm(), b.frobenius_norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroMatrix("cosine similarity"));
    }
    let inner: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| x.widen() * y.widen())
        .sum();
    Ok((inner / (na * nb)).clamp(-1.0, 1.0))
}

/// Negates every column of `new` whose inner product with the matching
/// column of `reference` is negative.
pub fn sign_align<T: Scalar>(reference: &Matrix<T>, new: &Matrix<T>) -> Result<Matrix<T>> {
    if reference.shape() != new.shape() {
        return Err(shape_err(
            "sign_align",
            format!("{:?} vs {:?}", reference.shape(), new.shape()),
        ));
    }
    let mut out = new.clone();
    for j in 0..new.cols() {
        let inner: f64 = (0..new.rows())
            .map(|i| reference[(i, j)].widen() * new[(i, j)].widen())
            .sum();
        if inner < 0.0 {
            for i in 0..new.rows() {
                out[(i, j)] = -out[(i, j)];
            }
        }
    }
    Ok(out)
}

pub fn mean_abs_column_cosine<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(shape_err(
            "mean_abs_column_cosine",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    if a.cols() == 0 {
        return Err(Error::ZeroMatrix("column cosine"));
    }
    let mut total = 0.0;
    for j in 0..a.cols() {
        let (mut inner, mut na, mut nb) = (0.0, 0.0, 0.0);
        for i in 0..a.rows() {
            let (x, y) = (a[(i, j)].widen(), b[(i, j)].widen());
            inner += x * y;
            na += x * x;
            nb += y * y;
        }
        if na == 0.0 || nb == 0.0 {
            return Err(Error::ZeroMatrix("column cosine"));
        }
        total += (inner / (na.sqrt() * nb.sqrt())).abs().min(1.0);
    }
    Ok(total / a.cols() as f64)
}

pub fn projection_similarity<T: Scalar>(
    previous: &Matrix<T>,
    new: &Matrix<T>,
    metric: SimilarityMetric,
) -> Result<f64> {
    match metric {
        SimilarityMetric::AlignedFlatCosine => {
            cosine_similarity_flat(previous, &sign_align(previous, new)?)
        }
        SimilarityMetric::MeanAbsColumnCosine => mean_abs_column_cosine(previous, new),
    }
}
