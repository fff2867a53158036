use crate::error::{shape_err, Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Mean squared error over all elements and its gradient w.r.t. `pred`.
pub fn mse<T: Scalar>(pred: &Matrix<T>, target: &Matrix<T>) -> Result<(f64, Matrix<T>)> {
    if pred.shape() != target.shape() {
        return Err(shape_err("mse", format!("{:?} vs {:?}", pred.shape(), target.shape())));
    }
    let n = pred.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (p, t) in pred.as_slice().iter().zip(target.as_slice()) {
        let d = p.widen() - t.widen();
        loss += d * d;
        grad.push(T::cast(2.0 * d / n));
    }
    Ok((loss / n, Matrix::from_vec(pred.rows(), pred.cols(), grad)?))
}

/// Mean softmax cross-entropy of `logits` (batch x vocab) against class
/// ids, with the gradient w.r.t. `logits`.
pub fn cross_entropy<T: Scalar>(logits: &Matrix<T>, targets: &[u8]) -> Result<(f64, Matrix<T>)> {
    if logits.rows() != targets.len() {
        return Err(shape_err(
            "cross_entropy",
            format!("{} rows of logits for {} targets", logits.rows(), targets.len()),
        ));
    }
    let b = targets.len().max(1) as f64;
    let v = logits.cols();
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(logits.rows(), v);
    for (i, &t) in targets.iter().enumerate() {
        let t = t as usize;
        if t >= v {
            return Err(Error::Data(format!("target id {t} outside vocabulary of {v}")));
        }
        let row = logits.row(i);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, x| m.max(x.widen()));
        let sum: f64 = row.iter().map(|x| (x.widen() - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - row[t].widen();
        for (j, g) in grad.row_mut(i).iter_mut().enumerate() {
            let p = (row[j].widen() - log_z).exp();
            *g = T::cast((p - if j == t { 1.0 } else { 0.0 }) / b);
        }
    }
    Ok((loss / b, grad))
}
