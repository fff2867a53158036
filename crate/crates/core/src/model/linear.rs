use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::linalg::Matrix;
use crate::quant::{ParamStore, Precision};
use crate::scalar::Scalar;

/// Linear layer `y = x Wᵀ + b` whose weight is stored block-quantized
/// (or dense in float mode). The dequantized weight is materialised per
/// call and never kept.
#[derive(Clone, Debug, PartialEq)]
pub struct Int8Linear<T> {
    pub(crate) weight: ParamStore<T>,
    pub(crate) bias: Option<ParamStore<T>>,
    cached_input: Option<Matrix<T>>,
}

#[derive(Clone, Debug)]
pub struct LinearGrads<T> {
    pub input: Matrix<T>,
    pub weight: Matrix<T>,
    pub bias: Option<Matrix<T>>,
}

impl<T: Scalar> Int8Linear<T> {
    /// Uniform(-1/√in, 1/√in) weights, zero bias.
    pub fn init(out_dim: usize, in_dim: usize, precision: Precision, bias: bool, rng: &mut impl Rng) -> Result<Self> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let w = Matrix::from_fn(out_dim, in_dim, |_, _| T::cast(rng.random_range(-bound..bound)));
        let bias = bias.then(|| ParamStore::zeros(1, out_dim, Precision::Float));
        Ok(Self {
            weight: ParamStore::new(w, precision)?,
            bias,
            cached_input: None,
        })
    }

    pub fn from_parts(weight: ParamStore<T>, bias: Option<Matrix<T>>) -> Result<Self> {
        if let Some(b) = &bias {
            if b.shape() != (1, weight.shape().0) {
                return Err(shape_err(
                    "Int8Linear::from_parts",
                    format!("bias {:?} for weight {:?}", b.shape(), weight.shape()),
                ));
            }
        }
        Ok(Self {
            weight,
            bias: bias.map(ParamStore::Dense),
            cached_input: None,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape().1
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape().0
    }

    pub fn weight(&self) -> &ParamStore<T> {
        &self.weight
    }

    pub fn bias(&self) -> Option<Matrix<T>> {
        self.bias.as_ref().map(ParamStore::to_dense)
    }

    pub fn has_cached_input(&self) -> bool {
        self.cached_input.is_some()
    }

    /// Forward pass without caching, for evaluation.
    pub fn apply(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        if x.cols() != self.in_dim() {
            return Err(shape_err(
                "Int8Linear::forward",
                format!("input {:?} for weight {:?}", x.shape(), self.weight.shape()),
            ));
        }
        let w = self.weight.to_dense();
        let mut y = x.matmul_t(&w)?;
        if let Some(b) = &self.bias {
            let b = b.to_dense();
            for i in 0..y.rows() {
                for (o, &bj) in y.row_mut(i).iter_mut().zip(b.as_slice()) {
                    *o += bj;
                }
            }
        }
        Ok(y)
    }

    pub fn forward(&mut self, x: &Matrix<T>) -> Result<Matrix<T>> {
        let y = self.apply(x)?;
        self.cached_input = Some(x.clone());
        Ok(y)
    }

    /// `grad_in = grad_out · W`, `grad_W = grad_outᵀ · x`; releases the cache.
    pub fn backward(&mut self, grad_out: &Matrix<T>) -> Result<LinearGrads<T>> {
        let x = self
            .cached_input
            .as_ref()
            .ok_or_else(|| Error::State("backward called without a matching forward".into()))?;
        if grad_out.cols() != self.out_dim() || grad_out.rows() != x.rows() {
            return Err(shape_err(
                "Int8Linear::backward",
                format!("grad {:?} for output ({}, {})", grad_out.shape(), x.rows(), self.out_dim()),
            ));
        }
        let w = self.weight.to_dense();
        let input = grad_out.matmul(&w)?;
        let weight = grad_out.t_matmul(x)?;
        let bias = self.bias.as_ref().map(|_| grad_out.column_sums());
        self.cached_input = None;
        Ok(LinearGrads { input, weight, bias })
    }
}
