use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{apply_update, quantize, QuantSpec, QuantizedTensor, Rounding, DEFAULT_BLOCK_SIZE};
use crate::error::{shape_err, Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Storage precision of a tensor. `Float` keeps the dense high-precision
/// matrix; the integer variants store block-quantized codes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    Float,
    Int8,
    Int4,
}

impl Precision {
    pub fn bits(&self) -> Option<u8> {
        match self {
            Precision::Float => None,
            Precision::Int8 => Some(8),
            Precision::Int4 => Some(4),
        }
    }

    pub fn quant_spec(&self, rounding: Rounding) -> Option<QuantSpec> {
        self.bits()
            .map(|b| QuantSpec::new(b, DEFAULT_BLOCK_SIZE, rounding).expect("valid bit width"))
    }
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "float" | "fp32" | "f32" | "16" | "32" | "bf16" => Ok(Precision::Float),
            "8" | "int8" => Ok(Precision::Int8),
            "4" | "int4" => Ok(Precision::Int4),
            other => Err(Error::Config(format!("unknown precision '{other}' (expected 4, 8 or float)"))),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::Float => "float",
            Precision::Int8 => "int8",
            Precision::Int4 => "int4",
        })
    }
}

/// A matrix held either densely or block-quantized.
#[derive(Clone, Debug, PartialEq)]
pub enum ParamStore<T> {
    Dense(Matrix<T>),
    Quantized(QuantizedTensor<T>),
}

impl<T: Scalar> ParamStore<T> {
    /// Stores `m` at `precision`, quantizing with nearest rounding.
    pub fn new(m: Matrix<T>, precision: Precision) -> Result<Self> {
        match precision.quant_spec(Rounding::NearestTiesToEven) {
            None => Ok(ParamStore::Dense(m)),
            Some(spec) => Ok(ParamStore::Quantized(quantize::<T, crate::rng::Rng>(&m, spec, None)?)),
        }
    }

    pub fn zeros(rows: usize, cols: usize, precision: Precision) -> Self {
        Self::new(Matrix::zeros(rows, cols), precision).expect("zeros are finite")
    }

    pub fn precision(&self) -> Precision {
        match self {
            ParamStore::Dense(_) => Precision::Float,
            ParamStore::Quantized(q) if q.spec().bits() == 4 => Precision::Int4,
            ParamStore::Quantized(_) => Precision::Int8,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            ParamStore::Dense(m) => m.shape(),
            ParamStore::Quantized(q) => q.shape(),
        }
    }

    pub fn to_dense(&self) -> Matrix<T> {
        match self {
            ParamStore::Dense(m) => m.clone(),
            ParamStore::Quantized(q) => q.dequantize(),
        }
    }

    /// Replaces the content with `m` at the current precision (nearest rounding).
    pub fn assign(&mut self, m: Matrix<T>) -> Result<()> {
        *self = Self::new(m, self.precision())?;
        Ok(())
    }

    /// `W <- W + delta`. Dense storage adds exactly; quantized storage
    /// requantizes with `rounding`. The stored value is untouched on error.
    pub fn apply_update<R: Rng>(&mut self, delta: &Matrix<T>, rounding: Rounding, rng: Option<&mut R>) -> Result<()> {
        if delta.shape() != self.shape() {
            return Err(shape_err(
                "ParamStore::apply_update",
                format!("{:?} vs {:?}", self.shape(), delta.shape()),
            ));
        }
        match self {
            ParamStore::Dense(m) => m.add_assign(delta),
            ParamStore::Quantized(q) => {
                *q = apply_update(q, delta, rounding, rng)?;
                Ok(())
            }
        }
    }

    /// Number of quantization blocks (0 for dense storage).
    pub fn block_count(&self) -> usize {
        match self {
            ParamStore::Dense(_) => 0,
            ParamStore::Quantized(q) => q.scales().len(),
        }
    }
}
