//! Block-wise uniform (asymmetric, min/max) quantization.
//!
//! For each block of `block_size` elements in flat row-major order:
//!
//! ```text
//! s = (max - min) / (2^bits - 1)
//! z = round(-min / s) - 2^(bits-1)
//! q = clamp(round_mode(w / s) + z, -2^(bits-1), 2^(bits-1) - 1)
//! w' = (q - z) * s
//! ```
//!
//! Constant blocks store `s = 1`, `z = -c` and all-zero codes so that the
//! constant is reproduced exactly.

mod pack;
mod store;

pub use pack::{pack_int4, pack_int8, unpack_int4, unpack_int8};
pub use store::{ParamStore, Precision};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

pub const DEFAULT_BLOCK_SIZE: usize = 256;

// The scale never drops below this fraction of the block's largest
// magnitude, keeping |z| within the exactly representable integers of f32.
const MIN_RELATIVE_SCALE: f64 = 1.0 / (1u64 << 20) as f64;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rounding {
    #[default]
    NearestTiesToEven,
    Stochastic,
}

impl std::str::FromStr for Rounding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "nearest" | "rtn" | "nearest_ties_to_even" => Ok(Rounding::NearestTiesToEven),
            "stochastic" | "sr" => Ok(Rounding::Stochastic),
            other => Err(Error::Config(format!("unknown rounding '{other}' (expected sr or nearest)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QuantSpec {
    bits: u8,
    block_size: usize,
    rounding: Rounding,
}

impl QuantSpec {
    pub fn new(bits: u8, block_size: usize, rounding: Rounding) -> Result<Self> {
        if bits != 4 && bits != 8 {
            return Err(Error::Config(format!("quantization bits must be 4 or 8, got {bits}")));
        }
        if block_size == 0 {
            return Err(Error::Config("block size must be positive".into()));
        }
        Ok(Self {
            bits,
            block_size,
            rounding,
        })
    }

    pub fn int8(rounding: Rounding) -> Self {
        Self::new(8, DEFAULT_BLOCK_SIZE, rounding).unwrap()
    }

    pub fn int4(rounding: Rounding) -> Self {
        Self::new(4, DEFAULT_BLOCK_SIZE, rounding).unwrap()
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn rounding(&self) -> Rounding {
        self.rounding
    }

    pub fn with_rounding(self, rounding: Rounding) -> Self {
        Self { rounding, ..self }
    }

    pub fn qmin(&self) -> i32 {
        -(1 << (self.bits - 1))
    }

    pub fn qmax(&self) -> i32 {
        (1 << (self.bits - 1)) - 1
    }

    pub fn levels(&self) -> u32 {
        (1u32 << self.bits) - 1
    }

    pub fn block_count(&self, elements: usize) -> usize {
        elements.div_ceil(self.block_size)
    }

    pub fn payload_len(&self, elements: usize) -> usize {
        match self.bits {
            4 => elements.div_ceil(2),
            _ => elements,
        }
    }
}

/// Packed low-bit payload with per-block scale and zero point.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedTensor<T> {
    payload: Vec<u8>,
    scales: Vec<T>,
    zeros: Vec<T>,
    rows: usize,
    cols: usize,
    spec: QuantSpec,
}

impl<T: Scalar> QuantizedTensor<T> {
    /// Reassembles a tensor from stored parts, validating every invariant.
    pub fn from_parts(
        rows: usize,
        cols: usize,
        spec: QuantSpec,
        payload: Vec<u8>,
        scales: Vec<T>,
        zeros: Vec<T>,
    ) -> Result<Self> {
        let n = rows * cols;
        if payload.len() != spec.payload_len(n) {
            return Err(Error::Structure(format!(
                "payload holds {} bytes, {rows}x{cols} at {} bits needs {}",
                payload.len(),
                spec.bits,
                spec.payload_len(n)
            )));
        }
        let blocks = spec.block_count(n);
        if scales.len() != blocks || zeros.len() != blocks {
            return Err(Error::Structure(format!(
                "expected {blocks} scales/zeros, found {}/{}",
                scales.len(),
                zeros.len()
            )));
        }
        if let Some(b) = scales.iter().position(|s| !(s.is_finite() && *s > T::zero())) {
            return Err(Error::Structure(format!("scale of block {b} is not strictly positive")));
        }
        if let Some(b) = zeros.iter().position(|z| !z.is_finite()) {
            return Err(Error::Structure(format!("zero point of block {b} is not finite")));
        }
        let t = Self {
            payload,
            scales,
            zeros,
            rows,
            cols,
            spec,
        };
        t.codes()?;
        Ok(t)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spec(&self) -> QuantSpec {
        self.spec
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    pub fn scales(&self) -> &[T] {
        &self.scales
    }

    pub fn zeros(&self) -> &[T] {
        &self.zeros
    }

    /// Unpacked integer codes in flat row-major order.
    pub fn codes(&self) -> Result<Vec<i8>> {
        match self.spec.bits {
            4 => unpack_int4(&self.payload, self.len()),
            _ => Ok(unpack_int8(&self.payload)),
        }
    }

    pub fn dequantize(&self) -> Matrix<T> {
        let codes = self.codes().expect("validated at construction");
        let bs = self.spec.block_size;
        let data = codes
            .iter()
            .enumerate()
            .map(|(i, &q)| {
                let b = i / bs;
                (T::cast(q as f64) - self.zeros[b]) * self.scales[b]
            })
            .collect();
        Matrix::from_vec(self.rows, self.cols, data).expect("shape checked at construction")
    }

    /// Largest block scale; half of it bounds the nearest-rounding error.
    pub fn max_scale(&self) -> T {
        self.scales.iter().fold(T::zero(), |m, &s| m.max(s))
    }
}

pub fn quantize<T: Scalar, R: Rng>(
    w: &Matrix<T>,
    spec: QuantSpec,
    rng: Option<&mut R>,
) -> Result<QuantizedTensor<T>> {
    let values: Vec<f64> = w.as_slice().iter().map(|x| x.widen()).collect();
    quantize_values(&values, w.rows(), w.cols(), spec, rng)
}

fn quantize_values<T: Scalar, R: Rng>(
    values: &[f64],
    rows: usize,
    cols: usize,
    spec: QuantSpec,
    mut rng: Option<&mut R>,
) -> Result<QuantizedTensor<T>> {
    if spec.rounding == Rounding::Stochastic && rng.is_none() {
        return Err(Error::Config("stochastic rounding requires a random stream".into()));
    }
    let (qmin, qmax) = (spec.qmin() as f64, spec.qmax() as f64);
    let half_range = (1i64 << (spec.bits - 1)) as f64;
    let blocks = spec.block_count(values.len());
    let mut codes = Vec::with_capacity(values.len());
    let mut scales = Vec::with_capacity(blocks);
    let mut zeros = Vec::with_capacity(blocks);

    for (b, block) in values.chunks(spec.block_size).enumerate() {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (k, &v) in block.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    block: b,
                    index: b * spec.block_size + k,
                });
            }
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if hi == lo {
            scales.push(T::one());
            zeros.push(T::zero() - T::cast(lo));
            codes.extend(std::iter::repeat_n(0i8, block.len()));
            continue;
        }
        let abs_max = lo.abs().max(hi.abs());
        let s = T::cast(((hi - lo) / spec.levels() as f64).max(abs_max * MIN_RELATIVE_SCALE));
        let s64 = s.widen();
        let z = T::cast((-lo / s64).round_ties_even() - half_range);
        let z64 = z.widen();
        scales.push(s);
        zeros.push(z);
        for &v in block {
            let x = v / s64;
            let r = match spec.rounding {
                Rounding::NearestTiesToEven => x.round_ties_even(),
                Rounding::Stochastic => stochastic_round(x, rng.as_deref_mut().unwrap()) as f64,
            };
            codes.push((r + z64).clamp(qmin, qmax) as i8);
        }
    }

    let payload = match spec.bits {
        4 => pack_int4(&codes)?,
        _ => pack_int8(&codes),
    };
    Ok(QuantizedTensor {
        payload,
        scales,
        zeros,
        rows,
        cols,
        spec,
    })
}

pub fn dequantize<T: Scalar>(q: &QuantizedTensor<T>) -> Matrix<T> {
    q.dequantize()
}

/// Rounds down with probability `ceil(x) - x`, otherwise up.
pub fn stochastic_round<R: Rng + ?Sized>(x: f64, rng: &mut R) -> i64 {
    debug_assert!(x.is_finite());
    let floor = x.floor();
    let frac = x - floor;
    if frac == 0.0 {
        return floor as i64;
    }
    let u: f64 = rng.random();
    if u < frac {
        floor as i64 + 1
    } else {
        floor as i64
    }
}

/// `W' = dequantize(W_q) + delta` in `f64`, requantized with the given
/// rounding (block statistics refit from `W'`).
pub fn apply_update<T: Scalar, R: Rng>(
    wq: &QuantizedTensor<T>,
    delta: &Matrix<T>,
    rounding: Rounding,
    rng: Option<&mut R>,
) -> Result<QuantizedTensor<T>> {
    if delta.shape() != wq.shape() {
        return Err(shape_err(
            "apply_update",
            format!("weights {:?}, delta {:?}", wq.shape(), delta.shape()),
        ));
    }
    let current = wq.dequantize();
    let updated: Vec<f64> = current
        .as_slice()
        .iter()
        .zip(delta.as_slice())
        .map(|(w, d)| w.widen() + d.widen())
        .collect();
    quantize_values(&updated, wq.rows, wq.cols, wq.spec.with_rounding(rounding), rng)
}

/// Stochastic-rounding weight update.
pub fn apply_update_sr<T: Scalar, R: Rng>(
    wq: &QuantizedTensor<T>,
    delta: &Matrix<T>,
    rng: &mut R,
) -> Result<QuantizedTensor<T>> {
    apply_update(wq, delta, Rounding::Stochastic, Some(rng))
}
