use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

// Below this many multiply-adds a product runs on the calling thread.
const PAR_THRESHOLD: usize = 1 << 16;

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(shape_err(
                "Matrix::from_vec",
                format!("{} elements for a {rows}x{cols} matrix", data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_diag(rows: usize, cols: usize, diag: &[T]) -> Self {
        let mut m = Self::zeros(rows, cols);
        for (i, &d) in diag.iter().enumerate().take(rows.min(cols)) {
            m[(i, i)] = d;
        }
        m
    }

    /// Standard normal entries scaled by `std`.
    pub fn randn(rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> Self {
        Self::from_fn(rows, cols, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            T::cast(z * std)
        })
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
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    /// First `n` columns.
    pub fn leading_columns(&self, n: usize) -> Self {
        let n = n.min(self.cols);
        Self::from_fn(self.rows, n, |i, j| self[(i, j)])
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|x| x * s)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.check_same(other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// `self += s * other`
    pub fn axpy(&mut self, s: T, other: &Self) -> Result<()> {
        self.check_same(other, "axpy")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    fn zip_with(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_same(other, op)?;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    fn check_same(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(shape_err(
                op,
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        Ok(())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data
            .iter()
            .map(|x| {
                let v = x.widen();
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.widen().abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a.widen() - b.widen()).abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn is_all_zero(&self) -> bool {
        self.data.iter().all(|x| x.is_zero())
    }

    /// Sum of each column, as a 1 x cols matrix.
    pub fn column_sums(&self) -> Self {
        let mut acc = vec![0.0f64; self.cols];
        for i in 0..self.rows {
            for (a, x) in acc.iter_mut().zip(self.row(i)) {
                *a += x.widen();
            }
        }
        Self {
            rows: 1,
            cols: self.cols,
            data: acc.into_iter().map(T::cast).collect(),
        }
    }

    /// `self * rhs`
    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(shape_err(
                "matmul",
                format!("{:?} * {:?}", self.shape(), rhs.shape()),
            ));
        }
        let (m, k, n) = (self.rows, self.cols, rhs.cols);
        let mut out = Self::zeros(m, n);
        let kernel = |i: usize, out_row: &mut [T]| {
            let mut acc = vec![0.0f64; n];
            let a_row = self.row(i);
            for (p, a) in a_row.iter().enumerate() {
                let a = a.widen();
                if a == 0.0 {
                    continue;
                }
                for (c, b) in acc.iter_mut().zip(rhs.row(p)) {
                    *c += a * b.widen();
                }
            }
            for (o, c) in out_row.iter_mut().zip(acc) {
                *o = T::cast(c);
            }
        };
        run_rows(&mut out, m * k * n, kernel);
        Ok(out)
    }

    /// `selfᵀ * rhs` without materialising the transpose.
    pub fn t_matmul(&self, rhs: &Self) -> Result<Self> {
        if self.rows != rhs.rows {
            return Err(shape_err(
                "t_matmul",
                format!("{:?}ᵀ * {:?}", self.shape(), rhs.shape()),
            ));
        }
        self.transpose().matmul(rhs)
    }

    /// `self * rhsᵀ` without materialising the transpose.
    pub fn matmul_t(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.cols {
            return Err(shape_err(
                "matmul_t",
                format!("{:?} * {:?}ᵀ", self.shape(), rhs.shape()),
            ));
        }
        let (m, k, n) = (self.rows, self.cols, rhs.rows);
        let mut out = Self::zeros(m, n);
        let kernel = |i: usize, out_row: &mut [T]| {
            let a_row = self.row(i);
            for (j, o) in out_row.iter_mut().enumerate() {
                let acc: f64 = a_row
                    .iter()
                    .zip(rhs.row(j))
                    .map(|(a, b)| a.widen() * b.widen())
                    .sum();
                *o = T::cast(acc);
            }
        };
        run_rows(&mut out, m * k * n, kernel);
        Ok(out)
    }

    pub fn convert<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| U::cast(x.widen())).collect(),
        }
    }
}

// Each output row is computed independently, so splitting rows across
// threads does not change any summation order.
fn run_rows<T: Scalar>(out: &mut Matrix<T>, work: usize, kernel: impl Fn(usize, &mut [T]) + Sync) {
    let cols = out.cols;
    if cols == 0 {
        return;
    }
    if work < PAR_THRESHOLD || rayon::current_num_threads() == 1 {
        for (i, row) in out.data.chunks_mut(cols).enumerate() {
            kernel(i, row);
        }
    } else {
        out.data
            .par_chunks_mut(cols)
            .enumerate()
            .for_each(|(i, row)| kernel(i, row));
    }
}

impl<T> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Domain, SeedStream};

    #[test]
    fn identity_is_neutral() {
        let mut rng = SeedStream::new(1).substream(Domain::Test, 0, 0);
        let a = Matrix::<f32>::randn(5, 7, 1.0, &mut rng);
        assert_eq!(a.matmul(&Matrix::identity(7)).unwrap(), a);
        assert_eq!(Matrix::identity(5).matmul(&a).unwrap(), a);
    }

    #[test]
    fn associativity_within_tolerance() {
        let mut rng = SeedStream::new(2).substream(Domain::Test, 0, 0);
        let a = Matrix::<f32>::randn(8, 8, 1.0, &mut rng);
        let b = Matrix::<f32>::randn(8, 8, 1.0, &mut rng);
        let c = Matrix::<f32>::randn(8, 8, 1.0, &mut rng);
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        assert!(left.max_abs_diff(&right) <= 1e-4);
    }

    #[test]
    fn scalar_product() {
        let a = Matrix::from_vec(1, 1, vec![2.0f32]).unwrap();
        let b = Matrix::from_vec(1, 1, vec![3.0f32]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().as_slice(), &[6.0]);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let a = Matrix::<f64>::zeros(2, 3);
        assert!(a.matmul(&Matrix::zeros(2, 3)).is_err());
        assert!(a.matmul_t(&Matrix::zeros(3, 2)).is_err());
        assert!(a.t_matmul(&Matrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn transposed_products_agree_with_explicit_transpose() {
        let mut rng = SeedStream::new(3).substream(Domain::Test, 0, 0);
        let a = Matrix::<f64>::randn(6, 4, 1.0, &mut rng);
        let b = Matrix::<f64>::randn(6, 5, 1.0, &mut rng);
        let c = Matrix::<f64>::randn(3, 4, 1.0, &mut rng);
        assert!(a.t_matmul(&b).unwrap().max_abs_diff(&a.transpose().matmul(&b).unwrap()) < 1e-12);
        assert!(a.matmul_t(&c).unwrap().max_abs_diff(&a.matmul(&c.transpose()).unwrap()) < 1e-12);
    }

    #[test]
    fn parallel_rows_are_bit_identical() {
        let mut rng = SeedStream::new(4).substream(Domain::Test, 0, 0);
        let a = Matrix::<f32>::randn(96, 80, 1.0, &mut rng);
        let b = Matrix::<f32>::randn(80, 64, 1.0, &mut rng);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let serial = pool.install(|| a.matmul(&b).unwrap());
        let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let parallel = pool.install(|| a.matmul(&b).unwrap());
        assert_eq!(serial, parallel);
    }
}
