//! Dense multi-dimensional arrays and the exact numeric primitives the rest
//! of the crate builds on.
//!
//! All values are 64-bit reals stored row-major (last index fastest). There is
//! one accumulation order for every reduction so results are bit-reproducible.

use crate::error::{Error, Result};
use crate::rng::Rng;
use serde::{Deserialize, Serialize};

/// Ordered positive dimensions of a dense tensor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    dims: Vec<usize>,
}

impl Shape {
    /// Build a shape; every entry must be >= 1 and the total element count
    /// must fit in 64 bits.
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidShape("empty dimension list".into()));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidShape(format!("zero dimension in {dims:?}")));
        }
        let mut product: u64 = 1;
        for &d in &dims {
            product = product
                .checked_mul(d as u64)
                .ok_or_else(|| Error::InvalidShape(format!("element count overflow in {dims:?}")))?;
        }
        Ok(Shape { dims })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    /// Total number of elements.
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false // every dimension is >= 1
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[")?;
        for (i, d) in self.dims.iter().enumerate() {
            if i > 0 {
                write!(f, "x")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, "]")
    }
}

/// Dense row-major tensor of 64-bit reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseTensor {
    shape: Shape,
    values: Vec<f64>,
}

impl DenseTensor {
    /// Wrap raw values. Fails when the count disagrees with the shape or any
    /// value is non-finite.
    pub fn new(shape: Shape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for shape {shape} ({} expected)",
                values.len(),
                shape.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("constructor (value {bad})")));
        }
        Ok(DenseTensor { shape, values })
    }

    pub fn zeros(shape: Shape) -> Self {
        let n = shape.len();
        DenseTensor {
            shape,
            values: vec![0.0; n],
        }
    }

    /// Convenience constructor for a rank-2 tensor.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map(|row| row.len()).unwrap_or(0);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::ShapeMismatch("ragged rows".into()));
        }
        let mut values = Vec::with_capacity(r * c);
        for row in rows {
            values.extend_from_slice(row);
        }
        DenseTensor::new(Shape::new(vec![r, c])?, values)
    }

    /// Identity matrix of order `n`.
    pub fn identity(n: usize) -> Result<Self> {
        let mut t = DenseTensor::zeros(Shape::new(vec![n, n])?);
        for i in 0..n {
            t.values[i * n + i] = 1.0;
        }
        Ok(t)
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Number of rows of a rank-2 tensor.
    pub fn rows(&self) -> usize {
        self.shape.dims()[0]
    }

    /// Number of columns of a rank-2 tensor.
    pub fn cols(&self) -> usize {
        self.shape.dims()[self.shape.rank() - 1]
    }

    /// Element of a rank-2 tensor.
    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols() + col]
    }

    /// Row slice of a rank-2 tensor.
    pub fn row(&self, row: usize) -> &[f64] {
        let c = self.cols();
        &self.values[row * c..(row + 1) * c]
    }

    /// Same value buffer under a new shape; the element count must agree.
    pub fn reshape(&self, new: Shape) -> Result<DenseTensor> {
        if new.len() != self.shape.len() {
            return Err(Error::ShapeMismatch(format!(
                "cannot reshape {} ({} elements) to {new} ({} elements)",
                self.shape,
                self.shape.len(),
                new.len()
            )));
        }
        Ok(DenseTensor {
            shape: new,
            values: self.values.clone(),
        })
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&self) -> Result<DenseTensor> {
        if self.shape.rank() != 2 {
            return Err(Error::ShapeMismatch(format!(
                "transpose needs rank 2, got {}",
                self.shape
            )));
        }
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.values[i * c + j];
            }
        }
        Ok(DenseTensor {
            shape: Shape::new(vec![c, r]).expect("valid dims"),
            values: out,
        })
    }

    /// Frobenius norm.
    pub fn frob_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&self, factor: f64) -> DenseTensor {
        DenseTensor {
            shape: self.shape.clone(),
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn add(&self, other: &DenseTensor) -> Result<DenseTensor> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "add {} vs {}",
                self.shape, other.shape
            )));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + b)
            .collect();
        Ok(DenseTensor {
            shape: self.shape.clone(),
            values,
        })
    }
}

/// Matrix product of two rank-2 tensors, accumulated in f64 with the inner
/// index ascending.
pub fn matmul(a: &DenseTensor, b: &DenseTensor) -> Result<DenseTensor> {
    if a.shape().rank() != 2 || b.shape().rank() != 2 {
        return Err(Error::ShapeMismatch(format!(
            "matmul needs rank-2 operands, got {} and {}",
            a.shape(),
            b.shape()
        )));
    }
    let (p, q) = (a.rows(), a.cols());
    let (q2, s) = (b.rows(), b.cols());
    if q != q2 {
        return Err(Error::ShapeMismatch(format!(
            "matmul inner dimensions {q} vs {q2}"
        )));
    }
    let mut out = vec![0.0; p * s];
    // i,k,j loop order: per-element accumulation still runs k = 0..q-1.
    for i in 0..p {
        let arow = &a.values()[i * q..(i + 1) * q];
        let orow = &mut out[i * s..(i + 1) * s];
        for (k, &aik) in arow.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let brow = &b.values()[k * s..(k + 1) * s];
            for j in 0..s {
                orow[j] += aik * brow[j];
            }
        }
    }
    Ok(DenseTensor {
        shape: Shape::new(vec![p, s])?,
        values: out,
    })
}

/// Xavier-uniform samples on `[-a, a]` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn init_xavier_uniform(
    shape: Shape,
    fan_in: usize,
    fan_out: usize,
    seed: u64,
) -> Result<DenseTensor> {
    if fan_in == 0 || fan_out == 0 {
        return Err(Error::InvalidArgument(
            "fan_in and fan_out must be >= 1".into(),
        ));
    }
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut rng = Rng::new(seed);
    let n = shape.len();
    let values = (0..n).map(|_| rng.uniform_symmetric(a)).collect();
    Ok(DenseTensor { shape, values })
}

/// I.i.d. standard normal samples, deterministic per seed.
pub fn init_gaussian(shape: Shape, seed: u64) -> DenseTensor {
    let mut rng = Rng::new(seed);
    let n = shape.len();
    let values = (0..n).map(|_| rng.normal()).collect();
    DenseTensor { shape, values }
}

/// Relative Frobenius error `||a - b||_F / ||b||_F`.
pub fn frob_rel_error(a: &DenseTensor, b: &DenseTensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "frob_rel_error {} vs {}",
            a.shape(),
            b.shape()
        )));
    }
    let denom = b.frob_norm();
    if denom == 0.0 {
        return Err(Error::ZeroDenominator("frob_rel_error reference".into()));
    }
    let diff = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    Ok(diff / denom)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let i2 = DenseTensor::identity(2).unwrap();
        let b = DenseTensor::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap();
        let c = matmul(&i2, &b).unwrap();
        assert_eq!(c, b);
    }

    #[test]
    fn matmul_hand_arithmetic() {
        let a = DenseTensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = DenseTensor::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.values(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_rejects_mismatch() {
        let a = DenseTensor::zeros(Shape::new(vec![2, 3]).unwrap());
        let b = DenseTensor::zeros(Shape::new(vec![4, 2]).unwrap());
        assert!(matches!(matmul(&a, &b), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn reshape_preserves_row_major_order() {
        let t = DenseTensor::new(
            Shape::new(vec![2, 3]).unwrap(),
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
        )
        .unwrap();
        let r = t.reshape(Shape::new(vec![3, 2]).unwrap()).unwrap();
        assert_eq!(r.row(0), &[1.0, 2.0]);
        assert_eq!(r.row(1), &[3.0, 4.0]);
        assert_eq!(r.row(2), &[5.0, 6.0]);

        let v = t.reshape(Shape::new(vec![4]).unwrap());
        assert!(v.is_err());

        let flat = DenseTensor::new(Shape::new(vec![4]).unwrap(), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let sq = flat.reshape(Shape::new(vec![2, 2]).unwrap()).unwrap();
        assert_eq!(sq.values(), flat.values());
    }

    #[test]
    fn xavier_bound_and_determinism() {
        let shape = Shape::new(vec![10, 10]).unwrap();
        let a = (6.0f64 / 200.0).sqrt();
        let t1 = init_xavier_uniform(shape.clone(), 100, 100, 9).unwrap();
        let t2 = init_xavier_uniform(shape, 100, 100, 9).unwrap();
        assert_eq!(t1, t2);
        assert!(t1.values().iter().all(|v| v.abs() <= a));
    }

    #[test]
    fn xavier_mean_near_zero() {
        let n = 100_000;
        let t = init_xavier_uniform(Shape::new(vec![n]).unwrap(), 100, 100, 2024).unwrap();
        let mean = t.values().iter().sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn gaussian_determinism_and_moments() {
        let n = 100_000;
        let shape = Shape::new(vec![n]).unwrap();
        let a = init_gaussian(shape.clone(), 31);
        let b = init_gaussian(shape, 31);
        assert_eq!(a, b);
        let mean = a.values().iter().sum::<f64>() / n as f64;
        let var = a.values().iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn frob_rel_error_cases() {
        let a = DenseTensor::new(Shape::new(vec![2]).unwrap(), vec![3.0, 4.0]).unwrap();
        assert_eq!(frob_rel_error(&a, &a).unwrap(), 0.0);

        let b2 = a.scale(2.0);
        // ||a - 2a|| / ||2a|| = 1/2; scaling the *first* argument by 2 gives 1.
        assert!((frob_rel_error(&b2, &a).unwrap() - 1.0).abs() < 1e-15);

        let zero = DenseTensor::zeros(Shape::new(vec![2]).unwrap());
        assert!(matches!(
            frob_rel_error(&a, &zero),
            Err(Error::ZeroDenominator(_))
        ));
    }

    #[test]
    fn constructor_rejects_non_finite() {
        let r = DenseTensor::new(Shape::new(vec![2]).unwrap(), vec![1.0, f64::NAN]);
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }

    #[test]
    fn shape_rejects_degenerate_dims() {
        assert!(Shape::new(vec![]).is_err());
        assert!(Shape::new(vec![3, 0]).is_err());
        assert!(Shape::new(vec![usize::MAX, 2]).is_err());
    }
}
