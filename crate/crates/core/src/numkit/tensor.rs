use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::gemm::gemm;
use super::sigmoid;
use crate::error::{Error, Result};

/// Row-major dense tensor of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "from_vec",
                format!("shape {shape:?} needs {n} elements, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![], data: vec![v] }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            [n] => Ok((1, *n)),
            s => Err(Error::shape(op, format!("expected a matrix, got shape {s:?}"))),
        }
    }

    /// `[m, k] x [k, n] -> [m, n]`. A 1-D left operand is treated as a row vector.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2("matmul")?;
        let (k2, n) = match other.shape.as_slice() {
            [r, c] => (*r, *c),
            [r] => (*r, 1),
            s => return Err(Error::shape("matmul", format!("rhs shape {s:?}"))),
        };
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}: inner dimensions differ", self.shape, other.shape),
            ));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, 1.0, &self.data, false, &other.data, false, 0.0, &mut out);
        let shape = if self.shape.len() == 1 { vec![n] } else { vec![m, n] };
        Tensor::from_vec(&shape, out)
    }

    fn zip(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Tensor { shape: self.shape.clone(), data })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "add", |a, b| a + b)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "mul", |a, b| a * b)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|x| x * s)
    }

    pub fn tanh(&self) -> Tensor {
        self.map(f64::tanh)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.map(sigmoid)
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = self.dims2("transpose")?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::from_vec(&[c, r], out)
    }

    fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize) {
        let outer = shape[..axis].iter().product();
        let inner = shape[axis + 1..].iter().product();
        (outer, inner)
    }

    /// Concatenates along `axis`; every other dimension must agree.
    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let rank = first.shape.len();
        if axis >= rank {
            return Err(Error::shape("concat", format!("axis {axis} out of range for rank {rank}")));
        }
        for p in parts {
            let ok = p.shape.len() == rank
                && p.shape.iter().zip(&first.shape).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !ok {
                return Err(Error::shape("concat", format!("{:?} vs {:?}", first.shape, p.shape)));
            }
        }
        let mut shape = first.shape.clone();
        shape[axis] = parts.iter().map(|p| p.shape[axis]).sum();
        let (outer, inner) = Self::outer_inner(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for p in parts {
                let block = p.shape[axis] * inner;
                data.extend_from_slice(&p.data[o * block..(o + 1) * block]);
            }
        }
        Tensor::from_vec(&shape, data)
    }

    /// Sub-tensor covering `range` along `axis`.
    pub fn slice(&self, axis: usize, range: Range<usize>) -> Result<Tensor> {
        if axis >= self.shape.len() || range.end > self.shape[axis] || range.start > range.end {
            return Err(Error::shape(
                "slice",
                format!("range {range:?} on axis {axis} of {:?}", self.shape),
            ));
        }
        let (outer, inner) = Self::outer_inner(&self.shape, axis);
        let full = self.shape[axis] * inner;
        let mut data = Vec::with_capacity(outer * range.len() * inner);
        for o in 0..outer {
            data.extend_from_slice(&self.data[o * full + range.start * inner..o * full + range.end * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = range.len();
        Tensor::from_vec(&shape, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_matmul() {
        let a = Tensor::from_vec(&[3, 3], (1..=9).map(|x| x as f64 * 0.5).collect()).unwrap();
        assert_eq!(Tensor::identity(3).matmul(&a).unwrap(), a);
    }

    #[test]
    fn activations_at_zero() {
        let z = Tensor::zeros(&[2, 2]);
        assert!(z.sigmoid().data().iter().all(|&x| x == 0.5));
        assert!(z.tanh().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn concat_and_slice_shapes() {
        let a = Tensor::from_vec(&[2, 3], (0..6).map(f64::from).collect()).unwrap();
        let b = Tensor::from_vec(&[2, 5], (10..20).map(f64::from).collect()).unwrap();
        let c = Tensor::concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.shape(), &[2, 8]);
        assert_eq!(&c.data()[..8], &[0.0, 1.0, 2.0, 10.0, 11.0, 12.0, 13.0, 14.0]);
        assert_eq!(c.slice(1, 0..3).unwrap(), a);
        assert_eq!(c.slice(1, 3..8).unwrap(), b);
        assert!(Tensor::concat(&[&a, &b], 0).is_err());
    }

    #[test]
    fn shape_errors() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        assert!(a.matmul(&b).is_err());
        assert!(a.add(&Tensor::zeros(&[3, 2])).is_err());
        assert!(Tensor::from_vec(&[2, 2], vec![1.0]).is_err());
        assert!(a.slice(1, 2..4).is_err());
    }

    proptest! {
        #[test]
        fn transpose_of_product(vals in proptest::collection::vec(-3.0f64..3.0, 12)) {
            let a = Tensor::from_vec(&[3, 2], vals[..6].to_vec()).unwrap();
            let b = Tensor::from_vec(&[2, 3], vals[6..].to_vec()).unwrap();
            let lhs = a.matmul(&b).unwrap().transpose().unwrap();
            let rhs = b.transpose().unwrap().matmul(&a.transpose().unwrap()).unwrap();
            for (x, y) in lhs.data().iter().zip(rhs.data()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
