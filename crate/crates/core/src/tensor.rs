//! Dense row-major tensors.
//!
//! Feature maps are stored channels-first as `[C, H, W]`; token sequences as
//! `[N, C]`. There is no batch axis: batches are processed sample by sample and
//! gradients accumulated.

use crate::scalar::Scalar;
use rand::Rng;
use rand_distr::StandardNormal;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Self {
        let shape = shape.into();
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} does not match {} elements",
            data.len()
        );
        Tensor { shape, data }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; n],
        }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> T) -> Self {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: (0..n).map(&mut f).collect(),
        }
    }

    /// Gaussian entries with the given standard deviation.
    pub fn randn<R: Rng + ?Sized>(shape: impl Into<Vec<usize>>, std: f64, rng: &mut R) -> Self {
        Self::from_fn(shape, |_| T::lit(rng.sample::<f64, _>(StandardNormal) * std))
    }

    /// Uniform entries in `[lo, hi)`.
    pub fn uniform<R: Rng + ?Sized>(
        shape: impl Into<Vec<usize>>,
        lo: f64,
        hi: f64,
        rng: &mut R,
    ) -> Self {
        Self::from_fn(shape, |_| T::lit(rng.gen_range(lo..hi)))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        assert_eq!(shape.iter().product::<usize>(), self.data.len());
        self.shape = shape;
        self
    }

    /// `[rows, cols]` of a 2-D tensor.
    pub fn dims2(&self) -> (usize, usize) {
        assert_eq!(self.shape.len(), 2, "expected 2-D tensor, got {:?}", self.shape);
        (self.shape[0], self.shape[1])
    }

    /// `[C, H, W]` of a 3-D tensor.
    pub fn dims3(&self) -> (usize, usize, usize) {
        assert_eq!(self.shape.len(), 3, "expected 3-D tensor, got {:?}", self.shape);
        (self.shape[0], self.shape[1], self.shape[2])
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!(self.shape, other.shape, "zip_map shape mismatch");
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, s: T) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// 2-D transpose.
    pub fn transpose(&self) -> Self {
        let (r, c) = self.dims2();
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::new([c, r], out)
    }

    /// Plain (non-differentiable) 2-D product `op(self) * op(other)`.
    pub fn matmul(&self, other: &Self, trans_a: bool, trans_b: bool) -> Self {
        let (m, ka) = mat_dims(self, trans_a);
        let (kb, n) = mat_dims(other, trans_b);
        assert_eq!(ka, kb, "matmul inner dims {ka} vs {kb}");
        let mut out = vec![T::zero(); m * n];
        gemm_into(self, trans_a, other, trans_b, &mut out, T::zero());
        Tensor::new([m, n], out)
    }

    pub fn to_f64(&self) -> Tensor<f64> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v.as_f64()).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}

/// Logical `(rows, cols)` of a 2-D tensor after an optional transpose.
pub(crate) fn mat_dims<T: Scalar>(t: &Tensor<T>, trans: bool) -> (usize, usize) {
    let (r, c) = t.dims2();
    if trans {
        (c, r)
    } else {
        (r, c)
    }
}

/// `out = op(a) * op(b) + beta * out`, `out` row-major `[m, n]`.
pub(crate) fn gemm_into<T: Scalar>(
    a: &Tensor<T>,
    trans_a: bool,
    b: &Tensor<T>,
    trans_b: bool,
    out: &mut [T],
    beta: T,
) {
    let (m, k) = mat_dims(a, trans_a);
    let (k2, n) = mat_dims(b, trans_b);
    assert_eq!(k, k2);
    assert_eq!(out.len(), m * n);
    let (_, ac) = a.dims2();
    let (_, bc) = b.dims2();
    let (rsa, csa) = if trans_a { (1, ac as isize) } else { (ac as isize, 1) };
    let (rsb, csb) = if trans_b { (1, bc as isize) } else { (bc as isize, 1) };
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in out.iter_mut() {
            *v *= beta;
        }
        return;
    }
    T::gemm(
        m,
        k,
        n,
        T::one(),
        a.data(),
        rsa,
        csa,
        b.data(),
        rsb,
        csb,
        beta,
        out,
        n as isize,
        1,
    );
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_matches_naive_with_transposes() {
        let a = Tensor::<f64>::from_fn([2, 3], |i| i as f64 + 1.0);
        let b = Tensor::<f64>::from_fn([3, 2], |i| (i as f64) * 0.5 - 1.0);
        let c = a.matmul(&b, false, false);
        for i in 0..2 {
            for j in 0..2 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += a.data()[i * 3 + k] * b.data()[k * 2 + j];
                }
                assert!((c.data()[i * 2 + j] - s).abs() < 1e-12);
            }
        }
        let ct = b.transpose().matmul(&a.transpose(), false, false);
        assert_eq!(ct, c.transpose());
        let c2 = a.transpose().matmul(&b.transpose(), true, true);
        assert_eq!(c2, c);
    }
}
