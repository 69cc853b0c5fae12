//! Elementwise, matrix and token-layout operations.

use super::Var;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use std::rc::Rc;

impl<'g, T: Scalar> Var<'g, T> {
    pub fn add(&self, other: &Var<'g, T>) -> Var<'g, T> {
        assert_eq!(self.shape(), other.shape(), "add shape mismatch");
        let mut out = self.value().clone();
        out.add_assign(other.value());
        self.graph.record(out, &[self, other], |g, needs| {
            vec![needs[0].then(|| g.clone()), needs[1].then(|| g.clone())]
        })
    }

    pub fn sub(&self, other: &Var<'g, T>) -> Var<'g, T> {
        assert_eq!(self.shape(), other.shape(), "sub shape mismatch");
        let out = self.value().zip_map(other.value(), |a, b| a - b);
        self.graph.record(out, &[self, other], |g, needs| {
            vec![
                needs[0].then(|| g.clone()),
                needs[1].then(|| g.map(|v| -v)),
            ]
        })
    }

    pub fn mul(&self, other: &Var<'g, T>) -> Var<'g, T> {
        assert_eq!(self.shape(), other.shape(), "mul shape mismatch");
        let out = self.value().zip_map(other.value(), |a, b| a * b);
        let (a, b) = (self.value_rc(), other.value_rc());
        self.graph.record(out, &[self, other], move |g, needs| {
            vec![
                needs[0].then(|| g.zip_map(&b, |g, b| g * b)),
                needs[1].then(|| g.zip_map(&a, |g, a| g * a)),
            ]
        })
    }

    pub fn scale(&self, s: T) -> Var<'g, T> {
        let out = self.value().map(|v| v * s);
        self.graph
            .record(out, &[self], move |g, _| vec![Some(g.map(|v| v * s))])
    }

    /// Broadcast-adds a `[C]` bias to every row of `[N, C]`.
    pub fn add_row_bias(&self, bias: &Var<'g, T>) -> Var<'g, T> {
        let (n, c) = self.value().dims2();
        assert_eq!(bias.shape(), [c], "row bias shape");
        let mut out = self.value().clone();
        let b = bias.value().data();
        for row in out.data_mut().chunks_mut(c) {
            for (o, &bv) in row.iter_mut().zip(b) {
                *o += bv;
            }
        }
        self.graph.record(out, &[self, bias], move |g, needs| {
            let db = needs[1].then(|| {
                let mut acc = vec![T::zero(); c];
                for row in g.data().chunks(c) {
                    for (a, &v) in acc.iter_mut().zip(row) {
                        *a += v;
                    }
                }
                Tensor::new([c], acc)
            });
            let _ = n;
            vec![needs[0].then(|| g.clone()), db]
        })
    }

    /// 2-D matrix product.
    pub fn matmul(&self, other: &Var<'g, T>) -> Var<'g, T> {
        let out = self.value().matmul(other.value(), false, false);
        let (a, b) = (self.value_rc(), other.value_rc());
        self.graph.record(out, &[self, other], move |g, needs| {
            vec![
                needs[0].then(|| g.matmul(&b, false, true)),
                needs[1].then(|| a.matmul(g, true, false)),
            ]
        })
    }

    /// `x W + b` for tokens `[N, in]`, `W: [in, out]`, `b: [out]`.
    pub fn linear(&self, weight: &Var<'g, T>, bias: Option<&Var<'g, T>>) -> Var<'g, T> {
        let y = self.matmul(weight);
        match bias {
            Some(b) => y.add_row_bias(b),
            None => y,
        }
    }

    pub fn transpose(&self) -> Var<'g, T> {
        let out = self.value().transpose();
        self.graph
            .record(out, &[self], |g, _| vec![Some(g.transpose())])
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Var<'g, T> {
        let in_shape = self.shape().to_vec();
        let out = self.value().clone().reshape(shape);
        self.graph.record(out, &[self], move |g, _| {
            vec![Some(g.clone().reshape(in_shape.clone()))]
        })
    }

    pub fn relu(&self) -> Var<'g, T> {
        let out = self.value().map(|v| v.max(T::zero()));
        let x = self.value_rc();
        self.graph.record(out, &[self], move |g, _| {
            vec![Some(g.zip_map(&x, |g, x| if x > T::zero() { g } else { T::zero() }))]
        })
    }

    pub fn sigmoid(&self) -> Var<'g, T> {
        let out = self.value().map(sigmoid);
        let y = Rc::new(out.clone());
        self.graph.record(out, &[self], move |g, _| {
            vec![Some(g.zip_map(&y, |g, y| g * y * (T::one() - y)))]
        })
    }

    pub fn tanh(&self) -> Var<'g, T> {
        let out = self.value().map(|v| v.tanh());
        let y = Rc::new(out.clone());
        self.graph.record(out, &[self], move |g, _| {
            vec![Some(g.zip_map(&y, |g, y| g * (T::one() - y * y)))]
        })
    }

    /// Exact (error-function) GELU.
    pub fn gelu(&self) -> Var<'g, T> {
        let half = T::lit(0.5);
        let inv_sqrt2 = T::lit(std::f64::consts::FRAC_1_SQRT_2);
        let inv_sqrt_2pi = T::lit(1.0 / (2.0 * std::f64::consts::PI).sqrt());
        let out = self
            .value()
            .map(|v| half * v * (T::one() + (v * inv_sqrt2).erf()));
        let x = self.value_rc();
        self.graph.record(out, &[self], move |g, _| {
            vec![Some(g.zip_map(&x, |g, x| {
                let cdf = half * (T::one() + (x * inv_sqrt2).erf());
                let pdf = inv_sqrt_2pi * (-half * x * x).exp();
                g * (cdf + x * pdf)
            }))]
        })
    }

    /// Row-wise `softmax(scale * x)` on `[R, K]`.
    pub fn softmax_rows(&self, scale: T) -> Var<'g, T> {
        let (_, k) = self.value().dims2();
        let mut out = self.value().clone();
        for row in out.data_mut().chunks_mut(k) {
            softmax_in_place(row, scale);
        }
        let y = Rc::new(out.clone());
        self.graph.record(out, &[self], move |g, _| {
            let mut dx = g.clone();
            for (dr, yr) in dx.data_mut().chunks_mut(k).zip(y.data().chunks(k)) {
                let dot = dr.iter().zip(yr).fold(T::zero(), |a, (&g, &y)| a + g * y);
                for (d, &yv) in dr.iter_mut().zip(yr) {
                    *d = scale * yv * (*d - dot);
                }
            }
            vec![Some(dx)]
        })
    }

    /// Columns `[start, start + len)` of a 2-D tensor.
    pub fn slice_cols(&self, start: usize, len: usize) -> Var<'g, T> {
        let (n, c) = self.value().dims2();
        assert!(start + len <= c, "slice_cols out of range");
        let src = self.value().data();
        let mut out = Vec::with_capacity(n * len);
        for r in 0..n {
            out.extend_from_slice(&src[r * c + start..r * c + start + len]);
        }
        self.graph
            .record(Tensor::new([n, len], out), &[self], move |g, _| {
                let mut dx = vec![T::zero(); n * c];
                for r in 0..n {
                    dx[r * c + start..r * c + start + len]
                        .copy_from_slice(&g.data()[r * len..(r + 1) * len]);
                }
                vec![Some(Tensor::new([n, c], dx))]
            })
    }

    /// Concatenates 2-D tensors along columns.
    pub fn concat_cols(parts: &[Var<'g, T>]) -> Var<'g, T> {
        assert!(!parts.is_empty());
        let n = parts[0].value().dims2().0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|p| {
                let (r, c) = p.value().dims2();
                assert_eq!(r, n, "concat_cols row mismatch");
                c
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for r in 0..n {
            for (p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&p.value().data()[r * w..(r + 1) * w]);
            }
        }
        let refs: Vec<&Var<'g, T>> = parts.iter().collect();
        let widths_bw = widths.clone();
        parts[0]
            .graph
            .record(Tensor::new([n, total], out), &refs, move |g, needs| {
                let mut offset = 0;
                widths_bw
                    .iter()
                    .zip(needs)
                    .map(|(&w, &need)| {
                        let start = offset;
                        offset += w;
                        need.then(|| {
                            let mut d = Vec::with_capacity(n * w);
                            for r in 0..n {
                                d.extend_from_slice(
                                    &g.data()[r * total + start..r * total + start + w],
                                );
                            }
                            Tensor::new([n, w], d)
                        })
                    })
                    .collect()
            })
    }

    /// Concatenates along the leading axis (channels of `[C, H, W]`, rows of
    /// `[N, C]`).
    pub fn concat0(parts: &[Var<'g, T>]) -> Var<'g, T> {
        assert!(!parts.is_empty());
        let tail = parts[0].shape()[1..].to_vec();
        let mut lead = 0;
        let mut sizes = Vec::with_capacity(parts.len());
        for p in parts {
            assert_eq!(&p.shape()[1..], tail.as_slice(), "concat0 trailing shape mismatch");
            lead += p.shape()[0];
            sizes.push(p.shape().to_vec());
        }
        let mut data = Vec::new();
        for p in parts {
            data.extend_from_slice(p.value().data());
        }
        let mut shape = vec![lead];
        shape.extend_from_slice(&tail);
        let refs: Vec<&Var<'g, T>> = parts.iter().collect();
        parts[0]
            .graph
            .record(Tensor::new(shape, data), &refs, move |g, needs| {
                let mut offset = 0;
                sizes
                    .iter()
                    .zip(needs)
                    .map(|(s, &need)| {
                        let n: usize = s.iter().product();
                        let start = offset;
                        offset += n;
                        need.then(|| Tensor::new(s.clone(), g.data()[start..start + n].to_vec()))
                    })
                    .collect()
            })
    }

    /// Row gather on `[N, C]`: `out[i] = x[index[i]]`. Backward scatter-adds.
    pub fn gather_rows(&self, index: Rc<Vec<usize>>) -> Var<'g, T> {
        let (n, c) = self.value().dims2();
        let src = self.value().data();
        let mut out = Vec::with_capacity(index.len() * c);
        for &i in index.iter() {
            assert!(i < n, "gather index {i} out of {n}");
            out.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let m = index.len();
        self.graph
            .record(Tensor::new([m, c], out), &[self], move |g, _| {
                let mut dx = vec![T::zero(); n * c];
                for (r, &i) in index.iter().enumerate() {
                    for (d, &v) in dx[i * c..(i + 1) * c]
                        .iter_mut()
                        .zip(&g.data()[r * c..(r + 1) * c])
                    {
                        *d += v;
                    }
                }
                vec![Some(Tensor::new([n, c], dx))]
            })
    }

    /// Row-wise layer normalization on `[N, C]` with affine `gamma`, `beta`.
    pub fn layer_norm(&self, gamma: &Var<'g, T>, beta: &Var<'g, T>, eps: T) -> Var<'g, T> {
        let (n, c) = self.value().dims2();
        assert_eq!(gamma.shape(), [c]);
        assert_eq!(beta.shape(), [c]);
        let cf = T::from_usize_lossy(c);
        let mut xhat = vec![T::zero(); n * c];
        let mut inv_std = vec![T::zero(); n];
        let x = self.value().data();
        for r in 0..n {
            let row = &x[r * c..(r + 1) * c];
            let mean = row.iter().fold(T::zero(), |a, &v| a + v) / cf;
            let var = row
                .iter()
                .fold(T::zero(), |a, &v| a + (v - mean) * (v - mean))
                / cf;
            let is = T::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for (o, &v) in xhat[r * c..(r + 1) * c].iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
        }
        let gm = gamma.value().data();
        let bt = beta.value().data();
        let mut out = xhat.clone();
        for row in out.chunks_mut(c) {
            for ((o, &gv), &bv) in row.iter_mut().zip(gm).zip(bt) {
                *o = *o * gv + bv;
            }
        }
        let gamma_rc = gamma.value_rc();
        self.graph.record(
            Tensor::new([n, c], out),
            &[self, gamma, beta],
            move |g, needs| {
                let gd = g.data();
                let gm = gamma_rc.data();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                let mut dx = vec![T::zero(); n * c];
                for r in 0..n {
                    let gr = &gd[r * c..(r + 1) * c];
                    let xr = &xhat[r * c..(r + 1) * c];
                    let mut sum_dxhat = T::zero();
                    let mut sum_dxhat_x = T::zero();
                    for j in 0..c {
                        dgamma[j] += gr[j] * xr[j];
                        dbeta[j] += gr[j];
                        let dxh = gr[j] * gm[j];
                        sum_dxhat += dxh;
                        sum_dxhat_x += dxh * xr[j];
                    }
                    if needs[0] {
                        for j in 0..c {
                            let dxh = gr[j] * gm[j];
                            dx[r * c + j] =
                                inv_std[r] / cf * (cf * dxh - sum_dxhat - xr[j] * sum_dxhat_x);
                        }
                    }
                }
                vec![
                    needs[0].then(|| Tensor::new([n, c], dx)),
                    needs[1].then(|| Tensor::new([c], dgamma)),
                    needs[2].then(|| Tensor::new([c], dbeta)),
                ]
            },
        )
    }

    pub fn sum_all(&self) -> Var<'g, T> {
        let shape = self.shape().to_vec();
        let out = Tensor::new([1], vec![self.value().sum()]);
        self.graph.record(out, &[self], move |g, _| {
            vec![Some(Tensor::full(shape.clone(), g.data()[0]))]
        })
    }

    pub fn mean_all(&self) -> Var<'g, T> {
        let n = T::from_usize_lossy(self.value().len().max(1));
        self.sum_all().scale(T::one() / n)
    }
}

pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T], scale: T) {
    let mut max = T::neg_infinity();
    for v in row.iter_mut() {
        *v *= scale;
        max = max.max(*v);
    }
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

#[cfg(test)]
mod tests {
    use super::super::testing::check_op;
    use super::super::{Graph, Var};
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use std::rc::Rc;

    fn rnd(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Tensor::uniform(shape.to_vec(), -1.0, 1.0, &mut rng)
    }

    #[test]
    fn matmul_and_linear_gradients() {
        check_op(
            vec![rnd(&[3, 4], 1), rnd(&[4, 2], 2), rnd(&[2], 3)],
            |_, v| v[0].linear(&v[1], Some(&v[2])),
            1e-6,
        );
    }

    #[test]
    fn nonlinearity_gradients() {
        check_op(vec![rnd(&[2, 5], 4)], |_, v| v[0].gelu(), 1e-6);
        check_op(vec![rnd(&[2, 5], 5)], |_, v| v[0].sigmoid(), 1e-6);
        check_op(vec![rnd(&[2, 5], 6)], |_, v| v[0].tanh(), 1e-6);
        check_op(vec![rnd(&[3, 4], 7)], |_, v| v[0].softmax_rows(0.7), 1e-6);
    }

    #[test]
    fn layout_gradients() {
        check_op(
            vec![rnd(&[3, 5], 8), rnd(&[3, 2], 9)],
            |_, v| Var::concat_cols(&[v[0].slice_cols(1, 3), v[1].clone()]).transpose(),
            1e-6,
        );
        check_op(
            vec![rnd(&[4, 3], 10)],
            |_, v| v[0].gather_rows(Rc::new(vec![3, 0, 0, 2, 1])),
            1e-6,
        );
        check_op(
            vec![rnd(&[2, 3], 11), rnd(&[1, 3], 12)],
            |_, v| Var::concat0(&[v[0].clone(), v[1].clone()]).reshape([3, 3]),
            1e-6,
        );
    }

    #[test]
    fn layer_norm_gradients_and_statistics() {
        check_op(
            vec![rnd(&[3, 6], 13), rnd(&[6], 14), rnd(&[6], 15)],
            |_, v| v[0].layer_norm(&v[1], &v[2], 1e-5),
            1e-5,
        );
        let g = Graph::<f64>::inference();
        let x = g.constant(rnd(&[2, 8], 16));
        let y = x.layer_norm(&g.constant(Tensor::ones([8])), &g.constant(Tensor::zeros([8])), 1e-12);
        for row in y.value().data().chunks(8) {
            let mean: f64 = row.iter().sum::<f64>() / 8.0;
            let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn inference_graph_records_nothing() {
        let g = Graph::<f32>::inference();
        let x = g.leaf(Tensor::ones([2, 2]));
        let y = x.relu().sum_all();
        assert!(!y.is_tracked());
        assert!(g.backward(&y).get(&x).is_none());
    }
}
