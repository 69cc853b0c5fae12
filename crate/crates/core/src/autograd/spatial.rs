//! Operations on channels-first feature maps `[C, H, W]`.

use super::Var;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use std::rc::Rc;

/// Upper bound on im2col buffer elements per chunk.
const COL_BUDGET: usize = 1 << 22;

fn conv_output_rows_per_chunk(cin: usize, k: usize, height: usize, width: usize) -> usize {
    let per_row = (cin * k * k * width).max(1);
    (COL_BUDGET / per_row).clamp(1, height.max(1))
}

/// Fills `col[(ci*k*k + ky*k + kx), (r - r0) * W + x]` for output rows `r0..r1`.
fn im2col<T: Scalar>(
    x: &[T],
    (cin, h, w): (usize, usize, usize),
    k: usize,
    r0: usize,
    r1: usize,
    col: &mut [T],
) {
    let pad = (k / 2) as isize;
    let len = (r1 - r0) * w;
    for ci in 0..cin {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut col[row * len..(row + 1) * len];
                for (ri, r) in (r0..r1).enumerate() {
                    let sy = r as isize + ky as isize - pad;
                    let out_row = &mut dst[ri * w..(ri + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    let shift = kx as isize - pad;
                    for (xo, o) in out_row.iter_mut().enumerate() {
                        let sx = xo as isize + shift;
                        *o = if sx < 0 || sx >= w as isize {
                            T::zero()
                        } else {
                            src[sx as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Scalar>(
    col: &[T],
    (cin, h, w): (usize, usize, usize),
    k: usize,
    r0: usize,
    r1: usize,
    dx: &mut [T],
) {
    let pad = (k / 2) as isize;
    let len = (r1 - r0) * w;
    for ci in 0..cin {
        let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &col[row * len..(row + 1) * len];
                for (ri, r) in (r0..r1).enumerate() {
                    let sy = r as isize + ky as isize - pad;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    let shift = kx as isize - pad;
                    for (xo, &v) in src[ri * w..(ri + 1) * w].iter().enumerate() {
                        let sx = xo as isize + shift;
                        if sx >= 0 && sx < w as isize {
                            dst[sx as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Per-axis sampling plan of half-pixel bilinear resizing.
#[derive(Clone, Debug)]
pub struct ResizePlan<T> {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
    pub frac: Vec<T>,
}

impl<T: Scalar> ResizePlan<T> {
    pub fn new(input: usize, output: usize) -> Self {
        let scale = input as f64 / output as f64;
        let mut lo = Vec::with_capacity(output);
        let mut hi = Vec::with_capacity(output);
        let mut frac = Vec::with_capacity(output);
        for o in 0..output {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let l = src.floor() as usize;
            let hgh = (l + 1).min(input - 1);
            lo.push(l);
            hi.push(hgh);
            frac.push(T::lit(src - l as f64));
        }
        ResizePlan { lo, hi, frac }
    }
}

impl<'g, T: Scalar> Var<'g, T> {
    /// Zero-padded "same" convolution with odd square kernel.
    /// `weight: [Cout, Cin, k, k]`, `bias: [Cout]`.
    pub fn conv2d(&self, weight: &Var<'g, T>, bias: Option<&Var<'g, T>>) -> Var<'g, T> {
        let (cin, h, w) = self.value().dims3();
        let ws = weight.shape().to_vec();
        assert_eq!(ws.len(), 4, "conv weight must be 4-D");
        let (cout, k) = (ws[0], ws[2]);
        assert_eq!(ws[1], cin, "conv input channels {cin} vs weight {ws:?}");
        assert!(k % 2 == 1 && ws[3] == k, "conv kernel must be odd and square");
        let hw = h * w;
        let ckk = cin * k * k;
        let rows = conv_output_rows_per_chunk(cin, k, h, w);
        let mut out = vec![T::zero(); cout * hw];
        let mut col = vec![T::zero(); ckk * rows * w];
        let xd = self.value().data();
        let wd = weight.value().data();
        let mut r0 = 0;
        while r0 < h {
            let r1 = (r0 + rows).min(h);
            let len = (r1 - r0) * w;
            im2col(xd, (cin, h, w), k, r0, r1, &mut col[..ckk * len]);
            T::gemm(
                cout,
                ckk,
                len,
                T::one(),
                wd,
                ckk as isize,
                1,
                &col[..ckk * len],
                len as isize,
                1,
                T::zero(),
                &mut out[r0 * w..],
                hw as isize,
                1,
            );
            r0 = r1;
        }
        if let Some(b) = bias {
            assert_eq!(b.shape(), [cout]);
            for (plane, &bv) in out.chunks_mut(hw).zip(b.value().data()) {
                for v in plane {
                    *v += bv;
                }
            }
        }
        let x_rc = self.value_rc();
        let w_rc = weight.value_rc();
        let mut inputs = vec![self, weight];
        if let Some(b) = bias {
            inputs.push(b);
        }
        self.graph.record(
            Tensor::new([cout, h, w], out),
            &inputs,
            move |g, needs| {
                let gd = g.data();
                let xd = x_rc.data();
                let wd = w_rc.data();
                let mut dw = vec![T::zero(); cout * ckk];
                let mut dx = needs[0].then(|| vec![T::zero(); cin * hw]);
                let mut col = vec![T::zero(); ckk * rows * w];
                let mut dcol = dx.as_ref().map(|_| vec![T::zero(); ckk * rows * w]);
                let mut r0 = 0;
                while r0 < h {
                    let r1 = (r0 + rows).min(h);
                    let len = (r1 - r0) * w;
                    if needs[1] {
                        im2col(xd, (cin, h, w), k, r0, r1, &mut col[..ckk * len]);
                        T::gemm(
                            cout,
                            len,
                            ckk,
                            T::one(),
                            &gd[r0 * w..],
                            hw as isize,
                            1,
                            &col[..ckk * len],
                            1,
                            len as isize,
                            T::one(),
                            &mut dw,
                            ckk as isize,
                            1,
                        );
                    }
                    if let (Some(dx), Some(dcol)) = (dx.as_mut(), dcol.as_mut()) {
                        T::gemm(
                            ckk,
                            cout,
                            len,
                            T::one(),
                            wd,
                            1,
                            ckk as isize,
                            &gd[r0 * w..],
                            hw as isize,
                            1,
                            T::zero(),
                            &mut dcol[..ckk * len],
                            len as isize,
                            1,
                        );
                        col2im_add(&dcol[..ckk * len], (cin, h, w), k, r0, r1, dx);
                    }
                    r0 = r1;
                }
                let mut grads = vec![
                    dx.map(|d| Tensor::new([cin, h, w], d)),
                    needs[1].then(|| Tensor::new([cout, cin, k, k], dw)),
                ];
                if needs.len() == 3 {
                    grads.push(needs[2].then(|| {
                        Tensor::new(
                            [cout],
                            gd.chunks(hw)
                                .map(|p| p.iter().fold(T::zero(), |a, &v| a + v))
                                .collect(),
                        )
                    }));
                }
                grads
            },
        )
    }

    /// Group normalization over `[C, H, W]` with per-channel affine.
    pub fn group_norm(
        &self,
        groups: usize,
        gamma: &Var<'g, T>,
        beta: &Var<'g, T>,
        eps: T,
    ) -> Var<'g, T> {
        let (c, h, w) = self.value().dims3();
        assert!(groups > 0 && c % groups == 0, "channels {c} not divisible by {groups}");
        let hw = h * w;
        let block = c / groups * hw;
        let m = T::from_usize_lossy(block);
        let x = self.value().data();
        let mut xhat = vec![T::zero(); c * hw];
        let mut inv_std = vec![T::zero(); groups];
        for gi in 0..groups {
            let src = &x[gi * block..(gi + 1) * block];
            let mean = src.iter().fold(T::zero(), |a, &v| a + v) / m;
            let var = src
                .iter()
                .fold(T::zero(), |a, &v| a + (v - mean) * (v - mean))
                / m;
            let is = T::one() / (var + eps).sqrt();
            inv_std[gi] = is;
            for (o, &v) in xhat[gi * block..(gi + 1) * block].iter_mut().zip(src) {
                *o = (v - mean) * is;
            }
        }
        let gm = gamma.value().data();
        let bt = beta.value().data();
        let mut out = xhat.clone();
        for (ch, plane) in out.chunks_mut(hw).enumerate() {
            for v in plane {
                *v = *v * gm[ch] + bt[ch];
            }
        }
        let gamma_rc = gamma.value_rc();
        self.graph.record(
            Tensor::new([c, h, w], out),
            &[self, gamma, beta],
            move |g, needs| {
                let gd = g.data();
                let gm = gamma_rc.data();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for ch in 0..c {
                    for i in ch * hw..(ch + 1) * hw {
                        dgamma[ch] += gd[i] * xhat[i];
                        dbeta[ch] += gd[i];
                    }
                }
                let dx = needs[0].then(|| {
                    let mut dx = vec![T::zero(); c * hw];
                    let cpg = c / groups;
                    for gi in 0..groups {
                        let mut s1 = T::zero();
                        let mut s2 = T::zero();
                        for ch in gi * cpg..(gi + 1) * cpg {
                            for i in ch * hw..(ch + 1) * hw {
                                let d = gd[i] * gm[ch];
                                s1 += d;
                                s2 += d * xhat[i];
                            }
                        }
                        let scale = inv_std[gi] / m;
                        for ch in gi * cpg..(gi + 1) * cpg {
                            for i in ch * hw..(ch + 1) * hw {
                                let d = gd[i] * gm[ch];
                                dx[i] = scale * (m * d - s1 - xhat[i] * s2);
                            }
                        }
                    }
                    Tensor::new([c, h, w], dx)
                });
                vec![
                    dx,
                    needs[1].then(|| Tensor::new([c], dgamma)),
                    needs[2].then(|| Tensor::new([c], dbeta)),
                ]
            },
        )
    }

    /// 2×2 max pooling, stride 2. Requires even spatial dims.
    pub fn max_pool2(&self) -> Var<'g, T> {
        let (c, h, w) = self.value().dims3();
        assert!(h % 2 == 0 && w % 2 == 0, "max_pool2 needs even dims, got {h}x{w}");
        let (oh, ow) = (h / 2, w / 2);
        let x = self.value().data();
        let mut out = vec![T::zero(); c * oh * ow];
        let mut arg = vec![0usize; c * oh * ow];
        for ch in 0..c {
            for y in 0..oh {
                for xo in 0..ow {
                    let base = ch * h * w;
                    let cands = [
                        base + 2 * y * w + 2 * xo,
                        base + 2 * y * w + 2 * xo + 1,
                        base + (2 * y + 1) * w + 2 * xo,
                        base + (2 * y + 1) * w + 2 * xo + 1,
                    ];
                    let mut best = cands[0];
                    for &ci in &cands[1..] {
                        if x[ci] > x[best] {
                            best = ci;
                        }
                    }
                    let o = (ch * oh + y) * ow + xo;
                    out[o] = x[best];
                    arg[o] = best;
                }
            }
        }
        self.graph
            .record(Tensor::new([c, oh, ow], out), &[self], move |g, _| {
                let mut dx = vec![T::zero(); c * h * w];
                for (&a, &v) in arg.iter().zip(g.data()) {
                    dx[a] += v;
                }
                vec![Some(Tensor::new([c, h, w], dx))]
            })
    }

    /// Half-pixel bilinear resize to `out_h × out_w`.
    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> Var<'g, T> {
        let (c, h, w) = self.value().dims3();
        if (h, w) == (out_h, out_w) {
            return self.clone();
        }
        let py = ResizePlan::<T>::new(h, out_h);
        let px = ResizePlan::<T>::new(w, out_w);
        let x = self.value().data();
        let mut out = vec![T::zero(); c * out_h * out_w];
        for ch in 0..c {
            let plane = &x[ch * h * w..(ch + 1) * h * w];
            for oy in 0..out_h {
                let (y0, y1, fy) = (py.lo[oy], py.hi[oy], py.frac[oy]);
                for ox in 0..out_w {
                    let (x0, x1, fx) = (px.lo[ox], px.hi[ox], px.frac[ox]);
                    let top = plane[y0 * w + x0] * (T::one() - fx) + plane[y0 * w + x1] * fx;
                    let bot = plane[y1 * w + x0] * (T::one() - fx) + plane[y1 * w + x1] * fx;
                    out[(ch * out_h + oy) * out_w + ox] = top * (T::one() - fy) + bot * fy;
                }
            }
        }
        self.graph
            .record(Tensor::new([c, out_h, out_w], out), &[self], move |g, _| {
                let gd = g.data();
                let mut dx = vec![T::zero(); c * h * w];
                for ch in 0..c {
                    let plane = &mut dx[ch * h * w..(ch + 1) * h * w];
                    for oy in 0..out_h {
                        let (y0, y1, fy) = (py.lo[oy], py.hi[oy], py.frac[oy]);
                        for ox in 0..out_w {
                            let (x0, x1, fx) = (px.lo[ox], px.hi[ox], px.frac[ox]);
                            let v = gd[(ch * out_h + oy) * out_w + ox];
                            let top = v * (T::one() - fy);
                            let bot = v * fy;
                            plane[y0 * w + x0] += top * (T::one() - fx);
                            plane[y0 * w + x1] += top * fx;
                            plane[y1 * w + x0] += bot * (T::one() - fx);
                            plane[y1 * w + x1] += bot * fx;
                        }
                    }
                }
                vec![Some(Tensor::new([c, h, w], dx))]
            })
    }

    /// Spatial gather: `out[c, p] = x[c, index[p]]` over flattened pixels,
    /// reshaped to `out_h × out_w`. Used for padding and cropping.
    pub fn gather_pixels(&self, index: Rc<Vec<usize>>, out_h: usize, out_w: usize) -> Var<'g, T> {
        let (c, h, w) = self.value().dims3();
        assert_eq!(index.len(), out_h * out_w);
        let hw = h * w;
        let ohw = out_h * out_w;
        let x = self.value().data();
        let mut out = Vec::with_capacity(c * ohw);
        for ch in 0..c {
            let plane = &x[ch * hw..(ch + 1) * hw];
            out.extend(index.iter().map(|&i| plane[i]));
        }
        self.graph
            .record(Tensor::new([c, out_h, out_w], out), &[self], move |g, _| {
                let mut dx = vec![T::zero(); c * hw];
                for ch in 0..c {
                    let plane = &mut dx[ch * hw..(ch + 1) * hw];
                    for (&i, &v) in index.iter().zip(&g.data()[ch * ohw..(ch + 1) * ohw]) {
                        plane[i] += v;
                    }
                }
                vec![Some(Tensor::new([c, h, w], dx))]
            })
    }

    /// Reflect-pads bottom/right to `out_h × out_w`.
    pub fn pad_reflect(&self, out_h: usize, out_w: usize) -> Var<'g, T> {
        let (_, h, w) = self.value().dims3();
        if (h, w) == (out_h, out_w) {
            return self.clone();
        }
        let mut idx = Vec::with_capacity(out_h * out_w);
        for y in 0..out_h {
            let sy = reflect_index(y as isize, h);
            for x in 0..out_w {
                idx.push(sy * w + reflect_index(x as isize, w));
            }
        }
        self.gather_pixels(Rc::new(idx), out_h, out_w)
    }

    /// Top-left `out_h × out_w` crop.
    pub fn crop(&self, out_h: usize, out_w: usize) -> Var<'g, T> {
        let (_, h, w) = self.value().dims3();
        assert!(out_h <= h && out_w <= w);
        if (h, w) == (out_h, out_w) {
            return self.clone();
        }
        let idx = (0..out_h)
            .flat_map(|y| (0..out_w).map(move |x| y * w + x))
            .collect();
        self.gather_pixels(Rc::new(idx), out_h, out_w)
    }

    /// `[C, H, W]` → tokens `[H*W, C]` (row-major pixel order).
    pub fn map_to_tokens(&self) -> Var<'g, T> {
        let (c, h, w) = self.value().dims3();
        self.reshape([c, h * w]).transpose()
    }

    /// Tokens `[H*W, C]` → `[C, H, W]`.
    pub fn tokens_to_map(&self, h: usize, w: usize) -> Var<'g, T> {
        let (n, c) = self.value().dims2();
        assert_eq!(n, h * w, "token count {n} vs {h}x{w}");
        self.transpose().reshape([c, h, w])
    }
}

/// Symmetric reflection without edge repeat (`-1 → 1`), periodic for large
/// excursions.
pub(crate) fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

#[cfg(test)]
mod tests {
    use super::super::testing::check_op;
    use super::super::Graph;
    use super::*;
    use rand::SeedableRng;

    fn rnd(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Tensor::uniform(shape.to_vec(), -1.0, 1.0, &mut rng)
    }

    fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>) -> Tensor<f64> {
        let (cin, h, wd) = x.dims3();
        let (cout, k) = (w.shape()[0], w.shape()[2]);
        let p = (k / 2) as isize;
        Tensor::from_fn([cout, h, wd], |i| {
            let (co, y, xx) = (i / (h * wd), (i / wd) % h, i % wd);
            let mut s = 0.0;
            for ci in 0..cin {
                for ky in 0..k {
                    for kx in 0..k {
                        let sy = y as isize + ky as isize - p;
                        let sx = xx as isize + kx as isize - p;
                        if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < wd {
                            s += x.data()[(ci * h + sy as usize) * wd + sx as usize]
                                * w.data()[((co * cin + ci) * k + ky) * k + kx];
                        }
                    }
                }
            }
            s
        })
    }

    #[test]
    fn conv_matches_direct_sum() {
        let x = rnd(&[3, 5, 6], 1);
        let w = rnd(&[4, 3, 3, 3], 2);
        let g = Graph::inference();
        let y = g.constant(x.clone()).conv2d(&g.constant(w.clone()), None);
        let expect = naive_conv(&x, &w);
        for (a, b) in y.value().data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_gradients() {
        check_op(
            vec![rnd(&[2, 4, 5], 3), rnd(&[3, 2, 3, 3], 4), rnd(&[3], 5)],
            |_, v| v[0].conv2d(&v[1], Some(&v[2])),
            1e-6,
        );
        check_op(
            vec![rnd(&[2, 3, 3], 6), rnd(&[1, 2, 1, 1], 7)],
            |_, v| v[0].conv2d(&v[1], None),
            1e-6,
        );
    }

    #[test]
    fn group_norm_gradients_and_statistics() {
        check_op(
            vec![rnd(&[4, 3, 3], 8), rnd(&[4], 9), rnd(&[4], 10)],
            |_, v| v[0].group_norm(2, &v[1], &v[2], 1e-5),
            1e-5,
        );
    }

    #[test]
    fn pool_resize_gather_gradients() {
        check_op(vec![rnd(&[2, 4, 6], 11)], |_, v| v[0].max_pool2(), 1e-6);
        check_op(vec![rnd(&[2, 3, 4], 12)], |_, v| v[0].resize_bilinear(6, 8), 1e-6);
        check_op(vec![rnd(&[1, 4, 4], 13)], |_, v| v[0].pad_reflect(6, 7), 1e-6);
        check_op(vec![rnd(&[2, 3, 4], 14)], |_, v| v[0].map_to_tokens(), 1e-6);
    }

    #[test]
    fn reflect_indices() {
        let got: Vec<usize> = (-3..8).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0, 1]);
    }

    #[test]
    fn bilinear_upsample_preserves_constants_and_ramps() {
        let g = Graph::<f64>::inference();
        let c = g.constant(Tensor::full([1, 4, 4], 0.3)).resize_bilinear(8, 8);
        assert!(c.value().data().iter().all(|&v| (v - 0.3).abs() < 1e-15));
        // f(x) = 2x + 1 sampled at pixel centres.
        let ramp = Tensor::from_fn([1, 4, 4], |i| 2.0 * (i % 4) as f64 + 1.0);
        let up = g.constant(ramp).resize_bilinear(8, 8);
        for y in 0..8 {
            for x in 1..7 {
                // output centre x maps to source (x + 0.5) / 2 - 0.5
                let src = (x as f64 + 0.5) / 2.0 - 0.5;
                let v = up.value().data()[y * 8 + x];
                assert!((v - (2.0 * src + 1.0)).abs() < 1e-12, "x={x}: {v}");
            }
        }
    }
}
