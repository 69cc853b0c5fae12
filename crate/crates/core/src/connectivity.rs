//! Connectivity attention (C-MSA).
//!
//! The token map is split into non-overlapping 3×3 windows. For every window
//! a linear head on the mean query predicts four step offsets; walking them
//! cumulatively forwards and backwards from the window centre gives a chain of
//! nine sampling positions that can follow a road centreline. Keys and values
//! are bilinearly sampled from a key-source map at those positions and each
//! of the window's nine queries attends over the nine deformed keys.
//!
//! Positions are `[y, x]` in pixel coordinates with pixel centres on integers.

use crate::autograd::Var;
use crate::error::{dim_err, Result};
use crate::nn::{Ctx, Linear, Module, ParamSpec};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use std::rc::Rc;

pub const WINDOW: usize = 3;
pub const WINDOW_TOKENS: usize = WINDOW * WINDOW;
/// Offset steps per direction; with the centre this gives 1 + 4 + 4 keys.
pub const CHAIN_STEPS: usize = 4;
pub const CHAIN_POINTS: usize = 2 * CHAIN_STEPS + 1;
pub const DEFAULT_OFFSET_BOUND: f64 = 2.0;

/// Non-overlapping 3×3 tiling of an `H × W` grid, reflect-padded to
/// multiples of three.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowPartition {
    pub height: usize,
    pub width: usize,
    pub padded_height: usize,
    pub padded_width: usize,
    /// Window centres `[y, x]`, row-major over windows.
    pub centers: Vec<[f64; 2]>,
    /// Source pixel of every window slot, window-major (`j * 9 + slot`).
    pub gather: Rc<Vec<usize>>,
    /// Window-major row of every source pixel.
    pub scatter: Rc<Vec<usize>>,
}

impl WindowPartition {
    pub fn new(height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0);
        let ph = height.div_ceil(WINDOW) * WINDOW;
        let pw = width.div_ceil(WINDOW) * WINDOW;
        let (wy, wx) = (ph / WINDOW, pw / WINDOW);
        let mut centers = Vec::with_capacity(wy * wx);
        let mut gather = Vec::with_capacity(wy * wx * WINDOW_TOKENS);
        let mut scatter = vec![0usize; height * width];
        for a in 0..wy {
            for b in 0..wx {
                let j = a * wx + b;
                centers.push([(a * WINDOW + 1) as f64, (b * WINDOW + 1) as f64]);
                for ky in 0..WINDOW {
                    for kx in 0..WINDOW {
                        let (y, x) = (a * WINDOW + ky, b * WINDOW + kx);
                        let sy = crate::autograd::reflect_index(y as isize, height);
                        let sx = crate::autograd::reflect_index(x as isize, width);
                        gather.push(sy * width + sx);
                        if y < height && x < width {
                            scatter[y * width + x] = j * WINDOW_TOKENS + ky * WINDOW + kx;
                        }
                    }
                }
            }
        }
        WindowPartition {
            height,
            width,
            padded_height: ph,
            padded_width: pw,
            centers,
            gather: Rc::new(gather),
            scatter: Rc::new(scatter),
        }
    }

    pub fn num_windows(&self) -> usize {
        self.centers.len()
    }
}

/// Offset chain of one window: steps `Δp_1..Δp_4` and the nine positions
/// `c - Σ_{t≤4}Δp_t, …, c - Δp_1, c, c + Δp_1, …, c + Σ_{t≤4}Δp_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct OffsetChain {
    pub center: [f64; 2],
    pub steps: [[f64; 2]; CHAIN_STEPS],
}

impl OffsetChain {
    /// Builds a chain from raw projection outputs (`[dy1, dx1, …, dy4, dx4]`),
    /// squashing each component with `bound * tanh(raw / bound)`.
    pub fn from_raw(center: [f64; 2], raw: &[f64], bound: f64) -> Self {
        assert_eq!(raw.len(), 2 * CHAIN_STEPS);
        let mut steps = [[0.0; 2]; CHAIN_STEPS];
        for (t, step) in steps.iter_mut().enumerate() {
            for d in 0..2 {
                step[d] = bound * (raw[2 * t + d] / bound).tanh();
            }
        }
        OffsetChain { center, steps }
    }

    pub fn positions(&self) -> [[f64; 2]; CHAIN_POINTS] {
        chain_positions(self.center, &self.steps)
    }
}

fn chain_positions<T: Scalar>(center: [T; 2], steps: &[[T; 2]]) -> [[T; 2]; CHAIN_POINTS] {
    let mut out = [center; CHAIN_POINTS];
    let mut acc = [T::zero(); 2];
    for (s, step) in steps.iter().enumerate() {
        acc[0] += step[0];
        acc[1] += step[1];
        out[CHAIN_STEPS + 1 + s] = [center[0] + acc[0], center[1] + acc[1]];
        out[CHAIN_STEPS - 1 - s] = [center[0] - acc[0], center[1] - acc[1]];
    }
    out
}

/// Bilinear interpolation weights of a clamped position.
#[derive(Clone, Copy, Debug)]
struct Bilinear<T> {
    y0: usize,
    y1: usize,
    x0: usize,
    x1: usize,
    fy: T,
    fx: T,
    /// Whether the coordinate was inside the map (clamped coordinates get no
    /// position gradient).
    live_y: bool,
    live_x: bool,
}

impl<T: Scalar> Bilinear<T> {
    fn new(pos: [T; 2], h: usize, w: usize) -> Self {
        let max_y = T::from_usize_lossy(h - 1);
        let max_x = T::from_usize_lossy(w - 1);
        let live_y = pos[0] > T::zero() && pos[0] < max_y;
        let live_x = pos[1] > T::zero() && pos[1] < max_x;
        let py = pos[0].max(T::zero()).min(max_y);
        let px = pos[1].max(T::zero()).min(max_x);
        let y0 = py.floor().to_usize().unwrap_or(0).min(h - 1);
        let x0 = px.floor().to_usize().unwrap_or(0).min(w - 1);
        Bilinear {
            y0,
            y1: (y0 + 1).min(h - 1),
            x0,
            x1: (x0 + 1).min(w - 1),
            fy: py - T::from_usize_lossy(y0),
            fx: px - T::from_usize_lossy(x0),
            live_y,
            live_x,
        }
    }
}

/// Samples `tokens` (`[H*W, C]`, row-major grid) at each position with
/// border clamping. Returns `[positions, C]`.
pub fn sample_bilinear<T: Scalar>(
    tokens: &Tensor<T>,
    height: usize,
    width: usize,
    positions: &[[T; 2]],
) -> Tensor<T> {
    let (n, c) = tokens.dims2();
    assert_eq!(n, height * width);
    let src = tokens.data();
    let mut out = vec![T::zero(); positions.len() * c];
    for (row, &p) in out.chunks_mut(c).zip(positions) {
        let b = Bilinear::new(p, height, width);
        sample_into(src, c, width, &b, row);
    }
    Tensor::new([positions.len(), c], out)
}

#[inline]
fn sample_into<T: Scalar>(src: &[T], c: usize, width: usize, b: &Bilinear<T>, out: &mut [T]) {
    let one = T::one();
    let w00 = (one - b.fy) * (one - b.fx);
    let w01 = (one - b.fy) * b.fx;
    let w10 = b.fy * (one - b.fx);
    let w11 = b.fy * b.fx;
    let r00 = &src[(b.y0 * width + b.x0) * c..][..c];
    let r01 = &src[(b.y0 * width + b.x1) * c..][..c];
    let r10 = &src[(b.y1 * width + b.x0) * c..][..c];
    let r11 = &src[(b.y1 * width + b.x1) * c..][..c];
    for k in 0..c {
        out[k] = w00 * r00[k] + w01 * r01[k] + w10 * r10[k] + w11 * r11[k];
    }
}

/// Mean over consecutive groups of `group` rows: `[G*group, C] → [G, C]`.
pub(crate) fn group_mean_rows<'g, T: Scalar>(x: &Var<'g, T>, group: usize) -> Var<'g, T> {
    let (n, c) = x.value().dims2();
    assert_eq!(n % group, 0);
    let groups = n / group;
    let inv = T::one() / T::from_usize_lossy(group);
    let mut out = vec![T::zero(); groups * c];
    for (gi, o) in out.chunks_mut(c).enumerate() {
        for r in 0..group {
            for (a, &v) in o.iter_mut().zip(&x.value().data()[(gi * group + r) * c..][..c]) {
                *a += v;
            }
        }
        for a in o.iter_mut() {
            *a *= inv;
        }
    }
    x.graph()
        .record(Tensor::new([groups, c], out), &[x], move |g, _| {
            let mut dx = vec![T::zero(); n * c];
            for gi in 0..groups {
                let gr = &g.data()[gi * c..(gi + 1) * c];
                for r in 0..group {
                    for (d, &v) in dx[(gi * group + r) * c..][..c].iter_mut().zip(gr) {
                        *d = v * inv;
                    }
                }
            }
            vec![Some(Tensor::new([n, c], dx))]
        })
}

/// Differentiable deformed sampling. `source`: `[H*W, C]` tokens;
/// `steps`: `[N_w, 8]` bounded step offsets. Returns `[N_w * 9, C]` rows in
/// chain order per window.
pub(crate) fn deform_sample<'g, T: Scalar>(
    source: &Var<'g, T>,
    height: usize,
    width: usize,
    steps: &Var<'g, T>,
    centers: &[[f64; 2]],
) -> Var<'g, T> {
    let (n, c) = source.value().dims2();
    assert_eq!(n, height * width, "key source size mismatch");
    let (nw, k) = steps.value().dims2();
    assert_eq!(k, 2 * CHAIN_STEPS);
    assert_eq!(nw, centers.len());
    let sd = steps.value().data();
    let mut plans = Vec::with_capacity(nw * CHAIN_POINTS);
    for (j, ctr) in centers.iter().enumerate() {
        let row = &sd[j * k..(j + 1) * k];
        let st: Vec<[T; 2]> = (0..CHAIN_STEPS).map(|t| [row[2 * t], row[2 * t + 1]]).collect();
        let pos = chain_positions([T::lit(ctr[0]), T::lit(ctr[1])], &st);
        plans.extend(pos.iter().map(|&p| Bilinear::new(p, height, width)));
    }
    let src = source.value().data();
    let mut out = vec![T::zero(); nw * CHAIN_POINTS * c];
    for (row, b) in out.chunks_mut(c).zip(&plans) {
        sample_into(src, c, width, b, row);
    }
    let src_rc = source.value_rc();
    source.graph().record(
        Tensor::new([nw * CHAIN_POINTS, c], out),
        &[source, steps],
        move |g, needs| {
            let gd = g.data();
            let src = src_rc.data();
            let one = T::one();
            let mut dsrc = needs[0].then(|| vec![T::zero(); n * c]);
            let mut dsteps = needs[1].then(|| vec![T::zero(); nw * k]);
            for (idx, b) in plans.iter().enumerate() {
                let gr = &gd[idx * c..(idx + 1) * c];
                let i00 = (b.y0 * width + b.x0) * c;
                let i01 = (b.y0 * width + b.x1) * c;
                let i10 = (b.y1 * width + b.x0) * c;
                let i11 = (b.y1 * width + b.x1) * c;
                if let Some(ds) = dsrc.as_mut() {
                    let w00 = (one - b.fy) * (one - b.fx);
                    let w01 = (one - b.fy) * b.fx;
                    let w10 = b.fy * (one - b.fx);
                    let w11 = b.fy * b.fx;
                    for ch in 0..c {
                        ds[i00 + ch] += w00 * gr[ch];
                        ds[i01 + ch] += w01 * gr[ch];
                        ds[i10 + ch] += w10 * gr[ch];
                        ds[i11 + ch] += w11 * gr[ch];
                    }
                }
                if let Some(dst) = dsteps.as_mut() {
                    let (mut dpy, mut dpx) = (T::zero(), T::zero());
                    for ch in 0..c {
                        let (v00, v01, v10, v11) =
                            (src[i00 + ch], src[i01 + ch], src[i10 + ch], src[i11 + ch]);
                        dpy += gr[ch] * ((one - b.fx) * (v10 - v00) + b.fx * (v11 - v01));
                        dpx += gr[ch] * ((one - b.fy) * (v01 - v00) + b.fy * (v11 - v10));
                    }
                    if !b.live_y {
                        dpy = T::zero();
                    }
                    if !b.live_x {
                        dpx = T::zero();
                    }
                    let j = idx / CHAIN_POINTS;
                    let slot = idx % CHAIN_POINTS;
                    // Point CHAIN_STEPS ± s depends on steps 1..=s with sign ±.
                    if slot != CHAIN_STEPS {
                        let (sign, s) = if slot > CHAIN_STEPS {
                            (one, slot - CHAIN_STEPS)
                        } else {
                            (-one, CHAIN_STEPS - slot)
                        };
                        for t in 0..s {
                            dst[j * k + 2 * t] += sign * dpy;
                            dst[j * k + 2 * t + 1] += sign * dpx;
                        }
                    }
                }
            }
            vec![
                dsrc.map(|d| Tensor::new([n, c], d)),
                dsteps.map(|d| Tensor::new([nw, k], d)),
            ]
        },
    )
}

/// Per-window multi-head attention: window `j`'s `q_rows` queries attend over
/// its `kv_rows` keys/values. `q: [N_w*q_rows, C]`, `k, v: [N_w*kv_rows, C]`.
pub(crate) fn window_attention<'g, T: Scalar>(
    q: &Var<'g, T>,
    k: &Var<'g, T>,
    v: &Var<'g, T>,
    heads: usize,
    q_rows: usize,
    kv_rows: usize,
) -> Var<'g, T> {
    let (nq, c) = q.value().dims2();
    let (nk, _) = k.value().dims2();
    assert_eq!(nq % q_rows, 0);
    let nw = nq / q_rows;
    assert_eq!(nk, nw * kv_rows);
    assert_eq!(c % heads, 0);
    let dh = c / heads;
    let scale = T::one() / T::from_usize_lossy(dh).sqrt();
    let (qd, kd, vd) = (q.value().data(), k.value().data(), v.value().data());
    let mut attn = vec![T::zero(); nw * heads * q_rows * kv_rows];
    let mut out = vec![T::zero(); nq * c];
    for j in 0..nw {
        for hd in 0..heads {
            let a = &mut attn[(j * heads + hd) * q_rows * kv_rows..][..q_rows * kv_rows];
            for qi in 0..q_rows {
                let qr = &qd[(j * q_rows + qi) * c + hd * dh..][..dh];
                let arow = &mut a[qi * kv_rows..(qi + 1) * kv_rows];
                for (ki, av) in arow.iter_mut().enumerate() {
                    let kr = &kd[(j * kv_rows + ki) * c + hd * dh..][..dh];
                    *av = qr.iter().zip(kr).fold(T::zero(), |s, (&x, &y)| s + x * y);
                }
                crate::autograd::softmax_in_place(arow, scale);
                let orow = &mut out[(j * q_rows + qi) * c + hd * dh..][..dh];
                for (ki, &w) in arow.iter().enumerate() {
                    let vr = &vd[(j * kv_rows + ki) * c + hd * dh..][..dh];
                    for (o, &x) in orow.iter_mut().zip(vr) {
                        *o += w * x;
                    }
                }
            }
        }
    }
    let (q_rc, k_rc, v_rc) = (q.value_rc(), k.value_rc(), v.value_rc());
    q.graph()
        .record(Tensor::new([nq, c], out), &[q, k, v], move |g, needs| {
            let gd = g.data();
            let (qd, kd, vd) = (q_rc.data(), k_rc.data(), v_rc.data());
            let mut dq = vec![T::zero(); nq * c];
            let mut dk = vec![T::zero(); nk * c];
            let mut dv = vec![T::zero(); nk * c];
            let mut da = vec![T::zero(); kv_rows];
            for j in 0..nw {
                for hd in 0..heads {
                    let a = &attn[(j * heads + hd) * q_rows * kv_rows..][..q_rows * kv_rows];
                    for qi in 0..q_rows {
                        let go = &gd[(j * q_rows + qi) * c + hd * dh..][..dh];
                        let arow = &a[qi * kv_rows..(qi + 1) * kv_rows];
                        for ki in 0..kv_rows {
                            let base = (j * kv_rows + ki) * c + hd * dh;
                            let vr = &vd[base..][..dh];
                            da[ki] = go.iter().zip(vr).fold(T::zero(), |s, (&x, &y)| s + x * y);
                            for (d, &x) in dv[base..][..dh].iter_mut().zip(go) {
                                *d += arow[ki] * x;
                            }
                        }
                        let dot = arow
                            .iter()
                            .zip(&da)
                            .fold(T::zero(), |s, (&x, &y)| s + x * y);
                        let qbase = (j * q_rows + qi) * c + hd * dh;
                        for ki in 0..kv_rows {
                            let ds = arow[ki] * (da[ki] - dot) * scale;
                            let base = (j * kv_rows + ki) * c + hd * dh;
                            for t in 0..dh {
                                dq[qbase + t] += ds * kd[base + t];
                                dk[base + t] += ds * qd[qbase + t];
                            }
                        }
                    }
                }
            }
            vec![
                needs[0].then(|| Tensor::new([nq, c], dq)),
                needs[1].then(|| Tensor::new([nk, c], dk)),
                needs[2].then(|| Tensor::new([nk, c], dv)),
            ]
        })
}

/// C-MSA projections of one scale.
#[derive(Clone, Debug)]
pub struct ConnectivityAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    /// `C → 8` offset head, zero-initialized.
    pub offset: Linear,
    pub heads: usize,
    pub offset_bound: f64,
    pub channels: usize,
}

/// Intermediate quantities of one C-MSA evaluation, for inspection.
pub struct CMsaTrace<'g, T: Scalar> {
    pub output: Var<'g, T>,
    /// Bounded step offsets `[N_w, 8]`.
    pub steps: Var<'g, T>,
    pub partition: WindowPartition,
}

impl ConnectivityAttention {
    pub fn new(name: &str, channels: usize, heads: usize, offset_bound: f64) -> Result<Self> {
        if heads == 0 || channels % heads != 0 {
            return Err(crate::error::Error::Config(format!(
                "{heads} heads do not divide {channels} channels"
            )));
        }
        Ok(ConnectivityAttention {
            q: Linear::new(format!("{name}.q"), channels, channels).without_bias(),
            k: Linear::new(format!("{name}.k"), channels, channels).without_bias(),
            v: Linear::new(format!("{name}.v"), channels, channels).without_bias(),
            o: Linear::new(format!("{name}.o"), channels, channels),
            offset: Linear::new(format!("{name}.offset"), channels, 2 * CHAIN_STEPS)
                .zero_initialized(),
            heads,
            offset_bound,
            channels,
        })
    }

    /// `queries`: `[H*W, C]`; `key_source`: `[H*W, C]` on the same grid.
    pub fn forward<'g, T: Scalar>(
        &self,
        cx: &Ctx<'g, T>,
        queries: &Var<'g, T>,
        key_source: &Var<'g, T>,
        height: usize,
        width: usize,
    ) -> Result<Var<'g, T>> {
        Ok(self
            .forward_traced(cx, queries, key_source, height, width)?
            .output)
    }

    pub fn forward_traced<'g, T: Scalar>(
        &self,
        cx: &Ctx<'g, T>,
        queries: &Var<'g, T>,
        key_source: &Var<'g, T>,
        height: usize,
        width: usize,
    ) -> Result<CMsaTrace<'g, T>> {
        let n = height * width;
        for (what, t) in [("queries", queries), ("key source", key_source)] {
            if t.shape() != [n, self.channels] {
                return Err(dim_err!(
                    "C-MSA {what} {:?} do not match {height}x{width}x{}",
                    t.shape(),
                    self.channels
                ));
            }
        }
        let part = WindowPartition::new(height, width);
        let windowed = queries.gather_rows(Rc::clone(&part.gather));
        let q = self.q.forward(cx, &windowed);
        let raw = self.offset.forward(cx, &group_mean_rows(&q, WINDOW_TOKENS));
        let bound = T::lit(self.offset_bound);
        let steps = raw.scale(T::one() / bound).tanh().scale(bound);
        let sampled = deform_sample(key_source, height, width, &steps, &part.centers);
        let k = self.k.forward(cx, &sampled);
        let v = self.v.forward(cx, &sampled);
        let attended = window_attention(&q, &k, &v, self.heads, WINDOW_TOKENS, CHAIN_POINTS);
        let projected = self.o.forward(cx, &attended);
        let output = projected.gather_rows(Rc::clone(&part.scatter));
        Ok(CMsaTrace {
            output,
            steps,
            partition: part,
        })
    }

    pub fn macs(&self, tokens: usize) -> u64 {
        let windows = tokens.div_ceil(WINDOW_TOKENS);
        let padded = windows * WINDOW_TOKENS;
        let c = self.channels as u64;
        let samples = (windows * CHAIN_POINTS) as u64;
        self.q.macs(padded)
            + self.offset.macs(windows)
            + 4 * samples * c
            + 2 * samples * c * c
            + 2 * (padded * CHAIN_POINTS) as u64 * c
            + self.o.macs(padded)
    }
}

impl Module for ConnectivityAttention {
    fn param_specs(&self, out: &mut Vec<ParamSpec>) {
        self.q.param_specs(out);
        self.k.param_specs(out);
        self.v.param_specs(out);
        self.o.param_specs(out);
        self.offset.param_specs(out);
    }
}

/// Attention weights of every query over its window's nine keys, for
/// inspection. Shape `[N_w * heads * 9, 9]`.
pub fn window_attention_weights<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    heads: usize,
) -> Tensor<T> {
    let (nq, c) = q.dims2();
    let nw = nq / WINDOW_TOKENS;
    let dh = c / heads;
    let scale = T::one() / T::from_usize_lossy(dh).sqrt();
    let mut out = Vec::with_capacity(nw * heads * WINDOW_TOKENS * CHAIN_POINTS);
    for j in 0..nw {
        for hd in 0..heads {
            for qi in 0..WINDOW_TOKENS {
                let qr = &q.data()[(j * WINDOW_TOKENS + qi) * c + hd * dh..][..dh];
                let mut row: Vec<T> = (0..CHAIN_POINTS)
                    .map(|ki| {
                        let kr = &k.data()[(j * CHAIN_POINTS + ki) * c + hd * dh..][..dh];
                        qr.iter().zip(kr).fold(T::zero(), |s, (&x, &y)| s + x * y)
                    })
                    .collect();
                crate::autograd::softmax_in_place(&mut row, scale);
                out.extend(row);
            }
        }
    }
    Tensor::new([nw * heads * WINDOW_TOKENS, CHAIN_POINTS], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::testing::check_op;
    use crate::autograd::Graph;
    use rand::SeedableRng;

    fn rnd(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Tensor::uniform(shape.to_vec(), lo, hi, &mut rng)
    }

    #[test]
    fn partition_examples() {
        let p = WindowPartition::new(12, 12);
        assert_eq!(p.num_windows(), 16);
        assert_eq!(p.centers[0], [1.0, 1.0]);
        assert_eq!(p.centers[1], [1.0, 4.0]);
        assert_eq!(p.centers[4], [4.0, 1.0]);
        let one = WindowPartition::new(3, 3);
        assert_eq!(one.num_windows(), 1);
        assert_eq!(one.centers[0], [1.0, 1.0]);
        let four = WindowPartition::new(4, 4);
        assert_eq!((four.padded_height, four.padded_width), (6, 6));
        assert_eq!(four.num_windows(), 4);
        assert_eq!(four.scatter.len(), 16);
        // pixel (3, 3) lands in window 3, slot 0
        assert_eq!(four.scatter[15], 3 * 9);
    }

    #[test]
    fn offset_chain_examples() {
        let zero = OffsetChain::from_raw([4.0, 4.0], &[0.0; 8], 2.0);
        assert!(zero.positions().iter().all(|&p| p == [4.0, 4.0]));

        // raw value giving a (0, 1) step after squashing: 2 atanh(1/2)
        let r = 2.0 * (0.5f64).atanh();
        let line = OffsetChain::from_raw([4.0, 4.0], &[0.0, r, 0.0, r, 0.0, r, 0.0, r], 2.0);
        let pos = line.positions();
        for s in 1..=4 {
            let fwd = pos[CHAIN_STEPS + s];
            let back = pos[CHAIN_STEPS - s];
            assert!((fwd[0] - 4.0).abs() < 1e-12 && (fwd[1] - (4.0 + s as f64)).abs() < 1e-12);
            assert!((back[0] - 4.0).abs() < 1e-12 && (back[1] - (4.0 - s as f64)).abs() < 1e-12);
        }

        let sat = OffsetChain::from_raw([0.0, 0.0], &[1e3; 8], 2.0);
        assert!(sat.steps.iter().flatten().all(|&v| v <= 2.0 && v > 1.99));
    }

    #[test]
    fn bilinear_sampling_examples() {
        // 4x5 single-channel map with value 10*y + x
        let t = Tensor::<f64>::from_fn([20, 1], |i| (10 * (i / 5) + i % 5) as f64);
        let s = sample_bilinear(&t, 4, 5, &[[2.0, 3.0], [1.5, 0.0], [-3.0, 9.0], [1.25, 2.5]]);
        assert_eq!(s.data()[0], 23.0);
        assert_eq!(s.data()[1], 15.0);
        // outside: clamps to (0, 4)
        assert_eq!(s.data()[2], 4.0);
        assert!((s.data()[3] - 15.0).abs() < 1e-12);
        let two = Tensor::<f64>::new([2, 1], vec![0.0, 1.0]);
        assert_eq!(sample_bilinear(&two, 1, 2, &[[0.0, 0.5]]).data()[0], 0.5);
    }

    #[test]
    fn deform_sample_gradients() {
        let centers = vec![[1.0, 1.0], [1.0, 4.0], [4.0, 1.0], [4.0, 4.0]];
        check_op(
            vec![rnd(&[36, 3], 1, -1.0, 1.0), rnd(&[4, 8], 2, -0.9, 0.9)],
            move |_, v| deform_sample(&v[0], 6, 6, &v[1], &centers),
            1e-5,
        );
    }

    #[test]
    fn window_attention_gradients() {
        check_op(
            vec![
                rnd(&[18, 4], 3, -1.0, 1.0),
                rnd(&[18, 4], 4, -1.0, 1.0),
                rnd(&[18, 4], 5, -1.0, 1.0),
            ],
            |_, v| window_attention(&v[0], &v[1], &v[2], 2, 9, 9),
            1e-6,
        );
        check_op(
            vec![rnd(&[18, 2], 6, -1.0, 1.0)],
            |_, v| group_mean_rows(&v[0], 9),
            1e-6,
        );
    }

    #[test]
    fn attention_rows_are_simplex() {
        let q = rnd(&[27, 4], 7, -3.0, 3.0);
        let k = rnd(&[27, 4], 8, -3.0, 3.0);
        let w = window_attention_weights(&q, &k, 2);
        for row in w.data().chunks(CHAIN_POINTS) {
            assert!(row.iter().all(|&v| v >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        let g = Graph::<f64>::inference();
        let _ = g;
    }
}
