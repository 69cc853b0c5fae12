//! Integrality attention (I-MSA) and the patch tokenization it runs on.
//!
//! Every scale is cut into `P_m × P_m` patches with `P_m = P / 2^(m-1)`, so
//! all scales yield the same number of patch tokens. Attention is transposed:
//! queries are the channels of one scale, keys and values the channels of all
//! scales concatenated, so the attention map is `C_m × C_Σ` and the cost is
//! linear in the token count.

use crate::autograd::Var;
use crate::connectivity::group_mean_rows;
use crate::error::{config_err, dim_err, Error, Result};
use crate::nn::{Ctx, Linear, Module, ParamSpec};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use std::rc::Rc;

/// Patch size of scale `m` (1-based).
pub fn patch_size(base_patch: usize, m: usize) -> Result<usize> {
    let div = 1usize << (m - 1);
    if base_patch % div != 0 || base_patch < div {
        return Err(config_err!(
            "patch size {base_patch} cannot be halved down to scale {m}"
        ));
    }
    Ok(base_patch / div)
}

/// Row-major grid of `patch × patch` cells over an `height × width` map.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchGrid {
    pub height: usize,
    pub width: usize,
    pub patch: usize,
    /// Pixel index of each row of the patch-major layout
    /// (`patch_index * patch² + dy * patch + dx`).
    pub patch_major: Rc<Vec<usize>>,
    /// Inverse of `patch_major`.
    pub pixel_major: Rc<Vec<usize>>,
}

impl PatchGrid {
    pub fn new(height: usize, width: usize, patch: usize) -> Result<Self> {
        if patch == 0 || height % patch != 0 || width % patch != 0 {
            return Err(config_err!(
                "{height}x{width} map is not divisible into {patch}x{patch} patches"
            ));
        }
        let (gh, gw) = (height / patch, width / patch);
        let mut patch_major = Vec::with_capacity(height * width);
        let mut pixel_major = vec![0usize; height * width];
        for a in 0..gh {
            for b in 0..gw {
                for dy in 0..patch {
                    for dx in 0..patch {
                        let pix = (a * patch + dy) * width + b * patch + dx;
                        pixel_major[pix] = patch_major.len();
                        patch_major.push(pix);
                    }
                }
            }
        }
        Ok(PatchGrid {
            height,
            width,
            patch,
            patch_major: Rc::new(patch_major),
            pixel_major: Rc::new(pixel_major),
        })
    }

    pub fn grid_dims(&self) -> (usize, usize) {
        (self.height / self.patch, self.width / self.patch)
    }

    pub fn tokens(&self) -> usize {
        let (h, w) = self.grid_dims();
        h * w
    }

    /// `[H*W, C]` pixel tokens → `[N_p, P²·C]` flattened patches.
    pub fn patchify<'g, T: Scalar>(&self, pixels: &Var<'g, T>) -> Var<'g, T> {
        let c = pixels.shape()[1];
        pixels
            .gather_rows(Rc::clone(&self.patch_major))
            .reshape([self.tokens(), self.patch * self.patch * c])
    }

    /// Inverse of [`patchify`](Self::patchify).
    pub fn unpatchify<'g, T: Scalar>(&self, patches: &Var<'g, T>, channels: usize) -> Var<'g, T> {
        patches
            .reshape([self.height * self.width, channels])
            .gather_rows(Rc::clone(&self.pixel_major))
    }

    /// Mean of each patch: `[H*W, C]` → `[N_p, C]`.
    pub fn mean_pool<'g, T: Scalar>(&self, pixels: &Var<'g, T>) -> Var<'g, T> {
        group_mean_rows(
            &pixels.gather_rows(Rc::clone(&self.patch_major)),
            self.patch * self.patch,
        )
    }
}

/// Linear projection of flattened `P×P×C` patches to `C` channels.
#[derive(Clone, Debug)]
pub struct PatchEmbed {
    pub proj: Linear,
    pub channels: usize,
    pub patch: usize,
}

impl PatchEmbed {
    pub fn new(name: &str, channels: usize, patch: usize) -> Self {
        PatchEmbed {
            proj: Linear::new(name, patch * patch * channels, channels),
            channels,
            patch,
        }
    }

    pub fn forward<'g, T: Scalar>(
        &self,
        cx: &Ctx<'g, T>,
        pixels: &Var<'g, T>,
        grid: &PatchGrid,
    ) -> Var<'g, T> {
        debug_assert_eq!(grid.patch, self.patch);
        self.proj.forward(cx, &grid.patchify(pixels))
    }
}

impl Module for PatchEmbed {
    fn param_specs(&self, out: &mut Vec<ParamSpec>) {
        self.proj.param_specs(out);
    }
}

/// Linear map `C → P²·C` followed by a pixel shuffle back to the map grid.
#[derive(Clone, Debug)]
pub struct Unpatch {
    pub proj: Linear,
    pub channels: usize,
    pub patch: usize,
}

impl Unpatch {
    pub fn new(name: &str, channels: usize, patch: usize) -> Self {
        Unpatch {
            proj: Linear::new(name, channels, patch * patch * channels),
            channels,
            patch,
        }
    }

    /// Starts as the zero map.
    pub fn zero_initialized(mut self) -> Self {
        self.proj = self.proj.zero_initialized();
        self
    }

    /// `[N_p, C]` → `[H*W, C]` pixel tokens.
    pub fn forward<'g, T: Scalar>(
        &self,
        cx: &Ctx<'g, T>,
        tokens: &Var<'g, T>,
        grid: &PatchGrid,
    ) -> Var<'g, T> {
        grid.unpatchify(&self.proj.forward(cx, tokens), self.channels)
    }
}

impl Module for Unpatch {
    fn param_specs(&self, out: &mut Vec<ParamSpec>) {
        self.proj.param_specs(out);
    }
}

/// Channel concatenation `z^Σ` of per-scale patch tokens.
pub fn concat_scales<'g, T: Scalar>(scales: &[Var<'g, T>]) -> Result<Var<'g, T>> {
    let first = scales
        .first()
        .ok_or_else(|| Error::Dimension("no scales to concatenate".into()))?;
    let n = first.shape()[0];
    for (m, s) in scales.iter().enumerate() {
        if s.shape()[0] != n {
            return Err(dim_err!(
                "scale {} has {} patch tokens, scale 1 has {n}",
                m + 1,
                s.shape()[0]
            ));
        }
    }
    Ok(Var::concat_cols(scales))
}

/// I-MSA projections for one query scale.
#[derive(Clone, Debug)]
pub struct IntegralityAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
    pub channels: usize,
    pub sum_channels: usize,
}

impl IntegralityAttention {
    pub fn new(name: &str, channels: usize, sum_channels: usize, heads: usize) -> Result<Self> {
        if heads == 0 || channels % heads != 0 || sum_channels % heads != 0 {
            return Err(config_err!(
                "{heads} heads must divide both {channels} and {sum_channels} channels"
            ));
        }
        Ok(IntegralityAttention {
            q: Linear::new(format!("{name}.q"), channels, channels).without_bias(),
            k: Linear::new(format!("{name}.k"), sum_channels, sum_channels).without_bias(),
            v: Linear::new(format!("{name}.v"), sum_channels, sum_channels).without_bias(),
            o: Linear::new(format!("{name}.o"), channels, channels),
            heads,
            channels,
            sum_channels,
        })
    }

    pub fn scale<T: Scalar>(&self) -> T {
        T::one() / T::from_usize_lossy(self.sum_channels).sqrt()
    }

    fn check<T: Scalar>(&self, queries: &Var<'_, T>, kv: &Var<'_, T>) -> Result<()> {
        let (nq, cq) = queries.value().dims2();
        let (nk, ck) = kv.value().dims2();
        if cq != self.channels || ck != self.sum_channels {
            return Err(dim_err!(
                "I-MSA expects {}/{} channels, got {cq}/{ck}",
                self.channels,
                self.sum_channels
            ));
        }
        if nq != nk {
            return Err(dim_err!("I-MSA token counts differ: {nq} queries, {nk} keys"));
        }
        Ok(())
    }

    /// `queries`: `[N, C_m]`; `kv`: `[N, C_Σ]`. Returns `[N, C_m]`.
    pub fn forward<'g, T: Scalar>(
        &self,
        cx: &Ctx<'g, T>,
        queries: &Var<'g, T>,
        kv: &Var<'g, T>,
    ) -> Result<Var<'g, T>> {
        Ok(self.forward_with_maps(cx, queries, kv)?.0)
    }

    /// Also returns each head's `C_m/h × C_Σ/h` attention map.
    pub fn forward_with_maps<'g, T: Scalar>(
        &self,
        cx: &Ctx<'g, T>,
        queries: &Var<'g, T>,
        kv: &Var<'g, T>,
    ) -> Result<(Var<'g, T>, Vec<Tensor<T>>)> {
        self.check(queries, kv)?;
        let q = self.q.forward(cx, queries);
        let k = self.k.forward(cx, kv);
        let v = self.v.forward(cx, kv);
        let (dq, dk) = (self.channels / self.heads, self.sum_channels / self.heads);
        let mut outs = Vec::with_capacity(self.heads);
        let mut maps = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qt = q.slice_cols(h * dq, dq).transpose();
            let kh = k.slice_cols(h * dk, dk);
            let vt = v.slice_cols(h * dk, dk).transpose();
            let attn = qt.matmul(&kh).softmax_rows(self.scale());
            maps.push(attn.value().clone());
            outs.push(attn.matmul(&vt).transpose());
        }
        let merged = if outs.len() == 1 {
            outs.pop().unwrap()
        } else {
            Var::concat_cols(&outs)
        };
        Ok((self.o.forward(cx, &merged), maps))
    }

    pub fn macs(&self, tokens: usize) -> u64 {
        let n = tokens as u64;
        let (c, s) = (self.channels as u64, self.sum_channels as u64);
        self.q.macs(tokens) + self.k.macs(tokens) + self.v.macs(tokens) + self.o.macs(tokens)
            + 2 * n * c * s / self.heads as u64
    }
}

impl Module for IntegralityAttention {
    fn param_specs(&self, out: &mut Vec<ParamSpec>) {
        self.q.param_specs(out);
        self.k.param_specs(out);
        self.v.param_specs(out);
        self.o.param_specs(out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Graph;
    use crate::nn::ParamStore;
    use rand::SeedableRng;

    #[test]
    fn patch_sizes_and_counts() {
        let sizes: Vec<usize> = (1..=4).map(|m| patch_size(8, m).unwrap()).collect();
        assert_eq!(sizes, [8, 4, 2, 1]);
        assert!(patch_size(4, 4).is_err());
        let counts: Vec<usize> = [(64, 8), (32, 4), (16, 2), (8, 1)]
            .iter()
            .map(|&(s, p)| PatchGrid::new(s, s, p).unwrap().tokens())
            .collect();
        assert_eq!(counts, [64; 4]);
        assert!(matches!(PatchGrid::new(12, 12, 8), Err(Error::Config(_))));
    }

    #[test]
    fn patchify_round_trips() {
        let g = Graph::<f64>::inference();
        let grid = PatchGrid::new(4, 6, 2).unwrap();
        let t = g.constant(Tensor::from_fn([24, 3], |i| i as f64));
        let p = grid.patchify(&t);
        assert_eq!(p.shape(), [6, 12]);
        // second patch starts at pixel (0, 2)
        assert_eq!(&p.value().data()[12..15], &[6.0, 7.0, 8.0]);
        let back = grid.unpatchify(&p, 3);
        assert_eq!(back.value(), t.value());
        let pooled = grid.mean_pool(&t);
        // patch 0 covers pixels 0, 1, 6, 7
        assert_eq!(pooled.value().data()[0], (0.0 + 3.0 + 18.0 + 21.0) / 4.0);
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let att = IntegralityAttention::new("i", 4, 12, 2).unwrap();
        let specs = att.specs();
        let store = ParamStore::<f64>::init(&specs, &mut rand_chacha::ChaCha8Rng::seed_from_u64(1));
        let g = Graph::inference();
        let cx = Ctx::new(&g, &store);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let q = g.constant(Tensor::uniform([5, 4], -2.0, 2.0, &mut rng));
        let kv = g.constant(Tensor::uniform([5, 12], -2.0, 2.0, &mut rng));
        let (out, maps) = att.forward_with_maps(&cx, &q, &kv).unwrap();
        assert_eq!(out.shape(), [5, 4]);
        assert_eq!(maps.len(), 2);
        for m in &maps {
            assert_eq!(m.shape(), [2, 6]);
            for row in m.data().chunks(6) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        let short = g.constant(Tensor::zeros([4, 12]));
        assert!(matches!(att.forward(&cx, &q, &short), Err(Error::Dimension(_))));
    }
}
