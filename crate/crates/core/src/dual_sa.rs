//! Dual sparse attention embedding.
//!
//! Each scale carries pixel tokens `x` (connectivity pathway) and patch
//! tokens `z` (integrality pathway). A block first updates every scale's `x`
//! with windowed self-attention and a cross step whose keys are sampled from
//! the unpatched `z`, then updates `z` with I-MSA over the patch-pooled new
//! `x` of all scales. After the last stage each scale is fused back into a
//! feature map for the decoder skip.

use crate::autograd::Var;
use crate::backbone::EncoderStack;
use crate::connectivity::{ConnectivityAttention, DEFAULT_OFFSET_BOUND};
use crate::error::{config_err, dim_err, Result};
use crate::integrality::{concat_scales, patch_size, IntegralityAttention, PatchEmbed, PatchGrid, Unpatch};
use crate::nn::{Conv2d, Ctx, LayerNorm, Linear, Mlp, Module, ParamSpec};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Ablation variants of the embedding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Plain U-Net skips.
    Baseline,
    /// Connectivity pathway only.
    CMsa,
    /// Both pathways, updated independently.
    IMsa,
    /// Both pathways with interleaved cross updates.
    DualSa,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Baseline, Variant::CMsa, Variant::IMsa, Variant::DualSa];

    pub fn key(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::CMsa => "c-msa",
            Variant::IMsa => "i-msa",
            Variant::DualSa => "dual-sa",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::Baseline => "Baseline",
            Variant::CMsa => "+C-MSA",
            Variant::IMsa => "+I-MSA",
            Variant::DualSa => "+Dual-SA",
        }
    }

    fn has_z(self) -> bool {
        matches!(self, Variant::IMsa | Variant::DualSa)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Variant {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().trim_start_matches('+').to_ascii_lowercase().replace('_', "-");
        Variant::ALL
            .into_iter()
            .find(|v| v.key() == norm || v.key().replace('-', "") == norm)
            .ok_or_else(|| config_err!("unknown variant `{s}` (baseline, c-msa, i-msa, dual-sa)"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualSaConfig {
    pub stages: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    /// Patch size `P` of the finest scale.
    pub patch: usize,
    pub offset_bound: f64,
}

impl Default for DualSaConfig {
    fn default() -> Self {
        DualSaConfig {
            stages: 4,
            heads: 4,
            mlp_ratio: 4,
            patch: 8,
            offset_bound: DEFAULT_OFFSET_BOUND,
        }
    }
}

impl DualSaConfig {
    pub fn validate(&self, channels: &[usize]) -> Result<()> {
        if self.stages == 0 {
            return Err(config_err!("at least one Dual-SA stage is required"));
        }
        if self.mlp_ratio == 0 {
            return Err(config_err!("MLP ratio must be positive"));
        }
        if !(self.offset_bound > 0.0 && self.offset_bound.is_finite()) {
            return Err(config_err!("offset bound must be positive"));
        }
        let total: usize = channels.iter().sum();
        for (i, &c) in channels.iter().enumerate() {
            patch_size(self.patch, i + 1)?;
            if self.heads == 0 || c % self.heads != 0 {
                return Err(config_err!("{} heads do not divide {c} channels", self.heads));
            }
        }
        if total % self.heads != 0 {
            return Err(config_err!("{} heads do not divide {total} channels", self.heads));
        }
        Ok(())
    }
}

/// Flattened tokens with the grid they came from.
#[derive(Clone)]
pub struct TokenSequence<'g, T: Scalar> {
    pub tokens: Var<'g, T>,
    pub height: usize,
    pub width: usize,
    /// 1-based scale index.
    pub scale: usize,
}

impl<'g, T: Scalar> TokenSequence<'g, T> {
    pub fn len(&self) -> usize {
        self.tokens.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn with(&self, tokens: Var<'g, T>) -> Self {
        TokenSequence {
            tokens,
            ..self.clone()
        }
    }
}

/// Per-scale state of one scale.
#[derive(Clone)]
pub struct ScaleState<'g, T: Scalar> {
    pub x: TokenSequence<'g, T>,
    /// Absent for the connectivity-only variant.
    pub z: Option<TokenSequence<'g, T>>,
    pub grid: PatchGrid,
}

/// Token pair of every scale entering stage `stage` (0-based).
#[derive(Clone)]
pub struct DualState<'g, T: Scalar> {
    pub scales: Vec<ScaleState<'g, T>>,
    pub stage: usize,
}

struct CrossStep {
    ln_z: LayerNorm,
    unpatch: Unpatch,
    ln_x: LayerNorm,
    attn: ConnectivityAttention,
}

struct ZPathway {
    ln_z: LayerNorm,
    attn: IntegralityAttention,
    ln_out: LayerNorm,
    mlp: Mlp,
    /// Pooling of the new `x` into keys/values (interleaved variant only).
    kv: Option<(LayerNorm, Linear)>,
}

struct ScaleBlock {
    ln_x: LayerNorm,
    self_attn: ConnectivityAttention,
    cross: Option<CrossStep>,
    ln_out: LayerNorm,
    mlp: Mlp,
    z: Option<ZPathway>,
}

impl Module for ScaleBlock {
    fn param_specs(&self, out: &mut Vec<ParamSpec>) {
        self.ln_x.param_specs(out);
        self.self_attn.param_specs(out);
        if let Some(c) = &self.cross {
            c.ln_z.param_specs(out);
            c.unpatch.param_specs(out);
            c.ln_x.param_specs(out);
            c.attn.param_specs(out);
        }
        self.ln_out.param_specs(out);
        self.mlp.param_specs(out);
        if let Some(z) = &self.z {
            z.ln_z.param_specs(out);
            z.attn.param_specs(out);
            z.ln_out.param_specs(out);
            z.mlp.param_specs(out);
            if let Some((ln, pool)) = &z.kv {
                ln.param_specs(out);
                pool.param_specs(out);
            }
        }
    }
}

/// One Dual-SA block covering every scale.
pub struct DualBlock {
    scales: Vec<ScaleBlock>,
    variant: Variant,
}

impl DualBlock {
    /// `name`: parameter prefix, e.g. `dualsa.stage1`.
    pub fn new(name: &str, channels: &[usize], cfg: &DualSaConfig, variant: Variant) -> Result<Self> {
        if variant == Variant::Baseline {
            return Err(config_err!("the baseline variant has no Dual-SA blocks"));
        }
        let total: usize = channels.iter().sum();
        let mut scales = Vec::with_capacity(channels.len());
        for (i, &c) in channels.iter().enumerate() {
            let m = i + 1;
            let p = format!("{name}.scale{m}");
            let cross = if variant == Variant::DualSa {
                Some(CrossStep {
                    ln_z: LayerNorm::new(format!("{p}.cross.norm_z"), c),
                    unpatch: Unpatch::new(&format!("{p}.cross.unpatch"), c, patch_size(cfg.patch, m)?),
                    ln_x: LayerNorm::new(format!("{p}.cross.norm_x"), c),
                    attn: ConnectivityAttention::new(&format!("{p}.cross.attn"), c, cfg.heads, cfg.offset_bound)?,
                })
            } else {
                None
            };
            let z = if variant.has_z() {
                Some(ZPathway {
                    ln_z: LayerNorm::new(format!("{p}.z.norm1"), c),
                    attn: IntegralityAttention::new(&format!("{p}.z.attn"), c, total, cfg.heads)?,
                    ln_out: LayerNorm::new(format!("{p}.z.norm2"), c),
                    mlp: Mlp::new(&format!("{p}.z.mlp"), c, cfg.mlp_ratio),
                    kv: (variant == Variant::DualSa).then(|| {
                        (
                            LayerNorm::new(format!("{p}.z.norm_kv"), c),
                            Linear::new(format!("{p}.z.pool"), c, c),
                        )
                    }),
                })
            } else {
                None
            };
            scales.push(ScaleBlock {
                ln_x: LayerNorm::new(format!("{p}.x.norm1"), c),
                self_attn: ConnectivityAttention::new(&format!("{p}.x.attn"), c, cfg.heads, cfg.offset_bound)?,
                cross,
                ln_out: LayerNorm::new(format!("{p}.x.norm2"), c),
                mlp: Mlp::new(&format!("{p}.x.mlp"), c, cfg.mlp_ratio),
                z,
            });
        }
        Ok(DualBlock { scales, variant })
    }

    pub fn forward<'g, T: Scalar>(&self, cx: &Ctx<'g, T>, state: &DualState<'g, T>) -> Result<DualState<'g, T>> {
        self.forward_ordered(cx, state, false)
    }

    /// With `z_first` the integrality update runs before the connectivity
    /// update and pools the old `x`; used to show the order matters.
    pub(crate) fn forward_ordered<'g, T: Scalar>(
        &self,
        cx: &Ctx<'g, T>,
        state: &DualState<'g, T>,
        z_first: bool,
    ) -> Result<DualState<'g, T>> {
        if state.scales.len() != self.scales.len() {
            return Err(dim_err!(
                "block has {} scales, state has {}",
                self.scales.len(),
                state.scales.len()
            ));
        }
        let (xs, zs) = if z_first {
            let old_x: Vec<_> = state.scales.iter().map(|s| s.x.tokens.clone()).collect();
            let zs = self.update_z(cx, state, &old_x)?;
            (self.update_x(cx, state)?, zs)
        } else {
            let xs = self.update_x(cx, state)?;
            let zs = self.update_z(cx, state, &xs)?;
            (xs, zs)
        };
        let scales = state
            .scales
            .iter()
            .zip(xs)
            .zip(zs)
            .map(|((s, x), z)| ScaleState {
                x: s.x.with(x),
                z: match (&s.z, z) {
                    (Some(old), Some(new)) => Some(old.with(new)),
                    _ => None,
                },
                grid: s.grid.clone(),
            })
            .collect();
        Ok(DualState {
            scales,
            stage: state.stage + 1,
        })
    }

    fn update_x<'g, T: Scalar>(&self, cx: &Ctx<'g, T>, state: &DualState<'g, T>) -> Result<Vec<Var<'g, T>>> {
        let mut out = Vec::with_capacity(self.scales.len());
        for (blk, s) in self.scales.iter().zip(&state.scales) {
            let (h, w) = (s.x.height, s.x.width);
            let x = &s.x.tokens;
            let xbar = blk.ln_x.forward(cx, x);
            let mut xp = blk.self_attn.forward(cx, &xbar, &xbar, h, w)?.add(x);
            if let Some(cross) = &blk.cross {
                let z = s
                    .z
                    .as_ref()
                    .ok_or_else(|| dim_err!("interleaved block needs z tokens"))?;
                let key_src = cross.unpatch.forward(cx, &cross.ln_z.forward(cx, &z.tokens), &s.grid);
                let q = cross.ln_x.forward(cx, &xp);
                xp = cross.attn.forward(cx, &q, &key_src, h, w)?.add(&xp);
            }
            out.push(blk.mlp.forward(cx, &blk.ln_out.forward(cx, &xp)).add(&xp));
        }
        Ok(out)
    }

    fn update_z<'g, T: Scalar>(
        &self,
        cx: &Ctx<'g, T>,
        state: &DualState<'g, T>,
        new_x: &[Var<'g, T>],
    ) -> Result<Vec<Option<Var<'g, T>>>> {
        if !self.variant.has_z() {
            return Ok(vec![None; self.scales.len()]);
        }
        let mut zbar = Vec::with_capacity(self.scales.len());
        for (blk, s) in self.scales.iter().zip(&state.scales) {
            let (zp, z) = (blk.z.as_ref().unwrap(), s.z.as_ref().unwrap());
            zbar.push(zp.ln_z.forward(cx, &z.tokens));
        }
        let kv = if self.variant == Variant::DualSa {
            let mut pooled = Vec::with_capacity(self.scales.len());
            for ((blk, s), x) in self.scales.iter().zip(&state.scales).zip(new_x) {
                let (ln, pool) = blk.z.as_ref().unwrap().kv.as_ref().unwrap();
                pooled.push(pool.forward(cx, &s.grid.mean_pool(&ln.forward(cx, x))));
            }
            concat_scales(&pooled)?
        } else {
            concat_scales(&zbar)?
        };
        let mut out = Vec::with_capacity(self.scales.len());
        for ((blk, s), zb) in self.scales.iter().zip(&state.scales).zip(&zbar) {
            let zp = blk.z.as_ref().unwrap();
            let z = &s.z.as_ref().unwrap().tokens;
            let z1 = zp.attn.forward(cx, zb, &kv)?.add(z);
            out.push(Some(zp.mlp.forward(cx, &zp.ln_out.forward(cx, &z1)).add(&z1)));
        }
        Ok(out)
    }

    pub fn macs(&self, dims: &[(usize, usize, usize)], patch_tokens: usize) -> u64 {
        let mut total = 0;
        for (blk, &(c, h, w)) in self.scales.iter().zip(dims) {
            let n = h * w;
            let ln = 5 * (n * c) as u64;
            total += ln + blk.self_attn.macs(n) + blk.mlp.macs(n) + ln;
            if let Some(cr) = &blk.cross {
                total += cr.attn.macs(n) + cr.unpatch.proj.macs(patch_tokens) + ln;
            }
            if let Some(z) = &blk.z {
                total += z.attn.macs(patch_tokens) + z.mlp.macs(patch_tokens);
                if let Some((_, pool)) = &z.kv {
                    total += (n * c) as u64 + pool.macs(patch_tokens);
                }
            }
        }
        total
    }
}

impl Module for DualBlock {
    fn param_specs(&self, out: &mut Vec<ParamSpec>) {
        for s in &self.scales {
            s.param_specs(out);
        }
    }
}

/// Starts as a pass-through of the pixel tokens: identity conv, zero unpatch.
struct Fusion {
    unpatch: Option<Unpatch>,
    conv: Conv2d,
}

/// Embedding layer, stacked blocks and per-scale fusion.
pub struct DualSaEmbedding {
    variant: Variant,
    config: DualSaConfig,
    channels: Vec<usize>,
    embed: Vec<Option<PatchEmbed>>,
    blocks: Vec<DualBlock>,
    fusion: Vec<Fusion>,
}

impl DualSaEmbedding {
    pub fn new(channels: &[usize], config: &DualSaConfig, variant: Variant) -> Result<Self> {
        config.validate(channels)?;
        let mut embed = Vec::new();
        let mut fusion = Vec::new();
        for (i, &c) in channels.iter().enumerate() {
            let m = i + 1;
            let p = patch_size(config.patch, m)?;
            embed.push(
                variant
                    .has_z()
                    .then(|| PatchEmbed::new(&format!("dualsa.embed.scale{m}.patch"), c, p)),
            );
            fusion.push(Fusion {
                unpatch: variant
                    .has_z()
                    .then(|| Unpatch::new(&format!("dualsa.fuse.scale{m}.unpatch"), c, p).zero_initialized()),
                conv: Conv2d::new(format!("dualsa.fuse.scale{m}.conv"), c, c, 3).identity_initialized(),
            });
        }
        let blocks = (1..=config.stages)
            .map(|l| DualBlock::new(&format!("dualsa.stage{l}"), channels, config, variant))
            .collect::<Result<_>>()?;
        Ok(DualSaEmbedding {
            variant,
            config: config.clone(),
            channels: channels.to_vec(),
            embed,
            blocks,
            fusion,
        })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn blocks(&self) -> &[DualBlock] {
        &self.blocks
    }

    /// Flattens every encoder stage into pixel tokens and patch-embeds it.
    pub fn embed_multiscale<'g, T: Scalar>(
        &self,
        cx: &Ctx<'g, T>,
        enc: &EncoderStack<'g, T>,
    ) -> Result<DualState<'g, T>> {
        if enc.stages.len() != self.channels.len() {
            return Err(dim_err!(
                "embedding expects {} scales, got {}",
                self.channels.len(),
                enc.stages.len()
            ));
        }
        let mut scales = Vec::with_capacity(enc.stages.len());
        for (i, e) in enc.stages.iter().enumerate() {
            let m = i + 1;
            let (c, h, w) = e.value().dims3();
            if c != self.channels[i] {
                return Err(dim_err!("scale {m} has {c} channels, expected {}", self.channels[i]));
            }
            let grid = PatchGrid::new(h, w, patch_size(self.config.patch, m)?)?;
            let x = e.map_to_tokens();
            let z = self.embed[i].as_ref().map(|pe| {
                let (gh, gw) = grid.grid_dims();
                TokenSequence {
                    tokens: pe.forward(cx, &x, &grid),
                    height: gh,
                    width: gw,
                    scale: m,
                }
            });
            scales.push(ScaleState {
                x: TokenSequence {
                    tokens: x,
                    height: h,
                    width: w,
                    scale: m,
                },
                z,
                grid,
            });
        }
        if let Some(first) = scales.first() {
            let n = first.grid.tokens();
            if scales.iter().any(|s| s.grid.tokens() != n) {
                return Err(dim_err!("patch token counts differ across scales"));
            }
        }
        Ok(DualState { scales, stage: 0 })
    }

    /// Fuses each scale into a `[C_m, H_m, W_m]` map: 3×3 conv of the pixel
    /// tokens plus the unpatched patch tokens.
    pub fn fuse<'g, T: Scalar>(&self, cx: &Ctx<'g, T>, state: &DualState<'g, T>) -> Vec<Var<'g, T>> {
        state
            .scales
            .iter()
            .zip(&self.fusion)
            .map(|(s, f)| {
                let mut tokens = s.x.tokens.clone();
                if let (Some(up), Some(z)) = (&f.unpatch, &s.z) {
                    tokens = tokens.add(&up.forward(cx, &z.tokens, &s.grid));
                }
                f.conv.forward(cx, &tokens.tokens_to_map(s.x.height, s.x.width))
            })
            .collect()
    }

    /// Embedding, all stages and fusion: the decoder skips `y^1..y^M`.
    pub fn run_embedding<'g, T: Scalar>(&self, cx: &Ctx<'g, T>, enc: &EncoderStack<'g, T>) -> Result<Vec<Var<'g, T>>> {
        let mut state = self.embed_multiscale(cx, enc)?;
        for b in &self.blocks {
            state = b.forward(cx, &state)?;
        }
        Ok(self.fuse(cx, &state))
    }

    pub fn macs(&self, dims: &[(usize, usize, usize)]) -> Vec<(String, u64)> {
        let patch_tokens = dims
            .first()
            .map(|&(_, h, w)| (h / self.config.patch) * (w / self.config.patch))
            .unwrap_or(0);
        let mut out = Vec::new();
        let mut embed = 0;
        for (e, f) in self.embed.iter().zip(&self.fusion) {
            if let Some(e) = e {
                embed += e.proj.macs(patch_tokens);
            }
            if let Some(u) = &f.unpatch {
                embed += u.proj.macs(patch_tokens);
            }
        }
        for (i, &(_, h, w)) in dims.iter().enumerate() {
            embed += self.fusion[i].conv.macs(h, w);
        }
        out.push(("dualsa.embed+fuse".to_string(), embed));
        for (l, b) in self.blocks.iter().enumerate() {
            out.push((format!("dualsa.stage{}", l + 1), b.macs(dims, patch_tokens)));
        }
        out
    }
}

impl Module for DualSaEmbedding {
    fn param_specs(&self, out: &mut Vec<ParamSpec>) {
        for e in self.embed.iter().flatten() {
            e.param_specs(out);
        }
        for b in &self.blocks {
            b.param_specs(out);
        }
        for f in &self.fusion {
            if let Some(u) = &f.unpatch {
                u.param_specs(out);
            }
            f.conv.param_specs(out);
        }
    }
}

/// Projections of one dense multi-head attention.
#[derive(Clone, Debug)]
pub struct DenseAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
    pub channels: usize,
}

impl DenseAttention {
    pub fn new(name: &str, channels: usize, heads: usize) -> Result<Self> {
        if heads == 0 || channels % heads != 0 {
            return Err(config_err!("{heads} heads do not divide {channels} channels"));
        }
        Ok(DenseAttention {
            q: Linear::new(format!("{name}.q"), channels, channels).without_bias(),
            k: Linear::new(format!("{name}.k"), channels, channels).without_bias(),
            v: Linear::new(format!("{name}.v"), channels, channels).without_bias(),
            o: Linear::new(format!("{name}.o"), channels, channels),
            heads,
            channels,
        })
    }

    /// Token-axis attention: `softmax(q kᵀ/√d_h) v` per head, `N × N` maps.
    pub fn spatial<'g, T: Scalar>(&self, cx: &Ctx<'g, T>, a: &Var<'g, T>) -> Var<'g, T> {
        let (q, k, v) = (self.q.forward(cx, a), self.k.forward(cx, a), self.v.forward(cx, a));
        let d = self.channels / self.heads;
        let scale = T::one() / T::from_usize_lossy(d).sqrt();
        let heads: Vec<_> = (0..self.heads)
            .map(|h| {
                let qh = q.slice_cols(h * d, d);
                let kt = k.slice_cols(h * d, d).transpose();
                qh.matmul(&kt).softmax_rows(scale).matmul(&v.slice_cols(h * d, d))
            })
            .collect();
        self.o.forward(cx, &Var::concat_cols(&heads))
    }

    /// Channel-axis attention: `(softmax(qᵀk/√d_h) vᵀ)ᵀ` per head, `d_h × d_h` maps.
    pub fn transposed<'g, T: Scalar>(&self, cx: &Ctx<'g, T>, a: &Var<'g, T>) -> Var<'g, T> {
        let (q, k, v) = (self.q.forward(cx, a), self.k.forward(cx, a), self.v.forward(cx, a));
        let d = self.channels / self.heads;
        let scale = T::one() / T::from_usize_lossy(d).sqrt();
        let heads: Vec<_> = (0..self.heads)
            .map(|h| {
                let qt = q.slice_cols(h * d, d).transpose();
                let kh = k.slice_cols(h * d, d);
                let vt = v.slice_cols(h * d, d).transpose();
                qt.matmul(&kh).softmax_rows(scale).matmul(&vt).transpose()
            })
            .collect();
        self.o.forward(cx, &Var::concat_cols(&heads))
    }
}

impl Module for DenseAttention {
    fn param_specs(&self, out: &mut Vec<ParamSpec>) {
        self.q.param_specs(out);
        self.k.param_specs(out);
        self.v.param_specs(out);
        self.o.param_specs(out);
    }
}

/// The dense dual attention block: independent spatial (x) and transposed
/// (z) self-attention, a shared MLP, and the sum `y = x_{ℓ+1} + z_{ℓ+1}`.
pub struct ReferenceDualBlock {
    pub x_norm1: LayerNorm,
    pub z_norm1: LayerNorm,
    pub x_attn: DenseAttention,
    pub z_attn: DenseAttention,
    pub x_norm2: LayerNorm,
    pub z_norm2: LayerNorm,
    pub mlp: Mlp,
}

/// Outputs of [`ReferenceDualBlock::forward`].
pub struct ReferenceOutput<'g, T: Scalar> {
    pub x: Var<'g, T>,
    pub z: Var<'g, T>,
    pub y: Var<'g, T>,
}

impl ReferenceDualBlock {
    pub fn new(name: &str, channels: usize, heads: usize, mlp_ratio: usize) -> Result<Self> {
        Ok(ReferenceDualBlock {
            x_norm1: LayerNorm::new(format!("{name}.x.norm1"), channels),
            z_norm1: LayerNorm::new(format!("{name}.z.norm1"), channels),
            x_attn: DenseAttention::new(&format!("{name}.x.attn"), channels, heads)?,
            z_attn: DenseAttention::new(&format!("{name}.z.attn"), channels, heads)?,
            x_norm2: LayerNorm::new(format!("{name}.x.norm2"), channels),
            z_norm2: LayerNorm::new(format!("{name}.z.norm2"), channels),
            mlp: Mlp::new(&format!("{name}.mlp"), channels, mlp_ratio),
        })
    }

    /// The spatial pathway alone (`x_{ℓ+1}`).
    pub fn x_pathway<'g, T: Scalar>(&self, cx: &Ctx<'g, T>, x: &Var<'g, T>) -> Var<'g, T> {
        let x1 = self.x_attn.spatial(cx, &self.x_norm1.forward(cx, x)).add(x);
        self.mlp.forward(cx, &self.x_norm2.forward(cx, &x1)).add(&x1)
    }

    pub fn z_pathway<'g, T: Scalar>(&self, cx: &Ctx<'g, T>, z: &Var<'g, T>) -> Var<'g, T> {
        let z1 = self.z_attn.transposed(cx, &self.z_norm1.forward(cx, z)).add(z);
        self.mlp.forward(cx, &self.z_norm2.forward(cx, &z1)).add(&z1)
    }

    pub fn forward<'g, T: Scalar>(
        &self,
        cx: &Ctx<'g, T>,
        x: &Var<'g, T>,
        z: &Var<'g, T>,
    ) -> Result<ReferenceOutput<'g, T>> {
        if x.shape() != z.shape() || x.shape().len() != 2 || x.shape()[1] != self.x_attn.channels {
            return Err(dim_err!(
                "reference block needs equal [N, {}] inputs, got {:?} and {:?}",
                self.x_attn.channels,
                x.shape(),
                z.shape()
            ));
        }
        let xn = self.x_pathway(cx, x);
        let zn = self.z_pathway(cx, z);
        let y = xn.add(&zn);
        Ok(ReferenceOutput { x: xn, z: zn, y })
    }
}

impl Module for ReferenceDualBlock {
    fn param_specs(&self, out: &mut Vec<ParamSpec>) {
        self.x_norm1.param_specs(out);
        self.z_norm1.param_specs(out);
        self.x_attn.param_specs(out);
        self.z_attn.param_specs(out);
        self.x_norm2.param_specs(out);
        self.z_norm2.param_specs(out);
        self.mlp.param_specs(out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Graph;
    use crate::nn::ParamStore;
    use crate::tensor::Tensor;
    use rand::SeedableRng;

    #[test]
    fn variant_names_parse() {
        for v in Variant::ALL {
            assert_eq!(v.key().parse::<Variant>().unwrap(), v);
        }
        assert_eq!("+Dual-SA".parse::<Variant>().unwrap(), Variant::DualSa);
        assert_eq!("cmsa".parse::<Variant>().unwrap(), Variant::CMsa);
        assert!("dense".parse::<Variant>().is_err());
    }

    #[test]
    fn config_rejects_bad_patch() {
        let cfg = DualSaConfig {
            patch: 4,
            ..Default::default()
        };
        assert!(cfg.validate(&[8, 16, 32, 64]).is_err());
        assert!(DualSaConfig::default().validate(&[8, 16, 32, 64]).is_ok());
    }

    #[test]
    fn embedding_shapes() {
        let channels = [4, 8, 16, 32];
        let cfg = DualSaConfig {
            stages: 1,
            heads: 2,
            mlp_ratio: 2,
            ..Default::default()
        };
        let emb = DualSaEmbedding::new(&channels, &cfg, Variant::DualSa).unwrap();
        let store = ParamStore::<f64>::init(&emb.specs(), &mut rand_chacha::ChaCha8Rng::seed_from_u64(0));
        let g = Graph::inference();
        let cx = Ctx::new(&g, &store);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let stages = channels
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let s = 16 >> i;
                g.constant(Tensor::uniform([c, s, s], -1.0, 1.0, &mut rng))
            })
            .collect();
        let enc = EncoderStack { stages };
        let state = emb.embed_multiscale(&cx, &enc).unwrap();
        for (i, s) in state.scales.iter().enumerate() {
            assert_eq!(s.x.len(), (16 >> i) * (16 >> i));
            assert_eq!(s.z.as_ref().unwrap().len(), 4);
        }
        let y = emb.run_embedding(&cx, &enc).unwrap();
        for (i, t) in y.iter().enumerate() {
            assert_eq!(t.shape(), [channels[i], 16 >> i, 16 >> i]);
        }
    }

    fn random_state<'g>(g: &'g Graph<f64>, channels: &[usize], side: usize, patch: usize, seed: u64) -> DualState<'g, f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let scales = channels
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let s = side >> i;
                let grid = PatchGrid::new(s, s, patch >> i).unwrap();
                let (gh, gw) = grid.grid_dims();
                ScaleState {
                    x: TokenSequence {
                        tokens: g.constant(Tensor::randn([s * s, c], 1.0, &mut rng)),
                        height: s,
                        width: s,
                        scale: i + 1,
                    },
                    z: Some(TokenSequence {
                        tokens: g.constant(Tensor::randn([gh * gw, c], 1.0, &mut rng)),
                        height: gh,
                        width: gw,
                        scale: i + 1,
                    }),
                    grid,
                }
            })
            .collect();
        DualState { scales, stage: 0 }
    }

    fn perturbed(specs: &[ParamSpec], seed: u64) -> ParamStore<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::init(specs, &mut rng);
        for (_, t) in store.iter_mut() {
            let noise = Tensor::randn(t.shape().to_vec(), 0.3, &mut rng);
            t.add_assign(&noise);
        }
        store
    }

    #[test]
    fn interleaving_order_is_observable() {
        let cfg = DualSaConfig { stages: 1, heads: 2, mlp_ratio: 2, patch: 4, offset_bound: 2.0 };
        let block = DualBlock::new("b", &[4, 8], &cfg, Variant::DualSa).unwrap();
        let store = perturbed(&block.specs(), 3);
        let g = Graph::inference();
        let cx = Ctx::new(&g, &store);
        let state = random_state(&g, &[4, 8], 12, 4, 4);
        let a = block.forward_ordered(&cx, &state, false).unwrap();
        let b = block.forward_ordered(&cx, &state, true).unwrap();
        for (sa, sb) in a.scales.iter().zip(&b.scales) {
            // x is updated first either way; only z sees the order.
            assert_eq!(sa.x.tokens.value(), sb.x.tokens.value());
            let za = sa.z.as_ref().unwrap().tokens.value();
            let zb = sb.z.as_ref().unwrap().tokens.value();
            assert!(za.zip_map(zb, |p, q| p - q).max_abs() > 1e-6);
        }
    }

    #[test]
    fn stages_compose() {
        let cfg = DualSaConfig { stages: 2, heads: 2, mlp_ratio: 2, patch: 4, offset_bound: 2.0 };
        let emb = DualSaEmbedding::new(&[4, 8], &cfg, Variant::DualSa).unwrap();
        let store = perturbed(&emb.specs(), 5);
        let one = DualSaConfig { stages: 1, ..cfg.clone() };
        let first = DualBlock::new("dualsa.stage1", &[4, 8], &one, Variant::DualSa).unwrap();
        let second = DualBlock::new("dualsa.stage2", &[4, 8], &one, Variant::DualSa).unwrap();
        let g = Graph::inference();
        let cx = Ctx::new(&g, &store);
        let state = random_state(&g, &[4, 8], 12, 4, 6);
        let mut stacked = state.clone();
        for b in emb.blocks() {
            stacked = b.forward(&cx, &stacked).unwrap();
        }
        let twice = second.forward(&cx, &first.forward(&cx, &state).unwrap()).unwrap();
        assert_eq!(twice.stage, 2);
        for (p, q) in stacked.scales.iter().zip(&twice.scales) {
            assert_eq!(p.x.tokens.value(), q.x.tokens.value());
            assert_eq!(p.z.as_ref().unwrap().tokens.value(), q.z.as_ref().unwrap().tokens.value());
        }
    }
}
