//! U-Net encoder/decoder with Conv-Gn-ReLU stages and the sigmoid head.
//!
//! Resolution table: encoder and decoder stage `m` (1-based) run at
//! `H / 2^(m-1)`. The encoder max-pools after stages 1–3; the decoder
//! upsamples bilinearly before stages 3, 2 and 1 and concatenates the skip
//! feature for that scale.

use crate::autograd::Var;
use crate::error::{config_err, dim_err, Result};
use crate::nn::{Conv2d, Ctx, GroupNorm, Module, ParamSpec};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

pub use crate::maps::ScoreMap;

/// Number of encoder/decoder scales.
pub const SCALES: usize = 4;
/// Input sides must be multiples of this.
pub const INPUT_MULTIPLE: usize = 1 << (SCALES - 1);

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub in_channels: usize,
    /// Channels of the first stage; doubled at every pooling step.
    pub base_channels: usize,
    pub groups: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            in_channels: 3,
            base_channels: 64,
            groups: 8,
        }
    }
}

impl BackboneConfig {
    /// Channel count `C_m` of scale `m ∈ 1..=4`.
    pub fn channels(&self, m: usize) -> usize {
        self.base_channels << (m - 1)
    }

    pub fn all_channels(&self) -> Vec<usize> {
        (1..=SCALES).map(|m| self.channels(m)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.base_channels == 0 {
            return Err(config_err!("channel counts must be positive"));
        }
        if self.base_channels % self.groups != 0 {
            return Err(config_err!(
                "base channels {} not divisible by {} groups",
                self.base_channels,
                self.groups
            ));
        }
        Ok(())
    }
}

/// One "Conv-Gn-ReLU" stage: two 3×3 convolutions, each followed by group
/// norm and ReLU.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    conv1: Conv2d,
    gn1: GroupNorm,
    conv2: Conv2d,
    gn2: GroupNorm,
}

impl ConvBlock {
    pub fn new(name: &str, cin: usize, cout: usize, groups: usize) -> Result<Self> {
        Ok(ConvBlock {
            conv1: Conv2d::new(format!("{name}.conv1"), cin, cout, 3),
            gn1: GroupNorm::new(format!("{name}.gn1"), cout, groups)?,
            conv2: Conv2d::new(format!("{name}.conv2"), cout, cout, 3),
            gn2: GroupNorm::new(format!("{name}.gn2"), cout, groups)?,
        })
    }

    pub fn forward<'g, T: Scalar>(&self, cx: &Ctx<'g, T>, x: &Var<'g, T>) -> Var<'g, T> {
        let y = self.gn1.forward(cx, &self.conv1.forward(cx, x)).relu();
        self.gn2.forward(cx, &self.conv2.forward(cx, &y)).relu()
    }

    pub fn out_channels(&self) -> usize {
        self.conv2.cout
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        self.conv1.macs(h, w) + self.conv2.macs(h, w)
    }
}

impl Module for ConvBlock {
    fn param_specs(&self, out: &mut Vec<ParamSpec>) {
        self.conv1.param_specs(out);
        self.gn1.param_specs(out);
        self.conv2.param_specs(out);
        self.gn2.param_specs(out);
    }
}

/// Encoder features `e^1..e^4`, finest first.
pub struct EncoderStack<'g, T: Scalar> {
    pub stages: Vec<Var<'g, T>>,
}

impl<'g, T: Scalar> EncoderStack<'g, T> {
    /// `(C, H, W)` of every stage.
    pub fn dims(&self) -> Vec<(usize, usize, usize)> {
        self.stages.iter().map(|s| s.value().dims3()).collect()
    }
}

#[derive(Clone, Debug)]
pub struct Encoder {
    stages: Vec<ConvBlock>,
    config: BackboneConfig,
}

impl Encoder {
    pub fn new(config: &BackboneConfig) -> Result<Self> {
        config.validate()?;
        let mut stages = Vec::with_capacity(SCALES);
        let mut cin = config.in_channels;
        for m in 1..=SCALES {
            let cout = config.channels(m);
            stages.push(ConvBlock::new(
                &format!("encoder.stage{m}"),
                cin,
                cout,
                config.groups,
            )?);
            cin = cout;
        }
        Ok(Encoder {
            stages,
            config: config.clone(),
        })
    }

    pub fn encode<'g, T: Scalar>(
        &self,
        cx: &Ctx<'g, T>,
        image: &Var<'g, T>,
    ) -> Result<EncoderStack<'g, T>> {
        let shape = image.shape();
        if shape.len() != 3 || shape[0] != self.config.in_channels {
            return Err(dim_err!(
                "encoder expects [{}, H, W] input, got {shape:?}",
                self.config.in_channels
            ));
        }
        let (h, w) = (shape[1], shape[2]);
        if h % INPUT_MULTIPLE != 0 || w % INPUT_MULTIPLE != 0 || h == 0 || w == 0 {
            return Err(dim_err!(
                "input {h}x{w} not divisible by {INPUT_MULTIPLE}; pad first"
            ));
        }
        let mut feats = Vec::with_capacity(SCALES);
        let mut x = image.clone();
        for (i, stage) in self.stages.iter().enumerate() {
            if i > 0 {
                x = x.max_pool2();
            }
            x = stage.forward(cx, &x);
            feats.push(x.clone());
        }
        Ok(EncoderStack { stages: feats })
    }

    pub fn macs(&self, h: usize, w: usize) -> Vec<(String, u64)> {
        self.stages
            .iter()
            .enumerate()
            .map(|(i, s)| (format!("encoder.stage{}", i + 1), s.macs(h >> i, w >> i)))
            .collect()
    }
}

impl Module for Encoder {
    fn param_specs(&self, out: &mut Vec<ParamSpec>) {
        for s in &self.stages {
            s.param_specs(out);
        }
    }
}

#[derive(Clone, Debug)]
pub struct Decoder {
    /// Indexed by scale: `stages[0]` produces `d^1`.
    stages: Vec<ConvBlock>,
}

impl Decoder {
    pub fn new(config: &BackboneConfig) -> Result<Self> {
        config.validate()?;
        let mut stages = Vec::with_capacity(SCALES);
        for m in 1..=SCALES {
            // The feature arriving from below always carries C_m channels:
            // e^4 at the bottom, otherwise the output of stage m+1.
            let skip = config.channels(m);
            let below = config.channels(m);
            let cout = if m == 1 {
                config.channels(1)
            } else {
                config.channels(m - 1)
            };
            stages.push(ConvBlock::new(
                &format!("decoder.stage{m}"),
                below + skip,
                cout,
                config.groups,
            )?);
        }
        Ok(Decoder { stages })
    }

    /// Returns `d^1..d^4` (finest first). `skips[m-1]` must match scale `m`.
    pub fn decode<'g, T: Scalar>(
        &self,
        cx: &Ctx<'g, T>,
        e4: &Var<'g, T>,
        skips: &[Var<'g, T>],
    ) -> Result<Vec<Var<'g, T>>> {
        if skips.len() != SCALES {
            return Err(dim_err!("decoder needs {SCALES} skips, got {}", skips.len()));
        }
        let mut outs: Vec<Var<'g, T>> = Vec::with_capacity(SCALES);
        let mut below = e4.clone();
        for m in (1..=SCALES).rev() {
            let skip = &skips[m - 1];
            let (_, sh, sw) = skip.value().dims3();
            if m < SCALES {
                let (_, bh, bw) = below.value().dims3();
                if (2 * bh, 2 * bw) != (sh, sw) {
                    return Err(dim_err!(
                        "decoder stage {m}: skip {sh}x{sw} is not twice {bh}x{bw}"
                    ));
                }
                below = below.resize_bilinear(sh, sw);
            }
            let (_, bh, bw) = below.value().dims3();
            if (bh, bw) != (sh, sw) {
                return Err(dim_err!(
                    "decoder stage {m}: feature {bh}x{bw} vs skip {sh}x{sw}"
                ));
            }
            let stage = &self.stages[m - 1];
            let cin = stage.conv1.cin;
            let got = below.shape()[0] + skip.shape()[0];
            if got != cin {
                return Err(dim_err!(
                    "decoder stage {m}: expected {cin} input channels, got {got}"
                ));
            }
            let x = Var::concat0(&[below.clone(), skip.clone()]);
            below = stage.forward(cx, &x);
            outs.push(below.clone());
        }
        outs.reverse();
        Ok(outs)
    }

    pub fn macs(&self, h: usize, w: usize) -> Vec<(String, u64)> {
        self.stages
            .iter()
            .enumerate()
            .map(|(i, s)| (format!("decoder.stage{}", i + 1), s.macs(h >> i, w >> i)))
            .collect()
    }
}

impl Module for Decoder {
    fn param_specs(&self, out: &mut Vec<ParamSpec>) {
        for s in &self.stages {
            s.param_specs(out);
        }
    }
}

/// 1×1 convolution to one channel followed by a sigmoid.
#[derive(Clone, Debug)]
pub struct SegmentHead {
    conv: Conv2d,
}

impl SegmentHead {
    pub fn new(channels: usize) -> Self {
        SegmentHead {
            conv: Conv2d::new("head", channels, 1, 1),
        }
    }

    /// Pre-sigmoid logits `[1, H, W]`.
    pub fn logits<'g, T: Scalar>(&self, cx: &Ctx<'g, T>, d1: &Var<'g, T>) -> Var<'g, T> {
        self.conv.forward(cx, d1)
    }

    pub fn forward<'g, T: Scalar>(&self, cx: &Ctx<'g, T>, d1: &Var<'g, T>) -> Var<'g, T> {
        self.logits(cx, d1).sigmoid()
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        self.conv.macs(h, w)
    }
}

impl Module for SegmentHead {
    fn param_specs(&self, out: &mut Vec<ParamSpec>) {
        self.conv.param_specs(out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Graph;
    use crate::nn::ParamStore;
    use crate::tensor::Tensor;
    use rand::SeedableRng;

    fn small() -> BackboneConfig {
        BackboneConfig {
            in_channels: 3,
            base_channels: 4,
            groups: 2,
        }
    }

    #[test]
    fn encoder_resolution_table() {
        let cfg = small();
        let enc = Encoder::new(&cfg).unwrap();
        let store = ParamStore::<f32>::init(&enc.specs(), &mut rand_chacha::ChaCha8Rng::seed_from_u64(1));
        let g = Graph::inference();
        let cx = Ctx::new(&g, &store);
        let img = g.constant(Tensor::zeros([3, 16, 24]));
        let stack = enc.encode(&cx, &img).unwrap();
        assert_eq!(
            stack.dims(),
            vec![(4, 16, 24), (8, 8, 12), (16, 4, 6), (32, 2, 3)]
        );
        let tiny = enc.encode(&cx, &g.constant(Tensor::zeros([3, 8, 8]))).unwrap();
        assert_eq!(tiny.dims()[3], (32, 1, 1));
        assert!(enc.encode(&cx, &g.constant(Tensor::zeros([3, 12, 8]))).is_err());
    }

    #[test]
    fn default_channel_schedule() {
        let cfg = BackboneConfig::default();
        assert_eq!(cfg.all_channels(), vec![64, 128, 256, 512]);
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_features() {
        let enc = Encoder::new(&small()).unwrap();
        let store = ParamStore::<f64>::init(&enc.specs(), &mut rand_chacha::ChaCha8Rng::seed_from_u64(2));
        let g = Graph::inference();
        let cx = Ctx::new(&g, &store);
        let stack = enc.encode(&cx, &g.constant(Tensor::zeros([3, 8, 8]))).unwrap();
        for s in &stack.stages {
            assert!(s.value().data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn head_sigmoid_values() {
        let head = SegmentHead::new(1);
        let mut store = ParamStore::<f64>::new();
        store.insert("head.weight", Tensor::ones([1, 1, 1, 1]));
        store.insert("head.bias", Tensor::zeros([1]));
        let g = Graph::inference();
        let cx = Ctx::new(&g, &store);
        let d1 = g.constant(Tensor::new([1, 1, 3], vec![0.0, 10.0, -10.0]));
        let s = head.forward(&cx, &d1);
        let v = s.value().data();
        assert_eq!(v[0], 0.5);
        assert!((v[1] - 0.999_954_602_131_297_6).abs() < 1e-12);
        assert!((v[2] - 4.539_786_870_243_442e-5).abs() < 1e-15);
    }
}
