//! The assembled network: encoder, optional Dual-SA embedding on the skips,
//! decoder and sigmoid head.

use crate::autograd::{Graph, Var};
use crate::backbone::{BackboneConfig, Decoder, Encoder, SegmentHead, INPUT_MULTIPLE};
use crate::data;
use crate::dual_sa::{DualSaConfig, DualSaEmbedding, Variant};
use crate::error::{dim_err, Result};
use crate::maps::ScoreMap;
use crate::nn::{Ctx, Module, ParamSpec, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub backbone: BackboneConfig,
    pub dualsa: DualSaConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::DualSa,
            backbone: BackboneConfig::default(),
            dualsa: DualSaConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }
}

pub struct UroadNet {
    config: ModelConfig,
    encoder: Encoder,
    decoder: Decoder,
    head: SegmentHead,
    embedding: Option<DualSaEmbedding>,
}

impl UroadNet {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.backbone.validate()?;
        let channels = config.backbone.all_channels();
        let embedding = match config.variant {
            Variant::Baseline => None,
            v => Some(DualSaEmbedding::new(&channels, &config.dualsa, v)?),
        };
        Ok(UroadNet {
            config: config.clone(),
            encoder: Encoder::new(&config.backbone)?,
            decoder: Decoder::new(&config.backbone)?,
            head: SegmentHead::new(config.backbone.channels(1)),
            embedding,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn embedding(&self) -> Option<&DualSaEmbedding> {
        self.embedding.as_ref()
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    pub fn head(&self) -> &SegmentHead {
        &self.head
    }

    /// Input sides are padded up to a multiple of this.
    pub fn input_multiple(&self) -> usize {
        match self.embedding {
            Some(_) => INPUT_MULTIPLE.max(self.config.dualsa.patch),
            None => INPUT_MULTIPLE,
        }
    }

    pub fn init_params<T: Scalar>(&self, seed: u64) -> ParamStore<T> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        ParamStore::init(&self.specs(), &mut rng)
    }

    /// Logits `[1, H, W]` for an image whose sides are already multiples of
    /// [`input_multiple`](Self::input_multiple).
    pub fn logits<'g, T: Scalar>(&self, cx: &Ctx<'g, T>, image: &Var<'g, T>) -> Result<Var<'g, T>> {
        let shape = image.shape();
        let mult = self.input_multiple();
        if shape.len() != 3 || shape[1] % mult != 0 || shape[2] % mult != 0 {
            return Err(dim_err!("input {shape:?} sides must be multiples of {mult}"));
        }
        let enc = self.encoder.encode(cx, image)?;
        let skips = match &self.embedding {
            Some(e) => e.run_embedding(cx, &enc)?,
            None => enc.stages.clone(),
        };
        let e4 = enc.stages.last().expect("encoder has stages").clone();
        let d = self.decoder.decode(cx, &e4, &skips)?;
        Ok(self.head.logits(cx, &d[0]))
    }

    /// Scores `[1, H, W]` for an image of any size: reflect-padded to the
    /// input multiple, then cropped back.
    pub fn forward<'g, T: Scalar>(&self, cx: &Ctx<'g, T>, image: &Var<'g, T>) -> Result<Var<'g, T>> {
        let shape = image.shape();
        if shape.len() != 3 || shape[0] != self.config.backbone.in_channels {
            return Err(dim_err!(
                "expected a [{}, H, W] image, got {shape:?}",
                self.config.backbone.in_channels
            ));
        }
        let (h, w) = (shape[1], shape[2]);
        if h == 0 || w == 0 {
            return Err(dim_err!("empty image"));
        }
        let mult = self.input_multiple();
        let (ph, pw) = (h.div_ceil(mult) * mult, w.div_ceil(mult) * mult);
        let padded = image.pad_reflect(ph, pw);
        Ok(self.logits(cx, &padded)?.sigmoid().crop(h, w))
    }

    /// Whole-image inference without recording gradients.
    pub fn predict<T: Scalar>(&self, params: &ParamStore<T>, image: &Tensor<T>) -> Result<ScoreMap> {
        let g = Graph::inference();
        let cx = Ctx::new(&g, params);
        let out = self.forward(&cx, &g.constant(image.clone()))?;
        let (_, h, w) = out.value().dims3();
        let values = out.value().data().iter().map(|v| v.as_f64()).collect();
        ScoreMap::new(h, w, values)
    }

    /// Like [`predict`](Self::predict), but images larger than `tile` on
    /// either side are cut into overlapping tiles and blended back.
    pub fn predict_tiled<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        image: &Tensor<f32>,
        tile: usize,
        overlap: usize,
    ) -> Result<ScoreMap> {
        let (_, h, w) = image.dims3();
        if h <= tile && w <= tile {
            return self.predict(params, &image.cast());
        }
        let scored = data::tile(image, tile, overlap)?
            .iter()
            .map(|t| Ok((self.predict(params, &t.data.cast())?, t.origin)))
            .collect::<Result<Vec<_>>>()?;
        data::stitch(&scored, h, w)
    }

    /// Multiply–accumulate estimate per top-level block at `h × w`.
    pub fn macs(&self, h: usize, w: usize) -> Vec<(String, u64)> {
        let mult = self.input_multiple();
        let (h, w) = (h.div_ceil(mult) * mult, w.div_ceil(mult) * mult);
        let mut out = self.encoder.macs(h, w);
        if let Some(e) = &self.embedding {
            let dims: Vec<_> = self
                .config
                .backbone
                .all_channels()
                .iter()
                .enumerate()
                .map(|(i, &c)| (c, h >> i, w >> i))
                .collect();
            out.extend(e.macs(&dims));
        }
        out.extend(self.decoder.macs(h, w));
        out.push(("head".into(), self.head.macs(h, w)));
        out
    }

    /// Parameter counts grouped by top-level block, in declaration order.
    pub fn param_report(&self) -> Vec<(String, usize)> {
        let mut out: Vec<(String, usize)> = Vec::new();
        for s in self.specs() {
            let group = block_of(&s.name);
            match out.last_mut() {
                Some((g, n)) if *g == group => *n += s.numel(),
                _ => out.push((group, s.numel())),
            }
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.specs().iter().map(ParamSpec::numel).sum()
    }
}

fn block_of(name: &str) -> String {
    let mut parts = name.split('.');
    let first = parts.next().unwrap_or_default();
    match first {
        "encoder" | "decoder" | "dualsa" => match parts.next() {
            Some(second) => format!("{first}.{second}"),
            None => first.to_string(),
        },
        _ => first.to_string(),
    }
}

impl Module for UroadNet {
    fn param_specs(&self, out: &mut Vec<ParamSpec>) {
        self.encoder.param_specs(out);
        if let Some(e) = &self.embedding {
            e.param_specs(out);
        }
        self.decoder.param_specs(out);
        self.head.param_specs(out);
    }
}
