//! Loss, optimizer, learning-rate schedule and the training loop.

use crate::autograd::{Graph, Var};
use crate::data::Sample;
use crate::dual_sa::Variant;
use crate::error::{config_err, dim_err, Error, Result};
use crate::maps::{Mask, ScoreMap, MASK_THRESHOLD};
use crate::metrics::{confusion, Confusion};
use crate::model::{ModelConfig, UroadNet};
use crate::nn::{Ctx, ParamGrads, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Additive smoothing of the Dice ratio, applied to numerator and
/// denominator so that an empty prediction of an empty mask scores 0.
pub const DICE_SMOOTH: f64 = 1.0;
/// Scores are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` inside the logarithms.
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub ce: f64,
    pub dice: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { ce: 1.0, dice: 1.0 }
    }
}

struct LossParts {
    value: f64,
    /// d loss / d score per pixel.
    grad: Vec<f64>,
}

fn loss_parts(score: &[f64], gt: &[bool], w: LossWeights) -> LossParts {
    let n = score.len().max(1) as f64;
    let (mut bce, mut inter, mut ssum, mut gsum) = (0.0, 0.0, 0.0, 0.0);
    for (&s, &g) in score.iter().zip(gt) {
        let sc = s.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        bce -= if g { sc.ln() } else { (1.0 - sc).ln() };
        if g {
            inter += s;
            gsum += 1.0;
        }
        ssum += s;
    }
    let union = ssum + gsum + DICE_SMOOTH;
    let ratio = (2.0 * inter + DICE_SMOOTH) / union;
    let grad = score
        .iter()
        .zip(gt)
        .map(|(&s, &g)| {
            let gf = if g { 1.0 } else { 0.0 };
            let d_bce = if s > BCE_CLAMP && s < 1.0 - BCE_CLAMP {
                (-gf / s + (1.0 - gf) / (1.0 - s)) / n
            } else {
                0.0
            };
            let d_dice = -(2.0 * gf * union - (2.0 * inter + DICE_SMOOTH)) / (union * union);
            w.ce * d_bce + w.dice * d_dice
        })
        .collect();
    LossParts {
        value: w.ce * bce / n + w.dice * (1.0 - ratio),
        grad,
    }
}

/// Weighted BCE plus smoothed Dice of a score map against a mask.
pub fn loss(score: &ScoreMap, gt: &Mask, w: LossWeights) -> Result<f64> {
    if (score.height, score.width) != (gt.height, gt.width) {
        return Err(dim_err!(
            "score {}x{} vs mask {}x{}",
            score.height,
            score.width,
            gt.height,
            gt.width
        ));
    }
    Ok(loss_parts(&score.values, &gt.data, w).value)
}

/// Differentiable [`loss`] of a `[1, H, W]` (or `[H, W]`) score variable.
pub fn loss_var<'g, T: Scalar>(score: &Var<'g, T>, gt: &Mask, w: LossWeights) -> Result<Var<'g, T>> {
    let shape = score.shape().to_vec();
    let hw = match shape[..] {
        [1, h, w] | [h, w] => (h, w),
        _ => return Err(dim_err!("score must be [1, H, W], got {shape:?}")),
    };
    if hw != (gt.height, gt.width) {
        return Err(dim_err!("score {:?} vs mask {}x{}", hw, gt.height, gt.width));
    }
    let s: Vec<f64> = score.value().data().iter().map(|v| v.as_f64()).collect();
    let parts = loss_parts(&s, &gt.data, w);
    let grad: Vec<T> = parts.grad.iter().map(|&g| T::lit(g)).collect();
    let out = Tensor::new([1], vec![T::lit(parts.value)]);
    Ok(score.graph().record(out, &[score], move |g, _| {
        let up = g.data()[0];
        vec![Some(Tensor::new(shape.clone(), grad.iter().map(|&d| d * up).collect()))]
    }))
}

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: BTreeMap<String, Tensor<T>>,
    pub v: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Default for Adam<T> {
    fn default() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }
}

impl<T: Scalar> Adam<T> {
    /// One update. Parameters without a gradient entry are left alone.
    pub fn update(&mut self, params: &mut ParamStore<T>, grads: &ParamGrads<T>, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (step, eps) = (T::lit(lr / c1), T::lit(self.eps));
        let c2s = T::lit(c2.sqrt());
        for (name, p) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape().to_vec()));
            let v = self.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape().to_vec()));
            for (((p, &g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                *p -= step * *m / (v.sqrt() / c2s + eps);
            }
        }
    }
}

/// Halves the learning rate after `patience` epochs without a new best
/// validation loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    pub patience: usize,
    pub factor: f64,
    /// Lowest validation loss so far.
    pub best: Option<f64>,
    pub since_best: usize,
    /// Initial rate followed by the rate after each decay.
    pub history: Vec<f64>,
}

impl Plateau {
    pub fn new(lr: f64, patience: usize, factor: f64) -> Self {
        Plateau {
            patience,
            factor,
            best: None,
            since_best: 0,
            history: vec![lr],
        }
    }

    pub fn lr(&self) -> f64 {
        *self.history.last().expect("history starts with the initial rate")
    }

    pub fn decays(&self) -> usize {
        self.history.len() - 1
    }

    /// Records one epoch; returns whether it was a new best.
    pub fn observe(&mut self, val_loss: f64) -> bool {
        if self.best.map_or(true, |b| val_loss < b) {
            self.best = Some(val_loss);
            self.since_best = 0;
            return true;
        }
        self.since_best += 1;
        if self.since_best >= self.patience {
            let lr = self.lr() * self.factor;
            self.history.push(lr);
            self.since_best = 0;
        }
        false
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub patience: usize,
    pub decay: f64,
    pub epochs: usize,
    /// Optional cap on optimizer steps across all epochs.
    pub max_steps: Option<usize>,
    pub batch_size: usize,
    pub loss: LossWeights,
    pub seed: u64,
    pub label_rate: f64,
    /// Random flips and quarter turns.
    pub augment: bool,
    /// Random rescaling in `[0.75, 1.25]`.
    pub rescale: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            patience: 10,
            decay: 0.5,
            epochs: 200,
            max_steps: None,
            batch_size: 2,
            loss: LossWeights::default(),
            seed: 0,
            label_rate: 1.0,
            augment: true,
            rescale: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(config_err!("learning rate must be positive, got {}", self.lr));
        }
        if self.patience == 0 {
            return Err(config_err!("patience must be at least 1"));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(config_err!("decay factor must be in (0, 1], got {}", self.decay));
        }
        if self.batch_size == 0 {
            return Err(config_err!("batch size must be at least 1"));
        }
        if !(self.label_rate > 0.0 && self.label_rate <= 1.0) {
            return Err(config_err!("label rate must be in (0, 1], got {}", self.label_rate));
        }
        if self.loss.ce < 0.0 || self.loss.dice < 0.0 {
            return Err(config_err!("loss weights must be nonnegative"));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub steps: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_iou: f64,
}

#[derive(Clone, Debug)]
pub struct TrainState<T> {
    /// Epochs completed.
    pub epoch: usize,
    pub steps: usize,
    pub params: ParamStore<T>,
    pub best_params: ParamStore<T>,
    pub adam: Adam<T>,
    pub schedule: Plateau,
    pub log: Vec<EpochLog>,
}

/// Deterministic `⌈rate · n⌉`-element subset, nested across rates for one
/// seed: the selection is a prefix of a seeded permutation, returned in the
/// original order.
pub fn label_rate_subsample<S: Clone>(samples: &[S], rate: f64, seed: u64) -> Result<Vec<S>> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(config_err!("label rate must be in (0, 1], got {rate}"));
    }
    let keep = (rate * samples.len() as f64 - 1e-9).ceil().max(0.0) as usize;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x6c61_6265_6c73));
    let mut chosen = order[..keep.min(samples.len())].to_vec();
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(|i| samples[i].clone()).collect())
}

/// Model for a named ablation variant with otherwise shared settings.
pub fn build_variant(name: &str, base: &ModelConfig) -> Result<UroadNet> {
    let variant: Variant = name.parse()?;
    UroadNet::new(&base.clone().with_variant(variant))
}

/// One of the eight symmetries of the square: `flip` then `turns` quarter
/// turns clockwise.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dihedral {
    pub flip: bool,
    pub turns: u8,
}

impl Dihedral {
    fn source(&self, y: usize, x: usize, h: usize, w: usize) -> (usize, usize) {
        // (y, x) in the output; (h, w) are output dims.
        let (mut sy, mut sx, mut sh, mut sw) = (y, x, h, w);
        for _ in 0..self.turns % 4 {
            // undo one clockwise turn: out(y, x) = in(sw-1-x, y) with in dims (sw, sh)
            let (ny, nx) = (sw - 1 - sx, sy);
            sy = ny;
            sx = nx;
            std::mem::swap(&mut sh, &mut sw);
        }
        if self.flip {
            sx = sw - 1 - sx;
        }
        (sy, sx)
    }

    fn dims(&self, h: usize, w: usize) -> (usize, usize) {
        if self.turns % 2 == 1 {
            (w, h)
        } else {
            (h, w)
        }
    }

    pub fn apply_image<T: Scalar>(&self, img: &Tensor<T>) -> Tensor<T> {
        let (c, h, w) = img.dims3();
        let (oh, ow) = self.dims(h, w);
        let d = img.data();
        let mut out = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            for y in 0..oh {
                for x in 0..ow {
                    let (sy, sx) = self.source(y, x, oh, ow);
                    out.push(d[(ch * h + sy) * w + sx]);
                }
            }
        }
        Tensor::new([c, oh, ow], out)
    }

    pub fn apply_mask(&self, m: &Mask) -> Mask {
        let (oh, ow) = self.dims(m.height, m.width);
        Mask::from_fn(oh, ow, |y, x| {
            let (sy, sx) = self.source(y, x, oh, ow);
            m.get(sy, sx)
        })
    }
}

/// Bilinear image and nearest-neighbour mask resampling to `(h, w)`.
pub fn rescale<T: Scalar>(img: &Tensor<T>, mask: &Mask, h: usize, w: usize) -> (Tensor<T>, Mask) {
    let (c, ih, iw) = img.dims3();
    let fy = ih as f64 / h as f64;
    let fx = iw as f64 / w as f64;
    let d = img.data();
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for y in 0..h {
            let sy = ((y as f64 + 0.5) * fy - 0.5).clamp(0.0, (ih - 1) as f64);
            let (y0, ty) = (sy.floor() as usize, sy - sy.floor());
            let y1 = (y0 + 1).min(ih - 1);
            for x in 0..w {
                let sx = ((x as f64 + 0.5) * fx - 0.5).clamp(0.0, (iw - 1) as f64);
                let (x0, tx) = (sx.floor() as usize, sx - sx.floor());
                let x1 = (x0 + 1).min(iw - 1);
                let at = |yy: usize, xx: usize| d[(ch * ih + yy) * iw + xx].as_f64();
                let v = (1.0 - ty) * ((1.0 - tx) * at(y0, x0) + tx * at(y0, x1))
                    + ty * ((1.0 - tx) * at(y1, x0) + tx * at(y1, x1));
                out.push(T::lit(v));
            }
        }
    }
    let m = Mask::from_fn(h, w, |y, x| {
        let sy = (((y as f64 + 0.5) * fy) as usize).min(mask.height - 1);
        let sx = (((x as f64 + 0.5) * fx) as usize).min(mask.width - 1);
        mask.get(sy, sx)
    });
    (Tensor::new([c, h, w], out), m)
}

/// A training example in the working precision.
#[derive(Clone, Debug)]
pub struct Example<T> {
    pub image: Tensor<T>,
    pub mask: Mask,
}

impl<T: Scalar> Example<T> {
    pub fn from_sample(s: &Sample) -> Self {
        Example {
            image: s.image.cast(),
            mask: s.mask.clone(),
        }
    }
}

/// Mean loss and pooled pixel confusion of a model over a set.
pub fn evaluate_set<T: Scalar>(
    net: &UroadNet,
    params: &ParamStore<T>,
    set: &[Example<T>],
    w: LossWeights,
) -> Result<(f64, Confusion)> {
    let mut total = 0.0;
    let mut counts = Confusion::default();
    for ex in set {
        let score = net.predict(params, &ex.image)?;
        total += loss(&score, &ex.mask, w)?;
        counts.merge(&confusion(&score.threshold(MASK_THRESHOLD), &ex.mask, |_| true)?);
    }
    Ok((total / set.len().max(1) as f64, counts))
}

/// Per-epoch hook: receives the state after each epoch and whether the
/// epoch produced a new best validation loss.
pub type EpochHook<'a, T> = dyn FnMut(&TrainState<T>, bool) -> Result<()> + 'a;

pub struct Trainer<'n> {
    pub net: &'n UroadNet,
    pub config: TrainConfig,
}

impl<'n> Trainer<'n> {
    pub fn new(net: &'n UroadNet, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Trainer { net, config })
    }

    /// Fresh state with parameters initialized from the configured seed.
    pub fn init_state<T: Scalar>(&self) -> TrainState<T> {
        let params = self.net.init_params(self.config.seed);
        TrainState {
            epoch: 0,
            steps: 0,
            best_params: params.clone(),
            params,
            adam: Adam::default(),
            schedule: Plateau::new(self.config.lr, self.config.patience, self.config.decay),
            log: Vec::new(),
        }
    }

    fn augment<T: Scalar>(&self, ex: &Example<T>, rng: &mut ChaCha8Rng) -> Example<T> {
        let mut out = ex.clone();
        if self.config.rescale {
            let s: f64 = rng.gen_range(0.75..=1.25);
            let (_, h, w) = ex.image.dims3();
            let side = |d: usize| (((d as f64 * s) / 8.0).round() as usize).max(1) * 8;
            let (img, mask) = rescale(&ex.image, &ex.mask, side(h), side(w));
            out = Example { image: img, mask };
        }
        if self.config.augment {
            let t = Dihedral {
                flip: rng.gen(),
                turns: rng.gen_range(0..4),
            };
            out = Example {
                image: t.apply_image(&out.image),
                mask: t.apply_mask(&out.mask),
            };
        }
        out
    }

    /// Loss and parameter gradients of one batch, averaged over its items.
    pub fn batch_gradients<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        batch: &[Example<T>],
    ) -> Result<(f64, ParamGrads<T>)> {
        let g = Graph::new();
        let cx = Ctx::new(&g, params);
        let mut terms = Vec::with_capacity(batch.len());
        for ex in batch {
            let score = self.net.forward(&cx, &g.constant(ex.image.clone()))?;
            terms.push(loss_var(&score, &ex.mask, self.config.loss)?);
        }
        let total = Var::concat0(&terms).sum_all().scale(T::one() / T::from_usize_lossy(batch.len()));
        let value = total.scalar().as_f64();
        let grads = g.backward(&total);
        Ok((value, cx.param_grads(&grads)))
    }

    /// Runs until the epoch or step budget is exhausted.
    pub fn train<T: Scalar>(
        &self,
        train: &[Example<T>],
        val: &[Example<T>],
        state: &mut TrainState<T>,
        hook: &mut EpochHook<'_, T>,
    ) -> Result<()> {
        if train.is_empty() {
            return Err(Error::Argument("training set is empty".into()));
        }
        if val.is_empty() {
            return Err(Error::Argument("validation set is empty".into()));
        }
        let budget = self.config.max_steps.unwrap_or(usize::MAX);
        while state.epoch < self.config.epochs && state.steps < budget {
            // One stream per epoch keeps resumed runs identical to fresh ones.
            let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed.wrapping_add(1 + state.epoch as u64));
            let mut order: Vec<usize> = (0..train.len()).collect();
            order.shuffle(&mut rng);
            let lr = state.schedule.lr();
            let (mut loss_sum, mut batches) = (0.0, 0usize);
            for (b, chunk) in order.chunks(self.config.batch_size).enumerate() {
                if state.steps >= budget {
                    break;
                }
                let batch: Vec<Example<T>> = chunk.iter().map(|&i| self.augment(&train[i], &mut rng)).collect();
                let (value, grads) = self.batch_gradients(&state.params, &batch)?;
                if !value.is_finite() {
                    return Err(Error::NonFinite {
                        epoch: state.epoch,
                        batch: b,
                        value,
                    });
                }
                state.adam.update(&mut state.params, &grads, lr);
                state.steps += 1;
                loss_sum += value;
                batches += 1;
            }
            let (val_loss, counts) = evaluate_set(self.net, &state.params, val, self.config.loss)?;
            let best = state.schedule.observe(val_loss);
            if best {
                state.best_params = state.params.clone();
            }
            state.log.push(EpochLog {
                epoch: state.epoch,
                lr,
                steps: state.steps,
                train_loss: loss_sum / batches.max(1) as f64,
                val_loss,
                val_iou: counts.report().iou,
            });
            state.epoch += 1;
            hook(state, best)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_closed_forms() {
        let eps = 1e-6;
        let gt = Mask::from_fn(16, 16, |y, x| (x + y) % 3 == 0);
        let s = ScoreMap::new(16, 16, gt.data.iter().map(|&g| if g { 1.0 - eps } else { eps }).collect()).unwrap();
        assert!(loss(&s, &gt, LossWeights::default()).unwrap() < 0.01);

        let all = Mask::from_fn(256, 256, |_, _| true);
        let half = ScoreMap::filled(256, 256, 0.5);
        let only = |ce, dice| loss(&half, &all, LossWeights { ce, dice }).unwrap();
        assert!((only(1.0, 0.0) - std::f64::consts::LN_2).abs() < 1e-10);
        assert!((only(0.0, 1.0) - 1.0 / 3.0).abs() < 1e-5);

        let empty = Mask::empty(8, 8);
        let tiny = ScoreMap::filled(8, 8, eps);
        assert!(loss(&tiny, &empty, LossWeights { ce: 0.0, dice: 1.0 }).unwrap() < 1e-3);
        assert!(loss(&ScoreMap::filled(8, 9, 0.5), &empty, LossWeights::default()).is_err());
    }

    #[test]
    fn plateau_decays_on_flat_loss() {
        let mut p = Plateau::new(1e-4, 10, 0.5);
        let mut at = Vec::new();
        for e in 0..21 {
            let before = p.decays();
            p.observe(0.3);
            if p.decays() > before {
                at.push(e);
            }
        }
        assert_eq!(at, [10, 20]);
        assert!((p.lr() - 2.5e-5).abs() < 1e-18);
        let mut q = Plateau::new(1e-4, 10, 0.5);
        for e in 0..50 {
            q.observe(1.0 / (e + 1) as f64);
        }
        assert_eq!(q.decays(), 0);
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut p = ParamStore::<f64>::new();
        p.insert("w", Tensor::from_fn([3, 2], |i| i as f64 - 2.5));
        let before = p.clone();
        let grads: ParamGrads<f64> = [("w".to_string(), Tensor::zeros([3, 2]))].into();
        Adam::default().update(&mut p, &grads, 1e-3);
        assert_eq!(p, before);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = ParamStore::<f64>::new();
        p.insert("w", Tensor::new([2], vec![1.0, 1.0]));
        let grads: ParamGrads<f64> = [("w".to_string(), Tensor::new([2], vec![0.3, -4.0]))].into();
        Adam::default().update(&mut p, &grads, 0.01);
        let w = p.get("w").unwrap().data();
        assert!((w[0] - 0.99).abs() < 1e-9 && (w[1] - 1.01).abs() < 1e-9);
    }

    #[test]
    fn subsample_is_nested() {
        let items: Vec<usize> = (0..10).collect();
        assert_eq!(label_rate_subsample(&items, 1.0, 3).unwrap(), items);
        let half = label_rate_subsample(&items, 0.5, 3).unwrap();
        assert_eq!(half.len(), 5);
        assert_eq!(half, label_rate_subsample(&items, 0.5, 3).unwrap());
        let most = label_rate_subsample(&items, 0.75, 3).unwrap();
        assert_eq!(most.len(), 8);
        assert!(half.iter().all(|i| most.contains(i)));
        assert!(label_rate_subsample(&items, 0.0, 3).is_err());
    }

    #[test]
    fn dihedral_group_actions() {
        let img = Tensor::<f64>::from_fn([1, 2, 3], |i| i as f64);
        let turn = Dihedral { flip: false, turns: 1 };
        let r = turn.apply_image(&img);
        assert_eq!(r.shape(), &[1, 3, 2]);
        // clockwise: first row of the output is the first column, bottom-up
        assert_eq!(r.data(), &[3.0, 0.0, 4.0, 1.0, 5.0, 2.0]);
        let four = (0..4).fold(img.clone(), |a, _| turn.apply_image(&a));
        assert_eq!(four, img);
        let f = Dihedral { flip: true, turns: 0 };
        assert_eq!(f.apply_image(&img).data(), &[2.0, 1.0, 0.0, 5.0, 4.0, 3.0]);
        let m = Mask::from_fn(2, 3, |y, x| y == 0 && x == 2);
        let ri = turn.apply_image(&m.to_scores_tensor());
        assert_eq!(turn.apply_mask(&m).data, ri.data().iter().map(|&v| v > 0.5).collect::<Vec<_>>());
    }

    impl Mask {
        fn to_scores_tensor(&self) -> Tensor<f64> {
            Tensor::new(
                [1, self.height, self.width],
                self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
            )
        }
    }
}
