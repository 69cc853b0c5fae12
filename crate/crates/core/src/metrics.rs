//! Pixel metrics with tolerance factors, and path tracing metrics.
//!
//! Conventions: when a ratio has an empty denominator because both masks
//! are empty the score is 1; otherwise an empty denominator scores 0.
//! Distance predicates are closed (`d <= tol`).

use crate::error::{Error, Result};
use crate::geom::{densify, path_length, Path, Point, SegmentIndex};
use crate::maps::{Mask, ScoreMap, MASK_THRESHOLD};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

/// Tolerance for relaxed centreline precision/recall, in pixels.
pub const DEFAULT_RHO: f64 = 2.0;
/// Fraction of the road radius excluded around ground-truth roads.
pub const DEFAULT_SIGMA: f64 = 0.4;
pub const DEFAULT_ROAD_RADIUS: f64 = 3.0;
/// Weight of the score penalty in the path cost.
pub const PATH_SCORE_WEIGHT: f64 = 20.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn merge(&mut self, o: &Confusion) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }

    pub fn report(&self) -> MetricReport {
        let pred = self.tp + self.fp;
        let gt = self.tp + self.fn_;
        let both_empty = pred == 0 && gt == 0;
        let ratio = |num: u64, den: u64| {
            if den == 0 {
                if both_empty {
                    1.0
                } else {
                    0.0
                }
            } else {
                num as f64 / den as f64
            }
        };
        let precision = ratio(self.tp, pred);
        let recall = ratio(self.tp, gt);
        let f1 = if both_empty {
            1.0
        } else if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        let total = self.total();
        MetricReport {
            oa: if total == 0 {
                1.0
            } else {
                (self.tp + self.tn) as f64 / total as f64
            },
            precision,
            recall,
            f1,
            iou: ratio(self.tp, self.tp + self.fp + self.fn_),
            counts: *self,
            empty: total == 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub oa: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub iou: f64,
    pub counts: Confusion,
    /// No pixel was evaluated.
    pub empty: bool,
}

fn check_shapes(pred: &Mask, gt: &Mask) -> Result<()> {
    if !pred.same_shape(gt) {
        return Err(Error::Dimension(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.height, pred.width, gt.height, gt.width
        )));
    }
    Ok(())
}

pub fn confusion(pred: &Mask, gt: &Mask, keep: impl Fn(usize) -> bool) -> Result<Confusion> {
    check_shapes(pred, gt)?;
    let mut c = Confusion::default();
    for (i, (&p, &g)) in pred.data.iter().zip(&gt.data).enumerate() {
        if !keep(i) {
            continue;
        }
        match (p, g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

pub fn pixel_metrics(pred: &Mask, gt: &Mask) -> Result<MetricReport> {
    Ok(confusion(pred, gt, |_| true)?.report())
}

/// Pixel metrics ignoring background pixels within `sigma * radius` of the
/// ground-truth road region.
pub fn sigma_filtered_metrics(pred: &Mask, gt: &Mask, sigma: f64, radius: f64) -> Result<MetricReport> {
    check_shapes(pred, gt)?;
    if !(0.0..1.0).contains(&sigma) || radius <= 0.0 {
        return Err(Error::Argument(format!(
            "sigma must lie in [0, 1) and radius be positive (got {sigma}, {radius})"
        )));
    }
    let band = excluded_band(gt, sigma * radius);
    Ok(confusion(pred, gt, |i| !band[i])?.report())
}

/// Background pixels whose distance to the nearest road pixel is at most `d`.
pub fn excluded_band(gt: &Mask, d: f64) -> Vec<bool> {
    let mut band = vec![false; gt.data.len()];
    if d < 1.0 {
        return band;
    }
    let r = d.floor() as isize;
    let d2 = d * d;
    for y in 0..gt.height {
        for x in 0..gt.width {
            if !gt.get(y, x) {
                continue;
            }
            for dy in -r..=r {
                for dx in -r..=r {
                    if (dx * dx + dy * dy) as f64 > d2 {
                        continue;
                    }
                    let (yy, xx) = (y as isize + dy, x as isize + dx);
                    if yy < 0 || xx < 0 || yy >= gt.height as isize || xx >= gt.width as isize {
                        continue;
                    }
                    let i = yy as usize * gt.width + xx as usize;
                    if !gt.data[i] {
                        band[i] = true;
                    }
                }
            }
        }
    }
    band
}

/// Hash grid over a point set for radius queries.
struct PointGrid {
    cell: f64,
    buckets: HashMap<(i64, i64), Vec<Point>>,
}

impl PointGrid {
    fn new(points: &[Point], cell: f64) -> Self {
        let mut buckets: HashMap<(i64, i64), Vec<Point>> = HashMap::new();
        for &p in points {
            buckets.entry(Self::key(p, cell)).or_default().push(p);
        }
        PointGrid { cell, buckets }
    }

    fn key(p: Point, cell: f64) -> (i64, i64) {
        ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64)
    }

    fn any_within(&self, p: Point, r: f64) -> bool {
        let (cx, cy) = Self::key(p, self.cell);
        let reach = (r / self.cell).ceil() as i64;
        for gy in cy - reach..=cy + reach {
            for gx in cx - reach..=cx + reach {
                if let Some(b) = self.buckets.get(&(gx, gy)) {
                    if b.iter().any(|q| q.dist(p) <= r) {
                        return true;
                    }
                }
            }
        }
        false
    }
}

/// Relaxed precision and recall of centreline points: a predicted point is
/// correct when some ground-truth point lies within `rho`, and vice versa.
pub fn relaxed_pr(pred: &[Point], gt: &[Point], rho: f64) -> Result<(f64, f64)> {
    if !(rho >= 0.0) {
        return Err(Error::Argument(format!("rho must be nonnegative, got {rho}")));
    }
    let both_empty = pred.is_empty() && gt.is_empty();
    let frac = |from: &[Point], to: &[Point]| {
        if from.is_empty() {
            return if both_empty { 1.0 } else { 0.0 };
        }
        let grid = PointGrid::new(to, rho.max(1.0));
        from.iter().filter(|&&p| grid.any_within(p, rho)).count() as f64 / from.len() as f64
    };
    Ok((frac(pred, gt), frac(gt, pred)))
}

/// Pixel centres of a mask as points.
pub fn mask_points(mask: &Mask) -> Vec<Point> {
    let mut out = Vec::new();
    for y in 0..mask.height {
        for x in 0..mask.width {
            if mask.get(y, x) {
                out.push(Point::new(x as f64, y as f64));
            }
        }
    }
    out
}

fn nonempty(path: &[Point], what: &str) -> Result<()> {
    if path.is_empty() {
        return Err(Error::Argument(format!("{what} path is empty")));
    }
    Ok(())
}

/// Matched point counts of two densified paths.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceCounts {
    /// Computed-path points within tolerance of the reference path.
    pub tpm: usize,
    /// Reference-path points within tolerance of the computed path.
    pub tpr: usize,
    pub fp: usize,
    pub fn_: usize,
}

pub fn trace_counts(pp: &[Point], gp: &[Point], tol: f64) -> Result<TraceCounts> {
    nonempty(pp, "predicted")?;
    nonempty(gp, "ground-truth")?;
    if !(tol > 0.0) {
        return Err(Error::Argument(format!("tolerance must be positive, got {tol}")));
    }
    let (dp, dg) = (densify(pp), densify(gp));
    let (ip, ig) = (SegmentIndex::new(pp, 2.0), SegmentIndex::new(gp, 2.0));
    let tpm = dp.iter().filter(|&&p| ig.distance(p) <= tol).count();
    let tpr = dg.iter().filter(|&&p| ip.distance(p) <= tol).count();
    Ok(TraceCounts {
        tpm,
        tpr,
        fp: dp.len() - tpm,
        fn_: dg.len() - tpr,
    })
}

/// Overlap `(TPR + TPM) / (TPR + TPM + FN + FP)`.
pub fn overlap(pp: &[Point], gp: &[Point], tol: f64) -> Result<f64> {
    let c = trace_counts(pp, gp, tol)?;
    let num = (c.tpr + c.tpm) as f64;
    Ok(num / (num + (c.fn_ + c.fp) as f64))
}

/// Mean of the two directed mean distances between densified points and
/// the other polyline.
pub fn avg_distance(pp: &[Point], gp: &[Point]) -> Result<f64> {
    nonempty(pp, "predicted")?;
    nonempty(gp, "ground-truth")?;
    let directed = |from: &[Point], to: &[Point]| {
        let idx = SegmentIndex::new(to, 2.0);
        let pts = densify(from);
        pts.iter().map(|&p| idx.distance(p)).sum::<f64>() / pts.len() as f64
    };
    Ok(0.5 * (directed(pp, gp) + directed(gp, pp)))
}

/// Zhang–Suen thinning; keeps 8-connectivity.
pub fn skeletonize(mask: &Mask) -> Mask {
    let mut m = mask.clone();
    let (h, w) = (m.height as isize, m.width as isize);
    let mut remove = Vec::new();
    loop {
        let mut changed = false;
        for pass in 0..2 {
            remove.clear();
            for y in 0..h {
                for x in 0..w {
                    if !m.get(y as usize, x as usize) {
                        continue;
                    }
                    // P2..P9 clockwise from north.
                    let n = [
                        m.get_signed(y - 1, x),
                        m.get_signed(y - 1, x + 1),
                        m.get_signed(y, x + 1),
                        m.get_signed(y + 1, x + 1),
                        m.get_signed(y + 1, x),
                        m.get_signed(y + 1, x - 1),
                        m.get_signed(y, x - 1),
                        m.get_signed(y - 1, x - 1),
                    ];
                    let b = n.iter().filter(|&&v| v).count();
                    if !(2..=6).contains(&b) {
                        continue;
                    }
                    let a = (0..8).filter(|&i| !n[i] && n[(i + 1) % 8]).count();
                    if a != 1 {
                        continue;
                    }
                    let (p2, p4, p6, p8) = (n[0], n[2], n[4], n[6]);
                    let ok = if pass == 0 {
                        !(p2 && p4 && p6) && !(p4 && p6 && p8)
                    } else {
                        !(p2 && p4 && p8) && !(p2 && p6 && p8)
                    };
                    if ok {
                        remove.push((y as usize, x as usize));
                    }
                }
            }
            for &(y, x) in &remove {
                m.set(y, x, false);
            }
            changed |= !remove.is_empty();
        }
        if !changed {
            return m;
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Frontier {
    cost: f64,
    node: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, o: &Self) -> Ordering {
        o.cost.total_cmp(&self.cost).then_with(|| o.node.cmp(&self.node))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathConfig {
    pub threshold: f64,
    pub score_weight: f64,
    /// Endpoints farther than this from the skeleton count as unreachable.
    pub snap_radius: f64,
}

impl Default for PathConfig {
    fn default() -> Self {
        PathConfig {
            threshold: MASK_THRESHOLD,
            score_weight: PATH_SCORE_WEIGHT,
            snap_radius: 5.0,
        }
    }
}

/// Skeleton graph of a thresholded score map, reused across endpoint pairs.
pub struct PathExtractor<'a> {
    score: &'a ScoreMap,
    skeleton: Mask,
    nodes: Vec<(usize, usize)>,
    cfg: PathConfig,
}

impl<'a> PathExtractor<'a> {
    pub fn new(score: &'a ScoreMap, cfg: &PathConfig) -> Self {
        let skeleton = skeletonize(&score.threshold(cfg.threshold));
        let mut nodes = Vec::new();
        for y in 0..skeleton.height {
            for x in 0..skeleton.width {
                if skeleton.get(y, x) {
                    nodes.push((y, x));
                }
            }
        }
        PathExtractor {
            score,
            skeleton,
            nodes,
            cfg: cfg.clone(),
        }
    }

    pub fn skeleton(&self) -> &Mask {
        &self.skeleton
    }

    fn snap(&self, p: Point) -> Option<(usize, usize)> {
        self.nodes
            .iter()
            .map(|&(y, x)| ((y, x), Point::new(x as f64, y as f64).dist(p)))
            .filter(|&(_, d)| d <= self.cfg.snap_radius)
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(n, _)| n)
    }

    /// Minimum-cost skeleton path between two points; `None` if either end
    /// is too far from the skeleton or the ends are disconnected.
    pub fn extract(&self, a: Point, b: Point) -> Result<Option<Path>> {
        for p in [a, b] {
            let inside = p.x >= 0.0
                && p.y >= 0.0
                && p.x <= (self.score.width - 1) as f64
                && p.y <= (self.score.height - 1) as f64;
            if !inside {
                return Err(Error::Argument(format!(
                    "endpoint ({}, {}) outside the {}x{} map",
                    p.x, p.y, self.score.width, self.score.height
                )));
            }
        }
        let (Some(s), Some(t)) = (self.snap(a), self.snap(b)) else {
            return Ok(None);
        };
        let w = self.skeleton.width;
        let idx = |(y, x): (usize, usize)| y * w + x;
        let mut dist: HashMap<usize, f64> = HashMap::new();
        let mut prev: HashMap<usize, usize> = HashMap::new();
        let mut heap = BinaryHeap::new();
        dist.insert(idx(s), 0.0);
        heap.push(Frontier { cost: 0.0, node: idx(s) });
        let target = idx(t);
        while let Some(Frontier { cost, node }) = heap.pop() {
            if node == target {
                break;
            }
            if cost > dist[&node] {
                continue;
            }
            let (y, x) = ((node / w) as isize, (node % w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    if dx == 0 && dy == 0 || !self.skeleton.get_signed(y + dy, x + dx) {
                        continue;
                    }
                    let (ny, nx) = ((y + dy) as usize, (x + dx) as usize);
                    let step = if dx != 0 && dy != 0 { std::f64::consts::SQRT_2 } else { 1.0 };
                    let mean = 0.5 * (self.score.at(y as usize, x as usize) + self.score.at(ny, nx));
                    let c = cost + step * (1.0 + self.cfg.score_weight * (1.0 - mean));
                    let n = ny * w + nx;
                    if dist.get(&n).is_none_or(|&d| c < d) {
                        dist.insert(n, c);
                        prev.insert(n, node);
                        heap.push(Frontier { cost: c, node: n });
                    }
                }
            }
        }
        if !dist.contains_key(&target) {
            return Ok(None);
        }
        let mut chain = vec![target];
        let mut cur = target;
        while let Some(&p) = prev.get(&cur) {
            chain.push(p);
            cur = p;
        }
        chain.reverse();
        let mut path: Path = Vec::with_capacity(chain.len() + 2);
        let mut push = |p: Point| {
            if path.last() != Some(&p) {
                path.push(p);
            }
        };
        push(a);
        for n in chain {
            push(Point::new((n % w) as f64, (n / w) as f64));
        }
        push(b);
        Ok(Some(path))
    }
}

/// Extracted path per endpoint pair (`None` when unreachable).
pub fn extract_paths(score: &ScoreMap, pairs: &[(Point, Point)], cfg: &PathConfig) -> Result<Vec<Option<Path>>> {
    let ex = PathExtractor::new(score, cfg);
    pairs.iter().map(|&(a, b)| ex.extract(a, b)).collect()
}

/// One reference sub-path sampled from a ground-truth centreline.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceSample {
    pub reference: Path,
    pub length: f64,
}

/// Samples `count` sub-paths of ground-truth centrelines with arc lengths
/// spread over `[min_len, max_len]`.
pub fn sample_reference_paths<R: Rng + ?Sized>(
    centerlines: &[Path],
    count: usize,
    min_len: f64,
    max_len: f64,
    rng: &mut R,
) -> Vec<TraceSample> {
    let dense: Vec<Path> = centerlines
        .iter()
        .map(|c| densify(c))
        .filter(|d| d.len() as f64 > min_len + 1.0)
        .collect();
    if dense.is_empty() || count == 0 {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let line = dense.choose(rng).expect("nonempty");
        let avail = (line.len() - 1) as f64;
        let hi = max_len.min(avail);
        let len = if hi > min_len { rng.gen_range(min_len..=hi) } else { hi };
        let n = len.round() as usize;
        let start = rng.gen_range(0..=line.len() - 1 - n);
        let reference: Path = line[start..=start + n].to_vec();
        out.push(TraceSample {
            length: path_length(&reference),
            reference,
        });
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceBucket {
    pub lo: f64,
    pub hi: f64,
    pub paths: usize,
    pub missing: usize,
    /// Mean overlap; missing paths score 0.
    pub ov: f64,
    /// Mean average distance over found paths (NaN if none found).
    pub ad: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceReport {
    pub tolerance: f64,
    pub buckets: Vec<TraceBucket>,
}

/// Result of tracing one reference path.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceOutcome {
    pub length: f64,
    /// `(OV, AD)`, or `None` when no path was found.
    pub scores: Option<(f64, f64)>,
}

pub fn trace_paths(score: &ScoreMap, samples: &[TraceSample], tol: f64, cfg: &PathConfig) -> Result<Vec<TraceOutcome>> {
    let ex = PathExtractor::new(score, cfg);
    samples
        .iter()
        .map(|s| {
            let (a, b) = (s.reference[0], *s.reference.last().unwrap());
            let scores = match ex.extract(a, b)? {
                Some(pp) => Some((overlap(&pp, &s.reference, tol)?, avg_distance(&pp, &s.reference)?)),
                None => None,
            };
            Ok(TraceOutcome {
                length: s.length,
                scores,
            })
        })
        .collect()
}

/// Groups outcomes into length buckets `[edges[i], edges[i+1])`.
pub fn bucket_outcomes(outcomes: &[TraceOutcome], edges: &[f64], tol: f64) -> TraceReport {
    let buckets = edges
        .windows(2)
        .map(|e| {
            let inside: Vec<_> = outcomes.iter().filter(|o| o.length >= e[0] && o.length < e[1]).collect();
            let found: Vec<(f64, f64)> = inside.iter().filter_map(|o| o.scores).collect();
            let n = inside.len();
            TraceBucket {
                lo: e[0],
                hi: e[1],
                paths: n,
                missing: n - found.len(),
                ov: if n == 0 {
                    f64::NAN
                } else {
                    found.iter().map(|s| s.0).sum::<f64>() / n as f64
                },
                ad: if found.is_empty() {
                    f64::NAN
                } else {
                    found.iter().map(|s| s.1).sum::<f64>() / found.len() as f64
                },
            }
        })
        .collect();
    TraceReport {
        tolerance: tol,
        buckets,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(h: usize, w: usize, on: &[(usize, usize)]) -> Mask {
        let mut m = Mask::empty(h, w);
        for &(y, x) in on {
            m.set(y, x, true);
        }
        m
    }

    #[test]
    fn pixel_metric_examples() {
        let r = pixel_metrics(&mask(2, 2, &[(0, 0), (0, 1)]), &mask(2, 2, &[(0, 0), (1, 0)])).unwrap();
        assert_eq!((r.counts.tp, r.counts.fp, r.counts.fn_, r.counts.tn), (1, 1, 1, 1));
        assert_eq!(r.f1, 0.5);
        assert!((r.iou - 1.0 / 3.0).abs() < 1e-15);

        let gt = mask(3, 3, &[(1, 1)]);
        let same = pixel_metrics(&gt, &gt).unwrap();
        assert_eq!([same.oa, same.precision, same.recall, same.f1, same.iou], [1.0; 5]);

        let none = pixel_metrics(&Mask::empty(3, 3), &gt).unwrap();
        assert_eq!([none.precision, none.recall, none.iou], [0.0; 3]);

        let both = pixel_metrics(&Mask::empty(3, 3), &Mask::empty(3, 3)).unwrap();
        assert_eq!([both.precision, both.recall, both.iou, both.f1], [1.0; 4]);

        assert!(matches!(pixel_metrics(&Mask::empty(2, 3), &gt), Err(Error::Dimension(_))));
    }

    #[test]
    fn sigma_band_removes_halo() {
        let road: Vec<_> = (0..10).map(|x| (5, x)).collect();
        let gt = mask(10, 10, &road);
        let mut halo = road.clone();
        halo.extend((0..10).map(|x| (4, x)));
        halo.extend((0..10).map(|x| (6, x)));
        let with = sigma_filtered_metrics(&mask(10, 10, &halo), &gt, 0.4, 3.0).unwrap();
        let without = sigma_filtered_metrics(&gt, &gt, 0.4, 3.0).unwrap();
        assert_eq!(with, without);
        let zero = sigma_filtered_metrics(&mask(10, 10, &halo), &gt, 0.0, 3.0).unwrap();
        assert_eq!(zero, pixel_metrics(&mask(10, 10, &halo), &gt).unwrap());
    }

    #[test]
    fn relaxed_pr_offsets() {
        let gt: Vec<Point> = (0..20).map(|x| Point::new(x as f64, 5.0)).collect();
        let pred: Vec<Point> = gt.iter().map(|p| Point::new(p.x, p.y + 2.0)).collect();
        assert_eq!(relaxed_pr(&pred, &gt, 2.0).unwrap(), (1.0, 1.0));
        assert_eq!(relaxed_pr(&pred, &gt, 1.9).unwrap(), (0.0, 0.0));
        assert_eq!(relaxed_pr(&gt, &gt, 0.0).unwrap(), (1.0, 1.0));
    }

    #[test]
    fn overlap_examples() {
        let gp = vec![Point::new(0.0, 0.0), Point::new(99.0, 0.0)];
        let half = vec![Point::new(0.0, 0.0), Point::new(49.0, 0.0)];
        let c = trace_counts(&half, &gp, 0.5).unwrap();
        assert_eq!((c.tpr, c.tpm, c.fn_, c.fp), (50, 50, 50, 0));
        assert!((overlap(&half, &gp, 0.5).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(overlap(&gp, &gp, 2.0).unwrap(), 1.0);
        let far = vec![Point::new(0.0, 50.0), Point::new(99.0, 50.0)];
        assert_eq!(overlap(&far, &gp, 2.0).unwrap(), 0.0);
        assert!((avg_distance(&far, &gp).unwrap() - 50.0).abs() < 1e-12);
        assert!(overlap(&[], &gp, 2.0).is_err());
    }

    #[test]
    fn skeleton_keeps_thin_lines() {
        let line = mask(5, 9, &(1..8).map(|x| (2, x)).collect::<Vec<_>>());
        assert_eq!(skeletonize(&line), line);
        let bar = Mask::from_fn(7, 15, |y, x| (2..5).contains(&y) && (1..14).contains(&x));
        let sk = skeletonize(&bar);
        assert!(sk.count() > 0 && sk.count() < bar.count());
        for y in 0..7 {
            for x in 0..15 {
                assert!(!sk.get(y, x) || bar.get(y, x));
            }
        }
    }

    #[test]
    fn path_prefers_high_scores() {
        // Two branches from (0,1) to (9,1): straight along row 1 with low
        // score, or a detour through row 7 with high score.
        let mut s = ScoreMap::filled(10, 10, 0.0);
        for x in 0..10 {
            s.values[10 + x] = 0.55;
        }
        for y in 1..=7 {
            s.values[y * 10] = 0.99;
            s.values[y * 10 + 9] = 0.99;
        }
        for x in 0..10 {
            s.values[70 + x] = 0.99;
        }
        let paths = extract_paths(&s, &[(Point::new(0.0, 1.0), Point::new(9.0, 1.0))], &PathConfig::default()).unwrap();
        let p = paths[0].as_ref().unwrap();
        assert!(p.iter().any(|q| q.y == 7.0));

        let empty = ScoreMap::filled(10, 10, 0.0);
        let none = extract_paths(&empty, &[(Point::new(0.0, 0.0), Point::new(9.0, 9.0))], &PathConfig::default()).unwrap();
        assert!(none[0].is_none());
        assert!(extract_paths(&empty, &[(Point::new(-1.0, 0.0), Point::new(9.0, 9.0))], &PathConfig::default()).is_err());
    }
}
