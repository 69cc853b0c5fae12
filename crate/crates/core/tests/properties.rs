//! Property tests against brute-force oracles written independently of the
//! library code paths.

use proptest::prelude::*;
use uroadnet::data::{generate_synthetic, rasterize_centerlines, stitch, tile, SyntheticConfig};
use uroadnet::geom::{Path, Point};
use uroadnet::maps::{Mask, ScoreMap};
use uroadnet::metrics::{avg_distance, overlap, pixel_metrics, relaxed_pr, sigma_filtered_metrics};
use uroadnet::train::{label_rate_subsample, loss, loss_var, LossWeights};
use uroadnet::{Graph, Tensor};

fn seg_dist(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let l2 = vx * vx + vy * vy;
    let t = if l2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * vx + (p.1 - a.1) * vy) / l2).clamp(0.0, 1.0)
    };
    ((p.0 - a.0 - t * vx).powi(2) + (p.1 - a.1 - t * vy).powi(2)).sqrt()
}

fn poly_dist(p: (f64, f64), line: &[(f64, f64)]) -> f64 {
    if line.len() == 1 {
        return seg_dist(p, line[0], line[0]);
    }
    line.windows(2).map(|w| seg_dist(p, w[0], w[1])).fold(f64::INFINITY, f64::min)
}

/// Points every unit of arc length, plus the endpoint when it falls between.
fn resample(line: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let lens: Vec<f64> = line.windows(2).map(|w| (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1)).collect();
    let total: f64 = lens.iter().sum();
    let mut out = Vec::new();
    let mut k = 0.0;
    while k <= total + 1e-12 {
        let (mut acc, mut i) = (0.0, 0);
        while i + 1 < lens.len() && acc + lens[i] < k {
            acc += lens[i];
            i += 1;
        }
        if lens.is_empty() {
            out.push(line[0]);
            break;
        }
        let t = if lens[i] > 0.0 { ((k - acc) / lens[i]).min(1.0) } else { 0.0 };
        out.push((line[i].0 + t * (line[i + 1].0 - line[i].0), line[i].1 + t * (line[i + 1].1 - line[i].1)));
        k += 1.0;
    }
    if total - total.floor() > 1e-9 {
        out.push(*line.last().unwrap());
    }
    out
}

fn oracle_ov_ad(pp: &[(f64, f64)], gp: &[(f64, f64)], tol: f64) -> (f64, f64) {
    let (dp, dg) = (resample(pp), resample(gp));
    let tpm = dp.iter().filter(|&&p| poly_dist(p, gp) <= tol).count() as f64;
    let tpr = dg.iter().filter(|&&p| poly_dist(p, pp) <= tol).count() as f64;
    let ov = (tpm + tpr) / (dp.len() + dg.len()) as f64;
    let d1 = dp.iter().map(|&p| poly_dist(p, gp)).sum::<f64>() / dp.len() as f64;
    let d2 = dg.iter().map(|&p| poly_dist(p, pp)).sum::<f64>() / dg.len() as f64;
    (ov, 0.5 * (d1 + d2))
}

fn pts(v: &[(f64, f64)]) -> Path {
    v.iter().map(|&(x, y)| Point::new(x, y)).collect()
}

fn polyline() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((0.0..60.0f64, 0.0..60.0f64), 2..7)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn rasterization_matches_distance_oracle(
        lines in prop::collection::vec(prop::collection::vec((-4.0..68.0f64, -4.0..68.0f64), 1..5), 0..4),
        width in 1.0..9.0f64,
        h in 1usize..64,
        w in 1usize..64,
    ) {
        let paths: Vec<Path> = lines.iter().map(|l| pts(l)).collect();
        let m = rasterize_centerlines(&paths, width, h, w);
        for y in 0..h {
            for x in 0..w {
                let near = lines.iter().any(|l| poly_dist((x as f64, y as f64), l) <= width / 2.0);
                prop_assert_eq!(m.get(y, x), near, "pixel ({}, {})", y, x);
            }
        }
    }

    #[test]
    fn tile_then_stitch_is_identity(
        h in 1usize..90,
        w in 1usize..90,
        tile_size in 8usize..40,
        overlap_frac in 0.0..0.9f64,
        seed in any::<u64>(),
    ) {
        let overlap = ((tile_size as f64) * overlap_frac) as usize;
        let values: Vec<f64> = (0..h * w).map(|i| ((i as u64).wrapping_mul(seed | 1) % 1000) as f64 / 999.0).collect();
        let img = Tensor::<f32>::new([1, h, w], values.iter().map(|&v| v as f32).collect());
        let tiles = tile(&img, tile_size, overlap).unwrap();
        let scored: Vec<(ScoreMap, (usize, usize))> = tiles
            .iter()
            .map(|t| {
                let n = tile_size;
                (ScoreMap::new(n, n, t.data.data().iter().map(|&v| v as f64).collect()).unwrap(), t.origin)
            })
            .collect();
        let back = stitch(&scored, h, w).unwrap();
        for (a, b) in back.values.iter().zip(&values) {
            prop_assert!((a - (*b as f32) as f64).abs() < 1e-6);
        }
    }

    #[test]
    fn relaxed_pr_matches_all_pairs(
        a in prop::collection::vec((0.0..30.0f64, 0.0..30.0f64), 0..40),
        b in prop::collection::vec((0.0..30.0f64, 0.0..30.0f64), 0..40),
        rho in 0.0..6.0f64,
    ) {
        let within = |p: &(f64, f64), set: &[(f64, f64)]| set.iter().any(|q| (p.0 - q.0).hypot(p.1 - q.1) <= rho);
        let frac = |from: &[(f64, f64)], to: &[(f64, f64)]| {
            if from.is_empty() {
                if a.is_empty() && b.is_empty() { 1.0 } else { 0.0 }
            } else {
                from.iter().filter(|p| within(p, to)).count() as f64 / from.len() as f64
            }
        };
        let (p, r) = relaxed_pr(&pts(&a), &pts(&b), rho).unwrap();
        prop_assert_eq!(p, frac(&a, &b));
        prop_assert_eq!(r, frac(&b, &a));
    }

    #[test]
    fn overlap_and_distance_match_oracle(pp in polyline(), gp in polyline(), tol in 0.5..6.0f64) {
        let (ov, ad) = oracle_ov_ad(&pp, &gp, tol);
        prop_assert!((overlap(&pts(&pp), &pts(&gp), tol).unwrap() - ov).abs() < 1e-9);
        prop_assert!((avg_distance(&pts(&pp), &pts(&gp)).unwrap() - ad).abs() < 1e-9);
    }

    #[test]
    fn sigma_filter_drops_only_near_background(
        on in prop::collection::vec((0usize..24, 0usize..24), 0..30),
        pred_on in prop::collection::vec((0usize..24, 0usize..24), 0..60),
        sigma in 0.0..0.99f64,
        radius in 1.0..6.0f64,
    ) {
        let mut gt = Mask::empty(24, 24);
        for &(y, x) in &on { gt.set(y, x, true); }
        let mut pred = Mask::empty(24, 24);
        for &(y, x) in &pred_on { pred.set(y, x, true); }
        let d = sigma * radius;
        let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
        for y in 0..24 {
            for x in 0..24 {
                let g = gt.get(y, x);
                let excluded = !g && d >= 1.0 && on.iter().any(|&(oy, ox)| {
                    ((oy as f64 - y as f64).powi(2) + (ox as f64 - x as f64).powi(2)).sqrt() <= d
                });
                if excluded { continue; }
                match (pred.get(y, x), g) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    (false, false) => tn += 1,
                }
            }
        }
        let r = sigma_filtered_metrics(&pred, &gt, sigma, radius).unwrap();
        prop_assert_eq!((r.counts.tp, r.counts.fp, r.counts.fn_, r.counts.tn), (tp, fp, fn_, tn));
        let all = pixel_metrics(&pred, &gt).unwrap();
        prop_assert_eq!(all.counts.tp, tp);
        prop_assert_eq!(all.counts.fn_, fn_);
    }

    #[test]
    fn label_rate_subsets_nest(n in 1usize..60, seed in any::<u64>(), r1 in 0.01..1.0f64, r2 in 0.01..1.0f64) {
        let items: Vec<usize> = (0..n).collect();
        let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        let small = label_rate_subsample(&items, lo, seed).unwrap();
        let big = label_rate_subsample(&items, hi, seed).unwrap();
        prop_assert_eq!(small.len(), (lo * n as f64 - 1e-9).ceil() as usize);
        prop_assert!(!small.is_empty());
        prop_assert!(small.iter().all(|i| big.contains(i)));
        prop_assert_eq!(&small, &label_rate_subsample(&items, lo, seed).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn generated_centerlines_lie_on_roads(seed in any::<u64>(), size in prop::sample::select(vec![64usize, 96, 128])) {
        let s = generate_synthetic(&SyntheticConfig { size, seed, ..Default::default() }).unwrap();
        prop_assert_eq!(s.centerlines.len(), s.radii.len());
        for l in &s.centerlines {
            for p in l {
                prop_assert!(p.x >= 0.0 && p.y >= 0.0 && p.x <= (size - 1) as f64 && p.y <= (size - 1) as f64);
                prop_assert!(s.mask.get(p.y.round() as usize, p.x.round() as usize));
            }
        }
        prop_assert!(s.image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn loss_gradient_matches_finite_differences(seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let on: Vec<bool> = (0..64).map(|_| rng.gen_bool(0.4)).collect();
        let gt = Mask::from_fn(8, 8, |y, x| on[y * 8 + x]);
        let score: Vec<f64> = (0..64).map(|_| rng.gen_range(0.02..0.98)).collect();
        let w = LossWeights { ce: rng.gen_range(0.1..2.0), dice: rng.gen_range(0.1..2.0) };
        let g = Graph::<f64>::new();
        let s = g.leaf(Tensor::new([1, 8, 8], score.clone()));
        let l = loss_var(&s, &gt, w).unwrap();
        let grad = g.backward(&l).wrt(&s);
        let at = |v: &[f64]| loss(&ScoreMap::new(8, 8, v.to_vec()).unwrap(), &gt, w).unwrap();
        prop_assert!((l.scalar() - at(&score)).abs() < 1e-12);
        let h = 1e-6;
        for i in 0..64 {
            let mut up = score.clone();
            let mut dn = score.clone();
            up[i] += h;
            dn[i] -= h;
            let fd = (at(&up) - at(&dn)) / (2.0 * h);
            let an = grad.data()[i];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
            prop_assert!(rel < 1e-4, "pixel {}: analytic {} vs numeric {}", i, an, fd);
        }
    }
}
