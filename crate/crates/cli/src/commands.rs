use crate::config::{RunConfig, SNAPSHOT_FILE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use uroadnet::checkpoint::{load_for_model, load_params, save_optimizer, save_params};
use uroadnet::data::{
    dataset_stems, generate_synthetic, load_dataset, read_centerlines, read_image, read_mask, read_score, save_sample,
    write_mask, write_score, Sample,
};
use uroadnet::dual_sa::Variant;
use uroadnet::maps::{Mask, ScoreMap};
use uroadnet::metrics::{
    bucket_outcomes, confusion, mask_points, relaxed_pr, sample_reference_paths, sigma_filtered_metrics, skeletonize,
    trace_paths, Confusion, MetricReport, PathConfig, TraceOutcome,
};
use uroadnet::train::{evaluate_set, label_rate_subsample, Example, TrainState, Trainer};
use uroadnet::{Error, ModelConfig, Result, UroadNet};

fn io<T>(path: &Path, r: std::io::Result<T>) -> Result<T> {
    r.map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    io(path, fs::write(path, text))
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report types serialize") + "\n"
}

/// Creates `dir`, refusing a non-empty one unless `force`, and writes the
/// resolved configuration into it.
fn prepare_out(cfg: &RunConfig, force: bool) -> Result<PathBuf> {
    let dir = cfg.require_path("paths.out", "--out")?;
    if dir.exists() {
        let mut entries = io(&dir, fs::read_dir(&dir))?;
        if entries.next().is_some() && !force {
            return Err(Error::Argument(format!(
                "output directory {} is not empty (pass --force to write into it)",
                dir.display()
            )));
        }
    }
    io(&dir, fs::create_dir_all(&dir))?;
    write_text(&dir.join(SNAPSHOT_FILE), &cfg.snapshot())?;
    Ok(dir)
}

fn pool(cfg: &RunConfig) -> Result<rayon::ThreadPool> {
    let jobs: usize = cfg.get("jobs")?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Argument(format!("cannot start {jobs} worker threads: {e}")))
}

/// Per-sample seeds drawn from the root seed.
fn sample_seeds(root: u64, count: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    (0..count).map(|_| rng.gen()).collect()
}

pub fn generate_data(cfg: &RunConfig, force: bool) -> Result<()> {
    let base = cfg.synthetic()?;
    let count: usize = cfg.get("data.count")?;
    let out = prepare_out(cfg, force)?;
    let seeds = sample_seeds(base.seed, count);
    let names: Vec<String> = (0..count).map(|i| format!("sample_{i:05}")).collect();
    let results: Vec<Result<()>> = pool(cfg)?.install(|| {
        seeds
            .par_iter()
            .zip(&names)
            .map(|(&seed, name)| {
                let mut s = generate_synthetic(&uroadnet::data::SyntheticConfig { seed, ..base.clone() })?;
                s.name = name.clone();
                save_sample(&out, &s)
            })
            .collect()
    });
    results.into_iter().collect::<Result<Vec<_>>>()?;
    if count == 0 {
        for sub in ["images", "masks", "centerlines"] {
            io(&out.join(sub), fs::create_dir_all(out.join(sub)))?;
        }
    }
    let manifest = json!({
        "seed": base.seed,
        "count": count,
        "size": base.size,
        "generator": base,
        "samples": names.iter().zip(&seeds).map(|(n, s)| json!({"stem": n, "seed": s})).collect::<Vec<_>>(),
    });
    write_text(&out.join("manifest.json"), &to_json(&manifest))?;
    println!("{}", json!({"generated": count, "out": out, "seed": base.seed}));
    Ok(())
}

fn load_required(path: &Path) -> Result<Vec<Sample>> {
    if !path.is_dir() {
        return Err(Error::Load {
            stem: path.display().to_string(),
            message: "dataset directory does not exist".into(),
        });
    }
    load_dataset(path)
}

/// Training and validation sets: an explicit validation directory, or the
/// last `train.val_fraction` of the sorted training stems.
fn split_sets(cfg: &RunConfig) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let data = cfg.require_path("paths.data", "--data")?;
    let mut train = load_required(&data)?;
    let val = match cfg.path("paths.val") {
        Some(v) => load_required(&v)?,
        None => {
            let frac: f64 = cfg.get("train.val_fraction")?;
            if !(frac > 0.0 && frac < 1.0) {
                return Err(Error::Config(format!("train.val_fraction must be in (0, 1), got {frac}")));
            }
            let k = ((train.len() as f64 * frac).ceil() as usize).min(train.len().saturating_sub(1));
            train.split_off(train.len() - k)
        }
    };
    if train.is_empty() {
        return Err(Error::Load {
            stem: data.display().to_string(),
            message: "no training samples".into(),
        });
    }
    if val.is_empty() {
        return Err(Error::Load {
            stem: data.display().to_string(),
            message: "no validation samples".into(),
        });
    }
    Ok((train, val))
}

fn examples(samples: &[Sample]) -> Vec<Example<f32>> {
    samples.iter().map(Example::from_sample).collect()
}

/// Trains one model, writing logs and checkpoints under `out`.
fn train_one(
    model: &ModelConfig,
    cfg: &RunConfig,
    train: &[Sample],
    val: &[Sample],
    label_rate: f64,
    out: &Path,
) -> Result<(UroadNet, TrainState<f32>)> {
    let net = UroadNet::new(model)?;
    let mut tc = cfg.train()?;
    tc.label_rate = label_rate;
    let subset = label_rate_subsample(train, label_rate, tc.seed)?;
    let trainer = Trainer::new(&net, tc)?;
    let mut state = trainer.init_state::<f32>();
    io(out, fs::create_dir_all(out))?;
    let log_path = out.join("train_log.jsonl");
    let mut log = String::new();
    trainer.train(&examples(&subset), &examples(val), &mut state, &mut |s, best| {
        let line = serde_json::to_string(s.log.last().expect("epoch logged")).expect("log serializes");
        println!("{line}");
        log.push_str(&line);
        log.push('\n');
        write_text(&log_path, &log)?;
        if best {
            save_params(&out.join("best.safetensors"), model, &s.params)?;
        }
        save_params(&out.join("last.safetensors"), model, &s.params)?;
        save_optimizer(&out.join("optimizer.safetensors"), &s.adam, &s.schedule, s.epoch, s.steps)
    })?;
    Ok((net, state))
}

pub fn train(cfg: &RunConfig, force: bool) -> Result<()> {
    let model = cfg.model(None)?;
    let tc = cfg.train()?;
    let (train, val) = split_sets(cfg)?;
    let out = prepare_out(cfg, force)?;
    let (_, state) = train_one(&model, cfg, &train, &val, tc.label_rate, &out)?;
    let summary = json!({
        "variant": model.variant,
        "epochs": state.epoch,
        "steps": state.steps,
        "best_val_loss": state.schedule.best,
        "lr_history": state.schedule.history,
        "train_samples": label_rate_subsample(&train, tc.label_rate, tc.seed)?.len(),
        "val_samples": val.len(),
    });
    write_text(&out.join("summary.json"), &to_json(&summary))
}

#[derive(Serialize)]
struct AblationRow {
    label_rate: f64,
    variant: Variant,
    label: &'static str,
    params: usize,
    steps: usize,
    f1: f64,
    iou: f64,
}

pub fn ablate(cfg: &RunConfig, force: bool) -> Result<()> {
    let base = cfg.model(None)?;
    let tc = cfg.train()?;
    let (train, val) = split_sets(cfg)?;
    let test = match cfg.path("paths.test") {
        Some(t) => load_required(&t)?,
        None => val.clone(),
    };
    let mut rates = cfg.list("train.label_rates")?;
    if rates.is_empty() {
        rates.push(tc.label_rate);
    }
    let out = prepare_out(cfg, force)?;
    let mut rows = Vec::new();
    for &rate in &rates {
        for v in Variant::ALL {
            let model = base.clone().with_variant(v);
            let dir = match rates.len() {
                1 => out.join(v.key()),
                _ => out.join(format!("rate_{rate}")).join(v.key()),
            };
            let (net, state) = train_one(&model, cfg, &train, &val, rate, &dir)?;
            let (_, counts) = evaluate_set(&net, &state.best_params, &examples(&test), tc.loss)?;
            let r = counts.report();
            rows.push(AblationRow {
                label_rate: rate,
                variant: v,
                label: v.label(),
                params: net.num_params(),
                steps: state.steps,
                f1: r.f1,
                iou: r.iou,
            });
        }
    }
    let mut csv = String::from("label_rate,variant,params,steps,f1,iou\n");
    let mut md = String::from("| Label rate | Method | Params | Steps | F1 (%) | IoU (%) |\n|---|---|---|---|---|---|\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{},{},{},{:.6},{:.6}", r.label_rate, r.variant, r.params, r.steps, r.f1, r.iou);
        let _ = writeln!(
            md,
            "| {:.0}% | {} | {} | {} | {:.2} | {:.2} |",
            r.label_rate * 100.0,
            r.label,
            r.params,
            r.steps,
            r.f1 * 100.0,
            r.iou * 100.0
        );
    }
    write_text(&out.join("ablation.csv"), &csv)?;
    write_text(&out.join("ablation.md"), &md)?;
    write_text(&out.join("ablation.json"), &to_json(&rows))?;
    print!("{md}");
    Ok(())
}

/// PNG inputs: a single file, a dataset root (its `images/`), or a folder.
fn input_images(path: &Path) -> Result<Vec<(String, PathBuf)>> {
    if path.is_file() {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string();
        return Ok(vec![(stem, path.to_path_buf())]);
    }
    let dir = if path.join("images").is_dir() { path.join("images") } else { path.to_path_buf() };
    if !dir.is_dir() {
        return Err(Error::Load {
            stem: path.display().to_string(),
            message: "input image or directory does not exist".into(),
        });
    }
    let mut out = Vec::new();
    for e in io(&dir, fs::read_dir(&dir))? {
        let p = io(&dir, e)?.path();
        if p.extension().and_then(|x| x.to_str()).map(|x| x.eq_ignore_ascii_case("png")) == Some(true) {
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            out.push((stem, p));
        }
    }
    out.sort();
    Ok(out)
}

pub fn infer(cfg: &RunConfig, force: bool) -> Result<()> {
    let ckpt = cfg.require_path("paths.checkpoint", "--checkpoint")?;
    let input = cfg.require_path("paths.input", "--input")?;
    let (stored, _) = load_params::<f32>(&ckpt)?;
    let model = cfg.model(Some(&stored))?;
    let net = UroadNet::new(&model)?;
    let params = load_for_model::<f32>(&ckpt, &net)?;
    let images = input_images(&input)?;
    let (tile_size, overlap): (usize, usize) = (cfg.get("infer.tile")?, cfg.get("infer.overlap")?);
    let threshold: f64 = cfg.get("infer.threshold")?;
    let out = prepare_out(cfg, force)?;
    for sub in ["scores", "masks"] {
        io(&out.join(sub), fs::create_dir_all(out.join(sub)))?;
    }
    for (stem, path) in &images {
        let image = read_image(path)?;
        let score = net.predict_tiled(&params, &image, tile_size, overlap)?;
        write_score(&out.join("scores").join(format!("{stem}.png")), &score)?;
        write_mask(&out.join("masks").join(format!("{stem}.png")), &score.threshold(threshold))?;
        println!("{}", json!({"image": stem, "height": score.height, "width": score.width}));
    }
    Ok(())
}

/// Directory holding predictions: `scores/`, else `masks/`, else `dir`.
fn prediction_dir(dir: &Path) -> Result<PathBuf> {
    if !dir.is_dir() {
        return Err(Error::Load {
            stem: dir.display().to_string(),
            message: "prediction directory does not exist".into(),
        });
    }
    Ok(["scores", "masks"]
        .iter()
        .map(|s| dir.join(s))
        .find(|d| d.is_dir())
        .unwrap_or_else(|| dir.to_path_buf()))
}

fn gt_stems(gt: &Path) -> Result<Vec<String>> {
    if !gt.join("masks").is_dir() {
        return Err(Error::Load {
            stem: gt.display().to_string(),
            message: "ground-truth directory has no masks/".into(),
        });
    }
    // Ground truth may come without images; pair on masks only.
    let mut stems: Vec<String> = dataset_stems(gt).or_else(|_| -> Result<Vec<String>> {
        let mut v = Vec::new();
        for e in io(gt, fs::read_dir(gt.join("masks")))? {
            let p = io(gt, e)?.path();
            if let Some(s) = p.file_stem().and_then(|s| s.to_str()) {
                v.push(s.to_string());
            }
        }
        Ok(v)
    })?;
    stems.sort();
    Ok(stems)
}

fn read_prediction(dir: &Path, stem: &str, gt: &Mask) -> Result<ScoreMap> {
    let p = dir.join(format!("{stem}.png"));
    if !p.is_file() {
        return Err(Error::Load {
            stem: stem.to_string(),
            message: format!("no prediction at {}", p.display()),
        });
    }
    let s = read_score(&p)?;
    if (s.height, s.width) != (gt.height, gt.width) {
        return Err(Error::Dimension(format!(
            "prediction for `{stem}` is {}x{} but ground truth is {}x{}",
            s.height, s.width, gt.height, gt.width
        )));
    }
    Ok(s)
}

#[derive(Clone, Debug, Serialize)]
struct Relaxed {
    rho: f64,
    precision: f64,
    recall: f64,
    f1: f64,
    pred_points: usize,
    gt_points: usize,
}

impl Relaxed {
    fn new(rho: f64, p: f64, r: f64, np: usize, ng: usize) -> Self {
        let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        Relaxed {
            rho,
            precision: p,
            recall: r,
            f1,
            pred_points: np,
            gt_points: ng,
        }
    }

    /// Point-weighted pooling across images.
    fn pool(rho: f64, parts: &[&Relaxed]) -> Self {
        let np: usize = parts.iter().map(|r| r.pred_points).sum();
        let ng: usize = parts.iter().map(|r| r.gt_points).sum();
        let wavg = |f: &dyn Fn(&Relaxed) -> (f64, usize), total: usize| {
            if total == 0 {
                return if np == 0 && ng == 0 { 1.0 } else { 0.0 };
            }
            parts.iter().map(|r| { let (v, n) = f(r); v * n as f64 }).sum::<f64>() / total as f64
        };
        let p = wavg(&|r| (r.precision, r.pred_points), np);
        let rc = wavg(&|r| (r.recall, r.gt_points), ng);
        Relaxed::new(rho, p, rc, np, ng)
    }
}

#[derive(Serialize)]
struct ImageReport {
    stem: String,
    pixel: MetricReport,
    sigma_filtered: MetricReport,
    relaxed: Relaxed,
    #[serde(skip)]
    sweep: Vec<Relaxed>,
}

pub fn evaluate(cfg: &RunConfig, force: bool) -> Result<()> {
    let gt = cfg.require_path("paths.gt", "--gt")?;
    let pred = prediction_dir(&cfg.require_path("paths.pred", "--pred")?)?;
    let (rho, sigma, radius): (f64, f64, f64) = (cfg.get("eval.rho")?, cfg.get("eval.sigma")?, cfg.get("eval.road_radius")?);
    let threshold: f64 = cfg.get("eval.threshold")?;
    let sweep = cfg.list("eval.rho_sweep")?;
    let stems = gt_stems(&gt)?;
    let out = prepare_out(cfg, force)?;
    let reports: Vec<Result<ImageReport>> = pool(cfg)?.install(|| {
        stems
            .par_iter()
            .map(|stem| {
                let g = read_mask(&gt.join("masks").join(format!("{stem}.png")))?;
                let p = read_prediction(&pred, stem, &g)?.threshold(threshold);
                let pp = mask_points(&skeletonize(&p));
                let gp = mask_points(&skeletonize(&g));
                let rel = |r: f64| -> Result<Relaxed> {
                    let (a, b) = relaxed_pr(&pp, &gp, r)?;
                    Ok(Relaxed::new(r, a, b, pp.len(), gp.len()))
                };
                Ok(ImageReport {
                    stem: stem.clone(),
                    pixel: confusion(&p, &g, |_| true)?.report(),
                    sigma_filtered: sigma_filtered_metrics(&p, &g, sigma, radius)?,
                    relaxed: rel(rho)?,
                    sweep: sweep.iter().map(|&r| rel(r)).collect::<Result<_>>()?,
                })
            })
            .collect()
    });
    let reports = reports.into_iter().collect::<Result<Vec<_>>>()?;
    let pooled = |f: &dyn Fn(&ImageReport) -> Confusion| {
        let mut c = Confusion::default();
        for r in &reports {
            c.merge(&f(r));
        }
        c.report()
    };
    let relaxed_all: Vec<&Relaxed> = reports.iter().map(|r| &r.relaxed).collect();
    let aggregate = json!({
        "rho": rho,
        "sigma": sigma,
        "road_radius": radius,
        "threshold": threshold,
        "images": reports.len(),
        "pixel": pooled(&|r| r.pixel.counts),
        "sigma_filtered": pooled(&|r| r.sigma_filtered.counts),
        "relaxed": Relaxed::pool(rho, &relaxed_all),
    });
    let mut csv = String::from("rho,precision,recall,f1\n");
    for (i, &r) in sweep.iter().enumerate() {
        let parts: Vec<&Relaxed> = reports.iter().map(|rep| &rep.sweep[i]).collect();
        let p = Relaxed::pool(r, &parts);
        let _ = writeln!(csv, "{},{:.6},{:.6},{:.6}", r, p.precision, p.recall, p.f1);
    }
    write_text(&out.join("per_image.json"), &to_json(&reports))?;
    write_text(&out.join("aggregate.json"), &to_json(&aggregate))?;
    write_text(&out.join("pr_vs_rho.csv"), &csv)?;
    println!("{}", serde_json::to_string(&aggregate).expect("serializes"));
    Ok(())
}

pub fn trace(cfg: &RunConfig, force: bool) -> Result<()> {
    let gt = cfg.require_path("paths.gt", "--gt")?;
    let pred = prediction_dir(&cfg.require_path("paths.pred", "--pred")?)?;
    let lines_dir = gt.join("centerlines");
    if !lines_dir.is_dir() {
        return Err(Error::Load {
            stem: gt.display().to_string(),
            message: "ground-truth directory has no centerlines/".into(),
        });
    }
    let pairs: usize = cfg.get("trace.pairs")?;
    let (min_len, max_len): (f64, f64) = (cfg.get("trace.min_length")?, cfg.get("trace.max_length")?);
    let tol: f64 = cfg.get("trace.tolerance")?;
    let edges = cfg.list("trace.buckets")?;
    if edges.len() < 2 || edges.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("trace.buckets must list at least two increasing edges".into()));
    }
    let path_cfg = PathConfig {
        threshold: cfg.get("trace.threshold")?,
        snap_radius: cfg.get("trace.snap_radius")?,
        ..PathConfig::default()
    };
    let seed: u64 = cfg.get("seed")?;
    let stems = gt_stems(&gt)?;
    let seeds = sample_seeds(seed, stems.len());
    let out = prepare_out(cfg, force)?;
    let results: Vec<Result<Vec<TraceOutcome>>> = pool(cfg)?.install(|| {
        stems
            .par_iter()
            .zip(&seeds)
            .map(|(stem, &s)| {
                let cl = lines_dir.join(format!("{stem}.csv"));
                if !cl.is_file() {
                    return Err(Error::Load {
                        stem: stem.clone(),
                        message: "no ground-truth centerlines".into(),
                    });
                }
                let lines = read_centerlines(&cl)?;
                let g = read_mask(&gt.join("masks").join(format!("{stem}.png")))?;
                let score = read_prediction(&pred, stem, &g)?;
                let samples = sample_reference_paths(&lines, pairs, min_len, max_len, &mut ChaCha8Rng::seed_from_u64(s));
                trace_paths(&score, &samples, tol, &path_cfg)
            })
            .collect()
    });
    let outcomes: Vec<TraceOutcome> = results.into_iter().collect::<Result<Vec<_>>>()?.concat();
    let report = bucket_outcomes(&outcomes, &edges, tol);
    let mut csv = String::from("length_lo,length_hi,paths,missing,ov,ad\n");
    for b in &report.buckets {
        let _ = writeln!(csv, "{},{},{},{},{:.6},{:.6}", b.lo, b.hi, b.paths, b.missing, b.ov, b.ad);
    }
    write_text(&out.join("trace.csv"), &csv)?;
    write_text(&out.join("trace.json"), &to_json(&report))?;
    print!("{csv}");
    Ok(())
}

pub fn params(cfg: &RunConfig, force: bool, all_variants: bool) -> Result<()> {
    let base = cfg.model(None)?;
    let (h, w): (usize, usize) = (cfg.get("params.height")?, cfg.get("params.width")?);
    let variants: Vec<Variant> = if all_variants { Variant::ALL.to_vec() } else { vec![base.variant] };
    let out = prepare_out(cfg, force)?;
    let mut text = String::new();
    let mut report = Vec::new();
    for v in variants {
        let net = UroadNet::new(&base.clone().with_variant(v))?;
        let macs = net.macs(h, w);
        let total_macs: u64 = macs.iter().map(|m| m.1).sum();
        let _ = writeln!(text, "{} ({} channels, {h}x{w} input)", v.label(), base.backbone.base_channels);
        let _ = writeln!(text, "  {:<24} {:>12}", "block", "params");
        for (name, n) in net.param_report() {
            let _ = writeln!(text, "  {name:<24} {n:>12}");
        }
        let _ = writeln!(text, "  {:<24} {:>12}", "total", net.num_params());
        let _ = writeln!(text, "  {:<24} {:>12}", "block", "MACs");
        for (name, n) in &macs {
            let _ = writeln!(text, "  {name:<24} {n:>12}");
        }
        let _ = writeln!(text, "  {:<24} {:>12}\n", "total", total_macs);
        report.push(json!({
            "variant": v,
            "params": net.num_params(),
            "param_blocks": net.param_report(),
            "macs": total_macs,
            "mac_blocks": macs,
            "height": h,
            "width": w,
        }));
    }
    write_text(&out.join("params.txt"), &text)?;
    write_text(&out.join("params.json"), &to_json(&report))?;
    print!("{text}");
    Ok(())
}
