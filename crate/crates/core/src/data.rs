//! Synthetic road scenes, dataset files, and tiling for large images.
//!
//! Layout of a dataset directory:
//!
//! ```text
//! images/<stem>.png        8-bit RGB
//! masks/<stem>.png         8-bit gray, road = 255 (binarized at 128 on load)
//! centerlines/<stem>.csv   optional, rows `path_id,x,y`
//! ```

use crate::error::{Error, Result};
use crate::geom::{path_length, point_segment_dist, Path, Point};
use crate::maps::{Mask, ScoreMap};
use crate::tensor::Tensor;
use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path as FsPath;

/// Narrowest road the generator draws. Any point of a centreline of at least
/// this width is within half a width of some pixel centre.
pub const MIN_ROAD_WIDTH: f64 = 1.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub size: usize,
    pub min_roads: usize,
    pub max_roads: usize,
    pub min_width: f64,
    pub max_width: f64,
    /// Standard deviation of the heading change per control point (radians).
    pub curvature: f64,
    pub max_occlusions: usize,
    pub occlusion_radius: (f64, f64),
    pub distractors: usize,
    /// Wavelength of the background texture in pixels.
    pub texture_scale: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            size: 256,
            min_roads: 2,
            max_roads: 5,
            min_width: 2.0,
            max_width: 8.0,
            curvature: 0.3,
            max_occlusions: 6,
            occlusion_radius: (3.0, 9.0),
            distractors: 4,
            texture_scale: 24.0,
            noise: 0.04,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.size == 0 || self.size % 8 != 0 {
            return bad(format!("size {} must be a positive multiple of 8", self.size));
        }
        if self.min_roads > self.max_roads {
            return bad("min_roads exceeds max_roads".into());
        }
        if !(self.min_width >= MIN_ROAD_WIDTH && self.min_width <= self.max_width) {
            return bad(format!(
                "road widths must satisfy {MIN_ROAD_WIDTH} <= min <= max (got {}..{})",
                self.min_width, self.max_width
            ));
        }
        if !(self.occlusion_radius.0 > 0.0 && self.occlusion_radius.0 <= self.occlusion_radius.1) {
            return bad("occlusion radius range is invalid".into());
        }
        if !(self.texture_scale > 0.0 && self.noise >= 0.0 && self.curvature >= 0.0) {
            return bad("texture scale, noise and curvature must be nonnegative".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub name: String,
    /// `[3, H, W]` in `[0, 1]`.
    pub image: Tensor<f32>,
    pub mask: Mask,
    pub centerlines: Vec<Path>,
    /// Half-width of each centreline's road (empty when unknown).
    pub radii: Vec<f64>,
}

/// Marks every pixel whose centre is within `width / 2` of the polyline.
pub fn rasterize_into(mask: &mut Mask, line: &[Point], width: f64) {
    let r = width / 2.0;
    let segs: Vec<(Point, Point)> = if line.len() == 1 {
        vec![(line[0], line[0])]
    } else {
        line.windows(2).map(|w| (w[0], w[1])).collect()
    };
    for (a, b) in segs {
        let x0 = (a.x.min(b.x) - r).floor().max(0.0) as usize;
        let y0 = (a.y.min(b.y) - r).floor().max(0.0) as usize;
        let x1 = (a.x.max(b.x) + r).ceil();
        let y1 = (a.y.max(b.y) + r).ceil();
        if x1 < 0.0 || y1 < 0.0 {
            continue;
        }
        let x1 = (x1 as usize).min(mask.width.saturating_sub(1));
        let y1 = (y1 as usize).min(mask.height.saturating_sub(1));
        for y in y0..=y1.max(y0) {
            for x in x0..=x1.max(x0) {
                if y < mask.height
                    && x < mask.width
                    && point_segment_dist(Point::new(x as f64, y as f64), a, b) <= r
                {
                    mask.set(y, x, true);
                }
            }
        }
    }
}

pub fn rasterize_centerlines(lines: &[Path], width: f64, height: usize, canvas_width: usize) -> Mask {
    let mut m = Mask::empty(height, canvas_width);
    for l in lines.iter().filter(|l| !l.is_empty()) {
        rasterize_into(&mut m, l, width);
    }
    m
}

fn catmull_rom(ctrl: &[Point], per_segment: usize) -> Path {
    if ctrl.len() < 3 {
        return ctrl.to_vec();
    }
    let mut out = Vec::with_capacity(ctrl.len() * per_segment);
    for i in 0..ctrl.len() - 1 {
        let p0 = ctrl[i.saturating_sub(1)];
        let (p1, p2) = (ctrl[i], ctrl[i + 1]);
        let p3 = ctrl[(i + 2).min(ctrl.len() - 1)];
        for s in 0..per_segment {
            let t = s as f64 / per_segment as f64;
            let (t2, t3) = (t * t, t * t * t);
            let f = |a: f64, b: f64, c: f64, d: f64| {
                0.5 * (2.0 * b + (-a + c) * t + (2.0 * a - 5.0 * b + 4.0 * c - d) * t2 + (-a + 3.0 * b - 3.0 * c + d) * t3)
            };
            out.push(Point::new(f(p0.x, p1.x, p2.x, p3.x), f(p0.y, p1.y, p2.y, p3.y)));
        }
    }
    out.push(*ctrl.last().unwrap());
    out
}

/// Longest run of consecutive points inside `[0, size-1]²`, without
/// repeated points.
fn clip_to_canvas(line: &[Point], size: usize) -> Path {
    let max = (size - 1) as f64;
    let inside = |p: &Point| p.x >= 0.0 && p.y >= 0.0 && p.x <= max && p.y <= max;
    let mut best: Path = Vec::new();
    let mut cur: Path = Vec::new();
    for p in line {
        if inside(p) {
            if cur.last() != Some(p) {
                cur.push(*p);
            }
        } else if !cur.is_empty() {
            if path_length(&cur) > path_length(&best) {
                best = std::mem::take(&mut cur);
            }
            cur.clear();
        }
    }
    if path_length(&cur) > path_length(&best) {
        best = cur;
    }
    best
}

fn random_road(rng: &mut ChaCha8Rng, cfg: &SyntheticConfig) -> Path {
    let s = cfg.size as f64;
    // Start just outside a random edge and head roughly inwards.
    let edge = rng.gen_range(0..4);
    let t = rng.gen_range(0.1..0.9) * s;
    let (start, heading) = match edge {
        0 => (Point::new(t, -4.0), PI / 2.0),
        1 => (Point::new(s + 3.0, t), PI),
        2 => (Point::new(t, s + 3.0), -PI / 2.0),
        _ => (Point::new(-4.0, t), 0.0),
    };
    let mut heading = heading + rng.gen_range(-0.6..0.6);
    let step = (s / 12.0).max(6.0);
    let mut ctrl = vec![start];
    let mut p = start;
    for _ in 0..64 {
        let g: f64 = rng.sample(StandardNormal);
        heading += cfg.curvature * g;
        p = Point::new(p.x + step * heading.cos(), p.y + step * heading.sin());
        ctrl.push(p);
        if p.x < -2.0 * step || p.y < -2.0 * step || p.x > s + 2.0 * step || p.y > s + 2.0 * step {
            break;
        }
    }
    clip_to_canvas(&catmull_rom(&ctrl, 8), cfg.size)
}

fn value_noise(rng: &mut ChaCha8Rng, size: usize, scale: f64) -> Vec<f64> {
    let n = (size as f64 / scale).ceil() as usize + 2;
    let lattice: Vec<f64> = (0..n * n).map(|_| rng.gen()).collect();
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        let fy = y as f64 / scale;
        let (iy, ty) = (fy.floor() as usize, fy - fy.floor());
        let sy = ty * ty * (3.0 - 2.0 * ty);
        for x in 0..size {
            let fx = x as f64 / scale;
            let (ix, tx) = (fx.floor() as usize, fx - fx.floor());
            let sx = tx * tx * (3.0 - 2.0 * tx);
            let v = |a: usize, b: usize| lattice[a * n + b];
            let top = v(iy, ix) * (1.0 - sx) + v(iy, ix + 1) * sx;
            let bot = v(iy + 1, ix) * (1.0 - sx) + v(iy + 1, ix + 1) * sx;
            out.push(top * (1.0 - sy) + bot * sy);
        }
    }
    out
}

/// Generates one scene. Deterministic in `cfg` (including the seed).
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Sample> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.size;
    let target = rng.gen_range(cfg.min_roads..=cfg.max_roads);
    let mut centerlines = Vec::with_capacity(target);
    let mut radii = Vec::with_capacity(target);
    let mut attempts = 0;
    while centerlines.len() < target {
        attempts += 1;
        if attempts > 20 * target.max(1) {
            return Err(Error::Generation(format!(
                "placed {} of {target} roads on a {n}x{n} canvas",
                centerlines.len()
            )));
        }
        let line = random_road(&mut rng, cfg);
        let width = rng.gen_range(cfg.min_width..=cfg.max_width);
        if path_length(&line) < (n as f64 / 8.0).max(8.0) {
            continue;
        }
        centerlines.push(line);
        radii.push(width / 2.0);
    }
    let mut mask = Mask::empty(n, n);
    for (l, r) in centerlines.iter().zip(&radii) {
        rasterize_into(&mut mask, l, 2.0 * r);
    }

    // Background: two-tone vegetation/soil texture.
    let tex = value_noise(&mut rng, n, cfg.texture_scale);
    let detail = value_noise(&mut rng, n, cfg.texture_scale / 4.0);
    let soil = [0.45, 0.38, 0.28];
    let grass = [0.22, 0.36, 0.18];
    let mut img = vec![0f64; 3 * n * n];
    for i in 0..n * n {
        let t = 0.7 * tex[i] + 0.3 * detail[i];
        for c in 0..3 {
            img[c * n * n + i] = soil[c] * t + grass[c] * (1.0 - t);
        }
    }
    // Gray distractors (roofs, parking lots) look like road but are not.
    for _ in 0..cfg.distractors {
        let (w, h) = (rng.gen_range(6..n / 6 + 7), rng.gen_range(6..n / 6 + 7));
        let (x0, y0) = (rng.gen_range(0..n), rng.gen_range(0..n));
        let g = rng.gen_range(0.5..0.75);
        for y in y0..(y0 + h).min(n) {
            for x in x0..(x0 + w).min(n) {
                for c in 0..3 {
                    img[c * n * n + y * n + x] = g;
                }
            }
        }
    }
    let tone: Vec<f64> = (0..centerlines.len()).map(|_| rng.gen_range(0.55..0.72)).collect();
    let mut road_of = Mask::empty(n, n);
    for (k, (l, r)) in centerlines.iter().zip(&radii).enumerate() {
        road_of.data.fill(false);
        rasterize_into(&mut road_of, l, 2.0 * r);
        for (i, _) in road_of.data.iter().enumerate().filter(|(_, &on)| on) {
            for c in 0..3 {
                img[c * n * n + i] = tone[k] + 0.02 * (c as f64 - 1.0);
            }
        }
    }
    // Tree crowns and shadows occlude the image only.
    let occ = rng.gen_range(0..=cfg.max_occlusions);
    for _ in 0..occ {
        let r = rng.gen_range(cfg.occlusion_radius.0..=cfg.occlusion_radius.1);
        let c = match centerlines.is_empty() {
            false if rng.gen_bool(0.7) => {
                let l = &centerlines[rng.gen_range(0..centerlines.len())];
                l[rng.gen_range(0..l.len())]
            }
            _ => Point::new(rng.gen_range(0.0..n as f64), rng.gen_range(0.0..n as f64)),
        };
        let (cx, cy) = (c.x, c.y);
        let shade = [0.08, 0.16, 0.07];
        let ri = r.ceil() as isize;
        for dy in -ri..=ri {
            for dx in -ri..=ri {
                let (x, y) = (cx.round() as isize + dx, cy.round() as isize + dy);
                if x < 0 || y < 0 || x >= n as isize || y >= n as isize {
                    continue;
                }
                if ((dx * dx + dy * dy) as f64) <= r * r {
                    let i = y as usize * n + x as usize;
                    for c in 0..3 {
                        img[c * n * n + i] = shade[c];
                    }
                }
            }
        }
    }
    let data: Vec<f32> = img
        .iter()
        .map(|&v| (v + cfg.noise * rng.sample::<f64, _>(StandardNormal)).clamp(0.0, 1.0) as f32)
        .collect();
    Ok(Sample {
        name: format!("synthetic_{:016x}", cfg.seed),
        image: Tensor::new([3, n, n], data),
        mask,
        centerlines,
        radii,
    })
}

/// Tile origins along one axis: `min(step * i, dim - tile)`.
pub fn tile_origins(dim: usize, tile: usize, overlap: usize) -> Result<Vec<usize>> {
    if tile == 0 || overlap >= tile {
        return Err(Error::Argument(format!(
            "overlap {overlap} must be smaller than tile size {tile}"
        )));
    }
    if dim <= tile {
        return Ok(vec![0]);
    }
    let step = tile - overlap;
    let count = (dim - tile).div_ceil(step) + 1;
    Ok((0..count).map(|i| (step * i).min(dim - tile)).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tile {
    /// Top-left corner `(y, x)` in the full image.
    pub origin: (usize, usize),
    /// Valid extent inside the image.
    pub height: usize,
    pub width: usize,
    /// `[C, tile, tile]`; reflect-padded where the image is smaller.
    pub data: Tensor<f32>,
}

/// Cuts `[C, H, W]` into `tile × tile` windows overlapping by `overlap`.
pub fn tile(image: &Tensor<f32>, tile: usize, overlap: usize) -> Result<Vec<Tile>> {
    let (c, h, w) = image.dims3();
    let ys = tile_origins(h, tile, overlap)?;
    let xs = tile_origins(w, tile, overlap)?;
    let mut out = Vec::with_capacity(ys.len() * xs.len());
    for &y0 in &ys {
        for &x0 in &xs {
            let (th, tw) = (tile.min(h - y0), tile.min(w - x0));
            let mut data = vec![0f32; c * tile * tile];
            for ch in 0..c {
                for y in 0..tile {
                    let sy = y0 + reflect(y, th);
                    for x in 0..tile {
                        let sx = x0 + reflect(x, tw);
                        data[(ch * tile + y) * tile + x] = image.data()[(ch * h + sy) * w + sx];
                    }
                }
            }
            out.push(Tile {
                origin: (y0, x0),
                height: th,
                width: tw,
                data: Tensor::new([c, tile, tile], data),
            });
        }
    }
    Ok(out)
}

fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

/// Blend weights along one axis of a tile spanning `[start, end)`: a raised
/// cosine over the part shared with each neighbouring tile, 1 elsewhere.
fn axis_weights(start: usize, end: usize, spans: &[(usize, usize)]) -> Vec<f64> {
    let len = end - start;
    let lead = spans
        .iter()
        .filter(|&&(s, e)| s < start && e > start)
        .map(|&(_, e)| e.min(end) - start)
        .max()
        .unwrap_or(0);
    let trail = spans
        .iter()
        .filter(|&&(s, e)| s > start && s < end && e >= end)
        .map(|&(s, _)| end - s)
        .max()
        .unwrap_or(0);
    let ramp = |i: usize, ov: usize| 0.5 - 0.5 * (PI * (i as f64 + 0.5) / ov as f64).cos();
    (0..len)
        .map(|i| {
            let mut v = 1.0;
            if i < lead {
                v *= ramp(i, lead);
            }
            let back = len - 1 - i;
            if back < trail {
                v *= ramp(back, trail);
            }
            v
        })
        .collect()
}

/// Weighted blend of score tiles placed at `(y, x)` origins into an
/// `height × width` map. Tiles larger than the remaining image are cropped.
pub fn stitch(tiles: &[(ScoreMap, (usize, usize))], height: usize, width: usize) -> Result<ScoreMap> {
    let extent = |t: &ScoreMap, (y, x): (usize, usize)| {
        ((y, (y + t.height).min(height)), (x, (x + t.width).min(width)))
    };
    let mut ys: Vec<(usize, usize)> = Vec::new();
    let mut xs: Vec<(usize, usize)> = Vec::new();
    for (t, o) in tiles {
        if o.0 >= height || o.1 >= width {
            return Err(Error::Stitching(format!("tile origin {o:?} outside {height}x{width}")));
        }
        let (ey, ex) = extent(t, *o);
        ys.push(ey);
        xs.push(ex);
    }
    let mut acc = vec![0.0; height * width];
    let mut wsum = vec![0.0; height * width];
    for (k, (t, o)) in tiles.iter().enumerate() {
        let ((y0, y1), (x0, x1)) = (ys[k], xs[k]);
        // Neighbours along an axis are tiles that overlap in the other axis.
        let row_nb: Vec<_> = (0..tiles.len())
            .filter(|&j| j != k && xs[j].0 < x1 && xs[j].1 > x0)
            .map(|j| ys[j])
            .collect();
        let col_nb: Vec<_> = (0..tiles.len())
            .filter(|&j| j != k && ys[j].0 < y1 && ys[j].1 > y0)
            .map(|j| xs[j])
            .collect();
        let wy = axis_weights(y0, y1, &row_nb);
        let wx = axis_weights(x0, x1, &col_nb);
        for y in y0..y1 {
            for x in x0..x1 {
                let wgt = wy[y - y0] * wx[x - x0];
                let i = y * width + x;
                acc[i] += wgt * t.at(y - o.0, x - o.1);
                wsum[i] += wgt;
            }
        }
    }
    if let Some(i) = wsum.iter().position(|&w| w <= 0.0) {
        return Err(Error::Stitching(format!(
            "pixel ({}, {}) is not covered by any tile",
            i / width,
            i % width
        )));
    }
    let values = acc.iter().zip(&wsum).map(|(a, w)| (a / w).clamp(0.0, 1.0)).collect();
    ScoreMap::new(height, width, values)
}

fn io_err(path: &FsPath, e: std::io::Error) -> Error {
    Error::io(path, e)
}

fn image_err(path: &FsPath, e: image::ImageError) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        source: e,
    }
}

pub fn read_image(path: &FsPath) -> Result<Tensor<f32>> {
    let img = image::open(path).map_err(|e| image_err(path, e))?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0f32; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + y as usize) * w + x as usize] = px.0[c] as f32 / 255.0;
        }
    }
    Ok(Tensor::new([3, h, w], data))
}

pub fn write_image(path: &FsPath, image: &Tensor<f32>) -> Result<()> {
    let (c, h, w) = image.dims3();
    if c != 3 {
        return Err(Error::Dimension(format!("RGB image needs 3 channels, got {c}")));
    }
    let d = image.data();
    let img: RgbImage = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let at = |ch: usize| (d[(ch * h + y as usize) * w + x as usize].clamp(0.0, 1.0) * 255.0).round() as u8;
        Rgb([at(0), at(1), at(2)])
    });
    img.save(path).map_err(|e| image_err(path, e))
}

pub fn read_mask(path: &FsPath) -> Result<Mask> {
    let img = image::open(path).map_err(|e| image_err(path, e))?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(Mask {
        height: h,
        width: w,
        data: img.pixels().map(|p| p.0[0] >= 128).collect(),
    })
}

pub fn write_mask(path: &FsPath, mask: &Mask) -> Result<()> {
    let img: GrayImage = ImageBuffer::from_fn(mask.width as u32, mask.height as u32, |x, y| {
        Luma([if mask.get(y as usize, x as usize) { 255 } else { 0 }])
    });
    img.save(path).map_err(|e| image_err(path, e))
}

/// Scores as a 16-bit grayscale PNG (`round(score * 65535)`).
pub fn write_score(path: &FsPath, score: &ScoreMap) -> Result<()> {
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_fn(score.width as u32, score.height as u32, |x, y| {
            Luma([(score.at(y as usize, x as usize).clamp(0.0, 1.0) * 65535.0).round() as u16])
        });
    img.save(path).map_err(|e| image_err(path, e))
}

/// Reads a score PNG (16- or 8-bit gray) into `[0, 1]`.
pub fn read_score(path: &FsPath) -> Result<ScoreMap> {
    let img = image::open(path).map_err(|e| image_err(path, e))?.to_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    ScoreMap::new(h, w, img.pixels().map(|p| p.0[0] as f64 / 65535.0).collect())
}

pub fn write_centerlines(path: &FsPath, lines: &[Path]) -> Result<()> {
    let mut s = String::from("path_id,x,y\n");
    for (i, l) in lines.iter().enumerate() {
        for p in l {
            s.push_str(&format!("{i},{},{}\n", p.x, p.y));
        }
    }
    fs::write(path, s).map_err(|e| io_err(path, e))
}

pub fn read_centerlines(path: &FsPath) -> Result<Vec<Path>> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines: BTreeMap<usize, Path> = BTreeMap::new();
    for (no, row) in text.lines().enumerate() {
        let row = row.trim();
        if row.is_empty() || (no == 0 && row.starts_with("path_id")) {
            continue;
        }
        let bad = || Error::Load {
            stem: path.display().to_string(),
            message: format!("line {}: expected `path_id,x,y`, got `{row}`", no + 1),
        };
        let mut f = row.split(',');
        let id: usize = f.next().and_then(|v| v.trim().parse().ok()).ok_or_else(bad)?;
        let x: f64 = f.next().and_then(|v| v.trim().parse().ok()).ok_or_else(bad)?;
        let y: f64 = f.next().and_then(|v| v.trim().parse().ok()).ok_or_else(bad)?;
        lines.entry(id).or_default().push(Point::new(x, y));
    }
    Ok(lines.into_values().collect())
}

/// Writes image, mask and centrelines of `sample` under `root`.
pub fn save_sample(root: &FsPath, sample: &Sample) -> Result<()> {
    for sub in ["images", "masks", "centerlines"] {
        let d = root.join(sub);
        fs::create_dir_all(&d).map_err(|e| io_err(&d, e))?;
    }
    write_image(&root.join("images").join(format!("{}.png", sample.name)), &sample.image)?;
    write_mask(&root.join("masks").join(format!("{}.png", sample.name)), &sample.mask)?;
    write_centerlines(&root.join("centerlines").join(format!("{}.csv", sample.name)), &sample.centerlines)
}

fn stems(dir: &FsPath, ext: &str) -> Result<BTreeMap<String, std::path::PathBuf>> {
    let mut out = BTreeMap::new();
    if !dir.exists() {
        return Ok(out);
    }
    for entry in fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
        let p = entry.map_err(|e| io_err(dir, e))?.path();
        if p.extension().and_then(|e| e.to_str()).map(|e| e.eq_ignore_ascii_case(ext)) == Some(true) {
            if let Some(stem) = p.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), p.clone());
            }
        }
    }
    Ok(out)
}

/// Stems of matched image/mask pairs under `root`, sorted.
pub fn dataset_stems(root: &FsPath) -> Result<Vec<String>> {
    if !root.is_dir() {
        return Err(Error::Load {
            stem: root.display().to_string(),
            message: "dataset directory does not exist".into(),
        });
    }
    let images = stems(&root.join("images"), "png")?;
    let masks = stems(&root.join("masks"), "png")?;
    for s in images.keys() {
        if !masks.contains_key(s) {
            return Err(Error::Load {
                stem: s.clone(),
                message: "image has no mask".into(),
            });
        }
    }
    for s in masks.keys() {
        if !images.contains_key(s) {
            return Err(Error::Load {
                stem: s.clone(),
                message: "mask has no image".into(),
            });
        }
    }
    Ok(images.into_keys().collect())
}

pub fn load_sample(root: &FsPath, stem: &str) -> Result<Sample> {
    let image = read_image(&root.join("images").join(format!("{stem}.png")))?;
    let mask = read_mask(&root.join("masks").join(format!("{stem}.png")))?;
    let (_, h, w) = image.dims3();
    if (mask.height, mask.width) != (h, w) {
        return Err(Error::Load {
            stem: stem.to_string(),
            message: format!("image {h}x{w} but mask {}x{}", mask.height, mask.width),
        });
    }
    let cl = root.join("centerlines").join(format!("{stem}.csv"));
    let centerlines = if cl.exists() { read_centerlines(&cl)? } else { Vec::new() };
    Ok(Sample {
        name: stem.to_string(),
        image,
        mask,
        centerlines,
        radii: Vec::new(),
    })
}

/// Loads every matched pair under `root` in sorted stem order.
pub fn load_dataset(root: &FsPath) -> Result<Vec<Sample>> {
    dataset_stems(root)?.iter().map(|s| load_sample(root, s)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tile_origin_examples() {
        assert_eq!(tile_origins(1024, 512, 0).unwrap(), [0, 512]);
        assert_eq!(tile_origins(600, 512, 64).unwrap(), [0, 88]);
        assert_eq!(tile_origins(512, 512, 64).unwrap(), [0]);
        assert_eq!(tile_origins(1500, 512, 64).unwrap(), [0, 448, 896, 988]);
        assert!(tile_origins(100, 64, 64).is_err());
    }

    #[test]
    fn rasterize_point_is_disk() {
        let m = rasterize_centerlines(&[vec![Point::new(5.0, 5.0)]], 2.0, 11, 11);
        // radius 1 closed disk: centre plus 4 neighbours
        assert_eq!(m.count(), 5);
        assert!(rasterize_centerlines(&[], 3.0, 4, 4).data.iter().all(|&b| !b));
    }

    #[test]
    fn straight_road_thickness() {
        let line = vec![Point::new(2.0, 10.0), Point::new(28.0, 10.0)];
        let m = rasterize_centerlines(&[line], 4.0, 21, 31);
        let col: usize = (0..21).filter(|&y| m.get(y, 15)).count();
        assert!((3..=5).contains(&col), "thickness {col}");
    }

    #[test]
    fn stitch_blend_is_monotone() {
        let zero = ScoreMap::filled(8, 100, 0.0);
        let one = ScoreMap::filled(8, 100, 1.0);
        let s = stitch(&[(zero, (0, 0)), (one, (0, 36))], 8, 136).unwrap();
        let row: Vec<f64> = (0..136).map(|x| s.at(3, x)).collect();
        assert!(row[..36].iter().all(|&v| v == 0.0));
        assert!(row[100..].iter().all(|&v| v == 1.0));
        assert!(row.windows(2).all(|w| w[1] >= w[0]));
        assert!(row[36] > 0.0 && row[99] < 1.0);
    }

    #[test]
    fn stitch_reports_gaps() {
        let t = ScoreMap::filled(4, 4, 0.5);
        assert!(matches!(stitch(&[(t, (0, 0))], 4, 8), Err(Error::Stitching(_))));
    }

    #[test]
    fn generator_is_deterministic_and_sound() {
        let cfg = SyntheticConfig {
            size: 64,
            seed: 11,
            ..Default::default()
        };
        let a = generate_synthetic(&cfg).unwrap();
        assert_eq!(a, generate_synthetic(&cfg).unwrap());
        assert!(!a.centerlines.is_empty());
        for l in &a.centerlines {
            for p in l {
                // the nearest pixel centre is within sqrt(2)/2 < MIN_ROAD_WIDTH/2
                assert!(a.mask.get(p.y.round() as usize, p.x.round() as usize));
            }
        }
        let empty = generate_synthetic(&SyntheticConfig {
            min_roads: 0,
            max_roads: 0,
            ..cfg
        })
        .unwrap();
        assert_eq!(empty.mask.count(), 0);
        assert!(empty.centerlines.is_empty());
    }
}
