//! Points and polylines in pixel coordinates (`x` = column, `y` = row).

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist(self, o: Point) -> f64 {
        (self.x - o.x).hypot(self.y - o.y)
    }

    pub fn lerp(self, o: Point, t: f64) -> Point {
        Point::new(self.x + (o.x - self.x) * t, self.y + (o.y - self.y) * t)
    }
}

/// Open polyline.
pub type Path = Vec<Point>;

/// Distance from `p` to the closed segment `ab`.
pub fn point_segment_dist(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return p.dist(a);
    }
    let t = (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0);
    p.dist(Point::new(a.x + t * dx, a.y + t * dy))
}

pub fn path_length(path: &[Point]) -> f64 {
    path.windows(2).map(|w| w[0].dist(w[1])).sum()
}

/// Resamples a polyline at unit arc-length spacing from its first vertex.
/// The last vertex is kept when the length is not a whole number.
pub fn densify(path: &[Point]) -> Path {
    let Some(&first) = path.first() else {
        return Vec::new();
    };
    let total = path_length(path);
    let steps = total.floor() as usize;
    let mut out = Vec::with_capacity(steps + 2);
    out.push(first);
    let mut seg = 0;
    let mut seg_start = 0.0;
    for k in 1..=steps {
        let s = k as f64;
        while seg + 1 < path.len() - 1 && seg_start + path[seg].dist(path[seg + 1]) < s {
            seg_start += path[seg].dist(path[seg + 1]);
            seg += 1;
        }
        let len = path[seg].dist(path[seg + 1]);
        let t = if len > 0.0 { ((s - seg_start) / len).clamp(0.0, 1.0) } else { 0.0 };
        out.push(path[seg].lerp(path[seg + 1], t));
    }
    let last = *path.last().unwrap();
    if total - steps as f64 > 1e-9 {
        out.push(last);
    }
    out
}

/// Bucketed index of polyline segments for nearest-distance queries.
pub struct SegmentIndex {
    points: Vec<Point>,
    cell: f64,
    min: Point,
    cols: usize,
    rows: usize,
    /// Segment ids per cell (a single-point path is segment `0 → 0`).
    cells: Vec<Vec<u32>>,
}

impl SegmentIndex {
    pub fn new(path: &[Point], cell: f64) -> Self {
        assert!(!path.is_empty() && cell > 0.0);
        let (mut lo, mut hi) = (path[0], path[0]);
        for p in path {
            lo = Point::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Point::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        let cols = ((hi.x - lo.x) / cell).floor() as usize + 1;
        let rows = ((hi.y - lo.y) / cell).floor() as usize + 1;
        let mut idx = SegmentIndex {
            points: path.to_vec(),
            cell,
            min: lo,
            cols,
            rows,
            cells: vec![Vec::new(); cols * rows],
        };
        let nseg = path.len().saturating_sub(1).max(1);
        for s in 0..nseg {
            let (a, b) = idx.segment(s);
            let (c0, r0) = idx.cell_of(Point::new(a.x.min(b.x), a.y.min(b.y)));
            let (c1, r1) = idx.cell_of(Point::new(a.x.max(b.x), a.y.max(b.y)));
            for r in r0..=r1 {
                for c in c0..=c1 {
                    idx.cells[r * cols + c].push(s as u32);
                }
            }
        }
        idx
    }

    fn segment(&self, s: usize) -> (Point, Point) {
        let a = self.points[s];
        (a, *self.points.get(s + 1).unwrap_or(&a))
    }

    fn cell_of(&self, p: Point) -> (usize, usize) {
        let c = ((p.x - self.min.x) / self.cell).floor().clamp(0.0, (self.cols - 1) as f64);
        let r = ((p.y - self.min.y) / self.cell).floor().clamp(0.0, (self.rows - 1) as f64);
        (c as usize, r as usize)
    }

    /// Distance from `p` to the nearest segment.
    pub fn distance(&self, p: Point) -> f64 {
        // Ring search outward from the cell nearest to `p`. Any segment in
        // ring k+1 or beyond is at least max(gap to grid, k * cell) away.
        let (pc, pr) = self.cell_of(p);
        let outside = {
            let fx = (p.x - self.min.x) / self.cell;
            let fy = (p.y - self.min.y) / self.cell;
            let gx = (-fx).max(fx - self.cols as f64).max(0.0);
            let gy = (-fy).max(fy - self.rows as f64).max(0.0);
            gx.max(gy) * self.cell
        };
        let mut best = f64::INFINITY;
        let max_ring = self.cols.max(self.rows);
        for k in 0..=max_ring {
            let (c0, c1) = (pc.saturating_sub(k), (pc + k).min(self.cols - 1));
            let (r0, r1) = (pr.saturating_sub(k), (pr + k).min(self.rows - 1));
            for r in r0..=r1 {
                for c in c0..=c1 {
                    let on_ring = r.abs_diff(pr) == k || c.abs_diff(pc) == k;
                    if !on_ring {
                        continue;
                    }
                    for &s in &self.cells[r * self.cols + c] {
                        let (a, b) = self.segment(s as usize);
                        best = best.min(point_segment_dist(p, a, b));
                    }
                }
            }
            if best <= outside.max(k as f64 * self.cell) {
                break;
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn densify_spacing() {
        let d = densify(&[Point::new(0.0, 0.0), Point::new(3.0, 0.0), Point::new(3.0, 2.5)]);
        assert_eq!(d.len(), 7);
        for w in d.windows(2).take(5) {
            assert!((w[0].dist(w[1]) - 1.0).abs() < 1e-12 || (w[1].x == 3.0));
        }
        assert_eq!(*d.last().unwrap(), Point::new(3.0, 2.5));
        assert_eq!(densify(&[Point::new(1.0, 1.0)]), vec![Point::new(1.0, 1.0)]);
        let seg = densify(&[Point::new(0.0, 0.0), Point::new(99.0, 0.0)]);
        assert_eq!(seg.len(), 100);
    }

    #[test]
    fn segment_distance() {
        let a = Point::new(0.0, 0.0);
        let b = Point::new(4.0, 0.0);
        assert_eq!(point_segment_dist(Point::new(2.0, 3.0), a, b), 3.0);
        assert_eq!(point_segment_dist(Point::new(7.0, 4.0), a, b), 5.0);
        let idx = SegmentIndex::new(&[a, b, Point::new(4.0, 10.0)], 1.0);
        assert_eq!(idx.distance(Point::new(2.0, 3.0)), 2.0);
        assert_eq!(idx.distance(Point::new(-30.0, 0.0)), 30.0);
    }
}
