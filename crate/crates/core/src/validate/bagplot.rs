//! Bagplot classification of bivariate (boarded, alighted) samples.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::depth::{cross, halfspace_depth_weighted, Point};
use super::ValidationConfig;
use crate::error::Diagnostic;
use crate::ingest::{Count, RideKey};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthPoint {
    pub boarded: Count,
    pub alighted: Count,
    pub source: (RideKey, u16),
}

impl DepthPoint {
    pub fn point(&self) -> Point {
        Point::new(f64::from(self.boarded), f64::from(self.alighted))
    }
}

/// Which rule produced the flags.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BagplotMethod {
    /// Fewer points than the configured minimum; nothing flagged.
    TooSmall,
    /// No coordinate above the anomalous-count threshold; nothing flagged.
    BelowThreshold,
    /// Depth-based bag and fence.
    Depth,
    /// Degenerate geometry; per-coordinate quartile fences.
    CoordinateFences,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BagplotResult {
    pub method: BagplotMethod,
    pub depth_median: Option<Point>,
    /// Counter-clockwise vertices of the bag.
    pub bag: Vec<Point>,
    /// Counter-clockwise vertices of the fence.
    pub fence: Vec<Point>,
    pub outlier_flags: Vec<bool>,
    pub diagnostics: Vec<Diagnostic>,
}

impl BagplotResult {
    fn unflagged(method: BagplotMethod, n: usize) -> Self {
        Self {
            method,
            depth_median: None,
            bag: Vec::new(),
            fence: Vec::new(),
            outlier_flags: alloc::vec![false; n],
            diagnostics: Vec::new(),
        }
    }

    pub fn n_outliers(&self) -> usize {
        self.outlier_flags.iter().filter(|f| **f).count()
    }
}

pub fn bagplot_classify(sample: &[DepthPoint], cfg: &ValidationConfig) -> BagplotResult {
    let points: Vec<Point> = sample.iter().map(DepthPoint::point).collect();
    bagplot_points(&points, cfg)
}

/// Classifies points as outliers when they fall outside the bagplot fence.
///
/// Samples whose coordinates never exceed `anomalous_count_threshold` are
/// accepted as a whole. Otherwise the bag is the depth region holding
/// `bag_mass` of the points, interpolated between the two enclosing depth
/// levels along rays from the depth median, and the fence is the bag
/// inflated by `fence_inflation` about the median.
pub fn bagplot_points(points: &[Point], cfg: &ValidationConfig) -> BagplotResult {
    let n = points.len();
    if n < cfg.min_sample {
        let mut r = BagplotResult::unflagged(BagplotMethod::TooSmall, n);
        r.diagnostics.push(Diagnostic::new(
            "bagplot_small_sample",
            format!("{n} points, fewer than {}; none classified as outliers", cfg.min_sample),
        ));
        return r;
    }
    let limit = f64::from(cfg.anomalous_count_threshold);
    if points.iter().all(|p| p.x <= limit && p.y <= limit) {
        return BagplotResult::unflagged(BagplotMethod::BelowThreshold, n);
    }

    let distinct = distinct_with_counts(points);
    let all: Vec<Point> = distinct.iter().map(|d| d.0).collect();
    if polygon_area(&convex_hull(&all)) <= 0.0 {
        return coordinate_fences(points, "collinear sample");
    }

    let depths: Vec<usize> = distinct
        .iter()
        .map(|(p, _)| halfspace_depth_weighted(*p, &distinct))
        .collect();
    let max_depth = *depths.iter().max().unwrap_or(&0);

    // Depth median: centroid of the deepest points, weighted by multiplicity.
    let (mut cx, mut cy, mut cw) = (0.0, 0.0, 0.0);
    for ((p, w), &d) in distinct.iter().zip(&depths) {
        if d == max_depth {
            cx += p.x * *w as f64;
            cy += p.y * *w as f64;
            cw += *w as f64;
        }
    }
    let median = Point::new(cx / cw, cy / cw);

    let mass_at = |k: usize| -> usize {
        distinct
            .iter()
            .zip(&depths)
            .filter(|(_, &d)| d >= k)
            .map(|((_, w), _)| *w)
            .sum()
    };
    let region = |k: usize| -> Vec<Point> {
        let pts: Vec<Point> = distinct
            .iter()
            .zip(&depths)
            .filter(|(_, &d)| d >= k)
            .map(|((p, _), _)| *p)
            .collect();
        convex_hull(&pts)
    };

    let target = cfg.bag_mass * n as f64;
    // Deepest level still holding at least `target` points.
    let mut outer_k = 1;
    for k in (1..=max_depth).rev() {
        if mass_at(k) as f64 >= target {
            outer_k = k;
            break;
        }
    }
    let outer = region(outer_k);
    let bag = if outer_k == max_depth {
        outer
    } else {
        let inner = region(outer_k + 1);
        let (m_out, m_in) = (mass_at(outer_k) as f64, mass_at(outer_k + 1) as f64);
        let lambda = if m_out > m_in {
            (target - m_in) / (m_out - m_in)
        } else {
            1.0
        };
        interpolate_hulls(&inner, &outer, median, lambda)
    };

    if polygon_area(&bag) <= 0.0 {
        return coordinate_fences(points, "degenerate bag");
    }

    let fence: Vec<Point> = bag
        .iter()
        .map(|v| {
            Point::new(
                median.x + cfg.fence_inflation * (v.x - median.x),
                median.y + cfg.fence_inflation * (v.y - median.y),
            )
        })
        .collect();
    let outlier_flags = points.iter().map(|p| !inside_convex(&fence, *p)).collect();
    BagplotResult {
        method: BagplotMethod::Depth,
        depth_median: Some(median),
        bag,
        fence,
        outlier_flags,
        diagnostics: Vec::new(),
    }
}

fn distinct_with_counts(points: &[Point]) -> Vec<(Point, usize)> {
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mut out: Vec<(Point, usize)> = Vec::new();
    for p in sorted {
        match out.last_mut() {
            Some((q, w)) if q.x == p.x && q.y == p.y => *w += 1,
            _ => out.push((p, 1)),
        }
    }
    out
}

/// Andrew's monotone chain; counter-clockwise, no collinear vertices.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.total_cmp(b));
    pts.dedup_by(|a, b| a.x == b.x && a.y == b.y);
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Point> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: alloc::boxed::Box<dyn Iterator<Item = &Point>> = if pass == 0 {
            alloc::boxed::Box::new(pts.iter())
        } else {
            alloc::boxed::Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 {
                let a = hull[hull.len() - 2];
                let b = hull[hull.len() - 1];
                if cross(b.sub(a), p.sub(a)) <= 0.0 {
                    hull.pop();
                } else {
                    break;
                }
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

pub fn polygon_area(poly: &[Point]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut a = 0.0;
    for i in 0..poly.len() {
        let p = poly[i];
        let q = poly[(i + 1) % poly.len()];
        a += p.x * q.y - q.x * p.y;
    }
    a / 2.0
}

/// Point-in-convex-polygon for a counter-clockwise polygon, boundary
/// inclusive with a small relative tolerance.
pub fn inside_convex(poly: &[Point], p: Point) -> bool {
    if poly.len() < 3 {
        return poly.iter().any(|v| v.x == p.x && v.y == p.y);
    }
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let e = b.sub(a);
        let len = libm::sqrt(e.x * e.x + e.y * e.y);
        if cross(e, p.sub(a)) < -1e-9 * len * (1.0 + libm::fabs(p.x) + libm::fabs(p.y)) {
            return false;
        }
    }
    true
}

/// Largest `t >= 0` with `c + t·u` inside the convex polygon (or its
/// degenerate point/segment form). `c` must lie in the polygon.
fn radial_extent(poly: &[Point], c: Point, u: Point) -> f64 {
    match poly.len() {
        0 | 1 => 0.0,
        2 => {
            // Only directions along the segment leave the origin point.
            let mut best: f64 = 0.0;
            for v in poly {
                let w = v.sub(c);
                let ww = w.x * w.x + w.y * w.y;
                if ww == 0.0 {
                    continue;
                }
                let along = w.x * u.x + w.y * u.y;
                let c2 = cross(u, w);
                if along > 0.0 && libm::fabs(c2) <= 1e-12 * libm::sqrt(ww) {
                    best = best.max(along / (u.x * u.x + u.y * u.y));
                }
            }
            best
        }
        m => {
            let mut t = f64::INFINITY;
            for i in 0..m {
                let a = poly[i];
                let b = poly[(i + 1) % m];
                let e = b.sub(a);
                // Outward normal of a counter-clockwise edge.
                let nrm = Point::new(e.y, -e.x);
                let rate = nrm.x * u.x + nrm.y * u.y;
                if rate > 0.0 {
                    let slack = nrm.x * (a.x - c.x) + nrm.y * (a.y - c.y);
                    t = t.min(slack.max(0.0) / rate);
                }
            }
            if t.is_finite() {
                t
            } else {
                0.0
            }
        }
    }
}

fn interpolate_hulls(inner: &[Point], outer: &[Point], c: Point, lambda: f64) -> Vec<Point> {
    let mut verts = Vec::with_capacity(inner.len() + outer.len());
    for v in inner.iter().chain(outer) {
        let u = v.sub(c);
        if u.x == 0.0 && u.y == 0.0 {
            continue;
        }
        let r = (1.0 - lambda) * radial_extent(inner, c, u) + lambda * radial_extent(outer, c, u);
        verts.push(Point::new(c.x + r * u.x, c.y + r * u.y));
    }
    verts.push(c);
    convex_hull(&verts)
}

fn quartiles(values: &mut [f64]) -> (f64, f64) {
    values.sort_by(|a, b| a.total_cmp(b));
    let q = |p: f64| {
        let h = (values.len() - 1) as f64 * p;
        let lo = libm::floor(h) as usize;
        let hi = (lo + 1).min(values.len() - 1);
        values[lo] + (h - lo as f64) * (values[hi] - values[lo])
    };
    (q(0.25), q(0.75))
}

fn coordinate_fences(points: &[Point], why: &str) -> BagplotResult {
    let mut xs: Vec<f64> = points.iter().map(|p| p.x).collect();
    let mut ys: Vec<f64> = points.iter().map(|p| p.y).collect();
    let (x1, x3) = quartiles(&mut xs);
    let (y1, y3) = quartiles(&mut ys);
    let (dx, dy) = (3.0 * (x3 - x1), 3.0 * (y3 - y1));
    let (lx, hx, ly, hy) = (x1 - dx, x3 + dx, y1 - dy, y3 + dy);
    let flags = points
        .iter()
        .map(|p| p.x < lx || p.x > hx || p.y < ly || p.y > hy)
        .collect();
    let mut r = BagplotResult::unflagged(BagplotMethod::CoordinateFences, points.len());
    r.outlier_flags = flags;
    r.bag = alloc::vec![
        Point::new(x1, y1),
        Point::new(x3, y1),
        Point::new(x3, y3),
        Point::new(x1, y3)
    ];
    r.fence = alloc::vec![
        Point::new(lx, ly),
        Point::new(hx, ly),
        Point::new(hx, hy),
        Point::new(lx, hy)
    ];
    r.diagnostics.push(Diagnostic::new(
        "bagplot_degenerate",
        format!("{why}; using per-coordinate quartile fences"),
    ));
    r
}
