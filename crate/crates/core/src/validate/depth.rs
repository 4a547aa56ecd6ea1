//! Tukey halfspace depth in the plane.

use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub(crate) fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }

    pub(crate) fn total_cmp(&self, o: &Point) -> Ordering {
        self.x.total_cmp(&o.x).then(self.y.total_cmp(&o.y))
    }
}

pub(crate) fn cross(a: Point, b: Point) -> f64 {
    a.x * b.y - a.y * b.x
}

fn dot(a: Point, b: Point) -> f64 {
    a.x * b.x + a.y * b.y
}

/// 0 for directions in [0, π), 1 for [π, 2π).
fn half(v: Point) -> u8 {
    if v.y > 0.0 || (v.y == 0.0 && v.x > 0.0) {
        0
    } else {
        1
    }
}

/// Halfspace depth of `q`: the smallest number of sample points in a closed
/// halfplane whose boundary passes through `q`.
pub fn halfspace_depth(q: Point, sample: &[Point]) -> usize {
    let weighted: Vec<(Point, usize)> = sample.iter().map(|&p| (p, 1)).collect();
    halfspace_depth_weighted(q, &weighted)
}

/// Depth of `q` among points carrying integer multiplicities.
///
/// Angular sweep: directions from `q` are sorted by angle and merged when
/// exactly collinear; for every critical line through `q` and a sample
/// direction, the four halfplanes obtained by rotating that line slightly
/// either way are counted with two monotone pointers over prefix sums.
/// Every generic halfplane through `q` is one of those, and the closed
/// halfplanes never do better than their generic neighbours.
/// O(n log n) per query.
pub fn halfspace_depth_weighted(q: Point, sample: &[(Point, usize)]) -> usize {
    let mut at_q = 0usize;
    let mut dirs: Vec<(Point, usize, f64)> = Vec::with_capacity(sample.len());
    for &(p, w) in sample {
        if w == 0 {
            continue;
        }
        let v = p.sub(q);
        if v.x == 0.0 && v.y == 0.0 {
            at_q += w;
        } else {
            let a = libm::atan2(v.y, v.x);
            dirs.push((v, w, if a < 0.0 { a + 2.0 * core::f64::consts::PI } else { a }));
        }
    }
    if dirs.is_empty() {
        return at_q;
    }
    dirs.sort_by(|a, b| a.2.total_cmp(&b.2));

    // Merge exactly collinear, same-ray directions.
    let mut groups: Vec<(Point, usize)> = Vec::with_capacity(dirs.len());
    for (v, w, _) in dirs {
        match groups.last_mut() {
            Some((g, gw)) if half(*g) == half(v) && cross(*g, v) == 0.0 => *gw += w,
            _ => groups.push((v, w)),
        }
    }
    let k = groups.len();
    let total: usize = groups.iter().map(|g| g.1).sum();

    // prefix[i] = weight of groups[0..i] over the doubled sequence.
    let mut prefix = Vec::with_capacity(2 * k + 1);
    prefix.push(0usize);
    for i in 0..2 * k {
        let last = prefix[i];
        prefix.push(last + groups[i % k].1);
    }
    let window = |from: usize, to: usize| prefix[to] - prefix[from];

    let mut best = usize::MAX;
    let mut end = 1usize;
    for i in 0..k {
        let d = groups[i].0;
        if end < i + 1 {
            end = i + 1;
        }
        // Groups strictly counter-clockwise within (α, α + π).
        while end < i + k && cross(d, groups[end % k].0) > 0.0 {
            end += 1;
        }
        let open = window(i + 1, end);
        let opposite = if end < i + k {
            let g = groups[end % k];
            if cross(d, g.0) == 0.0 && dot(d, g.0) < 0.0 {
                g.1
            } else {
                0
            }
        } else {
            0
        };
        let ccw_left = open + opposite;
        let cw_left = open + groups[i].1;
        let candidate = ccw_left
            .min(cw_left)
            .min(total - ccw_left)
            .min(total - cw_left);
        best = best.min(candidate);
    }
    at_q + best
}
