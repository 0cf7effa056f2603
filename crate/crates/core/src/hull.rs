//! Planar convex hulls and the few polygon queries the crate needs.

use crate::Point;

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Counter-clockwise convex hull (Andrew's monotone chain). Collinear and
/// duplicate points are dropped; degenerate inputs return 1 or 2 points.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut p: Vec<Point> = points.to_vec();
    p.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    p.dedup_by(|a, b| (*a - *b).norm() <= 1e-15);
    if p.len() <= 2 {
        return p;
    }
    let mut lower: Vec<Point> = Vec::with_capacity(p.len());
    for &q in &p {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], q) <= 0.0 {
            lower.pop();
        }
        lower.push(q);
    }
    let mut upper: Vec<Point> = Vec::with_capacity(p.len());
    for &q in p.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], q) <= 0.0 {
            upper.pop();
        }
        upper.push(q);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Distance from `x` to the convex hull of `points`.
pub fn distance_to_hull(points: &[Point], x: Point) -> f64 {
    let hull = convex_hull(points);
    match hull.len() {
        0 => f64::INFINITY,
        1 => (x - hull[0]).norm(),
        2 => segment_distance(hull[0], hull[1], x),
        n => {
            let inside = (0..n).all(|i| cross(hull[i], hull[(i + 1) % n], x) >= -1e-12);
            if inside {
                0.0
            } else {
                (0..n)
                    .map(|i| segment_distance(hull[i], hull[(i + 1) % n], x))
                    .fold(f64::INFINITY, f64::min)
            }
        }
    }
}

fn segment_distance(a: Point, b: Point, x: Point) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (x - a).norm();
    }
    let t = ((x - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (x - (a + ab * t)).norm()
}

/// Largest value of `min(⟨e1, v⟩, ⟨e2, v⟩)` over the convex hull of `points`.
///
/// The objective is concave and piecewise linear, so its maximum is reached
/// at a hull vertex or where a hull edge crosses the kink `⟨e1 − e2, v⟩ = 0`.
pub fn max_min_pair(points: &[Point], e1: Point, e2: Point) -> f64 {
    let hull = convex_hull(points);
    let f = |v: Point| e1.dot(&v).min(e2.dot(&v));
    let mut best = hull.iter().map(|&v| f(v)).fold(f64::NEG_INFINITY, f64::max);
    let n = hull.len();
    if n >= 2 {
        let kink = e1 - e2;
        for i in 0..n {
            let (a, b) = (hull[i], hull[(i + 1) % n]);
            let (ga, gb) = (kink.dot(&a), kink.dot(&b));
            if (ga <= 0.0 && gb >= 0.0) || (ga >= 0.0 && gb <= 0.0) {
                let denom = ga - gb;
                let t = if denom.abs() < 1e-300 { 0.0 } else { ga / denom };
                best = best.max(f(a + (b - a) * t));
            }
        }
    }
    best
}
