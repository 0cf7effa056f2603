//! Closed subsets of a window stored as cell occupancy plus signed distance.
//!
//! A [`Region`] keeps, for every cell, whether its center belongs to the set
//! and the signed distance of that center to the set boundary (negative
//! inside). The boundary itself is sampled by *interface points*: one point
//! on every grid edge joining an occupied and an empty cell center. When the
//! region comes from a level function the interface point is placed at the
//! linear zero crossing of the level values; otherwise it sits at the edge
//! midpoint. Signed distances are brute-force distances to those points.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grid::{GaussianSmoothed, ScalarField, Window};
use crate::{pt, Error, Point, Result};

/// Sentinel magnitude (in window diameters) used for regions without boundary.
const NO_BOUNDARY_SCALE: f64 = 2.0;

/// Grid-backed closed set.
#[derive(Clone, Debug)]
pub struct Region {
    window: Window,
    occ: Vec<bool>,
    sdist: Vec<f64>,
    interface: Vec<Point>,
    boundary_cells: Vec<usize>,
    edge_flag: bool,
}

impl PartialEq for Region {
    fn eq(&self, other: &Self) -> bool {
        self.window == other.window && self.occ == other.occ
    }
}

impl Region {
    /// Region `{x : f(x) ≤ 0}` sampled at cell centers.
    pub fn from_level(window: Window, f: impl Fn(Point) -> f64 + Sync) -> Self {
        let level: Vec<f64> = (0..window.len())
            .into_par_iter()
            .map(|k| f(window.center(k)))
            .collect();
        Self::from_level_values(window, level)
    }

    /// Region from per-cell level values (occupied where `level ≤ 0`).
    pub fn from_level_values(window: Window, level: Vec<f64>) -> Self {
        assert_eq!(level.len(), window.len(), "level values must cover the window");
        let occ: Vec<bool> = level.iter().map(|&v| v <= 0.0).collect();
        let interface = interface_points(&window, &occ, |a, b| {
            let (la, lb) = (level[a], level[b]);
            let denom = la - lb;
            if denom.abs() < f64::MIN_POSITIVE {
                0.5
            } else {
                (la / denom).clamp(0.0, 1.0)
            }
        });
        Self::assemble(window, occ, interface)
    }

    /// Region from raw occupancy; the boundary is placed halfway between
    /// occupied and empty cell centers.
    pub fn from_cells(window: Window, occ: Vec<bool>) -> Self {
        assert_eq!(occ.len(), window.len(), "occupancy must cover the window");
        let interface = interface_points(&window, &occ, |_, _| 0.5);
        Self::assemble(window, occ, interface)
    }

    pub fn empty(window: Window) -> Self {
        Self::from_cells(window, vec![false; window.len()])
    }

    pub fn full(window: Window) -> Self {
        Self::from_cells(window, vec![true; window.len()])
    }

    fn assemble(window: Window, occ: Vec<bool>, interface: Vec<Point>) -> Self {
        let sdist = if interface.is_empty() {
            let big = NO_BOUNDARY_SCALE * window.diameter();
            occ.iter().map(|&o| if o { -big } else { big }).collect()
        } else {
            nearest_distances(&window, &interface)
                .into_iter()
                .zip(&occ)
                .map(|(d, &o)| if o { -d } else { d })
                .collect()
        };
        let boundary_cells = (0..window.len())
            .filter(|&k| occ[k] && window.neighbors4(k).any(|n| !occ[n]))
            .collect();
        let edge_flag = (0..window.len()).any(|k| occ[k] && window.is_edge_cell(k));
        Region {
            window,
            occ,
            sdist,
            interface,
            boundary_cells,
            edge_flag,
        }
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn occupancy(&self) -> &[bool] {
        &self.occ
    }

    /// Signed distance samples at cell centers.
    pub fn sdist_values(&self) -> &[f64] {
        &self.sdist
    }

    #[inline]
    pub fn is_occupied(&self, idx: usize) -> bool {
        self.occ[idx]
    }

    pub fn count(&self) -> usize {
        self.occ.iter().filter(|&&o| o).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.occ.iter().any(|&o| o)
    }

    /// True if the occupancy touches the window border: statements about the
    /// set are then only valid inside the window.
    pub fn edge_flag(&self) -> bool {
        self.edge_flag
    }

    /// Sub-cell samples of the boundary.
    pub fn boundary_points(&self) -> &[Point] {
        &self.interface
    }

    pub fn has_boundary(&self) -> bool {
        !self.interface.is_empty()
    }

    /// Occupied cells with at least one empty 4-neighbour.
    pub fn boundary_cells(&self) -> &[usize] {
        &self.boundary_cells
    }

    pub fn cells(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.occ.len()).filter(move |&k| self.occ[k])
    }

    /// Membership of the cell containing `p`; false outside the window.
    pub fn contains(&self, p: Point) -> bool {
        self.window.cell_of(p).is_some_and(|k| self.occ[k])
    }

    /// Signed distance at `p` by bilinear interpolation of the cell samples.
    pub fn signed_distance(&self, p: Point) -> Result<f64> {
        self.window.check(p)?;
        Ok(self.window.interpolate(&self.sdist, p))
    }

    /// Signed distance without the window check (clamped outside).
    #[inline]
    pub fn signed_distance_unchecked(&self, p: Point) -> f64 {
        self.window.interpolate(&self.sdist, p)
    }

    pub fn sdist_gradient(&self, p: Point) -> Point {
        self.window.interpolate_gradient(&self.sdist, p)
    }

    /// Euclidean distance from `p` to the set (zero on occupied cells).
    pub fn distance(&self, p: Point) -> Result<f64> {
        self.window.check(p)?;
        if self.contains(p) {
            return Ok(0.0);
        }
        if self.is_empty() {
            return Err(Error::EmptyRegion);
        }
        Ok(self
            .interface
            .iter()
            .map(|q| (p - q).norm())
            .fold(f64::INFINITY, f64::min))
    }

    /// Nearest boundary points of the region to `x`.
    ///
    /// Candidates are the boundary samples within `1.5·h` of the minimal
    /// distance; candidates closer than `2h` to each other are merged and
    /// each group contributes its closest sample. Points of the region
    /// project onto themselves.
    pub fn project(&self, x: Point) -> Result<Vec<Point>> {
        if self.is_empty() {
            return Err(Error::EmptyRegion);
        }
        self.window.check(x)?;
        if self.contains(x) || self.interface.is_empty() {
            return Ok(vec![x]);
        }
        let h = self.window.h();
        let tau = 1.5 * h;
        let dists: Vec<f64> = self.interface.iter().map(|q| (x - q).norm()).collect();
        let dmin = dists.iter().copied().fold(f64::INFINITY, f64::min);
        let mut cand: Vec<usize> = (0..dists.len()).filter(|&k| dists[k] <= dmin + tau).collect();
        cand.sort_by(|&a, &b| dists[a].total_cmp(&dists[b]));
        Ok(cluster_representatives(&cand, &self.interface, 2.0 * h)
            .into_iter()
            .map(|k| self.interface[k])
            .collect())
    }

    /// Boundary cells whose centers are nearest to `x` (ties within `tol`).
    pub fn nearest_boundary_cells(&self, x: Point, tol: f64) -> Vec<usize> {
        let d: Vec<(usize, f64)> = self
            .boundary_cells
            .iter()
            .map(|&k| (k, (self.window.center(k) - x).norm()))
            .collect();
        let dmin = d.iter().map(|e| e.1).fold(f64::INFINITY, f64::min);
        d.into_iter()
            .filter(|e| e.1 <= dmin + tol)
            .map(|e| e.0)
            .collect()
    }

    /// Minkowski inflation `∪_{x∈R} (x + δ(x)𝔹)` with `δ` sampled per cell.
    pub fn inflate(&self, delta: &ScalarField) -> Result<Region> {
        if delta.window() != &self.window {
            return Err(Error::param("inflation field lives on a different window"));
        }
        if let Some(v) = delta.values().iter().find(|&&v| !(v > 0.0)) {
            return Err(Error::param(format!("inflation radius must be positive, got {v}")));
        }
        let w = self.window;
        let s = w.cell_size();
        let mut out = self.occ.clone();
        for c in self.cells() {
            let r = delta.at(c) * (1.0 + 1e-12);
            let (ci, cj) = w.ij(c);
            let ri = (r / s.x).floor() as isize;
            let rj = (r / s.y).floor() as isize;
            for dj in -rj..=rj {
                for di in -ri..=ri {
                    let Some(q) = w.offset(ci, cj, di, dj) else { continue };
                    if out[q] {
                        continue;
                    }
                    let d = pt(di as f64 * s.x, dj as f64 * s.y);
                    if d.norm() <= r {
                        out[q] = true;
                    }
                }
            }
        }
        Ok(Region::from_cells(w, out))
    }

    /// Inflation by a constant radius.
    pub fn inflate_by(&self, radius: f64) -> Result<Region> {
        self.inflate(&ScalarField::constant(self.window, radius))
    }

    /// Closed band `{x : |sdist(x)| ≤ width}` around the boundary.
    pub fn boundary_band(&self, width: f64) -> Result<Region> {
        let h = self.window.h();
        if width < 2.0 * h {
            return Err(Error::param(format!(
                "band width {width} is thinner than two cells ({})",
                2.0 * h
            )));
        }
        if !self.has_boundary() {
            return Err(Error::pre("region has no boundary inside the window"));
        }
        let level = self.sdist.iter().map(|d| d.abs() - width).collect();
        Ok(Region::from_level_values(self.window, level))
    }

    /// Per-cell radius `δ` with `inflate(self, δ) ⊆ outer`, equal to half the
    /// distance to the nearest cell outside `outer`, never below `h`.
    ///
    /// Requires every cell of `self` to lie in the 8-neighbourhood interior
    /// of `outer`; this keeps `δ < dist` even after the floor at `h`. The
    /// window border is not treated as a boundary of `outer`.
    pub fn margin_inside(&self, outer: &Region) -> Result<ScalarField> {
        if outer.window != self.window {
            return Err(Error::param("regions live on different windows"));
        }
        let w = self.window;
        let inner = |k: usize| outer.occ[k] && w.neighbors8(k).all(|n| outer.occ[n]);
        if let Some(c) = self.cells().find(|&c| !inner(c)) {
            let p = self.window.center(c);
            return Err(Error::pre(format!(
                "set is not inside the interior of the outer set (cell at ({:.4}, {:.4}))",
                p.x, p.y
            )));
        }
        let h = w.h();
        // The closest empty cell to an occupied one always has an occupied
        // 4-neighbour, so scanning those is exact.
        let targets: Vec<Point> = (0..w.len())
            .filter(|&k| !outer.occ[k] && w.neighbors4(k).any(|n| outer.occ[n]))
            .map(|k| w.center(k))
            .collect();
        let cap = w.diameter();
        let values = (0..w.len())
            .into_par_iter()
            .map(|k| {
                if !self.occ[k] {
                    return h;
                }
                let c = w.center(k);
                let d = targets
                    .iter()
                    .map(|t| (c - t).norm())
                    .fold(f64::INFINITY, f64::min)
                    .min(2.0 * cap);
                (0.5 * d).max(h)
            })
            .collect();
        ScalarField::new(w, values)
    }

    /// The zero sublevel set of the Gaussian-smoothed signed distance.
    /// Replaces the staircase boundary of a cell-built set by a sub-cell
    /// one; cells within about `σ` of the boundary may change membership.
    pub fn smoothed(&self, sigma: f64) -> Result<Region> {
        if !self.has_boundary() {
            return Ok(self.clone());
        }
        let raw = ScalarField::new(self.window, self.sdist.clone())?;
        let level = GaussianSmoothed::new(raw, sigma)?.sample();
        Ok(Region::from_level_values(self.window, level.values().to_vec()))
    }

    /// One-ring erosion with the 8-neighbourhood (grid stand-in for `int`).
    pub fn interior(&self) -> Region {
        let w = self.window;
        let occ = (0..w.len())
            .map(|k| self.occ[k] && !w.is_edge_cell(k) && w.neighbors8(k).all(|n| self.occ[n]))
            .collect();
        Region::from_cells(w, occ)
    }

    /// One-ring dilation with the 8-neighbourhood.
    pub fn dilate(&self, rings: usize) -> Region {
        let w = self.window;
        let mut occ = self.occ.clone();
        for _ in 0..rings {
            let prev = occ.clone();
            for k in 0..w.len() {
                if !prev[k] && w.neighbors8(k).any(|n| prev[n]) {
                    occ[k] = true;
                }
            }
        }
        Region::from_cells(w, occ)
    }

    /// Cells not in the region (the open complement at grid level).
    pub fn complement(&self) -> Region {
        Region::from_cells(self.window, self.occ.iter().map(|o| !o).collect())
    }

    pub fn union(&self, other: &Region) -> Result<Region> {
        self.combine(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &Region) -> Result<Region> {
        self.combine(other, |a, b| a && b)
    }

    pub fn difference(&self, other: &Region) -> Result<Region> {
        self.combine(other, |a, b| a && !b)
    }

    fn combine(&self, other: &Region, f: impl Fn(bool, bool) -> bool) -> Result<Region> {
        if self.window != other.window {
            return Err(Error::param("regions live on different windows"));
        }
        let occ = self.occ.iter().zip(&other.occ).map(|(&a, &b)| f(a, b)).collect();
        Ok(Region::from_cells(self.window, occ))
    }

    pub fn is_subset_of(&self, other: &Region) -> bool {
        self.window == other.window && self.occ.iter().zip(&other.occ).all(|(&a, &b)| !a || b)
    }

    /// Number of cells of `self` not in `other`.
    pub fn count_outside(&self, other: &Region) -> usize {
        self.occ.iter().zip(&other.occ).filter(|(&a, &b)| a && !b).count()
    }

    pub fn intersects(&self, other: &Region) -> bool {
        self.occ.iter().zip(&other.occ).any(|(&a, &b)| a && b)
    }
}

/// Interface points between occupied and empty 4-neighbours; `frac(a, b)`
/// gives the position along the segment from center `a` to center `b`.
fn interface_points(
    w: &Window,
    occ: &[bool],
    frac: impl Fn(usize, usize) -> f64,
) -> Vec<Point> {
    let mut pts = Vec::new();
    for j in 0..w.ny() {
        for i in 0..w.nx() {
            let a = w.index(i, j);
            for (di, dj) in [(1isize, 0isize), (0, 1)] {
                let Some(b) = w.offset(i, j, di, dj) else { continue };
                if occ[a] == occ[b] {
                    continue;
                }
                let t = frac(a, b);
                pts.push(w.center(a) + (w.center(b) - w.center(a)) * t);
            }
        }
    }
    pts
}

/// For every cell center, the distance to the nearest of `points`.
fn nearest_distances(w: &Window, points: &[Point]) -> Vec<f64> {
    // Points sorted by x let each query stop once the x-gap exceeds the best.
    let mut sorted: Vec<Point> = points.to_vec();
    sorted.sort_by(|a, b| a.x.total_cmp(&b.x));
    (0..w.len())
        .into_par_iter()
        .map(|k| {
            let c = w.center(k);
            let start = sorted.partition_point(|p| p.x < c.x);
            let mut best2 = f64::INFINITY;
            for p in sorted[start..].iter() {
                let dx = p.x - c.x;
                if dx * dx >= best2 {
                    break;
                }
                best2 = best2.min((p - c).norm_squared());
            }
            for p in sorted[..start].iter().rev() {
                let dx = c.x - p.x;
                if dx * dx >= best2 {
                    break;
                }
                best2 = best2.min((p - c).norm_squared());
            }
            best2.sqrt()
        })
        .collect()
}

/// Single-linkage grouping of `order` (sorted by preference); returns the
/// first member of every group.
fn cluster_representatives(order: &[usize], pts: &[Point], link: f64) -> Vec<usize> {
    let n = order.len();
    let mut group = vec![usize::MAX; n];
    let mut reps = Vec::new();
    for s in 0..n {
        if group[s] != usize::MAX {
            continue;
        }
        let g = reps.len();
        reps.push(order[s]);
        group[s] = g;
        let mut stack = vec![s];
        while let Some(a) = stack.pop() {
            for b in 0..n {
                if group[b] == usize::MAX && (pts[order[a]] - pts[order[b]]).norm() <= link {
                    group[b] = g;
                    stack.push(b);
                }
            }
        }
    }
    reps
}

/// Closed half-plane `{x : ⟨normal, x⟩ ≥ offset}` with unit inward normal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HalfSpaceRepr", into = "HalfSpaceRepr")]
pub struct HalfSpace {
    normal: Point,
    offset: f64,
}

#[derive(Serialize, Deserialize)]
struct HalfSpaceRepr {
    normal: [f64; 2],
    offset: f64,
}

impl TryFrom<HalfSpaceRepr> for HalfSpace {
    type Error = Error;
    fn try_from(r: HalfSpaceRepr) -> Result<Self> {
        HalfSpace::new(pt(r.normal[0], r.normal[1]), r.offset)
    }
}

impl From<HalfSpace> for HalfSpaceRepr {
    fn from(h: HalfSpace) -> Self {
        HalfSpaceRepr {
            normal: [h.normal.x, h.normal.y],
            offset: h.offset,
        }
    }
}

impl HalfSpace {
    /// `normal` is normalized; `offset` is scaled accordingly.
    pub fn new(normal: Point, offset: f64) -> Result<Self> {
        let n = normal.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::param("half-space normal must be a nonzero vector"));
        }
        Ok(HalfSpace {
            normal: normal / n,
            offset: offset / n,
        })
    }

    pub fn normal(&self) -> Point {
        self.normal
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// Signed distance, negative inside.
    pub fn signed_distance(&self, x: Point) -> f64 {
        self.offset - self.normal.dot(&x)
    }

    pub fn contains(&self, x: Point) -> bool {
        self.signed_distance(x) <= 0.0
    }

    /// Euclidean projection onto the half-plane.
    pub fn project(&self, x: Point) -> Point {
        let d = self.signed_distance(x);
        if d <= 0.0 {
            x
        } else {
            x + self.normal * d
        }
    }

    /// Tangent cone at a boundary point `y` (within `tol` of the line).
    pub fn tangent_cone(&self, y: Point, tol: f64) -> Result<TangentCone> {
        let d = self.signed_distance(y);
        if d.abs() > tol {
            return Err(Error::pre(format!(
                "({}, {}) is {d} away from the half-plane boundary",
                y.x, y.y
            )));
        }
        Ok(TangentCone { normal: self.normal })
    }

    pub fn to_region(&self, window: Window) -> Region {
        Region::from_level(window, |p| self.signed_distance(p))
    }
}

/// Tangent cone `{v : ⟨normal, v⟩ ≥ 0}` of a half-plane at a boundary point.
#[derive(Clone, Copy, Debug)]
pub struct TangentCone {
    normal: Point,
}

impl TangentCone {
    pub fn contains(&self, v: Point) -> bool {
        self.margin(v) >= 0.0
    }

    /// `⟨normal, v⟩`: nonnegative exactly for members of the cone.
    pub fn margin(&self, v: Point) -> f64 {
        self.normal.dot(&v)
    }
}

/// Shape primitives used to describe initial and unsafe sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Disk { center: [f64; 2], radius: f64 },
    Halfplane { normal: [f64; 2], offset: f64 },
    Box { lo: [f64; 2], hi: [f64; 2] },
    Union { parts: Vec<Shape> },
    Complement { of: std::boxed::Box<Shape> },
}

impl Shape {
    pub fn disk(center: Point, radius: f64) -> Self {
        Shape::Disk {
            center: [center.x, center.y],
            radius,
        }
    }

    /// Structural validation (positive radii, nonzero normals, ordered boxes).
    pub fn validate(&self) -> Result<()> {
        match self {
            Shape::Disk { radius, .. } if !(*radius > 0.0) => {
                Err(Error::Scenario(format!("disk radius must be positive, got {radius}")))
            }
            Shape::Halfplane { normal, .. } if normal[0] == 0.0 && normal[1] == 0.0 => {
                Err(Error::Scenario("half-plane normal must be nonzero".into()))
            }
            Shape::Box { lo, hi } if !(lo[0] < hi[0] && lo[1] < hi[1]) => {
                Err(Error::Scenario(format!("box lo {lo:?} must be below hi {hi:?}")))
            }
            Shape::Union { parts } if parts.is_empty() => {
                Err(Error::Scenario("union needs at least one part".into()))
            }
            Shape::Union { parts } => parts.iter().try_for_each(Shape::validate),
            Shape::Complement { of } => of.validate(),
            _ => Ok(()),
        }
    }

    /// Level function, nonpositive exactly on the (closed) shape.
    pub fn level(&self, p: Point) -> f64 {
        match self {
            Shape::Disk { center, radius } => (p - pt(center[0], center[1])).norm() - radius,
            Shape::Halfplane { normal, offset } => {
                let n = pt(normal[0], normal[1]);
                let len = n.norm();
                offset / len - n.dot(&p) / len
            }
            Shape::Box { lo, hi } => {
                let c = pt(0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1]));
                let half = pt(0.5 * (hi[0] - lo[0]), 0.5 * (hi[1] - lo[1]));
                let q = (p - c).abs() - half;
                let outside = pt(q.x.max(0.0), q.y.max(0.0)).norm();
                outside + q.x.max(q.y).min(0.0)
            }
            Shape::Union { parts } => parts
                .iter()
                .map(|s| s.level(p))
                .fold(f64::INFINITY, f64::min),
            Shape::Complement { of } => -of.level(p),
        }
    }

    pub fn to_region(&self, window: Window) -> Region {
        Region::from_level(window, |p| self.level(p))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn disk(window: Window, r: f64) -> Region {
        Shape::disk(pt(0.0, 0.0), r).to_region(window)
    }

    fn upper_half(window: Window) -> Region {
        HalfSpace::new(pt(0.0, 1.0), 0.0).unwrap().to_region(window)
    }

    #[test]
    fn signed_distance_of_unit_disk() {
        let w = Window::centered(3.0, 120).unwrap();
        let h = w.h();
        let r = disk(w, 1.0);
        assert_abs_diff_eq!(r.signed_distance(pt(2.0, 0.0)).unwrap(), 1.0, epsilon = h);
        assert_abs_diff_eq!(r.signed_distance(pt(0.0, 0.0)).unwrap(), -1.0, epsilon = h);
        assert!(matches!(
            r.signed_distance(pt(3.5, 0.0)),
            Err(Error::OutOfWindow { .. })
        ));
    }

    #[test]
    fn signed_distance_of_half_plane() {
        let w = Window::centered(4.0, 128).unwrap();
        let r = upper_half(w);
        assert_abs_diff_eq!(r.signed_distance(pt(3.0, -0.5)).unwrap(), 0.5, epsilon = w.h());
    }

    #[test]
    fn sign_matches_occupancy_at_centers() {
        let w = Window::centered(2.0, 64).unwrap();
        let r = Shape::Union {
            parts: vec![
                Shape::disk(pt(-0.7, 0.2), 0.5),
                Shape::Box { lo: [0.1, -1.0], hi: [1.2, 0.3] },
            ],
        }
        .to_region(w);
        for k in 0..w.len() {
            assert_eq!(r.sdist_values()[k] <= 0.0, r.is_occupied(k));
        }
    }

    #[test]
    fn projection_onto_half_plane() {
        let w = Window::centered(4.0, 128).unwrap();
        let r = upper_half(w);
        let p = r.project(pt(3.0, -0.5)).unwrap();
        assert_eq!(p.len(), 1);
        assert_abs_diff_eq!(p[0].x, 3.0, epsilon = w.h());
        assert_abs_diff_eq!(p[0].y, 0.0, epsilon = w.h());
        assert_eq!(r.project(pt(0.2, 0.3)).unwrap(), vec![pt(0.2, 0.3)]);
    }

    #[test]
    fn projection_from_annulus_gap_has_two_feet() {
        // Region = unit disk ∪ {|x| ≥ 2}; (1.5, 0) is equidistant from both.
        let w = Window::centered(3.0, 240).unwrap();
        let r = Shape::Union {
            parts: vec![
                Shape::disk(pt(0.0, 0.0), 1.0),
                Shape::Complement { of: Box::new(Shape::disk(pt(0.0, 0.0), 2.0)) },
            ],
        }
        .to_region(w);
        let x = pt(1.5, 0.0);
        let mut feet = r.project(x).unwrap();
        feet.sort_by(|a, b| a.x.total_cmp(&b.x));
        assert_eq!(feet.len(), 2);
        // Brute-force oracle over every boundary sample.
        let oracle = r
            .boundary_points()
            .iter()
            .map(|q| (x - q).norm())
            .fold(f64::INFINITY, f64::min);
        assert_abs_diff_eq!(oracle, 0.5, epsilon = w.h());
        assert_abs_diff_eq!(feet[0].x, 1.0, epsilon = w.h());
        assert_abs_diff_eq!(feet[1].x, 2.0, epsilon = w.h());
        for f in &feet {
            assert!((x - f).norm() <= oracle + 1.5 * w.h());
        }
    }

    #[test]
    fn projection_of_empty_region_fails() {
        let w = Window::centered(1.0, 8).unwrap();
        assert!(matches!(Region::empty(w).project(pt(0.0, 0.0)), Err(Error::EmptyRegion)));
    }

    #[test]
    fn inflating_disk_and_half_plane() {
        let w = Window::centered(3.0, 150).unwrap();
        let h = w.h();
        let d = disk(w, 1.0);
        let big = d.inflate_by(0.5).unwrap();
        assert!(d.is_subset_of(&big));
        for k in 0..w.len() {
            let r = w.center(k).norm();
            if r < 1.5 - h {
                assert!(big.is_occupied(k));
            }
            if r > 1.5 + h {
                assert!(!big.is_occupied(k));
            }
        }
        let slab = upper_half(w).inflate_by(0.25).unwrap();
        for k in 0..w.len() {
            let y = w.center(k).y;
            if y > -0.25 + h {
                assert!(slab.is_occupied(k));
            }
            if y < -0.25 - h {
                assert!(!slab.is_occupied(k));
            }
        }
    }

    #[test]
    fn sub_cell_inflation_grows_at_most_one_ring() {
        let w = Window::centered(2.0, 64).unwrap();
        let d = disk(w, 0.8);
        let grown = d.inflate_by(0.5 * w.h()).unwrap();
        assert!(d.is_subset_of(&grown));
        assert!(grown.is_subset_of(&d.dilate(1)));
    }

    #[test]
    fn inflation_rejects_nonpositive_radius() {
        let w = Window::centered(1.0, 8).unwrap();
        assert!(disk(w, 0.5).inflate_by(0.0).is_err());
    }

    #[test]
    fn bands_around_circle_and_line() {
        let w = Window::centered(2.0, 200).unwrap();
        let h = w.h();
        let band = disk(w, 1.0).boundary_band(0.2).unwrap();
        for k in 0..w.len() {
            let r = w.center(k).norm();
            if (r - 1.0).abs() < 0.2 - h {
                assert!(band.is_occupied(k));
            }
            if (r - 1.0).abs() > 0.2 + h {
                assert!(!band.is_occupied(k));
            }
        }
        let slab = upper_half(w).boundary_band(0.3).unwrap();
        for k in 0..w.len() {
            let y = w.center(k).y;
            if y.abs() < 0.3 - h {
                assert!(slab.is_occupied(k));
            }
            if y.abs() > 0.3 + h {
                assert!(!slab.is_occupied(k));
            }
        }
        assert!(disk(w, 1.0).boundary_band(1.5 * h).is_err());
        assert!(Region::full(w).boundary_band(0.3).is_err());
    }

    #[test]
    fn margin_inside_disk() {
        let w = Window::centered(3.0, 150).unwrap();
        let h = w.h();
        let k = disk(w, 1.0);
        let u = disk(w, 2.0);
        let delta = k.margin_inside(&u).unwrap();
        let center = w.cell_of(pt(0.0, 0.0)).unwrap();
        assert_abs_diff_eq!(delta.at(center), 1.0, epsilon = h);
        let rim = w.cell_of(pt(1.0 - 0.5 * h, 0.0)).unwrap();
        assert_abs_diff_eq!(delta.at(rim), 0.5, epsilon = h);
        assert!(k.inflate(&delta).unwrap().is_subset_of(&u));
    }

    #[test]
    fn margin_inside_thin_gap_floors_at_h() {
        let w = Window::centered(2.0, 64).unwrap();
        let h = w.h();
        let u = disk(w, 1.0);
        let k = u.interior();
        let delta = k.margin_inside(&u).unwrap();
        for &c in k.boundary_cells() {
            assert!(delta.at(c) >= h && delta.at(c) <= 1.5 * h, "{}", delta.at(c));
        }
        assert!(k.inflate(&delta).unwrap().is_subset_of(&u));
    }

    #[test]
    fn margin_inside_rejects_touching_sets() {
        let w = Window::centered(2.0, 64).unwrap();
        let u = disk(w, 1.0);
        assert!(u.margin_inside(&u).is_err());
    }

    #[test]
    fn tangent_cone_of_upper_half_plane() {
        let hs = HalfSpace::new(pt(0.0, 1.0), 0.0).unwrap();
        let cone = hs.tangent_cone(pt(3.0, 0.0), 1e-9).unwrap();
        assert!(cone.contains(pt(0.0, 1.0)));
        assert!(cone.contains(pt(-1.0, 0.0)));
        assert!(!cone.contains(pt(0.0, -0.1)));
        assert!(hs.tangent_cone(pt(3.0, 0.5), 0.1).is_err());
        assert_eq!(hs.project(pt(3.0, -0.5)), pt(3.0, 0.0));
    }
}
