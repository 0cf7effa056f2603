//! Grid reach sets: finite-horizon tubes and final slices from a point, and
//! the infinite-horizon reachable set of an initial region.
//!
//! The infinite-horizon set is a cell fixed point. A cell passes its mark to
//! a neighbour whenever some velocity of `F(c) + ε(c)·P_m` (evaluated at the
//! cell center `c`) moves the cell square towards that neighbour. Diagonal
//! neighbours need a velocity with both components pointing their way; the
//! test is exact on the convex hull of the velocity polygon.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grid::{ScalarField, Window};
use crate::hull::max_min_pair;
use crate::inclusion::{ball_directions, Direction, Perturbation, PerturbedInclusion, Selection, SelectionStrategy};
use crate::regions::Region;
use crate::{pt, Error, Point, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReachConfig {
    pub dt: f64,
    pub max_steps: usize,
    pub directions_m: usize,
    pub stop_when_stable: bool,
}

impl ReachConfig {
    /// Defaults: `dt = h/(2 v_max)`, 16 ball directions and
    /// `max_steps = 10·diam/(v_min·dt)` with `v_min` the margin lower bound.
    pub fn for_inclusion(inc: &PerturbedInclusion<'_>) -> Self {
        let dt = inc.default_dt();
        let w = inc.window;
        let v_min = inc.margin.lower_bound();
        let floor = 2 * (w.nx() + w.ny());
        let max_steps = if v_min > 0.0 {
            ((10.0 * w.diameter() / (v_min * dt)).ceil() as usize).clamp(floor, 10_000_000)
        } else {
            w.len().max(floor)
        };
        ReachConfig {
            dt,
            max_steps,
            directions_m: 16,
            stop_when_stable: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::param(format!("reach dt must be positive, got {}", self.dt)));
        }
        if self.max_steps < 1 {
            return Err(Error::param("reach max_steps must be at least 1"));
        }
        if self.directions_m < 8 {
            return Err(Error::param(format!(
                "need at least 8 ball directions, got {}",
                self.directions_m
            )));
        }
        Ok(())
    }
}

/// Fixed point of the cell propagation.
#[derive(Clone, Debug)]
pub struct ReachResult {
    pub region: Region,
    /// One more propagation sweep would add no cell.
    pub converged: bool,
    pub steps_used: usize,
    /// The set reaches the window border (unbounded in the plane).
    pub edge_truncated: bool,
}

/// Sidecar metadata written next to a reach region.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReachSummary {
    pub converged: bool,
    pub steps_used: usize,
    pub edge_truncated: bool,
}

impl ReachResult {
    pub fn summary(&self) -> ReachSummary {
        ReachSummary {
            converged: self.converged,
            steps_used: self.steps_used,
            edge_truncated: self.edge_truncated,
        }
    }
}

const NEIGHBOR_OFFSETS: [(isize, isize); 8] = [
    (1, 0),
    (-1, 0),
    (0, 1),
    (0, -1),
    (1, 1),
    (1, -1),
    (-1, 1),
    (-1, -1),
];

/// Bitmask over [`NEIGHBOR_OFFSETS`] of the neighbours a cell's velocities
/// push towards.
fn move_mask(velocities: &[Point]) -> u8 {
    let scale = velocities.iter().map(|v| v.amax()).fold(0.0, f64::max);
    let tol = 1e-12 * (1.0 + scale);
    let mut mask = 0u8;
    for (bit, &(dx, dy)) in NEIGHBOR_OFFSETS.iter().enumerate() {
        let e1 = pt(dx as f64, 0.0);
        let e2 = pt(0.0, dy as f64);
        let reach = match (dx, dy) {
            (_, 0) => velocities.iter().map(|v| e1.dot(v)).fold(f64::NEG_INFINITY, f64::max),
            (0, _) => velocities.iter().map(|v| e2.dot(v)).fold(f64::NEG_INFINITY, f64::max),
            _ => max_min_pair(velocities, e1, e2),
        };
        if reach > tol {
            mask |= 1 << bit;
        }
    }
    mask
}

fn cell_moves(inc: &PerturbedInclusion<'_>, cfg: &ReachConfig, cell: usize) -> Result<u8> {
    let c = inc.window.center(cell);
    Ok(move_mask(&inc.minkowski_vertices(c, cfg.directions_m)?))
}

fn spread(w: &Window, marked: &mut [bool], sources: &[usize], masks: &[u8]) -> Vec<usize> {
    let mut fresh = Vec::new();
    for (&c, &mask) in sources.iter().zip(masks) {
        let (i, j) = w.ij(c);
        for (bit, &(dx, dy)) in NEIGHBOR_OFFSETS.iter().enumerate() {
            if mask & (1 << bit) == 0 {
                continue;
            }
            if let Some(n) = w.offset(i, j, dx, dy) {
                if !marked[n] {
                    marked[n] = true;
                    fresh.push(n);
                }
            }
        }
    }
    fresh
}

/// Infinite-horizon reachable set of `x0` under `inc` (forward in time).
pub fn reach_set_infinite(
    inc: &PerturbedInclusion<'_>,
    x0: &Region,
    cfg: &ReachConfig,
) -> Result<ReachResult> {
    cfg.validate()?;
    if x0.window() != &inc.window {
        return Err(Error::param("initial region lives on a different window"));
    }
    if x0.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let w = inc.window;
    let mut marked = x0.occupancy().to_vec();
    let mut frontier: Vec<usize> = x0.cells().collect();
    let mut steps = 0;
    let mut converged = false;
    while steps < cfg.max_steps {
        let sources: Vec<usize> = if cfg.stop_when_stable {
            std::mem::take(&mut frontier)
        } else {
            (0..w.len()).filter(|&k| marked[k]).collect()
        };
        let masks = sources
            .par_iter()
            .map(|&c| cell_moves(inc, cfg, c))
            .collect::<Result<Vec<_>>>()?;
        let fresh = spread(&w, &mut marked, &sources, &masks);
        steps += 1;
        if fresh.is_empty() {
            converged = true;
            if cfg.stop_when_stable {
                break;
            }
        }
        frontier = fresh;
    }
    let region = Region::from_cells(w, marked);
    let edge_truncated = region.edge_flag();
    Ok(ReachResult {
        region,
        converged,
        steps_used: steps,
        edge_truncated,
    })
}

/// One propagation sweep from every cell of `region`.
pub fn propagate_once(
    inc: &PerturbedInclusion<'_>,
    region: &Region,
    cfg: &ReachConfig,
) -> Result<Region> {
    cfg.validate()?;
    let w = inc.window;
    let sources: Vec<usize> = region.cells().collect();
    let masks = sources
        .par_iter()
        .map(|&c| cell_moves(inc, cfg, c))
        .collect::<Result<Vec<_>>>()?;
    let mut marked = region.occupancy().to_vec();
    spread(&w, &mut marked, &sources, &masks);
    Ok(Region::from_cells(w, marked))
}

/// Reachable set of the `rho_o`-inflation of `k` under `inc`.
pub fn reach_inflate(
    inc: &PerturbedInclusion<'_>,
    k: &Region,
    rho_o: &ScalarField,
    cfg: &ReachConfig,
) -> Result<ReachResult> {
    let seed = k.inflate(rho_o)?;
    reach_set_infinite(inc, &seed, cfg)
}

fn step_count(t: f64, dt: f64) -> usize {
    ((t.abs() / dt) - 1e-9).ceil().max(0.0) as usize
}

/// Strategies whose endpoints sample the extremal part of the final slice:
/// every vertex with a constant full-size perturbation along each of the `m`
/// ball directions.
fn extremal_strategies(inc: &PerturbedInclusion<'_>, x: Point, m: usize) -> Vec<SelectionStrategy> {
    let nv = inc.field.vertices(x).len();
    let dirs = ball_directions(m);
    (0..nv)
        .flat_map(|i| {
            dirs.iter()
                .map(move |&d| SelectionStrategy::new(Selection::FixedVertex(i), Perturbation::Fixed(d)))
        })
        .collect()
}

fn extremal_trajectories(
    inc: &PerturbedInclusion<'_>,
    x: Point,
    t: f64,
    cfg: &ReachConfig,
) -> Result<Vec<crate::inclusion::Trajectory>> {
    let n = step_count(t, cfg.dt);
    let direction = if t < 0.0 { Direction::Backward } else { Direction::Forward };
    let horizon = n as f64 * cfg.dt;
    extremal_strategies(inc, x, cfg.directions_m)
        .par_iter()
        .map(|s| inc.integrate(x, s, cfg.dt, horizon, direction))
        .collect()
}

/// Grid approximation of the reach tube `R(t, x)` (all states visited up to
/// time `|t|`, backward when `t < 0`).
///
/// Sample states are advected with every velocity of `F + ε·P_m` at each
/// step and thinned to the extreme samples of each half-cell bin; states
/// of the extremal trajectories used by [`reach_final_slice`] are added as
/// well. Every sample is an Euler state of some solution, so the tube fills
/// in from the inside as `dt` and the bins shrink.
pub fn reach_tube(inc: &PerturbedInclusion<'_>, x: Point, t: f64, cfg: &ReachConfig) -> Result<Region> {
    cfg.validate()?;
    let w = inc.window;
    w.check(x)?;
    let n = step_count(t, cfg.dt);
    let direction = if t < 0.0 { Direction::Backward } else { Direction::Forward };
    let dirs = ball_directions(cfg.directions_m);
    let bin = 0.5 * w.cell_size();
    let key = |p: Point| ((p.x / bin.x).floor() as i64, (p.y / bin.y).floor() as i64);

    let probe = ball_directions(8);
    let mut occ = vec![false; w.len()];
    let mark = |p: Point, occ: &mut Vec<bool>| {
        if let Some(k) = w.cell_of(p) {
            occ[k] = true;
        }
    };
    mark(x, &mut occ);
    let mut layer = vec![x];
    for _ in 0..n {
        let succ: Vec<Vec<Point>> = layer
            .par_iter()
            .map(|&p| {
                let verts = inc.eval_f(p, direction);
                let eps = inc.margin.eval(p);
                let mut out = Vec::with_capacity(verts.len() * (dirs.len() + 1));
                for v in &verts {
                    out.push(p + v * cfg.dt);
                    if eps > 0.0 {
                        out.extend(dirs.iter().map(|d| p + (v + d * eps) * cfg.dt));
                    }
                }
                out
            })
            .collect();
        // Per bin keep the sample extreme along each of eight directions so
        // the layer hull keeps growing at the full speed.
        let mut bins: BTreeMap<(i64, i64), [(f64, Point); 8]> = BTreeMap::new();
        for q in succ.into_iter().flatten() {
            if !w.contains(q) {
                continue;
            }
            let slot = bins.entry(key(q)).or_insert([(f64::NEG_INFINITY, q); 8]);
            for (s, u) in slot.iter_mut().zip(&probe) {
                let score = u.dot(&q);
                if score > s.0 {
                    *s = (score, q);
                }
            }
        }
        let mut next = Vec::new();
        for slot in bins.values() {
            let start = next.len();
            for &(_, q) in slot {
                if !next[start..].contains(&q) {
                    next.push(q);
                }
            }
        }
        for &q in &next {
            mark(q, &mut occ);
        }
        layer = next;
        if layer.is_empty() {
            break;
        }
    }
    for tr in extremal_trajectories(inc, x, t, cfg)? {
        for &s in &tr.states {
            mark(s, &mut occ);
        }
    }
    Ok(Region::from_cells(w, occ))
}

/// Grid approximation of the final slice `R^b(t, x)`: cells holding the
/// time-`|t|` states of the extremal trajectories. `t = 0` gives `{x}`.
pub fn reach_final_slice(
    inc: &PerturbedInclusion<'_>,
    x: Point,
    t: f64,
    cfg: &ReachConfig,
) -> Result<Region> {
    cfg.validate()?;
    let w = inc.window;
    w.check(x)?;
    let mut occ = vec![false; w.len()];
    if step_count(t, cfg.dt) == 0 {
        occ[w.cell_of(x).expect("checked above")] = true;
        return Ok(Region::from_cells(w, occ));
    }
    for tr in extremal_trajectories(inc, x, t, cfg)? {
        if tr.truncated {
            continue;
        }
        if let Some(k) = w.cell_of(tr.endpoint()) {
            occ[k] = true;
        }
    }
    Ok(Region::from_cells(w, occ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inclusion::{FieldSpec, Margin};
    use crate::regions::Shape;

    fn cfg(w: &Window, dt: f64) -> ReachConfig {
        ReachConfig {
            dt,
            max_steps: 4 * w.len(),
            directions_m: 16,
            stop_when_stable: true,
        }
    }

    #[test]
    fn constant_flow_tube_is_a_segment() {
        let w = Window::centered(2.0, 80).unwrap();
        let h = w.h();
        let f = FieldSpec::constant(&[pt(1.0, 0.0)]);
        let m = Margin::Constant(0.0);
        let inc = PerturbedInclusion::new(&f, &m, w);
        let tube = reach_tube(&inc, pt(0.0, 0.0), 1.0, &cfg(&w, 0.01)).unwrap();
        for k in tube.cells() {
            let c = w.center(k);
            assert!(c.y.abs() <= h && c.x >= -h && c.x <= 1.0 + h, "stray cell {c:?}");
        }
        assert!(tube.contains(pt(0.5, 0.0)) && tube.contains(pt(1.0 - 0.5 * h, 0.0)));
        let slice = reach_final_slice(&inc, pt(0.0, 0.0), 1.0, &cfg(&w, 0.01)).unwrap();
        assert_eq!(slice.count(), 1);
        assert!(slice.contains(pt(1.0, 0.0)));
    }

    #[test]
    fn ball_flood_tube_is_a_disk_and_slice_a_circle() {
        let w = Window::centered(1.0, 80).unwrap();
        let h = w.h();
        let f = FieldSpec::constant(&[pt(0.0, 0.0)]);
        let m = Margin::Constant(0.5);
        let inc = PerturbedInclusion::new(&f, &m, w);
        let c = cfg(&w, 0.025);
        let tube = reach_tube(&inc, pt(0.0, 0.0), 1.0, &c).unwrap();
        for k in 0..w.len() {
            let r = w.center(k).norm();
            if r < 0.5 - 2.0 * h {
                assert!(tube.is_occupied(k), "hole at r = {r}");
            }
            if r > 0.5 + h {
                assert!(!tube.is_occupied(k), "overshoot at r = {r}");
            }
        }
        let slice = reach_final_slice(&inc, pt(0.0, 0.0), 1.0, &c).unwrap();
        assert!(!slice.contains(pt(0.0, 0.0)));
        assert!(slice.cells().any(|k| (w.center(k) - pt(0.5, 0.0)).norm() <= h));
        for k in slice.cells() {
            assert!((w.center(k).norm() - 0.5).abs() <= h);
        }
        assert!(slice.is_subset_of(&tube));
    }

    #[test]
    fn contraction_tube_follows_the_flow() {
        let w = Window::centered(1.5, 96).unwrap();
        let h = w.h();
        let f = FieldSpec::contraction();
        let m = Margin::Constant(0.0);
        let inc = PerturbedInclusion::new(&f, &m, w);
        let dt = 1e-3;
        let tube = reach_tube(&inc, pt(1.0, 0.0), 1.0, &cfg(&w, dt)).unwrap();
        let lo = (-1f64).exp();
        for k in tube.cells() {
            let c = w.center(k);
            assert!(c.y.abs() <= h && c.x >= lo - h - dt && c.x <= 1.0 + h);
        }
        assert!(tube.contains(pt(lo + 2.0 * dt, 0.0)));
    }

    #[test]
    fn zero_time_slice_is_the_start() {
        let w = Window::centered(1.0, 16).unwrap();
        let f = FieldSpec::Example1;
        let m = Margin::Constant(0.5);
        let inc = PerturbedInclusion::new(&f, &m, w);
        let s = reach_final_slice(&inc, pt(0.1, 0.2), 0.0, &cfg(&w, 0.01)).unwrap();
        assert_eq!(s.count(), 1);
        assert!(s.contains(pt(0.1, 0.2)));
    }

    #[test]
    fn uniform_drift_floods_to_the_right_edge() {
        let w = Window::new(pt(-0.5, -1.0), pt(2.0, 1.0), [50, 40]).unwrap();
        let f = FieldSpec::constant(&[pt(1.0, 0.0)]);
        let m = Margin::Constant(0.25);
        let inc = PerturbedInclusion::new(&f, &m, w);
        let x0 = Shape::Box { lo: [0.0, -0.05], hi: [0.1, 0.05] }.to_region(w);
        let res = reach_set_infinite(&inc, &x0, &ReachConfig::for_inclusion(&inc)).unwrap();
        assert!(res.converged && res.edge_truncated);
        let h = w.h();
        for k in res.region.cells() {
            assert!(w.center(k).x >= -h, "moved against the drift");
        }
        let mut x = 0.05;
        while x < 2.0 {
            assert!(res.region.contains(pt(x, 0.0)));
            x += h;
        }
    }

    #[test]
    fn contraction_keeps_disk_within_one_ring() {
        let w = Window::centered(2.0, 128).unwrap();
        let f = FieldSpec::contraction();
        let m = Margin::Constant(0.1);
        let inc = PerturbedInclusion::new(&f, &m, w);
        let x0 = Shape::disk(pt(0.0, 0.0), 0.5).to_region(w);
        let res = reach_set_infinite(&inc, &x0, &ReachConfig::for_inclusion(&inc)).unwrap();
        assert!(res.converged && !res.edge_truncated);
        assert!(x0.is_subset_of(&res.region));
        assert!(res.region.is_subset_of(&x0.dilate(1)));
        let again = propagate_once(&inc, &res.region, &ReachConfig::for_inclusion(&inc)).unwrap();
        assert_eq!(again.count(), res.region.count());
    }

    #[test]
    fn empty_initial_set_is_rejected() {
        let w = Window::centered(1.0, 16).unwrap();
        let f = FieldSpec::contraction();
        let m = Margin::Constant(0.1);
        let inc = PerturbedInclusion::new(&f, &m, w);
        assert!(matches!(
            reach_set_infinite(&inc, &Region::empty(w), &ReachConfig::for_inclusion(&inc)),
            Err(Error::EmptyRegion)
        ));
    }

    #[test]
    fn reach_inflation_contains_its_seed() {
        let w = Window::centered(2.0, 128).unwrap();
        let h = w.h();
        let f = FieldSpec::contraction();
        let m = Margin::Constant(1e-3);
        let inc = PerturbedInclusion::new(&f, &m, w);
        let k = Shape::disk(pt(0.0, 0.0), 0.5).to_region(w);
        let rho = ScalarField::constant(w, h);
        let res = reach_inflate(&inc, &k, &rho, &ReachConfig::for_inclusion(&inc)).unwrap();
        let seed = k.inflate(&rho).unwrap();
        assert!(seed.is_subset_of(&res.region));
        for c in res.region.cells() {
            assert!(w.center(c).norm() <= 0.5 + 2.0 * h);
        }
    }
}
