//! Verdicts on a barrier construction: sign conditions, decrease along
//! solutions, the infinitesimal condition on the zero level set, tangent-cone
//! invariance of a half-plane, separation of the reachable set from the
//! unsafe set, and Monte-Carlo safety.
//!
//! Solution-based checks sample finitely many solutions; a pass means no
//! counterexample was found.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::barrier::{decrease_profile, BarrierFunction};
use crate::grid::Window;
use crate::inclusion::{Direction, Margin, PerturbedInclusion, SelectionStrategy, SetValuedField, Trajectory};
use crate::regions::{HalfSpace, Region};
use crate::smoothing::SmoothBarrier;
use crate::{pt, Error, Point, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Untested,
    Unresolved,
    Fail,
}

/// Outcome of one check, with the tolerance it was judged against.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub status: Status,
    /// Headline number of the check (worst margin, slack, distance).
    pub value: Option<f64>,
    pub tolerance: f64,
    pub detail: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metrics: BTreeMap<String, f64>,
}

impl Verdict {
    fn new(name: &str, status: Status, value: Option<f64>, tolerance: f64, detail: impl Into<String>) -> Self {
        Verdict {
            name: name.to_string(),
            status,
            value,
            tolerance,
            detail: detail.into(),
            metrics: BTreeMap::new(),
        }
    }

    /// Records a finite metric; non-finite ones are dropped.
    fn metric(mut self, key: &str, v: f64) -> Self {
        if v.is_finite() {
            self.metrics.insert(key.to_string(), v);
        }
        self
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }
}

fn pass_if(ok: bool) -> Status {
    if ok {
        Status::Pass
    } else {
        Status::Fail
    }
}

/// `B ≤ 0` on the initial cells and `B > 0` on the unsafe cells.
///
/// `value` is the worst sign margin `min(min_{X_u} B, −max_{X_o} B)`.
pub fn check_candidate(values: &[f64], window: &Window, x0: &Region, xu: &Region) -> Result<Verdict> {
    if values.len() != window.len() || x0.window() != window || xu.window() != window {
        return Err(Error::param("candidate inputs live on different windows"));
    }
    if x0.is_empty() || xu.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let max_init = x0.cells().map(|c| values[c]).fold(f64::NEG_INFINITY, f64::max);
    let min_unsafe = xu.cells().map(|c| values[c]).fold(f64::INFINITY, f64::min);
    let ok = max_init <= 0.0 && min_unsafe > 0.0;
    Ok(Verdict::new(
        "candidate",
        pass_if(ok),
        Some(min_unsafe.min(-max_init)),
        0.0,
        format!("max B on initial set {max_init:.6e}, min B on unsafe set {min_unsafe:.6e}"),
    )
    .metric("max_on_initial", max_init)
    .metric("min_on_unsafe", min_unsafe))
}

/// Sub-cell samples of a level set `{g = 0}` with unit normals `∇g/|∇g|`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BoundarySampleSet {
    pub points: Vec<Point>,
    pub normals: Vec<Point>,
}

impl BoundarySampleSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Samples of `{g = 0}` seeded at sign changes of the cell samples
    /// `values` and refined by Newton steps on `g` (value and gradient).
    /// Samples whose distance estimate `|g|/|∇g|` stays above `h/4` are
    /// dropped.
    pub fn from_level(window: &Window, values: &[f64], g: impl Fn(Point) -> (f64, Point) + Sync) -> Self {
        let w = *window;
        let tol = 0.25 * w.h();
        let mut seeds = Vec::new();
        for j in 0..w.ny() {
            for i in 0..w.nx() {
                let a = w.index(i, j);
                for (di, dj) in [(1isize, 0isize), (0, 1)] {
                    if let Some(b) = w.offset(i, j, di, dj) {
                        let (va, vb) = (values[a], values[b]);
                        if (va <= 0.0) != (vb <= 0.0) {
                            let t = (va / (va - vb)).clamp(0.0, 1.0);
                            seeds.push(w.center(a) + (w.center(b) - w.center(a)) * t);
                        }
                    }
                }
            }
        }
        let refined: Vec<Option<(Point, Point)>> = seeds
            .par_iter()
            .map(|&p0| {
                let mut p = p0;
                for _ in 0..8 {
                    let (v, grad) = g(p);
                    let n2 = grad.norm_squared();
                    if n2 == 0.0 || !v.is_finite() {
                        return None;
                    }
                    let step = grad * (v / n2);
                    if step.norm() > w.h() {
                        return None;
                    }
                    p -= step;
                    if step.norm() <= 1e-12 * w.h() {
                        break;
                    }
                }
                let (v, grad) = g(p);
                let n = grad.norm();
                (n > 0.0 && w.contains(p) && v.abs() / n <= tol).then(|| (p, grad / n))
            })
            .collect();
        let (points, normals) = refined.into_iter().flatten().unzip();
        BoundarySampleSet { points, normals }
    }

    /// Samples of `∂K` from the signed distance of a region.
    pub fn from_region(k: &Region) -> Self {
        Self::from_level(k.window(), k.sdist_values(), |p| {
            (k.signed_distance_unchecked(p), k.sdist_gradient(p))
        })
    }

    /// Samples of `∂{B ≤ 0}` for a smoothed barrier.
    pub fn from_smooth(b: &SmoothBarrier) -> Self {
        Self::from_level(b.window(), b.values(), |p| {
            let s = b.sample(p);
            (s.value, s.gradient)
        })
    }

    /// Samples lying in `region`.
    pub fn restricted_to(&self, region: &Region) -> Self {
        let (points, normals) = self
            .points
            .iter()
            .zip(&self.normals)
            .filter(|(p, _)| region.contains(**p))
            .map(|(&p, &n)| (p, n))
            .unzip();
        BoundarySampleSet { points, normals }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum C3Mode {
    /// `⟨∇B, η⟩ < 0` for every `η ∈ F(x)`.
    StrictNegative,
    /// `⟨∇B, η⟩ ≤ −1 + tol` for every `η ∈ F(x)`.
    RateOne,
}

/// Largest `⟨g, η⟩` over `η ∈ F(x) + ε𝔹`: the vertex maximum plus `ε|g|`.
pub fn max_directional(field: &dyn SetValuedField, x: Point, g: Point, eps: f64) -> f64 {
    field
        .vertices(x)
        .iter()
        .map(|v| g.dot(v))
        .fold(f64::NEG_INFINITY, f64::max)
        + eps * g.norm()
}

/// Infinitesimal condition on boundary samples. With `margin` the velocity
/// set is `F + ε𝔹`.
pub fn check_c3(
    b: &SmoothBarrier,
    field: &dyn SetValuedField,
    samples: &BoundarySampleSet,
    mode: C3Mode,
    tol: f64,
    margin: Option<&Margin>,
) -> Result<Verdict> {
    if samples.is_empty() {
        return Err(Error::pre("no boundary samples for the infinitesimal check"));
    }
    let worst = samples
        .points
        .par_iter()
        .map(|&p| {
            let eps = margin.map_or(0.0, |m| m.eval(p));
            max_directional(field, p, b.gradient(p), eps)
        })
        .reduce(|| f64::NEG_INFINITY, f64::max);
    let (ok, bound, tolerance) = match mode {
        C3Mode::StrictNegative => (worst < 0.0, 0.0, 0.0),
        C3Mode::RateOne => (worst <= -1.0 + tol, -1.0, tol),
    };
    Ok(Verdict::new(
        "c3",
        pass_if(ok),
        Some(worst),
        tolerance,
        format!(
            "worst max over F of <grad B, eta> = {worst:.6} at {} samples (bound {bound}, mode {mode:?})",
            samples.len()
        ),
    )
    .metric("samples", samples.len() as f64))
}

/// Bundle settings for the decrease check.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecreaseCheck {
    pub n_start: usize,
    pub n_random: usize,
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    pub tol: f64,
}

/// Rate-one decrease of `b` along solutions of `inc` started at `n_start`
/// cells of `u1` and cut when they leave it. Starts on cells in `clip`
/// make the verdict unresolved.
pub fn check_c2(
    b: &dyn BarrierFunction,
    inc: &PerturbedInclusion<'_>,
    u1: &Region,
    clip: Option<&[bool]>,
    cfg: &DecreaseCheck,
) -> Result<Verdict> {
    if cfg.n_start == 0 {
        return Ok(Verdict::new("c2", Status::Untested, None, cfg.tol, "no start points requested"));
    }
    let cells: Vec<usize> = u1.cells().collect();
    if cells.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let starts: Vec<usize> = (0..cfg.n_start).map(|_| cells[rng.random_range(0..cells.len())]).collect();
    let w = *u1.window();
    let results = starts
        .par_iter()
        .enumerate()
        .map(|(i, &c)| {
            let bundle = inc.bundle_until(
                w.center(c),
                cfg.n_random,
                cfg.dt,
                cfg.horizon,
                Direction::Forward,
                cfg.seed.wrapping_add(i as u64 + 1),
                |p| !u1.contains(p),
            )?;
            let touched_clip = clip.is_some_and(|flags| {
                bundle.trajectories.iter().any(|t| {
                    t.states
                        .iter()
                        .take_while(|p| u1.contains(**p))
                        .any(|p| w.cell_of(*p).is_some_and(|k| flags[k]))
                })
            });
            Ok((decrease_profile(b, &bundle, u1).worst_slack, touched_clip))
        })
        .collect::<Result<Vec<_>>>()?;
    // Bundles through horizon-clipped cells see a truncated barrier: their
    // slack can make the verdict unresolved but never failed.
    let worst = results.iter().filter_map(|r| r.0).fold(f64::NEG_INFINITY, f64::max);
    let worst_resolved = results.iter().filter(|r| !r.1).filter_map(|r| r.0).fold(f64::NEG_INFINITY, f64::max);
    let clipped = results.iter().filter(|r| r.1).count();
    let status = if !worst.is_finite() {
        Status::Untested
    } else if worst_resolved > cfg.tol {
        Status::Fail
    } else if worst > cfg.tol || clipped > 0 {
        Status::Unresolved
    } else {
        Status::Pass
    };
    Ok(Verdict::new(
        "c2",
        status,
        worst.is_finite().then_some(worst),
        cfg.tol,
        format!(
            "worst slack {worst:.6} over {} start points; {clipped} bundles touched horizon-clipped cells",
            cfg.n_start
        ),
    )
    .metric("clipped_bundles", clipped as f64)
    .metric("worst_resolved_slack", worst_resolved))
}

/// Tangent-cone test of forward invariance of the half-plane `hs` under
/// `F + ε𝔹`, sampled at `n_samples` window points outside `hs`.
pub fn check_invariance_tangent(
    hs: &HalfSpace,
    field: &dyn SetValuedField,
    margin: &Margin,
    window: &Window,
    n_samples: usize,
    m_directions: usize,
    seed: u64,
) -> Result<Verdict> {
    let points = exterior_samples(hs, window, n_samples, seed)?;
    let inc = PerturbedInclusion::new(field, margin, *window);
    let mut worst = f64::INFINITY;
    for &x in &points {
        let y = hs.project(x);
        let cone = hs.tangent_cone(y, 1e-9 * (1.0 + y.norm()))?;
        for v in inc.minkowski_vertices(x, m_directions)? {
            worst = worst.min(cone.margin(v));
        }
    }
    Ok(Verdict::new(
        "invariance",
        pass_if(worst >= 0.0),
        Some(worst),
        0.0,
        format!("min <normal, v> over F + eps*B at {} exterior points", points.len()),
    ))
}

/// Uniform points of the window strictly outside the half-plane.
fn exterior_samples(hs: &HalfSpace, window: &Window, n: usize, seed: u64) -> Result<Vec<Point>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (window.lo(), window.hi());
    let mut out = Vec::with_capacity(n);
    let mut tries = 0usize;
    while out.len() < n {
        tries += 1;
        if tries > 1000 * n.max(1) {
            return Err(Error::pre("half-plane leaves no room in the window"));
        }
        let x = pt(rng.random_range(lo.x..hi.x), rng.random_range(lo.y..hi.y));
        if !hs.contains(x) {
            out.push(x);
        }
    }
    Ok(out)
}

/// Distance between the reachable set and the unsafe set, judged against
/// `2h`: overlap fails, a gap of at most `2h` is unresolved.
pub fn check_separation(k: &Region, xu: &Region) -> Result<Verdict> {
    if k.window() != xu.window() {
        return Err(Error::param("regions live on different windows"));
    }
    let h = k.window().h();
    let sd = xu.sdist_values();
    let margin = k.cells().map(|c| sd[c]).fold(f64::INFINITY, f64::min);
    let overlap = k.intersects(xu);
    let status = if overlap || margin <= 0.0 {
        Status::Fail
    } else if margin <= 2.0 * h {
        Status::Unresolved
    } else {
        Status::Pass
    };
    let detail = match status {
        Status::Unresolved => "unresolved at grid scale".to_string(),
        _ if overlap => "sets overlap".to_string(),
        _ => "min distance from reachable cells to the unsafe set".to_string(),
    };
    Ok(Verdict::new("separation", status, Some(margin), 2.0 * h, detail))
}

/// Monte-Carlo safety settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationCheck {
    pub n_solutions: usize,
    pub horizon: f64,
    pub dt: f64,
    pub seed: u64,
}

/// Random solutions of `inc` from the centers of random `x0` cells.
pub fn simulate(inc: &PerturbedInclusion<'_>, x0: &Region, cfg: &SimulationCheck) -> Result<Vec<Trajectory>> {
    if cfg.n_solutions == 0 {
        return Err(Error::param("need at least one solution"));
    }
    let cells: Vec<usize> = x0.cells().collect();
    if cells.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let starts: Vec<Point> = (0..cfg.n_solutions)
        .map(|_| x0.window().center(cells[rng.random_range(0..cells.len())]))
        .collect();
    starts
        .par_iter()
        .enumerate()
        .map(|(i, &x)| {
            let s = SelectionStrategy::random(cfg.seed, i as u64);
            inc.integrate(x, &s, cfg.dt, cfg.horizon, Direction::Forward)
        })
        .collect()
}

/// No simulated solution from `x0` enters `xu`; reports the closest
/// approach (signed distance to `xu`).
pub fn simulate_safety(inc: &PerturbedInclusion<'_>, x0: &Region, xu: &Region, cfg: &SimulationCheck) -> Result<Verdict> {
    if x0.intersects(xu) {
        return Ok(Verdict::new("simulate", Status::Fail, None, 0.0, "initial and unsafe sets overlap"));
    }
    let trajs = simulate(inc, x0, cfg)?;
    let mut closest = f64::INFINITY;
    let mut hits = 0;
    let mut truncated = 0;
    for t in &trajs {
        if t.states.iter().any(|p| xu.contains(*p)) {
            hits += 1;
        }
        truncated += t.truncated as usize;
        for p in &t.states {
            closest = closest.min(xu.signed_distance_unchecked(*p));
        }
    }
    Ok(Verdict::new(
        "simulate",
        pass_if(hits == 0),
        Some(closest),
        0.0,
        format!("{hits} of {} solutions entered the unsafe set; {truncated} left the window", trajs.len()),
    )
    .metric("unsafe_hits", hits as f64)
    .metric("truncated", truncated as f64))
}

/// `B ≤ 0` on every cell of `inner` and `B > 0` on every cell outside
/// `outer`, i.e. `inner ⊆ {B ≤ 0} ⊆ outer` cellwise.
pub fn check_consistency(values: &[f64], inner: &Region, outer: &Region) -> Result<Verdict> {
    if inner.window() != outer.window() || values.len() != inner.window().len() {
        return Err(Error::param("consistency inputs live on different windows"));
    }
    let bad_inner = inner.cells().filter(|&c| values[c] > 0.0).count();
    let bad_outer = (0..values.len()).filter(|&c| !outer.is_occupied(c) && values[c] <= 0.0).count();
    let inner_max = inner.cells().map(|c| values[c]).fold(f64::NEG_INFINITY, f64::max);
    let outer_min = (0..values.len())
        .filter(|&c| !outer.is_occupied(c))
        .map(|c| values[c])
        .fold(f64::INFINITY, f64::min);
    Ok(Verdict::new(
        "consistency",
        pass_if(bad_inner == 0 && bad_outer == 0),
        Some((bad_inner + bad_outer) as f64),
        0.0,
        format!("{bad_inner} inner cells with B > 0, {bad_outer} outer cells with B <= 0"),
    )
    .metric("max_on_inner", inner_max)
    .metric("min_outside_outer", outer_min))
}

/// Cellwise inclusion `a ⊆ b`.
pub fn check_subset(name: &str, a: &Region, b: &Region) -> Result<Verdict> {
    if a.window() != b.window() {
        return Err(Error::param("regions live on different windows"));
    }
    let bad = a.count_outside(b);
    Ok(Verdict::new(name, pass_if(bad == 0), Some(bad as f64), 0.0, format!("{bad} cells outside the outer set")))
}

/// Nesting `a ⊆ int(b)` at grid level (8-neighbour erosion of `b`, window
/// border ignored).
pub fn check_nesting(name: &str, a: &Region, b: &Region) -> Result<Verdict> {
    if a.window() != b.window() {
        return Err(Error::param("regions live on different windows"));
    }
    let w = *a.window();
    let bad = a
        .cells()
        .filter(|&c| !(b.is_occupied(c) && w.neighbors8(c).all(|n| b.is_occupied(n))))
        .count();
    Ok(Verdict::new(
        name,
        pass_if(bad == 0),
        Some(bad as f64),
        0.0,
        format!("{bad} cells not in the interior of the outer set"),
    ))
}

/// Aggregated verdicts of a pipeline run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub scenario_hash: String,
    pub seed: u64,
    pub verdicts: Vec<Verdict>,
    /// Some stage touched the window border; statements hold within it.
    pub edge_caveat: bool,
    pub diagnostics: BTreeMap<String, f64>,
    pub note: String,
}

pub const SAMPLING_NOTE: &str =
    "solution-based checks sample finitely many solutions: a pass means no counterexample was found";

impl CertificateReport {
    pub fn verdict(&self, name: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.name == name)
    }

    /// Worst status over all verdicts (untested ones do not count).
    pub fn overall(&self) -> Status {
        self.verdicts
            .iter()
            .map(|v| v.status)
            .filter(|s| *s != Status::Untested)
            .max()
            .unwrap_or(Status::Untested)
    }

    pub fn exit_code(&self) -> i32 {
        match self.overall() {
            Status::Pass | Status::Untested => 0,
            Status::Fail => 1,
            Status::Unresolved => 3,
        }
    }
}
