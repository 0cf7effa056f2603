//! Time-to-impact barrier: `B̂_K` on a band around `∂K`, its extension `B_K`
//! to the whole window, and shifted copies `B^v(x) = B_K(x + ρ₂(x)v)`.
//!
//! `B̂_K(x)` is the largest first time at which a solution from `x` meets
//! `∂K`: positive outside `K` (forward solutions), negative inside
//! (backward solutions), zero on `∂K`. Solution sets are replaced by finite
//! bundles, so exterior values approach the supremum from below and
//! interior values approach the infimum from above.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grid::{GaussianSmoothed, ScalarField, Window};
use crate::inclusion::{steer, Direction, Margin, PerturbedInclusion, SolutionBundle, Trajectory};
use crate::regions::Region;
use crate::{Error, Point, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BarrierKind {
    TimeToImpact,
    Extended,
    Shifted,
    Smoothed,
}

/// Scalar barrier samples at cell centers with bilinear interpolation.
///
/// A `TimeToImpact` field is only defined on its band; other cells hold NaN.
#[derive(Clone, Debug, PartialEq)]
pub struct BarrierField {
    window: Window,
    values: Vec<f64>,
    clip: Vec<bool>,
    kind: BarrierKind,
}

/// Anything that can be evaluated as a barrier at an arbitrary point.
pub trait BarrierFunction: Sync {
    fn value(&self, p: Point) -> f64;
}

impl BarrierFunction for BarrierField {
    fn value(&self, p: Point) -> f64 {
        self.eval(p)
    }
}

impl<F: Fn(Point) -> f64 + Sync> BarrierFunction for F {
    fn value(&self, p: Point) -> f64 {
        self(p)
    }
}

impl BarrierField {
    pub fn new(window: Window, values: Vec<f64>, clip: Vec<bool>, kind: BarrierKind) -> Result<Self> {
        if values.len() != window.len() || clip.len() != window.len() {
            return Err(Error::param("barrier samples must cover the window"));
        }
        Ok(BarrierField {
            window,
            values,
            clip,
            kind,
        })
    }

    pub fn from_field(field: &ScalarField, kind: BarrierKind) -> Self {
        BarrierField {
            window: *field.window(),
            values: field.values().to_vec(),
            clip: vec![false; field.window().len()],
            kind,
        }
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Cells whose value was clipped at the horizon or looked up outside
    /// the window.
    pub fn clip_flags(&self) -> &[bool] {
        &self.clip
    }

    pub fn kind(&self) -> BarrierKind {
        self.kind
    }

    #[inline]
    pub fn at(&self, idx: usize) -> f64 {
        self.values[idx]
    }

    pub fn is_clipped(&self, idx: usize) -> bool {
        self.clip[idx]
    }

    pub fn clipped_count(&self) -> usize {
        self.clip.iter().filter(|&&c| c).count()
    }

    /// Bilinear interpolation (constant beyond the outer cell centers).
    #[inline]
    pub fn eval(&self, p: Point) -> f64 {
        self.window.interpolate(&self.values, p)
    }

    pub fn to_scalar_field(&self) -> ScalarField {
        ScalarField::new(self.window, self.values.clone()).expect("sizes match")
    }
}

/// Bundle parameters for time-to-impact evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImpactQuery {
    pub dt: f64,
    pub horizon: f64,
    pub n_random: usize,
    pub seed: u64,
    /// Points with `|sdist| ≤ crossing_tol` count as lying on `∂K`.
    pub crossing_tol: f64,
}

impl ImpactQuery {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.horizon > 0.0) || self.horizon < self.dt {
            return Err(Error::param(format!(
                "impact query needs 0 < dt ≤ horizon, got dt = {}, horizon = {}",
                self.dt, self.horizon
            )));
        }
        if !(self.crossing_tol >= 0.0) {
            return Err(Error::param("crossing tolerance must be nonnegative"));
        }
        Ok(())
    }

    /// Horizon `4·band_width / ε₂_min`, step `h / (2 v_max)`.
    pub fn heuristic(inc: &PerturbedInclusion<'_>, band_width: f64, n_random: usize, seed: u64) -> Self {
        let eps = inc.margin.lower_bound();
        let dt = inc.default_dt();
        let horizon = if eps > 0.0 {
            (4.0 * band_width / eps).max(dt)
        } else {
            (inc.window.diameter() / inc.max_speed().max(1e-12)).max(dt)
        };
        ImpactQuery {
            dt,
            horizon,
            n_random,
            seed,
            crossing_tol: 1e-9,
        }
    }

    /// Query with a seed decorrelated per cell.
    pub fn for_cell(&self, idx: usize) -> Self {
        ImpactQuery {
            seed: mix_seed(self.seed, idx as u64),
            ..*self
        }
    }
}

fn mix_seed(seed: u64, idx: u64) -> u64 {
    let mut z = seed ^ idx.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Signed time of the first sign change of `sdist_K` along `traj`, located
/// by linear interpolation between steps; `None` without crossing.
pub fn first_impact_time(traj: &Trajectory, k: &Region) -> Option<f64> {
    first_crossing(traj, k, 0.0)
}

fn first_crossing(traj: &Trajectory, k: &Region, tol: f64) -> Option<f64> {
    let sign = traj.direction.sign();
    let mut prev = k.signed_distance_unchecked(traj.states[0]);
    if prev.abs() <= tol {
        return Some(0.0);
    }
    for i in 1..traj.states.len() {
        let s = k.signed_distance_unchecked(traj.states[i]);
        if s.abs() <= tol {
            return Some(sign * traj.times[i]);
        }
        if (s > 0.0) != (prev > 0.0) {
            let (t0, t1) = (traj.times[i - 1], traj.times[i]);
            return Some(sign * (t0 + (t1 - t0) * prev / (prev - s)));
        }
        prev = s;
    }
    None
}

/// Value of `B̂_K` at a point, with the horizon-clip flag.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Impact {
    pub value: f64,
    pub clipped: bool,
}

/// `B̂_K(x)` for the inclusion `inc` (whose margin plays the role of `ε₂`).
pub fn time_to_impact(x: Point, k: &Region, inc: &PerturbedInclusion<'_>, q: &ImpactQuery) -> Result<Impact> {
    q.validate()?;
    let s0 = k.signed_distance(x)?;
    if s0.abs() <= q.crossing_tol {
        return Ok(Impact {
            value: 0.0,
            clipped: false,
        });
    }
    let outside = s0 > 0.0;
    let direction = if outside { Direction::Forward } else { Direction::Backward };
    let bundle = inc.bundle_until(x, q.n_random, q.dt, q.horizon, direction, q.seed, |p| {
        let s = k.signed_distance_unchecked(p);
        s.abs() <= q.crossing_tol || (s > 0.0) != outside
    })?;
    if bundle.trajectories.is_empty() {
        return Err(Error::Numerical("empty solution bundle".into()));
    }
    // Greedy feedback selection that keeps sdist_K moving towards ∂K as
    // slowly as possible (away from K outside, inwards inside).
    let sign = if outside { 1.0 } else { -1.0 };
    let steered = inc.integrate_feedback(
        x,
        q.dt,
        q.horizon,
        direction,
        |p, verts, eps| steer(verts, eps, k.sdist_gradient(p) * sign),
        |p| {
            let s = k.signed_distance_unchecked(p);
            s.abs() <= q.crossing_tol || (s > 0.0) != outside
        },
    )?;
    let mut clipped = false;
    let mut value = if outside { f64::NEG_INFINITY } else { f64::INFINITY };
    for tr in bundle.trajectories.iter().chain(std::iter::once(&steered)) {
        let t = match first_crossing(tr, k, q.crossing_tol) {
            Some(t) => t,
            None => {
                clipped = true;
                direction.sign() * q.horizon
            }
        };
        value = if outside { value.max(t) } else { value.min(t) };
    }
    Ok(Impact { value, clipped })
}

/// `B̂_K` at the centers of the cells of `band`; NaN elsewhere.
pub fn time_to_impact_field(
    k: &Region,
    band: &Region,
    inc: &PerturbedInclusion<'_>,
    q: &ImpactQuery,
) -> Result<BarrierField> {
    q.validate()?;
    let w = *band.window();
    if k.window() != &w || inc.window != w {
        return Err(Error::param("time-to-impact inputs live on different windows"));
    }
    let cells: Vec<usize> = band.cells().collect();
    let impacts = cells
        .par_iter()
        .map(|&c| time_to_impact(w.center(c), k, inc, &q.for_cell(c)))
        .collect::<Result<Vec<_>>>()?;
    let mut values = vec![f64::NAN; w.len()];
    let mut clip = vec![false; w.len()];
    for (&c, imp) in cells.iter().zip(&impacts) {
        values[c] = imp.value;
        clip[c] = imp.clipped;
    }
    BarrierField::new(w, values, clip, BarrierKind::TimeToImpact)
}

/// Extension of `B̂_K` from the band `u1` to the window: band cells keep
/// their value; other cells take the infimum (inside `K`) or supremum
/// (outside) of `B̂_K` over the band cells nearest to them.
pub fn extend_barrier(bhat: &BarrierField, u1: &Region, k: &Region) -> Result<BarrierField> {
    let w = *bhat.window();
    if u1.window() != &w || k.window() != &w {
        return Err(Error::param("extension inputs live on different windows"));
    }
    if u1.is_empty() {
        return Err(Error::EmptyRegion);
    }
    if let Some(c) = u1.cells().find(|&c| !bhat.values[c].is_finite()) {
        return Err(Error::pre(format!("time-to-impact undefined on band cell {c}")));
    }
    let tol = 0.5 * w.h();
    let out: Vec<(f64, bool)> = (0..w.len())
        .into_par_iter()
        .map(|c| {
            if u1.is_occupied(c) {
                return (bhat.values[c], bhat.clip[c]);
            }
            let feet = u1.nearest_boundary_cells(w.center(c), tol);
            let vals = feet.iter().map(|&f| bhat.values[f]);
            let v = if k.is_occupied(c) {
                vals.fold(f64::INFINITY, f64::min)
            } else {
                vals.fold(f64::NEG_INFINITY, f64::max)
            };
            (v, feet.iter().any(|&f| bhat.clip[f]))
        })
        .collect();
    let (values, clip) = out.into_iter().unzip();
    BarrierField::new(w, values, clip, BarrierKind::Extended)
}

/// `B^v(x) = B_K(x + ρ₂(x)v)` at the cell centers.
pub fn shifted_barrier(bk: &BarrierField, rho2: &ScalarField, v: Point) -> Result<BarrierField> {
    let w = *bk.window();
    if rho2.window() != &w {
        return Err(Error::param("shift field lives on a different window"));
    }
    if v.norm() > 1.0 + 1e-12 {
        return Err(Error::param("shift direction must lie in the unit ball"));
    }
    let out: Vec<(f64, bool)> = (0..w.len())
        .into_par_iter()
        .map(|c| {
            let y = w.center(c) + v * rho2.at(c);
            (bk.eval(y), !w.contains(y))
        })
        .collect();
    let (values, clip) = out.into_iter().unzip();
    BarrierField::new(w, values, clip, BarrierKind::Shifted)
}

/// Smooth shift radius `ρ₂ = G_σ * (c·min{ε₂, ρₒ})` with a Gaussian of
/// width `σ`.
pub fn shift_radius(eps2: &Margin, rho_o: &ScalarField, c: f64, sigma: f64) -> Result<GaussianSmoothed> {
    if !(c > 0.0 && c <= 1.0) {
        return Err(Error::param(format!("shift scale must lie in (0, 1], got {c}")));
    }
    let w = *rho_o.window();
    let raw = ScalarField::from_fn(w, |p| c * eps2.eval(p)).zip_with(rho_o, |e, r| e.min(c * r))?;
    if raw.min() <= 0.0 {
        return Err(Error::param("shift radius must be positive"));
    }
    GaussianSmoothed::new(raw, sigma)
}

/// Barrier values along trajectories with their worst decrease slack.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DecreaseProfile {
    /// `(t, B(φ(t)))` samples per trajectory, kept while `φ` stays in the band.
    pub series: Vec<Vec<(f64, f64)>>,
    /// `max_{t < t'} B(φ(t')) − B(φ(t)) + (t' − t)`; `None` without pairs.
    pub worst_slack: Option<f64>,
}

impl DecreaseProfile {
    pub fn is_empty(&self) -> bool {
        self.worst_slack.is_none()
    }
}

/// Rate-one decrease slack of `b` along the bundle, each trajectory cut at
/// its first state outside `u1`.
pub fn decrease_profile(b: &dyn BarrierFunction, bundle: &SolutionBundle, u1: &Region) -> DecreaseProfile {
    let mut profile = DecreaseProfile::default();
    for tr in &bundle.trajectories {
        let series: Vec<(f64, f64)> = tr
            .states
            .iter()
            .zip(&tr.times)
            .take_while(|(p, _)| u1.contains(**p))
            .map(|(&p, &t)| (t, b.value(p)))
            .collect();
        if let Some(s) = worst_slack(&series) {
            profile.worst_slack = Some(profile.worst_slack.map_or(s, |w: f64| w.max(s)));
        }
        profile.series.push(series);
    }
    profile
}

/// `max_{i<j} (B_j + t_j) − (B_i + t_i)` in one pass.
fn worst_slack(series: &[(f64, f64)]) -> Option<f64> {
    let mut best: Option<f64> = None;
    let mut low = f64::INFINITY;
    for &(t, b) in series {
        let g = b + t;
        if low.is_finite() {
            let s = g - low;
            best = Some(best.map_or(s, |w| w.max(s)));
        }
        low = low.min(g);
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inclusion::{FieldSpec, SelectionStrategy};
    use crate::regions::{HalfSpace, Shape};
    use crate::pt;
    use approx::assert_abs_diff_eq;

    fn contraction_setup(n: usize) -> (Window, FieldSpec, Region) {
        let w = Window::centered(3.0, n).unwrap();
        let k = Shape::disk(pt(0.0, 0.0), 1.0).to_region(w);
        (w, FieldSpec::contraction(), k)
    }

    #[test]
    fn impact_of_contraction_from_e() {
        let (w, f, k) = contraction_setup(256);
        let m = Margin::Constant(0.0);
        let inc = PerturbedInclusion::new(&f, &m, w);
        let dt = 1e-3;
        let x0 = pt(1f64.exp(), 0.0);
        let tr = inc
            .integrate(x0, &SelectionStrategy::vertex(0), dt, 3.0, Direction::Forward)
            .unwrap();
        let t = first_impact_time(&tr, &k).unwrap();
        assert!((t - 1.0).abs() <= dt + w.h(), "t = {t}");
    }

    #[test]
    fn impact_from_the_boundary_is_zero() {
        let w = Window::centered(2.0, 64).unwrap();
        let hs = HalfSpace::new(pt(-1.0, 0.0), 0.0).unwrap();
        let k = hs.to_region(w);
        let f = FieldSpec::constant(&[pt(1.0, 0.0)]);
        let m = Margin::Constant(0.0);
        let inc = PerturbedInclusion::new(&f, &m, w);
        let q = ImpactQuery {
            dt: 0.01,
            horizon: 1.0,
            n_random: 0,
            seed: 0,
            crossing_tol: 1e-9,
        };
        // x₁ = 0 lies on a grid line, where the interpolated sdist vanishes.
        let imp = time_to_impact(pt(0.0, 0.3), &k, &inc, &q).unwrap();
        assert_eq!(imp.value, 0.0);
        assert!(!imp.clipped);
    }

    #[test]
    fn backward_linear_crossing() {
        let w = Window::centered(2.0, 64).unwrap();
        let k = HalfSpace::new(pt(-1.0, 0.0), 0.0).unwrap().to_region(w);
        let f = FieldSpec::constant(&[pt(1.0, 0.0)]);
        let m = Margin::Constant(0.0);
        let inc = PerturbedInclusion::new(&f, &m, w);
        let dt = 1e-3;
        let tr = inc
            .integrate(pt(0.5, 0.0), &SelectionStrategy::vertex(0), dt, 1.0, Direction::Backward)
            .unwrap();
        let t = first_impact_time(&tr, &k).unwrap();
        assert!((t + 0.5).abs() <= dt, "t = {t}");
    }

    #[test]
    fn time_to_impact_matches_log_radius() {
        let (w, f, k) = contraction_setup(256);
        let m = Margin::Constant(1e-6);
        let inc = PerturbedInclusion::new(&f, &m, w);
        let q = ImpactQuery {
            dt: 1e-3,
            horizon: 4.0,
            n_random: 2,
            seed: 3,
            crossing_tol: 1e-9,
        };
        let out = time_to_impact(pt(1f64.exp(), 0.0), &k, &inc, &q).unwrap();
        assert!((out.value - 1.0).abs() <= 0.02 && !out.clipped);
        let inn = time_to_impact(pt((-1f64).exp(), 0.0), &k, &inc, &q).unwrap();
        assert!((inn.value + 1.0).abs() <= 0.02 && !inn.clipped);
    }

    #[test]
    fn no_impact_clips_to_horizon() {
        let w = Window::centered(2.0, 32).unwrap();
        let k = Shape::disk(pt(0.0, 0.0), 0.5).to_region(w);
        let f = FieldSpec::constant(&[pt(0.0, 0.0)]);
        let m = Margin::Constant(0.0);
        let inc = PerturbedInclusion::new(&f, &m, w);
        let q = ImpactQuery {
            dt: 0.1,
            horizon: 2.0,
            n_random: 0,
            seed: 0,
            crossing_tol: 1e-9,
        };
        let out = time_to_impact(pt(1.5, 0.0), &k, &inc, &q).unwrap();
        assert_eq!(out.value, 2.0);
        assert!(out.clipped);
        let inn = time_to_impact(pt(0.0, 0.0), &k, &inc, &q).unwrap();
        assert_eq!(inn.value, -2.0);
    }

    fn contraction_barrier() -> (Window, Region, Region, BarrierField, BarrierField) {
        let (w, f, k) = contraction_setup(96);
        let m = Margin::Constant(1e-3);
        let inc = PerturbedInclusion::new(&f, &m, w);
        let band = k.boundary_band(0.4).unwrap();
        let q = ImpactQuery {
            dt: 2e-3,
            horizon: 3.0,
            n_random: 0,
            seed: 0,
            crossing_tol: 1e-9,
        };
        let bhat = time_to_impact_field(&k, &band, &inc, &q).unwrap();
        let bk = extend_barrier(&bhat, &band, &k).unwrap();
        (w, k, band, bhat, bk)
    }

    #[test]
    fn extension_keeps_band_and_matches_sign_of_k() {
        let (w, k, band, bhat, bk) = contraction_barrier();
        assert_eq!(bk.kind(), BarrierKind::Extended);
        for c in band.cells() {
            assert_eq!(bk.at(c), bhat.at(c));
        }
        let ring = {
            let mut occ = vec![false; w.len()];
            for &c in k.boundary_cells() {
                occ[c] = true;
                for n in w.neighbors8(c) {
                    occ[n] = true;
                }
            }
            Region::from_cells(w, occ)
        };
        for c in 0..w.len() {
            if ring.is_occupied(c) {
                continue;
            }
            assert_eq!(bk.at(c) <= 0.0, k.is_occupied(c), "cell {c}");
        }
        // Deep interior: inner band edge at radius 0.6, B̂ = ln 0.6.
        let centre = w.cell_of(pt(0.0, 0.0)).unwrap();
        let expected = 0.6f64.ln();
        assert!((bk.at(centre) - expected).abs() <= 0.02 * expected.abs().max(1.0) + 2.0 * w.h());
    }

    #[test]
    fn shifts_of_constant_and_zero_direction() {
        let w = Window::centered(1.0, 16).unwrap();
        let bk = BarrierField::from_field(&ScalarField::constant(w, 7.0), BarrierKind::Extended);
        let rho = ScalarField::constant(w, 0.1);
        assert_eq!(shifted_barrier(&bk, &rho, pt(0.6, -0.3)).unwrap().values(), bk.values());
        let lin = BarrierField::from_field(&ScalarField::from_fn(w, |p| p.x - 2.0 * p.y), BarrierKind::Extended);
        assert_eq!(shifted_barrier(&lin, &rho, pt(0.0, 0.0)).unwrap().values(), lin.values());
        let sh = shifted_barrier(&lin, &rho, pt(1.0, 0.0)).unwrap();
        for c in 0..w.len() {
            let y = w.center(c) + pt(0.1, 0.0);
            if w.contains(y) {
                assert_abs_diff_eq!(sh.at(c), lin.eval(y), epsilon = 1e-12);
            } else {
                assert!(sh.is_clipped(c));
            }
        }
    }

    #[test]
    fn shifts_bracket_linear_field() {
        let w = Window::centered(1.0, 32).unwrap();
        let lin = BarrierField::from_field(&ScalarField::from_fn(w, |p| 3.0 * p.x), BarrierKind::Extended);
        let rho = ScalarField::constant(w, 0.1);
        let plus = shifted_barrier(&lin, &rho, pt(1.0, 0.0)).unwrap();
        let minus = shifted_barrier(&lin, &rho, pt(-1.0, 0.0)).unwrap();
        for c in 0..w.len() {
            if plus.is_clipped(c) || minus.is_clipped(c) || w.is_edge_cell(c) {
                continue;
            }
            assert!(minus.at(c) <= lin.at(c) && lin.at(c) <= plus.at(c));
            assert_abs_diff_eq!(plus.at(c) + minus.at(c), 2.0 * lin.at(c), epsilon = 1e-12);
        }
    }

    #[test]
    fn decrease_of_time_to_impact_along_flow() {
        let (w, _k, band, _bhat, bk) = contraction_barrier();
        let f = FieldSpec::contraction();
        let m = Margin::Constant(1e-3);
        let inc = PerturbedInclusion::new(&f, &m, w);
        let bundle = inc.bundle(pt(1.3, 0.2), 4, 2e-3, 1.0, Direction::Forward, 5).unwrap();
        let prof = decrease_profile(&bk, &bundle, &band);
        let tol_dec = 2.0 * (2e-3 + w.h());
        assert!(prof.worst_slack.unwrap() <= tol_dec, "{:?}", prof.worst_slack);

        let flat = BarrierField::from_field(&ScalarField::constant(w, 1.0), BarrierKind::Extended);
        let prof = decrease_profile(&flat, &bundle, &band);
        let span = prof.series.iter().map(|s| s.last().unwrap().0).fold(0.0, f64::max);
        assert_abs_diff_eq!(prof.worst_slack.unwrap(), span, epsilon = 1e-12);

        let far = inc.bundle(pt(2.9, 2.9), 0, 2e-3, 0.5, Direction::Forward, 0).unwrap();
        assert!(decrease_profile(&bk, &far, &band).is_empty());
    }

    #[test]
    fn slack_scan_matches_brute_force() {
        let series: Vec<(f64, f64)> = (0..40)
            .map(|i| {
                let t = i as f64 * 0.1;
                (t, (3.0 * t).sin() - 0.8 * t)
            })
            .collect();
        let mut brute = f64::NEG_INFINITY;
        for i in 0..series.len() {
            for j in i + 1..series.len() {
                brute = brute.max(series[j].1 - series[i].1 + series[j].0 - series[i].0);
            }
        }
        assert_abs_diff_eq!(worst_slack(&series).unwrap(), brute, epsilon = 1e-12);
        assert!(worst_slack(&series[..1]).is_none());
    }
}
