//! Set-valued right-hand sides, robustness margins and Euler integration of
//! selections of `F + ε𝔹`, forward or backward in time.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::grid::{ScalarField, Window};
use crate::regions::Shape;
use crate::{pt, Error, Point, Result};

/// Vertices of a convex polygon of admissible velocities.
pub type Vertices = SmallVec<[Point; 4]>;

/// `x ↦ F(x)`, a nonempty compact convex polygon given by its vertices.
pub trait SetValuedField: Send + Sync {
    fn vertices(&self, x: Point) -> Vertices;

    /// Lipschitz-like bound, used only for diagnostics.
    fn continuity_modulus(&self) -> Option<f64> {
        None
    }
}

impl<T: SetValuedField + ?Sized> SetValuedField for &T {
    fn vertices(&self, x: Point) -> Vertices {
        (**self).vertices(x)
    }
    fn continuity_modulus(&self) -> Option<f64> {
        (**self).continuity_modulus()
    }
}

/// Built-in and tabulated fields, as they appear in scenario files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldSpec {
    /// `{(0,1)}` below the horizontal axis, `co{(0,1), (−1,0)}` on and above it.
    Example1,
    /// Single-valued `F(x) = {A x}`.
    Linear { matrix: [[f64; 2]; 2] },
    /// State-independent polygon.
    Constant { vertices: Vec<[f64; 2]> },
    /// First row whose shape contains `x` wins; `default` elsewhere.
    Table {
        rows: Vec<TableRow>,
        default: Vec<[f64; 2]>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub region: Shape,
    pub vertices: Vec<[f64; 2]>,
}

impl FieldSpec {
    /// `F(x) = {−x}`.
    pub fn contraction() -> Self {
        FieldSpec::Linear {
            matrix: [[-1.0, 0.0], [0.0, -1.0]],
        }
    }

    pub fn constant(v: &[Point]) -> Self {
        FieldSpec::Constant {
            vertices: v.iter().map(|p| [p.x, p.y]).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonempty = |v: &[[f64; 2]], what: &str| {
            if v.is_empty() {
                Err(Error::Scenario(format!("{what} has an empty vertex list")))
            } else if v.iter().flatten().any(|c| !c.is_finite()) {
                Err(Error::Scenario(format!("{what} has non-finite vertices")))
            } else {
                Ok(())
            }
        };
        match self {
            FieldSpec::Example1 => Ok(()),
            FieldSpec::Linear { matrix } => {
                if matrix.iter().flatten().all(|c| c.is_finite()) {
                    Ok(())
                } else {
                    Err(Error::Scenario("linear field matrix must be finite".into()))
                }
            }
            FieldSpec::Constant { vertices } => nonempty(vertices, "constant field"),
            FieldSpec::Table { rows, default } => {
                nonempty(default, "table default")?;
                for (i, r) in rows.iter().enumerate() {
                    r.region.validate()?;
                    nonempty(&r.vertices, &format!("table row {i}"))?;
                }
                Ok(())
            }
        }
    }
}

fn to_vertices(v: &[[f64; 2]]) -> Vertices {
    v.iter().map(|c| pt(c[0], c[1])).collect()
}

impl SetValuedField for FieldSpec {
    fn vertices(&self, x: Point) -> Vertices {
        match self {
            FieldSpec::Example1 => {
                if x.y < 0.0 {
                    smallvec::smallvec![pt(0.0, 1.0)]
                } else {
                    smallvec::smallvec![pt(0.0, 1.0), pt(-1.0, 0.0)]
                }
            }
            FieldSpec::Linear { matrix: a } => smallvec::smallvec![pt(
                a[0][0] * x.x + a[0][1] * x.y,
                a[1][0] * x.x + a[1][1] * x.y
            )],
            FieldSpec::Constant { vertices } => to_vertices(vertices),
            FieldSpec::Table { rows, default } => rows
                .iter()
                .find(|r| r.region.level(x) <= 0.0)
                .map(|r| to_vertices(&r.vertices))
                .unwrap_or_else(|| to_vertices(default)),
        }
    }

    fn continuity_modulus(&self) -> Option<f64> {
        match self {
            FieldSpec::Linear { matrix } => {
                Some(matrix.iter().flatten().map(|c| c * c).sum::<f64>().sqrt())
            }
            FieldSpec::Constant { .. } => Some(0.0),
            _ => None,
        }
    }
}

/// Positive continuous robustness margin `ε(x)`.
#[derive(Clone, Debug, PartialEq)]
pub enum Margin {
    Constant(f64),
    Grid(ScalarField),
}

impl Margin {
    #[inline]
    pub fn eval(&self, x: Point) -> f64 {
        match self {
            Margin::Constant(c) => *c,
            Margin::Grid(f) => f.eval(x),
        }
    }

    pub fn lower_bound(&self) -> f64 {
        match self {
            Margin::Constant(c) => *c,
            Margin::Grid(f) => f.min(),
        }
    }

    pub fn upper_bound(&self) -> f64 {
        match self {
            Margin::Constant(c) => *c,
            Margin::Grid(f) => f.max(),
        }
    }

    /// Margins used for integration may be zero (unperturbed system); those
    /// used as robustness margins must be strictly positive.
    pub fn validate(&self, strictly_positive: bool) -> Result<()> {
        let lb = self.lower_bound();
        let ok = if strictly_positive { lb > 0.0 } else { lb >= 0.0 };
        if ok && self.upper_bound().is_finite() {
            Ok(())
        } else {
            Err(Error::param(format!("margin lower bound {lb} is not admissible")))
        }
    }

    /// Samples of the margin at the cell centers of `w`.
    pub fn sample(&self, w: Window) -> ScalarField {
        ScalarField::from_fn(w, |p| self.eval(p))
    }
}

/// Time direction: forward solutions of `F`, or of `−F` for backward ones.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Forward => 1.0,
            Direction::Backward => -1.0,
        }
    }
}

/// How a velocity is picked from `F(x)` at every step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Selection {
    /// The i-th vertex (the last one if `F(x)` has fewer).
    FixedVertex(usize),
    /// Dirichlet(1) convex weights drawn afresh each step.
    RandomConvex,
    /// The vertex maximizing `⟨d, v⟩`.
    ExtremalDirection(Point),
}

/// How the `ε(x)𝔹` perturbation is picked at every step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Perturbation {
    None,
    /// `ε(x)·u` for a fixed unit vector `u`.
    Fixed(Point),
    /// `ε(x)·u` with `u` uniform on the unit circle, drawn each step.
    Random,
}

/// A deterministic recipe for one selection of `F + ε𝔹`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SelectionStrategy {
    pub selection: Selection,
    pub perturbation: Perturbation,
    pub seed: u64,
    pub stream: u64,
}

impl SelectionStrategy {
    pub fn vertex(i: usize) -> Self {
        Self::new(Selection::FixedVertex(i), Perturbation::None)
    }

    pub fn new(selection: Selection, perturbation: Perturbation) -> Self {
        SelectionStrategy {
            selection,
            perturbation,
            seed: 0,
            stream: 0,
        }
    }

    pub fn random(seed: u64, stream: u64) -> Self {
        SelectionStrategy {
            selection: Selection::RandomConvex,
            perturbation: Perturbation::Random,
            seed,
            stream,
        }
    }

    fn uses_rng(&self) -> bool {
        matches!(self.selection, Selection::RandomConvex)
            || matches!(self.perturbation, Perturbation::Random)
    }

    fn pick(&self, verts: &[Point], eps: f64, rng: &mut Option<ChaCha8Rng>) -> Point {
        let base = match self.selection {
            Selection::FixedVertex(i) => verts[i.min(verts.len() - 1)],
            Selection::ExtremalDirection(d) => {
                let mut best = verts[0];
                for &v in &verts[1..] {
                    if d.dot(&v) > d.dot(&best) {
                        best = v;
                    }
                }
                best
            }
            Selection::RandomConvex => {
                let rng = rng.as_mut().expect("random strategy carries an rng");
                if verts.len() == 1 {
                    verts[0]
                } else {
                    // Normalized Exp(1) draws are Dirichlet(1, …, 1).
                    let w: SmallVec<[f64; 4]> = verts
                        .iter()
                        .map(|_| rng.sample::<f64, _>(Exp1))
                        .collect();
                    let total: f64 = w.iter().sum();
                    verts
                        .iter()
                        .zip(&w)
                        .fold(Point::zeros(), |acc, (v, wi)| acc + v * (wi / total))
                }
            }
        };
        let pert = match self.perturbation {
            Perturbation::None => Point::zeros(),
            Perturbation::Fixed(u) => u * eps,
            Perturbation::Random => {
                let rng = rng.as_mut().expect("random strategy carries an rng");
                let a = TAU * rng.random::<f64>();
                pt(a.cos(), a.sin()) * eps
            }
        };
        base + pert
    }

    fn rng(&self) -> Option<ChaCha8Rng> {
        self.uses_rng().then(|| {
            let mut r = ChaCha8Rng::seed_from_u64(self.seed);
            r.set_stream(self.stream);
            r
        })
    }
}

/// Euler-discretized solution of `ẋ ∈ ±F(x) + ε(x)𝔹`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// Elapsed time since the start (nonnegative, increasing).
    pub times: Vec<f64>,
    pub states: Vec<Point>,
    pub direction: Direction,
    pub dt: f64,
    /// Stopped because the next state left the window.
    pub truncated: bool,
}

impl Trajectory {
    /// Time in the solution's own clock (negative for backward solutions).
    pub fn signed_time(&self, k: usize) -> f64 {
        self.direction.sign() * self.times[k]
    }

    pub fn origin(&self) -> Point {
        self.states[0]
    }

    pub fn endpoint(&self) -> Point {
        *self.states.last().expect("trajectory holds its origin")
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Finite sample of the solution set from one initial condition.
#[derive(Clone, Debug, PartialEq)]
pub struct SolutionBundle {
    pub origin: Point,
    pub trajectories: Vec<Trajectory>,
    pub horizon: f64,
    pub dt: f64,
}

impl SolutionBundle {
    pub fn endpoints(&self) -> Vec<Point> {
        self.trajectories.iter().map(Trajectory::endpoint).collect()
    }
}

/// Perturbed inclusion `ẋ ∈ F(x) + ε(x)𝔹` restricted to a window.
#[derive(Clone, Copy)]
pub struct PerturbedInclusion<'a> {
    pub field: &'a dyn SetValuedField,
    pub margin: &'a Margin,
    pub window: Window,
}

/// Unit directions `(cos 2πj/m, sin 2πj/m)`, exact on the axes.
pub fn ball_directions(m: usize) -> Vec<Point> {
    const AXES: [Point; 4] = [
        Point::new(1.0, 0.0),
        Point::new(0.0, 1.0),
        Point::new(-1.0, 0.0),
        Point::new(0.0, -1.0),
    ];
    (0..m)
        .map(|j| {
            if (4 * j) % m == 0 {
                AXES[4 * j / m]
            } else {
                let a = TAU * j as f64 / m as f64;
                pt(a.cos(), a.sin())
            }
        })
        .collect()
}

const AXIS_PERTURBATIONS: [Perturbation; 5] = [
    Perturbation::None,
    Perturbation::Fixed(Point::new(1.0, 0.0)),
    Perturbation::Fixed(Point::new(-1.0, 0.0)),
    Perturbation::Fixed(Point::new(0.0, 1.0)),
    Perturbation::Fixed(Point::new(0.0, -1.0)),
];

impl<'a> PerturbedInclusion<'a> {
    pub fn new(field: &'a dyn SetValuedField, margin: &'a Margin, window: Window) -> Self {
        PerturbedInclusion {
            field,
            margin,
            window,
        }
    }

    /// Vertices of `F(x)` (of `−F(x)` backward).
    pub fn eval_f(&self, x: Point, direction: Direction) -> Vertices {
        let mut v = self.field.vertices(x);
        if direction == Direction::Backward {
            v.iter_mut().for_each(|p| *p = -*p);
        }
        v
    }

    /// Vertices of `F(x) + ε(x)·P_m` where `P_m` is the regular m-gon
    /// inscribed in the unit ball.
    pub fn minkowski_vertices(&self, x: Point, m: usize) -> Result<Vec<Point>> {
        if m < 8 {
            return Err(Error::param(format!("need at least 8 ball directions, got {m}")));
        }
        Ok(minkowski_sum(&self.field.vertices(x), self.margin.eval(x), &ball_directions(m)))
    }

    /// Explicit Euler solution of the chosen selection.
    pub fn integrate(
        &self,
        x0: Point,
        strategy: &SelectionStrategy,
        dt: f64,
        horizon: f64,
        direction: Direction,
    ) -> Result<Trajectory> {
        self.integrate_until(x0, strategy, dt, horizon, direction, |_| false)
    }

    /// As [`integrate`](Self::integrate), stopping right after the first
    /// state for which `stop` returns true.
    pub fn integrate_until(
        &self,
        x0: Point,
        strategy: &SelectionStrategy,
        dt: f64,
        horizon: f64,
        direction: Direction,
        stop: impl FnMut(Point) -> bool,
    ) -> Result<Trajectory> {
        let mut rng = strategy.rng();
        self.integrate_feedback(x0, dt, horizon, direction, |_, verts, eps| strategy.pick(verts, eps, &mut rng), stop)
    }

    /// Euler integration with a state-feedback selection: `select(x, V, ε)`
    /// must return a point of `co V + ε𝔹`, where `V` are the vertices of
    /// `±F(x)`.
    pub fn integrate_feedback(
        &self,
        x0: Point,
        dt: f64,
        horizon: f64,
        direction: Direction,
        mut select: impl FnMut(Point, &[Point], f64) -> Point,
        mut stop: impl FnMut(Point) -> bool,
    ) -> Result<Trajectory> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::param(format!("time step must be positive, got {dt}")));
        }
        if !(horizon >= dt) {
            return Err(Error::param(format!("horizon {horizon} is shorter than dt {dt}")));
        }
        self.window.check(x0)?;
        let steps = ((horizon / dt) - 1e-9).ceil().max(1.0) as usize;
        let step = horizon / steps as f64;
        let mut times = Vec::with_capacity(steps.min(4096) + 1);
        let mut states = Vec::with_capacity(steps.min(4096) + 1);
        times.push(0.0);
        states.push(x0);
        let mut truncated = false;
        let mut x = x0;
        for k in 1..=steps {
            let verts = self.eval_f(x, direction);
            let v = select(x, &verts, self.margin.eval(x));
            let next = x + v * step;
            if !self.window.contains(next) {
                truncated = true;
                break;
            }
            x = next;
            times.push(k as f64 * step);
            states.push(x);
            if stop(x) {
                break;
            }
        }
        Ok(Trajectory {
            times,
            states,
            direction,
            dt: step,
            truncated,
        })
    }

    /// Deterministic strategy set: every vertex at `x0` combined with no
    /// perturbation and the four axis perturbations, then `n_random`
    /// random-convex selections with random perturbations.
    pub fn bundle_strategies(&self, x0: Point, n_random: usize, seed: u64) -> Vec<SelectionStrategy> {
        let nv = self.field.vertices(x0).len();
        let mut out = Vec::with_capacity(nv * AXIS_PERTURBATIONS.len() + n_random);
        for i in 0..nv {
            for p in AXIS_PERTURBATIONS {
                out.push(SelectionStrategy::new(Selection::FixedVertex(i), p));
            }
        }
        out.extend((0..n_random).map(|r| SelectionStrategy::random(seed, r as u64)));
        out
    }

    pub fn bundle(
        &self,
        x0: Point,
        n_random: usize,
        dt: f64,
        horizon: f64,
        direction: Direction,
        seed: u64,
    ) -> Result<SolutionBundle> {
        self.bundle_until(x0, n_random, dt, horizon, direction, seed, |_| false)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn bundle_until(
        &self,
        x0: Point,
        n_random: usize,
        dt: f64,
        horizon: f64,
        direction: Direction,
        seed: u64,
        stop: impl Fn(Point) -> bool + Sync,
    ) -> Result<SolutionBundle> {
        let strategies = self.bundle_strategies(x0, n_random, seed);
        let trajectories = strategies
            .par_iter()
            .map(|s| self.integrate_until(x0, s, dt, horizon, direction, &stop))
            .collect::<Result<Vec<_>>>()?;
        Ok(SolutionBundle {
            origin: x0,
            trajectories,
            horizon,
            dt,
        })
    }

    /// Largest velocity magnitude over the window's cell centers, margin included.
    pub fn max_speed(&self) -> f64 {
        (0..self.window.len())
            .into_par_iter()
            .map(|k| {
                let c = self.window.center(k);
                let f = self
                    .field
                    .vertices(c)
                    .iter()
                    .map(|v| v.norm())
                    .fold(0.0, f64::max);
                f + self.margin.eval(c)
            })
            .reduce(|| 0.0, f64::max)
    }

    /// Default Euler step `h / (2 v_max)`.
    pub fn default_dt(&self) -> f64 {
        let v = self.max_speed();
        if v > 0.0 {
            self.window.h() / (2.0 * v)
        } else {
            self.window.h()
        }
    }
}

/// `{v + eps·d : v ∈ verts, d ∈ dirs}`; just `verts` when `eps` is zero.
pub fn minkowski_sum(verts: &[Point], eps: f64, dirs: &[Point]) -> Vec<Point> {
    if eps == 0.0 {
        return verts.to_vec();
    }
    verts
        .iter()
        .flat_map(|v| dirs.iter().map(move |d| v + d * eps))
        .collect()
}

/// Velocity of `co V + ε𝔹` maximizing `⟨g, ·⟩`: the best vertex plus `ε g/|g|`.
pub fn steer(verts: &[Point], eps: f64, g: Point) -> Point {
    let mut best = verts[0];
    for &v in &verts[1..] {
        if g.dot(&v) > g.dot(&best) {
            best = v;
        }
    }
    let n = g.norm();
    if n > 0.0 {
        best + g * (eps / n)
    } else {
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hull::distance_to_hull;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn window() -> Window {
        Window::centered(4.0, 64).unwrap()
    }

    #[test]
    fn example1_field_values() {
        let f = FieldSpec::Example1;
        assert_eq!(f.vertices(pt(0.0, -1.0)).to_vec(), vec![pt(0.0, 1.0)]);
        assert_eq!(
            f.vertices(pt(0.0, 1.0)).to_vec(),
            vec![pt(0.0, 1.0), pt(-1.0, 0.0)]
        );
        assert_eq!(
            FieldSpec::contraction().vertices(pt(2.0, 0.0)).to_vec(),
            vec![pt(-2.0, 0.0)]
        );
    }

    #[test]
    fn contraction_reaches_half_distance_at_ln2() {
        let f = FieldSpec::contraction();
        let m = Margin::Constant(0.0);
        let inc = PerturbedInclusion::new(&f, &m, window());
        let dt = 1e-4;
        let tr = inc
            .integrate(pt(2.0, 0.0), &SelectionStrategy::vertex(0), dt, 2f64.ln(), Direction::Forward)
            .unwrap();
        assert_abs_diff_eq!(tr.endpoint().x, 1.0, epsilon = 2.0 * dt);
        assert_abs_diff_eq!(*tr.times.last().unwrap(), 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn constant_field_endpoint() {
        let f = FieldSpec::constant(&[pt(1.0, 0.0)]);
        let m = Margin::Constant(0.0);
        let inc = PerturbedInclusion::new(&f, &m, window());
        let tr = inc
            .integrate(pt(0.0, 0.0), &SelectionStrategy::vertex(0), 1e-3, 1.0, Direction::Forward)
            .unwrap();
        assert_abs_diff_eq!(tr.endpoint().x, 1.0, epsilon = 1e-9);
        assert_eq!(tr.endpoint().y, 0.0);
    }

    #[test]
    fn example1_vertex_selection_climbs_to_axis() {
        let f = FieldSpec::Example1;
        let m = Margin::Constant(0.0);
        let inc = PerturbedInclusion::new(&f, &m, window());
        let tr = inc
            .integrate(pt(0.0, -1.0), &SelectionStrategy::vertex(0), 1e-3, 1.0, Direction::Forward)
            .unwrap();
        assert_abs_diff_eq!(tr.endpoint().x, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(tr.endpoint().y, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn invalid_steps_and_origins() {
        let f = FieldSpec::Example1;
        let m = Margin::Constant(0.0);
        let inc = PerturbedInclusion::new(&f, &m, window());
        let s = SelectionStrategy::vertex(0);
        assert!(inc.integrate(pt(0.0, 0.0), &s, 0.0, 1.0, Direction::Forward).is_err());
        assert!(inc.integrate(pt(9.0, 0.0), &s, 0.1, 1.0, Direction::Forward).is_err());
    }

    #[test]
    fn window_exit_truncates() {
        let f = FieldSpec::constant(&[pt(1.0, 0.0)]);
        let m = Margin::Constant(0.0);
        let inc = PerturbedInclusion::new(&f, &m, window());
        let tr = inc
            .integrate(pt(3.5, 0.0), &SelectionStrategy::vertex(0), 0.01, 2.0, Direction::Forward)
            .unwrap();
        assert!(tr.truncated);
        assert!(tr.endpoint().x <= 4.0);
    }

    #[test]
    fn backward_integration_follows_negated_field() {
        let f = FieldSpec::contraction();
        let m = Margin::Constant(0.0);
        let inc = PerturbedInclusion::new(&f, &m, window());
        let dt = 1e-4;
        let tr = inc
            .integrate(pt(0.5, 0.0), &SelectionStrategy::vertex(0), dt, 1.0, Direction::Backward)
            .unwrap();
        // Reversed in time the path solves ẋ = −x forward, i.e. grows like e^{t}.
        assert!((tr.endpoint().x - 0.5 * 1f64.exp()).abs() < 1e-3);
        for w in tr.states.windows(2) {
            let inc_dir = (w[1] - w[0]) / tr.dt;
            assert!((inc_dir - w[0]).norm() < 1e-9);
        }
        assert_eq!(tr.signed_time(tr.len() - 1), -*tr.times.last().unwrap());
    }

    #[test]
    fn bundle_has_vertex_trajectories_and_is_deterministic() {
        let f = FieldSpec::Example1;
        let m = Margin::Constant(0.0);
        let inc = PerturbedInclusion::new(&f, &m, window());
        let b = inc.bundle(pt(0.0, 1.0), 0, 1e-2, 0.5, Direction::Forward, 0).unwrap();
        assert!(b.trajectories.len() >= 2);
        let m2 = Margin::Constant(0.3);
        let inc2 = PerturbedInclusion::new(&f, &m2, window());
        let a = inc2.bundle(pt(0.0, 1.0), 32, 1e-2, 0.5, Direction::Forward, 7).unwrap();
        let c = inc2.bundle(pt(0.0, 1.0), 32, 1e-2, 0.5, Direction::Forward, 7).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn contraction_bundle_stays_in_gronwall_band() {
        let f = FieldSpec::contraction();
        let eps = 0.05;
        let m = Margin::Constant(eps);
        let inc = PerturbedInclusion::new(&f, &m, window());
        let (t, dt) = (1.0, 1e-3);
        let x0 = pt(1.5, -0.5);
        let b = inc.bundle(x0, 16, dt, t, Direction::Forward, 3).unwrap();
        let exact = x0 * (-t).exp();
        // |x(t) − e^{−t}x0| ≤ ∫ e^{−(t−s)} ε ds = ε(1 − e^{−t}) for ẋ = −x + ε u.
        let bound = eps * (1.0 - (-t).exp()) + 2.0 * dt;
        for e in b.endpoints() {
            assert!((e - exact).norm() <= bound, "{} > {bound}", (e - exact).norm());
        }
    }

    #[test]
    fn zero_margin_singleton_bundle_collapses() {
        let f = FieldSpec::contraction();
        let m = Margin::Constant(0.0);
        let inc = PerturbedInclusion::new(&f, &m, window());
        let b = inc.bundle(pt(1.0, 1.0), 4, 1e-2, 1.0, Direction::Forward, 1).unwrap();
        let first = b.trajectories[0].endpoint();
        for tr in &b.trajectories {
            assert!((tr.endpoint() - first).norm() < 1e-14);
        }
    }

    #[test]
    fn minkowski_vertices_cases() {
        let f = FieldSpec::constant(&[pt(0.0, 1.0)]);
        let m = Margin::Constant(0.5);
        let inc = PerturbedInclusion::new(&f, &m, window());
        let v = inc.minkowski_vertices(pt(0.0, 0.0), 8).unwrap();
        for expected in [pt(0.5, 1.0), pt(0.0, 1.5), pt(-0.5, 1.0), pt(0.0, 0.5)] {
            assert!(v.iter().any(|p| (p - expected).norm() < 1e-15));
        }
        assert!(inc.minkowski_vertices(pt(0.0, 0.0), 4).is_err());

        let e1 = FieldSpec::Example1;
        let inc = PerturbedInclusion::new(&e1, &m, window());
        let v = inc.minkowski_vertices(pt(0.0, -1.0), 64).unwrap();
        let min_y = v.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
        assert_abs_diff_eq!(min_y, 0.5, epsilon = 1e-15);

        let zero = Margin::Constant(0.0);
        let inc = PerturbedInclusion::new(&e1, &zero, window());
        assert_eq!(
            inc.minkowski_vertices(pt(0.0, 1.0), 16).unwrap(),
            e1.vertices(pt(0.0, 1.0)).to_vec()
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn increments_stay_in_inflated_hull(
            x in -1.5f64..1.5, y in -1.5f64..1.5, eps in 0.0f64..0.4, seed in 0u64..1000,
        ) {
            let f = FieldSpec::Table {
                rows: vec![TableRow {
                    region: Shape::disk(pt(0.5, 0.0), 0.7),
                    vertices: vec![[1.0, 0.0], [0.0, 1.0], [-0.5, -0.5]],
                }],
                default: vec![[-0.3, 0.2], [0.1, -0.4]],
            };
            let m = Margin::Constant(eps);
            let inc = PerturbedInclusion::new(&f, &m, window());
            let b = inc.bundle(pt(x, y), 4, 1e-2, 0.5, Direction::Forward, seed).unwrap();
            for tr in &b.trajectories {
                for w in tr.states.windows(2) {
                    let v = (w[1] - w[0]) / tr.dt;
                    let d = distance_to_hull(&f.vertices(w[0]), v);
                    prop_assert!(d <= eps + 1e-9, "increment off by {d}");
                }
            }
        }

        #[test]
        fn larger_margin_never_loses_endpoints(eps in 0.01f64..0.2, grow in 0.0f64..0.2) {
            // Endpoints of the ε-bundle are attainable by the ε′ ≥ ε inclusion.
            let f = FieldSpec::contraction();
            let small = Margin::Constant(eps);
            let big = Margin::Constant(eps + grow);
            let a = PerturbedInclusion::new(&f, &small, window());
            let b = PerturbedInclusion::new(&f, &big, window());
            let ea = a.bundle(pt(1.0, 0.5), 8, 1e-2, 0.5, Direction::Forward, 11).unwrap();
            let eb = b.bundle(pt(1.0, 0.5), 8, 1e-2, 0.5, Direction::Forward, 11).unwrap();
            let exact = pt(1.0, 0.5) * (-0.5f64).exp();
            let rad = |bb: &SolutionBundle| bb.endpoints().iter()
                .map(|e| (e - exact).norm()).fold(0.0, f64::max);
            prop_assert!(rad(&eb) + 1e-12 >= rad(&ea));
        }
    }
}

