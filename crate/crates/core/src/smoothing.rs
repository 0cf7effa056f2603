//! Mollification of a nonsmooth barrier into a continuously differentiable
//! one:
//!
//! ```text
//! B(x) = ∫ B_K(x + ρ(x) v) Ψ(v) dv
//! ```
//!
//! with `Ψ(v) = c·exp(−1/(1 − |v|²))` on the unit ball. The integral is a
//! fixed tensor Gauss–Legendre rule restricted to the ball. The gradient is
//! obtained by moving the derivative onto the kernel after the change of
//! variables `w = x + ρ(x)v`:
//!
//! ```text
//! ∇B(x) = ∫ B_K(x + ρv) [ −(∇Ψ(v) + ∇ρ ⟨v, ∇Ψ(v)⟩)/ρ − 2 Ψ(v) ∇ρ/ρ ] dv
//! ```
//!
//! so `B_K` itself is never differentiated. The kernel integrates to zero,
//! which allows subtracting `B(x)` from the integrand, and its discrete first
//! moment is normalized to the identity so linear fields are reproduced to
//! rounding.

use std::num::NonZeroUsize;
use std::sync::OnceLock;

use gauss_quad::legendre::GaussLegendre;
use nalgebra::Matrix2;
use rayon::prelude::*;

use crate::barrier::{shifted_barrier, BarrierField, BarrierFunction, BarrierKind};
use crate::grid::{GaussianSmoothed, ScalarField, Window};
use crate::{pt, Error, Point, Result};

/// Quadrature order per axis.
pub const DEFAULT_ORDER: usize = 17;

fn bump(v: Point) -> f64 {
    let r2 = v.norm_squared();
    if r2 >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - r2)).exp()
    }
}

/// Normalized bump kernel with its quadrature over the unit ball.
#[derive(Clone, Debug)]
pub struct Mollifier {
    c: f64,
    nodes: Vec<Point>,
    /// Area weights `a_q` of the tensor rule.
    area: Vec<f64>,
    /// `Ψ(v_q)`.
    psi: Vec<f64>,
    /// `∇Ψ(v_q)`.
    grad: Vec<Point>,
    /// Inverse of `M = −Σ a_q ∇Ψ(v_q) v_qᵀ`.
    moment_inv: Matrix2<f64>,
}

impl Mollifier {
    pub fn new(order: usize) -> Result<Self> {
        let n = NonZeroUsize::new(order)
            .filter(|n| n.get() >= 2)
            .ok_or_else(|| Error::param("quadrature order must be at least 2"))?;
        let rule = GaussLegendre::new(n);
        let pairs = rule.as_node_weight_pairs();
        let mut nodes = Vec::new();
        let mut area = Vec::new();
        let mut raw = Vec::new();
        for &(y, wy) in pairs {
            for &(x, wx) in pairs {
                let v = pt(x, y);
                let b = bump(v);
                if b > 0.0 {
                    nodes.push(v);
                    area.push(wx * wy);
                    raw.push(b);
                }
            }
        }
        let mass: f64 = area.iter().zip(&raw).map(|(a, b)| a * b).sum();
        if !(mass > 0.0) {
            return Err(Error::Numerical("mollifier quadrature has no mass".into()));
        }
        let c = 1.0 / mass;
        let psi: Vec<f64> = raw.iter().map(|b| c * b).collect();
        let grad: Vec<Point> = nodes
            .iter()
            .zip(&psi)
            .map(|(&v, &p)| {
                let s = 1.0 - v.norm_squared();
                v * (-2.0 * p / (s * s))
            })
            .collect();
        let mut m = Matrix2::zeros();
        for q in 0..nodes.len() {
            m -= grad[q] * nodes[q].transpose() * area[q];
        }
        let moment_inv = m
            .try_inverse()
            .ok_or_else(|| Error::Numerical("singular mollifier moment".into()))?;
        Ok(Mollifier {
            c,
            nodes,
            area,
            psi,
            grad,
            moment_inv,
        })
    }

    /// Shared instance of order [`DEFAULT_ORDER`].
    pub fn standard() -> &'static Mollifier {
        static STANDARD: OnceLock<Mollifier> = OnceLock::new();
        STANDARD.get_or_init(|| Mollifier::new(DEFAULT_ORDER).expect("default order is valid"))
    }

    /// Normalization constant `c`.
    pub fn normalization(&self) -> f64 {
        self.c
    }

    pub fn eval(&self, v: Point) -> f64 {
        self.c * bump(v)
    }

    pub fn gradient(&self, v: Point) -> Point {
        let s = 1.0 - v.norm_squared();
        if s <= 0.0 {
            return Point::zeros();
        }
        v * (-2.0 * self.eval(v) / (s * s))
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    /// Quadrature weights `a_q Ψ(v_q)` of the value integral.
    pub fn weights(&self) -> Vec<f64> {
        self.area.iter().zip(&self.psi).map(|(a, p)| a * p).collect()
    }

    /// Quadrature estimate of `∫Ψ`.
    pub fn mass(&self) -> f64 {
        self.area.iter().zip(&self.psi).map(|(a, p)| a * p).sum()
    }

    /// Discrete first moment `M = −Σ a_q ∇Ψ(v_q) v_qᵀ` (identity in the limit).
    pub fn first_moment(&self) -> Matrix2<f64> {
        self.moment_inv.try_inverse().expect("inverse of an invertible matrix")
    }

    /// Derivative kernel at node `q` for radius `rho` with gradient `grho`.
    #[inline]
    fn kernel(&self, q: usize, rho: f64, grho: Point) -> Point {
        let g = self.grad[q];
        let v = self.nodes[q];
        -(g + grho * v.dot(&g)) / rho - grho * (2.0 * self.psi[q] / rho)
    }
}

/// `Ψ(v)` of the standard mollifier.
pub fn mollifier_eval(v: Point) -> f64 {
    Mollifier::standard().eval(v)
}

/// Value, gradient and lookup diagnostics at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmoothSample {
    pub value: f64,
    pub gradient: Point,
    /// Some quadrature point fell outside the window.
    pub clipped: bool,
    /// Every quadrature point fell outside the window.
    pub degenerate: bool,
}

/// Mollified barrier with samples at the cell centers and pointwise
/// evaluation anywhere in the window.
#[derive(Clone, Debug)]
pub struct SmoothBarrier {
    bk: BarrierField,
    rho2: GaussianSmoothed,
    mollifier: Mollifier,
    values: Vec<f64>,
    gradients: Vec<Point>,
    clip: Vec<bool>,
}

impl SmoothBarrier {
    pub fn window(&self) -> &Window {
        self.bk.window()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn gradients(&self) -> &[Point] {
        &self.gradients
    }

    pub fn clip_flags(&self) -> &[bool] {
        &self.clip
    }

    pub fn source(&self) -> &BarrierField {
        &self.bk
    }

    pub fn shift_radius(&self) -> &GaussianSmoothed {
        &self.rho2
    }

    pub fn at(&self, idx: usize) -> f64 {
        self.values[idx]
    }

    pub fn gradient_at(&self, idx: usize) -> Point {
        self.gradients[idx]
    }

    /// Quadrature evaluation at an arbitrary point.
    pub fn sample(&self, x: Point) -> SmoothSample {
        evaluate(&self.bk, &self.rho2, &self.mollifier, x)
    }

    pub fn value(&self, x: Point) -> f64 {
        self.sample(x).value
    }

    pub fn gradient(&self, x: Point) -> Point {
        self.sample(x).gradient
    }

    /// Cell samples as a barrier field.
    pub fn to_barrier_field(&self) -> BarrierField {
        BarrierField::new(*self.window(), self.values.clone(), self.clip.clone(), BarrierKind::Smoothed)
            .expect("sizes match")
    }
}

impl BarrierFunction for SmoothBarrier {
    fn value(&self, p: Point) -> f64 {
        self.sample(p).value
    }
}

fn evaluate(bk: &BarrierField, rho2: &GaussianSmoothed, m: &Mollifier, x: Point) -> SmoothSample {
    let w = bk.window();
    let (rho, grho) = rho2.eval_with_gradient(x);
    let mut lookups = Vec::with_capacity(m.nodes.len());
    let mut outside = 0;
    let mut value = 0.0;
    for (q, &v) in m.nodes.iter().enumerate() {
        let y = x + v * rho;
        if !w.contains(y) {
            outside += 1;
        }
        let b = bk.eval(y);
        value += m.area[q] * m.psi[q] * b;
        lookups.push(b);
    }
    let mut raw = Point::zeros();
    for (q, &b) in lookups.iter().enumerate() {
        raw += m.kernel(q, rho, grho) * (m.area[q] * (b - value));
    }
    SmoothSample {
        value,
        gradient: m.moment_inv * raw,
        clipped: outside > 0,
        degenerate: outside == m.nodes.len(),
    }
}

fn check_inputs(bk: &BarrierField, rho2: &GaussianSmoothed) -> Result<()> {
    if rho2.raw().window() != bk.window() {
        return Err(Error::param("shift radius lives on a different window"));
    }
    if !(rho2.raw().min() > 0.0) {
        return Err(Error::param("shift radius must be positive"));
    }
    if let Some(v) = bk.values().iter().find(|v| !v.is_finite()) {
        return Err(Error::pre(format!("barrier to smooth has non-finite sample {v}")));
    }
    Ok(())
}

/// Mollify `bk` with shift radius `rho2`, sampling value and analytic
/// gradient at every cell center.
pub fn smooth_barrier(bk: &BarrierField, rho2: &GaussianSmoothed, m: &Mollifier) -> Result<SmoothBarrier> {
    check_inputs(bk, rho2)?;
    let w = *bk.window();
    let samples: Vec<SmoothSample> = (0..w.len())
        .into_par_iter()
        .map(|c| evaluate(bk, rho2, m, w.center(c)))
        .collect();
    if samples.iter().any(|s| s.degenerate) {
        return Err(Error::Numerical("all quadrature points left the window".into()));
    }
    Ok(SmoothBarrier {
        bk: bk.clone(),
        rho2: rho2.clone(),
        mollifier: m.clone(),
        values: samples.iter().map(|s| s.value).collect(),
        gradients: samples.iter().map(|s| s.gradient).collect(),
        clip: samples.iter().map(|s| s.clipped).collect(),
    })
}

/// Same integral as [`smooth_barrier`], assembled from the shifted barriers
/// `B^{v_q}` of the quadrature nodes.
pub fn averaged_shift_barrier(bk: &BarrierField, rho2: &GaussianSmoothed, m: &Mollifier) -> Result<SmoothBarrier> {
    check_inputs(bk, rho2)?;
    let w = *bk.window();
    let (rho, grho): (Vec<f64>, Vec<Point>) = (0..w.len())
        .into_par_iter()
        .map(|c| rho2.eval_with_gradient(w.center(c)))
        .unzip();
    let rho_field = ScalarField::new(w, rho.clone())?;
    let shifted = |q: usize| shifted_barrier(bk, &rho_field, m.nodes[q]);

    let mut values = vec![0.0; w.len()];
    let mut hits = vec![0usize; w.len()];
    for q in 0..m.nodes.len() {
        let s = shifted(q)?;
        let wq = m.area[q] * m.psi[q];
        for c in 0..w.len() {
            values[c] += wq * s.at(c);
            hits[c] += s.is_clipped(c) as usize;
        }
    }
    if hits.contains(&m.nodes.len()) {
        return Err(Error::Numerical("all quadrature points left the window".into()));
    }
    let mut raw = vec![Point::zeros(); w.len()];
    for q in 0..m.nodes.len() {
        let s = shifted(q)?;
        for c in 0..w.len() {
            raw[c] += m.kernel(q, rho[c], grho[c]) * (m.area[q] * (s.at(c) - values[c]));
        }
    }
    Ok(SmoothBarrier {
        bk: bk.clone(),
        rho2: rho2.clone(),
        mollifier: m.clone(),
        values,
        gradients: raw.into_iter().map(|g| m.moment_inv * g).collect(),
        clip: hits.into_iter().map(|h| h > 0).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn radial_mass_oracle() -> f64 {
        // ∫ exp(−1/(1−r²)) 2πr dr by composite Simpson.
        let n = 20_000;
        let h = 1.0 / n as f64;
        let f = |r: f64| {
            if r >= 1.0 {
                0.0
            } else {
                (-1.0 / (1.0 - r * r)).exp() * 2.0 * std::f64::consts::PI * r
            }
        };
        let mut s = f(0.0) + f(1.0);
        for i in 1..n {
            s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn mollifier_support_center_and_mass() {
        let m = Mollifier::standard();
        assert_eq!(mollifier_eval(pt(1.5, 0.0)), 0.0);
        assert_eq!(mollifier_eval(pt(0.0, 1.0)), 0.0);
        assert_abs_diff_eq!(mollifier_eval(pt(0.0, 0.0)), m.normalization() * (-1f64).exp(), epsilon = 1e-15);
        assert!((m.mass() - 1.0).abs() <= 1e-6);
        assert!(m.weights().iter().all(|&w| w > 0.0));
        assert!(m.nodes().iter().all(|v| v.norm() < 1.0));
        // The self-normalized constant agrees with the radial integral.
        let c_oracle = 1.0 / radial_mass_oracle();
        assert!((m.normalization() / c_oracle - 1.0).abs() < 1e-2);
    }

    #[test]
    fn mollifier_is_radial_and_gradient_matches_differences() {
        let m = Mollifier::standard();
        let a = m.eval(pt(0.3, 0.4));
        assert_abs_diff_eq!(a, m.eval(pt(0.5, 0.0)), epsilon = 1e-15);
        assert_abs_diff_eq!(a, m.eval(pt(-0.4, -0.3)), epsilon = 1e-15);
        let v = pt(0.2, -0.5);
        let s = 1e-6;
        let fd = pt(
            (m.eval(v + pt(s, 0.0)) - m.eval(v - pt(s, 0.0))) / (2.0 * s),
            (m.eval(v + pt(0.0, s)) - m.eval(v - pt(0.0, s))) / (2.0 * s),
        );
        assert!((m.gradient(v) - fd).norm() < 1e-7);
    }

    #[test]
    fn raw_first_moment_is_close_to_identity() {
        let mm = Mollifier::standard().first_moment();
        assert!((mm - Matrix2::identity()).amax() < 1e-2);
        assert_abs_diff_eq!(mm[(0, 1)], 0.0, epsilon = 1e-12);
    }

    fn rho_const(w: Window, r: f64) -> GaussianSmoothed {
        GaussianSmoothed::new(ScalarField::constant(w, r), 2.0 * w.h()).unwrap()
    }

    #[test]
    fn constant_field_is_reproduced() {
        let w = Window::centered(1.0, 32).unwrap();
        let bk = BarrierField::from_field(&ScalarField::constant(w, 7.0), BarrierKind::Extended);
        let sb = smooth_barrier(&bk, &rho_const(w, 0.1), Mollifier::standard()).unwrap();
        for c in 0..w.len() {
            assert_abs_diff_eq!(sb.at(c), 7.0, epsilon = 1e-12);
            assert!(sb.gradient_at(c).norm() <= 1e-12);
        }
    }

    #[test]
    fn linear_field_is_reproduced_with_variable_radius() {
        let w = Window::centered(1.0, 64).unwrap();
        let a = pt(1.5, -0.7);
        let bk = BarrierField::from_field(&ScalarField::from_fn(w, |p| a.dot(&p) + 0.2), BarrierKind::Extended);
        let rho = GaussianSmoothed::new(
            ScalarField::from_fn(w, |p| 0.05 + 0.03 * (2.0 * p.x).sin() * p.y.cos()),
            2.0 * w.h(),
        )
        .unwrap();
        let sb = smooth_barrier(&bk, &rho, Mollifier::standard()).unwrap();
        for c in 0..w.len() {
            let p = w.center(c);
            if p.amax() > 0.8 {
                continue;
            }
            assert_abs_diff_eq!(sb.at(c), a.dot(&p) + 0.2, epsilon = 1e-6);
            assert!((sb.gradient_at(c) - a).norm() <= 1e-6, "{:?}", sb.gradient_at(c));
        }
    }

    #[test]
    fn smoothing_is_linear_in_the_barrier() {
        let w = Window::centered(1.0, 32).unwrap();
        let f1 = ScalarField::from_fn(w, |p| (3.0 * p.x).sin() + p.y.abs());
        let f2 = ScalarField::from_fn(w, |p| p.norm() - 0.5);
        let combo = f1.zip_with(&f2, |a, b| 2.0 * a - 0.5 * b).unwrap();
        let rho = rho_const(w, 0.08);
        let m = Mollifier::standard();
        let s = |f: &ScalarField| smooth_barrier(&BarrierField::from_field(f, BarrierKind::Extended), &rho, m).unwrap();
        let (s1, s2, sc) = (s(&f1), s(&f2), s(&combo));
        for c in 0..w.len() {
            assert_abs_diff_eq!(sc.at(c), 2.0 * s1.at(c) - 0.5 * s2.at(c), epsilon = 1e-12);
        }
    }

    #[test]
    fn averaged_shifts_agree_and_respect_envelope() {
        let w = Window::centered(1.0, 48).unwrap();
        let f = ScalarField::from_fn(w, |p| if p.norm() < 0.4 { -1.0 } else { p.x + 2.0 * p.y * p.y });
        let bk = BarrierField::from_field(&f, BarrierKind::Extended);
        let rho = GaussianSmoothed::new(ScalarField::from_fn(w, |p| 0.06 + 0.02 * p.x), 2.0 * w.h()).unwrap();
        let m = Mollifier::standard();
        let a = smooth_barrier(&bk, &rho, m).unwrap();
        let b = averaged_shift_barrier(&bk, &rho, m).unwrap();
        for c in 0..w.len() {
            assert_abs_diff_eq!(a.at(c), b.at(c), epsilon = 1e-9);
            assert!((a.gradient_at(c) - b.gradient_at(c)).norm() <= 1e-9);
            assert_eq!(a.clip_flags()[c], b.clip_flags()[c]);
            let x = w.center(c);
            let r = rho.eval(x);
            let ys = m.nodes().iter().map(|&v| bk.eval(x + v * r));
            let (lo, hi) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), y| (l.min(y), h.max(y)));
            assert!(lo - 1e-12 <= a.at(c) && a.at(c) <= hi + 1e-12);
        }
    }

    fn central_difference(f: impl Fn(Point) -> f64, p: Point, s: f64) -> Point {
        pt(
            (f(p + pt(s, 0.0)) - f(p - pt(s, 0.0))) / (2.0 * s),
            (f(p + pt(0.0, s)) - f(p - pt(0.0, s))) / (2.0 * s),
        )
    }

    #[test]
    fn gradient_matches_differences_on_smooth_field() {
        let w = Window::centered(1.0, 64).unwrap();
        let f = ScalarField::from_fn(w, |p| (2.0 * p.x).sin() * (1.0 + p.y * p.y));
        let bk = BarrierField::from_field(&f, BarrierKind::Extended);
        let rho = GaussianSmoothed::new(ScalarField::from_fn(w, |p| 0.1 + 0.02 * p.y), 2.0 * w.h()).unwrap();
        let sb = smooth_barrier(&bk, &rho, Mollifier::standard()).unwrap();
        for &p in &[pt(0.3, 0.1), pt(-0.2, 0.45), pt(0.05, -0.6)] {
            let fd = central_difference(|x| sb.value(x), p, 1e-3);
            let g = sb.gradient(p);
            assert!((g - fd).norm() / fd.norm().max(1.0) <= 1e-3, "{p:?}: {g:?} vs {fd:?}");
        }
    }

    #[test]
    fn gradient_tracks_the_exact_integral_across_kinks() {
        // With a kink inside the ball the fixed-node value is only piecewise
        // smooth; the kernel form follows the exact integral instead, here
        // resolved by a much finer rule.
        let w = Window::centered(1.0, 64).unwrap();
        let f = ScalarField::from_fn(w, |p| (p.norm() - 0.5).max(-0.2) + 0.3 * p.x.abs());
        let bk = BarrierField::from_field(&f, BarrierKind::Extended);
        let rho = rho_const(w, 0.1);
        let coarse = smooth_barrier(&bk, &rho, Mollifier::standard()).unwrap();
        let fine_m = Mollifier::new(201).unwrap();
        for &p in &[pt(0.3, 0.1), pt(-0.2, 0.45), pt(0.05, -0.6), pt(0.51, 0.0)] {
            let fine = |x: Point| evaluate(&bk, &rho, &fine_m, x).value;
            let reference = central_difference(fine, p, 1e-3);
            let g = coarse.gradient(p);
            assert!((g - reference).norm() / reference.norm().max(1.0) <= 1e-2, "{p:?}: {g:?} vs {reference:?}");
        }
    }

    #[test]
    fn rejects_nonpositive_radius_and_nan_samples() {
        let w = Window::centered(1.0, 16).unwrap();
        let bk = BarrierField::from_field(&ScalarField::constant(w, 1.0), BarrierKind::Extended);
        let zero = GaussianSmoothed::new(ScalarField::constant(w, 0.0), 0.1).unwrap();
        assert!(smooth_barrier(&bk, &zero, Mollifier::standard()).is_err());
        let nan = BarrierField::from_field(&ScalarField::constant(w, f64::NAN), BarrierKind::Extended);
        assert!(smooth_barrier(&nan, &rho_const(w, 0.1), Mollifier::standard()).is_err());
    }
}
