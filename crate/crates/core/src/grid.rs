//! Uniform cell grids over a rectangular window and per-cell scalar fields.

use serde::{Deserialize, Serialize};

use crate::{pt, Error, Point, Result};

/// Rectangular window `[lo, hi]` split into `cells[0] × cells[1]` uniform cells.
///
/// Cells are indexed row-major: `idx = j * nx + i` where `i` runs along the
/// first axis. Cell values live at cell centers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    lo: [f64; 2],
    hi: [f64; 2],
    cells: [usize; 2],
}

impl Window {
    pub fn new(lo: Point, hi: Point, cells: [usize; 2]) -> Result<Self> {
        if !(lo.x < hi.x && lo.y < hi.y) {
            return Err(Error::InvalidWindow(format!(
                "lo {:?} must be componentwise below hi {:?}",
                [lo.x, lo.y],
                [hi.x, hi.y]
            )));
        }
        if !(lo.iter().chain(hi.iter()).all(|v| v.is_finite())) {
            return Err(Error::InvalidWindow("bounds must be finite".into()));
        }
        if cells[0] < 2 || cells[1] < 2 {
            return Err(Error::InvalidWindow(format!(
                "need at least 2 cells per axis, got {cells:?}"
            )));
        }
        Ok(Window {
            lo: [lo.x, lo.y],
            hi: [hi.x, hi.y],
            cells,
        })
    }

    /// Square window `[-half, half]²` with `n` cells per axis.
    pub fn centered(half: f64, n: usize) -> Result<Self> {
        Self::new(pt(-half, -half), pt(half, half), [n, n])
    }

    pub fn lo(&self) -> Point {
        pt(self.lo[0], self.lo[1])
    }

    pub fn hi(&self) -> Point {
        pt(self.hi[0], self.hi[1])
    }

    pub fn cells(&self) -> [usize; 2] {
        self.cells
    }

    #[inline]
    pub fn nx(&self) -> usize {
        self.cells[0]
    }

    #[inline]
    pub fn ny(&self) -> usize {
        self.cells[1]
    }

    /// Total number of cells.
    #[inline]
    pub fn len(&self) -> usize {
        self.cells[0] * self.cells[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cell edge lengths per axis.
    #[inline]
    pub fn cell_size(&self) -> Point {
        pt(
            (self.hi[0] - self.lo[0]) / self.cells[0] as f64,
            (self.hi[1] - self.lo[1]) / self.cells[1] as f64,
        )
    }

    /// The coarser of the two cell edge lengths.
    #[inline]
    pub fn h(&self) -> f64 {
        let s = self.cell_size();
        s.x.max(s.y)
    }

    /// Length of one cell diagonal.
    #[inline]
    pub fn cell_diagonal(&self) -> f64 {
        self.cell_size().norm()
    }

    pub fn diameter(&self) -> f64 {
        (self.hi() - self.lo()).norm()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.cells[0] + i
    }

    #[inline]
    pub fn ij(&self, idx: usize) -> (usize, usize) {
        (idx % self.cells[0], idx / self.cells[0])
    }

    #[inline]
    pub fn center_ij(&self, i: usize, j: usize) -> Point {
        let s = self.cell_size();
        pt(
            self.lo[0] + (i as f64 + 0.5) * s.x,
            self.lo[1] + (j as f64 + 0.5) * s.y,
        )
    }

    #[inline]
    pub fn center(&self, idx: usize) -> Point {
        let (i, j) = self.ij(idx);
        self.center_ij(i, j)
    }

    pub fn centers(&self) -> impl Iterator<Item = Point> + '_ {
        (0..self.len()).map(move |k| self.center(k))
    }

    #[inline]
    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.lo[0] && p.x <= self.hi[0] && p.y >= self.lo[1] && p.y <= self.hi[1]
    }

    pub fn check(&self, p: Point) -> Result<()> {
        if self.contains(p) {
            Ok(())
        } else {
            Err(Error::OutOfWindow { x: p.x, y: p.y })
        }
    }

    /// Index of the cell containing `p` (points on the upper edge belong to
    /// the last cell).
    pub fn cell_of(&self, p: Point) -> Option<usize> {
        if !self.contains(p) {
            return None;
        }
        let s = self.cell_size();
        let i = (((p.x - self.lo[0]) / s.x) as usize).min(self.cells[0] - 1);
        let j = (((p.y - self.lo[1]) / s.y) as usize).min(self.cells[1] - 1);
        Some(self.index(i, j))
    }

    /// True if the cell touches the window border.
    pub fn is_edge_cell(&self, idx: usize) -> bool {
        let (i, j) = self.ij(idx);
        i == 0 || j == 0 || i + 1 == self.cells[0] || j + 1 == self.cells[1]
    }

    /// 4-connected neighbours.
    pub fn neighbors4(&self, idx: usize) -> impl Iterator<Item = usize> + '_ {
        self.neighbors(idx, &[(1, 0), (-1, 0), (0, 1), (0, -1)])
    }

    /// 8-connected neighbours.
    pub fn neighbors8(&self, idx: usize) -> impl Iterator<Item = usize> + '_ {
        self.neighbors(
            idx,
            &[
                (1, 0),
                (-1, 0),
                (0, 1),
                (0, -1),
                (1, 1),
                (1, -1),
                (-1, 1),
                (-1, -1),
            ],
        )
    }

    fn neighbors<'a>(
        &'a self,
        idx: usize,
        offsets: &'a [(isize, isize)],
    ) -> impl Iterator<Item = usize> + 'a {
        let (i, j) = self.ij(idx);
        offsets.iter().filter_map(move |&(di, dj)| self.offset(i, j, di, dj))
    }

    #[inline]
    pub fn offset(&self, i: usize, j: usize, di: isize, dj: isize) -> Option<usize> {
        let ni = i as isize + di;
        let nj = j as isize + dj;
        if ni < 0 || nj < 0 || ni >= self.cells[0] as isize || nj >= self.cells[1] as isize {
            None
        } else {
            Some(self.index(ni as usize, nj as usize))
        }
    }

    /// Bilinear stencil around `p`: the four cell indices and their weights.
    /// Beyond the outermost cell centers the value is held constant.
    pub(crate) fn stencil(&self, p: Point) -> Stencil {
        let s = self.cell_size();
        let (i0, tx, dx) = axis_stencil((p.x - self.lo[0]) / s.x - 0.5, self.cells[0], s.x);
        let (j0, ty, dy) = axis_stencil((p.y - self.lo[1]) / s.y - 0.5, self.cells[1], s.y);
        Stencil {
            idx: [
                self.index(i0, j0),
                self.index(i0 + 1, j0),
                self.index(i0, j0 + 1),
                self.index(i0 + 1, j0 + 1),
            ],
            tx,
            ty,
            dx,
            dy,
        }
    }

    /// Bilinear interpolation of per-cell `values` at `p`.
    pub fn interpolate(&self, values: &[f64], p: Point) -> f64 {
        self.stencil(p).value(values)
    }

    /// Gradient of the bilinear interpolant (zero along clamped axes).
    pub fn interpolate_gradient(&self, values: &[f64], p: Point) -> Point {
        self.stencil(p).gradient(values)
    }
}

fn axis_stencil(u: f64, n: usize, step: f64) -> (usize, f64, f64) {
    let max0 = (n - 2) as f64;
    if u <= 0.0 {
        (0, 0.0, 0.0)
    } else if u >= max0 + 1.0 {
        (n - 2, 1.0, 0.0)
    } else {
        let i0 = u.floor().min(max0);
        (i0 as usize, u - i0, 1.0 / step)
    }
}

pub(crate) struct Stencil {
    idx: [usize; 4],
    tx: f64,
    ty: f64,
    /// d(tx)/dx, zero when clamped.
    dx: f64,
    dy: f64,
}

impl Stencil {
    #[inline]
    pub(crate) fn value(&self, v: &[f64]) -> f64 {
        let [a, b, c, d] = self.idx.map(|k| v[k]);
        let bottom = a + (b - a) * self.tx;
        let top = c + (d - c) * self.tx;
        bottom + (top - bottom) * self.ty
    }

    #[inline]
    pub(crate) fn gradient(&self, v: &[f64]) -> Point {
        let [a, b, c, d] = self.idx.map(|k| v[k]);
        let gx = ((b - a) * (1.0 - self.ty) + (d - c) * self.ty) * self.dx;
        let gy = ((c - a) * (1.0 - self.tx) + (d - b) * self.tx) * self.dy;
        pt(gx, gy)
    }
}

/// A real value per cell, interpolated bilinearly between cell centers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    window: Window,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(window: Window, values: Vec<f64>) -> Result<Self> {
        if values.len() != window.len() {
            return Err(Error::param(format!(
                "field has {} samples, window has {} cells",
                values.len(),
                window.len()
            )));
        }
        Ok(ScalarField { window, values })
    }

    pub fn constant(window: Window, value: f64) -> Self {
        ScalarField {
            window,
            values: vec![value; window.len()],
        }
    }

    pub fn from_fn(window: Window, f: impl Fn(Point) -> f64) -> Self {
        ScalarField {
            window,
            values: window.centers().map(f).collect(),
        }
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn at(&self, idx: usize) -> f64 {
        self.values[idx]
    }

    /// Bilinear interpolation; constant extrapolation beyond the outer centers.
    #[inline]
    pub fn eval(&self, p: Point) -> f64 {
        self.window.interpolate(&self.values, p)
    }

    pub fn gradient(&self, p: Point) -> Point {
        self.window.interpolate_gradient(&self.values, p)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        ScalarField {
            window: self.window,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Pointwise combination with another field on the same window.
    pub fn zip_with(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.window != other.window {
            return Err(Error::param("fields live on different windows"));
        }
        Ok(ScalarField {
            window: self.window,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }
}

/// Continuous Gaussian kernel regression over the samples of a
/// [`ScalarField`]; infinitely differentiable, so its gradient is exact.
#[derive(Clone, Debug)]
pub struct GaussianSmoothed {
    raw: ScalarField,
    sigma: f64,
}

/// Kernel support in units of sigma.
const GAUSS_CUTOFF: f64 = 5.0;

impl GaussianSmoothed {
    pub fn new(raw: ScalarField, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::param("smoothing sigma must be positive"));
        }
        Ok(GaussianSmoothed { raw, sigma })
    }

    pub fn raw(&self) -> &ScalarField {
        &self.raw
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Value and gradient at `p`.
    pub fn eval_with_gradient(&self, p: Point) -> (f64, Point) {
        let w = &self.raw.window;
        let s = w.cell_size();
        let reach = GAUSS_CUTOFF * self.sigma;
        let lo = w.lo();
        let i_lo = (((p.x - reach - lo.x) / s.x - 0.5).floor().max(0.0)) as usize;
        let j_lo = (((p.y - reach - lo.y) / s.y - 0.5).floor().max(0.0)) as usize;
        let i_hi = ((((p.x + reach - lo.x) / s.x - 0.5).ceil()).max(0.0) as usize).min(w.nx() - 1);
        let j_hi = ((((p.y + reach - lo.y) / s.y - 0.5).ceil()).max(0.0) as usize).min(w.ny() - 1);
        let inv2s2 = 0.5 / (self.sigma * self.sigma);
        let (mut sw, mut swv) = (0.0, 0.0);
        let (mut gw, mut gwv) = (Point::zeros(), Point::zeros());
        for j in j_lo..=j_hi {
            for i in i_lo..=i_hi {
                let c = w.center_ij(i, j);
                let d = p - c;
                let r2 = d.norm_squared();
                if r2 > reach * reach {
                    continue;
                }
                let k = (-r2 * inv2s2).exp();
                let v = self.raw.values[w.index(i, j)];
                // dk/dp = -k (p - c) / sigma²
                let dk = d * (-2.0 * inv2s2 * k);
                sw += k;
                swv += k * v;
                gw += dk;
                gwv += dk * v;
            }
        }
        if sw <= 0.0 {
            return (self.raw.eval(p), Point::zeros());
        }
        let value = swv / sw;
        let grad = (gwv - gw * value) / sw;
        (value, grad)
    }

    pub fn eval(&self, p: Point) -> f64 {
        self.eval_with_gradient(p).0
    }

    /// Values at the cell centers.
    pub fn sample(&self) -> ScalarField {
        let w = *self.raw.window();
        ScalarField {
            window: w,
            values: (0..w.len()).map(|k| self.eval(w.center(k))).collect(),
        }
    }
}
