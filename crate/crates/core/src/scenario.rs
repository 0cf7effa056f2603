//! Scenario files: the inclusion, its margins, the initial and unsafe sets,
//! numerical settings and the checks to run.
//!
//! Scenarios are TOML. Everything is validated at load time, including the
//! pointwise ordering `ε₂ < ε₁ < ε̄ < ε̄ₒ` on the cell centers of the window.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::certify::C3Mode;
use crate::grid::{ScalarField, Window};
use crate::inclusion::{FieldSpec, Margin};
use crate::regions::{HalfSpace, Region, Shape};
use crate::{pt, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub cells: [usize; 2],
}

impl WindowSpec {
    pub fn build(&self) -> Result<Window> {
        Window::new(pt(self.lo[0], self.lo[1]), pt(self.hi[0], self.hi[1]), self.cells)
    }
}

/// A margin as written in a scenario: a constant, or samples on a coarse
/// grid spanning the scenario window (row-major, `x` fastest), interpolated
/// bilinearly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MarginSpec {
    Constant(f64),
    Grid { cells: [usize; 2], values: Vec<f64> },
}

impl MarginSpec {
    pub fn build(&self, window: &WindowSpec) -> Result<Margin> {
        match self {
            MarginSpec::Constant(c) => Ok(Margin::Constant(*c)),
            MarginSpec::Grid { cells, values } => {
                let w = Window::new(pt(window.lo[0], window.lo[1]), pt(window.hi[0], window.hi[1]), *cells)?;
                Ok(Margin::Grid(ScalarField::new(w, values.clone())?))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarginsSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_bar_o: Option<MarginSpec>,
    pub eps_bar: MarginSpec,
    pub eps1: MarginSpec,
    pub eps2: MarginSpec,
}

/// Margins built from a [`MarginsSpec`].
#[derive(Clone, Debug, PartialEq)]
pub struct Margins {
    pub eps_bar_o: Option<Margin>,
    pub eps_bar: Margin,
    pub eps1: Margin,
    pub eps2: Margin,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Numerics {
    /// Integration step; `h / (2 v_max)` when absent.
    pub dt: Option<f64>,
    /// Time-to-impact horizon; derived from the band width when absent.
    pub horizon: Option<f64>,
    /// Random strategies per bundle on top of the extremal ones.
    pub n_random: usize,
    pub seed: u64,
    pub u1_width_cells: f64,
    pub u1_hat_width_cells: f64,
    pub quadrature_order: usize,
    pub rho2_scale: f64,
    /// `ρₒ` as a fraction of the smallest `δ` on `∂K_ε̄`.
    pub rho_o_scale: f64,
    /// Width of the Gaussian pass over `ρ₂`, in cells.
    pub rho2_sigma_cells: f64,
    /// Width, in cells, of the Gaussian pass over the signed distance of
    /// `K_ε̄,ρₒ,ε₁` that removes its staircase boundary; 0 disables it.
    pub boundary_smoothing_cells: f64,
    pub reach_directions: usize,
    pub c2_starts: usize,
    pub c3_tol: f64,
    pub c3_mode: C3Mode,
    /// Decrease-slack tolerance; `2(dt + h)` when absent.
    pub decrease_tol: Option<f64>,
}

impl Default for Numerics {
    fn default() -> Self {
        Numerics {
            dt: None,
            horizon: None,
            n_random: 4,
            seed: 0,
            u1_width_cells: 8.0,
            u1_hat_width_cells: 4.0,
            quadrature_order: crate::smoothing::DEFAULT_ORDER,
            rho2_scale: 0.9,
            rho_o_scale: 0.5,
            rho2_sigma_cells: 2.0,
            boundary_smoothing_cells: 1.0,
            reach_directions: 16,
            c2_starts: 100,
            c3_tol: 0.1,
            c3_mode: C3Mode::RateOne,
            decrease_tol: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckName {
    Separation,
    Candidate,
    Consistency,
    C2,
    C3,
    Invariance,
    Simulate,
}

impl CheckName {
    pub const ALL: [CheckName; 7] = [
        CheckName::Separation,
        CheckName::Candidate,
        CheckName::Consistency,
        CheckName::C2,
        CheckName::C3,
        CheckName::Invariance,
        CheckName::Simulate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CheckName::Separation => "separation",
            CheckName::Candidate => "candidate",
            CheckName::Consistency => "consistency",
            CheckName::C2 => "c2",
            CheckName::C3 => "c3",
            CheckName::Invariance => "invariance",
            CheckName::Simulate => "simulate",
        }
    }
}

impl std::str::FromStr for CheckName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        CheckName::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Scenario(format!("unknown check `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSpec {
    pub n_solutions: usize,
    pub horizon: f64,
    /// Integration step; the scenario step when absent.
    pub dt: Option<f64>,
}

impl Default for SimulateSpec {
    fn default() -> Self {
        SimulateSpec {
            n_solutions: 100,
            horizon: 5.0,
            dt: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InvarianceSpec {
    pub n_samples: usize,
    pub directions: usize,
}

impl Default for InvarianceSpec {
    fn default() -> Self {
        InvarianceSpec {
            n_samples: 200,
            directions: 1024,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Checks {
    pub enabled: Vec<CheckName>,
    /// Half-plane whose forward invariance under `F + ε̄ₒ𝔹` is tested.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub invariance_halfspace: Option<HalfSpace>,
    pub invariance: InvarianceSpec,
    pub simulate: SimulateSpec,
}

impl Default for Checks {
    fn default() -> Self {
        Checks {
            enabled: CheckName::ALL.to_vec(),
            invariance_halfspace: None,
            invariance: InvarianceSpec::default(),
            simulate: SimulateSpec::default(),
        }
    }
}

impl Checks {
    pub fn is_enabled(&self, c: CheckName) -> bool {
        self.enabled.contains(&c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub window: WindowSpec,
    pub field: FieldSpec,
    pub margins: MarginsSpec,
    pub initial: Shape,
    #[serde(rename = "unsafe")]
    pub unsafe_set: Shape,
    #[serde(default)]
    pub numerics: Numerics,
    #[serde(default)]
    pub checks: Checks,
}

/// Load and validate a scenario file.
pub fn parse_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Scenario(format!("cannot read {}: {e}", path.display())))?;
    Scenario::from_toml(&text).map_err(|e| match e {
        Error::Scenario(m) => Error::Scenario(format!("{}: {m}", path.display())),
        e => e,
    })
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::Scenario(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Scenario(e.to_string()))
    }

    /// SHA-256 of the canonical serialization, independent of formatting.
    pub fn hash(&self) -> String {
        let canon = self.to_toml().expect("scenario serializes");
        hex::encode(Sha256::digest(canon.as_bytes()))
    }

    pub fn window(&self) -> Result<Window> {
        self.window.build()
    }

    pub fn margins(&self) -> Result<Margins> {
        let w = &self.window;
        Ok(Margins {
            eps_bar_o: self.margins.eps_bar_o.as_ref().map(|m| m.build(w)).transpose()?,
            eps_bar: self.margins.eps_bar.build(w)?,
            eps1: self.margins.eps1.build(w)?,
            eps2: self.margins.eps2.build(w)?,
        })
    }

    pub fn initial_region(&self) -> Result<Region> {
        Ok(self.initial.to_region(self.window()?))
    }

    pub fn unsafe_region(&self) -> Result<Region> {
        Ok(self.unsafe_set.to_region(self.window()?))
    }

    /// Replace the grid resolution by `n × n` cells.
    pub fn with_cells(mut self, n: usize) -> Result<Self> {
        self.window.cells = [n, n];
        self.validate()?;
        Ok(self)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.numerics.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.window()?;
        self.field.validate()?;
        let m = self.margins()?;
        for (name, mm) in [("eps_bar", &m.eps_bar), ("eps1", &m.eps1), ("eps2", &m.eps2)]
            .into_iter()
            .chain(m.eps_bar_o.as_ref().map(|e| ("eps_bar_o", e)))
        {
            mm.validate(true)
                .map_err(|_| Error::Scenario(format!("margin {name} must be positive and finite")))?;
        }
        check_ordering(&w, &m)?;
        for (name, shape) in [("initial", &self.initial), ("unsafe", &self.unsafe_set)] {
            shape.validate()?;
            check_in_window(name, shape, &w)?;
        }
        self.validate_numerics()
    }

    fn validate_numerics(&self) -> Result<()> {
        let n = &self.numerics;
        let bad = |msg: String| Err(Error::Scenario(msg));
        if n.dt.is_some_and(|d| !(d > 0.0)) || n.horizon.is_some_and(|t| !(t > 0.0)) {
            return bad("dt and horizon must be positive".into());
        }
        if !(n.u1_hat_width_cells >= 2.0 && n.u1_width_cells > n.u1_hat_width_cells) {
            return bad(format!(
                "band widths need 2 ≤ u1_hat_width_cells < u1_width_cells, got {} and {}",
                n.u1_hat_width_cells, n.u1_width_cells
            ));
        }
        if !(n.rho2_scale > 0.0 && n.rho2_scale <= 1.0) || !(n.rho_o_scale > 0.0 && n.rho_o_scale <= 1.0) {
            return bad("rho2_scale and rho_o_scale must lie in (0, 1]".into());
        }
        if !(n.rho2_sigma_cells > 0.0) || !(n.boundary_smoothing_cells >= 0.0) || !(n.c3_tol >= 0.0) || n.decrease_tol.is_some_and(|t| !(t >= 0.0)) {
            return bad("smoothing width and tolerances must be nonnegative".into());
        }
        if n.quadrature_order < 2 || n.reach_directions < 8 {
            return bad("quadrature_order must be ≥ 2 and reach_directions ≥ 8".into());
        }
        let s = &self.checks.simulate;
        if s.n_solutions == 0 || !(s.horizon > 0.0) || s.dt.is_some_and(|d| !(d > 0.0)) {
            return bad("simulate needs n_solutions ≥ 1 and positive horizon and dt".into());
        }
        if self.checks.is_enabled(CheckName::Invariance) && self.checks.invariance_halfspace.is_none() {
            return bad("the invariance check needs checks.invariance_halfspace".into());
        }
        Ok(())
    }
}

fn check_ordering(w: &Window, m: &Margins) -> Result<()> {
    let mut chain: Vec<(&str, &Margin)> = vec![("eps2", &m.eps2), ("eps1", &m.eps1), ("eps_bar", &m.eps_bar)];
    if let Some(o) = &m.eps_bar_o {
        chain.push(("eps_bar_o", o));
    }
    for pair in chain.windows(2) {
        let ((na, a), (nb, b)) = (pair[0], pair[1]);
        if let Some(p) = w.centers().find(|&p| !(a.eval(p) < b.eval(p))) {
            return Err(Error::MarginOrdering(format!(
                "{na} = {} is not below {nb} = {} at ({:.4}, {:.4})",
                a.eval(p),
                b.eval(p),
                p.x,
                p.y
            )));
        }
    }
    Ok(())
}

/// Bounded shapes must fit in the window; unbounded ones must meet it.
fn check_in_window(name: &str, shape: &Shape, w: &Window) -> Result<()> {
    let (lo, hi) = (w.lo(), w.hi());
    let inside = |a: [f64; 2], b: [f64; 2]| a[0] >= lo.x && a[1] >= lo.y && b[0] <= hi.x && b[1] <= hi.y;
    let ok = match shape {
        Shape::Disk { center, radius } => inside(
            [center[0] - radius, center[1] - radius],
            [center[0] + radius, center[1] + radius],
        ),
        Shape::Box { lo, hi } => inside(*lo, *hi),
        Shape::Union { parts } => {
            return parts.iter().try_for_each(|p| check_in_window(name, p, w));
        }
        Shape::Halfplane { .. } | Shape::Complement { .. } => !shape.to_region(*w).is_empty(),
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Scenario(format!("{name} set does not fit in the window")))
    }
}
