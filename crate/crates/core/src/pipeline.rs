//! Orchestration of the construction and of the checks.
//!
//! Stages, in order:
//!
//! * `reach`: `K_ε̄`, the reachable set of `X_o` under `F + ε̄𝔹`;
//! * `barrier`: bands `Û₁ ⊂ U₁` around `∂K_ε̄`, the inflation radius `δ`
//!   (`K_ε̄,δ` stays inside `K_ε̄ ∪ Û₁` and away from `X_u`), the radius
//!   `ρₒ`, the set `K = K_ε̄,ρₒ,ε₁` reached from `K_ε̄ + ρₒ𝔹` under
//!   `F + ε₁𝔹`, the time-to-impact `B̂_K` of `K` under `F + ε₂𝔹` on `U₁`
//!   and its extension `B_K`;
//! * `smooth`: the shift radius `ρ₂ ≤ min{ε₂, ρₒ}` and the mollified `B`.
//!
//! Every stage error is tagged with the stage name.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::barrier::{extend_barrier, shift_radius, time_to_impact_field, BarrierField, ImpactQuery};
use crate::certify::{
    check_c2, check_c3, check_candidate, check_consistency, check_invariance_tangent, check_nesting, check_separation, check_subset,
    simulate_safety, BoundarySampleSet, CertificateReport, DecreaseCheck, SimulationCheck, Verdict, SAMPLING_NOTE,
};
use crate::grid::{GaussianSmoothed, ScalarField, Window};
use crate::inclusion::{FieldSpec, Margin, PerturbedInclusion};
use crate::reachability::{reach_inflate, reach_set_infinite, ReachConfig, ReachResult};
use crate::regions::Region;
use crate::scenario::{CheckName, Margins, Scenario};
use crate::smoothing::{smooth_barrier, Mollifier, SmoothBarrier, DEFAULT_ORDER};
use crate::{io, Error, Result};

/// Scenario objects built on the grid.
#[derive(Clone, Debug)]
pub struct Setup {
    pub scenario: Scenario,
    pub window: Window,
    pub field: FieldSpec,
    pub margins: Margins,
    pub initial: Region,
    pub unsafe_set: Region,
}

impl Setup {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        scenario.validate()?;
        let initial = scenario.initial_region()?;
        let unsafe_set = scenario.unsafe_region()?;
        if initial.is_empty() || unsafe_set.is_empty() {
            return Err(Error::Scenario("initial and unsafe sets must cover at least one cell".into()));
        }
        Ok(Setup {
            window: scenario.window()?,
            field: scenario.field.clone(),
            margins: scenario.margins()?,
            scenario: scenario.clone(),
            initial,
            unsafe_set,
        })
    }

    pub fn inclusion<'a>(&'a self, margin: &'a Margin) -> PerturbedInclusion<'a> {
        PerturbedInclusion::new(&self.field, margin, self.window)
    }

    /// Largest margin of the scenario, used by the invariance and
    /// simulation checks.
    pub fn reference_margin(&self) -> &Margin {
        self.margins.eps_bar_o.as_ref().unwrap_or(&self.margins.eps_bar)
    }

    fn reach_config(&self, inc: &PerturbedInclusion<'_>) -> ReachConfig {
        let mut cfg = ReachConfig::for_inclusion(inc);
        cfg.directions_m = self.scenario.numerics.reach_directions;
        cfg
    }

    fn h(&self) -> f64 {
        self.window.h()
    }
}

/// Output of the `barrier` stage.
#[derive(Clone, Debug)]
pub struct BarrierStage {
    pub u1: Region,
    pub u1_hat: Region,
    pub delta: ScalarField,
    pub k_delta: Region,
    pub rho_o: f64,
    pub k_final: ReachResult,
    pub query: ImpactQuery,
    pub bhat: BarrierField,
    pub bk: BarrierField,
    /// The band was widened once because some band cell clipped.
    pub widened: bool,
}

/// Every intermediate object of a run.
#[derive(Clone, Debug)]
pub struct Construction {
    pub setup: Setup,
    pub k_bar: ReachResult,
    pub barrier: Option<BarrierStage>,
    pub smooth: Option<SmoothBarrier>,
}

pub fn reach_stage(setup: &Setup) -> Result<ReachResult> {
    let inc = setup.inclusion(&setup.margins.eps_bar);
    let cfg = setup.reach_config(&inc);
    reach_set_infinite(&inc, &setup.initial, &cfg).map_err(|e| e.in_stage("reach"))
}

pub fn barrier_stage(setup: &Setup, k_bar: &ReachResult) -> Result<BarrierStage> {
    barrier_stage_inner(setup, k_bar).map_err(|e| e.in_stage("barrier"))
}

fn barrier_stage_inner(setup: &Setup, k_bar: &ReachResult) -> Result<BarrierStage> {
    let n = &setup.scenario.numerics;
    let h = setup.h();
    let k = &k_bar.region;
    let u1_width = n.u1_width_cells * h;
    let u1_hat = k.boundary_band(n.u1_hat_width_cells * h)?;
    let mut u1 = k.boundary_band(u1_width)?;

    // K_ε̄,δ must stay in K_ε̄ ∪ Û₁ and off a one-cell ring around X_u.
    let outer = k.union(&u1_hat)?.difference(&setup.unsafe_set.dilate(1))?;
    let delta = k.margin_inside(&outer)?;
    let k_delta = k.inflate(&delta)?;

    // ρₒ is constant: a fraction of the smallest δ on ∂K_ε̄, and small
    // enough that Û₁ + ρₒ𝔹 stays in U₁.
    let delta_min = k
        .boundary_cells()
        .iter()
        .filter(|&&c| k.is_occupied(c))
        .map(|&c| delta.at(c))
        .fold(f64::INFINITY, f64::min);
    let rho_o = (n.rho_o_scale * delta_min).min((n.u1_width_cells - n.u1_hat_width_cells - 1.0) * h);
    if !(rho_o > 0.0) || !rho_o.is_finite() {
        return Err(Error::Numerical(format!("no admissible ρₒ (smallest δ on the boundary {delta_min})")));
    }

    let inc1 = setup.inclusion(&setup.margins.eps1);
    let cfg1 = setup.reach_config(&inc1);
    let mut k_final = reach_inflate(&inc1, k, &ScalarField::constant(setup.window, rho_o), &cfg1)?;
    if n.boundary_smoothing_cells > 0.0 {
        k_final.region = k_final.region.smoothed(n.boundary_smoothing_cells * h)?;
    }

    let inc2 = setup.inclusion(&setup.margins.eps2);
    let mut query = ImpactQuery::heuristic(&inc2, u1_width, n.n_random, n.seed);
    if let Some(dt) = n.dt {
        query.dt = dt;
    }
    if let Some(t) = n.horizon {
        query.horizon = t;
    }
    let mut bhat = time_to_impact_field(&k_final.region, &u1, &inc2, &query)?;
    let mut widened = false;
    if bhat.clipped_count() > 0 {
        if let Ok(wide) = k.boundary_band(2.0 * u1_width) {
            let q2 = ImpactQuery {
                horizon: if n.horizon.is_some() { query.horizon } else { 2.0 * query.horizon },
                ..query
            };
            let b2 = time_to_impact_field(&k_final.region, &wide, &inc2, &q2)?;
            u1 = wide;
            bhat = b2;
            query = q2;
            widened = true;
        }
    }
    let bk = extend_barrier(&bhat, &u1, &k_final.region)?;
    Ok(BarrierStage {
        u1,
        u1_hat,
        delta,
        k_delta,
        rho_o,
        k_final,
        query,
        bhat,
        bk,
        widened,
    })
}

pub fn smooth_stage(setup: &Setup, b: &BarrierStage) -> Result<SmoothBarrier> {
    let run = || {
        let n = &setup.scenario.numerics;
        let rho_o = ScalarField::constant(setup.window, b.rho_o);
        let rho2: GaussianSmoothed =
            shift_radius(&setup.margins.eps2, &rho_o, n.rho2_scale, n.rho2_sigma_cells * setup.h())?;
        let custom;
        let m = if n.quadrature_order == DEFAULT_ORDER {
            Mollifier::standard()
        } else {
            custom = Mollifier::new(n.quadrature_order)?;
            &custom
        };
        smooth_barrier(&b.bk, &rho2, m)
    };
    run().map_err(|e| e.in_stage("smooth"))
}

/// Runs every stage.
pub fn construct(scenario: &Scenario) -> Result<Construction> {
    let setup = Setup::new(scenario)?;
    let k_bar = reach_stage(&setup)?;
    let barrier = barrier_stage(&setup, &k_bar)?;
    let smooth = smooth_stage(&setup, &barrier)?;
    Ok(Construction {
        setup,
        k_bar,
        barrier: Some(barrier),
        smooth: Some(smooth),
    })
}

/// Builds the certificate and runs every enabled check.
pub fn certify_pipeline(scenario: &Scenario) -> Result<(CertificateReport, Construction)> {
    let c = construct(scenario)?;
    let report = certify(&c).map_err(|e| e.in_stage("certify"))?;
    Ok((report, c))
}

fn certify(c: &Construction) -> Result<CertificateReport> {
    let s = &c.setup;
    let n = &s.scenario.numerics;
    let checks = &s.scenario.checks;
    let b = c.barrier.as_ref().ok_or_else(|| Error::pre("barrier stage missing"))?;
    let smooth = c.smooth.as_ref().ok_or_else(|| Error::pre("smoothing stage missing"))?;
    let k_bar = &c.k_bar.region;
    let h = s.h();
    let mut verdicts: Vec<Verdict> = Vec::new();

    verdicts.push(check_subset("nesting_initial", &s.initial, k_bar)?);
    verdicts.push(check_nesting("nesting_reach", k_bar, &b.k_final.region)?);
    verdicts.push(check_nesting("nesting_inflated", &b.k_final.region, &b.k_delta)?);

    if checks.is_enabled(CheckName::Separation) {
        verdicts.push(check_separation(k_bar, &s.unsafe_set)?);
    }
    if checks.is_enabled(CheckName::Candidate) {
        verdicts.push(check_candidate(smooth.values(), &s.window, &s.initial, &s.unsafe_set)?);
    }
    if checks.is_enabled(CheckName::Consistency) {
        verdicts.push(check_consistency(smooth.values(), k_bar, &b.k_delta)?);
    }
    if checks.is_enabled(CheckName::C2) {
        let inc2 = s.inclusion(&s.margins.eps2);
        let cfg = DecreaseCheck {
            n_start: n.c2_starts,
            n_random: n.n_random,
            dt: b.query.dt,
            horizon: b.query.horizon,
            seed: n.seed,
            tol: n.decrease_tol.unwrap_or(2.0 * (b.query.dt + h)),
        };
        // Bilinear evaluation of B_K needs all four stencil cells in U₁.
        let domain = b.u1.interior();
        verdicts.push(check_c2(&b.bk, &inc2, &domain, Some(b.bk.clip_flags()), &cfg)?);
    }
    if checks.is_enabled(CheckName::C3) {
        let samples = BoundarySampleSet::from_smooth(smooth).restricted_to(&b.u1_hat);
        let mut v = check_c3(smooth, &s.field, &samples, n.c3_mode, n.c3_tol, None)?;
        let clipped = samples
            .points
            .iter()
            .filter(|p| s.window.cell_of(**p).is_some_and(|k| smooth.clip_flags()[k]))
            .count();
        v.metrics.insert("clipped_samples".into(), clipped as f64);
        verdicts.push(v);
    }
    if checks.is_enabled(CheckName::Invariance) {
        let hs = checks
            .invariance_halfspace
            .as_ref()
            .ok_or_else(|| Error::Scenario("invariance check needs a half-plane".into()))?;
        verdicts.push(check_invariance_tangent(
            hs,
            &s.field,
            s.reference_margin(),
            &s.window,
            checks.invariance.n_samples,
            checks.invariance.directions,
            n.seed,
        )?);
    }
    if checks.is_enabled(CheckName::Simulate) {
        let inc = s.inclusion(s.reference_margin());
        let cfg = SimulationCheck {
            n_solutions: checks.simulate.n_solutions,
            horizon: checks.simulate.horizon,
            dt: checks.simulate.dt.or(n.dt).unwrap_or_else(|| inc.default_dt()),
            seed: n.seed,
        };
        verdicts.push(simulate_safety(&inc, &s.initial, &s.unsafe_set, &cfg)?);
    }

    // Quadrature clipping only matters where B is used: on U₁.
    let smooth_clipped = b.u1.cells().filter(|&c| smooth.clip_flags()[c]).count();
    let edge_caveat = c.k_bar.edge_truncated || b.k_final.edge_truncated || smooth_clipped > 0;
    let mut d = BTreeMap::new();
    d.insert("h".into(), h);
    d.insert("k_bar_cells".into(), c.k_bar.region.count() as f64);
    d.insert("k_bar_steps".into(), c.k_bar.steps_used as f64);
    d.insert("k_bar_converged".into(), c.k_bar.converged as u8 as f64);
    d.insert("k_final_cells".into(), b.k_final.region.count() as f64);
    d.insert("k_delta_cells".into(), b.k_delta.count() as f64);
    d.insert("u1_cells".into(), b.u1.count() as f64);
    d.insert("u1_hat_cells".into(), b.u1_hat.count() as f64);
    d.insert("u1_widened".into(), b.widened as u8 as f64);
    d.insert("rho_o".into(), b.rho_o);
    d.insert("impact_dt".into(), b.query.dt);
    d.insert("impact_horizon".into(), b.query.horizon);
    d.insert("impact_clipped_cells".into(), b.bhat.clipped_count() as f64);
    d.insert("smooth_clipped_cells".into(), smooth_clipped as f64);
    Ok(CertificateReport {
        scenario_hash: s.scenario.hash(),
        seed: n.seed,
        verdicts,
        edge_caveat,
        diagnostics: d,
        note: SAMPLING_NOTE.to_string(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Reach,
    Barrier,
    Smooth,
    Certify,
    All,
}

/// Provenance and inventory of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: Command,
    pub scenario: String,
    pub scenario_hash: String,
    pub seed: u64,
    pub version: String,
    /// Wall-clock seconds per stage, in execution order.
    pub timings: Vec<(String, f64)>,
    pub files: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<CertificateReport>,
}

impl RunManifest {
    /// Process exit code: the report's, or 0 when no checks ran.
    pub fn exit_code(&self) -> i32 {
        self.report.as_ref().map_or(0, CertificateReport::exit_code)
    }
}

/// Runs `command` on `scenario` and writes its artifacts into `out_dir`.
pub fn run(command: Command, scenario: &Scenario, out_dir: &std::path::Path) -> Result<RunManifest> {
    std::fs::create_dir_all(out_dir)?;
    let mut timings = Vec::new();
    let mut files = Vec::new();
    let mut timed = |name: &str, t: Instant| timings.push((name.to_string(), t.elapsed().as_secs_f64()));
    let mut emit = |name: &str, write: &dyn Fn(&std::path::Path) -> Result<()>| -> Result<()> {
        write(&out_dir.join(name))?;
        files.push(name.to_string());
        Ok(())
    };

    let t = Instant::now();
    let setup = Setup::new(scenario)?;
    let k_bar = reach_stage(&setup)?;
    timed("reach", t);
    emit("K_eps_bar.csv", &|p| io::write_region_csv(p, &k_bar.region))?;
    emit("K_eps_bar.bin", &|p| io::write_occupancy(p, &k_bar.region))?;
    emit("K_eps_bar.json", &|p| io::write_json(p, &k_bar.summary()))?;

    let mut report = None;
    if command != Command::Reach {
        let t = Instant::now();
        let b = barrier_stage(&setup, &k_bar)?;
        timed("barrier", t);
        emit("K_final.csv", &|p| io::write_region_csv(p, &b.k_final.region))?;
        emit("K_final.json", &|p| io::write_json(p, &b.k_final.summary()))?;
        emit("B_hat.csv", &|p| io::write_barrier_csv(p, &b.bhat))?;
        emit("BK.csv", &|p| io::write_barrier_csv(p, &b.bk))?;
        if command != Command::Barrier {
            let t = Instant::now();
            let sm = smooth_stage(&setup, &b)?;
            timed("smooth", t);
            emit("B_smooth.csv", &|p| io::write_smooth_csv(p, &sm))?;
            if matches!(command, Command::Certify | Command::All) {
                let t = Instant::now();
                let c = Construction {
                    setup: setup.clone(),
                    k_bar: k_bar.clone(),
                    barrier: Some(b),
                    smooth: Some(sm),
                };
                let r = certify(&c).map_err(|e| e.in_stage("certify"))?;
                timed("certify", t);
                emit("report.json", &|p| io::write_json(p, &r))?;
                report = Some(r);
            }
        }
    }
    files.push("manifest.json".into());
    let manifest = RunManifest {
        command,
        scenario: scenario.name.clone(),
        scenario_hash: scenario.hash(),
        seed: scenario.numerics.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        timings,
        files,
        report,
    };
    io::write_json(&out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}
