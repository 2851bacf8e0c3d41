//! Numerical experiments: mesh-refinement studies against fine-mesh oracles,
//! the Lipschitz estimate of the control-to-state map, the parallelogram
//! identities, the cost lower bound, gradient checks, and a randomized scan
//! of the ordering `0 ≤ u_h4(μ) ≤ u_h3(μ)`.
//!
//! Work items (levels, trials) run on the rayon pool; results are merged by
//! index so every experiment is deterministic given its seed.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{ControlProblem, CostParams, CostReport, OptimizerOptions};
use crate::error::{Error, Result};
use crate::fem::FemSpace;
use crate::field::NodalField;
use crate::mesh::{prolongate, refinement_family, Mesh};
use crate::presets::ScalarFn;
use crate::vi::VISolver;

/// Errors below this are treated as exact and excluded from rate fits.
pub const EXACT_TOL: f64 = 1e-11;
/// Tolerance of the margin tests in the ordering scan.
pub const SCAN_TOL: f64 = 1e-9;

/// Level schedule of a refinement study: levels `0..levels` are compared
/// with the oracle at level `levels - 1 + oracle_extra_levels`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Refinement {
    pub levels: usize,
    pub oracle_extra_levels: usize,
}

impl Refinement {
    pub fn new(levels: usize, oracle_extra_levels: usize) -> Result<Self> {
        let r = Self { levels, oracle_extra_levels };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels < 3 {
            return Err(Error::InvalidArgument(format!(
                "a refinement study needs at least 3 levels, got {}",
                self.levels
            )));
        }
        if self.oracle_extra_levels < 2 {
            return Err(Error::InvalidArgument(format!(
                "the oracle needs at least 2 extra levels, got {}",
                self.oracle_extra_levels
            )));
        }
        Ok(())
    }

    pub fn oracle_level(&self) -> usize {
        self.levels - 1 + self.oracle_extra_levels
    }
}

/// A named pass/fail check recorded in experiment summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assertion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Assertion {
    pub fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.to_string(), passed, detail: detail.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub level: usize,
    pub h: f64,
    /// `‖u_h − u_oracle‖_V` on the oracle mesh.
    pub error_v: f64,
    /// `‖u_h − u_oracle‖_H` on the oracle mesh.
    pub error_h: f64,
    pub cost: f64,
    /// `|J_h − J_oracle|`.
    pub cost_gap: f64,
    /// `‖g_h − g_oracle‖_H`, for optimal-control studies.
    pub control_distance: Option<f64>,
    /// `‖g_h‖_H`, for optimal-control studies.
    pub control_norm: Option<f64>,
    /// `‖u_h0‖_H / M`, for optimal-control studies.
    pub control_bound: Option<f64>,
    pub active_size: usize,
}

/// Least-squares slopes of `log(error)` against `log(h)`; `None` when the
/// errors are exact or too few to fit.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Rates {
    pub error_v: Option<f64>,
    pub error_h: Option<f64>,
    pub cost_gap: Option<f64>,
    pub control_distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub experiment: String,
    pub reference: String,
    pub oracle_level: usize,
    pub oracle_h: f64,
    pub oracle_active_size: usize,
    pub rows: Vec<ConvergenceRow>,
    pub rates: Rates,
    pub assertions: Vec<Assertion>,
}

impl ConvergenceTable {
    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }

    pub fn column(&self, f: impl Fn(&ConvergenceRow) -> f64) -> Vec<f64> {
        self.rows.iter().map(f).collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "level,h,error_v,error_h,cost,cost_gap,control_distance,control_norm,control_bound,active_size"
        )?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        for r in &self.rows {
            writeln!(
                w,
                "{},{:e},{:e},{:e},{:e},{:e},{},{},{},{}",
                r.level,
                r.h,
                r.error_v,
                r.error_h,
                r.cost,
                r.cost_gap,
                opt(r.control_distance),
                opt(r.control_norm),
                opt(r.control_bound),
                r.active_size
            )?;
        }
        Ok(())
    }
}

/// Least-squares slope of `log(err)` vs `log(h)` over the last
/// `max(3, n - 1)` points. `None` if fewer than two usable points remain or
/// any of them is at or below [`EXACT_TOL`].
pub fn fit_rate(h: &[f64], err: &[f64]) -> Option<f64> {
    let n = h.len().min(err.len());
    let k = (n.saturating_sub(1)).max(3).min(n);
    if k < 2 {
        return None;
    }
    let (hs, es) = (&h[n - k..n], &err[n - k..n]);
    if es.iter().any(|&e| !(e > EXACT_TOL) || !e.is_finite()) {
        return None;
    }
    let xs: Vec<f64> = hs.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = es.iter().map(|v| v.ln()).collect();
    let mx = xs.iter().sum::<f64>() / k as f64;
    let my = ys.iter().sum::<f64>() / k as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return None;
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Some(sxy / sxx)
}

/// Whether `v` is strictly decreasing.
pub fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

/// Number of steps at which `v` fails to decrease.
pub fn non_monotone_steps(v: &[f64]) -> usize {
    v.windows(2).filter(|w| w[1] >= w[0]).count()
}

fn build_spaces(meshes: &[Mesh], levels: &[usize]) -> Result<Vec<FemSpace>> {
    levels.par_iter().map(|&k| FemSpace::new(meshes[k].clone())).collect()
}

struct Oracle {
    space: FemSpace,
    report: CostReport,
}

/// Solves `(S_h)` at the study levels and on the oracle mesh.
fn state_solves(
    base: &Mesh,
    g: &ScalarFn,
    params: CostParams,
    solver: &VISolver,
    r: Refinement,
) -> Result<(Vec<Mesh>, Vec<FemSpace>, Vec<CostReport>, Oracle)> {
    r.validate()?;
    g.validate()?;
    let meshes = refinement_family(base, r.oracle_level() + 1)?;
    let mut idx: Vec<usize> = (0..r.levels).collect();
    idx.push(r.oracle_level());
    let mut spaces = build_spaces(&meshes, &idx)?;
    let oracle_space = spaces.pop().expect("oracle space");

    let reports: Vec<CostReport> = spaces
        .par_iter()
        .map(|sp| {
            let cp = ControlProblem::new(sp, params, *solver)?;
            let gk = sp.interpolate(|x, y| g.eval(x, y))?;
            cp.evaluate_cost(&gk)
        })
        .collect::<Result<_>>()?;

    let last = r.levels - 1;
    let guess = prolongate(&meshes[last], oracle_space.mesh(), &reports[last].state().state)?;
    let cp = ControlProblem::new(&oracle_space, params, *solver)?;
    let g_oracle = oracle_space.interpolate(|x, y| g.eval(x, y))?;
    let report = cp.evaluate_cost_warm(&g_oracle, Some(&guess))?;
    Ok((meshes, spaces, reports, Oracle { space: oracle_space, report }))
}

fn state_table(
    experiment: &str,
    base: &Mesh,
    g: &ScalarFn,
    params: CostParams,
    solver: &VISolver,
    r: Refinement,
) -> Result<ConvergenceTable> {
    let (meshes, spaces, reports, oracle) = state_solves(base, g, params, solver, r)?;
    let u_oracle = &oracle.report.state().state;
    let rows = spaces
        .par_iter()
        .zip(&reports)
        .map(|(sp, rep)| {
            let u = prolongate(sp.mesh(), oracle.space.mesh(), &rep.state().state)?;
            Ok(ConvergenceRow {
                level: sp.level(),
                h: sp.mesh().h(),
                error_v: oracle.space.h1_distance(&u, u_oracle)?,
                error_h: oracle.space.l2_distance(&u, u_oracle)?,
                cost: rep.cost,
                cost_gap: (rep.cost - oracle.report.cost).abs(),
                control_distance: None,
                control_norm: None,
                control_bound: None,
                active_size: rep.state().active_set.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let h: Vec<f64> = rows.iter().map(|r| r.h).collect();
    let col = |f: fn(&ConvergenceRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
    let rates = Rates {
        error_v: fit_rate(&h, &col(|r| r.error_v)),
        error_h: fit_rate(&h, &col(|r| r.error_h)),
        cost_gap: fit_rate(&h, &col(|r| r.cost_gap)),
        control_distance: None,
    };
    let mut table = ConvergenceTable {
        experiment: experiment.to_string(),
        reference: format!(
            "discrete solution on refinement level {} (h = {:e})",
            r.oracle_level(),
            meshes[r.oracle_level()].h()
        ),
        oracle_level: r.oracle_level(),
        oracle_h: oracle.space.mesh().h(),
        oracle_active_size: oracle.report.state().active_set.len(),
        rows,
        rates,
        assertions: Vec::new(),
    };
    table.assertions.push(halving_assertion(&table));
    Ok(table)
}

fn halving_assertion(t: &ConvergenceTable) -> Assertion {
    let ok = t.rows.windows(2).all(|w| (w[1].h - 0.5 * w[0].h).abs() <= 1e-12 * w[0].h);
    Assertion::new("h_halves_per_level", ok, "")
}

/// Adds "exact at every level" or "strictly decreasing with rate ≥ min_rate"
/// checks for one column.
fn error_assertions(
    t: &mut ConvergenceTable,
    name: &str,
    values: Vec<f64>,
    rate: Option<f64>,
    min_rate: f64,
) {
    let worst = values.iter().copied().fold(0.0, f64::max);
    if worst <= EXACT_TOL {
        t.assertions.push(Assertion::new(
            &format!("{name}_exact"),
            true,
            format!("max {worst:e} <= {EXACT_TOL:e}; rate fit skipped"),
        ));
        return;
    }
    t.assertions.push(Assertion::new(
        &format!("{name}_strictly_decreasing"),
        strictly_decreasing(&values),
        format!("{values:?}"),
    ));
    let passed = rate.is_some_and(|r| r >= min_rate);
    t.assertions.push(Assertion::new(
        &format!("{name}_rate"),
        passed,
        format!("fitted {rate:?}, required >= {min_rate}"),
    ));
}

/// Errors of the discrete states for the control `g` against a fine-mesh
/// oracle, measured on the oracle mesh after exact nested prolongation.
pub fn run_state_convergence(
    base: &Mesh,
    g: &ScalarFn,
    params: CostParams,
    solver: &VISolver,
    r: Refinement,
) -> Result<ConvergenceTable> {
    let mut t = state_table("state_convergence", base, g, params, solver, r)?;
    let (ev, rate) = (t.column(|r| r.error_v), t.rates.error_v);
    error_assertions(&mut t, "error_v", ev, rate, 0.5);
    Ok(t)
}

/// Cost gaps `|J_h(g) − J_oracle(g)|` for the control `g`.
pub fn run_cost_convergence(
    base: &Mesh,
    g: &ScalarFn,
    params: CostParams,
    solver: &VISolver,
    r: Refinement,
) -> Result<ConvergenceTable> {
    let mut t = state_table("cost_convergence", base, g, params, solver, r)?;
    let (gaps, rate) = (t.column(|r| r.cost_gap), t.rates.cost_gap);
    error_assertions(&mut t, "cost_gap", gaps, rate, 0.5);
    Ok(t)
}

/// Both state and cost checks from one set of solves.
pub fn run_state_and_cost_convergence(
    base: &Mesh,
    g: &ScalarFn,
    params: CostParams,
    solver: &VISolver,
    r: Refinement,
) -> Result<ConvergenceTable> {
    let mut t = state_table("state_and_cost_convergence", base, g, params, solver, r)?;
    let (ev, rv) = (t.column(|r| r.error_v), t.rates.error_v);
    error_assertions(&mut t, "error_v", ev, rv, 0.5);
    let (gaps, rc) = (t.column(|r| r.cost_gap), t.rates.cost_gap);
    error_assertions(&mut t, "cost_gap", gaps, rc, 0.5);
    Ok(t)
}

/// Optimal controls per level against the optimal control on the oracle
/// level. Every optimizer run must converge.
pub fn run_control_convergence(
    base: &Mesh,
    params: CostParams,
    solver: &VISolver,
    r: Refinement,
    g0: &ScalarFn,
    opts: OptimizerOptions,
) -> Result<ConvergenceTable> {
    r.validate()?;
    g0.validate()?;
    let meshes = refinement_family(base, r.oracle_level() + 1)?;
    let mut idx: Vec<usize> = (0..r.levels).collect();
    idx.push(r.oracle_level());
    let spaces = build_spaces(&meshes, &idx)?;

    struct Run {
        result: crate::control::OptimizerResult,
        bound: crate::control::CostBound,
    }
    let runs: Vec<Result<Run>> = spaces
        .par_iter()
        .map(|sp| {
            let cp = ControlProblem::new(sp, params, *solver)?;
            let start = sp.interpolate(|x, y| g0.eval(x, y))?;
            let result = cp.optimize(&start, opts)?;
            let bound = cp.cost_bound()?;
            Ok(Run { result, bound })
        })
        .collect();
    let mut failures = Vec::new();
    for (sp, run) in spaces.iter().zip(&runs) {
        match run {
            Ok(run) if !run.result.converged => failures.push(format!(
                "level {}: {} after {} iterations",
                sp.level(),
                run.result.message,
                run.result.iterations
            )),
            Ok(_) => {}
            Err(e) => failures.push(format!("level {}: {e}", sp.level())),
        }
    }
    if !failures.is_empty() {
        let mut partial = String::from("level,cost,gradient_norm,converged\n");
        for (sp, run) in spaces.iter().zip(&runs) {
            if let Ok(run) = run {
                partial.push_str(&format!(
                    "{},{:e},{:e},{}\n",
                    sp.level(),
                    run.result.cost,
                    run.result.gradient_norm,
                    run.result.converged
                ));
            }
        }
        return Err(Error::Experiment(format!(
            "optimizer failed: {}; partial table:\n{partial}",
            failures.join("; ")
        )));
    }
    let runs: Vec<Run> = runs.into_iter().map(|r| r.expect("checked")).collect();
    let (oracle_space, oracle) = (spaces.last().expect("oracle"), runs.last().expect("oracle"));
    let g_or = &oracle.result.control;
    let u_or = &oracle.result.state.state;

    let rows = spaces[..r.levels]
        .iter()
        .zip(&runs)
        .map(|(sp, run)| {
            let g = prolongate(sp.mesh(), oracle_space.mesh(), &run.result.control)?;
            let u = prolongate(sp.mesh(), oracle_space.mesh(), &run.result.state.state)?;
            Ok(ConvergenceRow {
                level: sp.level(),
                h: sp.mesh().h(),
                error_v: oracle_space.h1_distance(&u, u_or)?,
                error_h: oracle_space.l2_distance(&u, u_or)?,
                cost: run.result.cost,
                cost_gap: (run.result.cost - oracle.result.cost).abs(),
                control_distance: Some(oracle_space.l2_distance(&g, g_or)?),
                control_norm: Some(sp.l2_norm(&run.result.control)?),
                control_bound: Some(run.bound.control_bound()),
                active_size: run.result.state.active_set.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let h: Vec<f64> = rows.iter().map(|r| r.h).collect();
    let col = |f: fn(&ConvergenceRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
    let gd = col(|r| r.control_distance.unwrap_or(0.0));
    let ev = col(|r| r.error_v);
    let rates = Rates {
        error_v: fit_rate(&h, &ev),
        error_h: fit_rate(&h, &col(|r| r.error_h)),
        cost_gap: fit_rate(&h, &col(|r| r.cost_gap)),
        control_distance: fit_rate(&h, &gd),
    };
    let mut t = ConvergenceTable {
        experiment: "control_convergence".into(),
        reference: format!(
            "optimal control on refinement level {} (h = {:e})",
            r.oracle_level(),
            oracle_space.mesh().h()
        ),
        oracle_level: r.oracle_level(),
        oracle_h: oracle_space.mesh().h(),
        oracle_active_size: oracle.result.state.active_set.len(),
        rows,
        rates,
        assertions: Vec::new(),
    };
    t.assertions.push(halving_assertion(&t));
    for (name, v) in [("control_distance", &gd), ("error_v", &ev)] {
        let worst = v.iter().copied().fold(0.0, f64::max);
        if worst <= 1e-7 {
            t.assertions.push(Assertion::new(
                &format!("{name}_exact"),
                true,
                format!("max {worst:e} <= 1e-7"),
            ));
            continue;
        }
        let steps = non_monotone_steps(v);
        t.assertions.push(Assertion::new(
            &format!("{name}_decreasing_trend"),
            steps <= 1,
            format!("{steps} non-monotone steps in {v:?}"),
        ));
        let ratio = v[0] / v[v.len() - 1];
        t.assertions.push(Assertion::new(
            &format!("{name}_tenfold_reduction"),
            ratio >= 10.0,
            format!("first/last = {ratio:.3}"),
        ));
    }
    let all_bounded = runs.iter().zip(&spaces).all(|(run, sp)| {
        sp.l2_norm(&run.result.control).is_ok_and(|n| n <= run.bound.control_bound() * (1.0 + 1e-12))
    });
    t.assertions.push(Assertion::new(
        "control_norm_bound",
        all_bounded,
        "‖g_op_h‖_H ≤ ‖u_h0‖_H / M at every level including the oracle",
    ));
    Ok(t)
}

/// How random controls are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    /// Nodal values are uniform in `[-amplitude, amplitude]`.
    pub amplitude: f64,
    /// Apply one row-normalized mass-matrix average.
    pub smooth: bool,
}

impl Default for Sampling {
    fn default() -> Self {
        Self { amplitude: 10.0, smooth: false }
    }
}

impl Sampling {
    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sampling amplitude must be positive, got {}",
                self.amplitude
            )));
        }
        Ok(())
    }
}

/// Generator for work item `index` of an experiment seeded with `seed`.
pub fn trial_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// A random P1 control on `space`.
pub fn random_control(space: &FemSpace, rng: &mut impl Rng, s: Sampling) -> Result<NodalField> {
    let n = space.num_vertices();
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(-s.amplitude..=s.amplitude)).collect();
    let values = if s.smooth {
        let m = space.mass();
        let num = m.mul(&raw)?;
        let den = m.mul(&vec![1.0; n])?;
        num.iter().zip(&den).map(|(a, b)| a / b).collect()
    } else {
        raw
    };
    NodalField::new(values, space.level())
}

/// Two random controls with a nonzero `H` difference.
fn random_pair(space: &FemSpace, rng: &mut impl Rng, s: Sampling) -> Result<(NodalField, NodalField)> {
    for _ in 0..100 {
        let g1 = random_control(space, rng, s)?;
        let g2 = random_control(space, rng, s)?;
        if space.l2_distance(&g1, &g2)? > 0.0 {
            return Ok((g1, g2));
        }
    }
    Err(Error::Experiment("could not draw two distinct controls".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzRecord {
    pub trial: usize,
    pub control_distance: f64,
    pub state_distance: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub lambda: f64,
    pub worst_ratio: f64,
    pub records: Vec<LipschitzRecord>,
    pub assertions: Vec<Assertion>,
}

impl LipschitzReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "trial,control_distance,state_distance,ratio")?;
        for r in &self.records {
            writeln!(w, "{},{:e},{:e},{:e}", r.trial, r.control_distance, r.state_distance, r.ratio)?;
        }
        Ok(())
    }
}

/// `max λ_h ‖u_hg2 − u_hg1‖_V / ‖g2 − g1‖_H` over seeded random pairs.
pub fn run_lipschitz_check(
    space: &FemSpace,
    params: CostParams,
    solver: &VISolver,
    trials: usize,
    seed: u64,
    sampling: Sampling,
) -> Result<LipschitzReport> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    sampling.validate()?;
    let cp = ControlProblem::new(space, params, *solver)?;
    let lambda = space.coercivity_constant()?;
    let records = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, t as u64);
            let (g1, g2) = random_pair(space, &mut rng, sampling)?;
            lipschitz_record(&cp, lambda, t, &g1, &g2)
        })
        .collect::<Result<Vec<_>>>()?;
    let worst_ratio = records.iter().map(|r| r.ratio).fold(0.0, f64::max);
    let assertions = vec![Assertion::new(
        "lipschitz_ratio_at_most_one",
        worst_ratio <= 1.0 + 1e-9,
        format!("worst ratio {worst_ratio:.12}"),
    )];
    Ok(LipschitzReport { lambda, worst_ratio, records, assertions })
}

/// One Lipschitz ratio for a given pair.
pub fn lipschitz_record(
    cp: &ControlProblem<'_>,
    lambda: f64,
    trial: usize,
    g1: &[f64],
    g2: &[f64],
) -> Result<LipschitzRecord> {
    let space = cp.space();
    let control_distance = space.l2_distance(g1, g2)?;
    if !(control_distance > 0.0) {
        return Err(Error::InvalidArgument("controls coincide; ratio undefined".into()));
    }
    let u1 = cp.solve_state(g1, None)?.state;
    let u2 = cp.solve_state(g2, None)?.state;
    let state_distance = space.h1_distance(&u1, &u2)?;
    Ok(LipschitzRecord {
        trial,
        control_distance,
        state_distance,
        ratio: lambda * state_distance / control_distance,
    })
}

/// Worst absolute residuals of the parallelogram identities
/// `‖μa + (1−μ)b‖² = μ‖a‖² + (1−μ)‖b‖² − μ(1−μ)‖b − a‖²` in `H` for states
/// and controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParallelogramReport {
    pub trials: usize,
    pub state_residual: f64,
    pub control_residual: f64,
}

pub fn parallelogram_residual(space: &FemSpace, a: &[f64], b: &[f64], mu: f64) -> Result<f64> {
    let c: Vec<f64> = a.iter().zip(b).map(|(x, y)| mu * x + (1.0 - mu) * y).collect();
    let d: Vec<f64> = b.iter().zip(a).map(|(x, y)| x - y).collect();
    let m = space.mass();
    let lhs = m.quad(&c)?;
    let rhs = mu * m.quad(a)? + (1.0 - mu) * m.quad(b)? - mu * (1.0 - mu) * m.quad(&d)?;
    Ok((lhs - rhs).abs())
}

pub fn run_parallelogram_check(
    space: &FemSpace,
    params: CostParams,
    solver: &VISolver,
    trials: usize,
    seed: u64,
    sampling: Sampling,
) -> Result<ParallelogramReport> {
    sampling.validate()?;
    let cp = ControlProblem::new(space, params, *solver)?;
    let res = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, t as u64);
            let (g1, g2) = random_pair(space, &mut rng, sampling)?;
            let mu: f64 = rng.gen_range(0.0..=1.0);
            let u1 = cp.solve_state(&g1, None)?.state;
            let u2 = cp.solve_state(&g2, None)?.state;
            let (u3, _) = cp.convex_combination_from(&g1, &g2, &u1, &u2, mu)?;
            // Checked on the module's u_h3, not on a recomputed combination.
            let d: Vec<f64> = u2.iter().zip(u1.iter()).map(|(x, y)| x - y).collect();
            let m = space.mass();
            let rhs = mu * m.quad(&u1)? + (1.0 - mu) * m.quad(&u2)? - mu * (1.0 - mu) * m.quad(&d)?;
            let rs = (m.quad(&u3)? - rhs).abs();
            let rc = parallelogram_residual(space, &g1, &g2, mu)?;
            Ok((rs, rc))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ParallelogramReport {
        trials,
        state_residual: res.iter().map(|r| r.0).fold(0.0, f64::max),
        control_residual: res.iter().map(|r| r.1).fold(0.0, f64::max),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostBoundReport {
    pub bound: crate::control::CostBound,
    pub trials: usize,
    /// `min (J_h(g) − ((M/2)‖g‖² − C‖g‖))`.
    pub worst_margin: f64,
    /// Same for the sharper bound.
    pub worst_sharp_margin: f64,
}

/// `J_h(g) ≥ (M/2)‖g‖²_H − C‖g‖_H` with `C = ‖u_h0‖_H / λ_h` on seeded
/// random controls.
pub fn run_cost_bound_check(
    space: &FemSpace,
    params: CostParams,
    solver: &VISolver,
    trials: usize,
    seed: u64,
    sampling: Sampling,
) -> Result<CostBoundReport> {
    sampling.validate()?;
    let cp = ControlProblem::new(space, params, *solver)?;
    let bound = cp.cost_bound()?;
    let margins = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, t as u64);
            let g = random_control(space, &mut rng, sampling)?;
            let j = cp.evaluate_cost(&g)?.cost;
            let gn = space.l2_norm(&g)?;
            Ok((j - bound.lower_bound(gn), j - bound.sharp_lower_bound(gn)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CostBoundReport {
        bound,
        trials,
        worst_margin: margins.iter().map(|m| m.0).fold(f64::INFINITY, f64::min),
        worst_sharp_margin: margins.iter().map(|m| m.1).fold(f64::INFINITY, f64::min),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCheckRecord {
    pub control: usize,
    pub direction: usize,
    pub analytic: f64,
    pub finite_difference: f64,
    pub relative_error: f64,
    pub active_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCheckReport {
    pub step: f64,
    pub worst_relative_error: f64,
    /// Controls rejected because a perturbation changed the active set.
    pub rejected: usize,
    pub records: Vec<GradientCheckRecord>,
}

/// Compares `(∇J, d)_H` with central differences of `J_h` at seeded random
/// controls whose active set is unchanged by every `±step·d` perturbation.
/// The relative error is taken against `max(|analytic|, 1e-8 ‖∇J‖_H ‖d‖_H)`.
pub fn run_gradient_check(
    space: &FemSpace,
    params: CostParams,
    solver: &VISolver,
    controls: usize,
    directions: usize,
    step: f64,
    seed: u64,
    sampling: Sampling,
) -> Result<GradientCheckReport> {
    sampling.validate()?;
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {step}")));
    }
    let cp = ControlProblem::new(space, params, *solver)?;
    let per_control = (0..controls)
        .into_par_iter()
        .map(|c| {
            let mut rng = trial_rng(seed, c as u64);
            for attempt in 0..100 {
                let g = random_control(space, &mut rng, sampling)?;
                let dirs = (0..directions)
                    .map(|_| random_control(space, &mut rng, Sampling { amplitude: 1.0, smooth: false }))
                    .collect::<Result<Vec<_>>>()?;
                if let Some(records) = gradient_records(&cp, c, &g, &dirs, step)? {
                    return Ok((records, attempt));
                }
            }
            Err(Error::Experiment(format!("no control with a stable active set for sample {c}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let rejected = per_control.iter().map(|p| p.1).sum();
    let records: Vec<GradientCheckRecord> = per_control.into_iter().flat_map(|p| p.0).collect();
    let worst_relative_error = records.iter().map(|r| r.relative_error).fold(0.0, f64::max);
    Ok(GradientCheckReport { step, worst_relative_error, rejected, records })
}

fn gradient_records(
    cp: &ControlProblem<'_>,
    c: usize,
    g: &[f64],
    dirs: &[NodalField],
    step: f64,
) -> Result<Option<Vec<GradientCheckRecord>>> {
    let space = cp.space();
    let base = cp.evaluate_cost(g)?;
    let active = &base.state().active_set;
    let grad = cp.gradient_at(g, base.state())?;
    let gnorm = space.l2_norm(&grad)?;
    let mut out = Vec::with_capacity(dirs.len());
    for (k, d) in dirs.iter().enumerate() {
        let shifted = |s: f64| -> Vec<f64> { g.iter().zip(d.iter()).map(|(a, b)| a + s * b).collect() };
        let plus = cp.evaluate_cost_warm(&shifted(step), Some(&base.state().state))?;
        let minus = cp.evaluate_cost_warm(&shifted(-step), Some(&base.state().state))?;
        if &plus.state().active_set != active || &minus.state().active_set != active {
            return Ok(None);
        }
        let fd = (plus.cost - minus.cost) / (2.0 * step);
        let an = space.h_inner(&grad, d)?;
        let denom = an.abs().max(1e-8 * gnorm * space.l2_norm(d)?);
        out.push(GradientCheckRecord {
            control: c,
            direction: k,
            analytic: an,
            finite_difference: fd,
            relative_error: if denom > 0.0 { (fd - an).abs() / denom } else { 0.0 },
            active_size: active.len(),
        });
    }
    Ok(Some(out))
}

/// One `(g1, g2, μ)` sample of the ordering scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenProblemRecord {
    pub trial: usize,
    pub seed: u64,
    pub level: usize,
    pub mu: f64,
    pub g1_norm: f64,
    pub g2_norm: f64,
    /// `min_i (u_h3 − u_h4)_i`.
    pub pointwise_margin: f64,
    /// `min_i (u_h4)_i`.
    pub nonnegativity_margin: f64,
    /// `‖u_h3‖_H − ‖u_h4‖_H`.
    pub norm_margin: f64,
    /// `μJ_h(g1) + (1−μ)J_h(g2) − J_h(g3) − (M/2)μ(1−μ)‖g2 − g1‖²_H`.
    pub convexity_excess: f64,
    pub pointwise_ok: bool,
    pub norm_ok: bool,
    pub violation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanSummary {
    pub records: usize,
    pub pointwise_violations: usize,
    pub norm_violations: usize,
    pub violations: usize,
    /// Records with the pointwise ordering but not the norm ordering.
    pub implication_failures: usize,
    /// Records with the norm ordering whose convexity excess is below `-tol`.
    pub convexity_failures: usize,
    pub min_pointwise_margin: f64,
    pub min_norm_margin: f64,
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub records: Vec<OpenProblemRecord>,
    pub summary: ScanSummary,
    pub assertions: Vec<Assertion>,
}

impl ScanReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "trial,seed,level,mu,g1_norm,g2_norm,pointwise_margin,nonnegativity_margin,norm_margin,convexity_excess,pointwise_ok,norm_ok,violation"
        )?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{:e},{:e},{:e},{:e},{:e},{:e},{},{},{}",
                r.trial,
                r.seed,
                r.level,
                r.mu,
                r.g1_norm,
                r.g2_norm,
                r.pointwise_margin,
                r.nonnegativity_margin,
                r.norm_margin,
                r.convexity_excess,
                r.pointwise_ok,
                r.norm_ok,
                r.violation
            )?;
        }
        Ok(())
    }
}

/// Default μ grid `{0.1, ..., 0.9}`.
pub fn default_mu_grid() -> Vec<f64> {
    (1..10).map(|k| k as f64 / 10.0).collect()
}

/// Margins of `0 ≤ u_h4(μ) ≤ u_h3(μ)` and of `‖u_h4‖_H ≤ ‖u_h3‖_H` for
/// seeded random control pairs, at tolerance [`SCAN_TOL`].
pub fn run_open_problem_scan(
    space: &FemSpace,
    params: CostParams,
    solver: &VISolver,
    trials: usize,
    mu_grid: &[f64],
    seed: u64,
    sampling: Sampling,
) -> Result<ScanReport> {
    sampling.validate()?;
    if let Some(mu) = mu_grid.iter().find(|m| !(0.0..=1.0).contains(*m)) {
        return Err(Error::InvalidArgument(format!("μ grid value {mu} outside [0, 1]")));
    }
    let cp = ControlProblem::new(space, params, *solver)?;
    let per_trial = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, t as u64);
            let (g1, g2) = random_pair(space, &mut rng, sampling)?;
            scan_pair(&cp, t, seed, &g1, &g2, mu_grid)
        })
        .collect::<Result<Vec<_>>>()?;
    let records: Vec<OpenProblemRecord> = per_trial.into_iter().flatten().collect();
    Ok(summarize_scan(records))
}

/// Scan records for one control pair.
pub fn scan_pair(
    cp: &ControlProblem<'_>,
    trial: usize,
    seed: u64,
    g1: &[f64],
    g2: &[f64],
    mu_grid: &[f64],
) -> Result<Vec<OpenProblemRecord>> {
    let space = cp.space();
    let r1 = cp.evaluate_cost(g1)?;
    let r2 = cp.evaluate_cost(g2)?;
    let (u1, u2) = (&r1.state().state, &r2.state().state);
    let dg2 = space.mass().quad(&g2.iter().zip(g1).map(|(a, b)| a - b).collect::<Vec<_>>())?;
    let (g1_norm, g2_norm) = (space.l2_norm(g1)?, space.l2_norm(g2)?);
    let weight = cp.params().weight;
    mu_grid
        .iter()
        .map(|&mu| {
            let (u3, u4) = cp.convex_combination_from(g1, g2, u1, u2, mu)?;
            let pointwise_margin =
                u3.iter().zip(u4.iter()).map(|(a, b)| a - b).fold(f64::INFINITY, f64::min);
            let nonnegativity_margin = u4.iter().copied().fold(f64::INFINITY, f64::min);
            let norm_margin = space.l2_norm(&u3)? - space.l2_norm(&u4)?;
            let g3: Vec<f64> = g1.iter().zip(g2).map(|(a, b)| mu * a + (1.0 - mu) * b).collect();
            let j3 = 0.5 * space.mass().quad(&u4)? + 0.5 * weight * space.mass().quad(&g3)?;
            let convexity_excess = mu * r1.cost + (1.0 - mu) * r2.cost
                - j3
                - 0.5 * weight * mu * (1.0 - mu) * dg2;
            let pointwise_ok = pointwise_margin >= -SCAN_TOL && nonnegativity_margin >= -SCAN_TOL;
            let norm_ok = norm_margin >= -SCAN_TOL;
            Ok(OpenProblemRecord {
                trial,
                seed,
                level: space.level(),
                mu,
                g1_norm,
                g2_norm,
                pointwise_margin,
                nonnegativity_margin,
                norm_margin,
                convexity_excess,
                pointwise_ok,
                norm_ok,
                violation: !(pointwise_ok && norm_ok),
            })
        })
        .collect()
}

pub fn summarize_scan(records: Vec<OpenProblemRecord>) -> ScanReport {
    let count = |f: &dyn Fn(&OpenProblemRecord) -> bool| records.iter().filter(|r| f(r)).count();
    let summary = ScanSummary {
        records: records.len(),
        pointwise_violations: count(&|r| !r.pointwise_ok),
        norm_violations: count(&|r| !r.norm_ok),
        violations: count(&|r| r.violation),
        implication_failures: count(&|r| r.pointwise_ok && !r.norm_ok),
        convexity_failures: count(&|r| r.norm_ok && r.convexity_excess < -SCAN_TOL),
        min_pointwise_margin: records.iter().map(|r| r.pointwise_margin).fold(f64::INFINITY, f64::min),
        min_norm_margin: records.iter().map(|r| r.norm_margin).fold(f64::INFINITY, f64::min),
        tol: SCAN_TOL,
    };
    let assertions = vec![
        Assertion::new(
            "pointwise_implies_norm",
            summary.implication_failures == 0,
            format!("{} failures", summary.implication_failures),
        ),
        Assertion::new(
            "convexity_when_norm_ordering_holds",
            summary.convexity_failures == 0,
            format!("{} failures", summary.convexity_failures),
        ),
    ];
    ScanReport { records, summary, assertions }
}

/// Machine-readable run summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub experiment: String,
    pub parameters: serde_json::Value,
    pub seed: Option<u64>,
    pub assertions: Vec<Assertion>,
    pub rates: BTreeMap<String, f64>,
    pub metrics: BTreeMap<String, f64>,
    pub passed: bool,
}

impl ExperimentSummary {
    pub fn new(experiment: &str, parameters: serde_json::Value, seed: Option<u64>) -> Self {
        Self {
            experiment: experiment.to_string(),
            parameters,
            seed,
            assertions: Vec::new(),
            rates: BTreeMap::new(),
            metrics: BTreeMap::new(),
            passed: true,
        }
    }

    pub fn push(&mut self, a: Assertion) {
        self.passed &= a.passed;
        self.assertions.push(a);
    }

    pub fn extend(&mut self, prefix: &str, assertions: &[Assertion]) {
        for a in assertions {
            let name = if prefix.is_empty() { a.name.clone() } else { format!("{prefix}.{}", a.name) };
            self.push(Assertion { name, ..a.clone() });
        }
    }

    pub fn add_rates(&mut self, prefix: &str, r: &Rates) {
        for (k, v) in [
            ("error_v", r.error_v),
            ("error_h", r.error_h),
            ("cost_gap", r.cost_gap),
            ("control_distance", r.control_distance),
        ] {
            if let Some(v) = v {
                self.rates.insert(format!("{prefix}.{k}"), v);
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_rectangle_mesh, Rect, Side};
    use crate::vi::PdasOptions;

    fn pdas() -> VISolver {
        VISolver::Pdas(PdasOptions::default())
    }

    fn params(b: f64) -> CostParams {
        CostParams::new(1.0, b, ScalarFn::constant(0.0)).unwrap()
    }

    #[test]
    fn rate_fit_recovers_power_law() {
        let h: Vec<f64> = (0..5).map(|k| 0.5f64.powi(k)).collect();
        let e: Vec<f64> = h.iter().map(|x| 3.0 * x.powf(1.5)).collect();
        assert!((fit_rate(&h, &e).unwrap() - 1.5).abs() < 1e-12);
        let z = vec![0.0; 5];
        assert_eq!(fit_rate(&h, &z), None);
        // Only the tail is fitted: a polluted first point is ignored.
        let mut e2 = e.clone();
        e2[0] = 100.0;
        assert!((fit_rate(&h, &e2).unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn monotonicity_helpers() {
        assert!(strictly_decreasing(&[3.0, 2.0, 1.0]));
        assert!(!strictly_decreasing(&[3.0, 3.0]));
        assert_eq!(non_monotone_steps(&[3.0, 4.0, 2.0, 2.0]), 2);
    }

    #[test]
    fn refinement_validation() {
        assert!(Refinement::new(2, 2).is_err());
        assert!(Refinement::new(3, 1).is_err());
        assert_eq!(Refinement::new(4, 3).unwrap().oracle_level(), 6);
    }

    #[test]
    fn constant_solution_study_is_exact() {
        let base = build_rectangle_mesh(1, 1, Rect::UNIT, &[Side::Left]).unwrap();
        let t = run_state_and_cost_convergence(
            &base,
            &ScalarFn::constant(0.0),
            params(1.0),
            &pdas(),
            Refinement::new(3, 2).unwrap(),
        )
        .unwrap();
        assert!(t.passed(), "{:?}", t.assertions);
        assert!(t.rows.iter().all(|r| r.error_v <= EXACT_TOL && r.cost_gap <= EXACT_TOL));
        assert_eq!(t.rates.error_v, None);
    }

    #[test]
    fn sampling_is_seeded() {
        let sp = FemSpace::new(build_rectangle_mesh(3, 3, Rect::UNIT, &[Side::Left]).unwrap()).unwrap();
        let s = Sampling { amplitude: 2.0, smooth: true };
        let a = random_control(&sp, &mut trial_rng(9, 4), s).unwrap();
        let b = random_control(&sp, &mut trial_rng(9, 4), s).unwrap();
        let c = random_control(&sp, &mut trial_rng(9, 5), s).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.iter().all(|v| v.abs() <= 2.0));
    }

    #[test]
    fn scan_endpoints_and_degenerate_pairs() {
        let sp = FemSpace::new(build_rectangle_mesh(4, 4, Rect::UNIT, &[Side::Left]).unwrap()).unwrap();
        let cp = ControlProblem::new(&sp, params(0.1), pdas()).unwrap();
        let mut rng = trial_rng(1, 0);
        let g1 = random_control(&sp, &mut rng, Sampling::default()).unwrap();
        let g2 = random_control(&sp, &mut rng, Sampling::default()).unwrap();
        for r in scan_pair(&cp, 0, 1, &g1, &g2, &[0.0, 1.0]).unwrap() {
            assert!(r.pointwise_margin >= -1e-12 && r.norm_margin >= -1e-12);
        }
        for r in scan_pair(&cp, 0, 1, &g1, &g1, &[0.3, 0.6]).unwrap() {
            assert!(r.pointwise_margin >= -1e-12 && r.norm_margin >= -1e-12);
        }
    }

    #[test]
    fn lipschitz_constant_shift() {
        let sp = FemSpace::new(build_rectangle_mesh(4, 4, Rect::UNIT, &[Side::Left]).unwrap()).unwrap();
        let cp = ControlProblem::new(&sp, params(0.2), pdas()).unwrap();
        let lambda = sp.coercivity_constant().unwrap();
        let g1 = sp.interpolate(|x, y| 5.0 * (x - y)).unwrap();
        let g2: Vec<f64> = g1.iter().map(|v| v + 3.0).collect();
        let r = lipschitz_record(&cp, lambda, 0, &g1, &g2).unwrap();
        assert!(r.ratio > 0.0 && r.ratio <= 1.0);
        assert!(lipschitz_record(&cp, lambda, 0, &g1, &g1).is_err());
    }

    #[test]
    fn summary_json_is_stable() {
        let mut s = ExperimentSummary::new("demo", serde_json::json!({"levels": 3}), Some(7));
        s.push(Assertion::new("a", true, ""));
        s.rates.insert("x".into(), 1.0);
        let j1 = s.to_json().unwrap();
        assert_eq!(j1, s.clone().to_json().unwrap());
        s.push(Assertion::new("b", false, "why"));
        assert!(!s.passed);
    }
}
