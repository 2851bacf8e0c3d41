use std::path::Path;

use obstacle_core::harness::{
    run_control_convergence, run_cost_bound_check, run_gradient_check, run_lipschitz_check, run_open_problem_scan,
    run_parallelogram_check, run_state_and_cost_convergence, Assertion, ConvergenceTable,
    ExperimentSummary, EXACT_TOL,
};
use obstacle_core::mesh::build_rectangle_mesh;
use obstacle_core::{ControlProblem, CostParams, Error, FemSpace, Mesh, ObstacleProblem, ScalarFn};

use crate::config::{ControlSpec, RunConfig, SweepKind};
use crate::output::{read_nodal, OutputDir};
use crate::{Command, EXIT_ASSERTION, EXIT_CONFIG, EXIT_NOT_CONVERGED, EXIT_OK};

/// A failed run: exit code plus message.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self { code: EXIT_CONFIG, message: format!("{}: {e}", path.display()) }
    }

    fn config(field: &str, message: impl std::fmt::Display) -> Self {
        Self { code: EXIT_CONFIG, message: format!("invalid config field `{field}`: {message}") }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidArgument(_) | Error::NumericDomain(_) | Error::DimensionMismatch { .. } | Error::Io(_) => {
                EXIT_CONFIG
            }
            _ => EXIT_NOT_CONVERGED,
        };
        Self { code, message: e.to_string() }
    }
}

pub fn run(cmd: Command, cfg: &RunConfig, quiet: bool) -> Result<u8, Failure> {
    let mut out = OutputDir::create(&cfg.output.dir, quiet)?;
    out.write_str("config.toml", &snapshot(cfg))?;
    let code = match cmd {
        Command::Solve => solve(cfg, &mut out),
        Command::Optimize => optimize(cfg, &mut out),
        Command::Sweep => sweep(cfg, &mut out),
        Command::Scan => scan(cfg, &mut out),
    };
    if let Err(f) = &code {
        out.log(format!("error: {}", f.message));
    }
    out.finish()?;
    code
}

/// Effective configuration without the output location, so runs that differ
/// only in `--out` produce identical files.
fn snapshot(cfg: &RunConfig) -> String {
    let mut c = cfg.clone();
    c.output = Default::default();
    let text = c.to_toml();
    text.lines()
        .scan(false, |in_output, line| {
            if line.starts_with('[') {
                *in_output = line.trim() == "[output]";
            }
            Some((!*in_output).then_some(line))
        })
        .flatten()
        .map(|l| format!("{l}\n"))
        .collect::<String>()
        .trim_end()
        .to_string()
        + "\n"
}

fn parameters(cfg: &RunConfig) -> serde_json::Value {
    let mut v = serde_json::to_value(cfg).expect("config serializes");
    if let Some(m) = v.as_object_mut() {
        m.remove("output");
    }
    v
}

fn base_mesh(cfg: &RunConfig) -> Result<Mesh, Failure> {
    let d = &cfg.domain;
    Ok(build_rectangle_mesh(d.nx, d.ny, cfg.rect(), &d.gamma1)?)
}

fn space(cfg: &RunConfig) -> Result<FemSpace, Failure> {
    Ok(FemSpace::new(base_mesh(cfg)?)?)
}

fn params(cfg: &RunConfig) -> Result<CostParams, Failure> {
    let p = &cfg.problem;
    CostParams::new(p.weight, p.b, p.q).map_err(|e| Failure::config("problem", e))
}

fn control(cfg: &RunConfig, space: &FemSpace) -> Result<Vec<f64>, Failure> {
    match &cfg.problem.g {
        ControlSpec::Preset(g) => Ok(space.interpolate(|x, y| g.eval(x, y))?.into_values()),
        ControlSpec::File { file } => {
            read_nodal(file, space.num_vertices()).map_err(|e| Failure::config("problem.g.file", e))
        }
    }
}

fn preset_control(cfg: &RunConfig) -> Result<ScalarFn, Failure> {
    match &cfg.problem.g {
        ControlSpec::Preset(g) => Ok(*g),
        ControlSpec::File { .. } => Err(Failure::config(
            "problem.g",
            "refinement sweeps need a formula control, not a nodal file",
        )),
    }
}

fn write_summary(out: &mut OutputDir, summary: &ExperimentSummary) -> Result<(), Failure> {
    for a in &summary.assertions {
        out.log(format!("{} {}: {}", if a.passed { "PASS" } else { "FAIL" }, a.name, a.detail));
    }
    let json = summary.to_json()?;
    out.write_str("summary.json", &(json + "\n"))
}

fn verdict(summary: &ExperimentSummary) -> u8 {
    if summary.passed {
        EXIT_OK
    } else {
        EXIT_ASSERTION
    }
}

fn solve(cfg: &RunConfig, out: &mut OutputDir) -> Result<u8, Failure> {
    let space = space(cfg)?;
    let params = params(cfg)?;
    let g = control(cfg, &space)?;
    let flux = space.flux_load(|x, y| params.q.eval(x, y))?;
    let problem = ObstacleProblem::new(&space, &g, &flux, params.b)?;
    let solver = cfg.solver();
    out.log(format!(
        "solve: {}x{} mesh, {} vertices, solver {}",
        cfg.domain.nx,
        cfg.domain.ny,
        space.num_vertices(),
        solver.name()
    ));
    let sol = match solver.solve(&problem) {
        Ok(s) => s,
        Err(e @ Error::NotConverged { .. }) => {
            out.log(format!("solver failed: {e}"));
            return Err(e.into());
        }
        Err(e) => return Err(e.into()),
    };
    out.write("solution.csv", |w| {
        sol.write_csv(&space, &mut *w).map_err(|e| std::io::Error::other(e.to_string()))
    })?;
    let cp = ControlProblem::new(&space, params, solver)?;
    let cost = cp.evaluate_cost_warm(&g, Some(&sol.state))?;
    out.log(format!(
        "iterations {}, residual {:e}, active nodes {}, cost {}",
        sol.iterations,
        sol.complementarity_residual,
        sol.active_set.len(),
        cost.cost
    ));

    let mut summary = ExperimentSummary::new("solve", parameters(cfg), None);
    summary.push(Assertion::new(
        "converged",
        sol.converged,
        format!("{} iterations, residual {:e}", sol.iterations, sol.complementarity_residual),
    ));
    let m = &mut summary.metrics;
    m.insert("iterations".into(), sol.iterations as f64);
    m.insert("complementarity_residual".into(), sol.complementarity_residual);
    m.insert("active_size".into(), sol.active_set.len() as f64);
    m.insert("cost".into(), cost.cost);
    m.insert("u_min".into(), sol.state.iter().copied().fold(f64::INFINITY, f64::min));
    m.insert("u_max".into(), sol.state.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    write_summary(out, &summary)?;
    Ok(if sol.converged { EXIT_OK } else { EXIT_NOT_CONVERGED })
}

fn optimize(cfg: &RunConfig, out: &mut OutputDir) -> Result<u8, Failure> {
    let space = space(cfg)?;
    let params = params(cfg)?;
    let g0 = control(cfg, &space)?;
    let cp = ControlProblem::new(&space, params, cfg.solver())?;
    out.log(format!(
        "optimize: {}x{} mesh, M = {}, b = {}, solver {}",
        cfg.domain.nx,
        cfg.domain.ny,
        params.weight,
        params.b,
        cp.solver().name()
    ));
    let res = cp.optimize(&g0, cfg.optimizer_options())?;
    out.write("trace.csv", |w| res.write_trace(&mut *w).map_err(|e| std::io::Error::other(e.to_string())))?;
    out.log(format!(
        "{} after {} iterations: cost {}, gradient norm {:e} (gtol {:e})",
        res.message, res.iterations, res.cost, res.gradient_norm, res.gtol
    ));
    out.write_field("control.csv", &space, "g", &res.control)?;
    out.write("state.csv", |w| {
        res.state.write_csv(&space, &mut *w).map_err(|e| std::io::Error::other(e.to_string()))
    })?;
    let report = cp.evaluate_cost_warm(&res.control, Some(&res.state.state))?;
    let cost_json = serde_json::to_string_pretty(&report).expect("cost report serializes");
    out.write_str("cost.json", &(cost_json + "\n"))?;

    let bound = cp.cost_bound()?;
    let control_norm = space.l2_norm(&res.control)?;
    let costs = res.costs();
    let mut summary = ExperimentSummary::new("optimize", parameters(cfg), None);
    summary.push(Assertion::new("converged", res.converged, res.message.clone()));
    summary.push(Assertion::new(
        "cost_history_non_increasing",
        costs.windows(2).all(|w| w[1] <= w[0]),
        format!("{} recorded costs", costs.len()),
    ));
    let m = &mut summary.metrics;
    m.insert("cost".into(), res.cost);
    m.insert("state_term".into(), report.state_term);
    m.insert("control_term".into(), report.control_term);
    m.insert("gradient_norm".into(), res.gradient_norm);
    m.insert("gtol".into(), res.gtol);
    m.insert("iterations".into(), res.iterations as f64);
    m.insert("control_norm".into(), control_norm);
    m.insert("control_bound".into(), bound.control_bound());
    m.insert("u0_norm".into(), bound.u0_norm);
    m.insert("lambda".into(), bound.lambda);
    m.insert("active_size".into(), res.state.active_set.len() as f64);
    out.log(format!("‖g‖_H = {control_norm:e}, ‖u_h0‖_H / M = {:e}", bound.control_bound()));
    write_summary(out, &summary)?;
    Ok(if !res.converged {
        EXIT_NOT_CONVERGED
    } else {
        verdict(&summary)
    })
}

fn log_table(out: &mut OutputDir, t: &ConvergenceTable) {
    out.log(format!("{}: reference {}", t.experiment, t.reference));
    for r in &t.rows {
        out.log(format!(
            "level {} h {:.4e} error_v {:.4e} error_h {:.4e} cost_gap {:.4e} active {}",
            r.level, r.h, r.error_v, r.error_h, r.cost_gap, r.active_size
        ));
    }
}

fn table_summary(cfg: &RunConfig, name: &str, t: &ConvergenceTable) -> ExperimentSummary {
    let mut s = ExperimentSummary::new(name, parameters(cfg), None);
    s.extend("", &t.assertions);
    s.add_rates("", &t.rates);
    s.rates = std::mem::take(&mut s.rates)
        .into_iter()
        .map(|(k, v)| (k.trim_start_matches('.').to_string(), v))
        .collect();
    s.metrics.insert("oracle_level".into(), t.oracle_level as f64);
    s.metrics.insert("oracle_active_size".into(), t.oracle_active_size as f64);
    if let Some(last) = t.rows.last() {
        s.metrics.insert("final_error_v".into(), last.error_v);
        s.metrics.insert("final_cost_gap".into(), last.cost_gap);
    }
    s
}

fn sweep(cfg: &RunConfig, out: &mut OutputDir) -> Result<u8, Failure> {
    let params = params(cfg)?;
    let solver = cfg.solver();
    let e = &cfg.experiment;
    let seed = Some(e.seed);
    let summary = match e.sweep {
        SweepKind::State => {
            let g = preset_control(cfg)?;
            let r = cfg.refinement().map_err(|err| Failure::config(&err.field, err.message))?;
            let t = run_state_and_cost_convergence(&base_mesh(cfg)?, &g, params, &solver, r)?;
            log_table(out, &t);
            out.write("convergence.csv", |w| t.write_csv(&mut *w).map_err(other))?;
            table_summary(cfg, "sweep_state", &t)
        }
        SweepKind::Control => {
            let r = cfg.refinement().map_err(|err| Failure::config(&err.field, err.message))?;
            let t = run_control_convergence(&base_mesh(cfg)?, params, &solver, r, &e.g0, cfg.optimizer_options())?;
            log_table(out, &t);
            out.write("convergence.csv", |w| t.write_csv(&mut *w).map_err(other))?;
            table_summary(cfg, "sweep_control", &t)
        }
        SweepKind::Lipschitz => {
            let space = space(cfg)?;
            let r = run_lipschitz_check(&space, params, &solver, e.trials, e.seed, cfg.sampling())?;
            out.log(format!("lambda_h {}, worst ratio {}", r.lambda, r.worst_ratio));
            out.write("lipschitz.csv", |w| r.write_csv(&mut *w).map_err(other))?;
            let mut s = ExperimentSummary::new("sweep_lipschitz", parameters(cfg), seed);
            s.extend("", &r.assertions);
            s.metrics.insert("lambda".into(), r.lambda);
            s.metrics.insert("worst_ratio".into(), r.worst_ratio);
            s
        }
        SweepKind::Parallelogram => {
            let space = space(cfg)?;
            let r = run_parallelogram_check(&space, params, &solver, e.trials, e.seed, cfg.sampling())?;
            out.write("parallelogram.csv", |w| {
                writeln!(w, "trials,state_residual,control_residual")?;
                writeln!(w, "{},{:e},{:e}", r.trials, r.state_residual, r.control_residual)
            })?;
            let mut s = ExperimentSummary::new("sweep_parallelogram", parameters(cfg), seed);
            s.push(Assertion::new(
                "parallelogram_residual",
                r.state_residual <= EXACT_TOL && r.control_residual <= EXACT_TOL,
                format!("states {:e}, controls {:e}", r.state_residual, r.control_residual),
            ));
            s.metrics.insert("state_residual".into(), r.state_residual);
            s.metrics.insert("control_residual".into(), r.control_residual);
            s
        }
        SweepKind::CostBound => {
            let space = space(cfg)?;
            let r = run_cost_bound_check(&space, params, &solver, e.trials, e.seed, cfg.sampling())?;
            let b = r.bound;
            out.write("cost_bound.csv", |w| {
                writeln!(w, "trials,weight,u0_norm,lambda,constant,worst_margin,worst_sharp_margin")?;
                writeln!(
                    w,
                    "{},{},{:e},{:e},{:e},{:e},{:e}",
                    r.trials, b.weight, b.u0_norm, b.lambda, b.constant, r.worst_margin, r.worst_sharp_margin
                )
            })?;
            let mut s = ExperimentSummary::new("sweep_cost_bound", parameters(cfg), seed);
            s.push(Assertion::new(
                "cost_lower_bound",
                r.worst_margin >= -EXACT_TOL && r.worst_sharp_margin >= -EXACT_TOL,
                format!("margins {:e} (sharp {:e})", r.worst_margin, r.worst_sharp_margin),
            ));
            s.metrics.insert("constant".into(), b.constant);
            s.metrics.insert("worst_margin".into(), r.worst_margin);
            s.metrics.insert("worst_sharp_margin".into(), r.worst_sharp_margin);
            s
        }
        SweepKind::Gradient => {
            let space = space(cfg)?;
            let r = run_gradient_check(
                &space,
                params,
                &solver,
                e.trials,
                e.directions,
                e.step,
                e.seed,
                cfg.sampling(),
            )?;
            out.write("gradient.csv", |w| {
                writeln!(w, "control,direction,analytic,finite_difference,relative_error,active_size")?;
                for x in &r.records {
                    writeln!(
                        w,
                        "{},{},{:e},{:e},{:e},{}",
                        x.control, x.direction, x.analytic, x.finite_difference, x.relative_error, x.active_size
                    )?;
                }
                Ok(())
            })?;
            let mut s = ExperimentSummary::new("sweep_gradient", parameters(cfg), seed);
            s.push(Assertion::new(
                "gradient_matches_differences",
                r.worst_relative_error <= 1e-5,
                format!("worst relative error {:e}, {} unstable controls resampled", r.worst_relative_error, r.rejected),
            ));
            s.metrics.insert("worst_relative_error".into(), r.worst_relative_error);
            s.metrics.insert("rejected".into(), r.rejected as f64);
            s
        }
    };
    write_summary(out, &summary)?;
    Ok(verdict(&summary))
}

fn scan(cfg: &RunConfig, out: &mut OutputDir) -> Result<u8, Failure> {
    let space = space(cfg)?;
    let params = params(cfg)?;
    let e = &cfg.experiment;
    let r = run_open_problem_scan(&space, params, &cfg.solver(), e.trials, &e.mu_grid, e.seed, cfg.sampling())?;
    out.write("scan.csv", |w| r.write_csv(&mut *w).map_err(other))?;
    let s = &r.summary;
    out.log(format!(
        "scan: {} records, {} with a violation (pointwise {}, norm {})",
        s.records, s.violations, s.pointwise_violations, s.norm_violations
    ));
    let mut summary = ExperimentSummary::new("scan", parameters(cfg), Some(e.seed));
    summary.extend("", &r.assertions);
    let m = &mut summary.metrics;
    m.insert("records".into(), s.records as f64);
    m.insert("violations".into(), s.violations as f64);
    m.insert("pointwise_violations".into(), s.pointwise_violations as f64);
    m.insert("norm_violations".into(), s.norm_violations as f64);
    m.insert("implication_failures".into(), s.implication_failures as f64);
    m.insert("min_pointwise_margin".into(), s.min_pointwise_margin);
    m.insert("min_norm_margin".into(), s.min_norm_margin);
    write_summary(out, &summary)?;
    // The ordering is an open question: report, never fail.
    Ok(EXIT_OK)
}

fn other(e: Error) -> std::io::Error {
    std::io::Error::other(e.to_string())
}
