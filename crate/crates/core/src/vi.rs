//! Discrete obstacle problem: find `u ∈ K_h = {v ≥ 0, v = b on Γ1}` with
//! `a(u, v − u) ≥ (g, v − u)_H − (q, v − u)_Q` for all `v ∈ K_h`.
//!
//! In matrix form with `f = M_H g − F_q` this is the complementarity system
//! on the free nodes
//!
//! ```text
//! u ≥ 0,   λ = A u − f ≥ 0,   u · λ = 0,
//! ```
//!
//! with `u = b` held fixed on the Dirichlet nodes. Three solvers are
//! provided: projected SOR, the primal-dual active set method, and an
//! exhaustive enumeration of active sets for tiny problems.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::fem::FemSpace;
use crate::field::{NodalField, StateField};
use crate::linalg::{norm_inf, solve_reduced, CgOptions};

/// KKT sign tolerance of the enumeration oracle.
pub const ORACLE_KKT_TOL: f64 = 1e-11;
/// Largest free-node count the enumeration oracle accepts.
pub const ORACLE_MAX_FREE: usize = 16;

#[derive(Debug, Clone)]
pub struct ObstacleProblem<'a> {
    space: &'a FemSpace,
    load: Vec<f64>,
    b: f64,
    free_rhs: Vec<f64>,
    scale: f64,
}

impl<'a> ObstacleProblem<'a> {
    /// Problem with load `M_H g − F_q`, where `flux_load = F_q`.
    pub fn new(space: &'a FemSpace, g: &[f64], flux_load: &[f64], b: f64) -> Result<Self> {
        check_len(space.num_vertices(), g.len())?;
        check_len(space.num_vertices(), flux_load.len())?;
        let mut load = space.control_load(g)?;
        load.iter_mut().zip(flux_load).for_each(|(l, q)| *l -= q);
        Self::from_load(space, load, b)
    }

    /// Problem with an arbitrary load vector `f`.
    pub fn from_load(space: &'a FemSpace, load: Vec<f64>, b: f64) -> Result<Self> {
        check_len(space.num_vertices(), load.len())?;
        if !b.is_finite() || b < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "Dirichlet value b must be finite and nonnegative, got {b}"
            )));
        }
        if load.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericDomain("load vector has non-finite entries".into()));
        }
        if space.dofs().dirichlet_nodes().is_empty() {
            return Err(Error::InvalidArgument("problem has no Dirichlet nodes".into()));
        }
        let dofs = space.dofs();
        let a = space.stiffness();
        let mut free_rhs = vec![0.0; load.len()];
        for &i in dofs.free_nodes() {
            let lift: f64 = a.row(i).filter(|&(j, _)| !dofs.is_free(j)).map(|(_, v)| v * b).sum();
            free_rhs[i] = load[i] - lift;
        }
        let scale = norm_inf(&free_rhs).max(1.0);
        Ok(Self { space, load, b, free_rhs, scale })
    }

    pub fn space(&self) -> &'a FemSpace {
        self.space
    }

    pub fn load(&self) -> &[f64] {
        &self.load
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn num_free(&self) -> usize {
        self.space.dofs().free_nodes().len()
    }

    /// Residual scale `max(1, ||f_free||_inf)` with the Dirichlet lift folded in.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Vector with `b` on Dirichlet nodes and `fill` on free nodes.
    pub fn lifted(&self, fill: f64) -> Vec<f64> {
        let dofs = self.space.dofs();
        (0..dofs.len()).map(|i| if dofs.is_free(i) { fill } else { self.b }).collect()
    }

    /// Multiplier `λ = A u − f` on free nodes; zero on Dirichlet nodes.
    pub fn multiplier(&self, u: &[f64]) -> Result<Vec<f64>> {
        let mut lam = self.space.stiffness().mul(u)?;
        let dofs = self.space.dofs();
        for (i, l) in lam.iter_mut().enumerate() {
            *l = if dofs.is_free(i) { *l - self.load[i] } else { 0.0 };
        }
        Ok(lam)
    }

    /// Natural complementarity residual `max_i |min(u_i, λ_i)| / scale` over
    /// free nodes, or infinity if `u` violates the Dirichlet condition.
    pub fn residual(&self, u: &[f64]) -> Result<f64> {
        let lam = self.multiplier(u)?;
        let dofs = self.space.dofs();
        if dofs.dirichlet_nodes().iter().any(|&i| u[i] != self.b) {
            return Ok(f64::INFINITY);
        }
        Ok(dofs
            .free_nodes()
            .iter()
            .map(|&i| u[i].min(lam[i]).abs())
            .fold(0.0, f64::max)
            / self.scale)
    }

    /// Projection onto `K_h`.
    pub fn project(&self, u: &mut [f64]) {
        let dofs = self.space.dofs();
        for (i, v) in u.iter_mut().enumerate() {
            *v = if dofs.is_free(i) { v.max(0.0) } else { self.b };
        }
    }

    /// Whether `v ∈ K_h`.
    pub fn is_feasible(&self, v: &[f64]) -> bool {
        let dofs = self.space.dofs();
        v.len() == dofs.len()
            && v.iter().enumerate().all(|(i, &x)| {
                x.is_finite() && if dofs.is_free(i) { x >= 0.0 } else { x == self.b }
            })
    }

    fn finish(&self, u: Vec<f64>, iterations: usize, tol: f64) -> Result<VISolution> {
        let residual = self.residual(&u)?;
        let dofs = self.space.dofs();
        let active_set = dofs.free_nodes().iter().copied().filter(|&i| u[i] <= 0.0).collect();
        Ok(VISolution {
            state: NodalField::new(u, self.space.level())?,
            active_set,
            complementarity_residual: residual,
            iterations,
            converged: residual <= tol,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VISolution {
    pub state: StateField,
    /// Free nodes with `u = 0`.
    pub active_set: Vec<usize>,
    pub complementarity_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl VISolution {
    /// Checks membership in `K_h` and the KKT sign conditions at tolerance
    /// `tol` (relative to the problem scale).
    pub fn check(&self, problem: &ObstacleProblem<'_>, tol: f64) -> Result<()> {
        let u = &self.state;
        check_len(problem.space.num_vertices(), u.len())?;
        let dofs = problem.space.dofs();
        let scale = problem.scale();
        for &i in dofs.dirichlet_nodes() {
            if u[i] != problem.b {
                return Err(Error::Oracle(format!("u[{i}] = {} != b on Γ1", u[i])));
            }
        }
        let lam = problem.multiplier(u)?;
        let active: std::collections::HashSet<usize> = self.active_set.iter().copied().collect();
        for &i in dofs.free_nodes() {
            if u[i] < -tol {
                return Err(Error::Oracle(format!("u[{i}] = {:e} below obstacle", u[i])));
            }
            if active.contains(&i) {
                if lam[i] < -tol * scale || u[i] > tol {
                    return Err(Error::Oracle(format!(
                        "active node {i}: u = {:e}, λ = {:e}",
                        u[i], lam[i]
                    )));
                }
            } else if lam[i].abs() > tol * scale {
                return Err(Error::Oracle(format!("inactive node {i}: λ = {:e}", lam[i])));
            }
        }
        Ok(())
    }

    pub fn is_active(&self, n: usize) -> Vec<bool> {
        let mut flags = vec![false; n];
        for &i in &self.active_set {
            flags[i] = true;
        }
        flags
    }

    /// Per-vertex `x,y,u,active` table.
    pub fn write_csv<W: Write>(&self, space: &FemSpace, mut w: W) -> Result<()> {
        check_len(space.num_vertices(), self.state.len())?;
        let active = self.is_active(self.state.len());
        writeln!(w, "x,y,u,active")?;
        for (i, p) in space.mesh().vertices().iter().enumerate() {
            writeln!(w, "{},{},{},{}", p[0], p[1], self.state[i], u8::from(active[i]))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsorOptions {
    pub omega: f64,
    pub tol: f64,
    /// Sweep limit; 0 selects `50 * n`.
    pub max_iter: usize,
}

impl Default for PsorOptions {
    fn default() -> Self {
        Self { omega: 1.5, tol: 1e-10, max_iter: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdasOptions {
    pub c: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PdasOptions {
    fn default() -> Self {
        Self { c: 1.0, tol: 1e-10, max_iter: 100 }
    }
}

fn check_tol(tol: f64) -> Result<()> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    Ok(())
}

/// Projected successive over-relaxation from the start `u ≡ 0` on free nodes.
pub fn solve_psor(problem: &ObstacleProblem<'_>, opts: PsorOptions) -> Result<VISolution> {
    let start = problem.lifted(0.0);
    solve_psor_from(problem, opts, &start)
}

/// Projected SOR from `start` (projected onto `K_h` first).
pub fn solve_psor_from(
    problem: &ObstacleProblem<'_>,
    opts: PsorOptions,
    start: &[f64],
) -> Result<VISolution> {
    if !(opts.omega > 0.0 && opts.omega < 2.0) {
        return Err(Error::InvalidArgument(format!(
            "relaxation factor must lie in (0, 2), got {}",
            opts.omega
        )));
    }
    check_tol(opts.tol)?;
    let space = problem.space;
    check_len(space.num_vertices(), start.len())?;
    let a = space.stiffness();
    let dofs = space.dofs();
    let free = dofs.free_nodes();
    let max_iter = if opts.max_iter == 0 { 50 * space.num_vertices() } else { opts.max_iter };

    let diag: Vec<f64> = free.iter().map(|&i| a.get(i, i)).collect();
    if let Some(d) = diag.iter().find(|&&d| !(d > 0.0)) {
        return Err(Error::Solver(format!("non-positive stiffness diagonal {d}")));
    }
    let mut u = start.to_vec();
    problem.project(&mut u);

    let mut sweeps = 0;
    loop {
        if problem.residual(&u)? <= opts.tol {
            break;
        }
        if sweeps >= max_iter {
            break;
        }
        for (k, &i) in free.iter().enumerate() {
            let off: f64 = a.row(i).filter(|&(j, _)| j != i).map(|(j, v)| v * u[j]).sum();
            let gs = (problem.load[i] - off) / diag[k];
            u[i] = ((1.0 - opts.omega) * u[i] + opts.omega * gs).max(0.0);
        }
        sweeps += 1;
    }
    problem.finish(u, sweeps, opts.tol)
}

/// Primal-dual active set method starting from an empty active set.
pub fn solve_pdas(problem: &ObstacleProblem<'_>, opts: PdasOptions) -> Result<VISolution> {
    solve_pdas_from(problem, opts, None)
}

/// Primal-dual active set method. With `guess`, the initial active set is the
/// free nodes where the guess is `≤ 0`, and the guess warm-starts the reduced
/// solves.
pub fn solve_pdas_from(
    problem: &ObstacleProblem<'_>,
    opts: PdasOptions,
    guess: Option<&[f64]>,
) -> Result<VISolution> {
    if !(opts.c > 0.0 && opts.c.is_finite()) {
        return Err(Error::InvalidArgument(format!("PDAS weight c must be positive, got {}", opts.c)));
    }
    check_tol(opts.tol)?;
    let space = problem.space;
    let n = space.num_vertices();
    let dofs = space.dofs();
    let a = space.stiffness();

    let mut u = match guess {
        Some(g) => {
            check_len(n, g.len())?;
            let mut u = g.to_vec();
            problem.project(&mut u);
            u
        }
        None => problem.lifted(0.0),
    };
    let mut active: Vec<bool> =
        (0..n).map(|i| guess.is_some() && dofs.is_free(i) && u[i] <= 0.0).collect();

    let cg = CgOptions {
        rtol: 1e-14,
        atol: 1e-2 * opts.tol * problem.scale,
        max_iter: 0,
    };
    let mut mask = vec![false; n];
    for it in 1..=opts.max_iter {
        for i in 0..n {
            mask[i] = dofs.is_free(i) && !active[i];
            if active[i] {
                u[i] = 0.0;
            }
        }
        solve_reduced(a, &problem.free_rhs, &mask, &mut u, cg)
            .map_err(|e| Error::Solver(format!("reduced system at PDAS step {it}: {e}")))?;
        let lam = problem.multiplier(&u)?;

        let mut changed = false;
        for i in 0..n {
            if !dofs.is_free(i) {
                continue;
            }
            // λ vanishes on the inactive set up to the linear solve tolerance.
            let l = if active[i] { lam[i] } else { 0.0 };
            let next = l - opts.c * u[i] > 0.0;
            if next != active[i] {
                changed = true;
                active[i] = next;
            }
        }
        if !changed {
            return problem.finish(u, it, opts.tol);
        }
    }
    let mut sol = problem.finish(u, opts.max_iter, opts.tol)?;
    sol.converged = false;
    Ok(sol)
}

/// Solves every reduced equality system over all `2^n` active/inactive
/// partitions of the free nodes and returns the partitions whose solution
/// meets the KKT sign conditions to [`ORACLE_KKT_TOL`].
pub fn kkt_partitions(problem: &ObstacleProblem<'_>) -> Result<Vec<(Vec<usize>, Vec<f64>)>> {
    let free = problem.space.dofs().free_nodes().to_vec();
    let nf = free.len();
    if nf > ORACLE_MAX_FREE {
        return Err(Error::InvalidArgument(format!(
            "enumeration oracle supports at most {ORACLE_MAX_FREE} free nodes, got {nf}"
        )));
    }
    let a = problem.space.stiffness();
    let scale = problem.scale;
    let mut passing = Vec::new();
    for bits in 0u32..(1u32 << nf) {
        let inactive: Vec<usize> =
            (0..nf).filter(|k| bits & (1 << k) == 0).map(|k| free[k]).collect();
        let mut u = problem.lifted(0.0);
        if !inactive.is_empty() {
            let m = a.dense_submatrix(&inactive);
            let rhs = nalgebra::DVector::from_iterator(
                inactive.len(),
                inactive.iter().map(|&i| problem.free_rhs[i]),
            );
            let chol = m
                .cholesky()
                .ok_or_else(|| Error::Oracle("reduced stiffness not positive definite".into()))?;
            let sol = chol.solve(&rhs);
            for (k, &i) in inactive.iter().enumerate() {
                u[i] = sol[k];
            }
        }
        if inactive.iter().any(|&i| u[i] < -ORACLE_KKT_TOL) {
            continue;
        }
        let lam = problem.multiplier(&u)?;
        let active: Vec<usize> = (0..nf).filter(|k| bits & (1 << k) != 0).map(|k| free[k]).collect();
        if active.iter().all(|&i| lam[i] >= -ORACLE_KKT_TOL * scale) {
            passing.push((active, u));
        }
    }
    Ok(passing)
}

/// Exhaustive active-set enumeration for problems with at most
/// [`ORACLE_MAX_FREE`] free nodes.
pub fn brute_force_oracle(problem: &ObstacleProblem<'_>) -> Result<VISolution> {
    let passing = kkt_partitions(problem)?;
    let (active, u) = passing
        .first()
        .cloned()
        .ok_or_else(|| Error::Oracle("no active/inactive partition satisfies the KKT conditions".into()))?;
    for (other, v) in &passing[1..] {
        let diff = u.iter().zip(v).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        if diff > 1e-9 {
            return Err(Error::Oracle(format!(
                "partitions {active:?} and {other:?} give different solutions (diff {diff:e})"
            )));
        }
    }
    let enumerated = 1usize << problem.num_free();
    let residual = problem.residual(&u)?;
    Ok(VISolution {
        state: NodalField::new(u, problem.space.level())?,
        active_set: active,
        complementarity_residual: residual,
        iterations: enumerated,
        converged: true,
    })
}

/// Worst value of `a(u, v − u) − (g, v − u)_H + (q, v − u)_Q` over the
/// probes; nonnegative (up to round-off) when `u` solves the inequality.
pub fn verify_vi(
    problem: &ObstacleProblem<'_>,
    solution: &VISolution,
    probes: &[Vec<f64>],
) -> Result<f64> {
    let u = &solution.state;
    check_len(problem.space.num_vertices(), u.len())?;
    let au = problem.space.stiffness().mul(u)?;
    let mut worst = f64::INFINITY;
    for (k, v) in probes.iter().enumerate() {
        if !problem.is_feasible(v) {
            return Err(Error::InvalidArgument(format!("probe {k} is not in K_h")));
        }
        let value: f64 = (0..v.len()).map(|i| (v[i] - u[i]) * (au[i] - problem.load[i])).sum();
        worst = worst.min(value);
    }
    Ok(worst)
}

/// Solver selection shared by the control and experiment layers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum VISolver {
    Psor(PsorOptions),
    Pdas(PdasOptions),
}

impl Default for VISolver {
    fn default() -> Self {
        VISolver::Pdas(PdasOptions::default())
    }
}

impl VISolver {
    pub fn name(&self) -> &'static str {
        match self {
            VISolver::Psor(_) => "psor",
            VISolver::Pdas(_) => "pdas",
        }
    }

    pub fn tol(&self) -> f64 {
        match self {
            VISolver::Psor(o) => o.tol,
            VISolver::Pdas(o) => o.tol,
        }
    }

    pub fn solve(&self, problem: &ObstacleProblem<'_>) -> Result<VISolution> {
        self.solve_warm(problem, None)
    }

    pub fn solve_warm(&self, problem: &ObstacleProblem<'_>, guess: Option<&[f64]>) -> Result<VISolution> {
        match self {
            VISolver::Psor(o) => match guess {
                Some(g) => solve_psor_from(problem, *o, g),
                None => solve_psor(problem, *o),
            },
            VISolver::Pdas(o) => solve_pdas_from(problem, *o, guess),
        }
    }

    /// Like [`VISolver::solve`], but a non-converged result is an error.
    pub fn solve_converged(&self, problem: &ObstacleProblem<'_>, guess: Option<&[f64]>) -> Result<VISolution> {
        let sol = self.solve_warm(problem, guess)?;
        if !sol.converged {
            return Err(Error::NotConverged {
                iterations: sol.iterations,
                residual: sol.complementarity_residual,
            });
        }
        Ok(sol)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_rectangle_mesh, Rect, Side};

    fn space(n: usize) -> FemSpace {
        FemSpace::new(build_rectangle_mesh(n, n, Rect::UNIT, &[Side::Left]).unwrap()).unwrap()
    }

    fn constant_problem(space: &FemSpace, g: f64, b: f64) -> ObstacleProblem<'_> {
        let gv = vec![g; space.num_vertices()];
        let q = vec![0.0; space.num_vertices()];
        ObstacleProblem::new(space, &gv, &q, b).unwrap()
    }

    #[test]
    fn constant_solution_all_solvers() {
        let s = space(3);
        let p = constant_problem(&s, 0.0, 1.0);
        for sol in [
            solve_psor(&p, PsorOptions { tol: 1e-14, ..Default::default() }).unwrap(),
            solve_pdas(&p, PdasOptions::default()).unwrap(),
            brute_force_oracle(&p).unwrap(),
        ] {
            assert!(sol.converged);
            assert!(sol.active_set.is_empty());
            for &v in sol.state.iter() {
                assert!((v - 1.0).abs() < 1e-12, "{v}");
            }
        }
    }

    #[test]
    fn large_positive_source_is_inactive_and_matches_linear_solve() {
        let s = space(4);
        let p = constant_problem(&s, 10.0, 1.0);
        let pdas = solve_pdas(&p, PdasOptions::default()).unwrap();
        assert_eq!(pdas.iterations, 1);
        assert!(pdas.active_set.is_empty());

        // Dense oracle for A_ff u_f = f_f − A_fd b.
        let free = s.dofs().free_nodes().to_vec();
        let m = s.stiffness().dense_submatrix(&free);
        let rhs = nalgebra::DVector::from_iterator(free.len(), free.iter().map(|&i| p.free_rhs[i]));
        let x = m.lu().solve(&rhs).unwrap();
        for (k, &i) in free.iter().enumerate() {
            assert!((pdas.state[i] - x[k]).abs() < 1e-10);
        }
        let psor = solve_psor(&p, PsorOptions { tol: 1e-13, ..Default::default() }).unwrap();
        assert!(psor.state.max_abs_diff(&pdas.state) < 1e-9);
    }

    #[test]
    fn all_active_when_b_zero_and_negative_source() {
        let s = space(3);
        let p = constant_problem(&s, -1.0, 0.0);
        let sol = solve_pdas(&p, PdasOptions::default()).unwrap();
        assert!(sol.converged);
        assert_eq!(sol.active_set, s.dofs().free_nodes());
        assert!(sol.state.iter().all(|&v| v == 0.0));
        let oracle = brute_force_oracle(&p).unwrap();
        assert_eq!(oracle.active_set, s.dofs().free_nodes());
    }

    #[test]
    fn active_set_example_matches_oracle() {
        let s = space(3);
        let p = constant_problem(&s, -50.0, 0.05);
        let oracle = brute_force_oracle(&p).unwrap();
        assert!(!oracle.active_set.is_empty());
        oracle.check(&p, 1e-10).unwrap();
        let psor = solve_psor(&p, PsorOptions { tol: 1e-13, ..Default::default() }).unwrap();
        let pdas = solve_pdas(&p, PdasOptions::default()).unwrap();
        assert!(psor.converged && pdas.converged);
        assert!(psor.state.max_abs_diff(&oracle.state) < 1e-9);
        assert!(pdas.state.max_abs_diff(&oracle.state) < 1e-9);
        assert_eq!(pdas.active_set, oracle.active_set);
    }

    #[test]
    fn oracle_rejects_large_problems() {
        let s = space(5);
        let p = constant_problem(&s, 0.0, 1.0);
        assert!(matches!(brute_force_oracle(&p), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn psor_reports_non_convergence() {
        let s = space(6);
        let p = constant_problem(&s, 10.0, 1.0);
        let sol = solve_psor(&p, PsorOptions { max_iter: 2, ..Default::default() }).unwrap();
        assert!(!sol.converged);
        assert_eq!(sol.iterations, 2);
        assert!(matches!(
            VISolver::Psor(PsorOptions { max_iter: 2, ..Default::default() }).solve_converged(&p, None),
            Err(Error::NotConverged { .. })
        ));
    }

    #[test]
    fn invalid_solver_parameters() {
        let s = space(2);
        let p = constant_problem(&s, 0.0, 1.0);
        assert!(solve_psor(&p, PsorOptions { omega: 2.0, ..Default::default() }).is_err());
        assert!(solve_psor(&p, PsorOptions { tol: 0.0, ..Default::default() }).is_err());
        assert!(solve_pdas(&p, PdasOptions { c: 0.0, ..Default::default() }).is_err());
        let gv = vec![0.0; s.num_vertices()];
        assert!(ObstacleProblem::new(&s, &gv, &gv, -1.0).is_err());
        assert!(ObstacleProblem::new(&s, &gv[1..], &gv, 1.0).is_err());
    }

    #[test]
    fn verify_vi_probes() {
        let s = space(3);
        let p = constant_problem(&s, -50.0, 0.05);
        let sol = solve_pdas(&p, PdasOptions::default()).unwrap();
        let same = sol.state.values().to_vec();
        assert_eq!(verify_vi(&p, &sol, &[same]).unwrap(), 0.0);
        let b = p.lifted(p.b());
        assert!(verify_vi(&p, &sol, &[b]).unwrap() >= -1e-12);
        let bad = p.lifted(-1.0);
        assert!(matches!(verify_vi(&p, &sol, &[bad]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn solution_csv_has_header() {
        let s = space(1);
        let p = constant_problem(&s, 0.0, 1.0);
        let sol = solve_pdas(&p, PdasOptions::default()).unwrap();
        let mut buf = Vec::new();
        sol.write_csv(&s, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("x,y,u,active"));
        assert_eq!(lines.count(), 4);
    }
}
