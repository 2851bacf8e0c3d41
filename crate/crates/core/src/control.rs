//! Discrete cost `J_h(g) = ½‖u_hg‖²_H + (M/2)‖g‖²_H`, its gradient with the
//! active set frozen, and an L-BFGS descent in the `H` inner product.

use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::fem::FemSpace;
use crate::field::{ControlField, NodalField, StateField};
use crate::linalg::{solve_reduced, CgOptions};
use crate::presets::ScalarFn;
use crate::vi::{ObstacleProblem, PdasOptions, VISolution, VISolver};

/// Data of the control problem other than the control itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    /// Control weight `M`.
    pub weight: f64,
    /// Dirichlet value on Γ1.
    pub b: f64,
    /// Flux on Γ2.
    pub q: ScalarFn,
}

impl CostParams {
    pub fn new(weight: f64, b: f64, q: ScalarFn) -> Result<Self> {
        let p = Self { weight, b, q };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.weight > 0.0 && self.weight.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "control weight M must be positive, got {}",
                self.weight
            )));
        }
        if !(self.b >= 0.0 && self.b.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "Dirichlet value b must be finite and nonnegative, got {}",
                self.b
            )));
        }
        self.q.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub cost: f64,
    /// `½‖u_hg‖²_H`.
    pub state_term: f64,
    /// `(M/2)‖g‖²_H`.
    pub control_term: f64,
    #[serde(skip)]
    pub solution: Option<VISolution>,
}

impl CostReport {
    /// The state solution; always present on reports built by this module.
    pub fn state(&self) -> &VISolution {
        self.solution.as_ref().expect("cost report without state")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerOptions {
    /// Stop when `‖∇J‖_H ≤ gtol`; `None` selects `1e-8 · max(1, ‖∇J(g0)‖_H)`.
    pub gtol: Option<f64>,
    pub max_iter: usize,
    /// Armijo slope parameter.
    pub armijo: f64,
    pub backtrack: f64,
    /// Number of stored curvature pairs; 0 gives steepest descent.
    pub memory: usize,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self { gtol: None, max_iter: 500, armijo: 1e-4, backtrack: 0.5, memory: 8 }
    }
}

impl OptimizerOptions {
    pub fn validate(&self) -> Result<()> {
        if let Some(g) = self.gtol {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::InvalidArgument(format!("gtol must be positive, got {g}")));
            }
        }
        if !(self.armijo > 0.0 && self.armijo < 0.5) {
            return Err(Error::InvalidArgument(format!(
                "Armijo parameter must lie in (0, 0.5), got {}",
                self.armijo
            )));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "backtracking factor must lie in (0, 1), got {}",
                self.backtrack
            )));
        }
        Ok(())
    }
}

/// One accepted optimizer iterate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub cost: f64,
    pub grad_norm: f64,
    pub step: f64,
    pub active_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerResult {
    pub control: ControlField,
    pub state: VISolution,
    pub cost: f64,
    pub gradient_norm: f64,
    pub gtol: f64,
    pub trace: Vec<TraceRow>,
    pub iterations: usize,
    pub converged: bool,
    pub message: String,
}

impl OptimizerResult {
    pub fn costs(&self) -> Vec<f64> {
        self.trace.iter().map(|r| r.cost).collect()
    }

    pub fn write_trace<W: Write>(&self, w: W) -> Result<()> {
        write_trace(&self.trace, w)
    }
}

pub fn write_trace<W: Write>(trace: &[TraceRow], mut w: W) -> Result<()> {
    writeln!(w, "iteration,cost,grad_norm,step,active_size")?;
    for r in trace {
        writeln!(w, "{},{:e},{:e},{:e},{}", r.iteration, r.cost, r.grad_norm, r.step, r.active_size)?;
    }
    Ok(())
}

/// Constants of the lower bound `J_h(g) ≥ (M/2)‖g‖²_H − C‖g‖_H`, with
/// `C = ‖u_h0‖_H / λ_h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBound {
    pub weight: f64,
    pub u0_norm: f64,
    pub lambda: f64,
    pub constant: f64,
}

impl CostBound {
    /// `(M/2) t² − C t` at `t = ‖g‖_H`.
    pub fn lower_bound(&self, g_norm: f64) -> f64 {
        0.5 * self.weight * g_norm * g_norm - self.constant * g_norm
    }

    /// The sharper bound `(M/2) t² + ½ max(0, ‖u_h0‖_H − t/λ_h)²` that the
    /// Lipschitz estimate gives before it is weakened to the form above.
    pub fn sharp_lower_bound(&self, g_norm: f64) -> f64 {
        let s = (self.u0_norm - g_norm / self.lambda).max(0.0);
        0.5 * self.weight * g_norm * g_norm + 0.5 * s * s
    }

    /// `‖u_h0‖_H / M`, the a-priori bound on optimal controls.
    pub fn control_bound(&self) -> f64 {
        self.u0_norm / self.weight
    }
}

/// The discrete control problem on one mesh.
#[derive(Debug, Clone)]
pub struct ControlProblem<'a> {
    space: &'a FemSpace,
    params: CostParams,
    flux_load: Vec<f64>,
    solver: VISolver,
}

impl<'a> ControlProblem<'a> {
    pub fn new(space: &'a FemSpace, params: CostParams, solver: VISolver) -> Result<Self> {
        params.validate()?;
        let q = params.q;
        let flux_load = space.flux_load(|x, y| q.eval(x, y))?;
        Ok(Self { space, params, flux_load, solver })
    }

    /// Uses PDAS, whose reduced solves make `J_h` exact to round-off.
    pub fn with_default_solver(space: &'a FemSpace, params: CostParams) -> Result<Self> {
        Self::new(space, params, VISolver::Pdas(PdasOptions::default()))
    }

    pub fn space(&self) -> &'a FemSpace {
        self.space
    }

    pub fn params(&self) -> &CostParams {
        &self.params
    }

    pub fn solver(&self) -> &VISolver {
        &self.solver
    }

    pub fn flux_load(&self) -> &[f64] {
        &self.flux_load
    }

    pub fn state_problem(&self, g: &[f64]) -> Result<ObstacleProblem<'a>> {
        ObstacleProblem::new(self.space, g, &self.flux_load, self.params.b)
    }

    fn check_control(&self, g: &[f64]) -> Result<()> {
        check_len(self.space.num_vertices(), g.len())?;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericDomain("control has non-finite entries".into()));
        }
        Ok(())
    }

    /// Solves `(S_h)` for `g`; non-convergence is an error.
    pub fn solve_state(&self, g: &[f64], guess: Option<&[f64]>) -> Result<VISolution> {
        self.check_control(g)?;
        let problem = self.state_problem(g)?;
        self.solver.solve_converged(&problem, guess)
    }

    pub fn evaluate_cost(&self, g: &[f64]) -> Result<CostReport> {
        self.evaluate_cost_warm(g, None)
    }

    pub fn evaluate_cost_warm(&self, g: &[f64], guess: Option<&[f64]>) -> Result<CostReport> {
        let sol = self.solve_state(g, guess)?;
        self.cost_of(g, sol)
    }

    fn cost_of(&self, g: &[f64], sol: VISolution) -> Result<CostReport> {
        let state_term = 0.5 * self.space.mass().quad(&sol.state)?.max(0.0);
        let control_term = 0.5 * self.params.weight * self.space.mass().quad(g)?.max(0.0);
        Ok(CostReport {
            cost: state_term + control_term,
            state_term,
            control_term,
            solution: Some(sol),
        })
    }

    /// `H`-representative of the gradient at `g`, from the state `solution`
    /// at `g`: `∇J = M g + p`, where `A_II p_I = (M_H u)_I` on the inactive
    /// free nodes `I` and `p = 0` elsewhere.
    pub fn gradient_at(&self, g: &[f64], solution: &VISolution) -> Result<ControlField> {
        self.check_control(g)?;
        let n = self.space.num_vertices();
        check_len(n, solution.state.len())?;
        let active = solution.is_active(n);
        let dofs = self.space.dofs();
        let mask: Vec<bool> = (0..n).map(|i| dofs.is_free(i) && !active[i]).collect();
        let mut rhs = self.space.mass().mul(&solution.state)?;
        let mut p = vec![0.0; n];
        rhs.iter_mut().zip(&mask).for_each(|(r, &m)| {
            if !m {
                *r = 0.0;
            }
        });
        let cg = CgOptions { rtol: 1e-14, atol: 0.0, max_iter: 0 };
        solve_reduced(self.space.stiffness(), &rhs, &mask, &mut p, cg)
            .map_err(|e| Error::Gradient(format!("adjoint system: {e}")))?;
        let w = self.params.weight;
        let grad = g.iter().zip(&p).map(|(gi, pi)| w * gi + pi).collect();
        NodalField::new(grad, self.space.level())
            .map_err(|e| Error::Gradient(format!("adjoint solution: {e}")))
    }

    pub fn gradient(&self, g: &[f64]) -> Result<ControlField> {
        let sol = self.solve_state(g, None)?;
        self.gradient_at(g, &sol)
    }

    /// `(u_h3, u_h4)`: the convex combination `μ u_hg1 + (1−μ) u_hg2` of the
    /// two states, and the state of the combined control `μ g1 + (1−μ) g2`.
    pub fn convex_combination_states(
        &self,
        g1: &[f64],
        g2: &[f64],
        mu: f64,
    ) -> Result<(StateField, StateField)> {
        let s1 = self.solve_state(g1, None)?;
        let s2 = self.solve_state(g2, None)?;
        self.convex_combination_from(g1, g2, &s1.state, &s2.state, mu)
    }

    /// As [`Self::convex_combination_states`] with the endpoint states given.
    pub fn convex_combination_from(
        &self,
        g1: &[f64],
        g2: &[f64],
        u1: &StateField,
        u2: &StateField,
        mu: f64,
    ) -> Result<(StateField, StateField)> {
        if !(0.0..=1.0).contains(&mu) {
            return Err(Error::InvalidArgument(format!("μ must lie in [0, 1], got {mu}")));
        }
        check_len(g1.len(), g2.len())?;
        let u3 = u1.combine(mu, u2, 1.0 - mu)?;
        // Exact endpoints: skip the solve so the identities hold bit-for-bit.
        if mu == 1.0 {
            return Ok((u3, u1.clone()));
        }
        if mu == 0.0 {
            return Ok((u3, u2.clone()));
        }
        let g3: Vec<f64> = g1.iter().zip(g2).map(|(a, b)| mu * a + (1.0 - mu) * b).collect();
        let u4 = self.solve_state(&g3, Some(&u3))?.state;
        Ok((u3, u4))
    }

    pub fn cost_bound(&self) -> Result<CostBound> {
        let zero = vec![0.0; self.space.num_vertices()];
        let u0 = self.solve_state(&zero, None)?;
        let u0_norm = self.space.l2_norm(&u0.state)?;
        let lambda = self.space.coercivity_constant()?;
        Ok(CostBound { weight: self.params.weight, u0_norm, lambda, constant: u0_norm / lambda })
    }

    /// `J_h(g1) − J_h(g0)` evaluated as `½ duᵀM(u0 + u1) + (M/2)(g1 − g0)ᵀM(g1 + g0)`,
    /// which stays accurate far below the rounding error of either cost.
    /// When both states share an active set the state map is affine between
    /// them, and `du` is obtained from one reduced solve with load
    /// `M_H (g1 − g0)` instead of subtracting two independent solutions.
    pub fn cost_difference(
        &self,
        g0: &[f64],
        r0: &CostReport,
        g1: &[f64],
        r1: &CostReport,
    ) -> Result<f64> {
        let (u0, u1) = (&r0.state().state, &r1.state().state);
        let m = self.space.mass();
        let dg: Vec<f64> = g1.iter().zip(g0).map(|(a, b)| a - b).collect();
        let du = if r0.state().active_set == r1.state().active_set {
            let n = self.space.num_vertices();
            let active = r0.state().is_active(n);
            let dofs = self.space.dofs();
            let mask: Vec<bool> = (0..n).map(|i| dofs.is_free(i) && !active[i]).collect();
            let mut rhs = m.mul(&dg)?;
            rhs.iter_mut().zip(&mask).for_each(|(r, &k)| {
                if !k {
                    *r = 0.0;
                }
            });
            let mut du = vec![0.0; n];
            let cg = CgOptions { rtol: 1e-14, atol: 0.0, max_iter: 0 };
            solve_reduced(self.space.stiffness(), &rhs, &mask, &mut du, cg)?;
            du
        } else {
            u1.iter().zip(u0.iter()).map(|(a, b)| a - b).collect()
        };
        let us: Vec<f64> = u1.iter().zip(u0.iter()).map(|(a, b)| a + b).collect();
        let gs: Vec<f64> = g1.iter().zip(g0).map(|(a, b)| a + b).collect();
        Ok(0.5 * m.inner(&du, &us)? + 0.5 * self.params.weight * m.inner(&dg, &gs)?)
    }

    /// Minimizes `J_h` from `g0` by L-BFGS in the `H` inner product with an
    /// Armijo backtracking line search on [`Self::cost_difference`]. Reported
    /// costs are `J_h(g0)` plus the accepted decreases and strictly decrease.
    pub fn optimize(&self, g0: &[f64], opts: OptimizerOptions) -> Result<OptimizerResult> {
        opts.validate()?;
        self.check_control(g0)?;
        let mass = self.space.mass();
        let h_inner = |a: &[f64], b: &[f64]| mass.inner(a, b);
        let level = self.space.level();

        let mut g = g0.to_vec();
        let mut report = self.evaluate_cost(&g)?;
        let mut grad = self.gradient_at(&g, report.state())?.into_values();
        let mut gnorm = h_inner(&grad, &grad)?.max(0.0).sqrt();
        let gtol = opts.gtol.unwrap_or(1e-8 * gnorm.max(1.0));

        // Running cost: J(g0) plus the accurately evaluated decreases, so the
        // history is monotone even below the rounding error of J itself.
        let mut cost = report.cost;
        let mut trace = vec![TraceRow {
            iteration: 0,
            cost: report.cost,
            grad_norm: gnorm,
            step: 0.0,
            active_size: report.state().active_set.len(),
        }];
        let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
        let mut converged = gnorm <= gtol;
        let mut message = String::from("gradient tolerance reached");
        let mut iterations = 0;

        while !converged && iterations < opts.max_iter {
            let mut d = two_loop(&grad, &pairs, &h_inner)?;
            let mut slope = h_inner(&grad, &d)?;
            if !(slope < 0.0) {
                pairs.clear();
                d = grad.iter().map(|x| -x).collect();
                slope = -gnorm * gnorm;
            }

            let gscale = h_inner(&g, &g)?.sqrt().max(1.0);
            let dnorm = h_inner(&d, &d)?.sqrt();
            let mut t = 1.0;
            let accepted = loop {
                let trial: Vec<f64> = g.iter().zip(&d).map(|(a, b)| a + t * b).collect();
                let rep = self.evaluate_cost_warm(&trial, Some(&report.state().state))?;
                let decrease = self.cost_difference(&g, &report, &trial, &rep)?;
                if decrease <= opts.armijo * t * slope && decrease < 0.0 {
                    break Some((trial, rep, t, decrease));
                }
                t *= opts.backtrack;
                if t * dnorm <= f64::EPSILON * gscale {
                    break None;
                }
            };
            let Some((g_new, rep_new, step, decrease)) = accepted else {
                message = format!(
                    "line search found no decrease (gradient norm {gnorm:e}, gtol {gtol:e})"
                );
                break;
            };
            iterations += 1;
            let grad_new = self.gradient_at(&g_new, rep_new.state())?.into_values();

            let s: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = grad_new.iter().zip(&grad).map(|(a, b)| a - b).collect();
            let sy = h_inner(&s, &y)?;
            let ss = h_inner(&s, &s)?;
            let yy = h_inner(&y, &y)?;
            if opts.memory > 0 && sy > 1e-12 * (ss * yy).sqrt() {
                if pairs.len() == opts.memory {
                    pairs.pop_front();
                }
                pairs.push_back((s, y, 1.0 / sy));
            }

            g = g_new;
            report = rep_new;
            cost += decrease;
            grad = grad_new;
            gnorm = h_inner(&grad, &grad)?.max(0.0).sqrt();
            trace.push(TraceRow {
                iteration: iterations,
                cost,
                grad_norm: gnorm,
                step,
                active_size: report.state().active_set.len(),
            });
            converged = gnorm <= gtol;
        }
        if !converged && iterations >= opts.max_iter {
            message = format!("iteration limit {} reached (gradient norm {gnorm:e})", opts.max_iter);
        }

        let state = report.solution.take().expect("state present");
        Ok(OptimizerResult {
            control: NodalField::new(g, level)?,
            state,
            cost,
            gradient_norm: gnorm,
            gtol,
            trace,
            iterations,
            converged,
            message,
        })
    }
}

/// L-BFGS two-loop recursion in a general inner product; returns `−H ∇J`.
fn two_loop(
    grad: &[f64],
    pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    inner: &impl Fn(&[f64], &[f64]) -> Result<f64>,
) -> Result<Vec<f64>> {
    let mut q = grad.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let a = rho * inner(s, &q)?;
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some((s, y, _)) = pairs.back() {
        let gamma = inner(s, y)? / inner(y, y)?;
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
        let b = rho * inner(y, &q)?;
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    Ok(q)
}

/// `J_h(g)` with the default solver.
pub fn evaluate_cost(space: &FemSpace, params: CostParams, g: &ControlField) -> Result<CostReport> {
    ControlProblem::with_default_solver(space, params)?.evaluate_cost(g)
}

/// Frozen-active-set gradient with the default solver.
pub fn gradient(space: &FemSpace, params: CostParams, g: &ControlField) -> Result<ControlField> {
    ControlProblem::with_default_solver(space, params)?.gradient(g)
}

pub fn optimize(
    space: &FemSpace,
    params: CostParams,
    g0: &ControlField,
    gtol: f64,
    max_iter: usize,
) -> Result<OptimizerResult> {
    let opts = OptimizerOptions { gtol: Some(gtol), max_iter, ..Default::default() };
    ControlProblem::with_default_solver(space, params)?.optimize(g0, opts)
}

pub fn convex_combination_states(
    space: &FemSpace,
    params: CostParams,
    g1: &ControlField,
    g2: &ControlField,
    mu: f64,
) -> Result<(StateField, StateField)> {
    ControlProblem::with_default_solver(space, params)?.convex_combination_states(g1, g2, mu)
}
