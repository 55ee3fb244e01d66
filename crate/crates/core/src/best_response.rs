//! The agent's inner problem: choose effort in `[0, 1]` to maximize expected
//! utility of the announced type's transfer minus the true type's cost.
//!
//! The objective is generally not concave in effort, so solvers here never
//! rely on stationarity conditions. The default [`GridPolish`] solver scans a
//! uniform grid (both endpoints included) and polishes the best few grid
//! points with a bracketed Brent search.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{check_effort, AgentTypeSpec, ContractParams, ContractSet, ProblemSpec, Utility};
use crate::quadrature::QuadratureRule;

/// Objective values within this margin are treated as ties, resolved toward
/// the smaller effort.
pub const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BestResponse {
    pub effort: f64,
    pub expected_utility: f64,
    pub objective_evaluations: usize,
    pub converged: bool,
}

/// Expected utility of one agent type under one contract, as a function of
/// effort, with the noise integrated by a one-dimensional rule.
#[derive(Debug, Clone)]
pub struct AgentObjective<'a> {
    ty: AgentTypeSpec,
    contract: ContractParams,
    utility: Utility,
    alpha: f64,
    nodes: &'a [f64],
    weights: &'a [f64],
}

impl<'a> AgentObjective<'a> {
    /// `rule` must be one-dimensional (use [`QuadratureRule::marginal`]).
    pub fn new(
        ty: AgentTypeSpec,
        contract: ContractParams,
        utility: Utility,
        alpha: f64,
        rule: &'a QuadratureRule,
    ) -> Result<Self> {
        if rule.dimension() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                found: rule.dimension(),
            });
        }
        Ok(Self {
            ty,
            contract,
            utility,
            alpha,
            nodes: rule.points_1d(),
            weights: rule.weights(),
        })
    }

    /// Unchecked evaluation; `effort` is assumed to lie in `[0, 1]`.
    #[inline]
    pub fn eval(&self, effort: f64) -> f64 {
        let mean = self.ty.kappa * effort;
        let cost = self.ty.cost_coeff * effort * effort;
        let sigma = self.ty.sigma;
        let mut acc = 0.0;
        for (&x, &w) in self.nodes.iter().zip(self.weights) {
            let t = self.contract.transfer(mean + sigma * x, self.alpha);
            acc += w * self.utility.eval(t - cost);
        }
        acc
    }
}

/// Expected utility `E_ik[U_i(t_il(Q_ik(e)) - c_ik e^2)]` of agent `agent`
/// with true type `true_type` who announced `announced`.
///
/// `rule` may be the problem's full noise rule; it is marginalized onto the
/// agent's own coordinate.
pub fn expected_agent_utility(
    problem: &ProblemSpec,
    agent: usize,
    effort: f64,
    true_type: usize,
    announced: usize,
    contracts: &ContractSet,
    rule: &QuadratureRule,
) -> Result<f64> {
    check_effort(effort)?;
    let spec = problem.agent(agent)?;
    let ty = *spec.ty(agent, true_type)?;
    spec.ty(agent, announced)?;
    let contract = *contracts.get(agent, announced)?;
    let marginal = rule.marginal(agent.min(rule.dimension().saturating_sub(1)))?;
    let objective = AgentObjective::new(
        ty,
        contract,
        spec.utility.compile(),
        problem.smoothing.alpha_transfer,
        &marginal,
    )?;
    Ok(objective.eval(effort))
}

/// A strategy for the one-dimensional effort maximization.
pub trait EffortSolver: Send + Sync + std::fmt::Debug {
    fn name(&self) -> &'static str;

    /// Maximizes `objective` over `[0, 1]`. A non-finite objective value
    /// aborts with the offending effort.
    fn maximize(&self, objective: &dyn Fn(f64) -> f64) -> Result<BestResponse, f64>;
}

/// Coarse uniform grid followed by Brent polish around the best grid points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPolish {
    pub grid_points: usize,
    pub polish_starts: usize,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for GridPolish {
    fn default() -> Self {
        Self {
            grid_points: 64,
            polish_starts: 3,
            tolerance: 1e-9,
            max_iterations: 100,
        }
    }
}

/// Pure dense-grid argmax. Slow; useful for audits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenseGrid {
    pub points: usize,
}

impl Default for DenseGrid {
    fn default() -> Self {
        Self { points: 2001 }
    }
}

/// Picks the best candidate, preferring smaller effort among near-ties.
fn select(candidates: &[(f64, f64)]) -> (f64, f64) {
    let best = candidates
        .iter()
        .map(|c| c.1)
        .fold(f64::NEG_INFINITY, f64::max);
    candidates
        .iter()
        .filter(|c| c.1 >= best - TIE_TOL)
        .copied()
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .expect("candidate set is never empty")
}

fn uniform_grid(points: usize) -> impl Iterator<Item = f64> {
    let n = points.max(2);
    (0..n).map(move |j| j as f64 / (n - 1) as f64)
}

impl EffortSolver for DenseGrid {
    fn name(&self) -> &'static str {
        "dense-grid"
    }

    fn maximize(&self, objective: &dyn Fn(f64) -> f64) -> Result<BestResponse, f64> {
        let mut values = Vec::with_capacity(self.points);
        for e in uniform_grid(self.points) {
            let v = objective(e);
            if !v.is_finite() {
                return Err(e);
            }
            values.push((e, v));
        }
        let (effort, expected_utility) = select(&values);
        Ok(BestResponse {
            effort,
            expected_utility,
            objective_evaluations: values.len(),
            converged: true,
        })
    }
}

impl EffortSolver for GridPolish {
    fn name(&self) -> &'static str {
        "grid-polish"
    }

    fn maximize(&self, objective: &dyn Fn(f64) -> f64) -> Result<BestResponse, f64> {
        let grid: Vec<f64> = uniform_grid(self.grid_points).collect();
        let mut values = Vec::with_capacity(grid.len() + self.polish_starts);
        for &e in &grid {
            let v = objective(e);
            if !v.is_finite() {
                return Err(e);
            }
            values.push((e, v));
        }
        let mut evaluations = grid.len();

        let mut order: Vec<usize> = (0..grid.len()).collect();
        order.sort_by(|&a, &b| values[b].1.total_cmp(&values[a].1).then(a.cmp(&b)));
        let mut converged = true;
        let last = grid.len() - 1;
        for &j in order.iter().take(self.polish_starts) {
            let lo = grid[j.saturating_sub(1)];
            let hi = grid[(j + 1).min(last)];
            let polished = brent_max(objective, lo, hi, self.tolerance, self.max_iterations);
            evaluations += polished.evaluations;
            converged &= polished.converged;
            if polished.value.is_finite() {
                values.push((polished.x, polished.value));
            }
        }
        let (effort, expected_utility) = select(&values);
        Ok(BestResponse {
            effort,
            expected_utility,
            objective_evaluations: evaluations,
            converged,
        })
    }
}

pub(crate) struct ScalarMax {
    pub x: f64,
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
}

/// Brent's parabolic/golden-section search for a maximum on `[a, b]`.
pub(crate) fn brent_max(
    f: &dyn Fn(f64) -> f64,
    mut a: f64,
    mut b: f64,
    tol: f64,
    max_iter: usize,
) -> ScalarMax {
    const GOLDEN: f64 = 0.381_966_011_250_105_1;
    let g = |x: f64| -f(x);
    let mut x = a + GOLDEN * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = g(x);
    let (mut fw, mut fv) = (fx, fx);
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    let mut evaluations = 1;
    for _ in 0..max_iter {
        let m = 0.5 * (a + b);
        let tol1 = tol * x.abs() + 1e-12;
        let tol2 = 2.0 * tol1;
        if (x - m).abs() <= tol2 - 0.5 * (b - a) {
            return ScalarMax {
                x,
                value: -fx,
                evaluations,
                converged: true,
            };
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            e = d;
            if p.abs() < (0.5 * q * etemp).abs() && p > q * (a - x) && p < q * (b - x) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if m >= x { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= m { a - x } else { b - x };
            d = GOLDEN * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else if d > 0.0 {
            x + tol1
        } else {
            x - tol1
        };
        let fu = g(u);
        evaluations += 1;
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    ScalarMax {
        x,
        value: -fx,
        evaluations,
        converged: false,
    }
}

/// Best response of agent `agent` (true type `true_type`, announced
/// `announced`) using `solver` and a one-dimensional noise rule.
pub fn best_response_with(
    problem: &ProblemSpec,
    agent: usize,
    true_type: usize,
    announced: usize,
    contracts: &ContractSet,
    rule_1d: &QuadratureRule,
    solver: &dyn EffortSolver,
) -> Result<BestResponse> {
    let spec = problem.agent(agent)?;
    let ty = *spec.ty(agent, true_type)?;
    spec.ty(agent, announced)?;
    let contract = *contracts.get(agent, announced)?;
    let objective = AgentObjective::new(
        ty,
        contract,
        spec.utility.compile(),
        problem.smoothing.alpha_transfer,
        rule_1d,
    )?;
    solve_objective(&objective, solver).map_err(|effort| Error::NonFiniteObjective {
        agent,
        true_type,
        announced,
        effort,
    })
}

pub(crate) fn solve_objective(
    objective: &AgentObjective<'_>,
    solver: &dyn EffortSolver,
) -> Result<BestResponse, f64> {
    // paying nothing contingent on quality leaves effort as pure cost
    if objective.contract.a1 == 0.0 && objective.contract.a3 == 0.0 {
        let v = objective.eval(0.0);
        if !v.is_finite() {
            return Err(0.0);
        }
        return Ok(BestResponse {
            effort: 0.0,
            expected_utility: v,
            objective_evaluations: 1,
            converged: true,
        });
    }
    solver.maximize(&|e| objective.eval(e))
}

/// Best response with the default grid-and-polish solver.
pub fn best_response(
    problem: &ProblemSpec,
    agent: usize,
    true_type: usize,
    announced: usize,
    contracts: &ContractSet,
    rule: &QuadratureRule,
    solver: &GridPolish,
) -> Result<BestResponse> {
    let marginal = rule.marginal(agent.min(rule.dimension().saturating_sub(1)))?;
    best_response_with(problem, agent, true_type, announced, contracts, &marginal, solver)
}
