//! The principal's outer problem.
//!
//! Contract parameters live in a box inside the nonnegative orthant, so
//! implementability holds by construction. Participation and incentive
//! compatibility enter the objective as penalties `w * min(g, 0)`. The
//! resulting penalized objective is maximized by a [`ContractOptimizer`]
//! strategy, by default tempered sequential Monte Carlo followed by a
//! deterministic compass-search polish.

mod pattern;
mod smc;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::best_response::{solve_objective, AgentObjective, BestResponse, EffortSolver, GridPolish};
use crate::error::{Error, Result};
use crate::model::{ContractParams, ContractSet, ProblemSpec, Scenario, Utility};
use crate::quadrature::QuadratureRule;

pub use pattern::{compass_search, CompassOutcome, MultistartPattern};
pub use smc::SmcAnnealer;

/// Penalty weight applied to every constraint when none is configured,
/// as a multiple of the system value `v0`.
pub const DEFAULT_PENALTY_FACTOR: f64 = 10.0;

/// Maps a flat parameter vector onto per-(agent, type) contracts.
///
/// The vector always carries four entries per contract slot. Type-independent
/// problems have one slot per agent, type-dependent problems one per
/// (agent, type). Requirement-based problems pin `a3` to zero through a
/// degenerate box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractLayout {
    scenario: Scenario,
    type_counts: Vec<usize>,
    /// `(agent, type)` for each slot; `type` is `None` when shared.
    slots: Vec<(usize, Option<usize>)>,
    bounds: Vec<(f64, f64)>,
}

impl ContractLayout {
    pub fn new(problem: &ProblemSpec) -> Self {
        let type_counts: Vec<usize> = problem.agents.iter().map(|a| a.type_count()).collect();
        let slots: Vec<(usize, Option<usize>)> = match problem.scenario {
            Scenario::TypeIndependent => (0..type_counts.len()).map(|i| (i, None)).collect(),
            Scenario::TypeDependent => type_counts
                .iter()
                .enumerate()
                .flat_map(|(i, &m)| (0..m).map(move |k| (i, Some(k))))
                .collect(),
        };
        let v0 = problem.value.v0;
        let mut bounds = Vec::with_capacity(4 * slots.len());
        for &(i, _) in &slots {
            let types = &problem.agents[i].types;
            let kappa = types.iter().map(|t| t.kappa).fold(0.0, f64::max);
            let sigma = types.iter().map(|t| t.sigma).fold(0.0, f64::max);
            let slope = if problem.uses_incentive_slope() { 2.0 * v0 } else { 0.0 };
            bounds.extend([
                (0.0, 2.0 * v0),
                (0.0, 2.0 * v0),
                (0.0, kappa + 4.0 * sigma),
                (0.0, slope),
            ]);
        }
        Self {
            scenario: problem.scenario,
            type_counts,
            slots,
            bounds,
        }
    }

    pub fn len(&self) -> usize {
        self.bounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bounds.is_empty()
    }

    pub fn slot_count(&self) -> usize {
        self.slots.len()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    /// Indices of parameters with a nondegenerate search interval.
    pub fn free_dims(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&j| self.bounds[j].1 > self.bounds[j].0)
            .collect()
    }

    pub fn contains(&self, params: &[f64]) -> bool {
        params.len() == self.len()
            && params
                .iter()
                .zip(&self.bounds)
                .all(|(&x, &(lo, hi))| x >= lo && x <= hi)
    }

    pub fn clamp(&self, params: &mut [f64]) {
        for (x, &(lo, hi)) in params.iter_mut().zip(&self.bounds) {
            *x = x.clamp(lo, hi);
        }
    }

    pub fn to_contracts(&self, params: &[f64]) -> Result<ContractSet> {
        if params.len() != self.len() {
            return Err(Error::ShapeMismatch {
                expected: self.len(),
                found: params.len(),
            });
        }
        if let Some(j) = params.iter().position(|&x| !(x >= 0.0 && x.is_finite())) {
            return Err(Error::InvalidParameter {
                field: format!("contract parameter {j}"),
                value: params[j],
                reason: "contract parameters must be finite and nonnegative",
            });
        }
        let mut per_agent: Vec<Vec<ContractParams>> = self
            .type_counts
            .iter()
            .map(|&m| vec![ContractParams::ZERO; m])
            .collect();
        for (s, &(i, k)) in self.slots.iter().enumerate() {
            let c = ContractParams::from_array([
                params[4 * s],
                params[4 * s + 1],
                params[4 * s + 2],
                params[4 * s + 3],
            ]);
            match k {
                Some(k) => per_agent[i][k] = c,
                None => per_agent[i].iter_mut().for_each(|slot| *slot = c),
            }
        }
        Ok(ContractSet::new(per_agent))
    }

    /// For each parameter, the index of the matching parameter in the
    /// agent's first slot. Identity for shared layouts.
    pub fn pool_leaders(&self) -> Vec<usize> {
        let mut first: Vec<Option<usize>> = vec![None; self.type_counts.len()];
        let mut out = Vec::with_capacity(self.len());
        for (s, &(i, _)) in self.slots.iter().enumerate() {
            let f = *first[i].get_or_insert(s);
            out.extend((0..4).map(|j| 4 * f + j));
        }
        out
    }

    /// Whether some agent has more than one contract slot.
    pub fn has_pooling(&self) -> bool {
        self.pool_leaders().iter().enumerate().any(|(j, &l)| j != l)
    }

    /// Copies each agent's first per-type contract onto its other types,
    /// producing a pooling (type-blind) point. No-op for shared layouts.
    pub fn pool(&self, params: &mut [f64]) {
        for (j, l) in self.pool_leaders().into_iter().enumerate() {
            params[j] = params[l];
        }
    }

    /// Flattens a contract set. Shared slots read the first type's contract.
    pub fn from_contracts(&self, contracts: &ContractSet) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.len());
        for &(i, k) in &self.slots {
            out.extend(contracts.get(i, k.unwrap_or(0))?.as_array());
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcResidual {
    pub agent: usize,
    pub true_type: usize,
    pub announced: usize,
    /// Truthful expected utility minus the expected utility of lying.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    /// `E_ik[U_i] - reservation utility`, indexed `[agent][type]`.
    pub participation_residuals: Vec<Vec<f64>>,
    pub ic_residuals: Vec<IcResidual>,
    pub implementability_ok: bool,
    pub feasibility_tol: f64,
    pub feasible: bool,
}

impl ConstraintReport {
    fn build(
        participation: Vec<Vec<f64>>,
        ic: Vec<IcResidual>,
        implementability_ok: bool,
        feasibility_tol: f64,
    ) -> Self {
        let feasible = implementability_ok
            && participation.iter().flatten().all(|&g| g >= -feasibility_tol)
            && ic.iter().all(|r| r.margin >= -feasibility_tol);
        Self {
            participation_residuals: participation,
            ic_residuals: ic,
            implementability_ok,
            feasibility_tol,
            feasible,
        }
    }

    /// Most negative residual, or zero when nothing is violated.
    pub fn worst_violation(&self) -> f64 {
        self.participation_residuals
            .iter()
            .flatten()
            .copied()
            .chain(self.ic_residuals.iter().map(|r| r.margin))
            .fold(0.0, f64::min)
    }
}

/// Tempered SMC settings and the penalty weight shared by all strategies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnealerConfig {
    pub gamma_start: f64,
    pub gamma_end: f64,
    pub stages: usize,
    pub particle_count: usize,
    pub mcmc_steps_per_stage: usize,
    /// Resample when ESS falls below this fraction of the particle count.
    pub ess_threshold: f64,
    pub seed: u64,
    /// Defaults to `10 * v0` when unset.
    pub penalty_weight: Option<f64>,
    pub polish: bool,
}

pub const DEFAULT_SEED: u64 = 20_190_124;

impl Default for AnnealerConfig {
    fn default() -> Self {
        Self {
            gamma_start: 0.001,
            gamma_end: 50.0,
            stages: 40,
            particle_count: 256,
            mcmc_steps_per_stage: 5,
            ess_threshold: 0.5,
            seed: DEFAULT_SEED,
            penalty_weight: None,
            polish: true,
        }
    }
}

impl AnnealerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(format!("annealer: {msg}")));
        if !(self.gamma_start > 0.0 && self.gamma_start < self.gamma_end) {
            return bad("require 0 < gamma_start < gamma_end");
        }
        if !self.gamma_end.is_finite() {
            return bad("gamma_end must be finite");
        }
        if self.particle_count < 2 {
            return bad("particle_count must be at least 2");
        }
        if self.stages == 0 {
            return bad("stages must be at least 1");
        }
        if !(self.ess_threshold > 0.0 && self.ess_threshold <= 1.0) {
            return bad("ess_threshold must lie in (0, 1]");
        }
        if let Some(w) = self.penalty_weight {
            if !(w > 0.0 && w.is_finite()) {
                return bad("penalty_weight must be positive");
            }
        }
        Ok(())
    }

    /// Geometric tempering schedule from `gamma_start` to `gamma_end`.
    pub fn schedule(&self) -> Vec<f64> {
        let n = self.stages;
        if n == 1 {
            return vec![self.gamma_end];
        }
        let ratio = (self.gamma_end / self.gamma_start).ln();
        (0..n)
            .map(|t| self.gamma_start * (ratio * t as f64 / (n - 1) as f64).exp())
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnnealerDiagnostics {
    pub gammas: Vec<f64>,
    pub ess: Vec<f64>,
    pub resampled: Vec<bool>,
    pub acceptance_rates: Vec<f64>,
    /// Best penalized objective seen up to and including each stage.
    pub best_trace: Vec<f64>,
    pub objective_evaluations: usize,
    pub polish_gain: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffDiagonalResponse {
    pub agent: usize,
    pub true_type: usize,
    pub announced: usize,
    pub effort: f64,
    pub expected_utility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub optimizer: String,
    pub scenario: Scenario,
    /// Flat parameter vector in [`ContractLayout`] order.
    pub params: Vec<f64>,
    pub contracts: ContractSet,
    /// Truthful best-response efforts `e*_ikk`, indexed `[agent][type]`.
    pub efforts: Vec<Vec<f64>>,
    pub off_diagonal: Vec<OffDiagonalResponse>,
    pub principal_expected_utility: f64,
    pub penalized_objective: f64,
    /// Truthful equilibrium expected utilities, indexed `[agent][type]`.
    pub agent_expected_utilities: Vec<Vec<f64>>,
    pub constraint_report: ConstraintReport,
    pub diagnostics: AnnealerDiagnostics,
}

/// Everything computed for one contract vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub principal_utility: f64,
    pub penalized: f64,
    /// `[agent][true type]` truthful best responses.
    pub truthful: Vec<Vec<BestResponse>>,
    pub off_diagonal: Vec<OffDiagonalResponse>,
    pub participation: Vec<Vec<f64>>,
    pub ic: Vec<IcResidual>,
}

/// The penalized bi-level objective for one problem instance.
#[derive(Debug, Clone)]
pub struct ContractObjective {
    problem: ProblemSpec,
    rule: QuadratureRule,
    marginals: Vec<QuadratureRule>,
    layout: ContractLayout,
    penalty_weight: f64,
    solver: Arc<dyn EffortSolver>,
    principal: Utility,
}

impl ContractObjective {
    pub fn new(problem: &ProblemSpec, rule: &QuadratureRule) -> Result<Self> {
        Self::with_solver(problem, rule, Arc::new(GridPolish::default()), None)
    }

    pub fn with_solver(
        problem: &ProblemSpec,
        rule: &QuadratureRule,
        solver: Arc<dyn EffortSolver>,
        penalty_weight: Option<f64>,
    ) -> Result<Self> {
        problem.validate()?;
        if rule.dimension() != problem.agent_count() {
            return Err(Error::DimensionMismatch {
                expected: problem.agent_count(),
                found: rule.dimension(),
            });
        }
        let penalty_weight = penalty_weight.unwrap_or(DEFAULT_PENALTY_FACTOR * problem.value.v0);
        if !(penalty_weight > 0.0) {
            return Err(Error::InvalidParameter {
                field: "penalty_weight".into(),
                value: penalty_weight,
                reason: "must be positive",
            });
        }
        let marginals = (0..problem.agent_count())
            .map(|i| rule.marginal(i))
            .collect::<Result<_>>()?;
        Ok(Self {
            problem: problem.clone(),
            rule: rule.clone(),
            marginals,
            layout: ContractLayout::new(problem),
            penalty_weight,
            solver,
            principal: problem.principal_utility.compile(),
        })
    }

    pub fn problem(&self) -> &ProblemSpec {
        &self.problem
    }

    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }

    pub fn layout(&self) -> &ContractLayout {
        &self.layout
    }

    pub fn penalty_weight(&self) -> f64 {
        self.penalty_weight
    }

    pub fn solver(&self) -> &dyn EffortSolver {
        self.solver.as_ref()
    }

    /// The same objective restricted to pooling contracts (one contract per
    /// agent for all its types), or `None` if no agent has several types
    /// to pool.
    pub fn pooled(&self) -> Result<Option<ContractObjective>> {
        if !self.layout.has_pooling() {
            return Ok(None);
        }
        let mut problem = self.problem.clone();
        problem.scenario = Scenario::TypeIndependent;
        Self::with_solver(&problem, &self.rule, self.solver.clone(), Some(self.penalty_weight)).map(Some)
    }

    fn respond(&self, contracts: &ContractSet, agent: usize, k: usize, l: usize) -> Result<BestResponse> {
        let spec = &self.problem.agents[agent];
        let objective = AgentObjective::new(
            spec.types[k],
            *contracts.get(agent, l)?,
            spec.utility.compile(),
            self.problem.smoothing.alpha_transfer,
            &self.marginals[agent],
        )?;
        solve_objective(&objective, self.solver.as_ref()).map_err(|effort| Error::NonFiniteObjective {
            agent,
            true_type: k,
            announced: l,
            effort,
        })
    }

    /// Solves every inner problem and forms the objective and constraint margins.
    pub fn evaluate(&self, params: &[f64]) -> Result<Evaluation> {
        let contracts = self.layout.to_contracts(params)?;
        let mut truthful = Vec::with_capacity(self.problem.agent_count());
        let mut participation = Vec::with_capacity(self.problem.agent_count());
        for (i, agent) in self.problem.agents.iter().enumerate() {
            let row: Vec<BestResponse> = (0..agent.type_count())
                .map(|k| self.respond(&contracts, i, k, k))
                .collect::<Result<_>>()?;
            participation.push(
                row.iter()
                    .zip(&agent.types)
                    .map(|(br, ty)| br.expected_utility - ty.reservation_utility)
                    .collect(),
            );
            truthful.push(row);
        }

        let mut ic = Vec::new();
        let mut off_diagonal = Vec::new();
        if self.problem.scenario == Scenario::TypeDependent {
            for (i, agent) in self.problem.agents.iter().enumerate() {
                for k in 0..agent.type_count() {
                    for l in (0..agent.type_count()).filter(|&l| l != k) {
                        let lie = if contracts.get(i, l)? == contracts.get(i, k)? {
                            truthful[i][k]
                        } else {
                            self.respond(&contracts, i, k, l)?
                        };
                        off_diagonal.push(OffDiagonalResponse {
                            agent: i,
                            true_type: k,
                            announced: l,
                            effort: lie.effort,
                            expected_utility: lie.expected_utility,
                        });
                        ic.push(IcResidual {
                            agent: i,
                            true_type: k,
                            announced: l,
                            margin: truthful[i][k].expected_utility - lie.expected_utility,
                        });
                    }
                }
            }
        }

        let efforts: Vec<Vec<f64>> = truthful
            .iter()
            .map(|row| row.iter().map(|br| br.effort).collect())
            .collect();
        let principal_utility = self.principal_expectation(&contracts, &efforts);
        let shortfall: f64 = participation
            .iter()
            .flatten()
            .copied()
            .chain(ic.iter().map(|r| r.margin))
            .map(|g| g.min(0.0))
            .sum();
        Ok(Evaluation {
            principal_utility,
            penalized: principal_utility + self.penalty_weight * shortfall,
            truthful,
            off_diagonal,
            participation,
            ic,
        })
    }

    fn principal_expectation(&self, contracts: &ContractSet, efforts: &[Vec<f64>]) -> f64 {
        let n = self.problem.agent_count();
        let alpha_t = self.problem.smoothing.alpha_transfer;
        let alpha_v = self.problem.smoothing.alpha_value;
        let mut q = vec![0.0; n];
        let mut total = 0.0;
        for (theta, p) in self.problem.type_assignments() {
            if p == 0.0 {
                continue;
            }
            let inner = self.rule.integrate(|xi| {
                let mut paid = 0.0;
                for i in 0..n {
                    let ty = &self.problem.agents[i].types[theta[i]];
                    q[i] = ty.kappa * efforts[i][theta[i]] + ty.sigma * xi[i];
                    paid += contracts.per_agent[i][theta[i]].transfer(q[i], alpha_t);
                }
                self.principal.eval(self.problem.value.eval(&q, alpha_v) - paid)
            });
            total += p * inner;
        }
        total
    }

    /// Penalized objective; `-inf` outside the search box.
    pub fn penalized(&self, params: &[f64]) -> Result<f64> {
        if !self.layout.contains(params) {
            return Ok(f64::NEG_INFINITY);
        }
        Ok(self.evaluate(params)?.penalized)
    }

    pub fn solve_result(
        &self,
        optimizer: &str,
        params: Vec<f64>,
        diagnostics: AnnealerDiagnostics,
        feasibility_tol: f64,
    ) -> Result<SolveResult> {
        let eval = self.evaluate(&params)?;
        let contracts = self.layout.to_contracts(&params)?;
        let report = ConstraintReport::build(
            eval.participation.clone(),
            eval.ic.clone(),
            contracts.iter().all(|(_, _, c)| c.is_nonnegative()),
            feasibility_tol,
        );
        Ok(SolveResult {
            optimizer: optimizer.to_string(),
            scenario: self.problem.scenario,
            efforts: eval
                .truthful
                .iter()
                .map(|row| row.iter().map(|br| br.effort).collect())
                .collect(),
            agent_expected_utilities: eval
                .truthful
                .iter()
                .map(|row| row.iter().map(|br| br.expected_utility).collect())
                .collect(),
            off_diagonal: eval.off_diagonal,
            principal_expected_utility: eval.principal_utility,
            penalized_objective: eval.penalized,
            params,
            contracts,
            constraint_report: report,
            diagnostics,
        })
    }
}

/// A strategy for the outer contract search.
pub trait ContractOptimizer: Send + Sync + std::fmt::Debug {
    fn name(&self) -> &'static str;

    fn optimize(&self, objective: &ContractObjective, config: &AnnealerConfig) -> Result<SolveResult>;
}

/// Feasibility tolerance used when reporting constraint satisfaction.
pub const FEASIBILITY_TOL: f64 = 1e-3;

/// Expected principal utility `E[u0(Pi0)]` at truthful best responses.
pub fn principal_objective(params: &[f64], problem: &ProblemSpec, rule: &QuadratureRule) -> Result<f64> {
    Ok(ContractObjective::new(problem, rule)?.evaluate(params)?.principal_utility)
}

/// Expected principal utility plus `penalty_weight * sum_j min(g_j, 0)` over
/// participation and incentive-compatibility margins.
pub fn penalized_objective(
    params: &[f64],
    problem: &ProblemSpec,
    rule: &QuadratureRule,
    penalty_weight: f64,
) -> Result<f64> {
    let objective = ContractObjective::with_solver(
        problem,
        rule,
        Arc::new(GridPolish::default()),
        Some(penalty_weight),
    )?;
    Ok(objective.evaluate(params)?.penalized)
}

/// Solves the contract problem with the default tempered SMC strategy.
pub fn optimize(problem: &ProblemSpec, config: &AnnealerConfig, rule: &QuadratureRule) -> Result<SolveResult> {
    let objective = ContractObjective::with_solver(
        problem,
        rule,
        Arc::new(GridPolish::default()),
        config.penalty_weight,
    )?;
    SmcAnnealer.optimize(&objective, config)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyTolerances {
    pub feasibility_tol: f64,
    /// Grid density of the finer inner solver used for the audit.
    pub grid_points: usize,
    pub polish_starts: usize,
}

impl Default for VerifyTolerances {
    fn default() -> Self {
        Self {
            feasibility_tol: FEASIBILITY_TOL,
            grid_points: 512,
            polish_starts: 5,
        }
    }
}

/// Recomputes every constraint margin at `contracts` with a finer inner
/// solver. Report-only: violations are flagged, never raised.
pub fn verify_contracts(
    contracts: &ContractSet,
    problem: &ProblemSpec,
    rule: &QuadratureRule,
    tolerances: &VerifyTolerances,
) -> Result<ConstraintReport> {
    let implementable = contracts.iter().all(|(_, _, c)| c.is_nonnegative())
        && contracts.per_agent.len() == problem.agent_count()
        && contracts
            .per_agent
            .iter()
            .zip(&problem.agents)
            .all(|(row, a)| row.len() == a.type_count());
    if !implementable {
        return Ok(ConstraintReport::build(Vec::new(), Vec::new(), false, tolerances.feasibility_tol));
    }
    let solver = GridPolish {
        grid_points: tolerances.grid_points,
        polish_starts: tolerances.polish_starts,
        ..GridPolish::default()
    };
    // evaluate over the full per-type contract set so that audits of
    // externally supplied contracts see exactly what was given
    let mut typed = problem.clone();
    typed.scenario = Scenario::TypeDependent;
    let typed_objective = ContractObjective::with_solver(&typed, rule, Arc::new(solver), None)?;
    let params = typed_objective.layout.from_contracts(contracts)?;
    let eval = typed_objective.evaluate(&params)?;
    let ic = if problem.scenario == Scenario::TypeDependent {
        eval.ic
    } else {
        Vec::new()
    };
    Ok(ConstraintReport::build(eval.participation, ic, true, tolerances.feasibility_tol))
}

/// [`verify_contracts`] applied to a solver result.
pub fn verify_solution(
    result: &SolveResult,
    problem: &ProblemSpec,
    rule: &QuadratureRule,
    tolerances: &VerifyTolerances,
) -> Result<ConstraintReport> {
    verify_contracts(&result.contracts, problem, rule, tolerances)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AgentTypeSpec, UtilitySpec, ValueSpec};
    use crate::quadrature::default_rule;
    use approx::assert_abs_diff_eq;

    fn mh(kappa: f64, cost: f64, sigma: f64) -> ProblemSpec {
        ProblemSpec::moral_hazard(AgentTypeSpec::new(kappa, cost, sigma), ValueSpec::rb())
    }

    #[test]
    fn layout_shapes_and_bounds() {
        let p = mh(2.5, 0.1, 0.1);
        let l = ContractLayout::new(&p);
        assert_eq!(l.len(), 4);
        assert_eq!(l.free_dims(), vec![0, 1, 2]);
        assert_eq!(l.bounds()[2], (0.0, 2.9));
        let mut rpi = p.clone();
        rpi.value = ValueSpec::rpi();
        assert_eq!(ContractLayout::new(&rpi).free_dims(), vec![0, 1, 2, 3]);

        let two = ProblemSpec::adverse_selection(
            vec![
                AgentTypeSpec::new(1.5, 0.1, 0.1).with_prior(0.5),
                AgentTypeSpec::new(1.5, 0.4, 0.1).with_prior(0.5),
            ],
            ValueSpec::rb(),
        );
        let l = ContractLayout::new(&two);
        assert_eq!(l.len(), 8);
        let set = l.to_contracts(&[0.0, 0.1, 1.0, 0.0, 0.2, 0.3, 1.1, 0.0]).unwrap();
        assert_eq!(set.per_agent[0][1].a2, 1.1);
        assert_eq!(l.from_contracts(&set).unwrap()[5], 0.3);
        assert!(matches!(l.to_contracts(&[0.0; 4]), Err(Error::ShapeMismatch { .. })));
        assert!(l.to_contracts(&[-0.1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn zero_contract_earns_tail_value_only() {
        let p = mh(2.5, 0.1, 0.1);
        let rule = default_rule(1).unwrap();
        let u = principal_objective(&[0.0; 4], &p, &rule).unwrap();
        assert!(u.abs() < 1e-15, "{u}");
    }

    #[test]
    fn participation_payment_shifts_payoff() {
        let p = mh(2.5, 0.1, 0.1);
        let rule = default_rule(1).unwrap();
        let base = principal_objective(&[0.0, 0.0, 1.0, 0.0], &p, &rule).unwrap();
        let paid = principal_objective(&[0.25, 0.0, 1.0, 0.0], &p, &rule).unwrap();
        assert_abs_diff_eq!(base - paid, 0.25, epsilon = 1e-14);
    }

    #[test]
    fn penalty_equals_weight_times_violation() {
        let mut p = mh(2.5, 0.1, 0.1);
        p.agents[0].types[0].reservation_utility = 0.3;
        let rule = default_rule(1).unwrap();
        let a = [0.1, 0.0, 1.0, 0.0];
        let raw = principal_objective(&a, &p, &rule).unwrap();
        let pen = penalized_objective(&a, &p, &rule, 7.0).unwrap();
        // agent takes a0 at zero effort: utility u(0.1), short by 0.3 - u(0.1)
        let shortfall = 0.3 - UtilitySpec::risk_averse(2.0).eval(0.1);
        assert_abs_diff_eq!(raw - pen, 7.0 * shortfall, epsilon = 1e-12);

        p.agents[0].types[0].reservation_utility = 0.0;
        assert_eq!(
            penalized_objective(&a, &p, &rule, 7.0).unwrap(),
            principal_objective(&a, &p, &rule).unwrap()
        );
    }

    #[test]
    fn type_independent_has_no_ic_terms() {
        let mut p = ProblemSpec::adverse_selection(
            vec![
                AgentTypeSpec::new(1.5, 0.1, 0.1).with_prior(0.5),
                AgentTypeSpec::new(1.5, 0.4, 0.1).with_prior(0.5),
            ],
            ValueSpec::rb(),
        );
        p.scenario = Scenario::TypeIndependent;
        let rule = default_rule(1).unwrap();
        let obj = ContractObjective::new(&p, &rule).unwrap();
        assert_eq!(obj.layout().len(), 4);
        let eval = obj.evaluate(&[0.0, 0.29, 1.06, 0.0]).unwrap();
        assert!(eval.ic.is_empty());
        assert_eq!(eval.participation[0].len(), 2);
    }

    #[test]
    fn ic_margin_detects_profitable_lies() {
        let p = ProblemSpec::adverse_selection(
            vec![
                AgentTypeSpec::new(1.5, 0.1, 0.1).with_prior(0.5),
                AgentTypeSpec::new(1.5, 0.4, 0.1).with_prior(0.5),
            ],
            ValueSpec::rb(),
        );
        let rule = default_rule(1).unwrap();
        let obj = ContractObjective::new(&p, &rule).unwrap();
        // type 0 gets a stingy contract, type 1 a generous one: type 0 lies
        let eval = obj
            .evaluate(&[0.0, 0.1, 1.06, 0.0, 0.0, 0.6, 1.06, 0.0])
            .unwrap();
        let lie = eval.ic.iter().find(|r| r.true_type == 0).unwrap();
        assert!(lie.margin < -0.1);
        assert!(eval.penalized < eval.principal_utility);
        // identical contracts: margins are exactly zero
        let eval = obj
            .evaluate(&[0.0, 0.29, 1.06, 0.0, 0.0, 0.29, 1.06, 0.0])
            .unwrap();
        assert!(eval.ic.iter().all(|r| r.margin == 0.0));
    }

    #[test]
    fn verify_reports_participation_of_flat_payment() {
        let mut p = mh(1.5, 0.4, 0.1);
        p.agents[0].types[0].reservation_utility = 0.2;
        let rule = default_rule(1).unwrap();
        let set = ContractSet::shared(&p, &[ContractParams::new(0.2, 0.0, 1.0, 0.0)]);
        let report = verify_contracts(&set, &p, &rule, &VerifyTolerances::default()).unwrap();
        let expected = UtilitySpec::risk_averse(2.0).eval(0.2) - 0.2;
        assert_abs_diff_eq!(report.participation_residuals[0][0], expected, epsilon = 1e-12);
        assert!(report.feasible);

        let neg = ContractSet::shared(&p, &[ContractParams::new(-0.1, 0.0, 1.0, 0.0)]);
        let report = verify_contracts(&neg, &p, &rule, &VerifyTolerances::default()).unwrap();
        assert!(!report.implementability_ok && !report.feasible);
    }

    #[test]
    fn schedule_is_geometric() {
        let cfg = AnnealerConfig {
            stages: 5,
            gamma_start: 0.01,
            gamma_end: 100.0,
            ..AnnealerConfig::default()
        };
        let s = cfg.schedule();
        assert_eq!(s.len(), 5);
        assert_abs_diff_eq!(s[0], 0.01, epsilon = 1e-15);
        assert_abs_diff_eq!(s[2], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s[4], 100.0, epsilon = 1e-9);
        assert!(AnnealerConfig { particle_count: 1, ..cfg.clone() }.validate().is_err());
        assert!(AnnealerConfig { gamma_start: 200.0, ..cfg }.validate().is_err());
    }
}
