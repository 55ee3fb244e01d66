//! Closed-form model ingredients: effort cost, quality, transfer functions,
//! system value, and monetary utility.
//!
//! Every function here is a pure evaluation. Step functions are replaced by a
//! logistic sigmoid whose sharpness is configured through [`SmoothingSpec`];
//! passing `f64::INFINITY` as the sharpness recovers the exact step (with the
//! midpoint convention `H(0) = 1/2`).

use serde::{Deserialize, Serialize};

use crate::error::{check_nonnegative, check_positive, Error, Result};

/// Exponents are clamped to this magnitude before calling `exp`.
pub const EXP_CLAMP: f64 = 700.0;

/// Tolerance on the sum of an agent's prior type probabilities.
pub const PRIOR_SUM_TOL: f64 = 1e-12;

/// Logistic approximation of the Heaviside step, `1 / (1 + exp(-alpha x))`.
#[inline]
pub fn smooth_heaviside(x: f64, alpha: f64) -> f64 {
    if x == 0.0 {
        return 0.5;
    }
    if alpha == f64::INFINITY {
        return if x > 0.0 { 1.0 } else { 0.0 };
    }
    let z = (-alpha * x).clamp(-EXP_CLAMP, EXP_CLAMP);
    1.0 / (1.0 + z.exp())
}

/// One agent type: the (complexity, cost, uncertainty) triplet plus its prior
/// probability and reservation utility.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentTypeSpec {
    /// Quality gained per unit of effort. Large values mean an easy task.
    pub kappa: f64,
    /// Quadratic effort cost coefficient.
    pub cost_coeff: f64,
    /// Standard deviation of the additive quality noise.
    pub sigma: f64,
    pub prior_prob: f64,
    #[serde(default)]
    pub reservation_utility: f64,
}

impl AgentTypeSpec {
    pub fn new(kappa: f64, cost_coeff: f64, sigma: f64) -> Self {
        Self {
            kappa,
            cost_coeff,
            sigma,
            prior_prob: 1.0,
            reservation_utility: 0.0,
        }
    }

    pub fn with_prior(mut self, prior_prob: f64) -> Self {
        self.prior_prob = prior_prob;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_positive("kappa", self.kappa)?;
        check_positive("cost_coeff", self.cost_coeff)?;
        check_nonnegative("sigma", self.sigma)?;
        if !(0.0..=1.0).contains(&self.prior_prob) {
            return Err(Error::InvalidParameter {
                field: "prior_prob".into(),
                value: self.prior_prob,
                reason: "must lie in [0, 1]",
            });
        }
        if !self.reservation_utility.is_finite() {
            return Err(Error::InvalidParameter {
                field: "reservation_utility".into(),
                value: self.reservation_utility,
                reason: "must be finite",
            });
        }
        Ok(())
    }

    /// Quadratic effort cost `c e^2`.
    pub fn cost(&self, effort: f64) -> Result<f64> {
        check_effort(effort)?;
        Ok(self.cost_coeff * effort * effort)
    }

    /// Realized quality `kappa e + sigma xi` for a standard-normal draw `xi`.
    pub fn quality(&self, effort: f64, xi: f64) -> Result<f64> {
        check_effort(effort)?;
        Ok(self.kappa * effort + self.sigma * xi)
    }
}

pub(crate) fn check_effort(effort: f64) -> Result<()> {
    if (0.0..=1.0).contains(&effort) {
        Ok(())
    } else {
        Err(Error::EffortOutOfRange(effort))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RiskAttitude {
    RiskAverse,
    RiskNeutral,
}

/// Exponential (risk averse) or linear (risk neutral) monetary utility.
///
/// The risk-averse form is `a - b exp(-c pi)` with `a = b = 1 / (1 - exp(-c))`,
/// normalized so that `u(0) = 0` and `u(1) = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilitySpec {
    pub kind: RiskAttitude,
    #[serde(default = "default_risk_coeff")]
    pub risk_coeff: f64,
}

fn default_risk_coeff() -> f64 {
    2.0
}

impl UtilitySpec {
    pub fn risk_averse(risk_coeff: f64) -> Self {
        Self {
            kind: RiskAttitude::RiskAverse,
            risk_coeff,
        }
    }

    pub fn risk_neutral() -> Self {
        Self {
            kind: RiskAttitude::RiskNeutral,
            risk_coeff: default_risk_coeff(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == RiskAttitude::RiskAverse {
            check_positive("risk_coeff", self.risk_coeff)?;
        }
        Ok(())
    }

    /// Precomputes the normalization constant for repeated evaluation.
    pub fn compile(&self) -> Utility {
        match self.kind {
            RiskAttitude::RiskNeutral => Utility::Neutral,
            RiskAttitude::RiskAverse => Utility::Averse {
                coeff: self.risk_coeff,
                scale: 1.0 / (1.0 - (-self.risk_coeff).exp()),
            },
        }
    }

    pub fn eval(&self, payoff: f64) -> f64 {
        self.compile().eval(payoff)
    }
}

/// Compiled form of [`UtilitySpec`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Utility {
    Neutral,
    Averse { coeff: f64, scale: f64 },
}

impl Utility {
    #[inline]
    pub fn eval(&self, payoff: f64) -> f64 {
        match *self {
            Utility::Neutral => payoff,
            Utility::Averse { coeff, scale } => {
                let z = (-coeff * payoff).clamp(-EXP_CLAMP, EXP_CLAMP);
                scale - scale * z.exp()
            }
        }
    }
}

/// Free-function form of [`UtilitySpec::eval`].
pub fn utility(payoff: f64, spec: &UtilitySpec) -> f64 {
    spec.eval(payoff)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub types: Vec<AgentTypeSpec>,
    pub utility: UtilitySpec,
}

impl AgentSpec {
    pub fn new(types: Vec<AgentTypeSpec>, utility: UtilitySpec) -> Self {
        Self { types, utility }
    }

    pub fn type_count(&self) -> usize {
        self.types.len()
    }

    pub fn risk_attitude(&self) -> RiskAttitude {
        self.utility.kind
    }

    pub fn ty(&self, agent: usize, index: usize) -> Result<&AgentTypeSpec> {
        self.types.get(index).ok_or(Error::InvalidTypeIndex {
            agent,
            index,
            count: self.types.len(),
        })
    }

    pub fn validate(&self, agent: usize) -> Result<()> {
        if self.types.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "agent {agent} must have at least one type"
            )));
        }
        for ty in &self.types {
            ty.validate()?;
        }
        self.utility.validate()?;
        let sum: f64 = self.types.iter().map(|t| t.prior_prob).sum();
        if (sum - 1.0).abs() > PRIOR_SUM_TOL {
            return Err(Error::PriorNotNormalized { agent, sum });
        }
        Ok(())
    }
}

/// Transfer parameters for one (agent, announced type) pair.
///
/// `a0` is the participation payment, `a1` the award for meeting the
/// passed-down requirement `a2`, and `a3` the payment per unit of quality
/// beyond `a2`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ContractParams {
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
}

impl ContractParams {
    pub const ZERO: ContractParams = ContractParams {
        a0: 0.0,
        a1: 0.0,
        a2: 0.0,
        a3: 0.0,
    };

    pub fn new(a0: f64, a1: f64, a2: f64, a3: f64) -> Self {
        Self { a0, a1, a2, a3 }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.a0, self.a1, self.a2, self.a3]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn is_nonnegative(&self) -> bool {
        self.as_array().iter().all(|&x| x >= 0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.a0 == 0.0 && self.a1 == 0.0 && self.a3 == 0.0
    }

    /// `a0 + a1 H(q - a2) + a3 (q - a2) H(q - a2)` with a sigmoid step.
    #[inline]
    pub fn transfer(&self, q: f64, alpha: f64) -> f64 {
        let d = q - self.a2;
        let h = smooth_heaviside(d, alpha);
        self.a0 + self.a1 * h + self.a3 * d * h
    }
}

/// Free-function form of [`ContractParams::transfer`].
pub fn transfer(q: f64, params: &ContractParams, smoothing: &SmoothingSpec) -> f64 {
    params.transfer(q, smoothing.alpha_transfer)
}

/// Contracts for every (agent, announced type) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractSet {
    pub per_agent: Vec<Vec<ContractParams>>,
}

impl ContractSet {
    pub fn new(per_agent: Vec<Vec<ContractParams>>) -> Self {
        Self { per_agent }
    }

    /// One shared contract per agent, replicated across that agent's types.
    pub fn shared(problem: &ProblemSpec, contracts: &[ContractParams]) -> Self {
        let per_agent = problem
            .agents
            .iter()
            .zip(contracts)
            .map(|(agent, c)| vec![*c; agent.type_count()])
            .collect();
        Self { per_agent }
    }

    pub fn get(&self, agent: usize, announced: usize) -> Result<&ContractParams> {
        let row = self.per_agent.get(agent).ok_or(Error::InvalidAgentIndex {
            index: agent,
            count: self.per_agent.len(),
        })?;
        row.get(announced).ok_or(Error::InvalidTypeIndex {
            agent,
            index: announced,
            count: row.len(),
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, &ContractParams)> {
        self.per_agent
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().enumerate().map(move |(k, c)| (i, k, c)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ValueKind {
    /// Requirement based: full value once every subsystem meets the requirement.
    #[serde(rename = "RB")]
    Rb,
    /// Requirement based plus a linear incentive beyond the requirement.
    #[serde(rename = "RPI")]
    Rpi,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueSpec {
    pub kind: ValueKind,
    #[serde(default = "one")]
    pub v0: f64,
    #[serde(default = "default_incentive_slope")]
    pub incentive_slope: f64,
    #[serde(default = "one")]
    pub requirement: f64,
}

fn one() -> f64 {
    1.0
}

fn default_incentive_slope() -> f64 {
    0.2
}

impl ValueSpec {
    pub fn rb() -> Self {
        Self {
            kind: ValueKind::Rb,
            v0: 1.0,
            incentive_slope: default_incentive_slope(),
            requirement: 1.0,
        }
    }

    pub fn rpi() -> Self {
        Self {
            kind: ValueKind::Rpi,
            ..Self::rb()
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_positive("v0", self.v0)?;
        check_nonnegative("incentive_slope", self.incentive_slope)?;
        if !self.requirement.is_finite() {
            return Err(Error::InvalidParameter {
                field: "requirement".into(),
                value: self.requirement,
                reason: "must be finite",
            });
        }
        Ok(())
    }

    /// System value for the vector of realized subsystem qualities.
    pub fn eval(&self, qualities: &[f64], alpha: f64) -> f64 {
        let r = self.requirement;
        let factor: f64 = match self.kind {
            ValueKind::Rb => qualities
                .iter()
                .map(|&q| smooth_heaviside(q - r, alpha))
                .product(),
            ValueKind::Rpi => qualities
                .iter()
                .map(|&q| smooth_heaviside(q - r, alpha) * (1.0 + self.incentive_slope * (q - r)))
                .product(),
        };
        self.v0 * factor
    }
}

/// Free-function form of [`ValueSpec::eval`].
pub fn system_value(qualities: &[f64], value: &ValueSpec, smoothing: &SmoothingSpec) -> f64 {
    value.eval(qualities, smoothing.alpha_value)
}

/// Sigmoid sharpness for the transfer and value step functions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingSpec {
    pub alpha_transfer: f64,
    pub alpha_value: f64,
}

impl Default for SmoothingSpec {
    fn default() -> Self {
        Self {
            alpha_transfer: 50.0,
            alpha_value: 100.0,
        }
    }
}

impl SmoothingSpec {
    pub fn validate(&self) -> Result<()> {
        check_positive("alpha_transfer", self.alpha_transfer)?;
        check_positive("alpha_value", self.alpha_value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// A single take-it-or-leave-it contract per agent (moral hazard).
    TypeIndependent,
    /// Agents announce a type and receive the matching contract
    /// (moral hazard with adverse selection).
    TypeDependent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub agents: Vec<AgentSpec>,
    pub value: ValueSpec,
    pub principal_utility: UtilitySpec,
    #[serde(default)]
    pub smoothing: SmoothingSpec,
    pub scenario: Scenario,
}

impl ProblemSpec {
    /// Single agent with a single known type, the moral-hazard-only setup
    /// used throughout the case studies (risk-averse agent with `c = 2`,
    /// risk-neutral principal).
    pub fn moral_hazard(ty: AgentTypeSpec, value: ValueSpec) -> Self {
        Self {
            agents: vec![AgentSpec::new(
                vec![ty.with_prior(1.0)],
                UtilitySpec::risk_averse(2.0),
            )],
            value,
            principal_utility: UtilitySpec::risk_neutral(),
            smoothing: SmoothingSpec::default(),
            scenario: Scenario::TypeIndependent,
        }
    }

    /// Single agent of unknown type with type-dependent contracts.
    pub fn adverse_selection(types: Vec<AgentTypeSpec>, value: ValueSpec) -> Self {
        Self {
            agents: vec![AgentSpec::new(types, UtilitySpec::risk_averse(2.0))],
            value,
            principal_utility: UtilitySpec::risk_neutral(),
            smoothing: SmoothingSpec::default(),
            scenario: Scenario::TypeDependent,
        }
    }

    pub fn agent_count(&self) -> usize {
        self.agents.len()
    }

    pub fn agent(&self, index: usize) -> Result<&AgentSpec> {
        self.agents.get(index).ok_or(Error::InvalidAgentIndex {
            index,
            count: self.agents.len(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.agents.is_empty() {
            return Err(Error::InvalidConfig(
                "a problem needs at least one agent".into(),
            ));
        }
        for (i, agent) in self.agents.iter().enumerate() {
            agent.validate(i)?;
        }
        self.value.validate()?;
        self.principal_utility.validate()?;
        self.smoothing.validate()
    }

    /// Whether contracts carry the per-unit incentive slope `a3`.
    pub fn uses_incentive_slope(&self) -> bool {
        self.value.kind == ValueKind::Rpi
    }

    /// Every joint type assignment together with its prior probability.
    pub fn type_assignments(&self) -> Vec<(Vec<usize>, f64)> {
        let mut out = vec![(Vec::with_capacity(self.agents.len()), 1.0)];
        for agent in &self.agents {
            let mut next = Vec::with_capacity(out.len() * agent.type_count());
            for (theta, p) in &out {
                for (k, ty) in agent.types.iter().enumerate() {
                    let mut t = theta.clone();
                    t.push(k);
                    next.push((t, p * ty.prior_prob));
                }
            }
            out = next;
        }
        out
    }
}

/// Free-function form of [`AgentTypeSpec::cost`].
pub fn cost(effort: f64, ty: &AgentTypeSpec) -> Result<f64> {
    ty.cost(effort)
}

/// Free-function form of [`AgentTypeSpec::quality`].
pub fn quality(effort: f64, xi: f64, ty: &AgentTypeSpec) -> Result<f64> {
    ty.quality(effort, xi)
}

/// Monetary payoff of agent `agent` who has type `true_type`, announced
/// `announced`, exerted `effort`, and drew noise `xi`.
///
/// The transfer follows the announced type's contract while the cost and
/// quality follow the true type.
pub fn agent_payoff(
    problem: &ProblemSpec,
    agent: usize,
    effort: f64,
    announced: usize,
    true_type: usize,
    contracts: &ContractSet,
    xi: f64,
) -> Result<f64> {
    let spec = problem.agent(agent)?;
    let ty = spec.ty(agent, true_type)?;
    spec.ty(agent, announced)?;
    let contract = contracts.get(agent, announced)?;
    let q = ty.quality(effort, xi)?;
    Ok(contract.transfer(q, problem.smoothing.alpha_transfer) - ty.cost(effort)?)
}
