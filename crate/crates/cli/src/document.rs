//! The TOML problem document.
//!
//! Every numeric leaf is deserialized with its source span so that model
//! invariants checked after parsing still report a line and column.

use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::Spanned;

use contract_core::analysis::{SweepAxis, DEFAULT_EXCEEDANCE_SAMPLES};
use contract_core::calibration::{CalibrationInputs, SigmaConvention};
use contract_core::model::{
    AgentSpec, AgentTypeSpec, ProblemSpec, Scenario, SmoothingSpec, UtilitySpec, ValueKind, ValueSpec, PRIOR_SUM_TOL,
};
use contract_core::optimizer::AnnealerConfig;
use contract_core::quadrature::{DEFAULT_LEVEL, DEFAULT_POINTS};
use contract_core::registry::{DEFAULT_EFFORT_SOLVER, DEFAULT_OPTIMIZER};

use crate::error::{CliError, Result};

type Num = Spanned<f64>;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDocument {
    name: Option<String>,
    scenario: Option<Scenario>,
    value: Option<RawValue>,
    principal: Option<RawUtility>,
    smoothing: Option<RawSmoothing>,
    agents: Option<Spanned<Vec<RawAgent>>>,
    solver: Option<SolverSection>,
    annealer: Option<RawAnnealer>,
    sweep: Option<RawSweep>,
    exceedance: Option<RawExceedance>,
    calibration: Option<RawCalibration>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawValue {
    kind: ValueKind,
    v0: Option<Num>,
    incentive_slope: Option<Num>,
    requirement: Option<Num>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawUtility {
    kind: contract_core::model::RiskAttitude,
    risk_coeff: Option<Num>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSmoothing {
    alpha_transfer: Option<Num>,
    alpha_value: Option<Num>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAgent {
    utility: Option<RawUtility>,
    types: Spanned<Vec<RawType>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawType {
    kappa: Num,
    cost_coeff: Num,
    sigma: Num,
    prior_prob: Option<Num>,
    reservation_utility: Option<Num>,
}

/// Strategy and quadrature selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub optimizer: String,
    pub effort_solver: String,
    /// Gauss–Hermite points for single-agent problems.
    pub quadrature_points: usize,
    /// Sparse-grid level for multi-agent problems.
    pub sparse_level: usize,
    /// Number of independent seeds; the best objective is kept.
    pub seeds: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            optimizer: DEFAULT_OPTIMIZER.into(),
            effort_solver: DEFAULT_EFFORT_SOLVER.into(),
            quadrature_points: DEFAULT_POINTS,
            sparse_level: DEFAULT_LEVEL,
            seeds: 1,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAnnealer {
    gamma_start: Option<f64>,
    gamma_end: Option<f64>,
    stages: Option<usize>,
    particle_count: Option<usize>,
    mcmc_steps_per_stage: Option<usize>,
    ess_threshold: Option<f64>,
    seed: Option<u64>,
    penalty_weight: Option<f64>,
    polish: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    axis: Spanned<String>,
    levels: Spanned<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExceedance {
    samples: Option<Spanned<usize>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCalibration {
    /// Delimited-text series, relative to the document. Omitted: the
    /// built-in synthetic satellite series.
    series: Option<String>,
    sigma_convention: Option<SigmaConvention>,
    requirement: Num,
    state_of_art_performance: Option<Num>,
    state_of_art_investment: Option<Num>,
    engineer_cost_rate: Num,
    horizon: Option<Num>,
    engineer_count: Num,
    system_value: Num,
    value: Option<ValueKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSettings {
    pub axis: SweepAxis,
    pub levels: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum SeriesSource {
    Synthetic,
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationSettings {
    pub series: SeriesSource,
    pub sigma_convention: SigmaConvention,
    /// Anchor overrides; `None` takes the last record.
    pub state_of_art_performance: Option<f64>,
    pub state_of_art_investment: Option<f64>,
    pub requirement: f64,
    pub engineer_cost_rate: f64,
    pub horizon: f64,
    pub engineer_count: f64,
    pub system_value: f64,
    pub value: ValueKind,
}

impl CalibrationSettings {
    pub fn inputs(&self, anchor: (f64, f64)) -> CalibrationInputs {
        CalibrationInputs {
            requirement: self.requirement,
            state_of_art_performance: self.state_of_art_performance.unwrap_or(anchor.1),
            state_of_art_investment: self.state_of_art_investment.unwrap_or(anchor.0),
            engineer_cost_rate: self.engineer_cost_rate,
            horizon: self.horizon,
            engineer_count: self.engineer_count,
            system_value: self.system_value,
        }
    }
}

/// A fully validated document.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Document {
    pub name: Option<String>,
    pub problem: Option<ProblemSpec>,
    pub solver: SolverSection,
    pub annealer: AnnealerConfig,
    pub sweep: Option<SweepSettings>,
    pub exceedance_samples: usize,
    pub calibration: Option<CalibrationSettings>,
}

impl Document {
    pub fn problem(&self, path: &Path) -> Result<&ProblemSpec> {
        self.problem.as_ref().ok_or_else(|| CliError::Document {
            path: path.to_path_buf(),
            line: None,
            column: None,
            message: "the document defines no [[agents]]".into(),
        })
    }
}

struct Ctx<'a> {
    path: &'a Path,
    src: &'a str,
}

impl Ctx<'_> {
    fn error(&self, span: Option<Range<usize>>, message: impl Into<String>) -> CliError {
        let (line, column) = match span {
            Some(s) => {
                let (l, c) = line_col(self.src, s.start);
                (Some(l), Some(c))
            }
            None => (None, None),
        };
        CliError::Document {
            path: self.path.to_path_buf(),
            line,
            column,
            message: message.into(),
        }
    }

    fn check(&self, n: &Num, field: &str, ok: bool, reason: &str) -> Result<f64> {
        let v = *n.get_ref();
        if ok {
            Ok(v)
        } else {
            Err(self.error(Some(n.span()), format!("`{field}` = {v}: {reason}")))
        }
    }

    fn positive(&self, n: &Num, field: &str) -> Result<f64> {
        let v = *n.get_ref();
        self.check(n, field, v > 0.0 && v.is_finite(), "must be positive")
    }

    fn nonnegative(&self, n: &Num, field: &str) -> Result<f64> {
        let v = *n.get_ref();
        self.check(n, field, v >= 0.0 && v.is_finite(), "must be nonnegative")
    }

    fn finite(&self, n: &Num, field: &str) -> Result<f64> {
        let v = *n.get_ref();
        self.check(n, field, v.is_finite(), "must be finite")
    }
}

/// 1-based line and column of a byte offset.
pub fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(src.len());
    let before = &src[..offset];
    let line = before.matches('\n').count() + 1;
    let start = before.rfind('\n').map_or(0, |i| i + 1);
    (line, before[start..].chars().count() + 1)
}

fn utility(ctx: &Ctx, raw: Option<&RawUtility>, default: UtilitySpec) -> Result<UtilitySpec> {
    let Some(raw) = raw else { return Ok(default) };
    let mut u = UtilitySpec {
        kind: raw.kind,
        risk_coeff: 2.0,
    };
    if let Some(c) = &raw.risk_coeff {
        u.risk_coeff = ctx.positive(c, "risk_coeff")?;
    }
    Ok(u)
}

fn problem(ctx: &Ctx, raw: &RawDocument, agents: &Spanned<Vec<RawAgent>>) -> Result<ProblemSpec> {
    if agents.get_ref().is_empty() {
        return Err(ctx.error(Some(agents.span()), "a problem needs at least one agent"));
    }
    let mut specs = Vec::new();
    for (i, agent) in agents.get_ref().iter().enumerate() {
        let raw_types = agent.types.get_ref();
        if raw_types.is_empty() {
            return Err(ctx.error(Some(agent.types.span()), format!("agent {i} has no types")));
        }
        let mut types = Vec::new();
        for t in raw_types {
            let mut ty = AgentTypeSpec::new(
                ctx.positive(&t.kappa, "kappa")?,
                ctx.positive(&t.cost_coeff, "cost_coeff")?,
                ctx.nonnegative(&t.sigma, "sigma")?,
            );
            ty.prior_prob = match &t.prior_prob {
                Some(p) => {
                    let v = *p.get_ref();
                    ctx.check(p, "prior_prob", (0.0..=1.0).contains(&v), "must lie in [0, 1]")?
                }
                None if raw_types.len() == 1 => 1.0,
                None => {
                    return Err(ctx.error(
                        Some(t.kappa.span()),
                        "`prior_prob` is required when an agent has several types",
                    ))
                }
            };
            if let Some(r) = &t.reservation_utility {
                ty.reservation_utility = ctx.finite(r, "reservation_utility")?;
            }
            types.push(ty);
        }
        let sum: f64 = types.iter().map(|t| t.prior_prob).sum();
        if (sum - 1.0).abs() > PRIOR_SUM_TOL {
            let span = raw_types
                .iter()
                .find_map(|t| t.prior_prob.as_ref().map(|p| p.span()))
                .unwrap_or_else(|| agent.types.span());
            return Err(ctx.error(
                Some(span),
                format!("prior probabilities of agent {i} sum to {sum}, expected 1"),
            ));
        }
        specs.push(AgentSpec::new(
            types,
            utility(ctx, agent.utility.as_ref(), UtilitySpec::risk_averse(2.0))?,
        ));
    }

    let mut value = ValueSpec::rb();
    if let Some(v) = &raw.value {
        value.kind = v.kind;
        if let Some(x) = &v.v0 {
            value.v0 = ctx.positive(x, "v0")?;
        }
        if let Some(x) = &v.incentive_slope {
            value.incentive_slope = ctx.nonnegative(x, "incentive_slope")?;
        }
        if let Some(x) = &v.requirement {
            value.requirement = ctx.finite(x, "requirement")?;
        }
    }
    let mut smoothing = SmoothingSpec::default();
    if let Some(s) = &raw.smoothing {
        if let Some(x) = &s.alpha_transfer {
            smoothing.alpha_transfer = ctx.positive(x, "alpha_transfer")?;
        }
        if let Some(x) = &s.alpha_value {
            smoothing.alpha_value = ctx.positive(x, "alpha_value")?;
        }
    }
    let single_types = specs.iter().all(|a| a.type_count() == 1);
    let scenario = raw.scenario.unwrap_or(if single_types {
        Scenario::TypeIndependent
    } else {
        Scenario::TypeDependent
    });
    let spec = ProblemSpec {
        agents: specs,
        value,
        principal_utility: utility(ctx, raw.principal.as_ref(), UtilitySpec::risk_neutral())?,
        smoothing,
        scenario,
    };
    // anything the field checks above missed
    spec.validate().map_err(|e| ctx.error(Some(agents.span()), e.to_string()))?;
    Ok(spec)
}

fn annealer(raw: Option<&RawAnnealer>) -> AnnealerConfig {
    let mut cfg = AnnealerConfig::default();
    let Some(r) = raw else { return cfg };
    macro_rules! set {
        ($($f:ident),*) => { $( if let Some(v) = r.$f { cfg.$f = v; } )* };
    }
    set!(gamma_start, gamma_end, stages, particle_count, mcmc_steps_per_stage, ess_threshold, seed, polish);
    if r.penalty_weight.is_some() {
        cfg.penalty_weight = r.penalty_weight;
    }
    cfg
}

fn calibration(ctx: &Ctx, raw: &RawCalibration) -> Result<CalibrationSettings> {
    let series = match &raw.series {
        None => SeriesSource::Synthetic,
        Some(s) if s == "synthetic" => SeriesSource::Synthetic,
        Some(s) => {
            let base = ctx.path.parent().unwrap_or(Path::new("."));
            SeriesSource::File(base.join(s))
        }
    };
    let horizon = match &raw.horizon {
        Some(h) => ctx.positive(h, "horizon")?,
        None => 1.0,
    };
    let opt = |n: &Option<Num>, f: &str| -> Result<Option<f64>> { n.as_ref().map(|x| ctx.finite(x, f)).transpose() };
    let settings = CalibrationSettings {
        series,
        sigma_convention: raw.sigma_convention.unwrap_or_default(),
        state_of_art_performance: opt(&raw.state_of_art_performance, "state_of_art_performance")?,
        state_of_art_investment: opt(&raw.state_of_art_investment, "state_of_art_investment")?,
        requirement: ctx.finite(&raw.requirement, "requirement")?,
        engineer_cost_rate: ctx.positive(&raw.engineer_cost_rate, "engineer_cost_rate")?,
        horizon,
        engineer_count: ctx.positive(&raw.engineer_count, "engineer_count")?,
        system_value: ctx.positive(&raw.system_value, "system_value")?,
        value: raw.value.unwrap_or(ValueKind::Rb),
    };
    if let Some(g_s) = settings.state_of_art_performance {
        if settings.requirement <= g_s {
            return Err(ctx.error(
                Some(raw.requirement.span()),
                format!(
                    "requirement {} must exceed the state of the art {g_s}",
                    settings.requirement
                ),
            ));
        }
    }
    Ok(settings)
}

/// Parses and validates a document held in memory; `path` is used for
/// messages and to resolve relative series paths.
pub fn parse_document(src: &str, path: &Path) -> Result<Document> {
    let ctx = Ctx { path, src };
    let raw: RawDocument = toml::from_str(src).map_err(|e| ctx.error(e.span(), e.message().trim()))?;
    let problem = raw.agents.as_ref().map(|a| problem(&ctx, &raw, a)).transpose()?;
    let solver = raw.solver.clone().unwrap_or_default();
    if solver.quadrature_points == 0 || solver.seeds == 0 {
        return Err(ctx.error(None, "[solver] quadrature_points and seeds must be at least 1"));
    }
    let annealer = annealer(raw.annealer.as_ref());
    annealer
        .validate()
        .map_err(|e| ctx.error(None, format!("[annealer] {e}")))?;
    let sweep = raw
        .sweep
        .as_ref()
        .map(|s| -> Result<SweepSettings> {
            let axis = s
                .axis
                .get_ref()
                .parse::<SweepAxis>()
                .map_err(|e| ctx.error(Some(s.axis.span()), e.to_string()))?;
            let levels = s.levels.get_ref().clone();
            let ordered = levels.windows(2).all(|w| w[0] < w[1]) || levels.windows(2).all(|w| w[0] > w[1]);
            if levels.is_empty() || !ordered {
                return Err(ctx.error(
                    Some(s.levels.span()),
                    "sweep levels must be non-empty and strictly ordered",
                ));
            }
            Ok(SweepSettings { axis, levels })
        })
        .transpose()?;
    let exceedance_samples = raw
        .exceedance
        .as_ref()
        .and_then(|e| e.samples.as_ref())
        .map_or(DEFAULT_EXCEEDANCE_SAMPLES, |s| *s.get_ref());
    let calibration = raw.calibration.as_ref().map(|c| calibration(&ctx, c)).transpose()?;
    Ok(Document {
        name: raw.name.clone(),
        problem,
        solver,
        annealer,
        sweep,
        exceedance_samples,
        calibration,
    })
}

pub fn load_document(path: &Path) -> Result<Document> {
    let src = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_document(&src, path)
}

/// Loads the problem part of a document.
pub fn load_problem(path: &Path) -> Result<ProblemSpec> {
    let doc = load_document(path)?;
    doc.problem(path).cloned()
}

fn kind_name(kind: ValueKind) -> &'static str {
    match kind {
        ValueKind::Rb => "RB",
        ValueKind::Rpi => "RPI",
    }
}

fn attitude_name(u: &UtilitySpec) -> String {
    match u.kind {
        contract_core::model::RiskAttitude::RiskAverse => {
            format!("{{ kind = \"risk-averse\", risk_coeff = {:?} }}", u.risk_coeff)
        }
        contract_core::model::RiskAttitude::RiskNeutral => "{ kind = \"risk-neutral\" }".into(),
    }
}

/// Renders a problem in the document schema.
pub fn render_problem(name: &str, problem: &ProblemSpec) -> String {
    let scenario = match problem.scenario {
        Scenario::TypeIndependent => "type-independent",
        Scenario::TypeDependent => "type-dependent",
    };
    // top-level keys must precede every table
    let mut s = format!(
        "name = \"{name}\"\nscenario = \"{scenario}\"\nprincipal = {}\n\n[value]\nkind = \"{}\"\nv0 = {:?}\nrequirement = {:?}\nincentive_slope = {:?}\n",
        attitude_name(&problem.principal_utility),
        kind_name(problem.value.kind),
        problem.value.v0,
        problem.value.requirement,
        problem.value.incentive_slope,
    );
    s.push_str(&format!(
        "\n[smoothing]\nalpha_transfer = {:?}\nalpha_value = {:?}\n",
        problem.smoothing.alpha_transfer, problem.smoothing.alpha_value
    ));
    for agent in &problem.agents {
        s.push_str(&format!("\n[[agents]]\nutility = {}\n", attitude_name(&agent.utility)));
        for t in &agent.types {
            s.push_str(&format!(
                "\n[[agents.types]]\nkappa = {:?}\ncost_coeff = {:?}\nsigma = {:?}\nprior_prob = {:?}\nreservation_utility = {:?}\n",
                t.kappa, t.cost_coeff, t.sigma, t.prior_prob, t.reservation_utility
            ));
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_and_column() {
        let src = "a = 1\nbb = 2\n";
        assert_eq!(line_col(src, 0), (1, 1));
        assert_eq!(line_col(src, 6), (2, 1));
        assert_eq!(line_col(src, 11), (2, 6));
    }

    #[test]
    fn render_roundtrip() {
        let p = ProblemSpec::adverse_selection(
            vec![
                AgentTypeSpec::new(1.5, 0.1, 0.1).with_prior(0.5),
                AgentTypeSpec::new(1.5, 0.4, 0.1).with_prior(0.5),
            ],
            ValueSpec::rpi(),
        );
        let text = render_problem("x", &p);
        let doc = parse_document(&text, Path::new("x.toml")).unwrap();
        assert_eq!(doc.problem.unwrap(), p);
    }
}
