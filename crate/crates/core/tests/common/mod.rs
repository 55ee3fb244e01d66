//! Randomized invariants shared by the property tests and the acceptance
//! harness. Each check drives its own runner so it can be reported by name.
#![allow(dead_code)]

use contract_core::analysis::{exceedance, sample_principal_utility};
use contract_core::model::{
    smooth_heaviside, AgentSpec, AgentTypeSpec, ContractParams, ProblemSpec, Scenario,
    SmoothingSpec, UtilitySpec, ValueKind, ValueSpec,
};
use contract_core::optimizer::{AnnealerConfig, AnnealerDiagnostics, ContractObjective};
use contract_core::quadrature::{expect, gauss_hermite_1d, sparse_grid};
use contract_core::registry::Registry;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

pub const CASES: u32 = 1000;

pub type Check = fn(u32) -> Result<(), String>;

pub const PROPERTIES: &[(&str, Check)] = &[
    ("sigmoid complement identity", sigmoid_complement),
    ("transfer monotonicity", transfer_monotone),
    ("utility concavity", utility_concave),
    ("exceedance monotonicity", exceedance_monotone),
    ("conditional-expectation consistency", conditional_consistency),
    ("quadrature linearity", quadrature_linear),
    ("seed determinism (sampling)", sampling_determinism),
    ("seed determinism (annealer)", annealer_determinism),
];

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    })
}

fn check<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    runner(cases).run(&strategy, test).map_err(|e| e.to_string())
}

fn nonnegative_contract() -> impl Strategy<Value = ContractParams> {
    (0.0..2.0f64, 0.0..2.0f64, 0.0..3.0f64, 0.0..2.0f64)
        .prop_map(|(a0, a1, a2, a3)| ContractParams::new(a0, a1, a2, a3))
}

fn agent_type() -> impl Strategy<Value = AgentTypeSpec> {
    (0.5..3.0f64, 0.05..0.8f64, 0.0..0.6f64).prop_map(|(k, c, s)| AgentTypeSpec::new(k, c, s))
}

fn value_spec() -> impl Strategy<Value = ValueSpec> {
    prop_oneof![Just(ValueSpec::rb()), Just(ValueSpec::rpi())]
}

pub fn sigmoid_complement(cases: u32) -> Result<(), String> {
    check(cases, (-20.0..20.0f64, 0.1..500.0f64), |(x, alpha)| {
        let h = smooth_heaviside(x, alpha);
        prop_assert!((0.0..=1.0).contains(&h));
        prop_assert!((h + smooth_heaviside(-x, alpha) - 1.0).abs() <= 1e-12);
        Ok(())
    })
}

/// Nondecreasing above the threshold for any nonnegative contract, and
/// everywhere when there is no incentive slope. Below the threshold the
/// smoothed slope term dips by at most about `0.28 a3 / alpha`.
pub fn transfer_monotone(cases: u32) -> Result<(), String> {
    let s = (nonnegative_contract(), 0.0..4.0f64, 0.0..2.0f64, 1.0..200.0f64, -6.0..0.0f64);
    check(cases, s, |(c, above, dq, alpha, below)| {
        let q = c.a2 + above;
        let (lo, hi) = (c.transfer(q, alpha), c.transfer(q + dq, alpha));
        prop_assert!(hi >= lo - 1e-12, "t({q}) = {lo} > t({}) = {hi}", q + dq);
        prop_assert!(lo >= -1e-12);

        let flat = ContractParams::new(c.a0, c.a1, c.a2, 0.0);
        let q = c.a2 + below;
        let (lo, hi) = (flat.transfer(q, alpha), flat.transfer(q + dq, alpha));
        prop_assert!(hi >= lo - 1e-12, "t({q}) = {lo} > t({}) = {hi}", q + dq);
        prop_assert!(c.transfer(q, alpha) >= c.a0 - 0.28 * c.a3 / alpha - 1e-12);
        Ok(())
    })
}

pub fn utility_concave(cases: u32) -> Result<(), String> {
    let s = (0.01..10.0f64, -3.0..3.0f64, -3.0..3.0f64, 0.0..1.0f64);
    check(cases, s, |(r, x, y, w)| {
        let u = UtilitySpec::risk_averse(r);
        prop_assert!((u.eval(0.0)).abs() <= 1e-12);
        prop_assert!((u.eval(1.0) - 1.0).abs() <= 1e-12);
        let mid = w * x + (1.0 - w) * y;
        let chord = w * u.eval(x) + (1.0 - w) * u.eval(y);
        prop_assert!(u.eval(mid) >= chord - 1e-9 * (1.0 + chord.abs()));
        let (a, b) = if x <= y { (x, y) } else { (y, x) };
        prop_assert!(u.eval(a) <= u.eval(b));
        let n = UtilitySpec::risk_neutral();
        prop_assert!((n.eval(mid) - (w * n.eval(x) + (1.0 - w) * n.eval(y))).abs() <= 1e-12);
        Ok(())
    })
}

fn fixed_result(problem: &ProblemSpec, contract: ContractParams) -> contract_core::optimizer::SolveResult {
    let rule = gauss_hermite_1d(32).unwrap();
    let objective = ContractObjective::new(problem, &rule).unwrap();
    let set = contract_core::model::ContractSet::shared(problem, &[contract]);
    let params = objective.layout().from_contracts(&set).unwrap();
    objective
        .solve_result("fixed", params, AnnealerDiagnostics::default(), 1e-3)
        .unwrap()
}

fn rb_contract(c: ContractParams, value: &ValueSpec) -> ContractParams {
    if value.kind == ValueKind::Rb {
        ContractParams::new(c.a0, c.a1, c.a2, 0.0)
    } else {
        c
    }
}

pub fn exceedance_monotone(cases: u32) -> Result<(), String> {
    let s = (agent_type(), value_spec(), nonnegative_contract(), any::<u64>());
    check(cases, s, |(ty, value, c, seed)| {
        let c = rb_contract(c, &value);
        let problem = ProblemSpec::moral_hazard(ty, value);
        let result = fixed_result(&problem, c);
        let curve = exceedance(&result, &problem, 10_000, seed).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert!((curve.probabilities[0] - 1.0).abs() <= 1e-12);
        prop_assert!(curve.probabilities[curve.probabilities.len() - 1].abs() <= 1e-12);
        for w in curve.probabilities.windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
        for w in curve.thresholds.windows(2) {
            prop_assert!(w[1] > w[0]);
        }
        Ok(())
    })
}

/// One or two agents with two or three types and random priors.
fn typed_problem() -> impl Strategy<Value = ProblemSpec> {
    let agent = (prop::collection::vec((agent_type(), 0.05..1.0f64), 1..=3)).prop_map(|types| {
        let total: f64 = types.iter().map(|(_, w)| w).sum();
        AgentSpec::new(
            types.into_iter().map(|(t, w)| t.with_prior(w / total)).collect(),
            UtilitySpec::risk_averse(2.0),
        )
    });
    (prop::collection::vec(agent, 1..=2), value_spec()).prop_map(|(agents, value)| ProblemSpec {
        agents,
        value,
        principal_utility: UtilitySpec::risk_neutral(),
        smoothing: SmoothingSpec::default(),
        scenario: Scenario::TypeDependent,
    })
}

pub fn conditional_consistency(cases: u32) -> Result<(), String> {
    let s = (typed_problem(), prop::collection::vec(-1.0..1.0f64, 4));
    check(cases, s, |(problem, coef)| {
        let rule = match problem.agent_count() {
            1 => gauss_hermite_1d(16).unwrap(),
            n => sparse_grid(n, 3).unwrap(),
        };
        let f = |theta: &[usize], xi: &[f64]| {
            theta
                .iter()
                .zip(xi)
                .enumerate()
                .map(|(i, (&k, &x))| {
                    let t = &problem.agents[i].types[k];
                    coef[0] * t.kappa + coef[1] * (t.sigma * x).exp() + coef[2] * x * x + coef[3] * k as f64
                })
                .sum::<f64>()
        };
        let whole = expect(f, &problem, &rule, None).unwrap();
        for (i, agent) in problem.agents.iter().enumerate() {
            let mut mixed = 0.0;
            for (k, t) in agent.types.iter().enumerate() {
                mixed += t.prior_prob * expect(f, &problem, &rule, Some((i, k))).unwrap();
            }
            prop_assert!((mixed - whole).abs() <= 1e-10 * (1.0 + whole.abs()), "{mixed} vs {whole}");
        }
        Ok(())
    })
}

pub fn quadrature_linear(cases: u32) -> Result<(), String> {
    let s = (1usize..=3, -2.0..2.0f64, -2.0..2.0f64, -1.0..1.0f64);
    check(cases, s, |(dim, a, b, shift)| {
        let rule = match dim {
            1 => gauss_hermite_1d(32).unwrap(),
            d => sparse_grid(d, 4).unwrap(),
        };
        let total: f64 = rule.weights().iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-10);
        let f = |x: &[f64]| (x[0] * 0.3 + shift).cos();
        let g = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>() + shift;
        let combined = rule.integrate(|x| a * f(x) + b * g(x));
        let separate = a * rule.integrate(f) + b * rule.integrate(g);
        prop_assert!((combined - separate).abs() <= 1e-12 * (1.0 + separate.abs()));
        // E[sum xi^2] = dim
        prop_assert!((rule.integrate(g) - shift - dim as f64).abs() <= 1e-9);
        Ok(())
    })
}

pub fn sampling_determinism(cases: u32) -> Result<(), String> {
    let s = (agent_type(), nonnegative_contract(), any::<u64>(), 1usize..9000);
    check(cases, s, |(ty, c, seed, n)| {
        let value = ValueSpec::rb();
        let problem = ProblemSpec::moral_hazard(ty, value);
        let result = fixed_result(&problem, rb_contract(c, &value));
        let a = sample_principal_utility(&result, &problem, n, seed).unwrap();
        let b = sample_principal_utility(&result, &problem, n, seed).unwrap();
        prop_assert_eq!(a.len(), n);
        prop_assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        Ok(())
    })
}

pub fn annealer_determinism(cases: u32) -> Result<(), String> {
    let smc = Registry::default().optimizer("smc").unwrap();
    let rule = gauss_hermite_1d(8).unwrap();
    let s = (agent_type(), value_spec(), any::<u64>());
    check(cases, s, |(ty, value, seed)| {
        let problem = ProblemSpec::moral_hazard(ty, value);
        let objective = ContractObjective::new(&problem, &rule).unwrap();
        let cfg = AnnealerConfig {
            stages: 3,
            particle_count: 6,
            mcmc_steps_per_stage: 1,
            polish: false,
            seed,
            ..AnnealerConfig::default()
        };
        let a = smc.optimize(&objective, &cfg).unwrap();
        let b = smc.optimize(&objective, &cfg).unwrap();
        prop_assert_eq!(&a.params, &b.params);
        prop_assert_eq!(a.penalized_objective.to_bits(), b.penalized_objective.to_bits());
        Ok(())
    })
}
