use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{AnnealerConfig, AnnealerDiagnostics, ContractObjective, ContractOptimizer, SolveResult, FEASIBILITY_TOL};
use crate::error::Result;

const INITIAL_STEP: f64 = 0.05;
const MIN_STEP: f64 = 1e-7;
const MIN_GAIN: f64 = 1e-12;
const MAX_EVALUATIONS: usize = 5000;

#[derive(Debug, Clone, PartialEq)]
pub struct CompassOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
}

/// Deterministic compass search inside a box, maximizing `f`.
///
/// Steps start at 5% of each box width and halve whenever no coordinate
/// move improves; the search ends once every step is below `1e-7` of its
/// width.
pub fn compass_search<F>(f: F, x0: &[f64], bounds: &[(f64, f64)], free: &[usize]) -> Result<CompassOutcome>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let mut x = x0.to_vec();
    let mut fx = f(&x)?;
    let mut evaluations = 1;
    let width: Vec<f64> = bounds.iter().map(|(lo, hi)| hi - lo).collect();
    let mut step: Vec<f64> = width.iter().map(|w| INITIAL_STEP * w).collect();

    while evaluations < MAX_EVALUATIONS {
        let mut improved = false;
        for &j in free {
            for dir in [1.0, -1.0] {
                let mut y = x.clone();
                y[j] = (x[j] + dir * step[j]).clamp(bounds[j].0, bounds[j].1);
                if y[j] == x[j] {
                    continue;
                }
                let fy = f(&y)?;
                evaluations += 1;
                if fy > fx + MIN_GAIN {
                    x = y;
                    fx = fy;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            step.iter_mut().for_each(|s| *s *= 0.5);
            if free.iter().all(|&j| step[j] < MIN_STEP * width[j]) {
                break;
            }
        }
    }
    Ok(CompassOutcome {
        x,
        value: fx,
        evaluations,
    })
}

/// Uniform random starts followed by compass search from the best few.
/// Much cheaper than SMC and adequate for low-dimensional, single-type
/// problems.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultistartPattern {
    pub starts: usize,
    pub refined: usize,
}

impl Default for MultistartPattern {
    fn default() -> Self {
        Self {
            starts: 256,
            refined: 4,
        }
    }
}

impl ContractOptimizer for MultistartPattern {
    fn name(&self) -> &'static str {
        "multistart-pattern"
    }

    fn optimize(&self, objective: &ContractObjective, config: &AnnealerConfig) -> Result<SolveResult> {
        let layout = objective.layout();
        let bounds = layout.bounds();
        let free = layout.free_dims();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let starts: Vec<Vec<f64>> = (0..self.starts.max(1))
            .map(|_| {
                bounds
                    .iter()
                    .map(|&(lo, hi)| if hi > lo { rng.random_range(lo..=hi) } else { lo })
                    .collect()
            })
            .collect();
        let mut scored: Vec<(Vec<f64>, f64)> = starts
            .into_par_iter()
            .map(|x| objective.penalized(&x).map(|f| (x, f)))
            .collect::<Result<_>>()?;
        let mut diag = AnnealerDiagnostics {
            objective_evaluations: scored.len(),
            ..AnnealerDiagnostics::default()
        };
        scored.sort_by(|a, b| b.1.total_cmp(&a.1));
        let seed_best = scored[0].1;
        let outcomes: Vec<CompassOutcome> = scored
            .iter()
            .take(self.refined.max(1))
            .map(|(x, _)| compass_search(|y| objective.penalized(y), x, bounds, &free))
            .collect::<Result<_>>()?;
        diag.objective_evaluations += outcomes.iter().map(|o| o.evaluations).sum::<usize>();
        let best = outcomes
            .into_iter()
            .reduce(|a, b| if b.value > a.value { b } else { a })
            .expect("at least one refined start");
        diag.polish_gain = best.value - seed_best;
        diag.best_trace = vec![seed_best, best.value];
        objective.solve_result(self.name(), best.x, diag, FEASIBILITY_TOL)
    }
}
