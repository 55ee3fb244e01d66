//! Tempered sequential Monte Carlo on `pi_gamma(a) ∝ exp(gamma f(a))` over
//! the contract box.
//!
//! Each stage reweights by the tempering increment, resamples
//! (systematically) when the effective sample size drops below the
//! configured fraction, and moves every particle with random-walk
//! Metropolis steps. Proposals are diagonal Gaussians whose per-component
//! scale is the current particle spread times a global factor adapted
//! toward 20-40% acceptance.

use log::debug;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::pattern::compass_search;
use super::{AnnealerConfig, AnnealerDiagnostics, ContractObjective, ContractOptimizer, SolveResult, FEASIBILITY_TOL};
use crate::error::{Error, Result};

const ACCEPT_LOW: f64 = 0.2;
const ACCEPT_HIGH: f64 = 0.4;
/// Floor on per-component proposal scale, relative to the box width.
const MIN_SCALE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, Default)]
pub struct SmcAnnealer;

struct Particle {
    x: Vec<f64>,
    f: f64,
}

fn evaluate_all(objective: &ContractObjective, points: Vec<Vec<f64>>) -> Result<Vec<Particle>> {
    points
        .into_par_iter()
        .map(|x| {
            let f = objective.penalized(&x)?;
            Ok(Particle { x, f })
        })
        .collect()
}

fn effective_sample_size(weights: &[f64]) -> f64 {
    let sum_sq: f64 = weights.iter().map(|w| w * w).sum();
    1.0 / sum_sq
}

/// Normalized weights from log-weights.
fn normalize(log_w: &[f64]) -> Option<Vec<f64>> {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let w: Vec<f64> = log_w.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return None;
    }
    Some(w.into_iter().map(|x| x / total).collect())
}

fn systematic_resample(weights: &[f64], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = weights.len();
    let u0: f64 = rng.random::<f64>() / n as f64;
    let mut out = Vec::with_capacity(n);
    let mut cum = weights[0];
    let mut j = 0;
    for i in 0..n {
        let u = u0 + i as f64 / n as f64;
        while u > cum && j + 1 < n {
            j += 1;
            cum += weights[j];
        }
        out.push(j);
    }
    out
}

impl ContractOptimizer for SmcAnnealer {
    fn name(&self) -> &'static str {
        "smc"
    }

    fn optimize(&self, objective: &ContractObjective, config: &AnnealerConfig) -> Result<SolveResult> {
        config.validate()?;
        let layout = objective.layout();
        let bounds = layout.bounds().to_vec();
        let free = layout.free_dims();
        let width: Vec<f64> = bounds.iter().map(|(lo, hi)| hi - lo).collect();
        let n = config.particle_count;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut diag = AnnealerDiagnostics::default();

        // Half of the initial population pools types onto one contract:
        // the pooling manifold has measure zero under a uniform draw, yet it
        // often holds the optimum when screening is not worth its rent.
        let init: Vec<Vec<f64>> = (0..n)
            .map(|m| {
                let mut x: Vec<f64> = bounds
                    .iter()
                    .map(|&(lo, hi)| if hi > lo { rng.random_range(lo..=hi) } else { lo })
                    .collect();
                if m % 2 == 1 {
                    layout.pool(&mut x);
                }
                x
            })
            .collect();
        let mut particles = evaluate_all(objective, init)?;
        diag.objective_evaluations += n;

        // Pooling contracts satisfy every truth-telling constraint with zero
        // margin, so the best pooling contract is a feasible floor for the
        // screening problem. Solve that smaller problem first and plant its
        // answer in the population.
        if let Some(pooled) = objective.pooled()? {
            let floor = self.optimize(&pooled, config)?;
            diag.objective_evaluations += floor.diagnostics.objective_evaluations;
            let x = layout.from_contracts(&floor.contracts)?;
            let f = objective.penalized(&x)?;
            diag.objective_evaluations += 1;
            debug!("pooling floor {f:.6}");
            particles[0] = Particle { x, f };
        }
        if let Some(p) = particles.iter().find(|p| !p.f.is_finite()) {
            return Err(Error::SamplerFailure {
                stage: 0,
                reason: format!("non-finite objective at {:?}", p.x),
            });
        }

        let mut elite = particles
            .iter()
            .max_by(|a, b| a.f.total_cmp(&b.f))
            .map(|p| (p.x.clone(), p.f))
            .expect("at least two particles");
        let leaders = layout.pool_leaders();
        let pooling = layout.has_pooling();
        let mut log_w = vec![0.0; n];
        let mut scale_factor = 0.5;
        let mut gamma_prev = 0.0;

        for (stage, &gamma) in config.schedule().iter().enumerate() {
            let stage = stage + 1;
            for (lw, p) in log_w.iter_mut().zip(&particles) {
                *lw += (gamma - gamma_prev) * p.f;
            }
            gamma_prev = gamma;
            let weights = normalize(&log_w).ok_or_else(|| Error::SamplerFailure {
                stage,
                reason: "all importance weights vanished".into(),
            })?;
            let ess = effective_sample_size(&weights);
            if !(ess >= 1.0 - 1e-9) {
                return Err(Error::SamplerFailure {
                    stage,
                    reason: format!("effective sample size collapsed to {ess}"),
                });
            }
            diag.gammas.push(gamma);
            diag.ess.push(ess);
            let resample = ess < config.ess_threshold * n as f64;
            diag.resampled.push(resample);
            if resample {
                let idx = systematic_resample(&weights, &mut rng);
                particles = idx
                    .into_iter()
                    .map(|j| Particle {
                        x: particles[j].x.clone(),
                        f: particles[j].f,
                    })
                    .collect();
                log_w.iter_mut().for_each(|w| *w = 0.0);
            }

            let mut accepted = 0usize;
            let mut proposed = 0usize;
            for _ in 0..config.mcmc_steps_per_stage {
                // weighted spread of the current population per component
                let weights = normalize(&log_w).expect("weights were finite above");
                let scales: Vec<f64> = (0..bounds.len())
                    .map(|j| {
                        let mean: f64 = particles.iter().zip(&weights).map(|(p, w)| w * p.x[j]).sum();
                        let var: f64 = particles
                            .iter()
                            .zip(&weights)
                            .map(|(p, w)| w * (p.x[j] - mean).powi(2))
                            .sum();
                        (scale_factor * var.sqrt()).max(MIN_SCALE * width[j])
                    })
                    .collect();

                // With several types per agent, half of the moves shift all of
                // an agent's contracts together, which keeps pooling points
                // on the pooling manifold.
                let proposals: Vec<Vec<f64>> = particles
                    .iter()
                    .map(|p| {
                        let mut y = p.x.clone();
                        let z: Vec<f64> = (0..y.len()).map(|_| rng.sample(StandardNormal)).collect();
                        let joint = pooling && rng.random::<bool>();
                        for &j in &free {
                            let l = if joint { leaders[j] } else { j };
                            y[j] += scales[l] * z[l];
                        }
                        y
                    })
                    .collect();
                let uniforms: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
                let inside: Vec<bool> = proposals.iter().map(|y| layout.contains(y)).collect();
                let evaluated: Vec<Option<f64>> = proposals
                    .par_iter()
                    .zip(inside.par_iter())
                    .map(|(y, &ok)| if ok { objective.penalized(y).map(Some) } else { Ok(None) })
                    .collect::<Result<_>>()?;
                diag.objective_evaluations += inside.iter().filter(|&&b| b).count();

                for ((p, y), (fy, u)) in particles
                    .iter_mut()
                    .zip(proposals)
                    .zip(evaluated.into_iter().zip(uniforms))
                {
                    proposed += 1;
                    let Some(fy) = fy else { continue };
                    if !fy.is_finite() {
                        return Err(Error::SamplerFailure {
                            stage,
                            reason: format!("non-finite objective at {y:?}"),
                        });
                    }
                    if fy > elite.1 {
                        elite = (y.clone(), fy);
                    }
                    if u.ln() < gamma * (fy - p.f) {
                        p.x = y;
                        p.f = fy;
                        accepted += 1;
                    }
                }
            }
            let rate = if proposed > 0 {
                accepted as f64 / proposed as f64
            } else {
                0.0
            };
            if config.mcmc_steps_per_stage > 0 {
                if rate < ACCEPT_LOW {
                    scale_factor *= 0.7;
                } else if rate > ACCEPT_HIGH {
                    scale_factor *= 1.3;
                }
            }
            diag.acceptance_rates.push(rate);
            diag.best_trace.push(elite.1);
            debug!(
                "stage {stage}: gamma={gamma:.4} ess={ess:.1} accept={rate:.2} best={:.6}",
                elite.1
            );
        }

        let mut best = elite.0;
        if config.polish {
            let outcome = compass_search(|x| objective.penalized(x), &best, layout.bounds(), &free)?;
            diag.objective_evaluations += outcome.evaluations;
            diag.polish_gain = outcome.value - elite.1;
            best = outcome.x;
            diag.best_trace.push(outcome.value);
        }
        objective.solve_result(self.name(), best, diag, FEASIBILITY_TOL)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resampling_follows_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let idx = systematic_resample(&[0.0, 1.0, 0.0], &mut rng);
        assert_eq!(idx, vec![1, 1, 1]);
        let idx = systematic_resample(&[0.5, 0.0, 0.5, 0.0], &mut rng);
        assert_eq!(idx.iter().filter(|&&j| j == 0).count(), 2);
        assert_eq!(idx.iter().filter(|&&j| j == 2).count(), 2);
    }

    #[test]
    fn ess_bounds() {
        assert!((effective_sample_size(&[0.25; 4]) - 4.0).abs() < 1e-12);
        assert!((effective_sample_size(&[1.0, 0.0, 0.0]) - 1.0).abs() < 1e-12);
        assert!(normalize(&[f64::NEG_INFINITY; 3]).is_none());
    }
}
