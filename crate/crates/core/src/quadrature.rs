//! Expectations over standard-normal noise and discrete agent types.
//!
//! All rules use the probabilists' convention: weights sum to one and
//! `sum_s w_s g(xi_s)` approximates `E[g(Xi)]` for `Xi ~ N(0, I_D)`.
//!
//! Multi-dimensional rules are Smolyak sparse grids over non-nested 1D
//! Gauss-Hermite rules. Level `l >= 0` of the 1D family has `2^(l+1) - 1`
//! points (1, 3, 7, 15, 31, 63, 127, ...), so a level-6 grid in one dimension
//! is the 127-point Gauss-Hermite rule. Coincident nodes (only the origin is
//! shared between levels) are merged.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ProblemSpec;

/// Largest supported 1D rule; the three-term recurrence overflows beyond it.
pub const MAX_POINTS: usize = 512;

/// Point count of the default 1D rule used for single-agent problems.
pub const DEFAULT_POINTS: usize = 127;

/// Sparse-grid level used for multi-agent problems.
pub const DEFAULT_LEVEL: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RuleKind {
    GaussHermite { points: usize },
    SparseGrid { level: usize },
    Marginal { axis: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    dimension: usize,
    /// Row-major `len() x dimension` node coordinates.
    nodes: Vec<f64>,
    weights: Vec<f64>,
    kind: RuleKind,
}

impl QuadratureRule {
    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn kind(&self) -> RuleKind {
        self.kind
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn node(&self, s: usize) -> &[f64] {
        &self.nodes[s * self.dimension..(s + 1) * self.dimension]
    }

    pub fn nodes(&self) -> impl Iterator<Item = &[f64]> {
        self.nodes.chunks_exact(self.dimension)
    }

    /// Node coordinates of a one-dimensional rule.
    pub fn points_1d(&self) -> &[f64] {
        debug_assert_eq!(self.dimension, 1);
        &self.nodes
    }

    /// `sum_s w_s g(xi_s)`.
    pub fn integrate<F: FnMut(&[f64]) -> f64>(&self, mut g: F) -> f64 {
        self.nodes()
            .zip(&self.weights)
            .map(|(x, &w)| w * g(x))
            .sum()
    }

    /// Collapses the rule onto one coordinate. Exact for integrands that
    /// depend on that coordinate only.
    pub fn marginal(&self, axis: usize) -> Result<QuadratureRule> {
        if axis >= self.dimension {
            return Err(Error::DimensionMismatch {
                expected: axis + 1,
                found: self.dimension,
            });
        }
        if self.dimension == 1 {
            return Ok(self.clone());
        }
        let mut merged: BTreeMap<OrderedBits, f64> = BTreeMap::new();
        for (x, &w) in self.nodes().zip(&self.weights) {
            *merged.entry(OrderedBits::new(x[axis])).or_insert(0.0) += w;
        }
        let (nodes, weights) = merged.into_iter().map(|(k, w)| (k.value(), w)).unzip();
        Ok(QuadratureRule {
            dimension: 1,
            nodes,
            weights,
            kind: RuleKind::Marginal { axis },
        })
    }
}

/// Total order on finite floats keyed by value, with `-0.0 == 0.0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct OrderedBits(u64);

impl OrderedBits {
    fn new(x: f64) -> Self {
        let bits = (x + 0.0).to_bits();
        // flip so that integer order matches float order
        let key = if bits >> 63 == 1 { !bits } else { bits | (1 << 63) };
        OrderedBits(key)
    }

    fn value(self) -> f64 {
        let bits = if self.0 >> 63 == 1 {
            self.0 & !(1 << 63)
        } else {
            !self.0
        };
        f64::from_bits(bits)
    }
}

impl PartialOrd for OrderedBits {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrderedBits {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.cmp(&other.0)
    }
}

/// Orthonormal probabilists' Hermite values `(p_n(x), p_{n-1}(x), sum_{k<n} p_k(x)^2)`.
fn hermite_orthonormal(n: usize, x: f64) -> (f64, f64, f64) {
    let mut prev = 0.0;
    let mut cur = 1.0;
    let mut sum_sq = 0.0;
    for k in 0..n {
        sum_sq += cur * cur;
        let next = (x * cur - (k as f64).sqrt() * prev) / ((k + 1) as f64).sqrt();
        prev = cur;
        cur = next;
    }
    (cur, prev, sum_sq)
}

/// The `n`-point Gauss-Hermite rule for a standard normal weight.
///
/// Initial nodes come from the eigenvalues of the symmetric tridiagonal
/// Jacobi matrix; each node is then refined by Newton steps on the
/// orthonormal recurrence and weighted by `1 / sum_k p_k(x)^2`, which keeps
/// the tiny outer weights at full relative precision.
pub fn gauss_hermite_1d(n: usize) -> Result<QuadratureRule> {
    if n == 0 || n > MAX_POINTS {
        return Err(Error::InvalidConfig(format!(
            "Gauss-Hermite point count must be in 1..={MAX_POINTS}, got {n}"
        )));
    }
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = (k as f64).sqrt();
        jacobi[(k, k - 1)] = b;
        jacobi[(k - 1, k)] = b;
    }
    let mut x: Vec<f64> = SymmetricEigen::new(jacobi).eigenvalues.iter().copied().collect();
    x.sort_by(|a, b| a.total_cmp(b));

    for xi in x.iter_mut() {
        for _ in 0..8 {
            let (pn, pn1, _) = hermite_orthonormal(n, *xi);
            let step = pn / ((n as f64).sqrt() * pn1);
            *xi -= step;
            if step.abs() <= 1e-16 * xi.abs().max(1.0) {
                break;
            }
        }
    }
    // enforce exact symmetry about the origin
    for i in 0..n / 2 {
        let m = 0.5 * (x[n - 1 - i] - x[i]);
        x[i] = -m;
        x[n - 1 - i] = m;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }

    let mut w: Vec<f64> = x
        .iter()
        .map(|&xi| 1.0 / hermite_orthonormal(n, xi).2)
        .collect();
    for i in 0..n / 2 {
        let m = 0.5 * (w[i] + w[n - 1 - i]);
        w[i] = m;
        w[n - 1 - i] = m;
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|wi| *wi /= total);

    Ok(QuadratureRule {
        dimension: 1,
        nodes: x,
        weights: w,
        kind: RuleKind::GaussHermite { points: n },
    })
}

/// Point count of the 1D rule at sparse-grid level `l`.
pub fn points_at_level(level: usize) -> usize {
    (1usize << (level + 1)) - 1
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
}

/// Multi-indices `l` in `N^dim` with `lo <= |l| <= hi`.
fn multi_indices(dim: usize, lo: usize, hi: usize) -> Vec<Vec<usize>> {
    fn rec(dim: usize, budget: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == dim {
            out.push(prefix.clone());
            return;
        }
        for l in 0..=budget {
            prefix.push(l);
            rec(dim, budget - l, prefix, out);
            prefix.pop();
        }
    }
    let mut all = Vec::new();
    rec(dim, hi, &mut Vec::with_capacity(dim), &mut all);
    all.retain(|l| {
        let s: usize = l.iter().sum();
        s >= lo
    });
    all
}

/// Smolyak sparse grid of dimension `dimension` and level `level`.
///
/// `A(L, D) = sum_{L-D+1 <= |l| <= L} (-1)^(L-|l|) C(D-1, L-|l|) U^{l_1} x ... x U^{l_D}`
/// with 1D levels starting at zero. Weights may be negative for `D >= 2`.
pub fn sparse_grid(dimension: usize, level: usize) -> Result<QuadratureRule> {
    if dimension == 0 {
        return Err(Error::InvalidConfig("sparse grid dimension must be >= 1".into()));
    }
    if points_at_level(level) > MAX_POINTS {
        return Err(Error::InvalidConfig(format!(
            "sparse grid level {level} exceeds the largest supported 1D rule"
        )));
    }
    let rules: Vec<QuadratureRule> = (0..=level)
        .map(|l| gauss_hermite_1d(points_at_level(l)))
        .collect::<Result<_>>()?;

    let lo = (level + 1).saturating_sub(dimension);
    let mut acc: BTreeMap<Vec<OrderedBits>, f64> = BTreeMap::new();
    for idx in multi_indices(dimension, lo, level) {
        let s: usize = idx.iter().sum();
        let gap = level - s;
        let coeff = if gap % 2 == 0 { 1.0 } else { -1.0 } * binomial(dimension - 1, gap);
        if coeff == 0.0 {
            continue;
        }
        // tensor product of the selected 1D rules
        let mut partial: Vec<(Vec<OrderedBits>, f64)> = vec![(Vec::new(), coeff)];
        for &l in &idx {
            let r = &rules[l];
            let mut next = Vec::with_capacity(partial.len() * r.len());
            for (pt, w) in &partial {
                for (x, &wx) in r.points_1d().iter().zip(r.weights()) {
                    let mut p = pt.clone();
                    p.push(OrderedBits::new(*x));
                    next.push((p, w * wx));
                }
            }
            partial = next;
        }
        for (pt, w) in partial {
            *acc.entry(pt).or_insert(0.0) += w;
        }
    }
    let mut nodes = Vec::with_capacity(acc.len() * dimension);
    let mut weights = Vec::with_capacity(acc.len());
    for (pt, w) in acc {
        if w == 0.0 {
            continue;
        }
        nodes.extend(pt.iter().map(|b| b.value()));
        weights.push(w);
    }
    Ok(QuadratureRule {
        dimension,
        nodes,
        weights,
        kind: RuleKind::SparseGrid { level },
    })
}

/// Default noise rule for a problem with `agents` subsystems.
pub fn default_rule(agents: usize) -> Result<QuadratureRule> {
    if agents <= 1 {
        gauss_hermite_1d(DEFAULT_POINTS)
    } else {
        sparse_grid(agents, DEFAULT_LEVEL)
    }
}

/// Expectation of `f(theta, xi)` under the prior over types and the noise
/// rule. With `conditioning = Some((i, k))` agent `i`'s type is fixed to `k`
/// and the remaining types keep their prior.
pub fn expect<F>(
    f: F,
    problem: &ProblemSpec,
    rule: &QuadratureRule,
    conditioning: Option<(usize, usize)>,
) -> Result<f64>
where
    F: Fn(&[usize], &[f64]) -> f64,
{
    if rule.dimension() != problem.agent_count() {
        return Err(Error::DimensionMismatch {
            expected: problem.agent_count(),
            found: rule.dimension(),
        });
    }
    let norm = match conditioning {
        None => 1.0,
        Some((i, k)) => {
            let p = problem.agent(i)?.ty(i, k)?.prior_prob;
            if p == 0.0 {
                return Err(Error::ZeroProbabilityCondition {
                    agent: i,
                    type_index: k,
                });
            }
            p
        }
    };
    let mut total = 0.0;
    for (theta, p) in problem.type_assignments() {
        if let Some((i, k)) = conditioning {
            if theta[i] != k {
                continue;
            }
        }
        if p == 0.0 {
            continue;
        }
        total += p * rule.integrate(|xi| f(&theta, xi));
    }
    Ok(total / norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AgentTypeSpec, ValueSpec};
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_points_rejected() {
        assert!(gauss_hermite_1d(0).is_err());
    }

    #[test]
    fn normalization_and_variance() {
        for n in [1, 2, 5, 32, 127] {
            let r = gauss_hermite_1d(n).unwrap();
            assert_abs_diff_eq!(r.integrate(|_| 1.0), 1.0, epsilon = 1e-13);
            assert!(r.weights().iter().all(|&w| w > 0.0));
            if n >= 2 {
                assert_abs_diff_eq!(r.integrate(|x| x[0] * x[0]), 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn lognormal_mean() {
        let r = gauss_hermite_1d(8).unwrap();
        assert_abs_diff_eq!(
            r.integrate(|x| x[0].exp()),
            1.648_721_270_700_128_1,
            epsilon = 1e-8
        );
    }

    #[test]
    fn level_six_in_one_dimension_is_127_point_rule() {
        let sg = sparse_grid(1, 6).unwrap();
        let gh = gauss_hermite_1d(127).unwrap();
        assert_eq!(sg.len(), 127);
        for (a, b) in sg.weights().iter().zip(gh.weights()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn sparse_grid_moments() {
        for d in 1..=3 {
            let sg = sparse_grid(d, 3).unwrap();
            assert_abs_diff_eq!(sg.integrate(|_| 1.0), 1.0, epsilon = 1e-12);
        }
        let sg = sparse_grid(2, 6).unwrap();
        assert_abs_diff_eq!(sg.integrate(|x| x[0] * x[1]), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            sg.integrate(|x| x[0] * x[0] * x[1] * x[1]),
            1.0,
            epsilon = 1e-10
        );
    }

    #[test]
    fn marginal_collapses_exactly() {
        let sg = sparse_grid(2, 4).unwrap();
        let m = sg.marginal(1).unwrap();
        assert!(m.len() < sg.len());
        let f = |x: f64| (0.7 * x).sin() + x.powi(4);
        assert_abs_diff_eq!(
            m.integrate(|x| f(x[0])),
            sg.integrate(|x| f(x[1])),
            epsilon = 1e-12
        );
        assert!(sg.marginal(2).is_err());
    }

    fn two_type_problem() -> ProblemSpec {
        ProblemSpec::adverse_selection(
            vec![
                AgentTypeSpec::new(2.5, 0.4, 0.4).with_prior(0.5),
                AgentTypeSpec::new(1.5, 0.4, 0.4).with_prior(0.5),
            ],
            ValueSpec::rb(),
        )
    }

    #[test]
    fn expect_examples() {
        let p = two_type_problem();
        let r = default_rule(1).unwrap();
        assert_abs_diff_eq!(expect(|_, _| 1.0, &p, &r, None).unwrap(), 1.0, epsilon = 1e-13);
        assert_abs_diff_eq!(expect(|_, xi| xi[0], &p, &r, None).unwrap(), 0.0, epsilon = 1e-13);
        let kappa = |theta: &[usize], _: &[f64]| p.agents[0].types[theta[0]].kappa;
        assert_abs_diff_eq!(expect(kappa, &p, &r, None).unwrap(), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(expect(kappa, &p, &r, Some((0, 1))).unwrap(), 1.5, epsilon = 1e-12);
    }

    #[test]
    fn expect_rejects_bad_inputs() {
        let mut p = two_type_problem();
        let r2 = sparse_grid(2, 2).unwrap();
        assert!(matches!(
            expect(|_, _| 1.0, &p, &r2, None),
            Err(Error::DimensionMismatch { .. })
        ));
        p.agents[0].types[0].prior_prob = 0.0;
        p.agents[0].types[1].prior_prob = 1.0;
        let r = gauss_hermite_1d(4).unwrap();
        assert_eq!(
            expect(|_, _| 1.0, &p, &r, Some((0, 0))),
            Err(Error::ZeroProbabilityCondition {
                agent: 0,
                type_index: 0
            })
        );
    }

    #[test]
    fn ordered_bits_roundtrip() {
        for x in [-3.5, -0.0, 0.0, 1e-300, 2.25] {
            assert_eq!(OrderedBits::new(x).value(), x + 0.0);
        }
        assert!(OrderedBits::new(-1.0) < OrderedBits::new(0.5));
        assert!(OrderedBits::new(-2.0) < OrderedBits::new(-1.0));
    }
}
