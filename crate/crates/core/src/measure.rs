//! Empirical measures and the functionals evaluated on them.
//!
//! All exponential weights `e^{-αf}` go through a max-shift before
//! exponentiation: at α=30 the raw weights of benchmark values underflow,
//! while every ratio of weights is shift invariant.

use crate::error::{Error, Result};
use crate::objective::Objective;
use crate::pseudo_inverse::QuantileGrid;

/// `N` particle positions in `R^d`, stored row-major. Each particle carries
/// mass `1/N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    positions: Vec<f64>,
    dim: usize,
}

impl Ensemble {
    pub fn new(positions: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter {
                name: "dim",
                reason: "must be at least 1".into(),
            });
        }
        if positions.is_empty() {
            return Err(Error::EmptyEnsemble);
        }
        if !positions.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: positions.len() % dim,
            });
        }
        if let Some(k) = positions.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinitePosition { index: k / dim });
        }
        Ok(Ensemble { positions, dim })
    }

    /// One-dimensional ensemble from scalar samples.
    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        Self::new(values.to_vec(), 1)
    }

    pub fn from_points<P: AsRef<[f64]>>(points: &[P]) -> Result<Self> {
        let dim = points.first().map(|p| p.as_ref().len()).unwrap_or(1);
        let mut buf = Vec::with_capacity(points.len() * dim);
        for p in points {
            let p = p.as_ref();
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: p.len(),
                });
            }
            buf.extend_from_slice(p);
        }
        Self::new(buf, dim)
    }

    /// `n` copies of a single point.
    pub fn consensus(point: &[f64], n: usize) -> Result<Self> {
        Self::new(point.repeat(n), point.len())
    }

    pub(crate) fn from_raw_unchecked(positions: Vec<f64>, dim: usize) -> Self {
        Ensemble { positions, dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.positions.len() / self.dim
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn into_positions(self) -> Vec<f64> {
        self.positions
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.positions.chunks_exact(self.dim)
    }

    /// Adds `offset` to every particle.
    pub fn translated(&self, offset: &[f64]) -> Result<Self> {
        check_dim(self.dim, offset.len())?;
        let positions = self
            .rows()
            .flat_map(|x| x.iter().zip(offset).map(|(a, b)| a + b))
            .collect();
        Self::new(positions, self.dim)
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

/// Moments of the α-weighted measure `η^α = e^{-αf} ρ / ‖e^{-αf}‖_{L¹(ρ)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedStats {
    /// Weighted mean `m_f[ρ]`.
    pub m_f: Vec<f64>,
    /// `‖e^{-αf}‖_{L¹(ρ)}`, the plain mean of the weights. May underflow to 0
    /// for large α; `log_weight_norm` stays exact.
    pub weight_norm: f64,
    pub log_weight_norm: f64,
    /// Weights normalised to sum to one.
    pub normalized_weights: Vec<f64>,
    pub alpha: f64,
}

/// Log-sum-exp of `-α f_i`, returned as `(max, Σ e^{-α f_i - max})`.
fn shifted_exponentials(values: &[f64], alpha: f64) -> (f64, Vec<f64>) {
    let shift = values
        .iter()
        .map(|f| -alpha * f)
        .fold(f64::NEG_INFINITY, f64::max);
    let w = values.iter().map(|f| (-alpha * f - shift).exp()).collect();
    (shift, w)
}

fn objective_values(ensemble: &Ensemble, obj: &Objective) -> Result<Vec<f64>> {
    check_dim(obj.dim(), ensemble.dim())?;
    let vals: Vec<f64> = ensemble.rows().map(|x| obj.eval(x)).collect();
    if let Some(index) = vals.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteObjective { index });
    }
    Ok(vals)
}

fn check_alpha(alpha: f64) -> Result<()> {
    crate::error::require(
        alpha > 0.0 && alpha.is_finite(),
        "alpha",
        "must be positive",
    )
}

/// Weighted mean and weight statistics of the ensemble.
pub fn weighted_stats(ensemble: &Ensemble, obj: &Objective, alpha: f64) -> Result<WeightedStats> {
    check_alpha(alpha)?;
    let vals = objective_values(ensemble, obj)?;
    Ok(weighted_stats_from_values(ensemble, &vals, alpha))
}

/// Same as [`weighted_stats`] with the objective values already computed.
pub(crate) fn weighted_stats_from_values(
    ensemble: &Ensemble,
    values: &[f64],
    alpha: f64,
) -> WeightedStats {
    let d = ensemble.dim();
    let n = ensemble.count();
    let (shift, w) = shifted_exponentials(values, alpha);
    let total: f64 = w.iter().sum();
    let mut m_f = vec![0.0; d];
    for (x, wi) in ensemble.rows().zip(&w) {
        for (m, xk) in m_f.iter_mut().zip(x) {
            *m += wi * xk;
        }
    }
    m_f.iter_mut().for_each(|m| *m /= total);
    // rounding can push the average a hair outside the hull
    for (k, m) in m_f.iter_mut().enumerate() {
        let (lo, hi) = ensemble
            .rows()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
                (lo.min(x[k]), hi.max(x[k]))
            });
        *m = m.clamp(lo, hi);
    }
    let log_weight_norm = shift + (total / n as f64).ln();
    WeightedStats {
        m_f,
        weight_norm: log_weight_norm.exp(),
        log_weight_norm,
        normalized_weights: w.iter().map(|wi| wi / total).collect(),
        alpha,
    }
}

/// `E(ρ)`, the plain mean.
pub fn mean(ensemble: &Ensemble) -> Vec<f64> {
    // accumulate offsets from the first particle so a consensus state has
    // exactly its common position as mean
    let n = ensemble.count() as f64;
    let x0 = ensemble.row(0);
    let mut e = vec![0.0; ensemble.dim()];
    for x in ensemble.rows() {
        for ((a, b), c) in e.iter_mut().zip(x).zip(x0) {
            *a += b - c;
        }
    }
    e.iter_mut().zip(x0).for_each(|(a, c)| *a = c + *a / n);
    e
}

/// `V(ρ) = ½ ∫ |x - E(ρ)|² dρ`.
pub fn variance(ensemble: &Ensemble) -> f64 {
    let e = mean(ensemble);
    let n = ensemble.count() as f64;
    0.5 * ensemble.rows().map(|x| sq_dist(x, &e)).sum::<f64>() / n
}

/// `∫ |x|^{2p} dρ`.
pub fn second_moment(ensemble: &Ensemble, p: u32) -> Result<f64> {
    crate::error::require(p >= 1, "p", "must be at least 1")?;
    let n = ensemble.count() as f64;
    Ok(ensemble
        .rows()
        .map(|x| x.iter().map(|v| v * v).sum::<f64>().powi(p as i32))
        .sum::<f64>()
        / n)
}

/// `-(1/α) log ∫ e^{-αf} dρ`, which lies between the smallest and largest
/// objective value on the ensemble and tends to the smallest as α grows.
pub fn laplace_functional(ensemble: &Ensemble, obj: &Objective, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let vals = objective_values(ensemble, obj)?;
    Ok(laplace_from_values(&vals, None, alpha))
}

/// Laplace functional of a weighted sample. `weights` default to uniform and
/// must sum to one.
pub(crate) fn laplace_from_values(values: &[f64], weights: Option<&[f64]>, alpha: f64) -> f64 {
    -log_weight_mean(values, weights, alpha) / alpha
}

/// `log ∫ e^{-αf} dρ` for a weighted sample, computed with a max-shift.
pub(crate) fn log_weight_mean(values: &[f64], weights: Option<&[f64]>, alpha: f64) -> f64 {
    let (shift, w) = shifted_exponentials(values, alpha);
    let s: f64 = match weights {
        Some(q) => w.iter().zip(q).map(|(a, b)| a * b).sum(),
        None => w.iter().sum::<f64>() / values.len() as f64,
    };
    shift + s.ln()
}

/// Exact W₂ between two equal-size one-dimensional empirical measures via
/// the monotone (sorted) coupling.
pub fn wasserstein2_1d(a: &Ensemble, b: &Ensemble) -> Result<f64> {
    check_dim(1, a.dim())?;
    check_dim(1, b.dim())?;
    if a.count() != b.count() {
        return Err(Error::UnequalCounts {
            left: a.count(),
            right: b.count(),
        });
    }
    let mut xs = a.positions().to_vec();
    let mut ys = b.positions().to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let s: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((s / xs.len() as f64).sqrt())
}

/// W₂ between the ensemble and the Dirac mass at `target`.
pub fn w2_to_dirac(ensemble: &Ensemble, target: &[f64]) -> Result<f64> {
    check_dim(ensemble.dim(), target.len())?;
    let n = ensemble.count() as f64;
    Ok((ensemble.rows().map(|x| sq_dist(x, target)).sum::<f64>() / n).sqrt())
}

/// W₂ between the measure encoded by a quantile grid and `δ_target`:
/// `(∫₀¹ |χ(η) - target|² dη)^{1/2}` by the trapezoid rule.
pub fn w2_grid_to_dirac(grid: &QuantileGrid, target: f64) -> f64 {
    grid.integrate(|c| (c - target) * (c - target))
        .max(0.0)
        .sqrt()
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{make_quadratic, Objective};
    use itertools::Itertools;
    use proptest::prelude::*;

    fn linear() -> Objective {
        Objective::custom("linear", 1, |x| x[0]).unwrap()
    }

    fn square() -> Objective {
        Objective::custom("square", 1, |x| x[0] * x[0]).unwrap()
    }

    fn ens(v: &[f64]) -> Ensemble {
        Ensemble::from_scalars(v).unwrap()
    }

    #[test]
    fn ensemble_validation() {
        assert_eq!(Ensemble::new(vec![], 1), Err(Error::EmptyEnsemble));
        assert!(matches!(
            Ensemble::new(vec![0.0, f64::NAN], 1),
            Err(Error::NonFinitePosition { index: 1 })
        ));
        assert!(Ensemble::new(vec![0.0, 1.0, 2.0], 2).is_err());
        let e = Ensemble::from_points(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(e.count(), 2);
        assert_eq!(e.row(1), &[3.0, 4.0]);
    }

    #[test]
    fn single_particle_mean_is_itself() {
        let e = Ensemble::from_points(&[[0.3, -1.7]]).unwrap();
        let q = make_quadratic(2, 1.0).unwrap();
        let s = weighted_stats(&e, &q, 5.0).unwrap();
        assert_eq!(s.m_f, vec![0.3, -1.7]);
        assert_eq!(s.normalized_weights, vec![1.0]);
    }

    #[test]
    fn symmetric_pair_has_zero_weighted_mean() {
        for alpha in [0.1, 1.0, 30.0, 1e4] {
            let s = weighted_stats(&ens(&[-1.0, 1.0]), &square(), alpha).unwrap();
            assert_eq!(s.m_f, vec![0.0]);
        }
    }

    #[test]
    fn two_point_weighted_mean() {
        let s = weighted_stats(&ens(&[0.0, 1.0]), &linear(), 1.0).unwrap();
        assert!((s.m_f[0] - 0.268_941_421_369_995_12).abs() < 1e-15);
        assert!((s.normalized_weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(s.weight_norm > 0.0);
    }

    #[test]
    fn weighted_stats_reports_bad_particle() {
        let f = Objective::custom("bad", 1, |x| if x[0] > 0.5 { f64::NAN } else { 0.0 }).unwrap();
        assert_eq!(
            weighted_stats(&ens(&[0.0, 1.0]), &f, 1.0),
            Err(Error::NonFiniteObjective { index: 1 })
        );
        assert!(weighted_stats(&ens(&[0.0]), &f, 0.0).is_err());
    }

    #[test]
    fn large_alpha_does_not_underflow_mean() {
        let q = make_quadratic(1, 20.0).unwrap();
        let s = weighted_stats(&ens(&[0.5, 1.0, 2.0]), &q, 100.0).unwrap();
        assert_eq!(s.weight_norm, 0.0);
        assert!(s.log_weight_norm.is_finite());
        assert!((s.m_f[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn variance_examples() {
        assert_eq!(variance(&ens(&[4.2])), 0.0);
        let e = ens(&[-1.0, 1.0]);
        assert_eq!(mean(&e), vec![0.0]);
        assert_eq!(variance(&e), 0.5);
    }

    #[test]
    fn moment_examples() {
        assert_eq!(second_moment(&ens(&[0.0]), 1).unwrap(), 0.0);
        assert_eq!(second_moment(&ens(&[1.0, -1.0]), 2).unwrap(), 1.0);
        assert_eq!(second_moment(&ens(&[2.0]), 1).unwrap(), 4.0);
        assert!(second_moment(&ens(&[2.0]), 0).is_err());
    }

    #[test]
    fn laplace_examples() {
        let c = Objective::custom("const", 1, |_| 2.5).unwrap();
        for a in [0.5, 3.0, 1e3] {
            assert!(
                (laplace_functional(&ens(&[-1.0, 0.0, 4.0]), &c, a).unwrap() - 2.5).abs() < 1e-14
            );
        }
        let e = ens(&[0.0, 1.0]);
        let v = laplace_functional(&e, &linear(), 1.0).unwrap();
        assert!((v - 0.379_885_493_041_722_48).abs() < 1e-15);
        let v = laplace_functional(&e, &linear(), 1e6).unwrap();
        assert!(v.abs() < 1e-4);
    }

    #[test]
    fn w2_examples() {
        assert_eq!(
            wasserstein2_1d(&ens(&[0.3, 1.0]), &ens(&[1.0, 0.3])).unwrap(),
            0.0
        );
        assert_eq!(wasserstein2_1d(&ens(&[0.0]), &ens(&[1.0])).unwrap(), 1.0);
        assert_eq!(
            wasserstein2_1d(&ens(&[0.0, 2.0]), &ens(&[3.0, 1.0])).unwrap(),
            1.0
        );
        assert!(matches!(
            wasserstein2_1d(&ens(&[0.0]), &ens(&[1.0, 2.0])),
            Err(Error::UnequalCounts { .. })
        ));
        assert_eq!(w2_to_dirac(&ens(&[1.0, 1.0]), &[1.0]).unwrap(), 0.0);
        assert_eq!(w2_to_dirac(&ens(&[0.0, 2.0]), &[1.0]).unwrap(), 1.0);
        let e = ens(&[0.1, -0.7, 2.2]);
        let d1 = w2_to_dirac(&e, &[0.4]).unwrap();
        let d2 = wasserstein2_1d(&e, &ens(&[0.4, 0.4, 0.4])).unwrap();
        assert!((d1 - d2).abs() < 1e-15);
    }

    #[test]
    fn grid_w2_examples() {
        let g = QuantileGrid::new(vec![0.7; 11]).unwrap();
        assert_eq!(w2_grid_to_dirac(&g, 0.7), 0.0);
        let g = QuantileGrid::from_fn(201, |eta| eta);
        let v = w2_grid_to_dirac(&g, 0.0);
        // trapezoid error on ∫η² is h²/6
        assert!((v - (1.0f64 / 3.0).sqrt()).abs() < 1e-5);
        let shifted = QuantileGrid::from_fn(201, |eta| eta + 2.0);
        assert!((w2_grid_to_dirac(&shifted, 2.0) - v).abs() < 1e-12);
    }

    fn brute_force_w2(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len();
        let best = (0..n)
            .permutations(n)
            .map(|perm| {
                perm.iter()
                    .enumerate()
                    .map(|(i, &j)| (a[i] - b[j]).powi(2))
                    .sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min);
        (best / n as f64).sqrt()
    }

    #[test]
    fn w2_two_point_example_matches_brute_force() {
        assert_eq!(brute_force_w2(&[0.0, 2.0], &[1.0, 3.0]), 1.0);
    }

    proptest! {
        #[test]
        fn mean_invariant_under_objective_shift(
            xs in prop::collection::vec(-5.0f64..5.0, 1..40),
            c in -50.0f64..50.0,
            alpha in 0.1f64..40.0,
        ) {
            let e = ens(&xs);
            let f = Objective::custom("sq", 1, |x| (x[0] - 0.3).powi(2)).unwrap();
            let g = f.with_shift(c);
            let a = weighted_stats(&e, &f, alpha).unwrap();
            let b = weighted_stats(&e, &g, alpha).unwrap();
            prop_assert!((a.m_f[0] - b.m_f[0]).abs() <= 1e-12 * (1.0 + a.m_f[0].abs()));
            for (wa, wb) in a.normalized_weights.iter().zip(&b.normalized_weights) {
                prop_assert!((wa - wb).abs() <= 1e-12);
            }
            prop_assert!((b.log_weight_norm - (a.log_weight_norm - alpha * c)).abs() < 1e-9);
        }

        #[test]
        fn weighted_mean_in_convex_hull(
            pts in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..40),
            alpha in 0.1f64..100.0,
        ) {
            let pts: Vec<[f64; 2]> = pts.into_iter().map(|(a, b)| [a, b]).collect();
            let e = Ensemble::from_points(&pts).unwrap();
            let q = crate::objective::make_ackley(2, 1.0).unwrap();
            let s = weighted_stats(&e, &q, alpha).unwrap();
            for k in 0..2 {
                let lo = pts.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min);
                let hi = pts.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(s.m_f[k] >= lo && s.m_f[k] <= hi);
            }
            prop_assert!((s.normalized_weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn laplace_nonincreasing_in_alpha(xs in prop::collection::vec(-4.0f64..4.0, 1..30)) {
            let e = ens(&xs);
            let q = crate::objective::make_ackley(1, 1.0).unwrap();
            let vals: Vec<f64> = xs.iter().map(|x| q.eval(&[*x])).collect();
            let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut prev = f64::INFINITY;
            for k in 0..40 {
                let alpha = 0.05 * 1.4f64.powi(k);
                let v = laplace_functional(&e, &q, alpha).unwrap();
                prop_assert!(v <= prev + 1e-12);
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
                prev = v;
            }
        }

        #[test]
        fn w2_matches_permutation_search(
            pairs in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..=6),
        ) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let w = wasserstein2_1d(&ens(&a), &ens(&b)).unwrap();
            prop_assert!((w - brute_force_w2(&a, &b)).abs() < 1e-12);
        }

        #[test]
        fn variance_translation_invariant(
            xs in prop::collection::vec(-5.0f64..5.0, 1..30),
            c in -10.0f64..10.0,
        ) {
            let e = ens(&xs);
            let t = e.translated(&[c]).unwrap();
            prop_assert!((variance(&e) - variance(&t)).abs() < 1e-10);
            prop_assert!(variance(&e) >= 0.0);
        }
    }
}
