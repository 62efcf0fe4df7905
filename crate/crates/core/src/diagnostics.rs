//! Numerical checks of the concentration estimates: condition report and
//! rate, decay-rate fits, Laplace sweeps and the auxiliary moment bounds.

use std::fmt::Write as _;

use crate::error::{require, Error, Result};
use crate::measure::{self, check_dim, log_weight_mean, Ensemble};
use crate::objective::Objective;
use crate::pseudo_inverse::{chi_run, ChiSolverParams, QuantileGrid};
use crate::series::{DiagnosticsSeries, SeriesField};

/// Values below this are treated as numerical floor and left out of fits.
pub const FIT_FLOOR: f64 = 1e-14;

/// A probability measure the verifiers can integrate against: either an
/// equal-weight ensemble or a one-dimensional quantile grid.
pub trait MeasureView {
    fn dim(&self) -> usize;
    /// `V = ½ ∫ |x - E|²`.
    fn variance(&self) -> f64;
    /// `∫ |x|²`.
    fn second_moment(&self) -> f64;
    /// Objective values at the sample points with their quadrature weights
    /// (`None` for equal weights).
    fn sample(&self, obj: &Objective) -> Result<(Vec<f64>, Option<Vec<f64>>)>;
}

impl MeasureView for Ensemble {
    fn dim(&self) -> usize {
        Ensemble::dim(self)
    }

    fn variance(&self) -> f64 {
        measure::variance(self)
    }

    fn second_moment(&self) -> f64 {
        measure::second_moment(self, 1).expect("p = 1 is valid")
    }

    fn sample(&self, obj: &Objective) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
        check_dim(obj.dim(), Ensemble::dim(self))?;
        let vals: Vec<f64> = self.rows().map(|x| obj.eval(x)).collect();
        finite(&vals)?;
        Ok((vals, None))
    }
}

impl MeasureView for QuantileGrid {
    fn dim(&self) -> usize {
        1
    }

    fn variance(&self) -> f64 {
        QuantileGrid::variance(self)
    }

    fn second_moment(&self) -> f64 {
        self.integrate(|c| c * c)
    }

    fn sample(&self, obj: &Objective) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
        check_dim(obj.dim(), 1)?;
        let vals: Vec<f64> = self.values().iter().map(|c| obj.eval(&[*c])).collect();
        finite(&vals)?;
        Ok((vals, Some(self.trapezoid_weights())))
    }
}

fn finite(vals: &[f64]) -> Result<()> {
    match vals.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFiniteObjective { index }),
        None => Ok(()),
    }
}

/// Quantities entering the variance-decay estimate `V(t) ≤ V(0) e^{-qt}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionReport {
    pub lambda: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub dim: usize,
    pub f_lower: f64,
    /// `‖e^{-αf}‖_{L¹(ρ₀)}`.
    pub b0: f64,
    pub log_b0: f64,
    /// `V(ρ₀)`.
    pub k: f64,
    /// `2α e^{-2αf̲}(c₀σ² + 2λc_f)`; `None` without `c₀`, `c_f`.
    pub b1: Option<f64>,
    /// Set when `b1` underflowed and was clamped to 0.
    pub b1_underflow: bool,
    pub q: f64,
    pub cond_b1: Option<bool>,
    pub cond_param: bool,
    pub cond_strong: bool,
    /// `α ≥ c₁`, when `c₁` is known.
    pub alpha_ge_c1: Option<bool>,
    pub metadata_complete: bool,
}

impl ConditionReport {
    /// All conditions needed for the decay bound hold.
    pub fn all_pass(&self) -> bool {
        self.metadata_complete
            && self.cond_b1 == Some(true)
            && self.cond_param
            && self.alpha_ge_c1 != Some(false)
    }

    /// Flat `key=value` block.
    pub fn to_kv(&self) -> String {
        let opt_f = |v: Option<f64>| v.map_or("unknown".to_string(), |x| format!("{x:.16e}"));
        let opt_b = |v: Option<bool>| v.map_or("unknown".to_string(), |x| x.to_string());
        let mut s = String::new();
        let _ = writeln!(s, "lambda={:.16e}", self.lambda);
        let _ = writeln!(s, "sigma={:.16e}", self.sigma);
        let _ = writeln!(s, "alpha={:.16e}", self.alpha);
        let _ = writeln!(s, "dim={}", self.dim);
        let _ = writeln!(s, "f_lower={:.16e}", self.f_lower);
        let _ = writeln!(s, "b0={:.16e}", self.b0);
        let _ = writeln!(s, "log_b0={:.16e}", self.log_b0);
        let _ = writeln!(s, "K={:.16e}", self.k);
        let _ = writeln!(s, "b1={}", opt_f(self.b1));
        let _ = writeln!(s, "b1_underflow={}", self.b1_underflow);
        let _ = writeln!(s, "q={:.16e}", self.q);
        let _ = writeln!(s, "cond_b1={}", opt_b(self.cond_b1));
        let _ = writeln!(s, "cond_param={}", self.cond_param);
        let _ = writeln!(s, "cond_strong={}", self.cond_strong);
        let _ = writeln!(s, "alpha_ge_c1={}", opt_b(self.alpha_ge_c1));
        let _ = writeln!(s, "metadata_complete={}", self.metadata_complete);
        s
    }
}

/// Evaluates the decay conditions and rate on the initial measure.
pub fn check_concentration_conditions<M: MeasureView + ?Sized>(
    initial: &M,
    obj: &Objective,
    lambda: f64,
    sigma: f64,
    alpha: f64,
) -> Result<ConditionReport> {
    require(lambda > 0.0, "lambda", "must be positive")?;
    require(sigma >= 0.0, "sigma", "must be nonnegative")?;
    require(
        alpha > 0.0 && alpha.is_finite(),
        "alpha",
        "must be positive",
    )?;
    let f_lower = obj
        .lower_bound()
        .ok_or(Error::MissingMetadata("lower bound f_lower"))?;
    let (vals, weights) = initial.sample(obj)?;
    let log_b0 = log_weight_mean(&vals, weights.as_deref(), alpha);
    let b0 = log_b0.exp();
    let k = initial.variance();
    let d = initial.dim() as f64;
    let s2 = sigma * sigma;

    // e^{-αf̲}/b0 ≤ 1 always; compute it in log form
    let ratio = (-alpha * f_lower - log_b0).exp();
    let q = 2.0 * (lambda - d * s2 * ratio);
    let e_low = (-alpha * f_lower).exp();
    let cond_param = 2.0 * lambda * b0 * b0 - k - 2.0 * d * s2 * b0 * e_low >= 0.0;
    let cond_strong = 2.0 * lambda * b0 * b0 - k - 2.0 * d * s2 * b0 >= 0.0;

    let c = obj.constants();
    let (b1, b1_underflow) = match (c.laplacian_c0, c.hessian_bound) {
        (Some(c0), Some(cf)) => {
            let prefactor = 2.0 * alpha * (c0 * s2 + 2.0 * lambda * cf);
            let v = prefactor * (-2.0 * alpha * f_lower).exp();
            (Some(v), v == 0.0 && prefactor > 0.0)
        }
        _ => (None, false),
    };
    let alpha_ge_c1 = c.laplacian_c1.map(|c1| alpha >= c1);
    Ok(ConditionReport {
        lambda,
        sigma,
        alpha,
        dim: initial.dim(),
        f_lower,
        b0,
        log_b0,
        k,
        b1,
        b1_underflow,
        q,
        cond_b1: b1.map(|b| b < 0.75),
        cond_param,
        cond_strong,
        alpha_ge_c1,
        metadata_complete: b1.is_some() && c.laplacian_c1.is_some(),
    })
}

/// Least-squares fit of `log v = intercept - rate_hat · t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    pub rate_hat: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub window: (f64, f64),
}

impl DecayFit {
    pub fn to_kv(&self, prefix: &str) -> String {
        format!(
            "{prefix}rate_hat={:.16e}\n{prefix}intercept={:.16e}\n{prefix}r_squared={:.16e}\n{prefix}window_start={:.16e}\n{prefix}window_end={:.16e}\n",
            self.rate_hat, self.intercept, self.r_squared, self.window.0, self.window.1
        )
    }
}

/// Fits the decay rate of `field` over `window` (whole series if `None`).
/// Samples after the field first drops below [`FIT_FLOOR`] are ignored.
pub fn fit_decay_rate(
    series: &DiagnosticsSeries,
    field: SeriesField,
    window: Option<(f64, f64)>,
) -> Result<DecayFit> {
    fit_points(&series.field(field), window)
}

/// [`fit_decay_rate`] on raw `(t, value)` samples.
pub fn fit_points(points: &[(f64, f64)], window: Option<(f64, f64)>) -> Result<DecayFit> {
    let (t0, t1) = window.unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
    let mut pts = Vec::new();
    for &(t, v) in points.iter().filter(|(t, _)| *t >= t0 && *t <= t1) {
        if v <= 0.0 || !v.is_finite() {
            return Err(Error::NonPositiveSample { t, value: v });
        }
        if v < FIT_FLOOR {
            break;
        }
        pts.push((t, v.ln()));
    }
    if pts.len() < 3 {
        return Err(Error::TooFewSamples(pts.len()));
    }
    let n = pts.len() as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ym = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - tm) * (p.0 - tm)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - tm) * (p.1 - ym)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - ym) * (p.1 - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * tm;
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        let ss_res: f64 = pts
            .iter()
            .map(|p| {
                let e = p.1 - (intercept + slope * p.0);
                e * e
            })
            .sum();
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    };
    Ok(DecayFit {
        rate_hat: -slope,
        intercept,
        r_squared,
        window: (pts[0].0, pts[pts.len() - 1].0),
    })
}

/// Time window from the first sample at or below `hi` to the last sample at
/// or above `lo`. `None` if the series never enters `[lo, hi]`.
pub fn value_window(points: &[(f64, f64)], lo: f64, hi: f64) -> Option<(f64, f64)> {
    let start = points.iter().find(|p| p.1 <= hi)?.0;
    let end = points.iter().rev().find(|p| p.1 >= lo)?.0;
    (start <= end).then_some((start, end))
}

/// One entry of a Laplace sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplacePoint {
    pub alpha: f64,
    pub value: f64,
    /// `value - min f` over the support of the measure.
    pub gap: f64,
}

/// Laplace functional `-(1/α) log ∫ e^{-αf}` over an increasing list of α.
pub fn laplace_sweep<M: MeasureView + ?Sized>(
    measure: &M,
    obj: &Objective,
    alphas: &[f64],
) -> Result<Vec<LaplacePoint>> {
    require(
        alphas.iter().all(|a| *a > 0.0 && a.is_finite()),
        "alphas",
        "must be positive",
    )?;
    require(
        alphas.windows(2).all(|w| w[0] < w[1]),
        "alphas",
        "must be strictly increasing",
    )?;
    let (vals, weights) = measure.sample(obj)?;
    let f_support = vals.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(alphas
        .iter()
        .map(|&alpha| {
            let value = -log_weight_mean(&vals, weights.as_deref(), alpha) / alpha;
            LaplacePoint {
                alpha,
                value,
                gap: value - f_support,
            }
        })
        .collect())
}

/// Outcome of checking `V(t_k) ≤ (1 + slack) V(0) e^{-q t_k}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayCheck {
    pub passed: bool,
    /// Largest `V(t_k) / (V(0) e^{-q t_k})` seen.
    pub worst_ratio: f64,
    pub worst_t: f64,
}

pub fn verify_variance_decay(
    series: &DiagnosticsSeries,
    report: &ConditionReport,
    slack: f64,
) -> DecayCheck {
    let pts = series.field(SeriesField::Variance);
    let v0 = pts.first().map_or(0.0, |p| p.1);
    let mut worst_ratio: f64 = 0.0;
    let mut worst_t = 0.0;
    let mut passed = true;
    for &(t, v) in &pts {
        let bound = v0 * (-report.q * t).exp();
        if v > (1.0 + slack) * bound {
            passed = false;
        }
        let ratio = if bound > 0.0 {
            v / bound
        } else if v > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        if ratio > worst_ratio {
            worst_ratio = ratio;
            worst_t = t;
        }
    }
    DecayCheck {
        passed,
        worst_ratio,
        worst_t,
    }
}

/// Result of an inequality check `lhs ≤ rhs`.
#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Pass {
        lhs: f64,
        rhs: f64,
    },
    Fail {
        lhs: f64,
        rhs: f64,
    },
    /// Metadata needed for the check is missing.
    Skipped(&'static str),
}

impl Verdict {
    fn compare(lhs: f64, rhs: f64) -> Self {
        // both sides are computed to a few ulps; allow for that
        if lhs <= rhs + 1e-12 * rhs.abs().max(1.0) {
            Verdict::Pass { lhs, rhs }
        } else {
            Verdict::Fail { lhs, rhs }
        }
    }

    pub fn passed(&self) -> bool {
        matches!(self, Verdict::Pass { .. })
    }

    pub fn skipped(&self) -> bool {
        matches!(self, Verdict::Skipped(_))
    }
}

/// `e^{-αf̲} / ‖e^{-αf}‖ ≤ exp(α c_u (1 + K))` with `K = ∫|x|²`, compared in
/// log form.
pub fn verify_jensen_bound(ensemble: &Ensemble, obj: &Objective, alpha: f64) -> Result<Verdict> {
    let (Some(f_lower), Some(c_u)) = (obj.lower_bound(), obj.constants().growth_upper) else {
        return Ok(Verdict::Skipped("f_lower and c_u required"));
    };
    let stats = measure::weighted_stats(ensemble, obj, alpha)?;
    let k = MeasureView::second_moment(ensemble);
    let lhs = -alpha * f_lower - stats.log_weight_norm;
    let rhs = alpha * c_u * (1.0 + k);
    Ok(Verdict::compare(lhs, rhs))
}

/// `∫|x|² dη^α ≤ b₁ + b₂ ∫|x|² dρ` with
/// `b₂ = 2(c_u/c_l)(1 + 1/(α c_l M²))`, `b₁ = M² + b₂`.
pub fn verify_moment_bound(ensemble: &Ensemble, obj: &Objective, alpha: f64) -> Result<Verdict> {
    let c = obj.constants();
    let (Some(c_u), Some(c_l), Some(m)) = (c.growth_upper, c.growth_lower, c.growth_radius) else {
        return Ok(Verdict::Skipped("c_u, c_l and M required"));
    };
    if alpha < 1.0 {
        return Ok(Verdict::Skipped("bound stated for alpha >= 1"));
    }
    let stats = measure::weighted_stats(ensemble, obj, alpha)?;
    let lhs: f64 = ensemble
        .rows()
        .zip(&stats.normalized_weights)
        .map(|(x, w)| w * x.iter().map(|v| v * v).sum::<f64>())
        .sum();
    let b2 = 2.0 * (c_u / c_l) * (1.0 + 1.0 / (alpha * c_l * m * m));
    let b1 = m * m + b2;
    let rhs = b1 + b2 * MeasureView::second_moment(ensemble);
    Ok(Verdict::compare(lhs, rhs))
}

/// Largest `|m_f[μ] - m_f[μ̂]| / W₂(μ, μ̂)` over one-dimensional pairs;
/// pairs at distance zero are skipped. `None` if every pair was skipped.
pub fn stability_ratio(
    pairs: &[(Ensemble, Ensemble)],
    obj: &Objective,
    alpha: f64,
) -> Result<Option<f64>> {
    let mut worst: Option<f64> = None;
    for (a, b) in pairs {
        let w2 = measure::wasserstein2_1d(a, b)?;
        if w2 == 0.0 {
            continue;
        }
        let ma = measure::weighted_stats(a, obj, alpha)?.m_f[0];
        let mb = measure::weighted_stats(b, obj, alpha)?.m_f[0];
        let r = (ma - mb).abs() / w2;
        worst = Some(worst.map_or(r, |w| w.max(r)));
    }
    Ok(worst)
}

/// Right-hand side of `E|X_t|² ≤ e^{b_N t} E|X_0|²`.
pub fn growth_bound(n: usize, dim: usize, lambda: f64, sigma: f64, t: f64, m0: f64) -> f64 {
    (crate::cbo_particle::second_moment_growth_constant(n, dim, lambda, sigma) * t).exp() * m0
}

/// Ratio of the largest to the smallest entry; used to judge whether a
/// moment bound is uniform across particle counts.
pub fn spread_ratio(values: &[f64]) -> f64 {
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    hi / lo
}

/// Terminal consensus point of a one-dimensional mean-field run per α.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaOutcome {
    pub alpha: f64,
    pub consensus: f64,
    /// Distance of the consensus point from the minimizer.
    pub error: f64,
}

/// Runs the quantile-grid solver once per α.
pub fn alpha_sweep_chi(
    initial: &QuantileGrid,
    obj: &Objective,
    params: &ChiSolverParams,
    alphas: &[f64],
) -> Result<Vec<AlphaOutcome>> {
    let target = obj
        .minimizer()
        .map(|x| x[0])
        .ok_or(Error::MissingMetadata("minimizer"))?;
    alphas
        .iter()
        .map(|&alpha| {
            let p = ChiSolverParams {
                alpha,
                ..params.clone()
            };
            let (grid, _) = chi_run(initial, obj, &p, usize::MAX)?;
            let consensus = grid.mean();
            Ok(AlphaOutcome {
                alpha,
                consensus,
                error: (consensus - target).abs(),
            })
        })
        .collect()
}

/// Each entry is at most `(1 + slack)` times its predecessor, or within
/// `abs_floor` of zero.
pub fn nonincreasing_within(values: &[f64], slack: f64, abs_floor: f64) -> bool {
    values
        .windows(2)
        .all(|w| w[1] <= w[0] * (1.0 + slack) || w[1] <= abs_floor)
}
