//! One-dimensional mean-field solver on the pseudo-inverse (quantile)
//! distribution `χ(η) = inf{x : F(x) > η}`, η ∈ [0, 1].
//!
//! The porous-media evolution `∂_t χ + λ(χ - m_f[χ]) = -∂_η(κ (∂_η χ)^{-p})`
//! with `κ = σ²/2 |χ - m_f|²` is discretised implicitly on a uniform η-grid
//! that includes both endpoints. The flux between nodes `j` and `j+1` is
//! `κ(χ_{j+1}) / (χ_{j+1} - χ_j)^p`; fluxes across the domain boundary are
//! zero and fluxes across gaps below `gap_floor` are dropped.
//!
//! Each time step is solved by Newton's method on the tridiagonal system,
//! with `m_f` lagged at the previous time level.

use crate::error::{require, Error, Result};
use crate::measure::{laplace_from_values, log_weight_mean};
use crate::objective::Objective;
use crate::series::{DiagnosticsSeries, Recorder, Snapshot, Termination};

/// Largest negative gap tolerated before a grid counts as non-monotone.
const MONOTONE_SLACK: f64 = 1e-10;

/// Values of a quantile function on the nodes `η_k = k/(K-1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileGrid {
    values: Vec<f64>,
}

impl QuantileGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        require(
            values.len() >= 2,
            "K",
            "quantile grid needs at least two nodes",
        )?;
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinitePosition { index });
        }
        check_monotone(&values)?;
        Ok(QuantileGrid { values })
    }

    /// Samples `quantile(η_k)` on `k` nodes.
    ///
    /// # Panics
    /// If `k < 2` or the function is not finite and nondecreasing on the nodes.
    pub fn from_fn(k: usize, quantile: impl Fn(f64) -> f64) -> Self {
        assert!(k >= 2);
        let h = 1.0 / (k - 1) as f64;
        Self::new((0..k).map(|i| quantile(i as f64 * h)).collect())
            .expect("quantile function must be finite and nondecreasing")
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn spacing(&self) -> f64 {
        1.0 / (self.values.len() - 1) as f64
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        let h = self.spacing();
        (0..self.values.len()).map(move |k| k as f64 * h)
    }

    /// Trapezoid weights of the nodes; they sum to one.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let k = self.values.len();
        let h = self.spacing();
        (0..k)
            .map(|i| if i == 0 || i == k - 1 { 0.5 * h } else { h })
            .collect()
    }

    /// `∫₀¹ g(χ(η)) dη` by the trapezoid rule.
    pub fn integrate(&self, g: impl Fn(f64) -> f64) -> f64 {
        self.values
            .iter()
            .zip(self.trapezoid_weights())
            .map(|(c, w)| w * g(*c))
            .sum()
    }

    pub fn mean(&self) -> f64 {
        self.integrate(|c| c)
    }

    /// `½ ∫ (χ - ∫χ)² dη`.
    pub fn variance(&self) -> f64 {
        let e = self.mean();
        0.5 * self.integrate(|c| (c - e) * (c - e))
    }

    pub fn support_width(&self) -> f64 {
        self.values[self.values.len() - 1] - self.values[0]
    }

    /// `∫ e^{-αf(χ)} dη`, in log form to survive large α.
    pub fn log_weight_norm(&self, obj: &Objective, alpha: f64) -> f64 {
        let vals: Vec<f64> = self.values.iter().map(|c| obj.eval(&[*c])).collect();
        log_weight_mean(&vals, Some(&self.trapezoid_weights()), alpha)
    }

    pub fn laplace_functional(&self, obj: &Objective, alpha: f64) -> f64 {
        let vals: Vec<f64> = self.values.iter().map(|c| obj.eval(&[*c])).collect();
        laplace_from_values(&vals, Some(&self.trapezoid_weights()), alpha)
    }

    /// Discrete `L²(0,1)` distance with weight `h`.
    pub fn l2_distance(&self, other: &QuantileGrid) -> f64 {
        l2_norm_diff(&self.values, &other.values, self.spacing())
    }
}

fn l2_norm_diff(a: &[f64], b: &[f64], h: f64) -> f64 {
    (h * a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()).sqrt()
}

fn check_monotone(values: &[f64]) -> Result<()> {
    for (k, w) in values.windows(2).enumerate() {
        let gap = w[1] - w[0];
        if gap < -MONOTONE_SLACK {
            return Err(Error::NotMonotone { index: k + 1, gap });
        }
    }
    Ok(())
}

/// Quantile function of Uniform[a, b] on `k` nodes.
pub fn chi_from_uniform(a: f64, b: f64, k: usize) -> Result<QuantileGrid> {
    require(a < b, "a", "uniform law needs a < b")?;
    require(k >= 2, "K", "quantile grid needs at least two nodes")?;
    let h = 1.0 / (k - 1) as f64;
    let mut values: Vec<f64> = (0..k).map(|i| a + (b - a) * (i as f64 * h)).collect();
    values[k - 1] = b;
    QuantileGrid::new(values)
}

/// Parameters of the implicit quantile-grid scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct ChiSolverParams {
    pub lambda: f64,
    pub sigma: f64,
    pub alpha: f64,
    /// Porous-media exponent `p ≥ 1`; `p = 1` is the linear-diffusion model.
    pub p_exponent: f64,
    pub dt: f64,
    /// Stop once `‖χ^{i+1} - χ^i‖_{L²} < tol`.
    pub tol: f64,
    /// Fluxes across gaps narrower than this are set to zero.
    pub gap_floor: f64,
    pub max_iters: usize,
    /// Newton stops when the update is below this in the discrete L² norm.
    pub iter_tol: f64,
    pub max_steps: usize,
}

impl Default for ChiSolverParams {
    fn default() -> Self {
        ChiSolverParams {
            lambda: 1.0,
            sigma: 0.8,
            alpha: 30.0,
            p_exponent: 1.0,
            dt: 2.5e-3,
            tol: 1e-6,
            gap_floor: 1e-12,
            max_iters: 50,
            iter_tol: 1e-12,
            max_steps: 40_000,
        }
    }
}

impl ChiSolverParams {
    pub fn validate(&self) -> Result<()> {
        require(self.lambda > 0.0, "lambda", "must be positive")?;
        require(self.sigma >= 0.0, "sigma", "must be nonnegative")?;
        require(self.alpha > 0.0, "alpha", "must be positive")?;
        require(self.p_exponent >= 1.0, "p", "must be at least 1")?;
        require(self.dt > 0.0, "dt", "must be positive")?;
        require(self.tol > 0.0, "tol", "must be positive")?;
        require(self.gap_floor > 0.0, "gap_floor", "must be positive")?;
        require(self.max_iters >= 1, "max_iters", "must be at least 1")?;
        require(self.iter_tol > 0.0, "iter_tol", "must be positive")?;
        Ok(())
    }
}

/// `m_f[χ] = ∫ χ e^{-αf(χ)} dη / ∫ e^{-αf(χ)} dη` by the trapezoid rule.
pub fn m_f_of_chi(grid: &QuantileGrid, obj: &Objective, alpha: f64) -> Result<f64> {
    require(
        obj.dim() == 1,
        "objective",
        "quantile grids need a one-dimensional objective",
    )?;
    require(alpha > 0.0, "alpha", "must be positive")?;
    let vals: Vec<f64> = grid.values.iter().map(|c| obj.eval(&[*c])).collect();
    if let Some(index) = vals.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteObjective { index });
    }
    let shift = vals
        .iter()
        .map(|f| -alpha * f)
        .fold(f64::NEG_INFINITY, f64::max);
    let (mut num, mut den) = (0.0, 0.0);
    for ((c, f), w) in grid.values.iter().zip(&vals).zip(grid.trapezoid_weights()) {
        let e = w * (-alpha * f - shift).exp();
        num += e * c;
        den += e;
    }
    let (lo, hi) = (grid.values[0], grid.values[grid.len() - 1]);
    Ok((num / den).clamp(lo, hi))
}

/// Flux `κ(χ_{j+1}) / gap^p` and its partial derivatives with respect to
/// `χ_j` and `χ_{j+1}`.
#[derive(Clone, Copy, Default)]
struct Flux {
    value: f64,
    d_left: f64,
    d_right: f64,
}

struct StepSystem<'a> {
    prev: &'a [f64],
    m: f64,
    half_sigma2: f64,
    p: f64,
    tau_lambda: f64,
    coupling: f64,
    gap_floor: f64,
}

impl StepSystem<'_> {
    fn flux(&self, left: f64, right: f64) -> Flux {
        let gap = right - left;
        if gap < self.gap_floor {
            return Flux::default();
        }
        let r = right - self.m;
        let kappa = self.half_sigma2 * r * r;
        let gp = gap.powf(self.p);
        let value = kappa / gp;
        let stiff = self.p * value / gap;
        Flux {
            value,
            d_left: stiff,
            d_right: 2.0 * self.half_sigma2 * r / gp - stiff,
        }
    }

    fn fluxes(&self, x: &[f64]) -> Vec<Flux> {
        x.windows(2).map(|w| self.flux(w[0], w[1])).collect()
    }

    fn residual(&self, x: &[f64], fl: &[Flux]) -> Vec<f64> {
        let k = x.len();
        (0..k)
            .map(|i| {
                let right = if i + 1 < k { fl[i].value } else { 0.0 };
                let left = if i > 0 { fl[i - 1].value } else { 0.0 };
                // grouped so a consensus state gives exactly zero
                (x[i] - self.prev[i])
                    + self.tau_lambda * (x[i] - self.m)
                    + self.coupling * (right - left)
            })
            .collect()
    }

    /// Rounding level of the residual: a few ulps of its largest terms.
    fn noise(&self, x: &[f64], fl: &[Flux], h: f64) -> f64 {
        let k = x.len();
        let mags: Vec<f64> = (0..k)
            .map(|i| {
                let right = if i + 1 < k { fl[i].value.abs() } else { 0.0 };
                let left = if i > 0 { fl[i - 1].value.abs() } else { 0.0 };
                x[i].abs() * (1.0 + self.tau_lambda)
                    + self.prev[i].abs()
                    + (self.tau_lambda * self.m).abs()
                    + self.coupling * (right + left)
            })
            .collect();
        16.0 * f64::EPSILON * norm(&mags, h)
    }

    /// Tridiagonal Jacobian as (sub, diag, super).
    fn jacobian(&self, fl: &[Flux], k: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let c = self.coupling;
        let mut sub = vec![0.0; k];
        let mut diag = vec![1.0 + self.tau_lambda; k];
        let mut sup = vec![0.0; k];
        for i in 0..k {
            if i + 1 < k {
                diag[i] += c * fl[i].d_left;
                sup[i] = c * fl[i].d_right;
            }
            if i > 0 {
                diag[i] -= c * fl[i - 1].d_right;
                sub[i] = -c * fl[i - 1].d_left;
            }
        }
        (sub, diag, sup)
    }
}

/// Thomas algorithm; `rhs` is overwritten with the solution.
fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &mut [f64]) -> bool {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut beta = diag[0];
    if beta == 0.0 || !beta.is_finite() {
        return false;
    }
    rhs[0] /= beta;
    for i in 1..n {
        c[i - 1] = sup[i - 1] / beta;
        beta = diag[i] - sub[i] * c[i - 1];
        if beta == 0.0 || !beta.is_finite() {
            return false;
        }
        rhs[i] = (rhs[i] - sub[i] * rhs[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
    true
}

fn norm(v: &[f64], h: f64) -> f64 {
    (h * v.iter().map(|x| x * x).sum::<f64>()).sqrt()
}

/// One implicit time step of the quantile-grid scheme.
pub fn implicit_chi_step(
    grid: &QuantileGrid,
    obj: &Objective,
    params: &ChiSolverParams,
) -> Result<QuantileGrid> {
    params.validate()?;
    let m = m_f_of_chi(grid, obj, params.alpha)?;
    implicit_step_with_mean(grid, m, params)
}

/// Halvings of τ tried when the Newton solve for a full step stalls.
const MAX_SUBDIVISIONS: u32 = 8;

fn implicit_step_with_mean(
    grid: &QuantileGrid,
    m: f64,
    params: &ChiSolverParams,
) -> Result<QuantileGrid> {
    subdivided_step(grid, m, params.dt, params, MAX_SUBDIVISIONS)
}

/// Solves one step of length `dt`; if Newton fails, retries as two half
/// steps with the same lagged mean.
fn subdivided_step(
    grid: &QuantileGrid,
    m: f64,
    dt: f64,
    params: &ChiSolverParams,
    depth: u32,
) -> Result<QuantileGrid> {
    match newton_step(grid, m, dt, params) {
        Err(Error::NoConvergence { .. }) if depth > 0 => {
            let half = subdivided_step(grid, m, 0.5 * dt, params, depth - 1)?;
            subdivided_step(&half, m, 0.5 * dt, params, depth - 1)
        }
        other => other,
    }
}

fn newton_step(
    grid: &QuantileGrid,
    m: f64,
    dt: f64,
    params: &ChiSolverParams,
) -> Result<QuantileGrid> {
    let k = grid.len();
    let h = grid.spacing();
    let sys = StepSystem {
        prev: &grid.values,
        m,
        half_sigma2: 0.5 * params.sigma * params.sigma,
        p: params.p_exponent,
        tau_lambda: dt * params.lambda,
        coupling: dt * h.powf(params.p_exponent - 1.0),
        gap_floor: params.gap_floor,
    };

    let mut x = grid.values.clone();
    let mut fl = sys.fluxes(&x);
    let mut res = sys.residual(&x, &fl);
    let mut res_norm = norm(&res, h);
    for _ in 0..params.max_iters {
        let (sub, diag, sup) = sys.jacobian(&fl, k);
        let mut delta: Vec<f64> = res.iter().map(|r| -r).collect();
        if !solve_tridiagonal(&sub, &diag, &sup, &mut delta) {
            return Err(Error::NoConvergence {
                iterations: 0,
                residual: res_norm,
            });
        }
        let step_norm = norm(&delta, h);

        // damp until the residual does not grow and no gap flips sign
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> = x.iter().zip(&delta).map(|(a, d)| a + scale * d).collect();
            let flips = trial.windows(2).any(|t| t[1] - t[0] < -MONOTONE_SLACK);
            if !flips {
                let tfl = sys.fluxes(&trial);
                let tres = sys.residual(&trial, &tfl);
                let tnorm = norm(&tres, h);
                if tnorm.is_finite() && (tnorm <= res_norm || scale * step_norm < params.iter_tol) {
                    accepted = Some((trial, tfl, tres, tnorm));
                    break;
                }
            }
            scale *= 0.5;
        }
        let Some((trial, tfl, tres, tnorm)) = accepted else {
            // no descent left; fine if the residual is already at rounding level
            if res_norm <= sys.noise(&x, &fl, h) {
                check_monotone(&x)?;
                return QuantileGrid::new(x);
            }
            break;
        };
        x = trial;
        fl = tfl;
        res = tres;
        res_norm = tnorm;
        if scale * step_norm < params.iter_tol {
            check_monotone(&x)?;
            return QuantileGrid::new(x);
        }
    }
    Err(Error::NoConvergence {
        iterations: params.max_iters,
        residual: res_norm,
    })
}

/// Analytic endpoint velocities `∂_t χ = -2λ(χ - m_f[χ])` at η = 0 and
/// η = 1, valid for `p > 1`.
pub fn boundary_velocity(
    grid: &QuantileGrid,
    obj: &Objective,
    params: &ChiSolverParams,
) -> Result<(f64, f64)> {
    require(params.p_exponent > 1.0, "p", "boundary law requires p > 1")?;
    let m = m_f_of_chi(grid, obj, params.alpha)?;
    let v = |c: f64| -2.0 * params.lambda * (c - m);
    Ok((v(grid.values[0]), v(grid.values[grid.len() - 1])))
}

fn grid_snapshot(
    grid: &QuantileGrid,
    obj: &Objective,
    alpha: f64,
    step: usize,
    t: f64,
) -> Result<Snapshot> {
    let m = m_f_of_chi(grid, obj, alpha)?;
    Ok(Snapshot {
        step,
        t,
        variance: grid.variance(),
        mean: vec![grid.mean()],
        m_f: vec![m],
        weight_norm: grid.log_weight_norm(obj, alpha).exp(),
        w2: obj
            .minimizer()
            .map(|x| crate::measure::w2_grid_to_dirac(grid, x[0])),
        support_width: Some(grid.support_width()),
    })
}

/// Steps the scheme until the update norm drops below `tol` or `max_steps`
/// is reached, recording every `record_every` steps (plus the first and last).
pub fn chi_run(
    grid: &QuantileGrid,
    obj: &Objective,
    params: &ChiSolverParams,
    record_every: usize,
) -> Result<(QuantileGrid, DiagnosticsSeries)> {
    chi_run_with(grid, obj, params, record_every, |_, _| {})
}

/// [`chi_run`] that also hands every recorded grid to `on_record`.
pub fn chi_run_with(
    grid: &QuantileGrid,
    obj: &Objective,
    params: &ChiSolverParams,
    record_every: usize,
    mut on_record: impl FnMut(usize, &QuantileGrid),
) -> Result<(QuantileGrid, DiagnosticsSeries)> {
    params.validate()?;
    require(
        obj.dim() == 1,
        "objective",
        "quantile grids need a one-dimensional objective",
    )?;
    let mut rec = Recorder::new(record_every);
    let mut current = grid.clone();
    rec.push(grid_snapshot(&current, obj, params.alpha, 0, 0.0)?);
    on_record(0, &current);

    let mut termination = Termination::MaxSteps;
    let mut steps = 0;
    for step in 1..=params.max_steps {
        let m = m_f_of_chi(&current, obj, params.alpha)?;
        let next = implicit_step_with_mean(&current, m, params)?;
        let update = next.l2_distance(&current);
        current = next;
        steps = step;
        let done = update < params.tol;
        if rec.due(step) || done || step == params.max_steps {
            rec.push(grid_snapshot(
                &current,
                obj,
                params.alpha,
                step,
                step as f64 * params.dt,
            )?);
            on_record(step, &current);
        }
        if done {
            termination = Termination::Tolerance;
            break;
        }
    }
    Ok((current, rec.finish(termination, steps)))
}
