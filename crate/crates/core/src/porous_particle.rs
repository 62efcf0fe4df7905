//! Deterministic mollified particle scheme for the porous-media variant of
//! the mean-field equation:
//!
//! ```text
//! dX_i/dt = -λ (X_i - m) + (σ/N) Σ_j ∇φ_ε(X_i - X_j) [ |X_j - m|^{2p} + |X_i - m|^{2p} ]
//! ```
//!
//! integrated with explicit Euler. The interaction sum costs O(N²) per step;
//! rows are evaluated in parallel but each row is summed in index order, so
//! results do not depend on the thread count.

use rayon::prelude::*;

use crate::cbo_particle::{heaviside, particle_snapshot};
use crate::error::{require, Error, Result};
use crate::measure::{check_dim, sq_dist, weighted_stats_from_values, Ensemble, WeightedStats};
use crate::objective::Objective;
use crate::quadrature::adaptive_simpson;
use crate::series::{DiagnosticsSeries, Recorder, Termination};

/// Bump kernel `φ_ε(x) = ε^{-d} φ(x/ε)`, `φ(y) = exp(1/(|y|²-1)) / Z_d` on
/// the open unit ball.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mollifier {
    eps: f64,
    dim: usize,
    z_norm: f64,
}

fn bump(r2: f64) -> f64 {
    if r2 < 1.0 {
        (1.0 / (r2 - 1.0)).exp()
    } else {
        0.0
    }
}

/// `Z_d = |S^{d-1}| ∫₀¹ r^{d-1} exp(1/(r²-1)) dr`.
fn normalizing_constant(dim: usize) -> f64 {
    let radial = adaptive_simpson(|r| r.powi(dim as i32 - 1) * bump(r * r), 0.0, 1.0, 1e-14);
    let half_d = dim as f64 / 2.0;
    let sphere = 2.0 * std::f64::consts::PI.powf(half_d) / libm::tgamma(half_d);
    sphere * radial
}

impl Mollifier {
    pub fn new(eps: f64, dim: usize) -> Result<Self> {
        require(
            eps > 0.0 && eps.is_finite(),
            "mollifier_eps",
            "must be positive",
        )?;
        require(dim >= 1, "dim", "must be at least 1")?;
        Ok(Mollifier {
            eps,
            dim,
            z_norm: normalizing_constant(dim),
        })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn z_norm(&self) -> f64 {
        self.z_norm
    }

    fn scale(&self) -> f64 {
        1.0 / (self.z_norm * self.eps.powi(self.dim as i32))
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let r2 = x.iter().map(|v| v * v).sum::<f64>() / (self.eps * self.eps);
        self.scale() * bump(r2)
    }

    /// Gradient written into `out`; zero outside the support.
    pub fn grad_into(&self, x: &[f64], out: &mut [f64]) {
        let inv_eps2 = 1.0 / (self.eps * self.eps);
        let r2 = x.iter().map(|v| v * v).sum::<f64>() * inv_eps2;
        if r2 >= 1.0 {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        let denom = r2 - 1.0;
        // ∇_x φ(x/ε) = φ · (-2 x/ε²) / (r² - 1)²
        let c = -2.0 * self.scale() * (1.0 / denom).exp() * inv_eps2 / (denom * denom);
        for (o, v) in out.iter_mut().zip(x) {
            *o = c * v;
        }
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        self.grad_into(x, &mut g);
        g
    }
}

/// `mollifier_value` / `mollifier_grad` as free functions.
pub fn mollifier_value(m: &Mollifier, x: &[f64]) -> f64 {
    m.value(x)
}

pub fn mollifier_grad(m: &Mollifier, x: &[f64]) -> Vec<f64> {
    m.grad(x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PorousParams {
    pub lambda: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub dt: f64,
    pub p_exponent: f64,
    pub mollifier_eps: f64,
    /// Width of the drift gate; 0 disables it.
    pub heaviside_eps: f64,
    pub max_steps: usize,
    pub stop_tol: f64,
}

impl Default for PorousParams {
    fn default() -> Self {
        PorousParams {
            lambda: 1.0,
            sigma: 0.8,
            alpha: 30.0,
            dt: 2.5e-3,
            p_exponent: 2.0,
            mollifier_eps: 0.1,
            heaviside_eps: 0.0,
            max_steps: 4000,
            stop_tol: 1e-8,
        }
    }
}

impl PorousParams {
    pub fn validate(&self) -> Result<()> {
        require(
            self.lambda > 0.0 && self.lambda.is_finite(),
            "lambda",
            "must be positive",
        )?;
        require(
            self.sigma >= 0.0 && self.sigma.is_finite(),
            "sigma",
            "must be nonnegative",
        )?;
        require(
            self.alpha > 0.0 && self.alpha.is_finite(),
            "alpha",
            "must be positive",
        )?;
        require(
            self.dt > 0.0 && self.dt.is_finite(),
            "dt",
            "must be positive",
        )?;
        require(self.p_exponent >= 1.0, "p", "must be at least 1")?;
        require(
            self.mollifier_eps > 0.0,
            "mollifier_eps",
            "must be positive",
        )?;
        require(
            self.heaviside_eps >= 0.0,
            "heaviside_eps",
            "must be nonnegative",
        )?;
        require(self.stop_tol >= 0.0, "stop_tol", "must be nonnegative")?;
        Ok(())
    }
}

struct Parts {
    /// Drift multiplier `λ H_ε(f(X_i) - f(m))` per particle.
    drift: Vec<f64>,
    /// Interaction term per coordinate.
    interaction: Vec<f64>,
    stats: WeightedStats,
}

fn parts(
    ensemble: &Ensemble,
    obj: &Objective,
    params: &PorousParams,
    moll: &Mollifier,
) -> Result<Parts> {
    check_dim(obj.dim(), ensemble.dim())?;
    check_dim(moll.dim(), ensemble.dim())?;
    let d = ensemble.dim();
    let n = ensemble.count();
    let vals: Vec<f64> = ensemble.rows().map(|x| obj.eval(x)).collect();
    if let Some(index) = vals.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteObjective { index });
    }
    let stats = weighted_stats_from_values(ensemble, &vals, params.alpha);
    let m = &stats.m_f;

    let drift: Vec<f64> = if params.heaviside_eps > 0.0 {
        let fm = obj.eval(m);
        vals.iter()
            .map(|f| params.lambda * heaviside(f - fm, params.heaviside_eps))
            .collect()
    } else {
        vec![params.lambda; n]
    };

    let pos = ensemble.positions();
    let dev: Vec<f64> = ensemble
        .rows()
        .map(|x| sq_dist(x, m).powf(params.p_exponent))
        .collect();
    let eps2 = moll.eps() * moll.eps();
    let coef = params.sigma / n as f64;
    let mut interaction = vec![0.0; pos.len()];
    if params.sigma > 0.0 {
        interaction
            .par_chunks_mut(d)
            .enumerate()
            .for_each(|(i, out)| {
                let xi = &pos[i * d..(i + 1) * d];
                let mut diff = vec![0.0; d];
                let mut g = vec![0.0; d];
                for (j, xj) in pos.chunks_exact(d).enumerate() {
                    if j == i {
                        continue;
                    }
                    let mut r2 = 0.0;
                    for k in 0..d {
                        diff[k] = xi[k] - xj[k];
                        r2 += diff[k] * diff[k];
                    }
                    if r2 >= eps2 {
                        continue;
                    }
                    moll.grad_into(&diff, &mut g);
                    let w = dev[j] + dev[i];
                    for k in 0..d {
                        out[k] += g[k] * w;
                    }
                }
                out.iter_mut().for_each(|o| *o *= coef);
            });
    }
    Ok(Parts {
        drift,
        interaction,
        stats,
    })
}

/// Particle velocities of the mollified porous-media scheme.
pub fn porous_rhs(
    ensemble: &Ensemble,
    obj: &Objective,
    params: &PorousParams,
    moll: &Mollifier,
) -> Result<Vec<f64>> {
    params.validate()?;
    let p = parts(ensemble, obj, params, moll)?;
    let d = ensemble.dim();
    let m = &p.stats.m_f;
    let mut v = Vec::with_capacity(p.interaction.len());
    for (i, x) in ensemble.rows().enumerate() {
        for k in 0..d {
            let vk = -p.drift[i] * (x[k] - m[k]) + p.interaction[i * d + k];
            if !vk.is_finite() {
                return Err(Error::Unstable { step: 0, index: i });
            }
            v.push(vk);
        }
    }
    Ok(v)
}

fn advance(ensemble: &Ensemble, p: &Parts, dt: f64, step: usize) -> Result<Ensemble> {
    let d = ensemble.dim();
    let m = &p.stats.m_f;
    let mut out = Vec::with_capacity(p.interaction.len());
    for (i, x) in ensemble.rows().enumerate() {
        let drift = p.drift[i] * dt;
        for k in 0..d {
            let v = x[k] - drift * (x[k] - m[k]) + dt * p.interaction[i * d + k];
            if !v.is_finite() {
                return Err(Error::Unstable { step, index: i });
            }
            out.push(v);
        }
    }
    Ok(Ensemble::from_raw_unchecked(out, d))
}

/// One explicit Euler step.
pub fn porous_step(
    ensemble: &Ensemble,
    obj: &Objective,
    params: &PorousParams,
    moll: &Mollifier,
) -> Result<Ensemble> {
    params.validate()?;
    let p = parts(ensemble, obj, params, moll)?;
    advance(ensemble, &p, params.dt, 0)
}

/// Runs the scheme until the variance drops below `stop_tol` or `max_steps`.
pub fn porous_run(
    initial: &Ensemble,
    obj: &Objective,
    params: &PorousParams,
    moll: &Mollifier,
    record_every: usize,
) -> Result<(Ensemble, DiagnosticsSeries)> {
    params.validate()?;
    let mut rec = Recorder::new(record_every);
    let mut state = initial.clone();
    let mut p = parts(&state, obj, params, moll)?;
    rec.push(particle_snapshot(&state, &p.stats, obj, 0, params.dt));

    let mut termination = Termination::MaxSteps;
    let mut steps = 0;
    for step in 1..=params.max_steps {
        state = advance(&state, &p, params.dt, step)?;
        p = parts(&state, obj, params, moll)?;
        steps = step;
        let done = params.stop_tol > 0.0 && crate::measure::variance(&state) < params.stop_tol;
        if rec.due(step) || done || step == params.max_steps {
            rec.push(particle_snapshot(&state, &p.stats, obj, step, params.dt));
        }
        if done {
            termination = Termination::Tolerance;
            break;
        }
    }
    Ok((state, rec.finish(termination, steps)))
}
