//! Stochastic consensus-based particle scheme, discretised with explicit
//! Euler–Maruyama:
//!
//! ```text
//! X_i' = X_i - λ (X_i - m) Δt + σ |X_i - m| √Δt ξ_i,   ξ_i ~ N(0, I_d)
//! ```
//!
//! `m` is the weighted mean of the current state and is held fixed for the
//! whole step. The gated variant multiplies the drift by
//! `H_ε(f(X_i) - f(m)) = (1 + erf(·/ε))/2` and uses `√2 σ` for the noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{require, Error, Result};
use crate::measure::{self, check_dim, weighted_stats_from_values, Ensemble, WeightedStats};
use crate::objective::Objective;
use crate::series::{DiagnosticsSeries, Recorder, Snapshot, Termination};

#[derive(Debug, Clone, PartialEq)]
pub struct CboParams {
    pub lambda: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub dt: f64,
    /// Width of the smoothed Heaviside gate; 0 disables gating.
    pub heaviside_eps: f64,
    pub max_steps: usize,
    /// Stop once the variance drops below this; 0 disables the check.
    pub stop_tol: f64,
}

impl Default for CboParams {
    fn default() -> Self {
        CboParams {
            lambda: 1.0,
            sigma: 0.8,
            alpha: 30.0,
            dt: 2.5e-3,
            heaviside_eps: 0.0,
            max_steps: 4000,
            stop_tol: 1e-8,
        }
    }
}

impl CboParams {
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
        require(
            self.heaviside_eps >= 0.0,
            "heaviside_eps",
            "must be nonnegative",
        )?;
        require(self.stop_tol >= 0.0, "stop_tol", "must be nonnegative")?;
        Ok(())
    }
}

/// Seed plus stream index; equal specs give equal noise on every platform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngSpec {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngSpec {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        RngSpec { seed, stream_id }
    }

    pub fn build(self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Smoothed Heaviside `(1 + erf(x/ε))/2`.
#[inline]
pub fn heaviside(x: f64, eps: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / eps))
}

fn weighted(ensemble: &Ensemble, obj: &Objective, alpha: f64) -> Result<(Vec<f64>, WeightedStats)> {
    check_dim(obj.dim(), ensemble.dim())?;
    let vals: Vec<f64> = ensemble.rows().map(|x| obj.eval(x)).collect();
    if let Some(index) = vals.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteObjective { index });
    }
    let stats = weighted_stats_from_values(ensemble, &vals, alpha);
    Ok((vals, stats))
}

/// Shared Euler–Maruyama kernel. `gate` maps (f(X_i), f(m)) to the drift
/// multiplier; `noise_scale` multiplies σ.
#[allow(clippy::too_many_arguments)]
fn step_impl<R: rand::Rng + ?Sized>(
    ensemble: &Ensemble,
    values: &[f64],
    m: &[f64],
    params: &CboParams,
    rng: &mut R,
    gate: impl Fn(f64) -> f64,
    noise_scale: f64,
    step_index: usize,
) -> Result<Ensemble> {
    let d = ensemble.dim();
    let sqrt_dt = params.dt.sqrt();
    let amp = noise_scale * params.sigma * sqrt_dt;
    let mut out = Vec::with_capacity(ensemble.positions().len());
    for (i, (x, fx)) in ensemble.rows().zip(values).enumerate() {
        let dist = measure::sq_dist(x, m).sqrt();
        let drift = params.lambda * params.dt * gate(*fx);
        let scale = amp * dist;
        for k in 0..d {
            // one normal per coordinate keeps streams aligned across particles
            let xi: f64 = StandardNormal.sample(rng);
            let v = x[k] - drift * (x[k] - m[k]) + scale * xi;
            if !v.is_finite() {
                return Err(Error::Unstable {
                    step: step_index,
                    index: i,
                });
            }
            out.push(v);
        }
    }
    Ok(Ensemble::from_raw_unchecked(out, d))
}

/// One Euler–Maruyama step of the ungated scheme.
pub fn em_step<R: rand::Rng + ?Sized>(
    ensemble: &Ensemble,
    obj: &Objective,
    params: &CboParams,
    rng: &mut R,
) -> Result<Ensemble> {
    params.validate()?;
    let (vals, stats) = weighted(ensemble, obj, params.alpha)?;
    step_impl(ensemble, &vals, &stats.m_f, params, rng, |_| 1.0, 1.0, 0)
}

/// One step of the Heaviside-gated scheme.
pub fn heaviside_em_step<R: rand::Rng + ?Sized>(
    ensemble: &Ensemble,
    obj: &Objective,
    params: &CboParams,
    rng: &mut R,
) -> Result<Ensemble> {
    params.validate()?;
    require(
        params.heaviside_eps > 0.0,
        "heaviside_eps",
        "gated step needs a positive width",
    )?;
    let (vals, stats) = weighted(ensemble, obj, params.alpha)?;
    gated_step(ensemble, obj, &vals, &stats.m_f, params, rng, 0)
}

fn gated_step<R: rand::Rng + ?Sized>(
    ensemble: &Ensemble,
    obj: &Objective,
    vals: &[f64],
    m: &[f64],
    params: &CboParams,
    rng: &mut R,
    step_index: usize,
) -> Result<Ensemble> {
    let fm = obj.eval(m);
    let eps = params.heaviside_eps;
    step_impl(
        ensemble,
        vals,
        m,
        params,
        rng,
        |fx| heaviside(fx - fm, eps),
        std::f64::consts::SQRT_2,
        step_index,
    )
}

pub(crate) fn particle_snapshot(
    ensemble: &Ensemble,
    stats: &WeightedStats,
    obj: &Objective,
    step: usize,
    dt: f64,
) -> Snapshot {
    Snapshot {
        step,
        t: step as f64 * dt,
        variance: measure::variance(ensemble),
        mean: measure::mean(ensemble),
        m_f: stats.m_f.clone(),
        weight_norm: stats.weight_norm,
        w2: obj
            .minimizer()
            .map(|x| measure::w2_to_dirac(ensemble, x).expect("minimizer has objective dimension")),
        support_width: None,
    }
}

/// Iterates the scheme (gated when `heaviside_eps > 0`) until the variance
/// falls below `stop_tol` or `max_steps` steps have been taken.
pub fn run(
    initial: &Ensemble,
    obj: &Objective,
    params: &CboParams,
    rng: RngSpec,
    record_every: usize,
) -> Result<(Ensemble, DiagnosticsSeries)> {
    let mut rng = rng.build();
    run_with_rng(initial, obj, params, &mut rng, record_every)
}

/// [`run`] drawing noise from a caller-supplied generator.
pub fn run_with_rng<R: rand::Rng + ?Sized>(
    initial: &Ensemble,
    obj: &Objective,
    params: &CboParams,
    rng: &mut R,
    record_every: usize,
) -> Result<(Ensemble, DiagnosticsSeries)> {
    params.validate()?;
    let gated = params.heaviside_eps > 0.0;
    let mut rec = Recorder::new(record_every);
    let mut state = initial.clone();
    let (mut vals, mut stats) = weighted(&state, obj, params.alpha)?;
    rec.push(particle_snapshot(&state, &stats, obj, 0, params.dt));

    let mut termination = Termination::MaxSteps;
    let mut steps = 0;
    for step in 1..=params.max_steps {
        state = if gated {
            gated_step(&state, obj, &vals, &stats.m_f, params, rng, step)?
        } else {
            step_impl(&state, &vals, &stats.m_f, params, rng, |_| 1.0, 1.0, step)?
        };
        (vals, stats) = weighted(&state, obj, params.alpha)?;
        steps = step;
        let done = params.stop_tol > 0.0 && measure::variance(&state) < params.stop_tol;
        if rec.due(step) || done || step == params.max_steps {
            rec.push(particle_snapshot(&state, &stats, obj, step, params.dt));
        }
        if done {
            termination = Termination::Tolerance;
            break;
        }
    }
    Ok((state, rec.finish(termination, steps)))
}

/// Growth constant `b_N = 2(λ√N + 2dσ²N)` bounding
/// `E|X_t|² ≤ e^{b_N t} E|X_0|²`.
pub fn second_moment_growth_constant(n: usize, dim: usize, lambda: f64, sigma: f64) -> f64 {
    2.0 * (lambda * (n as f64).sqrt() + 2.0 * dim as f64 * sigma * sigma * n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{make_ackley, make_quadratic};

    fn linear() -> Objective {
        Objective::custom("linear", 1, |x| x[0]).unwrap()
    }

    #[test]
    fn consensus_is_fixed_point_with_noise() {
        let e = Ensemble::consensus(&[0.7, -0.2], 10).unwrap();
        let obj = make_ackley(2, 1.0).unwrap();
        let mut rng = RngSpec::new(1, 0).build();
        let out = em_step(&e, &obj, &CboParams::default(), &mut rng).unwrap();
        assert_eq!(out, e);
        let p = CboParams {
            heaviside_eps: 0.01,
            ..Default::default()
        };
        let out = heaviside_em_step(&e, &obj, &p, &mut rng).unwrap();
        assert_eq!(out, e);
    }

    #[test]
    fn deterministic_two_particle_step() {
        let e = Ensemble::from_scalars(&[0.0, 1.0]).unwrap();
        let p = CboParams {
            sigma: 0.0,
            lambda: 1.0,
            dt: 0.1,
            alpha: 1.0,
            ..Default::default()
        };
        let out = em_step(&e, &linear(), &p, &mut RngSpec::new(0, 0).build()).unwrap();
        let expect = [0.026_894_142_136_999_512, 0.926_894_142_136_999_51];
        for (a, b) in out.positions().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn vanishing_drift_without_noise_is_identity() {
        let e = Ensemble::from_scalars(&[-1.0, 0.3, 2.0]).unwrap();
        let p = CboParams {
            sigma: 0.0,
            lambda: 1e-300,
            ..Default::default()
        };
        let out = em_step(&e, &linear(), &p, &mut RngSpec::new(0, 0).build()).unwrap();
        assert_eq!(out, e);
    }

    #[test]
    fn heaviside_gate_values() {
        assert_eq!(heaviside(0.0, 0.3), 0.5);
        assert!(heaviside(-4.01 * 0.01, 0.01) < 1e-6);
        assert!(heaviside(1.0, 0.01) == 1.0);
    }

    #[test]
    fn saturated_gate_matches_plain_step() {
        // particles far above f(m) relative to ε see a gate of exactly 1
        let e = Ensemble::from_scalars(&[-2.0, -1.5, 1.7, 0.0]).unwrap();
        let obj = make_quadratic(1, 1.0).unwrap();
        let mut x = e.positions().to_vec();
        x[3] = 1e-9;
        let e = Ensemble::new(x, 1).unwrap();
        let plain = CboParams {
            sigma: 0.0,
            alpha: 1.0,
            ..Default::default()
        };
        let gated = CboParams {
            heaviside_eps: 1e-6,
            ..plain.clone()
        };
        let a = em_step(&e, &obj, &plain, &mut RngSpec::new(0, 0).build()).unwrap();
        let b = heaviside_em_step(&e, &obj, &gated, &mut RngSpec::new(0, 0).build()).unwrap();
        let stats = measure::weighted_stats(&e, &obj, 1.0).unwrap();
        let fm = obj.eval(&stats.m_f);
        for i in 0..3 {
            assert!(obj.eval(e.row(i)) - fm > 0.5);
            assert_eq!(a.row(i), b.row(i));
        }
    }

    #[test]
    fn gate_below_weighted_mean_freezes_drift() {
        let e = Ensemble::from_scalars(&[0.0, 1.0, 1.1]).unwrap();
        let obj = make_quadratic(1, 1.0).unwrap();
        let p = CboParams {
            sigma: 0.0,
            alpha: 0.01,
            heaviside_eps: 1e-3,
            ..Default::default()
        };
        let out = heaviside_em_step(&e, &obj, &p, &mut RngSpec::new(0, 0).build()).unwrap();
        assert!((out.row(0)[0] - 0.0).abs() < 1e-12);
    }

    #[test]
    fn run_with_zero_steps_returns_initial() {
        let e = Ensemble::from_scalars(&[-1.0, 2.0]).unwrap();
        let p = CboParams {
            max_steps: 0,
            stop_tol: 0.0,
            ..Default::default()
        };
        let (out, s) = run(&e, &make_ackley(1, 1.0).unwrap(), &p, RngSpec::new(3, 0), 5).unwrap();
        assert_eq!(out, e);
        assert_eq!(s.snapshots.len(), 1);
        assert_eq!(s.termination, Termination::MaxSteps);
    }

    #[test]
    fn run_stops_at_step_one_for_consensus() {
        let e = Ensemble::consensus(&[0.1], 8).unwrap();
        let (_, s) = run(
            &e,
            &make_ackley(1, 1.0).unwrap(),
            &CboParams::default(),
            RngSpec::new(3, 0),
            5,
        )
        .unwrap();
        assert_eq!(s.steps, 1);
        assert_eq!(s.termination, Termination::Tolerance);
        assert_eq!(s.last().variance, 0.0);
    }

    #[test]
    fn symmetric_pair_variance_recursion() {
        let e = Ensemble::from_scalars(&[-1.0, 1.0]).unwrap();
        let obj = make_quadratic(1, 1.0).unwrap();
        let p = CboParams {
            sigma: 0.0,
            dt: 0.01,
            stop_tol: 0.0,
            max_steps: 300,
            ..Default::default()
        };
        let (_, s) = run(&e, &obj, &p, RngSpec::new(0, 0), 10).unwrap();
        for snap in &s.snapshots {
            let expect = 0.5 * (1.0f64 - 0.01).powi(2 * snap.step as i32);
            assert!((snap.variance - expect).abs() < 1e-14 * expect.max(1e-300) + 1e-16);
            assert_eq!(snap.m_f, vec![0.0]);
        }
    }

    #[test]
    fn same_seed_same_trajectory() {
        let e = Ensemble::from_scalars(&[-2.0, -0.5, 0.4, 1.9, 2.5]).unwrap();
        let obj = make_ackley(1, 1.0).unwrap();
        let p = CboParams {
            max_steps: 200,
            ..Default::default()
        };
        let a = run(&e, &obj, &p, RngSpec::new(42, 3), 1).unwrap();
        let b = run(&e, &obj, &p, RngSpec::new(42, 3), 1).unwrap();
        assert_eq!(a, b);
        let c = run(&e, &obj, &p, RngSpec::new(42, 4), 1).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn unstable_step_is_reported() {
        let e = Ensemble::from_scalars(&[-1e300, 1e300]).unwrap();
        let obj = Objective::custom("flat", 1, |_| 0.0).unwrap();
        let p = CboParams {
            sigma: 0.0,
            lambda: 1e10,
            dt: 1e10,
            ..Default::default()
        };
        let r = run(&e, &obj, &p, RngSpec::new(0, 0), 1);
        assert!(matches!(r, Err(Error::Unstable { step: 1, .. })));
    }
}
