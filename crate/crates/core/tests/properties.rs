use cbo_core::cbo_particle::{self, em_step, run, CboParams, RngSpec};
use cbo_core::diagnostics::{
    alpha_sweep_chi, growth_bound, nonincreasing_within, spread_ratio, stability_ratio,
};
use cbo_core::measure::{self, Ensemble};
use cbo_core::porous_particle::{porous_step, Mollifier, PorousParams};
use cbo_core::pseudo_inverse::{chi_from_uniform, chi_run, ChiSolverParams};
use cbo_core::{make_ackley, make_quadratic, QuantileGrid, SeriesField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn uniform_ensemble(rng: &mut ChaCha8Rng, n: usize, d: usize, a: f64, b: f64) -> Ensemble {
    let v: Vec<f64> = (0..n * d).map(|_| rng.random_range(a..b)).collect();
    Ensemble::new(v, d).unwrap()
}

#[test]
fn translation_equivariance_of_particle_runs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let e = uniform_ensemble(&mut rng, 60, 2, -2.0, 2.0);
    let c = [0.7, -1.3];
    let obj = make_ackley(2, 1.0).unwrap();
    let moved = obj.translated(&c).unwrap();
    let params = CboParams {
        max_steps: 200,
        stop_tol: 0.0,
        ..Default::default()
    };
    let (a, _) = run(&e, &obj, &params, RngSpec::new(5, 2), 50).unwrap();
    let (b, _) = run(
        &e.translated(&c).unwrap(),
        &moved,
        &params,
        RngSpec::new(5, 2),
        50,
    )
    .unwrap();
    for (x, y) in a.rows().zip(b.rows()) {
        for k in 0..2 {
            assert!((x[k] + c[k] - y[k]).abs() < 1e-9, "{x:?} {y:?}");
        }
    }
}

#[test]
fn expected_second_moment_respects_growth_bound() {
    let obj = make_ackley(1, 1.0).unwrap();
    let (n, runs, steps) = (20, 120, 40);
    let params = CboParams {
        max_steps: steps,
        stop_tol: 0.0,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let e = uniform_ensemble(&mut rng, n, 1, -3.0, 3.0);
    let m0 = measure::second_moment(&e, 1).unwrap();
    let mut acc = 0.0;
    for r in 0..runs {
        let (end, _) = run(&e, &obj, &params, RngSpec::new(100 + r, r), steps).unwrap();
        acc += measure::second_moment(&end, 1).unwrap();
    }
    let t = steps as f64 * params.dt;
    let bound = growth_bound(n, 1, params.lambda, params.sigma, t, m0);
    assert!(acc / runs as f64 <= bound);
    let b = cbo_particle::second_moment_growth_constant(500, 1, 1.0, 0.8);
    assert!((b - 2.0 * (500f64.sqrt() + 2.0 * 0.64 * 500.0)).abs() < 1e-12 * b);
}

#[test]
fn noise_free_variance_contracts_geometrically() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let obj = make_ackley(2, 1.0).unwrap();
    let params = CboParams {
        sigma: 0.0,
        ..Default::default()
    };
    let mut e = uniform_ensemble(&mut rng, 50, 2, -3.0, 3.0);
    let factor = (1.0 - params.lambda * params.dt).powi(2);
    for _ in 0..100 {
        let v = measure::variance(&e);
        e = em_step(&e, &obj, &params, &mut rng).unwrap();
        let v2 = measure::variance(&e);
        assert!(v2 <= v);
        assert!((v2 - factor * v).abs() <= 1e-12 * v);
    }
}

#[test]
fn chi_support_width_shrinks_for_compatible_data() {
    let obj = make_ackley(1, 1.0).unwrap();
    // density ∝ (1 - x²/9) on [-3, 3]: vanishes at the edges, as the
    // shrinking law assumes
    let cdf = |x: f64| {
        let u = x / 3.0;
        0.5 + 0.75 * (u - u * u * u / 3.0)
    };
    let g = QuantileGrid::from_fn(200, |eta| {
        let (mut a, mut b) = (-3.0, 3.0);
        for _ in 0..100 {
            let m = 0.5 * (a + b);
            if cdf(m) < eta {
                a = m
            } else {
                b = m
            }
        }
        0.5 * (a + b)
    });
    let params = ChiSolverParams {
        p_exponent: 2.0,
        max_steps: 2000,
        ..Default::default()
    };
    let (_, series) = chi_run(&g, &obj, &params, 1).unwrap();
    let w: Vec<f64> = series
        .snapshots
        .iter()
        .map(|s| s.support_width.unwrap())
        .collect();
    for (i, p) in w.windows(2).enumerate() {
        assert!(
            p[1] <= p[0],
            "step {}: {} -> {} ({:e})",
            i + 1,
            p[0],
            p[1],
            p[1] - p[0]
        );
    }
    assert!(*w.last().unwrap() < w[0]);
}

#[test]
fn consensus_error_shrinks_with_alpha() {
    let obj = make_ackley(1, 1.0).unwrap();
    let g = chi_from_uniform(-3.0, 3.0, 200).unwrap();
    let params = ChiSolverParams {
        p_exponent: 1.0,
        ..Default::default()
    };
    let out = alpha_sweep_chi(&g, &obj, &params, &[5.0, 10.0, 20.0, 30.0]).unwrap();
    let errors: Vec<f64> = out.iter().map(|o| o.error).collect();
    assert!(nonincreasing_within(&errors, 0.1, 0.0), "{errors:?}");
}

#[test]
fn empirical_second_moment_is_uniform_in_n() {
    let obj = make_ackley(1, 1.0).unwrap();
    let params = CboParams {
        max_steps: 400,
        stop_tol: 0.0,
        ..Default::default()
    };
    let mut peaks = Vec::new();
    for (i, n) in [50usize, 100, 200, 500].into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(40 + i as u64);
        let e = uniform_ensemble(&mut rng, n, 1, -3.0, 3.0);
        let (_, s) = run(&e, &obj, &params, RngSpec::new(7, i as u64), 10).unwrap();
        // ∫|x|² = 2V + |E|²
        let peak = s
            .snapshots
            .iter()
            .map(|x| 2.0 * x.variance + x.mean[0] * x.mean[0])
            .fold(0.0, f64::max);
        peaks.push(peak);
    }
    assert!(spread_ratio(&peaks) < 2.0, "{peaks:?}");
}

#[test]
fn stability_ratio_is_finite_on_bounded_perturbations() {
    let obj = make_quadratic(1, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let pairs: Vec<(Ensemble, Ensemble)> = (0..1000)
        .map(|_| {
            let n = rng.random_range(2..20);
            let a = uniform_ensemble(&mut rng, n, 1, -2.0, 2.0);
            let b: Vec<f64> = a
                .positions()
                .iter()
                .map(|x| x + rng.random_range(-0.1..0.1))
                .collect();
            (a, Ensemble::from_scalars(&b).unwrap())
        })
        .collect();
    let r = stability_ratio(&pairs, &obj, 1.0).unwrap().unwrap();
    assert!(r.is_finite() && r < 50.0, "{r}");
}

#[test]
fn w2_decreases_on_mean_field_run() {
    let obj = make_ackley(1, 1.0).unwrap();
    let params = ChiSolverParams::default();
    let (_, s) = chi_run(
        &chi_from_uniform(-3.0, 3.0, 200).unwrap(),
        &obj,
        &params,
        100,
    )
    .unwrap();
    let w2 = s.field(SeriesField::W2);
    assert!(w2.last().unwrap().1 < 1e-2);
}

#[test]
fn porous_particle_spread_contracts_on_quadratic() {
    let obj = make_quadratic(1, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut state = uniform_ensemble(&mut rng, 100, 1, -3.0, 3.0);
    let params = PorousParams::default();
    let moll = Mollifier::new(params.mollifier_eps, 1).unwrap();
    let steps = 1000;
    let mut spread = Vec::with_capacity(steps);
    for _ in 0..steps {
        let m = measure::weighted_stats(&state, &obj, params.alpha)
            .unwrap()
            .m_f[0];
        spread.push(state.rows().map(|x| (x[0] - m).abs()).fold(0.0, f64::max));
        state = porous_step(&state, &obj, &params, &moll).unwrap();
    }
    let tail = &spread[steps / 10..];
    for (i, w) in tail.windows(2).enumerate() {
        assert!(
            w[1] <= w[0],
            "step {}: {} -> {}",
            i + steps / 10,
            w[0],
            w[1]
        );
    }
    // clear net contraction over t = 2.5
    assert!(spread[steps - 1] < 0.25 * spread[0]);
}
