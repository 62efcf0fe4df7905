//! Benchmark cost functions together with the analytic constants the
//! concentration and moment estimates are stated in terms of.
//!
//! Constants that are not known in closed form stay `None`; verifiers that
//! need them report a skipped status instead of guessing.

use std::f64::consts::{E, PI};
use std::fmt;
use std::sync::Arc;

use crate::error::{require, Error, Result};

const ACKLEY_A: f64 = 20.0;
const ACKLEY_B: f64 = 0.2;
const ACKLEY_C: f64 = 2.0 * PI;

type CostFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// Analytic facts about an objective.
///
/// The growth constants follow the usual conventions:
/// `|f(x)-f(y)| <= lipschitz (|x|+|y|) |x-y|`,
/// `f(x) - lower_bound <= growth_upper (1 + |x|^2)`,
/// `f(x) - lower_bound >= growth_lower |x|^2` for `|x| >= growth_radius`,
/// `|D^2 f| <= hessian_bound` and `Δf <= laplacian_c0 + laplacian_c1 |∇f|^2`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Constants {
    pub minimizer: Option<Vec<f64>>,
    pub f_min: Option<f64>,
    pub lower_bound: Option<f64>,
    /// `None` means unbounded above.
    pub upper_bound: Option<f64>,
    pub lipschitz: Option<f64>,
    pub growth_upper: Option<f64>,
    pub growth_lower: Option<f64>,
    pub growth_radius: Option<f64>,
    pub hessian_bound: Option<f64>,
    pub laplacian_c0: Option<f64>,
    pub laplacian_c1: Option<f64>,
}

/// A cost function `f: R^d -> R` plus its metadata.
///
/// Evaluation is `base(x) + shift`; the shift moves the infimum without
/// touching the minimizer. Objectives are immutable and cheap to clone.
#[derive(Clone)]
pub struct Objective {
    name: String,
    dim: usize,
    shift: f64,
    base: Arc<CostFn>,
    constants: Constants,
}

impl fmt::Debug for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Objective")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("shift", &self.shift)
            .field("constants", &self.constants)
            .finish()
    }
}

/// Relative tolerance for rounding in `f(x) - f_lower`.
const REL_SLACK: f64 = 1e-12;

/// Standard Ackley function (a=20, b=0.2, c=2π), shifted so that `inf f = shift`.
pub fn make_ackley(dim: usize, shift: f64) -> Result<Objective> {
    require(dim >= 1, "dim", "must be at least 1")?;
    require(shift.is_finite(), "shift", "must be finite")?;
    let base = move |x: &[f64]| {
        let d = x.len() as f64;
        let sq = x.iter().map(|v| v * v).sum::<f64>() / d;
        let cos = x.iter().map(|v| (ACKLEY_C * v).cos()).sum::<f64>() / d;
        // grouped so that both brackets vanish exactly at the origin
        let val = ACKLEY_A * (1.0 - (-ACKLEY_B * sq.sqrt()).exp()) + (E - cos.exp());
        val.max(0.0)
    };
    // base <= a + e - e^{-1} < a + e, so (A1) holds with c_u = a + e.
    let constants = Constants {
        minimizer: Some(vec![0.0; dim]),
        f_min: Some(shift),
        lower_bound: Some(shift),
        upper_bound: Some(shift + ACKLEY_A + E),
        growth_upper: Some(ACKLEY_A + E),
        ..Constants::default()
    };
    Ok(Objective {
        name: "ackley".into(),
        dim,
        shift,
        base: Arc::new(base),
        constants,
    })
}

/// `f(x) = |x|^2 + shift`, which satisfies every growth assumption with
/// exactly known constants.
pub fn make_quadratic(dim: usize, shift: f64) -> Result<Objective> {
    require(dim >= 1, "dim", "must be at least 1")?;
    require(
        shift > 0.0 && shift.is_finite(),
        "shift",
        "must be positive",
    )?;
    let constants = Constants {
        minimizer: Some(vec![0.0; dim]),
        f_min: Some(shift),
        lower_bound: Some(shift),
        upper_bound: None,
        lipschitz: Some(2.0),
        growth_upper: Some(1.0),
        growth_lower: Some(1.0),
        growth_radius: Some(1.0),
        hessian_bound: Some(2.0),
        laplacian_c0: Some(2.0 * dim as f64),
        laplacian_c1: Some(0.0),
    };
    Ok(Objective {
        name: "quadratic".into(),
        dim,
        shift,
        base: Arc::new(|x: &[f64]| x.iter().map(|v| v * v).sum()),
        constants,
    })
}

impl Objective {
    /// Wraps an arbitrary cost function. No metadata is attached; add it
    /// with [`Objective::with_constants`].
    pub fn custom<F>(name: impl Into<String>, dim: usize, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        require(dim >= 1, "dim", "must be at least 1")?;
        Ok(Objective {
            name: name.into(),
            dim,
            shift: 0.0,
            base: Arc::new(f),
            constants: Constants::default(),
        })
    }

    /// Looks up a benchmark by its config id.
    pub fn from_id(id: &str, dim: usize, shift: f64) -> Result<Self> {
        match id {
            "ackley" => make_ackley(dim, shift),
            "quadratic" => make_quadratic(dim, shift),
            other => Err(Error::InvalidParameter {
                name: "objective",
                reason: format!("unknown objective `{other}` (expected ackley or quadratic)"),
            }),
        }
    }

    pub fn with_constants(mut self, constants: Constants) -> Self {
        self.constants = constants;
        self
    }

    /// Same landscape with a different additive shift; value-type constants
    /// move with it.
    pub fn with_shift(&self, shift: f64) -> Self {
        let delta = shift - self.shift;
        let mut out = self.clone();
        out.shift = shift;
        let c = &mut out.constants;
        c.f_min = c.f_min.map(|v| v + delta);
        c.lower_bound = c.lower_bound.map(|v| v + delta);
        c.upper_bound = c.upper_bound.map(|v| v + delta);
        out
    }

    /// `x -> f(x - offset)`. Only translation-invariant metadata is kept.
    pub fn translated(&self, offset: &[f64]) -> Result<Self> {
        if offset.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: offset.len(),
            });
        }
        let base = Arc::clone(&self.base);
        let off = offset.to_vec();
        let shifted = move |x: &[f64]| {
            let y: Vec<f64> = x.iter().zip(&off).map(|(a, b)| a - b).collect();
            base(&y)
        };
        let c = &self.constants;
        let constants = Constants {
            minimizer: c
                .minimizer
                .as_ref()
                .map(|m| m.iter().zip(offset).map(|(a, b)| a + b).collect()),
            f_min: c.f_min,
            lower_bound: c.lower_bound,
            upper_bound: c.upper_bound,
            hessian_bound: c.hessian_bound,
            laplacian_c0: c.laplacian_c0,
            laplacian_c1: c.laplacian_c1,
            ..Constants::default()
        };
        Ok(Objective {
            name: format!("{}-translated", self.name),
            dim: self.dim,
            shift: self.shift,
            base: Arc::new(shifted),
            constants,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn constants(&self) -> &Constants {
        &self.constants
    }

    pub fn minimizer(&self) -> Option<&[f64]> {
        self.constants.minimizer.as_deref()
    }

    pub fn lower_bound(&self) -> Option<f64> {
        self.constants.lower_bound
    }

    /// Evaluates `f(x)`. The caller guarantees `x.len() == dim`.
    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        (self.base)(x) + self.shift
    }

    /// Checks every inequality implied by the present constants at `x`.
    /// Returns the names of the violated ones.
    pub fn metadata_violations(&self, x: &[f64]) -> Vec<&'static str> {
        let c = &self.constants;
        let fx = self.eval(x);
        let r2: f64 = x.iter().map(|v| v * v).sum();
        let mut bad = Vec::new();
        if let Some(lb) = c.lower_bound {
            if fx < lb {
                bad.push("lower_bound");
            }
            if let Some(cu) = c.growth_upper {
                if fx - lb > cu * (1.0 + r2) * (1.0 + REL_SLACK) {
                    bad.push("growth_upper");
                }
            }
            if let (Some(cl), Some(m)) = (c.growth_lower, c.growth_radius) {
                if r2.sqrt() >= m && fx - lb < cl * r2 * (1.0 - REL_SLACK) - REL_SLACK * lb.abs() {
                    bad.push("growth_lower");
                }
            }
        }
        if let Some(ub) = c.upper_bound {
            if fx > ub {
                bad.push("upper_bound");
            }
        }
        if let Some(fmin) = c.f_min {
            if fx < fmin {
                bad.push("f_min");
            }
        }
        bad
    }
}

/// Evaluates `f` at every row of a row-major `positions` buffer.
pub fn evaluate_batch(obj: &Objective, positions: &[f64]) -> Result<Vec<f64>> {
    let d = obj.dim();
    if !positions.len().is_multiple_of(d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: positions.len() % d,
        });
    }
    Ok(positions.chunks_exact(d).map(|x| obj.eval(x)).collect())
}
