//! Flat `key=value` experiment configuration.
//!
//! One pair per line; `#` starts a comment; blank lines are ignored. Unknown
//! keys and malformed values are rejected with the offending line number.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use cbo_core::cbo_particle::CboParams;
use cbo_core::porous_particle::PorousParams;
use cbo_core::pseudo_inverse::ChiSolverParams;
use cbo_core::Objective;

use crate::error::ConfigError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Cbo,
    CboHeaviside,
    Porous,
    Chi,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Cbo => "cbo",
            Scheme::CboHeaviside => "cbo_heaviside",
            Scheme::Porous => "porous",
            Scheme::Chi => "chi",
        }
    }

    /// Whether replicates differ only through the initial sample.
    pub fn is_stochastic(self) -> bool {
        matches!(self, Scheme::Cbo | Scheme::CboHeaviside)
    }
}

impl FromStr for Scheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cbo" => Ok(Scheme::Cbo),
            "cbo_heaviside" => Ok(Scheme::CboHeaviside),
            "porous" => Ok(Scheme::Porous),
            "chi" => Ok(Scheme::Chi),
            _ => Err("expected one of cbo, cbo_heaviside, porous, chi".into()),
        }
    }
}

/// Initial law, applied independently per coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Uniform { a: f64, b: f64 },
    Gaussian { mean: f64, std: f64 },
}

impl Init {
    fn render(&self) -> String {
        match self {
            Init::Uniform { a, b } => format!("uniform({a},{b})"),
            Init::Gaussian { mean, std } => format!("gaussian({mean},{std})"),
        }
    }
}

impl FromStr for Init {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.replace(' ', "");
        let (name, rest) = s
            .split_once('(')
            .ok_or("expected uniform(a,b) or gaussian(mean,std)")?;
        let args = rest
            .strip_suffix(')')
            .ok_or("missing closing parenthesis")?;
        let nums: Vec<f64> = args
            .split(',')
            .map(|x| {
                x.parse::<f64>()
                    .map_err(|_| format!("`{x}` is not a number"))
            })
            .collect::<Result<_, _>>()?;
        let [x, y] = nums[..] else {
            return Err("expected two arguments".into());
        };
        if !x.is_finite() || !y.is_finite() {
            return Err("arguments must be finite".into());
        }
        match name {
            "uniform" if x < y => Ok(Init::Uniform { a: x, b: y }),
            "uniform" => Err("uniform(a,b) needs a < b".into()),
            "gaussian" if y > 0.0 => Ok(Init::Gaussian { mean: x, std: y }),
            "gaussian" => Err("gaussian(mean,std) needs std > 0".into()),
            _ => Err(format!("unknown law `{name}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scheme: Scheme,
    pub objective: String,
    pub dim: usize,
    pub shift: f64,
    /// Particle count.
    pub n: usize,
    /// Quantile-grid nodes.
    pub k: usize,
    pub lambda: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub dt: f64,
    /// Porous exponent; 2 for `porous`, 1 for `chi` unless set.
    pub p: f64,
    pub tol: f64,
    pub stop_tol: f64,
    pub heaviside_eps: f64,
    pub mollifier_eps: f64,
    pub gap_floor: f64,
    pub max_iters: usize,
    pub iter_tol: f64,
    pub init: Init,
    pub t_max: f64,
    pub max_steps: usize,
    pub record_every: usize,
    pub mc_runs: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Worker threads for replicates; 0 uses all cores.
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scheme: Scheme::Cbo,
            objective: "ackley".into(),
            dim: 1,
            shift: 1.0,
            n: 500,
            k: 200,
            lambda: 1.0,
            sigma: 0.8,
            alpha: 30.0,
            dt: 2.5e-3,
            p: 1.0,
            tol: 1e-6,
            stop_tol: 1e-8,
            heaviside_eps: 0.0,
            mollifier_eps: 0.1,
            gap_floor: 1e-12,
            max_iters: 50,
            iter_tol: 1e-12,
            init: Init::Uniform { a: -3.0, b: 3.0 },
            t_max: 10.0,
            max_steps: 4000,
            record_every: 1,
            mc_runs: 1,
            seed: 0,
            out_dir: PathBuf::from("run"),
            workers: 0,
        }
    }
}

fn parse_value<T: FromStr>(
    line: usize,
    key: &str,
    raw: &str,
    what: &str,
) -> Result<T, ConfigError> {
    raw.parse::<T>()
        .map_err(|_| ConfigError::new(line, format!("`{key}` expects {what}, got `{raw}`")))
}

/// Parses and validates a configuration; missing keys take their defaults.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut c = ExperimentConfig::default();
    let mut p_set = None;
    let mut eps_set = false;
    let mut t_max_line = None;
    let mut steps_line = None;
    let mut seen: Vec<(String, usize)> = Vec::new();

    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw_line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| {
            ConfigError::new(line, format!("expected key=value, got `{content}`"))
        })?;
        let (key, value) = (key.trim(), value.trim());
        if let Some((_, first)) = seen.iter().find(|(k, _)| k == key) {
            return Err(ConfigError::new(
                line,
                format!("`{key}` already set on line {first}"),
            ));
        }
        seen.push((key.to_string(), line));
        let real = |v: &str| parse_value::<f64>(line, key, v, "a real number");
        let int = |v: &str| parse_value::<usize>(line, key, v, "a nonnegative integer");
        match key {
            "scheme" => {
                c.scheme = value
                    .parse()
                    .map_err(|e: String| ConfigError::new(line, format!("`scheme`: {e}")))?
            }
            "objective" => c.objective = value.to_string(),
            "dim" => c.dim = int(value)?,
            "shift" => c.shift = real(value)?,
            "N" => c.n = int(value)?,
            "K" => c.k = int(value)?,
            "lambda" => c.lambda = real(value)?,
            "sigma" => c.sigma = real(value)?,
            "alpha" => c.alpha = real(value)?,
            "dt" => c.dt = real(value)?,
            "p" => p_set = Some((real(value)?, line)),
            "tol" => c.tol = real(value)?,
            "stop_tol" => c.stop_tol = real(value)?,
            "heaviside_eps" => {
                c.heaviside_eps = real(value)?;
                eps_set = true;
            }
            "mollifier_eps" => c.mollifier_eps = real(value)?,
            "gap_floor" => c.gap_floor = real(value)?,
            "max_iters" => c.max_iters = int(value)?,
            "iter_tol" => c.iter_tol = real(value)?,
            "init" => {
                c.init = value
                    .parse()
                    .map_err(|e: String| ConfigError::new(line, format!("`init`: {e}")))?
            }
            "t_max" => {
                c.t_max = real(value)?;
                t_max_line = Some(line);
            }
            "max_steps" => {
                c.max_steps = int(value)?;
                steps_line = Some(line);
            }
            "record_every" => c.record_every = int(value)?,
            "mc_runs" => c.mc_runs = int(value)?,
            "seed" => c.seed = parse_value(line, key, value, "a 64-bit unsigned integer")?,
            "out_dir" => c.out_dir = PathBuf::from(value),
            "workers" => c.workers = int(value)?,
            _ => return Err(ConfigError::new(line, format!("unknown key `{key}`"))),
        }
    }

    let line_of = |key: &str| seen.iter().find(|(k, _)| k == key).map_or(0, |(_, l)| *l);
    let fail = |key: &str, msg: &str| Err(ConfigError::new(line_of(key), format!("`{key}` {msg}")));

    c.p = match (p_set, c.scheme) {
        (Some((p, _)), _) => p,
        (None, Scheme::Porous) => 2.0,
        _ => 1.0,
    };
    if let Some((p, line)) = p_set {
        if matches!(c.scheme, Scheme::Cbo | Scheme::CboHeaviside) && p != 1.0 {
            return Err(ConfigError::new(
                line,
                "`p` must be 1 for the stochastic schemes".into(),
            ));
        }
    }
    if c.scheme == Scheme::CboHeaviside && !eps_set {
        c.heaviside_eps = 1e-2;
    }
    match (t_max_line, steps_line) {
        (Some(_), Some(l)) => {
            return Err(ConfigError::new(
                l,
                "set either `t_max` or `max_steps`, not both".into(),
            ))
        }
        (_, Some(_)) => c.t_max = c.max_steps as f64 * c.dt,
        _ => {
            if !(c.t_max >= 0.0 && c.t_max.is_finite()) {
                return fail("t_max", "must be nonnegative");
            }
            if c.dt.is_nan() || c.dt <= 0.0 {
                return fail("dt", "must be positive");
            }
            c.max_steps = (c.t_max / c.dt).round() as usize;
        }
    }

    if !matches!(c.objective.as_str(), "ackley" | "quadratic") {
        return fail("objective", "must be `ackley` or `quadratic`");
    }
    if c.dim == 0 {
        return fail("dim", "must be at least 1");
    }
    if c.scheme == Scheme::Chi && c.dim != 1 {
        return fail("dim", "must be 1 for the chi scheme");
    }
    if !c.shift.is_finite() || (c.objective == "quadratic" && c.shift <= 0.0) {
        return fail("shift", "must be finite (and positive for quadratic)");
    }
    if c.n == 0 {
        return fail("N", "must be at least 1");
    }
    if c.k < 2 {
        return fail("K", "must be at least 2");
    }
    let positive = [
        ("lambda", c.lambda),
        ("alpha", c.alpha),
        ("dt", c.dt),
        ("tol", c.tol),
        ("mollifier_eps", c.mollifier_eps),
        ("gap_floor", c.gap_floor),
        ("iter_tol", c.iter_tol),
    ];
    for (k, v) in positive {
        if !(v > 0.0 && v.is_finite()) {
            return fail(k, "must be positive");
        }
    }
    let nonneg = [
        ("sigma", c.sigma),
        ("stop_tol", c.stop_tol),
        ("heaviside_eps", c.heaviside_eps),
    ];
    for (k, v) in nonneg {
        if !(v >= 0.0 && v.is_finite()) {
            return fail(k, "must be nonnegative");
        }
    }
    if c.scheme == Scheme::CboHeaviside && c.heaviside_eps == 0.0 {
        return fail("heaviside_eps", "must be positive for cbo_heaviside");
    }
    if c.scheme == Scheme::Cbo && c.heaviside_eps != 0.0 {
        return fail("heaviside_eps", "applies to cbo_heaviside and porous only");
    }
    if !(c.p >= 1.0 && c.p.is_finite()) {
        return fail("p", "must be at least 1");
    }
    if c.max_iters == 0 {
        return fail("max_iters", "must be at least 1");
    }
    if c.record_every == 0 {
        return fail("record_every", "must be at least 1");
    }
    if c.mc_runs == 0 {
        return fail("mc_runs", "must be at least 1");
    }
    Ok(c)
}

impl ExperimentConfig {
    pub fn build_objective(&self) -> Objective {
        Objective::from_id(&self.objective, self.dim, self.shift)
            .expect("validated by parse_config")
    }

    pub fn cbo_params(&self) -> CboParams {
        CboParams {
            lambda: self.lambda,
            sigma: self.sigma,
            alpha: self.alpha,
            dt: self.dt,
            heaviside_eps: self.heaviside_eps,
            max_steps: self.max_steps,
            stop_tol: self.stop_tol,
        }
    }

    pub fn porous_params(&self) -> PorousParams {
        PorousParams {
            lambda: self.lambda,
            sigma: self.sigma,
            alpha: self.alpha,
            dt: self.dt,
            p_exponent: self.p,
            mollifier_eps: self.mollifier_eps,
            heaviside_eps: self.heaviside_eps,
            max_steps: self.max_steps,
            stop_tol: self.stop_tol,
        }
    }

    pub fn chi_params(&self) -> ChiSolverParams {
        ChiSolverParams {
            lambda: self.lambda,
            sigma: self.sigma,
            alpha: self.alpha,
            p_exponent: self.p,
            dt: self.dt,
            tol: self.tol,
            gap_floor: self.gap_floor,
            max_iters: self.max_iters,
            iter_tol: self.iter_tol,
            max_steps: self.max_steps,
        }
    }

    /// Canonical text form; parsing it back yields the same config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("scheme", self.scheme.as_str().into());
        kv("objective", self.objective.clone());
        kv("dim", self.dim.to_string());
        kv("shift", self.shift.to_string());
        kv("N", self.n.to_string());
        kv("K", self.k.to_string());
        kv("lambda", self.lambda.to_string());
        kv("sigma", self.sigma.to_string());
        kv("alpha", self.alpha.to_string());
        kv("dt", self.dt.to_string());
        kv("p", self.p.to_string());
        kv("tol", self.tol.to_string());
        kv("stop_tol", self.stop_tol.to_string());
        kv("heaviside_eps", self.heaviside_eps.to_string());
        kv("mollifier_eps", self.mollifier_eps.to_string());
        kv("gap_floor", self.gap_floor.to_string());
        kv("max_iters", self.max_iters.to_string());
        kv("iter_tol", self.iter_tol.to_string());
        kv("init", self.init.render());
        kv("max_steps", self.max_steps.to_string());
        kv("record_every", self.record_every.to_string());
        kv("mc_runs", self.mc_runs.to_string());
        kv("seed", self.seed.to_string());
        kv("out_dir", self.out_dir.display().to_string());
        kv("workers", self.workers.to_string());
        s
    }
}
