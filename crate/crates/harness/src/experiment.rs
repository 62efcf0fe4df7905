//! Seeded Monte Carlo experiments and their run directories.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use cbo_core::cbo_particle::{self, RngSpec};
use cbo_core::diagnostics::{
    check_concentration_conditions, fit_points, laplace_sweep, value_window, ConditionReport,
    DecayFit,
};
use cbo_core::measure::Ensemble;
use cbo_core::porous_particle::{porous_run, Mollifier};
use cbo_core::pseudo_inverse::{chi_from_uniform, chi_run_with, QuantileGrid};
use cbo_core::{DiagnosticsSeries, Objective, Termination};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::config::{ExperimentConfig, Init, Scheme};
use crate::csvio::{fmt, write_csv};
use crate::error::{HarnessError, Result};

/// Window of W₂ values used for the decay-rate fit in reports.
pub const FIT_WINDOW: (f64, f64) = (1e-6, 1e-1);

/// Starting measure of one replicate.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    Particles(Ensemble),
    Grid(QuantileGrid),
}

/// Seed and stream of replicate `r`.
pub fn replicate_rng(cfg: &ExperimentConfig, r: usize) -> RngSpec {
    RngSpec::new(cfg.seed.wrapping_add(r as u64), r as u64)
}

/// Draws (or, for the grid, builds) the initial state.
pub fn initial_state(cfg: &ExperimentConfig, rng: &mut ChaCha8Rng) -> Result<InitialState> {
    if cfg.scheme == Scheme::Chi {
        let grid = match cfg.init {
            Init::Uniform { a, b } => chi_from_uniform(a, b, cfg.k)?,
            Init::Gaussian { mean, std } => {
                let normal = Normal::new(mean, std).expect("validated std > 0");
                let h = 1.0 / (cfg.k - 1) as f64;
                // the end quantiles of a Gaussian are infinite; pull them in by h/2
                QuantileGrid::from_fn(cfg.k, |eta| {
                    normal.inverse_cdf(eta.clamp(0.5 * h, 1.0 - 0.5 * h))
                })
            }
        };
        return Ok(InitialState::Grid(grid));
    }
    let count = cfg.n * cfg.dim;
    let coords: Vec<f64> = match cfg.init {
        Init::Uniform { a, b } => (0..count).map(|_| rng.random_range(a..b)).collect(),
        Init::Gaussian { mean, std } => (0..count)
            .map(|_| mean + std * rng.sample::<f64, _>(StandardNormal))
            .collect(),
    };
    Ok(InitialState::Particles(Ensemble::new(coords, cfg.dim)?))
}

/// Output of one replicate.
#[derive(Debug, Clone)]
pub struct ReplicateResult {
    pub index: usize,
    pub seed: u64,
    pub stream: u64,
    pub series: DiagnosticsSeries,
    pub final_state: InitialState,
    /// Recorded quantile grids `(step, values)`, chi scheme only.
    pub grids: Vec<(usize, Vec<f64>)>,
}

fn grid_every(cfg: &ExperimentConfig) -> usize {
    let target = (cfg.max_steps / 10).max(1);
    target.div_ceil(cfg.record_every) * cfg.record_every
}

/// Runs replicate `r` to completion.
pub fn run_replicate(cfg: &ExperimentConfig, obj: &Objective, r: usize) -> Result<ReplicateResult> {
    let spec = replicate_rng(cfg, r);
    let mut rng = spec.build();
    let wrap = |source| HarnessError::Solver {
        replicate: r,
        seed: spec.seed,
        source,
    };
    let init = initial_state(cfg, &mut rng)?;
    let mut grids = Vec::new();
    let (series, final_state) = match (cfg.scheme, init) {
        (Scheme::Cbo | Scheme::CboHeaviside, InitialState::Particles(e)) => {
            let (end, s) =
                cbo_particle::run_with_rng(&e, obj, &cfg.cbo_params(), &mut rng, cfg.record_every)
                    .map_err(wrap)?;
            (s, InitialState::Particles(end))
        }
        (Scheme::Porous, InitialState::Particles(e)) => {
            let moll = Mollifier::new(cfg.mollifier_eps, cfg.dim).map_err(wrap)?;
            let (end, s) =
                porous_run(&e, obj, &cfg.porous_params(), &moll, cfg.record_every).map_err(wrap)?;
            (s, InitialState::Particles(end))
        }
        (Scheme::Chi, InitialState::Grid(g)) => {
            let every = grid_every(cfg);
            let (end, s) = chi_run_with(
                &g,
                obj,
                &cfg.chi_params(),
                cfg.record_every,
                |step, grid| {
                    if step % every == 0 {
                        grids.push((step, grid.values().to_vec()));
                    }
                },
            )
            .map_err(wrap)?;
            if grids.last().map(|g| g.0) != Some(s.steps) {
                grids.push((s.steps, end.values().to_vec()));
            }
            (s, InitialState::Grid(end))
        }
        _ => unreachable!("initial_state matches the scheme"),
    };
    Ok(ReplicateResult {
        index: r,
        seed: spec.seed,
        stream: spec.stream_id,
        series,
        final_state,
        grids,
    })
}

/// Pointwise average over replicates at one recorded step.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragedRow {
    pub step: usize,
    pub t: f64,
    pub v_mean: f64,
    pub w2_mean: f64,
    pub w2_std: f64,
    pub m_f: Vec<f64>,
}

/// Averages series on the union of their recorded steps. A replicate that
/// stopped early contributes its last snapshot at later steps.
pub fn average_series(series: &[&DiagnosticsSeries], dt: f64) -> Vec<AveragedRow> {
    let mut steps: Vec<usize> = series
        .iter()
        .flat_map(|s| s.snapshots.iter().map(|x| x.step))
        .collect();
    steps.sort_unstable();
    steps.dedup();
    let n = series.len() as f64;
    let mut cursors = vec![0usize; series.len()];
    steps
        .into_iter()
        .map(|step| {
            let snaps: Vec<_> = series
                .iter()
                .zip(cursors.iter_mut())
                .map(|(s, c)| {
                    while *c + 1 < s.snapshots.len() && s.snapshots[*c + 1].step <= step {
                        *c += 1;
                    }
                    &s.snapshots[*c]
                })
                .collect();
            let v_mean = snaps.iter().map(|x| x.variance).sum::<f64>() / n;
            let w2: Vec<f64> = snaps.iter().map(|x| x.w2.unwrap_or(f64::NAN)).collect();
            let w2_mean = w2.iter().sum::<f64>() / n;
            let w2_std = (w2
                .iter()
                .map(|w| (w - w2_mean) * (w - w2_mean))
                .sum::<f64>()
                / n)
                .sqrt();
            let d = snaps[0].m_f.len();
            let m_f = (0..d)
                .map(|k| snaps.iter().map(|x| x.m_f[k]).sum::<f64>() / n)
                .collect();
            AveragedRow {
                step,
                t: step as f64 * dt,
                v_mean,
                w2_mean,
                w2_std,
                m_f,
            }
        })
        .collect()
}

/// Written file with its content hash.
#[derive(Debug, Clone, PartialEq)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: usize,
}

/// Provenance record of a run directory.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub build_id: String,
    /// `(replicate, seed, stream)`.
    pub seeds: Vec<(usize, u64, u64)>,
    /// `(termination, steps)` per replicate.
    pub terminations: Vec<(Termination, usize)>,
    pub wall_time_s: f64,
    pub fit: Option<DecayFit>,
    pub report: Option<ConditionReport>,
    pub files: Vec<FileEntry>,
    pub rows: Vec<AveragedRow>,
}

pub fn build_id() -> String {
    format!("cbo-harness {}", env!("CARGO_PKG_VERSION"))
}

struct RunWriter {
    dir: PathBuf,
    files: Vec<FileEntry>,
}

impl RunWriter {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        Ok(RunWriter {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn put(&mut self, name: &str, bytes: Vec<u8>) -> Result<()> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
        }
        fs::write(&path, &bytes).map_err(|e| HarnessError::io(&path, e))?;
        self.files.push(FileEntry {
            name: name.to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
            bytes: bytes.len(),
        });
        Ok(())
    }
}

fn replicate_csv(rep: &ReplicateResult) -> Result<Vec<u8>> {
    let d = rep.series.snapshots[0].m_f.len();
    let mut header = vec!["t", "step", "V", "w2", "weight_norm", "support_width"]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
    header.extend((0..d).map(|k| format!("mean_{k}")));
    header.extend((0..d).map(|k| format!("m_f_{k}")));
    let rows = rep.series.snapshots.iter().map(|s| {
        let mut r = vec![
            fmt(s.t),
            s.step.to_string(),
            fmt(s.variance),
            s.w2.map_or("nan".into(), fmt),
            fmt(s.weight_norm),
            s.support_width.map_or(String::new(), fmt),
        ];
        r.extend(s.mean.iter().map(|x| fmt(*x)));
        r.extend(s.m_f.iter().map(|x| fmt(*x)));
        r
    });
    write_csv(&header, rows)
}

fn series_csv(rows: &[AveragedRow]) -> Result<Vec<u8>> {
    let d = rows.first().map_or(0, |r| r.m_f.len());
    let mut header: Vec<String> = ["t", "V_mean", "w2_mean", "w2_std"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..d).map(|k| format!("m_f_{k}")));
    write_csv(
        &header,
        rows.iter().map(|r| {
            let mut v = vec![fmt(r.t), fmt(r.v_mean), fmt(r.w2_mean), fmt(r.w2_std)];
            v.extend(r.m_f.iter().map(|x| fmt(*x)));
            v
        }),
    )
}

fn final_state_csv(reps: &[ReplicateResult]) -> Result<Vec<u8>> {
    match &reps[0].final_state {
        InitialState::Particles(e) => {
            let mut header = vec!["replicate".to_string()];
            header.extend((0..e.dim()).map(|k| format!("x_{k}")));
            let rows = reps.iter().flat_map(|rep| {
                let InitialState::Particles(e) = &rep.final_state else {
                    unreachable!("all replicates share the scheme")
                };
                e.rows()
                    .map(|x| {
                        let mut r = vec![rep.index.to_string()];
                        r.extend(x.iter().map(|v| fmt(*v)));
                        r
                    })
                    .collect::<Vec<_>>()
            });
            write_csv(&header, rows)
        }
        InitialState::Grid(_) => {
            let header = ["replicate", "eta", "chi"].map(String::from);
            let rows = reps.iter().flat_map(|rep| {
                let InitialState::Grid(g) = &rep.final_state else {
                    unreachable!("all replicates share the scheme")
                };
                g.nodes()
                    .zip(g.values())
                    .map(|(eta, c)| vec![rep.index.to_string(), fmt(eta), fmt(*c)])
                    .collect::<Vec<_>>()
            });
            write_csv(&header, rows)
        }
    }
}

fn grid_csv(values: &[f64]) -> Result<Vec<u8>> {
    let h = 1.0 / (values.len() - 1) as f64;
    write_csv(
        &["eta", "chi"].map(String::from),
        values
            .iter()
            .enumerate()
            .map(|(i, c)| vec![fmt(i as f64 * h), fmt(*c)]),
    )
}

/// Condition report on replicate 0's initial measure.
pub fn condition_report(cfg: &ExperimentConfig) -> Result<ConditionReport> {
    let obj = cfg.build_objective();
    let mut rng = replicate_rng(cfg, 0).build();
    let report = match initial_state(cfg, &mut rng)? {
        InitialState::Particles(e) => {
            check_concentration_conditions(&e, &obj, cfg.lambda, cfg.sigma, cfg.alpha)
        }
        InitialState::Grid(g) => {
            check_concentration_conditions(&g, &obj, cfg.lambda, cfg.sigma, cfg.alpha)
        }
    }?;
    Ok(report)
}

/// Decay fit of `(t, w2_mean)` over the part of the curve inside
/// [`FIT_WINDOW`].
pub fn fit_w2(rows: &[AveragedRow]) -> Option<DecayFit> {
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.t, r.w2_mean)).collect();
    let window = value_window(&pts, FIT_WINDOW.0, FIT_WINDOW.1)?;
    let inside: Vec<(f64, f64)> = pts
        .into_iter()
        .filter(|p| p.0 >= window.0 && p.0 <= window.1 && p.1 > 0.0)
        .collect();
    fit_points(&inside, None).ok()
}

fn run_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    if workers == 0 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// Executes all replicates, averages them and writes the run directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunManifest> {
    let start = Instant::now();
    let obj = cfg.build_objective();
    let mut writer = RunWriter::new(&cfg.out_dir)?;

    let results: Vec<Result<ReplicateResult>> = run_pool(cfg.workers, || {
        (0..cfg.mc_runs)
            .into_par_iter()
            .map(|r| run_replicate(cfg, &obj, r))
            .collect()
    });
    // reduction starts only once every replicate is back, in index order
    let mut reps = Vec::with_capacity(results.len());
    for res in results {
        match res {
            Ok(rep) => reps.push(rep),
            Err(err) => {
                let mut text = cfg.to_text();
                let _ = writeln!(text, "status=failed\nerror={err}");
                writer.put("manifest.txt", text.into_bytes())?;
                return Err(err);
            }
        }
    }

    let all: Vec<&DiagnosticsSeries> = reps.iter().map(|r| &r.series).collect();
    let rows = average_series(&all, cfg.dt);
    writer.put("series.csv", series_csv(&rows)?)?;
    for rep in &reps {
        writer.put(
            &format!("replicates/replicate_{:04}.csv", rep.index),
            replicate_csv(rep)?,
        )?;
    }
    writer.put("final_state.csv", final_state_csv(&reps)?)?;
    if cfg.scheme == Scheme::Chi {
        for (step, values) in &reps[0].grids {
            writer.put(&format!("chi_t{step:07}.csv"), grid_csv(values)?)?;
        }
    }

    let report = condition_report(cfg);
    let report_text = match &report {
        Ok(r) => r.to_kv(),
        Err(e) => format!("error={e}\n"),
    };
    let fit = fit_w2(&rows);
    let mut report_text = report_text;
    if let Some(f) = &fit {
        report_text.push_str(&f.to_kv("w2_fit_"));
    }
    writer.put("condition_report.txt", report_text.into_bytes())?;

    let manifest = RunManifest {
        config: cfg.clone(),
        build_id: build_id(),
        seeds: reps.iter().map(|r| (r.index, r.seed, r.stream)).collect(),
        terminations: reps
            .iter()
            .map(|r| (r.series.termination, r.series.steps))
            .collect(),
        wall_time_s: start.elapsed().as_secs_f64(),
        fit,
        report: report.ok(),
        files: writer.files.clone(),
        rows,
    };
    writer.put("manifest.txt", manifest.to_text().into_bytes())?;
    Ok(manifest)
}

impl RunManifest {
    pub fn to_text(&self) -> String {
        let mut s = String::from("[config]\n");
        s.push_str(&self.config.to_text());
        s.push_str("[run]\n");
        let _ = writeln!(s, "build={}", self.build_id);
        let _ = writeln!(s, "status=ok");
        let _ = writeln!(s, "wall_time_s={:.3}", self.wall_time_s);
        for ((r, seed, stream), (term, steps)) in self.seeds.iter().zip(&self.terminations) {
            let _ = writeln!(
                s,
                "replicate={r} seed={seed} stream={stream} termination={} steps={steps}",
                term.as_str()
            );
        }
        if let Some(f) = &self.fit {
            s.push_str("[fit]\n");
            s.push_str(&f.to_kv("w2_"));
        }
        if let Some(r) = &self.report {
            s.push_str("[conditions]\n");
            s.push_str(&r.to_kv());
        }
        s.push_str("[files]\n");
        for f in &self.files {
            let _ = writeln!(s, "file={} sha256={} bytes={}", f.name, f.sha256, f.bytes);
        }
        s
    }
}

/// One row of an α sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaRow {
    pub alpha: f64,
    /// Replicate-averaged terminal weighted mean.
    pub m_f: Vec<f64>,
    /// Distance of `m_f` from the minimizer.
    pub error: f64,
    /// Laplace functional of the initial measure and its gap to `min f`.
    pub laplace: f64,
    pub laplace_gap: f64,
}

/// Runs the configured experiment once per α into `out_dir/alpha_<α>` and
/// writes `out_dir/alpha_sweep.csv`.
pub fn sweep_alpha(cfg: &ExperimentConfig, alphas: &[f64]) -> Result<Vec<AlphaRow>> {
    let obj = cfg.build_objective();
    let mut rng = replicate_rng(cfg, 0).build();
    let laplace = match initial_state(cfg, &mut rng)? {
        InitialState::Particles(e) => laplace_sweep(&e, &obj, alphas),
        InitialState::Grid(g) => laplace_sweep(&g, &obj, alphas),
    }?;
    let target = obj
        .minimizer()
        .map(|x| x.to_vec())
        .unwrap_or_else(|| vec![0.0; cfg.dim]);
    let mut out = Vec::new();
    for (alpha, lp) in alphas.iter().zip(laplace) {
        let sub = ExperimentConfig {
            alpha: *alpha,
            out_dir: cfg.out_dir.join(format!("alpha_{alpha}")),
            ..cfg.clone()
        };
        let manifest = run_experiment(&sub)?;
        let m_f = manifest
            .rows
            .last()
            .map(|r| r.m_f.clone())
            .unwrap_or_default();
        let error = m_f
            .iter()
            .zip(&target)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        out.push(AlphaRow {
            alpha: *alpha,
            m_f,
            error,
            laplace: lp.value,
            laplace_gap: lp.gap,
        });
    }
    let d = cfg.dim;
    let mut header = vec!["alpha".to_string()];
    header.extend((0..d).map(|k| format!("m_f_{k}")));
    header.extend(["error", "laplace", "laplace_gap"].map(String::from));
    let bytes = write_csv(
        &header,
        out.iter().map(|r| {
            let mut v = vec![fmt(r.alpha)];
            v.extend(r.m_f.iter().map(|x| fmt(*x)));
            v.extend([fmt(r.error), fmt(r.laplace), fmt(r.laplace_gap)]);
            v
        }),
    )?;
    let path = cfg.out_dir.join("alpha_sweep.csv");
    fs::write(&path, bytes).map_err(|e| HarnessError::io(&path, e))?;
    Ok(out)
}
