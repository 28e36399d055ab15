use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::output::{RunReport, Table};
use super::validate::{run_validate, ValidateOptions};
use super::{ConfigError, ExperimentConfig, ExperimentError, ExperimentKind};
use crate::chrono::{locate_optimum, sweep, uniform_thetas, SweepSettings};
use crate::closed_form::{solve_geometric_one_phase, solve_perron_one_phase};
use crate::error::Error;
use crate::periodic::PeriodicFn;
use crate::spectral::{floquet_eigen, PowerSettings};
use crate::upwind::{GridSpec, OnePhaseModel, PropagatorFamily};

fn power(cfg: &ExperimentConfig) -> PowerSettings {
    PowerSettings::new(cfg.solver.tol, cfg.solver.max_iter)
}

fn provenance(cfg: &ExperimentConfig, grid: Option<&GridSpec>, started: Instant) -> Value {
    json!({
        "experiment": cfg.experiment.name(),
        "config": cfg,
        "grid": grid.map(|g| json!({
            "period": g.period,
            "n_time": g.n_time,
            "n_age": g.n_age,
            "dt": g.dt,
            "tail": g.tail,
        })),
        "solver": {"tol": cfg.solver.tol, "max_iter": cfg.solver.max_iter},
        "wall_time_s": started.elapsed().as_secs_f64(),
        "version": env!("CARGO_PKG_VERSION"),
    })
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, ExperimentError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| ExperimentError::Solver(Error::InvalidParameter(format!("worker pool: {e}"))))
}

/// Dispatches on `cfg.experiment`.
pub fn run(cfg: &ExperimentConfig, jobs: usize) -> Result<RunReport, ExperimentError> {
    match cfg.experiment {
        ExperimentKind::Floquet => run_floquet(cfg),
        ExperimentKind::Perron => run_perron(cfg),
        ExperimentKind::SweepA => run_sweep_a(cfg, jobs).map(SweepResult::into_report),
        ExperimentKind::Chrono => run_chrono(cfg, jobs),
        ExperimentKind::Validate => {
            let options = ValidateOptions { jobs, seed: cfg.seed, ..ValidateOptions::default() };
            Ok(run_validate(&options).into_report())
        }
    }
}

/// `(lambda_P, lambda_g)` of a one-phase model, shifted by the mean death rate.
fn averaged_rates(m: &OnePhaseModel) -> (Result<f64, Error>, Result<f64, Error>) {
    let death = m.death.as_ref().map_or(0.0, PeriodicFn::arithmetic_mean);
    let lp = solve_perron_one_phase(m.k0, m.a).map(|r| r.lambda - death);
    let lg = solve_geometric_one_phase(m.k0, m.a, &m.psi).map(|r| r.lambda - death);
    (lp, lg)
}

pub fn run_floquet(cfg: &ExperimentConfig) -> Result<RunReport, ExperimentError> {
    let started = Instant::now();
    let model = cfg.build_model()?;
    let grid = cfg.grid_for(&model)?;
    let family = PropagatorFamily::new(grid, model)?;
    let mut table = Table::new(&[
        "lambda_f",
        "rho",
        "iterations",
        "residual",
        "periodicity_error",
        "lambda_p",
        "lambda_g",
    ]);
    let (lp, lg) = match cfg.one_phase()? {
        Some(m) => {
            let (lp, lg) = averaged_rates(&m);
            (lp.ok(), lg.ok())
        }
        None => (None, None),
    };
    let mut summary = Vec::new();
    let converged = match floquet_eigen(&family, power(cfg)) {
        Ok(sol) => {
            summary.push(format!("lambda_F = {:.12} after {} iterations", sol.lambda, sol.iterations));
            table.push(vec![
                sol.lambda.into(),
                sol.rho.into(),
                sol.iterations.into(),
                sol.residual.into(),
                sol.periodicity_error.into(),
                lp.into(),
                lg.into(),
            ]);
            true
        }
        Err(e) => {
            summary.push(format!("floquet solve failed: {e}"));
            false
        }
    };
    let mut meta = provenance(cfg, Some(&grid), started);
    meta["converged"] = json!(converged);
    Ok(RunReport { experiment: ExperimentKind::Floquet, table, meta, converged, summary })
}

pub fn run_perron(cfg: &ExperimentConfig) -> Result<RunReport, ExperimentError> {
    let started = Instant::now();
    let m = cfg
        .one_phase()?
        .ok_or_else(|| ConfigError::invalid("model", "perron needs a one-phase model"))?;
    let mut table = Table::new(&["k0", "a", "lambda_p", "lambda_g", "residual"]);
    let residual = solve_perron_one_phase(m.k0, m.a)?.residual;
    let (lp, lg) = averaged_rates(&m);
    let lp = lp?;
    table.push(vec![m.k0.into(), m.a.into(), lp.into(), lg.as_ref().ok().copied().into(), residual.into()]);
    let mut summary = vec![format!("lambda_P = {lp:.12}")];
    if let Err(e) = &lg {
        summary.push(format!("lambda_g undefined: {e}"));
    }
    let meta = provenance(cfg, None, started);
    Ok(RunReport { experiment: ExperimentKind::Perron, table, meta, converged: true, summary })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub a: f64,
    pub lambda_f: f64,
    pub lambda_p: f64,
    pub lambda_g: f64,
    /// `ok`, or the reasons a value is missing.
    pub flags: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// Every sign change of `lambda_F - lambda_P`, linearly interpolated.
    pub crossings: Vec<f64>,
    /// The crossing nearest to the period.
    pub crossing: Option<f64>,
    pub converged: bool,
    #[serde(skip)]
    pub meta: Value,
}

impl SweepResult {
    pub fn into_report(self) -> RunReport {
        let mut table = Table::new(&["a", "lambda_f", "lambda_p", "lambda_g", "flags"]);
        for r in &self.rows {
            table.push(vec![r.a.into(), r.lambda_f.into(), r.lambda_p.into(), r.lambda_g.into(), r.flags.as_str().into()]);
        }
        let mut summary = vec![match self.crossing {
            Some(a) => format!("lambda_F - lambda_P changes sign at a = {a:.6}"),
            None => "no crossing of lambda_F and lambda_P in the window".to_string(),
        }];
        if !self.converged {
            summary.push("some sweep points failed; see flags".into());
        }
        let mut meta = self.meta;
        meta["crossings"] = json!(self.crossings);
        meta["crossing"] = json!(self.crossing);
        meta["converged"] = json!(self.converged);
        RunReport { experiment: ExperimentKind::SweepA, table, meta, converged: self.converged, summary }
    }
}

fn sign_changes(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 0..xs.len().saturating_sub(1) {
        let (y0, y1) = (ys[i], ys[i + 1]);
        if !(y0.is_finite() && y1.is_finite()) {
            continue;
        }
        if y0 == 0.0 {
            out.push(xs[i]);
        } else if y0 * y1 < 0.0 {
            out.push(xs[i] + y0 * (xs[i + 1] - xs[i]) / (y0 - y1));
        }
    }
    if ys.last() == Some(&0.0) {
        out.push(*xs.last().expect("nonempty"));
    }
    out
}

/// `lambda_F`, `lambda_P` and `lambda_g` over a range of maturation ages.
pub fn run_sweep_a(cfg: &ExperimentConfig, jobs: usize) -> Result<SweepResult, ExperimentError> {
    let started = Instant::now();
    let base = cfg
        .one_phase()?
        .ok_or_else(|| ConfigError::invalid("model", "sweep-a needs a one-phase model"))?;
    let s = &cfg.sweep;
    let ages: Vec<f64> =
        (0..s.points).map(|i| s.a_min + (s.a_max - s.a_min) * i as f64 / (s.points - 1) as f64).collect();
    let settings = power(cfg);
    let tail = cfg.grid.age_tail();
    let n_time = cfg.grid.n_time;
    let rows: Vec<SweepRow> = pool(jobs)?.install(|| {
        ages.par_iter()
            .map(|&a| {
                let m = OnePhaseModel { a, ..base.clone() };
                let mut flags = Vec::new();
                let lambda_f = m
                    .to_multi()
                    .and_then(|model| {
                        let grid = GridSpec::for_model(&model, n_time, tail)?;
                        floquet_eigen(&PropagatorFamily::new(grid, model)?, settings)
                    })
                    .map(|sol| sol.lambda)
                    .unwrap_or_else(|e| {
                        flags.push(format!("floquet: {e}"));
                        f64::NAN
                    });
                let (lp, lg) = averaged_rates(&m);
                let lambda_p = lp.unwrap_or_else(|e| {
                    flags.push(format!("perron: {e}"));
                    f64::NAN
                });
                let lambda_g = lg.unwrap_or_else(|e| {
                    flags.push(format!("geometric: {e}"));
                    f64::NAN
                });
                let flags = if flags.is_empty() { "ok".to_string() } else { flags.join("; ") };
                SweepRow { a, lambda_f, lambda_p, lambda_g, flags }
            })
            .collect()
    });
    let converged = rows.iter().all(|r| r.lambda_f.is_finite() && r.lambda_p.is_finite());
    let diff: Vec<f64> = rows.iter().map(|r| r.lambda_f - r.lambda_p).collect();
    let crossings = sign_changes(&ages, &diff);
    let period = base.psi.period();
    let crossing = crossings.iter().copied().min_by(|x, y| (x - period).abs().total_cmp(&(y - period).abs()));
    let meta = provenance(cfg, None, started);
    Ok(SweepResult { rows, crossings, crossing, converged, meta })
}

/// The `(epsilon, theta)` surface with its first-order prediction.
pub fn run_chrono(cfg: &ExperimentConfig, jobs: usize) -> Result<RunReport, ExperimentError> {
    let started = Instant::now();
    let model = cfg.build_model()?;
    let gamma = cfg.gamma()?;
    let grid = cfg.grid_for(&model)?;
    let period = model.period();
    let thetas = uniform_thetas(period, cfg.sweep.thetas);
    let settings = SweepSettings { n_time: cfg.grid.n_time, tail: cfg.grid.age_tail(), power: power(cfg), jobs };
    let phase = cfg.sweep.phase - 1;
    let result = sweep(&model, &gamma, phase, &cfg.sweep.epsilons, &thetas, settings)?;

    let mut table = Table::new(&["epsilon", "theta", "lambda", "lambda_first_order"]);
    for (e, &eps) in result.epsilons.iter().enumerate() {
        for (t, &theta) in result.thetas.iter().enumerate() {
            table.push(vec![
                eps.into(),
                theta.into(),
                result.lambda[e][t].into(),
                result.first_order[e][t].into(),
            ]);
        }
    }
    let mut summary = vec![format!("lambda without therapy = {:.12}", result.base_lambda)];
    let mut optima = Vec::new();
    for &eps in &result.epsilons {
        match locate_optimum(&result, eps, period) {
            Ok(opt) => {
                summary.push(if opt.degenerate {
                    format!("eps = {eps}: flat in theta over [{:.4}, {:.4}]", opt.interval.0, opt.interval.1)
                } else {
                    format!("eps = {eps}: best offset theta = {:.6}", opt.theta)
                });
                optima.push(json!({"epsilon": eps, "optimum": opt}));
            }
            Err(e) => optima.push(json!({"epsilon": eps, "error": e.to_string()})),
        }
    }
    let failures: Vec<Value> = result
        .failures
        .iter()
        .map(|f| json!({"epsilon": f.epsilon, "theta": f.theta, "error": f.error.to_string()}))
        .collect();
    if !failures.is_empty() {
        summary.push(format!("{} sweep points failed", failures.len()));
    }
    let mut meta = provenance(cfg, Some(&grid), started);
    meta["base_lambda"] = json!(result.base_lambda);
    meta["optima"] = json!(optima);
    meta["failures"] = json!(failures);
    meta["converged"] = json!(result.converged());
    Ok(RunReport { experiment: ExperimentKind::Chrono, table, meta, converged: result.converged(), summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::ModelConfig;

    #[test]
    fn crossings_interpolate() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(sign_changes(&xs, &[1.0, -1.0, -2.0, 2.0]), vec![0.5, 2.5]);
        assert_eq!(sign_changes(&xs, &[0.0, 1.0, 1.0, 1.0]), vec![0.0]);
        assert!(sign_changes(&xs, &[1.0, f64::NAN, -1.0, -1.0]).is_empty());
    }

    #[test]
    fn autonomous_sweep_tracks_perron() {
        let mut cfg = ExperimentConfig::new(ExperimentKind::SweepA);
        cfg.control.psi = crate::periodic::ControlSpec::new("constant", &[]);
        cfg.grid.n_time = 256;
        cfg.sweep.points = 5;
        let res = run_sweep_a(&cfg, 1).unwrap();
        assert!(res.converged);
        for r in &res.rows {
            assert!((r.lambda_f - r.lambda_p).abs() < 3e-3, "{r:?}");
            assert!((r.lambda_g - r.lambda_p).abs() < 1e-10);
        }
    }

    #[test]
    fn perron_needs_one_phase() {
        let mut cfg = ExperimentConfig::new(ExperimentKind::Perron);
        cfg.model = ModelConfig::CommutingThreePhase { k: [10.0; 3], a: [0.25, 0.5, 0.25] };
        assert!(matches!(run_perron(&cfg), Err(ExperimentError::Config(_))));
    }
}
