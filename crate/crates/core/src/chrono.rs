//! Chronotherapy sweeps: the growth rate `lambda(eps, theta)` of a
//! multiphase model whose phase `j` receives the extra death rate
//! `eps * gamma(t + theta)`, its first-order prediction from the adjoint
//! weights, and the location of the best offset (largest `lambda`).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::periodic::PeriodicFn;
use crate::spectral::{adjoint_eigen, floquet_eigen, AdjointSolution, FloquetSolution, PowerSettings};
use crate::upwind::{AgeTail, GridSpec, MultiPhaseModel, PropagatorFamily, Therapy};

/// Default number of offsets on `[0, T)`.
pub const DEFAULT_THETA_POINTS: usize = 64;

/// Default amplitudes.
pub const DEFAULT_EPSILONS: [f64; 3] = [0.1, 0.5, 1.0];

/// Values within this distance of the maximum count as part of a plateau.
pub const PLATEAU_TOL: f64 = 1e-10;

/// Plateaus spanning more grid cells than this are reported as degenerate.
pub const MAX_PLATEAU_CELLS: usize = 3;

/// Discretisation and execution settings shared by every sweep point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSettings {
    pub n_time: usize,
    pub tail: AgeTail,
    pub power: PowerSettings,
    /// Worker threads; `0` lets the pool pick.
    pub jobs: usize,
}

impl SweepSettings {
    pub fn new(n_time: usize) -> Self {
        Self { n_time, tail: AgeTail::Absorbing, power: PowerSettings::default(), jobs: 0 }
    }
}

/// `n` uniform offsets `k T / n`.
pub fn uniform_thetas(period: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| period * k as f64 / n as f64).collect()
}

/// A sweep point whose solve failed.
#[derive(Debug, Clone, PartialEq)]
pub struct PointFailure {
    pub epsilon: f64,
    pub theta: f64,
    pub error: Error,
}

#[derive(Debug, Clone)]
pub struct ChronoSweep {
    pub phase: usize,
    pub epsilons: Vec<f64>,
    pub thetas: Vec<f64>,
    /// `lambda[e][t]`; `NaN` where the solve failed.
    pub lambda: Vec<Vec<f64>>,
    /// `lambda(0) - eps * sensitivity[t]`.
    pub first_order: Vec<Vec<f64>>,
    /// Growth rate without therapy.
    pub base_lambda: f64,
    /// `-d lambda / d eps` at `eps = 0`, i.e. `int gamma(t + theta) w_j(t) dt`.
    pub sensitivity: Vec<f64>,
    pub failures: Vec<PointFailure>,
}

impl ChronoSweep {
    pub fn converged(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn epsilon_index(&self, epsilon: f64) -> Result<usize> {
        self.epsilons
            .iter()
            .position(|&e| (e - epsilon).abs() <= 1e-12 * epsilon.abs().max(1.0))
            .ok_or(Error::EpsilonNotInSweep(epsilon))
    }
}

/// `dt sum_k gamma(t_k + theta) w_j(k)`.
pub fn sensitivity(adjoint: &AdjointSolution, gamma: &PeriodicFn, theta: f64, phase: usize) -> f64 {
    adjoint.weighted_integral(phase, |t| gamma.eval(t + theta))
}

/// `lambda - eps int gamma(t + theta) w_j(t) dt`, the linearisation of the
/// growth rate in the therapy amplitude.
pub fn first_order_prediction(
    direct: &FloquetSolution,
    adjoint: &AdjointSolution,
    gamma: &PeriodicFn,
    theta: f64,
    phase: usize,
    epsilon: f64,
) -> f64 {
    direct.lambda - epsilon * sensitivity(adjoint, gamma, theta, phase)
}

fn solve_point(
    model: &MultiPhaseModel,
    grid: GridSpec,
    therapy: Therapy,
    power: PowerSettings,
) -> Result<f64> {
    let treated = model.clone().with_therapy(therapy)?;
    let family = PropagatorFamily::new(grid, treated)?;
    Ok(floquet_eigen(&family, power)?.lambda)
}

/// Solves the model for every `(eps, theta)` with therapy on `phase`.
pub fn sweep(
    model: &MultiPhaseModel,
    gamma: &PeriodicFn,
    phase: usize,
    epsilons: &[f64],
    thetas: &[f64],
    settings: SweepSettings,
) -> Result<ChronoSweep> {
    let base_model = model.without_therapy();
    base_model.validate()?;
    if phase >= base_model.phases.len() {
        return Err(Error::PhaseOutOfRange { index: phase, phases: base_model.phases.len() });
    }
    if gamma.min_value() < 0.0 {
        return Err(Error::InvalidParameter("therapy profile must be nonnegative".into()));
    }
    if let Some(&e) = epsilons.iter().find(|e| !(e.is_finite() && **e >= 0.0)) {
        return Err(Error::InvalidParameter(format!("amplitudes must be >= 0, got {e}")));
    }
    let grid = GridSpec::for_model(&base_model, settings.n_time, settings.tail)?;
    let family = PropagatorFamily::new(grid, base_model.clone())?;
    let direct = floquet_eigen(&family, settings.power)?;
    let adjoint = adjoint_eigen(&family, &direct, settings.power)?;
    let sens: Vec<f64> = thetas.iter().map(|&th| sensitivity(&adjoint, gamma, th, phase)).collect();

    let points: Vec<(usize, usize)> =
        (0..epsilons.len()).flat_map(|e| (0..thetas.len()).map(move |t| (e, t))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(settings.jobs)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("worker pool: {e}")))?;
    let results: Vec<Result<f64>> = pool.install(|| {
        points
            .par_iter()
            .map(|&(e, t)| {
                let therapy =
                    Therapy { phase, amplitude: epsilons[e], offset: thetas[t], profile: gamma.clone() };
                solve_point(&base_model, grid, therapy, settings.power)
            })
            .collect()
    });

    let mut lambda = vec![vec![f64::NAN; thetas.len()]; epsilons.len()];
    let mut failures = Vec::new();
    for (&(e, t), r) in points.iter().zip(results) {
        match r {
            Ok(l) => lambda[e][t] = l,
            Err(error) => failures.push(PointFailure { epsilon: epsilons[e], theta: thetas[t], error }),
        }
    }
    let first_order = epsilons
        .iter()
        .map(|&eps| sens.iter().map(|s| direct.lambda - eps * s).collect())
        .collect();
    Ok(ChronoSweep {
        phase,
        epsilons: epsilons.to_vec(),
        thetas: thetas.to_vec(),
        lambda,
        first_order,
        base_lambda: direct.lambda,
        sensitivity: sens,
        failures,
    })
}

/// Best offset of one sweep row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Optimum {
    /// Refined location; the plateau midpoint when degenerate.
    pub theta: f64,
    pub index: usize,
    pub value: f64,
    pub degenerate: bool,
    /// Extent of the plateau around the maximum, cyclic on the offset grid.
    pub interval: (f64, f64),
}

/// Argmax of `values` on the cyclic grid `thetas` of period `period`.
pub fn locate_optimum_in(values: &[f64], thetas: &[f64], period: f64) -> Option<Optimum> {
    let n = values.len();
    if n == 0 || thetas.len() != n {
        return None;
    }
    let score = |i: usize| if values[i].is_nan() { f64::NEG_INFINITY } else { values[i] };
    let index = (0..n).max_by(|&a, &b| score(a).total_cmp(&score(b)))?;
    let best = score(index);
    if !best.is_finite() {
        return None;
    }
    let on_plateau = |i: usize| best - score(i) <= PLATEAU_TOL;
    let (mut left, mut right) = (0, 0);
    while left + right + 1 < n && on_plateau((index + n - left - 1) % n) {
        left += 1;
    }
    while left + right + 1 < n && on_plateau((index + right + 1) % n) {
        right += 1;
    }
    let cells = left + right + 1;
    let lo = thetas[(index + n - left) % n];
    let hi = thetas[(index + right) % n];
    if cells > MAX_PLATEAU_CELLS {
        let mut span = hi - lo;
        if span < 0.0 {
            span += period;
        }
        let mid = (lo + 0.5 * span).rem_euclid(period);
        return Some(Optimum { theta: mid, index, value: best, degenerate: true, interval: (lo, hi) });
    }
    if n < 3 {
        return Some(Optimum { theta: thetas[index], index, value: best, degenerate: false, interval: (lo, hi) });
    }
    let (im, ip) = ((index + n - 1) % n, (index + 1) % n);
    let hl = (thetas[index] - thetas[im]).rem_euclid(period);
    let hr = (thetas[ip] - thetas[index]).rem_euclid(period);
    let (ym, y0, yp) = (score(im), best, score(ip));
    let num = hl * hl * (y0 - yp) - hr * hr * (y0 - ym);
    let den = hl * (y0 - yp) + hr * (y0 - ym);
    let offset = if den.abs() > 0.0 && num.is_finite() { (-0.5 * num / den).clamp(-hl, hr) } else { 0.0 };
    let theta = (thetas[index] + offset).rem_euclid(period);
    Some(Optimum { theta, index, value: best, degenerate: false, interval: (lo, hi) })
}

/// Best offset of the row with amplitude `epsilon`.
pub fn locate_optimum(sweep: &ChronoSweep, epsilon: f64, period: f64) -> Result<Optimum> {
    let e = sweep.epsilon_index(epsilon)?;
    locate_optimum_in(&sweep.lambda[e], &sweep.thetas, period)
        .ok_or_else(|| Error::InvalidParameter(format!("no finite values in the row eps = {epsilon}")))
}
