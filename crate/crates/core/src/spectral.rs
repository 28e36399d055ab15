//! Power iteration on the monodromy operator: Floquet eigenvalue, periodic
//! eigenfunction, adjoint eigenfunction and the phase weights
//! `w_j(k) = dx sum_i N_{j,i}^k phi_{j,i}^k`.
//!
//! Eigenfunction sequences are never stored whole. They are rebuilt on demand
//! from the Perron vector through `N^{k+1} = exp(-lambda dt) M_k N^k`, and the
//! weights use checkpointed recomputation to stay within `O(sqrt(N_T))` states.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::periodic::PeriodicFn;
use crate::upwind::{PropagatorFamily, StateVector};

pub const DEFAULT_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_ITER: usize = 100_000;

/// Spread of the trailing ratios above which a stalled iteration is
/// reported as non-primitive rather than slow.
const OSCILLATION_SPREAD: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSettings {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PowerSettings {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, max_iter: DEFAULT_MAX_ITER }
    }
}

impl PowerSettings {
    pub fn new(tol: f64, max_iter: usize) -> Self {
        Self { tol, max_iter }
    }
}

#[derive(Debug, Clone)]
struct PowerOutcome {
    vector: StateVector,
    rho: f64,
    iterations: usize,
    residual: f64,
}

fn power_iterate(
    family: &PropagatorFamily,
    settings: PowerSettings,
    apply: impl Fn(&StateVector) -> StateVector,
) -> Result<PowerOutcome> {
    let mut v = family.uniform_state();
    let mut ratios: Vec<f64> = Vec::new();
    let mut residual = f64::INFINITY;
    for it in 1..=settings.max_iter.max(1) {
        let mut w = apply(&v);
        let r = w.l1_norm();
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::ZeroState);
        }
        w.scale(1.0 / r);
        residual = w.l1_distance(&v);
        v = w;
        ratios.push(r);
        if ratios.len() > 8 {
            ratios.remove(0);
        }
        if residual < settings.tol && it >= 3 {
            let tail = &ratios[ratios.len() - 3..];
            let rho = tail.iter().sum::<f64>() / 3.0;
            return Ok(PowerOutcome { vector: v, rho, iterations: it, residual });
        }
    }
    let max = ratios.iter().cloned().fold(f64::MIN, f64::max);
    let min = ratios.iter().cloned().fold(f64::MAX, f64::min);
    let spread = (max - min) / (0.5 * (max + min));
    if ratios.len() >= 4 && spread > OSCILLATION_SPREAD {
        Err(Error::NonPrimitive { spread })
    } else {
        Err(Error::NotConverged { iterations: settings.max_iter, residual })
    }
}

/// Converged Floquet eigen-solution on a grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FloquetSolution {
    pub lambda: f64,
    pub rho: f64,
    /// `N^0`, normalized so that its entries sum to one.
    pub perron: StateVector,
    pub iterations: usize,
    pub residual: f64,
    /// `|| N^{N_T} - N^0 ||_1` after the `exp(-lambda k dt)` rescaling.
    pub periodicity_error: f64,
    pub period: f64,
    pub dt: f64,
    /// `dx sum_{i dx >= a_p} N_{p,i}^k` for `k = 0..=N_T`, per phase.
    pub mature_mass: Vec<Vec<f64>>,
    /// `N_{p,0}^k` for `k = 0..=N_T`, per phase.
    pub newborn: Vec<Vec<f64>>,
}

impl FloquetSolution {
    /// Iterator over `N^0, N^1, ..., N^{N_T}`.
    pub fn eigenfunction<'a>(&self, family: &'a PropagatorFamily) -> EigenfunctionIter<'a> {
        EigenfunctionIter {
            family,
            current: Some(self.perron.clone()),
            k: 0,
            decay: (-self.lambda * family.grid().dt).exp(),
        }
    }

    /// The full sequence `N^0..=N^{N_T}`; memory is `O(N_T I)`.
    pub fn eigenfunction_sequence(&self, family: &PropagatorFamily) -> Vec<StateVector> {
        self.eigenfunction(family).collect()
    }
}

pub struct EigenfunctionIter<'a> {
    family: &'a PropagatorFamily,
    current: Option<StateVector>,
    k: usize,
    decay: f64,
}

impl Iterator for EigenfunctionIter<'_> {
    type Item = StateVector;

    fn next(&mut self) -> Option<StateVector> {
        let cur = self.current.take()?;
        if self.k < self.family.grid().n_time {
            let mut next = self.family.zero_state();
            self.family.step_into(self.k, &cur, &mut next).ok()?;
            next.scale(self.decay);
            self.current = Some(next);
        }
        self.k += 1;
        Some(cur)
    }
}

/// Dominant Floquet eigenvalue and eigenfunction by power iteration on `M`.
pub fn floquet_eigen(family: &PropagatorFamily, settings: PowerSettings) -> Result<FloquetSolution> {
    let grid = *family.grid();
    let out = power_iterate(family, settings, |v| family.monodromy_unchecked(v))?;
    let lambda = out.rho.ln() / grid.period;
    let mut perron = out.vector;
    perron.scale(1.0 / perron.as_slice().iter().sum::<f64>());

    let nph = family.phases();
    let mut mature_mass = vec![Vec::with_capacity(grid.n_time + 1); nph];
    let mut newborn = vec![Vec::with_capacity(grid.n_time + 1); nph];
    let mut last = perron.clone();
    let states = EigenfunctionIter {
        family,
        current: Some(perron.clone()),
        k: 0,
        decay: (-lambda * grid.dt).exp(),
    };
    for (k, state) in states.enumerate() {
        for (p, m) in family.mature_mass(&state).into_iter().enumerate() {
            mature_mass[p].push(m);
            newborn[p].push(state.phase(p)[0]);
        }
        if k == grid.n_time {
            last = state;
        }
    }
    let periodicity_error = last.l1_distance(&perron);
    Ok(FloquetSolution {
        lambda,
        rho: out.rho,
        perron,
        iterations: out.iterations,
        residual: out.residual,
        periodicity_error,
        period: grid.period,
        dt: grid.dt,
        mature_mass,
        newborn,
    })
}

/// Adjoint eigen-solution paired with a direct one.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdjointSolution {
    pub rho: f64,
    pub iterations: usize,
    pub residual: f64,
    /// `phi^0`, scaled so that `dt sum_k sum_j w_j(k) = 1`.
    pub phi: StateVector,
    /// `w_j(k)` for `k = 0..N_T - 1`, indexed `[phase][k]`.
    pub weights: Vec<Vec<f64>>,
    pub dt: f64,
    pub period: f64,
}

impl AdjointSolution {
    /// `dt sum_k g(t_k) w_j(k)`, the discrete `int_0^T g(t) w_j(t) dt`.
    pub fn weighted_integral(&self, phase: usize, g: impl Fn(f64) -> f64) -> f64 {
        self.weights[phase]
            .iter()
            .enumerate()
            .map(|(k, w)| g(self.dt * k as f64) * w)
            .sum::<f64>()
            * self.dt
    }

    /// The sequence `phi^0..=phi^{N_T}` reconstructed backward in time.
    pub fn phi_sequence(&self, family: &PropagatorFamily, lambda: f64) -> Vec<StateVector> {
        let n = family.grid().n_time;
        let decay = (-lambda * family.grid().dt).exp();
        let mut out = vec![self.phi.clone()];
        let mut cur = self.phi.clone();
        for k in (0..n).rev() {
            let mut prev = family.zero_state();
            family.step_adjoint_into(k, &cur, &mut prev).expect("dimensions match");
            prev.scale(decay);
            out.push(prev.clone());
            cur = prev;
        }
        out.reverse();
        out
    }
}

/// Adjoint Perron vector of `M^T` and the per-phase weights `w_j(k)`.
pub fn adjoint_eigen(
    family: &PropagatorFamily,
    direct: &FloquetSolution,
    settings: PowerSettings,
) -> Result<AdjointSolution> {
    let grid = *family.grid();
    let out = power_iterate(family, settings, |v| family.monodromy_adjoint_unchecked(v))?;
    if (out.rho - direct.rho).abs() > 10.0 * settings.tol * direct.rho.max(1.0) {
        return Err(Error::AdjointMismatch { direct: direct.rho, adjoint: out.rho });
    }
    let n = grid.n_time;
    let nph = family.phases();
    let dx = grid.dt;
    let decay = (-direct.lambda * grid.dt).exp();
    let block = (n as f64).sqrt().ceil().max(1.0) as usize;

    let mut checkpoints = Vec::with_capacity(n / block + 1);
    let mut cur = direct.perron.clone();
    let mut scratch = family.zero_state();
    for k in 0..n {
        if k % block == 0 {
            checkpoints.push(cur.clone());
        }
        family.step_into(k, &cur, &mut scratch)?;
        scratch.scale(decay);
        std::mem::swap(&mut cur, &mut scratch);
    }

    let mut weights = vec![vec![0.0; n]; nph];
    let mut phi = out.vector.clone();
    let mut prev = family.zero_state();
    for (b, start_state) in checkpoints.iter().enumerate().rev() {
        let start = b * block;
        let end = (start + block).min(n);
        let mut states = Vec::with_capacity(end - start);
        states.push(start_state.clone());
        for k in start..end - 1 {
            let mut next = family.zero_state();
            family.step_into(k, states.last().expect("nonempty"), &mut next)?;
            next.scale(decay);
            states.push(next);
        }
        for k in (start..end).rev() {
            family.step_adjoint_into(k, &phi, &mut prev)?;
            prev.scale(decay);
            std::mem::swap(&mut phi, &mut prev);
            let state = &states[k - start];
            for (p, w) in weights.iter_mut().enumerate() {
                w[k] = dx * state.phase(p).iter().zip(phi.phase(p)).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }

    let total: f64 = weights.iter().flatten().sum::<f64>() * grid.dt;
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::ZeroState);
    }
    weights.iter_mut().flatten().for_each(|w| *w /= total);
    phi.scale(1.0 / total);
    Ok(AdjointSolution {
        rho: out.rho,
        iterations: out.iterations,
        residual: out.residual,
        phi,
        weights,
        dt: grid.dt,
        period: grid.period,
    })
}

/// Solves a one-phase family with and without the extra death rate `gamma`.
pub fn gauge_shift(
    family: &PropagatorFamily,
    gamma: &PeriodicFn,
    settings: PowerSettings,
) -> Result<(FloquetSolution, FloquetSolution)> {
    if family.phases() != 1 {
        return Err(Error::NotOnePhase(family.phases()));
    }
    let base = floquet_eigen(family, settings)?;
    let mut model = family.model().clone();
    model.phases[0].deaths.push(gamma.clone());
    let shifted = PropagatorFamily::new(*family.grid(), model)?;
    Ok((base, floquet_eigen(&shifted, settings)?))
}
