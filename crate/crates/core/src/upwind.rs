//! Upwind (CFL = 1) discretisation of the one-phase and multiphase renewal
//! equations and the matrix-free one-step propagators `M_k`.
//!
//! On the lattice `dt = dx = T / N_T` a phase with division rate
//! `kappa_i = K chi_[a, inf)(i dx)` evolves as
//!
//! ```text
//! n_i^{k+1} = s^{k+1} n_{i-1}^k / (1 + dt kappa_i psi^{k+1}),   1 <= i <= I
//! n_0^{k+1} = s^{k+1} c psi^k sum_i kappa_i n_i^k dt             (fed by the previous phase)
//! ```
//!
//! with `c = 2` at the division that closes the cycle and `c = 1` otherwise,
//! and `s^{k+1} = exp(-dt delta^{k+1})` the survival factor of the phase's
//! death rate `delta` (apoptosis plus therapy). With `delta = 0` this is the
//! classical scheme. Putting the division loss in the implicit denominator
//! and the death rate in a multiplicative factor keeps every entry
//! nonnegative. It also makes an age-independent death rate on a single
//! phase factor out of the monodromy exactly.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::periodic::PeriodicFn;

/// Default number of decay lengths `1 / K_min` kept beyond the oldest
/// maturation age by a truncated tail.
pub const DEFAULT_C_TAIL: f64 = 30.0;

/// How the oldest age cell is treated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum AgeTail {
    /// The last cell collects every age beyond `I dx`. Because the division
    /// rate no longer depends on age past maturation, this equals the
    /// untruncated scheme.
    Absorbing,
    /// Cells leaving `I dx` are lost; `I` is sized so that
    /// `X_max >= a_max + c_tail / K_min`.
    Truncated { c_tail: f64 },
}

impl Default for AgeTail {
    fn default() -> Self {
        AgeTail::Absorbing
    }
}

/// The `dt = dx = T / N_T` lattice, ages `0..=n_age`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub period: f64,
    pub n_time: usize,
    pub n_age: usize,
    pub dt: f64,
    pub tail: AgeTail,
}

impl GridSpec {
    pub fn new(period: f64, n_time: usize, n_age: usize, tail: AgeTail) -> Result<Self> {
        ensure_finite("period", period)?;
        if period <= 0.0 || n_time == 0 {
            return Err(Error::InvalidGrid(format!(
                "need a positive period and time steps, got T = {period}, N_T = {n_time}"
            )));
        }
        if n_age + 1 <= n_time {
            return Err(Error::InvalidGrid(format!(
                "primitivity needs I + 1 > N_T, got I = {n_age}, N_T = {n_time}"
            )));
        }
        if let AgeTail::Truncated { c_tail } = tail {
            if !(c_tail.is_finite() && c_tail >= 0.0) {
                return Err(Error::InvalidGrid(format!("c_tail must be >= 0, got {c_tail}")));
            }
        }
        Ok(Self { period, n_time, n_age, dt: period / n_time as f64, tail })
    }

    /// Smallest admissible grid for `model` with `n_time` steps per period.
    pub fn for_model(model: &MultiPhaseModel, n_time: usize, tail: AgeTail) -> Result<Self> {
        let period = model.period();
        if n_time == 0 {
            return Err(Error::InvalidGrid("N_T must be positive".into()));
        }
        let dt = period / n_time as f64;
        let a_max = model.max_maturation();
        let k_min = model.phases.iter().map(|p| p.rate).fold(f64::INFINITY, f64::min);
        let mut cells = (a_max / dt - 1e-9).ceil().max(0.0) as usize + 2;
        if let AgeTail::Truncated { c_tail } = tail {
            let x_max = a_max + c_tail / k_min;
            cells = cells.max((x_max / dt - 1e-9).ceil() as usize);
        }
        Self::new(period, n_time, cells.max(n_time), tail)
    }

    /// Number of cells per phase (`I + 1`).
    pub fn cells(&self) -> usize {
        self.n_age + 1
    }

    /// `t_k = k T / N_T`.
    pub fn time(&self, k: usize) -> f64 {
        self.period * k as f64 / self.n_time as f64
    }

    /// First age index `i` with `i dx >= a`.
    pub fn maturation_index(&self, a: f64) -> usize {
        (a / self.dt - 1e-9).ceil().max(0.0) as usize
    }
}

/// One phase of the cell cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct Phase {
    /// Transition (division) rate `K_i`.
    pub rate: f64,
    /// Minimal age `a_i` before the transition can happen.
    pub maturation: f64,
    /// Periodic control `psi_i` of the transition rate.
    pub control: PeriodicFn,
    /// Age-independent death rates, summed.
    pub deaths: Vec<PeriodicFn>,
}

impl Phase {
    pub fn new(rate: f64, maturation: f64, control: PeriodicFn) -> Self {
        Self { rate, maturation, control, deaths: Vec::new() }
    }

    pub fn with_death(mut self, death: PeriodicFn) -> Self {
        self.deaths.push(death);
        self
    }
}

/// Drug-induced extra death rate `amplitude * profile(t + offset)` on one phase.
#[derive(Debug, Clone, PartialEq)]
pub struct Therapy {
    /// Zero-based phase index.
    pub phase: usize,
    pub amplitude: f64,
    pub offset: f64,
    pub profile: PeriodicFn,
}

/// Cyclic chain of phases; the last transition divides the cell in two.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiPhaseModel {
    pub phases: Vec<Phase>,
    pub therapy: Option<Therapy>,
}

impl MultiPhaseModel {
    pub fn new(phases: Vec<Phase>) -> Result<Self> {
        let model = Self { phases, therapy: None };
        model.validate()?;
        Ok(model)
    }

    /// Three phases with the shifted controls `psi`, `psi(. - a_2)`,
    /// `psi(. - a_2 - a_3)` for which the eigenproblem has a closed form.
    pub fn commuting_three_phase(k: [f64; 3], a: [f64; 3], psi: &PeriodicFn) -> Result<Self> {
        let shifts = [0.0, -a[1], -(a[1] + a[2])];
        let phases = (0..3).map(|i| Phase::new(k[i], a[i], psi.shifted(shifts[i]))).collect();
        Self::new(phases)
    }

    pub fn with_therapy(mut self, therapy: Therapy) -> Result<Self> {
        self.therapy = Some(therapy);
        self.validate()?;
        Ok(self)
    }

    pub fn without_therapy(&self) -> Self {
        Self { phases: self.phases.clone(), therapy: None }
    }

    pub fn period(&self) -> f64 {
        self.phases[0].control.period()
    }

    pub fn max_maturation(&self) -> f64 {
        self.phases.iter().map(|p| p.maturation).fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        if self.phases.is_empty() {
            return Err(Error::InvalidParameter("model needs at least one phase".into()));
        }
        let period = self.period();
        for (i, p) in self.phases.iter().enumerate() {
            ensure_finite("rate", p.rate)?;
            ensure_finite("maturation age", p.maturation)?;
            if p.rate <= 0.0 {
                return Err(Error::InvalidParameter(format!("phase {i}: rate must be positive")));
            }
            if p.maturation < 0.0 {
                return Err(Error::InvalidParameter(format!("phase {i}: maturation age must be >= 0")));
            }
            let same_period = |f: &PeriodicFn| (f.period() - period).abs() <= 1e-12 * period;
            if !same_period(&p.control) || !p.deaths.iter().all(same_period) {
                return Err(Error::InvalidParameter(format!(
                    "phase {i}: all controls must share the period {period}"
                )));
            }
        }
        if let Some(th) = &self.therapy {
            if th.phase >= self.phases.len() {
                return Err(Error::PhaseOutOfRange { index: th.phase, phases: self.phases.len() });
            }
            ensure_finite("therapy amplitude", th.amplitude)?;
            ensure_finite("therapy offset", th.offset)?;
            if (th.profile.period() - period).abs() > 1e-12 * period {
                return Err(Error::InvalidParameter("therapy profile period differs from model".into()));
            }
        }
        Ok(())
    }

    /// Total death rate of phase `index` at time `t`.
    pub fn death_rate(&self, index: usize, t: f64) -> f64 {
        let p = &self.phases[index];
        let mut d: f64 = p.deaths.iter().map(|f| f.eval(t)).sum();
        if let Some(th) = &self.therapy {
            if th.phase == index {
                d += th.amplitude * th.profile.eval(t + th.offset);
            }
        }
        d
    }
}

/// The one-phase division model
/// `d_t n + d_x n + (d + K0 psi chi_[a, inf)) n = 0`, `n(t, 0) = 2 K0 psi int_a n`.
#[derive(Debug, Clone, PartialEq)]
pub struct OnePhaseModel {
    pub k0: f64,
    pub a: f64,
    pub psi: PeriodicFn,
    pub death: Option<PeriodicFn>,
}

impl OnePhaseModel {
    pub fn new(k0: f64, a: f64, psi: PeriodicFn) -> Self {
        Self { k0, a, psi, death: None }
    }

    pub fn to_multi(&self) -> Result<MultiPhaseModel> {
        let mut phase = Phase::new(self.k0, self.a, self.psi.clone());
        if let Some(d) = &self.death {
            phase = phase.with_death(d.clone());
        }
        MultiPhaseModel::new(vec![phase])
    }
}

/// Nonnegative state `n_{p,i}`, phase-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    phases: usize,
    cells: usize,
    values: Vec<f64>,
}

impl StateVector {
    pub fn zeros(phases: usize, cells: usize) -> Self {
        Self { phases, cells, values: vec![0.0; phases * cells] }
    }

    /// Uniform vector with unit l1 norm.
    pub fn uniform(phases: usize, cells: usize) -> Self {
        let n = phases * cells;
        Self { phases, cells, values: vec![1.0 / n as f64; n] }
    }

    pub fn from_values(phases: usize, cells: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != phases * cells {
            return Err(Error::DimensionMismatch { expected: phases * cells, got: values.len() });
        }
        Ok(Self { phases, cells, values })
    }

    pub fn phases(&self) -> usize {
        self.phases
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn phase(&self, p: usize) -> &[f64] {
        &self.values[p * self.cells..(p + 1) * self.cells]
    }

    pub fn phase_mut(&mut self, p: usize) -> &mut [f64] {
        &mut self.values[p * self.cells..(p + 1) * self.cells]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub fn scale(&mut self, c: f64) {
        self.values.iter_mut().for_each(|v| *v *= c);
    }

    pub fn is_nonnegative(&self) -> bool {
        self.values.iter().all(|v| v.is_finite() && *v >= 0.0)
    }

    pub fn l1_distance(&self, other: &Self) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).sum()
    }
}

#[derive(Debug, Clone)]
struct PhaseCoefficients {
    mature: usize,
    // indexed by step k; `birth[k]` uses psi at level k, survivals at level k + 1
    birth: Vec<f64>,
    survive_young: Vec<f64>,
    survive_old: Vec<f64>,
}

/// The `N_T`-periodic family of one-step propagators `M_k` of a model on a grid.
#[derive(Debug, Clone)]
pub struct PropagatorFamily {
    grid: GridSpec,
    model: MultiPhaseModel,
    coeffs: Vec<PhaseCoefficients>,
}

impl PropagatorFamily {
    pub fn new(grid: GridSpec, model: MultiPhaseModel) -> Result<Self> {
        model.validate()?;
        if (model.period() - grid.period).abs() > 1e-12 * grid.period {
            return Err(Error::InvalidGrid(format!(
                "grid period {} differs from model period {}",
                grid.period,
                model.period()
            )));
        }
        let max_a = model.max_maturation();
        let dt = grid.dt;
        if (grid.n_age as f64) * dt < max_a + 2.0 * dt - 1e-9 * dt {
            return Err(Error::InvalidGrid(format!(
                "I dt = {} must be at least a_max + 2 dt = {}",
                grid.n_age as f64 * dt,
                max_a + 2.0 * dt
            )));
        }
        let nph = model.phases.len();
        let n = grid.n_time;
        let mut coeffs = Vec::with_capacity(nph);
        for (idx, phase) in model.phases.iter().enumerate() {
            let factor = if idx + 1 == nph { 2.0 } else { 1.0 };
            let mut birth = Vec::with_capacity(n);
            let mut young = Vec::with_capacity(n);
            let mut old = Vec::with_capacity(n);
            for k in 0..n {
                let t_now = grid.time(k);
                let t_next = grid.time(k + 1);
                birth.push(factor * phase.control.eval(t_now) * phase.rate * dt);
                let s = (-dt * model.death_rate(idx, t_next)).exp();
                young.push(s);
                old.push(s / (1.0 + dt * phase.rate * phase.control.eval(t_next)));
            }
            coeffs.push(PhaseCoefficients {
                mature: grid.maturation_index(phase.maturation),
                birth,
                survive_young: young,
                survive_old: old,
            });
        }
        Ok(Self { grid, model, coeffs })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn model(&self) -> &MultiPhaseModel {
        &self.model
    }

    pub fn phases(&self) -> usize {
        self.coeffs.len()
    }

    pub fn cells(&self) -> usize {
        self.grid.cells()
    }

    /// First mature age index of each phase.
    pub fn maturation_indices(&self) -> Vec<usize> {
        self.coeffs.iter().map(|c| c.mature).collect()
    }

    pub fn zero_state(&self) -> StateVector {
        StateVector::zeros(self.phases(), self.cells())
    }

    pub fn uniform_state(&self) -> StateVector {
        StateVector::uniform(self.phases(), self.cells())
    }

    fn check_dims(&self, v: &StateVector) -> Result<()> {
        let expected = self.phases() * self.cells();
        if v.phases != self.phases() || v.cells != self.cells() {
            return Err(Error::DimensionMismatch { expected, got: v.len() });
        }
        Ok(())
    }

    /// `out = M_k v`; `k` is taken modulo `N_T`.
    pub fn step_into(&self, k: usize, v: &StateVector, out: &mut StateVector) -> Result<()> {
        self.check_dims(v)?;
        self.check_dims(out)?;
        self.step_raw(k % self.grid.n_time, v.as_slice(), out.as_mut_slice());
        Ok(())
    }

    pub fn step(&self, k: usize, v: &StateVector) -> Result<StateVector> {
        let mut out = self.zero_state();
        self.step_into(k, v, &mut out)?;
        Ok(out)
    }

    /// `out = M_k^T u`.
    pub fn step_adjoint_into(&self, k: usize, u: &StateVector, out: &mut StateVector) -> Result<()> {
        self.check_dims(u)?;
        self.check_dims(out)?;
        self.step_adjoint_raw(k % self.grid.n_time, u.as_slice(), out.as_mut_slice());
        Ok(())
    }

    pub fn step_adjoint(&self, k: usize, u: &StateVector) -> Result<StateVector> {
        let mut out = self.zero_state();
        self.step_adjoint_into(k, u, &mut out)?;
        Ok(out)
    }

    fn step_raw(&self, k: usize, v: &[f64], w: &mut [f64]) {
        let cells = self.cells();
        let last = cells - 1;
        let nph = self.phases();
        let absorbing = matches!(self.grid.tail, AgeTail::Absorbing);
        for (p, c) in self.coeffs.iter().enumerate() {
            let src = &v[p * cells..(p + 1) * cells];
            let dst = &mut w[p * cells..(p + 1) * cells];
            let (sy, so) = (c.survive_young[k], c.survive_old[k]);
            let m = c.mature.clamp(1, cells);
            for (d, s) in dst[1..m].iter_mut().zip(&src[..m - 1]) {
                *d = s * sy;
            }
            for (d, s) in dst[m.max(1)..].iter_mut().zip(&src[m - 1..last]) {
                *d = s * so;
            }
            if absorbing {
                dst[last] += src[last] * so;
            }
        }
        for (p, c) in self.coeffs.iter().enumerate() {
            let src = &v[p * cells..(p + 1) * cells];
            let mature: f64 = src[c.mature.min(cells)..].iter().sum();
            let q = (p + 1) % nph;
            w[q * cells] = c.birth[k] * mature * self.coeffs[q].survive_young[k];
        }
    }

    fn step_adjoint_raw(&self, k: usize, u: &[f64], v: &mut [f64]) {
        let cells = self.cells();
        let last = cells - 1;
        let nph = self.phases();
        let absorbing = matches!(self.grid.tail, AgeTail::Absorbing);
        for (p, c) in self.coeffs.iter().enumerate() {
            let src = &u[p * cells..(p + 1) * cells];
            let dst = &mut v[p * cells..(p + 1) * cells];
            let (sy, so) = (c.survive_young[k], c.survive_old[k]);
            let m = c.mature.clamp(1, cells);
            // v_i = s_{i+1} u_{i+1}
            for (d, s) in dst[..m - 1].iter_mut().zip(&src[1..m]) {
                *d = s * sy;
            }
            for (d, s) in dst[m - 1..last].iter_mut().zip(&src[m.max(1)..]) {
                *d = s * so;
            }
            dst[last] = if absorbing { src[last] * so } else { 0.0 };
        }
        for (p, c) in self.coeffs.iter().enumerate() {
            let q = (p + 1) % nph;
            let gain = c.birth[k] * self.coeffs[q].survive_young[k] * u[q * cells];
            if gain != 0.0 {
                for d in &mut v[p * cells + c.mature.min(cells)..(p + 1) * cells] {
                    *d += gain;
                }
            }
        }
    }

    fn require_positive_input(&self, v: &StateVector) -> Result<()> {
        self.check_dims(v)?;
        if !v.is_nonnegative() || v.l1_norm() == 0.0 {
            return Err(Error::ZeroState);
        }
        Ok(())
    }

    /// `M_{N_T - 1} ... M_1 M_0 v`.
    pub fn monodromy_apply(&self, v: &StateVector) -> Result<StateVector> {
        self.require_positive_input(v)?;
        Ok(self.monodromy_unchecked(v))
    }

    pub(crate) fn monodromy_unchecked(&self, v: &StateVector) -> StateVector {
        let mut a = v.clone();
        let mut b = self.zero_state();
        for k in 0..self.grid.n_time {
            self.step_raw(k, a.as_slice(), b.as_mut_slice());
            std::mem::swap(&mut a, &mut b);
        }
        a
    }

    /// `M_0^T M_1^T ... M_{N_T - 1}^T w`.
    pub fn monodromy_apply_adjoint(&self, w: &StateVector) -> Result<StateVector> {
        self.require_positive_input(w)?;
        Ok(self.monodromy_adjoint_unchecked(w))
    }

    pub(crate) fn monodromy_adjoint_unchecked(&self, w: &StateVector) -> StateVector {
        let mut a = w.clone();
        let mut b = self.zero_state();
        for k in (0..self.grid.n_time).rev() {
            self.step_adjoint_raw(k, a.as_slice(), b.as_mut_slice());
            std::mem::swap(&mut a, &mut b);
        }
        a
    }

    /// `sum_{i dx >= a_p} v_{p,i} dx` for each phase.
    pub fn mature_mass(&self, v: &StateVector) -> Vec<f64> {
        let dx = self.grid.dt;
        self.coeffs
            .iter()
            .enumerate()
            .map(|(p, c)| v.phase(p)[c.mature.min(self.cells())..].iter().sum::<f64>() * dx)
            .collect()
    }
}
