//! Long-time integration of the delay equation satisfied by the mature mass
//! `P(t) = int_a^inf n(t, x) dx` of the one-phase model,
//!
//! ```text
//! P'(t) = -K0 psi(t) P(t) + 2 K0 psi(t - a) P(t - a),    P = 1 on [-a, 0],
//! ```
//!
//! used as an independent estimate of the Floquet growth rate.
//!
//! The scheme is classical RK4 by the method of steps. Delayed stage values
//! come from the cubic Hermite interpolant built on the stored nodal values
//! and slopes, which is exact at nodes and fourth-order in between.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::periodic::PeriodicFn;

/// Number of trailing periods averaged by [`estimate_growth`].
pub const ESTIMATE_WINDOW: usize = 10;

/// Trajectory sampled at `t_n = n h`, `n = 0..`, with `P = 1` before `t = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdeTrajectory {
    pub step: f64,
    pub period: f64,
    pub history: Vec<f64>,
    /// `ln(P((m + 1) T) / P(m T)) / T` for each completed period `m`.
    pub growth_estimates: Vec<f64>,
}

impl DdeTrajectory {
    /// Wraps externally produced samples, computing the per-period estimates.
    pub fn from_samples(step: f64, period: f64, history: Vec<f64>) -> Result<Self> {
        let per = steps_per(step, period, "period")?;
        let periods = (history.len().saturating_sub(1)) / per;
        let growth_estimates = (0..periods)
            .map(|m| (history[(m + 1) * per] / history[m * per]).ln() / period)
            .collect();
        Ok(Self { step, period, history, growth_estimates })
    }

    pub fn time(&self, n: usize) -> f64 {
        self.step * n as f64
    }
}

/// Growth-rate estimate averaged over the trailing periods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthEstimate {
    pub rate: f64,
    /// `max - min` of the averaged per-period estimates.
    pub spread: f64,
    pub periods: usize,
}

fn steps_per(h: f64, length: f64, what: &'static str) -> Result<usize> {
    let r = length / h;
    let n = r.round();
    if n < 1.0 || (r - n).abs() > 1e-9 * n.max(1.0) {
        return Err(Error::NonCommensurate { h, what, value: length });
    }
    Ok(n as usize)
}

/// Node value and slope used for interpolating the past.
struct Past<'a> {
    h: f64,
    p: &'a [f64],
    dp: &'a [f64],
}

impl Past<'_> {
    /// Value at `t = (j + s) h`, `j` possibly negative, `0 <= s <= 1`.
    fn at(&self, j: i64, s: f64) -> f64 {
        if j < 0 {
            return 1.0;
        }
        let j = j as usize;
        if s == 0.0 {
            return self.p[j];
        }
        let (p0, p1) = (self.p[j], self.p[j + 1]);
        let (m0, m1) = (self.dp[j] * self.h, self.dp[j + 1] * self.h);
        let s2 = s * s;
        let s3 = s2 * s;
        (2.0 * s3 - 3.0 * s2 + 1.0) * p0
            + (s3 - 2.0 * s2 + s) * m0
            + (-2.0 * s3 + 3.0 * s2) * p1
            + (s3 - s2) * m1
    }
}

/// Integrates the delay equation up to `t_end` with step `h`.
///
/// `h` must divide the period. When `h` also divides `a` every delayed stage
/// falls on a node or a half-node.
pub fn integrate_dde(k0: f64, a: f64, psi: &PeriodicFn, t_end: f64, h: f64) -> Result<DdeTrajectory> {
    ensure_finite("k0", k0)?;
    ensure_finite("a", a)?;
    ensure_finite("t_end", t_end)?;
    ensure_finite("step", h)?;
    if k0 <= 0.0 || a < 0.0 || h <= 0.0 || t_end <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "need k0 > 0, a >= 0, h > 0, t_end > 0; got k0 = {k0}, a = {a}, h = {h}, t_end = {t_end}"
        )));
    }
    let period = psi.period();
    steps_per(h, period, "period")?;
    if a > 0.0 && a < h {
        return Err(Error::NonCommensurate { h, what: "maturation age", value: a });
    }
    let steps = (t_end / h).round() as usize;
    // delayed time (n + c) h - a = (n - lag + c - frac) h with integer lag
    let ratio = a / h;
    let (lag, frac) = if (ratio - ratio.round()).abs() < 1e-9 {
        (ratio.round() as i64, 0.0)
    } else {
        (ratio.floor() as i64, ratio - ratio.floor())
    };

    let mut p = Vec::with_capacity(steps + 1);
    let mut dp = Vec::with_capacity(steps + 1);
    let rhs = |t: f64, y: f64, delayed: f64| -k0 * psi.eval(t) * y + 2.0 * k0 * psi.eval(t - a) * delayed;
    let delayed_at = |p: &[f64], dp: &[f64], n: usize, c: f64| -> f64 {
        // position (n + c - lag - frac) h written as (j + s) h with s in [0, 1)
        let x = c - frac;
        let base = n as i64 - lag + x.floor() as i64;
        let s = x - x.floor();
        Past { h, p, dp }.at(base, s)
    };

    p.push(1.0);
    dp.push(rhs(0.0, 1.0, 1.0));
    for n in 0..steps {
        let t = h * n as f64;
        let y = p[n];
        if lag == 0 && frac == 0.0 {
            // no delay: an ordinary equation
            let f = |t: f64, y: f64| rhs(t, y, y);
            let k1 = f(t, y);
            let k2 = f(t + 0.5 * h, y + 0.5 * h * k1);
            let k3 = f(t + 0.5 * h, y + 0.5 * h * k2);
            let k4 = f(t + h, y + h * k3);
            p.push(y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
        } else {
            let d_start = delayed_at(&p, &dp, n, 0.0);
            let d_mid = delayed_at(&p, &dp, n, 0.5);
            let d_end = delayed_at(&p, &dp, n, 1.0);
            let k1 = rhs(t, y, d_start);
            let k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1, d_mid);
            let k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2, d_mid);
            let k4 = rhs(t + h, y + h * k3, d_end);
            p.push(y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
        }
        let next = p[n + 1];
        if !(next.is_finite() && next > 0.0) {
            return Err(Error::NegativeSolution { t: t + h, value: next });
        }
        let delayed = if lag == 0 && frac == 0.0 { next } else { delayed_at(&p, &dp, n + 1, 0.0) };
        dp.push(rhs(t + h, next, delayed));
    }
    DdeTrajectory::from_samples(h, period, p)
}

/// Mean and spread of the last [`ESTIMATE_WINDOW`] per-period estimates after
/// discarding `burn_in` periods.
pub fn estimate_growth(traj: &DdeTrajectory, burn_in: usize) -> Result<GrowthEstimate> {
    let available = traj.growth_estimates.len().saturating_sub(burn_in);
    if available < ESTIMATE_WINDOW {
        return Err(Error::InsufficientPeriods { available, needed: ESTIMATE_WINDOW });
    }
    let tail = &traj.growth_estimates[traj.growth_estimates.len() - ESTIMATE_WINDOW..];
    let rate = tail.iter().sum::<f64>() / ESTIMATE_WINDOW as f64;
    let max = tail.iter().cloned().fold(f64::MIN, f64::max);
    let min = tail.iter().cloned().fold(f64::MAX, f64::min);
    Ok(GrowthEstimate { rate, spread: max - min, periods: ESTIMATE_WINDOW })
}
