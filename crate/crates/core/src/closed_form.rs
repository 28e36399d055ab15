//! Closed-form growth rates and the analytic eigenelements of the commuting
//! three-phase model.
//!
//! All transcendental equations handled here are monotone on their search
//! bracket, so they are solved by bisection followed by a short Newton polish
//! on the logarithmic form of the equation.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::periodic::PeriodicFn;

const BISECTION_WIDTH: f64 = 1e-8;
const NEWTON_STEPS: usize = 3;
const SENSITIVITY_NODES: usize = 1 << 14;

/// Root of a one-phase characteristic equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerronResult {
    pub lambda: f64,
    /// `|(lambda + K0)/(2 K0) e^(lambda a) - rhs|` at the returned root.
    pub residual: f64,
    pub iterations: usize,
}

/// Finds the root of an increasing function on `(lo, inf)` with `f(lo) < 0`.
fn increasing_root(
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64) -> f64,
    lo: f64,
    first_hi: f64,
) -> Result<(f64, usize)> {
    let mut lo = lo;
    let mut hi = first_hi.max(lo + 1.0);
    let mut iterations = 0;
    if !(f(lo) < 0.0) {
        return Err(Error::NoBracket { lo, hi });
    }
    while f(hi) <= 0.0 {
        hi = lo + 2.0 * (hi - lo);
        iterations += 1;
        if iterations > 200 || !hi.is_finite() {
            return Err(Error::NoBracket { lo, hi });
        }
    }
    while hi - lo > BISECTION_WIDTH {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..NEWTON_STEPS {
        let d = df(x);
        if !(d.is_finite() && d > 0.0) {
            break;
        }
        let next = x - f(x) / d;
        // Stay inside the bracket; Newton from a 1e-8 bracket is already quadratic.
        if next.is_finite() && next >= lo - BISECTION_WIDTH && next <= hi + BISECTION_WIDTH {
            x = next;
        }
        iterations += 1;
    }
    Ok((x, iterations))
}

fn solve_one_phase(k0: f64, a: f64, rhs: f64) -> Result<PerronResult> {
    ensure_finite("K0", k0)?;
    ensure_finite("maturation age", a)?;
    if k0 <= 0.0 {
        return Err(Error::InvalidParameter(format!("K0 must be positive, got {k0}")));
    }
    if a < 0.0 {
        return Err(Error::InvalidParameter(format!("maturation age must be >= 0, got {a}")));
    }
    let log_target = (2.0 * k0 * rhs).ln();
    let f = |l: f64| (l + k0).ln() + l * a - log_target;
    let df = |l: f64| 1.0 / (l + k0) + a;
    let (lambda, iterations) = increasing_root(f, df, -k0 + 1e-12, k0.max(1.0))?;
    let residual = ((lambda + k0) / (2.0 * k0) * (lambda * a).exp() - rhs).abs();
    Ok(PerronResult { lambda, residual, iterations })
}

/// Perron growth rate of the one-phase model: `(lambda + K0) e^(lambda a) = 2 K0`.
pub fn solve_perron_one_phase(k0: f64, a: f64) -> Result<PerronResult> {
    solve_one_phase(k0, a, 1.0)
}

/// Growth rate with the birth rate replaced by its geometric time average:
/// `(lambda + K0) e^(lambda a) = 2 K0 <psi>_g`.
pub fn solve_geometric_one_phase(k0: f64, a: f64, psi: &PeriodicFn) -> Result<PerronResult> {
    if !psi.is_strictly_positive() {
        return Err(Error::NotPositive { t: f64::NAN, value: psi.min_value() });
    }
    let g = psi.geometric_mean()?;
    solve_one_phase(k0, a, g)
}

/// Slope `d lambda_P / d a` at `a = T`.
pub fn perron_slope_at_t(k0: f64, period: f64) -> Result<f64> {
    let lp = solve_perron_one_phase(k0, period)?.lambda;
    Ok(-lp / slope_denominator(k0, period, lp))
}

fn slope_denominator(k0: f64, period: f64, lambda_p: f64) -> f64 {
    period + (lambda_p * period).exp() / (2.0 * k0)
}

fn require_unit_mean(psi: &PeriodicFn) -> Result<()> {
    let m = psi.arithmetic_mean();
    if (m - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidParameter(format!("control mean must be 1, got {m}")));
    }
    Ok(())
}

/// Slope `d lambda_F / d a` at `a = T` predicted from `<psi^2>`.
pub fn floquet_slope_at_t(k0: f64, period: f64, psi: &PeriodicFn) -> Result<f64> {
    require_unit_mean(psi)?;
    let lp = solve_perron_one_phase(k0, period)?.lambda;
    Ok(-lp * psi.second_moment() / slope_denominator(k0, period, lp))
}

/// `lambda_P'(T) - lambda_F'(T) = lambda_P(T) (<psi^2> - 1) / (T + e^(lambda_P T)/(2 K0))`.
pub fn floquet_slope_gap_at_t(k0: f64, period: f64, psi: &PeriodicFn) -> Result<f64> {
    require_unit_mean(psi)?;
    let lp = solve_perron_one_phase(k0, period)?.lambda;
    Ok(lp * (psi.second_moment() - 1.0) / slope_denominator(k0, period, lp))
}

/// Analytic eigenelements of the three-phase model with shifted controls
/// `psi_1 = psi`, `psi_2 = psi(. - a_2)`, `psi_3 = psi(. - a_2 - a_3)` and
/// `a_1 + a_2 + a_3 = 1`.
#[derive(Debug, Clone)]
pub struct AnalyticThreePhase {
    pub k: [f64; 3],
    pub a: [f64; 3],
    pub psi: PeriodicFn,
    pub lambda: f64,
    /// Direct weights `U_i`.
    pub u: [f64; 3],
    /// Adjoint weights `V_i`.
    pub v: [f64; 3],
    pub residual: f64,
}

/// Solves `(K1 + l)(K2 + l)(K3 + l) = 2 K1 K2 K3 e^(-l (a1 + a2 + a3))` and
/// assembles the closed-form weights.
pub fn solve_analytic_three_phase(
    k: [f64; 3],
    a: [f64; 3],
    psi: &PeriodicFn,
) -> Result<AnalyticThreePhase> {
    for &ki in &k {
        ensure_finite("rate", ki)?;
        if ki <= 0.0 {
            return Err(Error::InvalidParameter(format!("rates must be positive, got {ki}")));
        }
    }
    for &ai in &a {
        ensure_finite("age", ai)?;
        if ai <= 0.0 {
            return Err(Error::InvalidParameter(format!("ages must be positive, got {ai}")));
        }
    }
    let total: f64 = a.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidParameter(format!("ages must sum to 1, got {total}")));
    }
    if (psi.period() - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidParameter("control must have period 1".into()));
    }
    if !psi.is_strictly_positive() {
        return Err(Error::NotPositive { t: f64::NAN, value: psi.min_value() });
    }
    require_unit_mean(psi)?;

    let log_target = (2.0 * k[0] * k[1] * k[2]).ln();
    let f = |l: f64| k.iter().map(|ki| (ki + l).ln()).sum::<f64>() + l * total - log_target;
    let df = |l: f64| k.iter().map(|ki| 1.0 / (ki + l)).sum::<f64>() + total;
    let kmin = k.iter().copied().fold(f64::INFINITY, f64::min);
    let (lambda, _) = increasing_root(f, df, -kmin + 1e-12, kmin)?;
    let residual = ((k[0] + lambda) * (k[1] + lambda) * (k[2] + lambda)
        - 2.0 * k[0] * k[1] * k[2] * (-lambda * total).exp())
    .abs();

    let u = [
        1.0,
        k[0] * (-lambda * a[1]).exp() / (k[1] + lambda),
        (k[0] + lambda) / (2.0 * k[2] * (-lambda * a[0]).exp()),
    ];
    let v = [
        1.0,
        (k[0] + lambda) / (k[0] * (-lambda * a[0]).exp()),
        2.0 * k[2] * (-lambda * a[2]).exp() / (k[2] + lambda),
    ];
    Ok(AnalyticThreePhase { k, a, psi: psi.clone(), lambda, u, v, residual })
}

impl AnalyticThreePhase {
    /// `C = (K1 + lambda) e^(lambda a1)`.
    pub fn c(&self) -> f64 {
        (self.k[0] + self.lambda) * (self.lambda * self.a[0]).exp()
    }

    /// `C_i = U_i V_i e^(lambda a_i)`, with `phase` in 1..=3.
    pub fn c_phase(&self, phase: usize) -> Result<f64> {
        let i = phase_index(phase)?;
        Ok(self.u[i] * self.v[i] * (self.lambda * self.a[i]).exp())
    }

    /// `Psi(t) = integral_0^t (psi(s) - 1) ds`.
    pub fn big_psi(&self, t: f64) -> f64 {
        self.psi.centered_primitive(t)
    }

    /// Unnormalized `w_i(t) = integral_0^inf N_i phi_i dx`.
    ///
    /// The `Psi` differences come from `integral_0^{a_i}` of the control along
    /// the characteristic, e.g. `integral_0^{a_2} psi(t - x) dx = a_2 + Psi(t) - Psi(t - a_2)`.
    pub fn weight(&self, phase: usize, t: f64) -> Result<f64> {
        let i = phase_index(phase)?;
        let [a1, a2, _] = self.a;
        let p = |s: f64| self.big_psi(s);
        let delta = match i {
            0 => p(t + a1) - p(t),
            1 => p(t) - p(t - a2),
            _ => p(t - a2) - p(t + a1),
        };
        Ok(self.c() * (self.a[i] + delta) + self.c_phase(phase)?)
    }

    /// `sum_i integral_0^1 w_i(t) dt` of the unnormalized weights.
    pub fn weight_total(&self) -> f64 {
        let c = self.c();
        let mut total = c * self.a.iter().sum::<f64>();
        for phase in 1..=3 {
            total += self.c_phase(phase).expect("phase in range");
        }
        total
    }

    /// Weight normalized so that the phase sum integrates to 1 over a period.
    pub fn normalized_weight(&self, phase: usize, t: f64) -> Result<f64> {
        Ok(self.weight(phase, t)? / self.weight_total())
    }
}

fn phase_index(phase: usize) -> Result<usize> {
    if (1..=3).contains(&phase) {
        Ok(phase - 1)
    } else {
        Err(Error::PhaseOutOfRange { index: phase, phases: 3 })
    }
}

/// First-order change of the growth rate per unit amplitude of an extra death
/// rate `gamma(t + theta)` acting on `phase`: `-integral_0^1 gamma(t + theta) w(t) dt`
/// with normalized weights.
pub fn analytic_sensitivity(
    sol: &AnalyticThreePhase,
    gamma: &PeriodicFn,
    theta: f64,
    phase: usize,
) -> Result<f64> {
    phase_index(phase)?;
    let n = SENSITIVITY_NODES;
    let h = 1.0 / n as f64;
    let shifted = gamma.shifted(theta);
    let mut acc = 0.0;
    for j in 0..n {
        let t = (j as f64 + 0.5) * h;
        acc += shifted.eval(t) * sol.normalized_weight(phase, t)?;
    }
    Ok(-acc * h)
}

/// Coefficient of `sin(2 pi t)` in the normalized weight of phase 2 when
/// `psi = 1 + b cos(2 pi t)` and `a_2 = 1/2`.
pub fn sin_coefficient_phase_two(sol: &AnalyticThreePhase, amplitude: f64) -> f64 {
    // Psi(t) - Psi(t - 1/2) = 2 b sin(2 pi t) / (2 pi)
    2.0 * sol.c() * amplitude / (2.0 * PI) / sol.weight_total()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::periodic::{chrono_reference_gamma, psi_sin, psi_square, PeriodicFn};

    // Plain bisection in the original (non-log) form, independent of the solver.
    fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        assert!(f(lo) < 0.0 && f(hi) > 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) < 0.0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn perron_at_zero_age_is_k0() {
        let r = solve_perron_one_phase(2.0, 0.0).unwrap();
        assert!((r.lambda - 2.0).abs() < 1e-14);
    }

    #[test]
    fn perron_matches_bisection_oracle() {
        let oracle = bisect(|l| (l + 2.0) * l.exp() - 4.0, 0.0, 2.0);
        let r = solve_perron_one_phase(2.0, 1.0).unwrap();
        assert!((r.lambda - oracle).abs() < 1e-12);
        assert!((r.lambda - 0.4786).abs() < 1e-4);
        assert!(r.residual < 1e-12);
        let far = solve_perron_one_phase(2.0, 10.0).unwrap();
        assert!(far.lambda > 0.0 && far.lambda < r.lambda);
    }

    #[test]
    fn perron_rejects_bad_input() {
        assert!(solve_perron_one_phase(f64::NAN, 1.0).is_err());
        assert!(solve_perron_one_phase(2.0, f64::INFINITY).is_err());
        assert!(solve_perron_one_phase(-1.0, 1.0).is_err());
    }

    #[test]
    fn geometric_rate() {
        let one = PeriodicFn::constant(1.0).unwrap();
        let g1 = solve_geometric_one_phase(2.0, 1.0, &one).unwrap().lambda;
        let p = solve_perron_one_phase(2.0, 1.0).unwrap().lambda;
        assert!((g1 - p).abs() < 1e-12);

        let gm = psi_sin().geometric_mean().unwrap();
        let oracle = bisect(|l| (l + 2.0) * l.exp() - 4.0 * gm, -1.0, 2.0);
        let g = solve_geometric_one_phase(2.0, 1.0, &psi_sin()).unwrap().lambda;
        assert!((g - oracle).abs() < 1e-12);
        assert!((g - 0.245).abs() < 1e-3);

        let gsq = solve_geometric_one_phase(2.0, 1.0, &psi_square()).unwrap().lambda;
        assert!(gsq < p);

        let zero_min = PeriodicFn::cos_power(2, 1).unwrap();
        assert!(solve_geometric_one_phase(2.0, 1.0, &zero_min).is_err());
    }

    #[test]
    fn slopes() {
        let s = perron_slope_at_t(2.0, 1.0).unwrap();
        assert!((s + 0.3410).abs() < 1e-3);
        let h = 1e-4;
        let fd = (solve_perron_one_phase(2.0, 1.0 + h).unwrap().lambda
            - solve_perron_one_phase(2.0, 1.0 - h).unwrap().lambda)
            / (2.0 * h);
        assert!((s - fd).abs() < 1e-6);

        let one = PeriodicFn::constant(1.0).unwrap();
        assert!(floquet_slope_gap_at_t(2.0, 1.0, &one).unwrap().abs() < 1e-14);
        let gap = floquet_slope_gap_at_t(2.0, 1.0, &psi_sin()).unwrap();
        assert!((gap - 0.1381).abs() < 2e-4);
        let fs = floquet_slope_at_t(2.0, 1.0, &psi_sin()).unwrap();
        assert!((s - fs - gap).abs() < 1e-12);
    }

    #[test]
    fn slope_gap_requires_unit_mean() {
        let c = PeriodicFn::constant(2.0).unwrap();
        assert!(floquet_slope_gap_at_t(2.0, 1.0, &c).is_err());
    }

    fn reference() -> AnalyticThreePhase {
        solve_analytic_three_phase([10.0; 3], [10.0 / 24.0, 0.5, 2.0 / 24.0], &psi_sin()).unwrap()
    }

    #[test]
    fn three_phase_root() {
        let sol = reference();
        let oracle = bisect(|l| (10.0 + l).powi(3) - 2000.0 * (-l).exp(), 0.0, 5.0);
        assert!((sol.lambda - oracle).abs() < 1e-12);
        assert!((sol.lambda - 0.536).abs() < 1e-3);
        assert!(sol.residual < 1e-9);
        let one = PeriodicFn::constant(1.0).unwrap();
        let flat = solve_analytic_three_phase(sol.k, sol.a, &one).unwrap();
        assert_eq!(flat.lambda, sol.lambda);
        let slow = solve_analytic_three_phase([5.0; 3], sol.a, &psi_sin()).unwrap();
        assert!(slow.lambda < sol.lambda);
        assert!(sol.u.iter().chain(sol.v.iter()).all(|x| *x > 0.0));
    }

    #[test]
    fn three_phase_validation() {
        assert!(solve_analytic_three_phase([10.0; 3], [0.3, 0.3, 0.3], &psi_sin()).is_err());
        assert!(solve_analytic_three_phase([10.0, -1.0, 1.0], [0.3, 0.3, 0.4], &psi_sin()).is_err());
        let sol = reference();
        assert!(matches!(sol.weight(4, 0.1), Err(Error::PhaseOutOfRange { .. })));
        assert!(sol.weight(0, 0.1).is_err());
    }

    #[test]
    fn weights_constant_without_control() {
        let one = PeriodicFn::constant(1.0).unwrap();
        let sol = solve_analytic_three_phase([10.0; 3], [10.0 / 24.0, 0.5, 2.0 / 24.0], &one).unwrap();
        for phase in 1..=3 {
            let expected = sol.c() * sol.a[phase - 1] + sol.c_phase(phase).unwrap();
            for &t in &[0.0, 0.3, 0.8] {
                assert!((sol.weight(phase, t).unwrap() - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn phase_two_weight_is_affine_in_sine() {
        let sol = reference();
        let c_prime = sol.c() * 0.5 + sol.c_phase(2).unwrap();
        let c2_prime = 2.0 * sol.c() * 0.9 / (2.0 * PI);
        for j in 0..50 {
            let t = j as f64 / 50.0;
            let w = sol.weight(2, t).unwrap();
            assert!((w - (c_prime + c2_prime * (2.0 * PI * t).sin())).abs() < 1e-10);
        }
        let coeff = sin_coefficient_phase_two(&sol, 0.9);
        assert!((coeff - c2_prime / sol.weight_total()).abs() < 1e-15);
    }

    #[test]
    fn normalized_weights_integrate_to_one() {
        let sol = reference();
        let n = 4096;
        let mut total = 0.0;
        for phase in 1..=3 {
            for j in 0..n {
                let t = (j as f64 + 0.5) / n as f64;
                let w = sol.weight(phase, t).unwrap();
                assert!(w > 0.0);
                total += sol.normalized_weight(phase, t).unwrap() / n as f64;
            }
        }
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sensitivity_shape() {
        let sol = reference();
        let c = PeriodicFn::constant(0.7).unwrap();
        let flat: Vec<f64> =
            (0..8).map(|j| analytic_sensitivity(&sol, &c, j as f64 / 8.0, 2).unwrap()).collect();
        let mass: f64 = {
            let n = 1 << 14;
            (0..n).map(|j| sol.normalized_weight(2, (j as f64 + 0.5) / n as f64).unwrap()).sum::<f64>()
                / n as f64
        };
        for v in &flat {
            assert!((v + 0.7 * mass).abs() < 1e-12);
        }

        let gamma = chrono_reference_gamma();
        let grid: Vec<f64> =
            (0..64).map(|j| analytic_sensitivity(&sol, &gamma, j as f64 / 64.0, 2).unwrap()).collect();
        let best = grid.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(best, 16);

        // value(1/4) - value(3/4) = 2 C2'' with C2'' from a direct quadrature of int gamma(t+1/4) sin(2 pi t)
        let n = 1 << 16;
        let q: f64 = (0..n)
            .map(|j| {
                let t = (j as f64 + 0.5) / n as f64;
                gamma.eval(t + 0.25) * (2.0 * PI * t).sin()
            })
            .sum::<f64>()
            / n as f64;
        let c2pp = -sin_coefficient_phase_two(&sol, 0.9) * q;
        assert!(c2pp > 0.0);
        let diff = grid[16] - grid[48];
        assert!((diff - 2.0 * c2pp).abs() < 1e-9, "{diff} vs {}", 2.0 * c2pp);
    }

    #[test]
    fn sensitivity_is_flat_for_even_harmonic_gamma() {
        // cos^6(2 pi t) only carries even harmonics, orthogonal to the sin(2 pi t) weight.
        let sol = reference();
        let gamma = PeriodicFn::cos_power(6, 2).unwrap();
        let values: Vec<f64> =
            (0..32).map(|j| analytic_sensitivity(&sol, &gamma, j as f64 / 32.0, 2).unwrap()).collect();
        let spread = values.iter().copied().fold(f64::MIN, f64::max)
            - values.iter().copied().fold(f64::MAX, f64::min);
        assert!(spread < 1e-10);
    }
}
