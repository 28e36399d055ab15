//! Periodic nonnegative control functions.
//!
//! A [`PeriodicFn`] is a `T`-periodic scalar function built from a small set
//! of closed-form shapes (plus uniformly sampled data), optionally shifted in
//! time. Every shape has an exact antiderivative, which the closed-form
//! eigenfunction formulas use; averages are computed by composite midpoint
//! quadrature that splits the period at the shape's breakpoints.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Default number of quadrature nodes per period.
pub const DEFAULT_QUADRATURE_NODES: usize = 1 << 16;

/// Tag identifying the family a control belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Sinusoidal,
    Square,
    Peak,
    Constant,
    CosPower,
    Sampled,
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Kind::Sinusoidal => "sin",
            Kind::Square => "square",
            Kind::Peak => "peak",
            Kind::Constant => "constant",
            Kind::CosPower => "cospow",
            Kind::Sampled => "samples",
        };
        f.write_str(name)
    }
}

// Shapes are expressed in the unit phase variable s in [0, 1).
#[derive(Debug, Clone, PartialEq)]
enum Shape {
    Constant { value: f64 },
    // mean + amplitude cos(2 pi s)
    Sinusoidal { mean: f64, amplitude: f64 },
    // high on [0, duty), low on [duty, 1)
    Square { high: f64, low: f64, duty: f64 },
    // base plus a triangle of the given height on [0, 2 width), apex at width
    Peak { base: f64, height: f64, width: f64 },
    // cos^exponent(frequency * pi * s), exponent even
    CosPower { exponent: u32, frequency: u32 },
    // piecewise constant on n equal cells
    Sampled { values: Arc<[f64]> },
}

impl Shape {
    fn kind(&self) -> Kind {
        match self {
            Shape::Constant { .. } => Kind::Constant,
            Shape::Sinusoidal { .. } => Kind::Sinusoidal,
            Shape::Square { .. } => Kind::Square,
            Shape::Peak { .. } => Kind::Peak,
            Shape::CosPower { .. } => Kind::CosPower,
            Shape::Sampled { .. } => Kind::Sampled,
        }
    }

    fn value(&self, s: f64) -> f64 {
        match *self {
            Shape::Constant { value } => value,
            Shape::Sinusoidal { mean, amplitude } => mean + amplitude * (2.0 * PI * s).cos(),
            Shape::Square { high, low, duty } => {
                if s < duty {
                    high
                } else {
                    low
                }
            }
            Shape::Peak { base, height, width } => {
                if s < width {
                    base + height * s / width
                } else if s < 2.0 * width {
                    base + height * (2.0 - s / width)
                } else {
                    base
                }
            }
            Shape::CosPower { exponent, frequency } => {
                (f64::from(frequency) * PI * s).cos().powi(exponent as i32)
            }
            Shape::Sampled { ref values } => {
                let n = values.len();
                let idx = ((s * n as f64) as usize).min(n - 1);
                values[idx]
            }
        }
    }

    /// Integral of the shape over `[0, s]`, `s` in `[0, 1]`.
    fn primitive(&self, s: f64) -> f64 {
        match *self {
            Shape::Constant { value } => value * s,
            Shape::Sinusoidal { mean, amplitude } => {
                mean * s + amplitude * (2.0 * PI * s).sin() / (2.0 * PI)
            }
            Shape::Square { high, low, duty } => {
                if s < duty {
                    high * s
                } else {
                    high * duty + low * (s - duty)
                }
            }
            Shape::Peak { base, height, width } => {
                let tri = if s < width {
                    height * s * s / (2.0 * width)
                } else if s < 2.0 * width {
                    0.5 * height * width
                        + height * (2.0 * (s - width) - (s * s - width * width) / (2.0 * width))
                } else {
                    height * width
                };
                base * s + tri
            }
            Shape::CosPower { exponent, frequency } => {
                // cos^p x = 2^-p [ C(p, p/2) + 2 sum_{k < p/2} C(p, k) cos((p - 2k) x) ]
                let p = exponent as usize;
                let omega = f64::from(frequency) * PI;
                let scale = 0.5f64.powi(exponent as i32);
                let mut acc = binomial(p, p / 2) * s;
                for k in 0..p / 2 {
                    let m = (p - 2 * k) as f64;
                    acc += 2.0 * binomial(p, k) * (m * omega * s).sin() / (m * omega);
                }
                scale * acc
            }
            Shape::Sampled { ref values } => {
                let n = values.len();
                let x = s * n as f64;
                let idx = (x as usize).min(n);
                let full: f64 = values[..idx].iter().sum();
                let part = if idx < n { values[idx] * (x - idx as f64) } else { 0.0 };
                (full + part) / n as f64
            }
        }
    }

    /// Points in `[0, 1)` where the shape or its derivative jumps.
    fn breakpoints(&self) -> Vec<f64> {
        match *self {
            Shape::Square { duty, .. } => vec![duty],
            Shape::Peak { width, .. } => {
                let mut b = vec![width];
                if 2.0 * width < 1.0 {
                    b.push(2.0 * width);
                }
                b
            }
            Shape::Sampled { ref values } => {
                let n = values.len();
                (1..n).map(|j| j as f64 / n as f64).collect()
            }
            _ => Vec::new(),
        }
    }

    fn min_value(&self) -> f64 {
        match *self {
            Shape::Constant { value } => value,
            Shape::Sinusoidal { mean, amplitude } => mean - amplitude.abs(),
            Shape::Square { high, low, .. } => high.min(low),
            Shape::Peak { base, height, .. } => base + height.min(0.0),
            Shape::CosPower { .. } => 0.0,
            Shape::Sampled { ref values } => values.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// A `T`-periodic nonnegative scalar function `t -> f(t + shift)`.
///
/// Values are immutable after construction; cloning is cheap.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicFn {
    period: f64,
    shift: f64,
    shape: Shape,
}

impl PeriodicFn {
    fn build(shape: Shape) -> Result<Self> {
        let kind = shape.kind();
        let min = shape.min_value();
        if !min.is_finite() || min < 0.0 {
            return Err(Error::InvalidControl {
                kind: kind_name(kind),
                reason: format!("minimum value {min} is negative"),
            });
        }
        Ok(Self { period: 1.0, shift: 0.0, shape })
    }

    /// `f(t) = value`.
    pub fn constant(value: f64) -> Result<Self> {
        ensure_finite("constant value", value)?;
        Self::build(Shape::Constant { value })
    }

    /// `f(t) = mean + amplitude cos(2 pi t / T)`.
    pub fn sinusoidal(mean: f64, amplitude: f64) -> Result<Self> {
        ensure_finite("sinusoid mean", mean)?;
        ensure_finite("sinusoid amplitude", amplitude)?;
        Self::build(Shape::Sinusoidal { mean, amplitude })
    }

    /// Two-level wave: `high` on the first `duty` fraction of the period, `low` after.
    pub fn square(high: f64, low: f64, duty: f64) -> Result<Self> {
        ensure_finite("square level", high)?;
        ensure_finite("square level", low)?;
        if !(duty > 0.0 && duty < 1.0) {
            return Err(Error::InvalidControl {
                kind: "square",
                reason: format!("duty fraction {duty} must lie in (0, 1)"),
            });
        }
        Self::build(Shape::Square { high, low, duty })
    }

    /// `base` plus a triangle of `height` supported on `[0, 2 width)` (fractions of the period).
    pub fn peak(base: f64, height: f64, width: f64) -> Result<Self> {
        ensure_finite("peak base", base)?;
        ensure_finite("peak height", height)?;
        if !(width > 0.0 && 2.0 * width <= 1.0) {
            return Err(Error::InvalidControl {
                kind: "peak",
                reason: format!("width {width} must satisfy 0 < 2 width <= 1"),
            });
        }
        Self::build(Shape::Peak { base, height, width })
    }

    /// `f(t) = cos^exponent(frequency * pi * t / T)`; the exponent must be even.
    pub fn cos_power(exponent: u32, frequency: u32) -> Result<Self> {
        if exponent == 0 || exponent % 2 != 0 || frequency == 0 {
            return Err(Error::InvalidControl {
                kind: "cospow",
                reason: format!(
                    "need an even positive exponent and positive frequency, got ({exponent}, {frequency})"
                ),
            });
        }
        Self::build(Shape::CosPower { exponent, frequency })
    }

    /// Piecewise-constant function from uniform samples over one period.
    pub fn sampled(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidControl {
                kind: "samples",
                reason: "no samples given".into(),
            });
        }
        for &v in &values {
            ensure_finite("sample", v)?;
        }
        Self::build(Shape::Sampled { values: values.into() })
    }

    /// Same shape stretched to period `period`.
    pub fn with_period(mut self, period: f64) -> Result<Self> {
        if !(period.is_finite() && period > 0.0) {
            return Err(Error::InvalidParameter(format!("period must be positive, got {period}")));
        }
        self.shift *= period / self.period;
        self.period = period;
        Ok(self)
    }

    /// `t -> self(t + s)`.
    pub fn shifted(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.shift = (self.shift + s).rem_euclid(self.period);
        out
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn kind(&self) -> Kind {
        self.shape.kind()
    }

    /// Exact lower bound of the function.
    pub fn min_value(&self) -> f64 {
        self.shape.min_value()
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.min_value() > 0.0
    }

    fn phase(&self, t: f64) -> f64 {
        let s = ((t + self.shift) / self.period).rem_euclid(1.0);
        if s >= 1.0 {
            0.0
        } else {
            s
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.shape.value(self.phase(t))
    }

    /// Exact integral over `[t0, t1]`.
    pub fn integral(&self, t0: f64, t1: f64) -> f64 {
        self.cumulative(t1) - self.cumulative(t0)
    }

    fn cumulative(&self, t: f64) -> f64 {
        let x = (t + self.shift) / self.period;
        let whole = x.floor();
        let mut frac = x - whole;
        if frac >= 1.0 {
            frac = 0.0;
        }
        self.period * (whole * self.shape.primitive(1.0) + self.shape.primitive(frac))
    }

    /// `t -> integral_0^t (f(s) - 1) ds`, which is periodic when the mean is 1.
    pub fn centered_primitive(&self, t: f64) -> f64 {
        self.integral(0.0, t) - t
    }

    /// Mean of `g(f(t))` over one period by breakpoint-aware composite midpoint quadrature.
    pub fn mean_of(&self, nodes: usize, mut g: impl FnMut(f64) -> f64) -> f64 {
        let mut cuts = vec![0.0];
        cuts.extend(self.shape.breakpoints());
        cuts.push(1.0);
        let nodes = nodes.max(1);
        let mut total = 0.0;
        for w in cuts.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            let len = hi - lo;
            if len <= 0.0 {
                continue;
            }
            let n = ((nodes as f64 * len).round() as usize).max(1);
            let h = len / n as f64;
            let sum: f64 = (0..n).map(|j| g(self.shape.value(lo + (j as f64 + 0.5) * h))).sum();
            total += sum * h;
        }
        total
    }

    /// Arithmetic average over one period.
    pub fn arithmetic_mean(&self) -> f64 {
        self.arithmetic_mean_with(DEFAULT_QUADRATURE_NODES)
    }

    pub fn arithmetic_mean_with(&self, nodes: usize) -> f64 {
        self.mean_of(nodes, |v| v)
    }

    /// Mean of the square over one period.
    pub fn second_moment(&self) -> f64 {
        self.second_moment_with(DEFAULT_QUADRATURE_NODES)
    }

    pub fn second_moment_with(&self, nodes: usize) -> f64 {
        self.mean_of(nodes, |v| v * v)
    }

    /// `exp(mean(log f))`; fails if a non-positive sample is met.
    pub fn geometric_mean(&self) -> Result<f64> {
        self.geometric_mean_with(DEFAULT_QUADRATURE_NODES)
    }

    pub fn geometric_mean_with(&self, nodes: usize) -> Result<f64> {
        if !self.is_strictly_positive() {
            let (t, value) = (0..nodes)
                .map(|j| {
                    let t = self.period * j as f64 / nodes as f64;
                    (t, self.eval(t))
                })
                .fold((f64::NAN, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
            return Err(Error::NotPositive { t, value: value.min(self.min_value()) });
        }
        Ok(self.mean_of(nodes, f64::ln).exp())
    }
}

fn kind_name(kind: Kind) -> &'static str {
    match kind {
        Kind::Sinusoidal => "sin",
        Kind::Square => "square",
        Kind::Peak => "peak",
        Kind::Constant => "constant",
        Kind::CosPower => "cospow",
        Kind::Sampled => "samples",
    }
}

/// `1 + 0.9 cos(2 pi t)`.
pub fn psi_sin() -> PeriodicFn {
    PeriodicFn::sinusoidal(1.0, 0.9).expect("valid sinusoid")
}

/// Square wave with levels 1.9 / 0.1, so that the mean is 1 and the second moment 1.81.
pub fn psi_square() -> PeriodicFn {
    PeriodicFn::square(1.9, 0.1, 0.5).expect("valid square wave")
}

/// `0.1 + triangle(h = 3, delta = 0.3)`.
pub fn psi_peak() -> PeriodicFn {
    PeriodicFn::peak(0.1, 3.0, 0.3).expect("valid peak")
}

/// The three reference division controls: sinusoidal, square, peak.
pub fn reference_controls() -> [(&'static str, PeriodicFn); 3] {
    [("sin", psi_sin()), ("square", psi_square()), ("peak", psi_peak())]
}

/// Drug-induced death profile used for the chronotherapy reference runs, `cos^6(pi t)`.
pub fn chrono_reference_gamma() -> PeriodicFn {
    PeriodicFn::cos_power(6, 1).expect("valid cos power")
}

/// Builds a period-1 control from a kind tag and parameter list.
///
/// | kind | params | default |
/// |------|--------|---------|
/// | `sin` | `[amplitude]` or `[mean, amplitude]` | `1 + 0.9 cos(2 pi t)` |
/// | `square` | `[high, low]` or `[high, low, duty]` | levels 1.9 / 0.1, duty 1/2 |
/// | `peak` | `[h, delta]` or `[h, delta, base]` | h = 3, delta = 0.3, base 0.1 |
/// | `constant` | `[c]` | 1 |
/// | `cospow` | `[exponent, frequency]` | `cos^6(pi t)` |
/// | `samples` | sample values | required |
pub fn make_reference_psi(kind: &str, params: &[f64]) -> Result<PeriodicFn> {
    let positive = |name: &'static str, p: &[f64]| -> Result<()> {
        if let Some(v) = p.iter().find(|v| !(**v > 0.0)) {
            return Err(Error::InvalidControl {
                kind: name,
                reason: format!("parameter {v} must be positive"),
            });
        }
        Ok(())
    };
    match kind {
        "sin" | "sinusoidal" => match *params {
            [] => PeriodicFn::sinusoidal(1.0, 0.9),
            [amplitude] => PeriodicFn::sinusoidal(1.0, amplitude),
            [mean, amplitude] => PeriodicFn::sinusoidal(mean, amplitude),
            _ => Err(arity("sin", params.len())),
        },
        "square" | "sq" => {
            positive("square", params)?;
            match *params {
                [] => PeriodicFn::square(1.9, 0.1, 0.5),
                [high, low] => PeriodicFn::square(high, low, 0.5),
                [high, low, duty] => PeriodicFn::square(high, low, duty),
                _ => Err(arity("square", params.len())),
            }
        }
        "peak" | "pk" => {
            positive("peak", params)?;
            match *params {
                [] => PeriodicFn::peak(0.1, 3.0, 0.3),
                [h, delta] => PeriodicFn::peak(0.1, h, delta),
                [h, delta, base] => PeriodicFn::peak(base, h, delta),
                _ => Err(arity("peak", params.len())),
            }
        }
        "constant" | "const" => match *params {
            [] => PeriodicFn::constant(1.0),
            [c] => PeriodicFn::constant(c),
            _ => Err(arity("constant", params.len())),
        },
        "cospow" => match *params {
            [] => PeriodicFn::cos_power(6, 1),
            [p, f] => {
                let as_int = |x: f64| -> Result<u32> {
                    if x.fract() == 0.0 && x > 0.0 && x < 1e6 {
                        Ok(x as u32)
                    } else {
                        Err(Error::InvalidControl {
                            kind: "cospow",
                            reason: format!("{x} is not a positive integer"),
                        })
                    }
                };
                PeriodicFn::cos_power(as_int(p)?, as_int(f)?)
            }
            _ => Err(arity("cospow", params.len())),
        },
        "samples" | "sampled" => PeriodicFn::sampled(params.to_vec()),
        other => Err(Error::UnknownKind(other.to_string())),
    }
}

fn arity(kind: &'static str, n: usize) -> Error {
    Error::InvalidControl { kind, reason: format!("unexpected number of parameters ({n})") }
}

/// Serializable description of a control, as used in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSpec {
    pub kind: String,
    #[serde(default)]
    pub params: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift: Option<f64>,
}

impl ControlSpec {
    pub fn new(kind: &str, params: &[f64]) -> Self {
        Self { kind: kind.to_string(), params: params.to_vec(), period: None, shift: None }
    }

    pub fn build(&self) -> Result<PeriodicFn> {
        let mut f = make_reference_psi(&self.kind, &self.params)?;
        if let Some(p) = self.period {
            f = f.with_period(p)?;
        }
        if let Some(s) = self.shift {
            f = f.shifted(s);
        }
        Ok(f)
    }
}
