//! Special functions and quadrature used by the closed-form EE expressions.
//!
//! Everything here is a pure function of its arguments. The Marcum Q-function
//! has two independent routes ([`marcum_q1`] via a Neumann series of scaled
//! Bessel functions, [`marcum_q1_quadrature`] via its defining integral) so the
//! crate carries its own cross-check.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stochastic::ChannelParams;

/// Euler–Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Tolerances for adaptive integration of semi-infinite integrands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureSpec {
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Integrand magnitude below which a monotone tail is dropped.
    pub truncation_threshold: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            abs_tol: 1e-12,
            rel_tol: 1e-10,
            truncation_threshold: 1e-12,
        }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("quadrature.abs_tol", self.abs_tol),
            ("quadrature.rel_tol", self.rel_tol),
            ("quadrature.truncation_threshold", self.truncation_threshold),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(name, format!("must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Lambert W
// ---------------------------------------------------------------------------

/// Principal branch of the Lambert W function for `y >= 0`.
///
/// Halley iteration seeded with `ln(1 + y)` for small arguments and the
/// two-term asymptotic `ln y - ln ln y` otherwise.
pub fn lambert_w(y: f64) -> Result<f64> {
    if y.is_nan() || y < 0.0 {
        return Err(Error::domain("lambert_w", format!("argument must be >= 0, got {y}")));
    }
    if y == 0.0 {
        return Ok(0.0);
    }
    if y.is_infinite() {
        return Ok(f64::INFINITY);
    }
    let mut w = if y < 3.0 {
        y.ln_1p()
    } else {
        let l = y.ln();
        l - l.ln()
    };
    for _ in 0..64 {
        let ew = w.exp();
        let f = w * ew - y;
        let wp1 = w + 1.0;
        let step = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1));
        w -= step;
        if step.abs() <= 4.0 * f64::EPSILON * (1.0 + w.abs()) {
            break;
        }
    }
    Ok(w)
}

/// `W(exp(log_y))` without forming `exp(log_y)`, so huge or tiny arguments
/// neither overflow nor collapse to zero.
pub fn lambert_w_of_exp(log_y: f64) -> f64 {
    if log_y.is_nan() {
        return f64::NAN;
    }
    if log_y < -700.0 {
        // W(z) = z - z^2 + ...; z^2 is far below f64 resolution here.
        return log_y.exp();
    }
    if log_y < 700.0 {
        return lambert_w(log_y.exp()).expect("exp() is nonnegative");
    }
    if log_y.is_infinite() {
        return f64::INFINITY;
    }
    // Newton on w + ln w = log_y.
    let mut w = log_y - log_y.ln();
    for _ in 0..64 {
        let f = w + w.ln() - log_y;
        let step = f / (1.0 + 1.0 / w);
        w -= step;
        if step.abs() <= 4.0 * f64::EPSILON * w {
            break;
        }
    }
    w
}

// ---------------------------------------------------------------------------
// Modified Bessel function of the first kind, order zero
// ---------------------------------------------------------------------------

const I0_SERIES_LIMIT: f64 = 30.0;

/// `I0(x)`. The function is even, so negative arguments are folded.
pub fn bessel_i0(x: f64) -> f64 {
    let x = x.abs();
    if x <= I0_SERIES_LIMIT {
        i0_power_series(x)
    } else if x < 700.0 {
        bessel_i0_scaled(x) * x.exp()
    } else {
        // Split the exponential to postpone overflow as long as possible.
        let half = (0.5 * x).exp();
        bessel_i0_scaled(x) * half * half
    }
}

/// Exponentially scaled `exp(-x) I0(x)`.
pub fn bessel_i0_scaled(x: f64) -> f64 {
    let x = x.abs();
    if x <= I0_SERIES_LIMIT {
        return i0_power_series(x) * (-x).exp();
    }
    // Hankel asymptotic expansion; for x > 30 the smallest term is ~e^{-2x}.
    let mut term = 1.0;
    let mut sum = 1.0;
    let inv8x = 1.0 / (8.0 * x);
    for k in 1..60 {
        let kk = (2 * k - 1) as f64;
        let next = term * kk * kk * inv8x / k as f64;
        if next >= term {
            break;
        }
        term = next;
        sum += term;
        if term < f64::EPSILON * sum {
            break;
        }
    }
    sum / (2.0 * PI * x).sqrt()
}

fn i0_power_series(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    while term > f64::EPSILON * sum * 0.25 {
        term *= q / (k * k);
        sum += term;
        k += 1.0;
    }
    sum
}

// ---------------------------------------------------------------------------
// Marcum Q-function of order one
// ---------------------------------------------------------------------------

fn check_marcum_args(op: &'static str, a: f64, b: f64) -> Result<()> {
    if !(a >= 0.0) || !(b >= 0.0) {
        return Err(Error::domain(op, format!("arguments must be >= 0, got a={a}, b={b}")));
    }
    Ok(())
}

/// Marcum `Q1(a, b)` by the Neumann series
/// `exp(-(a^2+b^2)/2) * sum_k (a/b)^k I_k(ab)` (for `a < b`) and its
/// complement (for `a >= b`). The Bessel ladder is generated by Miller's
/// backward recurrence and normalised with [`bessel_i0_scaled`].
pub fn marcum_q1(a: f64, b: f64) -> Result<f64> {
    check_marcum_args("marcum_q1", a, b)?;
    if b == 0.0 {
        return Ok(1.0);
    }
    if b.is_infinite() {
        return Ok(0.0);
    }
    if a == 0.0 {
        return Ok((-0.5 * b * b).exp());
    }
    if a.is_infinite() {
        return Ok(1.0);
    }
    // Q1(a,b) <= exp(-(b-a)^2/2) for b > a, and symmetrically for 1 - Q1.
    if b - a > 38.0 {
        return Ok(0.0);
    }
    if a - b > 38.0 {
        return Ok(1.0);
    }

    let x = a * b;
    let below = a < b;
    let ratio = if below { a / b } else { b / a };
    let first = if below { 0 } else { 1 };
    let series = scaled_neumann_sum(x, ratio, first);
    let d = a - b;
    let tail = (-0.5 * d * d).exp() * series;
    let q = if below { tail } else { 1.0 - tail };
    Ok(q.clamp(0.0, 1.0))
}

/// `sum_{k >= first} ratio^k exp(-x) I_k(x)` with `0 < ratio <= 1`.
fn scaled_neumann_sum(x: f64, ratio: f64, first: usize) -> f64 {
    // Start index well past where exp(-x)I_k(x) ~ exp(-k^2/2x) is negligible.
    let m = 30 + (12.0 * x.sqrt()).ceil() as usize;
    let ln_ratio = ratio.ln();
    let mut upper = 0.0;
    let mut cur = 1e-280;
    let mut acc = 0.0;
    for k in (1..=m).rev() {
        if k >= first {
            acc += cur * (k as f64 * ln_ratio).exp();
        }
        let lower = (2.0 * k as f64 / x) * cur + upper;
        upper = cur;
        cur = lower;
        if cur > 1e250 {
            cur *= 1e-250;
            upper *= 1e-250;
            acc *= 1e-250;
        }
    }
    if first == 0 {
        acc += cur;
    }
    acc * (bessel_i0_scaled(x) / cur)
}

/// Marcum `Q1(a, b)` from its defining integral
/// `int_b^inf x exp(-(x^2+a^2)/2) I0(ax) dx`.
pub fn marcum_q1_quadrature(a: f64, b: f64, spec: &QuadratureSpec) -> Result<f64> {
    check_marcum_args("marcum_q1_quadrature", a, b)?;
    if b.is_infinite() {
        return Ok(0.0);
    }
    // exp(-(x^2+a^2)/2) I0(ax) = exp(-(x-a)^2/2) * exp(-ax) I0(ax).
    let f = |x: f64| {
        let d = x - a;
        x * (-0.5 * d * d).exp() * bessel_i0_scaled(a * x)
    };
    let upper = a.max(b) + 40.0;
    let mut total = 0.0;
    if b < a {
        total += integrate(f, b, a, spec)?;
        total += integrate(f, a, upper, spec)?;
    } else {
        total += integrate(f, b, upper, spec)?;
    }
    Ok(total.clamp(0.0, 1.0))
}

// ---------------------------------------------------------------------------
// Adaptive Gauss–Kronrod quadrature
// ---------------------------------------------------------------------------

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const GAUSS7_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = GK_WEIGHTS[7] * fc;
    let mut gauss = GAUSS7_WEIGHTS[3] * fc;
    for j in 0..7 {
        let dx = h * GK_NODES[j];
        let pair = f(c - dx) + f(c + dx);
        kronrod += GK_WEIGHTS[j] * pair;
        if j % 2 == 1 {
            gauss += GAUSS7_WEIGHTS[j / 2] * pair;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

const MAX_SUBDIVISIONS: usize = 20_000;

/// Adaptive G7/K15 integration of `f` over a finite interval.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, spec: &QuadratureSpec) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Quadrature(format!("non-finite limits [{a}, {b}]")));
    }
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
    let width = hi - lo;
    let mut stack = vec![(lo, hi)];
    let mut total = 0.0;
    let mut splits = 0usize;
    while let Some((x0, x1)) = stack.pop() {
        let (value, err) = gk15(&f, x0, x1);
        if !value.is_finite() {
            return Err(Error::Quadrature(format!("non-finite integrand on [{x0}, {x1}]")));
        }
        let share = (x1 - x0) / width;
        let allowed = (spec.abs_tol * share).max(spec.rel_tol * value.abs());
        if err <= allowed || (x1 - x0) <= 1e-12 * width.max(1.0) {
            total += value;
            continue;
        }
        splits += 1;
        if splits > MAX_SUBDIVISIONS {
            return Err(Error::Quadrature(format!("subdivision limit reached on [{lo}, {hi}]")));
        }
        let mid = 0.5 * (x0 + x1);
        stack.push((x0, mid));
        stack.push((mid, x1));
    }
    Ok(sign * total)
}

// ---------------------------------------------------------------------------
// The EE rate constant c1
// ---------------------------------------------------------------------------

/// Rate constant `c1(t) = alpha (gamma + ln pi)/2 + 2 int_0^inf Q1(a(t), e^x s(t)) dx`
/// with `a = |mu| / (eta (1 + e^{-t/2}))` and `s = 1 / (eta (1 - e^{-t}))`.
///
/// `t = +inf` is accepted and evaluates the stationary-fading limit.
pub fn c1(channel: &ChannelParams, t: f64, quad: &QuadratureSpec) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::domain("c1", format!("time must be > 0, got {t}")));
    }
    if channel.eta <= 0.0 {
        return Err(Error::DegenerateChannel(
            "eta = 0 makes the Marcum argument infinite for every x".into(),
        ));
    }
    let head = channel.alpha * (EULER_GAMMA + PI.ln()) / 2.0;
    let a = channel.mu_norm() / (channel.eta * (1.0 + (-0.5 * t).exp()));
    let scale = 1.0 / (channel.eta * -(-t).exp_m1());
    Ok(head + 2.0 * marcum_tail_integral(a, scale, quad)?)
}

/// `int_0^inf Q1(a, scale e^x) dx`, truncated where the (decreasing)
/// integrand drops below the truncation threshold and checked by doubling.
fn marcum_tail_integral(a: f64, scale: f64, quad: &QuadratureSpec) -> Result<f64> {
    let f = |x: f64| marcum_q1(a, scale * x.exp()).unwrap_or(0.0);
    let thr = quad.truncation_threshold;
    if f(0.0) < thr {
        return Ok(0.0);
    }
    // Bracket the crossing at unit spacing, then bisect.
    let mut hi = 1.0;
    while f(hi) >= thr {
        hi += 1.0;
        if hi > 200.0 {
            return Err(Error::Quadrature("c1 integrand does not decay".into()));
        }
    }
    let mut lo = hi - 1.0;
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if f(mid) >= thr {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut limit = hi;
    let mut value = integrate(f, 0.0, limit, quad)?;
    for _ in 0..8 {
        let extra = integrate(f, limit, 2.0 * limit, quad)?;
        value += extra;
        limit *= 2.0;
        if extra <= quad.abs_tol {
            return Ok(value);
        }
    }
    Err(Error::Quadrature("c1 tail did not settle under doubling".into()))
}
