//! Closed-form energy efficiency of a typical BS under mean-field (MF)
//! interference: pilot area, EE with and without handover, EE-optimal
//! transmit powers through the Lambert W function, and the handover window.
//!
//! Power laws are written in terms of a *link load* `K`: the denominator of
//! the log-rate term. Both optimal powers then share one closed form,
//! `P* = min(P_c / W(P_c exp(c1 - 1) / K), P_max)`, which maximises
//! `(c1 + ln(P / K)) / (P_c + P)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::specfun::{self, QuadratureSpec};
use crate::stochastic::{ChannelParams, DeploymentParams, MobilityParams};

/// Expected number of BSs inside the pilot area used to calibrate `theta`.
pub const DEFAULT_PILOT_CANDIDATES: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerParams {
    /// Circuit power drawn by every BS, dormant or active.
    pub p_c: f64,
    pub p_max: f64,
}

impl PowerParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_c > 0.0 && self.p_c.is_finite()) {
            return Err(Error::config("power.p_c", format!("must be > 0, got {}", self.p_c)));
        }
        if !(self.p_max > 0.0 && self.p_max.is_finite()) {
            return Err(Error::config("power.p_max", format!("must be > 0, got {}", self.p_max)));
        }
        Ok(())
    }
}

impl Default for PowerParams {
    fn default() -> Self {
        Self { p_c: 1.0, p_max: 20.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HoPolicy {
    /// Probability that the movement distance exceeds the nearest-BS distance
    /// at the minimum window.
    pub beta: f64,
    /// Handover interval.
    pub t_hat: f64,
}

impl HoPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::config(
                "policy.beta",
                format!("must lie in (0, 1), got {}", self.beta),
            ));
        }
        if !(self.t_hat > 0.0 && self.t_hat.is_finite()) {
            return Err(Error::config(
                "policy.t_hat",
                format!("must be > 0, got {}", self.t_hat),
            ));
        }
        Ok(())
    }
}

impl Default for HoPolicy {
    fn default() -> Self {
        Self { beta: 0.9, t_hat: 0.3 }
    }
}

/// How the squared density factor of the MF interference is grouped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterferenceForm {
    /// `(lambda_u * pi * R)^2`
    #[default]
    SquaredProduct,
    /// `lambda_u * (pi * R)^2`
    UserDensityTimesSquare,
}

/// Sign of the `c1` term inside the handover-window bracket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HoWindowForm {
    /// `exp(+c1 q)`: the window at which EE with and without handover coincide.
    #[default]
    Indifference,
    /// `exp(-c1 q)` as typeset in the original closed form.
    AsTypeset,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelOptions {
    pub interference_form: InterferenceForm,
    pub ho_window_form: HoWindowForm,
    pub fixed_point_tol: f64,
    pub fixed_point_max_iter: usize,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self {
            interference_form: InterferenceForm::default(),
            ho_window_form: HoWindowForm::default(),
            fixed_point_tol: 1e-9,
            fixed_point_max_iter: 50,
        }
    }
}

/// Parameters shared by every closed form.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Model {
    pub channel: ChannelParams,
    pub deploy: DeploymentParams,
    pub power: PowerParams,
    pub options: ModelOptions,
}

impl Model {
    pub fn c1(&self, t: f64, quad: &QuadratureSpec) -> Result<f64> {
        specfun::c1(&self.channel, t, quad)
    }
}

// ---------------------------------------------------------------------------
// Building blocks
// ---------------------------------------------------------------------------

/// `F(t) = 2 eta^2 (1 - e^{-t})^2 + |mu|^2 (1 - e^{-t/2})^2`, the mean fading
/// power at time `t` of a link started from `g(0) = 0`. `t = inf` is the
/// stationary value.
pub fn fading_stat(channel: &ChannelParams, t: f64) -> f64 {
    let a = -(-t).exp_m1();
    let b = -(-0.5 * t).exp_m1();
    let mu2 = channel.mu[0] * channel.mu[0] + channel.mu[1] * channel.mu[1];
    2.0 * channel.eta * channel.eta * a * a + mu2 * b * b
}

/// Pilot broadcast area `A(theta, t) = pi (F(t) / theta)^{2/alpha}`.
pub fn pilot_area(channel: &ChannelParams, t: f64) -> Result<f64> {
    if !(channel.rsrp_threshold > 0.0) {
        return Err(Error::domain(
            "pilot_area",
            format!("RSRP threshold must be > 0, got {}", channel.rsrp_threshold),
        ));
    }
    Ok(PI * (fading_stat(channel, t) / channel.rsrp_threshold).powf(2.0 / channel.alpha))
}

/// Radius of the pilot broadcast disc.
pub fn pilot_radius(channel: &ChannelParams, t: f64) -> Result<f64> {
    Ok((pilot_area(channel, t)? / PI).sqrt())
}

/// RSRP threshold that puts `candidates` BSs in the pilot area on average at time `t`.
pub fn calibrated_rsrp_threshold(channel: &ChannelParams, lambda_b: f64, candidates: f64, t: f64) -> f64 {
    let area = candidates / lambda_b;
    fading_stat(channel, t) / (area / PI).powf(channel.alpha / 2.0)
}

/// `I_hat / P_hat`: the MF interference per unit of population transmit power.
pub fn interference_coefficient(model: &Model, t: f64) -> Result<f64> {
    let ch = &model.channel;
    let dep = &model.deploy;
    if !(ch.alpha > 2.0) {
        return Err(Error::domain(
            "mf_interference",
            format!("interference integral diverges for alpha = {} <= 2", ch.alpha),
        ));
    }
    let r = ch.reception_radius;
    let density = match model.options.interference_form {
        InterferenceForm::SquaredProduct => (dep.lambda_u * PI * r).powi(2),
        InterferenceForm::UserDensityTimesSquare => dep.lambda_u * (PI * r).powi(2),
    };
    let ring = 1.0 + (1.0 - r.powf(2.0 - ch.alpha)) / (ch.alpha - 2.0);
    let scale = (ch.antennas as f64).sqrt() * dep.lambda_b.powf(ch.alpha / 2.0);
    Ok(density / scale * ring * fading_stat(ch, t))
}

/// MF interference `I_hat(t)` generated by a population transmitting `p_hat`.
pub fn mf_interference(model: &Model, p_hat: f64, t: f64) -> Result<f64> {
    Ok(interference_coefficient(model, t)? * p_hat)
}

/// Probability that one pilot response survives block collisions: `exp(-lambda_b A / N_p)`.
pub fn response_success_probability(model: &Model, t: f64) -> Result<f64> {
    let a = pilot_area(&model.channel, t)?;
    Ok((-model.deploy.lambda_b * a / model.channel.pilot_blocks as f64).exp())
}

/// `max(1 - eps exp(-lambda_b A), 0)`: the fraction of time not lost to pilot retransmissions.
pub fn retransmission_factor(model: &Model, t: f64) -> Result<f64> {
    let a = pilot_area(&model.channel, t)?;
    Ok((1.0 - model.channel.retx_time * (-model.deploy.lambda_b * a).exp()).max(0.0))
}

/// Noise term of the handover link including pilot congestion:
/// `sigma^2 / N * [lambda_b exp(-lambda_b A / N_p)]^{-alpha/2}`.
pub fn handover_noise(model: &Model, t: f64) -> Result<f64> {
    let ch = &model.channel;
    let a = pilot_area(ch, t)?;
    let lb = model.deploy.lambda_b;
    let ln = (ch.noise_power / ch.antennas as f64).ln() - 0.5 * ch.alpha * (lb.ln() - lb * a / ch.pilot_blocks as f64);
    Ok(ln.exp())
}

/// Noise term of the handover link without the congestion factor:
/// `sigma^2 / N * lambda_b^{-alpha/2}`.
pub fn handover_noise_uncongested(model: &Model) -> f64 {
    let ch = &model.channel;
    ch.noise_power / ch.antennas as f64 * model.deploy.lambda_b.powf(-0.5 * ch.alpha)
}

fn displacement_factor(v: f64, elapsed: f64, alpha: f64) -> f64 {
    (2.0 * v * elapsed.sqrt()).powf(alpha)
}

fn check_power(op: &'static str, p: f64, power: &PowerParams) -> Result<()> {
    if !(p > 0.0) || p > power.p_max * (1.0 + 1e-12) {
        return Err(Error::domain(
            op,
            format!("power must lie in (0, {}], got {p}", power.p_max),
        ));
    }
    Ok(())
}

fn log_rate(op: &'static str, c1: f64, p: f64, load: f64) -> Result<f64> {
    let ratio = p / load;
    if !(ratio > 0.0) || !ratio.is_finite() {
        return Err(Error::domain(
            op,
            format!("log argument {ratio} is not a positive finite number"),
        ));
    }
    Ok(c1 + ratio.ln())
}

// ---------------------------------------------------------------------------
// Energy efficiency
// ---------------------------------------------------------------------------

/// EE of a dormant BS that accepts the handover and transmits `p1`.
pub fn ee1(model: &Model, p1: f64, t: f64, c1: f64) -> Result<f64> {
    check_power("ee1", p1, &model.power)?;
    if !(t > 0.0) {
        return Err(Error::domain("ee1", format!("time must be > 0, got {t}")));
    }
    let pref = retransmission_factor(model, t)?;
    if pref == 0.0 {
        return Ok(0.0);
    }
    let load = handover_noise(model, t)? + mf_interference(model, p1, t)?;
    Ok(pref / (model.power.p_c + p1) * log_rate("ee1", c1, p1, load)?)
}

/// EE of the serving link `t_hat` after the last handover, seen against the
/// dormant BS's circuit power.
pub fn ee0(model: &Model, mob: &MobilityParams, p0: f64, t: f64, t_hat: f64, c1: f64) -> Result<f64> {
    check_power("ee0", p0, &model.power)?;
    if !(t_hat > 0.0) {
        return Err(Error::domain("ee0", format!("elapsed time must be > 0, got {t_hat}")));
    }
    let load = link_load(
        model,
        Link::Retain {
            v: mob.v,
            elapsed: t_hat,
        },
        t,
        p0,
    )?;
    Ok(log_rate("ee0", c1, p0, load)? / model.power.p_c)
}

/// EE of a typical active BS: `ee0 / (1 + p0 / P_c)`.
pub fn ee_active(ee0_val: f64, p0: f64, power: &PowerParams) -> f64 {
    ee0_val / (1.0 + p0 / power.p_c)
}

// ---------------------------------------------------------------------------
// Optimal powers
// ---------------------------------------------------------------------------

/// Which link a power is optimised for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    /// A dormant BS taking over the user.
    Handover,
    /// The serving BS, `elapsed` after the last handover at speed `v`.
    Retain { v: f64, elapsed: f64 },
}

/// Link load `K` with the MF interference generated by population power `p_hat`.
pub fn link_load(model: &Model, link: Link, t: f64, p_hat: f64) -> Result<f64> {
    let i_hat = mf_interference(model, p_hat, t)?;
    Ok(match link {
        Link::Handover => handover_noise(model, t)? + i_hat,
        Link::Retain { v, elapsed } => {
            let ch = &model.channel;
            displacement_factor(v, elapsed, ch.alpha) * (ch.noise_power / ch.antennas as f64 + i_hat)
        }
    })
}

/// `min(P_c / W(P_c exp(c1 - 1) / K), P_max)`.
pub fn closed_form_power(power: &PowerParams, c1: f64, load: f64) -> f64 {
    let w = specfun::lambert_w_of_exp(power.p_c.ln() + c1 - 1.0 - load.ln());
    (power.p_c / w).min(power.p_max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FixedPoint {
    pub power: f64,
    pub iterations: usize,
}

/// Solve `p = closed_form_power(K(I_hat(p)))` by direct iteration from `start`.
pub fn power_fixed_point(
    model: &Model,
    link: Link,
    t: f64,
    c1: f64,
    start: f64,
    tol: f64,
    max_iter: usize,
) -> Result<FixedPoint> {
    if !(tol > 0.0) {
        return Err(Error::domain(
            "power_fixed_point",
            format!("tolerance must be > 0, got {tol}"),
        ));
    }
    let map = |p: f64| -> Result<f64> { Ok(closed_form_power(&model.power, c1, link_load(model, link, t, p)?)) };
    if interference_coefficient(model, t)? == 0.0 {
        // Interference does not depend on the power: the closed form is explicit.
        return Ok(FixedPoint {
            power: map(start)?,
            iterations: 1,
        });
    }
    let mut p = start;
    for it in 1..=max_iter {
        let next = map(p)?;
        if !next.is_finite() || next <= 0.0 {
            return Err(Error::domain(
                "power_fixed_point",
                format!("iterate left (0, P_max]: {next}"),
            ));
        }
        if (next - p).abs() < tol {
            return Ok(FixedPoint {
                power: next,
                iterations: it,
            });
        }
        p = next;
    }
    Err(Error::NonConvergence {
        what: "MF power fixed point",
        iterations: max_iter,
        last: p,
    })
}

fn default_fixed_point(model: &Model, link: Link, t: f64, c1: f64) -> Result<FixedPoint> {
    power_fixed_point(
        model,
        link,
        t,
        c1,
        model.power.p_max,
        model.options.fixed_point_tol,
        model.options.fixed_point_max_iter,
    )
}

/// EE1-maximising power of a dormant BS accepting the handover.
pub fn optimal_p1(model: &Model, t: f64, c1: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::domain("optimal_p1", format!("time must be > 0, got {t}")));
    }
    Ok(default_fixed_point(model, Link::Handover, t, c1)?.power)
}

/// Power of the serving BS `t_hat` after the handover that maximises its
/// active-BS EE `ee0 / (1 + p0 / P_c)`.
pub fn optimal_p0(model: &Model, mob: &MobilityParams, t: f64, t_hat: f64, c1: f64) -> Result<f64> {
    if !(t > 0.0 && t_hat > 0.0) {
        return Err(Error::domain(
            "optimal_p0",
            format!("time and elapsed time must be > 0, got t={t}, t_hat={t_hat}"),
        ));
    }
    Ok(default_fixed_point(
        model,
        Link::Retain {
            v: mob.v,
            elapsed: t_hat,
        },
        t,
        c1,
    )?
    .power)
}

// ---------------------------------------------------------------------------
// Handover window
// ---------------------------------------------------------------------------

/// Shortest window at which the movement distance exceeds the nearest-BS
/// distance with probability `beta`: `1 / (4 v^2 lambda_b (1/beta - 1))`.
pub fn min_ho_window(deploy: &DeploymentParams, mob: &MobilityParams, policy: &HoPolicy) -> Result<f64> {
    if !(policy.beta > 0.0 && policy.beta < 1.0) {
        return Err(Error::domain(
            "min_ho_window",
            format!("beta must lie in (0, 1), got {}", policy.beta),
        ));
    }
    if !(mob.v > 0.0) {
        return Err(Error::domain(
            "min_ho_window",
            format!("speed must be > 0, got {}", mob.v),
        ));
    }
    Ok(1.0 / (4.0 * mob.v * mob.v * deploy.lambda_b * (1.0 / policy.beta - 1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HoWindow {
    pub t_hat_star: f64,
    pub t_hat_min: f64,
    /// False when the minimum window binds.
    pub interior: bool,
    pub p0_star: f64,
    pub p1_star: f64,
    pub i0_hat: f64,
    pub i1_hat: f64,
}

/// EE of the handover link in the congestion-free form that the window
/// formula balances against `ee0`.
pub fn handover_reference_ee(model: &Model, p1: f64, t: f64, c1: f64) -> Result<f64> {
    let load = handover_noise_uncongested(model) + mf_interference(model, p1, t)?;
    Ok(log_rate("handover_reference_ee", c1, p1, load)? / (model.power.p_c + p1))
}

/// Bracketed term of the window formula (before the `2/alpha` power).
fn window_bracket(model: &Model, p0: f64, p1: f64, t: f64, c1: f64) -> Result<f64> {
    let ch = &model.channel;
    let k0 = ch.noise_power / ch.antennas as f64 + mf_interference(model, p0, t)?;
    let k1 = handover_noise_uncongested(model) + mf_interference(model, p1, t)?;
    let q = 1.0 / (1.0 + model.power.p_c / p1);
    let sign = match model.options.ho_window_form {
        HoWindowForm::Indifference => 1.0,
        HoWindowForm::AsTypeset => -1.0,
    };
    let ln = (p0 / k0).ln() + (q - 1.0) * (p1 / k1).ln() + sign * c1 * q;
    Ok(ln.exp())
}

/// Optimal handover window. `P0*` depends on the elapsed time it is evaluated
/// at, so the window is solved self-consistently: the serving power inside
/// the bracket is the optimal power at the returned window.
pub fn optimal_ho_window(model: &Model, mob: &MobilityParams, policy: &HoPolicy, t: f64, c1: f64) -> Result<HoWindow> {
    let t_min = min_ho_window(&model.deploy, mob, policy)?;
    let p1 = optimal_p1(model, t, c1)?;
    let scale = 1.0 / (4.0 * mob.v * mob.v);
    let exponent = 2.0 / model.channel.alpha;

    let mut window = t_min;
    let mut p0 = optimal_p0(model, mob, t, window, c1)?;
    for _ in 0..500 {
        let interior = scale * window_bracket(model, p0, p1, t, c1)?.powf(exponent);
        let next = interior.max(t_min);
        let next_p0 = optimal_p0(model, mob, t, next, c1)?;
        let settled = (next - window).abs() <= 1e-13 * next;
        window = next;
        p0 = next_p0;
        if settled {
            return Ok(HoWindow {
                t_hat_star: window,
                t_hat_min: t_min,
                interior: interior > t_min,
                p0_star: p0,
                p1_star: p1,
                i0_hat: mf_interference(model, p0, t)?,
                i1_hat: mf_interference(model, p1, t)?,
            });
        }
    }
    Err(Error::NonConvergence {
        what: "handover window",
        iterations: 500,
        last: window,
    })
}

/// `handover_reference_ee(P1*) - ee0(P0*(t_hat), t_hat)`; vanishes at an
/// interior optimal window.
pub fn ho_indifference_gap(model: &Model, mob: &MobilityParams, t: f64, t_hat: f64, c1: f64) -> Result<f64> {
    let p1 = optimal_p1(model, t, c1)?;
    let p0 = optimal_p0(model, mob, t, t_hat, c1)?;
    Ok(handover_reference_ee(model, p1, t, c1)? - ee0(model, mob, p0, t, t_hat, c1)?)
}

// ---------------------------------------------------------------------------
// Diagnostics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceThresholds {
    /// Surrogate ratios below this are flagged.
    pub min_surrogate: f64,
}

impl Default for ConvergenceThresholds {
    fn default() -> Self {
        Self { min_surrogate: 100.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    /// `eta, |mu| < inf`.
    pub a1_finite_fading: bool,
    /// `N lambda_b^alpha / lambda_u^4`.
    pub a2: f64,
    /// `N lambda_b^alpha / (lambda_u R)^4`.
    pub a3: f64,
    /// `N / (t_hat v^2 lambda_u)^4`.
    pub a4: f64,
    /// `N / (t_hat v^2 lambda_u R)^4`.
    pub a5: f64,
    pub density_ratio: f64,
    pub threshold: f64,
    /// Noise term of the handover link with and without congestion, at `t`.
    pub handover_noise_congested: f64,
    pub handover_noise_uncongested: f64,
    pub flags: Vec<String>,
    /// True when the MF approximations behind the closed forms are doubtful.
    pub dubious: bool,
}

/// Finite surrogates of the MF convergence conditions.
pub fn check_convergence_conditions(
    model: &Model,
    mob: &MobilityParams,
    policy: &HoPolicy,
    thresholds: &ConvergenceThresholds,
    t: f64,
) -> ConvergenceReport {
    let ch = &model.channel;
    let dep = &model.deploy;
    let n = ch.antennas as f64;
    let lu = dep.lambda_u;
    let r = ch.reception_radius;
    let a2 = n * dep.lambda_b.powf(ch.alpha) / lu.powi(4);
    let a3 = n * dep.lambda_b.powf(ch.alpha) / (lu * r).powi(4);
    let motion = policy.t_hat * mob.v * mob.v * lu;
    let a4 = n / motion.powi(4);
    let a5 = n / (motion * r).powi(4);
    let thr = thresholds.min_surrogate;

    let a1 = ch.eta.is_finite() && ch.mu_norm().is_finite();
    let mut flags = Vec::new();
    if !a1 {
        flags.push("A1: fading parameters are not finite".to_string());
    }
    for (name, value) in [("A2", a2), ("A3", a3), ("A4", a4), ("A5", a5)] {
        if value < thr {
            flags.push(format!("{name}: surrogate {value:.4e} below {thr:.1e}"));
        }
    }
    if let Some(w) = dep.density_warning() {
        flags.push(w);
    }
    let congested = handover_noise(model, t).unwrap_or(f64::NAN);
    let uncongested = handover_noise_uncongested(model);
    // Finite reception radius: A2 governs the handover link and A4 the serving link.
    let dubious = !a1 || a2 < thr || a4 < thr;
    ConvergenceReport {
        a1_finite_fading: a1,
        a2,
        a3,
        a4,
        a5,
        density_ratio: dep.lambda_b / lu,
        threshold: thr,
        handover_noise_congested: congested,
        handover_noise_uncongested: uncongested,
        flags,
        dubious,
    }
}

/// One evaluation of every closed form at analysis time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EeReport {
    pub t: f64,
    /// Elapsed time since handover used for `ee0`, `ee_a` and `p0_star`.
    pub t_hat: f64,
    pub c1: f64,
    pub ee0: f64,
    pub ee1: f64,
    pub ee_a: f64,
    pub p0_star: f64,
    pub p1_star: f64,
    pub i0_hat: f64,
    pub i1_hat: f64,
    pub t_hat_star: f64,
    pub t_hat_min: f64,
}

pub fn ee_report(
    model: &Model,
    mob: &MobilityParams,
    policy: &HoPolicy,
    t: f64,
    quad: &QuadratureSpec,
) -> Result<EeReport> {
    let c1 = model.c1(t, quad)?;
    let p1 = optimal_p1(model, t, c1)?;
    let p0 = optimal_p0(model, mob, t, policy.t_hat, c1)?;
    let e0 = ee0(model, mob, p0, t, policy.t_hat, c1)?;
    let window = optimal_ho_window(model, mob, policy, t, c1)?;
    Ok(EeReport {
        t,
        t_hat: policy.t_hat,
        c1,
        ee0: e0,
        ee1: ee1(model, p1, t, c1)?,
        ee_a: ee_active(e0, p0, &model.power),
        p0_star: p0,
        p1_star: p1,
        i0_hat: mf_interference(model, p0, t)?,
        i1_hat: mf_interference(model, p1, t)?,
        t_hat_star: window.t_hat_star,
        t_hat_min: window.t_hat_min,
    })
}
