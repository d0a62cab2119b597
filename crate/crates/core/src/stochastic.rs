//! Randomness of the network model: PPP deployment, Brownian user mobility,
//! Gauss–Markov (Ornstein–Uhlenbeck) link fading, and distribution checks for
//! the movement-distance and spatial-homogeneity laws.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

pub type SimRng = ChaCha8Rng;

/// Deterministic substream `stream` of the root seed.
pub fn substream(root_seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(root_seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Map onto `[0, side)^2`.
    pub fn wrapped(self, side: f64) -> Self {
        Self::new(self.x.rem_euclid(side), self.y.rem_euclid(side))
    }

    /// Minimum-image distance on a torus of the given side.
    pub fn torus_distance(self, other: Point, side: f64) -> f64 {
        let mut dx = (self.x - other.x).abs() % side;
        let mut dy = (self.y - other.y).abs() % side;
        if dx > 0.5 * side {
            dx = side - dx;
        }
        if dy > 0.5 * side {
            dy = side - dy;
        }
        dx.hypot(dy)
    }
}

/// Channel, antenna and protocol constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Fading drift `(mu_x, mu_y)`, both nonnegative.
    pub mu: [f64; 2],
    /// Fading diffusion coefficient.
    pub eta: f64,
    /// Path-loss exponent, strictly above 2.
    pub alpha: f64,
    /// Reception distance `R`.
    pub reception_radius: f64,
    /// Noise power `sigma^2`.
    pub noise_power: f64,
    /// BS antenna count `N`.
    pub antennas: u32,
    /// Pilot-response resource blocks `N_p`.
    pub pilot_blocks: u32,
    /// RSRP threshold `theta` gating pilot responses.
    pub rsrp_threshold: f64,
    /// Retransmission time cost `epsilon` after an unanswered pilot.
    pub retx_time: f64,
}

impl ChannelParams {
    pub fn mu_norm(&self) -> f64 {
        self.mu[0].hypot(self.mu[1])
    }

    /// Set `mu` along the diagonal with the given norm.
    pub fn with_mu_norm(mut self, norm: f64) -> Self {
        let c = norm / 2f64.sqrt();
        self.mu = [c, c];
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: String| Err(Error::config(format!("channel.{field}"), why));
        if !(self.alpha > 2.0) {
            return bad("alpha", format!("path-loss exponent must exceed 2, got {}", self.alpha));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return bad("eta", format!("must be finite and >= 0, got {}", self.eta));
        }
        if !self.mu.iter().all(|m| *m >= 0.0 && m.is_finite()) {
            return bad("mu", format!("components must be finite and >= 0, got {:?}", self.mu));
        }
        if !(self.reception_radius > 0.0) {
            return bad(
                "reception_radius",
                format!("must be > 0, got {}", self.reception_radius),
            );
        }
        if !(self.noise_power > 0.0) {
            return bad("noise_power", format!("must be > 0, got {}", self.noise_power));
        }
        if self.antennas == 0 {
            return bad("antennas", "must be >= 1".into());
        }
        if self.pilot_blocks == 0 {
            return bad("pilot_blocks", "must be >= 1".into());
        }
        if !(self.rsrp_threshold > 0.0) {
            return bad("rsrp_threshold", format!("must be > 0, got {}", self.rsrp_threshold));
        }
        if !(self.retx_time > 0.0) {
            return bad("retx_time", format!("must be > 0, got {}", self.retx_time));
        }
        Ok(())
    }
}

impl Default for ChannelParams {
    fn default() -> Self {
        let base = Self {
            mu: [0.0; 2],
            eta: 0.01,
            alpha: 4.0,
            reception_radius: 10.0,
            noise_power: 1.0,
            antennas: 10,
            pilot_blocks: 10,
            rsrp_threshold: 1.0,
            retx_time: 0.1,
        }
        .with_mu_norm(0.01);
        Self {
            rsrp_threshold: crate::analytics::calibrated_rsrp_threshold(
                &base,
                DeploymentParams::default().lambda_b,
                crate::analytics::DEFAULT_PILOT_CANDIDATES,
                1.0,
            ),
            ..base
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeploymentParams {
    pub lambda_b: f64,
    pub lambda_u: f64,
    /// Side of the square (torus) simulation window.
    pub window_side: f64,
}

/// Below this BS-to-user density ratio the ultra-dense approximations are flagged.
pub const DENSITY_RATIO_WARNING: f64 = 10.0;

impl DeploymentParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_b > 0.0 && self.lambda_b.is_finite()) {
            return Err(Error::config(
                "deployment.lambda_b",
                format!("must be > 0, got {}", self.lambda_b),
            ));
        }
        if !(self.lambda_u >= 0.0 && self.lambda_u.is_finite()) {
            return Err(Error::config(
                "deployment.lambda_u",
                format!("must be >= 0, got {}", self.lambda_u),
            ));
        }
        if !(self.window_side > 0.0 && self.window_side.is_finite()) {
            return Err(Error::config(
                "deployment.window_side",
                format!("must be > 0, got {}", self.window_side),
            ));
        }
        Ok(())
    }

    /// Warning text when `lambda_b / lambda_u` is not large.
    pub fn density_warning(&self) -> Option<String> {
        if self.lambda_u > 0.0 && self.lambda_b / self.lambda_u < DENSITY_RATIO_WARNING {
            Some(format!(
                "lambda_b/lambda_u = {:.3} < {DENSITY_RATIO_WARNING}: ultra-dense approximations are doubtful",
                self.lambda_b / self.lambda_u
            ))
        } else {
            None
        }
    }

    pub fn area(&self) -> f64 {
        self.window_side * self.window_side
    }
}

impl Default for DeploymentParams {
    fn default() -> Self {
        Self {
            lambda_b: 20.0,
            lambda_u: 1.0,
            window_side: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MobilityParams {
    /// Mean displacement per unit time (average velocity).
    pub v: f64,
    /// SDE integration step.
    pub dt: f64,
}

impl MobilityParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.v >= 0.0 && self.v.is_finite()) {
            return Err(Error::config("mobility.v", format!("must be >= 0, got {}", self.v)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config("mobility.dt", format!("must be > 0, got {}", self.dt)));
        }
        Ok(())
    }
}

impl Default for MobilityParams {
    fn default() -> Self {
        Self { v: 1.0, dt: 0.01 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FadingState {
    pub g: [f64; 2],
    pub t_last: f64,
}

impl FadingState {
    pub fn power(&self) -> f64 {
        self.g[0] * self.g[0] + self.g[1] * self.g[1]
    }
}

// ---------------------------------------------------------------------------
// Deployment
// ---------------------------------------------------------------------------

/// Homogeneous PPP on `[0, side)^2`.
pub fn sample_ppp(density: f64, window_side: f64, rng_seed: u64) -> Vec<Point> {
    sample_ppp_with(density, window_side, &mut ChaCha8Rng::seed_from_u64(rng_seed))
}

pub fn sample_ppp_with<R: Rng + ?Sized>(density: f64, window_side: f64, rng: &mut R) -> Vec<Point> {
    let mean = density * window_side * window_side;
    if !(mean > 0.0) {
        return Vec::new();
    }
    let n = Poisson::new(mean).expect("positive finite mean").sample(rng) as usize;
    (0..n)
        .map(|_| Point::new(rng.random::<f64>() * window_side, rng.random::<f64>() * window_side))
        .collect()
}

// ---------------------------------------------------------------------------
// Mobility
// ---------------------------------------------------------------------------

/// Per-coordinate displacement variance accumulated over `t`: `2 v^2 t / pi`.
pub fn displacement_variance(v: f64, t: f64) -> f64 {
    2.0 * v * v * t / PI
}

/// One Euler–Maruyama step of the Brownian mobility law (no wrapping).
pub fn step_brownian<R: Rng + ?Sized>(position: Point, mob: &MobilityParams, rng: &mut R) -> Point {
    if mob.v == 0.0 {
        return position;
    }
    let sd = displacement_variance(mob.v, mob.dt).sqrt();
    let zx: f64 = StandardNormal.sample(rng);
    let zy: f64 = StandardNormal.sample(rng);
    Point::new(position.x + sd * zx, position.y + sd * zy)
}

fn check_time_speed(op: &'static str, t: f64, v: f64) -> Result<()> {
    if !(t > 0.0) {
        return Err(Error::domain(op, format!("time must be > 0, got {t}")));
    }
    if !(v > 0.0) {
        return Err(Error::domain(op, format!("speed must be > 0, got {v}")));
    }
    Ok(())
}

/// CCDF of the distance moved during `t`: `exp(-pi u^2 / (4 t v^2))`.
pub fn movement_ccdf(u: f64, t: f64, v: f64) -> Result<f64> {
    check_time_speed("movement_ccdf", t, v)?;
    if u < 0.0 {
        return Err(Error::domain(
            "movement_ccdf",
            format!("distance must be >= 0, got {u}"),
        ));
    }
    Ok((-PI * u * u / (4.0 * t * v * v)).exp())
}

/// BS density whose nearest-BS distance has the same law as the movement
/// distance during `t`: `1 / (4 t v^2)`.
pub fn equivalent_bs_density(t: f64, v: f64) -> Result<f64> {
    check_time_speed("equivalent_bs_density", t, v)?;
    Ok(1.0 / (4.0 * t * v * v))
}

/// CCDF of the nearest-point distance in a PPP of the given density.
pub fn nearest_distance_ccdf(d: f64, density: f64) -> f64 {
    (-density * PI * d * d).exp()
}

// ---------------------------------------------------------------------------
// Fading
// ---------------------------------------------------------------------------

/// Euler–Maruyama step of `dg = (mu - g)/2 dt + eta dW` per component.
pub fn step_fading<R: Rng + ?Sized>(state: FadingState, channel: &ChannelParams, dt: f64, rng: &mut R) -> FadingState {
    let sd = channel.eta * dt.sqrt();
    let mut g = state.g;
    for (gi, mi) in g.iter_mut().zip(channel.mu) {
        let z: f64 = if sd > 0.0 { StandardNormal.sample(rng) } else { 0.0 };
        *gi += 0.5 * (mi - *gi) * dt + sd * z;
    }
    FadingState {
        g,
        t_last: state.t_last + dt,
    }
}

/// Exact Gaussian transition of the fading SDE over `dt`:
/// mean `mu + (g - mu) e^{-dt/2}`, variance `eta^2 (1 - e^{-dt})`.
pub fn step_fading_exact<R: Rng + ?Sized>(
    state: FadingState,
    channel: &ChannelParams,
    dt: f64,
    rng: &mut R,
) -> FadingState {
    let decay = (-0.5 * dt).exp();
    let sd = channel.eta * (-(-dt).exp_m1()).sqrt();
    let mut g = state.g;
    for (gi, mi) in g.iter_mut().zip(channel.mu) {
        let z: f64 = if sd > 0.0 { StandardNormal.sample(rng) } else { 0.0 };
        *gi = mi + (*gi - mi) * decay + sd * z;
    }
    FadingState {
        g,
        t_last: state.t_last + dt,
    }
}

/// Draw `g(t)` for a link whose fading started at `g(0) = 0`. `t = inf`
/// draws from the stationary law `N(mu, eta^2)`.
pub fn sample_fading_at<R: Rng + ?Sized>(channel: &ChannelParams, t: f64, rng: &mut R) -> FadingState {
    let start = FadingState {
        g: [0.0; 2],
        t_last: 0.0,
    };
    let mut s = step_fading_exact(start, channel, t, rng);
    s.t_last = t;
    s
}

// ---------------------------------------------------------------------------
// Complete spatial randomness
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HomogeneityStat {
    /// Pearson chi-square over the quadrat counts.
    pub statistic: f64,
    pub dof: usize,
    pub quadrats_per_side: usize,
    pub p_value: f64,
}

impl HomogeneityStat {
    pub fn rejects(&self, significance: f64) -> bool {
        self.p_value < significance
    }
}

/// Quadrat chi-square test of complete spatial randomness for `points_t`
/// (the displaced copy of `points_t0`) on the square window.
pub fn homogeneity_check(points_t0: &[Point], points_t: &[Point], window_side: f64) -> Result<HomogeneityStat> {
    if points_t.is_empty() || points_t0.is_empty() {
        return Err(Error::domain("homogeneity_check", "empty point set"));
    }
    if points_t0.len() != points_t.len() {
        return Err(Error::domain(
            "homogeneity_check",
            format!("point sets differ in size ({} vs {})", points_t0.len(), points_t.len()),
        ));
    }
    let n = points_t.len();
    // Aim for an expected count of at least 5 per cell.
    let k = ((n as f64 / 5.0).sqrt().floor() as usize).clamp(2, 10);
    let mut counts = vec![0usize; k * k];
    for p in points_t {
        let q = p.wrapped(window_side);
        let ix = ((q.x / window_side * k as f64) as usize).min(k - 1);
        let iy = ((q.y / window_side * k as f64) as usize).min(k - 1);
        counts[iy * k + ix] += 1;
    }
    let expected = n as f64 / (k * k) as f64;
    let statistic: f64 = counts
        .iter()
        .map(|&c| {
            let d = c as f64 - expected;
            d * d / expected
        })
        .sum();
    let dof = k * k - 1;
    let chi = ChiSquared::new(dof as f64).expect("dof >= 3");
    Ok(HomogeneityStat {
        statistic,
        dof,
        quadrats_per_side: k,
        p_value: chi.sf(statistic),
    })
}
