//! Independent oracles: brute-force quadrature, Monte Carlo, closed limits
//! and the reference parameter set.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use udn_core::analytics::{self, min_ho_window, HoPolicy, Model};
use udn_core::config::parse_config_str;
use udn_core::experiments;
use udn_core::simulator::{run_episode_cached, AnalyticCache, FadingMode};
use udn_core::specfun::{c1, marcum_q1, QuadratureSpec, EULER_GAMMA};
use udn_core::stochastic::{sample_ppp, step_brownian, ChannelParams, MobilityParams, Point};

fn i0_series(x: f64) -> f64 {
    let q = x * x / 4.0;
    let (mut term, mut sum) = (1.0f64, 1.0f64);
    for k in 1..400 {
        term *= q / (k as f64 * k as f64);
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    sum
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for k in 1..n {
        s += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// Marcum Q1 straight from its defining integral.
fn q1_brute(a: f64, b: f64) -> f64 {
    let upper = b.max(a) + 40.0;
    simpson(
        |x| x * (-(x * x + a * a) / 2.0).exp() * i0_series(a * x),
        b,
        upper,
        4000,
    )
}

/// c1 by composite Simpson at step h and h/2, Richardson-combined.
fn c1_romberg(ch: &ChannelParams, t: f64) -> (f64, f64) {
    let a = ch.mu_norm() / (ch.eta * (1.0 + (-t / 2.0).exp()));
    let s = 1.0 / (ch.eta * (1.0 - (-t).exp()));
    let head = ch.alpha * (EULER_GAMMA + PI.ln()) / 2.0;
    let limit = ((a + 40.0) / s).ln().max(0.0);
    if limit == 0.0 {
        return (head, 0.0);
    }
    let f = |x: f64| q1_brute(a, s * x.exp());
    let coarse = simpson(f, 0.0, limit, 256);
    let fine = simpson(f, 0.0, limit, 512);
    let integral = fine + (fine - coarse) / 15.0;
    (head + 2.0 * integral, (fine - coarse).abs())
}

#[test]
fn marcum_series_matches_defining_integral() {
    for &(a, b) in &[(0.0, 1.0), (0.5, 0.5), (1.0, 2.0), (3.0, 2.5), (2.0, 6.0), (5.0, 4.0)] {
        let lib = marcum_q1(a, b).unwrap();
        let brute = q1_brute(a, b);
        assert!((lib - brute).abs() < 1e-10, "Q1({a},{b}): {lib} vs {brute}");
    }
    // Q1(0, b) = exp(-b^2/2)
    for b in [0.3, 1.0, 4.0] {
        assert!((marcum_q1(0.0, b).unwrap() - (-b * b / 2.0).exp()).abs() < 1e-14);
    }
}

#[test]
fn rate_constant_matches_romberg_oracle() {
    let quad = QuadratureSpec::default();
    let weak = ChannelParams::default();
    let strong = ChannelParams { eta: 0.5, ..weak }.with_mu_norm(0.5f64.sqrt());
    for (ch, t) in [(weak, 1.0), (strong, 1.0), (strong, 0.3), (strong, 50.0)] {
        let lib = c1(&ch, t, &quad).unwrap();
        let (oracle, step_change) = c1_romberg(&ch, t);
        assert!(step_change < 1e-8, "step halving moved the oracle by {step_change}");
        assert!((lib - oracle).abs() < 1e-9, "eta={} t={t}: {lib} vs {oracle}", ch.eta);
    }
}

#[test]
fn rate_constant_is_stable_under_tighter_quadrature() {
    let strong = ChannelParams {
        eta: 0.5,
        ..Default::default()
    }
    .with_mu_norm(0.5f64.sqrt());
    let base = QuadratureSpec::default();
    let tight = QuadratureSpec {
        abs_tol: base.abs_tol / 2.0,
        rel_tol: base.rel_tol / 2.0,
        truncation_threshold: base.truncation_threshold / 2.0,
    };
    let a = c1(&strong, 1.0, &base).unwrap();
    let b = c1(&strong, 1.0, &tight).unwrap();
    assert!((a - b).abs() <= 2.0 * base.abs_tol + 1e-12, "{a} vs {b}");
}

#[test]
fn rate_constant_head_term() {
    // alpha (gamma + ln pi) / 2 at alpha = 4, full-precision gamma.
    let head = 4.0 * (0.577_215_664_901_532_9 + PI.ln()) / 2.0;
    assert!((head - 3.4435).abs() < 1e-3);
    let c = c1(&ChannelParams::default(), 1.0, &QuadratureSpec::default()).unwrap();
    assert!(c >= head && c - head < 1e-9);
}

#[test]
fn defaults_are_the_reference_parameter_set() {
    let s = parse_config_str("", &[]).unwrap();
    let ch = s.channel_params();
    assert_eq!(ch.eta, 0.01);
    assert!((ch.mu_norm() - 0.01).abs() < 1e-15);
    assert_eq!(ch.noise_power, 1.0);
    assert_eq!(s.deployment.lambda_b, 20.0);
    assert_eq!(s.power.p_max, 20.0);
    assert_eq!(ch.antennas, 10);
    assert_eq!(ch.alpha, 4.0);
    assert_eq!(ch.reception_radius, 10.0);
    assert_eq!(s.power.p_c, 1.0);
}

/// At the minimum window the movement distance beats the nearest-BS
/// distance with probability beta.
#[test]
fn minimum_window_gives_beta_by_monte_carlo() {
    let m = Model::default();
    let mob = MobilityParams { v: 2.0, dt: 0.01 };
    let pol = HoPolicy {
        beta: 0.7,
        ..Default::default()
    };
    let t_min = min_ho_window(&m.deploy, &mob, &pol).unwrap();
    let side = 6.0;
    let steps = 8;
    let walk = MobilityParams {
        v: mob.v,
        dt: t_min / steps as f64,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let trials = 20_000;
    let mut wins = 0;
    for k in 0..trials {
        let bss = sample_ppp(m.deploy.lambda_b, side, 50_000 + k);
        let centre = Point::new(side / 2.0, side / 2.0);
        let nearest = bss
            .iter()
            .map(|b| (b.x - centre.x).hypot(b.y - centre.y))
            .fold(f64::INFINITY, f64::min);
        let mut p = Point::new(0.0, 0.0);
        for _ in 0..steps {
            p = step_brownian(p, &walk, &mut rng);
        }
        if p.x.hypot(p.y) > nearest {
            wins += 1;
        }
    }
    let freq = wins as f64 / trials as f64;
    let se = (pol.beta * (1.0 - pol.beta) / trials as f64).sqrt();
    assert!((freq - pol.beta).abs() < 4.0 * se, "{freq} vs {}", pol.beta);
}

#[test]
fn interference_scales_with_user_density_squared() {
    let mut m = Model::default();
    let a = analytics::mf_interference(&m, 1.0, 1.0).unwrap();
    m.deploy.lambda_u = 2.0;
    let b = analytics::mf_interference(&m, 1.0, 1.0).unwrap();
    assert!((b / a - 4.0).abs() < 1e-12);
    m.deploy.lambda_u = 0.0;
    assert_eq!(analytics::mf_interference(&m, 1.0, 1.0).unwrap(), 0.0);
}

#[test]
fn optimal_window_decreases_with_speed() {
    let s = parse_config_str("", &[]).unwrap();
    let speeds = [1.0, 2.0, 3.0, 5.0, 7.0, 10.0];
    let r = experiments::fig5_sweep_with(&s, &speeds).unwrap();
    let series = experiments::fig5_series(&r);
    assert!(series.windows(2).all(|w| w[1].1 < w[0].1), "{series:?}");
}

/// The gap between time-varying and stationary fading closes in the long-term average.
#[test]
fn fading_dynamics_wash_out_of_long_term_average() {
    let base = experiments::fig6_scenario(&parse_config_str("", &[]).unwrap()).unwrap();
    let horizon = 40.0;
    let mut curves = Vec::new();
    for fading in [FadingMode::TimeVarying, FadingMode::Stationary] {
        let mut s = base.clone();
        s.run.fading = fading;
        let params = s.sim_params();
        let mut cache = AnalyticCache::new(&params);
        let eps: Vec<_> = (1..=3)
            .map(|seed| run_episode_cached(&params, horizon, seed, &mut cache).unwrap())
            .collect();
        let at = |k: usize| eps.iter().map(|e| e.steps[k].long_term_ee_a).sum::<f64>() / eps.len() as f64;
        let n = eps[0].steps.len();
        curves.push((at(n / 10 - 1), at(n - 1)));
    }
    let early = (curves[0].0 - curves[1].0).abs();
    let late = (curves[0].1 - curves[1].1).abs();
    assert!(late < 0.5 * early, "early gap {early}, late gap {late}");
}
