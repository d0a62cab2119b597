//! Acceptance criteria. Runs without the libtest harness so that criteria
//! execute one after another (runtime limits stay meaningful) and every
//! PASS/FAIL line reaches stdout.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use udn_core::analytics::{self, calibrated_rsrp_threshold, power_fixed_point, Link, Model};
use udn_core::config::{parse_config_str, ScenarioParams};
use udn_core::experiments::{self, RATIO_BAND};
use udn_core::simulator::{congestion_trial, run_episode_cached, AnalyticCache};
use udn_core::specfun::{lambert_w, marcum_q1, marcum_q1_quadrature, QuadratureSpec};
use udn_core::stochastic::{homogeneity_check, sample_ppp, step_brownian, MobilityParams, Point};

struct Outcome {
    pass: bool,
    label: &'static str,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Self {
            pass,
            label: if pass { "PASS" } else { "FAIL" },
            detail,
        }
    }
}

fn defaults() -> ScenarioParams {
    parse_config_str("", &[]).expect("default scenario")
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

// ---------------------------------------------------------------------------
// 1. Special functions
// ---------------------------------------------------------------------------

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut ys = vec![0.0];
    ys.extend((0..=2000).map(|k| 10f64.powf(-12.0 + 18.0 * k as f64 / 2000.0)));
    ys.extend((1..=1000).map(|k| 1e3 * k as f64));
    let mut worst_w = 0.0f64;
    for &y in &ys {
        let w = lambert_w(y).expect("lambert_w on [0, 1e6]");
        let r = if y == 0.0 { w.abs() } else { (w * w.exp() - y).abs() / y };
        worst_w = worst_w.max(r);
    }

    let quad = QuadratureSpec::default();
    let grid: Vec<f64> = (0..20).map(|k| 0.5 * k as f64).collect();
    let mut worst_q = 0.0f64;
    for &a in &grid {
        for &b in &grid {
            let s = marcum_q1(a, b).expect("series route");
            let q = marcum_q1_quadrature(a, b, &quad).expect("quadrature route");
            worst_q = worst_q.max((s - q).abs());
        }
    }
    let elapsed = secs(start.elapsed());
    Outcome::new(
        worst_w < 1e-10 && worst_q < 1e-8 && elapsed < 1.0,
        format!(
            "W residual {worst_w:.2e} (< 1e-10, {} points), Q1 routes {worst_q:.2e} (< 1e-8, 20x20), {elapsed:.3} s (< 1 s)",
            ys.len()
        ),
    )
}

// ---------------------------------------------------------------------------
// 2. Movement distance law
// ---------------------------------------------------------------------------

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let walkers = 100_000;
    let steps = 10;
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for (i, &(v, t)) in [(1.0, 1.0), (3.0, 0.3)].iter().enumerate() {
        let mob = MobilityParams {
            v,
            dt: t / steps as f64,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(100 + i as u64);
        let mut d: Vec<f64> = (0..walkers)
            .map(|_| {
                let mut p = Point::new(0.0, 0.0);
                for _ in 0..steps {
                    p = step_brownian(p, &mob, &mut rng);
                }
                p.x.hypot(p.y)
            })
            .collect();
        d.sort_by(f64::total_cmp);
        let n = walkers as f64;
        let sup = d
            .iter()
            .enumerate()
            .map(|(k, &u)| {
                let theory = (-PI * u * u / (4.0 * t * v * v)).exp();
                let above = (n - k as f64) / n;
                let below = (n - k as f64 - 1.0) / n;
                (above - theory).abs().max((below - theory).abs())
            })
            .fold(0.0, f64::max);
        worst = worst.max(sup);
        parts.push(format!("(v={v}, t={t}) {sup:.4}"));
    }
    let elapsed = secs(start.elapsed());
    Outcome::new(
        worst < 0.01 && elapsed < 10.0,
        format!(
            "sup deviation {} (< 0.01, 1e5 walkers), {elapsed:.2} s (< 10 s)",
            parts.join(", ")
        ),
    )
}

// ---------------------------------------------------------------------------
// 3. Spatial homogeneity after motion
// ---------------------------------------------------------------------------

fn criterion_3() -> Outcome {
    let side = 10.0;
    let mob = MobilityParams { v: 3.0, dt: 0.1 };
    let mut accepted = 0;
    for seed in 0..20u64 {
        let p0 = sample_ppp(20.0, side, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let p1: Vec<Point> = p0
            .iter()
            .map(|&p| {
                let mut q = p;
                for _ in 0..10 {
                    q = step_brownian(q, &mob, &mut rng).wrapped(side);
                }
                q
            })
            .collect();
        let stat = homogeneity_check(&p0, &p1, side).expect("nonempty point sets");
        if !stat.rejects(0.01) {
            accepted += 1;
        }
    }
    Outcome::new(accepted >= 19, format!("{accepted}/20 seeds accept CSR at 1% (>= 19)"))
}

// ---------------------------------------------------------------------------
// 4. Closed-form optima against grid search
// ---------------------------------------------------------------------------

/// Mean fading power, written out independently of the library.
fn fading_power(eta: f64, mu: f64, t: f64) -> f64 {
    2.0 * eta * eta * (1.0 - (-t).exp()).powi(2) + mu * mu * (1.0 - (-t / 2.0).exp()).powi(2)
}

/// MF interference of population power `p`.
fn mf_interference(m: &Model, p: f64, t: f64) -> f64 {
    let ch = &m.channel;
    let (a, r) = (ch.alpha, ch.reception_radius);
    let users = (m.deploy.lambda_u * PI * r).powi(2);
    let tail = 1.0 + (1.0 - r.powf(2.0 - a)) / (a - 2.0);
    users / ((ch.antennas as f64).sqrt() * m.deploy.lambda_b.powf(a / 2.0))
        * tail
        * fading_power(ch.eta, ch.mu_norm(), t)
        * p
}

/// EE with handover, interference frozen at `i_hat`.
fn ee1_frozen(m: &Model, p: f64, t: f64, c1: f64, i_hat: f64) -> f64 {
    let ch = &m.channel;
    let lb = m.deploy.lambda_b;
    let area = PI * (fading_power(ch.eta, ch.mu_norm(), t) / ch.rsrp_threshold).powf(2.0 / ch.alpha);
    let pref = 1.0 - ch.retx_time * (-lb * area).exp();
    let noise =
        ch.noise_power / ch.antennas as f64 * (lb * (-lb * area / ch.pilot_blocks as f64).exp()).powf(-ch.alpha / 2.0);
    pref / (m.power.p_c + p) * (c1 + (p / (noise + i_hat)).ln())
}

/// Active-BS EE of the serving link, interference frozen at `i_hat`.
fn ee_a_frozen(m: &Model, v: f64, elapsed: f64, p: f64, c1: f64, i_hat: f64) -> f64 {
    let ch = &m.channel;
    let d = (2.0 * v * elapsed.sqrt()).powf(ch.alpha);
    let ee0 = (c1 + (p / (d * (ch.noise_power / ch.antennas as f64 + i_hat))).ln()) / m.power.p_c;
    ee0 / (1.0 + p / m.power.p_c)
}

fn grid_argmax(p_max: f64, f: impl Fn(f64) -> f64) -> f64 {
    let n = 10_000;
    let mut best = (f64::NEG_INFINITY, 0.0);
    for k in 1..=n {
        let p = p_max * k as f64 / n as f64;
        let v = f(p);
        if v > best.0 {
            best = (v, p);
        }
    }
    best.1
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let quad = QuadratureSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_cells = 0.0f64;
    let mut failures = Vec::new();
    for draw in 0..50 {
        let mut m = Model::default();
        m.channel.antennas = rng.random_range(5..=200);
        m.channel.eta = rng.random_range(0.005..0.05);
        m.channel = m.channel.with_mu_norm(rng.random_range(0.005..0.05));
        m.deploy.lambda_b = rng.random_range(10.0..40.0);
        m.deploy.lambda_u = rng.random_range(0.5..2.0);
        m.power.p_c = rng.random_range(0.5..2.0);
        let t: f64 = rng.random_range(0.5..2.0);
        let v: f64 = rng.random_range(0.5..5.0);
        let elapsed: f64 = rng.random_range(0.05..1.0);
        m.channel.rsrp_threshold = calibrated_rsrp_threshold(&m.channel, m.deploy.lambda_b, 5.0, t);
        let c1 = m.c1(t, &quad).expect("c1");
        let cell = m.power.p_max / 10_000.0;

        let p1 = power_fixed_point(&m, Link::Handover, t, c1, m.power.p_max, 1e-12, 1_000_000)
            .expect("P1 fixed point")
            .power;
        let i1 = mf_interference(&m, p1, t);
        let g1 = grid_argmax(m.power.p_max, |p| ee1_frozen(&m, p, t, c1, i1));

        let p0 = power_fixed_point(&m, Link::Retain { v, elapsed }, t, c1, m.power.p_max, 1e-12, 1_000_000)
            .expect("P0 fixed point")
            .power;
        let i0 = mf_interference(&m, p0, t);
        let g0 = grid_argmax(m.power.p_max, |p| ee_a_frozen(&m, v, elapsed, p, c1, i0));

        for (name, closed, grid) in [("P1", p1, g1), ("P0", p0, g0)] {
            let cells = (closed - grid).abs() / cell;
            worst_cells = worst_cells.max(cells);
            if cells > 1.0 {
                failures.push(format!("draw {draw} {name}: closed {closed:.6} grid {grid:.6}"));
            }
        }
    }
    let elapsed = secs(start.elapsed());
    Outcome::new(
        failures.is_empty() && elapsed < 60.0,
        format!(
            "50 draws x 2 powers, worst offset {worst_cells:.3} grid cells (<= 1), {elapsed:.2} s (< 60 s){}",
            if failures.is_empty() {
                String::new()
            } else {
                format!("; {}", failures.join("; "))
            }
        ),
    )
}

// ---------------------------------------------------------------------------
// 5. Fixed point
// ---------------------------------------------------------------------------

fn criterion_5() -> Outcome {
    let s = defaults();
    let m = s.model();
    let t = s.run.analysis_time;
    let c1 = m.c1(t, &s.quadrature).expect("c1");
    let links = [
        ("P1", Link::Handover),
        (
            "P0",
            Link::Retain {
                v: s.mobility.v,
                elapsed: s.policy.t_hat,
            },
        ),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, link) in links {
        let a = power_fixed_point(&m, link, t, c1, m.power.p_max, 1e-9, 10);
        let b = power_fixed_point(&m, link, t, c1, 1e-3, 1e-9, 10);
        match (a, b) {
            (Ok(a), Ok(b)) => {
                let rel = (a.power - b.power).abs() / a.power;
                ok &= rel < 1e-8;
                parts.push(format!(
                    "{name} {:.6} in {}/{} iterations, rel diff {rel:.1e}",
                    a.power, a.iterations, b.iterations
                ));
            }
            (a, b) => {
                ok = false;
                parts.push(format!("{name} failed within 10 iterations: {a:?} / {b:?}"));
            }
        }
    }
    Outcome::new(
        ok,
        format!("{} (starts P_max and 1e-3, <= 10 iterations, < 1e-8)", parts.join("; ")),
    )
}

// ---------------------------------------------------------------------------
// 6. Root property of the handover window
// ---------------------------------------------------------------------------

fn criterion_6() -> Outcome {
    let s = experiments::fig6_scenario(&defaults()).expect("comparison scenario");
    let m = s.model();
    let t = s.run.analysis_time;
    let c1 = m.c1(t, &s.quadrature).expect("c1");
    let w = analytics::optimal_ho_window(&m, &s.mobility, &s.policy, t, c1).expect("window");
    if !w.interior {
        return Outcome::new(
            false,
            format!("window not interior (t_hat* = t_hat_min = {:.4})", w.t_hat_min),
        );
    }
    let gap = |th: f64| analytics::ho_indifference_gap(&m, &s.mobility, t, th, c1).expect("gap");
    let scale = analytics::handover_reference_ee(&m, w.p1_star, t, c1).expect("reference EE");
    let (lo, at, hi) = (gap(0.9 * w.t_hat_star), gap(w.t_hat_star), gap(1.1 * w.t_hat_star));
    let rel = at.abs() / scale;
    Outcome::new(
        lo * hi < 0.0 && rel < 1e-6,
        format!(
            "t_hat* = {:.5} (min {:.5}); gap {lo:.4} at 0.9 t_hat*, {hi:.4} at 1.1 t_hat*, |gap(t_hat*)| / EE1 = {rel:.1e} (< 1e-6)",
            w.t_hat_star, w.t_hat_min
        ),
    )
}

// ---------------------------------------------------------------------------
// 7. Figure shapes
// ---------------------------------------------------------------------------

fn strictly_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] > w[0])
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn criterion_7() -> Outcome {
    let s = defaults();

    let start = Instant::now();
    let fig3 = experiments::fig3_sweep(&s).expect("fig3");
    let t3 = secs(start.elapsed());
    let ee1_n = fig3.metric_where(|p| p[0].parse::<f64>().ok() == Some(20.0));
    let ok3 = ee1_n.len() == experiments::FIG3_ANTENNAS.len() && strictly_increasing(&ee1_n) && t3 < 60.0;

    let start = Instant::now();
    let fig4 = experiments::fig4_sweep(&s).expect("fig4");
    let t4 = secs(start.elapsed());
    let (nv, nt) = (experiments::FIG4_SPEEDS.len(), experiments::FIG4_ELAPSED.len());
    let vals: Vec<f64> = fig4.rows.iter().map(|r| r.metric).collect();
    let by_t = (0..nv).all(|i| strictly_decreasing(&vals[i * nt..(i + 1) * nt]));
    let by_v = (0..nt).all(|j| strictly_decreasing(&(0..nv).map(|i| vals[i * nt + j]).collect::<Vec<_>>()));
    let ok4 = vals.len() == nv * nt && by_t && by_v && t4 < 60.0;

    let start = Instant::now();
    let fig5 = experiments::fig5_sweep(&s).expect("fig5");
    let t5 = secs(start.elapsed());
    let series = experiments::fig5_series(&fig5);
    let nonincreasing = series.windows(2).all(|w| w[1].1 <= w[0].1);
    let above_min = series.iter().all(|&(_, star, min)| star >= min);
    let interior = series.iter().filter(|&&(_, star, min)| star > min).count();
    let ok5 = nonincreasing && above_min && t5 < 60.0;

    Outcome::new(
        ok3 && ok4 && ok5,
        format!(
            "fig3 EE1* increasing in N at lambda_b=20: {ok3} ({t3:.2} s); fig4 EE0* decreasing in v and t_hat: {ok4} ({t4:.2} s); \
             fig5 t_hat* nonincreasing and >= t_hat_min: {ok5} ({t5:.2} s, {interior}/{} points interior); each < 60 s",
            series.len()
        ),
    )
}

// ---------------------------------------------------------------------------
// 8. Interference trend in the antenna count
// ---------------------------------------------------------------------------

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

fn criterion_8() -> Outcome {
    let seeds = 1..=5u64;
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    let mut means = Vec::new();
    for n in [4u32, 16, 64, 256] {
        let s = parse_config_str("", &[format!("channel.antennas={n}")]).expect("scenario");
        let params = s.sim_params();
        let mut cache = AnalyticCache::new(&params);
        let mut sum = 0.0;
        for seed in seeds.clone() {
            let ep = run_episode_cached(&params, 5.0, seed, &mut cache).expect("episode");
            xs.push(n as f64);
            ys.push(ep.mean_normalized_interference);
            sum += ep.mean_normalized_interference;
        }
        means.push(sum / seeds.clone().count() as f64);
    }
    let rho = spearman(&xs, &ys);
    Outcome::new(
        rho <= -0.9 && strictly_decreasing(&means),
        format!(
            "Spearman {rho:.4} (<= -0.9) over 4 N x 5 seeds; seed means {}",
            means.iter().map(|m| format!("{m:.3e}")).collect::<Vec<_>>().join(" > ")
        ),
    )
}

// ---------------------------------------------------------------------------
// 9. Long-term comparison
// ---------------------------------------------------------------------------

fn criterion_9() -> Outcome {
    let r = experiments::fig6_comparison(&defaults()).expect("comparison");
    let sum = &r.summary;
    let variants: Vec<String> = sum
        .variants
        .iter()
        .map(|v| {
            format!(
                "{}: {:.4}/{:.4} = {:.3} (gap {:+.3})",
                v.fading.label(),
                v.proposed_mean,
                v.baseline_mean,
                v.ratio,
                v.gap_from_reference
            )
        })
        .collect();
    let detail = format!(
        "{} seeds, horizon {}, {:.1} s (< 600 s); {}; band [{}, {}]",
        sum.seeds.len(),
        sum.horizon,
        sum.runtime_s,
        variants.join("; "),
        RATIO_BAND.0,
        RATIO_BAND.1
    );
    let timely = sum.runtime_s < 600.0;
    if sum.within_band && timely {
        Outcome::new(true, detail)
    } else if sum.proposed_wins && timely {
        Outcome {
            pass: true,
            label: "PASS [fallback: ratio > 1, band missed]",
            detail,
        }
    } else {
        Outcome::new(false, detail)
    }
}

// ---------------------------------------------------------------------------
// 10. Pilot congestion
// ---------------------------------------------------------------------------

fn criterion_10() -> Outcome {
    let s = defaults();
    let m = s.model();
    let t = s.run.analysis_time;
    let est = congestion_trial(&m, t, 10_000, 10).expect("congestion trial");
    let ch = &m.channel;
    let area = PI * (fading_power(ch.eta, ch.mu_norm(), t) / ch.rsrp_threshold).powf(2.0 / ch.alpha);
    let expected = (-m.deploy.lambda_b * area / ch.pilot_blocks as f64).exp();
    let z = (est.frequency - expected) / est.std_error;
    Outcome::new(
        z.abs() <= 3.0 && (est.expected - expected).abs() < 1e-12,
        format!(
            "frequency {:.5} vs exp(-lambda_b A / N_p) = {expected:.5}, SE {:.5}, z = {z:+.2} (|z| <= 3, 1e4 trials)",
            est.frequency, est.std_error
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(u32, fn() -> Outcome); 10] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
        (10, criterion_10),
    ];
    let mut failed = Vec::new();
    for (k, f) in criteria {
        let o = f();
        println!("criterion {k:>2} {}: {}", o.label, o.detail);
        if !o.pass {
            failed.push(k);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failing criteria {failed:?}");
        ExitCode::FAILURE
    }
}
