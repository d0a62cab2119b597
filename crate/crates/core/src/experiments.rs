//! Parameter sweeps behind the four result figures and the long-term EE
//! comparison of the proposed policy with a fixed-interval baseline.
//!
//! Sweeps vary configuration keys (`channel.antennas`, `mobility.v`, ...)
//! over a grid. Each row holds the parameter values, the metric, a 95%
//! confidence half-width when several seeds back it, and the closed-form
//! value. Output is CSV with a JSON sidecar holding the full scenario.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::analytics::{self, check_convergence_conditions, ConvergenceThresholds};
use crate::config::{ScenarioParams, ScheduleKind, Threshold};
use crate::error::{Error, Result};
use crate::simulator::{run_episode_cached, AnalyticCache, Episode, FadingMode};

pub const FIG3_ANTENNAS: &[u32] = &[10, 20, 50, 100, 200, 500, 1000, 2000, 5000, 10000];
pub const FIG3_BS_DENSITIES: &[f64] = &[10.0, 20.0, 40.0, 80.0, 160.0];
pub const FIG4_SPEEDS: &[f64] = &[0.5, 1.0, 2.0, 3.0, 5.0, 7.0, 10.0];
pub const FIG4_ELAPSED: &[f64] = &[0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.5, 1.0];
pub const FIG5_SPEEDS: &[f64] = &[0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 5.0, 7.0, 10.0];
/// Long-term EE gain of the proposed policy quoted for the comparison setup.
pub const REFERENCE_RATIO: f64 = 1.2;
/// Accepted band around [`REFERENCE_RATIO`].
pub const RATIO_BAND: (f64, f64) = (1.1, 1.3);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    /// `EE1` at the optimal handover power.
    Ee1Star,
    /// `EE0` at the optimal serving power, elapsed time `policy.t_hat`.
    Ee0Star,
    THatStar,
    /// Simulated long-term average EE at the tagged active BS.
    EeALongterm,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Ee1Star => "ee1_star",
            MetricKind::Ee0Star => "ee0_star",
            MetricKind::THatStar => "t_hat_star",
            MetricKind::EeALongterm => "ee_a_longterm",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    /// Configuration key and grid, outermost first.
    pub swept: Vec<(String, Vec<f64>)>,
    pub fixed: ScenarioParams,
    pub metric: MetricKind,
    pub seeds: Vec<u64>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.swept.is_empty() || self.swept.iter().any(|(_, g)| g.is_empty()) {
            return Err(Error::config("sweep", "every swept parameter needs a nonempty grid"));
        }
        if self.metric == MetricKind::EeALongterm && self.seeds.is_empty() {
            return Err(Error::config("sweep.seeds", "simulated metrics need at least one seed"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub params: Vec<String>,
    pub metric: f64,
    pub ci: Option<f64>,
    pub analytic: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub name: String,
    pub param_names: Vec<String>,
    pub metric: String,
    pub rows: Vec<SweepRow>,
    /// Grid points where the mean-field approximations are doubtful, and other remarks.
    pub notes: Vec<String>,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for p in &self.param_names {
            out.push_str(p);
            out.push(',');
        }
        out.push_str("metric,ci,analytic\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            for p in &r.params {
                out.push_str(p);
                out.push(',');
            }
            let _ = writeln!(out, "{},{},{}", r.metric, opt(r.ci), opt(r.analytic));
        }
        out
    }

    /// Metric column of the rows whose parameters satisfy `pred`.
    pub fn metric_where(&self, pred: impl Fn(&[String]) -> bool) -> Vec<f64> {
        self.rows.iter().filter(|r| pred(&r.params)).map(|r| r.metric).collect()
    }
}

/// Mean and 95% normal half-width (`None` below two samples).
pub fn mean_ci(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some(1.96 * (var / n).sqrt()))
}

fn fmt_value(v: f64) -> String {
    v.to_string()
}

fn grid_points(swept: &[(String, Vec<f64>)]) -> Vec<Vec<f64>> {
    let mut points = vec![Vec::new()];
    for (_, grid) in swept {
        points = points
            .into_iter()
            .flat_map(|p| {
                grid.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push(*v);
                    q
                })
            })
            .collect();
    }
    points
}

/// c1 depends only on the fading law, path loss and time.
#[derive(Default)]
struct C1Cache(HashMap<[u64; 5], f64>);

impl C1Cache {
    fn get(&mut self, s: &ScenarioParams, t: f64) -> Result<f64> {
        let ch = s.channel_params();
        let key = [ch.eta, ch.mu_norm(), ch.alpha, t, s.quadrature.abs_tol].map(f64::to_bits);
        if let Some(v) = self.0.get(&key) {
            return Ok(*v);
        }
        let v = s.model().c1(t, &s.quadrature)?;
        self.0.insert(key, v);
        Ok(v)
    }
}

/// Generic grid sweep.
pub fn run_sweep(name: &str, spec: &SweepSpec) -> Result<SweepResult> {
    spec.validate()?;
    let mut result = SweepResult {
        name: name.to_string(),
        param_names: spec.swept.iter().map(|(k, _)| k.clone()).collect(),
        metric: spec.metric.name().to_string(),
        rows: Vec::new(),
        notes: Vec::new(),
    };
    let mut c1s = C1Cache::default();
    for point in grid_points(&spec.swept) {
        let overrides: Vec<String> = spec
            .swept
            .iter()
            .zip(&point)
            .map(|((k, _), v)| format!("{k}={}", toml_number(*v)))
            .collect();
        let s = spec.fixed.apply_overrides(&overrides)?;
        let model = s.model();
        let t = s.run.analysis_time;
        let report = check_convergence_conditions(&model, &s.mobility, &s.policy, &ConvergenceThresholds::default(), t);
        if report.dubious {
            result
                .notes
                .push(format!("{}: {}", overrides.join(" "), report.flags.join("; ")));
        }
        let (metric, ci, analytic) = match spec.metric {
            MetricKind::Ee1Star => {
                let c1 = c1s.get(&s, t)?;
                let p1 = analytics::optimal_p1(&model, t, c1)?;
                let v = analytics::ee1(&model, p1, t, c1)?;
                (v, None, Some(v))
            }
            MetricKind::Ee0Star => {
                let c1 = c1s.get(&s, t)?;
                let p0 = analytics::optimal_p0(&model, &s.mobility, t, s.policy.t_hat, c1)?;
                let v = analytics::ee0(&model, &s.mobility, p0, t, s.policy.t_hat, c1)?;
                (v, None, Some(v))
            }
            MetricKind::THatStar => {
                let c1 = c1s.get(&s, t)?;
                let v = analytics::optimal_ho_window(&model, &s.mobility, &s.policy, t, c1)?.t_hat_star;
                (v, None, Some(v))
            }
            MetricKind::EeALongterm => {
                let params = s.sim_params();
                let mut cache = AnalyticCache::new(&params);
                let mut sim = Vec::new();
                let mut ana = Vec::new();
                for &seed in &spec.seeds {
                    let ep = run_episode_cached(&params, s.run.horizon, seed, &mut cache)?;
                    sim.push(ep.long_term_ee_a);
                    ana.push(analytic_long_term(&ep));
                }
                let (m, ci) = mean_ci(&sim);
                (m, ci, Some(mean_ci(&ana).0))
            }
        };
        result.rows.push(SweepRow {
            params: point.iter().map(|v| fmt_value(*v)).collect(),
            metric,
            ci,
            analytic,
        });
    }
    Ok(result)
}

fn toml_number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        v.to_string()
    }
}

/// Time average of the closed-form EE at the simulated operating points.
fn analytic_long_term(ep: &Episode) -> f64 {
    let vals: Vec<f64> = ep.steps.iter().filter_map(|s| s.analytic_ee_a).collect();
    if vals.is_empty() {
        f64::NAN
    } else {
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

/// Integer-valued grid for a `u32` key, converted for the generic sweep.
fn int_grid(values: &[u32]) -> Vec<f64> {
    values.iter().map(|v| *v as f64).collect()
}

/// Maximised `EE1` over antenna count and BS density. The RSRP threshold is
/// frozen at its value for the base scenario so that densification enlarges
/// the candidate set and pilot congestion shows.
pub fn fig3_sweep(base: &ScenarioParams) -> Result<SweepResult> {
    fig3_sweep_with(base, FIG3_BS_DENSITIES, FIG3_ANTENNAS)
}

pub fn fig3_sweep_with(base: &ScenarioParams, densities: &[f64], antennas: &[u32]) -> Result<SweepResult> {
    let mut fixed = base.clone();
    fixed.channel.rsrp_threshold = Threshold::Fixed(base.channel_params().rsrp_threshold);
    let spec = SweepSpec {
        swept: vec![
            ("deployment.lambda_b".into(), densities.to_vec()),
            ("channel.antennas".into(), int_grid(antennas)),
        ],
        fixed,
        metric: MetricKind::Ee1Star,
        seeds: Vec::new(),
    };
    run_sweep("fig3", &spec)
}

/// Maximised `EE0` over speed and elapsed time since the handover.
pub fn fig4_sweep(base: &ScenarioParams) -> Result<SweepResult> {
    fig4_sweep_with(base, FIG4_SPEEDS, FIG4_ELAPSED)
}

pub fn fig4_sweep_with(base: &ScenarioParams, speeds: &[f64], elapsed: &[f64]) -> Result<SweepResult> {
    let spec = SweepSpec {
        swept: vec![
            ("mobility.v".into(), speeds.to_vec()),
            ("policy.t_hat".into(), elapsed.to_vec()),
        ],
        fixed: base.clone(),
        metric: MetricKind::Ee0Star,
        seeds: Vec::new(),
    };
    run_sweep("fig4", &spec)
}

/// Optimal handover window over speed, with the minimum window as a second series.
pub fn fig5_sweep(base: &ScenarioParams) -> Result<SweepResult> {
    fig5_sweep_with(base, FIG5_SPEEDS)
}

pub fn fig5_sweep_with(base: &ScenarioParams, speeds: &[f64]) -> Result<SweepResult> {
    let spec = SweepSpec {
        swept: vec![("mobility.v".into(), speeds.to_vec())],
        fixed: base.clone(),
        metric: MetricKind::THatStar,
        seeds: Vec::new(),
    };
    let star = run_sweep("fig5", &spec)?;
    let mut result = SweepResult {
        name: "fig5".into(),
        param_names: vec!["mobility.v".into(), "series".into()],
        metric: "t_hat".into(),
        rows: Vec::new(),
        notes: star.notes.clone(),
    };
    for (row, &v) in star.rows.iter().zip(speeds) {
        let s = base.apply_overrides(&[format!("mobility.v={}", toml_number(v))])?;
        let t_min = analytics::min_ho_window(&s.deployment, &s.mobility, &s.policy)?;
        result.rows.push(SweepRow {
            params: vec![row.params[0].clone(), "t_hat_star".into()],
            ..row.clone()
        });
        result.rows.push(SweepRow {
            params: vec![row.params[0].clone(), "t_hat_min".into()],
            metric: t_min,
            ci: None,
            analytic: Some(t_min),
        });
    }
    Ok(result)
}

/// Series values `(speed, t_hat_star, t_hat_min)` of a [`fig5_sweep`] result.
pub fn fig5_series(r: &SweepResult) -> Vec<(f64, f64, f64)> {
    r.rows
        .chunks(2)
        .map(|c| (c[0].params[0].parse().unwrap_or(f64::NAN), c[0].metric, c[1].metric))
        .collect()
}

// ---------------------------------------------------------------------------
// Long-term comparison
// ---------------------------------------------------------------------------

/// Scenario with the comparison overrides (speed and fading law) applied.
pub fn fig6_scenario(base: &ScenarioParams) -> Result<ScenarioParams> {
    let c = &base.comparison;
    let comp = c.mu_norm / 2f64.sqrt();
    base.apply_overrides(&[
        format!("mobility.v={}", toml_number(c.v)),
        format!("channel.eta={}", toml_number(c.eta)),
        format!("channel.mu=[{}, {}]", toml_number(comp), toml_number(comp)),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fig6Variant {
    pub fading: FadingMode,
    pub proposed_mean: f64,
    pub proposed_ci: Option<f64>,
    pub baseline_mean: f64,
    pub baseline_ci: Option<f64>,
    /// Ratio of the seed means.
    pub ratio: f64,
    /// Mean and half-width of the per-seed ratios.
    pub paired_ratio_mean: f64,
    pub paired_ratio_ci: Option<f64>,
    /// Closed-form EE at the simulated operating points, time averaged.
    pub analytic_proposed: f64,
    pub analytic_baseline: f64,
    pub gap_from_reference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fig6Summary {
    pub seeds: Vec<u64>,
    pub horizon: f64,
    pub reference_ratio: f64,
    pub band: (f64, f64),
    pub variants: Vec<Fig6Variant>,
    /// Every fading variant inside the band.
    pub within_band: bool,
    /// Every fading variant above one.
    pub proposed_wins: bool,
    pub runtime_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fig6Result {
    pub scenario: ScenarioParams,
    pub proposed: SweepResult,
    pub baseline: SweepResult,
    pub summary: Fig6Summary,
}

fn run_seeds(s: &ScenarioParams, schedule: ScheduleKind, fading: FadingMode, seeds: &[u64]) -> Result<Vec<Episode>> {
    let mut s = s.clone();
    s.run.schedule = schedule;
    s.run.fading = fading;
    let params = s.sim_params();
    let mut cache = AnalyticCache::new(&params);
    seeds
        .iter()
        .map(|&seed| run_episode_cached(&params, s.run.horizon, seed, &mut cache))
        .collect()
}

/// Long-term average EE trajectories (mean over seeds, sampled every
/// `comparison.sample_every`) for one schedule and both fading variants.
fn trajectories(name: &str, runs: &[(FadingMode, Vec<Episode>)], dt: f64, every: f64) -> SweepResult {
    let mut result = SweepResult {
        name: name.into(),
        param_names: vec!["time".into(), "fading".into()],
        metric: "ee_a_longterm".into(),
        rows: Vec::new(),
        notes: Vec::new(),
    };
    for (fading, eps) in runs {
        let n_steps = eps.first().map_or(0, |e| e.steps.len());
        let stride = ((every / dt).round() as usize).max(1);
        let mut k = stride;
        while k <= n_steps {
            let vals: Vec<f64> = eps.iter().map(|e| e.steps[k - 1].long_term_ee_a).collect();
            let ana: Vec<f64> = eps
                .iter()
                .map(|e| {
                    let v: Vec<f64> = e.steps[..k].iter().filter_map(|s| s.analytic_ee_a).collect();
                    if v.is_empty() {
                        f64::NAN
                    } else {
                        v.iter().sum::<f64>() / v.len() as f64
                    }
                })
                .collect();
            let (m, ci) = mean_ci(&vals);
            result.rows.push(SweepRow {
                params: vec![fmt_value(eps[0].steps[k - 1].time), fading.label().into()],
                metric: m,
                ci,
                analytic: Some(mean_ci(&ana).0).filter(|v| v.is_finite()),
            });
            k += stride;
        }
    }
    result
}

/// Proposed policy against the fixed-interval baseline, for stationary and
/// time-varying fading, over `run.seeds` seeds.
pub fn fig6_comparison(base: &ScenarioParams) -> Result<Fig6Result> {
    let start = Instant::now();
    let s = fig6_scenario(base)?;
    let seeds: Vec<u64> = (0..s.run.seeds as u64).map(|i| s.run.seed.wrapping_add(i)).collect();
    let mut prop_runs = Vec::new();
    let mut base_runs = Vec::new();
    let mut variants = Vec::new();
    for fading in [FadingMode::TimeVarying, FadingMode::Stationary] {
        let p = run_seeds(&s, ScheduleKind::Proposed, fading, &seeds)?;
        let b = run_seeds(&s, ScheduleKind::Baseline, fading, &seeds)?;
        let pv: Vec<f64> = p.iter().map(|e| e.long_term_ee_a).collect();
        let bv: Vec<f64> = b.iter().map(|e| e.long_term_ee_a).collect();
        let ratios: Vec<f64> = pv.iter().zip(&bv).map(|(x, y)| x / y).collect();
        let (pm, pci) = mean_ci(&pv);
        let (bm, bci) = mean_ci(&bv);
        let (rm, rci) = mean_ci(&ratios);
        let pa: Vec<f64> = p.iter().map(analytic_long_term).collect();
        let ba: Vec<f64> = b.iter().map(analytic_long_term).collect();
        variants.push(Fig6Variant {
            fading,
            proposed_mean: pm,
            proposed_ci: pci,
            baseline_mean: bm,
            baseline_ci: bci,
            ratio: pm / bm,
            paired_ratio_mean: rm,
            paired_ratio_ci: rci,
            analytic_proposed: mean_ci(&pa).0,
            analytic_baseline: mean_ci(&ba).0,
            gap_from_reference: pm / bm - REFERENCE_RATIO,
        });
        prop_runs.push((fading, p));
        base_runs.push((fading, b));
    }
    let dt = s.mobility.dt;
    let every = s.comparison.sample_every;
    let summary = Fig6Summary {
        seeds,
        horizon: s.run.horizon,
        reference_ratio: REFERENCE_RATIO,
        band: RATIO_BAND,
        within_band: variants
            .iter()
            .all(|v| v.ratio >= RATIO_BAND.0 && v.ratio <= RATIO_BAND.1),
        proposed_wins: variants.iter().all(|v| v.ratio > 1.0),
        variants,
        runtime_s: start.elapsed().as_secs_f64(),
    };
    Ok(Fig6Result {
        proposed: trajectories("fig6_proposed", &prop_runs, dt, every),
        baseline: trajectories("fig6_baseline", &base_runs, dt, every),
        scenario: s,
        summary,
    })
}

// ---------------------------------------------------------------------------
// Artifacts
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct Sidecar<'a, T: Serialize> {
    name: &'a str,
    scenario: &'a ScenarioParams,
    scenario_toml: String,
    notes: &'a [String],
    #[serde(skip_serializing_if = "Option::is_none")]
    summary: Option<&'a T>,
}

/// Write `<name>.csv` and the `<name>.json` sidecar into `dir`.
pub fn write_sweep(dir: &Path, result: &SweepResult, scenario: &ScenarioParams) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(format!("{}.csv", result.name)), result.to_csv())?;
    let side = Sidecar::<()> {
        name: &result.name,
        scenario,
        scenario_toml: scenario.to_flat_toml(),
        notes: &result.notes,
        summary: None,
    };
    std::fs::write(
        dir.join(format!("{}.json", result.name)),
        serde_json::to_string_pretty(&side)?,
    )?;
    Ok(())
}

/// Write both trajectory CSVs and the `fig6.json` provenance file.
pub fn write_fig6(dir: &Path, r: &Fig6Result) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("fig6_proposed.csv"), r.proposed.to_csv())?;
    std::fs::write(dir.join("fig6_baseline.csv"), r.baseline.to_csv())?;
    let side = Sidecar {
        name: "fig6",
        scenario: &r.scenario,
        scenario_toml: r.scenario.to_flat_toml(),
        notes: &[],
        summary: Some(&r.summary),
    };
    std::fs::write(dir.join("fig6.json"), serde_json::to_string_pretty(&side)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_cartesian_in_order() {
        let g = grid_points(&[("a".into(), vec![1.0, 2.0]), ("b".into(), vec![3.0, 4.0, 5.0])]);
        assert_eq!(g.len(), 6);
        assert_eq!(g[0], vec![1.0, 3.0]);
        assert_eq!(g[5], vec![2.0, 5.0]);
    }

    #[test]
    fn ci_needs_two_samples() {
        assert_eq!(mean_ci(&[2.0]), (2.0, None));
        let (m, ci) = mean_ci(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((ci.unwrap() - 1.96).abs() < 1e-12);
    }

    #[test]
    fn csv_header_is_fixed() {
        let r = SweepResult {
            name: "x".into(),
            param_names: vec!["mobility.v".into()],
            metric: "m".into(),
            rows: vec![SweepRow {
                params: vec!["1".into()],
                metric: 0.5,
                ci: None,
                analytic: Some(0.5),
            }],
            notes: vec![],
        };
        assert_eq!(r.to_csv(), "mobility.v,metric,ci,analytic\n1,0.5,,0.5\n");
    }

    #[test]
    fn empty_grid_is_rejected() {
        let spec = SweepSpec {
            swept: vec![("mobility.v".into(), vec![])],
            fixed: ScenarioParams::default(),
            metric: MetricKind::THatStar,
            seeds: vec![],
        };
        assert!(run_sweep("x", &spec).is_err());
        let spec = SweepSpec {
            swept: vec![("mobility.v".into(), vec![1.0])],
            metric: MetricKind::EeALongterm,
            ..spec
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn sweeps_are_deterministic() {
        let base = ScenarioParams::default();
        let a = fig4_sweep_with(&base, &[1.0, 3.0], &[0.1, 0.3]).unwrap();
        let b = fig4_sweep_with(&base, &[1.0, 3.0], &[0.1, 0.3]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 4);
    }

    #[test]
    fn comparison_overrides_are_applied() {
        let s = fig6_scenario(&ScenarioParams::default()).unwrap();
        let ch = s.channel_params();
        assert_eq!(s.mobility.v, 3.0);
        assert_eq!(ch.eta, 0.5);
        assert!((ch.mu_norm() - 0.5f64.sqrt()).abs() < 1e-15);
    }
}
