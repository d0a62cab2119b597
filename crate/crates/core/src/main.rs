use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use udn_core::analytics::{self, ConvergenceThresholds};
use udn_core::config::{parse_config, ScenarioParams};
use udn_core::experiments;
use udn_core::simulator::{self, AnalyticCache};
use udn_core::Result;

#[derive(Parser)]
#[command(
    name = "udn",
    version,
    about = "Energy-efficient handover analytics and simulation for ultra-dense networks"
)]
struct Cli {
    /// Scenario file (TOML, flat dotted keys or sections).
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set mobility.v=3`. Repeatable.
    #[arg(short = 's', long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (overrides `run.output_dir`).
    #[arg(short, long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form EE report as JSON.
    Analytics,
    /// One simulated episode; writes a JSONL trace.
    Episode,
    /// Maximised EE with handover over antenna count and BS density.
    Fig3,
    /// Maximised EE without handover over speed and elapsed time.
    Fig4,
    /// Optimal handover window over speed.
    Fig5,
    /// Long-term EE of the proposed policy against the fixed-interval baseline.
    Fig6,
    /// Mean-field convergence diagnostics.
    Check,
    /// Print the resolved configuration.
    Config,
}

#[derive(Serialize)]
struct Output<'a, T: Serialize> {
    scenario: &'a ScenarioParams,
    #[serde(flatten)]
    body: T,
}

fn print_json<T: Serialize>(scenario: &ScenarioParams, body: T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(&Output { scenario, body })?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut overrides = cli.overrides.clone();
    if let Some(out) = &cli.out {
        overrides.push(format!("run.output_dir={:?}", out.display().to_string()));
    }
    let s = parse_config(cli.config.as_deref(), &overrides)?;
    let out_dir = PathBuf::from(&s.run.output_dir);
    let model = s.model();
    let t = s.run.analysis_time;

    match cli.command {
        Command::Config => print!("{}", s.echo()),
        Command::Analytics => {
            #[derive(Serialize)]
            struct Body {
                report: analytics::EeReport,
                rsrp_threshold: f64,
            }
            let report = analytics::ee_report(&model, &s.mobility, &s.policy, t, &s.quadrature)?;
            print_json(
                &s,
                Body {
                    report,
                    rsrp_threshold: model.channel.rsrp_threshold,
                },
            )?;
        }
        Command::Check => {
            #[derive(Serialize)]
            struct Body {
                report: analytics::ConvergenceReport,
            }
            let report = analytics::check_convergence_conditions(
                &model,
                &s.mobility,
                &s.policy,
                &ConvergenceThresholds::default(),
                t,
            );
            print_json(&s, Body { report })?;
        }
        Command::Episode => {
            let mut params = s.sim_params();
            params.record_trace = true;
            let mut cache = AnalyticCache::new(&params);
            let ep = simulator::run_episode_cached(&params, s.run.horizon, s.run.seed, &mut cache)?;
            std::fs::create_dir_all(&out_dir)?;
            let trace = out_dir.join("episode.jsonl");
            simulator::write_trace(&ep, std::io::BufWriter::new(std::fs::File::create(&trace)?))?;
            #[derive(Serialize)]
            struct Body {
                seed: u64,
                steps: usize,
                handovers: usize,
                failed_rounds: usize,
                long_term_ee_a: f64,
                mean_normalized_interference: f64,
                circuit_energy: f64,
                transmit_energy: f64,
                trace: String,
            }
            print_json(
                &s,
                Body {
                    seed: ep.seed,
                    steps: ep.steps.len(),
                    handovers: ep.handovers,
                    failed_rounds: ep.failed_rounds,
                    long_term_ee_a: ep.long_term_ee_a,
                    mean_normalized_interference: ep.mean_normalized_interference,
                    circuit_energy: ep.circuit_energy,
                    transmit_energy: ep.transmit_energy,
                    trace: trace.display().to_string(),
                },
            )?;
        }
        Command::Fig3 | Command::Fig4 | Command::Fig5 => {
            let r = match cli.command {
                Command::Fig3 => experiments::fig3_sweep(&s)?,
                Command::Fig4 => experiments::fig4_sweep(&s)?,
                _ => experiments::fig5_sweep(&s)?,
            };
            experiments::write_sweep(&out_dir, &r, &s)?;
            println!("{}", out_dir.join(format!("{}.csv", r.name)).display());
            for n in &r.notes {
                eprintln!("note: {n}");
            }
        }
        Command::Fig6 => {
            let r = experiments::fig6_comparison(&s)?;
            experiments::write_fig6(&out_dir, &r)?;
            println!("{}", serde_json::to_string_pretty(&r.summary)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
