//! `amgrasp`: run scenarios, check properties, print configurations.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use amgrasp::config::RunConfig;
use amgrasp::sim::{self, PRESETS};
use amgrasp::verify::{self, CheckOptions, Suite};
use amgrasp::Error;
use clap::{Args, Parser, Subcommand};

const EXIT_CONFIG: u8 = 1;
const EXIT_DIVERGED: u8 = 2;
const EXIT_FAILED: u8 = 3;

#[derive(Parser)]
#[command(name = "amgrasp", version, about = "Collaborative aerial grasping: simulation and property checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
}

/// Flags shared by every subcommand; they take precedence over `--config`.
#[derive(Args, Debug, Default)]
struct Overrides {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Scenario preset.
    #[arg(long, global = true, value_parser = clap::builder::PossibleValuesParser::new(PRESETS))]
    scenario: Option<String>,
    /// Control and logging period, s.
    #[arg(long, global = true, allow_negative_numbers = true)]
    dt: Option<f64>,
    /// Simulated time, s.
    #[arg(long, global = true, allow_negative_numbers = true)]
    duration: Option<f64>,
    /// Disable feed-forward of measured contact forces.
    #[arg(long, global = true)]
    no_force_compensation: bool,
    /// Output directory.
    #[arg(long, global = true, env = "AMGRASP_OUT")]
    out: Option<PathBuf>,
    /// Seed for initial-position jitter and sampled property checks.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Keep every n-th tick in the telemetry.
    #[arg(long, global = true)]
    log_every: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write telemetry plus summary.json.
    Run,
    /// Run property suites. Without arguments, runs all of them.
    Check {
        /// Suites to run: dynamics, decoupling, energy, control, monitors.
        suites: Vec<String>,
        #[arg(long, conflicts_with = "suites")]
        all: bool,
        /// Random states per sampled property.
        #[arg(long, default_value_t = 100)]
        samples: usize,
    },
    /// Print the fully resolved configuration as TOML.
    PrintConfig,
}

fn load_config(o: &Overrides) -> amgrasp::Result<RunConfig> {
    let mut c = match &o.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = &o.scenario {
        c.scenario.preset = s.clone();
    }
    if let Some(dt) = o.dt {
        c.dt = dt;
    }
    if let Some(d) = o.duration {
        c.duration = Some(d);
    }
    if o.no_force_compensation {
        c.gains.compensate_forces = Some(false);
    }
    if let Some(p) = &o.out {
        c.out_dir = Some(p.clone());
    }
    if let Some(s) = o.seed {
        c.seed = s;
    }
    if let Some(n) = o.log_every {
        c.log_every = n;
    }
    Ok(c)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::InvalidInput(_) | Error::InvalidModel(_) => EXIT_CONFIG,
        Error::Io(_) | Error::Csv(_) | Error::Json(_) => EXIT_CONFIG,
        _ => EXIT_DIVERGED,
    }
}

fn run(o: &Overrides) -> amgrasp::Result<bool> {
    let config = load_config(o)?.resolved()?;
    let scenario = config.build_scenario()?;
    let out_dir = config.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
    let started = Instant::now();
    log::info!("running `{}` for {} s at dt = {}", config.scenario.preset, config.duration.unwrap_or_default(), config.dt);
    let out = sim::run_scenario(scenario)?;
    write_outputs(&out_dir, &config, &out)?;

    let s = &out.summary;
    println!("scenario {} ({} AMs), {:.1} s simulated in {:.1} s", s.scenario, s.n_ams, s.duration, started.elapsed().as_secs_f64());
    for m in &s.monitors {
        let verdict = match (m.enabled, m.passed) {
            (false, _) => "off ",
            (true, true) => "ok  ",
            (true, false) => "FAIL",
        };
        println!("  {verdict} {:<22} {:>11.4e} (limit {:.1e})  {}", m.name, m.value, m.limit, m.detail);
    }
    for e in &s.events {
        println!("  event t={:.3} am={}: {}", e.t, e.am, e.message);
    }
    println!("wrote {}", out_dir.display());
    Ok(s.passed)
}

fn write_outputs(dir: &Path, config: &RunConfig, out: &sim::RunOutput) -> amgrasp::Result<()> {
    std::fs::create_dir_all(dir)?;
    out.telemetry.write_csv(dir)?;
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&out.summary)?)?;
    std::fs::write(dir.join("config.toml"), config.to_toml()?)?;
    Ok(())
}

fn check(o: &Overrides, names: &[String], samples: usize) -> amgrasp::Result<bool> {
    let config = load_config(o)?;
    let suites = if names.is_empty() { Suite::ALL.to_vec() } else { names.iter().map(|n| Suite::parse(n)).collect::<amgrasp::Result<_>>()? };
    let opts = CheckOptions { samples, seed: config.seed };
    let mut all_ok = true;
    for suite in suites {
        let started = Instant::now();
        let props = verify::run_suite(suite, &opts)?;
        println!("[{}] {:.2} s", suite.name(), started.elapsed().as_secs_f64());
        for p in props {
            all_ok &= p.passed;
            println!("  {} {:<36} worst {:>11.4e}  limit {:.1e}  {}", if p.passed { "ok  " } else { "FAIL" }, p.name, p.worst, p.limit, p.detail);
        }
    }
    Ok(all_ok)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // Usage errors are configuration errors; clap's own code 2 means divergence here.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Run => run(&cli.overrides),
        Command::Check { suites, all: _, samples } => check(&cli.overrides, suites, *samples),
        Command::PrintConfig => load_config(&cli.overrides).and_then(|c| c.resolved()).and_then(|c| c.to_toml()).map(|t| {
            print!("{t}");
            true
        }),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_FAILED),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
