use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use log::info;

use dealer_sim::analytics::{pnl_report, verify_theorem};
use dealer_sim::calibration::calibrate_csv;
use dealer_sim::engine::run_seeds;
use dealer_sim::env_server::{serve, Endpoint};
use dealer_sim::ScenarioConfig;

#[derive(Parser)]
#[command(name = "dealersim", version, about = "Dealer market simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario for every seed and write trajectories and a summary.
    Run {
        config: PathBuf,
        /// Override a config value by dotted path, e.g. `mid_price.mu=0.01`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Comma-separated seeds, replacing the config's list.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        steps: Option<u64>,
        /// Output directory; defaults to the config's `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare closed-form, empirical and Monte-Carlo optimal quotes against
    /// a uniform competitor.
    VerifyTheorem {
        #[arg(long, allow_hyphen_values = true, default_value_t = -1.0)]
        a: f64,
        #[arg(long, allow_hyphen_values = true, default_value_t = 1.0)]
        b: f64,
        /// Probability of winning a tie.
        #[arg(long, default_value_t = 0.5)]
        p: f64,
        #[arg(long, default_value_t = 100_000)]
        draws: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        json: bool,
    },
    /// Fit book parameters from a snapshot CSV (`level_index,volume`).
    CalibrateLob {
        csv: PathBuf,
        /// Write the JSON fragment here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Expose the scenario's external agent over the environment protocol.
    Serve {
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// `stdio` or `tcp:HOST:PORT`.
        #[arg(long, default_value = "stdio")]
        endpoint: String,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Command) -> anyhow::Result<ExitCode> {
    match cmd {
        Command::Run {
            config,
            mut overrides,
            seeds,
            steps,
            out,
        } => {
            if !seeds.is_empty() {
                overrides.push(format!("seeds={}", serde_json::to_string(&seeds)?));
            }
            if let Some(n) = steps {
                overrides.push(format!("total_steps={n}"));
            }
            let cfg = load(&config, &overrides)?;
            let out = out.unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
            cmd_run(&cfg, &out)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::VerifyTheorem {
            a,
            b,
            p,
            draws,
            seed,
            json,
        } => {
            if !(-1.0..=b).contains(&a) {
                bail!("need -1 <= a <= b (got a={a}, b={b})");
            }
            if !(0.0..=1.0).contains(&p) {
                bail!("need 0 <= p <= 1 (got {p})");
            }
            let r = verify_theorem(a, b, p, draws, seed)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&r)?);
            } else {
                println!("competitor       Unif[{a}, {b}], tie win prob {p}, {draws} draws");
                println!("closed form      {:+.4}", r.closed_form);
                if r.reference != r.closed_form {
                    println!(
                        "exact grid       {:+.4}  (point mass: ties matter)",
                        r.reference
                    );
                }
                println!("empirical argmax {:+.4}", r.empirical);
                println!("monte carlo      {:+.4}", r.monte_carlo);
                println!(
                    "verdict          {}",
                    if r.agrees { "AGREE" } else { "DISAGREE" }
                );
            }
            Ok(if r.agrees {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            })
        }
        Command::CalibrateLob { csv, out } => {
            let file =
                fs::File::open(&csv).with_context(|| format!("opening {}", csv.display()))?;
            let cal = calibrate_csv(file)?;
            let frag = cal.to_json_fragment()?;
            info!("calibrated from {} snapshots", cal.snapshots);
            match out {
                Some(path) => fs::write(&path, frag + "\n")?,
                None => println!("{frag}"),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Serve {
            config,
            overrides,
            endpoint,
        } => {
            let endpoint: Endpoint = endpoint.parse()?;
            let cfg = load(&config, &overrides)?;
            serve(cfg, &endpoint)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn load(path: &Path, overrides: &[String]) -> anyhow::Result<ScenarioConfig> {
    ScenarioConfig::load(path, overrides).with_context(|| format!("loading {}", path.display()))
}

fn cmd_run(cfg: &ScenarioConfig, out: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    info!(
        "running `{}`: {} makers, {} steps x {} seeds",
        cfg.name,
        cfg.agents.len(),
        cfg.total_steps,
        cfg.seeds.len()
    );
    let trajectories = run_seeds(cfg)?;
    for tr in &trajectories {
        let path = out.join(format!("trajectory_seed{}.csv", tr.seed));
        tr.write_csv(fs::File::create(&path)?)?;
    }
    let report = pnl_report(&trajectories)?;
    fs::write(out.join("summary.csv"), report.to_csv()?)?;
    let text = report.to_text();
    fs::write(out.join("summary.txt"), &text)?;
    fs::write(out.join("config.json"), cfg.to_json_pretty()? + "\n")?;
    println!("scenario {} (digest {})", cfg.name, cfg.digest()?);
    print!("{text}");
    Ok(())
}
