use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use partcert::iris::{ingest_iris, train_one_layer, TrainConfig, DEFAULT_SPLIT_SEED};
use partcert::partition::parse_strategies;
use partcert::report::{iris_experiment, ExperimentConfig};
use partcert::{
    preact_bounds, run_certify, BoundsMode, CertifyOptions, InputRegion, Network, SafetySpec,
    SdpSettings, Solver,
};

/// Exit status when a certification run is not fully safe.
const EXIT_UNSAFE: u8 = 1;
/// Exit status for usage, input and solver errors.
const EXIT_ERROR: u8 = 2;

#[derive(Parser)]
#[command(name = "partcert", version, about = "Partition-tightened certification of ReLU networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Certify a safety spec over an input region under one or more strategies.
    Certify {
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        region: PathBuf,
        #[arg(long)]
        safety: PathBuf,
        /// Comma-separated: exact, none, optimal-row, rows:<k>, row:<i>,
        /// motivating, grid:<n>, recursive:<d>, heuristic.
        #[arg(long, default_value = "none")]
        strategy: String,
        #[arg(long, default_value = "lp")]
        solver: String,
        #[arg(long, default_value_t = 1e-5)]
        sdp_eps: f64,
        #[arg(long, default_value_t = 50_000)]
        sdp_max_iters: usize,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the Iris classifier z = relu(Wx + b).
    TrainIris {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_SPLIT_SEED)]
        split_seed: u64,
        /// Width of an extra hidden ReLU layer (repeatable).
        #[arg(long)]
        hidden: Vec<usize>,
        #[arg(long, default_value_t = 2000)]
        epochs: usize,
        #[arg(long, default_value_t = 0.1)]
        learning_rate: f64,
    },
    /// Print preactivation bounds for every layer.
    Bounds {
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        region: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::LpTight)]
        mode: Mode,
    },
    /// Run the Iris comparison and emit the JSON report and plot table.
    Report {
        #[arg(long)]
        csv: PathBuf,
        /// Trained network; trains with the default recipe when omitted.
        #[arg(long)]
        network: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_SPLIT_SEED)]
        split_seed: u64,
        /// Comma-separated radii in standardized units.
        #[arg(long, default_value = "0.05,0.1,0.2")]
        epsilons: String,
        #[arg(long, default_value_t = 10)]
        points: usize,
        #[arg(long)]
        out: PathBuf,
        /// Optional CSV with one line per (point, epsilon).
        #[arg(long)]
        table: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Interval,
    LpTight,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_UNSAFE),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Returns whether the command counts as a success for the exit status.
fn run(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Certify {
            network,
            region,
            safety,
            strategy,
            solver,
            sdp_eps,
            sdp_max_iters,
            out,
        } => {
            let net = Network::from_json(&read(&network)?)?;
            let region = InputRegion::from_json(&read(&region)?)?;
            let safety = SafetySpec::from_json(&read(&safety)?)?;
            let strategies = parse_strategies(&strategy)?;
            let opts = CertifyOptions {
                solver: solver.parse::<Solver>()?,
                sdp: SdpSettings {
                    eps: sdp_eps,
                    max_iters: sdp_max_iters,
                    ..SdpSettings::default()
                },
            };
            let report = run_certify(&net, &region, &safety, &strategies, &opts)?;
            for o in &report.records[0].outcomes {
                eprintln!(
                    "{:<14} bound {:>+.6e}  {}",
                    o.strategy,
                    o.bound,
                    if o.safe { "safe" } else { "not certified" }
                );
            }
            let json = report.to_json_pretty();
            match out {
                Some(p) => write(&p, &json)?,
                None => println!("{json}"),
            }
            Ok(report.all_safe)
        }
        Command::TrainIris {
            csv,
            out,
            seed,
            split_seed,
            hidden,
            epochs,
            learning_rate,
        } => {
            let data = ingest_iris(&csv, split_seed)?;
            let cfg = TrainConfig {
                hidden,
                learning_rate,
                epochs,
                seed,
                ..TrainConfig::default()
            };
            let outcome = train_one_layer(&data, &cfg)?;
            write(&out, &outcome.network.to_json_pretty())?;
            eprintln!(
                "train accuracy {:.4}, test accuracy {:.4}, loss {:.4}",
                outcome.train_accuracy, outcome.test_accuracy, outcome.final_loss
            );
            if !outcome.reached_target {
                eprintln!(
                    "warning: test accuracy below the {:.2} target",
                    cfg.target_accuracy
                );
            }
            Ok(true)
        }
        Command::Bounds {
            network,
            region,
            mode,
        } => {
            let net = Network::from_json(&read(&network)?)?;
            let region = InputRegion::from_json(&read(&region)?)?;
            let mode = match mode {
                Mode::Interval => BoundsMode::Interval,
                Mode::LpTight => BoundsMode::LpTight,
            };
            let bounds = preact_bounds(&net, &region, mode)?;
            println!("{}", serde_json::to_string_pretty(&bounds)?);
            Ok(true)
        }
        Command::Report {
            csv,
            network,
            split_seed,
            epsilons,
            points,
            out,
            table,
        } => {
            let data = ingest_iris(&csv, split_seed)?;
            let net = match network {
                Some(p) => Network::from_json(&read(&p)?)?,
                None => train_one_layer(&data, &TrainConfig::default())?.network,
            };
            let epsilons = epsilons
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .context("parsing --epsilons")?;
            if epsilons.is_empty() {
                bail!("no epsilons given");
            }
            let report = iris_experiment(
                &net,
                &data,
                &ExperimentConfig {
                    epsilons,
                    num_points: points,
                },
            )?;
            write(&out, &report.to_json_pretty())?;
            if let Some(t) = table {
                write(&t, &report.to_csv())?;
            }
            let pairs = report.optimal_only_certificates();
            eprintln!(
                "{} records; optimal row certifies where unpartitioned fails at {} (point, epsilon) pairs",
                report.records.len(),
                pairs.len()
            );
            Ok(true)
        }
    }
}
