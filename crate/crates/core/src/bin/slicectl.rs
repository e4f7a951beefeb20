use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use slicing_marl::cli::{self, Common, OUT_DIR_ENV};
use slicing_marl::metrics::Labels;
use slicing_marl::{Result, Variant};

#[derive(Parser)]
#[command(name = "slicectl", version, about = "Train and compare slice CPU allocation agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Shared {
    /// Scenario config file.
    #[arg(long, short)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    variant: Option<String>,
    /// Output directory.
    #[arg(long, env = OUT_DIR_ENV)]
    out: Option<PathBuf>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
}

impl From<Shared> for Common {
    fn from(s: Shared) -> Self {
        Common {
            config: s.config,
            seed: s.seed,
            variant: s.variant,
            out: s.out,
            episodes: s.episodes,
            steps: s.steps,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one variant and save checkpoints, CSV logs and a manifest.
    Train(Shared),
    /// Greedy rollouts from a training output directory.
    Evaluate {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        checkpoints: PathBuf,
    },
    /// Train several variants on shared seeds and write a conflict grid.
    Compare {
        #[command(flatten)]
        shared: Shared,
        /// Comma-separated variants; all four when omitted.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
    },
    /// Re-run a recorded training run and print its step records.
    Replay {
        run_dir: PathBuf,
        /// Fail unless the output matches the recorded steps.csv exactly.
        #[arg(long)]
        check: bool,
    },
    /// Convert an episode CSV into exposition-format snapshots.
    Export {
        csv: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Extra labels as key=value.
        #[arg(long = "label", value_parser = parse_label)]
        labels: Vec<(String, String)>,
    },
}

fn parse_label(s: &str) -> std::result::Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .ok_or_else(|| format!("expected key=value, got `{s}`"))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(shared) => {
            let r = cli::cmd_train(&shared.into())?;
            let last = r.summaries.last().expect("at least one episode");
            println!(
                "trained {} seed {} for {} episodes; last episode conflict rate {:.4}, utilization {:.4}",
                r.manifest.variant,
                r.manifest.seed,
                r.summaries.len(),
                last.conflict_rate,
                last.mean_utilization
            );
            println!("artifacts in {}", r.out_dir.display());
        }
        Command::Evaluate { shared, checkpoints } => {
            let r = cli::cmd_eval(&shared.into(), &checkpoints)?;
            let n = r.summaries.len() as f64;
            let conflict = r.summaries.iter().map(|s| s.conflict_rate).sum::<f64>() / n;
            println!(
                "{} greedy episodes: conflict rate {conflict:.4}, latency CDF at threshold {:.4}",
                r.summaries.len(),
                r.latency_below_threshold
            );
            println!("artifacts in {}", r.out_dir.display());
        }
        Command::Compare { shared, variants } => {
            let variants = variants.iter().map(|v| Variant::parse(v)).collect::<Result<Vec<_>>>()?;
            let r = cli::cmd_compare(&shared.into(), &variants, |line| eprintln!("{line}"))?;
            print!("{}", r.summary);
            println!("grid written to {}", r.grid.display());
        }
        Command::Replay { run_dir, check } => {
            print!("{}", cli::cmd_replay(&run_dir, check)?);
        }
        Command::Export { csv, out, labels } => {
            let labels: Labels = labels.into_iter().collect();
            let text = cli::cmd_export(&csv, &labels)?;
            match out {
                Some(p) => std::fs::write(p, text)?,
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
