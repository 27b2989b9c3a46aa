use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use cme_barrier::config::{Profile, RunConfig};
use cme_barrier::pipeline::{self, Stage, StageError};
use cme_barrier::Error;

#[derive(Parser)]
#[command(name = "cme-barrier", version, about = "Barrier certificates for stochastic systems from sampled transitions")]
struct Cli {
    /// Flat key=value run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed, overriding the config
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding the config
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Base profile the config overrides
    #[arg(long, global = true, value_enum)]
    profile: Option<ProfileArg>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Desk,
    Paper,
}

#[derive(Subcommand)]
enum Command {
    /// Sample transitions and write data.csv and data.meta
    GenerateData,
    /// Synthesize, envelope, validate and write certificate.txt
    Certify,
    /// Grid checks and Monte-Carlo rollouts for a certificate
    Validate {
        #[arg(long, default_value = "certificate.txt")]
        certificate: PathBuf,
    },
    /// Certify across sweep_epsilons and seeds, write sweep.csv
    SweepEpsilon {
        /// Comma-separated radii, overriding sweep_epsilons
        #[arg(long, value_delimiter = ',')]
        epsilons: Option<Vec<f64>>,
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Grid CSV of a certificate slice or a sweep summary
    PlotData {
        #[arg(long)]
        input: PathBuf,
    },
    /// Raw rollouts from the initial set, written to trajectories.csv
    Simulate {
        #[arg(long)]
        runs: Option<usize>,
    },
}

fn load(cli: &Cli) -> Result<RunConfig, StageError> {
    let profile = cli.profile.map(|p| match p {
        ProfileArg::Desk => Profile::Desk,
        ProfileArg::Paper => Profile::Paper,
    });
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| StageError { stage: Stage::Io, source: Error::Io(format!("{}: {e}", path.display())) })?;
            RunConfig::parse(&text, profile).map_err(|e| {
                let source = match e {
                    Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
                    other => other,
                };
                StageError { stage: Stage::Config, source }
            })?
        }
        None => RunConfig::profile(profile.unwrap_or(Profile::Desk)),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), StageError> {
    let mut cfg = load(cli)?;
    match &cli.command {
        Command::GenerateData => {
            let files = pipeline::generate_data(&cfg)?;
            println!("wrote {} and {}", files.csv.display(), files.meta.display());
            println!("fingerprint {}", files.fingerprint);
        }
        Command::Certify => {
            let cert = pipeline::certify(&cfg)?;
            print!("{}", cert.summary());
        }
        Command::Validate { certificate } => {
            let path = if certificate.is_relative() && !certificate.exists() {
                cfg.output_dir.join(certificate)
            } else {
                certificate.clone()
            };
            let outcome = pipeline::validate(&cfg, &path)?;
            print!("{}", outcome.render());
            if !outcome.passed() {
                return Err(StageError {
                    stage: Stage::Validation,
                    source: Error::Certificate(format!("see {}", outcome.path.display())),
                });
            }
        }
        Command::SweepEpsilon { epsilons, repeats } => {
            if let Some(e) = epsilons {
                cfg.sweep_epsilons = e.clone();
            }
            if let Some(r) = repeats {
                cfg.sweep_repeats = *r;
            }
            let table = pipeline::sweep_epsilon(&cfg)?;
            print!("{}", table.to_csv());
            eprintln!("wrote {}", table.path.display());
        }
        Command::PlotData { input } => {
            let path = pipeline::plot_data(&cfg, input)?;
            println!("wrote {}", path.display());
        }
        Command::Simulate { runs } => {
            if let Some(r) = runs {
                cfg.simulate_runs = *r;
            }
            let path = pipeline::simulate(&cfg)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.stage.exit_code() as u8)
        }
    }
}
