use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use innodex::cli::{
    run_cluster, run_compare, run_contribute, run_evaluate, run_synth, run_train, RunConfig,
    SynthOptions, OUTPUT_DIR_ENV,
};
use innodex::Result;

#[derive(Parser)]
#[command(
    name = "innodex",
    version,
    about = "Innovation-index pipeline: forest scoring, per-metric contributions, clustering and comparisons"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override paths.output_dir.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit scaler and forest; write the model and a run summary.
    Train {
        #[command(flatten)]
        common: Common,
        /// Override hyperparams.n_trees.
        #[arg(long)]
        n_trees: Option<usize>,
        /// Also write the standardized panel and its sidecar metadata.
        #[arg(long)]
        emit_standardized: bool,
    },
    /// Report R-squared for the configured evaluation modes.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Override paths.model.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Write per-sample contribution vectors as CSV.
    Contribute {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// k-means over contribution vectors; write assignments and rosters.
    Cluster {
        #[command(flatten)]
        common: Common,
        /// Override clustering.k.
        #[arg(long)]
        k: Option<usize>,
        /// Override paths.contributions.
        #[arg(long)]
        contributions: Option<PathBuf>,
        /// Override clustering.aggregate_years.
        #[arg(long)]
        aggregate_years: Option<bool>,
    },
    /// Largest-differing-contribution reports for configured pairs.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Extra pair "A,B" (selectors are COUNTRY or COUNTRY:YEAR); repeatable.
        #[arg(long = "pair")]
        pairs: Vec<String>,
        /// Override comparison.top_n.
        #[arg(long)]
        top_n: Option<usize>,
        #[arg(long)]
        contributions: Option<PathBuf>,
        /// Print the nearest neighbors of a selector in contribution space.
        #[arg(long)]
        suggest: Option<String>,
    },
    /// Generate a synthetic fixture (features, targets, config).
    Synth {
        /// Where to write the fixture.
        #[arg(long, default_value = ".")]
        output_dir: PathBuf,
        #[arg(long, default_value_t = 200)]
        rows: usize,
        #[arg(long, default_value_t = 10)]
        metrics: usize,
        /// Noise sigma as a fraction of the signal sigma.
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        /// Fraction of feature cells masked as missing.
        #[arg(long, default_value_t = 0.1)]
        missing: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut config = RunConfig::load(&common.config)?;
    if let Some(dir) = &common.output_dir {
        config.paths.output_dir = Some(dir.clone());
    }
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    match cli.command {
        Command::Train {
            common,
            n_trees,
            emit_standardized,
        } => {
            let mut config = load_config(&common)?;
            if let Some(n) = n_trees {
                config.hyperparams.n_trees = n;
            }
            run_train(&config, emit_standardized, &mut stdout)
        }
        Command::Evaluate { common, model } => {
            let mut config = load_config(&common)?;
            if let Some(m) = model {
                config.paths.model = m;
            }
            run_evaluate(&config, &mut stdout)
        }
        Command::Contribute { common, model } => {
            let mut config = load_config(&common)?;
            if let Some(m) = model {
                config.paths.model = m;
            }
            run_contribute(&config, &mut stdout)
        }
        Command::Cluster {
            common,
            k,
            contributions,
            aggregate_years,
        } => {
            let mut config = load_config(&common)?;
            if let Some(k) = k {
                config.clustering.k = k;
            }
            if let Some(c) = contributions {
                config.paths.contributions = Some(c);
            }
            if let Some(a) = aggregate_years {
                config.clustering.aggregate_years = a;
            }
            run_cluster(&config, &mut stdout)
        }
        Command::Compare {
            common,
            pairs,
            top_n,
            contributions,
            suggest,
        } => {
            let mut config = load_config(&common)?;
            if let Some(n) = top_n {
                config.comparison.top_n = n;
            }
            if let Some(c) = contributions {
                config.paths.contributions = Some(c);
            }
            for pair in pairs {
                let (a, b) = pair.split_once(',').ok_or_else(|| {
                    innodex::Error::Config(format!("--pair expects \"A,B\", got {pair:?}"))
                })?;
                config
                    .comparison
                    .pairs
                    .push([a.trim().to_string(), b.trim().to_string()]);
            }
            run_compare(&config, suggest.as_deref(), &mut stdout)
        }
        Command::Synth {
            output_dir,
            rows,
            metrics,
            noise,
            missing,
            seed,
        } => {
            let output_dir = if output_dir.as_os_str() == "." {
                std::env::var(OUTPUT_DIR_ENV)
                    .ok()
                    .filter(|d| !d.is_empty())
                    .map(PathBuf::from)
                    .unwrap_or(output_dir)
            } else {
                output_dir
            };
            run_synth(
                &SynthOptions {
                    output_dir,
                    rows,
                    metrics,
                    noise,
                    missing_fraction: missing,
                    seed,
                },
                &mut stdout,
            )
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) if matches!(err.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{err}");
            return ExitCode::SUCCESS;
        }
        Err(err) => {
            // Usage text on stderr, exit code 1 for bad invocations.
            eprint!("{err}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
