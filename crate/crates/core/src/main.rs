use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use freshrec::config::EngineConfig;
use freshrec::io::{self, ParseMode};
use freshrec::shuffle::{self, ShuffleConfig, RNG_ALGORITHM};
use freshrec::{replay, sim, Error, Execution, Inventory, Product, RecommendationList, UserId, UserSessionState};

/// Freshness post-processing for recommender output.
#[derive(Debug, Parser)]
#[command(name = "freshrec", version)]
struct Cli {
    /// Reject malformed log lines and unknown fields (default).
    #[arg(long, global = true, conflicts_with = "lenient")]
    strict: bool,
    /// Skip malformed log lines and ignore unknown fields.
    #[arg(long, global = true)]
    lenient: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Replay an event log through the feedback loop and update snapshots.
    Replay {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        state_dir: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        inventory: PathBuf,
        /// Metric report (JSON lines); stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the offline A/B simulation.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-session CSV output.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Overrides ExperimentConfig.rng_seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Simulate users one after another on the calling thread.
        #[arg(long)]
        sequential: bool,
    },
    /// Sliding-window freshness of every serve call in a log.
    Metrics {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        window_capacity: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Shuffle a ranked product list (JSON array of products).
    ShuffleDemo {
        #[arg(long)]
        list: PathBuf,
        #[arg(long)]
        p: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Inspect or reset a user's snapshot.
    State(StateArgs),
}

#[derive(Debug, Args)]
struct StateArgs {
    #[command(subcommand)]
    action: StateAction,
}

#[derive(Debug, Subcommand)]
enum StateAction {
    Show {
        #[arg(long)]
        user: String,
        #[arg(long)]
        state_dir: PathBuf,
    },
    Reset {
        #[arg(long)]
        user: String,
        #[arg(long)]
        state_dir: PathBuf,
        #[arg(long)]
        inventory: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn emit(out: Option<&Path>, text: &str) -> freshrec::Result<()> {
    match out {
        Some(path) => io::write_text(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn require_file(path: &Path) -> freshrec::Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Io {
            path: path.to_owned(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        })
    }
}

#[derive(Serialize)]
struct ShuffleOutput<'a> {
    rng_algorithm: &'static str,
    rng_seed: u64,
    partition_length: usize,
    items: &'a [freshrec::ProductId],
}

fn run(cli: Cli) -> freshrec::Result<()> {
    let mode = if cli.lenient { ParseMode::Lenient } else { ParseMode::Strict };
    match cli.command {
        Command::Replay {
            events,
            state_dir,
            config,
            inventory,
            out,
        } => {
            for path in [&events, &config, &inventory] {
                require_file(path)?;
            }
            let config = EngineConfig::load(&config)?;
            let inventory = io::load_inventory(&inventory)?;
            let ingested = io::ingest_events(&events, mode)?;
            if ingested.skipped > 0 {
                eprintln!("skipped {} malformed line(s)", ingested.skipped);
            }
            let states = io::load_states(&state_dir)?;
            let output = replay::replay(&ingested.records, states, &inventory, &config, Execution::Parallel)?;
            for state in output.states.values() {
                io::save_state(&state_dir, state)?;
            }
            emit(out.as_deref(), &io::to_json_lines(&output.report)?)
        }
        Command::Simulate {
            config,
            out,
            csv,
            seed,
            sequential,
        } => {
            require_file(&config)?;
            let mut config = EngineConfig::load(&config)?;
            if let Some(seed) = seed {
                config.experiment.rng_seed = seed;
            }
            let exec = if sequential { Execution::Sequential } else { Execution::Parallel };
            let report = sim::run_synthetic(&config, exec)?;
            io::write_json(&out, &report)?;
            if let Some(csv) = csv {
                io::write_rows_csv(&csv, &report.rows)?;
            }
            Ok(())
        }
        Command::Metrics {
            log,
            window_capacity,
            out,
        } => {
            require_file(&log)?;
            let ingested = io::ingest_events(&log, mode)?;
            let records = replay::log_metrics(&ingested.records, window_capacity)?;
            emit(out.as_deref(), &io::to_json_lines(&records)?)
        }
        Command::ShuffleDemo { list, p, seed, out } => {
            require_file(&list)?;
            let products: Vec<Product> = io::read_json(&list)?;
            let inventory = Inventory::new(products)?;
            let ranked = RecommendationList::from_ids(
                inventory.products().iter().map(|p| p.product_id.clone()).collect(),
            )?;
            let config = ShuffleConfig {
                partition_length: p,
                rng_seed: seed,
            };
            let shuffled = shuffle::shuffle(&ranked, &config, &inventory.brand_map())?;
            let text = io::to_pretty_json(&ShuffleOutput {
                rng_algorithm: RNG_ALGORITHM,
                rng_seed: seed,
                partition_length: p,
                items: shuffled.items(),
            })?;
            emit(out.as_deref(), &text)
        }
        Command::State(StateArgs { action }) => match action {
            StateAction::Show { user, state_dir } => {
                let user = UserId::from(user);
                let state = io::load_state(&state_dir, &user)?.ok_or_else(|| Error::Io {
                    path: state_dir.join(format!("{user}.json")),
                    source: std::io::Error::new(std::io::ErrorKind::NotFound, "no snapshot"),
                })?;
                emit(None, &io::snapshot_to_json(&state)?)
            }
            StateAction::Reset {
                user,
                state_dir,
                inventory,
                config,
            } => {
                require_file(&inventory)?;
                let config = match config {
                    Some(path) => EngineConfig::load(&path)?,
                    None => EngineConfig::default(),
                };
                let inventory = io::load_inventory(&inventory)?;
                let state = UserSessionState::new(user, &inventory, config.metric.window_capacity)?;
                io::save_state(&state_dir, &state)
            }
        },
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
