use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

use streambin::clock::{Clock, SystemClock};
use streambin::connector::{Connector, Delivery, DEFAULT_RETRIES};
use streambin::events::stdout_sink;
use streambin::harness::{self, PlotKind, ProcessOptions, Scenario};
use streambin::irm::IrmConfig;
use streambin::master::service::MasterServer;
use streambin::protocol::StreamMessage;
use streambin::worker::service::{BackendKind, WorkerOptions, WorkerServer};

#[derive(Parser)]
#[command(name = "streambin", version, about = "Bin-packing resource manager for streamed containerized jobs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the master node.
    Master {
        /// IRM parameters as JSON; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: String,
    },
    /// Run a worker node.
    Worker(WorkerArgs),
    /// Stream messages to a cluster.
    #[command(subcommand)]
    Connector(ConnectorCommand),
    /// Run experiments and draw charts.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Synthetic job runner used as a PE process.
    #[command(hide = true)]
    Pe,
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Synthetic,
    Simulated,
}

#[derive(Args)]
struct WorkerArgs {
    #[arg(long)]
    master: String,
    #[arg(long, default_value = "127.0.0.1:0")]
    listen: String,
    #[arg(long, value_enum, default_value = "synthetic")]
    backend: Backend,
    /// Host the master uses to reach this worker.
    #[arg(long)]
    advertise_host: Option<String>,
    /// Seconds from a PE start until it accepts messages.
    #[arg(long, default_value_t = 2.0)]
    pe_startup_delay: f64,
    /// Seconds after launch during which PE starts are refused.
    #[arg(long, default_value_t = 0.0)]
    boot_delay: f64,
    /// Seconds between reports; match the master's report_interval.
    #[arg(long, default_value_t = 1.0)]
    report_interval: f64,
    #[arg(long, default_value_t = 64)]
    max_pes: usize,
}

#[derive(Args)]
struct RetryArgs {
    /// Retries after a transport failure.
    #[arg(long, default_value_t = DEFAULT_RETRIES)]
    retries: u32,
    /// First backoff in milliseconds; doubles per retry.
    #[arg(long, default_value_t = 200)]
    backoff_ms: u64,
}

#[derive(Subcommand)]
enum ConnectorCommand {
    /// Send one file as a message.
    Send {
        #[arg(long)]
        master: String,
        #[arg(long)]
        image: String,
        #[arg(long, default_value = "latest")]
        tag: String,
        #[arg(long)]
        file: PathBuf,
        /// Defaults to a time-based id.
        #[arg(long)]
        id: Option<String>,
        #[command(flatten)]
        retry: RetryArgs,
    },
    /// Stream a scenario's schedule to a running master.
    Bench {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        master: String,
        #[command(flatten)]
        retry: RetryArgs,
    },
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Run a scenario and write metrics.csv, events.log and summary.json.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Show child process logs in process mode.
        #[arg(long)]
        verbose: bool,
    },
    /// Repeat a scenario in simulation with one master, shuffling each run.
    Replay {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 10)]
        runs: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw a chart from a run directory.
    Plot {
        #[arg(long, value_parser = parse_kind)]
        kind: PlotKind,
        /// Run directory holding metrics.csv.
        #[arg(long, default_value = ".")]
        run: PathBuf,
        /// Metrics file; overrides --run.
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_kind(s: &str) -> Result<PlotKind, String> {
    s.parse()
}

fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .expect("tokio runtime")
}

fn secs(s: f64) -> u64 {
    (s * 1000.0).round() as u64
}

fn load_scenario(path: &PathBuf) -> Result<Scenario, String> {
    let scenario = Scenario::load(path).map_err(|e| e.to_string())?;
    scenario.validate().map_err(|e| e.to_string())?;
    Ok(scenario)
}

fn connector(master: &str, retry: &RetryArgs) -> Connector {
    Connector::new(master).with_retry(retry.retries, Duration::from_millis(retry.backoff_ms))
}

fn run_master(config: Option<PathBuf>, listen: String) -> Result<(), String> {
    let config = match config {
        Some(path) => {
            let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
            IrmConfig::from_json(&text).map_err(|e| format!("{}: {e}", path.display()))?
        }
        None => IrmConfig::default(),
    };
    runtime().block_on(async {
        let server = MasterServer::bind(&listen, config, stdout_sink())
            .await
            .map_err(|e| format!("cannot listen on {listen}: {e}"))?;
        tracing::info!("master listening on {}", server.addr());
        tokio::select! {
            _ = server.wait() => {}
            _ = tokio::signal::ctrl_c() => {}
        }
        Ok(())
    })
}

fn run_worker(args: WorkerArgs) -> Result<(), String> {
    let backend = match args.backend {
        Backend::Synthetic => BackendKind::Synthetic,
        Backend::Simulated => BackendKind::Simulated,
    };
    let mut options = WorkerOptions::new(&args.listen, &args.master, backend);
    options.advertise_host = args.advertise_host;
    options.pe_startup_delay = secs(args.pe_startup_delay);
    options.boot_delay = secs(args.boot_delay);
    options.report_interval = secs(args.report_interval).max(1);
    options.max_pes = args.max_pes;
    runtime().block_on(async {
        let server = WorkerServer::bind(options, stdout_sink())
            .await
            .map_err(|e| format!("cannot listen on {}: {e}", args.listen))?;
        tracing::info!("worker listening on {}", server.addr());
        tokio::select! {
            _ = server.wait() => tracing::info!("decommissioned by master"),
            _ = tokio::signal::ctrl_c() => {}
        }
        Ok(())
    })
}

fn run_connector(command: ConnectorCommand) -> Result<(), String> {
    match command {
        ConnectorCommand::Send {
            master,
            image,
            tag,
            file,
            id,
            retry,
        } => {
            let payload = std::fs::read(&file).map_err(|e| format!("{}: {e}", file.display()))?;
            let now = SystemClock.now_ms();
            let id = id.unwrap_or_else(|| format!("msg-{now}"));
            let message = StreamMessage::new(id.clone(), &image, &tag, payload, now);
            let delivery = runtime()
                .block_on(connector(&master, &retry).send(&message))
                .map_err(|e| e.to_string())?;
            match delivery {
                Delivery::P2p { worker_id } => println!("{id} p2p {worker_id}"),
                Delivery::Queued => println!("{id} queued"),
            }
            Ok(())
        }
        ConnectorCommand::Bench {
            scenario,
            master,
            retry,
        } => {
            let scenario = load_scenario(&scenario)?;
            let c = connector(&master, &retry);
            let results = runtime().block_on(harness::stream_scenario(&scenario, &c));
            let (mut p2p, mut queued, mut failed) = (0, 0, 0);
            for (id, r) in &results {
                match r {
                    Ok(Delivery::P2p { .. }) => p2p += 1,
                    Ok(Delivery::Queued) => queued += 1,
                    Err(e) => {
                        failed += 1;
                        eprintln!("{id}: {e}");
                    }
                }
            }
            println!("sent={} p2p={p2p} queued={queued} failed={failed}", results.len());
            if failed > 0 {
                Err(format!("{failed} messages failed"))
            } else {
                Ok(())
            }
        }
    }
}

fn run_bench(command: BenchCommand) -> Result<(), String> {
    match command {
        BenchCommand::Run {
            scenario,
            out,
            verbose,
        } => {
            let scenario = load_scenario(&scenario)?;
            let mut process = ProcessOptions::current_exe().map_err(|e| e.to_string())?;
            process.show_logs = verbose;
            let output = harness::run(&scenario, &out, &process)?;
            println!("{}", serde_json::to_string(&output.summary).expect("summary serializes"));
            Ok(())
        }
        BenchCommand::Replay { scenario, runs, out } => {
            let scenario = load_scenario(&scenario)?;
            for s in harness::replay(&scenario, runs, &out)? {
                println!(
                    "run={} makespan_s={:.1} mean_abs_error_pp={:.2}",
                    s.run, s.makespan_s, s.mean_abs_error_pp
                );
            }
            Ok(())
        }
        BenchCommand::Plot {
            kind,
            run,
            metrics,
            out,
        } => {
            let metrics = metrics.unwrap_or_else(|| run.join(harness::METRICS_FILE));
            harness::plot_file(&metrics, kind, &out).map_err(|e| e.to_string())
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Master { config, listen } => run_master(config, listen),
        Command::Worker(args) => run_worker(args),
        Command::Connector(c) => run_connector(c),
        Command::Bench(b) => run_bench(b),
        Command::Pe => {
            let stdin = std::io::stdin();
            streambin::worker::synthetic::serve(stdin.lock(), std::io::stdout().lock()).map_err(|e| e.to_string())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
