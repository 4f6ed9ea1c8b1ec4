use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cloudshare::core::director::Partition;
use cloudshare::core::queue::{Journal, NullJournal};
use cloudshare::core::sim::{Scenario, Simulation};
use cloudshare::core::ProjectId;
use cloudshare::journal::FileJournal;
use cloudshare::metrics::{self, CsvError};
use cloudshare::report::Report;
use cloudshare::scenario::{self, LoadError};
use cloudshare::service::{self, ServiceSim, SimHandle, TransitionBody};

#[derive(Parser)]
#[command(name = "cloudshare", version, about = "Fair-share scheduling simulator for private clouds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ScenarioArgs {
    /// Scenario TOML file.
    #[arg(long)]
    scenario: PathBuf,
    /// key=value overlay applied on top of the scenario; defaults to $CLOUDSHARE_CONFIG.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Runs a scenario to its horizon and writes metrics.csv and summary.json.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Checks a scenario without running it.
    Validate {
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
    /// Loads a scenario and exposes the management API; the clock advances via POST /v1/sim/step.
    Serve {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
    /// Summarizes a metrics CSV.
    Report {
        #[arg(long)]
        metrics: PathBuf,
        /// Scenario whose project shares give fairness ratios.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Node commands against a running service.
    Node {
        #[arg(long, env = "CLOUDSHARE_URL", default_value = "http://127.0.0.1:8080")]
        url: String,
        #[command(subcommand)]
        command: NodeCommand,
    },
}

#[derive(Subcommand)]
enum NodeCommand {
    /// Lists partition nodes and their states.
    List,
    /// Requests a partition change for one node.
    Transition {
        node: u32,
        #[arg(long, value_parser = parse_partition)]
        target: Partition,
        /// Project receiving a node moved to the cloud.
        #[arg(long)]
        tenant: Option<String>,
        /// Seconds VMs get to finish when the node leaves the cloud.
        #[arg(long)]
        ttl: Option<u64>,
    },
}

fn parse_partition(s: &str) -> Result<Partition, String> {
    match s {
        "batch" => Ok(Partition::Batch),
        "cloud" => Ok(Partition::Cloud),
        _ => Err(format!("expected `batch` or `cloud`, got `{s}`")),
    }
}

enum Failure {
    Io(String),
    Validation(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Io(_) => 1,
            Failure::Validation(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Io(m) | Failure::Validation(m) => m,
        }
    }
}

impl From<LoadError> for Failure {
    fn from(e: LoadError) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Io(e.to_string())
        }
    }
}

impl From<CsvError> for Failure {
    fn from(e: CsvError) -> Self {
        match e {
            CsvError::Header(_) | CsvError::Row { .. } => Failure::Validation(e.to_string()),
            _ => Failure::Io(e.to_string()),
        }
    }
}

fn io_failure(path: &Path) -> impl Fn(io::Error) -> Failure + '_ {
    move |e| Failure::Io(format!("{}: {e}", path.display()))
}

fn load(args: &ScenarioArgs) -> Result<Scenario, Failure> {
    let overlay = scenario::overlay_path(args.config.as_deref());
    let mut s = scenario::load_scenario(&args.scenario, overlay.as_deref())?;
    if let Some(seed) = args.seed {
        s.seed = seed;
    }
    Ok(s)
}

fn journal(s: &Scenario) -> Result<Box<dyn Journal + Send>, Failure> {
    Ok(match &s.queue.journal_path {
        Some(p) => Box::new(FileJournal::create(p).map_err(|e| Failure::Io(e.to_string()))?),
        None => Box::new(NullJournal),
    })
}

fn simulation(s: &Scenario) -> Result<ServiceSim, Failure> {
    Simulation::new(s, journal(s)?).map_err(|e| Failure::Validation(e.to_string()))
}

fn run(args: &ScenarioArgs, out: &Path) -> Result<(), Failure> {
    let s = load(args)?;
    let mut sim = simulation(&s)?;
    sim.run_to_end().map_err(|e| Failure::Io(format!("simulation failed: {e}")))?;
    let output = sim.output();
    metrics::write_output(out, &output)?;
    println!(
        "{} frames, mean vcpu utilization {:.4}; wrote {}",
        output.frames.len(),
        output.summary.mean_util_vcpus,
        out.display()
    );
    Ok(())
}

fn serve(args: &ScenarioArgs, addr: &str) -> Result<(), Failure> {
    let s = load(args)?;
    let sim = simulation(&s)?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::Io(e.to_string()))?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| Failure::Io(format!("{addr}: {e}")))?;
        let local = listener.local_addr().map_err(|e| Failure::Io(e.to_string()))?;
        println!("listening on http://{local}");
        let _ = io::stdout().flush();
        let (handle, _worker) = SimHandle::spawn(sim);
        service::serve(listener, handle).await.map_err(|e| Failure::Io(e.to_string()))
    })
}

fn report(metrics_path: &Path, scenario: Option<&Path>, config: Option<&Path>, out: Option<&Path>) -> Result<(), Failure> {
    let file = fs::File::open(metrics_path).map_err(io_failure(metrics_path))?;
    let (projects, frames) = metrics::read_csv(io::BufReader::new(file))
        .map_err(|e| Failure::from(e).prefixed(metrics_path))?;
    let shares = match scenario {
        Some(p) => {
            let overlay = scenario::overlay_path(config);
            let s = scenario::load_scenario(p, overlay.as_deref())?;
            Some(s.projects.iter().map(|p| (ProjectId::from(p.id.as_str()), p.share)).collect::<BTreeMap<_, _>>())
        }
        None => None,
    };
    let r = Report::new(&projects, &frames, shares.as_ref());
    let mut buf = Vec::new();
    r.write_csv(&mut buf).map_err(|e| Failure::Io(e.to_string()))?;
    match out {
        Some(p) => fs::write(p, buf).map_err(io_failure(p)),
        None => io::stdout().write_all(&buf).map_err(|e| Failure::Io(e.to_string())),
    }
}

impl Failure {
    fn prefixed(self, path: &Path) -> Failure {
        match self {
            Failure::Io(m) => Failure::Io(format!("{}: {m}", path.display())),
            Failure::Validation(m) => Failure::Validation(format!("{}: {m}", path.display())),
        }
    }
}

fn node(url: &str, command: &NodeCommand) -> Result<(), Failure> {
    let client = reqwest::blocking::Client::new();
    let base = url.trim_end_matches('/');
    let response = match command {
        NodeCommand::List => client.get(format!("{base}/v1/nodes")).send(),
        NodeCommand::Transition { node, target, tenant, ttl } => client
            .post(format!("{base}/v1/nodes/{node}/transition"))
            .json(&TransitionBody { target: *target, tenant: tenant.clone(), ttl: *ttl })
            .send(),
    }
    .map_err(|e| Failure::Io(format!("{base}: {e}")))?;
    let status = response.status();
    let body = response.text().map_err(|e| Failure::Io(e.to_string()))?;
    if status.is_success() {
        println!("{body}");
        Ok(())
    } else if status.is_client_error() {
        Err(Failure::Validation(format!("{status}: {body}")))
    } else {
        Err(Failure::Io(format!("{status}: {body}")))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { scenario, out } => run(scenario, out),
        Command::Validate { scenario } => load(scenario).map(|s| {
            println!("{}: ok ({} projects, {} vcpus)", scenario.scenario.display(), s.projects.len(), s.host_capacity().vcpus)
        }),
        Command::Serve { scenario, addr } => serve(scenario, addr),
        Command::Report { metrics, scenario, config, out } => {
            report(metrics, scenario.as_deref(), config.as_deref(), out.as_deref())
        }
        Command::Node { url, command } => node(url, command),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
