use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use deforma::meshgraph::GraphStats;
use deforma::pipeline::{AblationTable, Pipeline, RunConfig, Stage, StageOutcome};

/// Learned surrogate for soft-tissue deformation: phantom mesh, FE dataset, GNN training, evaluation and timing.
#[derive(Parser)]
#[command(name = "deforma", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Run configuration (`section.key = value` lines); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; every stage seed is derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of FE load cases in the dataset.
    #[arg(long, global = true)]
    cases: Option<usize>,
    /// Workdir for all artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override any config key, e.g. `--set model.n_layers=6`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the phantom mesh.
    Mesh,
    /// Solve the FE load cases.
    Dataset,
    /// Build the graph topology.
    Graph,
    /// Train the surrogate.
    Train,
    /// Score the test split.
    Eval,
    /// Time FE solves against surrogate inference.
    Bench,
    /// One-factor-at-a-time study over layer kind, depth, channels, structured edges and jumping knowledge.
    Ablate {
        /// Comma-separated subset of layer,depth,channels,edges,jk.
        #[arg(long, value_delimiter = ',')]
        tables: Vec<AblationTable>,
    },
    /// Print connectivity statistics of the stored graph.
    GraphStats,
    /// Mesh through bench in one go.
    Run,
    /// Print the resolved configuration.
    Config,
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for o in &common.overrides {
        let Some((key, value)) = o.split_once('=') else {
            bail!("--set expects KEY=VALUE, got `{o}`");
        };
        config.set(key.trim(), value.trim())?;
    }
    if let Some(seed) = common.seed {
        config.set_seed(seed);
    }
    if let Some(n) = common.cases {
        config.loads.n_cases = n;
    }
    if let Some(out) = &common.out {
        config.workdir = out.clone();
    }
    config.validate()?;
    Ok(config)
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("DEFORMA_THREADS") else {
        return Ok(());
    };
    let n: usize = value.parse().with_context(|| format!("DEFORMA_THREADS must be a positive integer, got `{value}`"))?;
    if n == 0 {
        bail!("DEFORMA_THREADS must be a positive integer, got 0");
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn print_report(outcome: &StageOutcome, name: &str) -> Result<()> {
    print!("{outcome}");
    let path = outcome.dir.join(name);
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    println!("\n{text}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    let config = resolve(&cli.common)?;
    if let Command::Config = cli.command {
        print!("{}", config.to_text());
        return Ok(());
    }
    let mut p = Pipeline::open(config)?;
    match cli.command {
        Command::Mesh => print!("{}", p.run_mesh()?),
        Command::Dataset => print!("{}", p.run_dataset()?),
        Command::Graph => print!("{}", p.run_graph()?),
        Command::Train => print!("{}", p.run_train()?),
        Command::Eval => print_report(&p.run_eval()?, "eval.md")?,
        Command::Bench => print_report(&p.run_bench()?.0, "bench.md")?,
        Command::Ablate { tables } => {
            let tables = if tables.is_empty() { p.config().ablate_tables.clone() } else { tables };
            let (outcome, report) = p.run_ablate(&tables)?;
            print_report(&outcome, "ablation.md")?;
            if report.failures() > 0 {
                bail!("{} of {} ablation rows failed", report.failures(), report.rows.len());
            }
        }
        Command::GraphStats => {
            let outcome = p.run_graph()?;
            let mesh = p.load_mesh()?;
            let graph = p.load_graph(&mesh)?;
            println!("{} [{}]", Stage::Graph, outcome.key.short());
            print!("{}", GraphStats::of(&graph, &mesh));
        }
        Command::Run => {
            for outcome in p.run_all()? {
                print!("{outcome}");
            }
        }
        Command::Config => unreachable!(),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
