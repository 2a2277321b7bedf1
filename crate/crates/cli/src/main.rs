use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use sfc_core::dmano::CostPolicy;
use sfc_core::simengine::{
    self, oracle_distribution, run_batch, wcmp_tables_at, write_aggregate_csv, write_metrics_csv,
    CompiledScenario, OracleResult, RunSummary, Scenario, ScenarioError,
};
use sfc_core::SimTime;

mod plot;

#[derive(Parser)]
#[command(
    name = "sfc-sim",
    version,
    about = "Service function chaining simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario file and list every problem found.
    Validate(ScenarioArgs),
    /// Run one replication and write its metrics CSV.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        output: OutputArgs,
        /// Replication index; selects the derived seed.
        #[arg(long, default_value_t = 0)]
        run_index: u32,
    },
    /// Run many replications in parallel and aggregate them.
    Batch {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        output: OutputArgs,
        /// Overrides the run count of the scenario.
        #[arg(long)]
        runs: Option<u32>,
    },
    /// Print the WCMP table of one or all nodes at a point in time.
    DumpWcmp {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Node name; all nodes when omitted.
        #[arg(long)]
        node: Option<String>,
        /// Simulated time in seconds.
        #[arg(long, default_value_t = 0.0)]
        at: f64,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Predict steady-state shares with the fluid model.
    Oracle {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Render SVG figures from a run or batch output directory.
    Plot {
        /// Directory holding run_*.csv and optionally aggregate.csv.
        #[arg(long)]
        input: PathBuf,
        /// Defaults to the input directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ScenarioArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// remaining_capacity or consumed_load; overrides the scenario.
    #[arg(long)]
    cost_policy: Option<CostPolicy>,
}

#[derive(Args)]
struct OutputArgs {
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Format of the summary written to standard output.
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

enum Failure {
    Invalid(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        Failure::Invalid(e.to_string())
    }
}

type Result<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SFC_SIM_LOG", "warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprint!("{msg}");
            if !msg.ends_with('\n') {
                eprintln!();
            }
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Validate(args) => validate(&args),
        Command::Run {
            scenario,
            output,
            run_index,
        } => cmd_run(&scenario, &output, run_index),
        Command::Batch {
            scenario,
            output,
            runs,
        } => cmd_batch(&scenario, &output, runs),
        Command::DumpWcmp {
            scenario,
            node,
            at,
            format,
        } => dump_wcmp(&scenario, node.as_deref(), at, format),
        Command::Oracle { scenario, format } => cmd_oracle(&scenario, format),
        Command::Plot { input, out } => {
            let out = out.unwrap_or_else(|| input.clone());
            for w in plot::plot_dir(&input, &out)? {
                log::warn!("{w}");
                eprintln!("warning: {w}");
            }
            Ok(())
        }
    }
}

/// The one validation path shared by every subcommand.
fn load(args: &ScenarioArgs) -> Result<CompiledScenario> {
    let mut s = Scenario::load(&args.scenario)?;
    if let Some(seed) = args.seed {
        s.seed = seed;
    }
    if let Some(policy) = args.cost_policy {
        s.dmano.cost_policy = policy;
    }
    Ok(s.compile().map_err(ScenarioError::Invalid)?)
}

fn validate(args: &ScenarioArgs) -> Result<()> {
    let sc = load(args)?;
    println!(
        "{}: ok ({} nodes, {} links, {} vnfs, {} events, {} phases)",
        sc.source.name,
        sc.node_names.len(),
        sc.links.len(),
        sc.all_instances().len(),
        sc.events.len(),
        sc.phases.len()
    );
    Ok(())
}

fn create_out(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_run_csv(
    sc: &CompiledScenario,
    out: &Path,
    run: &simengine::RunOutput,
) -> anyhow::Result<()> {
    let path = out.join(format!("run_{:03}.csv", run.summary.run_index));
    let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    write_metrics_csv(sc, &run.frames, io::BufWriter::new(file))
        .with_context(|| format!("writing {}", path.display()))
}

fn phase_vector(s: &RunSummary, phase: &str) -> String {
    let parts: Vec<String> = s
        .phase_shares
        .iter()
        .filter(|p| p.phase == phase)
        .map(|p| match p.mean_share {
            Some(x) => format!("{}={:.3}", p.instance_name, x),
            None => format!("{}=n/a", p.instance_name),
        })
        .collect();
    format!("{phase} [{}]", parts.join(", "))
}

fn cmd_run(args: &ScenarioArgs, output: &OutputArgs, run_index: u32) -> Result<()> {
    let sc = load(args)?;
    let run = simengine::run(&sc, run_index).context("simulation failed")?;
    create_out(&output.out)?;
    write_run_csv(&sc, &output.out, &run)?;
    let s = &run.summary;
    match output.format {
        Format::Json => println!(
            "{}",
            serde_json::to_string_pretty(s).context("encoding summary")?
        ),
        Format::Csv => {
            let phases: Vec<String> = sc.phases.iter().map(|p| phase_vector(s, &p.name)).collect();
            println!(
                "run {}: {} delivered={}/{} drops={} lsa_tx={}",
                s.run_index,
                phases.join(" "),
                s.delivered,
                s.packets_in,
                s.total_drops(),
                s.lsa_tx_total
            );
        }
    }
    Ok(())
}

fn cmd_batch(args: &ScenarioArgs, output: &OutputArgs, runs: Option<u32>) -> Result<()> {
    let sc = load(args)?;
    let runs = runs.unwrap_or(sc.source.runs);
    if runs == 0 {
        return Err(Failure::Invalid("runs must be at least 1".into()));
    }
    let batch = run_batch(&sc, runs).context("simulation failed")?;
    create_out(&output.out)?;
    for r in &batch.runs {
        write_run_csv(&sc, &output.out, r)?;
    }
    let path = output.out.join("aggregate.csv");
    let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    write_aggregate_csv(&batch.aggregate, io::BufWriter::new(file))
        .with_context(|| format!("writing {}", path.display()))?;

    match output.format {
        Format::Json => {
            let summaries: Vec<&RunSummary> = batch.summaries().collect();
            let doc = serde_json::json!({ "runs": summaries, "aggregate": batch.aggregate });
            println!(
                "{}",
                serde_json::to_string_pretty(&doc).context("encoding summary")?
            );
        }
        Format::Csv => {
            let phases: Vec<String> = sc
                .phases
                .iter()
                .map(|p| {
                    let parts: Vec<String> = batch
                        .aggregate
                        .iter()
                        .filter(|r| r.phase == p.name)
                        .map(|r| match r.stats {
                            Some(s) => format!("{}={:.3}", r.instance_name, s.median),
                            None => format!("{}=n/a", r.instance_name),
                        })
                        .collect();
                    format!("{} median [{}]", p.name, parts.join(", "))
                })
                .collect();
            println!("batch of {runs} runs: {}", phases.join(" "));
        }
    }
    Ok(())
}

fn dump_wcmp(args: &ScenarioArgs, node: Option<&str>, at: f64, format: Format) -> Result<()> {
    let sc = load(args)?;
    let wanted = match node {
        Some(name) => {
            let id = sc
                .node_names
                .iter()
                .find(|(_, n)| n.as_str() == name)
                .map(|(id, _)| *id)
                .ok_or_else(|| Failure::Invalid(format!("unknown node `{name}`")))?;
            vec![id]
        }
        None => sc.node_ids().collect(),
    };
    let tables = wcmp_tables_at(&sc, 0, SimTime::from_secs_f64(at)).context("simulation failed")?;
    let label = |n| sc.node_name(n);
    let mut stdout = io::stdout().lock();
    match format {
        Format::Csv => {
            for (i, id) in wanted.iter().enumerate() {
                if wanted.len() > 1 {
                    if i > 0 {
                        writeln!(stdout).context("writing output")?;
                    }
                    writeln!(stdout, "# node {}", label(*id)).context("writing output")?;
                }
                tables[id]
                    .write_csv(&mut stdout, label)
                    .context("writing table")?;
            }
        }
        Format::Json => {
            let doc: Vec<serde_json::Value> = wanted
                .iter()
                .map(|id| {
                    let t = &tables[id];
                    let groups: Vec<serde_json::Value> = t
                        .groups
                        .iter()
                        .map(|(svc, g)| {
                            let entries: Vec<serde_json::Value> = g
                                .entries
                                .iter()
                                .map(|e| {
                                    serde_json::json!({
                                        "instance": e.instance.0,
                                        "host": label(e.host),
                                        "n": e.cost.network_cost,
                                        "v": e.cost.vnf_cost,
                                        "c": e.cost.total,
                                        "w": e.weight,
                                        "p": e.probability,
                                    })
                                })
                                .collect();
                            serde_json::json!({
                                "service_type": svc.0,
                                "unroutable": g.is_unroutable(),
                                "entries": entries,
                            })
                        })
                        .collect();
                    serde_json::json!({
                        "node": label(*id),
                        "generation": t.generation,
                        "groups": groups,
                    })
                })
                .collect();
            writeln!(
                stdout,
                "{}",
                serde_json::to_string_pretty(&doc).context("encoding tables")?
            )
            .context("writing output")?;
        }
    }
    Ok(())
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

fn cmd_oracle(args: &ScenarioArgs, format: Format) -> Result<()> {
    let sc = load(args)?;
    let policy = sc.source.dmano.cost_policy;
    let result: OracleResult =
        oracle_distribution(&sc, policy).map_err(|e| Failure::Runtime(anyhow::anyhow!(e)))?;
    match format {
        Format::Json => println!(
            "{}",
            serde_json::to_string_pretty(&result).context("encoding oracle result")?
        ),
        Format::Csv => {
            println!(
                "cost policy {policy}, offered load {} pps",
                result.total_load
            );
            for p in &result.phases {
                let shares: Vec<String> = p
                    .shares
                    .iter()
                    .map(|s| round6(s.admitted_share).to_string())
                    .collect();
                let names: Vec<&str> = p.shares.iter().map(|s| s.name.as_str()).collect();
                println!(
                    "{}: [{}] {} ({})",
                    p.phase,
                    shares.join(", "),
                    if p.converged {
                        "converged"
                    } else {
                        "not converged"
                    },
                    names.join(", ")
                );
            }
        }
    }
    Ok(())
}
