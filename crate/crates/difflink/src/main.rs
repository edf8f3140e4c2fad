//! Command-line front end: scenario runs, presets, CSV summaries and a
//! look at the default concept graph. All logic lives in the library.

use clap::{Parser, Subcommand};
use difflink::config::{self, architecture_name, PRESET_NAMES};
use difflink::harness::{self, planned_costs, prepare};
use difflink::semantic::default_graph;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "difflink",
    about = "Collaborative distributed diffusion simulator",
    version
)]
struct Cli {
    /// Override the scenario's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for CSV and PGM artifacts.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads for sweep cells (0 = all cores).
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario config file.
    Run { config: PathBuf },
    /// Run a shipped preset scenario.
    #[command(after_help = format!("presets: {}", PRESET_NAMES.join(", ")))]
    Preset { name: String },
    /// Aggregate a result CSV into per-cell means and deviations.
    Summarize { csv: PathBuf },
    /// Inspect the concept graph.
    Graph {
        #[command(subcommand)]
        command: GraphCommand,
    },
}

#[derive(Subcommand)]
enum GraphCommand {
    /// Print nodes, edges and lexicon of the default graph (or a file).
    Show {
        #[arg(long)]
        graph: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> difflink::Result<()> {
    match cli.command {
        Command::Run { config } => {
            let mut cfg = config::load_config(&config)?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            execute_scenario(&cfg, &cli.out_dir, cli.jobs)
        }
        Command::Preset { name } => {
            let mut cfg = config::load_preset(&name)?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            // keep a copy of the effective config next to the results
            std::fs::create_dir_all(&cli.out_dir)?;
            let text = config::preset_text(&name).expect("load_preset checked the name");
            std::fs::write(cli.out_dir.join(format!("{name}.cfg")), text)?;
            execute_scenario(&cfg, &cli.out_dir, cli.jobs)
        }
        Command::Summarize { csv } => {
            let stem = csv
                .file_stem()
                .map(|s| s.to_string_lossy().to_string())
                .unwrap_or_else(|| "results".into());
            let out = csv.with_file_name(format!("{stem}_summary.csv"));
            let lines = harness::emit_summary(&csv, &out)?;
            println!("wrote {} ({} groups)", out.display(), lines.len());
            Ok(())
        }
        Command::Graph { command } => match command {
            GraphCommand::Show { graph } => {
                let g = match graph {
                    Some(path) => {
                        difflink::semantic::ConceptGraph::parse(&std::fs::read_to_string(path)?)?
                    }
                    None => default_graph(),
                };
                let nodes: Vec<&str> = g.node_ids().collect();
                println!("nodes ({}):", nodes.len());
                for id in &nodes {
                    println!("  {id} ({})", g.label(id).unwrap_or(id));
                }
                let edges = g.edges();
                println!("edges ({}):", edges.len());
                for (a, b) in &edges {
                    println!("  {a} -- {b}");
                }
                println!("lexicon:");
                for (word, id) in g.lexicon_entries() {
                    println!("  {word} -> {id}");
                }
                Ok(())
            }
        },
    }
}

fn execute_scenario(
    cfg: &config::ScenarioConfig,
    out_dir: &std::path::Path,
    jobs: usize,
) -> difflink::Result<()> {
    let artifacts = harness::run_scenario(cfg, out_dir, jobs)?;
    println!(
        "scenario {}: {} rows over {} cells x {} repetitions",
        cfg.scenario,
        artifacts.rows.len(),
        cfg.cells().len(),
        cfg.repetitions
    );
    println!("  results  {}", artifacts.csv.display());
    println!("  summary  {}", artifacts.summary.display());
    println!("  images   {} PGM files", artifacts.images.len());

    // quick per-cell digest on stdout
    let prepared = prepare(cfg)?;
    for (cell, report) in planned_costs(&prepared)? {
        let rows: Vec<_> = artifacts
            .rows
            .iter()
            .filter(|r| r.cell_label == cell.label())
            .collect();
        if rows.is_empty() {
            continue;
        }
        let n = rows.len() as f64;
        let fid = rows.iter().filter(|r| r.fidelity_ok).count() as f64 / n;
        let psnr = rows.iter().map(|r| r.psnr_ref).sum::<f64>() / n;
        println!(
            "  {:<12} fidelity {:>5.1}%  mean psnr_ref {:>6.2} dB  energy {:>7.2} J  latency {:>6.3} s",
            cell.label(),
            100.0 * fid,
            psnr,
            report.total_energy_j,
            report
                .groups
                .iter()
                .map(|g| g.end_to_end_latency_s)
                .fold(0.0f64, f64::max),
        );
    }
    if cfg.architectures.len() > 1 {
        println!(
            "  architectures compared: {}",
            cfg.architectures
                .iter()
                .map(|a| architecture_name(*a))
                .collect::<Vec<_>>()
                .join(", ")
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    // die quietly when the reader of a pipe goes away (e.g. | head)
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
