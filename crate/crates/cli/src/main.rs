//! Command-line driver: run evolution phases, inspect graphs, export
//! datasets, and emit Pareto/sweep/diagnostics plots.
//!
//! Exit codes: 0 success, 2 config error, 3 I/O error, 4 data error.

mod plot;
mod svg;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};
use evoloss::controller::{
    export_dataset, ArchiveError, ConfigError, Controller, ControllerError, RunConfig, RunDir,
};
use evoloss::graph::{preset_graphs, render_expressions, EnvDims, GraphError, LossGraph};
use evoloss::hash::functional_hash;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "evoloss", about = "Evolve actor-critic loss-function graphs", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run meta-training (Algorithm-style generational evolution).
    Evolve {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's worker count.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Re-score the archived population with the validation seed set.
    Validate {
        #[arg(long)]
        config: PathBuf,
        /// Archive directory (defaults to the config's out_dir).
        #[arg(long)]
        archive: Option<PathBuf>,
    },
    /// Meta-test named graphs with the held-out test seed set.
    Test {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated preset names or archive digest prefixes.
        #[arg(long, value_delimiter = ',')]
        graphs: Vec<String>,
        #[arg(long)]
        archive: Option<PathBuf>,
    },
    /// Print a human-readable report for a graph file or preset.
    Inspect {
        /// Graph file path, or `preset:<name>`.
        #[arg(long)]
        graph: String,
        /// Dims used for shape inference.
        #[arg(long, default_value_t = 3)]
        state_dim: usize,
        #[arg(long, default_value_t = 1)]
        action_dim: usize,
    },
    /// Export the Pareto-front dataset from an archive.
    Export {
        #[arg(long)]
        archive: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Emit plot tables and SVGs from an archive.
    Plot {
        #[arg(long)]
        archive: PathBuf,
        #[arg(long, value_parser = ["pareto", "sweep", "diagnostics"])]
        kind: String,
        #[arg(long)]
        out: PathBuf,
        /// Graphs for sweep/diagnostics plots (presets or digest prefixes).
        #[arg(long, value_delimiter = ',')]
        graphs: Vec<String>,
    },
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(exit_code(&err));
        }
    }
}

fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return 2;
        }
        if let Some(c) = cause.downcast_ref::<ControllerError>() {
            return match c {
                ControllerError::Config(_) => 2,
                ControllerError::Archive(a) => archive_code(a),
                ControllerError::State(_) => 4,
            };
        }
        if let Some(a) = cause.downcast_ref::<ArchiveError>() {
            return archive_code(a);
        }
        if cause.is::<GraphError>() {
            return 4;
        }
        if cause.is::<std::io::Error>() {
            return 3;
        }
    }
    4
}

fn archive_code(err: &ArchiveError) -> i32 {
    match err {
        ArchiveError::Io { .. } => 3,
        _ => 4,
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Evolve {
            config,
            seed,
            workers,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(seed) = seed {
                cfg.master_seed = seed;
            }
            if let Some(workers) = workers {
                cfg.workers = workers;
            }
            let out_dir = cfg.out_dir.clone();
            let mut controller = Controller::new(cfg)?;
            let result = controller.run_meta_training()?;
            println!(
                "meta-training complete: {} evaluations, {} cache hits",
                result.evaluations, result.cache_hits
            );
            println!("final population: {} individuals", result.population.len());
            println!("pareto front: {} digests", result.front.len());
            for d in &result.front {
                println!("  {d}");
            }
            println!("archive: {}", out_dir.display());
            Ok(())
        }
        Command::Validate { config, archive } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(archive) = archive {
                cfg.out_dir = archive;
            }
            let mut controller = Controller::new(cfg)?;
            let validated = controller.meta_validate()?;
            println!("digest,f_perf,f_gen,sigma_perf,sigma_gen");
            for ind in &validated {
                let f = ind.fitness();
                let scores = ind.seed_scores.clone().unwrap_or_default();
                println!(
                    "{},{},{},{},{}",
                    ind.digest.hex(),
                    f.perf(),
                    f.gen(),
                    evoloss::fitness::population_std(&scores.perf),
                    evoloss::fitness::population_std(&scores.gen),
                );
            }
            Ok(())
        }
        Command::Test {
            config,
            graphs,
            archive,
        } => {
            let cfg = RunConfig::load(&config)?;
            let archive_dir = archive.unwrap_or_else(|| cfg.out_dir.clone());
            let named = resolve_graphs(&graphs, Some(&archive_dir))?;
            if named.is_empty() {
                return Err(anyhow!("no graphs named; use --graphs"));
            }
            let mut controller = Controller::new(cfg)?;
            let rows = controller.meta_test(named)?;
            println!("name,digest,f_perf,f_gen,error");
            for row in rows {
                match (&row.fitness, &row.error) {
                    (Some(f), _) => println!(
                        "{},{},{},{},",
                        row.name,
                        row.digest,
                        f.perf(),
                        f.gen()
                    ),
                    (None, err) => println!(
                        "{},{},,,{}",
                        row.name,
                        row.digest,
                        err.clone().unwrap_or_default()
                    ),
                }
            }
            Ok(())
        }
        Command::Inspect {
            graph,
            state_dim,
            action_dim,
        } => {
            let (name, g) = load_graph_arg(&graph)?;
            inspect(&name, &g, EnvDims { state_dim, action_dim });
            Ok(())
        }
        Command::Export { archive, out } => {
            let run = RunDir::open(&archive)?;
            let count = export_dataset(&run, &out)?;
            println!("exported {count} front graphs to {}", out.display());
            Ok(())
        }
        Command::Plot {
            archive,
            kind,
            out,
            graphs,
        } => {
            let run = RunDir::open(&archive)?;
            match kind.as_str() {
                "pareto" => {
                    let (rows, front) = plot::plot_pareto(&run, &out)?;
                    if rows == 0 {
                        eprintln!("warning: archive is empty; wrote empty table");
                    }
                    println!("pareto: {rows} rows ({front} on the front) -> {}", out.display());
                }
                kind => {
                    let cfg = RunConfig::load(&archive.join("config.toml"))?;
                    let named = resolve_graphs(&graphs, Some(&archive))?;
                    if named.is_empty() {
                        return Err(anyhow!("--graphs is required for {kind} plots"));
                    }
                    let rows = if kind == "sweep" {
                        plot::plot_sweep(&cfg, &named, &out)?
                    } else {
                        plot::plot_diagnostics(&cfg, &named, &out)?
                    };
                    println!("{kind}: {rows} rows -> {}", out.display());
                }
            }
            Ok(())
        }
    }
}

/// Resolve graph names: preset names first, then digest prefixes in the
/// archive's graphs directory. Unknown names are skipped with a warning.
fn resolve_graphs(
    names: &[String],
    archive: Option<&Path>,
) -> Result<Vec<(String, LossGraph)>> {
    let presets = preset_graphs();
    let mut out = Vec::new();
    for name in names {
        if let Some(g) = presets.get(name) {
            out.push((name.clone(), g.clone()));
            continue;
        }
        if let Some(dir) = archive {
            let graphs_dir = dir.join("graphs");
            let mut found = None;
            if graphs_dir.is_dir() {
                for entry in std::fs::read_dir(&graphs_dir)? {
                    let path = entry?.path();
                    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
                    if stem.starts_with(name.as_str()) {
                        found = Some(path);
                        break;
                    }
                }
            }
            if let Some(path) = found {
                let text = std::fs::read_to_string(&path)
                    .with_context(|| format!("reading {}", path.display()))?;
                let (g, _) = LossGraph::parse(&text)?;
                out.push((name.clone(), g));
                continue;
            }
        }
        eprintln!("warning: unknown graph `{name}` (skipped)");
    }
    Ok(out)
}

fn load_graph_arg(arg: &str) -> Result<(String, LossGraph)> {
    if let Some(name) = arg.strip_prefix("preset:") {
        let presets = preset_graphs();
        let g = presets
            .get(name)
            .ok_or_else(|| anyhow!("unknown preset `{name}`"))?;
        return Ok((name.to_string(), g.clone()));
    }
    let text = std::fs::read_to_string(arg).with_context(|| format!("reading {arg}"))?;
    let (g, _) = LossGraph::parse(&text)?;
    Ok((arg.to_string(), g))
}

fn inspect(name: &str, graph: &LossGraph, dims: EnvDims) {
    println!("graph: {name}");
    println!("nodes: {} (max {})", graph.node_count(), graph.max_nodes);
    println!("digest: {}", functional_hash(graph).hex());
    let report = graph.validate(dims, 16);
    println!(
        "consistency ({}x{} batch 16): {}",
        dims.state_dim,
        dims.action_dim,
        if report.valid {
            "valid".to_string()
        } else {
            format!("INVALID: {}", report.first_error.clone().unwrap_or_default())
        }
    );
    println!("\nnode table:");
    for node in &graph.nodes {
        let kind = match node.kind {
            evoloss::graph::NodeKind::MulConst(c) => format!("MulConst {}", c.token()),
            k => k.name().to_string(),
        };
        let inputs: Vec<String> = node.inputs.iter().map(|i| i.to_string()).collect();
        let shape = report
            .per_node
            .get(&node.id)
            .map(|v| format!("{v:?}"))
            .unwrap_or_else(|| "-".into());
        println!("  {:>4}  {kind:<20} inputs [{}]  {shape}", node.id.to_string(), inputs.join(", "));
    }
    match render_expressions(graph) {
        Ok(r) => println!("\nexpressions:\n{r}"),
        Err(e) => println!("\nexpressions unavailable: {e}"),
    }
}
