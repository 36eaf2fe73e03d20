//! `iop`: mine interaction-order samples from temporal edge lists, train
//! and evaluate models, and summarize runs.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric error.

use std::fs;
use std::io::{self, BufReader, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use iop_core::graph::{parse_edge_list, synth_generate, SynthParams};
use iop_core::harness::{
    clique_counts, emit_report, evaluate_checkpoint, load_record, render_summary, run_experiment, ExperimentConfig,
    SplitName,
};
use iop_core::motif::{build_dataset, write_samples};
use iop_core::{IopError, Result};

#[derive(Parser)]
#[command(name = "iop", version, about = "Interaction order prediction on temporal graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate an edge list and print its statistics.
    Ingest {
        file: PathBuf,
        /// Also count maximal cliques of these sizes.
        #[arg(long, value_delimiter = ',')]
        cliques: Vec<usize>,
    },
    /// Mine clique samples and write them as JSON lines.
    Extract {
        file: PathBuf,
        #[arg(long, default_value_t = 3)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        k: usize,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one experiment from a key = value config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override a config key, e.g. `--set epochs=5`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output root; a fresh run directory is created inside it.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Score a saved checkpoint on one split of its dataset.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Print the full per-sample report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Summarize a finished run and rewrite its CSV reports.
    Report {
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Write a synthetic edge list with planted cliques.
    Synth {
        #[arg(long)]
        nodes: usize,
        #[arg(long)]
        cliques: usize,
        #[arg(long, default_value_t = 3)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        noise: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn open(path: &PathBuf) -> Result<BufReader<fs::File>> {
    fs::File::open(path)
        .map(BufReader::new)
        .map_err(|e| IopError::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(io::BufWriter::new(fs::File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { file, cliques } => {
            let (g, stats) = parse_edge_list(open(&file)?)?;
            println!("nodes {}", g.num_nodes());
            println!("static_edges {}", g.num_static_edges());
            println!("events {}", g.num_events());
            println!("lines {}", stats.lines);
            println!("self_loops_dropped {}", stats.self_loops_dropped);
            if let (Some(first), Some(last)) = (g.events().first(), g.events().last()) {
                println!("time_span {} {}", first.t, last.t);
            }
            for (n, count) in clique_counts(&g, &cliques) {
                println!("cliques_n{n} {count}");
            }
        }
        Command::Extract { file, n, k, out } => {
            if n < 3 {
                return Err(IopError::Config(format!("n must be at least 3, got {n}")));
            }
            let (g, _) = parse_edge_list(open(&file)?)?;
            let samples = build_dataset(&g, n, k)?;
            let mut w = output(&out)?;
            write_samples(&mut w, &samples)?;
            w.flush()?;
            eprintln!("wrote {} samples", samples.len());
        }
        Command::Train {
            config,
            overrides,
            model,
            epochs,
            seed,
            output,
        } => {
            let text =
                fs::read_to_string(&config).map_err(|e| IopError::Config(format!("{}: {e}", config.display())))?;
            let mut cfg = ExperimentConfig::parse(&text)?;
            for o in &overrides {
                let (k, v) = o
                    .split_once('=')
                    .ok_or_else(|| IopError::Config(format!("--set expects KEY=VALUE, got {o:?}")))?;
                cfg.set(k.trim(), v.trim())?;
            }
            if let Some(m) = model {
                cfg.set("model", &m)?;
            }
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if output.is_some() {
                cfg.output = output;
            }
            let (dir, record) = run_experiment(&cfg)?;
            print!("{}", render_summary(&record));
            println!("run directory {}", dir.display());
        }
        Command::Evaluate {
            checkpoint,
            split,
            json,
        } => {
            let which: SplitName = split.parse()?;
            let report = evaluate_checkpoint(&checkpoint, which)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                let a = &report.aggregate;
                println!("samples {}", report.count);
                println!("accuracy {}", a.accuracy);
                println!("bleu3 {}", a.bleu3);
                println!("meteor {}", a.meteor);
                println!("kendall_tau {}", a.kendall_tau);
                println!("spearman_rho {}", a.spearman_rho);
            }
        }
        Command::Report { run_dir } => {
            let record = load_record(&run_dir)?;
            emit_report(&record, &run_dir)?;
            print!("{}", render_summary(&record));
        }
        Command::Synth {
            nodes,
            cliques,
            n,
            noise,
            seed,
            out,
        } => {
            let g = synth_generate(SynthParams {
                num_nodes: nodes,
                num_cliques: cliques,
                n,
                noise_edges: noise,
                seed,
            })?;
            let mut w = output(&out)?;
            w.write_all(g.to_edge_list().as_bytes())?;
            w.flush()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
