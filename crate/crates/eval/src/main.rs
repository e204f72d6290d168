//! `eval`: score classifier backends on collected datasets and aggregate
//! study results.
//!
//! ```text
//! eval --backend cife.gmf --dataset data/gamo [--cross-backend gamo.gmf] [--out reports/]
//! eval report reports/*.json
//! eval study study.tsv
//! eval stats data/gamo
//! eval init-weights --out demo.gmf
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use facegame_core::eval::{format_study_means, parse_study};
use facegame_core::{
    aggregate_scores, cross_evaluate, distribution, evaluate, format_report, load_dataset, EvaluationReport,
    ReferenceBackend, ReferenceWeights,
};

#[derive(Debug, Parser)]
#[command(name = "eval", version, about = "Evaluate emotion backends and aggregate study scores")]
#[command(args_conflicts_with_subcommands = true)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Backend trained on the evaluated dataset (self evaluation).
    #[arg(long)]
    backend: Option<PathBuf>,
    /// Dataset root containing `manifest.tsv`.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Backend trained elsewhere, evaluated on the same dataset.
    #[arg(long)]
    cross_backend: Option<PathBuf>,
    /// Directory for JSON reports.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dataset name used in reports; defaults to the directory name.
    #[arg(long)]
    name: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render saved JSON reports as a Markdown table, one column each.
    Report {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Mean final score per player and engine from a TSV of rounds.
    Study {
        file: PathBuf,
        /// Write the TSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-emotion counts of a dataset, as JSON.
    Stats { dataset: PathBuf },
    /// Write a reference backend weight file with seeded random weights.
    InitWeights {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 32)]
        input_side: u32,
        #[arg(long, default_value_t = 16)]
        feature_dimension: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.05)]
        scale: f32,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Some(command) => run_command(command),
        None => run_evaluation(cli.run),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn report_path(dir: &Path, report: &EvaluationReport) -> PathBuf {
    let suffix = if report.cross { "-cross" } else { "" };
    dir.join(format!("{}-on-{}{suffix}.json", report.backend, report.dataset))
}

fn run_evaluation(args: RunArgs) -> anyhow::Result<()> {
    let (Some(backend_path), Some(dataset_root)) = (args.backend, args.dataset) else {
        bail!("--backend and --dataset are required (or use a subcommand, see --help)");
    };
    let dataset = load_dataset(&dataset_root).with_context(|| format!("opening dataset {}", dataset_root.display()))?;
    let name = args.name.unwrap_or_else(|| dataset.name());
    let samples = dataset.samples()?;

    let backend = ReferenceBackend::load_path(&backend_path)
        .with_context(|| format!("loading backend {}", backend_path.display()))?;
    let mut reports = vec![evaluate(&backend, &name, &samples)?];
    if let Some(path) = args.cross_backend {
        let cross = ReferenceBackend::load_path(&path).with_context(|| format!("loading backend {}", path.display()))?;
        reports.push(cross_evaluate(&cross, &name, &samples)?);
    }

    if let Some(dir) = args.out {
        fs::create_dir_all(&dir)?;
        for r in &reports {
            let path = report_path(&dir, r);
            fs::write(&path, r.to_json())?;
            eprintln!("wrote {}", path.display());
        }
    }
    print!("{}", format_report(&reports));
    Ok(())
}

fn run_command(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Report { files } => {
            let reports = files
                .iter()
                .map(|f| EvaluationReport::load(f).with_context(|| format!("reading {}", f.display())))
                .collect::<anyhow::Result<Vec<_>>>()?;
            print!("{}", format_report(&reports));
        }
        Command::Study { file, out } => {
            let text = fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
            let table = format_study_means(&aggregate_scores(&parse_study(&text)?)?);
            match out {
                Some(path) => fs::write(path, table)?,
                None => print!("{table}"),
            }
        }
        Command::Stats { dataset } => {
            let dataset = load_dataset(&dataset).with_context(|| format!("opening dataset {}", dataset.display()))?;
            println!("{}", serde_json::to_string_pretty(&distribution(dataset.manifest()))?);
        }
        Command::InitWeights {
            out,
            input_side,
            feature_dimension,
            seed,
            scale,
        } => {
            ReferenceWeights::seeded(input_side, feature_dimension, seed, scale).save(&out)?;
            eprintln!("wrote {}", out.display());
        }
    }
    Ok(())
}
