//! Command-line front end: benchmark runs, report generation and the
//! labeling session service.

pub mod evaluate;
pub mod manifest;
pub mod run;
pub mod serve;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use activeseed::eval::QTable;
use clap::{Parser, Subcommand, ValueEnum};

use crate::evaluate::{evaluate_dir, EvaluateOptions};
use crate::manifest::RunManifest;
use crate::run::run_manifest;
use crate::serve::{AppState, ServeConfig};

/// Overrides `--out` when set.
pub const OUT_ENV: &str = "ACTIVESEED_OUT";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("records: {0}")]
    Record(String),
    #[error("port {0} unavailable: {1}")]
    Bind(u16, std::io::Error),
    #[error(transparent)]
    Dataset(#[from] activeseed::dataset::DatasetError),
    #[error(transparent)]
    Active(#[from] activeseed::active::ActiveError),
    #[error(transparent)]
    Eval(#[from] activeseed::eval::EvalError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Parser)]
#[command(name = "activeseed", version, about = "Pool-based active learning with mixture-model kernels")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every cell of a manifest with a simulated oracle.
    Run(RunArgs),
    /// Build rank, data utilization and curve-area reports from run records.
    Evaluate(EvaluateArgs),
    /// Serve labeling sessions over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, clap::Args)]
pub struct RunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum QTableArg {
    Published,
    Standard,
}

#[derive(Debug, clap::Args)]
pub struct EvaluateArgs {
    /// Directory written by `run`.
    #[arg(long)]
    pub records: PathBuf,
    /// Report directory; defaults to `<records>/report`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = "rbf-us")]
    pub baseline: String,
    /// Column order, comma separated (e.g. `rwm-4ds,rbf-4ds,rbf-us`).
    #[arg(long, value_delimiter = ',')]
    pub classifiers: Option<Vec<String>>,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value_t = QTableArg::Published)]
    pub q_table: QTableArg,
}

#[derive(Debug, clap::Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Checkpoints go to `<out>/sessions`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// `ACTIVESEED_OUT`, then the flag, then the manifest, then `out`.
pub fn resolve_out(flag: Option<&Path>, manifest: Option<&Path>) -> PathBuf {
    std::env::var_os(OUT_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .or_else(|| flag.map(Path::to_path_buf))
        .or_else(|| manifest.map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn manifest_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Runs a parsed command; `Ok(false)` means some cells failed.
pub fn execute(cli: Cli) -> Result<bool, CliError> {
    match cli.command {
        Command::Run(args) => {
            let mut m = RunManifest::from_path(&args.manifest)?;
            if let Some(s) = args.seed {
                m.seed = s;
            }
            if args.jobs.is_some() {
                m.jobs = args.jobs;
            }
            let out = resolve_out(args.out.as_deref(), m.out.as_deref());
            let base = manifest_dir(&args.manifest);
            let summary = match m.jobs {
                Some(j) => rayon::ThreadPoolBuilder::new()
                    .num_threads(j)
                    .build()
                    .map_err(|e| CliError::Manifest(e.to_string()))?
                    .install(|| run_manifest(&m, &base, &out))?,
                None => run_manifest(&m, &base, &out)?,
            };
            let failed = summary.cells.iter().filter(|c| !c.ok).count();
            println!("{} cells, {failed} failed; records in {}", summary.cells.len(), out.display());
            Ok(failed == 0)
        }
        Command::Evaluate(args) => {
            let out = args.out.clone().unwrap_or_else(|| args.records.join("report"));
            let opts = EvaluateOptions {
                classifiers: args.classifiers,
                baseline: args.baseline,
                alpha: args.alpha,
                q_table: match args.q_table {
                    QTableArg::Published => QTable::Published,
                    QTableArg::Standard => QTable::Standard,
                },
            };
            let report = evaluate_dir(&args.records, &out, &opts)?;
            if let (Some(r), Some(f)) = (&report.ranks, &report.friedman) {
                for (c, rank) in report.classifiers.iter().zip(&r.mean_ranks) {
                    println!("{c:>12}  mean rank {rank:.3}");
                }
                println!("Friedman {:.2} (critical {:.3})", f.statistic, f.critical);
            }
            for g in &report.gaps {
                println!("gap: {} {} ({})", g.dataset, g.classifier, g.reason);
            }
            println!("report in {}", out.display());
            Ok(true)
        }
        Command::Serve(args) => {
            let mut m = RunManifest::from_path(&args.manifest)?;
            if let Some(s) = args.seed {
                m.seed = s;
            }
            let base = manifest_dir(&args.manifest);
            let datasets = m.datasets.iter().map(|d| d.load(&base)).collect::<Result<Vec<_>, _>>()?;
            let out = resolve_out(args.out.as_deref(), m.out.as_deref());
            let cfg = ServeConfig {
                vi_grid: m.vi_grid.clone(),
                vi: m.vi.clone(),
                folds: m.folds,
                seed: m.seed,
                settings: m.settings.clone(),
                checkpoint_dir: Some(out.join("sessions")),
            };
            let state = Arc::new(AppState::new(datasets, cfg));
            let restored = state.restore()?;
            if restored > 0 {
                tracing::info!("restored {restored} sessions");
            }
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve::serve(state, args.port))?;
            Ok(true)
        }
    }
}
