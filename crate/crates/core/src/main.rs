use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use miaudit::data::{synth_gaussian, FeatureDataset};
use miaudit::eval;
use miaudit::orchestrator::{run_experiment, ExperimentManifest};

#[derive(Parser)]
#[command(name = "miaudit", about = "Membership-inference auditing for linear heads", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute an experiment manifest end to end.
    Run {
        manifest: PathBuf,
        /// Override the manifest master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the training worker count.
        #[arg(long)]
        workers: Option<usize>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Reuse model files already present in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Generate a synthetic Gaussian feature store.
    Synth {
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 500)]
        per_class: usize,
        #[arg(long, default_value_t = 2.0)]
        separation: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the shape of a feature store.
    Inspect { path: PathBuf },
    /// Recompute an ROC curve (and AUC) from a score CSV.
    Roc { scores: PathBuf },
}

fn run(cli: Cli) -> miaudit::Result<()> {
    match cli.command {
        Command::Run { manifest, seed, workers, out, resume } => {
            let (mut m, hash) = ExperimentManifest::from_path(&manifest)?;
            if let Some(seed) = seed {
                m.seed = seed;
            }
            if let Some(workers) = workers {
                m.workers = workers;
            }
            if let Some(out) = out {
                m.out_dir = out;
            }
            let data_root = std::env::var_os("MIA_DATA_DIR").map(PathBuf::from);
            let outcome = run_experiment(&m, hash, data_root.as_deref(), resume)?;
            println!("wrote {}", outcome.summary_path.display());
            println!(
                "{} summary rows, {} cell errors",
                outcome.summary.rows.len(),
                outcome.summary.errors.len()
            );
            for e in &outcome.summary.errors {
                eprintln!("cell error: attack={} repeat={} S={}: {}", e.attack, e.repeat, e.shots, e.message);
            }
            Ok(())
        }
        Command::Synth { out, classes, dim, per_class, separation, seed } => {
            let ds = synth_gaussian(classes, dim, per_class, separation, seed);
            ds.save_to_path(&out)?;
            println!("wrote {} ({} samples)", out.display(), ds.len());
            Ok(())
        }
        Command::Inspect { path } => {
            let ds = FeatureDataset::load_from_path(&path)?;
            println!(
                "n={} d={} C={} K={}",
                ds.len(),
                ds.dim(),
                ds.classes(),
                ds.views_per_sample()
            );
            Ok(())
        }
        Command::Roc { scores } => {
            let text = std::fs::read_to_string(&scores)?;
            let mut pairs = Vec::new();
            for (i, line) in text.lines().enumerate() {
                if i == 0 {
                    continue; // header
                }
                let fields: Vec<&str> = line.split(',').collect();
                if fields.len() < 4 {
                    return Err(miaudit::Error::Format(format!(
                        "score CSV line {}: expected at least 4 fields",
                        i + 1
                    )));
                }
                let score: f64 = fields[2]
                    .parse()
                    .map_err(|_| miaudit::Error::Format(format!("bad score on line {}", i + 1)))?;
                let member = match fields[3] {
                    "0" | "false" => false,
                    "1" | "true" => true,
                    other => {
                        return Err(miaudit::Error::Format(format!(
                            "bad is_member {other:?} on line {}",
                            i + 1
                        )))
                    }
                };
                pairs.push((score, member));
            }
            let curve = eval::roc_points(&pairs)?;
            println!("fpr,tpr");
            for (fpr, tpr) in &curve.points {
                println!("{fpr},{tpr}");
            }
            println!("# auc = {}", eval::auc(&curve));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
