//! Command-line front end over the experiment pipeline.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

use alcell::experiment::{self, ExperimentConfig};
use alcell::predictor::ModelType;

#[derive(Parser)]
#[command(
    name = "alcell",
    about = "Aluminum electrolysis cell simulator and hybrid-model experiment harness",
    version
)]
struct Cli {
    /// Experiment configuration JSON; missing fields take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Size of the worker pool (default: all cores). Results are
    /// identical for any value.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

/// Flag overrides applied on top of the configuration file.
#[derive(Args)]
struct Overrides {
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    n_train: Option<usize>,
    #[arg(long, global = true)]
    n_test: Option<usize>,
    #[arg(long, global = true)]
    steps: Option<usize>,
    #[arg(long, global = true)]
    dt: Option<f64>,
    /// L1 coefficient for the sparse model types.
    #[arg(long, global = true)]
    lambda: Option<f64>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Instances trained per model type.
    #[arg(long, global = true)]
    instances: Option<usize>,
    /// Forecast horizons in steps, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    horizons: Option<Vec<usize>>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(v) = self.seed {
            cfg.master_seed = v;
        }
        if let Some(v) = self.n_train {
            cfg.n_train = v;
        }
        if let Some(v) = self.n_test {
            cfg.n_test = v;
        }
        if let Some(v) = self.steps {
            cfg.steps = v;
        }
        if let Some(v) = self.dt {
            cfg.dt = v;
        }
        if let Some(v) = self.lambda {
            cfg.lambda_sparse = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.instances {
            cfg.instances_per_type = v;
        }
        if let Some(v) = &self.horizons {
            cfg.horizons = v.clone();
        }
        if let Some(v) = &self.out {
            cfg.out_dir = v.clone();
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the corpus and build the regression datasets.
    GenData,
    /// Train model instances (all configured types unless narrowed).
    Train {
        /// One of: ddm_dense, ddm_sparse, costa_dense, costa_sparse.
        #[arg(long)]
        model_type: Option<String>,
        /// Instance index; all configured instances when omitted.
        #[arg(long)]
        instance: Option<usize>,
    },
    /// Run rolling forecasts for every model on the test set.
    Eval,
    /// Emit violin source data and blow-up counts from the report.
    Report,
}

fn run() -> alcell::Result<()> {
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    cli.overrides.apply(&mut cfg);

    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| alcell::Error::Malformed {
                what: "thread pool",
                detail: e.to_string(),
            })?;
    }

    match cli.command {
        Command::GenData => {
            let summary = experiment::cmd_gen_data(&cfg)?;
            println!(
                "generated {} train + {} test trajectories ({} pairs per dataset) in {}",
                summary.n_train,
                summary.n_test,
                summary.pairs_per_dataset,
                cfg.out_dir.display()
            );
        }
        Command::Train {
            model_type,
            instance,
        } => {
            let types: Vec<ModelType> = match &model_type {
                Some(name) => {
                    let ty = ModelType::parse(name).ok_or_else(|| alcell::Error::Malformed {
                        what: "model type",
                        detail: format!("unknown model type {name:?}"),
                    })?;
                    vec![ty]
                }
                None => cfg.model_types.clone(),
            };
            let instances: Vec<usize> = match instance {
                Some(i) => vec![i],
                None => (0..cfg.instances_per_type).collect(),
            };
            for &ty in &types {
                for &i in &instances {
                    let path = experiment::cmd_train(&cfg, ty, i)?;
                    println!("trained {} instance {} -> {}", ty, i, path.display());
                }
            }
        }
        Command::Eval => {
            let report = experiment::cmd_eval(&cfg)?;
            println!(
                "{:<14} {:>8} {:>12} {:>12} {:>8}",
                "model", "horizon", "median", "mean", "blowups"
            );
            for ty in &report.types {
                for hs in &ty.per_horizon {
                    let fmt = |v: Option<f64>| match v {
                        Some(x) => format!("{x:.6}"),
                        None => "-".into(),
                    };
                    println!(
                        "{:<14} {:>8} {:>12} {:>12} {:>5}/{}",
                        ty.model_type.to_string(),
                        hs.horizon,
                        fmt(hs.median),
                        fmt(hs.mean),
                        hs.blowup_count,
                        hs.n
                    );
                }
            }
            println!("report written to {}", cfg.report_path().display());
        }
        Command::Report => {
            let files = experiment::cmd_report(&cfg)?;
            for f in &files {
                println!("wrote {}", f.display());
            }
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        let mut source = std::error::Error::source(&e);
        while let Some(s) = source {
            eprintln!("  caused by: {s}");
            source = s.source();
        }
        std::process::exit(1);
    }
}
