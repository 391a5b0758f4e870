use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fairstack::experiments::{self, DatasetId, ExperimentConfig, InputFormat, Overrides};
use fairstack::stack::Criterion;
use fairstack::Error;

/// Fair representation learning with stacked adversarial auto-encoders.
#[derive(Parser)]
#[command(name = "fairstack", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a stack and write the model, per-level logs and a run record.
    Fit(ConfigArgs),
    /// Encode rows with a trained model and write z_0..z_{k-1} as CSV.
    Transform(TransformArgs),
    /// Train stacked and single-adversary variants over β values and seeds.
    Sweep(ConfigArgs),
    /// Cross-validated ΔDP of logistic regression and random forest on raw,
    /// single-adversary and stacked features.
    Table1(ConfigArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Replace the seed list with this one seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Set loss.beta and replace the sweep list with this value.
    #[arg(long)]
    beta: Option<f64>,
    /// dp, eo or eopp.
    #[arg(long)]
    criterion: Option<String>,
    /// Upper bound on concurrently trained runs.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct TransformArgs {
    /// Model file written by `fit`.
    #[arg(long)]
    model: PathBuf,
    /// Numeric feature CSV with a header row, or a raw dataset file with --raw.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Treat the input as a raw dataset file of this kind (adult or german).
    #[arg(long)]
    raw: Option<String>,
    /// Take the raw dataset kind from this config's dataset.id.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn load_config(args: &ConfigArgs) -> Result<ExperimentConfig, Error> {
    let criterion = args
        .criterion
        .as_deref()
        .map(str::parse::<Criterion>)
        .transpose()?;
    let mut cfg = ExperimentConfig::load(&args.config)?;
    cfg.apply(&Overrides {
        seed: args.seed,
        beta: args.beta,
        criterion,
        jobs: Some(args.jobs),
    });
    cfg.resolve()?;
    Ok(cfg)
}

fn parse_dataset_id(s: &str) -> Result<DatasetId, Error> {
    match s {
        "adult" => Ok(DatasetId::Adult),
        "german" => Ok(DatasetId::German),
        other => Err(Error::Config {
            field: "--raw".into(),
            reason: format!("unknown dataset {other:?}; allowed values: adult, german"),
        }),
    }
}

/// Exit status: 0 on success, 1 when any run failed.
fn run(cli: Cli) -> Result<bool, Error> {
    match cli.command {
        Command::Fit(args) => {
            let cfg = load_config(&args)?;
            let out = experiments::fit(&cfg)?;
            println!("run directory: {}", out.dir.display());
            println!("model: {}", out.record.model.display());
            let p = &out.record.probe;
            println!(
                "probe on {} rows: accuracy {} delta_dp {} delta_eo {} delta_eopp {}",
                out.record.probe_rows,
                fmt(p.accuracy),
                fmt(p.delta_dp),
                fmt(p.delta_eo),
                fmt(p.delta_eopp)
            );
            for note in &out.record.notes {
                println!("note: {note}");
            }
            Ok(true)
        }
        Command::Transform(args) => {
            let format = match (&args.raw, &args.config) {
                (Some(id), _) => InputFormat::Raw(parse_dataset_id(id)?),
                (None, Some(c)) => InputFormat::Raw(ExperimentConfig::load(c)?.dataset.id),
                (None, None) => InputFormat::Features,
            };
            let n = experiments::transform(&args.model, &args.input, &args.output, format)?;
            println!("wrote {n} rows to {}", args.output.display());
            Ok(true)
        }
        Command::Sweep(args) => {
            let cfg = load_config(&args)?;
            let out = experiments::sweep(&cfg, args.jobs)?;
            println!("run directory: {}", out.dir.display());
            for m in &out.means {
                let beta = m.beta.map_or("-".to_string(), |b| b.to_string());
                println!(
                    "beta {beta:>4} {:<8} runs {} accuracy {} delta_dp {}",
                    m.variant,
                    m.runs,
                    fmt(m.accuracy),
                    fmt(m.delta_dp)
                );
            }
            report_failures(out.failures())
        }
        Command::Table1(args) => {
            let cfg = load_config(&args)?;
            let out = experiments::table1(&cfg, args.jobs)?;
            println!("run directory: {}", out.dir.display());
            print!("{}", out.table.to_csv());
            for c in out.cells.iter().filter(|c| c.error.is_some()) {
                eprintln!(
                    "{} / {} failed: {}",
                    c.model,
                    c.variant,
                    c.error.as_deref().unwrap_or("")
                );
            }
            report_failures(out.failures())
        }
    }
}

fn report_failures(n: usize) -> Result<bool, Error> {
    if n > 0 {
        eprintln!("{n} run(s) failed; see the output directory for details");
    }
    Ok(n == 0)
}

fn fmt(v: Option<f64>) -> String {
    v.map_or("undefined".to_string(), |v| format!("{v:.4}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
