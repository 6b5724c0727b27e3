use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cmst_cli::commands::{cmd_bench, cmd_eval, cmd_gen_data, cmd_report, cmd_train};
use cmst_cli::config::{parse_list, Overrides, RunConfig};
use cmst_cli::exit_code;
use cmst_core::baselines::VoteRule;
use cmst_core::eval::parse_class_counts;
use cmst_core::model::MethodKind;

#[derive(Parser)]
#[command(
    name = "cmst",
    version,
    about = "CNN bank + multistage FCN ensembles for radar-signature classification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (traces + manifest).
    GenData {
        /// Generator spec JSON; defaults to the bundled 17-class benchmark.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
    },
    /// Train one model and save it.
    Train(RunArgs),
    /// Leave-one-out evaluation or a class-count sweep.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Score a saved model on the dataset instead of cross-validating.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Training time against worker count.
    Bench(RunArgs),
    /// Merge report JSON files into one comparison CSV.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration JSON; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_method)]
    method: Option<MethodKind>,
    /// Start from the reduced-cost configuration instead of the defaults.
    #[arg(long)]
    desk: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    data_seed: Option<u64>,
    /// Dataset manifest (or its directory).
    #[arg(long, conflicts_with = "data_spec")]
    data: Option<PathBuf>,
    /// Generator spec JSON.
    #[arg(long)]
    data_spec: Option<PathBuf>,
    /// Keep only the first C classes.
    #[arg(long)]
    class_count: Option<usize>,
    /// CNN bank size (cmsn) or committee size.
    #[arg(long)]
    members: Option<usize>,
    /// FCNs per class per stage.
    #[arg(long)]
    group: Option<usize>,
    /// Total stages including the CNN bank.
    #[arg(long)]
    stages: Option<usize>,
    /// Bank epochs (cmsn) or the epoch cap (baselines).
    #[arg(long)]
    epochs: Option<usize>,
    /// Stage target errors, comma separated.
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, value_parser = parse_vote)]
    vote: Option<VoteRule>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    fold_limit: Option<usize>,
    /// Class counts for a sweep, e.g. `8..17` or `8,12,17`.
    #[arg(long)]
    classes: Option<String>,
    /// Worker counts to benchmark, comma separated.
    #[arg(long)]
    cores: Option<String>,
    /// Timing runs per worker count.
    #[arg(long)]
    runs: Option<usize>,
}

fn parse_method(s: &str) -> Result<MethodKind, String> {
    s.parse().map_err(|e: cmst_core::Error| e.to_string())
}

fn parse_vote(s: &str) -> Result<VoteRule, String> {
    match s {
        "majority" => Ok(VoteRule::Majority),
        "mean-score" => Ok(VoteRule::MeanScore),
        _ => Err(format!("unknown vote rule {s:?} (majority | mean-score)")),
    }
}

fn list<T: std::str::FromStr>(flag: &str, v: Option<String>) -> cmst_core::Result<Option<Vec<T>>> {
    v.map(|s| parse_list(&s).map_err(|e| cmst_core::Error::Config(format!("--{flag}: {e}"))))
        .transpose()
}

impl RunArgs {
    fn resolve(self) -> cmst_core::Result<RunConfig> {
        let o = Overrides {
            method: self.method,
            desk: self.desk,
            seed: self.seed,
            data_seed: self.data_seed,
            data_manifest: self.data,
            data_spec: self.data_spec,
            class_count: self.class_count,
            members: self.members,
            group: self.group,
            stages: self.stages,
            epochs: self.epochs,
            schedule: list("schedule", self.schedule)?,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            vote: self.vote,
            workers: self.workers,
            output_dir: self.out,
            repeats: self.repeats,
            fold_limit: self.fold_limit,
            class_counts: self.classes.as_deref().map(parse_class_counts).transpose()?,
            cores: list("cores", self.cores)?,
            runs: self.runs,
        };
        RunConfig::resolve(self.config.as_deref(), &o)
    }
}

fn run(cli: Cli) -> cmst_core::Result<()> {
    match cli.command {
        Command::GenData { spec, out, seed } => {
            let g = cmd_gen_data(spec.as_deref(), &out, seed)?;
            println!(
                "wrote {} fingerprints; manifest {}",
                g.fingerprints,
                g.manifest.display()
            );
            println!("manifest sha256 {}", g.manifest_sha256);
        }
        Command::Train(args) => {
            let dir = cmd_train(&args.resolve()?)?;
            println!("model written to {}", dir.display());
        }
        Command::Eval { run, model } => {
            let (dir, reports) = cmd_eval(&run.resolve()?, model.as_deref())?;
            for r in &reports {
                println!(
                    "{} C={}: accuracy {:.4} ± {:.4} over {} trials ({} failed)",
                    r.method,
                    r.classes,
                    r.mean_accuracy,
                    r.std_accuracy,
                    r.trials.len(),
                    r.failed_trials
                );
            }
            println!("reports written to {}", dir.display());
        }
        Command::Bench(args) => {
            let (dir, report) = cmd_bench(&args.resolve()?)?;
            print!("{}", report.to_csv());
            println!("bench written to {}", dir.display());
        }
        Command::Report { inputs, out } => {
            let path = cmd_report(&inputs, &out)?;
            println!("comparison written to {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
