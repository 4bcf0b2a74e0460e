use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use bugforge_cli::pipeline::{self, StageStatus};
use bugforge_cli::{exit_code, PipelineConfig};
use bugforge_core::synth::SynthShape;

#[derive(Parser)]
#[command(name = "bugforge", version, about = "Learned program repair for Java methods")]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(short, long, global = true, default_value = "bugforge.toml")]
    config: PathBuf,
    /// Override a config field, e.g. `--set eval.beam_width=3`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Worker threads for data-parallel work (0 = all cores).
    #[arg(short, long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Run even if the stage manifest says the outputs are current.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dedup, filter and clean the source tree.
    Ingest,
    /// Mine repair pairs from commits and methods from the cleaned tree.
    Extract,
    /// Mine idioms and abstract the repair pairs.
    Abstract,
    /// Train the subword tokenizer.
    TokTrain,
    /// Build span-masked pretraining examples.
    Noise,
    /// Run the training stage plan.
    Train,
    /// Beam-decode the held-out pairs.
    Predict,
    /// Score predictions.
    Eval,
    /// Write the run summary.
    Report,
    /// Every stage in order.
    Run,
    /// Print the resolved configuration.
    ShowConfig,
    /// Generate a synthetic corpus and commit history at the configured input paths.
    Synth {
        #[arg(long, default_value_t = 4)]
        repos: usize,
        #[arg(long, default_value_t = 6)]
        files_per_repo: usize,
        #[arg(long, default_value_t = 200)]
        commits: usize,
        #[arg(long, default_value_t = 3)]
        methods_per_file: usize,
        #[arg(long, default_value_t = 1)]
        min_statements: usize,
        #[arg(long, default_value_t = 4)]
        max_statements: usize,
    },
}

fn report(stage: &str, status: StageStatus) {
    match status {
        StageStatus::Ran => println!("{stage}: done"),
        StageStatus::UpToDate => println!("{stage}: up to date"),
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = PipelineConfig::load(&cli.config, &cli.overrides)?;
    bugforge_core::par::configure_jobs(cli.jobs);
    let stage = match &cli.command {
        Command::Ingest => "ingest",
        Command::Extract => "extract",
        Command::Abstract => "abstract",
        Command::TokTrain => "tok-train",
        Command::Noise => "noise",
        Command::Train => "train",
        Command::Predict => "predict",
        Command::Eval => "eval",
        Command::Report => "report",
        Command::Run => {
            for (stage, status) in pipeline::run_all(&cfg, cli.force)? {
                report(stage, status);
            }
            return Ok(());
        }
        Command::ShowConfig => {
            print!("{}", cfg.to_toml());
            return Ok(());
        }
        Command::Synth {
            repos,
            files_per_repo,
            commits,
            methods_per_file,
            min_statements,
            max_statements,
        } => {
            let shape = SynthShape {
                methods_per_file: *methods_per_file,
                min_statements: *min_statements,
                max_statements: (*max_statements).max(*min_statements),
            };
            pipeline::synth(&cfg, *repos, *files_per_repo, *commits, shape)?;
            println!("synth: wrote {} and {}", cfg.paths.corpus_in.display(), cfg.paths.commits.display());
            return Ok(());
        }
    };
    report(stage, pipeline::run_named(stage, &cfg, cli.force)?);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
