use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cellsbi_cli::pipeline::{output_dir, run_pipeline, OUTPUT_ROOT_ENV};
use cellsbi_cli::{load, Overrides, PipelineError, Stage};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cellsbi", version, about = "Simulation-based inference pipeline for cell biology models")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Verb {
    /// Cost profile, prior predictive check, normality and m tuning.
    PreAnalysis(RunArgs),
    /// Run the configured inference algorithm.
    Infer(RunArgs),
    /// Posterior predictive checks and a comparison table over earlier runs.
    Analyse(RunArgs),
    /// Check a config and list every problem found.
    Validate(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    algorithm: Option<String>,
    /// Parent of per-stage output directories when `output` is not set.
    #[arg(long, env = OUTPUT_ROOT_ENV)]
    output_root: Option<PathBuf>,
}

fn absolute(p: Option<PathBuf>) -> Option<PathBuf> {
    p.map(|p| std::path::absolute(&p).unwrap_or(p))
}

fn fail(e: &PipelineError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot set up {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    let (stage, args) = match cli.verb {
        Verb::PreAnalysis(a) => (Some(Stage::PreAnalysis), a),
        Verb::Infer(a) => (Some(Stage::Infer), a),
        Verb::Analyse(a) => (Some(Stage::Analyse), a),
        Verb::Validate(a) => (None, a),
    };
    let overrides = Overrides {
        model: args.model,
        stage: stage.map(|s| s.to_string()),
        algorithm: args.algorithm,
        // flags are relative to where the command runs, not to the config
        dataset: absolute(args.dataset),
        output: absolute(args.output),
        seed: args.seed,
    };
    let cfg = match load(&args.config, &overrides) {
        Ok(c) => c,
        Err(e) => return fail(&PipelineError::Config(e)),
    };
    if stage.is_none() {
        println!("{}: ok ({} stage, {} model)", args.config.display(), cfg.stage, cfg.model);
        return ExitCode::SUCCESS;
    }
    let dir = output_dir(&cfg, args.output_root.as_deref().map(Path::new));
    match run_pipeline(&cfg, &dir) {
        Ok(out) => {
            println!(
                "{} written to {} ({} simulations)",
                cfg.stage,
                out.dir.display(),
                out.manifest.total_simulations
            );
            let code = out.status.exit_code();
            if code != 0 {
                eprintln!("warning: simulation budget exhausted before the stopping rule was met");
            }
            ExitCode::from(code as u8)
        }
        Err(e) => fail(&e),
    }
}
