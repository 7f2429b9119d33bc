use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fedhpo::pipeline::{
    emit_report, load_optima, parse_report_csv, run_full, run_phase1_to_dir, run_phase2_to_dir,
    ExperimentConfig, ReportFormat,
};
use fedhpo::Error;

/// Two-phase federated hyperparameter optimization simulator.
#[derive(Parser)]
#[command(name = "fedhpo", version, about)]
struct Cli {
    /// Experiment config file (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the config's RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory for ledgers and reports.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Centralized TPE search per task; writes hpo_trials.csv and optima.json.
    Phase1,
    /// Federated evaluation of the three schemes; reads optima.json from
    /// the output directory and writes fed_rounds.csv, report.csv, report.md.
    Phase2,
    /// Phase 1 followed by Phase 2.
    Full,
    /// Re-render report.csv from the output directory as markdown.
    Report,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), Error> {
    match cli.command {
        Command::Phase1 => {
            let cfg = load_config(cli)?;
            let out = run_phase1_to_dir(&cfg, &cli.out)?;
            for ((task, model), opt) in &out.optima {
                println!(
                    "{task}/{model}: lr {:.3e}, {}, batch {}, val_loss {:.4}, val_f1 {:.3}",
                    opt.config.learning_rate,
                    opt.config.optimizer,
                    opt.config.batch_size,
                    opt.val_loss,
                    opt.val_f1
                );
            }
        }
        Command::Phase2 => {
            let cfg = load_config(cli)?;
            let optima = load_optima(&cli.out.join("optima.json"))?;
            let report = run_phase2_to_dir(&cfg, &optima, &cli.out)?;
            print!("{}", emit_report(&report, ReportFormat::Markdown));
        }
        Command::Full => {
            let cfg = load_config(cli)?;
            let report = run_full(&cfg, &cli.out)?;
            print!("{}", emit_report(&report, ReportFormat::Markdown));
        }
        Command::Report => {
            let text = std::fs::read_to_string(cli.out.join("report.csv"))?;
            let report = parse_report_csv(&text)?;
            print!("{}", emit_report(&report, ReportFormat::Markdown));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ (Error::ConfigParse(_) | Error::InvalidExperimentConfig(_))) => {
            eprintln!("config error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
