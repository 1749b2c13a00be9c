//! `fdia-lab`: generate datasets, train detectors, attack them and report.
//!
//! Exit status is 0 on success, 1 for usage or configuration errors and 2
//! when a stage fails while running.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fdia_core::harness::{
    cmd_attack, cmd_embed, cmd_gen, cmd_report, cmd_train, default_k, ExperimentConfig, HarnessError,
};

#[derive(Parser)]
#[command(name = "fdia-lab", version, about = "FDIA detection, adversarial attacks and padding defense")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config (JSON). Without it the defaults for `--case` are used.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output root; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Test system: case14, case30, case118, case300 or a .m/.json file.
    /// Overriding a config's case also resets its compromised-meter counts.
    #[arg(long, global = true)]
    case: Option<String>,

    /// Padding size for `train`; 0 or absent trains the undefended detector.
    #[arg(long, global = true)]
    padding: Option<usize>,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Generate the labeled dataset and its train/val/test splits.
    Gen,
    /// Train one detector.
    Train,
    /// Run the attack grid against every trained padding size.
    Attack,
    /// Project the detector's last hidden layer to 2-D.
    Embed,
    /// Merge per-cell results into report.json and summary.csv.
    Report,
}

fn resolve(cli: &Cli) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
            let mut cfg = ExperimentConfig::from_json(&text)?;
            if let Some(case) = &cli.case {
                cfg.case = case.clone();
                if let Some(k) = default_k(case) {
                    cfg.attacks.k = k.to_vec();
                }
            }
            cfg
        }
        None => ExperimentConfig::for_case(cli.case.as_deref().unwrap_or("case14"))?,
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.display().to_string();
    }
    if cli.padding.is_some() && cli.command != Command::Train {
        return Err(HarnessError::Config("--padding only applies to `train`".into()));
    }
    cfg.check()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), HarnessError> {
    let cfg = resolve(cli)?;
    let dir = cfg.case_dir();
    match cli.command {
        Command::Gen => {
            let m = cmd_gen(&cfg)?;
            println!(
                "{}: {} normal, {} false; train/val/test {}/{}/{}",
                dir.display(),
                m.total.normal,
                m.total.false_data,
                m.train.normal + m.train.false_data,
                m.val.normal + m.val.false_data,
                m.test.normal + m.test.false_data,
            );
        }
        Command::Train => {
            let p = cli.padding.unwrap_or(0);
            let curve = cmd_train(&cfg, Some(p))?;
            let best = &curve.points[curve.best_epoch];
            println!(
                "p={p}: loss {:.4} -> {:.4}, best epoch {} (val accuracy {:.4})",
                curve.initial_loss(),
                curve.final_loss(),
                curve.best_epoch,
                best.val_accuracy
            );
        }
        Command::Attack => {
            let records = cmd_attack(&cfg)?;
            for r in &records {
                println!(
                    "{:<20} k={:<3} eps={:<5} p={:<3} detected {:.4} (clean recall {:.4})",
                    r.strategy.name(),
                    r.k,
                    r.epsilon,
                    r.p,
                    r.attacked_accuracy,
                    r.recall_on_false
                );
            }
        }
        Command::Embed => {
            let n = cmd_embed(&cfg)?;
            println!("{}: {n} points", dir.join("embed/embedding.csv").display());
        }
        Command::Report => {
            let report = cmd_report(&dir)?;
            println!("{}: {} cells", dir.join("report.json").display(), report.records.len());
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
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
