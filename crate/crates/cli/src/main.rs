use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use reranklab::harness::{cmd_evaluate, cmd_gen_data, cmd_shift_study, cmd_train, cmd_verify, ExperimentConfig, Stage, StageOutput};
use reranklab::{Error, Result};

#[derive(Parser)]
#[command(name = "reranklab", version, about = "Evaluator-generator re-ranking experiments on a simulated slate environment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment config; omitted fields take the desk defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the config's global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker cap. Computation is single-threaded, so only 1 is meaningful.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the item universe, the hidden rule and the labeled lists.
    GenData(Common),
    /// Train one stage: evaluator, baselines, eg_rerank or eg_rerank_plus.
    Train {
        #[arg(long)]
        stage: String,
        #[command(flatten)]
        common: Common,
    },
    /// Score every configured method and write the reports.
    Evaluate(Common),
    /// Evaluator error on biased versus uniform lists.
    ShiftStudy(Common),
    /// Recompute the checksums listed in the run manifest.
    Verify(Common),
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    if c.threads == 0 {
        return Err(Error::config("--threads must be at least 1"));
    }
    let mut config = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::desk(),
    };
    if let Some(s) = c.seed {
        config.seed = s;
    }
    eprintln!("# effective config\n{}", config.to_toml());
    for w in config.warnings() {
        eprintln!("warning: {w}");
    }
    if c.threads > 1 {
        eprintln!("warning: --threads {} requested; all stages run on one thread", c.threads);
    }
    Ok(config)
}

fn report(out: &Path, o: &StageOutput) {
    for n in &o.notes {
        println!("{n}");
    }
    for w in &o.warnings {
        eprintln!("warning: {w}");
    }
    println!("wrote {} files under {}", o.files.len(), out.display());
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(c) => {
            let config = load_config(&c)?;
            report(&c.out, &cmd_gen_data(&config, &c.out)?);
        }
        Command::Train { stage, common: c } => {
            let stage: Stage = stage.parse()?;
            let config = load_config(&c)?;
            report(&c.out, &cmd_train(&config, &c.out, stage)?);
        }
        Command::Evaluate(c) => {
            let config = load_config(&c)?;
            let res = cmd_evaluate(&config, &c.out)?;
            for (r, reports) in res.runs.iter().enumerate() {
                println!("seed-{r}");
                println!("  {:<20} {:>8} {:>8} {:>8} {:>9} {:>8}", "method", "gauc", "online", "ndcg", "evaluator", "true");
                for m in reports {
                    println!(
                        "  {:<20} {:>8.4} {:>8.4} {:>8.4} {:>9.4} {:>8.4}",
                        m.method, m.offline_gauc, m.online_gauc, m.ndcg, m.evaluator_score, m.true_score
                    );
                }
            }
            report(&c.out, &res.stage);
        }
        Command::ShiftStudy(c) => {
            let config = load_config(&c)?;
            let (o, rows) = cmd_shift_study(&config, &c.out)?;
            for r in &rows {
                println!("seed {:>3}  mae_on {:.4}  mae_off {:.4}", r.seed, r.mae_on, r.mae_off);
            }
            report(&c.out, &o);
        }
        Command::Verify(c) => {
            let n = cmd_verify(&c.out)?;
            println!("verified {n} files");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error kind={} message={msg:?}", e.kind());
            ExitCode::FAILURE
        }
    }
}
