use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use crownfit::ganmodel::Mode;
use crownfit_cli::{
    cmd_eval, cmd_gen, cmd_report, cmd_train, init_threads, CliError, CliResult, EvalTarget, ExperimentConfig, Split,
};

#[derive(Parser)]
#[command(name = "crownfit", version, about = "Functionality-aware crown generation on depth rasters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output root; the run directory is `<out>/<config hash>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override a configuration value, e.g. `--set train.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn load(&self) -> CliResult<ExperimentConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(out) = &self.out {
            let quoted = toml::Value::String(out.to_string_lossy().into_owned());
            overrides.push(format!("out={quoted}"));
        }
        ExperimentConfig::load(self.config.as_deref(), &overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the train, val and test corpora.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train generator/discriminator pairs.
    Train {
        #[command(flatten)]
        common: Common,
        /// Mode to train; every configured mode when omitted.
        #[arg(long)]
        mode: Option<Mode>,
        /// Seed to train; every configured seed when omitted.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate trained models, or the designed crowns with `--mode design`.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        mode: Option<EvalTarget>,
        #[arg(long)]
        seed: Option<u64>,
        /// Split to evaluate; val and test when omitted.
        #[arg(long)]
        split: Option<Split>,
    },
    /// Write result tables and plots from existing evaluations.
    Report {
        #[command(flatten)]
        common: Common,
    },
}

fn seeds(cfg: &ExperimentConfig, seed: Option<u64>) -> Vec<u64> {
    seed.map_or_else(|| cfg.seeds.clone(), |s| vec![s])
}

fn run(command: Command) -> CliResult<()> {
    match command {
        Command::GenData { common } => {
            let cfg = common.load()?;
            let m = cmd_gen(&cfg)?;
            let counts: Vec<String> = m.splits.iter().map(|(s, v)| format!("{s} {}", v.count)).collect();
            println!("{} ({})", cfg.run_dir().join("corpus").display(), counts.join(", "));
            println!("content sha256 {}", m.content_sha256);
        }
        Command::Train { common, mode, seed } => {
            let cfg = common.load()?;
            let modes = mode.map_or_else(|| cfg.modes.clone(), |m| vec![m]);
            for m in modes {
                for s in seeds(&cfg, seed) {
                    let t = cmd_train(&cfg, m, s)?;
                    println!("trained {m} seed {s}: {} steps in {:.1} s", t.steps, t.seconds);
                }
            }
        }
        Command::Eval {
            common,
            mode,
            seed,
            split,
        } => {
            let cfg = common.load()?;
            let targets = mode.map_or_else(|| cfg.modes.iter().map(|&m| EvalTarget::Model(m)).collect(), |t| vec![t]);
            let splits = split.map_or_else(|| vec![Split::Val, Split::Test], |s| vec![s]);
            for t in targets {
                let seed_list = match t {
                    EvalTarget::Design => vec![0],
                    EvalTarget::Model(_) => seeds(&cfg, seed),
                };
                for s in seed_list {
                    for &sp in &splits {
                        let sum = cmd_eval(&cfg, t, s, sp)?;
                        println!(
                            "eval {t} seed {s} {sp}: {} cases, penetration rate {:.3}, {} empty",
                            sum.n_cases, sum.penetration_rate, sum.n_empty
                        );
                    }
                }
            }
        }
        Command::Report { common } => {
            let cfg = common.load()?;
            println!("{}", cmd_report(&cfg)?.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            if !e.use_stderr() {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let first = e.to_string();
            let first = first.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error[E_USAGE]: {first}");
            return ExitCode::from(2);
        }
    };
    init_threads();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report_error(&e);
            ExitCode::FAILURE
        }
    }
}

fn report_error(e: &CliError) {
    let msg = e.to_string().replace('\n', " ");
    eprintln!("error[{}]: {msg}", e.code());
}
