use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bottlelab::blocks::BlockKind;
use bottlelab::config::{ModelSection, Profile, RunConfig, StudyConfig, TrainSection};
use bottlelab::data::write_synthetic_cifar10;
use bottlelab::harness::{build_model, count_table, param_counts, run_analyze, run_study, run_train, write_study};
use bottlelab::nn::NormKind;
use bottlelab::vessel::fit_budget;
use bottlelab::Result;
use clap::{Args, Parser, Subcommand};

/// Bottleneck blocks with and without SoLU residuals on CIFAR-10.
///
/// Data is read from the CIFAR-10 binary directory given by `BLAB_DATA_DIR`,
/// else the config's `[data] dir`, else `data/cifar-10-batches-bin`.
#[derive(Parser)]
#[command(name = "bottlelab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write config.toml, runlog.csv, last.blab, best.blab.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Print per-section parameter counts.
    Count {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Export the interference report of a checkpoint.
    Analyze {
        checkpoint: PathBuf,
        /// Defaults to the config.toml beside the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Defaults to `report/` beside the checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train every cell with and without SoLU and write the gap tables.
    Study {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        budget: Option<usize>,
        /// Replaces the config's seed list.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        quick: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic dataset in the CIFAR-10 binary layout.
    SynthData {
        #[arg(long)]
        out: PathBuf,
        /// Records in each of the five training files.
        #[arg(long, default_value_t = 200)]
        per_file: usize,
        #[arg(long, default_value_t = 200)]
        test: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    block: Option<BlockKind>,
    #[arg(long)]
    norm: Option<NormKind>,
    #[arg(long, action = clap::ArgAction::Set)]
    solu: Option<bool>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    quick: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        apply_model(&mut cfg.model, self.block, self.norm, self.solu, self.budget);
        apply_train(&mut cfg.train, self.seed, self.quick);
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        Ok(cfg)
    }
}

fn apply_model(
    m: &mut ModelSection,
    block: Option<BlockKind>,
    norm: Option<NormKind>,
    solu: Option<bool>,
    budget: Option<usize>,
) {
    if let Some(b) = block {
        m.block = b;
    }
    if norm.is_some() {
        m.norm = norm;
    }
    if let Some(s) = solu {
        m.solu = s;
    }
    if budget.is_some() {
        m.budget = budget;
    }
}

fn apply_train(t: &mut TrainSection, seed: Option<u64>, quick: bool) {
    if seed.is_some() {
        t.seed = seed;
    }
    if quick {
        t.profile = Profile::Quick;
    }
}

fn train(run: &RunArgs, epochs: Option<usize>) -> Result<()> {
    let mut cfg = run.config()?;
    if epochs.is_some() {
        cfg.train.epochs = epochs;
    }
    let data = cfg.data.load()?;
    let s = run_train(&cfg, &data, &mut |r| {
        eprintln!(
            "epoch {:>3}  lr {:.2e}  loss {:.4}  train {:.4}  test {:.4}",
            r.epoch, r.lr, r.train_loss, r.train_acc, r.test_acc
        )
    })?;
    println!(
        "final_test_acc {:.4} best_test_acc {:.4} params {} dir {}",
        s.final_test_acc,
        s.best_test_acc,
        s.params,
        s.dir.display()
    );
    Ok(())
}

fn count(run: &RunArgs) -> Result<()> {
    let cfg = run.config()?;
    if let Some(target) = cfg.model.budget {
        let fit = fit_budget(&cfg.model.vessel_unscaled()?, target, cfg.model.budget_tolerance)?;
        println!(
            "budget {target}: multiplier {} gives {} params",
            fit.config.width_multiplier, fit.params
        );
    }
    let vessel = cfg.model.vessel()?;
    let model = build_model(&vessel, 0)?;
    print!("{}", count_table(&vessel, &param_counts(&model)));
    Ok(())
}

fn beside(checkpoint: &Path, name: &str) -> PathBuf {
    checkpoint.parent().unwrap_or(Path::new(".")).join(name)
}

fn analyze(checkpoint: &Path, config: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let config = config.map_or_else(|| beside(checkpoint, "config.toml"), Path::to_path_buf);
    let cfg = RunConfig::load(&config)?;
    let out = out.map_or_else(|| beside(checkpoint, "report"), Path::to_path_buf);
    let (_, test) = cfg.data.load()?;
    let report = run_analyze(&cfg, checkpoint, &test, &out)?;
    println!(
        "{} layers, mean |O| {:.4}, report {}",
        report.layers.len(),
        report.mean_abs_offdiag(),
        out.display()
    );
    Ok(())
}

fn study(
    config: Option<&Path>,
    budget: Option<usize>,
    seed: Option<u64>,
    quick: bool,
    out: Option<&Path>,
) -> Result<()> {
    let mut s = match config {
        Some(p) => StudyConfig::load(p)?,
        None => StudyConfig::default(),
    };
    if budget.is_some() {
        s.budget = budget;
    }
    if let Some(seed) = seed {
        s.seeds = vec![seed];
    }
    if quick {
        s.train.profile = Profile::Quick;
    }
    if let Some(out) = out {
        s.out = out.to_path_buf();
    }
    let data = s.data.load()?;
    let outcome = run_study(&s, &data, &mut |tag, r| {
        eprintln!("{tag} epoch {} test {:.4}", r.epoch, r.test_acc)
    })?;
    write_study(&s.out, &outcome)?;
    println!(
        "{:<14}{:<12}{:>10}{:>10}{:>10}{:>10}",
        "block", "norm", "base", "solu", "gap", "rel_drop"
    );
    for g in &outcome.gaps {
        println!(
            "{:<14}{:<12}{:>10.2}{:>10.2}{:>10.2}{:>10.3}",
            g.block.to_string(),
            g.norm.to_string(),
            g.base_acc_mean,
            g.solu_acc_mean,
            g.gap_mean,
            g.relative_drop_mean
        );
    }
    let failed = outcome.runs.iter().filter(|r| r.outcome.is_err()).count();
    println!(
        "{} runs, {failed} failed, param spread {:.2}%, tables in {}",
        outcome.runs.len(),
        outcome.param_spread * 100.0,
        s.out.display()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { run, epochs } => train(&run, epochs),
        Command::Count { run } => count(&run),
        Command::Analyze {
            checkpoint,
            config,
            out,
        } => analyze(&checkpoint, config.as_deref(), out.as_deref()),
        Command::Study {
            config,
            budget,
            seed,
            quick,
            out,
        } => study(config.as_deref(), budget, seed, quick, out.as_deref()),
        Command::SynthData {
            out,
            per_file,
            test,
            seed,
        } => {
            write_synthetic_cifar10(&out, per_file, test, seed)?;
            println!(
                "wrote {} training and {test} test records to {}",
                5 * per_file,
                out.display()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
