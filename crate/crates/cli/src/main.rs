use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use resep::classifiers::HeadKind;
use resep::data::synth::{generate_synthetic, write_day_files, SyntheticConfig};
use resep::harness::run::{self, Dataset, FoldContext};
use resep::harness::{run_all, RunConfig, Scenario};
use resep::parallel::Exec;

const EXIT_OTHER: u8 = 1;
const EXIT_MISSING_FILE: u8 = 3;
const EXIT_CONFIG: u8 = 4;

#[derive(Parser)]
#[command(
    name = "resep",
    version,
    about = "Resident separation and multi-label activity recognition"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Turn CASAS-style day files into instance and vocabulary files.
    Prep {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Activity label corrections, `old new` per line.
        #[arg(long)]
        corrections: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Simulate a two-resident home and write its day files.
    Synth {
        #[arg(long, default_value = "data")]
        out: PathBuf,
        /// Shared fraction of each resident's zone [default: 0].
        #[arg(long)]
        overlap: Option<f64>,
        /// [default: 26]
        #[arg(long)]
        days: Option<usize>,
        /// [default: 1]
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        events_per_day: Option<usize>,
        /// Number of activity patterns (1 to 3).
        #[arg(long)]
        patterns: Option<usize>,
        /// TOML file with any SyntheticConfig fields; flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train the separation model of one fold.
    TrainSep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        fold: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one classifier of one fold.
    TrainCls {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        fold: usize,
        #[arg(long)]
        scenario: Scenario,
        #[arg(long, value_parser = parse_kind)]
        model: HeadKind,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate saved checkpoints of one fold.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        fold: usize,
        /// Classifier scenario; without it only the separator is scored.
        #[arg(long)]
        scenario: Option<Scenario>,
        #[arg(long, value_parser = parse_kind)]
        model: Option<HeadKind>,
    },
    /// Run the full fold x scenario x model grid.
    RunAll {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        max_folds: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Disable data parallelism.
        #[arg(long)]
        sequential: bool,
    },
    /// Render the tables of a finished run.
    Report {
        #[arg(long, default_value = "reports")]
        dir: PathBuf,
    },
}

fn parse_kind(s: &str) -> std::result::Result<HeadKind, String> {
    match s.to_ascii_lowercase().as_str() {
        "bn" | "bigru+bn" => Ok(HeadKind::Bn),
        "q2l" | "bigru+q2l" => Ok(HeadKind::Q2l),
        _ => Err(format!("unknown model `{s}` (expected bn or q2l)")),
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(s) = seed {
        cfg.run.seed = s;
    }
    Ok(cfg)
}

fn with_fold<T>(
    cfg: &RunConfig,
    fold: usize,
    f: impl FnOnce(&FoldContext) -> Result<T>,
) -> Result<T> {
    let data = Dataset::load(&cfg.data_dir())?;
    if fold == 0 || fold > data.plan.len() {
        bail!(resep::Error::Config(format!(
            "fold must be 1..={}",
            data.plan.len()
        )));
    }
    let (train, test) = data.split(fold - 1);
    let ctx = FoldContext::new(cfg, fold, &train, &test, &data.class_names)?;
    f(&ctx)
}

fn print_records(records: &[resep::metrics::MetricRecord]) {
    for r in records
        .iter()
        .filter(|r| r.class == resep::harness::eval::OVERALL)
    {
        println!("{}\t{}\t{}\t{:.4}", r.scenario, r.model, r.metric, r.value);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Prep {
            input,
            out,
            corrections,
            jobs,
        } => {
            let days = resep::parallel::with_workers(jobs, || {
                run::prep_dir(&input, &out, corrections.as_deref(), Exec::Parallel)
            })?;
            let mut total = 0;
            for d in &days {
                total += d.instances;
                println!(
                    "day {:>2} {}: {} events ({} layout), {} motion-off removed, {} malformed, {} out of order, {} instances",
                    d.day,
                    d.file.display(),
                    d.events,
                    d.parse.variant,
                    d.removed_motion_off,
                    d.parse.malformed.len(),
                    d.parse.out_of_order,
                    d.instances
                );
                for (line, why) in &d.parse.malformed {
                    log::warn!("{}:{line}: {why}", d.file.display());
                }
            }
            println!(
                "{} days, {total} instances written to {}",
                days.len(),
                out.display()
            );
        }
        Cmd::Synth {
            out,
            overlap,
            days,
            seed,
            events_per_day,
            patterns,
            config,
        } => {
            let mut cfg = match config {
                Some(p) => {
                    if !p.exists() {
                        bail!(resep::Error::MissingFile(p));
                    }
                    let text = std::fs::read_to_string(&p)?;
                    toml::from_str::<SyntheticConfig>(&text)
                        .map_err(|e| resep::Error::Config(format!("{}: {e}", p.display())))?
                }
                None => SyntheticConfig::default(),
            };
            if let Some(o) = overlap {
                cfg.overlap = o;
            }
            if let Some(d) = days {
                cfg.days = d;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(n) = events_per_day {
                cfg.events_per_day = n;
            }
            if let Some(p) = patterns {
                cfg.patterns = p;
            }
            let home = generate_synthetic(&cfg)?;
            write_day_files(&out, &home)?;
            println!(
                "{} day files, {} classes, overlap {} written to {}",
                home.days.len(),
                home.class_names.len(),
                cfg.overlap,
                out.display()
            );
        }
        Cmd::TrainSep { config, fold, seed } => {
            let cfg = load_config(&config, seed)?;
            with_fold(&cfg, fold, |ctx| {
                let (_, log) = ctx.train_separator()?;
                println!(
                    "fold {fold}: final loss {:.6}, checkpoints in {}",
                    log.epoch_loss.last().copied().unwrap_or(f64::NAN),
                    ctx.separator_dir().display()
                );
                Ok(())
            })?;
        }
        Cmd::TrainCls {
            config,
            fold,
            scenario,
            model,
            seed,
        } => {
            let cfg = load_config(&config, seed)?;
            with_fold(&cfg, fold, |ctx| {
                let sep = match scenario {
                    Scenario::S2sSep => Some(
                        ctx.load_separator()
                            .context("S2S_Sep needs `train-sep` first")?,
                    ),
                    _ => None,
                };
                let (train_in, _) = ctx.scenario_inputs(scenario, sep.as_ref())?;
                let (_, log) = ctx.train_classifier(scenario, model, &train_in)?;
                println!(
                    "fold {fold} {scenario} {}: final loss {:.6}, checkpoints in {}",
                    model.name(),
                    log.epoch_loss.last().copied().unwrap_or(f64::NAN),
                    ctx.classifier_dir(scenario, model).display()
                );
                Ok(())
            })?;
        }
        Cmd::Eval {
            config,
            fold,
            scenario,
            model,
        } => {
            let cfg = load_config(&config, None)?;
            with_fold(&cfg, fold, |ctx| {
                let needs_sep = scenario.is_none() || scenario == Some(Scenario::S2sSep);
                let sep = if needs_sep {
                    Some(ctx.load_separator()?)
                } else {
                    None
                };
                if scenario.is_none() {
                    print_records(&ctx.evaluate_separator(sep.as_ref().expect("loaded"))?);
                    return Ok(());
                }
                let scenario = scenario.expect("checked");
                let kinds = match model {
                    Some(k) => vec![k],
                    None => cfg.run.models.clone(),
                };
                let (_, test_in) = ctx.scenario_inputs(scenario, sep.as_ref())?;
                for kind in kinds {
                    let m = ctx.load_classifier(scenario, kind)?;
                    print_records(&ctx.evaluate_classifier(scenario, &m, &test_in)?);
                }
                Ok(())
            })?;
        }
        Cmd::RunAll {
            config,
            seed,
            jobs,
            max_folds,
            out,
            sequential,
        } => {
            let mut cfg = load_config(&config, seed)?;
            if let Some(j) = jobs {
                cfg.run.jobs = j;
            }
            if let Some(m) = max_folds {
                cfg.run.max_folds = m;
            }
            if let Some(o) = out {
                cfg.run.out_dir = o;
            }
            if sequential {
                cfg.run.exec = Exec::Sequential;
            }
            cfg.validate()?;
            let outcome = run_all(&cfg)?;
            let report = std::fs::read_to_string(outcome.out_dir.join(run::REPORT_FILE))?;
            print!("{report}");
            println!(
                "reports in {} ({:.1}s)",
                outcome.out_dir.display(),
                outcome.seconds
            );
        }
        Cmd::Report { dir } => {
            let names = resep::data::prep::read_class_names(&dir)?;
            print!("{}", run::report_dir(&dir, names.as_deref())?);
        }
    }
    Ok(())
}

/// Exit code for the first library error in the chain.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<resep::Error>() {
            return match e {
                resep::Error::MissingFile(_) => EXIT_MISSING_FILE,
                resep::Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => {
                    EXIT_MISSING_FILE
                }
                resep::Error::Config(_) | resep::Error::DayCount(_) => EXIT_CONFIG,
                _ => EXIT_OTHER,
            };
        }
        if let Some(io) = cause.downcast_ref::<std::io::Error>() {
            if io.kind() == std::io::ErrorKind::NotFound {
                return EXIT_MISSING_FILE;
            }
        }
    }
    EXIT_OTHER
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
