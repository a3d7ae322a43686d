use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use leds::bench::report::{render, ReportFormat};
use leds::bench::{
    run_experiment, sweep_breakdown, sweep_dataset_size, sweep_working_set, Kernel, Layout, Model, Pattern,
    WorkloadConfig, RATIOS, SIZES,
};
use leds::{Error, Result};
use serde::Deserialize;

#[derive(Parser)]
#[command(name = "ledsbench", version, about = "Schema retention benchmark for persistent key-value maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run(Flags),
    /// Run a series of experiments.
    Sweep {
        #[arg(value_enum)]
        series: Series,
        /// Comma-separated sizes for the size series.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        /// Comma-separated ratios for the ratio series.
        #[arg(long, value_delimiter = ',')]
        ratios: Option<Vec<f64>>,
        #[command(flatten)]
        flags: Flags,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Series {
    Size,
    Ratio,
    Breakdown,
}

/// Experiment flags. A TOML config file uses the same names (with
/// underscores); flags given on the command line win.
#[derive(Args, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct Flags {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    kernel: Option<Kernel>,
    #[arg(long, value_enum)]
    pattern: Option<Pattern>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    layout: Option<Layout>,
    #[arg(long, value_enum)]
    model: Option<Model>,
    #[arg(long)]
    trials: Option<u32>,
    /// Scratch directory for pool files.
    #[arg(long)]
    pool: Option<PathBuf>,
    #[arg(long, value_enum)]
    report: Option<ReportFormat>,
    /// Report path; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long)]
    cache_translations: bool,
    #[arg(long)]
    shallow_copy: bool,
    /// Add the differential overhead breakdown (automatic model).
    #[arg(long)]
    breakdown: bool,
}

impl Flags {
    fn resolve(self) -> Result<(WorkloadConfig, ReportFormat, Option<PathBuf>)> {
        let file = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
                toml::from_str::<Flags>(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
            None => Flags::default(),
        };
        let d = WorkloadConfig::default();
        let cfg = WorkloadConfig {
            kernel: self.kernel.or(file.kernel).unwrap_or(d.kernel),
            pattern: self.pattern.or(file.pattern).unwrap_or(d.pattern),
            n: self.n.or(file.n).unwrap_or(d.n),
            seed: self.seed.or(file.seed).unwrap_or(d.seed),
            layout: self.layout.or(file.layout).unwrap_or(d.layout),
            model: self.model.or(file.model).unwrap_or(d.model),
            trials: self.trials.or(file.trials).unwrap_or(d.trials),
            ratio: self.ratio.or(file.ratio).unwrap_or(d.ratio),
            cache_translations: self.cache_translations || file.cache_translations,
            shallow_copy: self.shallow_copy || file.shallow_copy,
            breakdown: self.breakdown || file.breakdown,
            pool: self.pool.or(file.pool),
        };
        cfg.validate()?;
        Ok((cfg, self.report.or(file.report).unwrap_or(ReportFormat::Json), self.out.or(file.out)))
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("ledsbench: a trial failed validation; the report is marked invalid");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("ledsbench: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    let (reports, format, out) = match cli.command {
        Command::Run(flags) => {
            let (cfg, format, out) = flags.resolve()?;
            (vec![run_experiment(&cfg)?], format, out)
        }
        Command::Sweep { series, sizes, ratios, flags } => {
            let (cfg, format, out) = flags.resolve()?;
            let reports = match series {
                Series::Size => sweep_dataset_size(&cfg, sizes.as_deref().unwrap_or(&SIZES))?,
                Series::Ratio => sweep_working_set(&cfg, ratios.as_deref().unwrap_or(&RATIOS))?,
                Series::Breakdown => sweep_breakdown(&cfg)?,
            };
            (reports, format, out)
        }
    };
    let text = render(&reports, format);
    match out {
        Some(path) => std::fs::write(&path, text).map_err(|e| Error::Io { path, source: e })?,
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Error::Io { path: "<stdout>".into(), source: e })?,
    }
    Ok(reports.iter().all(|r| r.valid))
}
