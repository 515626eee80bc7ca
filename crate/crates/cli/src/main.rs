use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use subspace_gd::config::{Experiment, ExperimentConfig, Scale};
use subspace_gd::plot::{emit_plot, PlotStyle};
use subspace_gd::{csvio, runner, theory, CliError, Result};

#[derive(Parser)]
#[command(
    name = "subspace-gd",
    version,
    about = "Seeded gradient-descent experiments on low-dimensional inverse problems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment sweep and write CSVs.
    Run {
        /// Config file, or a preset name such as `depth-sweep`.
        config: String,
        /// Override one key, e.g. `--set T=500`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, default_value = "desk")]
        scale: String,
        /// Output directory (overrides `output_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; 0 uses all cores.
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// Print theory-prescribed hyperparameters and the phase-one bound.
    Theory {
        config: String,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, default_value = "desk")]
        scale: String,
    },
    /// Render a CSV as an SVG line plot.
    Plot {
        csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Linear instead of logarithmic y axis.
        #[arg(long)]
        linear: bool,
        /// Draw a vertical marker at this x value.
        #[arg(long)]
        marker: Option<f64>,
    },
    /// Median/std across run CSVs matching a glob, written to stdout or `--out`.
    Aggregate {
        pattern: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(source: &str, overrides: &[String], scale: &str) -> Result<ExperimentConfig> {
    let scale: Scale = scale.parse()?;
    let mut cfg = match source.parse::<Experiment>() {
        Ok(e) => ExperimentConfig::preset(e, scale),
        Err(_) => {
            let text = std::fs::read_to_string(source)
                .map_err(|e| CliError::Config(format!("cannot read config '{source}': {e}")))?;
            ExperimentConfig::parse(&text, scale)?
        }
    };
    runner::apply_seed_env(&mut cfg)?;
    for o in overrides {
        let (k, v) =
            o.split_once('=').ok_or_else(|| CliError::Config(format!("--set expects key=value, got '{o}'")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run { config, overrides, scale, out, threads } => {
            let mut cfg = load_config(&config, &overrides, &scale)?;
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            let summary = runner::run(&cfg, threads)?;
            let diverged = summary
                .outcomes
                .iter()
                .filter(|o| o.status() != subspace_gd_core::trainer::RunStatus::Completed)
                .count();
            println!(
                "{}: {} runs ({} diverged), config {} -> {}",
                cfg.experiment.as_str(),
                summary.outcomes.len(),
                diverged,
                summary.config_hash,
                summary.root.display()
            );
            if summary.all_diverged() {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Theory { config, overrides, scale } => {
            let cfg = load_config(&config, &overrides, &scale)?;
            print!("{}", theory::render(&cfg, &theory::theory(&cfg)?));
        }
        Command::Plot { csv, out, linear, marker } => {
            let style = PlotStyle { log_y: !linear, marker, ..PlotStyle::default() };
            emit_plot(&csv, &out, &style)?;
        }
        Command::Aggregate { pattern, out } => {
            let paths: Vec<PathBuf> = glob::glob(&pattern)
                .map_err(|e| CliError::Config(format!("bad glob '{pattern}': {e}")))?
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| CliError::Io(e.into()))?;
            if paths.is_empty() {
                return Err(CliError::Data(format!("no files match '{pattern}'")));
            }
            let table = csvio::aggregate_files(&paths)?;
            match out {
                Some(p) => table.write(&p)?,
                None => table.write_to(&mut csv::Writer::from_writer(std::io::stdout()))?,
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
