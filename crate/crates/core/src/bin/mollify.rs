use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mollify::lab::{
    cmd_cover_check, cmd_curvature, cmd_deviation, cmd_lemmas, cmd_norms, write_atomic,
    ExperimentConfig, Outcome,
};
use mollify::Result;

#[derive(Parser)]
#[command(
    name = "mollify",
    version,
    about = "Chart-wise metric mollification lab"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-node curvature of the sampled metric, and of g^[t] with --t.
    Curvature(Options),
    /// Deviation of the mollified curvature over a scale sweep.
    Deviation(Options),
    /// Chart norms of one chart.
    Norms(Options),
    /// Inequality checks over the seeded test family.
    Lemmas(Options),
    /// Cover and partition-of-unity checks for an atlas.
    CoverCheck(Options),
}

#[derive(Args)]
struct Options {
    /// Model geometry, e.g. `sphere:R=1` or `perturbed-flat:a=0.3`.
    #[arg(long)]
    geometry: Option<String>,
    /// Atlas description file used instead of --geometry.
    #[arg(long)]
    atlas: Option<PathBuf>,
    /// Lattice points per axis.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    t: Option<f64>,
    #[arg(long)]
    t_min: Option<f64>,
    #[arg(long)]
    t_max: Option<f64>,
    #[arg(long)]
    t_count: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// One of holder, prop, thm.
    #[arg(long)]
    beta_window: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    chart: Option<String>,
    /// Bump plateau as a fraction of the chart radius, or `chart-norm`.
    #[arg(long)]
    plateau: Option<String>,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `key = value` file applied after the flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl Options {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        let mut flags: Vec<(&str, String)> = Vec::new();
        let mut push = |k: &'static str, v: Option<String>| {
            if let Some(v) = v {
                flags.push((k, v));
            }
        };
        push("geometry", self.geometry.clone());
        push(
            "atlas",
            self.atlas.as_ref().map(|p| p.display().to_string()),
        );
        push("m", self.m.map(|v| v.to_string()));
        push("t", self.t.map(|v| v.to_string()));
        push("t_min", self.t_min.map(|v| v.to_string()));
        push("t_max", self.t_max.map(|v| v.to_string()));
        push("t_count", self.t_count.map(|v| v.to_string()));
        push("alpha", self.alpha.map(|v| v.to_string()));
        push("p", self.p.map(|v| v.to_string()));
        push("beta", self.beta.map(|v| v.to_string()));
        push("beta_window", self.beta_window.clone());
        push("seed", self.seed.map(|v| v.to_string()));
        push("chart", self.chart.clone());
        push("plateau", self.plateau.clone());
        push("out", self.out.as_ref().map(|p| p.display().to_string()));
        for (k, v) in flags {
            cfg.set(k, &v).map_err(mollify::Error::Config)?;
        }
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(Outcome, ExperimentConfig)> {
    let (opts, cmd): (&Options, fn(&ExperimentConfig) -> Result<Outcome>) = match &cli.command {
        Command::Curvature(o) => (o, cmd_curvature),
        Command::Deviation(o) => (o, cmd_deviation),
        Command::Norms(o) => (o, cmd_norms),
        Command::Lemmas(o) => (o, cmd_lemmas),
        Command::CoverCheck(o) => (o, cmd_cover_check),
    };
    let cfg = opts.config()?;
    let outcome = cmd(&cfg)?;
    Ok((outcome, cfg))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok((outcome, cfg)) => {
            let stdout = std::io::stdout();
            let mut out = stdout.lock();
            if let Some(table) = &outcome.table {
                let csv = table.to_csv();
                match &cfg.out {
                    Some(path) => {
                        if let Err(e) = write_atomic(path, &csv) {
                            eprintln!("error: {e}");
                            return ExitCode::from(2);
                        }
                    }
                    None => {
                        let _ = out.write_all(csv.as_bytes());
                    }
                }
            }
            if cfg.out.is_some() || outcome.table.is_none() {
                let _ = out.write_all(outcome.summary.as_bytes());
            } else {
                eprint!("{}", outcome.summary);
            }
            if outcome.violation {
                ExitCode::from(3)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 1 } else { 2 })
        }
    }
}
