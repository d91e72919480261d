use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fraclod::harness::{
    emit, oracle_report, run_convergence, run_decay, run_oracle, run_solve, run_truncation, Study, StudyConfig,
};
use fraclod::Error;

#[derive(Parser)]
#[command(name = "fraclod", version, about = "Multiscale solver for heterogeneous fractional diffusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Multiscale error against the fine solution over coarse mesh sizes
    Converge(Options),
    /// Corrector localization error over patch layers
    Decay(Options),
    /// Truncation error over cylinder heights
    Truncate(Options),
    /// Fine solution against the spectral solution (constant coefficient)
    Oracle(Options),
    /// Single multiscale solve, optionally dumping nodal values
    Solve(Options),
}

#[derive(Args)]
struct Options {
    /// Configuration file with `key = value` lines
    #[arg(long)]
    config: Option<PathBuf>,
    /// CSV output path (standard output if absent)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fractional orders, comma separated
    #[arg(long = "s")]
    s: Option<String>,
    /// Coarse mesh sizes, comma separated (e.g. 2^-1,2^-2)
    #[arg(long = "H-list")]
    coarse: Option<String>,
    /// Fine mesh size
    #[arg(long = "h")]
    fine: Option<String>,
    /// Patch layers, or `full`
    #[arg(long)]
    k: Option<String>,
    /// Cylinder height, or `auto`
    #[arg(long = "T")]
    height: Option<String>,
    /// Spatial dimension (1 or 2)
    #[arg(long)]
    d: Option<String>,
    /// constant:<v>, raster:<path> or logrand:<contrast>:<seed>
    #[arg(long)]
    coeff: Option<String>,
    /// local or global
    #[arg(long = "boundary-mode")]
    boundary_mode: Option<String>,
    /// Seed of a generated coefficient
    #[arg(long)]
    seed: Option<String>,
    /// Further `key=value` settings
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Options {
    fn config(&self) -> fraclod::Result<StudyConfig> {
        let mut cfg = match &self.config {
            Some(p) => StudyConfig::from_file(p)?,
            None => StudyConfig::default(),
        };
        let flags = [
            ("s", &self.s),
            ("H", &self.coarse),
            ("h", &self.fine),
            ("k", &self.k),
            ("T", &self.height),
            ("d", &self.d),
            ("coeff", &self.coeff),
            ("boundary_mode", &self.boundary_mode),
            ("seed", &self.seed),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        for kv in &self.set {
            let (key, value) = kv.split_once('=').ok_or_else(|| Error::Config(format!("expected KEY=VALUE, got `{kv}`")))?;
            cfg.set(key.trim(), value.trim())?;
        }
        if let Some(out) = &self.out {
            cfg.out = Some(out.clone());
        }
        Ok(cfg)
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Load { .. } | Error::Domain(_) => 2,
        _ => 3,
    }
}

fn run(study: Study, opts: &Options) -> Result<(), (u8, Error)> {
    let cfg = opts.config().map_err(|e| (2, e))?;
    cfg.validate(study).map_err(|e| (2, e))?;
    let result = match study {
        Study::Converge => run_convergence(&cfg),
        Study::Decay => run_decay(&cfg),
        Study::Truncate => run_truncation(&cfg),
        Study::Solve => run_solve(&cfg),
        Study::Oracle => run_oracle(&cfg).map(|(rows, results)| {
            eprint!("{}", oracle_report(&results));
            rows
        }),
    };
    let rows = result.map_err(|e| (exit_code(&e), e))?;
    emit(&cfg, &rows).map_err(|e| (3, e))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (study, opts) = match &cli.command {
        Command::Converge(o) => (Study::Converge, o),
        Command::Decay(o) => (Study::Decay, o),
        Command::Truncate(o) => (Study::Truncate, o),
        Command::Oracle(o) => (Study::Oracle, o),
        Command::Solve(o) => (Study::Solve, o),
    };
    match run(study, opts) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, e)) => {
            eprintln!("error: {e}");
            ExitCode::from(code)
        }
    }
}
