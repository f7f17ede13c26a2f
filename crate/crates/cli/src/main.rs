use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use cpn_thermal_cli::{run, CliError, RunConfig};

/// Thermalisation studies on complex projective state space.
///
/// Settings come from `--config` (lines of `key = value`) and are overridden
/// by flags. Exit codes: 0 success, 2 invalid configuration, 1 runtime failure.
#[derive(Parser, Debug)]
#[command(name = "cpn-thermal", version)]
struct Args {
    /// simulate | equilibrium | fp | verify-liouville | sample
    #[arg(long)]
    mode: Option<String>,
    /// Config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Diagonal Hamiltonian, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    spectrum: Option<String>,
    #[arg(long)]
    beta: Option<String>,
    /// Inverse temperatures for mode equilibrium, comma separated.
    #[arg(long)]
    beta_grid: Option<String>,
    #[arg(long)]
    kappa: Option<String>,
    /// Level splitting for mode fp (H = diag(h, -h)).
    #[arg(long, allow_hyphen_values = true)]
    h: Option<String>,
    #[arg(long)]
    dt: Option<String>,
    #[arg(long)]
    steps: Option<String>,
    #[arg(long)]
    t_max: Option<String>,
    /// Number of trajectories.
    #[arg(long)]
    ensemble: Option<String>,
    #[arg(long)]
    record_stride: Option<String>,
    /// Number of cells for mode fp.
    #[arg(long)]
    grid: Option<String>,
    /// Monte Carlo samples for mode sample.
    #[arg(long)]
    samples: Option<String>,
    #[arg(long)]
    initial: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    center: Option<String>,
    #[arg(long)]
    width: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// csv | json
    #[arg(long)]
    format: Option<String>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads. Outputs do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

impl Args {
    fn overrides(&self) -> Vec<(String, String)> {
        let pairs = [
            ("mode", &self.mode),
            ("spectrum", &self.spectrum),
            ("beta", &self.beta),
            ("beta_grid", &self.beta_grid),
            ("kappa", &self.kappa),
            ("h", &self.h),
            ("dt", &self.dt),
            ("steps", &self.steps),
            ("t_max", &self.t_max),
            ("ensemble", &self.ensemble),
            ("record_stride", &self.record_stride),
            ("grid", &self.grid),
            ("samples", &self.samples),
            ("initial", &self.initial),
            ("center", &self.center),
            ("width", &self.width),
            ("seed", &self.seed),
            ("format", &self.format),
        ];
        pairs
            .into_iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
            .collect()
    }
}

fn main_inner(args: Args) -> Result<(), CliError> {
    let text = match &args.config {
        Some(path) => std::fs::read_to_string(path)
            .map_err(|e| CliError::validation(format!("cannot read {}: {e}", path.display())))?,
        None => String::new(),
    };
    let mut config = RunConfig::parse(&text, args.overrides())?;
    config.out = args.out.clone();
    if args.threads == Some(0) {
        return Err(CliError::validation("`threads` must be positive"));
    }
    run(&config, args.threads)
}

fn main() -> ExitCode {
    match main_inner(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cpn-thermal: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
