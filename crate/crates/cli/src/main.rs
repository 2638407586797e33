//! `shot`: entropic optimal transport between fields on the sphere.
//!
//! Exit codes: 0 on success, 2 when a Sinkhorn solve ran out of iterations,
//! 1 on any error (reported as JSON on stderr).

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use shot_core::io::{parse_tau, RunConfig};
use shot_core::{Result, ShotError};

#[derive(Parser, Debug)]
#[command(name = "shot", version, about = "Spherical heat-kernel Sinkhorn transport")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every command. They override values from `--config`.
#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// Entropic regularization ε.
    #[arg(long, global = true)]
    eps: Option<f64>,
    /// Marginal relaxation τ, a positive number or `inf`.
    #[arg(long, global = true)]
    tau: Option<String>,
    #[arg(long, global = true)]
    max_iter: Option<usize>,
    /// Convergence threshold on the marginal error.
    #[arg(long, global = true)]
    tol: Option<f64>,
    #[arg(long, global = true)]
    check_every: Option<usize>,
    /// Grid band limit L; must match input files when given.
    #[arg(long, global = true)]
    band_limit: Option<usize>,
    /// Fail instead of clamping nonpositive convolution outputs.
    #[arg(long, global = true)]
    strict_negativity: bool,
    /// Disable the ε stability and underflow guards.
    #[arg(long, global = true)]
    unsafe_eps: bool,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file; standard output when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Also write the output field as CSV to this path.
    #[arg(long, global = true)]
    csv: Option<PathBuf>,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

impl Common {
    fn run_config(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::from_json(&std::fs::read_to_string(path)?)?,
            None => RunConfig::default(),
        };
        if let Some(x) = self.eps {
            c.eps = x;
        }
        if let Some(t) = &self.tau {
            c.tau = parse_tau(t)?;
        }
        if let Some(x) = self.max_iter {
            c.max_iter = x;
        }
        if let Some(x) = self.tol {
            c.tol = x;
        }
        if let Some(x) = self.check_every {
            c.check_every = x;
        }
        if self.band_limit.is_some() {
            c.band_limit = self.band_limit;
        }
        c.strict_negativity |= self.strict_negativity;
        c.unsafe_eps |= self.unsafe_eps;
        if let Some(x) = self.seed {
            c.seed = x;
        }
        Ok(c)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Debiased Sinkhorn divergence between two field files.
    Divergence { p: PathBuf, q: PathBuf },
    /// Heat convolution for time `t`.
    Convolve {
        input: PathBuf,
        #[arg(long = "time", short = 't')]
        t: f64,
    },
    /// Forward (field to coefficients) or inverse harmonic transform.
    Transform {
        input: PathBuf,
        #[arg(long, value_enum)]
        direction: Direction,
    },
    /// Centered divergence gradient with respect to `p`, and its regional RMS.
    Gradient {
        p: PathBuf,
        q: PathBuf,
        /// Latitude band `NAME:LO:HI` in degrees; repeatable. Defaults to
        /// Tropics, ITCZ, both midlatitude belts and the Arctic.
        #[arg(long = "band")]
        bands: Vec<String>,
    },
    /// Timing table (CSV) over band limits and methods.
    Benchmark {
        /// Comma-separated band limits.
        #[arg(long, value_delimiter = ',', default_value = "16,32,64")]
        l_list: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "spectral,dense")]
        methods: Vec<Method>,
    },
    /// Synthetic field.
    Generate {
        #[command(subcommand)]
        kind: GenerateKind,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Spectral,
    Dense,
}

#[derive(Subcommand, Debug, Clone)]
pub enum GenerateKind {
    /// Uniform random density with unit mass, seeded by `--seed`.
    Uniform,
    /// von Mises–Fisher bump with unit mass.
    Vmf {
        #[arg(long)]
        kappa: f64,
        /// Latitude of the mean direction, degrees.
        #[arg(long, allow_hyphen_values = true)]
        lat: f64,
        /// Longitude of the mean direction, degrees.
        #[arg(long, allow_hyphen_values = true)]
        lon: f64,
        /// Constant added before normalization.
        #[arg(long, default_value_t = 0.0)]
        background: f64,
    },
}

fn report(err: &ShotError) {
    let body = serde_json::json!({
        "error": { "code": err.code(), "message": err.to_string() }
    });
    eprintln!("{body}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let body = serde_json::json!({
                "error": { "code": "usage", "message": e.to_string() }
            });
            eprintln!("{body}");
            return ExitCode::from(1);
        }
    };
    let result = cli
        .common
        .run_config()
        .and_then(|config| commands::run(&cli.command, &cli.common, &config));
    match result {
        Ok(commands::Outcome::Converged) => ExitCode::SUCCESS,
        Ok(commands::Outcome::Unconverged) => ExitCode::from(2),
        Err(e) => {
            report(&e);
            ExitCode::from(1)
        }
    }
}
