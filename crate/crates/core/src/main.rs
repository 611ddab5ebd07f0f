use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spinecho::geometry::CouplingScale;
use spinecho::quantum::EnvInteraction;
use spinecho::runner::{run, validate, AlphaMode, Experiment, GridSpec, RunConfig, RunError};

#[derive(Parser)]
#[command(name = "spinecho", version, about = "Central-spin echo and scrambling simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Coupling constants and connected-group sizes.
    Couplings(Overrides),
    /// Correlation-order spectra and Hamming weight spread.
    Mcd(Overrides),
    /// OTOC surface, fits and scrambling immunity factors.
    Otoc(Overrides),
    /// Coin-game overlaps and swap immunity factors.
    Coingame(Overrides),
    /// Level-spacing statistics of the environment Hamiltonian.
    Chaos(Overrides),
    /// Check a configuration without running it.
    Validate(Overrides),
    /// Run the experiment named by --experiment or the config file.
    Run(Overrides),
}

#[derive(Args, Clone, Default)]
struct Overrides {
    /// TOML configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    experiment: Option<Experiment>,
    /// Output directory.
    #[arg(long, env = "SPINECHO_OUT")]
    out: Option<PathBuf>,
    /// `model` or a path to a `label x y z` geometry file.
    #[arg(long)]
    geometry: Option<String>,
    /// Index of the central site in the geometry file.
    #[arg(long)]
    central: Option<usize>,
    /// Environment size (coin count for coingame).
    #[arg(long = "N")]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    orientations: Option<usize>,
    /// Fixed field direction `x,y,z`.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    field: Option<Vec<f64>>,
    #[arg(long)]
    t_start: Option<f64>,
    #[arg(long)]
    t_stop: Option<f64>,
    #[arg(long)]
    t_count: Option<usize>,
    /// Comma-separated τ values.
    #[arg(long, value_delimiter = ',')]
    tau: Option<Vec<f64>>,
    #[arg(long)]
    phase_points: Option<usize>,
    /// Constant toggling-frame scaling α.
    #[arg(long)]
    alpha: Option<f64>,
    /// Dimensionless heteronuclear scale (requires --homo-scale).
    #[arg(long, requires = "homo_scale")]
    hetero_scale: Option<f64>,
    #[arg(long, requires = "hetero_scale")]
    homo_scale: Option<f64>,
    /// Use the ZZ-only environment.
    #[arg(long)]
    ising: bool,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
}

impl Overrides {
    fn config(&self, experiment: Option<Experiment>) -> Result<RunConfig, RunError> {
        let mut c = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        if let Some(e) = experiment.or(self.experiment) {
            c.experiment = Some(e);
        }
        if let Some(v) = &self.out {
            c.output_dir = Some(v.clone());
        }
        if let Some(v) = &self.geometry {
            c.geometry = v.clone();
        }
        if let Some(v) = self.central {
            c.central = v;
        }
        if let Some(n) = self.n {
            if c.experiment == Some(Experiment::Coingame) {
                c.coin.n = n;
                c.coin.ks.retain(|&k| k <= n);
            } else {
                c.n_env = Some(n);
            }
        }
        if let Some(v) = self.seed {
            c.seed = Some(v);
        }
        if let Some(v) = self.orientations {
            c.n_orientations = v;
        }
        if let Some(v) = &self.field {
            c.field = Some([v[0], v[1], v[2]]);
        }
        let GridSpec { start, stop, count } = c.t_grid.clone();
        c.t_grid = GridSpec {
            start: self.t_start.unwrap_or(start),
            stop: self.t_stop.unwrap_or(stop),
            count: self.t_count.unwrap_or(count),
        };
        if let Some(v) = &self.tau {
            c.tau = v.clone();
        }
        if let Some(v) = self.phase_points {
            c.phase_points = v;
        }
        if let Some(alpha) = self.alpha {
            c.alpha = AlphaMode::Scaled { alpha };
        }
        if let (Some(hetero), Some(homo)) = (self.hetero_scale, self.homo_scale) {
            c.scale = Some(CouplingScale::Dimensionless { hetero, homo });
        }
        if self.ising {
            c.interaction = EnvInteraction::IsingOnly;
        }
        if let Some(v) = self.trials {
            c.coin.trials = v;
        }
        if let Some(v) = self.threads {
            c.threads = Some(v);
        }
        Ok(c)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (overrides, experiment, dry) = match cli.command {
        Command::Couplings(o) => (o, Some(Experiment::Couplings), false),
        Command::Mcd(o) => (o, Some(Experiment::Mcd), false),
        Command::Otoc(o) => (o, Some(Experiment::Otoc), false),
        Command::Coingame(o) => (o, Some(Experiment::Coingame), false),
        Command::Chaos(o) => (o, Some(Experiment::Chaos), false),
        Command::Validate(o) => (o, None, true),
        Command::Run(o) => (o, None, false),
    };
    let config = match overrides.config(experiment) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.code as u8);
        }
    };
    if dry {
        let report = validate(&config);
        println!("{}", report.summary());
        return ExitCode::from(report.exit_code() as u8);
    }
    match run(&config) {
        Ok(manifest) => {
            let dir = config.output_dir.clone().unwrap_or_else(|| PathBuf::from("spinecho-out"));
            println!("wrote {} files to {}", manifest.outputs.len() + 1, dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
