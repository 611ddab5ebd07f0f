//! Run configuration, experiment pipelines and output files.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::Vector3;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    early_window, fit_exponential, fit_gaussian, level_spacings, reparameterize_otoc, scrambling_immunity_factor,
    wigner_surmise, EarlyWindow, FitResult, SpacingHistogram, SpreadCurve,
};
use crate::coin::{coin_monte_carlo, swap_immunity_factor, CoinParams};
use crate::error::Error;
use crate::geometry::{
    connected_group_size, content_hash, couplings_for, sample_orientations, CouplingScale, EnsembleSpec, Geometry,
    Orientation,
};
use crate::mcd::{ensemble_mcd_over, PhaseGrid};
use crate::otoc::{ensemble_otoc_over, Normalization};
use crate::quantum::{environment_operator, EnvInteraction, TogglingMode, TogglingParams, DEFAULT_ORACLE_CAP};

pub const REDUCTION_TOLERANCE: f64 = 1e-10;
/// Dense matrices a worker holds at once in the memory estimate.
pub const DENSE_MATRICES_PER_WORKER: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Couplings,
    Mcd,
    Otoc,
    Coingame,
    Chaos,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Couplings => "couplings",
            Experiment::Mcd => "mcd",
            Experiment::Otoc => "otoc",
            Experiment::Coingame => "coingame",
            Experiment::Chaos => "chaos",
        }
    }

    /// Environment size used when the configuration does not set one.
    fn default_n_env(self) -> Option<usize> {
        match self {
            Experiment::Otoc => Some(8),
            Experiment::Chaos => Some(10),
            _ => None,
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "couplings" => Ok(Experiment::Couplings),
            "mcd" => Ok(Experiment::Mcd),
            "otoc" => Ok(Experiment::Otoc),
            "coingame" => Ok(Experiment::Coingame),
            "chaos" => Ok(Experiment::Chaos),
            _ => Err(format!("unknown experiment `{s}`")),
        }
    }
}

/// `count` evenly spaced points from `start` to `stop` inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { start: 0.0, stop: 400.0, count: 41 }
    }
}

impl GridSpec {
    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.start];
        }
        let step = (self.stop - self.start) / (self.count - 1) as f64;
        (0..self.count).map(|i| self.start + step * i as f64).collect()
    }

    fn problems(&self) -> Option<String> {
        if self.count == 0 {
            Some("T grid is empty (count = 0)".into())
        } else if !(self.start.is_finite() && self.stop.is_finite()) || self.start < 0.0 {
            Some("T grid bounds must be finite and start >= 0".into())
        } else if self.count > 1 && self.stop <= self.start {
            Some("T grid must be increasing (stop > start)".into())
        } else {
            None
        }
    }
}

/// Toggling-frame setting; pulse times are in the configured time unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum AlphaMode {
    #[default]
    Ideal,
    Scaled {
        alpha: f64,
    },
    Mrev8 {
        t_p: f64,
        tau_c: f64,
    },
    FullToggling {
        t_p: f64,
        tau_c: f64,
    },
}

impl AlphaMode {
    pub fn toggling(&self, time_unit: f64) -> crate::Result<TogglingParams> {
        match *self {
            AlphaMode::Ideal => Ok(TogglingParams::ideal()),
            AlphaMode::Scaled { alpha } => TogglingParams::scaled(alpha),
            AlphaMode::Mrev8 { t_p, tau_c } => TogglingParams::mrev8(t_p * time_unit, tau_c * time_unit),
            AlphaMode::FullToggling { t_p, tau_c } => TogglingParams::full_toggling(t_p * time_unit, tau_c * time_unit),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoinConfig {
    pub n: usize,
    pub ks: Vec<usize>,
    pub ms: Vec<usize>,
    pub trials: usize,
}

impl Default for CoinConfig {
    fn default() -> Self {
        Self { n: 15, ks: (1..=8).collect(), ms: (0..=10).collect(), trials: 100_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChaosConfig {
    /// Total environment magnetization; defaults to the central sector.
    pub magnetization: Option<i32>,
    /// Also analyse the ZZ-only environment.
    pub ising_reference: bool,
    pub bins: usize,
    pub max_spacing: f64,
}

impl Default for ChaosConfig {
    fn default() -> Self {
        Self { magnetization: None, ising_reference: true, bins: 30, max_spacing: 3.0 }
    }
}

fn default_geometry() -> String {
    "model".into()
}

fn default_orientations() -> usize {
    1
}

fn default_tau() -> Vec<f64> {
    vec![0.0, 8.0, 16.0, 24.0, 32.0, 48.0, 64.0, 96.0]
}

fn default_phase_points() -> usize {
    64
}

fn default_cap() -> usize {
    DEFAULT_ORACLE_CAP
}

fn default_budget() -> f64 {
    4096.0
}

/// Complete description of one run. Times (T grid, τ, pulse lengths) are in
/// `time_unit` seconds, which defaults to 1 µs for physical couplings and 1
/// for dimensionless ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Option<Experiment>,
    /// `model` or a path to a `label x y z` file.
    #[serde(default = "default_geometry")]
    pub geometry: String,
    #[serde(default)]
    pub central: usize,
    pub n_env: Option<usize>,
    pub seed: Option<u64>,
    #[serde(default = "default_orientations")]
    pub n_orientations: usize,
    /// Fixed field direction; replaces the random ensemble by one orientation.
    pub field: Option<[f64; 3]>,
    pub scale: Option<CouplingScale>,
    pub time_unit: Option<f64>,
    #[serde(default)]
    pub t_grid: GridSpec,
    #[serde(default = "default_tau")]
    pub tau: Vec<f64>,
    #[serde(default = "default_phase_points")]
    pub phase_points: usize,
    #[serde(default)]
    pub alpha: AlphaMode,
    #[serde(default = "dipolar")]
    pub interaction: EnvInteraction,
    #[serde(default = "pointwise")]
    pub normalization: Normalization,
    #[serde(default)]
    pub early_window: EarlyWindow,
    #[serde(default)]
    pub coin: CoinConfig,
    #[serde(default)]
    pub chaos: ChaosConfig,
    pub output_dir: Option<PathBuf>,
    pub threads: Option<usize>,
    #[serde(default = "default_cap")]
    pub oracle_cap: usize,
    #[serde(default = "default_budget")]
    pub memory_budget_mb: f64,
}

fn dipolar() -> EnvInteraction {
    EnvInteraction::Dipolar
}

fn pointwise() -> Normalization {
    Normalization::Pointwise
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("").expect("all fields have defaults")
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, RunError> {
        toml::from_str(text).map_err(|e| RunError::schema(format!("config: {}", e.message())))
    }

    pub fn from_file(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RunError::schema(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    fn scale(&self) -> CouplingScale {
        self.scale.unwrap_or_else(CouplingScale::phosphorus_proton)
    }

    pub fn resolved_time_unit(&self) -> f64 {
        self.time_unit.unwrap_or(match self.scale() {
            CouplingScale::Physical { .. } => 1e-6,
            CouplingScale::Dimensionless { .. } => 1.0,
        })
    }

    fn experiment(&self) -> Result<Experiment, RunError> {
        self.experiment.ok_or_else(|| RunError::schema("experiment not set"))
    }

    fn n_env_request(&self) -> Option<usize> {
        self.n_env.or_else(|| self.experiment.and_then(Experiment::default_n_env))
    }

    /// Geometry (after the N override) and the hash of its source bytes.
    pub fn load_geometry(&self) -> Result<(Geometry, String), RunError> {
        let scale = self.scale();
        let (geom, hash) = if self.geometry == "model" {
            let g = Geometry::parse(Geometry::model_source(), self.central, scale)?;
            (g, content_hash(Geometry::model_source().as_bytes()))
        } else {
            let bytes = std::fs::read(&self.geometry)
                .map_err(|e| RunError::schema(format!("cannot read geometry {}: {e}", self.geometry)))?;
            let text = String::from_utf8(bytes.clone()).map_err(|_| RunError::schema("geometry file is not UTF-8"))?;
            (Geometry::parse(&text, self.central, scale)?, content_hash(&bytes))
        };
        let geom = match self.n_env_request() {
            Some(n) if n != geom.n_env() => geom.nearest(n)?,
            _ => geom,
        };
        Ok((geom, hash))
    }

    pub fn orientations(&self) -> crate::Result<Vec<Orientation>> {
        match self.field {
            Some(b) => Ok(vec![Orientation::new(Vector3::from(b))?]),
            None => Ok(sample_orientations(&EnsembleSpec::new(self.n_orientations, self.seed.unwrap_or(0))?)),
        }
    }

    fn t_values(&self) -> Vec<f64> {
        let u = self.resolved_time_unit();
        self.t_grid.values().into_iter().map(|t| t * u).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    Schema,
    Cap,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Problem {
    pub kind: ProblemKind,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub experiment: Option<Experiment>,
    pub n_env: Option<usize>,
    pub n_orientations: usize,
    pub dense_dim: Option<usize>,
    pub memory_bytes: f64,
    pub problems: Vec<Problem>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.problems.is_empty()
    }

    pub fn exit_code(&self) -> i32 {
        if self.problems.iter().any(|p| p.kind == ProblemKind::Cap) {
            3
        } else if self.ok() {
            0
        } else {
            2
        }
    }

    pub fn summary(&self) -> String {
        if self.ok() {
            format!(
                "OK: {} with N = {}, {} orientation(s), estimated memory {:.1} MiB",
                self.experiment.map_or("?", Experiment::name),
                self.n_env.map_or("-".into(), |n| n.to_string()),
                self.n_orientations,
                self.memory_bytes / 1048576.0
            )
        } else {
            self.problems.iter().map(|p| format!("{:?}: {}", p.kind, p.message)).collect::<Vec<_>>().join("\n")
        }
    }
}

fn threads(config: &RunConfig) -> usize {
    config.threads.unwrap_or_else(rayon::current_num_threads).max(1)
}

/// Dry-run check of the schema and of the dense-matrix resource needs.
pub fn validate(config: &RunConfig) -> ValidationReport {
    let mut problems = Vec::new();
    let mut schema = |m: String| problems.push(Problem { kind: ProblemKind::Schema, message: m });
    let experiment = config.experiment;
    if experiment.is_none() {
        schema("experiment not set".into());
    }
    if config.seed.is_none() {
        schema("seed missing (no clock-based default)".into());
    }
    if let Some(p) = config.t_grid.problems() {
        schema(p);
    }
    if config.tau.is_empty() {
        schema("tau grid is empty".into());
    } else if config.tau.iter().any(|t| !t.is_finite() || *t < 0.0) || config.tau.windows(2).any(|w| w[1] <= w[0]) {
        schema("tau grid must be finite, non-negative and increasing".into());
    }
    if config.n_orientations == 0 {
        schema("n_orientations must be >= 1".into());
    }
    if config.threads == Some(0) {
        schema("threads must be >= 1".into());
    }
    if let Err(e) = config.alpha.toggling(config.resolved_time_unit()) {
        schema(e.to_string());
    }
    if let Some(b) = config.field {
        if let Err(e) = Orientation::new(Vector3::from(b)) {
            schema(e.to_string());
        }
    }
    let n_orientations = if config.field.is_some() { 1 } else { config.n_orientations };

    if experiment == Some(Experiment::Coingame) {
        let c = &config.coin;
        if c.n < 2 || c.ks.iter().any(|&k| k > c.n) || c.ks.is_empty() || c.ms.is_empty() || c.trials == 0 {
            schema(format!("coin game needs N >= 2, non-empty k <= N and m lists, trials >= 1 (N = {})", c.n));
        }
        return ValidationReport {
            experiment,
            n_env: None,
            n_orientations,
            dense_dim: None,
            memory_bytes: 0.0,
            problems,
        };
    }

    let n_env = match config.load_geometry() {
        Ok((g, _)) => Some(g.n_env()),
        Err(e) => {
            problems.push(Problem { kind: ProblemKind::Schema, message: e.message });
            config.n_env_request()
        }
    };
    let mut dense_dim = None;
    let mut memory_bytes = 0.0;
    if let (Some(n), Some(exp)) = (n_env, experiment) {
        let full_toggling = matches!(config.alpha, AlphaMode::FullToggling { .. });
        let dense_sites = match exp {
            Experiment::Otoc | Experiment::Chaos => Some(n),
            Experiment::Mcd if full_toggling => Some(n + 1),
            _ => None,
        };
        if matches!(exp, Experiment::Mcd | Experiment::Otoc) && config.phase_points < 2 * n + 1 {
            problems.push(Problem {
                kind: ProblemKind::Schema,
                message: format!(
                    "phase_points = {} aliases orders up to {n} (need >= {})",
                    config.phase_points,
                    2 * n + 1
                ),
            });
        }
        if let Some(sites) = dense_sites {
            let dim = 2f64.powi(sites as i32);
            dense_dim = Some(1usize << sites.min(60));
            memory_bytes = 16.0 * dim * dim * DENSE_MATRICES_PER_WORKER * threads(config) as f64;
            if n > config.oracle_cap {
                problems.push(Problem {
                    kind: ProblemKind::Cap,
                    message: format!(
                        "N = {n} exceeds the dense-oracle cap {} (estimated memory {:.3e} bytes)",
                        config.oracle_cap, memory_bytes
                    ),
                });
            }
            if memory_bytes > config.memory_budget_mb * 1048576.0 {
                problems.push(Problem {
                    kind: ProblemKind::Cap,
                    message: format!(
                        "estimated memory {:.3e} bytes exceeds the budget of {} MiB",
                        memory_bytes, config.memory_budget_mb
                    ),
                });
            }
        }
    }
    ValidationReport { experiment, n_env, n_orientations, dense_dim, memory_bytes, problems }
}

/// Failure of a run with its process exit code.
#[derive(Debug, Clone, PartialEq)]
pub struct RunError {
    pub code: i32,
    pub message: String,
}

impl RunError {
    pub fn schema(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for RunError {}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::CapExceeded { .. } => 3,
            Error::Io(_) => 1,
            Error::SiteOutOfRange { .. }
            | Error::InvalidSystem(_)
            | Error::LengthMismatch { .. }
            | Error::InvalidToggling(_)
            | Error::InvalidGeometry(_)
            | Error::GeometryParse { .. }
            | Error::InvalidDistance(_)
            | Error::AliasingGrid { .. }
            | Error::InvalidArgument(_)
            | Error::GridMismatch(_)
            | Error::SectorTooSmall { .. }
            | Error::Config(_) => 2,
            _ => 4,
        };
        Self { code, message: e.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// Record of a completed run. Everything except `timings` is a pure
/// function of the configuration and the geometry bytes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub geometry_hash: Option<String>,
    pub version: String,
    pub threads: usize,
    pub timings: Vec<StageTiming>,
    pub outputs: Vec<String>,
    pub reduction_deviation: f64,
    pub reduction_tolerance: f64,
    pub reduction_within_tolerance: bool,
}

/// 17 significant digits, enough to round-trip any double.
pub fn format_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn new(dir: PathBuf) -> Result<Self, RunError> {
        std::fs::create_dir_all(&dir)
            .map_err(|e| RunError { code: 1, message: format!("cannot create {}: {e}", dir.display()) })?;
        Ok(Self { dir, files: Vec::new() })
    }

    fn io(e: impl fmt::Display) -> RunError {
        RunError { code: 1, message: format!("write failed: {e}") }
    }

    fn csv(
        &mut self,
        name: &str,
        header: &[&str],
        rows: impl IntoIterator<Item = Vec<String>>,
    ) -> Result<(), RunError> {
        let mut w = csv::Writer::from_path(self.dir.join(name)).map_err(Self::io)?;
        w.write_record(header).map_err(Self::io)?;
        for row in rows {
            w.write_record(&row).map_err(Self::io)?;
        }
        w.flush().map_err(Self::io)?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> Result<(), RunError> {
        let text = serde_json::to_string_pretty(value).map_err(Self::io)? + "\n";
        std::fs::write(self.dir.join(name), text).map_err(Self::io)?;
        self.files.push(name.to_string());
        Ok(())
    }
}

struct Stages(Vec<StageTiming>);

impl Stages {
    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.0.push(StageTiming { stage: stage.into(), seconds: start.elapsed().as_secs_f64() });
        out
    }
}

fn f(x: f64) -> String {
    format_float(x)
}

/// Runs the configured experiment and writes its outputs, then `manifest.json`.
pub fn run(config: &RunConfig) -> Result<RunManifest, RunError> {
    let report = validate(config);
    if !report.ok() {
        return Err(RunError { code: report.exit_code(), message: report.summary() });
    }
    let threads = threads(config);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| RunError { code: 1, message: format!("thread pool: {e}") })?;
    let dir = config.output_dir.clone().unwrap_or_else(|| PathBuf::from("spinecho-out"));
    let mut out = Outputs::new(dir)?;
    let mut stages = Stages(Vec::new());
    let experiment = config.experiment()?;
    let (deviation, geometry_hash) = pool.install(|| -> Result<(f64, Option<String>), RunError> {
        if experiment == Experiment::Coingame {
            return Ok((stages.time("coingame", || run_coingame(config, &mut out))?, None));
        }
        let (geom, hash) = stages.time("geometry", || config.load_geometry())?;
        let dev = match experiment {
            Experiment::Couplings => stages.time("couplings", || run_couplings(config, &geom, &mut out))?,
            Experiment::Mcd => stages.time("mcd", || run_mcd(config, &geom, &mut out))?,
            Experiment::Otoc => stages.time("otoc", || run_otoc(config, &geom, &mut out))?,
            Experiment::Chaos => stages.time("chaos", || run_chaos(config, &geom, &mut out))?,
            Experiment::Coingame => unreachable!(),
        };
        Ok((dev, Some(hash)))
    })?;
    let mut echo = config.clone();
    echo.time_unit = Some(config.resolved_time_unit());
    echo.scale = Some(config.scale());
    echo.n_env = config.n_env_request();
    let manifest = RunManifest {
        config: echo,
        geometry_hash,
        version: env!("CARGO_PKG_VERSION").to_string(),
        threads,
        timings: stages.0,
        outputs: out.files.clone(),
        reduction_deviation: deviation,
        reduction_tolerance: REDUCTION_TOLERANCE,
        reduction_within_tolerance: deviation <= REDUCTION_TOLERANCE,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(Outputs::io)? + "\n";
    std::fs::write(out.dir.join("manifest.json"), text).map_err(Outputs::io)?;
    Ok(manifest)
}

fn toggling(config: &RunConfig) -> Result<TogglingParams, RunError> {
    Ok(config.alpha.toggling(config.resolved_time_unit())?)
}

fn run_couplings(config: &RunConfig, geom: &Geometry, out: &mut Outputs) -> Result<f64, RunError> {
    let orientations = config.orientations()?;
    let alpha = toggling(config)?.alpha();
    let sets = orientations.iter().map(|o| couplings_for(o, geom)).collect::<crate::Result<Vec<_>>>()?;
    let labels: Vec<&str> = geom.environment().map(|s| s.label.as_str()).collect();
    let mut hetero = Vec::new();
    let mut homo = Vec::new();
    for (o, c) in sets.iter().enumerate() {
        for (j, label) in labels.iter().enumerate() {
            hetero.push(vec![o.to_string(), j.to_string(), label.to_string(), f(c.hetero()[j])]);
            for k in (j + 1)..c.n_env() {
                homo.push(vec![o.to_string(), j.to_string(), k.to_string(), f(c.homo()[(j, k)])]);
            }
        }
    }
    out.csv("hetero.csv", &["orientation", "j", "label", "omega"], hetero)?;
    out.csv("homo.csv", &["orientation", "j", "k", "omega"], homo)?;
    let unit = config.resolved_time_unit();
    let rows = config.t_grid.values().into_iter().map(|t| {
        let sizes: Vec<f64> = sets.iter().map(|c| connected_group_size(c, t * unit, alpha) as f64).collect();
        let (mean, se) = crate::reduce::mean_stderr(&sizes);
        vec![f(t), f(mean), f(se)]
    });
    out.csv("connected_group.csv", &["T", "mean_size", "stderr"], rows.collect::<Vec<_>>())?;
    out.json(
        "couplings.json",
        &serde_json::json!({
            "n_env": geom.n_env(),
            "n_orientations": orientations.len(),
            "units": geom.scale().units(),
            "alpha": alpha,
            "labels": labels,
        }),
    )?;
    Ok(0.0)
}

fn run_mcd(config: &RunConfig, geom: &Geometry, out: &mut Outputs) -> Result<f64, RunError> {
    let orientations = config.orientations()?;
    let tog = toggling(config)?;
    let grid = PhaseGrid::new(config.phase_points)?;
    let ens = ensemble_mcd_over(geom, &orientations, &config.t_values(), &grid, &tog)?;
    let t_user = config.t_grid.values();
    let mut spectra = Vec::new();
    for (t, s) in t_user.iter().zip(&ens.spectra) {
        for (n, a) in s.orders() {
            spectra.push(vec![f(*t), n.to_string(), f(a)]);
        }
    }
    out.csv("spectra.csv", &["T", "n", "amplitude"], spectra)?;
    let rows = (0..t_user.len())
        .map(|i| vec![f(t_user[i]), f(ens.spread[i]), f(ens.spread_stderr[i]), ens.largest_order[i].to_string()]);
    out.csv("spread.csv", &["T", "spread", "stderr", "largest_order"], rows.collect::<Vec<_>>())?;
    out.json(
        "mcd.json",
        &serde_json::json!({
            "n_env": geom.n_env(),
            "n_orientations": ens.n_orientations,
            "phase_points": config.phase_points,
            "alpha": tog.alpha(),
            "analytic": !matches!(tog.mode, TogglingMode::FullToggling),
            "reduction_deviation": ens.reduction_deviation,
        }),
    )?;
    Ok(ens.reduction_deviation)
}

fn fit_row(tau: f64, variable: &str, fit: &crate::Result<FitResult>, window: usize) -> Vec<String> {
    match fit {
        Ok(r) => vec![
            f(tau),
            variable.into(),
            format!("{:?}", r.family).to_lowercase(),
            f(r.amplitude()),
            f(r.scale()),
            f(r.residual_norm),
            f(r.r_squared),
            window.to_string(),
        ],
        Err(e) => vec![
            f(tau),
            variable.into(),
            "failed".into(),
            e.to_string(),
            String::new(),
            String::new(),
            String::new(),
            window.to_string(),
        ],
    }
}

fn run_otoc(config: &RunConfig, geom: &Geometry, out: &mut Outputs) -> Result<f64, RunError> {
    let orientations = config.orientations()?;
    let tog = toggling(config)?;
    let unit = config.resolved_time_unit();
    let t = config.t_values();
    let taus: Vec<f64> = config.tau.iter().map(|v| v * unit).collect();
    let surface = ensemble_otoc_over(geom, &orientations, &t, &taus, &tog, config.interaction, config.normalization)?;
    let t_user = config.t_grid.values();
    let mut rows = Vec::new();
    for (k, tau) in config.tau.iter().enumerate() {
        for (i, time) in t_user.iter().enumerate() {
            rows.push(vec![
                f(*tau),
                f(*time),
                f(surface.raw[k][i]),
                f(surface.stderr[k][i]),
                f(surface.normalized[k][i]),
            ]);
        }
    }
    out.csv("otoc.csv", &["tau", "T", "F_raw", "stderr", "F_normalized"], rows)?;

    let grid = PhaseGrid::new(config.phase_points)?;
    let mcd = ensemble_mcd_over(geom, &orientations, &t, &grid, &tog)?;
    let spread = SpreadCurve { t: t.clone(), spread: mcd.spread.clone() };
    let mut fits = Vec::new();
    let mut immunity = Vec::new();
    let mut note = serde_json::Value::Null;
    match reparameterize_otoc(&surface, &spread) {
        Ok(curves) => {
            for (k, c) in curves.iter().enumerate() {
                let tau = config.tau[k];
                let w = early_window(&c.y, config.early_window).max(4).min(c.y.len());
                fits.push(fit_row(tau, "spread", &fit_exponential(&c.x[..w], &c.y[..w]), w));
                fits.push(fit_row(tau, "spread", &fit_gaussian(&c.x[..w], &c.y[..w]), w));
                let y = &surface.normalized[k][..w];
                fits.push(fit_row(tau, "T", &fit_exponential(&t_user[..w], y), w));
                fits.push(fit_row(tau, "T", &fit_gaussian(&t_user[..w], y), w));
            }
            match scrambling_immunity_factor(&curves, config.early_window, geom.n_env()) {
                Ok(ks) => {
                    immunity = ks
                        .iter()
                        .zip(&config.tau)
                        .map(|(k, tau)| vec![f(*tau), f(k.kappa), k.unscrambled.to_string(), k.window.to_string()])
                        .collect()
                }
                Err(e) => note = serde_json::Value::String(format!("immunity factors unavailable: {e}")),
            }
        }
        Err(e) => note = serde_json::Value::String(format!("reparameterization unavailable: {e}")),
    }
    out.csv("fits.csv", &["tau", "variable", "model", "amplitude", "scale", "residual_norm", "r2", "window"], fits)?;
    out.csv("immunity.csv", &["tau", "kappa", "unscrambled", "window"], immunity)?;
    let rows = (0..t_user.len()).map(|i| vec![f(t_user[i]), f(mcd.spread[i]), f(mcd.spread_stderr[i])]);
    out.csv("spread.csv", &["T", "spread", "stderr"], rows.collect::<Vec<_>>())?;
    let deviation = surface.reduction_deviation.max(mcd.reduction_deviation);
    out.json(
        "otoc.json",
        &serde_json::json!({
            "n_env": geom.n_env(),
            "n_orientations": surface.n_orientations(),
            "alpha": tog.alpha(),
            "interaction": config.interaction,
            "normalization": config.normalization,
            "early_window": config.early_window,
            "note": note,
            "reduction_deviation": deviation,
        }),
    )?;
    Ok(deviation)
}

fn run_coingame(config: &RunConfig, out: &mut Outputs) -> Result<f64, RunError> {
    let c = &config.coin;
    let mut seeds = ChaCha8Rng::seed_from_u64(config.seed.unwrap_or(0));
    let mut rows = Vec::new();
    let mut kappa = Vec::new();
    let ks: Vec<f64> = c.ks.iter().map(|&k| k as f64).collect();
    for &m in &c.ms {
        let mut analytic = Vec::new();
        let mut mc = Vec::new();
        for &k in &c.ks {
            let r = coin_monte_carlo(&CoinParams { n: c.n, k, m, trials: c.trials, seed: seeds.next_u64() })?;
            rows.push(vec![c.n.to_string(), k.to_string(), m.to_string(), f(r.analytic), f(r.mc), f(r.stderr)]);
            analytic.push(r.analytic);
            mc.push(r.mc);
        }
        let fit = |y: &[f64]| swap_immunity_factor(&ks, y).map_or_else(|e| e.to_string(), f);
        kappa.push(vec![m.to_string(), fit(&analytic), fit(&mc)]);
    }
    out.csv("coin.csv", &["N", "k", "m", "A_analytic", "A_mc", "stderr"], rows)?;
    out.csv("swap_immunity.csv", &["m", "kappa_analytic", "kappa_mc"], kappa)?;
    out.json("coingame.json", &serde_json::json!({ "coin": c, "seed": config.seed }))?;
    Ok(0.0)
}

fn run_chaos(config: &RunConfig, geom: &Geometry, out: &mut Outputs) -> Result<f64, RunError> {
    let orientations = config.orientations()?;
    let n = geom.n_env();
    let m = config.chaos.magnetization.unwrap_or((n % 2) as i32);
    let mut models = vec![("dipolar", EnvInteraction::Dipolar)];
    if config.chaos.ising_reference {
        models.push(("ising", EnvInteraction::IsingOnly));
    }
    let mut spacing_rows = Vec::new();
    let mut hist_rows = Vec::new();
    let mut summary = serde_json::Map::new();
    for (name, interaction) in models {
        let per = crate::reduce::try_map_indexed(orientations.len(), |i| -> crate::Result<SpacingHistogram> {
            let c = couplings_for(&orientations[i], geom)?;
            level_spacings(&environment_operator(&c, interaction), m)
        })?;
        let mut pooled = Vec::new();
        for (i, h) in per.iter().enumerate() {
            for s in &h.spacings {
                spacing_rows.push(vec![name.to_string(), i.to_string(), f(*s)]);
            }
            pooled.extend_from_slice(&h.spacings);
        }
        let mut hist = SpacingHistogram::from_spacings(pooled, per.iter().map(|h| h.blocks).sum());
        let (edges, density) = crate::analysis::histogram(&hist.spacings, config.chaos.bins, config.chaos.max_spacing);
        hist.bin_edges = edges;
        hist.density = density;
        for b in 0..hist.density.len() {
            let (lo, hi) = (hist.bin_edges[b], hist.bin_edges[b + 1]);
            let mid = 0.5 * (lo + hi);
            hist_rows.push(vec![
                name.to_string(),
                f(lo),
                f(hi),
                f(hist.density[b]),
                f(wigner_surmise(mid)?),
                f((-mid).exp()),
            ]);
        }
        summary.insert(
            name.into(),
            serde_json::json!({
                "sample_size": hist.sample_size,
                "blocks": hist.blocks,
                "mean_spacing": hist.mean(),
                "ks_wigner": hist.ks_wigner(),
                "ks_poisson": hist.ks_poisson(),
            }),
        );
    }
    out.csv("spacings.csv", &["model", "orientation", "s"], spacing_rows)?;
    out.csv("histogram.csv", &["model", "bin_lo", "bin_hi", "density", "wigner", "poisson"], hist_rows)?;
    summary.insert("n_env".into(), n.into());
    summary.insert("magnetization".into(), m.into());
    summary.insert("n_orientations".into(), orientations.len().into());
    summary.insert(
        "binning".into(),
        serde_json::json!({ "bins": config.chaos.bins, "max_spacing": config.chaos.max_spacing }),
    );
    out.json("chaos.json", &summary)?;
    Ok(0.0)
}
