//! `wcreg`: runs every certification as a subcommand and writes CSV.
//!
//! Exit status is 0 when everything ran and every certificate passed, 2 when
//! some certificate failed, and 1 on usage or runtime errors.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use wcreg::linreg::{self, Certificate, SourceSpec};
use wcreg::numdiff::{self, DiffCertificate, Truth};
use wcreg::spectral::{ProblemKind, ProblemSpec};
use wcreg::varreg::{self, NonlinearProblem, Nonlinearity, StudyRow};
use wcreg::{add_noise, integrate_volterra, Grid, HolderSpec, NoiseModel, NoisyData, SampledFunction};

pub mod config;

use config::{Common, Deltas, Vector};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_FAILED_CERTIFICATE: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Run(wcreg::Error),
    Io(std::io::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Run(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "{e}"),
        }
    }
}

impl From<wcreg::Error> for CliError {
    fn from(e: wcreg::Error) -> Self {
        CliError::Run(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

#[derive(Debug, Parser)]
#[command(name = "wcreg", version, about = "Worst-case certified regularization experiments")]
pub struct Cli {
    /// JSON file supplying any flag by its long name; flags given on the
    /// command line take precedence. A `command` key selects the subcommand.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Differentiate noisy samples of ∫u with the certified step
    Differentiate(DifferentiateFlags),
    /// Certify the differentiation error budget on a known truth
    CertifyDiff(CertifyDiffFlags),
    /// Build the lower-bound witness pairs for a Hölder class
    Witness(WitnessFlags),
    /// Certify Tikhonov regularization under a source condition
    CertifyLinear(CertifyLinearFlags),
    /// Minimize the penalized functional for one data vector
    Varmin(VarminFlags),
    /// Convergence study of the variational regularizer as δ → 0
    Study(StudyFlags),
}

impl Command {
    fn from_name(name: &str) -> Option<Command> {
        Some(match name {
            "differentiate" => Command::Differentiate(Default::default()),
            "certify-diff" => Command::CertifyDiff(Default::default()),
            "witness" => Command::Witness(Default::default()),
            "certify-linear" => Command::CertifyLinear(Default::default()),
            "varmin" => Command::Varmin(Default::default()),
            "study" => Command::Study(Default::default()),
            _ => return None,
        })
    }
}

#[derive(Debug, Default, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct DifferentiateFlags {
    /// CSV of `x,value` samples of the noisy data on a uniform grid of [0, 1]
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Generate the data from a truth instead: sin, square or spline[:seed]
    #[arg(long)]
    pub truth: Option<String>,
    /// Grid size for generated data
    #[arg(long)]
    pub n: Option<usize>,
    /// Noise model for generated data
    #[arg(long)]
    pub noise: Option<String>,
    #[arg(long)]
    pub delta: Option<f64>,
    /// Hölder exponent, 1 < a ≤ 2
    #[arg(long)]
    pub a: Option<f64>,
    /// Bound M on the Hölder norm
    #[arg(long)]
    pub m: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "kebab-case")]
struct DifferentiateConfig {
    input: Option<PathBuf>,
    truth: Option<String>,
    #[serde(default = "default_grid")]
    n: usize,
    #[serde(default = "default_noise")]
    noise: String,
    delta: f64,
    a: f64,
    m: f64,
    #[serde(flatten)]
    common: Common,
}

#[derive(Debug, Default, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct CertifyDiffFlags {
    /// sin, square or spline[:seed]; rescaled to `fraction · M`
    #[arg(long)]
    pub truth: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub a: Option<f64>,
    #[arg(long)]
    pub m: Option<f64>,
    /// Comma list or start:stop:count log sweep
    #[arg(long)]
    pub deltas: Option<String>,
    /// A noise model name, or `all`
    #[arg(long)]
    pub noise: Option<String>,
    /// Random perturbations per certificate
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub fraction: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "kebab-case")]
struct CertifyDiffConfig {
    truth: String,
    #[serde(default = "default_grid")]
    n: usize,
    a: f64,
    m: f64,
    deltas: Deltas,
    #[serde(default = "default_all")]
    noise: String,
    #[serde(default = "default_samples")]
    samples: usize,
    #[serde(default = "default_fraction")]
    fraction: f64,
    #[serde(flatten)]
    common: Common,
}

#[derive(Debug, Default, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct WitnessFlags {
    #[arg(long)]
    pub a: Option<f64>,
    #[arg(long)]
    pub m: Option<f64>,
    #[arg(long)]
    pub deltas: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Bump centre in (0, 1)
    #[arg(long)]
    pub center: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "kebab-case")]
struct WitnessConfig {
    a: f64,
    m: f64,
    deltas: Deltas,
    #[serde(default = "default_grid")]
    n: usize,
    #[serde(default = "default_center")]
    center: f64,
    #[serde(flatten)]
    common: Common,
}

#[derive(Debug, Default, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct CertifyLinearFlags {
    /// volterra, diagonal or rotated-diagonal
    #[arg(long)]
    pub problem: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Singular value decay of the diagonal problems
    #[arg(long)]
    pub q: Option<f64>,
    /// Seed of the rotated problem
    #[arg(long)]
    pub problem_seed: Option<u64>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub k: Option<f64>,
    #[arg(long)]
    pub deltas: Option<String>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Random restarts of each worst-case search
    #[arg(long)]
    pub restarts: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "kebab-case")]
struct CertifyLinearConfig {
    problem: String,
    n: usize,
    #[serde(default = "default_q")]
    q: f64,
    #[serde(default)]
    problem_seed: u64,
    p: f64,
    k: f64,
    deltas: Deltas,
    trials: usize,
    #[serde(default = "default_linear_restarts")]
    restarts: usize,
    #[serde(flatten)]
    common: Common,
}

#[derive(Debug, Default, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct VarminFlags {
    #[arg(long)]
    pub n: Option<usize>,
    /// identity or cubic
    #[arg(long)]
    pub nonlinearity: Option<String>,
    /// Cap c of φ(v) = ‖v‖²
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub problem_seed: Option<u64>,
    #[arg(long)]
    pub delta: Option<f64>,
    /// Data vector, comma separated
    #[arg(long)]
    pub f: Option<String>,
    /// Generate the data as A(u) plus noise of norm δ instead
    #[arg(long)]
    pub u: Option<String>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "kebab-case")]
struct VarminConfig {
    n: usize,
    #[serde(default = "default_nonlinearity")]
    nonlinearity: String,
    c: f64,
    #[serde(default)]
    problem_seed: u64,
    delta: f64,
    f: Option<Vector>,
    u: Option<Vector>,
    #[serde(default = "default_var_restarts")]
    restarts: usize,
    #[serde(flatten)]
    common: Common,
}

#[derive(Debug, Default, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct StudyFlags {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub nonlinearity: Option<String>,
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub problem_seed: Option<u64>,
    /// Truth, comma separated
    #[arg(long)]
    pub u: Option<String>,
    /// Decreasing noise levels
    #[arg(long)]
    pub deltas: Option<String>,
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Noise norm as a fraction of δ
    #[arg(long)]
    pub noise_fraction: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "kebab-case")]
struct StudyConfig {
    n: usize,
    #[serde(default = "default_nonlinearity")]
    nonlinearity: String,
    c: f64,
    #[serde(default)]
    problem_seed: u64,
    u: Vector,
    deltas: Deltas,
    #[serde(default = "default_var_restarts")]
    restarts: usize,
    #[serde(default = "default_noise_fraction")]
    noise_fraction: f64,
    #[serde(flatten)]
    common: Common,
}

fn default_grid() -> usize {
    4097
}
fn default_noise() -> String {
    "exact-shift".into()
}
fn default_all() -> String {
    "all".into()
}
fn default_samples() -> usize {
    32
}
fn default_fraction() -> f64 {
    0.9
}
fn default_center() -> f64 {
    0.5
}
fn default_q() -> f64 {
    1.0
}
fn default_linear_restarts() -> usize {
    linreg::CERTIFY_RESTARTS
}
fn default_nonlinearity() -> String {
    "cubic".into()
}
fn default_var_restarts() -> usize {
    varreg::DEFAULT_RESTARTS
}
fn default_noise_fraction() -> f64 {
    1.0
}

fn parse<T: std::str::FromStr<Err = wcreg::Error>>(s: &str) -> Result<T, CliError> {
    s.parse().map_err(CliError::Run)
}

/// CSV text and whether every certificate in it passed.
pub struct Outcome {
    pub csv: String,
    pub pass: bool,
}

fn differentiate(cfg: DifferentiateConfig) -> Result<Outcome, CliError> {
    let spec = HolderSpec::new(cfg.a, cfg.m)?;
    if cfg.a <= 1.0 {
        return Err(CliError::Usage(format!(
            "a = {} admits no stable differentiation; use `wcreg witness` to build the lower-bound pair",
            cfg.a
        )));
    }
    let data = match (&cfg.input, &cfg.truth) {
        (Some(path), _) => {
            let f = SampledFunction::read_csv(std::fs::File::open(path)?)?;
            NoisyData::observed(f, cfg.delta)?
        }
        (None, Some(truth)) => {
            let u = parse::<Truth>(truth)?.sample(Grid::new(cfg.n)?);
            let model = parse::<NoiseModel>(&cfg.noise)?;
            add_noise(&integrate_volterra(&u), cfg.delta, model, cfg.common.seed.unwrap_or(0))?
        }
        (None, None) => return Err(CliError::Usage("missing required key `input` (or `truth`)".into())),
    };
    let out = numdiff::differentiate(&data, &spec)?;
    let mut buf = Vec::new();
    out.write_csv(&mut buf)?;
    Ok(Outcome { csv: String::from_utf8(buf).expect("utf-8 csv"), pass: true })
}

fn certify_diff(cfg: CertifyDiffConfig) -> Result<Outcome, CliError> {
    let spec = HolderSpec::new(cfg.a, cfg.m)?;
    let grid = Grid::new(cfg.n)?;
    let truth = parse::<Truth>(&cfg.truth)?.admissible(grid, &spec, cfg.fraction)?;
    let models: Vec<NoiseModel> =
        if cfg.noise == "all" { NoiseModel::ALL.to_vec() } else { vec![parse(&cfg.noise)?] };
    let seed = cfg.common.seed.unwrap_or(0);
    let mut csv = format!("{},noise\n", DiffCertificate::CSV_HEADER);
    let mut pass = true;
    for (i, delta) in cfg.deltas.values()?.into_iter().enumerate() {
        for (j, &model) in models.iter().enumerate() {
            let item_seed = wcreg::seeds::derive_seed(seed, &[i as u64, j as u64]);
            let cert = numdiff::certify_difference(&truth, delta, model, &spec, cfg.samples, item_seed)?;
            log::info!("δ = {delta}, {model}: empirical {} vs budget {}", cert.empirical_lower, cert.budget.total);
            pass &= cert.pass;
            csv.push_str(&format!("{},{}\n", cert.csv_row(), model));
        }
    }
    Ok(Outcome { csv, pass })
}

pub const WITNESS_CSV_HEADER: &str = "delta,a,M,center,width,amplitude,separation";

fn witness(cfg: WitnessConfig) -> Result<Outcome, CliError> {
    let spec = HolderSpec::new(cfg.a, cfg.m)?;
    let grid = Grid::new(cfg.n)?;
    let mut csv = format!("{WITNESS_CSV_HEADER}\n");
    for delta in cfg.deltas.values()? {
        let w = numdiff::witness_pair(delta, &spec, cfg.center, grid)?;
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            w.delta, cfg.a, cfg.m, w.center, w.width, w.amplitude, w.separation
        ));
    }
    Ok(Outcome { csv, pass: true })
}

fn certify_linear(cfg: CertifyLinearConfig) -> Result<Outcome, CliError> {
    let problem = ProblemSpec { kind: parse::<ProblemKind>(&cfg.problem)?, n: cfg.n, q: cfg.q, seed: cfg.problem_seed };
    let source = SourceSpec::new(cfg.p, cfg.k)?;
    let deltas = cfg.deltas.values()?;
    let certs = linreg::certify_with_restarts(
        &problem,
        &source,
        &deltas,
        cfg.trials,
        cfg.restarts,
        cfg.common.seed.unwrap_or(0),
    )?;
    let mut csv = format!("{}\n", Certificate::CSV_HEADER);
    for c in &certs {
        csv.push_str(&c.csv_row());
        csv.push('\n');
    }
    Ok(Outcome { pass: certs.iter().all(|c| c.pass), csv })
}

fn nonlinear_problem(n: usize, nonlinearity: &str, c: f64, seed: u64) -> Result<NonlinearProblem, CliError> {
    Ok(NonlinearProblem::gallery(n, parse::<Nonlinearity>(nonlinearity)?, c, seed)?)
}

fn varmin(cfg: VarminConfig) -> Result<Outcome, CliError> {
    let problem = nonlinear_problem(cfg.n, &cfg.nonlinearity, cfg.c, cfg.problem_seed)?;
    let seed = cfg.common.seed.unwrap_or(0);
    let f = match (&cfg.f, &cfg.u) {
        (Some(f), _) => f.values()?,
        (None, Some(u)) => {
            varreg::noisy_data(&problem, &u.values()?, cfg.delta, 1.0, seed)?
        }
        (None, None) => return Err(CliError::Usage("missing required key `f` (or `u`)".into())),
    };
    let report = varreg::minimize(&problem, &f, cfg.delta, cfg.restarts, seed)?;
    let mut csv = String::from("delta,F_value,m_hat,feasible,iterations,restarts");
    for i in 0..report.v_delta.len() {
        csv.push_str(&format!(",v_{}", i + 1));
    }
    csv.push_str(&format!(
        "\n{},{},{},{},{},{}",
        cfg.delta, report.f_value, report.m_hat, report.feasible, report.iterations, report.restarts
    ));
    for v in &report.v_delta {
        csv.push_str(&format!(",{v}"));
    }
    csv.push('\n');
    Ok(Outcome { csv, pass: report.feasible })
}

fn study(cfg: StudyConfig) -> Result<Outcome, CliError> {
    let problem = nonlinear_problem(cfg.n, &cfg.nonlinearity, cfg.c, cfg.problem_seed)?;
    let u = cfg.u.values()?;
    let rows = varreg::convergence_study_with_noise(
        &problem,
        &u,
        &cfg.deltas.values()?,
        cfg.restarts,
        cfg.common.seed.unwrap_or(0),
        cfg.noise_fraction,
    )?;
    let mut csv = format!("{}\n", StudyRow::CSV_HEADER);
    let mut pass = true;
    for r in &rows {
        pass &= r.feasible && r.f_value <= 2.0 * r.c1_delta;
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    Ok(Outcome { csv, pass })
}

fn execute(command: Command, config: &Map<String, Value>) -> Result<(Outcome, Common), CliError> {
    macro_rules! dispatch {
        ($flags:expr, $cfg:ty, $run:ident) => {{
            let cfg: $cfg = config::resolve(&$flags, config)?;
            let common = cfg.common.clone();
            let pool = match common.threads {
                Some(0) => return Err(CliError::Usage("threads must be at least 1".into())),
                Some(t) => Some(
                    rayon::ThreadPoolBuilder::new()
                        .num_threads(t)
                        .build()
                        .map_err(|e| CliError::Usage(e.to_string()))?,
                ),
                None => None,
            };
            let outcome = match pool {
                Some(pool) => pool.install(|| $run(cfg))?,
                None => $run(cfg)?,
            };
            Ok((outcome, common))
        }};
    }
    match command {
        Command::Differentiate(f) => dispatch!(f, DifferentiateConfig, differentiate),
        Command::CertifyDiff(f) => dispatch!(f, CertifyDiffConfig, certify_diff),
        Command::Witness(f) => dispatch!(f, WitnessConfig, witness),
        Command::CertifyLinear(f) => dispatch!(f, CertifyLinearConfig, certify_linear),
        Command::Varmin(f) => dispatch!(f, VarminConfig, varmin),
        Command::Study(f) => dispatch!(f, StudyConfig, study),
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    status(run_cli(cli))
}

fn status(result: Result<bool, CliError>) -> i32 {
    match result {
        Ok(true) => EXIT_OK,
        Ok(false) => {
            eprintln!("wcreg: at least one certificate failed");
            EXIT_FAILED_CERTIFICATE
        }
        Err(e) => {
            eprintln!("wcreg: {e}");
            EXIT_ERROR
        }
    }
}

fn run_cli(cli: Cli) -> Result<bool, CliError> {
    let config = match &cli.config {
        Some(path) => config::load(path)?,
        None => Map::new(),
    };
    let command = match cli.command {
        Some(c) => c,
        None => {
            let name = config
                .get("command")
                .and_then(Value::as_str)
                .ok_or_else(|| CliError::Usage("missing required key `command` (or a subcommand)".into()))?;
            Command::from_name(name).ok_or_else(|| CliError::Usage(format!("unknown command `{name}`")))?
        }
    };
    let (outcome, common) = execute(command, &config)?;
    match &common.out {
        Some(path) => std::fs::write(path, &outcome.csv)?,
        None => std::io::stdout().lock().write_all(outcome.csv.as_bytes())?,
    }
    Ok(outcome.pass)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_status_mapping() {
        assert_eq!(status(Ok(true)), EXIT_OK);
        assert_eq!(status(Ok(false)), EXIT_FAILED_CERTIFICATE);
        assert_eq!(status(Err(CliError::Usage("x".into()))), EXIT_ERROR);
        assert_eq!(status(Err(CliError::Run(wcreg::Error::InvalidDelta(-1.0)))), EXIT_ERROR);
    }

    #[test]
    fn config_names_every_command() {
        for name in ["differentiate", "certify-diff", "witness", "certify-linear", "varmin", "study"] {
            assert!(Command::from_name(name).is_some());
        }
        assert!(Command::from_name("bogus").is_none());
    }
}
