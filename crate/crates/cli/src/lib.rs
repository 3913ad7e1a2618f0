//! Command-line front end: simulation sweeps, estimation on CSV data, β/γ
//! conversion and the self-check suite.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use confspec::data::{read_table, save_records, ColumnRef};
use confspec::estimator::normalize_dataset;
use confspec::scm::beta_prime;
use confspec::simulation::{run_simulation, SimulationConfig, DEFAULT_PERMUTATIONS};
use confspec::transforms::{beta_to_gamma_branch, gamma_to_beta, Branch};
use confspec::verify::{run_verify, SuiteSize, VerifyConfig};
use confspec::{estimate_from_data, GridConfig, Warning};

pub const EXIT_INPUT: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;
pub const EXIT_VERIFY: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "confspec", version, about = "Estimate the strength of hidden confounding from covariance spectra")]
pub struct Cli {
    /// Worker threads (default: all logical cores).
    #[arg(long, global = true, env = "CONFSPEC_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Monte Carlo sweep over random confounded models.
    Simulate(SimulateArgs),
    /// Estimate confounding strength for a CSV dataset.
    Estimate(EstimateArgs),
    /// Convert between correlative (gamma) and structural (beta) strength.
    Convert(ConvertArgs),
    /// Run the numerical self-check suite.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    #[arg(long, default_value_t = confspec::estimator::DEFAULT_GRID_STEPS)]
    pub beta_steps: usize,
    #[arg(long, default_value_t = confspec::estimator::DEFAULT_GRID_STEPS)]
    pub eta_steps: usize,
    /// Kernel width as a fraction of the eigenvalue range.
    #[arg(long, default_value_t = confspec::estimator::DEFAULT_SIGMA_FACTOR)]
    pub sigma_factor: f64,
}

impl GridArgs {
    fn config(&self) -> GridConfig {
        GridConfig { beta_steps: self.beta_steps, eta_steps: self.eta_steps, sigma_factor: self.sigma_factor }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Dimensions, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub d: Vec<usize>,
    /// Sample sizes, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub n: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Permutations for the correlation test (0 disables it).
    #[arg(long, default_value_t = DEFAULT_PERMUTATIONS)]
    pub permutations: usize,
    /// Output directory; receives records.csv and summary.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Target column, by header name or zero-based index.
    #[arg(long)]
    pub target: String,
    /// Columns to leave out of the predictors.
    #[arg(long, value_delimiter = ',')]
    pub drop: Vec<String>,
    /// Column holding an observed confounder; excluded from the predictors
    /// and used for the regression-based reference strength.
    #[arg(long)]
    pub confounder: Option<String>,
    /// Scale predictors to unit variance before estimating.
    #[arg(long)]
    pub normalize: bool,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Field delimiter of the input file.
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
    /// Write the JSON document here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BranchArg {
    Upper,
    Lower,
}

impl From<BranchArg> for Branch {
    fn from(b: BranchArg) -> Self {
        match b {
            BranchArg::Upper => Branch::Upper,
            BranchArg::Lower => Branch::Lower,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ConvertArgs {
    #[arg(long, required_unless_present = "beta", conflicts_with = "beta")]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// First negative moment of the tracial spectral measure of the covariance.
    #[arg(long, allow_negative_numbers = true)]
    pub m1: f64,
    /// Second negative moment.
    #[arg(long, allow_negative_numbers = true)]
    pub m2: f64,
    /// Squared norm of the X-Y covariance vector.
    #[arg(long, allow_negative_numbers = true)]
    pub sxy2: f64,
    /// Squared norm of the regression vector.
    #[arg(long, allow_negative_numbers = true)]
    pub ahat2: f64,
    /// Also convert back and report the round-trip value.
    #[arg(long)]
    pub roundtrip: bool,
    #[arg(long, value_enum, default_value = "upper")]
    pub branch: BranchArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SizeArg {
    Small,
    Full,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[arg(long, value_enum, default_value = "small")]
    pub size: SizeArg,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Override a check threshold, as NAME=VALUE. Repeatable.
    #[arg(long = "set", value_parser = parse_override)]
    pub overrides: Vec<(String, f64)>,
    /// Print the report as JSON.
    #[arg(long)]
    pub json: bool,
}

fn parse_override(s: &str) -> Result<(String, f64), String> {
    let (name, value) = s.split_once('=').ok_or_else(|| format!("expected NAME=VALUE, got `{s}`"))?;
    let value: f64 = value.trim().parse().map_err(|e| format!("bad threshold `{value}`: {e}"))?;
    Ok((name.trim().to_string(), value))
}

/// Marker error for a failed self-check run.
#[derive(Debug)]
pub struct VerificationFailed;

impl std::fmt::Display for VerificationFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "verification failed")
    }
}

impl std::error::Error for VerificationFailed {}

/// Process exit code for an error returned by [`run`].
pub fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<VerificationFailed>().is_some() {
        return EXIT_VERIFY;
    }
    match err.chain().find_map(|e| e.downcast_ref::<confspec::Error>()) {
        Some(e) if e.is_numerical() => EXIT_NUMERICAL,
        _ => EXIT_INPUT,
    }
}

pub fn run(cli: Cli, out: &mut dyn Write) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        anyhow::ensure!(n > 0, "--threads must be positive");
        // a second call in the same process keeps the existing pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Simulate(a) => simulate(&a, out),
        Command::Estimate(a) => estimate(&a, out),
        Command::Convert(a) => convert(&a, out),
        Command::Verify(a) => verify(&a, out),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn simulate(a: &SimulateArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let cfg = SimulationConfig {
        dims: a.d.clone(),
        sample_sizes: a.n.clone(),
        reps: a.reps,
        seed: a.seed,
        grid: a.grid.config(),
        permutations: a.permutations,
    };
    let (records, summary) = run_simulation(&cfg)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    save_records(&records, &a.out.join("records.csv"))?;
    write_json(&a.out.join("summary.json"), &summary)?;
    for c in &summary.cells {
        let p = c.permutation_p_value.map_or("-".to_string(), |p| format!("{p:.2e}"));
        writeln!(
            out,
            "d={:<4} n={:<8} reps={:<4} failed={:<3} corr={:.4} rmse={:.4} perm_p={p} t_p={:.2e}",
            c.d, c.n, c.reps, c.failed, c.pearson, c.rmse, c.t_test_p_value
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct WarningEntry {
    #[serde(flatten)]
    warning: Warning,
    message: String,
}

impl From<Warning> for WarningEntry {
    fn from(warning: Warning) -> Self {
        let message = warning.to_string();
        Self { warning, message }
    }
}

#[derive(Serialize)]
struct EstimateEcho<'a> {
    input: String,
    target: &'a str,
    drop: &'a [String],
    confounder: Option<&'a str>,
    normalize: bool,
    delimiter: char,
    grid: GridConfig,
}

#[derive(Serialize)]
struct EstimateDocument<'a> {
    beta_hat: f64,
    eta_hat: f64,
    eta_unreliable: bool,
    distance: f64,
    beta_index: usize,
    eta_index: usize,
    n: usize,
    predictors: &'a [String],
    eigenvalues: Vec<f64>,
    observed_weights: Vec<f64>,
    fitted_weights: Vec<f64>,
    /// Reference strength from regressing on the observed confounder.
    beta_prime: Option<f64>,
    config: EstimateEcho<'a>,
    warnings: Vec<WarningEntry>,
}

fn estimate(a: &EstimateArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let grid = a.grid.config();
    let delimiter = u8::try_from(a.delimiter)
        .ok()
        .filter(u8::is_ascii)
        .ok_or_else(|| confspec::Error::InvalidInput(format!("delimiter `{}` is not ASCII", a.delimiter)))?;
    let table = read_table(&a.input, delimiter)?;
    let target: ColumnRef = a.target.parse()?;
    let drop: Vec<ColumnRef> = a.drop.iter().map(|s| s.parse()).collect::<Result<_, _>>()?;
    let confounder: Option<ColumnRef> = a.confounder.as_deref().map(str::parse).transpose()?;
    let mut ds = table.to_dataset(&target, &drop, confounder.as_ref())?;
    if ds.n() < 2 {
        return Err(confspec::Error::InvalidInput(format!("need at least 2 rows, found {}", ds.n())).into());
    }
    if ds.d() < 2 {
        return Err(confspec::Error::InvalidInput("need at least 2 predictor columns".into()).into());
    }
    let mut warnings = Vec::new();
    if a.normalize {
        let (normalized, w) = normalize_dataset(&ds)?;
        ds = normalized;
        warnings.push(w);
    }
    let est = estimate_from_data(&ds, &grid)?;
    let reference = if ds.z().is_some() { beta_prime(&ds)? } else { None };
    warnings.extend(est.warnings.iter().cloned());

    let doc = EstimateDocument {
        beta_hat: est.beta_hat,
        eta_hat: est.eta_hat,
        eta_unreliable: est.eta_unreliable,
        distance: est.distance,
        beta_index: est.beta_index,
        eta_index: est.eta_index,
        n: ds.n(),
        predictors: ds.names(),
        eigenvalues: est.eigenvalues,
        observed_weights: est.observed_weights,
        fitted_weights: est.fitted_weights,
        beta_prime: reference,
        config: EstimateEcho {
            input: a.input.display().to_string(),
            target: &a.target,
            drop: &a.drop,
            confounder: a.confounder.as_deref(),
            normalize: a.normalize,
            delimiter: a.delimiter,
            grid,
        },
        warnings: warnings.into_iter().map(WarningEntry::from).collect(),
    };
    match &a.out {
        Some(path) => write_json(path, &doc),
        None => {
            serde_json::to_writer_pretty(&mut *out, &doc)?;
            writeln!(out)?;
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct ConversionDocument {
    gamma: f64,
    beta: f64,
    branch: Branch,
    /// Value converted back from the output, when requested.
    #[serde(skip_serializing_if = "Option::is_none")]
    roundtrip: Option<f64>,
    warnings: Vec<WarningEntry>,
}

fn convert(a: &ConvertArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let branch: Branch = a.branch.into();
    let to_gamma = |beta| beta_to_gamma_branch(beta, a.m1, a.m2, a.sxy2, a.ahat2, branch);
    let to_beta = |gamma| gamma_to_beta(gamma, a.m1, a.m2, a.sxy2, a.ahat2);
    let mut warnings = Vec::new();
    let (gamma, beta, roundtrip) = match (a.gamma, a.beta) {
        (Some(gamma), None) => {
            let conv = to_beta(gamma)?;
            warnings.extend(conv.warning);
            let back = a.roundtrip.then(|| to_gamma(conv.value)).transpose()?;
            (gamma, conv.value, back)
        }
        (None, Some(beta)) => {
            let gamma = to_gamma(beta)?;
            let back = if a.roundtrip {
                let conv = to_beta(gamma)?;
                warnings.extend(conv.warning);
                Some(conv.value)
            } else {
                None
            };
            (gamma, beta, back)
        }
        _ => unreachable!("clap enforces exactly one of --gamma and --beta"),
    };
    let doc = ConversionDocument {
        gamma,
        beta,
        branch,
        roundtrip,
        warnings: warnings.into_iter().map(WarningEntry::from).collect(),
    };
    serde_json::to_writer_pretty(&mut *out, &doc)?;
    writeln!(out)?;
    Ok(())
}

fn verify(a: &VerifyArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let size = match a.size {
        SizeArg::Small => SuiteSize::Small,
        SizeArg::Full => SuiteSize::Full,
    };
    let mut cfg = VerifyConfig::new(size, a.seed);
    cfg.thresholds.extend(a.overrides.iter().cloned());
    let report = run_verify(&cfg)?;
    if a.json {
        serde_json::to_writer_pretty(&mut *out, &report)?;
        writeln!(out)?;
    } else {
        for c in &report.checks {
            writeln!(out, "{c}")?;
        }
        let failed = report.checks.iter().filter(|c| !c.passed).count();
        writeln!(out, "{} checks, {failed} failed", report.checks.len())?;
    }
    if report.passed() {
        Ok(())
    } else {
        Err(VerificationFailed.into())
    }
}
