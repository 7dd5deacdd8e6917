//! `clustervar` command line.
//!
//! Exit codes: 0 success, 1 input or parameter error, 2 the variance routes
//! disagree beyond the tolerance.

pub mod output;

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use clustervar::simulation::RNG_NAME;
use clustervar::{
    analyze, coverage_study, equivalence_sweep, generate, parse_csv, validate, write_csv,
    AnalysisOptions, Assignment, MomentMode, SimConfig, UnitRecord,
};

use crate::output::{sig6, to_json, OutputEnvelope, Table};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_EQUIVALENCE: i32 = 2;

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(
    name = "clustervar",
    version,
    about = "Variance of the difference in means in cluster-randomized experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the effect and its variance by every route from a CSV file.
    Analyze(AnalyzeArgs),
    /// Write a synthetic dataset as CSV.
    Simulate(SimulateArgs),
    /// Check that the variance routes agree over many simulated datasets.
    Check(CheckArgs),
    /// Measure confidence interval coverage over simulated datasets.
    Coverage(CoverageArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Table,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Population,
    Sample,
}

impl From<ModeArg> for MomentMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Population => MomentMode::Population,
            ModeArg::Sample => MomentMode::Sample,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AssignmentArg {
    Alternating,
    Bernoulli,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0.95)]
    pub ci_level: f64,
    #[arg(long, default_value_t = 1e-12)]
    pub tol: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::Population)]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    #[arg(long, default_value_t = 100)]
    pub clusters: usize,
    #[arg(long, default_value_t = 10.0)]
    pub mean_size: f64,
    #[arg(long, default_value_t = 0.5)]
    pub rate_low: f64,
    #[arg(long, default_value_t = 1.0)]
    pub rate_high: f64,
    #[arg(long, value_enum, default_value_t = AssignmentArg::Alternating)]
    pub assignment: AssignmentArg,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

impl SimArgs {
    fn config(&self) -> SimConfig {
        SimConfig {
            n_clusters: self.clusters,
            mean_cluster_size: self.mean_size,
            rate_low: self.rate_low,
            rate_high: self.rate_high,
            assignment: match self.assignment {
                AssignmentArg::Alternating => Assignment::Alternating,
                AssignmentArg::Bernoulli => Assignment::BernoulliHalf,
            },
            seed: self.seed,
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub sim: SimArgs,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long, default_value_t = 1000)]
    pub seeds: u64,
    #[arg(long, default_value_t = 1e-12)]
    pub tol: f64,
    #[command(flatten)]
    pub sim: SimArgs,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct CoverageArgs {
    #[arg(long, default_value_t = 2000)]
    pub replications: u64,
    #[arg(long, default_value_t = 0.95)]
    pub ci_level: f64,
    #[command(flatten)]
    pub sim: SimArgs,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
}

/// Generator settings plus the identity of the random stream.
#[derive(Serialize)]
struct SimParams {
    #[serde(flatten)]
    config: SimConfig,
    rng: &'static str,
    poisson_method: &'static str,
}

impl SimParams {
    fn new(config: SimConfig) -> Self {
        Self {
            config,
            rng: RNG_NAME,
            poisson_method: config.poisson_method(),
        }
    }
}

/// A command failure that maps to exit code 1.
struct Failure {
    kind: &'static str,
    message: String,
}

impl From<clustervar::Error> for Failure {
    fn from(e: clustervar::Error) -> Self {
        Failure {
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        clustervar::Error::from(e).into()
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure {
        kind: "InvalidParameter",
        message: message.into(),
    }
}

struct Io<'a> {
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
    format: Format,
}

impl Io<'_> {
    fn emit<P: Serialize, R: Serialize>(
        &mut self,
        command: &str,
        parameters: &P,
        result: &R,
        warnings: &[String],
        table: Table,
    ) -> std::io::Result<()> {
        match self.format {
            Format::Json => {
                let env = OutputEnvelope {
                    tool_version: VERSION,
                    command,
                    parameters,
                    result,
                    warnings,
                };
                writeln!(self.out, "{}", to_json(&env))
            }
            Format::Table => {
                table.write_to(self.out)?;
                for w in warnings {
                    writeln!(self.err, "warning: {w}")?;
                }
                Ok(())
            }
        }
    }

    fn fail(&mut self, f: &Failure) -> i32 {
        let _ = match self.format {
            Format::Json => {
                #[derive(Serialize)]
                struct Diag<'a> {
                    error: &'a str,
                    message: &'a str,
                }
                writeln!(
                    self.err,
                    "{}",
                    to_json(&Diag {
                        error: f.kind,
                        message: &f.message
                    })
                )
            }
            Format::Table => writeln!(self.err, "error[{}]: {}", f.kind, f.message),
        };
        EXIT_INPUT
    }
}

/// Parse `args` (including the program name) and run. Returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let help = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let text = e.render().to_string();
            if help {
                let _ = write!(out, "{text}");
                return EXIT_OK;
            }
            let _ = write!(err, "{text}");
            return EXIT_INPUT;
        }
    };
    let format = match &cli.command {
        Command::Analyze(a) => a.format,
        Command::Simulate(a) => a.format,
        Command::Check(a) => a.format,
        Command::Coverage(a) => a.format,
    };
    let mut io = Io { out, err, format };
    let outcome = match &cli.command {
        Command::Analyze(a) => cmd_analyze(a, &mut io),
        Command::Simulate(a) => cmd_simulate(a, &mut io),
        Command::Check(a) => cmd_check(a, &mut io),
        Command::Coverage(a) => cmd_coverage(a, &mut io),
    };
    match outcome {
        Ok(code) => code,
        Err(f) => io.fail(&f),
    }
}

#[derive(Serialize)]
struct AnalyzeParams {
    input: String,
    ci_level: f64,
    tol: f64,
    mode: MomentMode,
    format: Format,
}

fn check_tol(tol: f64) -> Result<(), Failure> {
    if tol.is_finite() && tol >= 0.0 {
        Ok(())
    } else {
        Err(invalid(format!(
            "tolerance must be finite and non-negative, got {tol}"
        )))
    }
}

fn cmd_analyze(a: &AnalyzeArgs, io: &mut Io) -> Result<i32, Failure> {
    check_tol(a.tol)?;
    let file = File::open(&a.input)
        .map_err(|e| invalid(format!("cannot open {}: {e}", a.input.display())))?;
    let exp = validate(parse_csv(file)?)?;
    let opts = AnalysisOptions {
        ci_level: a.ci_level,
        mode: a.mode.into(),
    };
    let report = analyze(&exp, &opts)?;

    let mut warnings = Vec::new();
    if report.var_delta_sample.is_none() {
        warnings
            .push("an arm has fewer than 2 clusters; sample-mode delta variance omitted".into());
    }
    let violated = !report.equivalence_holds(a.tol);
    if violated {
        warnings.push(format!(
            "equivalence violation: max_rel_discrepancy {:e} exceeds tolerance {:e}",
            report.max_rel_discrepancy, a.tol
        ));
    }

    let params = AnalyzeParams {
        input: a.input.display().to_string(),
        ci_level: a.ci_level,
        tol: a.tol,
        mode: opts.mode,
        format: a.format,
    };
    let mut table = Table::new()
        .row("units", exp.n_units())
        .row(
            "treated / control",
            format!("{} / {}", exp.n_treat(), exp.n_control()),
        )
        .row("clusters", exp.n_clusters())
        .float("alpha_hat", report.estimate.alpha_hat)
        .float("tau_hat", report.estimate.tau_hat)
        .float("var_sandwich", report.var_sandwich)
        .float("var_simplified", report.var_simplified)
        .float("var_delta_pop", report.var_delta_pop);
    if let Some(v) = report.var_delta_sample {
        table = table.float("var_delta_sample", v);
    }
    table = table
        .float("max_rel_discrepancy", report.max_rel_discrepancy)
        .row(
            &format!("ci ({}, {})", sig6(a.ci_level), opts.mode),
            format!("[{}, {}]", sig6(report.ci_low), sig6(report.ci_high)),
        );
    io.emit("analyze", &params, &report, &warnings, table)?;
    if violated {
        if io.format == Format::Json {
            writeln!(io.err, "equivalence violation (exit {EXIT_EQUIVALENCE})")?;
        }
        return Ok(EXIT_EQUIVALENCE);
    }
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct SimulateParams {
    #[serde(flatten)]
    sim: SimParams,
    output: String,
}

#[derive(Serialize)]
struct SimulateResult {
    output: String,
    n_units: usize,
    n_treat: usize,
    n_control: usize,
    n_clusters: usize,
}

fn realized(records: &[UnitRecord]) -> (usize, usize, usize) {
    let n_treat = records.iter().filter(|r| r.w == 1).count();
    let mut ids: Vec<&str> = records.iter().map(|r| r.cluster_id.as_str()).collect();
    ids.sort_unstable();
    ids.dedup();
    (n_treat, records.len() - n_treat, ids.len())
}

fn cmd_simulate(a: &SimulateArgs, io: &mut Io) -> Result<i32, Failure> {
    let config = a.sim.config();
    let records = generate(&config)?;
    let file = File::create(&a.output)
        .map_err(|e| invalid(format!("cannot write {}: {e}", a.output.display())))?;
    write_csv(&records, BufWriter::new(file))?;

    let (n_treat, n_control, n_clusters) = realized(&records);
    let mut warnings = Vec::new();
    if n_clusters < config.n_clusters {
        warnings.push(format!(
            "{} cluster(s) drew size 0 and have no rows",
            config.n_clusters - n_clusters
        ));
    }
    if n_treat == 0 || n_control == 0 {
        warnings.push("an arm is empty; analyze will reject this file".into());
    }
    let result = SimulateResult {
        output: a.output.display().to_string(),
        n_units: records.len(),
        n_treat,
        n_control,
        n_clusters,
    };
    let table = Table::new()
        .row("output", &result.output)
        .row("N", result.n_units)
        .row("N_T", n_treat)
        .row("N_C", n_control)
        .row("clusters", n_clusters)
        .row("seed", config.seed);
    let params = SimulateParams {
        sim: SimParams::new(config),
        output: result.output.clone(),
    };
    io.emit("simulate", &params, &result, &warnings, table)?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct CheckParams {
    seeds: u64,
    tol: f64,
    #[serde(flatten)]
    sim: SimParams,
}

fn cmd_check(a: &CheckArgs, io: &mut Io) -> Result<i32, Failure> {
    check_tol(a.tol)?;
    if a.seeds < 1 {
        return Err(invalid("--seeds must be at least 1"));
    }
    let config = a.sim.config();
    let summary = equivalence_sweep(&config, a.seeds, a.tol)?;

    let mut warnings = Vec::new();
    if summary.skipped > 0 {
        warnings.push(format!("{} seed(s) skipped: empty arm", summary.skipped));
    }
    let worst = summary
        .worst_seed
        .map_or_else(|| "-".to_string(), |s| s.to_string());
    let table = Table::new()
        .row("seeds", summary.seeds)
        .row("evaluated", summary.evaluated)
        .row("skipped", summary.skipped)
        .float("max_discrepancy", summary.max_discrepancy)
        .row("worst_seed", &worst)
        .float("tolerance", summary.tolerance)
        .row("passed", summary.passed);
    let params = CheckParams {
        seeds: a.seeds,
        tol: a.tol,
        sim: SimParams::new(config),
    };
    io.emit("check", &params, &summary, &warnings, table)?;
    if !summary.passed {
        writeln!(
            io.err,
            "equivalence violation: max discrepancy {:e} > tolerance {:e} at seed {worst}; \
             reproduce with `clustervar simulate --seed {worst}` and the same generator flags",
            summary.max_discrepancy, a.tol
        )?;
        return Ok(EXIT_EQUIVALENCE);
    }
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct CoverageParams {
    replications: u64,
    ci_level: f64,
    #[serde(flatten)]
    sim: SimParams,
    seed_derivation: &'static str,
}

fn cmd_coverage(a: &CoverageArgs, io: &mut Io) -> Result<i32, Failure> {
    let config = a.sim.config();
    let result = coverage_study(&config, a.replications, a.ci_level)?;

    let mut warnings = Vec::new();
    if result.skipped > 0 {
        warnings.push(format!(
            "{} replication(s) skipped: empty arm",
            result.skipped
        ));
    }
    let table = Table::new()
        .row("replications", result.replications)
        .row("skipped", result.skipped)
        .row("covered", result.covered)
        .float("coverage_rate", result.coverage_rate)
        .float("mean_tau_hat", result.mean_tau_hat)
        .float("mean_variance", result.mean_variance)
        .float(
            "empirical_variance_of_tau_hat",
            result.empirical_variance_of_tau_hat,
        );
    let params = CoverageParams {
        replications: a.replications,
        ci_level: a.ci_level,
        sim: SimParams::new(config),
        seed_derivation: "splitmix64(seed ^ splitmix64(replication))",
    };
    io.emit("coverage", &params, &result, &warnings, table)?;
    Ok(EXIT_OK)
}
