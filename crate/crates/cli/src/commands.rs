//! Command-line parsing and dispatch for the `sgnet` binary.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use sgnet_core::gainop::{DEFAULT_KLEENE_EPS, DEFAULT_KLEENE_MAX_DEPTH};
use sgnet_core::kfunc::ScalarFn;

use crate::config::{AnalysisSpec, FnRef, GridSpec, InputSpec, NetworkSpec, OperatorSpec, Scenario, SCHEMA_VERSION};
use crate::report::{merge_reports, Report, Table};
use crate::run::execute;
use crate::{run_file, CliError};

#[derive(Debug, Parser)]
#[command(name = "sgnet", version, about = "Small-gain analysis of interconnected ISS networks")]
pub struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, env = "SGNET_JOBS", global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every analysis of a scenario file and write the report and tables.
    Run {
        config: PathBuf,
        /// Output directory, overriding the scenario's `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one condition check and print its step as JSON.
    Analyze(AnalyzeArgs),
    /// Print the closure Q(r1) as CSV `r,index,value`.
    Star(StarArgs),
    /// Build a path of strict decay and print its samples as CSV.
    Path(PathArgs),
    /// Simulate a network and print the first trajectory with its V column.
    Simulate(SimulateArgs),
    /// Concatenate reports, failing on steps that disagree.
    ReportMerge {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        /// Write the merged report here instead of stdout.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Example55,
    Cascade,
    Twonode,
}

#[derive(Debug, Clone, Args)]
pub struct OperatorArgs {
    #[arg(long, value_enum)]
    pub preset: Preset,
    /// Truncation window (ignored by twonode).
    #[arg(long, default_value_t = 64)]
    pub window: usize,
    /// Link gain slope of the cascade.
    #[arg(long, default_value_t = 0.5)]
    pub slope: f64,
    /// Gain γ_12 of twonode.
    #[arg(short, default_value_t = 2.0)]
    pub a: f64,
    /// Gain γ_21 of twonode.
    #[arg(short, default_value_t = 0.2)]
    pub b: f64,
}

impl OperatorArgs {
    fn spec(&self) -> OperatorSpec {
        match self.preset {
            Preset::Example55 => OperatorSpec::Example55 { window: self.window },
            Preset::Cascade => OperatorSpec::Cascade { window: self.window, slope: self.slope },
            Preset::Twonode => OperatorSpec::Twonode { a: self.a, b: self.b },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Check {
    Sgc,
    StrongSgc,
    MaxRobustSgc,
    SgcCycles,
    Ugs,
    Ugas,
    Chain,
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub operator: OperatorArgs,
    #[arg(long, value_enum)]
    pub check: Check,
    /// ω of the max-robust check.
    #[arg(long, value_parser = parse_fn, default_value = "linear:0.5")]
    pub omega: ScalarFn,
    /// ρ of the strong check.
    #[arg(long, value_parser = parse_fn, default_value = "linear:0.1")]
    pub rho: ScalarFn,
    /// η of the chain condition.
    #[arg(long, value_parser = parse_fn, default_value = "linear:0.5")]
    pub eta: ScalarFn,
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 16)]
    pub ij_bound: usize,
    #[arg(long, default_value_t = 64)]
    pub k_max: usize,
    #[arg(long, default_value_t = 0.5)]
    pub decay_target: f64,
    /// Radii of the UGS/UGAS tables; the first is also the chain radius.
    #[arg(long = "r", num_args = 1.., default_values_t = [1.0])]
    pub radii: Vec<f64>,
    #[arg(long, default_value_t = 32)]
    pub n_max: usize,
    /// Cycle check grid `lo:hi[:per_decade]`.
    #[arg(long, value_parser = parse_grid)]
    pub r_grid: Option<GridSpec>,
    /// Skip the re-run at twice the window.
    #[arg(long)]
    pub no_drift: bool,
}

#[derive(Debug, Clone, Args)]
pub struct StarArgs {
    #[command(flatten)]
    pub operator: OperatorArgs,
    #[arg(long = "r", num_args = 1.., default_values_t = [1.0])]
    pub radii: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_KLEENE_EPS)]
    pub eps: f64,
    #[arg(long, default_value_t = DEFAULT_KLEENE_MAX_DEPTH)]
    pub m_max: usize,
}

#[derive(Debug, Clone, Args)]
pub struct PathArgs {
    #[command(flatten)]
    pub operator: OperatorArgs,
    #[arg(long, value_parser = parse_fn, default_value = "linear:0.1")]
    pub theta: ScalarFn,
    /// Path grid `lo:hi[:per_decade]`.
    #[arg(long, value_parser = parse_grid, default_value = "1e-3:10:64")]
    pub r_grid: GridSpec,
    #[arg(long, default_value_t = DEFAULT_KLEENE_EPS)]
    pub eps: f64,
    #[arg(long, default_value_t = DEFAULT_KLEENE_MAX_DEPTH)]
    pub m_max: usize,
    /// Contraction certificate; sets σ_max = ω⁻¹.
    #[arg(long, value_parser = parse_fn)]
    pub omega: Option<ScalarFn>,
    /// Depth of the UGAS precondition check.
    #[arg(long)]
    pub k_max: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NetworkPreset {
    Cascade,
    Twonode,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub preset: NetworkPreset,
    /// Number of cascade nodes.
    #[arg(long, default_value_t = 50)]
    pub n: usize,
    /// Cascade coupling `c` in `ẋ_i = −x_i + c·x_{i−1} + u_i`; the gains are `2c`.
    #[arg(long, default_value_t = 0.25)]
    pub coupling: f64,
    #[arg(short, default_value_t = 2.0)]
    pub a: f64,
    #[arg(short, default_value_t = 0.2)]
    pub b: f64,
    #[arg(long, default_value_t = 4.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    /// `zero`, `constant:c`, `step:t0:c` or `random-step:max`.
    #[arg(long, value_parser = parse_input, default_value = "zero")]
    pub input: InputSpec,
    #[arg(long, default_value_t = 1)]
    pub trajectories: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_parser = parse_fn, default_value = "linear:0.1")]
    pub theta: ScalarFn,
    #[arg(long, value_parser = parse_grid, default_value = "1e-3:10:64")]
    pub r_grid: GridSpec,
    /// Print every `every`-th sample.
    #[arg(long, default_value_t = 10)]
    pub every: usize,
}

/// Parses `zero`, `identity`, `linear:s`, `power:c:p`, `saturating:c:h`,
/// or an inline TOML table such as `{kind = "pwl", knots = [[0, 0], [1, 2]]}`.
pub fn parse_fn(s: &str) -> Result<ScalarFn, String> {
    let f = if s.trim_start().starts_with('{') {
        #[derive(serde::Deserialize)]
        struct Wrapper {
            f: ScalarFn,
        }
        toml::from_str::<Wrapper>(&format!("f = {s}")).map_err(|e| e.message().to_string())?.f
    } else {
        let parts: Vec<&str> = s.split(':').collect();
        let nums = |n: usize| -> Result<Vec<f64>, String> {
            if parts.len() != n + 1 {
                return Err(format!("`{}` takes {n} parameter(s)", parts[0]));
            }
            parts[1..].iter().map(|p| p.parse::<f64>().map_err(|e| format!("`{p}`: {e}"))).collect()
        };
        match parts[0] {
            "zero" => ScalarFn::Zero,
            "identity" => ScalarFn::Identity,
            "linear" => ScalarFn::linear(nums(1)?[0]),
            "power" => {
                let v = nums(2)?;
                ScalarFn::power(v[0], v[1])
            }
            "saturating" => {
                let v = nums(2)?;
                ScalarFn::saturating(v[0], v[1])
            }
            other => {
                return Err(format!(
                    "unknown function `{other}` (zero, identity, linear, power, saturating or an inline table)"
                ))
            }
        }
    };
    f.validate().map_err(|e| e.to_string())?;
    Ok(f)
}

/// Parses `lo:hi` or `lo:hi:per_decade`.
pub fn parse_grid(s: &str) -> Result<GridSpec, String> {
    let parts: Vec<&str> = s.split(':').collect();
    if !(2..=3).contains(&parts.len()) {
        return Err("expected lo:hi or lo:hi:per_decade".into());
    }
    let num = |p: &str| p.parse::<f64>().map_err(|e| format!("`{p}`: {e}"));
    let (lo, hi) = (num(parts[0])?, num(parts[1])?);
    if !(lo > 0.0 && hi > lo) {
        return Err(format!("need 0 < lo < hi, got {lo}:{hi}"));
    }
    let per_decade = match parts.get(2) {
        Some(p) => p.parse().map_err(|e| format!("`{p}`: {e}"))?,
        None => sgnet_core::path::DEFAULT_PATH_PER_DECADE,
    };
    Ok(GridSpec { lo, hi, per_decade })
}

/// Parses `zero`, `constant:c`, `step:t0:c` or `random-step:max`.
pub fn parse_input(s: &str) -> Result<InputSpec, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let nums = |n: usize| -> Result<Vec<f64>, String> {
        if parts.len() != n + 1 {
            return Err(format!("`{}` takes {n} parameter(s)", parts[0]));
        }
        parts[1..].iter().map(|p| p.parse::<f64>().map_err(|e| format!("`{p}`: {e}"))).collect()
    };
    Ok(match parts[0] {
        "zero" if parts.len() == 1 => InputSpec::Zero,
        "constant" => InputSpec::Constant { value: nums(1)?[0] },
        "step" => {
            let v = nums(2)?;
            InputSpec::Step { t0: v[0], value: v[1] }
        }
        "random-step" => InputSpec::RandomStep { max_magnitude: nums(1)?[0] },
        other => return Err(format!("unknown input `{other}` (zero, constant:c, step:t0:c, random-step:max)")),
    })
}

fn scenario(name: &str, operator: OperatorSpec, network: Option<NetworkSpec>, analyses: Vec<AnalysisSpec>) -> Scenario {
    Scenario {
        schema_version: SCHEMA_VERSION,
        name: name.to_string(),
        functions: Default::default(),
        operator,
        network,
        analyses,
        output_dir: None,
        drift: true,
    }
}

fn analyze_spec(args: &AnalyzeArgs) -> AnalysisSpec {
    let f = |s: &ScalarFn| FnRef::Inline(s.clone());
    let (samples, seed) = (args.samples, args.seed);
    match args.check {
        Check::Sgc => AnalysisSpec::Sgc { label: None, samples, seed },
        Check::StrongSgc => AnalysisSpec::StrongSgc { label: None, rho: f(&args.rho), samples, seed },
        Check::MaxRobustSgc => {
            AnalysisSpec::MaxRobustSgc { label: None, omega: f(&args.omega), ij_bound: args.ij_bound, samples, seed }
        }
        Check::SgcCycles => AnalysisSpec::SgcCycles { label: None, r_grid: args.r_grid.clone() },
        Check::Ugs => AnalysisSpec::Ugs { label: None, radii: args.radii.clone(), k_max: args.k_max },
        Check::Ugas => AnalysisSpec::Ugas {
            label: None,
            radii: args.radii.clone(),
            k_max: args.k_max,
            decay_target: args.decay_target,
        },
        Check::Chain => AnalysisSpec::Chain {
            label: None,
            eta: f(&args.eta),
            r: args.radii[0],
            n_max: args.n_max,
            index_bound: None,
        },
    }
}

fn print_table(out: &mut dyn Write, table: &Table) -> Result<(), CliError> {
    table.write_csv(out)
}

fn find_table<'a>(tables: &'a [Table], suffix: &str) -> Result<&'a Table, CliError> {
    tables
        .iter()
        .find(|t| t.name.ends_with(suffix))
        .ok_or_else(|| CliError::Usage(format!("no `{suffix}` table produced")))
}

/// Prints refusal reasons to stderr so that table output stays clean.
fn report_refusals(report: &Report) {
    for step in &report.steps {
        if let Some(reason) = &step.reason {
            eprintln!("{}: refused: {reason}", step.id);
        }
    }
}

/// Caps the rayon worker pool; a no-op if the pool already exists.
pub fn configure_jobs(jobs: Option<usize>) -> Result<(), CliError> {
    if let Some(n) = jobs {
        if n == 0 {
            return Err(CliError::Usage("--jobs must be positive".into()));
        }
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Executes a parsed command, writing its primary output to `out`.
/// Returns the process exit code.
pub fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<i32, CliError> {
    configure_jobs(cli.jobs)?;
    match cli.command {
        Command::Run { config, out: dir } => {
            let report = run_file(&config, dir.as_deref())?;
            for step in &report.steps {
                let drift = step.drift.as_ref().map_or(String::new(), |d| {
                    format!(" (at N={}: {:?}{})", d.window, d.status, if d.changed { ", changed" } else { "" })
                });
                let reason = step.reason.as_ref().map_or(String::new(), |r| format!(": {r}"));
                writeln!(out, "{:<24} {:?}{drift}{reason}", step.id, step.status).map_err(stdout_err)?;
            }
            Ok(report.exit_code())
        }
        Command::Analyze(args) => {
            let mut s = scenario("analyze", args.operator.spec(), None, vec![analyze_spec(&args)]);
            s.drift = !args.no_drift;
            let run = execute(&s)?;
            let step = &run.report.steps[0];
            writeln!(out, "{}", serde_json::to_string_pretty(step)?).map_err(stdout_err)?;
            Ok(run.report.exit_code())
        }
        Command::Star(args) => {
            let spec = AnalysisSpec::Star { label: None, radii: args.radii, eps: args.eps, m_max: args.m_max };
            let run = execute(&scenario("star", args.operator.spec(), None, vec![spec]))?;
            report_refusals(&run.report);
            if let Ok(t) = find_table(&run.tables, "closure") {
                print_table(out, t)?;
            }
            Ok(run.report.exit_code())
        }
        Command::Path(args) => {
            let spec = AnalysisSpec::Path {
                label: None,
                theta: FnRef::Inline(args.theta),
                r_grid: args.r_grid,
                eps: args.eps,
                m_max: args.m_max,
                omega: args.omega.map(FnRef::Inline),
                k_max: args.k_max,
            };
            let run = execute(&scenario("path", args.operator.spec(), None, vec![spec]))?;
            report_refusals(&run.report);
            if let Ok(t) = find_table(&run.tables, "sigma") {
                print_table(out, t)?;
            }
            Ok(run.report.exit_code())
        }
        Command::Simulate(args) => {
            let (operator, network) = match args.preset {
                NetworkPreset::Cascade => (
                    OperatorSpec::Cascade { window: args.n, slope: 2.0 * args.coupling },
                    NetworkSpec::Cascade { n: args.n, coupling: args.coupling },
                ),
                NetworkPreset::Twonode => {
                    (OperatorSpec::Twonode { a: args.a, b: args.b }, NetworkSpec::Twonode { a: args.a, b: args.b })
                }
            };
            let analyses = vec![
                AnalysisSpec::Path {
                    label: None,
                    theta: FnRef::Inline(args.theta),
                    r_grid: args.r_grid,
                    eps: DEFAULT_KLEENE_EPS,
                    m_max: DEFAULT_KLEENE_MAX_DEPTH,
                    omega: None,
                    k_max: None,
                },
                AnalysisSpec::Simulate {
                    label: None,
                    trajectories: args.trajectories,
                    horizon: args.horizon,
                    dt: args.dt,
                    seed: args.seed,
                    x0_radius: 1.0,
                    input: args.input,
                    alpha_hat: FnRef::Inline(ScalarFn::linear(0.1)),
                    stride: 5e-3_f64.max(args.dt),
                    tol: 1e-6,
                    iss: false,
                    table_stride: args.every.max(1),
                },
            ];
            let run = execute(&scenario("simulate", operator, Some(network), analyses))?;
            report_refusals(&run.report);
            if let Ok(t) = find_table(&run.tables, "trajectory_0") {
                print_table(out, t)?;
            }
            Ok(run.report.exit_code())
        }
        Command::ReportMerge { reports, output } => {
            let loaded = reports.iter().map(|p| Report::load(p)).collect::<Result<Vec<_>, _>>()?;
            let merged = merge_reports(&loaded)?;
            let json = merged.to_json()?;
            match output {
                Some(path) => std::fs::write(&path, json).map_err(|e| CliError::io(&path, e))?,
                None => out.write_all(json.as_bytes()).map_err(stdout_err)?,
            }
            Ok(merged.exit_code())
        }
    }
}

fn stdout_err(e: std::io::Error) -> CliError {
    CliError::io(Path::new("<stdout>"), e)
}
