//! The `bdg` command line.
//!
//! Every command writes a JSON [`Record`] holding the command with all its
//! parameters, so `bdg replay --record FILE` reruns it. CSV tables go to their own
//! files, each with a `.json` record beside it.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use bdg_core::critical::{find_critical, find_regime_interval, CriticalConfig, RegimeInterval};
use bdg_core::densities::{eval_fh, eval_g, SeriesParams};
use bdg_core::extension::{concavity_search, ConcavityLattice, ConcavityTriple, ExtendedValue, HedgeEvaluator, State};
use bdg_core::oide::{solve, GridPolicy, Regime, RegimeThresholds, SolverParams};
use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{output, write_density_csv, write_grid_csv, write_json, write_surface_csv, DensityRow, Record, SurfaceRow};
use crate::mc::{moment_dichotomy, CappedMoment, PathConfig, StepRule};
use crate::runner::{Runner, THREADS_ENV};
use crate::verify::{self, last_growth, Report, Suite, REFERENCE_C, REFERENCE_DAMPED_BELOW, REFERENCE_T0};

#[derive(Debug, Parser)]
#[command(
    name = "bdg",
    version,
    about = "Sharp square-root BDG constant: solver, extension and Monte-Carlo checks",
    disable_help_flag = true,
    disable_version_flag = true,
    disable_help_subcommand = true
)]
pub struct Cli {
    /// Print help.
    #[arg(long, action = ArgAction::Help, global = true)]
    help: Option<bool>,

    /// Print version.
    #[arg(long, action = ArgAction::Version)]
    version: Option<bool>,

    /// Worker threads; 0 uses every core.
    #[arg(long, env = THREADS_ENV, global = true)]
    pub threads: Option<usize>,

    /// Output file for the JSON record (or the CSV table); stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Backward solve for given `C` and `t0` (or a sweep of `t0`).
    #[command(disable_help_flag = true)]
    Solve(SolveArgs),
    /// Bisection for the critical pair, or the divergence interval at one `C`.
    #[command(disable_help_flag = true)]
    Critical(CriticalArgs),
    /// Export `U` and `U_b` on a lattice of states.
    #[command(disable_help_flag = true)]
    Extend(ExtendArgs),
    /// Run a verification battery; exits nonzero when a check fails.
    #[command(disable_help_flag = true)]
    Verify(VerifyArgs),
    /// Tabulate the hitting densities `f^h` and `g`.
    #[command(disable_help_flag = true)]
    Densities(DensitiesArgs),
    /// Capped half-moments of the region-hitting time.
    #[command(disable_help_flag = true)]
    Dichotomy(DichotomyArgs),
    /// Rerun the command stored in a JSON record.
    #[command(disable_help_flag = true)]
    Replay(ReplayArgs),
}

/// `lo:hi:n`, `n` evenly spaced points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Span {
    pub fn points(&self) -> Vec<f64> {
        if self.n == 1 {
            return vec![self.lo];
        }
        (0..self.n)
            .map(|i| self.lo + (self.hi - self.lo) * i as f64 / (self.n - 1) as f64)
            .collect()
    }
}

impl FromStr for Span {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let [lo, hi, n] = parts[..] else {
            return Err(format!("expected lo:hi:n, got {s:?}"));
        };
        let num = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}"));
        let span = Span {
            lo: num(lo)?,
            hi: num(hi)?,
            n: n.trim().parse().map_err(|e| format!("{n:?}: {e}"))?,
        };
        if span.n == 0 || !(span.lo <= span.hi) {
            return Err(format!("need lo <= hi and n >= 1 in {s:?}"));
        }
        Ok(span)
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.lo, self.hi, self.n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[command(group = clap::ArgGroup::new("pasting").required(true).args(["t0", "t0_sweep"]))]
pub struct SolveArgs {
    /// Constant `C` on the stopping boundary.
    #[arg(long = "C")]
    #[serde(rename = "C")]
    pub c: f64,
    /// Pasting point `t0`.
    #[arg(long)]
    pub t0: Option<f64>,
    /// Sweep of pasting points as `lo:hi:n`.
    #[arg(long)]
    pub t0_sweep: Option<Span>,
    /// Exponent `p` of the moment `E[tau^{p/2}]`.
    #[arg(long, default_value_t = 1.0)]
    pub p: f64,
    /// Smallest time the solve reaches.
    #[arg(long, default_value_t = 1e-5)]
    pub t_min: f64,
    /// Below this time the fast mode is damped rather than followed.
    #[arg(long, default_value_t = GridPolicy::default().damped_below)]
    pub damped_below: f64,
    /// Largest time step.
    #[arg(long, default_value_t = GridPolicy::default().max_step)]
    pub max_step: f64,
    /// Directory for one `t,U,analytic_floor` CSV per pasting point.
    #[arg(long)]
    pub csv_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub t0: f64,
    pub regime: Regime,
    pub pasting_gap: f64,
    pub u_at_floor: f64,
    pub t_last: f64,
    pub points: usize,
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct CriticalArgs {
    /// Exponent `p` of the moment `E[tau^{p/2}]`.
    #[arg(long, default_value_t = 1.0)]
    pub p: f64,
    /// Report the divergence interval at `--C` instead of bisecting.
    #[arg(long, requires = "c")]
    pub emit_interval: bool,
    /// Constant for `--emit-interval`.
    #[arg(long = "C")]
    #[serde(rename = "C")]
    pub c: Option<f64>,
    /// Bisection tolerance in `C`.
    #[arg(long, default_value_t = CriticalConfig::default().tol_c)]
    pub tol_c: f64,
    /// Pasting points per scan of the `t0` range.
    #[arg(long, default_value_t = CriticalConfig::default().scan_points)]
    pub scan_points: usize,
    /// Range of the constant as `lo:hi`.
    #[arg(long, value_parser = parse_pair, default_value = "1:1.6")]
    pub c_range: (f64, f64),
    /// Range of the pasting point as `lo:hi`.
    #[arg(long, value_parser = parse_pair, default_value = "0.3:2")]
    pub t0_range: (f64, f64),
}

fn parse_pair(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected lo:hi, got {s:?}"))?;
    let num = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}"));
    Ok((num(a)?, num(b)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CriticalOutput {
    Pair(bdg_core::critical::CriticalResult),
    Interval(Option<RegimeInterval>),
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ExtendArgs {
    /// Constant `C` of the boundary solution.
    #[arg(long = "C", default_value_t = REFERENCE_C)]
    #[serde(rename = "C")]
    pub c: f64,
    /// Pasting point `t0` of the boundary solution.
    #[arg(long, default_value_t = REFERENCE_T0)]
    pub t0: f64,
    /// Exponent `p` of the moment `E[tau^{p/2}]`.
    #[arg(long, default_value_t = 1.0)]
    pub p: f64,
    #[arg(long, default_value_t = REFERENCE_DAMPED_BELOW)]
    pub damped_below: f64,
    /// Times of the lattice as `lo:hi:n`.
    #[arg(long, default_value = "0:2:41")]
    pub t_range: Span,
    /// Positions, evenly spaced over `[-bstar, bstar]`.
    #[arg(long, default_value_t = 21)]
    pub b_points: usize,
    /// Running maximum `b*` of every lattice state.
    #[arg(long, default_value_t = 1.0)]
    pub bstar: f64,
    /// Finite-difference step of `U_b`, relative to `bstar`.
    #[arg(long, default_value_t = 1e-4)]
    pub fd_step: f64,
    /// Also search the default lattice for a concavity violation.
    #[arg(long)]
    pub concavity: bool,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtendOutput {
    pub c: f64,
    pub t0: f64,
    pub pasting_gap: f64,
    pub concavity: Option<ConcavityTriple>,
    /// Present for JSON output; CSV output carries the rows in the table.
    pub rows: Option<Vec<SurfaceRow>>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct VerifyArgs {
    #[arg(value_enum)]
    pub suite: Suite,
    /// Seed of the path streams.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Override the path counts of the Monte-Carlo batteries.
    #[arg(long)]
    pub n_paths: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct DensitiesArgs {
    /// Corridor widening `h` of `f^h`.
    #[arg(long, default_value_t = 0.5)]
    pub h: f64,
    /// Times as `lo:hi:n`.
    #[arg(long, default_value = "0.01:5:500")]
    pub s_range: Span,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct DichotomyArgs {
    /// Region thresholds, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0.7,1.2")]
    pub thresholds: Vec<f64>,
    /// Time caps, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "10,100,1000,10000")]
    pub caps: Vec<f64>,
    /// Paths per threshold.
    #[arg(long, default_value_t = 20_000)]
    pub n_paths: usize,
    /// Step before the region clock starts at time 1.
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    /// Steps after time 1 are `ratio * t`.
    #[arg(long, default_value_t = 1e-4)]
    pub ratio: f64,
    /// Seed of the path streams.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DichotomyRow {
    pub threshold: f64,
    pub moments: Vec<CappedMoment>,
    /// Relative increase across the last cap decade.
    pub growth: f64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    /// JSON record written by an earlier run.
    #[arg(long)]
    pub record: PathBuf,
}

/// What a run produced, for the exit status.
pub enum Outcome {
    Done,
    Failed(Vec<String>),
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    let runner = Runner::configured(cli.threads)?;
    execute(&cli.command, cli.out.as_deref(), &runner)
}

pub fn execute(command: &Command, out: Option<&Path>, runner: &Runner) -> Result<Outcome> {
    match command {
        Command::Solve(args) => {
            let result = cmd_solve(args)?;
            write_json(output(out)?, &Record::new(command, result))?;
        }
        Command::Critical(args) => {
            let result = cmd_critical(args, runner)?;
            write_json(output(out)?, &Record::new(command, result))?;
        }
        Command::Extend(args) => {
            let (result, rows) = cmd_extend(args, runner)?;
            match args.format {
                Format::Json => write_json(output(out)?, &Record::new(command, ExtendOutput { rows: Some(rows), ..result }))?,
                Format::Csv => {
                    write_surface_csv(output(out)?, &rows)?;
                    write_sidecar(out, &Record::new(command, result))?;
                }
            }
        }
        Command::Verify(args) => {
            let report = cmd_verify(args, runner)?;
            write_json(output(out)?, &Record::new(command, &report))?;
            if !report.passed {
                return Ok(Outcome::Failed(report.failures().map(|c| c.name.clone()).collect()));
            }
        }
        Command::Densities(args) => {
            let rows = cmd_densities(args)?;
            match args.format {
                Format::Json => write_json(output(out)?, &Record::new(command, rows))?,
                Format::Csv => {
                    write_density_csv(output(out)?, &rows)?;
                    write_sidecar(out, &Record::new(command, ()))?;
                }
            }
        }
        Command::Dichotomy(args) => {
            let result = cmd_dichotomy(args, runner)?;
            write_json(output(out)?, &Record::new(command, result))?;
        }
        Command::Replay(args) => {
            let text = std::fs::read_to_string(&args.record)?;
            let record: Record<Command, serde_json::Value> = serde_json::from_str(&text)?;
            if matches!(record.command, Command::Replay(_)) {
                return Err(Error::Config("a record cannot replay another replay".into()));
            }
            return execute(&record.command, out, runner);
        }
    }
    Ok(Outcome::Done)
}

/// The record of a CSV table goes to `<table>.json`; nothing when the table went to stdout.
fn write_sidecar<T: Serialize>(table: Option<&Path>, record: &T) -> Result<()> {
    if let Some(path) = table {
        let mut name = path.as_os_str().to_owned();
        name.push(".json");
        write_json(output(Some(Path::new(&name)))?, record)?;
    }
    Ok(())
}

pub fn cmd_solve(args: &SolveArgs) -> Result<Vec<SolveSummary>> {
    let t0s = match (args.t0, args.t0_sweep) {
        (Some(t0), None) => vec![t0],
        (None, Some(span)) => span.points(),
        _ => return Err(Error::Config("give exactly one of --t0 and --t0-sweep".into())),
    };
    if let Some(dir) = &args.csv_dir {
        std::fs::create_dir_all(dir)?;
    }
    let grid = GridPolicy {
        damped_below: args.damped_below,
        max_step: args.max_step,
        ..GridPolicy::default()
    };
    t0s.iter()
        .enumerate()
        .map(|(k, &t0)| {
            let params = SolverParams::new(args.c, t0)
                .with_p(args.p)
                .with_t_min(args.t_min)
                .with_grid(grid);
            let sol = solve(&params, &RegimeThresholds::default())?;
            let csv = match &args.csv_dir {
                Some(dir) => {
                    let path = dir.join(format!("grid_{k:03}.csv"));
                    write_grid_csv(output(Some(&path))?, &sol)?;
                    Some(path)
                }
                None => None,
            };
            Ok(SolveSummary {
                t0,
                regime: sol.regime,
                pasting_gap: sol.pasting_gap(),
                u_at_floor: sol.u_at_floor,
                t_last: sol.t_last(),
                points: sol.ts.len(),
                csv,
            })
        })
        .collect()
}

pub fn critical_config(args: &CriticalArgs) -> CriticalConfig {
    CriticalConfig {
        tol_c: args.tol_c,
        scan_points: args.scan_points,
        c_range: args.c_range,
        t0_range: args.t0_range,
        ..CriticalConfig::default()
    }
}

pub fn cmd_critical(args: &CriticalArgs, runner: &Runner) -> Result<CriticalOutput> {
    let config = critical_config(args);
    if args.emit_interval {
        let c = args.c.ok_or_else(|| Error::Config("--emit-interval needs --C".into()))?;
        return Ok(CriticalOutput::Interval(find_regime_interval(runner, c, args.p, config.t0_range, &config)?));
    }
    Ok(CriticalOutput::Pair(find_critical(runner, args.p, &config)?))
}

pub fn cmd_extend(args: &ExtendArgs, runner: &Runner) -> Result<(ExtendOutput, Vec<SurfaceRow>)> {
    if args.b_points < 2 || !(args.bstar > 0.0) {
        return Err(Error::Config("need --b-points >= 2 and --bstar > 0".into()));
    }
    let mut params = SolverParams::new(args.c, args.t0).with_p(args.p);
    params.grid.damped_below = args.damped_below;
    let ev = ExtendedValue::new(solve(&params, &RegimeThresholds::default())?)?;
    let he = HedgeEvaluator::new(ev.clone()).with_fd_step(args.fd_step)?;
    let ts = args.t_range.points();
    let bs: Vec<f64> = (0..args.b_points)
        .map(|j| args.bstar * (-1.0 + 2.0 * j as f64 / (args.b_points - 1) as f64))
        .collect();
    let cells = runner.map(ts.len() * bs.len(), |k| {
        let state = State::new(ts[k / bs.len()], bs[k % bs.len()], args.bstar);
        Ok::<_, bdg_core::Error>(SurfaceRow {
            t: state.t,
            b: state.b,
            bstar: state.bstar,
            u: ev.eval(state)?,
            h: he.integrand(state)?,
        })
    });
    let rows = cells.into_iter().collect::<bdg_core::Result<Vec<_>>>()?;
    let concavity = if args.concavity {
        Some(concavity_search(&ev, &ConcavityLattice::default())?)
    } else {
        None
    };
    let result = ExtendOutput {
        c: ev.c(),
        t0: ev.t0(),
        pasting_gap: ev.base.pasting_gap(),
        concavity,
        rows: None,
    };
    Ok((result, rows))
}

pub fn cmd_verify(args: &VerifyArgs, runner: &Runner) -> Result<Report> {
    let Some(n) = args.n_paths else {
        return verify::run_suite(args.suite, args.seed, runner);
    };
    match args.suite {
        Suite::Densities => verify::densities_battery(&SeriesParams::default()),
        Suite::Bdg => {
            let settings = verify::BdgSettings { n_paths: n, ..Default::default() };
            verify::bdg_battery(&verify::reference_value()?, &settings, args.seed, runner)
        }
        Suite::Dichotomy => {
            let settings = verify::DichotomySettings {
                finite_paths: n,
                infinite_paths: n,
                ..Default::default()
            };
            verify::dichotomy_battery(&settings, args.seed, runner)
        }
        Suite::Hedging => {
            let settings = verify::HedgingSettings { n_paths: n, ..Default::default() };
            verify::hedging_battery(&verify::reference_value()?, &settings, args.seed, runner)
        }
    }
}

pub fn cmd_densities(args: &DensitiesArgs) -> Result<Vec<DensityRow>> {
    let series = SeriesParams::default();
    args.s_range
        .points()
        .into_iter()
        .map(|s| {
            Ok(DensityRow {
                s,
                f_h: eval_fh(args.h, s, &series)?,
                g: eval_g(s, &series)?,
            })
        })
        .collect()
}

pub fn cmd_dichotomy(args: &DichotomyArgs, runner: &Runner) -> Result<Vec<DichotomyRow>> {
    let horizon = args.caps.iter().copied().fold(1.0, f64::max);
    let config = PathConfig::new(args.dt, horizon, args.n_paths, args.seed).with_steps(StepRule::Proportional { from: 1.0, ratio: args.ratio });
    args.thresholds
        .iter()
        .map(|&threshold| {
            let moments = moment_dichotomy(threshold, &config, &args.caps, runner)?;
            Ok(DichotomyRow {
                threshold,
                growth: last_growth(&moments),
                moments,
            })
        })
        .collect()
}
