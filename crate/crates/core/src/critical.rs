//! Search for the critical pair `(Ĉ, t̂0)`.
//!
//! For fixed `C` the backward solutions diverge upwards for `t0` in an interval
//! `(t1(C), t2(C))` and downwards outside it; the interval is empty below the
//! critical constant and shrinks to `t̂0` as `C` decreases to it. The search
//! bisects on `C` with the predicate "a t0 scan finds upward divergence".
//!
//! Classifications of a scan are independent; they go through [`RegimeScan`] so a
//! caller with threads can evaluate a scan in parallel. The result does not depend
//! on the executor.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oide::{solve, GridPolicy, Regime, RegimeThresholds, SolutionGrid, SolverParams};

/// Evaluates a batch of independent solves, returning regimes in input order.
pub trait RegimeScan {
    fn classify_batch(&self, jobs: &[SolverParams], thresholds: &RegimeThresholds) -> Vec<Result<Regime>>;
}

/// Runs the batch on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl RegimeScan for Sequential {
    fn classify_batch(&self, jobs: &[SolverParams], thresholds: &RegimeThresholds) -> Vec<Result<Regime>> {
        jobs.iter().map(|job| classify(job, thresholds)).collect()
    }
}

/// Regime of one solve; an inconclusive sweep is retried once with a floor ten
/// times lower before being reported.
pub fn classify(params: &SolverParams, thresholds: &RegimeThresholds) -> Result<Regime> {
    let regime = solve(params, thresholds)?.regime;
    if regime != Regime::Inconclusive {
        return Ok(regime);
    }
    Ok(solve(&params.with_t_min(0.1 * params.t_min), thresholds)?.regime)
}

/// Search settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalConfig {
    pub c_range: (f64, f64),
    pub t0_range: (f64, f64),
    pub tol_c: f64,
    pub tol_t0: f64,
    /// Points of the initial `t0` scan.
    pub scan_points: usize,
    /// Width to which the edges `t1`, `t2` are bisected.
    pub edge_tol: f64,
    pub t_min: f64,
    pub grid: GridPolicy,
    pub thresholds: RegimeThresholds,
    /// Cap on outer bisection steps.
    pub max_iterations: usize,
}

impl Default for CriticalConfig {
    fn default() -> Self {
        Self {
            c_range: (1.0, 1.6),
            t0_range: (0.3, 2.0),
            tol_c: 1e-5,
            tol_t0: 0.02,
            scan_points: 64,
            edge_tol: 1e-4,
            t_min: 1e-5,
            grid: GridPolicy::default(),
            thresholds: RegimeThresholds::default(),
            max_iterations: 60,
        }
    }
}

impl CriticalConfig {
    pub fn validate(&self) -> Result<()> {
        let (c_lo, c_hi) = self.c_range;
        let (t_lo, t_hi) = self.t0_range;
        if !(c_lo > 0.0 && c_lo < c_hi) {
            return Err(Error::Domain("c_range must be an increasing positive pair"));
        }
        if !(t_lo > 0.0 && t_lo < t_hi) {
            return Err(Error::Domain("t0_range must be an increasing positive pair"));
        }
        if !(self.tol_c > 0.0 && self.tol_t0 > 0.0 && self.edge_tol > 0.0) {
            return Err(Error::Domain("tolerances must be positive"));
        }
        if self.scan_points < 2 {
            return Err(Error::EmptyLattice);
        }
        self.thresholds.validate()?;
        self.grid.validate()
    }

    fn params(&self, c: f64, t0: f64, p: f64) -> SolverParams {
        SolverParams::new(c, t0)
            .with_p(p)
            .with_t_min(self.t_min)
            .with_grid(self.grid)
    }
}

/// Why a regime interval may be unreliable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScanWarning {
    /// Fewer than two scan points fell inside the interval.
    NarrowInterval,
    /// The interval reaches the end of the search range, so that edge is not bracketed.
    TouchesRange,
}

/// The `t0` interval of upward divergence at a fixed `C`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeInterval {
    #[serde(rename = "C")]
    pub c: f64,
    pub t1: f64,
    pub t2: f64,
    pub p: f64,
    /// `(outside, inside)` scan bracket of `t1` after bisection, as `(lo, hi)`.
    pub t1_bracket: (f64, f64),
    /// `(inside, outside)` bracket of `t2`, as `(lo, hi)`.
    pub t2_bracket: (f64, f64),
    pub warning: Option<ScanWarning>,
}

impl RegimeInterval {
    pub fn width(&self) -> f64 {
        self.t2 - self.t1
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.t1 + self.t2)
    }
}

fn is_up(regime: Regime) -> bool {
    regime == Regime::PlusInfinity
}

/// Bisects `[outside, inside]` (either order) to `tol`, keeping the invariant that
/// `inside` diverges upwards. Returns the final `(outside, inside)`.
fn bisect_edge<F>(mut outside: f64, mut inside: f64, tol: f64, mut up: F) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<bool>,
{
    while (inside - outside).abs() > tol {
        let mid = 0.5 * (inside + outside);
        if mid == inside || mid == outside {
            break;
        }
        if up(mid)? {
            inside = mid;
        } else {
            outside = mid;
        }
    }
    Ok((outside, inside))
}

/// Scans `t0` over `search_range` at fixed `C` and bisects the edges of the
/// upward-divergence interval; `None` when no scan point diverges upwards.
pub fn find_regime_interval<S: RegimeScan>(
    scan: &S,
    c: f64,
    p: f64,
    search_range: (f64, f64),
    config: &CriticalConfig,
) -> Result<Option<RegimeInterval>> {
    config.validate()?;
    let (lo, hi) = search_range;
    if !(lo > 0.0 && lo < hi) {
        return Err(Error::Domain("search range must be an increasing positive pair"));
    }
    let n = config.scan_points;
    let grid: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
    let jobs: Vec<SolverParams> = grid.iter().map(|&t0| config.params(c, t0, p)).collect();
    let regimes = scan
        .classify_batch(&jobs, &config.thresholds)
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let first = match regimes.iter().position(|&r| is_up(r)) {
        Some(i) => i,
        None => return Ok(None),
    };
    let last = regimes.iter().rposition(|&r| is_up(r)).unwrap_or(first);

    let up = |t0: f64| -> Result<bool> { Ok(is_up(classify(&config.params(c, t0, p), &config.thresholds)?)) };
    let mut warning = (last - first < 1).then_some(ScanWarning::NarrowInterval);

    let t1_bracket = if first == 0 {
        warning = Some(ScanWarning::TouchesRange);
        (grid[0], grid[0])
    } else {
        bisect_edge(grid[first - 1], grid[first], config.edge_tol, up)?
    };
    let t2_bracket = if last == n - 1 {
        warning = Some(ScanWarning::TouchesRange);
        (grid[n - 1], grid[n - 1])
    } else {
        let (outside, inside) = bisect_edge(grid[last + 1], grid[last], config.edge_tol, up)?;
        (inside, outside)
    };
    Ok(Some(RegimeInterval {
        c,
        t1: 0.5 * (t1_bracket.0 + t1_bracket.1),
        t2: 0.5 * (t2_bracket.0 + t2_bracket.1),
        p,
        t1_bracket,
        t2_bracket,
        warning,
    }))
}

/// Result of [`find_critical`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalResult {
    pub c_hat: f64,
    pub t0_hat: f64,
    /// `(no interval, interval)`.
    pub c_bracket: (f64, f64),
    /// The interval found at `c_bracket.1`.
    pub t0_bracket: (f64, f64),
    pub p: f64,
    pub tol_c: f64,
    pub tol_t0: f64,
    pub iterations: usize,
    pub config: CriticalConfig,
}

/// Outer bisection on `C`.
///
/// Intervals are nested in `C`, so once one is found the next scan only covers the
/// previous interval (widened by one edge tolerance).
pub fn find_critical<S: RegimeScan>(scan: &S, p: f64, config: &CriticalConfig) -> Result<CriticalResult> {
    config.validate()?;
    let (mut c_lo, mut c_hi) = config.c_range;
    if find_regime_interval(scan, c_lo, p, config.t0_range, config)?.is_some() {
        return Err(Error::BracketFailure("an interval already exists at the lower end of c_range"));
    }
    let mut interval = find_regime_interval(scan, c_hi, p, config.t0_range, config)?
        .ok_or(Error::BracketFailure("no interval at the upper end of c_range"))?;

    let mut iterations = 0;
    while (c_hi - c_lo > config.tol_c || interval.width() > config.tol_t0) && iterations < config.max_iterations {
        iterations += 1;
        let c = 0.5 * (c_lo + c_hi);
        let range = (
            (interval.t1_bracket.0 - config.edge_tol).max(config.t0_range.0),
            (interval.t2_bracket.1 + config.edge_tol).min(config.t0_range.1),
        );
        match find_regime_interval(scan, c, p, range, config)? {
            Some(found) => {
                c_hi = c;
                interval = found;
            }
            None => c_lo = c,
        }
    }
    Ok(CriticalResult {
        c_hat: 0.5 * (c_lo + c_hi),
        t0_hat: interval.midpoint(),
        c_bracket: (c_lo, c_hi),
        t0_bracket: (interval.t1, interval.t2),
        p,
        tol_c: config.tol_c,
        tol_t0: config.tol_t0,
        iterations,
        config: *config,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Edge {
    Lower,
    Upper,
}

/// Which parameter was bisected to reach a regime edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EdgeParameter {
    T0,
    C,
}

/// A near-bounded solution at a regime edge.
///
/// The two bracketing solves agree down to `separation_t`; below it the grid is
/// continued with damped steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundedApproximant {
    pub grid: SolutionGrid,
    pub parameter: EdgeParameter,
    /// `(down, up)` values of the bisected parameter.
    pub bracket: (f64, f64),
    pub separation_t: f64,
}

/// Largest grid time of `a` where `a` and `b` differ by more than `tol`.
fn separation_time(a: &SolutionGrid, b: &SolutionGrid, tol: f64) -> f64 {
    let floor = a.t_last().max(b.t_last());
    for (&t, &u) in a.ts.iter().zip(&a.us) {
        if t < floor {
            return t;
        }
        match b.value(t) {
            Ok(v) if (u - v).abs() <= tol => {}
            _ => return t,
        }
    }
    floor
}

const EDGE_BISECTION_TOL: f64 = 1e-11;
const SEPARATION_TOL: f64 = 1e-4;

fn approximant_from_bracket<F>(down: f64, up: f64, parameter: EdgeParameter, config: &CriticalConfig, make: F) -> Result<BoundedApproximant>
where
    F: Fn(f64) -> SolverParams,
{
    let (down, up) = bisect_edge(down, up, EDGE_BISECTION_TOL, |x| Ok(is_up(classify(&make(x), &config.thresholds)?)))?;
    let resolved = |x: f64| {
        let mut params = make(x);
        params.grid.damped_below = 0.0;
        params.t_min = config.grid.damped_below.max(params.t_min);
        solve(&params, &config.thresholds)
    };
    let (a, b) = (resolved(down)?, resolved(up)?);
    let separation_t = separation_time(&a, &b, SEPARATION_TOL);
    let mid = 0.5 * (down + up);
    let mut params = make(mid);
    params.grid.damped_below = separation_t;
    let grid = solve(&params, &config.thresholds)?;
    Ok(BoundedApproximant {
        grid,
        parameter,
        bracket: (down, up),
        separation_t,
    })
}

/// The near-bounded solution at `t1(C)` (lower) or `t2(C)` (upper).
pub fn bounded_solution<S: RegimeScan>(scan: &S, c: f64, which: Edge, p: f64, config: &CriticalConfig) -> Result<BoundedApproximant> {
    let interval = find_regime_interval(scan, c, p, config.t0_range, config)?
        .ok_or(Error::BracketFailure("no upward-divergence interval at this C"))?;
    if interval.warning == Some(ScanWarning::TouchesRange) {
        return Err(Error::BracketFailure("interval edge not bracketed inside t0_range"));
    }
    let (down, up) = match which {
        Edge::Lower => interval.t1_bracket,
        Edge::Upper => (interval.t2_bracket.1, interval.t2_bracket.0),
    };
    approximant_from_bracket(down, up, EdgeParameter::T0, config, |t0| config.params(c, t0, p))
}

/// The critical solution: bisects `C` at `t0 = t0_hat` between the bracket of `result`.
pub fn critical_solution(result: &CriticalResult, config: &CriticalConfig) -> Result<BoundedApproximant> {
    let t0 = result.t0_hat;
    let p = result.p;
    let make = |c: f64| config.params(c, t0, p);
    let lo = result.c_bracket.0;
    // The flip at t0_hat lies above the minimum over t0; widen upwards until bracketed.
    let mut hi = result.c_bracket.1;
    let mut width = (hi - lo).max(config.tol_c);
    while !is_up(classify(&make(hi), &config.thresholds)?) {
        hi += width;
        width *= 2.0;
        if hi > config.c_range.1 {
            return Err(Error::BracketFailure("no upward divergence at t0_hat within c_range"));
        }
    }
    approximant_from_bracket(lo, hi, EdgeParameter::C, config, make)
}
