//! Monte-Carlo simulation of Brownian paths with running maximum `B* = max |B|`.
//!
//! Each path draws from its own ChaCha stream selected by `(seed, path index)`, and
//! per-path results are reduced in index order by pairwise summation, so estimates
//! are identical for any number of threads.
//!
//! Within a step the maximum of `|B|` is sampled from the Brownian-bridge law of
//! the maximum given both endpoints, which removes the `O(sqrt(dt))` bias of the
//! discretely monitored maximum.

use bdg_core::extension::{ExtendedValue, HedgeEvaluator, State};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::runner::Runner;

/// Time-step schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StepRule {
    /// Every step is `dt`.
    Fixed,
    /// Steps of `dt` up to time `from`, then `ratio * t`.
    Proportional { from: f64, ratio: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathConfig {
    pub dt: f64,
    /// Hard cap on the (absolute) time of every path.
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub start: State,
    /// Sample the within-step maximum from the bridge law.
    pub bridge: bool,
    pub steps: StepRule,
}

impl PathConfig {
    pub fn new(dt: f64, horizon: f64, n_paths: usize, seed: u64) -> Self {
        Self {
            dt,
            horizon,
            n_paths,
            seed,
            start: State::origin(),
            bridge: true,
            steps: StepRule::Fixed,
        }
    }

    pub fn with_start(mut self, start: State) -> Self {
        self.start = start;
        self
    }

    pub fn with_steps(mut self, steps: StepRule) -> Self {
        self.steps = steps;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.horizon.is_finite() && self.dt <= self.horizon / 100.0) {
            return Err(Error::Config("need 0 < dt <= horizon / 100".into()));
        }
        if self.n_paths == 0 {
            return Err(Error::Config("n_paths must be positive".into()));
        }
        if let StepRule::Proportional { from, ratio } = self.steps {
            if !(from > 0.0 && ratio > 0.0 && ratio < 1.0) {
                return Err(Error::Config("proportional steps need from > 0 and 0 < ratio < 1".into()));
            }
        }
        self.start.validate()?;
        Ok(())
    }

    fn step_at(&self, t: f64) -> f64 {
        match self.steps {
            StepRule::Fixed => self.dt,
            StepRule::Proportional { from, ratio } if t >= from => ratio * t,
            StepRule::Proportional { .. } => self.dt,
        }
    }
}

/// Stopping rules, evaluated at the end of each step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StoppingSpec {
    FixedTime(f64),
    /// First `s >= 1` with `s / B*(s)^2 >= threshold`.
    RegionHit(f64),
    /// First `s` at which `|B|` touches `B*` with `s / B*(s)^2 >= threshold`.
    RegionHitOnBoundary(f64),
    /// First time `|B|` reaches `1 + h`.
    CorridorExit(f64),
    CappedAt { cap: f64, inner: Box<StoppingSpec> },
}

impl StoppingSpec {
    pub fn capped(self, cap: f64) -> Self {
        Self::CappedAt { cap, inner: Box::new(self) }
    }

    fn compile(&self) -> Result<Rule> {
        let positive = |v: f64, what: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Config(format!("{what} must be positive")))
            }
        };
        Ok(match self {
            Self::FixedTime(t) => Rule { kind: Kind::Fixed, end: positive(*t, "fixed time")?, end_is_cap: false },
            Self::RegionHit(x) => Rule::open(Kind::Region(positive(*x, "threshold")?)),
            Self::RegionHitOnBoundary(x) => Rule::open(Kind::Boundary(positive(*x, "threshold")?)),
            Self::CorridorExit(h) => Rule::open(Kind::Corridor(1.0 + positive(*h, "corridor widening")?)),
            Self::CappedAt { cap, inner } => {
                let cap = positive(*cap, "cap")?;
                let mut rule = inner.compile()?;
                if cap < rule.end {
                    rule.end = cap;
                    rule.end_is_cap = true;
                }
                rule
            }
        })
    }
}

#[derive(Debug, Clone, Copy)]
enum Kind {
    Fixed,
    Region(f64),
    Boundary(f64),
    Corridor(f64),
}

#[derive(Debug, Clone, Copy)]
struct Rule {
    kind: Kind,
    end: f64,
    end_is_cap: bool,
}

impl Rule {
    fn open(kind: Kind) -> Self {
        Self { kind, end: f64::INFINITY, end_is_cap: true }
    }

    /// Time at which the region is entered if the maximum stays at `bstar`; steps
    /// land on it so a crossing and a new maximum never share a step.
    fn landmark(&self, bstar: f64) -> f64 {
        match self.kind {
            Kind::Region(x) => (x * bstar * bstar).max(1.0),
            Kind::Boundary(x) => x * bstar * bstar,
            Kind::Fixed | Kind::Corridor(_) => f64::INFINITY,
        }
    }

    fn stops(&self, t: f64, bstar: f64, touched: bool, step_max: f64) -> bool {
        match self.kind {
            Kind::Fixed => false,
            Kind::Region(x) => t >= 1.0 && t >= x * bstar * bstar,
            Kind::Boundary(x) => touched && t >= x * bstar * bstar,
            Kind::Corridor(level) => step_max >= level,
        }
    }
}

/// `U_b` tabulated in the self-similar coordinates `(t / b*^2, |b| / b*)`.
///
/// Rows are uniform in `t / b*^2` up to `uniform_until`, then geometric up to
/// `t_max`; beyond it the leading term of the large-time expansion is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HedgeTable {
    pub value: ExtendedValue,
    pub grid: HedgeGrid,
    t_nodes: Vec<f64>,
    n_uniform: usize,
    n_y: usize,
    slopes: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HedgeGrid {
    pub t_step: f64,
    pub uniform_until: f64,
    pub growth: f64,
    pub t_max: f64,
    pub y_step: f64,
}

impl Default for HedgeGrid {
    fn default() -> Self {
        Self {
            t_step: 0.01,
            uniform_until: 2.0,
            growth: 1.05,
            t_max: 1e4,
            y_step: 0.01,
        }
    }
}

impl HedgeTable {
    pub fn build(he: &HedgeEvaluator, grid: HedgeGrid, runner: &Runner) -> Result<Self> {
        if !(grid.t_step > 0.0 && grid.uniform_until > grid.t_step && grid.growth > 1.0 && grid.t_max > grid.uniform_until) {
            return Err(Error::Config("invalid hedge table grid".into()));
        }
        if !(grid.y_step > 0.0 && grid.y_step <= 0.5) {
            return Err(Error::Config("y_step must lie in (0, 1/2]".into()));
        }
        let n_uniform = (grid.uniform_until / grid.t_step).round() as usize;
        let mut t_nodes: Vec<f64> = (0..n_uniform).map(|i| i as f64 * grid.t_step).collect();
        let mut t = grid.uniform_until;
        while t < grid.t_max * grid.growth {
            t_nodes.push(t);
            t *= grid.growth;
        }
        let n_y = (1.0 / grid.y_step).round() as usize + 1;
        let rows = runner.map(t_nodes.len(), |i| {
            (0..n_y)
                .map(|j| {
                    let y = (j as f64 * grid.y_step).min(1.0);
                    he.normalized_slope(t_nodes[i], y)
                })
                .collect::<bdg_core::Result<Vec<f64>>>()
        });
        let mut slopes = Vec::with_capacity(t_nodes.len() * n_y);
        for row in rows {
            slopes.extend(row?);
        }
        Ok(Self {
            value: he.value.clone(),
            grid,
            t_nodes,
            n_uniform,
            n_y,
            slopes,
        })
    }

    /// Row index `i` with `t_nodes[i] <= t < t_nodes[i + 1]`.
    fn row(&self, t: f64) -> usize {
        let i = if t < self.grid.uniform_until {
            (t / self.grid.t_step) as usize
        } else {
            self.n_uniform + ((t / self.grid.uniform_until).ln() / self.grid.growth.ln()) as usize
        };
        i.min(self.t_nodes.len() - 2)
    }

    /// Bilinear interpolant of `(d/dy) U(t, y, 1)`.
    pub fn normalized(&self, t: f64, y: f64) -> f64 {
        let p = self.value.p();
        let last = self.t_nodes[self.t_nodes.len() - 1];
        if t >= last {
            // U(t, y, 1) ~ t^{p/2} + (p/2) t^{p/2-1} (1 - y^2) - C for large t
            return -p * y * t.powf(0.5 * p - 1.0);
        }
        let i = self.row(t);
        let (t_lo, t_hi) = (self.t_nodes[i], self.t_nodes[i + 1]);
        let wt = ((t - t_lo) / (t_hi - t_lo)).clamp(0.0, 1.0);
        let pos = y / self.grid.y_step;
        let j = (pos as usize).min(self.n_y - 2);
        let wy = (pos - j as f64).clamp(0.0, 1.0);
        let at = |i: usize, j: usize| self.slopes[i * self.n_y + j];
        let lo = at(i, j) + wy * (at(i, j + 1) - at(i, j));
        let hi = at(i + 1, j) + wy * (at(i + 1, j + 1) - at(i + 1, j));
        lo + wt * (hi - lo)
    }

    /// `U_b(t, b, b*)`.
    pub fn integrand(&self, t: f64, b: f64, bstar: f64) -> f64 {
        if bstar <= 0.0 || b == 0.0 {
            return 0.0;
        }
        let y = (b.abs() / bstar).min(1.0);
        b.signum() * bstar.powf(self.value.p() - 1.0) * self.normalized(t / (bstar * bstar), y)
    }
}

/// Per-path quantity averaged by [`simulate`].
#[derive(Debug, Clone, Copy)]
pub enum Payoff<'a> {
    SqrtTau,
    BStar,
    SqrtTauMinusCBStar(f64),
    /// `U(start) + ∫ U_b dB - (sqrt(tau) - C B*(tau))`, the hedging surplus.
    HedgeGap(&'a HedgeTable, f64),
}

/// End state of one path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathOutcome {
    pub tau: f64,
    pub b: f64,
    pub bstar: f64,
    /// Left-point sum `∑ U_b(t_k) (B(t_{k+1}) - B(t_k))`, zero without a hedge table.
    pub hedge_integral: f64,
    /// Stopped by a cap or the horizon rather than by the rule.
    pub capped: bool,
    pub horizon_hit: bool,
    pub steps: u64,
}

impl PathOutcome {
    pub fn sqrt_tau(&self) -> f64 {
        self.tau.sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum McWarning {
    /// More than 1% of paths reached the horizon.
    HorizonSaturation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MCEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_effective: usize,
    /// Fraction of paths ended by a cap or the horizon.
    pub tail_fraction: f64,
    pub warning: Option<McWarning>,
}

/// Pairwise sum; the split points depend only on the length.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 16 {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Sample mean and its standard error `sd / sqrt(n)`.
pub fn mean_and_error(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = pairwise_sum(xs) / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&sq) / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Largest `|B|` over the step from `b0` to `b1`, sampled from the bridge law when
/// it can exceed `level` with non-negligible probability.
fn step_maximum<R: Rng>(rng: &mut R, b0: f64, b1: f64, dt: f64, level: f64, bridge: bool) -> f64 {
    let mut m = b0.abs().max(b1.abs());
    if !bridge {
        return m;
    }
    let jump = (b1 - b0) * (b1 - b0);
    // P(max of the bridge above level) = exp(-2 (level - b0)(level - b1) / dt)
    for (x0, x1) in [(b0, b1), (-b0, -b1)] {
        if 2.0 * (level - x0) * (level - x1) < 28.0 * dt {
            let u: f64 = rng.gen();
            let top = 0.5 * (x0 + x1 + (jump - 2.0 * dt * (1.0 - u).ln()).sqrt());
            m = m.max(top);
        }
    }
    m
}

fn run_path(config: &PathConfig, rule: &Rule, hedge: Option<&HedgeTable>, index: usize) -> PathOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64);
    let State { mut t, mut b, mut bstar } = config.start;
    let end = rule.end.min(config.horizon);
    let mut integral = 0.0;
    let mut steps = 0u64;
    let mut stopped = false;
    while t < end {
        let step = config.step_at(t);
        let landmark = rule.landmark(bstar);
        let next = if t + step >= end * (1.0 - 1e-14) {
            end
        } else if t < landmark && landmark < t + step {
            landmark
        } else {
            t + step
        };
        let dt = next - t;
        let z: f64 = rng.sample(StandardNormal);
        let db = dt.sqrt() * z;
        let b_next = b + db;
        let m = step_maximum(&mut rng, b, b_next, dt, bstar, config.bridge);
        if let Some(table) = hedge {
            integral += table.integrand(t, b, bstar) * db;
        }
        let touched = m >= bstar;
        t = next;
        b = b_next;
        bstar = bstar.max(m);
        steps += 1;
        if rule.stops(t, bstar, touched, m) {
            stopped = true;
            break;
        }
    }
    let at_end = !stopped && !matches!(rule.kind, Kind::Fixed if !rule.end_is_cap && rule.end <= config.horizon);
    PathOutcome {
        tau: t,
        b,
        bstar,
        hedge_integral: integral,
        capped: at_end,
        horizon_hit: !stopped && config.horizon < rule.end,
        steps,
    }
}

/// Simulates every path and returns the outcomes in path order.
pub fn simulate_paths(config: &PathConfig, stop: &StoppingSpec, hedge: Option<&HedgeTable>, runner: &Runner) -> Result<Vec<PathOutcome>> {
    config.validate()?;
    let rule = stop.compile()?;
    Ok(runner.map(config.n_paths, |i| run_path(config, &rule, hedge, i)))
}

fn tail_stats(outcomes: &[PathOutcome]) -> (f64, Option<McWarning>) {
    let n = outcomes.len() as f64;
    let capped = outcomes.iter().filter(|o| o.capped).count() as f64 / n;
    let horizon = outcomes.iter().filter(|o| o.horizon_hit).count() as f64 / n;
    (capped, (horizon > 0.01).then_some(McWarning::HorizonSaturation))
}

fn estimate(values: &[f64], outcomes: &[PathOutcome]) -> MCEstimate {
    let (mean, std_error) = mean_and_error(values);
    let (tail_fraction, warning) = tail_stats(outcomes);
    MCEstimate {
        mean,
        std_error,
        n_effective: values.len(),
        tail_fraction,
        warning,
    }
}

fn payoff_values(outcomes: &[PathOutcome], payoff: &Payoff, start_value: f64) -> Vec<f64> {
    outcomes
        .iter()
        .map(|o| match *payoff {
            Payoff::SqrtTau => o.sqrt_tau(),
            Payoff::BStar => o.bstar,
            Payoff::SqrtTauMinusCBStar(c) => o.sqrt_tau() - c * o.bstar,
            Payoff::HedgeGap(_, c) => start_value + o.hedge_integral - (o.sqrt_tau() - c * o.bstar),
        })
        .collect()
}

/// Mean of `payoff` over the paths stopped by `stop`.
pub fn simulate(config: &PathConfig, stop: &StoppingSpec, payoff: Payoff, runner: &Runner) -> Result<MCEstimate> {
    let (hedge, start_value) = match payoff {
        Payoff::HedgeGap(table, _) => (Some(table), table.value.eval(config.start)?),
        _ => (None, 0.0),
    };
    let outcomes = simulate_paths(config, stop, hedge, runner)?;
    Ok(estimate(&payoff_values(&outcomes, &payoff, start_value), &outcomes))
}

/// `E[sqrt(tau)] / E[B*(tau)]` with its delta-method standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioEstimate {
    pub ratio: f64,
    pub std_error: f64,
    pub sqrt_tau: MCEstimate,
    pub bstar: MCEstimate,
}

pub fn ratio_from_outcomes(outcomes: &[PathOutcome]) -> RatioEstimate {
    let x: Vec<f64> = outcomes.iter().map(PathOutcome::sqrt_tau).collect();
    let y: Vec<f64> = outcomes.iter().map(|o| o.bstar).collect();
    let sqrt_tau = estimate(&x, outcomes);
    let bstar = estimate(&y, outcomes);
    let ratio = sqrt_tau.mean / bstar.mean;
    // Residuals of the linearised ratio x - r y.
    let residual: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - ratio * b).collect();
    let (_, se) = mean_and_error(&residual);
    RatioEstimate {
        ratio,
        std_error: se / bstar.mean,
        sqrt_tau,
        bstar,
    }
}

pub fn bdg_ratio(config: &PathConfig, stop: &StoppingSpec, runner: &Runner) -> Result<RatioEstimate> {
    Ok(ratio_from_outcomes(&simulate_paths(config, stop, None, runner)?))
}

/// `E[sqrt(rho ∧ cap)]` for one cap, from a shared set of paths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CappedMoment {
    pub cap: f64,
    pub estimate: f64,
    pub std_error: f64,
    /// Fraction of paths with `rho > cap`.
    pub tail_fraction: f64,
}

/// Capped half-moments of the region-hitting time for each cap, all from the same
/// paths run up to the largest cap.
pub fn moment_dichotomy(threshold: f64, config: &PathConfig, caps: &[f64], runner: &Runner) -> Result<Vec<CappedMoment>> {
    let max_cap = caps.iter().copied().fold(f64::NAN, f64::max);
    if caps.is_empty() || !(caps.iter().all(|&c| c > 1.0)) {
        return Err(Error::Config("caps must be nonempty and exceed 1".into()));
    }
    let config = PathConfig { horizon: config.horizon.max(max_cap), ..*config };
    let stop = StoppingSpec::RegionHit(threshold).capped(max_cap);
    let outcomes = simulate_paths(&config, &stop, None, runner)?;
    Ok(caps
        .iter()
        .map(|&cap| {
            let values: Vec<f64> = outcomes.iter().map(|o| o.tau.min(cap).sqrt()).collect();
            let (estimate, std_error) = mean_and_error(&values);
            let beyond = outcomes.iter().filter(|o| o.capped || o.tau > cap).count();
            CappedMoment {
                cap,
                estimate,
                std_error,
                tail_fraction: beyond as f64 / outcomes.len() as f64,
            }
        })
        .collect())
}

/// Outcome of [`hedging_check`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HedgingReport {
    pub slack: f64,
    /// Paths with `sqrt(tau) - C B*(tau) <= U(start) + ∫ U_b dB + slack`.
    pub satisfied_fraction: f64,
    /// Mean and standard error of `U(start) + ∫ U_b dB - (sqrt(tau) - C B*(tau))`.
    pub gap: MCEstimate,
    /// Smallest slack that 99% of the paths satisfy.
    pub slack_99: f64,
    /// Order-statistic interval for `slack_99`, three binomial standard deviations wide
    /// on each side.
    pub slack_99_interval: (f64, f64),
    pub mean_steps: f64,
}

pub fn hedging_check(table: &HedgeTable, config: &PathConfig, stop: &StoppingSpec, slack: f64, runner: &Runner) -> Result<HedgingReport> {
    let c = table.value.c();
    let start_value = table.value.eval(config.start)?;
    let outcomes = simulate_paths(config, stop, Some(table), runner)?;
    let gaps = payoff_values(&outcomes, &Payoff::HedgeGap(table, c), start_value);
    let satisfied = gaps.iter().filter(|&&g| g >= -slack).count();
    let mut shortfall: Vec<f64> = gaps.iter().map(|g| (-g).max(0.0)).collect();
    shortfall.sort_by(f64::total_cmp);
    let n = shortfall.len();
    let k = ((0.99 * n as f64).ceil() as usize).clamp(1, n) - 1;
    let spread = (3.0 * (n as f64 * 0.99 * 0.01).sqrt()).ceil() as usize;
    let steps: Vec<f64> = outcomes.iter().map(|o| o.steps as f64).collect();
    Ok(HedgingReport {
        slack,
        satisfied_fraction: satisfied as f64 / gaps.len() as f64,
        gap: estimate(&gaps, &outcomes),
        slack_99: shortfall[k],
        slack_99_interval: (shortfall[k.saturating_sub(spread)], shortfall[(k + spread).min(n - 1)]),
        mean_steps: pairwise_sum(&steps) / steps.len() as f64,
    })
}
