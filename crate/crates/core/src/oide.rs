//! Backward solution of the integro-differential equation
//!
//! ```text
//! 2 t U'(t) = p U(t) + ∫_0^∞ [U(t + s) - U(t)] g(s) ds,   t < t0,
//! U(t) = t^{p/2} - C,                                    t >= t0,
//! ```
//!
//! integrated from `t0` down towards 0.
//!
//! The memory integral is discretised by product integration: `U` is piecewise
//! linear on the computed grid and the weights `∫ g`, `∫ s g` over each grid
//! interval come from closed forms (or a 4-point Gauss rule where the interval is
//! short compared with its lag). The integral is then linear in the unknown
//! `U(t_{n+1})`, so an implicit step costs one division.
//!
//! Linearising around a frozen `t` shows a mode growing like `exp(s / (2 t^2))` as
//! `t` decreases by `s`. Its sign decides the regime. The sweep resolves it with
//! trapezoidal steps of size `O(t^2)` down to [`GridPolicy::damped_below`], then
//! continues with backward Euler steps much longer than `t^2`, which damp it.

use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::densities::{g_partial_mean, g_tail, g_unchecked, SeriesParams};
use crate::error::{Error, Result};
use crate::quadrature::{integrate, QuadSpec, GAUSS_LEGENDRE_4};

/// Step-size schedule for the backward sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPolicy {
    /// First step below `t0`.
    pub initial_step: f64,
    /// Smallest admissible step.
    pub min_step: f64,
    /// Largest admissible step.
    pub max_step: f64,
    /// Resolved steps are at most `fast_scale * t^2`.
    pub fast_scale: f64,
    /// Steps are at most `relative_step * t` (and at least that in the damped range).
    pub relative_step: f64,
    /// Below this `t` the fast mode is damped rather than resolved.
    pub damped_below: f64,
    /// Damped steps are at least `damped_scale * t^2` (capped at `t / 2`).
    pub damped_scale: f64,
    /// Maximal ratio between consecutive resolved steps.
    pub growth: f64,
    /// Weight of the new node in a resolved step: 1 is backward Euler, 1/2 the
    /// trapezoidal rule.
    pub implicitness: f64,
}

impl Default for GridPolicy {
    fn default() -> Self {
        Self {
            initial_step: 1e-6,
            min_step: 1e-12,
            max_step: 5e-3,
            fast_scale: 0.25,
            relative_step: 0.02,
            damped_below: 0.01,
            damped_scale: 40.0,
            growth: 1.5,
            implicitness: 0.5,
        }
    }
}

impl GridPolicy {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.initial_step,
            self.min_step,
            self.max_step,
            self.fast_scale,
            self.relative_step,
            self.damped_scale,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Domain("grid policy steps must be positive"));
        }
        if self.min_step > self.max_step || self.initial_step < self.min_step {
            return Err(Error::Domain("grid policy step bounds are inconsistent"));
        }
        if !(self.growth > 1.0) {
            return Err(Error::Domain("grid growth factor must exceed 1"));
        }
        if !(self.damped_below >= 0.0) {
            return Err(Error::Domain("damped_below must be nonnegative"));
        }
        if !(self.implicitness >= 0.5 && self.implicitness <= 1.0) {
            return Err(Error::Domain("implicitness must lie in [1/2, 1]"));
        }
        Ok(())
    }

    /// Halves every resolved step-size control.
    pub fn refined(mut self) -> Self {
        self.initial_step *= 0.5;
        self.max_step *= 0.5;
        self.fast_scale *= 0.5;
        self.relative_step *= 0.5;
        self
    }

    fn damped(&self, t: f64) -> bool {
        t < self.damped_below
    }

    fn step_at(&self, t: f64, previous: f64) -> f64 {
        if self.damped(t) {
            return (self.relative_step * t).max(self.damped_scale * t * t).min(0.5 * t);
        }
        let target = (self.fast_scale * t * t).min(self.relative_step * t).min(self.max_step);
        (previous * self.growth).min(target).max(self.min_step)
    }
}

/// Inputs of one backward solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverParams {
    #[serde(rename = "C")]
    pub c: f64,
    pub t0: f64,
    pub p: f64,
    pub t_min: f64,
    pub grid: GridPolicy,
    pub series: SeriesParams,
}

impl SolverParams {
    pub fn new(c: f64, t0: f64) -> Self {
        Self {
            c,
            t0,
            p: 1.0,
            t_min: 1e-5,
            grid: GridPolicy::default(),
            series: SeriesParams::default(),
        }
    }

    pub fn with_p(mut self, p: f64) -> Self {
        self.p = p;
        self
    }

    pub fn with_grid(mut self, grid: GridPolicy) -> Self {
        self.grid = grid;
        self
    }

    pub fn with_t_min(mut self, t_min: f64) -> Self {
        self.t_min = t_min;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::Domain("C must be positive"));
        }
        if !(self.p > 0.0 && self.p < 2.0) {
            return Err(Error::Domain("p must lie in (0, 2)"));
        }
        if !(self.t_min > 0.0) {
            return Err(Error::Domain("t_min must be positive"));
        }
        if !(self.t0 > self.t_min && self.t0.is_finite()) {
            return Err(Error::Domain("t0 must exceed t_min"));
        }
        self.grid.validate()?;
        self.series.validate()
    }

    /// The stopping payoff `t^{p/2} - C`, which `U` equals on `[t0, ∞)`.
    pub fn floor(&self, t: f64) -> f64 {
        t.powf(0.5 * self.p) - self.c
    }

    /// `(d/dt)(t^{p/2} - C)`
    pub fn floor_slope(&self, t: f64) -> f64 {
        0.5 * self.p * t.powf(0.5 * self.p - 1.0)
    }
}

/// Thresholds that end a sweep early.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeThresholds {
    /// Declare divergence to `+∞` once `U - floor` exceeds this.
    pub blowup_hi: f64,
    /// Declare divergence to `-∞` once `U` falls this far below the floor.
    pub crossing_margin: f64,
}

impl Default for RegimeThresholds {
    fn default() -> Self {
        Self {
            blowup_hi: 5.0,
            crossing_margin: 0.0,
        }
    }
}

impl RegimeThresholds {
    /// Thresholds that never fire.
    pub fn disabled() -> Self {
        Self {
            blowup_hi: f64::INFINITY,
            crossing_margin: f64::INFINITY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.blowup_hi > 0.0) {
            return Err(Error::Domain("blowup_hi must be positive"));
        }
        if !(self.crossing_margin >= 0.0) {
            return Err(Error::Domain("crossing_margin must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    Bounded,
    PlusInfinity,
    MinusInfinity,
    Inconclusive,
}

/// A backward solution on a decreasing grid `t0 = ts[0] > ts[1] > ...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionGrid {
    pub params: SolverParams,
    pub ts: Vec<f64>,
    pub us: Vec<f64>,
    pub regime: Regime,
    pub u_at_floor: f64,
    pub left_derivative_at_t0: f64,
}

impl SolutionGrid {
    /// Smallest `t` covered.
    pub fn t_last(&self) -> f64 {
        *self.ts.last().unwrap_or(&self.params.t0)
    }

    /// `U(t)` for `t >= t_last()`: linear between nodes, analytic beyond `t0`.
    pub fn value(&self, t: f64) -> Result<f64> {
        let t0 = self.params.t0;
        if t >= t0 {
            return Ok(self.params.floor(t));
        }
        if t < self.t_last() || t.is_nan() {
            return Err(Error::Domain("t lies below the computed grid"));
        }
        let (i, w) = self.locate(t);
        Ok(self.us[i + 1] + w * (self.us[i] - self.us[i + 1]))
    }

    /// Index `i` with `ts[i] >= t >= ts[i + 1]` and the weight of node `i`.
    fn locate(&self, t: f64) -> (usize, f64) {
        let n = self.ts.len();
        if n < 2 {
            return (0, 1.0);
        }
        let i = self.ts.partition_point(|&s| s > t).saturating_sub(1).min(n - 2);
        let (ta, tb) = (self.ts[i], self.ts[i + 1]);
        (i, (t - tb) / (ta - tb))
    }

    /// `U'(t0-) - (d/dt)(t^{p/2} - C)(t0)`; zero would mean smooth pasting.
    pub fn pasting_gap(&self) -> f64 {
        self.left_derivative_at_t0 - self.params.floor_slope(self.params.t0)
    }

    /// Rows `(t, U, t^{p/2} - C)` in increasing `t`.
    pub fn rows(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.ts
            .iter()
            .zip(&self.us)
            .rev()
            .map(move |(&t, &u)| (t, u, self.params.floor(t)))
    }

    /// `U` nondecreasing in `t` across the grid.
    pub fn is_monotone(&self) -> bool {
        self.us.windows(2).all(|w| w[1] <= w[0])
    }

    pub fn stays_above_floor(&self) -> bool {
        self.ts
            .iter()
            .zip(&self.us)
            .all(|(&t, &u)| u >= self.params.floor(t))
    }
}

/// `∫_x^∞ [(t + s)^{p/2} - t^{p/2}] g(s) ds` for `x > 0`.
fn payoff_increment_tail(t: f64, x: f64, p: f64, series: &SeriesParams, quad: &QuadSpec) -> Result<f64> {
    let base = t.powf(0.5 * p);
    let f = |s: f64| ((t + s).powf(0.5 * p) - base) * g_unchecked(s, series);
    // g decays like exp(-pi^2 s / 8): past x + 50 nothing is left.
    let mut total = 0.0;
    let mut lo = x;
    for hi in [x + 1.0, x + 6.0, x + 50.0] {
        total += integrate(f, lo, hi, quad)?.value;
        lo = hi;
    }
    Ok(total)
}

/// `J(t) = ∫_0^∞ [(t + s)^{p/2} - t^{p/2}] g(s) ds`, the memory integral of the payoff.
pub fn payoff_increment(t: f64, p: f64, series: &SeriesParams) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Domain("t must be positive"));
    }
    let quad = QuadSpec::default().with_tolerances(1e-11, 1e-13);
    let near = integrate(
        |s| ((t + s).powf(0.5 * p) - t.powf(0.5 * p)) * g_unchecked(s, series),
        0.0,
        1.0,
        &quad.with_singularity(-0.5),
    )?
    .value;
    Ok(near + payoff_increment_tail(t, 1.0, p, series, &quad)?)
}

/// `U'(t0-) = (p U(t0) + J(t0)) / (2 t0)`.
pub fn left_derivative_at_t0(params: &SolverParams) -> Result<f64> {
    let j = payoff_increment(params.t0, params.p, &params.series)?;
    Ok((params.p * params.floor(params.t0) + j) / (2.0 * params.t0))
}

/// Lazily evaluated closed forms `(∫_a^∞ g, ∫_0^a s g)` at one lag.
#[derive(Clone, Copy)]
struct Moments {
    lag: f64,
    cached: Option<(f64, f64)>,
}

impl Moments {
    fn at(lag: f64) -> Self {
        Self { lag, cached: None }
    }

    fn get(&mut self, series: &SeriesParams) -> (f64, f64) {
        let lag = self.lag;
        *self
            .cached
            .get_or_insert_with(|| (g_tail(lag, series), g_partial_mean(lag, series)))
    }
}

/// The memory integral at the new node `t < ts.last()`, written as
/// `A - B (U - U_n)` with `U_n = us.last()` and `U` the unknown value at `t`.
pub(crate) fn memory_split(ts: &[f64], us: &[f64], t: f64, params: &SolverParams, quad: &QuadSpec) -> Result<(f64, f64)> {
    let series = &params.series;
    let n = ts.len() - 1;
    let un = us[n];
    let h = ts[n] - t;

    let mut lo = Moments::at(h);
    let (tail_h, mean_h) = lo.get(series);
    let mut acc = 0.0;
    for k in 1..=n {
        let mut hi = Moments::at(ts[n - k] - t);
        let width = hi.lag - lo.lag;
        let (mass, ramp) = if width < 0.25 * lo.lag {
            // g is smooth across the interval; differences of closed forms would cancel.
            let half = 0.5 * width;
            let mid = lo.lag + half;
            let (mut mass, mut first) = (0.0, 0.0);
            for &(node, weight) in &GAUSS_LEGENDRE_4 {
                let s = mid + half * node;
                let wg = weight * g_unchecked(s, series);
                mass += wg;
                first += wg * (s - lo.lag);
            }
            (mass * half, first * half / width)
        } else {
            let (tail_lo, mean_lo) = lo.get(series);
            let (tail_hi, mean_hi) = hi.get(series);
            let mass = tail_lo - tail_hi;
            (mass, (mean_hi - mean_lo - lo.lag * mass) / width)
        };
        let u_lo = us[n - k + 1];
        let u_hi = us[n - k];
        acc += (u_lo - un) * mass + (u_hi - u_lo) * ramp;
        lo = hi;
    }
    // Beyond lag x = t0 - t the solution is the payoff.
    let x = lo.lag;
    let (tail_x, _) = lo.get(series);
    let far = payoff_increment_tail(t, x, params.p, series, quad)? + (params.floor(t) - un) * tail_x;
    Ok((acc + far, tail_h + mean_h / h))
}

/// `U'(t)` from the equation, with the memory integral taken over the grid.
///
/// At `t0` this is the left derivative. Elsewhere `U(t)` is interpolated and the
/// integral uses the grid nodes above `t`.
pub fn rhs(t: f64, grid: &SolutionGrid) -> Result<f64> {
    let params = &grid.params;
    if !(t > 0.0 && t <= params.t0) {
        return Err(Error::Domain("t must lie in (0, t0]"));
    }
    if t >= params.t0 {
        return Ok(grid.left_derivative_at_t0);
    }
    let u = grid.value(t)?;
    let above = grid.ts.partition_point(|&s| s > t);
    let (ts, us) = (&grid.ts[..above], &grid.us[..above]);
    let quad = QuadSpec::default().with_tolerances(1e-10, 1e-12);
    let (a, b) = memory_split(ts, us, t, params, &quad)?;
    let integral = a - b * (u - us[above - 1]);
    Ok((params.p * u + integral) / (2.0 * t))
}

/// Sweeps from `t0` to `t_min`, stopping early when a threshold fires.
///
/// A sweep that reaches `t_min` is `Bounded` if `U` is monotone and stays above
/// the floor, and `Inconclusive` otherwise.
pub fn solve(params: &SolverParams, thresholds: &RegimeThresholds) -> Result<SolutionGrid> {
    params.validate()?;
    thresholds.validate()?;
    let quad = QuadSpec::default().with_tolerances(1e-10, 1e-12);
    let policy = params.grid;
    let t0 = params.t0;
    let u0 = params.floor(t0);
    let slope0 = left_derivative_at_t0(params)?;

    let mut ts = alloc::vec![t0];
    let mut us = alloc::vec![u0];
    let mut h = policy.initial_step / policy.growth;
    let mut slope = slope0;
    let mut regime = None;

    while let (Some(&tn), Some(&un)) = (ts.last(), us.last()) {
        if tn <= params.t_min {
            break;
        }
        h = policy.step_at(tn, h);
        let t = if tn - h < params.t_min * (1.0 + 1e-9) { params.t_min } else { tn - h };
        let step = tn - t;
        if !(step > 0.0) {
            return Err(Error::StepUnderflow { t: tn, steps: ts.len() - 1 });
        }
        let (a, b) = memory_split(&ts, &us, t, params, &quad)?;
        // U_n - U = step [theta F(t, U) + (1 - theta) F_n], F = (p U + A - B (U - U_n)) / 2t.
        let theta = if policy.damped(tn) { 1.0 } else { policy.implicitness };
        let k = step / (2.0 * t);
        let drop = (k * theta * (params.p * un + a) + step * (1.0 - theta) * slope)
            / (1.0 - k * theta * (b - params.p));
        let u = un - drop;
        if !u.is_finite() {
            return Err(Error::StepUnderflow { t, steps: ts.len() });
        }
        slope = (params.p * u + a + b * drop) / (2.0 * t);
        ts.push(t);
        us.push(u);

        let gap = u - params.floor(t);
        if gap < -thresholds.crossing_margin {
            regime = Some(Regime::MinusInfinity);
            break;
        }
        if gap > thresholds.blowup_hi {
            regime = Some(Regime::PlusInfinity);
            break;
        }
    }

    let mut grid = SolutionGrid {
        params: *params,
        u_at_floor: *us.last().unwrap_or(&u0),
        ts,
        us,
        regime: Regime::Inconclusive,
        left_derivative_at_t0: slope0,
    };
    grid.regime = match regime {
        Some(r) => r,
        None if grid.is_monotone() && grid.stays_above_floor() => Regime::Bounded,
        None => Regime::Inconclusive,
    };
    Ok(grid)
}
