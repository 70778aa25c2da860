//! Extension of a one-dimensional solution `U(t)` to states `(t, b, b*)`.
//!
//! With `t' = t / b*^2` and `y = |b| / b*`,
//!
//! ```text
//! U(t, b, b*) = b*^p ∫_0^∞ U(t' + s) f^{1-y}(s) ds,
//! ```
//!
//! the expected value of `U` at the time the path started at `y` first reaches the
//! boundary `|b| = b*`. `U` is piecewise linear on the grid and equals the payoff
//! `t^{p/2} - C` past `t0`, so the near part of the integral is a sum of closed-form
//! moments of `f^h` and the far part a one-dimensional quadrature.
//!
//! The extension solves the backward heat equation exactly in the interior and is
//! invariant under Brownian scaling by construction.

use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::densities::{fh_partial_mean, fh_survival, SeriesParams};
use crate::error::{Error, Result};
use crate::oide::{memory_split, payoff_increment, Regime, SolutionGrid};
use crate::quadrature::{integrate, QuadSpec};

/// Time, position and running maximum of `|B|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub t: f64,
    pub b: f64,
    pub bstar: f64,
}

impl State {
    pub fn new(t: f64, b: f64, bstar: f64) -> Self {
        Self { t, b, bstar }
    }

    pub fn origin() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    /// `t >= 0` and `|b| <= b*`.
    pub fn validate(&self) -> Result<()> {
        if !(self.t >= 0.0 && self.t.is_finite()) {
            return Err(Error::Domain("t must be finite and nonnegative"));
        }
        if !(self.bstar >= 0.0 && self.bstar.is_finite()) {
            return Err(Error::Domain("bstar must be finite and nonnegative"));
        }
        if !(self.b.abs() <= self.bstar) {
            return Err(Error::Domain("|b| must not exceed bstar"));
        }
        Ok(())
    }

    /// The state after moving `b` by `step` over time `step^2`.
    pub fn shifted(&self, step: f64) -> Self {
        let b = self.b + step;
        Self::new(self.t + step * step, b, self.bstar.max(b.abs()))
    }
}

/// `U(t, b, b*)` built from a bounded solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtendedValue {
    pub base: SolutionGrid,
    pub series: SeriesParams,
    pub quad: QuadSpec,
}

impl ExtendedValue {
    /// Requires a grid classified [`Regime::Bounded`].
    pub fn new(base: SolutionGrid) -> Result<Self> {
        if base.regime != Regime::Bounded {
            return Err(Error::Domain("extension needs a bounded solution"));
        }
        Ok(Self {
            series: base.params.series,
            base,
            quad: QuadSpec::default(),
        })
    }

    pub fn c(&self) -> f64 {
        self.base.params.c
    }

    pub fn t0(&self) -> f64 {
        self.base.params.t0
    }

    pub fn p(&self) -> f64 {
        self.base.params.p
    }

    /// `U(t)` on the boundary `|b| = b* = 1`, held constant below the grid.
    pub fn boundary_value(&self, t: f64) -> f64 {
        let t = t.max(self.base.t_last());
        self.base.value(t).unwrap_or(self.base.u_at_floor)
    }

    /// `∫_0^∞ U(t + s) f^{1-y}(s) ds` for `0 <= y <= 1`.
    pub fn normalized(&self, t: f64, y: f64) -> Result<f64> {
        let h = 1.0 - y;
        if h <= 0.0 {
            return Ok(self.boundary_value(t));
        }
        let series = &self.series;
        let params = &self.base.params;
        let t0 = params.t0;
        if t >= t0 {
            return Ok(params.floor(t) + self.payoff_tail(t, 0.0, h)?);
        }

        // Nodes above t, in increasing lag; U(t + s) is linear between them.
        let ts = &self.base.ts;
        let us = &self.base.us;
        let above = ts.partition_point(|&s| s > t);
        let mut lag_lo = 0.0;
        let mut u_lo = self.boundary_value(t);
        let (mut surv_lo, mut mean_lo) = (1.0, 0.0);
        let mut acc = 0.0;
        for j in (0..above).rev() {
            let lag_hi = ts[j] - t;
            let u_hi = us[j];
            let width = lag_hi - lag_lo;
            let surv_hi = fh_survival(h, lag_hi, series);
            let mean_hi = fh_partial_mean(h, lag_hi, series);
            let mass = surv_lo - surv_hi;
            if width > 0.0 {
                let ramp = (mean_hi - mean_lo - lag_lo * mass) / width;
                acc += u_lo * mass + (u_hi - u_lo) * ramp;
            }
            lag_lo = lag_hi;
            u_lo = u_hi;
            surv_lo = surv_hi;
            mean_lo = mean_hi;
        }
        // lag_lo = t0 - t: the payoff takes over.
        Ok(acc + params.floor(t0) * surv_lo + self.payoff_tail(t, lag_lo, h)?)
    }

    /// `∫_x^∞ [(t + s)^{p/2} - (t + x)^{p/2}] f^h(s) ds`, after integrating by parts
    /// `∫_x^∞ (d/ds)(t + s)^{p/2} P(rho^h > s) ds`.
    fn payoff_tail(&self, t: f64, x: f64, h: f64) -> Result<f64> {
        let half_p = 0.5 * self.p();
        let series = &self.series;
        let integrand = |s: f64| half_p * (t + s).powf(half_p - 1.0) * fh_survival(h, s, series);
        // The survival function drops on the scale h^2; resolve it geometrically.
        let mut cuts: Vec<f64> = Vec::new();
        let mut d = 0.25 * h * h;
        while d < 1.0 {
            cuts.push(x + d);
            d *= 16.0;
        }
        cuts.extend([x + 1.0, x + 6.0, x + 60.0]);
        let mut total = 0.0;
        let mut lo = x;
        for hi in cuts {
            total += integrate(integrand, lo, hi, &self.quad)?.value;
            lo = hi;
        }
        Ok(total)
    }

    /// `U(t, b, b*)`.
    pub fn eval(&self, state: State) -> Result<f64> {
        state.validate()?;
        let State { t, b, bstar } = state;
        let p = self.p();
        if bstar == 0.0 {
            // Scaling limit: U(t, 0, b*) -> t^{p/2} as b* -> 0.
            return Ok(t.powf(0.5 * p));
        }
        let scale = bstar * bstar;
        Ok(bstar.powf(p) * self.normalized(t / scale, b.abs() / bstar)?)
    }
}

/// `U(t, b, b*)`; see [`ExtendedValue::eval`].
pub fn eval_extended(ev: &ExtendedValue, t: f64, b: f64, bstar: f64) -> Result<f64> {
    ev.eval(State::new(t, b, bstar))
}

/// `(U_b, U_{b*})` at `(t, 1, 1)`.
///
/// `U_b = -∫_0^∞ [U(t + s) - U(t)] g(s) ds`. Below `t0` the maximum reflects and
/// `U_{b*} = 0`; above it the state stops and `U_b + U_{b*} = -C`.
pub fn boundary_derivatives(ev: &ExtendedValue, t: f64) -> Result<(f64, f64)> {
    let params = &ev.base.params;
    let t0 = params.t0;
    if !(t > 0.0) {
        return Err(Error::Domain("t must be positive"));
    }
    if t == t0 {
        return Err(Error::Domain("one-sided derivatives differ at t0"));
    }
    if t > t0 {
        let db = -payoff_increment(t, params.p, &params.series)?;
        return Ok((db, -db - params.c));
    }
    if t < ev.base.t_last() {
        return Err(Error::Domain("t lies below the computed grid"));
    }
    let above = ev.base.ts.partition_point(|&s| s > t);
    let (ts, us) = (&ev.base.ts[..above], &ev.base.us[..above]);
    let quad = QuadSpec::default().with_tolerances(1e-10, 1e-12);
    let (a, b) = memory_split(ts, us, t, params, &quad)?;
    let u = ev.base.value(t)?;
    Ok((-(a - b * (u - us[above - 1])), 0.0))
}

/// Finite-difference `U_b`, the integrand of the hedging representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HedgeEvaluator {
    pub value: ExtendedValue,
    /// Step in `b / b*`.
    pub fd_step: f64,
}

impl HedgeEvaluator {
    pub fn new(value: ExtendedValue) -> Self {
        Self { value, fd_step: 1e-4 }
    }

    pub fn with_fd_step(mut self, fd_step: f64) -> Result<Self> {
        if !(fd_step > 0.0 && fd_step < 0.25) {
            return Err(Error::Domain("fd_step must lie in (0, 1/4)"));
        }
        self.fd_step = fd_step;
        Ok(self)
    }

    /// `(d/dy) ∫ U(t + s) f^{1-y}(s) ds` for `0 <= y <= 1`: central inside, second-order
    /// one-sided within `fd_step` of the boundary.
    pub fn normalized_slope(&self, t: f64, y: f64) -> Result<f64> {
        let d = self.fd_step;
        let f = |y: f64| self.value.normalized(t, y);
        if y + d <= 1.0 {
            let lo = (y - d).abs();
            Ok((f(y + d)? - f(lo)?) / (2.0 * d))
        } else {
            Ok((3.0 * f(y)? - 4.0 * f(y - d)? + f(y - 2.0 * d)?) / (2.0 * d))
        }
    }

    /// `U_b(t, b, b*)`.
    pub fn integrand(&self, state: State) -> Result<f64> {
        state.validate()?;
        let State { t, b, bstar } = state;
        if bstar == 0.0 || b == 0.0 {
            return Ok(0.0);
        }
        let slope = self.normalized_slope(t / (bstar * bstar), b.abs() / bstar)?;
        Ok(b.signum() * bstar.powf(self.value.p() - 1.0) * slope)
    }
}

/// `U_b(t, b, b*)`; see [`HedgeEvaluator::integrand`].
pub fn hedge_integrand(he: &HedgeEvaluator, t: f64, b: f64, bstar: f64) -> Result<f64> {
    he.integrand(State::new(t, b, bstar))
}

/// A two-point move from `d` and how much it gains over `U(d)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcavityTriple {
    pub d: State,
    pub alpha: f64,
    pub beta: f64,
    /// `w_up U(d_up) + w_down U(d_down) - U(d)` with `d_up = d` shifted by `alpha`,
    /// `d_down` by `-beta`, and weights `beta / (alpha + beta)`, `alpha / (alpha + beta)`.
    pub margin: f64,
}

/// Margin of the move `(alpha, beta)` from `d`.
pub fn concavity_margin(ev: &ExtendedValue, d: State, alpha: f64, beta: f64) -> Result<ConcavityTriple> {
    if !(alpha > 0.0 && beta > 0.0) {
        return Err(Error::Domain("increments must be positive"));
    }
    let base = ev.eval(d)?;
    margin_from(ev, d, base, alpha, beta)
}

fn margin_from(ev: &ExtendedValue, d: State, base: f64, alpha: f64, beta: f64) -> Result<ConcavityTriple> {
    let up = ev.eval(d.shifted(alpha))?;
    let down = ev.eval(d.shifted(-beta))?;
    let total = alpha + beta;
    let margin = (beta * up + alpha * down) / total - base;
    Ok(ConcavityTriple { d, alpha, beta, margin })
}

/// Search lattice: `t / b*^2` and `b / b*` on uniform grids, increments log-spaced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcavityLattice {
    pub t_ratio: (f64, f64),
    pub t_points: usize,
    pub b_ratio: (f64, f64),
    pub b_points: usize,
    pub increments: (f64, f64),
    pub increment_points: usize,
    pub bstar: f64,
}

impl Default for ConcavityLattice {
    fn default() -> Self {
        Self {
            t_ratio: (0.5, 1.3),
            t_points: 9,
            b_ratio: (0.8, 1.0),
            b_points: 5,
            increments: (0.01, 0.5),
            increment_points: 8,
            bstar: 1.0,
        }
    }
}

fn uniform(range: (f64, f64), n: usize) -> Vec<f64> {
    if n == 1 {
        return alloc::vec![range.0];
    }
    (0..n)
        .map(|i| range.0 + (range.1 - range.0) * i as f64 / (n - 1) as f64)
        .collect()
}

fn log_spaced(range: (f64, f64), n: usize) -> Vec<f64> {
    let (lo, hi) = (range.0.ln(), range.1.ln());
    uniform((lo, hi), n).into_iter().map(f64::exp).collect()
}

impl ConcavityLattice {
    pub fn validate(&self) -> Result<()> {
        if self.t_points == 0 || self.b_points == 0 || self.increment_points == 0 {
            return Err(Error::EmptyLattice);
        }
        let (t_lo, t_hi) = self.t_ratio;
        let (b_lo, b_hi) = self.b_ratio;
        let (i_lo, i_hi) = self.increments;
        if !(t_lo >= 0.0 && t_lo <= t_hi) {
            return Err(Error::Domain("t_ratio must be a nonnegative ordered pair"));
        }
        if !(b_lo >= -1.0 && b_lo <= b_hi && b_hi <= 1.0) {
            return Err(Error::Domain("b_ratio must be an ordered pair in [-1, 1]"));
        }
        if !(i_lo > 0.0 && i_lo <= i_hi) {
            return Err(Error::Domain("increments must be a positive ordered pair"));
        }
        if !(self.bstar > 0.0) {
            return Err(Error::Domain("bstar must be positive"));
        }
        Ok(())
    }

    pub fn states(&self) -> Vec<State> {
        let s = self.bstar;
        let mut out = Vec::with_capacity(self.t_points * self.b_points);
        for t in uniform(self.t_ratio, self.t_points) {
            for b in uniform(self.b_ratio, self.b_points) {
                out.push(State::new(t * s * s, b * s, s));
            }
        }
        out
    }

    pub fn increment_values(&self) -> Vec<f64> {
        log_spaced(self.increments, self.increment_points)
            .into_iter()
            .map(|v| v * self.bstar)
            .collect()
    }
}

/// The lattice triple with the largest margin; a positive margin exhibits a
/// two-point move that `U` does not dominate.
pub fn concavity_search(ev: &ExtendedValue, lattice: &ConcavityLattice) -> Result<ConcavityTriple> {
    lattice.validate()?;
    let increments = lattice.increment_values();
    let mut best: Option<ConcavityTriple> = None;
    for d in lattice.states() {
        let base = ev.eval(d)?;
        let ups = increments
            .iter()
            .map(|&a| ev.eval(d.shifted(a)))
            .collect::<Result<Vec<_>>>()?;
        let downs = increments
            .iter()
            .map(|&b| ev.eval(d.shifted(-b)))
            .collect::<Result<Vec<_>>>()?;
        for (&alpha, &up) in increments.iter().zip(&ups) {
            for (&beta, &down) in increments.iter().zip(&downs) {
                let margin = (beta * up + alpha * down) / (alpha + beta) - base;
                if best.is_none_or(|b| margin > b.margin) {
                    best = Some(ConcavityTriple { d, alpha, beta, margin });
                }
            }
        }
    }
    best.ok_or(Error::EmptyLattice)
}
