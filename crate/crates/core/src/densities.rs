//! Exit-time densities of Brownian motion from `(-1, 1)`.
//!
//! `f^h(s)` is the density of the first time `|B|` reaches 1 when `B` starts at
//! `1 - h`; `g(s) = lim f^h(s) / h` as `h -> 0`. Each quantity has two
//! representations: an image (Gaussian) series that converges fast for small `s`
//! and an eigenfunction series in `exp(-(2k+1)^2 pi^2 s / 8)` that converges fast
//! for large `s`. Evaluation switches between them at [`SeriesParams::s_switch`].
//!
//! Besides the densities themselves the module provides closed forms for the
//! partial integrals `int g`, `int s g`, `int f^h`, `int s f^h`, which the
//! integro-differential solver and the value-function extension use as
//! product-integration weights, and the Laplace transform / half moment of the
//! corridor exit time `sigma^h`.

use core::f64::consts::{FRAC_2_SQRT_PI, PI};

#[cfg(not(feature = "std"))]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{integrate, QuadSpec};

const SQRT_2PI: f64 = 2.506_628_274_631_000_5;
/// `sqrt(2 / pi)`
const SQRT_2_OVER_PI: f64 = FRAC_2_SQRT_PI * core::f64::consts::FRAC_1_SQRT_2;
const PI2_OVER_8: f64 = PI * PI / 8.0;

/// Truncation and branch-switch settings for the density series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesParams {
    pub n_terms_small: usize,
    pub n_terms_spectral: usize,
    pub s_switch: f64,
    pub abs_tol: f64,
}

impl Default for SeriesParams {
    fn default() -> Self {
        Self {
            n_terms_small: 20,
            n_terms_spectral: 60,
            s_switch: 1.0,
            abs_tol: 1e-13,
        }
    }
}

impl SeriesParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_terms_small == 0 || self.n_terms_spectral == 0 {
            return Err(Error::Domain("series term counts must be at least 1"));
        }
        if !(self.s_switch > 0.0 && self.s_switch.is_finite()) {
            return Err(Error::Domain("s_switch must be positive"));
        }
        if !(self.abs_tol > 0.0) {
            return Err(Error::Domain("abs_tol must be positive"));
        }
        Ok(())
    }

    fn small(&self, s: f64) -> bool {
        s < self.s_switch
    }
}

/// Eigenvalue `(2k+1)^2 pi^2 / 8` of the exit problem.
#[inline]
fn lambda(k: usize) -> f64 {
    let m = (2 * k + 1) as f64;
    m * m * PI2_OVER_8
}

/// Frequency `(2k+1) pi / 2` of the `k`-th eigenfunction.
#[inline]
fn omega(k: usize) -> f64 {
    (2 * k + 1) as f64 * core::f64::consts::FRAC_PI_2
}

/// Iterator over `exp(-lambda_k s)` for `k = 0, 1, ...` using one exponential.
struct SpectralWeights {
    current: f64,
    step: f64,
    q8: f64,
}

impl SpectralWeights {
    fn new(s: f64) -> Self {
        let q = (-PI2_OVER_8 * s).exp();
        let q8 = q.powi(8);
        // exp(-lambda_{k+1} s) = exp(-lambda_k s) * q^(8k + 8)
        Self { current: q, step: q8, q8 }
    }
}

impl Iterator for SpectralWeights {
    type Item = f64;
    fn next(&mut self) -> Option<f64> {
        let out = self.current;
        self.current *= self.step;
        self.step *= self.q8;
        Some(out)
    }
}

/// Iterator over `q^(n^2)` for `n = 1, 2, ...`.
struct ThetaPowers {
    current: f64,
    step: f64,
    q2: f64,
}

impl ThetaPowers {
    fn new(q: f64) -> Self {
        Self { current: q, step: q * q * q, q2: q * q }
    }
}

impl Iterator for ThetaPowers {
    type Item = f64;
    fn next(&mut self) -> Option<f64> {
        let out = self.current;
        self.current *= self.step;
        self.step *= self.q2;
        Some(out)
    }
}

const NEGLIGIBLE: f64 = 1e-18;

fn check_h_open(h: f64) -> Result<()> {
    if !(h > 0.0 && h < 1.0) {
        return Err(Error::Domain("h must lie in (0, 1)"));
    }
    Ok(())
}

fn check_s(s: f64) -> Result<()> {
    if !(s > 0.0) || s.is_nan() {
        return Err(Error::Domain("s must be positive"));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// f^h
// ---------------------------------------------------------------------------

/// Image-series offsets `4n + h` and `4n + 2 - h` for `n = 0, ±1, ...`,
/// in order of increasing magnitude.
fn image_offsets(h: f64, n_terms: usize) -> impl Iterator<Item = f64> {
    let head = [h, 2.0 - h, -2.0 - h, h - 4.0];
    let tail = (1..n_terms).flat_map(move |n| {
        let m = 4.0 * n as f64;
        [m + h, m + 2.0 - h, -m - 2.0 - h, -m + h - 4.0]
    });
    head.into_iter().chain(tail)
}

/// `f^h(s)` from the image series (accurate for small `s`).
pub fn fh_small_time(h: f64, s: f64, n_terms: usize) -> f64 {
    let mut acc = 0.0;
    for c in image_offsets(h, n_terms) {
        let term = c * (-c * c / (2.0 * s)).exp();
        acc += term;
        if term.abs() <= NEGLIGIBLE * acc.abs() && c.abs() > 2.0 {
            break;
        }
    }
    acc / (SQRT_2PI * s * s.sqrt())
}

/// `f^h(s)` from the eigenfunction series (accurate for large `s`).
pub fn fh_spectral(h: f64, s: f64, n_terms: usize) -> f64 {
    let mut acc = 0.0;
    for (k, e) in SpectralWeights::new(s).take(n_terms).enumerate() {
        let w = omega(k);
        acc += w * (w * h).sin() * e;
        if w * e <= NEGLIGIBLE * acc.abs() {
            break;
        }
    }
    acc
}

/// Density of the first time `|B|` hits 1 for `B(0) = 1 - h`.
pub fn eval_fh(h: f64, s: f64, params: &SeriesParams) -> Result<f64> {
    check_h_open(h)?;
    check_s(s)?;
    Ok(fh_unchecked(h, s, params))
}

#[inline]
pub(crate) fn fh_unchecked(h: f64, s: f64, params: &SeriesParams) -> f64 {
    if params.small(s) {
        fh_small_time(h, s, params.n_terms_small)
    } else {
        fh_spectral(h, s, params.n_terms_spectral)
    }
}

/// `P(rho^h > a)`, the survival function of the exit time, for `a >= 0`.
pub fn fh_survival(h: f64, a: f64, params: &SeriesParams) -> f64 {
    if a <= 0.0 {
        return 1.0;
    }
    if params.small(a) {
        let scale = 1.0 / (2.0 * a).sqrt();
        let mut hit = 0.0;
        for c in image_offsets(h, params.n_terms_small) {
            let term = c.signum() * libm::erfc(c.abs() * scale);
            hit += term;
            if term.abs() <= NEGLIGIBLE && c.abs() > 2.0 {
                break;
            }
        }
        1.0 - hit
    } else {
        let mut acc = 0.0;
        for (k, e) in SpectralWeights::new(a).take(params.n_terms_spectral).enumerate() {
            let w = omega(k);
            acc += 2.0 / w * (w * h).sin() * e;
            if e <= NEGLIGIBLE {
                break;
            }
        }
        acc
    }
}

/// `int_0^a s f^h(s) ds`; tends to `h (2 - h)` as `a -> infinity`.
pub fn fh_partial_mean(h: f64, a: f64, params: &SeriesParams) -> f64 {
    if a <= 0.0 {
        return 0.0;
    }
    if params.small(a) {
        let root = (2.0 * a / PI).sqrt();
        let scale = 1.0 / (2.0 * a).sqrt();
        let mut acc = 0.0;
        for c in image_offsets(h, params.n_terms_small) {
            let m = c.abs();
            let term = c.signum() * (m * root * (-c * c / (2.0 * a)).exp() - c * c * libm::erfc(m * scale));
            acc += term;
            if term.abs() <= NEGLIGIBLE && m > 2.0 {
                break;
            }
        }
        acc
    } else {
        let mut tail = 0.0;
        for (k, e) in SpectralWeights::new(a).take(params.n_terms_spectral).enumerate() {
            let l = lambda(k);
            let w = omega(k);
            tail += w * (w * h).sin() * (a / l + 1.0 / (l * l)) * e;
            if e <= NEGLIGIBLE {
                break;
            }
        }
        h * (2.0 - h) - tail
    }
}

// ---------------------------------------------------------------------------
// g
// ---------------------------------------------------------------------------

/// `g(s)` from the image series (accurate for small `s`).
pub fn g_small_time(s: f64, n_terms: usize) -> f64 {
    let q = (-2.0 / s).exp();
    let mut acc = 1.0;
    let mut sign = -1.0;
    for (i, p) in ThetaPowers::new(q).take(n_terms).enumerate() {
        let n = (i + 1) as f64;
        let c2 = 4.0 * n * n;
        let term = 2.0 * sign * (1.0 - c2 / s) * p;
        acc += term;
        // the factor 1 - c2 / s vanishes at s = 4 n^2, so bound the term without it
        if 2.0 * (1.0 + c2 / s) * p <= NEGLIGIBLE * acc.abs() {
            break;
        }
        sign = -sign;
    }
    acc / (SQRT_2PI * s * s.sqrt())
}

/// `g(s)` from the eigenfunction series (accurate for large `s`).
pub fn g_spectral(s: f64, n_terms: usize) -> f64 {
    let mut acc = 0.0;
    for (k, e) in SpectralWeights::new(s).take(n_terms).enumerate() {
        let w = omega(k);
        let term = w * w * e;
        acc += term;
        if term <= NEGLIGIBLE * acc {
            break;
        }
    }
    acc
}

/// `g(s) = lim_{h -> 0} f^h(s) / h`.
pub fn eval_g(s: f64, params: &SeriesParams) -> Result<f64> {
    check_s(s)?;
    Ok(g_unchecked(s, params))
}

#[inline]
pub(crate) fn g_unchecked(s: f64, params: &SeriesParams) -> f64 {
    if params.small(s) {
        g_small_time(s, params.n_terms_small)
    } else {
        g_spectral(s, params.n_terms_spectral)
    }
}

/// `int_a^infinity g(s) ds` for `a > 0` (it diverges like `sqrt(2 / (pi a))` at 0).
pub fn g_tail(a: f64, params: &SeriesParams) -> f64 {
    if a <= 0.0 {
        return f64::INFINITY;
    }
    if params.small(a) {
        let theta = alternating_theta(a, params.n_terms_small);
        SQRT_2_OVER_PI / a.sqrt() * theta
    } else {
        let mut acc = 0.0;
        for e in SpectralWeights::new(a).take(params.n_terms_spectral) {
            acc += 2.0 * e;
            if e <= NEGLIGIBLE * acc {
                break;
            }
        }
        acc
    }
}

/// `int_0^a s g(s) ds`; tends to 2 as `a -> infinity`.
pub fn g_partial_mean(a: f64, params: &SeriesParams) -> f64 {
    if a <= 0.0 {
        return 0.0;
    }
    if params.small(a) {
        let theta = alternating_theta(a, params.n_terms_small);
        let r = (2.0 / a).sqrt();
        let mut erfc_sum = 0.0;
        let mut sign = -1.0;
        for n in 1..=params.n_terms_small {
            let nf = n as f64;
            let term = sign * nf * libm::erfc(nf * r);
            erfc_sum += term;
            if term.abs() < 1e-18 {
                break;
            }
            sign = -sign;
        }
        SQRT_2_OVER_PI * a.sqrt() * theta - 8.0 * erfc_sum
    } else {
        let mut tail = 0.0;
        for (k, e) in SpectralWeights::new(a).take(params.n_terms_spectral).enumerate() {
            let term = 2.0 * (a + 1.0 / lambda(k)) * e;
            tail += term;
            if e <= NEGLIGIBLE {
                break;
            }
        }
        2.0 - tail
    }
}

/// `1 + 2 sum_{n >= 1} (-1)^n exp(-2 n^2 / a)`
fn alternating_theta(a: f64, n_terms: usize) -> f64 {
    let q = (-2.0 / a).exp();
    let mut acc = 1.0;
    let mut sign = -1.0;
    for p in ThetaPowers::new(q).take(n_terms) {
        acc += 2.0 * sign * p;
        if p <= NEGLIGIBLE {
            break;
        }
        sign = -sign;
    }
    acc
}

// ---------------------------------------------------------------------------
// Corridor exit time sigma^h
// ---------------------------------------------------------------------------

/// Laplace transform `E[exp(-theta sigma^h)] = cosh(sqrt(2 theta)) / cosh((1+h) sqrt(2 theta))`
/// of the first exit time of `[-h, 2+h]` for Brownian motion started at 0.
pub fn laplace_sigma(theta: f64, h: f64) -> Result<f64> {
    if !(theta >= 0.0) {
        return Err(Error::Domain("theta must be nonnegative"));
    }
    if !(h > 0.0) {
        return Err(Error::Domain("h must be positive"));
    }
    let u = (2.0 * theta).sqrt();
    // ratio of cosh's without overflow
    let ratio = (-(h * u)).exp() * (1.0 + (-2.0 * u).exp()) / (1.0 + (-2.0 * (1.0 + h) * u).exp());
    Ok(ratio)
}

/// `E[sqrt(sigma^h)]` from the Laplace transform, after the substitution `u = sqrt(2 theta)`:
///
/// `sqrt(2/pi) [ int sinh(hu) / (u cosh((1+h)u)^2) du + h int cosh(u) tanh((1+h)u) / (u cosh((1+h)u)) du ]`.
pub fn half_moment_sigma(h: f64, quad: &QuadSpec) -> Result<f64> {
    if !(h > 0.0 && h <= 1.0) {
        return Err(Error::Domain("h must lie in (0, 1]"));
    }
    let a = 1.0 + h;
    // Both integrands are written with decaying exponentials only.
    let first = move |u: f64| -> f64 {
        if u == 0.0 {
            return h;
        }
        let e = (-2.0 * a * u).exp();
        // sinh(hu) / cosh(au)^2 = 2 (e^{hu} - e^{-hu}) e^{-2au} / (1 + e^{-2au})^2
        let sinh_part = (-(2.0 * a - h) * u).exp() - (-(2.0 * a + h) * u).exp();
        2.0 * sinh_part / ((1.0 + e) * (1.0 + e)) / u
    };
    let second = move |u: f64| -> f64 {
        if u == 0.0 {
            return a;
        }
        let e = (-2.0 * a * u).exp();
        let tanh = (1.0 - e) / (1.0 + e);
        // cosh(u) / cosh(au) = e^{-hu} (1 + e^{-2u}) / (1 + e^{-2au})
        let ratio = (-h * u).exp() * (1.0 + (-2.0 * u).exp()) / (1.0 + e);
        ratio * tanh / u
    };
    // Integrands decay like exp(-h u); cut where they fall below 1e-17.
    let upper = (40.0 / h).max(40.0);
    let split = 1.0_f64.min(upper);
    let mut total = 0.0;
    for (lo, hi) in [(0.0, split), (split, upper)] {
        total += integrate(first, lo, hi, quad)?.value;
        total += h * integrate(second, lo, hi, quad)?.value;
    }
    Ok(SQRT_2_OVER_PI * total)
}

/// First exit of Brownian motion from the corridor `[-h, 2 + h]` when started at 0
/// (equivalently of `|B - 1|` from `[0, 1 + h)`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorridorExit {
    pub h: f64,
    /// Abscissae at which [`CorridorExit::laplace_table`] evaluates the transform.
    pub theta_grid: alloc::vec::Vec<f64>,
}

impl CorridorExit {
    pub fn new(h: f64) -> Result<Self> {
        if !(h > 0.0 && h <= 1.0) {
            return Err(Error::Domain("h must lie in (0, 1]"));
        }
        let theta_grid = (0..=40).map(|i| 0.25 * i as f64).collect();
        Ok(Self { h, theta_grid })
    }

    pub fn laplace(&self, theta: f64) -> Result<f64> {
        laplace_sigma(theta, self.h)
    }

    pub fn laplace_table(&self) -> Result<alloc::vec::Vec<(f64, f64)>> {
        self.theta_grid
            .iter()
            .map(|&t| Ok((t, self.laplace(t)?)))
            .collect()
    }

    /// `E[sigma^h] = h (2 + h)`.
    pub fn mean(&self) -> f64 {
        self.h * (2.0 + self.h)
    }

    pub fn half_moment(&self, quad: &QuadSpec) -> Result<f64> {
        half_moment_sigma(self.h, quad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> SeriesParams {
        SeriesParams::default()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn branches_agree_for_g() {
        for &s in &[0.2, 0.3, 0.5, 1.0, 2.0, 3.0, 5.0] {
            let a = g_small_time(s, 40);
            let b = g_spectral(s, 200);
            assert!(rel(a, b) < 1e-10, "s={s}: {a} vs {b}");
        }
    }

    #[test]
    fn branches_agree_for_fh() {
        for &h in &[0.05, 0.3, 0.5, 0.9] {
            for &s in &[0.2, 0.3, 0.5, 1.0, 2.0, 3.0, 5.0] {
                let a = fh_small_time(h, s, 40);
                let b = fh_spectral(h, s, 200);
                assert!(rel(a, b) < 1e-10, "h={h} s={s}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn tails_agree_across_branches() {
        let small = SeriesParams { s_switch: 100.0, n_terms_small: 40, ..p() };
        let large = SeriesParams { s_switch: 1e-9, n_terms_spectral: 400, ..p() };
        for &a in &[0.1, 0.4, 1.0, 2.5] {
            assert!(rel(g_tail(a, &small), g_tail(a, &large)) < 1e-11, "tail a={a}");
            assert!(rel(g_partial_mean(a, &small), g_partial_mean(a, &large)) < 1e-11, "mean a={a}");
            for &h in &[0.1, 0.6] {
                assert!(rel(fh_survival(h, a, &small), fh_survival(h, a, &large)) < 1e-10, "surv h={h} a={a}");
                assert!(
                    rel(fh_partial_mean(h, a, &small), fh_partial_mean(h, a, &large)) < 1e-10,
                    "fmean h={h} a={a}"
                );
            }
        }
    }

    #[test]
    fn tails_match_quadrature() {
        let q = QuadSpec::default().with_tolerances(1e-13, 1e-15);
        let params = p();
        for &(lo, hi) in &[(0.05, 0.4), (0.4, 3.0), (0.9, 1.1)] {
            let direct = integrate(|s| g_unchecked(s, &params), lo, hi, &q).unwrap().value;
            let closed = g_tail(lo, &params) - g_tail(hi, &params);
            assert!((direct - closed).abs() < 1e-11, "{direct} {closed}");
            let direct = integrate(|s| s * g_unchecked(s, &params), lo, hi, &q).unwrap().value;
            let closed = g_partial_mean(hi, &params) - g_partial_mean(lo, &params);
            assert!((direct - closed).abs() < 1e-11);
            let direct = integrate(|s| s * fh_unchecked(0.3, s, &params), lo, hi, &q).unwrap().value;
            let closed = fh_partial_mean(0.3, hi, &params) - fh_partial_mean(0.3, lo, &params);
            assert!((direct - closed).abs() < 1e-11);
        }
    }

    #[test]
    fn g_behaves_like_inverse_three_halves_near_zero() {
        let s = 1e-4;
        let lead = 1.0 / (SQRT_2PI * s * s.sqrt());
        assert!(rel(g_small_time(s, 20), lead) < 1e-12);
    }

    #[test]
    fn fh_over_h_tends_to_g() {
        let h = 1e-5;
        let ratio = eval_fh(h, 1.0, &p()).unwrap() / h;
        assert!(rel(ratio, eval_g(1.0, &p()).unwrap()) < 1e-4);
    }

    #[test]
    fn domain_errors() {
        assert!(eval_fh(0.0, 1.0, &p()).is_err());
        assert!(eval_fh(1.0, 1.0, &p()).is_err());
        assert!(eval_fh(0.5, 0.0, &p()).is_err());
        assert!(eval_g(-1.0, &p()).is_err());
        assert!(laplace_sigma(-1.0, 0.5).is_err());
        assert!(half_moment_sigma(0.0, &QuadSpec::default()).is_err());
        assert!(SeriesParams { n_terms_small: 0, ..p() }.validate().is_err());
    }

    #[test]
    fn survival_limits() {
        assert_eq!(fh_survival(0.3, 0.0, &p()), 1.0);
        assert!(fh_survival(0.3, 60.0, &p()) < 1e-20);
        assert!((fh_partial_mean(0.3, 60.0, &p()) - 0.3 * 1.7).abs() < 1e-14);
        assert!((g_partial_mean(60.0, &p()) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn laplace_normalised_and_decreasing() {
        for &h in &[0.01, 0.2, 1.0] {
            assert!((laplace_sigma(0.0, h).unwrap() - 1.0).abs() < 1e-15);
        }
        let mut last = 1.0;
        for i in 1..200 {
            let v = laplace_sigma(0.1 * i as f64, 0.2).unwrap();
            assert!(v < last);
            last = v;
        }
    }
}
