//! Adaptive Gauss–Kronrod quadrature on finite and semi-infinite intervals.
//!
//! A known power singularity `(s - a)^alpha` at the lower endpoint is removed by
//! the substitution `s = a + v^k` with `k (alpha + 1) >= 1`, and an infinite upper
//! limit is mapped onto `[0, 1)` by `s = a + u / (1 - u)`.

use alloc::collections::BinaryHeap;
use core::cmp::Ordering;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerances and structural hints for [`integrate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadSpec {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_subdivisions: usize,
    /// Power of the (integrable) singularity at the lower endpoint; `0` for none.
    pub singular_exponent: f64,
}

impl Default for QuadSpec {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            max_subdivisions: 2000,
            singular_exponent: 0.0,
        }
    }
}

impl QuadSpec {
    pub fn with_singularity(mut self, exponent: f64) -> Self {
        self.singular_exponent = exponent;
        self
    }

    pub fn with_tolerances(mut self, rel_tol: f64, abs_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self.abs_tol = abs_tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.singular_exponent > -1.0 && self.singular_exponent <= 0.0) {
            return Err(Error::Domain("singular_exponent must lie in (-1, 0]"));
        }
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(Error::Domain("quadrature tolerances must be positive"));
        }
        if self.max_subdivisions == 0 {
            return Err(Error::Domain("max_subdivisions must be at least 1"));
        }
        Ok(())
    }

    /// Exponent `k` of the substitution `s - a = v^k`.
    fn power(&self) -> i32 {
        if self.singular_exponent < 0.0 {
            (1.0 / (1.0 + self.singular_exponent) - 1e-9).ceil() as i32
        } else {
            1
        }
    }
}

/// Value of an integral together with its estimated absolute error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

// Kronrod 21-point abscissae and weights; odd indices are the 10-point Gauss nodes.
#[allow(clippy::excessive_precision)]
const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];
#[allow(clippy::excessive_precision)]
const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_208_226_099_419,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];
#[allow(clippy::excessive_precision)]
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

/// Four-point Gauss–Legendre rule on `[-1, 1]` as `(node, weight)` pairs.
pub const GAUSS_LEGENDRE_4: [(f64, f64); 4] = [
    (-0.861_136_311_594_052_6, 0.347_854_845_137_453_85),
    (-0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.861_136_311_594_052_6, 0.347_854_845_137_453_85),
];

/// Applies a fixed Gauss–Legendre rule on `[a, b]`.
pub fn fixed_rule<F: FnMut(f64) -> f64>(rule: &[(f64, f64)], a: f64, b: f64, mut f: F) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (b + a);
    rule.iter().map(|&(x, w)| w * f(mid + half * x)).sum::<f64>() * half
}

fn kronrod<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (b + a);
    let fc = f(mid);
    let mut resk = fc * WGK[10];
    let mut resg = 0.0;
    for j in 0..10 {
        let dx = half * XGK[j];
        let pair = f(mid - dx) + f(mid + dx);
        resk += WGK[j] * pair;
        if j % 2 == 1 {
            resg += WG[j / 2] * pair;
        }
    }
    (resk * half, ((resk - resg) * half).abs())
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn adapt<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, spec: &QuadSpec) -> Result<QuadResult> {
    let mut heap = BinaryHeap::new();
    let (value, error) = kronrod(&mut f, a, b);
    let mut total = value;
    let mut total_err = error;
    let mut evaluations = 21;
    heap.push(Segment { a, b, value, error });
    let mut segments = 1;
    loop {
        let tol = spec.abs_tol.max(spec.rel_tol * total.abs());
        if !total_err.is_finite() || !total.is_finite() {
            return Err(Error::QuadratureNonconvergence {
                estimate: total,
                error: total_err,
            });
        }
        if total_err <= tol {
            return Ok(QuadResult {
                value: total,
                error: total_err,
                evaluations,
            });
        }
        if segments >= spec.max_subdivisions {
            return Err(Error::QuadratureNonconvergence {
                estimate: total,
                error: total_err,
            });
        }
        let worst = match heap.pop() {
            Some(s) => s,
            None => unreachable!("heap holds every live segment"),
        };
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Interval can no longer be split in floating point.
            return Err(Error::QuadratureNonconvergence {
                estimate: total,
                error: total_err,
            });
        }
        let (v1, e1) = kronrod(&mut f, worst.a, mid);
        let (v2, e2) = kronrod(&mut f, mid, worst.b);
        evaluations += 42;
        total += v1 + v2 - worst.value;
        total_err += e1 + e2 - worst.error;
        heap.push(Segment { a: worst.a, b: mid, value: v1, error: e1 });
        heap.push(Segment { a: mid, b: worst.b, value: v2, error: e2 });
        segments += 1;
    }
}

/// Integrates `f` over `(a, b)`; `b` may be `f64::INFINITY`.
///
/// Nonconvergence is reported as [`Error::QuadratureNonconvergence`] carrying the
/// best estimate and its error bound.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, spec: &QuadSpec) -> Result<QuadResult> {
    spec.validate()?;
    if !(a < b) || a.is_nan() {
        return Err(Error::Domain("integration requires a < b"));
    }
    let k = spec.power();
    if b.is_infinite() {
        let mapped = move |u: f64| {
            if u >= 1.0 {
                return 0.0;
            }
            let w = 1.0 - u;
            f(a + u / w) / (w * w)
        };
        adapt_power(mapped, 0.0, 1.0, k, spec)
    } else {
        let shifted = move |x: f64| f(a + x);
        adapt_power(shifted, 0.0, b - a, k, spec)
    }
}

/// Integrates `f(x)` over `(0, len)` through `x = v^k`.
fn adapt_power<F: FnMut(f64) -> f64>(mut f: F, zero: f64, len: f64, k: i32, spec: &QuadSpec) -> Result<QuadResult> {
    if k == 1 {
        return adapt(f, zero, len, spec);
    }
    let kf = k as f64;
    let upper = len.powf(1.0 / kf);
    adapt(
        move |v: f64| {
            if v <= 0.0 {
                return 0.0;
            }
            kf * v.powi(k - 1) * f(v.powi(k))
        },
        0.0,
        upper,
        spec,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> QuadSpec {
        QuadSpec::default().with_tolerances(1e-12, 1e-14)
    }

    #[test]
    fn kronrod_is_exact_on_polynomials() {
        let r = integrate(|x| 3.0 * x * x - x + 2.0, -1.0, 2.0, &spec()).unwrap();
        assert!((r.value - 13.5).abs() < 1e-13);
    }

    #[test]
    fn inverse_sqrt_singularity() {
        let s = spec().with_singularity(-0.5);
        let r = integrate(|x| 1.0 / x.sqrt(), 0.0, 1.0, &s).unwrap();
        assert!((r.value - 2.0).abs() < 1e-10, "{}", r.value);
    }

    #[test]
    fn stronger_singularity_uses_higher_power() {
        let s = spec().with_singularity(-0.8);
        assert_eq!(s.power(), 5);
        let r = integrate(|x| x.powf(-0.8), 0.0, 1.0, &s).unwrap();
        assert!((r.value - 5.0).abs() < 1e-9, "{}", r.value);
    }

    #[test]
    fn semi_infinite_exponential() {
        let r = integrate(|x| (-x).exp(), 0.0, f64::INFINITY, &spec()).unwrap();
        assert!((r.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn semi_infinite_with_singularity() {
        // Gamma(1/2) = sqrt(pi)
        let s = spec().with_singularity(-0.5);
        let r = integrate(|x| (-x).exp() / x.sqrt(), 0.0, f64::INFINITY, &s).unwrap();
        assert!((r.value - core::f64::consts::PI.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(integrate(|x| x, 1.0, 0.0, &spec()).is_err());
        assert!(integrate(|x| x, 0.0, 1.0, &spec().with_singularity(-1.0)).is_err());
    }

    #[test]
    fn nonconvergence_reports_best_estimate() {
        let s = QuadSpec {
            max_subdivisions: 3,
            ..spec()
        };
        match integrate(|x| (50.0 * x).sin().abs(), 0.0, 10.0, &s) {
            Err(Error::QuadratureNonconvergence { estimate, error }) => {
                assert!(estimate.is_finite() && error > 0.0);
            }
            other => panic!("expected nonconvergence, got {other:?}"),
        }
    }

    #[test]
    fn fixed_rule_integrates_cubics() {
        let v = fixed_rule(&GAUSS_LEGENDRE_4, 0.0, 2.0, |x| x * x * x);
        assert!((v - 4.0).abs() < 1e-14);
    }
}
