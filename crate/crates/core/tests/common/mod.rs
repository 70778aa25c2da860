#![allow(dead_code)]

use bdg_core::extension::ExtendedValue;
use bdg_core::oide::{solve, GridPolicy, RegimeThresholds, SolutionGrid, SolverParams};

/// Solution at the published pair. The pair sits a few 1e-6 above the converged
/// critical constant, so the fast mode is only resolved down to t = 0.06.
pub fn published_pair(grid: GridPolicy) -> SolutionGrid {
    let mut params = SolverParams::new(1.27267, 0.9036).with_grid(grid);
    params.grid.damped_below = 0.06;
    solve(&params, &RegimeThresholds::default()).unwrap()
}

pub fn extended() -> ExtendedValue {
    ExtendedValue::new(published_pair(GridPolicy::default())).unwrap()
}

/// `(lo + hi) / 2` style uniform grid with `n` points.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}
