mod common;

use bdg_core::oide::*;
use common::{linspace, published_pair};

fn regime(c: f64, t0: f64) -> Regime {
    solve(&SolverParams::new(c, t0), &RegimeThresholds::default()).unwrap().regime
}

#[test]
fn subcritical_family_diverges_down() {
    for t0 in linspace(0.8, 1.0, 9) {
        assert_eq!(regime(1.25, t0), Regime::MinusInfinity, "t0={t0}");
    }
}

#[test]
fn supercritical_inside_interval_diverges_up() {
    assert_eq!(regime(1.274, 0.90), Regime::PlusInfinity);
}

#[test]
fn published_pair_is_bounded() {
    let grid = published_pair(GridPolicy::default());
    assert_eq!(grid.regime, Regime::Bounded);
    let c = grid.params.c;
    assert!(grid.u_at_floor >= -c && grid.u_at_floor <= 0.0, "{}", grid.u_at_floor);
    assert!(grid.is_monotone() && grid.stays_above_floor());
}

#[test]
fn published_pair_resolved_to_small_t_diverges_up() {
    // With the fast mode resolved all the way down, the pair shows it lies a hair
    // above the critical curve.
    let params = SolverParams::new(1.27267, 0.9036).with_grid(GridPolicy { damped_below: 0.0, ..GridPolicy::default() });
    assert_eq!(solve(&params, &RegimeThresholds::default()).unwrap().regime, Regime::PlusInfinity);
}

#[test]
fn refinement_moves_bounded_floor_value_little() {
    let coarse = published_pair(GridPolicy::default());
    let fine = published_pair(GridPolicy::default().refined());
    assert_eq!(fine.regime, Regime::Bounded);
    assert!((coarse.u_at_floor - fine.u_at_floor).abs() < 5e-4);
}

#[test]
fn kink_at_pasting_point() {
    let coarse = published_pair(GridPolicy::default());
    let fine = published_pair(GridPolicy::default().refined());
    assert!(coarse.pasting_gap().abs() > 0.01, "{}", coarse.pasting_gap());
    assert!((coarse.pasting_gap() - fine.pasting_gap()).abs() < 1e-3);
}

#[test]
fn continuous_pasting() {
    let grid = published_pair(GridPolicy::default());
    assert_eq!(grid.ts[0], 0.9036);
    assert_eq!(grid.us[0], 0.9036f64.sqrt() - 1.27267);
    for t in [0.9036, 1.0, 2.5] {
        assert_eq!(grid.value(t).unwrap(), t.sqrt() - 1.27267);
    }
}

#[test]
fn right_branch_slope() {
    let params = SolverParams::new(1.3, 0.9);
    for t in [0.9, 1.7, 4.0] {
        assert!((params.floor_slope(t) - 0.5 / t.sqrt()).abs() < 1e-15);
        // 2 t U' = U + C on the right branch
        assert!((2.0 * t * params.floor_slope(t) - params.floor(t) - params.c).abs() < 1e-14);
    }
}

#[test]
fn left_derivative_uses_the_analytic_branch() {
    let params = SolverParams::new(1.27267, 0.9036);
    let j = payoff_increment(0.9036, 1.0, &params.series).unwrap();
    let expected = (params.floor(0.9036) + j) / (2.0 * 0.9036);
    assert!((left_derivative_at_t0(&params).unwrap() - expected).abs() < 1e-15);
}

#[test]
fn supercritical_pattern_along_t0() {
    let pattern: Vec<Regime> = linspace(0.6, 1.2, 13).into_iter().map(|t0| regime(1.28, t0)).collect();
    let first_up = pattern.iter().position(|r| *r == Regime::PlusInfinity).unwrap();
    let last_up = pattern.iter().rposition(|r| *r == Regime::PlusInfinity).unwrap();
    assert!(first_up > 0 && last_up < pattern.len() - 1);
    for (i, r) in pattern.iter().enumerate() {
        let expected = if (first_up..=last_up).contains(&i) { Regime::PlusInfinity } else { Regime::MinusInfinity };
        assert_eq!(*r, expected, "{pattern:?}");
    }
}

#[test]
fn general_exponent_solves() {
    let params = SolverParams::new(1.2, 0.8).with_p(0.5).with_t_min(1e-3);
    let grid = solve(&params, &RegimeThresholds::default()).unwrap();
    assert_eq!(grid.us[0], 0.8f64.powf(0.25) - 1.2);
    assert_ne!(grid.regime, Regime::Inconclusive);
}

#[test]
fn rows_are_increasing_in_t() {
    let grid = published_pair(GridPolicy::default());
    let rows: Vec<_> = grid.rows().collect();
    assert_eq!(rows.len(), grid.ts.len());
    assert!(rows.windows(2).all(|w| w[0].0 < w[1].0));
    assert_eq!(rows.last().unwrap().0, 0.9036);
}
