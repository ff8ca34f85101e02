mod common;

use csd_observer::grid::{Grid, Signal};
use csd_observer::process::{analytic_solution, reference_growth, simulate, Growth, Scenario, SensorModel};
use proptest::prelude::*;

use common::{reference_run, sup_distance, upwind};

fn hat(center: f64, half_width: f64) -> impl Fn(f64) -> f64 {
    move |x| (1.0 - (x - center).abs() / half_width).max(0.0)
}

fn constant_speed(grid: Grid, psi0: Vec<f64>, u: Signal, g: f64) -> Scenario {
    let rate = Signal::constant(&grid, g).unwrap();
    Scenario::new(grid, psi0, u, Growth::Direct(rate), SensorModel::default(), None).unwrap()
}

#[test]
fn simulate_is_the_closed_form_at_every_node() {
    let (scenario, field, _) = reference_run(Grid::reference());
    let grid = *scenario.grid();
    for k in 0..grid.n_t {
        for j in 0..grid.n_x {
            let exact = analytic_solution(&scenario, grid.t(k), grid.x(j)).unwrap();
            assert!((field.at(k, j) - exact).abs() <= 1e-12, "node ({k}, {j})");
        }
    }
}

#[test]
fn upwind_oracle_converges_at_first_order() {
    let coarse = Grid::reference();
    let fine = coarse.refined();
    let mut errors = Vec::new();
    for grid in [coarse, fine] {
        let (scenario, field, _) = reference_run(grid);
        let u = scenario.nucleation().clone();
        let rows = upwind(&grid, scenario.psi0(), &|t| u.at(t), &reference_growth);
        errors.push(sup_distance(&field, &rows));
    }
    assert!(errors[0] < 5e-2, "coarse upwind gap {}", errors[0]);
    assert!(errors[0] / errors[1] >= 1.8, "gaps {errors:?}");
}

#[test]
fn boundary_rows_and_zero_tail() {
    let (scenario, field, _) = reference_run(Grid::reference());
    let grid = *scenario.grid();
    let tail = scenario.xbar() + scenario.cumulative_growth().total();
    assert!(tail < grid.x_max);
    for k in 0..grid.n_t {
        assert_eq!(field.at(k, 0), scenario.nucleation().at(grid.t(k)));
        assert_eq!(field.at(k, grid.n_x - 1), 0.0);
        for j in (0..grid.n_x).filter(|&j| grid.x(j) >= tail) {
            assert_eq!(field.at(k, j), 0.0, "tail node ({k}, {j})");
        }
    }
}

#[test]
fn second_branch_with_ramp_inflow() {
    let grid = Grid::new(0.5, 10.5, 101, 0.0, 4.0, 41).unwrap();
    let u = Signal::from_fn(&grid, |t| t).unwrap();
    let s = constant_speed(grid, vec![0.0; grid.n_x], u, 1.0);
    let field = simulate(&s).unwrap();
    for k in 0..grid.n_t {
        let t = grid.t(k);
        for j in 0..grid.n_x {
            let x = grid.x(j);
            let expected = if x - grid.x_min < t { t - x + grid.x_min } else { 0.0 };
            assert!((field.at(k, j) - expected).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn constant_speed_shifts_the_initial_profile(
        center_cell in 10usize..40,
        half_cells in 1usize..10,
        g in 0.2f64..1.0,
    ) {
        let grid = Grid::new(0.0, 10.0, 101, 0.0, 4.0, 41).unwrap();
        let dx = grid.dx();
        // kinks sit on nodes, so linear interpolation of psi0 is exact
        let profile = hat(center_cell as f64 * dx, half_cells as f64 * dx);
        let psi0: Vec<f64> = grid.xs().into_iter().map(&profile).collect();
        let s = constant_speed(grid, psi0, Signal::constant(&grid, 0.0).unwrap(), g);
        let field = simulate(&s).unwrap();
        for k in 0..grid.n_t {
            let shift = g * (grid.t(k) - grid.t0);
            for j in 0..grid.n_x {
                let x = grid.x(j);
                if x - grid.x_min >= shift {
                    prop_assert!((field.at(k, j) - profile(x - shift)).abs() < 1e-12);
                } else {
                    prop_assert_eq!(field.at(k, j), 0.0);
                }
            }
        }
    }
}
