mod common;

use csd_observer::grid::{Grid, Signal};
use csd_observer::observer::{functional_t, observation_matrix, solve_kernel, KernelBank, LambdaBank, Spacing};
use csd_observer::process::reference_growth;
use nalgebra::DVector;

use common::{reference_run, rk4_characteristic, simpson};

#[test]
fn unit_speed_kernel_matches_ode_along_characteristics() {
    let grid = Grid::new(0.0, 10.0, 101, 0.0, 4.0, 41).unwrap();
    let rate = Signal::constant(&grid, 1.0).unwrap();
    for lambda in [-0.1, -1.0, -10.0] {
        let kernel = solve_kernel(lambda, &rate, &grid).unwrap();
        for k in (0..grid.n_t).step_by(5) {
            for j in (k..grid.n_x).step_by(7) {
                let x0 = grid.x(j - k);
                let t = grid.t(k);
                let (_, a) = rk4_characteristic(lambda, x0, grid.t0, t, &|_| 1.0, 4000);
                let quad = simpson(|s| (lambda * (t - s)).exp() * (x0 + s).powi(3), 0.0, t, 4000);
                let got = kernel.at(k, j);
                let scale = a.abs().max(1e-300);
                assert!((got - a).abs() <= 1e-9 * scale.max(1.0), "lambda {lambda} node ({k}, {j}): {got} vs {a}");
                assert!((quad - a).abs() <= 1e-9 * scale.max(1.0));
            }
        }
    }
}

#[test]
fn characteristics_from_the_inflow_edge_start_at_zero() {
    let grid = Grid::new(1.0, 11.0, 101, 0.0, 4.0, 41).unwrap();
    let rate = Signal::constant(&grid, 1.0).unwrap();
    let lambda = -2.0;
    let kernel = solve_kernel(lambda, &rate, &grid).unwrap();
    // node (k, j) with j < k was born on x_min at time t_k - (x_j - x_min)
    for (k, j) in [(10, 3), (40, 1), (25, 24)] {
        let born = grid.t(k) - (grid.x(j) - grid.x_min);
        let (_, a) = rk4_characteristic(lambda, grid.x_min, born, grid.t(k), &|_| 1.0, 4000);
        assert!((kernel.at(k, j) - a).abs() <= 1e-9 * a.abs().max(1.0), "node ({k}, {j})");
    }
}

#[test]
fn stiff_kernel_stays_below_the_steady_balance() {
    let grid = Grid::reference();
    let rate = Signal::from_fn(&grid, reference_growth).unwrap();
    let lambda = -1000.0;
    let kernel = solve_kernel(lambda, &rate, &grid).unwrap();
    let bound = grid.x_max.powi(3) / lambda.abs();
    let worst = kernel.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(worst <= bound * (1.0 + 1e-12), "max |a| = {worst}, bound {bound}");
    assert!(worst > 0.5 * bound);
}

fn max_residual(grid: &Grid, lambda: f64) -> f64 {
    let rate = Signal::from_fn(grid, reference_growth).unwrap();
    let kernel = solve_kernel(lambda, &rate, grid).unwrap();
    let (dx, dt) = (grid.dx(), grid.dt());
    let mut worst = 0.0f64;
    for k in 1..grid.n_t - 1 {
        let g = reference_growth(grid.t(k));
        for j in 1..grid.n_x - 1 {
            let a_t = (kernel.at(k + 1, j) - kernel.at(k - 1, j)) / (2.0 * dt);
            let a_x = (kernel.at(k, j + 1) - kernel.at(k, j - 1)) / (2.0 * dx);
            let r = a_t + g * a_x - lambda * kernel.at(k, j) - grid.x(j).powi(3);
            worst = worst.max(r.abs());
        }
    }
    worst
}

#[test]
fn kernel_pde_residual_shrinks_at_first_order() {
    // |lambda| dt <= 1 on the coarse grid, so the initial layer is resolved
    let coarse = Grid::new(0.0, 10.0, 101, 0.0, 10.0, 101).unwrap();
    let fine = coarse.refined();
    for lambda in [-1.0, -10.0] {
        let (r0, r1) = (max_residual(&coarse, lambda), max_residual(&fine, lambda));
        let order = (r0 / r1).log2();
        assert!(order >= 0.9, "lambda {lambda}: residuals {r0:.3e} -> {r1:.3e}, order {order:.2}");
    }
}

#[test]
fn observation_matrix_reproduces_the_functional() {
    let grid = Grid::reference();
    let (scenario, field, _) = reference_run(grid);
    let bank = LambdaBank::spaced(-100.0, -1.0, 5, Spacing::Uniform).unwrap();
    let kernels = KernelBank::compute(&bank, scenario.growth_rate(), &grid).unwrap();
    for k in [0, 1, 37, grid.n_t - 1] {
        let a = observation_matrix(&kernels, k).unwrap();
        let product = &a * DVector::from_column_slice(field.row(k));
        for i in 0..bank.len() {
            let direct = functional_t(&kernels.kernel(i), &field, k).unwrap();
            assert!((product[i] - direct).abs() <= 1e-12 * direct.abs().max(1e-300), "lambda {i}, k {k}");
        }
    }
    let a0 = observation_matrix(&kernels, 0).unwrap();
    assert!(a0.iter().all(|&v| v == 0.0));
}
