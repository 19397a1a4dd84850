//! Prints empirical second moments of the state, Jacobian, and weight
//! processes against their growth bounds.

use sfpe::bel::{accumulate_bel_all, z_moment_report};
use sfpe::coefficients::OrnsteinUhlenbeck;
use sfpe::rng::CounterRng;
use sfpe::sde::{moment_bound_report_x_j, simulate_paths, SimOptions};
use sfpe::time_grid::TimeGrid;
use std::sync::Arc;

fn main() {
    let coeffs = OrnsteinUhlenbeck { d: 2, rate: 0.5 };
    let grid = Arc::new(TimeGrid::uniform(0.0, 1.0, 20).unwrap());
    let opts = SimOptions::plain(2);
    let rng = CounterRng::new(7, 0);
    let mut paths = simulate_paths(&coeffs, 0.0, &[0.4, 0.1], &grid, &opts, 20_000, rng).unwrap();
    accumulate_bel_all(&mut paths, &coeffs).unwrap();

    let xj = moment_bound_report_x_j(&paths, &coeffs).unwrap();
    println!(
        "{:>6} {:>10} {:>10} {:>6} {:>10} {:>10} {:>6}",
        "s", "E||X||^2", "bound", "ok", "E||J||^2", "bound", "ok"
    );
    for row in xj.rows.iter().step_by(4) {
        println!(
            "{:>6.2} {:>10.4} {:>10.4} {:>6} {:>10.4} {:>10.4} {:>6}",
            row.s, row.x2_mean, row.x2_bound, row.x2_ok, row.j2_mean, row.j2_bound, row.j2_ok
        );
    }

    let zr = z_moment_report(&paths, &coeffs, 0.0).unwrap();
    println!(
        "\n{:>6} {:>10} {:>10} {:>6} {:>10} {:>10} {:>6}",
        "s", "E||Y||^2", "bound", "ok", "E||Z||^2", "bound", "ok"
    );
    for row in zr.rows.iter().step_by(4) {
        println!(
            "{:>6.2} {:>10.4} {:>10.4} {:>6} {:>10.4} {:>10.4} {:>6}",
            row.s, row.y2_mean, row.y2_bound, row.y2_ok, row.z2_mean, row.z2_bound, row.z2_ok
        );
    }
}
