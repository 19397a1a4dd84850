//! Runs the full fixed-point iteration on the gradient-coupled sine
//! benchmark and compares the result to its closed-form solution.

use sfpe::manufactured::{benchmark_by_name, compare_to_reference, default_cutoff};
use sfpe::solver::{solve, McConfig, QuadratureRule};

fn main() {
    let b = benchmark_by_name("sine-gradient").unwrap();
    let mc = McConfig {
        n_paths: 4_000,
        n_steps: 40,
        base_seed: 1,
        taming: false,
        rule: QuadratureRule::SingularLeft,
        lambda: None,
        n_time_nodes: 20,
        nodes_per_axis: Some(21),
        grid_extent: Some(b.extent.clone()),
        padding_cells: 4,
    };
    let (grid, diag) = solve(&b.problem, &mc, 1e-1, 8).unwrap();

    println!("damping rate {:.3}, converged: {}", diag.lambda, diag.converged);
    for (k, d) in diag.distances.iter().enumerate() {
        let ratio = if k == 0 {
            "    -".into()
        } else {
            format!("{:.3}", diag.ratios[k - 1])
        };
        println!(
            "sweep {:>2}: distance {d:>12.5e}  ratio {ratio}  noise floor {:>10.3e}",
            k + 1,
            diag.noise_floors[k]
        );
    }

    let acc = compare_to_reference(&grid, &b.reference, default_cutoff(b.problem.horizon)).unwrap();
    println!(
        "error vs closed form: sup value {:.4}, sup gradient {:.4}",
        acc.sup_value, acc.sup_gradient
    );
}
