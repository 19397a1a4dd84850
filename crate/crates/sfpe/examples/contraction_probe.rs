//! Measures the sweep map's contraction factor on a random candidate
//! pair at the damping rate where the guaranteed factor is one half.

use sfpe::manufactured::benchmark_by_name;
use sfpe::solver::{
    contraction_probe_report, lambda_star, random_candidate_pair, McConfig, QuadratureRule,
};

fn main() {
    let b = benchmark_by_name("sine-gradient").unwrap();
    let lambda = lambda_star(b.problem.c_v, b.problem.lipschitz).unwrap();
    let guaranteed = 0.5;
    let mc = McConfig {
        n_paths: 2_000,
        n_steps: 40,
        base_seed: 11,
        taming: false,
        rule: QuadratureRule::SingularLeft,
        lambda: Some(lambda),
        n_time_nodes: 8,
        nodes_per_axis: Some(21),
        grid_extent: Some(b.extent.clone()),
        padding_cells: 0,
    };
    println!("damping rate {lambda:.3}, guaranteed factor {guaranteed}");
    for pair in 0..3 {
        let (w1, w2) = random_candidate_pair(&b.problem, &mc, pair).unwrap();
        let rep = contraction_probe_report(&b.problem, &w1, &w2, lambda, &mc).unwrap();
        println!(
            "pair {pair}: distance {:.3e} -> {:.3e}, ratio {:.4} (noise {:.1e})",
            rep.distance_before, rep.distance_after, rep.ratio, rep.noise
        );
    }
}
