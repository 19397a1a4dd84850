//! Evaluates the endpoint-singular exponential integral three ways:
//! smooth identity, substitution quadrature, closed-form bound.

use sfpe::integral::{
    singular_exp_integral, singular_exp_integral_bound, singular_exp_integral_quadrature,
    SingularIntegralQuery,
};

fn main() {
    let queries = [
        (0.0, 1.0, 0.0),
        (0.0, 2.0, 1.0),
        (1.0, 3.0, 0.5),
        (0.25, 0.75, 10.0),
        (2.0, 6.0, 40.0),
    ];
    println!(
        "{:>6} {:>6} {:>8} {:>24} {:>24} {:>12} {:>10}",
        "a", "b", "lambda", "identity", "quadrature", "rel diff", "bound"
    );
    for (a, b, lambda) in queries {
        let q = SingularIntegralQuery::new(a, b, lambda).unwrap();
        let fast = singular_exp_integral(&q).unwrap();
        let slow = singular_exp_integral_quadrature(&q).unwrap();
        let bound = if lambda > 0.0 {
            format!("{:.4e}", singular_exp_integral_bound(&q).unwrap())
        } else {
            "-".into()
        };
        println!(
            "{a:>6.2} {b:>6.2} {lambda:>8.2} {fast:>24.16e} {slow:>24.16e} {:>12.2e} {bound:>10}",
            (fast - slow).abs() / fast.abs()
        );
    }
}
