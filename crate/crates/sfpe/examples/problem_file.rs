//! Parses an inline problem file and reports what was built, including
//! the Lipschitz bound wired into the damping-rate selection.

use sfpe::config::parse_problem_file;
use sfpe::solver::lambda_star;

const PROBLEM: &str = "\
[coefficients]
kind = ornstein-uhlenbeck
rate = 1.0
d = 2

[domain]
horizon = 1.5
grid_lo = -3.0
grid_hi = 3.0

[terminal]
form = sine-sum
decay = 0.5

[nonlinearity]
form = value-scale
kappa = 0.4

[lyapunov]
form = constant
value = 1.0
c_v = 1.6
";

fn main() {
    let built = parse_problem_file(PROBLEM).unwrap();
    let p = &built.problem;
    println!("dimension      : {}", p.coeffs.dim());
    println!("horizon        : {}", p.horizon);
    println!("lipschitz      : {}", p.lipschitz);
    println!("growth constant: {}", p.c_v);
    println!("has reference  : {}", built.reference.is_some());
    println!(
        "grid extent    : {:?}",
        built.grid_extent.as_ref().map(|e| (e.lo().to_vec(), e.hi().to_vec()))
    );
    println!(
        "half-rate lambda: {:.4}",
        lambda_star(p.c_v, p.lipschitz).unwrap()
    );
}
