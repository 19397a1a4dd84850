//! Shows how the damping rate trades contraction strength against norm
//! size: the same grid measured at several rates, with the equivalence
//! sandwich printed for each pair.

use sfpe::grid::{Axis, ValueGrid};
use sfpe::norms::{weighted_norm, LyapunovV, WeightedNormSpec};

fn main() {
    let horizon = 1.0;
    let mut grid = ValueGrid::zeros(
        (0..10).map(|k| 0.9 * k as f64 / 10.0).collect(),
        vec![Axis::new(-2.0, 2.0, 21).unwrap()],
        horizon,
    )
    .unwrap();
    let n_nodes = grid.data_mut().len();
    for (i, v) in grid.data_mut().iter_mut().enumerate() {
        *v = (std::f64::consts::TAU * i as f64 / n_nodes as f64).sin();
    }

    let v = LyapunovV::Constant(1.0);
    let rates = [0.0, 1.0, 5.0, 20.0];
    println!("{:>8} {:>14}", "lambda", "norm");
    for lambda in rates {
        let spec = WeightedNormSpec::new(lambda, v.clone(), horizon).unwrap();
        println!("{lambda:>8.1} {:>14.6e}", weighted_norm(&grid, &spec).unwrap());
    }

    // monotone in lambda, and within e^{(big - small) T} of each other
    for w in rates.windows(2) {
        let (small, big) = (w[0], w[1]);
        let ns = weighted_norm(&grid, &WeightedNormSpec::new(small, v.clone(), horizon).unwrap())
            .unwrap();
        let nb =
            weighted_norm(&grid, &WeightedNormSpec::new(big, v.clone(), horizon).unwrap()).unwrap();
        let factor = ((big - small) * horizon).exp();
        println!(
            "sandwich at ({small}, {big}): {:.6e} <= {:.6e} <= {:.6e}",
            ns,
            nb,
            factor * ns
        );
        assert!(ns <= nb && nb <= factor * ns);
    }
}
