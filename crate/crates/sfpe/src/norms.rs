//! Weighted supremum norms and the Lyapunov growth probe.
//!
//! The solver contracts in the norm
//!
//! ```text
//! ||w||_lambda = sup_{t,x} exp(lambda t) * |w(t,x)|_2 * sqrt(T - t) / V(x)
//! ```
//!
//! over all d+1 components jointly (value and gradient). The sqrt(T - t)
//! factor absorbs the 1/sqrt(T - t) blow-up of the gradient part near the
//! terminal time; V absorbs spatial growth. Larger lambda shrinks the
//! contraction factor of the fixed-point map without changing the topology:
//! for lambda >= Lambda >= 0 the norms sandwich as
//!
//! ```text
//! ||w||_Lambda <= ||w||_lambda <= exp((lambda - Lambda) T) ||w||_Lambda.
//! ```
//!
//! On grids the sup is taken over stored nodes only, so computed norms are
//! lower bounds of the continuum sup; all contraction diagnostics compare
//! grids on identical node sets, where the discrete sup is the exact norm
//! of the represented piecewise-multilinear function differences at nodes.

use crate::bel::{accumulate_bel_all, z_at};
use crate::coefficients::CoefficientSet;
use crate::error::{Error, Result};
use crate::grid::ValueGrid;
use crate::rng::CounterRng;
use crate::sde::{simulate_paths, SimOptions};
use crate::time_grid::TimeGrid;
use std::sync::Arc;

/// Spatial growth envelope V. Both forms are time independent and bounded
/// away from zero, so 1/V never amplifies.
#[derive(Clone, Debug, PartialEq)]
pub enum LyapunovV {
    /// V = k with k > 0; k = 1 recovers the plain sup norm.
    Constant(f64),
    /// V(x) = scale * (1 + |x|_2^power), scale > 0, power >= 0.
    NormPower { scale: f64, power: f64 },
}

impl LyapunovV {
    /// Envelope matched to a one-sided monotonicity constant c: one power
    /// of |x| more than the drift growth the constant permits.
    pub fn for_monotonicity_constant(c: f64) -> Self {
        LyapunovV::NormPower {
            scale: 1.0,
            power: c + 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LyapunovV::Constant(k) => {
                if !(*k > 0.0) || !k.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "constant envelope must be positive and finite, got {k}"
                    )));
                }
            }
            LyapunovV::NormPower { scale, power } => {
                if !(*scale > 0.0) || !scale.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "envelope scale must be positive and finite, got {scale}"
                    )));
                }
                if !(*power >= 0.0) || !power.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "envelope power must be nonnegative and finite, got {power}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        match self {
            LyapunovV::Constant(k) => *k,
            LyapunovV::NormPower { scale, power } => {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                scale * (1.0 + r2.sqrt().powf(*power))
            }
        }
    }

    /// Same envelope multiplied by k; the growth probe is invariant under
    /// this rescaling.
    pub fn scaled(&self, k: f64) -> Self {
        match self {
            LyapunovV::Constant(c) => LyapunovV::Constant(c * k),
            LyapunovV::NormPower { scale, power } => LyapunovV::NormPower {
                scale: scale * k,
                power: *power,
            },
        }
    }
}

/// Parameters of the weighted norm: damping rate, spatial envelope, and the
/// terminal time the sqrt(T - t) factor refers to.
#[derive(Clone, Debug)]
pub struct WeightedNormSpec {
    pub lambda: f64,
    pub v: LyapunovV,
    pub horizon: f64,
}

impl WeightedNormSpec {
    pub fn new(lambda: f64, v: LyapunovV, horizon: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidInput(format!(
                "lambda must be finite and >= 0, got {lambda}"
            )));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidInput(format!(
                "horizon must be finite and > 0, got {horizon}"
            )));
        }
        v.validate()?;
        Ok(WeightedNormSpec { lambda, v, horizon })
    }
}

fn check_grid_against(spec: &WeightedNormSpec, grid: &ValueGrid) -> Result<()> {
    let last = *grid.time_nodes().last().unwrap();
    if last >= spec.horizon {
        return Err(Error::InvalidInput(format!(
            "grid reaches t={last}, at or past the norm horizon T={}",
            spec.horizon
        )));
    }
    Ok(())
}

fn sup_over_nodes<F>(grid: &ValueGrid, spec: &WeightedNormSpec, value_at: F) -> f64
where
    F: Fn(usize, usize) -> f64,
{
    let nt = grid.time_nodes().len();
    let sl = grid.spatial_len();
    let d = grid.dim();
    let nc = grid.components();
    let mut x = vec![0.0; d];
    let mut best = 0.0f64;
    for (ti, &t) in grid.time_nodes().iter().enumerate() {
        let wt = (spec.lambda * t).exp() * (spec.horizon - t).sqrt();
        let mut iter = grid.spatial_indices();
        let mut sp = 0usize;
        while let Some(idx) = iter.next_index() {
            grid.spatial_point(idx, &mut x);
            let venv = spec.v.evaluate(&x);
            let mut ss = 0.0;
            for c in 0..nc {
                let val = value_at((c * nt + ti) * sl + sp, c);
                ss += val * val;
            }
            let cand = wt * ss.sqrt() / venv;
            if cand > best {
                best = cand;
            }
            sp += 1;
        }
    }
    best
}

/// Discrete weighted sup norm of a grid function over its stored nodes;
/// a lower bound for the continuum norm of the interpolant.
pub fn weighted_norm(grid: &ValueGrid, spec: &WeightedNormSpec) -> Result<f64> {
    WeightedNormSpec::new(spec.lambda, spec.v.clone(), spec.horizon)?;
    check_grid_against(spec, grid)?;
    Ok(sup_over_nodes(grid, spec, |flat, _| grid.data()[flat]))
}

/// Weighted norm of a - b without materializing the difference. The grids
/// must share time nodes and space axes exactly.
pub fn weighted_distance(a: &ValueGrid, b: &ValueGrid, spec: &WeightedNormSpec) -> Result<f64> {
    WeightedNormSpec::new(spec.lambda, spec.v.clone(), spec.horizon)?;
    check_grid_against(spec, a)?;
    if a.time_nodes() != b.time_nodes() {
        return Err(Error::GridMismatch(
            "grids disagree on time nodes".into(),
        ));
    }
    if a.space_axes() != b.space_axes() {
        return Err(Error::GridMismatch(
            "grids disagree on space axes".into(),
        ));
    }
    Ok(sup_over_nodes(a, spec, |flat, _| {
        a.data()[flat] - b.data()[flat]
    }))
}

/// One Monte Carlo estimate of the growth functional behind the norm:
/// `c_estimate` approximates E[V(X_s) |Z_s|_2] sqrt(s - t) / V(x), the rate
/// at which weight-carrying paths inflate the envelope. `half_width` is
/// three standard errors in the same units.
#[derive(Clone, Debug)]
pub struct LyapunovProbe {
    pub c_estimate: f64,
    pub half_width: f64,
    pub n_used: usize,
    pub n_flagged: usize,
}

/// Estimates the admissible growth constant for a coefficient set and
/// envelope by simulating from (t, x) to s and averaging V(X_s) |Z_s|.
/// The estimate is invariant under rescaling V.
pub fn lyapunov_condition_probe(
    coeffs: &dyn CoefficientSet,
    v: &LyapunovV,
    t: f64,
    x: &[f64],
    s: f64,
    n_paths: usize,
    n_steps: usize,
    opts: &SimOptions,
    rng: CounterRng,
) -> Result<LyapunovProbe> {
    v.validate()?;
    if !(s > t) {
        return Err(Error::InvalidInput(format!(
            "probe needs s > t, got t={t}, s={s}"
        )));
    }
    if n_paths < 100 {
        return Err(Error::InvalidInput(format!(
            "probe needs at least 100 paths for a confidence interval, got {n_paths}"
        )));
    }
    let grid = Arc::new(TimeGrid::uniform(t, s, n_steps)?);
    let mut paths = simulate_paths(coeffs, t, x, &grid, opts, n_paths, rng)?;
    accumulate_bel_all(&mut paths, coeffs)?;
    let last = grid.n_nodes() - 1;
    let mut samples = Vec::with_capacity(n_paths);
    let mut n_flagged = 0usize;
    for path in &paths {
        if !path.status.is_ok() {
            n_flagged += 1;
            continue;
        }
        let z = z_at(path, t, s)?;
        samples.push(v.evaluate(path.state_at(last)) * z.norm());
    }
    if samples.len() < 2 {
        return Err(Error::FailedSweep(format!(
            "probe kept {} of {} paths, too few to average",
            samples.len(),
            n_paths
        )));
    }
    let n = samples.len() as f64;
    let mean: f64 = samples.iter().sum::<f64>() / n;
    let var: f64 = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    let unit = (s - t).sqrt() / v.evaluate(x);
    Ok(LyapunovProbe {
        c_estimate: mean * unit,
        half_width: 3.0 * se * unit,
        n_used: samples.len(),
        n_flagged,
    })
}

/// Working growth constant from a probe: the estimate padded by a fixed 25%
/// safety factor, so downstream rates stay valid inside the probe's noise.
pub fn estimate_c_v(probe: &LyapunovProbe) -> f64 {
    probe.c_estimate * 1.25
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::Brownian;
    use crate::grid::Axis;

    fn filled_grid(seed: u64, horizon: f64) -> ValueGrid {
        let mut g = ValueGrid::zeros(
            vec![0.0, 0.3, 0.6, 0.9],
            vec![Axis::new(-1.0, 1.0, 7).unwrap(), Axis::new(-2.0, 2.0, 5).unwrap()],
            horizon,
        )
        .unwrap();
        let rng = CounterRng::new(seed, 0);
        for (i, v) in g.data_mut().iter_mut().enumerate() {
            *v = 2.0 * rng.uniform(i as u64, 0) - 1.0;
        }
        g
    }

    fn spec(lambda: f64) -> WeightedNormSpec {
        WeightedNormSpec::new(lambda, LyapunovV::Constant(1.0), 1.0).unwrap()
    }

    #[test]
    fn zero_grid_has_zero_norm() {
        let g = ValueGrid::zeros(
            vec![0.0, 0.5],
            vec![Axis::new(0.0, 1.0, 3).unwrap()],
            1.0,
        )
        .unwrap();
        assert_eq!(weighted_norm(&g, &spec(2.0)).unwrap(), 0.0);
    }

    #[test]
    fn unit_value_component_at_time_zero_gives_sqrt_horizon() {
        // lambda = 0, V = 1, w = (1, 0): every node contributes
        // sqrt(T - t), maximized at t = 0
        let mut g = ValueGrid::zeros(
            vec![0.0, 0.5, 0.9],
            vec![Axis::new(-1.0, 1.0, 3).unwrap()],
            1.0,
        )
        .unwrap();
        let nt = 3;
        let sl = 3;
        for ti in 0..nt {
            for sp in 0..sl {
                g.data_mut()[ti * sl + sp] = 1.0;
            }
        }
        assert_eq!(weighted_norm(&g, &spec(0.0)).unwrap(), 1.0);
    }

    #[test]
    fn scaling_by_powers_of_two_is_exact_and_general_scaling_is_close() {
        let g = filled_grid(11, 1.0);
        let mut doubled = g.clone();
        for v in doubled.data_mut() {
            *v *= 2.0;
        }
        let s = spec(0.7);
        let n1 = weighted_norm(&g, &s).unwrap();
        let n2 = weighted_norm(&doubled, &s).unwrap();
        assert_eq!(n2.to_bits(), (2.0 * n1).to_bits());

        let mut scaled = g.clone();
        for v in scaled.data_mut() {
            *v *= -0.3;
        }
        let n3 = weighted_norm(&scaled, &s).unwrap();
        assert!((n3 - 0.3 * n1).abs() <= 1e-12 * n1);
    }

    #[test]
    fn triangle_inequality_holds_on_random_grids() {
        let a = filled_grid(21, 1.0);
        let b = filled_grid(22, 1.0);
        let mut sum = a.clone();
        for (v, w) in sum.data_mut().iter_mut().zip(b.data()) {
            *v += w;
        }
        for lambda in [0.0, 0.9, 3.7] {
            let s = spec(lambda);
            let na = weighted_norm(&a, &s).unwrap();
            let nb = weighted_norm(&b, &s).unwrap();
            let ns = weighted_norm(&sum, &s).unwrap();
            assert!(
                ns <= na + nb + 1e-12 * (na + nb + 1.0),
                "lambda={lambda}: {ns} > {na} + {nb}"
            );
        }
    }

    #[test]
    fn norms_sandwich_between_rates() {
        // Lambda <= lambda: ||.||_Lambda <= ||.||_lambda <= e^{(lambda-Lambda)T} ||.||_Lambda
        let g = filled_grid(31, 1.0);
        let cases = [(0.0, 1.3), (0.4, 0.4), (1.1, 6.0)];
        for (lo, hi) in cases {
            let n_lo = weighted_norm(&g, &spec(lo)).unwrap();
            let n_hi = weighted_norm(&g, &spec(hi)).unwrap();
            let tol = 1e-12 * (n_lo + n_hi);
            assert!(n_lo <= n_hi + tol, "({lo}, {hi}): {n_lo} > {n_hi}");
            let cap = ((hi - lo) * 1.0).exp() * n_lo;
            assert!(n_hi <= cap + 1e-12 * cap, "({lo}, {hi}): {n_hi} > {cap}");
        }
    }

    #[test]
    fn distance_is_symmetric_and_zero_on_equal_grids() {
        let a = filled_grid(41, 1.0);
        let b = filled_grid(42, 1.0);
        let s = spec(0.5);
        let dab = weighted_distance(&a, &b, &s).unwrap();
        let dba = weighted_distance(&b, &a, &s).unwrap();
        assert_eq!(dab.to_bits(), dba.to_bits());
        assert!(dab > 0.0);
        assert_eq!(weighted_distance(&a, &a, &s).unwrap(), 0.0);
    }

    #[test]
    fn mismatched_grids_are_rejected() {
        let a = filled_grid(51, 1.0);
        let other_axes = ValueGrid::zeros(
            a.time_nodes().to_vec(),
            vec![Axis::new(-1.0, 1.0, 7).unwrap(), Axis::new(-2.0, 2.0, 4).unwrap()],
            1.0,
        )
        .unwrap();
        let s = spec(0.0);
        assert!(matches!(
            weighted_distance(&a, &other_axes, &s).unwrap_err(),
            Error::GridMismatch(_)
        ));
        let other_times = ValueGrid::zeros(
            vec![0.0, 0.3, 0.6],
            a.space_axes().to_vec(),
            1.0,
        )
        .unwrap();
        assert!(weighted_distance(&a, &other_times, &s).is_err());
        // grid reaching the horizon has a vanishing weight only in the
        // limit; at t = T the norm is undefined and rejected
        let at_horizon = ValueGrid::zeros(
            vec![0.0, 1.0],
            a.space_axes().to_vec(),
            1.5,
        )
        .unwrap();
        assert!(weighted_norm(&at_horizon, &spec(0.0)).is_err());
    }

    #[test]
    fn envelope_forms_validate_and_evaluate() {
        assert!(LyapunovV::Constant(0.0).validate().is_err());
        assert!(LyapunovV::Constant(f64::NAN).validate().is_err());
        assert!(LyapunovV::NormPower { scale: -1.0, power: 2.0 }.validate().is_err());
        assert!(LyapunovV::NormPower { scale: 1.0, power: -0.5 }.validate().is_err());
        let v = LyapunovV::for_monotonicity_constant(0.5);
        v.validate().unwrap();
        assert_eq!(v.evaluate(&[0.0, 0.0]), 1.0);
        let r = v.evaluate(&[3.0, 4.0]);
        assert!((r - (1.0 + 5.0f64.powf(1.5))).abs() < 1e-12);
        assert_eq!(LyapunovV::Constant(2.0).evaluate(&[9.9]), 2.0);
    }

    #[test]
    fn brownian_probe_matches_gaussian_oracle_and_growth_cap() {
        // d = 1, V = 1, sigma = 1, mu = 0, probe over [0, 1]: the weight is
        // Z = (1, W_1), so the functional is E sqrt(1 + N^2) with N standard
        // normal, computable by quadrature, and Cauchy-Schwarz caps it at
        // sqrt(1 + T) = sqrt(2)
        let coeffs = Brownian { d: 1 };
        let v = LyapunovV::Constant(1.0);
        let probe = lyapunov_condition_probe(
            &coeffs,
            &v,
            0.0,
            &[0.0],
            1.0,
            20_000,
            50,
            &SimOptions::plain(1),
            CounterRng::new(04_2101, 0),
        )
        .unwrap();
        assert_eq!(probe.n_flagged, 0);

        let oracle = {
            // Simpson on [-8, 8]; integrand decays like exp(-x^2/2)
            let n = 4000usize;
            let h = 16.0 / n as f64;
            let f = |x: f64| (1.0 + x * x).sqrt() * (-0.5 * x * x).exp()
                / (2.0 * std::f64::consts::PI).sqrt();
            let mut acc = f(-8.0) + f(8.0);
            for i in 1..n {
                let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                acc += w * f(-8.0 + i as f64 * h);
            }
            acc * h / 3.0
        };
        assert!(
            (probe.c_estimate - oracle).abs() <= probe.half_width,
            "probe {} vs oracle {oracle}, half width {}",
            probe.c_estimate,
            probe.half_width
        );
        assert!(probe.c_estimate <= 2.0f64.sqrt() + probe.half_width);
        assert!(probe.c_estimate >= 1.0 - probe.half_width);
        assert!(estimate_c_v(&probe) > probe.c_estimate);
    }

    #[test]
    fn probe_is_invariant_under_envelope_rescaling() {
        let coeffs = Brownian { d: 2 };
        let v = LyapunovV::NormPower { scale: 1.0, power: 2.0 };
        let run = |env: &LyapunovV| {
            lyapunov_condition_probe(
                &coeffs,
                env,
                0.0,
                &[0.3, -0.2],
                0.5,
                2_000,
                20,
                &SimOptions::plain(2),
                CounterRng::new(7, 0),
            )
            .unwrap()
        };
        let base = run(&v);
        let scaled = run(&v.scaled(8.0));
        assert!((base.c_estimate - scaled.c_estimate).abs() <= 1e-13 * base.c_estimate);
        assert!((base.half_width - scaled.half_width).abs() <= 1e-13 * base.half_width);
        assert_eq!(base.n_used, scaled.n_used);
    }

    #[test]
    fn probe_rejects_degenerate_requests() {
        let coeffs = Brownian { d: 1 };
        let v = LyapunovV::Constant(1.0);
        let opts = SimOptions::plain(1);
        let rng = CounterRng::new(1, 0);
        assert!(lyapunov_condition_probe(&coeffs, &v, 0.5, &[0.0], 0.5, 1000, 10, &opts, rng)
            .is_err());
        assert!(lyapunov_condition_probe(&coeffs, &v, 0.0, &[0.0], 1.0, 10, 10, &opts, rng)
            .is_err());
    }
}
