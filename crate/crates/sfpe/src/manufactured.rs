//! Manufactured benchmark problems with known solutions.
//!
//! A solution family u with analytic derivatives is chosen first; the
//! forcing
//!
//! ```text
//! f(t,x,v) = -[du/dt + grad u . mu + 1/2 tr(sigma sigma* Hess u)](t,x)
//!            - ell(u(t,x), grad u(t,x)) + ell(v)
//! ```
//!
//! then makes u solve the semilinear terminal-value equation by
//! construction, with Lipschitz constant equal to ell's. The coupling ell
//! keeps the solver's candidate dependence genuinely exercised: at the true
//! solution the two ell terms cancel, away from it they do not. All
//! derivatives are analytic per family, so reference errors measure the
//! solver, not a differentiation scheme.

use crate::coefficients::{Brownian, CoefficientSet};
use crate::error::{Error, Result};
use crate::grid::{SpaceBox, ValueGrid};
use crate::norms::LyapunovV;
use crate::rng::CounterRng;
use crate::solver::Problem;
use std::sync::Arc;

/// Analytic solution family; all are smooth in (t, x) for t <= T.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum USpec {
    /// u = sum_i x_i, constant in time.
    Linear,
    /// u = |x|^2 + d (T - t); solves the drift-free unit-diffusion
    /// equation with zero forcing.
    HeatPolynomial,
    /// u = sum_i sin(x_i) exp(-decay (T - t)); an eigenfunction of the
    /// drift-free unit-diffusion generator when decay = 1/2.
    SineWave { decay: f64 },
    /// u = exp(-gamma |x|^2 - beta (T - t)), a bump flattening toward
    /// earlier times for beta > 0.
    GaussianBump { gamma: f64, beta: f64 },
}

impl USpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            USpec::Linear | USpec::HeatPolynomial => true,
            USpec::SineWave { decay } => decay.is_finite(),
            USpec::GaussianBump { gamma, beta } => {
                gamma.is_finite() && beta.is_finite() && *gamma > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "solution family has non-finite or degenerate parameters: {self:?}"
            )))
        }
    }

    pub fn value(&self, horizon: f64, t: f64, x: &[f64]) -> f64 {
        match self {
            USpec::Linear => x.iter().sum(),
            USpec::HeatPolynomial => {
                x.iter().map(|v| v * v).sum::<f64>() + x.len() as f64 * (horizon - t)
            }
            USpec::SineWave { decay } => {
                (-decay * (horizon - t)).exp() * x.iter().map(|v| v.sin()).sum::<f64>()
            }
            USpec::GaussianBump { gamma, beta } => {
                (-gamma * x.iter().map(|v| v * v).sum::<f64>() - beta * (horizon - t)).exp()
            }
        }
    }

    pub fn du_dt(&self, horizon: f64, t: f64, x: &[f64]) -> f64 {
        match self {
            USpec::Linear => 0.0,
            USpec::HeatPolynomial => -(x.len() as f64),
            USpec::SineWave { decay } => decay * self.value(horizon, t, x),
            USpec::GaussianBump { beta, .. } => beta * self.value(horizon, t, x),
        }
    }

    pub fn gradient(&self, horizon: f64, t: f64, x: &[f64], out: &mut [f64]) {
        match self {
            USpec::Linear => out.fill(1.0),
            USpec::HeatPolynomial => {
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = 2.0 * xi;
                }
            }
            USpec::SineWave { decay } => {
                let e = (-decay * (horizon - t)).exp();
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = e * xi.cos();
                }
            }
            USpec::GaussianBump { gamma, .. } => {
                let u = self.value(horizon, t, x);
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = -2.0 * gamma * xi * u;
                }
            }
        }
    }

    /// Column-major d x d second-derivative matrix.
    pub fn hessian(&self, horizon: f64, t: f64, x: &[f64], out: &mut [f64]) {
        let d = x.len();
        out.fill(0.0);
        match self {
            USpec::Linear => {}
            USpec::HeatPolynomial => {
                for i in 0..d {
                    out[i + i * d] = 2.0;
                }
            }
            USpec::SineWave { decay } => {
                let e = (-decay * (horizon - t)).exp();
                for i in 0..d {
                    out[i + i * d] = -e * x[i].sin();
                }
            }
            USpec::GaussianBump { gamma, .. } => {
                let u = self.value(horizon, t, x);
                for i in 0..d {
                    for j in 0..d {
                        let mut h = 4.0 * gamma * gamma * x[i] * x[j] * u;
                        if i == j {
                            h -= 2.0 * gamma * u;
                        }
                        out[i + j * d] = h;
                    }
                }
            }
        }
    }
}

/// One-pass forcing ingredients at (t, x): fills the gradient slice and
/// returns (value, generator), the generator being du_dt + grad . mu
/// + (1/2) tr(sigma sigma^T Hess). Shares the exponential and
/// trigonometric factors the separate evaluators would recompute; the
/// Hessian is contracted on the fly, never materialized. This runs per
/// quadrature node per path, so it is the hottest closure in a solve.
fn forcing_terms(
    u: &USpec,
    coeffs: &dyn CoefficientSet,
    horizon: f64,
    t: f64,
    x: &[f64],
    mu: &mut [f64],
    sig: &mut [f64],
    grad: &mut [f64],
) -> (f64, f64) {
    let d = x.len();
    coeffs.mu(t, x, mu);
    coeffs.sigma(t, x, sig);
    match u {
        USpec::Linear => {
            grad.fill(1.0);
            (x.iter().sum(), mu.iter().sum())
        }
        USpec::HeatPolynomial => {
            let value = x.iter().map(|v| v * v).sum::<f64>() + d as f64 * (horizon - t);
            let mut gen = -(d as f64);
            for i in 0..d {
                grad[i] = 2.0 * x[i];
                gen += grad[i] * mu[i];
            }
            // Hess = 2 I, so the trace term is tr(sigma sigma^T)
            gen += sig.iter().map(|s| s * s).sum::<f64>();
            (value, gen)
        }
        USpec::SineWave { decay } => {
            let e = (-decay * (horizon - t)).exp();
            let mut value = 0.0;
            let mut gen = 0.0;
            for i in 0..d {
                let (s, c) = x[i].sin_cos();
                let es = e * s;
                value += es;
                grad[i] = e * c;
                let mut a_ii = 0.0;
                for k in 0..d {
                    a_ii += sig[i + k * d] * sig[i + k * d];
                }
                gen += grad[i] * mu[i] - 0.5 * a_ii * es;
            }
            (value, gen + decay * value)
        }
        USpec::GaussianBump { gamma, beta } => {
            let q = x.iter().map(|v| v * v).sum::<f64>();
            let value = (-gamma * q - beta * (horizon - t)).exp();
            let mut gen = beta * value;
            let mut xax = 0.0;
            let mut tr_a = 0.0;
            for k in 0..d {
                let mut w = 0.0;
                for i in 0..d {
                    let s = sig[i + k * d];
                    w += x[i] * s;
                    tr_a += s * s;
                }
                xax += w * w;
            }
            for i in 0..d {
                grad[i] = -2.0 * gamma * x[i] * value;
                gen += grad[i] * mu[i];
            }
            gen += 0.5 * value * (4.0 * gamma * gamma * xax - 2.0 * gamma * tr_a);
            (value, gen)
        }
    }
}

/// Lipschitz coupling of the forcing to the candidate components
/// (value slot 0, gradient slots 1..=d).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GradientCoupling {
    Zero,
    /// kappa times the value component.
    ValueScale(f64),
    /// kappa times the sum of gradient components.
    GradScale(f64),
}

impl GradientCoupling {
    pub fn eval(&self, v: &[f64]) -> f64 {
        match self {
            GradientCoupling::Zero => 0.0,
            GradientCoupling::ValueScale(k) => k * v[0],
            GradientCoupling::GradScale(k) => k * v[1..].iter().sum::<f64>(),
        }
    }

    /// Euclidean Lipschitz constant in the d+1 candidate components.
    pub fn lipschitz(&self, d: usize) -> f64 {
        match self {
            GradientCoupling::Zero => 0.0,
            GradientCoupling::ValueScale(k) => k.abs(),
            GradientCoupling::GradScale(k) => k.abs() * (d as f64).sqrt(),
        }
    }
}

/// Where a reference solution came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    ClosedForm,
    Manufactured,
}

/// The exact pair (u, grad u) of a benchmark, evaluable anywhere.
#[derive(Clone, Debug)]
pub struct ReferenceSolution {
    pub provenance: Provenance,
    u_spec: USpec,
    horizon: f64,
    dim: usize,
}

impl ReferenceSolution {
    pub fn value(&self, t: f64, x: &[f64]) -> f64 {
        self.u_spec.value(self.horizon, t, x)
    }

    pub fn gradient(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.u_spec.gradient(self.horizon, t, x, out);
    }

    pub fn du_dt(&self, t: f64, x: &[f64]) -> f64 {
        self.u_spec.du_dt(self.horizon, t, x)
    }

    pub fn hessian(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.u_spec.hessian(self.horizon, t, x, out);
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Writes the exact solution onto a grid's nodes.
    pub fn fill_grid(&self, grid: &mut ValueGrid) -> Result<()> {
        if grid.dim() != self.dim {
            return Err(Error::GridMismatch(format!(
                "grid dimension {} does not match the reference ({})",
                grid.dim(),
                self.dim
            )));
        }
        let nt = grid.time_nodes().len();
        let sl = grid.spatial_len();
        let mut x = vec![0.0; self.dim];
        let mut g = vec![0.0; self.dim];
        let times = grid.time_nodes().to_vec();
        for (ti, t) in times.iter().enumerate() {
            let mut iter = grid.spatial_indices();
            let mut sp = 0usize;
            let mut fills: Vec<(usize, f64, Vec<f64>)> = Vec::with_capacity(sl);
            while let Some(idx) = iter.next_index() {
                grid.spatial_point(idx, &mut x);
                let u = self.value(*t, &x);
                self.gradient(*t, &x, &mut g);
                fills.push((sp, u, g.clone()));
                sp += 1;
            }
            for (sp, u, gv) in fills {
                grid.data_mut()[ti * sl + sp] = u;
                for (i, gi) in gv.iter().enumerate() {
                    grid.data_mut()[((1 + i) * nt + ti) * sl + sp] = *gi;
                }
            }
        }
        Ok(())
    }
}

/// Builds the forcing that makes `u_spec` the exact solution for the given
/// dynamics, and returns the ready-to-solve problem with its reference.
pub fn manufactured_problem(
    u_spec: USpec,
    coeffs: Arc<dyn CoefficientSet>,
    ell: GradientCoupling,
    horizon: f64,
    c_v: f64,
) -> Result<(Problem, ReferenceSolution)> {
    u_spec.validate()?;
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidInput(format!(
            "horizon must be finite and positive, got {horizon}"
        )));
    }
    let d = coeffs.dim();
    if d > 16 {
        return Err(Error::InvalidInput(format!(
            "manufactured problems support up to 16 dimensions, got {d}"
        )));
    }
    let lipschitz = ell.lipschitz(d);
    let g_spec = u_spec;
    let g_horizon = horizon;
    let terminal = Arc::new(move |x: &[f64]| g_spec.value(g_horizon, g_horizon, x));
    let f_coeffs = coeffs.clone();
    let nonlinearity = Arc::new(move |t: f64, x: &[f64], v: &[f64]| {
        let d = x.len();
        let mut uvec = [0.0f64; 17];
        // scratch sized to the dimension; the large variant would zero
        // 2KB per call
        let (value, gen) = if d <= 4 {
            let mut mu = [0.0f64; 4];
            let mut sig = [0.0f64; 16];
            let (grad, _) = uvec[1..].split_at_mut(d);
            forcing_terms(
                &u_spec, &*f_coeffs, horizon, t, x, &mut mu[..d], &mut sig[..d * d], grad,
            )
        } else {
            let mut mu = [0.0f64; 16];
            let mut sig = [0.0f64; 256];
            let (grad, _) = uvec[1..].split_at_mut(d);
            forcing_terms(
                &u_spec, &*f_coeffs, horizon, t, x, &mut mu[..d], &mut sig[..d * d], grad,
            )
        };
        uvec[0] = value;
        -gen - ell.eval(&uvec[..=d]) + ell.eval(v)
    });
    let problem = Problem {
        coeffs,
        horizon,
        domain: SpaceBox::unbounded(d),
        terminal,
        nonlinearity,
        lipschitz,
        v: LyapunovV::Constant(1.0),
        c_v,
    };
    let reference = ReferenceSolution {
        provenance: Provenance::Manufactured,
        u_spec,
        horizon,
        dim: d,
    };
    Ok((problem, reference))
}

/// Sup of the terminal-value equation residual
/// du/dt + grad u . mu + 1/2 tr(sigma sigma* Hess u) + f(t, x, (u, grad u))
/// over the sample points; zero up to rounding for a correctly
/// manufactured pair.
pub fn pde_residual_sup(
    problem: &Problem,
    reference: &ReferenceSolution,
    samples: &[(f64, Vec<f64>)],
) -> f64 {
    let d = reference.dim;
    let mut mu = vec![0.0; d];
    let mut sig = vec![0.0; d * d];
    let mut hess = vec![0.0; d * d];
    let mut grad = vec![0.0; d];
    let mut uvec = vec![0.0; d + 1];
    let mut sup = 0.0f64;
    for (t, x) in samples {
        if !(*t < reference.horizon) || x.len() != d {
            continue;
        }
        problem.coeffs.mu(*t, x, &mut mu);
        problem.coeffs.sigma(*t, x, &mut sig);
        reference.gradient(*t, x, &mut grad);
        reference.hessian(*t, x, &mut hess);
        let mut gen = reference.du_dt(*t, x);
        for i in 0..d {
            gen += grad[i] * mu[i];
        }
        for i in 0..d {
            for j in 0..d {
                let mut a_ij = 0.0;
                for k in 0..d {
                    a_ij += sig[i + k * d] * sig[j + k * d];
                }
                gen += 0.5 * a_ij * hess[i + j * d];
            }
        }
        uvec[0] = reference.value(*t, x);
        uvec[1..].copy_from_slice(&grad);
        let res = (gen + (problem.nonlinearity)(*t, x, &uvec)).abs();
        if res > sup {
            sup = res;
        }
    }
    sup
}

/// Node-wise error of a computed grid against the exact reference over
/// t <= t_cutoff. Gradient errors are Euclidean over the d spatial slots;
/// the weighted error is the rate-zero weighted norm of the full
/// d+1 component difference with a unit envelope.
#[derive(Clone, Debug)]
pub struct AccuracyReport {
    pub sup_value: f64,
    pub rms_value: f64,
    pub sup_gradient: f64,
    pub rms_gradient: f64,
    pub weighted_error: f64,
    pub n_nodes: usize,
    pub t_cutoff: f64,
}

/// Default comparison cutoff: five terminal windows below the horizon.
pub fn default_cutoff(horizon: f64) -> f64 {
    horizon - 5.0 * horizon / crate::solver::DELTA_T_DIVISOR
}

pub fn compare_to_reference(
    vf: &ValueGrid,
    reference: &ReferenceSolution,
    t_cutoff: f64,
) -> Result<AccuracyReport> {
    if vf.dim() != reference.dim {
        return Err(Error::GridMismatch(format!(
            "grid dimension {} does not match the reference ({})",
            vf.dim(),
            reference.dim
        )));
    }
    if (vf.horizon() - reference.horizon).abs() > 1e-12 * reference.horizon {
        return Err(Error::GridMismatch(format!(
            "grid horizon {} does not match the reference ({})",
            vf.horizon(),
            reference.horizon
        )));
    }
    let nt = vf.time_nodes().len();
    let sl = vf.spatial_len();
    let d = vf.dim();
    let mut x = vec![0.0; d];
    let mut gref = vec![0.0; d];
    let mut sup_v = 0.0f64;
    let mut sup_g = 0.0f64;
    let mut sum_v2 = 0.0f64;
    let mut sum_g2 = 0.0f64;
    let mut weighted = 0.0f64;
    let mut n_nodes = 0usize;
    for (ti, &t) in vf.time_nodes().iter().enumerate() {
        if t > t_cutoff {
            continue;
        }
        let sqrt_togo = (reference.horizon - t).sqrt();
        let mut iter = vf.spatial_indices();
        let mut sp = 0usize;
        while let Some(idx) = iter.next_index() {
            vf.spatial_point(idx, &mut x);
            let ev = vf.data()[ti * sl + sp] - reference.value(t, &x);
            reference.gradient(t, &x, &mut gref);
            let mut eg2 = 0.0;
            for i in 0..d {
                let e = vf.data()[((1 + i) * nt + ti) * sl + sp] - gref[i];
                eg2 += e * e;
            }
            sup_v = sup_v.max(ev.abs());
            sup_g = sup_g.max(eg2.sqrt());
            sum_v2 += ev * ev;
            sum_g2 += eg2;
            weighted = weighted.max(sqrt_togo * (ev * ev + eg2).sqrt());
            n_nodes += 1;
            sp += 1;
        }
    }
    if n_nodes == 0 {
        return Err(Error::InvalidInput(format!(
            "no grid nodes at or below the cutoff t={t_cutoff}"
        )));
    }
    Ok(AccuracyReport {
        sup_value: sup_v,
        rms_value: (sum_v2 / n_nodes as f64).sqrt(),
        sup_gradient: sup_g,
        rms_gradient: (sum_g2 / n_nodes as f64).sqrt(),
        weighted_error: weighted,
        n_nodes,
        t_cutoff,
    })
}

/// A named ready-to-run benchmark: problem, exact reference, and a
/// sensible finite grid extent.
pub struct Benchmark {
    pub name: &'static str,
    pub description: &'static str,
    pub problem: Problem,
    pub reference: ReferenceSolution,
    pub extent: SpaceBox,
}

impl std::fmt::Debug for Benchmark {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Benchmark")
            .field("name", &self.name)
            .field("reference", &self.reference)
            .finish_non_exhaustive()
    }
}

/// The built-in benchmark suite. Growth constants are fixed at values the
/// growth probe reports (with its 25% inflation) for unit Brownian
/// dynamics over a unit horizon.
pub fn builtin_benchmarks() -> Vec<Benchmark> {
    let mut out = Vec::new();
    let entries: [(&'static str, &'static str, USpec, usize, GradientCoupling, f64, f64); 5] = [
        (
            "terminal-identity",
            "u = x with zero forcing; the estimator must return (x, 1)",
            USpec::Linear,
            1,
            GradientCoupling::Zero,
            1.6,
            1.0,
        ),
        (
            "heat-quadratic",
            "u = x^2 + (T - t); forcing vanishes identically",
            USpec::HeatPolynomial,
            1,
            GradientCoupling::Zero,
            1.6,
            1.0,
        ),
        (
            "sine-eigen",
            "u = sin(x) exp(-(T-t)/2), an eigenfunction; forcing vanishes",
            USpec::SineWave { decay: 0.5 },
            1,
            GradientCoupling::Zero,
            1.6,
            2.0,
        ),
        (
            "sine-gradient",
            "sine solution with gradient coupling 0.5 v', Lipschitz 1/2",
            USpec::SineWave { decay: 0.5 },
            1,
            GradientCoupling::GradScale(0.5),
            1.6,
            2.0,
        ),
        (
            "bump-plane",
            "2-d Gaussian bump with value coupling 0.3 v",
            USpec::GaussianBump { gamma: 0.5, beta: 0.3 },
            2,
            GradientCoupling::ValueScale(0.3),
            2.2,
            2.0,
        ),
    ];
    for (name, description, spec, d, ell, c_v, half_width) in entries {
        let (problem, reference) =
            manufactured_problem(spec, Arc::new(Brownian { d }), ell, 1.0, c_v).unwrap();
        let extent = SpaceBox::new(vec![-half_width; d], vec![half_width; d]).unwrap();
        out.push(Benchmark {
            name,
            description,
            problem,
            reference,
            extent,
        });
    }
    out
}

pub fn benchmark_by_name(name: &str) -> Result<Benchmark> {
    builtin_benchmarks()
        .into_iter()
        .find(|b| b.name == name)
        .ok_or_else(|| {
            let names: Vec<&str> = builtin_benchmarks().iter().map(|b| b.name).collect();
            Error::InvalidInput(format!(
                "unknown benchmark '{name}'; available: {}",
                names.join(", ")
            ))
        })
}

/// Random (t, x) sample cloud for residual and guard checks.
pub fn sample_cloud(
    d: usize,
    horizon: f64,
    half_width: f64,
    n: usize,
    rng: CounterRng,
) -> Vec<(f64, Vec<f64>)> {
    let mut out = Vec::with_capacity(n);
    let mut ctr = 0u64;
    for _ in 0..n {
        let t = 0.999 * horizon * rng.uniform(ctr, 0);
        ctr += 1;
        let mut x = Vec::with_capacity(d);
        for _ in 0..d {
            x.push(half_width * (2.0 * rng.uniform(ctr, 0) - 1.0));
            ctr += 1;
        }
        out.push((t, x));
    }
    out
}
