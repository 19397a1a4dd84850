//! Monte Carlo fixed-point solver.
//!
//! The map applied each sweep sends a candidate value-and-gradient function
//! w to
//!
//! ```text
//! (Phi w)(t,x) = E[ g(X_T) Z_{t,T} + int_t^T f(r, X_r, w(r, X_r)) Z_{t,r} dr ]
//! ```
//!
//! where (X, J, Y) is the simulated state / variational / weight-integrand
//! bundle and Z_{t,r} = (1, Y_r / (r - t)) is the probabilistic gradient
//! weight. Phi is a contraction in the weighted norm of [`crate::norms`]
//! once lambda reaches [`lambda_star`], so Picard iteration from zero
//! converges geometrically; the solver realizes each sweep by per-node
//! Monte Carlo with common random numbers so the iteration is a
//! deterministic map of the realized estimator.
//!
//! The time integral has an integrable 1/sqrt(r - t) singularity in its
//! second moment at the lower end; quadrature nodes follow the
//! substitution rule of [`QuadratureSchedule::singular`]. Inside the
//! terminal window (T - delta_T, T] the candidate cannot be represented
//! (its gradient blows up like 1/sqrt(T - t)) and reads clamp to the last
//! stored time slice; the window contributes O(sqrt(delta_T)) to the
//! integral.

use crate::coefficients::CoefficientSet;
use crate::error::{Error, Result};
use crate::grid::{Axis, SpaceBox, ValueGrid};
use crate::norms::{LyapunovV, WeightedNormSpec};
use crate::rng::CounterRng;
use crate::sde::{simulate_single, SimOptions};
use crate::time_grid::{QuadratureSchedule, TimeGrid};
use rayon::prelude::*;
use std::sync::Arc;
use std::time::Instant;

pub type TerminalFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type NonlinearFn = Arc<dyn Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync>;

/// Terminal time nodes sit this fraction of the horizon below T.
pub const DELTA_T_DIVISOR: f64 = 50.0;

/// Fraction of each integration span covered by the substitution segment
/// of the singular quadrature rule.
pub const SINGULAR_FRACTION: f64 = 0.1;

/// A semilinear terminal-value problem: dynamics, terminal condition g,
/// nonlinearity f (a function of time, state, and the d+1 candidate
/// components), the Lipschitz constant of f in the candidate argument,
/// and the growth envelope with its constant.
#[derive(Clone)]
pub struct Problem {
    pub coeffs: Arc<dyn CoefficientSet>,
    pub horizon: f64,
    pub domain: SpaceBox,
    pub terminal: TerminalFn,
    pub nonlinearity: NonlinearFn,
    pub lipschitz: f64,
    pub v: LyapunovV,
    pub c_v: f64,
}

impl Problem {
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::InvalidInput(format!(
                "horizon must be finite and positive, got {}",
                self.horizon
            )));
        }
        if self.domain.dim() != self.coeffs.dim() {
            return Err(Error::InvalidInput(format!(
                "domain dimension {} does not match coefficients ({})",
                self.domain.dim(),
                self.coeffs.dim()
            )));
        }
        if !(self.lipschitz >= 0.0) || !self.lipschitz.is_finite() {
            return Err(Error::InvalidInput(format!(
                "Lipschitz constant must be finite and >= 0, got {}",
                self.lipschitz
            )));
        }
        if !(self.c_v > 0.0) || !self.c_v.is_finite() {
            return Err(Error::InvalidInput(format!(
                "growth constant must be finite and positive, got {}",
                self.c_v
            )));
        }
        self.v.validate()
    }

    pub fn delta_t(&self) -> f64 {
        self.horizon / DELTA_T_DIVISOR
    }
}

/// Quadrature flavor for the time integral. The plain rule drops the first
/// cell entirely (the integrand is undefined at r = t); the singular rule
/// resolves it through the substitution r = t + u^2.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuadratureRule {
    SingularLeft,
    PlainLeft,
}

/// Monte Carlo and grid configuration for one solve.
#[derive(Clone, Debug)]
pub struct McConfig {
    pub n_paths: usize,
    pub n_steps: usize,
    pub base_seed: u64,
    pub taming: bool,
    pub rule: QuadratureRule,
    /// Fixed-point damping rate; None selects lambda_star(c_V, L).
    pub lambda: Option<f64>,
    /// Time nodes on [0, T - delta_T].
    pub n_time_nodes: usize,
    /// Spatial nodes per axis; None selects 41 for d <= 2, 11 above.
    pub nodes_per_axis: Option<usize>,
    /// Finite rectangle the grid covers; required when the problem domain
    /// is unbounded, defaults to the domain otherwise.
    pub grid_extent: Option<SpaceBox>,
    /// Extra same-spacing cells per side on the working grid, stripped
    /// from the returned solution; absorbs clamped-read edge bias.
    pub padding_cells: usize,
}

impl McConfig {
    pub fn defaults(base_seed: u64) -> Self {
        McConfig {
            n_paths: 2_000,
            n_steps: 50,
            base_seed,
            taming: false,
            rule: QuadratureRule::SingularLeft,
            lambda: None,
            n_time_nodes: 50,
            nodes_per_axis: None,
            grid_extent: None,
            padding_cells: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_paths < 100 {
            return Err(Error::InvalidInput(format!(
                "need at least 100 paths per node, got {}",
                self.n_paths
            )));
        }
        if self.n_steps < 10 {
            return Err(Error::InvalidInput(format!(
                "need at least 10 base steps, got {}",
                self.n_steps
            )));
        }
        if self.n_time_nodes < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 time nodes, got {}",
                self.n_time_nodes
            )));
        }
        if let Some(l) = self.lambda {
            if !(l >= 0.0) || !l.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "lambda override must be finite and >= 0, got {l}"
                )));
            }
        }
        if self.padding_cells > 64 {
            return Err(Error::InvalidInput(format!(
                "padding of {} cells is implausible",
                self.padding_cells
            )));
        }
        Ok(())
    }
}

/// Smallest damping rate at which the sweep map is guaranteed a
/// contraction factor of one half: the factor is c L sqrt(pi^3 / (4
/// lambda)), which equals 1/2 at lambda = c^2 L^2 pi^3.
pub fn lambda_star(c_v: f64, lipschitz: f64) -> Result<f64> {
    if !(c_v > 0.0) || !lipschitz.is_finite() || !(lipschitz > 0.0) || !c_v.is_finite() {
        return Err(Error::InvalidInput(format!(
            "contraction threshold needs positive finite c_V and L, got {c_v} and {lipschitz}"
        )));
    }
    let pi = std::f64::consts::PI;
    Ok(c_v * c_v * lipschitz * lipschitz * pi * pi * pi)
}

/// One sweep's output: the refreshed grid plus one aggregate standard
/// error per node (Euclidean over the d+1 component standard errors),
/// indexed time-major like the grid.
pub struct PhiResult {
    pub grid: ValueGrid,
    pub node_se: Vec<f64>,
    pub n_flagged: usize,
    pub n_paths_total: usize,
}

/// Per-node generator: seeds depend only on (base_seed, node index), never
/// on sweep number or thread schedule, so sweeps share paths (common
/// random numbers) and results are independent of thread count.
fn node_rng(mc: &McConfig, node_flat: usize) -> CounterRng {
    CounterRng::new(mc.base_seed, node_flat as u64)
}

fn build_schedule(
    mc: &McConfig,
    t: f64,
    horizon: f64,
    full_span: f64,
) -> Result<QuadratureSchedule> {
    match mc.rule {
        QuadratureRule::SingularLeft => {
            QuadratureSchedule::singular(t, horizon, full_span, mc.n_steps, SINGULAR_FRACTION)
        }
        QuadratureRule::PlainLeft => {
            let span = horizon - t;
            let m = ((mc.n_steps as f64 * span / full_span).ceil() as usize).max(10);
            let mut sched =
                QuadratureSchedule::left_rectangles(TimeGrid::uniform(t, horizon, m)?);
            // the integrand is undefined at r = t; the plain rule simply
            // drops the first cell
            sched.weights[0] = 0.0;
            Ok(sched)
        }
    }
}

struct Welford {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Welford {
            n: 0.0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn push(&mut self, sample: &[f64]) {
        self.n += 1.0;
        for ((m, s), x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(sample) {
            let d1 = x - *m;
            *m += d1 / self.n;
            *s += d1 * (x - *m);
        }
    }

    fn se_aggregate(&self) -> f64 {
        if self.n < 2.0 {
            return f64::INFINITY;
        }
        let scale = 1.0 / (self.n * (self.n - 1.0));
        self.m2.iter().map(|s| s * scale).sum::<f64>().sqrt()
    }
}

struct NodeOutput {
    // one (mean vector, aggregate se) per input candidate grid
    means: Vec<Vec<f64>>,
    ses: Vec<f64>,
    n_flagged: usize,
}

fn estimate_node(
    problem: &Problem,
    mc: &McConfig,
    vfs: &[&ValueGrid],
    t: f64,
    x: &[f64],
    full_span: f64,
    rng: CounterRng,
) -> Result<NodeOutput> {
    let d = problem.coeffs.dim();
    let nc = d + 1;
    let horizon = problem.horizon;
    let schedule = build_schedule(mc, t, horizon, full_span)?;
    let sim_grid = Arc::new(schedule.grid.clone());
    let opts = SimOptions {
        taming: mc.taming,
        domain: problem.domain.clone(),
    };
    let last = sim_grid.n_nodes() - 1;
    let span_total = horizon - t;
    // quadrature data shared by every path: (sim node, weight, r, 1/(r-t))
    let quad: Vec<(usize, f64, f64, f64)> = (1..=last)
        .filter(|&k| schedule.weights[k] != 0.0)
        .map(|k| {
            let r = sim_grid.nodes()[k];
            (k, schedule.weights[k], r, 1.0 / (r - t))
        })
        .collect();
    let cells: Vec<Vec<(usize, f64)>> = vfs
        .iter()
        .map(|vf| quad.iter().map(|&(_, _, r, _)| vf.time_cell(r)).collect())
        .collect();
    let mut accs: Vec<Welford> = vfs.iter().map(|_| Welford::new(nc)).collect();
    let mut n_flagged = 0usize;
    let mut sample = vec![0.0; nc];
    let mut vbuf = vec![0.0; nc];
    for p in 0..mc.n_paths as u64 {
        let mut bundle = simulate_single(&*problem.coeffs, t, x, &sim_grid, &opts, rng, p)?;
        if !bundle.status.is_ok() {
            n_flagged += 1;
            continue;
        }
        crate::bel::accumulate_bel(&mut bundle, &*problem.coeffs)?;
        for (vi, vf) in vfs.iter().enumerate() {
            let xt = bundle.state_at(last);
            let gv = (problem.terminal)(xt);
            sample[0] = gv;
            let y_last = bundle.bel_at(last);
            for i in 0..d {
                sample[1 + i] = gv * y_last[i] / span_total;
            }
            for (q, &(k, w, r, inv_span)) in quad.iter().enumerate() {
                let xr = bundle.state_at(k);
                let (ti, tf) = cells[vi][q];
                vf.evaluate_at_time_cell(ti, tf, xr, &mut vbuf);
                let fv = (problem.nonlinearity)(r, xr, &vbuf);
                let yk = bundle.bel_at(k);
                sample[0] += w * fv;
                for i in 0..d {
                    sample[1 + i] += w * fv * yk[i] * inv_span;
                }
            }
            accs[vi].push(&sample);
        }
    }
    let healthy = mc.n_paths - n_flagged;
    if healthy < 2 {
        return Err(Error::FailedSweep(format!(
            "node at t={t}, x={x:?}: only {healthy} of {} paths usable",
            mc.n_paths
        )));
    }
    let mut means = Vec::with_capacity(vfs.len());
    let mut ses = Vec::with_capacity(vfs.len());
    for acc in &accs {
        if acc.mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::FailedSweep(format!(
                "non-finite estimate at node t={t}, x={x:?}"
            )));
        }
        means.push(acc.mean.clone());
        ses.push(acc.se_aggregate());
    }
    Ok(NodeOutput {
        means,
        ses,
        n_flagged,
    })
}

/// Diverged or domain-leaving paths may be skipped, but only up to this
/// fraction of the sweep's paths; more fails the sweep.
pub const MAX_FLAGGED_FRACTION: f64 = 1e-3;

fn apply_phi_many(vfs: &[&ValueGrid], problem: &Problem, mc: &McConfig) -> Result<Vec<PhiResult>> {
    problem.validate()?;
    mc.validate()?;
    let template = vfs[0];
    for vf in vfs {
        if (vf.horizon() - problem.horizon).abs() > 1e-12 * problem.horizon {
            return Err(Error::GridMismatch(format!(
                "grid horizon {} does not match the problem horizon {}",
                vf.horizon(),
                problem.horizon
            )));
        }
        if vf.time_nodes() != template.time_nodes() || vf.space_axes() != template.space_axes() {
            return Err(Error::GridMismatch(
                "candidate grids disagree on nodes".into(),
            ));
        }
        if vf.dim() != problem.coeffs.dim() {
            return Err(Error::GridMismatch(format!(
                "grid dimension {} does not match coefficients ({})",
                vf.dim(),
                problem.coeffs.dim()
            )));
        }
    }
    let nt = template.time_nodes().len();
    let sl = template.spatial_len();
    let full_span = problem.horizon - template.time_nodes()[0];
    // precompute node coordinates so parallel tasks are pure functions of
    // the node index
    let mut coords: Vec<(f64, Vec<f64>)> = Vec::with_capacity(nt * sl);
    let mut x = vec![0.0; template.dim()];
    for ti in 0..nt {
        let t = template.time_nodes()[ti];
        let mut iter = template.spatial_indices();
        while let Some(idx) = iter.next_index() {
            template.spatial_point(idx, &mut x);
            coords.push((t, x.clone()));
        }
    }
    let outputs: Vec<NodeOutput> = (0..coords.len())
        .into_par_iter()
        .map(|flat| {
            let (t, ref xv) = coords[flat];
            estimate_node(problem, mc, vfs, t, xv, full_span, node_rng(mc, flat))
        })
        .collect::<Result<Vec<_>>>()?;
    let n_paths_total = mc.n_paths * coords.len();
    let n_flagged: usize = outputs.iter().map(|o| o.n_flagged).sum();
    if (n_flagged as f64) > MAX_FLAGGED_FRACTION * n_paths_total as f64 {
        return Err(Error::FailedSweep(format!(
            "{n_flagged} of {n_paths_total} paths flagged, above the {MAX_FLAGGED_FRACTION} cap"
        )));
    }
    let mut results = Vec::with_capacity(vfs.len());
    for vi in 0..vfs.len() {
        let mut grid = ValueGrid::zeros(
            template.time_nodes().to_vec(),
            template.space_axes().to_vec(),
            template.horizon(),
        )?;
        let mut node_se = vec![0.0; coords.len()];
        for (flat, out) in outputs.iter().enumerate() {
            let ti = flat / sl;
            let sp = flat % sl;
            for (c, v) in out.means[vi].iter().enumerate() {
                grid.data_mut()[(c * nt + ti) * sl + sp] = *v;
            }
            node_se[flat] = out.ses[vi];
        }
        results.push(PhiResult {
            grid,
            node_se,
            n_flagged,
            n_paths_total,
        });
    }
    Ok(results)
}

/// One Monte Carlo application of the sweep map to a candidate grid.
pub fn apply_phi(vf: &ValueGrid, problem: &Problem, mc: &McConfig) -> Result<PhiResult> {
    Ok(apply_phi_many(&[vf], problem, mc)?.pop().unwrap())
}

/// Applies the sweep map to two candidates over identical paths (common
/// random numbers), so the difference of the outputs isolates the map's
/// sensitivity to the candidate.
pub fn apply_phi_pair(
    a: &ValueGrid,
    b: &ValueGrid,
    problem: &Problem,
    mc: &McConfig,
) -> Result<(PhiResult, PhiResult)> {
    let mut out = apply_phi_many(&[a, b], problem, mc)?;
    let second = out.pop().unwrap();
    let first = out.pop().unwrap();
    Ok((first, second))
}

/// Weighted sup of per-node standard errors: the Monte Carlo noise floor
/// in the same units as the weighted distance between sweeps.
pub fn weighted_se_sup(grid: &ValueGrid, node_se: &[f64], spec: &WeightedNormSpec) -> f64 {
    let sl = grid.spatial_len();
    let d = grid.dim();
    let mut x = vec![0.0; d];
    let mut best = 0.0f64;
    for (ti, &t) in grid.time_nodes().iter().enumerate() {
        let wt = (spec.lambda * t).exp() * (spec.horizon - t).sqrt();
        let mut iter = grid.spatial_indices();
        let mut sp = 0usize;
        while let Some(idx) = iter.next_index() {
            grid.spatial_point(idx, &mut x);
            let cand = wt * node_se[ti * sl + sp] / spec.v.evaluate(&x);
            if cand > best {
                best = cand;
            }
            sp += 1;
        }
    }
    best
}

/// Per-sweep history of a Picard run.
#[derive(Clone, Debug)]
pub struct SolveDiagnostics {
    pub lambda: f64,
    /// Weighted distance between consecutive iterates, one entry per sweep.
    pub distances: Vec<f64>,
    /// distances[k] / distances[k-1], one entry per sweep after the first.
    pub ratios: Vec<f64>,
    /// Weighted sup of Monte Carlo standard errors per sweep.
    pub noise_floors: Vec<f64>,
    pub sweep_seconds: Vec<f64>,
    pub converged: bool,
    pub n_flagged_total: usize,
}

fn norm_spec_for(problem: &Problem, lambda: f64) -> Result<WeightedNormSpec> {
    WeightedNormSpec::new(lambda, problem.v.clone(), problem.horizon)
}

fn solve_lambda(problem: &Problem, mc: &McConfig) -> Result<f64> {
    if let Some(l) = mc.lambda {
        return Ok(l);
    }
    if problem.lipschitz > 0.0 {
        lambda_star(problem.c_v, problem.lipschitz)
    } else {
        // f does not depend on the candidate; one sweep is exact and no
        // damping is needed
        Ok(0.0)
    }
}

/// Builds the target and padded working grids for a solve.
fn build_grids(problem: &Problem, mc: &McConfig) -> Result<(ValueGrid, ValueGrid)> {
    let extent = match &mc.grid_extent {
        Some(b) => b.clone(),
        None => problem.domain.clone(),
    };
    if extent.lo().iter().chain(extent.hi()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig {
            field: "grid_extent".into(),
            message: "an unbounded domain needs an explicit finite grid extent".into(),
        });
    }
    if extent.dim() != problem.coeffs.dim() {
        return Err(Error::InvalidConfig {
            field: "grid_extent".into(),
            message: format!(
                "extent dimension {} does not match coefficients ({})",
                extent.dim(),
                problem.coeffs.dim()
            ),
        });
    }
    let d = problem.coeffs.dim();
    let per_axis = mc
        .nodes_per_axis
        .unwrap_or(if d <= 2 { 41 } else { 11 });
    if per_axis < 2 {
        return Err(Error::InvalidConfig {
            field: "nodes_per_axis".into(),
            message: format!("need at least 2 nodes per axis, got {per_axis}"),
        });
    }
    let mut axes = Vec::with_capacity(d);
    for k in 0..d {
        axes.push(Axis::new(extent.lo()[k], extent.hi()[k], per_axis)?);
    }
    let t_last = problem.horizon - problem.delta_t();
    let time_grid = TimeGrid::uniform(0.0, t_last, mc.n_time_nodes - 1)?;
    let time_nodes = time_grid.nodes().to_vec();
    let target = ValueGrid::zeros(time_nodes.clone(), axes.clone(), problem.horizon)?;
    let padded: Vec<Axis> = axes.iter().map(|a| a.padded(mc.padding_cells)).collect();
    let working = ValueGrid::zeros(time_nodes, padded, problem.horizon)?;
    Ok((target, working))
}

/// Picard iteration from the zero candidate until consecutive sweeps are
/// within `tol` in the weighted norm or `max_iters` sweeps have run.
/// Sweeps run on a padded working grid; the returned grid is the stripped
/// interior. Three consecutive expanding sweeps clearly above the Monte
/// Carlo noise floor abort with a diverging-iteration error.
pub fn solve(
    problem: &Problem,
    mc: &McConfig,
    tol: f64,
    max_iters: usize,
) -> Result<(ValueGrid, SolveDiagnostics)> {
    problem.validate()?;
    mc.validate()?;
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    if max_iters == 0 {
        return Err(Error::InvalidInput("need at least one sweep".into()));
    }
    let lambda = solve_lambda(problem, mc)?;
    let spec = norm_spec_for(problem, lambda)?;
    let (mut target, working) = build_grids(problem, mc)?;
    let mut current = working;
    let mut diag = SolveDiagnostics {
        lambda,
        distances: Vec::new(),
        ratios: Vec::new(),
        noise_floors: Vec::new(),
        sweep_seconds: Vec::new(),
        converged: false,
        n_flagged_total: 0,
    };
    let mut expanding_streak = 0usize;
    for _sweep in 0..max_iters {
        let t0 = Instant::now();
        let phi = apply_phi(&current, problem, mc)?;
        let dist = crate::norms::weighted_distance(&phi.grid, &current, &spec)?;
        let noise = weighted_se_sup(&phi.grid, &phi.node_se, &spec);
        diag.sweep_seconds.push(t0.elapsed().as_secs_f64());
        diag.n_flagged_total += phi.n_flagged;
        if let Some(prev) = diag.distances.last() {
            let ratio = if *prev > 0.0 { dist / prev } else { 0.0 };
            diag.ratios.push(ratio);
            if ratio > 1.0 && dist > 3.0 * noise {
                expanding_streak += 1;
            } else {
                expanding_streak = 0;
            }
        }
        diag.distances.push(dist);
        diag.noise_floors.push(noise);
        current = phi.grid;
        if dist <= tol {
            diag.converged = true;
            break;
        }
        if expanding_streak >= 3 {
            return Err(Error::DivergingIteration(format!(
                "3 consecutive expanding sweeps above the noise floor; distances {:?}, noise floors {:?}, lambda {lambda}",
                diag.distances, diag.noise_floors
            )));
        }
    }
    current.assert_finite()?;
    target.fill_from_subgrid(&current)?;
    Ok((target, diag))
}

/// Breakdown of one contraction measurement.
#[derive(Clone, Debug)]
pub struct ContractionReport {
    pub ratio: f64,
    pub distance_before: f64,
    pub distance_after: f64,
    /// Weighted standard-error sup of the two mapped grids combined,
    /// normalized like the ratio.
    pub noise: f64,
}

/// Measures ||Phi a - Phi b|| / ||a - b|| in the lambda-weighted norm with
/// common random numbers, so Monte Carlo noise mostly cancels and the
/// observed ratio tracks the analytic contraction factor.
pub fn contraction_probe_report(
    problem: &Problem,
    a: &ValueGrid,
    b: &ValueGrid,
    lambda: f64,
    mc: &McConfig,
) -> Result<ContractionReport> {
    let spec = norm_spec_for(problem, lambda)?;
    let before = crate::norms::weighted_distance(a, b, &spec)?;
    if before == 0.0 {
        return Err(Error::InvalidInput(
            "candidates coincide on the grid; contraction ratio undefined".into(),
        ));
    }
    let (pa, pb) = apply_phi_pair(a, b, problem, mc)?;
    let after = crate::norms::weighted_distance(&pa.grid, &pb.grid, &spec)?;
    let noise_a = weighted_se_sup(&pa.grid, &pa.node_se, &spec);
    let noise_b = weighted_se_sup(&pb.grid, &pb.node_se, &spec);
    Ok(ContractionReport {
        ratio: after / before,
        distance_before: before,
        distance_after: after,
        noise: (noise_a + noise_b) / before,
    })
}

/// The measured contraction ratio alone.
pub fn contraction_probe(
    problem: &Problem,
    a: &ValueGrid,
    b: &ValueGrid,
    lambda: f64,
    mc: &McConfig,
) -> Result<f64> {
    Ok(contraction_probe_report(problem, a, b, lambda, mc)?.ratio)
}

/// The solution grid shape a solve under this configuration returns,
/// zero-filled.
pub fn blank_solution_grid(problem: &Problem, mc: &McConfig) -> Result<ValueGrid> {
    problem.validate()?;
    mc.validate()?;
    let (target, _) = build_grids(problem, mc)?;
    Ok(target)
}

/// A deterministic pair of smooth candidates separated by a nonzero
/// low-frequency field, for contraction probing. Same seed, same pair.
pub fn random_candidate_pair(
    problem: &Problem,
    mc: &McConfig,
    pair_seed: u64,
) -> Result<(ValueGrid, ValueGrid)> {
    let mut a = blank_solution_grid(problem, mc)?;
    let mut b = a.clone();
    let d = a.dim();
    let rng = CounterRng::new(pair_seed, u64::from_le_bytes(*b"candpair"));
    let mut point = vec![0.0; d];
    for comp in 0..a.components() {
        let base = rng.substream(comp as u64);
        let amp_a = 0.2 + 0.8 * base.uniform(0, 0);
        let amp_sep = 0.1 + 0.4 * base.uniform(0, 1);
        let phase_a = std::f64::consts::TAU * base.uniform(0, 2);
        let phase_sep = std::f64::consts::TAU * base.uniform(0, 3);
        let mut wave_a = vec![0.0; d];
        let mut wave_sep = vec![0.0; d];
        for k in 0..d {
            wave_a[k] = 0.5 + 1.5 * base.uniform(1, k as u64);
            wave_sep[k] = 0.5 + 1.5 * base.uniform(2, k as u64);
        }
        for ti in 0..a.time_nodes().len() {
            let t = a.time_nodes()[ti];
            let mut iter = a.spatial_indices();
            while let Some(idx) = iter.next_index() {
                let idx = idx.to_vec();
                a.spatial_point(&idx, &mut point);
                let dot_a: f64 = wave_a.iter().zip(&point).map(|(w, x)| w * x).sum();
                let dot_s: f64 = wave_sep.iter().zip(&point).map(|(w, x)| w * x).sum();
                let va = amp_a * (dot_a + phase_a + 0.5 * t).sin();
                let sep = amp_sep * (dot_s + phase_sep - 0.3 * t).sin();
                a.set(comp, ti, &idx, va);
                b.set(comp, ti, &idx, va + sep);
            }
        }
    }
    Ok((a, b))
}

/// Sampled growth check behind the well-definedness of the sweep map:
/// |g|/V must stay bounded and |f(t,x,0)| sqrt(T-t)/V must stay bounded.
/// Report-only; a sup that keeps growing with the sample box signals a
/// terminal condition or forcing the envelope cannot integrate.
#[derive(Clone, Debug)]
pub struct GuardReport {
    pub sup_g_over_v: f64,
    pub sup_f0_over_v: f64,
    pub worst_g_point: Vec<f64>,
    pub n_samples: usize,
}

pub fn integrability_guard(problem: &Problem, samples: &[(f64, Vec<f64>)]) -> GuardReport {
    let nc = problem.coeffs.dim() + 1;
    let zeros = vec![0.0; nc];
    let mut sup_g = 0.0f64;
    let mut sup_f0 = 0.0f64;
    let mut worst = Vec::new();
    let mut used = 0usize;
    for (t, x) in samples {
        if !(*t < problem.horizon) || x.len() != problem.coeffs.dim() {
            continue;
        }
        used += 1;
        let venv = problem.v.evaluate(x);
        let gq = (problem.terminal)(x).abs() / venv;
        if gq > sup_g {
            sup_g = gq;
            worst = x.clone();
        }
        let fq =
            (problem.nonlinearity)(*t, x, &zeros).abs() * (problem.horizon - t).sqrt() / venv;
        if fq > sup_f0 {
            sup_f0 = fq;
        }
    }
    GuardReport {
        sup_g_over_v: sup_g,
        sup_f0_over_v: sup_f0,
        worst_g_point: worst,
        n_samples: used,
    }
}

/// Sampled Lipschitz ratio of f in its candidate argument: the sup of
/// |f(t,x,v) - f(t,x,w)| / |v - w| over random candidate pairs at the
/// given sample points. A lower bound for the true constant.
pub fn lipschitz_probe(
    problem: &Problem,
    samples: &[(f64, Vec<f64>)],
    pairs_per_sample: usize,
    rng: CounterRng,
) -> f64 {
    let nc = problem.coeffs.dim() + 1;
    let mut v = vec![0.0; nc];
    let mut w = vec![0.0; nc];
    let mut sup = 0.0f64;
    let mut counter = 0u64;
    for (t, x) in samples {
        if !(*t < problem.horizon) || x.len() != problem.coeffs.dim() {
            continue;
        }
        for _ in 0..pairs_per_sample {
            // candidate pairs across several magnitudes
            let scale = 10.0f64.powf(2.0 * rng.uniform(counter, 0) - 1.0);
            counter += 1;
            for i in 0..nc {
                v[i] = scale * (2.0 * rng.uniform(counter, 0) - 1.0);
                counter += 1;
                w[i] = scale * (2.0 * rng.uniform(counter, 0) - 1.0);
                counter += 1;
            }
            let dv: f64 = v
                .iter()
                .zip(&w)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if dv == 0.0 {
                continue;
            }
            let df = ((problem.nonlinearity)(*t, x, &v) - (problem.nonlinearity)(*t, x, &w)).abs();
            let ratio = df / dv;
            if ratio > sup {
                sup = ratio;
            }
        }
    }
    sup
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::Brownian;

    fn brownian_problem(
        d: usize,
        horizon: f64,
        g: TerminalFn,
        f: NonlinearFn,
        lipschitz: f64,
    ) -> Problem {
        Problem {
            coeffs: Arc::new(Brownian { d }),
            horizon,
            domain: SpaceBox::unbounded(d),
            terminal: g,
            nonlinearity: f,
            lipschitz,
            v: LyapunovV::Constant(1.0),
            c_v: 1.3,
        }
    }

    fn small_mc(seed: u64, n_paths: usize) -> McConfig {
        McConfig {
            n_paths,
            n_steps: 20,
            base_seed: seed,
            taming: false,
            rule: QuadratureRule::SingularLeft,
            lambda: None,
            n_time_nodes: 3,
            nodes_per_axis: Some(5),
            grid_extent: Some(SpaceBox::new(vec![-1.0], vec![1.0]).unwrap()),
            padding_cells: 2,
        }
    }

    fn grid_1d(nodes_t: &[f64], lo: f64, hi: f64, n: usize, horizon: f64) -> ValueGrid {
        ValueGrid::zeros(
            nodes_t.to_vec(),
            vec![Axis::new(lo, hi, n).unwrap()],
            horizon,
        )
        .unwrap()
    }

    #[test]
    fn lambda_star_matches_closed_forms() {
        let pi3 = std::f64::consts::PI.powi(3);
        assert!((lambda_star(1.0, 1.0).unwrap() - pi3).abs() < 1e-12);
        assert!((lambda_star(2.0, 3.0).unwrap() - 36.0 * pi3).abs() < 1e-9);
        // Lipschitz-free limit: the threshold vanishes with c_V
        assert!(lambda_star(1e-6, 1.0).unwrap() < 1e-10);
        assert!(lambda_star(0.0, 1.0).is_err());
        assert!(lambda_star(1.0, 0.0).is_err());
        assert!(lambda_star(-1.0, 2.0).is_err());
    }

    #[test]
    fn config_validation_rejects_thin_budgets() {
        let mut mc = McConfig::defaults(1);
        mc.n_paths = 50;
        assert!(mc.validate().is_err());
        let mut mc = McConfig::defaults(1);
        mc.n_steps = 5;
        assert!(mc.validate().is_err());
        let mut mc = McConfig::defaults(1);
        mc.lambda = Some(-1.0);
        assert!(mc.validate().is_err());
        assert!(McConfig::defaults(1).validate().is_ok());
    }

    #[test]
    fn phi_recovers_identity_terminal_value_and_unit_gradient() {
        // g(x) = x, f = 0: exact map is (x, 1) at every (t, x)
        let problem = brownian_problem(
            1,
            1.0,
            Arc::new(|x: &[f64]| x[0]),
            Arc::new(|_t: f64, _x: &[f64], _v: &[f64]| 0.0),
            0.0,
        );
        let vf = grid_1d(&[0.0, 0.5, 0.98], -1.0, 1.0, 5, 1.0);
        let mc = small_mc(901, 2_000);
        let out = apply_phi(&vf, &problem, &mc).unwrap();
        let nt = 3;
        let sl = 5;
        for ti in 0..nt {
            for sp in 0..sl {
                let x = out.grid.space_axes()[0].point(sp);
                let se = out.node_se[ti * sl + sp];
                let v0 = out.grid.data()[ti * sl + sp];
                let v1 = out.grid.data()[(nt + ti) * sl + sp];
                assert!(
                    (v0 - x).abs() <= 3.0 * se + 1e-12,
                    "value at ({ti},{sp}): {v0} vs {x}, se {se}"
                );
                assert!(
                    (v1 - 1.0).abs() <= 3.0 * se + 1e-12,
                    "gradient at ({ti},{sp}): {v1}, se {se}"
                );
            }
        }
        assert_eq!(out.n_flagged, 0);
    }

    #[test]
    fn phi_recovers_quadratic_terminal_closed_form() {
        // g(x) = x^2, f = 0: exact map is (x^2 + (T - t), 2x)
        let problem = brownian_problem(
            1,
            1.0,
            Arc::new(|x: &[f64]| x[0] * x[0]),
            Arc::new(|_t: f64, _x: &[f64], _v: &[f64]| 0.0),
            0.0,
        );
        let vf = grid_1d(&[0.0, 0.5, 0.98], -1.0, 1.0, 5, 1.0);
        let mc = small_mc(902, 4_000);
        let out = apply_phi(&vf, &problem, &mc).unwrap();
        let (nt, sl) = (3, 5);
        for ti in 0..nt {
            let t = vf.time_nodes()[ti];
            for sp in 0..sl {
                let x = out.grid.space_axes()[0].point(sp);
                let se = out.node_se[ti * sl + sp];
                let v0 = out.grid.data()[ti * sl + sp];
                let v1 = out.grid.data()[(nt + ti) * sl + sp];
                assert!(
                    (v0 - (x * x + 1.0 - t)).abs() <= 3.0 * se,
                    "value at ({ti},{sp}): {v0} vs {}",
                    x * x + 1.0 - t
                );
                assert!(
                    (v1 - 2.0 * x).abs() <= 3.0 * se,
                    "gradient at ({ti},{sp}): {v1} vs {}",
                    2.0 * x
                );
            }
        }
    }

    #[test]
    fn phi_integrates_constant_forcing_to_time_to_go() {
        // g = 0, f = 1: value component is int_t^T E[1 * 1] dr = T - t and
        // the gradient components average E[Z_spatial] = 0
        let problem = brownian_problem(
            1,
            1.0,
            Arc::new(|_x: &[f64]| 0.0),
            Arc::new(|_t: f64, _x: &[f64], _v: &[f64]| 1.0),
            0.0,
        );
        let vf = grid_1d(&[0.0, 0.5, 0.98], -1.0, 1.0, 5, 1.0);
        let mc = small_mc(903, 4_000);
        let out = apply_phi(&vf, &problem, &mc).unwrap();
        let (nt, sl) = (3, 5);
        for ti in 0..nt {
            let t = vf.time_nodes()[ti];
            let span = 1.0 - t;
            for sp in 0..sl {
                let se = out.node_se[ti * sl + sp];
                let v0 = out.grid.data()[ti * sl + sp];
                let v1 = out.grid.data()[(nt + ti) * sl + sp];
                // left rules carry an O(h) deterministic defect on top of
                // the MC error
                assert!(
                    (v0 - span).abs() <= 3.0 * se + 0.02 * span,
                    "value at ({ti},{sp}): {v0} vs {span}"
                );
                assert!((v1 - 0.0).abs() <= 3.0 * se + 1e-12);
            }
        }
    }

    #[test]
    fn first_component_is_the_weight_free_estimator_bitwise() {
        // with f = 0 the value component must equal the plain sample mean
        // of g(X_T) over the same paths
        let problem = brownian_problem(
            1,
            1.0,
            Arc::new(|x: &[f64]| x[0] * x[0] * x[0]),
            Arc::new(|_t: f64, _x: &[f64], _v: &[f64]| 0.0),
            0.0,
        );
        let vf = grid_1d(&[0.0, 0.6, 0.98], -1.0, 1.0, 3, 1.0);
        let mc = small_mc(904, 500);
        let out = apply_phi(&vf, &problem, &mc).unwrap();
        let (nt, sl) = (3usize, 3usize);
        let full_span = 1.0;
        for ti in 0..nt {
            let t = vf.time_nodes()[ti];
            for sp in 0..sl {
                let flat = ti * sl + sp;
                let x = [vf.space_axes()[0].point(sp)];
                let schedule = build_schedule(&mc, t, 1.0, full_span).unwrap();
                let sim_grid = Arc::new(schedule.grid.clone());
                let opts = SimOptions::plain(1);
                let rng = node_rng(&mc, flat);
                let mut acc = Welford::new(1);
                let last = sim_grid.n_nodes() - 1;
                for p in 0..mc.n_paths as u64 {
                    let bundle =
                        simulate_single(&*problem.coeffs, t, &x, &sim_grid, &opts, rng, p)
                            .unwrap();
                    let xt = bundle.state_at(last)[0];
                    acc.push(&[xt * xt * xt]);
                }
                assert_eq!(
                    out.grid.data()[flat].to_bits(),
                    acc.mean[0].to_bits(),
                    "node ({ti},{sp})"
                );
            }
        }
    }

    #[test]
    fn solve_with_candidate_free_f_converges_on_the_second_sweep() {
        let problem = brownian_problem(
            1,
            1.0,
            Arc::new(|x: &[f64]| x[0]),
            Arc::new(|_t: f64, _x: &[f64], _v: &[f64]| 0.0),
            0.0,
        );
        let mc = small_mc(905, 200);
        let (grid, diag) = solve(&problem, &mc, 1e-12, 10).unwrap();
        // sweep 1 moves off zero; sweep 2 reuses the same paths and f does
        // not read the candidate, so the distance is exactly zero
        assert_eq!(diag.distances.len(), 2);
        assert!(diag.distances[0] > 0.0);
        assert_eq!(diag.distances[1], 0.0);
        assert!(diag.converged);
        assert_eq!(diag.lambda, 0.0);
        // stripped grid has the requested extent, not the padded one
        assert_eq!(grid.space_axes()[0].len(), 5);
        assert_eq!(grid.space_axes()[0].lo(), -1.0);
        grid.assert_finite().unwrap();
    }

    #[test]
    fn solve_returns_after_one_sweep_when_tolerance_is_loose() {
        let problem = brownian_problem(
            1,
            1.0,
            Arc::new(|x: &[f64]| x[0]),
            Arc::new(|_t: f64, _x: &[f64], _v: &[f64]| 0.0),
            0.0,
        );
        let mc = small_mc(906, 200);
        let (_, diag) = solve(&problem, &mc, 1e9, 10).unwrap();
        assert_eq!(diag.distances.len(), 1);
        assert!(diag.converged);
    }

    #[test]
    fn expanding_iterations_are_reported_as_divergence() {
        // L = 10 with lambda forced to zero: each sweep multiplies the
        // candidate's scale, so distances grow geometrically
        let problem = brownian_problem(
            1,
            1.0,
            Arc::new(|_x: &[f64]| 0.0),
            Arc::new(|_t: f64, _x: &[f64], v: &[f64]| 10.0 * v[0] + 1.0),
            10.0,
        );
        let mut mc = small_mc(907, 200);
        mc.lambda = Some(0.0);
        let err = solve(&problem, &mc, 1e-12, 20).unwrap_err();
        match err {
            Error::DivergingIteration(msg) => {
                assert!(msg.contains("distances"), "diagnostics missing: {msg}");
            }
            other => panic!("expected diverging iteration, got {other:?}"),
        }
    }

    #[test]
    fn probe_is_exactly_zero_when_f_ignores_the_candidate() {
        let problem = brownian_problem(
            1,
            1.0,
            Arc::new(|x: &[f64]| x[0]),
            Arc::new(|_t: f64, _x: &[f64], _v: &[f64]| 1.0),
            0.0,
        );
        let mut a = grid_1d(&[0.0, 0.5, 0.98], -1.0, 1.0, 5, 1.0);
        let mut b = a.clone();
        for (i, v) in a.data_mut().iter_mut().enumerate() {
            *v = (i as f64 * 0.37).sin();
        }
        for (i, v) in b.data_mut().iter_mut().enumerate() {
            *v = (i as f64 * 0.11).cos();
        }
        let mc = small_mc(908, 200);
        let ratio = contraction_probe(&problem, &a, &b, 1.0, &mc).unwrap();
        assert_eq!(ratio, 0.0);
        // coincident candidates are rejected
        assert!(matches!(
            contraction_probe(&problem, &a, &a, 1.0, &mc).unwrap_err(),
            Error::InvalidInput(_)
        ));
    }

    #[test]
    fn probe_stays_under_the_guaranteed_factor_at_lambda_star() {
        // linear gradient coupling f = L * v_grad with L = 1/2
        let lipschitz = 0.5;
        let problem = brownian_problem(
            1,
            1.0,
            Arc::new(|x: &[f64]| x[0]),
            Arc::new(move |_t: f64, _x: &[f64], v: &[f64]| lipschitz * v[1]),
            lipschitz,
        );
        let lambda = lambda_star(problem.c_v, problem.lipschitz).unwrap();
        let mut a = grid_1d(&[0.0, 0.33, 0.66, 0.98], -1.0, 1.0, 7, 1.0);
        let b = a.clone();
        // smooth separation: value sin(x), gradient cos(x)
        let (nt, sl) = (4usize, 7usize);
        for ti in 0..nt {
            for sp in 0..sl {
                let x = a.space_axes()[0].point(sp);
                a.data_mut()[ti * sl + sp] = 0.3 * x.sin();
                a.data_mut()[(nt + ti) * sl + sp] = 0.3 * x.cos();
            }
        }
        let mc = small_mc(909, 2_000);
        let report = contraction_probe_report(&problem, &a, &b, lambda, &mc).unwrap();
        assert!(
            report.ratio <= 0.5 + 3.0 * report.noise,
            "ratio {} with noise {}",
            report.ratio,
            report.noise
        );
        assert!(report.ratio > 0.0);
    }

    #[test]
    fn standard_errors_shrink_like_inverse_sqrt_paths() {
        let problem = brownian_problem(
            1,
            1.0,
            Arc::new(|x: &[f64]| x[0] * x[0]),
            Arc::new(|_t: f64, _x: &[f64], _v: &[f64]| 0.0),
            0.0,
        );
        let vf = grid_1d(&[0.0, 0.5, 0.98], -1.0, 1.0, 5, 1.0);
        let out_n = apply_phi(&vf, &problem, &small_mc(910, 2_000)).unwrap();
        let out_2n = apply_phi(&vf, &problem, &small_mc(910, 4_000)).unwrap();
        let mean_n: f64 = out_n.node_se.iter().sum::<f64>() / out_n.node_se.len() as f64;
        let mean_2n: f64 = out_2n.node_se.iter().sum::<f64>() / out_2n.node_se.len() as f64;
        let ratio = mean_2n / mean_n;
        let target = 1.0 / 2.0f64.sqrt();
        assert!(
            (ratio - target).abs() <= 0.1,
            "se ratio {ratio} vs {target}"
        );
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let problem = brownian_problem(
            1,
            1.0,
            Arc::new(|x: &[f64]| x[0] * x[0]),
            Arc::new(|_t: f64, _x: &[f64], v: &[f64]| 0.25 * v[0]),
            0.25,
        );
        let vf = grid_1d(&[0.0, 0.5, 0.98], -1.0, 1.0, 5, 1.0);
        let mc = small_mc(911, 300);
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| apply_phi(&vf, &problem, &mc).unwrap())
        };
        let one = run(1);
        let four = run(4);
        assert_eq!(one.grid.data(), four.grid.data());
        assert_eq!(one.node_se, four.node_se);
    }

    #[test]
    fn guard_reports_growth_ratios_against_the_envelope() {
        let mut problem = brownian_problem(
            1,
            1.0,
            Arc::new(|x: &[f64]| x[0] * x[0]),
            Arc::new(|_t: f64, x: &[f64], _v: &[f64]| x[0].sin()),
            0.0,
        );
        problem.v = LyapunovV::NormPower { scale: 1.0, power: 3.0 };
        let samples: Vec<(f64, Vec<f64>)> = (0..2001)
            .map(|i| (0.3, vec![-10.0 + i as f64 * 0.01]))
            .collect();
        let report = integrability_guard(&problem, &samples);
        assert_eq!(report.n_samples, 2001);
        // exact sup of x^2/(1 + |x|^3) is 2^{2/3}/3 at |x| = 2^{1/3}
        let exact = 2.0f64.powf(2.0 / 3.0) / 3.0;
        assert!(report.sup_g_over_v <= 1.4);
        assert!((report.sup_g_over_v - exact).abs() < 0.01);
        assert!((report.worst_g_point[0].abs() - 2.0f64.powf(1.0 / 3.0)).abs() < 0.02);
        // |sin| <= 1 and V >= 1, so the forcing ratio stays under sqrt(T)
        assert!(report.sup_f0_over_v <= 1.0);

        // exponential terminal data against a polynomial envelope: the
        // sampled sup keeps growing with the box, flagging non-integrability
        problem.terminal = Arc::new(|x: &[f64]| x[0].exp());
        let box5: Vec<(f64, Vec<f64>)> =
            (0..1001).map(|i| (0.0, vec![-5.0 + i as f64 * 0.01])).collect();
        let box10: Vec<(f64, Vec<f64>)> =
            (0..2001).map(|i| (0.0, vec![-10.0 + i as f64 * 0.01])).collect();
        let g5 = integrability_guard(&problem, &box5).sup_g_over_v;
        let g10 = integrability_guard(&problem, &box10).sup_g_over_v;
        assert!(g10 > 2.0 * g5);
    }

    #[test]
    fn lipschitz_probe_approaches_the_known_constant_from_below() {
        let problem = brownian_problem(
            1,
            1.0,
            Arc::new(|x: &[f64]| x[0]),
            Arc::new(|_t: f64, _x: &[f64], v: &[f64]| 0.5 * v[1]),
            0.5,
        );
        let samples = vec![(0.0, vec![0.3]), (0.5, vec![-0.7])];
        let sup = lipschitz_probe(&problem, &samples, 2_000, CounterRng::new(42, 0));
        assert!(sup <= 0.5 + 1e-9, "probe {sup} exceeds the constant");
        assert!(sup >= 0.45, "probe {sup} far below the constant");
    }
}
