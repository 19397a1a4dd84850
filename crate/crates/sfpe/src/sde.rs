//! Euler-Maruyama simulation of the diffusion together with its pathwise
//! spatial Jacobian.
//!
//! Each path carries the state X and the variational matrix J = dX/dx,
//! updated per step as
//!
//! ```text
//!     X' = X + mu(t,X) h + sigma(t,X) dW
//!     J' = J + Dmu(t,X) J h + sum_j (Dsigma_j(t,X) dW) outer (row_j J)
//! ```
//!
//! where Dsigma_j is the elementwise derivative of sigma in direction x_j.
//! The drift-tamed variant replaces mu by mu / (1 + h ||mu||); the same
//! scalar multiplies the Dmu term, the leading derivative of the tamed
//! drift.
//!
//! Paths are pure functions of (coefficients, grid, seed key, path index):
//! results are bit-identical across runs and thread counts by construction.
//! A path that produces a non-finite state, or exits a finite domain box, is
//! frozen at its last good node and flagged; estimators skip flagged paths
//! and callers decide how many flags are tolerable.

use crate::coefficients::{origin_growth_constant, CoefficientSet};
use crate::error::{Error, Result};
use crate::grid::SpaceBox;
use crate::rng::CounterRng;
use crate::time_grid::TimeGrid;
use rayon::prelude::*;
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PathStatus {
    Completed,
    /// Non-finite state first appeared applying this step.
    Diverged { step: usize },
    /// First exit from a finite domain box happened applying this step.
    LeftDomain { step: usize },
}

impl PathStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, PathStatus::Completed)
    }
}

/// Reproduces a single path: the derived RNG key plus the path index.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedTag {
    pub rng: CounterRng,
    pub path: u64,
}

/// One simulated path: states, Jacobians, increments, and room for the
/// running weight integral (filled by the weight module).
#[derive(Clone, Debug)]
pub struct PathBundle {
    pub grid: Arc<TimeGrid>,
    /// n_nodes * d, node-major.
    pub x: Vec<f64>,
    /// n_nodes * d * d, node-major, column-major within a node.
    pub jac: Vec<f64>,
    /// n_steps * d, step-major.
    pub dw: Vec<f64>,
    /// n_nodes * d: the accumulated integral int_t^s (sigma^-1 J)^T dW.
    pub bel: Vec<f64>,
    pub status: PathStatus,
    pub seed_tag: SeedTag,
}

impl PathBundle {
    pub fn dim(&self) -> usize {
        self.dw.len() / self.grid.n_steps()
    }

    pub fn state_at(&self, node: usize) -> &[f64] {
        let d = self.dim();
        &self.x[node * d..(node + 1) * d]
    }

    pub fn jacobian_at(&self, node: usize) -> &[f64] {
        let d = self.dim();
        &self.jac[node * d * d..(node + 1) * d * d]
    }

    pub fn dw_at(&self, step: usize) -> &[f64] {
        let d = self.dim();
        &self.dw[step * d..(step + 1) * d]
    }

    pub fn bel_at(&self, node: usize) -> &[f64] {
        let d = self.dim();
        &self.bel[node * d..(node + 1) * d]
    }
}

#[derive(Clone, Debug)]
pub struct SimOptions {
    pub taming: bool,
    pub domain: SpaceBox,
}

impl SimOptions {
    pub fn plain(d: usize) -> Self {
        SimOptions {
            taming: false,
            domain: SpaceBox::unbounded(d),
        }
    }

    pub fn tamed(d: usize) -> Self {
        SimOptions {
            taming: true,
            domain: SpaceBox::unbounded(d),
        }
    }
}

/// Reusable per-thread buffers for the step loop.
struct Scratch {
    mu: Vec<f64>,
    sig: Vec<f64>,
    dmu: Vec<f64>,
    dsig: Vec<f64>,
    shock: Vec<f64>,
}

impl Scratch {
    fn new(d: usize) -> Self {
        Scratch {
            mu: vec![0.0; d],
            sig: vec![0.0; d * d],
            dmu: vec![0.0; d * d],
            dsig: vec![0.0; d * d],
            shock: vec![0.0; d],
        }
    }
}

pub fn simulate_single(
    coeffs: &dyn CoefficientSet,
    t: f64,
    x0: &[f64],
    grid: &Arc<TimeGrid>,
    opts: &SimOptions,
    rng: CounterRng,
    path: u64,
) -> Result<PathBundle> {
    validate_sim_inputs(coeffs, t, x0, grid, opts)?;
    let mut scratch = Scratch::new(coeffs.dim());
    Ok(simulate_into(coeffs, x0, grid, opts, rng, path, &mut scratch))
}

/// Simulates `n_paths` independent paths with indices 0..n_paths.
pub fn simulate_paths(
    coeffs: &dyn CoefficientSet,
    t: f64,
    x0: &[f64],
    grid: &Arc<TimeGrid>,
    opts: &SimOptions,
    n_paths: usize,
    rng: CounterRng,
) -> Result<Vec<PathBundle>> {
    validate_sim_inputs(coeffs, t, x0, grid, opts)?;
    if n_paths == 0 {
        return Err(Error::InvalidInput("need at least one path".into()));
    }
    let d = coeffs.dim();
    let bundles: Vec<PathBundle> = (0..n_paths as u64)
        .into_par_iter()
        .map_init(
            || Scratch::new(d),
            |scratch, p| simulate_into(coeffs, x0, grid, opts, rng, p, scratch),
        )
        .collect();
    Ok(bundles)
}

fn validate_sim_inputs(
    coeffs: &dyn CoefficientSet,
    t: f64,
    x0: &[f64],
    grid: &TimeGrid,
    opts: &SimOptions,
) -> Result<()> {
    let d = coeffs.dim();
    if x0.len() != d {
        return Err(Error::InvalidInput(format!(
            "starting point has dimension {}, coefficients have {d}",
            x0.len()
        )));
    }
    if opts.domain.dim() != d {
        return Err(Error::InvalidInput(format!(
            "domain box has dimension {}, coefficients have {d}",
            opts.domain.dim()
        )));
    }
    if (grid.t0() - t).abs() > 1e-12 * (1.0 + t.abs()) {
        return Err(Error::InvalidInput(format!(
            "grid starts at {}, requested start time {t}",
            grid.t0()
        )));
    }
    if !opts.domain.contains(x0) {
        return Err(Error::InvalidInput(
            "starting point lies outside the domain box".into(),
        ));
    }
    Ok(())
}

fn simulate_into(
    coeffs: &dyn CoefficientSet,
    x0: &[f64],
    grid: &Arc<TimeGrid>,
    opts: &SimOptions,
    rng: CounterRng,
    path: u64,
    s: &mut Scratch,
) -> PathBundle {
    let d = coeffs.dim();
    let dd = d * d;
    let n_nodes = grid.n_nodes();
    let n_steps = grid.n_steps();
    let mut x = vec![0.0; n_nodes * d];
    let mut jac = vec![0.0; n_nodes * dd];
    let mut dw_all = vec![0.0; n_steps * d];
    x[..d].copy_from_slice(x0);
    for i in 0..d {
        jac[i + i * d] = 1.0;
    }
    let check_domain = !opts.domain.is_unbounded();
    let mut status = PathStatus::Completed;
    let nodes = grid.nodes();
    for k in 0..n_steps {
        let h = nodes[k + 1] - nodes[k];
        let sqrt_h = h.sqrt();
        let dw = &mut dw_all[k * d..(k + 1) * d];
        rng.fill_normals(path, k as u64, dw);
        for v in dw.iter_mut() {
            *v *= sqrt_h;
        }
        let (done, rest) = x.split_at_mut((k + 1) * d);
        let xk = &done[k * d..];
        let xn = &mut rest[..d];
        let tk = nodes[k];
        coeffs.mu(tk, xk, &mut s.mu);
        coeffs.sigma(tk, xk, &mut s.sig);
        let tame = if opts.taming {
            let norm_mu = s.mu.iter().map(|v| v * v).sum::<f64>().sqrt();
            1.0 / (1.0 + h * norm_mu)
        } else {
            1.0
        };
        for i in 0..d {
            let mut v = xk[i] + tame * s.mu[i] * h;
            for (c, dwc) in dw.iter().enumerate() {
                v += s.sig[i + c * d] * dwc;
            }
            xn[i] = v;
        }
        let (jdone, jrest) = jac.split_at_mut((k + 1) * dd);
        let jk = &jdone[k * dd..];
        let jn = &mut jrest[..dd];
        coeffs.mu_jacobian(tk, xk, &mut s.dmu);
        for l in 0..d {
            for i in 0..d {
                let mut acc = 0.0;
                for m in 0..d {
                    acc += s.dmu[i + m * d] * jk[m + l * d];
                }
                jn[i + l * d] = jk[i + l * d] + tame * acc * h;
            }
        }
        if !coeffs.sigma_is_constant() {
            for j in 0..d {
                coeffs.sigma_jacobian(tk, xk, j, &mut s.dsig);
                for (m, shock) in s.shock.iter_mut().enumerate() {
                    *shock = (0..d).map(|c| s.dsig[m + c * d] * dw[c]).sum();
                }
                for l in 0..d {
                    let jl = jk[j + l * d];
                    for m in 0..d {
                        jn[m + l * d] += s.shock[m] * jl;
                    }
                }
            }
        }
        let finite = xn.iter().all(|v| v.is_finite()) && jn.iter().all(|v| v.is_finite());
        if !finite {
            status = PathStatus::Diverged { step: k };
        } else if check_domain && !opts.domain.contains(xn) {
            status = PathStatus::LeftDomain { step: k };
        }
        if !status.is_ok() {
            // freeze the rest of the path at the last good node
            for node in k + 1..n_nodes {
                let (src, dst) = x.split_at_mut(node * d);
                dst[..d].copy_from_slice(&src[k * d..(k + 1) * d]);
                let (jsrc, jdst) = jac.split_at_mut(node * dd);
                jdst[..dd].copy_from_slice(&jsrc[k * dd..(k + 1) * dd]);
            }
            break;
        }
    }
    PathBundle {
        grid: Arc::clone(grid),
        x,
        jac,
        dw: dw_all,
        bel: vec![0.0; n_nodes * d],
        status,
        seed_tag: SeedTag { rng, path },
    }
}

/// One row of the second-moment report at a grid node.
#[derive(Clone, Debug)]
pub struct MomentRow {
    pub s: f64,
    pub x2_mean: f64,
    pub x2_se: f64,
    /// Square of the root-mean bound exp((2c+1)T)(||x0||^2 + m/(2c+1));
    /// the bound is natural for the square root, rows store its square so
    /// the comparison column is directly against E||X||^2.
    pub x2_bound: f64,
    pub x2_ok: bool,
    pub j2_mean: f64,
    pub j2_se: f64,
    /// d exp(2c(T - t0)), uniform over the horizon.
    pub j2_bound: f64,
    pub j2_ok: bool,
}

#[derive(Clone, Debug)]
pub struct XJMomentReport {
    pub rows: Vec<MomentRow>,
    pub n_paths: usize,
    pub n_flagged: usize,
    pub growth_constant: f64,
    pub all_ok: bool,
}

/// Empirical E||X_s||^2 and E||J_s||_F^2 per node against their growth
/// bounds, with 3-standard-error slack. Flagged paths are excluded.
pub fn moment_bound_report_x_j(
    paths: &[PathBundle],
    coeffs: &dyn CoefficientSet,
) -> Result<XJMomentReport> {
    if paths.len() < 1000 {
        return Err(Error::InvalidInput(format!(
            "moment report needs at least 1000 paths, got {}",
            paths.len()
        )));
    }
    let grid = Arc::clone(&paths[0].grid);
    let d = coeffs.dim();
    let n_nodes = grid.n_nodes();
    let healthy: Vec<&PathBundle> = paths.iter().filter(|p| p.status.is_ok()).collect();
    let n = healthy.len();
    if n < 2 {
        return Err(Error::FailedSweep("all paths flagged, nothing to report".into()));
    }
    let x0 = healthy[0].state_at(0);
    let x0_norm2: f64 = x0.iter().map(|v| v * v).sum();
    let m = origin_growth_constant(coeffs, grid.nodes());
    let c = coeffs.c_mono();
    let t_total = grid.t1();
    let root_bound = ((2.0 * c + 1.0) * t_total).exp() * (x0_norm2 + m / (2.0 * c + 1.0));
    let x2_bound = root_bound * root_bound;
    let j2_bound = d as f64 * (2.0 * c * (grid.t1() - grid.t0())).exp();
    let mut rows = Vec::with_capacity(n_nodes);
    let mut all_ok = true;
    for node in 0..n_nodes {
        let (mut sx, mut sxx, mut sj, mut sjj) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for p in &healthy {
            let x2: f64 = p.state_at(node).iter().map(|v| v * v).sum();
            let j2: f64 = p.jacobian_at(node).iter().map(|v| v * v).sum();
            sx += x2;
            sxx += x2 * x2;
            sj += j2;
            sjj += j2 * j2;
        }
        let nf = n as f64;
        let x2_mean = sx / nf;
        let j2_mean = sj / nf;
        let x2_se = ((sxx - sx * sx / nf).max(0.0) / (nf - 1.0)).sqrt() / nf.sqrt();
        let j2_se = ((sjj - sj * sj / nf).max(0.0) / (nf - 1.0)).sqrt() / nf.sqrt();
        let x2_ok = x2_mean <= x2_bound + 3.0 * x2_se;
        let j2_ok = j2_mean <= j2_bound + 3.0 * j2_se;
        all_ok &= x2_ok && j2_ok;
        rows.push(MomentRow {
            s: grid.nodes()[node],
            x2_mean,
            x2_se,
            x2_bound,
            x2_ok,
            j2_mean,
            j2_se,
            j2_bound,
            j2_ok,
        });
    }
    Ok(XJMomentReport {
        rows,
        n_paths: paths.len(),
        n_flagged: paths.len() - n,
        growth_constant: m,
        all_ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{Brownian, CubicDrift, OrnsteinUhlenbeck};

    fn arc_grid(t0: f64, t1: f64, steps: usize) -> Arc<TimeGrid> {
        Arc::new(TimeGrid::uniform(t0, t1, steps).unwrap())
    }

    #[test]
    fn driftless_identity_diffusion_is_a_prefix_sum_of_increments() {
        let coeffs = Brownian { d: 2 };
        let grid = arc_grid(0.0, 1.0, 16);
        let rng = CounterRng::new(5, 0);
        let b = simulate_single(&coeffs, 0.0, &[0.0, 0.0], &grid, &SimOptions::plain(2), rng, 3)
            .unwrap();
        let mut running = [0.0f64; 2];
        for k in 0..16 {
            for i in 0..2 {
                running[i] += b.dw_at(k)[i];
            }
            assert_eq!(b.state_at(k + 1)[0].to_bits(), running[0].to_bits());
            assert_eq!(b.state_at(k + 1)[1].to_bits(), running[1].to_bits());
        }
        // constant coefficients keep the Jacobian at the identity exactly
        for node in 0..=16 {
            assert_eq!(b.jacobian_at(node), &[1.0, 0.0, 0.0, 1.0]);
        }
        assert!(b.status.is_ok());
    }

    #[test]
    fn mean_reverting_drift_matches_exact_mean_within_three_ses() {
        let coeffs = OrnsteinUhlenbeck { d: 1, rate: 1.0 };
        let grid = arc_grid(0.0, 1.0, 200);
        let rng = CounterRng::new(42, 0);
        let n = 100_000;
        let paths =
            simulate_paths(&coeffs, 0.0, &[1.0], &grid, &SimOptions::plain(1), n, rng).unwrap();
        let last = grid.n_nodes() - 1;
        let mean: f64 = paths.iter().map(|p| p.state_at(last)[0]).sum::<f64>() / n as f64;
        let var: f64 = paths
            .iter()
            .map(|p| (p.state_at(last)[0] - mean).powi(2))
            .sum::<f64>()
            / (n as f64 - 1.0);
        let se = (var / n as f64).sqrt();
        let exact = (-1.0f64).exp();
        assert!(
            (mean - exact).abs() <= 3.0 * se,
            "OU mean {mean} vs exact {exact}, se {se}"
        );
    }

    #[test]
    fn mean_reverting_jacobian_follows_the_exact_euler_product() {
        let coeffs = OrnsteinUhlenbeck { d: 1, rate: 1.0 };
        let n_steps = 64;
        let grid = arc_grid(0.0, 1.0, n_steps);
        let rng = CounterRng::new(9, 1);
        let b = simulate_single(&coeffs, 0.0, &[0.5], &grid, &SimOptions::plain(1), rng, 0)
            .unwrap();
        let h = 1.0 / n_steps as f64;
        for node in [1, 32, 64] {
            let expect = (1.0 - h).powi(node as i32);
            assert!(
                (b.jacobian_at(node)[0] - expect).abs() < 1e-12,
                "J at node {node}"
            );
            // and the Euler product sits within O(h) of the exact e^{-s}
            let s = node as f64 * h;
            assert!((b.jacobian_at(node)[0] - (-s).exp()).abs() < 2.0 * s * h);
        }
    }

    #[test]
    fn increment_variance_tracks_step_length() {
        let coeffs = Brownian { d: 2 };
        let grid = arc_grid(0.0, 1.0, 20);
        let rng = CounterRng::new(77, 0);
        let n = 10_000;
        let paths =
            simulate_paths(&coeffs, 0.0, &[0.0, 0.0], &grid, &SimOptions::plain(2), n, rng)
                .unwrap();
        let h = 0.05;
        // sample variance of N(0, h) has standard error h * sqrt(2 / (n-1))
        let se = h * (2.0 / (n as f64 - 1.0)).sqrt();
        for k in 0..20 {
            for c in 0..2 {
                let mean: f64 = paths.iter().map(|p| p.dw_at(k)[c]).sum::<f64>() / n as f64;
                let var: f64 = paths
                    .iter()
                    .map(|p| (p.dw_at(k)[c] - mean).powi(2))
                    .sum::<f64>()
                    / (n as f64 - 1.0);
                assert!(
                    (var - h).abs() <= 5.0 * se,
                    "step {k} component {c}: var {var} vs {h}"
                );
            }
        }
    }

    #[test]
    fn identical_seeds_reproduce_identical_bundles() {
        let coeffs = OrnsteinUhlenbeck { d: 2, rate: 0.5 };
        let grid = arc_grid(0.0, 1.0, 10);
        let opts = SimOptions::plain(2);
        let rng = CounterRng::new(1234, 7);
        let a = simulate_single(&coeffs, 0.0, &[1.0, -1.0], &grid, &opts, rng, 5).unwrap();
        let b = simulate_single(&coeffs, 0.0, &[1.0, -1.0], &grid, &opts, rng, 5).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.jac, b.jac);
        assert_eq!(a.dw, b.dw);
        let c = simulate_single(&coeffs, 0.0, &[1.0, -1.0], &grid, &opts, rng, 6).unwrap();
        assert_ne!(a.dw, c.dw, "distinct path indices must decorrelate");
    }

    #[test]
    fn taming_keeps_superlinear_drift_finite() {
        let coeffs = CubicDrift;
        let grid = arc_grid(0.0, 1.0, 10);
        let rng = CounterRng::new(3, 0);
        let n = 200;
        let wild =
            simulate_paths(&coeffs, 0.0, &[10.0], &grid, &SimOptions::plain(1), n, rng).unwrap();
        let diverged = wild.iter().filter(|p| !p.status.is_ok()).count();
        assert!(
            diverged > n / 2,
            "vanilla Euler should blow up from x0=10 at h=0.1, got {diverged} flags"
        );
        let tamed =
            simulate_paths(&coeffs, 0.0, &[10.0], &grid, &SimOptions::tamed(1), n, rng).unwrap();
        for p in &tamed {
            assert!(p.status.is_ok());
            assert!(p.x.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn flagged_paths_freeze_at_the_last_good_node() {
        let coeffs = Brownian { d: 1 };
        let grid = arc_grid(0.0, 1.0, 50);
        let rng = CounterRng::new(100, 0);
        let opts = SimOptions {
            taming: false,
            domain: SpaceBox::new(vec![-0.3], vec![0.3]).unwrap(),
        };
        let paths = simulate_paths(&coeffs, 0.0, &[0.0], &grid, &opts, 500, rng).unwrap();
        let mut leavers = 0;
        for p in &paths {
            if let PathStatus::LeftDomain { step } = p.status {
                leavers += 1;
                let frozen = p.state_at(step)[0];
                for node in step + 1..=50 {
                    assert_eq!(p.state_at(node)[0].to_bits(), frozen.to_bits());
                }
                assert!(frozen.abs() <= 0.3, "frozen state must be the last inside node");
            }
        }
        assert!(leavers > 400, "Brownian motion on [-0.3, 0.3] should mostly exit");
    }

    #[test]
    fn moment_report_confirms_brownian_and_mean_reverting_bounds() {
        let grid = arc_grid(0.0, 1.0, 40);
        let rng = CounterRng::new(11, 0);
        let brown = Brownian { d: 2 };
        let paths =
            simulate_paths(&brown, 0.0, &[0.0, 0.0], &grid, &SimOptions::plain(2), 4000, rng)
                .unwrap();
        let report = moment_bound_report_x_j(&paths, &brown).unwrap();
        assert!(report.all_ok);
        assert_eq!(report.growth_constant, 2.0);
        let last = report.rows.last().unwrap();
        // E||X_T||^2 = d T = 2
        assert!((last.x2_mean - 2.0).abs() <= 3.0 * last.x2_se);
        // constant identity Jacobian: exactly d with zero spread
        assert_eq!(last.j2_mean, 2.0);
        assert_eq!(last.j2_se, 0.0);

        let ou = OrnsteinUhlenbeck { d: 1, rate: 1.0 };
        let paths =
            simulate_paths(&ou, 0.0, &[1.0], &grid, &SimOptions::plain(1), 2000, rng).unwrap();
        let report = moment_bound_report_x_j(&paths, &ou).unwrap();
        assert!(report.all_ok);
        for row in &report.rows {
            // deterministic Jacobian (1-h)^{2k} stays under e^{2cT}
            assert!(row.j2_mean <= row.j2_bound);
        }
    }

    #[test]
    fn input_validation_rejects_mismatches() {
        let coeffs = Brownian { d: 2 };
        let grid = arc_grid(0.0, 1.0, 4);
        let rng = CounterRng::new(0, 0);
        let opts = SimOptions::plain(2);
        assert!(simulate_single(&coeffs, 0.0, &[0.0], &grid, &opts, rng, 0).is_err());
        assert!(simulate_single(&coeffs, 0.5, &[0.0, 0.0], &grid, &opts, rng, 0).is_err());
        let bad_box = SimOptions {
            taming: false,
            domain: SpaceBox::new(vec![1.0, 1.0], vec![2.0, 2.0]).unwrap(),
        };
        assert!(simulate_single(&coeffs, 0.0, &[0.0, 0.0], &grid, &bad_box, rng, 0).is_err());
        assert!(
            simulate_paths(&coeffs, 0.0, &[0.0, 0.0], &grid, &opts, 0, rng).is_err(),
            "zero paths"
        );
    }
}
