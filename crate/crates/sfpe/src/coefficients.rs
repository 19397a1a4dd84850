//! Drift and diffusion coefficients with the analytic data the variational
//! equation needs.
//!
//! A [`CoefficientSet`] supplies mu, sigma, their spatial derivatives, and
//! the two structural constants the moment bounds run on:
//!
//! * `c_mono`: one-sided Lipschitz / Frobenius constant, in the sense
//!   max{<x-y, mu(t,x)-mu(t,y)>, 0.5 ||sigma(t,x)-sigma(t,y)||_F^2}
//!   <= (c_mono/2) ||x-y||^2;
//! * `alpha`: uniform ellipticity, v^T sigma sigma^T v >= alpha ||v||^2.
//!
//! Matrices pass through flat column-major slices of length d*d so the
//! simulation loop never allocates. `out[i + j*d]` is the (i, j) entry;
//! for Jacobians, row i is the component and column j the differentiation
//! direction.

use crate::error::{Error, Result};

/// Structural hint for the sigma-inverse solves downstream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SigmaStructure {
    General,
    /// Off-diagonal entries are identically zero; solves become exact
    /// componentwise divisions.
    Diagonal,
}

pub trait CoefficientSet: Send + Sync {
    fn dim(&self) -> usize;
    fn mu(&self, t: f64, x: &[f64], out: &mut [f64]);
    fn sigma(&self, t: f64, x: &[f64], out: &mut [f64]);
    /// out[i + j*d] = d mu_i / d x_j.
    fn mu_jacobian(&self, t: f64, x: &[f64], out: &mut [f64]);
    /// out[i + k*d] = d sigma_{ik} / d x_j for the given direction j.
    fn sigma_jacobian(&self, t: f64, x: &[f64], j: usize, out: &mut [f64]);
    fn alpha(&self) -> f64;
    fn c_mono(&self) -> f64;
    fn sigma_structure(&self) -> SigmaStructure {
        SigmaStructure::General
    }
    /// True when sigma never depends on (t, x); lets callers skip the
    /// Jacobian diffusion term entirely.
    fn sigma_is_constant(&self) -> bool {
        false
    }
}

/// max over grid nodes of 0.5 ||mu(s,0)||^2 + ||sigma(s,0)||_F^2, the origin
/// growth constant entering the second-moment bound.
pub fn origin_growth_constant(coeffs: &dyn CoefficientSet, time_nodes: &[f64]) -> f64 {
    let d = coeffs.dim();
    let origin = vec![0.0; d];
    let mut mu = vec![0.0; d];
    let mut sig = vec![0.0; d * d];
    let mut worst = f64::NEG_INFINITY;
    for &s in time_nodes {
        coeffs.mu(s, &origin, &mut mu);
        coeffs.sigma(s, &origin, &mut sig);
        let mu2: f64 = mu.iter().map(|v| v * v).sum();
        let fro2: f64 = sig.iter().map(|v| v * v).sum();
        worst = worst.max(0.5 * mu2 + fro2);
    }
    worst
}

/// One sampled condition probe: a time, a pair of states, a test vector.
#[derive(Clone, Debug)]
pub struct CloudPoint {
    pub t: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub v: Vec<f64>,
}

/// Worst observed ratios against the structural constants.
#[derive(Clone, Debug)]
pub struct ConditionReport {
    /// sup over pairs of max{<x-y, mu_x - mu_y>, 0.5||sig_x - sig_y||_F^2} / ||x-y||^2.
    pub worst_monotonicity_ratio: f64,
    /// inf over probes of v^T sigma sigma^T v / ||v||^2.
    pub worst_ellipticity_ratio: f64,
    pub monotonicity_ok: bool,
    pub ellipticity_ok: bool,
    /// (t, x, y) achieving the worst monotonicity ratio.
    pub monotonicity_witness: Option<(f64, Vec<f64>, Vec<f64>)>,
    pub samples: usize,
}

/// Empirically checks the one-sided Lipschitz and ellipticity conditions on
/// a point cloud. Report-only: failures set flags, never error.
pub fn check_coefficient_conditions(
    coeffs: &dyn CoefficientSet,
    cloud: &[CloudPoint],
) -> Result<ConditionReport> {
    if cloud.is_empty() {
        return Err(Error::InvalidInput("condition cloud is empty".into()));
    }
    let d = coeffs.dim();
    let (mut mu_x, mut mu_y) = (vec![0.0; d], vec![0.0; d]);
    let (mut sig_x, mut sig_y) = (vec![0.0; d * d], vec![0.0; d * d]);
    let mut sig_tv = vec![0.0; d];
    let mut worst_mono = f64::NEG_INFINITY;
    let mut worst_ell = f64::INFINITY;
    let mut witness = None;
    for p in cloud {
        if p.x.len() != d || p.y.len() != d || p.v.len() != d {
            return Err(Error::InvalidInput(format!(
                "cloud point dimension mismatch, expected {d}"
            )));
        }
        let diff2: f64 = p
            .x
            .iter()
            .zip(&p.y)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        if diff2 > 0.0 {
            coeffs.mu(p.t, &p.x, &mut mu_x);
            coeffs.mu(p.t, &p.y, &mut mu_y);
            coeffs.sigma(p.t, &p.x, &mut sig_x);
            coeffs.sigma(p.t, &p.y, &mut sig_y);
            let inner: f64 = (0..d)
                .map(|i| (p.x[i] - p.y[i]) * (mu_x[i] - mu_y[i]))
                .sum();
            let fro2: f64 = sig_x
                .iter()
                .zip(&sig_y)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let ratio = inner.max(0.5 * fro2) / diff2;
            if ratio > worst_mono {
                worst_mono = ratio;
                witness = Some((p.t, p.x.clone(), p.y.clone()));
            }
        }
        let v2: f64 = p.v.iter().map(|a| a * a).sum();
        if v2 > 0.0 {
            coeffs.sigma(p.t, &p.x, &mut sig_x);
            // sigma^T v, then its squared norm = v^T sigma sigma^T v
            for (k, out) in sig_tv.iter_mut().enumerate() {
                *out = (0..d).map(|i| sig_x[i + k * d] * p.v[i]).sum();
            }
            let quad: f64 = sig_tv.iter().map(|a| a * a).sum();
            worst_ell = worst_ell.min(quad / v2);
        }
    }
    Ok(ConditionReport {
        worst_monotonicity_ratio: worst_mono,
        worst_ellipticity_ratio: worst_ell,
        monotonicity_ok: worst_mono <= coeffs.c_mono() / 2.0 + 1e-12,
        ellipticity_ok: worst_ell >= coeffs.alpha() - 1e-12,
        monotonicity_witness: witness,
        samples: cloud.len(),
    })
}

/// mu = 0, sigma = I.
#[derive(Clone, Copy, Debug)]
pub struct Brownian {
    pub d: usize,
}

impl CoefficientSet for Brownian {
    fn dim(&self) -> usize {
        self.d
    }
    fn mu(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn sigma(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        identity(self.d, out);
    }
    fn mu_jacobian(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn sigma_jacobian(&self, _t: f64, _x: &[f64], _j: usize, out: &mut [f64]) {
        out.fill(0.0);
    }
    fn alpha(&self) -> f64 {
        1.0
    }
    fn c_mono(&self) -> f64 {
        // both sides of the one-sided condition vanish; any positive
        // constant works and a small one keeps the bounds tight
        0.1
    }
    fn sigma_structure(&self) -> SigmaStructure {
        SigmaStructure::Diagonal
    }
    fn sigma_is_constant(&self) -> bool {
        true
    }
}

/// mu = -rate * x, sigma = I.
#[derive(Clone, Copy, Debug)]
pub struct OrnsteinUhlenbeck {
    pub d: usize,
    pub rate: f64,
}

impl CoefficientSet for OrnsteinUhlenbeck {
    fn dim(&self) -> usize {
        self.d
    }
    fn mu(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        for (o, xi) in out.iter_mut().zip(x) {
            *o = -self.rate * xi;
        }
    }
    fn sigma(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        identity(self.d, out);
    }
    fn mu_jacobian(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for i in 0..self.d {
            out[i + i * self.d] = -self.rate;
        }
    }
    fn sigma_jacobian(&self, _t: f64, _x: &[f64], _j: usize, out: &mut [f64]) {
        out.fill(0.0);
    }
    fn alpha(&self) -> f64 {
        1.0
    }
    fn c_mono(&self) -> f64 {
        0.1
    }
    fn sigma_structure(&self) -> SigmaStructure {
        SigmaStructure::Diagonal
    }
    fn sigma_is_constant(&self) -> bool {
        true
    }
}

/// mu = 0, sigma = scale * I.
#[derive(Clone, Copy, Debug)]
pub struct ScaledBrownian {
    pub d: usize,
    pub scale: f64,
}

impl CoefficientSet for ScaledBrownian {
    fn dim(&self) -> usize {
        self.d
    }
    fn mu(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn sigma(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for i in 0..self.d {
            out[i + i * self.d] = self.scale;
        }
    }
    fn mu_jacobian(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn sigma_jacobian(&self, _t: f64, _x: &[f64], _j: usize, out: &mut [f64]) {
        out.fill(0.0);
    }
    fn alpha(&self) -> f64 {
        self.scale * self.scale
    }
    fn c_mono(&self) -> f64 {
        0.1
    }
    fn sigma_structure(&self) -> SigmaStructure {
        SigmaStructure::Diagonal
    }
    fn sigma_is_constant(&self) -> bool {
        true
    }
}

/// mu = drift * x, sigma = diag(vol * x_i); meaningful on boxes away from 0,
/// where `floor` is the smallest |x_i| the ellipticity constant is taken over.
#[derive(Clone, Copy, Debug)]
pub struct GeometricDiffusion {
    pub d: usize,
    pub drift: f64,
    pub vol: f64,
    pub floor: f64,
}

impl GeometricDiffusion {
    pub fn new(d: usize, drift: f64, vol: f64, floor: f64) -> Result<Self> {
        if vol <= 0.0 || floor <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "geometric diffusion needs vol > 0 and floor > 0, got vol={vol}, floor={floor}"
            )));
        }
        Ok(GeometricDiffusion { d, drift, vol, floor })
    }
}

impl CoefficientSet for GeometricDiffusion {
    fn dim(&self) -> usize {
        self.d
    }
    fn mu(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        for (o, xi) in out.iter_mut().zip(x) {
            *o = self.drift * xi;
        }
    }
    fn sigma(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for i in 0..self.d {
            out[i + i * self.d] = self.vol * x[i];
        }
    }
    fn mu_jacobian(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for i in 0..self.d {
            out[i + i * self.d] = self.drift;
        }
    }
    fn sigma_jacobian(&self, _t: f64, _x: &[f64], j: usize, out: &mut [f64]) {
        out.fill(0.0);
        // only sigma_{jj} depends on x_j
        out[j + j * self.d] = self.vol;
    }
    fn alpha(&self) -> f64 {
        let s = self.vol * self.floor;
        s * s
    }
    fn c_mono(&self) -> f64 {
        (2.0 * self.drift).max(self.vol * self.vol).max(0.1)
    }
    fn sigma_structure(&self) -> SigmaStructure {
        SigmaStructure::Diagonal
    }
}

/// d = 1, mu = -x^3, sigma = 1. Superlinear drift; the tamed scheme exists
/// for this one.
#[derive(Clone, Copy, Debug)]
pub struct CubicDrift;

impl CoefficientSet for CubicDrift {
    fn dim(&self) -> usize {
        1
    }
    fn mu(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        out[0] = -x[0] * x[0] * x[0];
    }
    fn sigma(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
    }
    fn mu_jacobian(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        out[0] = -3.0 * x[0] * x[0];
    }
    fn sigma_jacobian(&self, _t: f64, _x: &[f64], _j: usize, out: &mut [f64]) {
        out[0] = 0.0;
    }
    fn alpha(&self) -> f64 {
        1.0
    }
    fn c_mono(&self) -> f64 {
        0.1
    }
    fn sigma_structure(&self) -> SigmaStructure {
        SigmaStructure::Diagonal
    }
    fn sigma_is_constant(&self) -> bool {
        true
    }
}

fn identity(d: usize, out: &mut [f64]) {
    out.fill(0.0);
    for i in 0..d {
        out[i + i * d] = 1.0;
    }
}

/// Central-difference Jacobian of mu, for derivative validation.
pub fn mu_jacobian_fd(coeffs: &dyn CoefficientSet, t: f64, x: &[f64], h: f64, out: &mut [f64]) {
    let d = coeffs.dim();
    let mut xp = x.to_vec();
    let (mut fp, mut fm) = (vec![0.0; d], vec![0.0; d]);
    for j in 0..d {
        xp[j] = x[j] + h;
        coeffs.mu(t, &xp, &mut fp);
        xp[j] = x[j] - h;
        coeffs.mu(t, &xp, &mut fm);
        xp[j] = x[j];
        for i in 0..d {
            out[i + j * d] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
}

/// Central-difference derivative of sigma in direction j.
pub fn sigma_jacobian_fd(
    coeffs: &dyn CoefficientSet,
    t: f64,
    x: &[f64],
    j: usize,
    h: f64,
    out: &mut [f64],
) {
    let d = coeffs.dim();
    let mut xp = x.to_vec();
    let (mut fp, mut fm) = (vec![0.0; d * d], vec![0.0; d * d]);
    xp[j] = x[j] + h;
    coeffs.sigma(t, &xp, &mut fp);
    xp[j] = x[j] - h;
    coeffs.sigma(t, &xp, &mut fm);
    for i in 0..d * d {
        out[i] = (fp[i] - fm[i]) / (2.0 * h);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;

    fn random_cloud(rng: &CounterRng, d: usize, n: usize, lo: f64, hi: f64) -> Vec<CloudPoint> {
        let mut cloud = Vec::with_capacity(n);
        let draw = |path: u64, k: usize| {
            let mut buf = [0.0; 2];
            rng.fill_normals(path, k as u64, &mut buf);
            buf[0]
        };
        for p in 0..n {
            let u = |k: usize| {
                let z = draw(p as u64, k);
                // squash a normal into [lo, hi]
                lo + (hi - lo) * (0.5 + 0.5 * (z / (1.0 + z.abs())))
            };
            let t = u(0).clamp(0.0, 1.0);
            let x: Vec<f64> = (0..d).map(|i| u(1 + i)).collect();
            let y: Vec<f64> = (0..d).map(|i| u(1 + d + i)).collect();
            let v: Vec<f64> = (0..d).map(|i| draw(p as u64, 1 + 2 * d + i)).collect();
            cloud.push(CloudPoint { t, x, y, v });
        }
        cloud
    }

    #[test]
    fn contracting_drift_passes_monotonicity_with_any_positive_constant() {
        let coeffs = OrnsteinUhlenbeck { d: 2, rate: 1.0 };
        let cloud = random_cloud(&CounterRng::new(11, 0), 2, 400, -3.0, 3.0);
        let report = check_coefficient_conditions(&coeffs, &cloud).unwrap();
        assert!(report.worst_monotonicity_ratio <= 0.0, "OU drift is dissipative");
        assert!(report.monotonicity_ok);
        assert!(report.ellipticity_ok);
        assert!((report.worst_ellipticity_ratio - 1.0).abs() < 1e-12);
    }

    #[test]
    fn explosive_drift_fails_with_witness() {
        struct Explosive;
        impl CoefficientSet for Explosive {
            fn dim(&self) -> usize {
                1
            }
            fn mu(&self, _t: f64, x: &[f64], out: &mut [f64]) {
                out[0] = x[0];
            }
            fn sigma(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
                out[0] = 1.0;
            }
            fn mu_jacobian(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
                out[0] = 1.0;
            }
            fn sigma_jacobian(&self, _t: f64, _x: &[f64], _j: usize, out: &mut [f64]) {
                out[0] = 0.0;
            }
            fn alpha(&self) -> f64 {
                1.0
            }
            fn c_mono(&self) -> f64 {
                1.0
            }
        }
        let cloud = random_cloud(&CounterRng::new(7, 0), 1, 100, -2.0, 2.0);
        let report = check_coefficient_conditions(&Explosive, &cloud).unwrap();
        // <x-y, x-y> = ||x-y||^2, so the ratio is exactly 1 > c/2 = 0.5
        assert!((report.worst_monotonicity_ratio - 1.0).abs() < 1e-12);
        assert!(!report.monotonicity_ok);
        assert!(report.monotonicity_witness.is_some());
    }

    #[test]
    fn geometric_diffusion_ellipticity_matches_cloud_minimum() {
        let coeffs = GeometricDiffusion::new(2, 0.05, 0.2, 0.5).unwrap();
        let cloud = random_cloud(&CounterRng::new(3, 0), 2, 2000, 0.5, 2.0);
        let report = check_coefficient_conditions(&coeffs, &cloud).unwrap();
        // brute-force minimum of v^T sigma sigma^T v / ||v||^2 over the cloud
        let mut brute = f64::INFINITY;
        for p in &cloud {
            let v2: f64 = p.v.iter().map(|a| a * a).sum();
            if v2 == 0.0 {
                continue;
            }
            let q: f64 = (0..2)
                .map(|i| {
                    let s = 0.2 * p.x[i] * p.v[i];
                    s * s
                })
                .sum();
            brute = brute.min(q / v2);
        }
        assert!((report.worst_ellipticity_ratio - brute).abs() <= 1e-12 * (1.0 + brute));
        assert!(report.worst_ellipticity_ratio >= coeffs.alpha() - 1e-12);
    }

    #[test]
    fn analytic_jacobians_match_central_differences() {
        let sets: Vec<Box<dyn CoefficientSet>> = vec![
            Box::new(OrnsteinUhlenbeck { d: 3, rate: 0.7 }),
            Box::new(GeometricDiffusion::new(2, 0.03, 0.25, 0.4).unwrap()),
            Box::new(CubicDrift),
        ];
        let h = 1e-5;
        for coeffs in &sets {
            let d = coeffs.dim();
            let x: Vec<f64> = (0..d).map(|i| 0.8 + 0.3 * i as f64).collect();
            let (mut exact, mut fd) = (vec![0.0; d * d], vec![0.0; d * d]);
            coeffs.mu_jacobian(0.3, &x, &mut exact);
            mu_jacobian_fd(coeffs.as_ref(), 0.3, &x, h, &mut fd);
            for i in 0..d * d {
                assert!(
                    (exact[i] - fd[i]).abs() < 1e-7 * (1.0 + exact[i].abs()),
                    "mu jacobian entry {i}: {} vs fd {}",
                    exact[i],
                    fd[i]
                );
            }
            for j in 0..d {
                coeffs.sigma_jacobian(0.3, &x, j, &mut exact);
                sigma_jacobian_fd(coeffs.as_ref(), 0.3, &x, j, h, &mut fd);
                for i in 0..d * d {
                    assert!(
                        (exact[i] - fd[i]).abs() < 1e-7 * (1.0 + exact[i].abs()),
                        "sigma jacobian dir {j} entry {i}"
                    );
                }
            }
        }
    }

    #[test]
    fn origin_growth_constant_is_d_for_standard_brownian() {
        let coeffs = Brownian { d: 3 };
        let nodes: Vec<f64> = (0..11).map(|k| k as f64 / 10.0).collect();
        assert_eq!(origin_growth_constant(&coeffs, &nodes), 3.0);
    }

    #[test]
    fn empty_cloud_is_rejected() {
        assert!(check_coefficient_conditions(&Brownian { d: 1 }, &[]).is_err());
    }
}
