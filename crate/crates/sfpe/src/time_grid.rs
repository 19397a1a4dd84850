//! Time discretizations of [t, T].
//!
//! Two families: plain grids for simulation ([`TimeGrid`]), and quadrature
//! schedules ([`QuadratureSchedule`]) that pair each node with a weight for
//! the running integral int_t^T f(r, X_r, w) Z_r dr. The integrand carries a
//! 1/sqrt(r - t) singularity at the left endpoint through the gradient slot
//! of Z, so the singular schedule substitutes r = t + u^2 on a leading slice
//! of the interval: in the u variable the integrand is bounded and left
//! rectangles converge at their usual rate, and the u = 0 node gets weight
//! zero (the value slot contributes O(u) there, the gradient slot is
//! zero-mean).

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    nodes: Vec<f64>,
}

impl TimeGrid {
    pub fn uniform(t0: f64, t1: f64, n_steps: usize) -> Result<Self> {
        if !(t1 > t0) || !t0.is_finite() || !t1.is_finite() {
            return Err(Error::InvalidInput(format!(
                "need finite t1 > t0, got [{t0}, {t1}]"
            )));
        }
        if n_steps == 0 {
            return Err(Error::InvalidInput("need at least one step".into()));
        }
        let h = (t1 - t0) / n_steps as f64;
        let mut nodes: Vec<f64> = (0..=n_steps).map(|k| t0 + k as f64 * h).collect();
        nodes[n_steps] = t1;
        Ok(TimeGrid { nodes })
    }

    /// Step sizes in geometric progression; `ratio` is last step over first
    /// step, so ratio < 1 clusters nodes near t1.
    pub fn geometric(t0: f64, t1: f64, n_steps: usize, ratio: f64) -> Result<Self> {
        if !(t1 > t0) || !t0.is_finite() || !t1.is_finite() {
            return Err(Error::InvalidInput(format!(
                "need finite t1 > t0, got [{t0}, {t1}]"
            )));
        }
        if n_steps == 0 {
            return Err(Error::InvalidInput("need at least one step".into()));
        }
        if !(ratio > 0.0) || !ratio.is_finite() {
            return Err(Error::InvalidInput(format!(
                "step ratio must be positive, got {ratio}"
            )));
        }
        if n_steps == 1 || ratio == 1.0 {
            return Self::uniform(t0, t1, n_steps);
        }
        let r = ratio.powf(1.0 / (n_steps as f64 - 1.0));
        let h0 = (t1 - t0) * (1.0 - r) / (1.0 - r.powi(n_steps as i32));
        let mut nodes = Vec::with_capacity(n_steps + 1);
        let mut s = t0;
        let mut h = h0;
        nodes.push(t0);
        for _ in 0..n_steps {
            s += h;
            nodes.push(s);
            h *= r;
        }
        nodes[n_steps] = t1;
        Self::from_nodes(nodes)
    }

    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::InvalidInput("grid needs at least two nodes".into()));
        }
        for w in nodes.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::InvalidInput(format!(
                    "nodes must increase strictly, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if nodes.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite grid node".into()));
        }
        Ok(TimeGrid { nodes })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn t0(&self) -> f64 {
        self.nodes[0]
    }

    pub fn t1(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    pub fn n_steps(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn step(&self, k: usize) -> f64 {
        self.nodes[k + 1] - self.nodes[k]
    }
}

/// A time grid with one quadrature weight per node for left-rule integrals;
/// the terminal node always has weight zero.
#[derive(Clone, Debug)]
pub struct QuadratureSchedule {
    pub grid: TimeGrid,
    pub weights: Vec<f64>,
}

impl QuadratureSchedule {
    /// Plain left-rectangle rule on a given grid.
    pub fn left_rectangles(grid: TimeGrid) -> Self {
        let mut weights: Vec<f64> = (0..grid.n_steps()).map(|k| grid.step(k)).collect();
        weights.push(0.0);
        QuadratureSchedule { grid, weights }
    }

    /// Singularity-adapted rule on [t, t1]: the first `frac` of the span is
    /// discretized as r = t + u^2 with left rectangles uniform in u, the rest
    /// with plain left rectangles. `n_base` is the step budget a full-length
    /// interval gets; shorter intervals scale down but keep enough nodes to
    /// resolve both segments.
    pub fn singular(t: f64, t1: f64, full_span: f64, n_base: usize, frac: f64) -> Result<Self> {
        if !(t1 > t) {
            return Err(Error::InvalidInput(format!(
                "need t1 > t, got [{t}, {t1}]"
            )));
        }
        if !(0.0 < frac && frac < 1.0) {
            return Err(Error::InvalidInput(format!(
                "singular fraction must lie in (0, 1), got {frac}"
            )));
        }
        if n_base == 0 || full_span <= 0.0 {
            return Err(Error::InvalidInput(
                "need a positive step budget and reference span".into(),
            ));
        }
        let span = t1 - t;
        let m1 = (0.25 * n_base as f64 * span / full_span).ceil().max(4.0) as usize + 4;
        let m2 = (0.9 * span / (full_span / n_base as f64)).ceil().max(3.0) as usize;
        let u_max = (frac * span).sqrt();
        let h_u = u_max / m1 as f64;
        let mut nodes = Vec::with_capacity(m1 + m2 + 1);
        let mut weights = Vec::with_capacity(m1 + m2 + 1);
        for i in 0..m1 {
            let u = i as f64 * h_u;
            nodes.push(t + u * u);
            // left rectangle of int 2u du over [u, u + h_u]
            weights.push(2.0 * u * h_u);
        }
        let h2 = (span - frac * span) / m2 as f64;
        for k in 0..m2 {
            nodes.push(t + frac * span + k as f64 * h2);
            weights.push(h2);
        }
        nodes.push(t1);
        weights.push(0.0);
        let grid = TimeGrid::from_nodes(nodes)?;
        Ok(QuadratureSchedule { grid, weights })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_grid_hits_endpoints_exactly() {
        let g = TimeGrid::uniform(0.2, 1.1, 7).unwrap();
        assert_eq!(g.t0(), 0.2);
        assert_eq!(g.t1(), 1.1);
        assert_eq!(g.n_steps(), 7);
        for k in 0..7 {
            assert!((g.step(k) - 0.9 / 7.0).abs() < 1e-15);
        }
    }

    #[test]
    fn geometric_grid_shrinks_steps_toward_terminal_time() {
        let g = TimeGrid::geometric(0.0, 1.0, 20, 0.1).unwrap();
        assert_eq!(g.t0(), 0.0);
        assert_eq!(g.t1(), 1.0);
        for k in 0..19 {
            assert!(g.step(k + 1) < g.step(k), "steps must decrease");
        }
        assert!((g.step(19) / g.step(0) - 0.1).abs() < 1e-10);
    }

    #[test]
    fn degenerate_grids_are_rejected() {
        assert!(TimeGrid::uniform(1.0, 1.0, 5).is_err());
        assert!(TimeGrid::uniform(0.0, 1.0, 0).is_err());
        assert!(TimeGrid::geometric(0.0, 1.0, 5, 0.0).is_err());
        assert!(TimeGrid::from_nodes(vec![0.0, 0.5, 0.5, 1.0]).is_err());
        assert!(TimeGrid::from_nodes(vec![0.0]).is_err());
    }

    #[test]
    fn left_rule_weights_sum_to_span() {
        let s = QuadratureSchedule::left_rectangles(TimeGrid::uniform(0.0, 2.0, 9).unwrap());
        let total: f64 = s.weights.iter().sum();
        assert!((total - 2.0).abs() < 1e-14);
        assert_eq!(*s.weights.last().unwrap(), 0.0);
    }

    #[test]
    fn singular_rule_integrates_inverse_sqrt_singularity() {
        // int_0^1 dr / sqrt(r - 0) = 2; the substituted rule should get close
        // while plain left rectangles cannot even start (1/0 at the left node)
        let s = QuadratureSchedule::singular(0.0, 1.0, 1.0, 200, 0.1).unwrap();
        let mut acc = 0.0;
        for (r, w) in s.grid.nodes().iter().zip(&s.weights) {
            if *w > 0.0 {
                acc += w / r.sqrt();
            }
        }
        assert!((acc - 2.0).abs() < 0.05, "got {acc}, expected about 2");
    }

    #[test]
    fn singular_rule_weights_cover_the_span() {
        for (t, t1) in [(0.0, 1.0), (0.3, 1.0), (0.9, 1.0)] {
            let s = QuadratureSchedule::singular(t, t1, 1.0, 50, 0.1).unwrap();
            let total: f64 = s.weights.iter().sum();
            // the u-substituted segment underestimates its slice by O(h_u)
            assert!(
                (total - (t1 - t)).abs() < 0.12 * (t1 - t),
                "weights sum {total} vs span {}",
                t1 - t
            );
            assert_eq!(s.grid.t0(), t);
            assert_eq!(s.grid.t1(), t1);
            assert_eq!(*s.weights.last().unwrap(), 0.0);
            assert_eq!(s.weights[0], 0.0);
        }
    }

    #[test]
    fn smooth_integrands_keep_first_order_accuracy_on_singular_rule() {
        let s = QuadratureSchedule::singular(0.0, 1.0, 1.0, 400, 0.1).unwrap();
        let mut acc = 0.0;
        for (r, w) in s.grid.nodes().iter().zip(&s.weights) {
            acc += w * r.cos();
        }
        assert!((acc - 1.0f64.sin()).abs() < 5e-3, "got {acc}");
    }
}
