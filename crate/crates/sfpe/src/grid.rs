//! Axis-aligned boxes and space-time value grids.
//!
//! [`SpaceBox`] is the domain O: bounds may be infinite, and the default box
//! is all of R^d. Paths are never stopped at the boundary; a finite box means
//! leaving it flags the path (the diffusion is assumed to live inside O, so
//! an exit is as disqualifying as a blow-up).
//!
//! [`ValueGrid`] stores the (d+1)-component approximation (value slot 0,
//! gradient slots 1..=d) on a tensor grid over time and space. Time nodes
//! stop at T - delta_T: the represented function blows up like
//! 1/sqrt(T - t), so the terminal window is never represented and reads
//! beyond the last time node are an error ([`ValueGrid::evaluate`]) or an
//! explicit clamp ([`ValueGrid::evaluate_clamped`]). Spatial reads clamp to
//! the grid extent: clamping composes the lookup with a projection, which
//! cannot increase the sup norms the solver contracts in, while any
//! extrapolation could. Reads at stored nodes return stored values bit-exact.

use crate::error::{Error, Result};
use std::io::{BufRead, Write};

/// Axis-aligned box in R^d; bounds may be +-infinity.
#[derive(Clone, Debug, PartialEq)]
pub struct SpaceBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl SpaceBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::InvalidInput(format!(
                "box bounds need matching nonzero lengths, got {} and {}",
                lo.len(),
                hi.len()
            )));
        }
        for (l, h) in lo.iter().zip(&hi) {
            if !(l < h) || l.is_nan() || h.is_nan() {
                return Err(Error::InvalidInput(format!(
                    "box needs lo < hi per axis, got [{l}, {h}]"
                )));
            }
        }
        Ok(SpaceBox { lo, hi })
    }

    /// All of R^d.
    pub fn unbounded(d: usize) -> Self {
        SpaceBox {
            lo: vec![f64::NEG_INFINITY; d],
            hi: vec![f64::INFINITY; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn is_unbounded(&self) -> bool {
        self.lo.iter().all(|v| v.is_infinite()) && self.hi.iter().all(|v| v.is_infinite())
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(xi, (l, h))| *xi >= *l && *xi <= *h)
    }
}

/// Uniformly spaced axis with exact endpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct Axis {
    lo: f64,
    hi: f64,
    n: usize,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidInput(format!(
                "axis needs finite hi > lo, got [{lo}, {hi}]"
            )));
        }
        if n < 2 {
            return Err(Error::InvalidInput(format!(
                "axis needs at least two points, got {n}"
            )));
        }
        Ok(Axis { lo, hi, n })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.n - 1) as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        if i == self.n - 1 {
            self.hi
        } else {
            self.lo + i as f64 * self.spacing()
        }
    }

    /// Clamped cell index and fractional offset; offsets within 1e-9 of a
    /// node snap to it so node reads stay bit-exact.
    fn locate(&self, x: f64) -> (usize, f64) {
        let s = (x - self.lo) / self.spacing();
        if s <= 0.0 {
            return (0, 0.0);
        }
        if s >= (self.n - 1) as f64 {
            return (self.n - 2, 1.0);
        }
        let nearest = s.round();
        if (s - nearest).abs() <= 1e-9 * (1.0 + s.abs()) {
            let i = nearest as usize;
            return if i == self.n - 1 { (i - 1, 1.0) } else { (i, 0.0) };
        }
        let i = (s.floor() as usize).min(self.n - 2);
        (i, s - i as f64)
    }

    /// Extends the axis by `cells` extra points of the same spacing per side.
    pub fn padded(&self, cells: usize) -> Axis {
        let h = self.spacing();
        Axis {
            lo: self.lo - cells as f64 * h,
            hi: self.hi + cells as f64 * h,
            n: self.n + 2 * cells,
        }
    }
}

/// (d+1)-component function values on a time x space tensor grid.
///
/// Storage is component-major, then time, then space axes with the last
/// axis fastest. `horizon` is the terminal time T; the last time node must
/// stay strictly below it (the gap is delta_T).
#[derive(Clone, Debug, PartialEq)]
pub struct ValueGrid {
    time_nodes: Vec<f64>,
    space: Vec<Axis>,
    horizon: f64,
    /// d + 1
    components: usize,
    data: Vec<f64>,
}

impl ValueGrid {
    pub fn zeros(time_nodes: Vec<f64>, space: Vec<Axis>, horizon: f64) -> Result<Self> {
        if time_nodes.is_empty() {
            return Err(Error::InvalidInput("grid needs at least one time node".into()));
        }
        for w in time_nodes.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::InvalidInput(format!(
                    "time nodes must increase strictly, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if time_nodes.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite time node".into()));
        }
        let last = *time_nodes.last().unwrap();
        if !(horizon > last) || !horizon.is_finite() {
            return Err(Error::InvalidInput(format!(
                "horizon must exceed the last time node, got T={horizon}, last node {last}"
            )));
        }
        if space.is_empty() || space.len() > 16 {
            return Err(Error::InvalidInput(format!(
                "need between 1 and 16 space axes, got {}",
                space.len()
            )));
        }
        let d = space.len();
        let spatial: usize = space.iter().map(Axis::len).product();
        let data = vec![0.0; (d + 1) * time_nodes.len() * spatial];
        Ok(ValueGrid {
            time_nodes,
            space,
            horizon,
            components: d + 1,
            data,
        })
    }

    pub fn dim(&self) -> usize {
        self.space.len()
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn time_nodes(&self) -> &[f64] {
        &self.time_nodes
    }

    pub fn space_axes(&self) -> &[Axis] {
        &self.space
    }

    /// Terminal time T; strictly beyond every represented time node.
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// T minus the last represented time node.
    pub fn delta_t(&self) -> f64 {
        self.horizon - self.time_nodes.last().unwrap()
    }

    pub fn spatial_len(&self) -> usize {
        self.space.iter().map(Axis::len).product()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn assert_finite(&self) -> Result<()> {
        if let Some(pos) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "grid holds a non-finite value at flat index {pos}"
            )));
        }
        Ok(())
    }

    fn spatial_strides(&self) -> Vec<usize> {
        let mut strides = vec![0usize; self.space.len()];
        let mut acc = 1usize;
        for (k, axis) in self.space.iter().enumerate().rev() {
            strides[k] = acc;
            acc *= axis.len();
        }
        strides
    }

    pub fn flat_index(&self, component: usize, time_idx: usize, space_idx: &[usize]) -> usize {
        let strides = self.spatial_strides();
        let spatial: usize = space_idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        (component * self.time_nodes.len() + time_idx) * self.spatial_len() + spatial
    }

    pub fn get(&self, component: usize, time_idx: usize, space_idx: &[usize]) -> f64 {
        self.data[self.flat_index(component, time_idx, space_idx)]
    }

    pub fn set(&mut self, component: usize, time_idx: usize, space_idx: &[usize], v: f64) {
        let i = self.flat_index(component, time_idx, space_idx);
        self.data[i] = v;
    }

    /// Enumerates spatial multi-indices in storage order.
    pub fn spatial_indices(&self) -> SpatialIndexIter {
        SpatialIndexIter {
            sizes: self.space.iter().map(Axis::len).collect(),
            current: vec![0; self.space.len()],
            started: false,
            done: false,
        }
    }

    pub fn spatial_point(&self, space_idx: &[usize], out: &mut [f64]) {
        for ((axis, &i), o) in self.space.iter().zip(space_idx).zip(out.iter_mut()) {
            *o = axis.point(i);
        }
    }

    /// Interpolated read of all d+1 components. Errors when t falls outside
    /// the represented time range; above the last node the caller must use
    /// the terminal condition instead of this grid.
    pub fn evaluate(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        let first = self.time_nodes[0];
        let last = *self.time_nodes.last().unwrap();
        let tol = 1e-12 * (1.0 + t.abs());
        if t > last + tol || t < first - tol {
            return Err(Error::OutOfRange(format!(
                "t={t} outside the represented time range [{first}, {last}]"
            )));
        }
        self.evaluate_clamped(t, x, out);
        Ok(())
    }

    /// Interpolated read with t clamped into the represented range; the
    /// solver's deliberate terminal-window policy.
    pub fn evaluate_clamped(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let (ti, tf) = self.locate_time(t);
        self.evaluate_at_time_cell(ti, tf, x, out);
    }

    /// The time cell [`evaluate_at_time_cell`](Self::evaluate_at_time_cell)
    /// expects; hoistable out of loops over queries sharing one t.
    pub fn time_cell(&self, t: f64) -> (usize, f64) {
        self.locate_time(t)
    }

    /// [`evaluate_clamped`](Self::evaluate_clamped) with the time lookup
    /// already done.
    pub fn evaluate_at_time_cell(&self, ti: usize, tf: f64, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.space.len());
        debug_assert_eq!(out.len(), self.components);
        let nt = self.time_nodes.len();
        let d = self.space.len();
        let mut cell = [0usize; 16];
        let mut frac = [0.0f64; 16];
        for k in 0..d {
            let (i, f) = self.space[k].locate(x[k]);
            cell[k] = i;
            frac[k] = f;
        }
        // stack strides; this runs per quadrature evaluation
        let mut strides = [0usize; 16];
        let mut acc = 1usize;
        for k in (0..d).rev() {
            strides[k] = acc;
            acc *= self.space[k].len();
        }
        let spatial_len = self.spatial_len();
        // direct fetch when the query sits on a stored node, so node reads
        // return stored values bit-exact (interpolating would lose -0.0)
        let on_space_node = frac[..d].iter().all(|f| *f == 0.0 || *f == 1.0);
        if on_space_node && (nt == 1 || tf == 0.0 || tf == 1.0) {
            let mut offset = 0usize;
            for k in 0..d {
                offset += (cell[k] + usize::from(frac[k] == 1.0)) * strides[k];
            }
            let ti_eff = if nt > 1 && tf == 1.0 { ti + 1 } else { ti };
            for (c, o) in out.iter_mut().enumerate() {
                *o = self.data[(c * nt + ti_eff) * spatial_len + offset];
            }
            return;
        }
        let corners = 1usize << d;
        for (c, o) in out.iter_mut().enumerate() {
            let mut acc_lo = 0.0;
            let mut acc_hi = 0.0;
            for corner in 0..corners {
                let mut w = 1.0;
                let mut offset = 0usize;
                for k in 0..d {
                    if corner >> k & 1 == 1 {
                        w *= frac[k];
                        offset += (cell[k] + 1) * strides[k];
                    } else {
                        w *= 1.0 - frac[k];
                        offset += cell[k] * strides[k];
                    }
                }
                let base_lo = (c * nt + ti) * spatial_len + offset;
                acc_lo += w * self.data[base_lo];
                if nt > 1 && tf > 0.0 {
                    acc_hi += w * self.data[base_lo + spatial_len];
                }
            }
            *o = if nt > 1 && tf > 0.0 {
                acc_lo + tf * (acc_hi - acc_lo)
            } else {
                acc_lo
            };
        }
    }

    fn locate_time(&self, t: f64) -> (usize, f64) {
        let nt = self.time_nodes.len();
        if nt == 1 || t <= self.time_nodes[0] {
            return (0, 0.0);
        }
        if t >= self.time_nodes[nt - 1] {
            return (nt - 2, 1.0);
        }
        let mut lo = 0usize;
        let mut hi = nt - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.time_nodes[mid] <= t {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let tol = 1e-12 * (1.0 + t.abs());
        if (t - self.time_nodes[lo]).abs() <= tol {
            return (lo, 0.0);
        }
        if (t - self.time_nodes[lo + 1]).abs() <= tol {
            return (lo, 1.0);
        }
        let span = self.time_nodes[lo + 1] - self.time_nodes[lo];
        (lo, (t - self.time_nodes[lo]) / span)
    }

    /// Single-component read; convenience over [`evaluate_clamped`](Self::evaluate_clamped).
    pub fn evaluate_component(&self, component: usize, t: f64, x: &[f64]) -> f64 {
        debug_assert!(component < self.components);
        let mut out = vec![0.0; self.components];
        self.evaluate_clamped(t, x, &mut out);
        out[component]
    }

    /// Copies values from `other` at the nodes both grids share; used to
    /// strip solver-side padding. Time nodes must match exactly; every space
    /// node of `self` must be a node of `other`.
    pub fn fill_from_subgrid(&mut self, other: &ValueGrid) -> Result<()> {
        if self.time_nodes != other.time_nodes {
            return Err(Error::GridMismatch(
                "time nodes differ between grids".into(),
            ));
        }
        if self.space.len() != other.space.len() {
            return Err(Error::GridMismatch("space dimensions differ".into()));
        }
        let mut offsets = Vec::with_capacity(self.space.len());
        for (mine, theirs) in self.space.iter().zip(&other.space) {
            let h = theirs.spacing();
            if (mine.spacing() - h).abs() > 1e-9 * h {
                return Err(Error::GridMismatch("axis spacings differ".into()));
            }
            let shift = (mine.lo() - theirs.lo()) / h;
            let k = shift.round() as i64;
            if (shift - k as f64).abs() > 1e-6 || k < 0 {
                return Err(Error::GridMismatch(
                    "axis offset is not a whole number of cells".into(),
                ));
            }
            if k as usize + mine.len() > theirs.len() {
                return Err(Error::GridMismatch("grid does not cover this one".into()));
            }
            offsets.push(k as usize);
        }
        let mut their_idx = vec![0usize; self.space.len()];
        let mut iter = self.spatial_indices();
        let mut mine_idx = Vec::new();
        while let Some(idx) = iter.next_index() {
            mine_idx.clear();
            mine_idx.extend_from_slice(idx);
            for (o, (i, k)) in their_idx.iter_mut().zip(mine_idx.iter().zip(&offsets)) {
                *o = i + k;
            }
            for c in 0..self.components {
                for ti in 0..self.time_nodes.len() {
                    let v = other.get(c, ti, &their_idx);
                    self.set(c, ti, &mine_idx, v);
                }
            }
        }
        Ok(())
    }
}

pub struct SpatialIndexIter {
    sizes: Vec<usize>,
    current: Vec<usize>,
    started: bool,
    done: bool,
}

impl SpatialIndexIter {
    /// Lending iteration over multi-indices in storage order.
    pub fn next_index(&mut self) -> Option<&[usize]> {
        if self.done {
            return None;
        }
        if !self.started {
            self.started = true;
            return Some(&self.current);
        }
        let mut k = self.sizes.len();
        loop {
            if k == 0 {
                self.done = true;
                return None;
            }
            k -= 1;
            self.current[k] += 1;
            if self.current[k] < self.sizes[k] {
                break;
            }
            self.current[k] = 0;
        }
        Some(&self.current)
    }
}

/// CSV form: a header comment with T and delta_T, a column header, then one
/// row per (time, space) node with t, x_1..x_d, v_0..v_d at full precision.
pub fn write_grid_csv<W: Write>(grid: &ValueGrid, mut w: W) -> Result<()> {
    let d = grid.dim();
    writeln!(
        w,
        "# T={} delta_T={}",
        crate::report::fmt_float(grid.horizon()),
        crate::report::fmt_float(grid.delta_t())
    )?;
    let mut header = String::from("t");
    for k in 1..=d {
        header.push_str(&format!(",x_{k}"));
    }
    for c in 0..grid.components() {
        header.push_str(&format!(",v_{c}"));
    }
    writeln!(w, "{header}")?;
    let mut x = vec![0.0; d];
    for (ti, t) in grid.time_nodes().iter().enumerate() {
        let mut iter = grid.spatial_indices();
        while let Some(idx) = iter.next_index() {
            let idx = idx.to_vec();
            grid.spatial_point(&idx, &mut x);
            let mut row = crate::report::fmt_float(*t);
            for xi in &x {
                row.push(',');
                row.push_str(&crate::report::fmt_float(*xi));
            }
            for c in 0..grid.components() {
                row.push(',');
                row.push_str(&crate::report::fmt_float(grid.get(c, ti, &idx)));
            }
            writeln!(w, "{row}")?;
        }
    }
    Ok(())
}

const GRID_MAGIC: &[u8; 8] = b"SFPEGRD1";

/// Binary layout, little-endian throughout: magic "SFPEGRD1"; u32 d; u32
/// n_time; f64 T; f64 delta_T; per space axis f64 lo, f64 hi, u32 n; then
/// n_time f64 time nodes; then the data array exactly as stored
/// (component-major, time next, space axes fastest).
pub fn write_grid_binary<W: Write>(grid: &ValueGrid, mut w: W) -> Result<()> {
    w.write_all(GRID_MAGIC)?;
    w.write_all(&(grid.dim() as u32).to_le_bytes())?;
    w.write_all(&(grid.time_nodes().len() as u32).to_le_bytes())?;
    w.write_all(&grid.horizon().to_le_bytes())?;
    w.write_all(&grid.delta_t().to_le_bytes())?;
    for axis in grid.space_axes() {
        w.write_all(&axis.lo().to_le_bytes())?;
        w.write_all(&axis.hi().to_le_bytes())?;
        w.write_all(&(axis.len() as u32).to_le_bytes())?;
    }
    for t in grid.time_nodes() {
        w.write_all(&t.to_le_bytes())?;
    }
    for v in grid.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_grid_binary<R: BufRead>(mut r: R) -> Result<ValueGrid> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != GRID_MAGIC {
        return Err(Error::InvalidInput("not a grid file (bad magic)".into()));
    }
    let mut u32buf = [0u8; 4];
    let mut f64buf = [0u8; 8];
    r.read_exact(&mut u32buf)?;
    let d = u32::from_le_bytes(u32buf) as usize;
    r.read_exact(&mut u32buf)?;
    let nt = u32::from_le_bytes(u32buf) as usize;
    if d == 0 || d > 16 || nt == 0 {
        return Err(Error::InvalidInput(format!(
            "implausible grid header: d={d}, time nodes={nt}"
        )));
    }
    r.read_exact(&mut f64buf)?;
    let horizon = f64::from_le_bytes(f64buf);
    r.read_exact(&mut f64buf)?;
    let _delta_t = f64::from_le_bytes(f64buf);
    let mut axes = Vec::with_capacity(d);
    for _ in 0..d {
        r.read_exact(&mut f64buf)?;
        let lo = f64::from_le_bytes(f64buf);
        r.read_exact(&mut f64buf)?;
        let hi = f64::from_le_bytes(f64buf);
        r.read_exact(&mut u32buf)?;
        let n = u32::from_le_bytes(u32buf) as usize;
        axes.push(Axis::new(lo, hi, n)?);
    }
    let mut time_nodes = Vec::with_capacity(nt);
    for _ in 0..nt {
        r.read_exact(&mut f64buf)?;
        time_nodes.push(f64::from_le_bytes(f64buf));
    }
    let mut grid = ValueGrid::zeros(time_nodes, axes, horizon)?;
    for i in 0..grid.data().len() {
        r.read_exact(&mut f64buf)?;
        grid.data_mut()[i] = f64::from_le_bytes(f64buf);
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_grid() -> ValueGrid {
        let mut g = ValueGrid::zeros(
            vec![0.0, 0.5, 1.0],
            vec![Axis::new(-1.0, 1.0, 5).unwrap(), Axis::new(0.0, 2.0, 4).unwrap()],
            1.05,
        )
        .unwrap();
        // affine data per component; multilinear interpolation reproduces
        // affine functions exactly
        let mut iter = g.spatial_indices();
        let mut fills = Vec::new();
        while let Some(idx) = iter.next_index() {
            fills.push(idx.to_vec());
        }
        for idx in fills {
            let mut x = vec![0.0; 2];
            g.spatial_point(&idx, &mut x);
            for (ti, t) in [0.0, 0.5, 1.0].iter().enumerate() {
                g.set(0, ti, &idx, 1.0 + 2.0 * t + 3.0 * x[0] - x[1]);
                g.set(1, ti, &idx, -t + 0.5 * x[0] + x[1]);
                g.set(2, ti, &idx, t * x[0]);
            }
        }
        g
    }

    #[test]
    fn node_reads_are_bit_exact() {
        let g = sample_grid();
        let mut out = vec![0.0; 3];
        for ti in 0..3 {
            for i in 0..5 {
                for j in 0..4 {
                    let t = g.time_nodes()[ti];
                    let x = [g.space_axes()[0].point(i), g.space_axes()[1].point(j)];
                    g.evaluate(t, &x, &mut out).unwrap();
                    for c in 0..3 {
                        assert_eq!(
                            out[c].to_bits(),
                            g.get(c, ti, &[i, j]).to_bits(),
                            "node ({ti},{i},{j}) component {c}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn affine_data_is_reproduced_between_nodes() {
        let g = sample_grid();
        let mut out = vec![0.0; 3];
        g.evaluate(0.3, &[0.17, 1.234], &mut out).unwrap();
        assert!((out[0] - (1.0 + 0.6 + 3.0 * 0.17 - 1.234)).abs() < 1e-12);
        assert!((out[1] - (-0.3 + 0.5 * 0.17 + 1.234)).abs() < 1e-12);
        // component 2 is bilinear t*x, exact under tensor interpolation too
        assert!((out[2] - 0.3 * 0.17).abs() < 1e-12);
    }

    #[test]
    fn constant_grids_evaluate_to_the_constant_everywhere() {
        let mut g = ValueGrid::zeros(
            vec![0.0, 1.0],
            vec![Axis::new(0.0, 1.0, 3).unwrap()],
            1.1,
        )
        .unwrap();
        g.data_mut().fill(7.25);
        let mut out = vec![0.0; 2];
        for (t, x) in [(0.0, 0.1), (0.77, 0.99), (1.0, -5.0)] {
            g.evaluate(t, &[x], &mut out).unwrap();
            for v in &out {
                assert!((v - 7.25).abs() < 1e-13, "got {v} at ({t}, {x})");
            }
        }
    }

    #[test]
    fn reads_above_the_last_time_node_error_but_clamped_reads_do_not() {
        let g = sample_grid();
        let mut out = vec![0.0; 3];
        let err = g.evaluate(1.0001, &[0.0, 1.0], &mut out).unwrap_err();
        assert!(matches!(err, Error::OutOfRange(_)));
        assert!(g.evaluate(-0.2, &[0.0, 1.0], &mut out).is_err());
        let mut clamped = vec![0.0; 3];
        g.evaluate_clamped(5.0, &[0.0, 1.0], &mut clamped);
        let mut last = vec![0.0; 3];
        g.evaluate(1.0, &[0.0, 1.0], &mut last).unwrap();
        assert_eq!(clamped, last);
    }

    #[test]
    fn spatial_reads_clamp_at_the_faces() {
        let g = sample_grid();
        let mut far = vec![0.0; 3];
        let mut corner = vec![0.0; 3];
        g.evaluate(1.0, &[9.0, -7.0], &mut far).unwrap();
        g.evaluate(1.0, &[1.0, 0.0], &mut corner).unwrap();
        for (a, b) in far.iter().zip(&corner) {
            assert_eq!(a, b, "far read must equal the clamped corner read");
        }
    }

    #[test]
    fn horizon_metadata_is_validated_and_exposed() {
        let g = sample_grid();
        assert_eq!(g.horizon(), 1.05);
        assert!((g.delta_t() - 0.05).abs() < 1e-12);
        assert!(ValueGrid::zeros(
            vec![0.0, 1.0],
            vec![Axis::new(0.0, 1.0, 2).unwrap()],
            1.0
        )
        .is_err());
    }

    #[test]
    fn finite_check_flags_poisoned_grids() {
        let mut g = sample_grid();
        assert!(g.assert_finite().is_ok());
        let n = g.data().len();
        g.data_mut()[n / 2] = f64::NAN;
        assert!(g.assert_finite().is_err());
    }

    #[test]
    fn padding_preserves_interior_points_and_spacing() {
        let a = Axis::new(-1.0, 1.0, 5).unwrap();
        let p = a.padded(3);
        assert_eq!(p.len(), 11);
        assert!((p.spacing() - a.spacing()).abs() < 1e-15);
        assert!((p.point(3) - a.point(0)).abs() < 1e-12);
        assert!((p.point(7) - a.point(4)).abs() < 1e-12);
    }

    #[test]
    fn subgrid_extraction_recovers_inner_values() {
        let time = vec![0.0, 1.0];
        let big_axis = Axis::new(-2.0, 2.0, 9).unwrap();
        let mut big = ValueGrid::zeros(time.clone(), vec![big_axis], 1.5).unwrap();
        for ti in 0..2 {
            for i in 0..9 {
                let x = big.space_axes()[0].point(i);
                big.set(0, ti, &[i], x * x + ti as f64);
                big.set(1, ti, &[i], -x);
            }
        }
        let small_axis = Axis::new(-1.0, 1.0, 5).unwrap();
        let mut small = ValueGrid::zeros(time, vec![small_axis], 1.5).unwrap();
        small.fill_from_subgrid(&big).unwrap();
        for ti in 0..2 {
            for i in 0..5 {
                let x = small.space_axes()[0].point(i);
                assert!((small.get(0, ti, &[i]) - (x * x + ti as f64)).abs() < 1e-12);
                assert!((small.get(1, ti, &[i]) + x).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let g = sample_grid();
        let mut buf = Vec::new();
        write_grid_binary(&g, &mut buf).unwrap();
        let back = read_grid_binary(std::io::Cursor::new(&buf)).unwrap();
        assert_eq!(g, back);
    }

    #[test]
    fn csv_export_has_header_and_one_row_per_node() {
        let g = sample_grid();
        let mut buf = Vec::new();
        write_grid_csv(&g, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let rows: Vec<&str> = text.lines().collect();
        assert_eq!(rows.len(), 2 + 3 * 5 * 4);
        assert!(rows[0].starts_with("# T="));
        assert!(rows[0].contains("delta_T="));
        assert_eq!(rows[1], "t,x_1,x_2,v_0,v_1,v_2");
    }

    proptest! {
        #[test]
        fn interpolation_is_continuous_across_cell_faces(
            xi in -1.0..1.0f64,
            eta in 0.0..2.0f64,
        ) {
            let g = sample_grid();
            let mut a = vec![0.0; 3];
            let mut b = vec![0.0; 3];
            g.evaluate_clamped(0.25, &[xi, eta], &mut a);
            g.evaluate_clamped(0.25, &[xi + 1e-12, eta], &mut b);
            for (u, v) in a.iter().zip(&b) {
                prop_assert!((u - v).abs() < 1e-9);
            }
        }

        #[test]
        fn clamped_reads_never_exceed_data_range(
            t in -1.0..2.0f64,
            xi in -4.0..4.0f64,
            eta in -4.0..4.0f64,
        ) {
            let g = sample_grid();
            let lo = g.data().iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = g.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut out = vec![0.0; 3];
            g.evaluate_clamped(t, &[xi, eta], &mut out);
            for v in &out {
                prop_assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
            }
        }
    }
}
