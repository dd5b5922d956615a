//! Time grids with trapezoid weights, node trajectories, and the small
//! quadrature helpers the norm and report code share.

use crate::error::{Error, Result};
use crate::linalg::Vector;

/// Strictly increasing partition of [start, end] carrying trapezoid weights.
/// The weights always sum to the span, so discrete L^p norms over the grid
/// are plain weighted sums.
#[derive(Clone, Debug)]
pub struct TimeGrid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl TimeGrid {
    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::EmptyInput { what: "time grid" });
        }
        for (i, w) in nodes.windows(2).enumerate() {
            if !(w[1] > w[0]) || !w[0].is_finite() || !w[1].is_finite() {
                return Err(Error::NonIncreasingGrid { index: i + 1 });
            }
        }
        let m = nodes.len();
        let mut weights = vec![0.0; m];
        for i in 0..m - 1 {
            let h = nodes[i + 1] - nodes[i];
            weights[i] += 0.5 * h;
            weights[i + 1] += 0.5 * h;
        }
        let span = nodes[m - 1] - nodes[0];
        let wsum: f64 = weights.iter().sum();
        debug_assert!(
            (wsum - span).abs() <= 1e-12 * span.abs().max(1.0),
            "trapezoid weights drifted: {wsum} vs {span}"
        );
        Ok(TimeGrid { nodes, weights })
    }

    /// Uniform grid with `n_steps` intervals on [start, end].
    pub fn uniform(start: f64, end: f64, n_steps: usize) -> Result<Self> {
        if !(end > start) || !start.is_finite() || !end.is_finite() {
            return Err(Error::BadHorizon { value: end - start });
        }
        if n_steps == 0 {
            return Err(Error::EmptyInput { what: "time grid" });
        }
        let h = (end - start) / n_steps as f64;
        let mut nodes: Vec<f64> = (0..=n_steps).map(|i| start + h * i as f64).collect();
        // Pin the endpoint so spans and horizons compare exactly.
        *nodes.last_mut().unwrap() = end;
        Self::from_nodes(nodes)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn n_steps(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn start(&self) -> f64 {
        self.nodes[0]
    }

    pub fn end(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    pub fn span(&self) -> f64 {
        self.end() - self.start()
    }

    pub fn step(&self, i: usize) -> f64 {
        self.nodes[i + 1] - self.nodes[i]
    }

    pub fn max_step(&self) -> f64 {
        (0..self.n_steps())
            .map(|i| self.step(i))
            .fold(0.0, f64::max)
    }

    /// Grid on [nodes[i], end] reusing the tail nodes.
    pub fn tail_from(&self, i: usize) -> Result<Self> {
        Self::from_nodes(self.nodes[i..].to_vec())
    }

    /// Every other node, for coarse-versus-fine error estimates.
    pub fn thin_by_two(&self) -> Option<Self> {
        if self.n_steps() < 2 || self.n_steps() % 2 != 0 {
            return None;
        }
        let nodes: Vec<f64> = self.nodes.iter().step_by(2).copied().collect();
        Self::from_nodes(nodes).ok()
    }

    /// Index of the node matching `t` up to an absolute slack of
    /// 1e-9 * max(1, span): grids are built from exact node values, so
    /// anything further off is a caller error, not roundoff.
    pub fn node_index(&self, t: f64) -> Option<usize> {
        let tol = 1e-9 * self.span().max(1.0);
        self.nodes.iter().position(|x| (x - t).abs() <= tol)
    }

    /// Weighted p-sum over nodes: (sum_j w_j v_j^p)^{1/p} for v_j >= 0.
    pub fn weighted_lp(&self, values: &[f64], p: f64) -> f64 {
        let s: f64 = self
            .weights
            .iter()
            .zip(values)
            .map(|(w, v)| w * v.powf(p))
            .sum();
        s.powf(1.0 / p)
    }
}

/// Vector-valued states sampled on a grid's nodes.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub states: Vec<Vector>,
}

impl Trajectory {
    pub fn new(grid: TimeGrid, states: Vec<Vector>) -> Result<Self> {
        if states.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                left: states.len(),
                right: grid.len(),
            });
        }
        Ok(Trajectory { grid, states })
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    /// Node derivative by centered differences, one-sided at the endpoints.
    pub fn derivative(&self) -> Vec<Vector> {
        let n = self.states.len();
        let t = self.grid.nodes();
        let mut out = Vec::with_capacity(n);
        for j in 0..n {
            let d = if j == 0 {
                (&self.states[1] - &self.states[0]) / (t[1] - t[0])
            } else if j == n - 1 {
                (&self.states[n - 1] - &self.states[n - 2]) / (t[n - 1] - t[n - 2])
            } else {
                (&self.states[j + 1] - &self.states[j - 1]) / (t[j + 1] - t[j - 1])
            };
            out.push(d);
        }
        out
    }
}

/// `count` points log-spaced over [lo, hi], inclusive.
pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0) || !(hi > lo) {
        return Err(Error::BadHorizon { value: hi - lo });
    }
    if count < 2 {
        return Err(Error::EmptyInput { what: "log grid" });
    }
    let (a, b) = (lo.ln(), hi.ln());
    let mut pts: Vec<f64> = (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect();
    pts[0] = lo;
    *pts.last_mut().unwrap() = hi;
    Ok(pts)
}

/// Trapezoid integral of samples (xs ascending).
pub fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}
