//! Two-parameter propagators U(t, s) for u' + A(t)u = 0, built three ways:
//! a fourth-order reference integrator, the frozen-coefficient product, and
//! the fixed-point iteration on the perturbation-of-frozen form. Tables store
//! anchor rows lazily and certify themselves through composition-law defects.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::family::OperatorFamily;
use crate::grid::{TimeGrid, Trajectory};
use crate::linalg::{Matrix, Vector};
use crate::norms;
use crate::sampling;

/// Extra random unit probes appended to the canonical basis when estimating
/// suprema over initial values.
const PROBE_EXTRA: usize = 32;
const PROBE_SEED: u64 = 4242;

/// Cached anchor rows per table; beyond this, the smallest disposable anchor
/// is dropped and rebuilt on demand.
const ROW_CACHE_CAP: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    OdeReference,
    FrozenProduct,
    DuhamelPicard,
}

impl Method {
    pub fn tag(&self) -> &'static str {
        match self {
            Method::OdeReference => "ode-reference",
            Method::FrozenProduct => "frozen-product",
            Method::DuhamelPicard => "duhamel-picard",
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct PicardParams {
    max_iter: usize,
    tol: f64,
}

struct TableState {
    /// anchor index i -> [U(t_i, t_i), U(t_{i+1}, t_i), ...].
    rows: BTreeMap<usize, Arc<Vec<Matrix>>>,
    /// Supremum of op_norm2 over every row materialized so far.
    m_bound: f64,
}

/// Propagator table on a grid. Row i holds U(t_j, t_i) for j >= i; rows are
/// built on first request by the table's own method, so every stored operator
/// has the same provenance. U(t_i, t_i) is the identity exactly.
pub struct EvolutionTable {
    grid: TimeGrid,
    method: Method,
    family: OperatorFamily,
    /// One-step propagators U(t_{k+1}, t_k); construction artifact for the
    /// product methods, exact single-interval fixed points for the Picard
    /// table (built lazily there).
    steps: OnceLock<Vec<Matrix>>,
    state: Mutex<TableState>,
    anchor: usize,
    tolerance: f64,
    picard: Option<PicardParams>,
    iterations: usize,
    defect: f64,
}

impl std::fmt::Debug for EvolutionTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EvolutionTable")
            .field("method", &self.method.tag())
            .field("nodes", &self.grid.len())
            .field("anchor", &self.anchor)
            .field("tolerance", &self.tolerance)
            .finish()
    }
}

impl EvolutionTable {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn family(&self) -> &OperatorFamily {
        &self.family
    }

    /// Index of the anchor this table was built around.
    pub fn anchor(&self) -> usize {
        self.anchor
    }

    /// Method error estimate; composition-law defects are expected to stay
    /// within a small multiple of this.
    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    /// Supremum of op_norm2 over all materialized propagators.
    pub fn bound_m(&self) -> f64 {
        self.state.lock().unwrap().m_bound
    }

    /// Fixed-point sweeps used for the primary anchor (0 for the product
    /// methods, which have no iteration).
    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Final sweep defect of the primary anchor (0 for product methods).
    pub fn defect(&self) -> f64 {
        self.defect
    }

    /// Full anchor row i: U(t_j, t_i) for j = i..=N.
    pub fn row(&self, i: usize) -> Result<Arc<Vec<Matrix>>> {
        if i >= self.grid.len() {
            return Err(Error::Domain {
                msg: format!("anchor index {i} outside grid of {} nodes", self.grid.len()),
            });
        }
        {
            let st = self.state.lock().unwrap();
            if let Some(r) = st.rows.get(&i) {
                return Ok(Arc::clone(r));
            }
        }
        let row = if i == self.grid.len() - 1 {
            vec![Matrix::identity(self.family.dim())]
        } else {
            match self.method {
                Method::OdeReference | Method::FrozenProduct => {
                    accumulate_row(self.steps.get().expect("steps built with table"), i)
                }
                Method::DuhamelPicard => {
                    let p = self.picard.expect("picard table carries params");
                    let tail = self.grid.tail_from(i)?;
                    let (v, _, _) = picard_solve(&self.family, &tail, p.max_iter, p.tol)?;
                    v
                }
            }
        };
        let row = Arc::new(row);
        let mut st = self.state.lock().unwrap();
        for m in row.iter() {
            st.m_bound = st.m_bound.max(m.op_norm2());
        }
        st.rows.insert(i, Arc::clone(&row));
        if st.rows.len() > ROW_CACHE_CAP {
            let evict = st
                .rows
                .keys()
                .copied()
                .find(|k| *k != 0 && *k != self.anchor && *k != i);
            if let Some(k) = evict {
                st.rows.remove(&k);
            }
        }
        Ok(row)
    }

    /// U(t_j, t_i), j >= i.
    pub fn u(&self, j: usize, i: usize) -> Result<Matrix> {
        if j < i || j >= self.grid.len() {
            return Err(Error::Domain {
                msg: format!("propagator indices ({j}, {i}) out of order or range"),
            });
        }
        Ok(self.row(i)?[j - i].clone())
    }

    /// U(t_j, t_i) x.
    pub fn apply(&self, j: usize, i: usize, x: &Vector) -> Result<Vector> {
        Ok(self.row(i)?[j - i].apply(x))
    }

    /// Worst composition defect ||U(t_j,t_i) - U(t_j,t_k) U(t_k,t_i)|| over
    /// seeded random index triples i <= k <= j.
    pub fn cocycle_defect(&self, triples: usize, seed: u64) -> Result<f64> {
        let n = self.grid.len();
        let mut rng = sampling::seeded_rng(seed);
        let mut worst = 0.0f64;
        for _ in 0..triples {
            let i = (sampling::uniform(&mut rng) * n as f64) as usize % n;
            let k = i + (sampling::uniform(&mut rng) * (n - i) as f64) as usize % (n - i);
            let j = k + (sampling::uniform(&mut rng) * (n - k) as f64) as usize % (n - k);
            let direct = self.u(j, i)?;
            let composed = &self.u(j, k)? * &self.u(k, i)?;
            worst = worst.max((&direct - &composed).op_norm2());
        }
        Ok(worst)
    }

    /// Per-node operator norms of anchor row i: rows `t, norm_U_t_s`.
    pub fn row_norms(&self, i: usize) -> Result<Vec<(f64, f64)>> {
        let row = self.row(i)?;
        Ok(self
            .grid
            .nodes()
            .iter()
            .skip(i)
            .zip(row.iter())
            .map(|(t, m)| (*t, m.op_norm2()))
            .collect())
    }

    /// One-step propagators, building them on first use for Picard tables.
    fn steps(&self) -> Result<&Vec<Matrix>> {
        if let Some(s) = self.steps.get() {
            return Ok(s);
        }
        // Only the Picard path can be unfilled: exact single-interval fixed
        // points V = (I - (h/2) G)^{-1} E, E = e^{-h A(t_k)}, G = A(t_k) - A(t_{k+1}).
        let mut steps = Vec::with_capacity(self.grid.n_steps());
        for k in 0..self.grid.n_steps() {
            let (t0, t1) = (self.grid.nodes()[k], self.grid.nodes()[k + 1]);
            let h = t1 - t0;
            let a0 = self.family.eval(t0);
            let e = a0.expm(-h)?;
            let g = &a0 - &self.family.eval(t1);
            let lhs = &Matrix::identity(g.n()) - &g.scale(0.5 * h);
            let mut cols = Vec::with_capacity(g.n());
            for c in 0..g.n() {
                let col = Vector::from_fn(g.n(), |r, _| e.get(r, c));
                cols.push(lhs.solve(&col)?);
            }
            let v = Matrix::from_fn(g.n(), |r, c| cols[c][r])?;
            steps.push(v);
        }
        let _ = self.steps.set(steps);
        Ok(self.steps.get().unwrap())
    }
}

fn accumulate_row(steps: &[Matrix], i: usize) -> Vec<Matrix> {
    let n = steps.first().map(|m| m.n()).unwrap_or(1);
    let mut row = Vec::with_capacity(steps.len() + 1 - i);
    row.push(Matrix::identity(n));
    for s in &steps[i..] {
        let next = s * row.last().unwrap();
        row.push(next);
    }
    row
}

fn table_from_steps(
    f: &OperatorFamily,
    grid: &TimeGrid,
    method: Method,
    steps: Vec<Matrix>,
    tolerance: f64,
) -> EvolutionTable {
    let row0 = Arc::new(accumulate_row(&steps, 0));
    let m_bound = row0.iter().map(|m| m.op_norm2()).fold(0.0, f64::max);
    let mut rows = BTreeMap::new();
    rows.insert(0usize, row0);
    let cell = OnceLock::new();
    let _ = cell.set(steps);
    EvolutionTable {
        grid: grid.clone(),
        method,
        family: f.clone(),
        steps: cell,
        state: Mutex::new(TableState { rows, m_bound }),
        anchor: 0,
        tolerance,
        picard: None,
        iterations: 0,
        defect: 0.0,
    }
}

/// One fourth-order step of U' = -A(t) U from the identity over [t, t+h].
fn rk4_step(f: &OperatorFamily, t: f64, h: f64) -> Matrix {
    let id = Matrix::identity(f.dim());
    let a0 = f.eval(t);
    let am = f.eval(t + 0.5 * h);
    let a1 = f.eval(t + h);
    let k1 = a0.scale(-1.0);
    let k2 = (&am * &(&id + &k1.scale(0.5 * h))).scale(-1.0);
    let k3 = (&am * &(&id + &k2.scale(0.5 * h))).scale(-1.0);
    let k4 = (&a1 * &(&id + &k3.scale(h))).scale(-1.0);
    &id + &(&(&k1 + &k4) + &(&k2 + &k3).scale(2.0)).scale(h / 6.0)
}

/// Reference propagator: per-interval fourth-order steps, each checked by a
/// halved substep; the summed extrapolation gap becomes the table tolerance.
/// Requires max_step * sup||A|| <= 0.5 so the scheme stays in its stability
/// region with margin.
pub fn propagate_reference(f: &OperatorFamily, grid: &TimeGrid) -> Result<EvolutionTable> {
    let sup = f.sup_op_norm();
    if grid.max_step() * sup > 0.5 {
        return Err(Error::StepSizeViolation {
            step: grid.max_step(),
            sup_norm: sup,
        });
    }
    let per_step: Vec<(Matrix, f64)> = (0..grid.n_steps())
        .into_par_iter()
        .map(|k| {
            let t = grid.nodes()[k];
            let h = grid.step(k);
            let full = rk4_step(f, t, h);
            let half = &rk4_step(f, t + 0.5 * h, 0.5 * h) * &rk4_step(f, t, 0.5 * h);
            let err = (&full - &half).op_norm2() / 15.0;
            (half, err)
        })
        .collect();
    let sum_err: f64 = per_step.iter().map(|p| p.1).sum();
    let steps: Vec<Matrix> = per_step.into_iter().map(|p| p.0).collect();
    let mut table = table_from_steps(f, grid, Method::OdeReference, steps, 0.0);
    let m = table.bound_m().max(1.0);
    table.tolerance = (sum_err * m * m).max(1e-15);
    Ok(table)
}

/// First-order product of frozen-coefficient exponentials,
/// U(t_j, t_i) = prod_k e^{-(t_{k+1}-t_k) A(t_k)}. Tolerance comes from
/// comparing against the same product on the half-resolution grid.
pub fn propagate_frozen_product(f: &OperatorFamily, grid: &TimeGrid) -> Result<EvolutionTable> {
    let steps = frozen_steps(f, grid)?;
    let mut table = table_from_steps(f, grid, Method::FrozenProduct, steps, 0.0);
    table.tolerance = match grid.thin_by_two() {
        Some(coarse) => {
            let csteps = frozen_steps(f, &coarse)?;
            let crow = accumulate_row(&csteps, 0);
            let frow = table.row(0)?;
            let diff = crow
                .iter()
                .enumerate()
                .map(|(j, m)| (&frow[2 * j] - m).op_norm2())
                .fold(0.0, f64::max);
            (1.5 * diff).max(1e-15)
        }
        None => {
            // Odd or tiny grids: first-order bound from the family's total
            // variation across the grid.
            let tv: f64 = (0..grid.n_steps())
                .map(|k| {
                    (&f.eval(grid.nodes()[k + 1]) - &f.eval(grid.nodes()[k])).op_norm2()
                })
                .sum();
            let m = table.bound_m().max(1.0);
            (grid.max_step() * tv * m * m).max(1e-15)
        }
    };
    Ok(table)
}

fn frozen_steps(f: &OperatorFamily, grid: &TimeGrid) -> Result<Vec<Matrix>> {
    (0..grid.n_steps())
        .into_par_iter()
        .map(|k| f.eval(grid.nodes()[k]).expm(-grid.step(k)))
        .collect()
}

/// e^{-(t_k - t_0) A} along the grid by stepwise products, reusing the
/// per-step exponential when the spacing repeats.
pub fn frozen_curve(a: &Matrix, grid: &TimeGrid) -> Result<Vec<Matrix>> {
    let mut out = Vec::with_capacity(grid.len());
    out.push(Matrix::identity(a.n()));
    let mut cache: Option<(f64, Matrix)> = None;
    for k in 0..grid.n_steps() {
        let h = grid.step(k);
        let e = match &cache {
            Some((hc, m)) if *hc == h => m.clone(),
            _ => {
                let m = a.expm(-h)?;
                cache = Some((h, m.clone()));
                m
            }
        };
        let next = &e * out.last().unwrap();
        out.push(next);
    }
    Ok(out)
}

/// Fixed-point sweeps for V(t) = e^{-(t-s)A(s)} + int_s^t e^{-(t-r)A(s)}
/// (A(s) - A(r)) V(r) dr on the grid, anchored at the grid start. The
/// convolution at node j reuses the node j-1 partial sum, one shift by the
/// per-step exponential plus two weighted products, so a sweep costs O(N)
/// matrix products. Returns (V, sweeps, final defect in Frobenius norm).
fn picard_solve(
    f: &OperatorFamily,
    grid: &TimeGrid,
    max_iter: usize,
    tol: f64,
) -> Result<(Vec<Matrix>, usize, f64)> {
    let s = grid.start();
    let a_s = f.eval(s);
    let n = a_s.n();
    let b = frozen_curve(&a_s, grid)?;
    let nn = grid.n_steps();

    let mut es: Vec<Matrix> = Vec::with_capacity(nn);
    let mut cache: Option<(f64, Matrix)> = None;
    for k in 0..nn {
        let h = grid.step(k);
        let e = match &cache {
            Some((hc, m)) if *hc == h => m.clone(),
            _ => {
                let m = a_s.expm(-h)?;
                cache = Some((h, m.clone()));
                m
            }
        };
        es.push(e);
    }
    let g: Vec<Matrix> = grid
        .nodes()
        .iter()
        .map(|&r| &a_s - &f.eval(r))
        .collect();

    let mut v = b.clone();
    let mut defect = f64::INFINITY;
    for sweep in 1..=max_iter {
        let mut v_new = Vec::with_capacity(grid.len());
        v_new.push(b[0].clone());
        let mut s_mat = Matrix::zeros(n);
        for j in 1..grid.len() {
            let h = grid.step(j - 1);
            let inner = &s_mat + &(&g[j - 1] * &v[j - 1]).scale(0.5 * h);
            s_mat = &(&es[j - 1] * &inner) + &(&g[j] * &v[j]).scale(0.5 * h);
            v_new.push(&b[j] + &s_mat);
        }
        defect = v
            .iter()
            .zip(&v_new)
            .map(|(a, bq)| (a - bq).fro_norm())
            .fold(0.0, f64::max);
        v = v_new;
        if defect <= tol {
            return Ok((v, sweep, defect));
        }
    }
    Err(Error::PicardDiverged {
        defect,
        iters: max_iter,
    })
}

/// Picard-constructed table anchored at grid node s. Non-convergence within
/// `max_iter` sweeps is an error carrying the last defect; the tolerance
/// combines the fixed-point defect with a half-resolution quadrature probe.
pub fn duhamel_picard(
    f: &OperatorFamily,
    grid: &TimeGrid,
    s: f64,
    max_iter: usize,
    tol: f64,
) -> Result<EvolutionTable> {
    if !(tol > 0.0) {
        return Err(Error::BadExponent {
            what: "picard tolerance",
            value: tol,
        });
    }
    let anchor = grid.node_index(s).ok_or_else(|| Error::Domain {
        msg: format!("picard anchor {s} is not a grid node"),
    })?;
    let tail = grid.tail_from(anchor)?;
    let (v, iters, defect) = picard_solve(f, &tail, max_iter, tol)?;

    let quad_gap = match tail.thin_by_two() {
        Some(coarse) => {
            let (vc, _, _) = picard_solve(f, &coarse, max_iter, tol)?;
            let diff = vc
                .iter()
                .enumerate()
                .map(|(j, m)| (&v[2 * j] - m).fro_norm())
                .fold(0.0, f64::max);
            diff / 3.0
        }
        None => {
            let sup = f.sup_op_norm();
            tail.max_step().powi(2) * sup * sup * tail.span()
        }
    };
    let m_bound = v.iter().map(|m| m.op_norm2()).fold(0.0, f64::max);
    let row = Arc::new(v);
    let mut rows = BTreeMap::new();
    rows.insert(anchor, row);
    Ok(EvolutionTable {
        grid: grid.clone(),
        method: Method::DuhamelPicard,
        family: f.clone(),
        steps: OnceLock::new(),
        state: Mutex::new(TableState { rows, m_bound }),
        anchor,
        tolerance: (defect.max(quad_gap)).max(1e-15),
        picard: Some(PicardParams { max_iter, tol }),
        iterations: iters,
        defect,
    })
}

/// Supremum over probe initial values of the regularity norm of
/// U(., s)x - e^{-(.-s)A(s)}x on [s, tau]. Probes are the canonical basis
/// plus seeded random unit vectors, so reruns agree bit for bit.
pub fn deviation_mr_norm(table: &EvolutionTable, s: f64, p: f64) -> Result<f64> {
    let probes = sampling::probe_vectors(table.family().dim(), PROBE_EXTRA, PROBE_SEED);
    let vals = deviation_mr_norms(table, s, p, &probes)?;
    Ok(vals.into_iter().fold(0.0, f64::max))
}

/// Per-vector version of `deviation_mr_norm`: one regularity norm per entry
/// of `xs`, in order.
pub fn deviation_mr_norms(
    table: &EvolutionTable,
    s: f64,
    p: f64,
    xs: &[Vector],
) -> Result<Vec<f64>> {
    let i = table.grid().node_index(s).ok_or_else(|| Error::Domain {
        msg: format!("deviation anchor {s} is not a grid node"),
    })?;
    let tail = table.grid().tail_from(i)?;
    let row = table.row(i)?;
    let frozen = frozen_curve(&table.family().eval(s), &tail)?;
    let dn = table.family().dnorm();
    Ok(xs
        .par_iter()
        .map(|x| {
            let states: Vec<Vector> = row
                .iter()
                .zip(frozen.iter())
                .map(|(u, e)| &u.apply(x) - &e.apply(x))
                .collect();
            let traj = Trajectory::new(tail.clone(), states).expect("matched lengths");
            norms::mr_norm(&traj, dn, p).total
        })
        .collect())
}

/// Inhomogeneous solve by superposition: the table's own U(., 0) carries the
/// initial value, and the forcing convolution composes one-step propagators
/// with the grid's trapezoid weights (partial sums in ascending j).
pub struct VocSolution {
    pub trajectory: Trajectory,
    /// max over interior nodes of || du + A u - f || by centered differences;
    /// expected O(step^2) for smooth data.
    pub residual: f64,
}

pub fn solve_inhomogeneous_voc(
    table: &EvolutionTable,
    x0: &Vector,
    forcing: impl Fn(f64) -> Vector,
) -> Result<VocSolution> {
    let grid = table.grid().clone();
    let n = table.family().dim();
    if x0.len() != n {
        return Err(Error::DimensionMismatch {
            left: x0.len(),
            right: n,
        });
    }
    let fs: Vec<Vector> = grid.nodes().iter().map(|&t| forcing(t)).collect();
    for (k, fv) in fs.iter().enumerate() {
        if fv.len() != n || !fv.iter().all(|v| v.is_finite()) {
            return Err(Error::Domain {
                msg: format!("forcing at node {k} is non-finite or mis-sized"),
            });
        }
    }
    let row0 = table.row(0)?;
    let steps = table.steps()?;
    let mut states = Vec::with_capacity(grid.len());
    states.push(row0[0].apply(x0) );
    let mut w = Vector::zeros(n);
    for j in 1..grid.len() {
        let h = grid.step(j - 1);
        let carried = &w + &fs[j - 1].scale(0.5 * h);
        w = &steps[j - 1].apply(&carried) + &fs[j].scale(0.5 * h);
        states.push(&row0[j].apply(x0) + &w);
    }
    let traj = Trajectory::new(grid.clone(), states)?;
    let du = traj.derivative();
    let mut residual = 0.0f64;
    for j in 1..grid.len().saturating_sub(1) {
        let t = grid.nodes()[j];
        let r = &(&du[j] + &table.family().eval(t).apply(&traj.states[j])) - &fs[j];
        residual = residual.max(r.norm());
    }
    Ok(VocSolution {
        trajectory: traj,
        residual,
    })
}

/// Empirical bound for the weighted homogeneous trajectory v(t) = t U(t,0)x.
#[derive(Clone, Copy, Debug)]
pub struct HomogeneousMrReport {
    /// sup over probe x of ||t -> t U(t,0)x||_{MR_q} / ||x||.
    pub m_emp: f64,
    /// Defect of v' + A(t)v = U(t,0)x at interior nodes (worst probe).
    pub ode_residual: f64,
}

pub fn homogeneous_mr_estimate(table: &EvolutionTable, q: f64) -> Result<HomogeneousMrReport> {
    let grid = table.grid().clone();
    let row0 = table.row(0)?;
    let dn = table.family().dnorm();
    let probes = sampling::probe_vectors(table.family().dim(), PROBE_EXTRA, PROBE_SEED);
    let per_probe: Vec<(f64, f64)> = probes
        .par_iter()
        .map(|x| {
            let states: Vec<Vector> = grid
                .nodes()
                .iter()
                .zip(row0.iter())
                .map(|(&t, u)| u.apply(x).scale(t))
                .collect();
            let traj = Trajectory::new(grid.clone(), states).expect("matched lengths");
            let m = norms::mr_norm(&traj, dn, q).total;
            let du = traj.derivative();
            let mut res = 0.0f64;
            for j in 1..grid.len().saturating_sub(1) {
                let t = grid.nodes()[j];
                let rhs = row0[j].apply(x);
                let r = &(&du[j] + &table.family().eval(t).apply(&traj.states[j])) - &rhs;
                res = res.max(r.norm());
            }
            (m, res)
        })
        .collect();
    Ok(HomogeneousMrReport {
        m_emp: per_probe.iter().map(|p| p.0).fold(0.0, f64::max),
        ode_residual: per_probe.iter().map(|p| p.1).fold(0.0, f64::max),
    })
}
