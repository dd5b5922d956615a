//! Time-dependent operator families t -> A(t) on [0, tau], the fixed
//! reference norm they are measured against, and the regularity diagnostics
//! for the map itself: the relative continuity modulus, its Dini-type
//! integral with divergence detection, and the frozen-kernel bound fit.

use std::io::Read;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::log_spaced;
use crate::linalg::{spd_eig, Matrix, SpectralDecomposition, Vector};

/// How a family was constructed; reports carry this tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FamilyKind {
    ScalarAnalytic,
    SampledInterpolated,
    PdeBuilt,
}

impl FamilyKind {
    pub fn tag(&self) -> &'static str {
        match self {
            FamilyKind::ScalarAnalytic => "scalar-analytic",
            FamilyKind::SampledInterpolated => "sampled-interpolated",
            FamilyKind::PdeBuilt => "pde-built",
        }
    }
}

/// Norm data derived from the fixed reference operator: ||x||_D = ||(I+R)x||_2,
/// operator norms measured into that scale via (I+R)^{-1}, and the spectral
/// data reused by the interpolation functionals.
#[derive(Clone, Debug)]
pub struct DNorm {
    i_plus: Matrix,
    i_plus_inv: Matrix,
    eig: SpectralDecomposition,
}

impl DNorm {
    /// `ref_op` must be symmetric positive semidefinite.
    pub fn new(ref_op: &Matrix) -> Result<Self> {
        let eig = spd_eig(ref_op)?;
        let min_eig = eig.eigenvalues()[0];
        let scale = ref_op.max_abs().max(1.0);
        if min_eig < -1e-10 * scale {
            return Err(Error::NotSpd { min_eig });
        }
        let i_plus = ref_op.add_scaled_identity(1.0);
        let i_plus_inv = eig.map_eigenvalues(|lam| 1.0 / (1.0 + lam))?;
        Ok(DNorm {
            i_plus,
            i_plus_inv,
            eig,
        })
    }

    pub fn dim(&self) -> usize {
        self.i_plus.n()
    }

    /// ||x||_D. Always >= ||x||_2 since the reference is positive semidefinite.
    pub fn norm(&self, x: &Vector) -> f64 {
        self.i_plus.apply(x).norm()
    }

    /// Operator norm of M as a map from the D scale into plain l2:
    /// op_norm2(M (I+R)^{-1}).
    pub fn ld_norm(&self, m: &Matrix) -> f64 {
        (m * &self.i_plus_inv).op_norm2()
    }

    /// Same measurement for a rectangular block (observation rows).
    pub fn ld_norm_rect(&self, c: &nalgebra::DMatrix<f64>) -> f64 {
        let prod = c * self.i_plus_inv.as_dmatrix();
        nalgebra::linalg::SVD::try_new(prod, false, false, f64::EPSILON, 0)
            .map(|svd| svd.singular_values.iter().fold(0.0f64, |m, v| m.max(*v)))
            .unwrap_or(f64::NAN)
    }

    pub fn i_plus(&self) -> &Matrix {
        &self.i_plus
    }

    pub fn i_plus_inv(&self) -> &Matrix {
        &self.i_plus_inv
    }

    /// Spectral data of the reference operator, eigenvalues ascending.
    pub fn eig(&self) -> &SpectralDecomposition {
        &self.eig
    }

    /// 1 + mu_i for the reference eigenvalues, ascending.
    pub fn betas(&self) -> Vec<f64> {
        self.eig.eigenvalues().iter().map(|mu| 1.0 + mu).collect()
    }
}

pub type EvalFn = Arc<dyn Fn(f64) -> Matrix + Send + Sync>;

/// t -> A(t) on [0, tau] with a fixed reference operator and a construction
/// tag. Evaluation is pure; shifts A -> A + r I stack on top and are recorded.
#[derive(Clone)]
pub struct OperatorFamily {
    tau: f64,
    dim: usize,
    kind: FamilyKind,
    shift: f64,
    eval_fn: EvalFn,
    dnorm: Arc<DNorm>,
}

impl std::fmt::Debug for OperatorFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OperatorFamily")
            .field("tau", &self.tau)
            .field("dim", &self.dim)
            .field("kind", &self.kind.tag())
            .field("shift", &self.shift)
            .finish()
    }
}

impl OperatorFamily {
    /// Builds and validates: positive horizon, reference admissible for the
    /// D norm, and finite square evaluations on a 64-point scan of [0, tau].
    pub fn new(tau: f64, kind: FamilyKind, ref_op: Matrix, eval_fn: EvalFn) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::BadHorizon { value: tau });
        }
        let dim = ref_op.n();
        let dnorm = Arc::new(DNorm::new(&ref_op)?);
        let fam = OperatorFamily {
            tau,
            dim,
            kind,
            shift: 0.0,
            eval_fn,
            dnorm,
        };
        for i in 0..64 {
            let t = tau * i as f64 / 63.0;
            let a = (fam.eval_fn)(t);
            if a.n() != dim || !a.max_abs().is_finite() {
                return Err(Error::BadFamilyEval { t });
            }
        }
        Ok(fam)
    }

    /// Constant family t -> A. The reference defaults to the symmetric part
    /// of A, which must be positive semidefinite.
    pub fn autonomous(a: Matrix, tau: f64) -> Result<Self> {
        let ref_op = a.symmetric_part();
        let eval: EvalFn = Arc::new(move |_| a.clone());
        Self::new(tau, FamilyKind::ScalarAnalytic, ref_op, eval)
    }

    /// Same family with a different reference operator for the D norm.
    pub fn with_ref_op(self, ref_op: Matrix) -> Result<Self> {
        Self::new(self.tau, self.kind, ref_op, self.eval_fn).map(|f| OperatorFamily {
            shift: self.shift,
            ..f
        })
    }

    pub fn eval(&self, t: f64) -> Matrix {
        let a = (self.eval_fn)(t);
        if self.shift == 0.0 {
            a
        } else {
            a.add_scaled_identity(self.shift)
        }
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> FamilyKind {
        self.kind
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn dnorm(&self) -> &DNorm {
        &self.dnorm
    }

    pub fn dnorm_arc(&self) -> Arc<DNorm> {
        Arc::clone(&self.dnorm)
    }

    /// A -> A + r I. The D norm keeps its reference; the shift is recorded
    /// and visible through `shift()`.
    pub fn shifted(&self, r: f64) -> OperatorFamily {
        let mut f = self.clone();
        f.shift += r;
        f
    }

    /// sup over a 64-point grid of op_norm2(A(t)), the scale used by
    /// step-size checks.
    pub fn sup_op_norm(&self) -> f64 {
        (0..64)
            .map(|i| self.eval(self.tau * i as f64 / 63.0).op_norm2())
            .fold(0.0, f64::max)
    }

    /// Constant family pinned to the value at `t`, keeping the D norm and
    /// horizon. Any shift is baked into the stored matrix.
    pub fn frozen_at(&self, t: f64) -> OperatorFamily {
        let a = self.eval(t);
        OperatorFamily {
            tau: self.tau,
            dim: self.dim,
            kind: self.kind,
            shift: 0.0,
            eval_fn: Arc::new(move |_| a.clone()),
            dnorm: Arc::clone(&self.dnorm),
        }
    }
}

// ── Scalar profiles ──────────────────────────────────────────────────────────

/// Closed-form scalar coefficient profiles a(t); the family is a(t) times the
/// one-dimensional identity unless lifted elsewhere.
#[derive(Clone, Debug, PartialEq)]
pub enum ScalarProfile {
    Constant { a0: f64 },
    Affine { a0: f64, rate: f64 },
    Hoelder { a0: f64, amplitude: f64, alpha: f64 },
    Jump { lo: f64, hi: f64, at: f64 },
}

impl ScalarProfile {
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            ScalarProfile::Constant { a0 } => a0,
            ScalarProfile::Affine { a0, rate } => a0 + rate * t,
            ScalarProfile::Hoelder {
                a0,
                amplitude,
                alpha,
            } => a0 + amplitude * t.max(0.0).powf(alpha),
            ScalarProfile::Jump { lo, hi, at } => {
                if t < at {
                    lo
                } else {
                    hi
                }
            }
        }
    }

    pub fn tag(&self) -> String {
        match *self {
            ScalarProfile::Constant { .. } => "constant".into(),
            ScalarProfile::Affine { .. } => "affine".into(),
            ScalarProfile::Hoelder { alpha, .. } => format!("hoelder(alpha={alpha})"),
            ScalarProfile::Jump { .. } => "jump".into(),
        }
    }
}

/// One-dimensional family A(t) = [a(t)] from a closed-form profile.
pub fn build_scalar_family(profile: ScalarProfile, tau: f64) -> Result<OperatorFamily> {
    if let ScalarProfile::Hoelder { alpha, .. } = profile {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::BadExponent {
                what: "profile alpha",
                value: alpha,
            });
        }
    }
    let a0 = profile.value(0.0);
    let ref_op = Matrix::from_diag(&[a0])?;
    let p = profile.clone();
    let eval: EvalFn = Arc::new(move |t| {
        Matrix::from_diag(&[p.value(t)]).expect("scalar profile value is finite")
    });
    OperatorFamily::new(tau, FamilyKind::ScalarAnalytic, ref_op, eval)
}

/// Matrix family a(t) * M for a fixed symmetric positive semidefinite M,
/// useful as a commuting, exactly solvable reference case.
pub fn build_profile_matrix_family(
    profile: ScalarProfile,
    m: Matrix,
    tau: f64,
) -> Result<OperatorFamily> {
    let ref_op = m.scale(profile.value(0.0)).symmetric_part();
    let p = profile.clone();
    let eval: EvalFn = Arc::new(move |t| m.scale(p.value(t)));
    OperatorFamily::new(tau, FamilyKind::ScalarAnalytic, ref_op, eval)
}

// ── Sampled families ─────────────────────────────────────────────────────────

/// Piecewise-linear interpolation in t between operator snapshots, constant
/// outside the sampled range. The horizon is the last snapshot time.
pub fn build_sampled_family(snapshots: Vec<(f64, Matrix)>) -> Result<OperatorFamily> {
    if snapshots.len() < 2 {
        return Err(Error::Snapshot {
            msg: "need at least two snapshots".into(),
        });
    }
    let dim = snapshots[0].1.n();
    for (i, (t, m)) in snapshots.iter().enumerate() {
        if !t.is_finite() {
            return Err(Error::Snapshot {
                msg: format!("non-finite time in row {i}"),
            });
        }
        if m.n() != dim {
            return Err(Error::Snapshot {
                msg: format!("row {i} has dimension {} but expected {dim}", m.n()),
            });
        }
        if i > 0 && !(snapshots[i].0 > snapshots[i - 1].0) {
            return Err(Error::Snapshot {
                msg: format!("times must increase strictly (row {i})"),
            });
        }
    }
    if !(snapshots[0].0 >= 0.0) {
        return Err(Error::Snapshot {
            msg: "snapshot times must start at or after 0".into(),
        });
    }
    let tau = snapshots.last().unwrap().0;
    if !(tau > 0.0) {
        return Err(Error::Snapshot {
            msg: "last snapshot time must be positive".into(),
        });
    }
    let ref_op = snapshots[0].1.symmetric_part();
    let snaps = Arc::new(snapshots);
    let s = Arc::clone(&snaps);
    let eval: EvalFn = Arc::new(move |t| {
        if t <= s[0].0 {
            return s[0].1.clone();
        }
        if t >= s[s.len() - 1].0 {
            return s[s.len() - 1].1.clone();
        }
        let k = s.partition_point(|(st, _)| *st <= t) - 1;
        let (t0, ref m0) = s[k];
        let (t1, ref m1) = s[k + 1];
        let w = (t - t0) / (t1 - t0);
        &m0.scale(1.0 - w) + &m1.scale(w)
    });
    OperatorFamily::new(tau, FamilyKind::SampledInterpolated, ref_op, eval)
}

/// Caps keeping hostile snapshot inputs from allocating absurd tables.
const SNAPSHOT_MAX_DIM: usize = 512;
const SNAPSHOT_MAX_ROWS: usize = 65536;

/// Reads `t, a_11, ..., a_nn` rows (row-major entries, ascending t).
pub fn load_snapshot_csv(reader: impl Read) -> Result<Vec<(f64, Matrix)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || headers.get(0) != Some("t") {
        return Err(Error::Snapshot {
            msg: "first header field must be `t`".into(),
        });
    }
    let k = headers.len() - 1;
    if k == 0 {
        return Err(Error::Snapshot {
            msg: "no operator entry columns".into(),
        });
    }
    let n = (k as f64).sqrt().round() as usize;
    if n * n != k {
        return Err(Error::Snapshot {
            msg: format!("{k} entry columns do not form a square operator"),
        });
    }
    if n > SNAPSHOT_MAX_DIM {
        return Err(Error::Snapshot {
            msg: format!("dimension {n} exceeds the supported maximum {SNAPSHOT_MAX_DIM}"),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        if rows.len() >= SNAPSHOT_MAX_ROWS {
            return Err(Error::Snapshot {
                msg: format!("more than {SNAPSHOT_MAX_ROWS} snapshot rows"),
            });
        }
        let rec = rec?;
        if rec.len() != k + 1 {
            return Err(Error::Snapshot {
                msg: format!("row {i} has {} fields, expected {}", rec.len(), k + 1),
            });
        }
        let parse = |s: &str, what: String| -> Result<f64> {
            s.parse::<f64>().map_err(|_| Error::Snapshot {
                msg: format!("{what}: cannot parse `{s}` as a number"),
            })
        };
        let t = parse(rec.get(0).unwrap(), format!("row {i}, column t"))?;
        let mut entries = Vec::with_capacity(k);
        for j in 0..k {
            entries.push(parse(
                rec.get(j + 1).unwrap(),
                format!("row {i}, column {}", j + 1),
            )?);
        }
        let m = Matrix::from_rows(n, &entries).map_err(|e| Error::Snapshot {
            msg: format!("row {i}: {e}"),
        })?;
        rows.push((t, m));
    }
    Ok(rows)
}

// ── Relative continuity modulus ──────────────────────────────────────────────

/// Monotone envelope of the measured modulus: omega[h] bounds
/// op_norm2((A(s+h) - A(s)) (I+R)^{-1}) over the sampled anchors at each lag.
#[derive(Clone, Debug)]
pub struct ModulusEstimate {
    pub lags: Vec<f64>,
    pub omega: Vec<f64>,
    pub eta: f64,
}

impl ModulusEstimate {
    /// Envelope lookup: the value at the first sampled lag >= h (the grid
    /// floor below the smallest lag, the last value beyond the largest).
    pub fn omega_at(&self, h: f64) -> f64 {
        match self.lags.iter().position(|l| *l >= h) {
            Some(i) => self.omega[i],
            None => *self.omega.last().unwrap(),
        }
    }
}

/// Anchor points used for a given lag; exposed so tests and certificates can
/// sample exactly the pairs the estimator measured.
pub fn modulus_anchors(tau: f64, h: f64) -> Vec<f64> {
    const COUNT: usize = 17;
    let top = tau - h;
    if top <= 0.0 {
        return vec![0.0];
    }
    (0..COUNT)
        .map(|i| top * i as f64 / (COUNT - 1) as f64)
        .collect()
}

/// Measures the relative continuity modulus on the given lag grid. The
/// additive part eta is pinned to zero: all time variation is charged to the
/// D-scale term, which is the conservative reading.
pub fn relative_modulus(f: &OperatorFamily, lags: &[f64]) -> Result<ModulusEstimate> {
    if lags.is_empty() {
        return Err(Error::EmptyInput { what: "lag grid" });
    }
    for (i, w) in lags.windows(2).enumerate() {
        if !(w[1] > w[0]) {
            return Err(Error::NonIncreasingGrid { index: i + 1 });
        }
    }
    if !(lags[0] > 0.0) || !(lags[lags.len() - 1] <= f.tau() + 1e-12) {
        return Err(Error::BadHorizon { value: lags[0] });
    }
    let inv = f.dnorm().i_plus_inv();
    let raw: Vec<f64> = lags
        .par_iter()
        .map(|&h| {
            modulus_anchors(f.tau(), h)
                .iter()
                .map(|&s| {
                    let d = &f.eval(s + h) - &f.eval(s);
                    (&d * inv).op_norm2()
                })
                .fold(0.0, f64::max)
        })
        .collect();
    let mut omega = raw;
    for i in 1..omega.len() {
        omega[i] = omega[i].max(omega[i - 1]);
    }
    Ok(ModulusEstimate {
        lags: lags.to_vec(),
        omega,
        eta: 0.0,
    })
}

/// Default lag grid for modulus scans: log-spaced from tau*1e-4 up to tau/2.
pub fn default_lag_grid(tau: f64, count: usize) -> Result<Vec<f64>> {
    log_spaced(tau * 1e-4, tau * 0.5, count.max(2))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiniVerdict {
    Finite,
    Diverging,
}

impl DiniVerdict {
    pub fn tag(&self) -> &'static str {
        match self {
            DiniVerdict::Finite => "finite",
            DiniVerdict::Diverging => "diverging",
        }
    }
}

/// integral over (0, tau] of (omega(t)/t)^p dt, split into the quadrature
/// part on [h_min, tau] and a power-law tail fitted near zero.
#[derive(Clone, Debug)]
pub struct DiniIntegral {
    pub p: f64,
    pub truncated: f64,
    pub tail: Option<f64>,
    pub value: f64,
    pub fitted_exponent: f64,
    pub fitted_amplitude: f64,
    pub verdict: DiniVerdict,
}

/// Quadrature plus fitted-tail evaluation of the Dini-type integral. The
/// verdict is `Diverging` when the fitted power beta of omega near zero has
/// (beta - 1) p <= -1, the non-integrable range; the truncated value is still
/// reported for refinement studies.
pub fn dini_integral(est: &ModulusEstimate, p: f64, tau: f64) -> Result<DiniIntegral> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::BadExponent {
            what: "dini exponent p",
            value: p,
        });
    }
    let lags = &est.lags;
    let omega = &est.omega;
    let max_omega = omega.iter().fold(0.0f64, |m, v| m.max(*v));
    if max_omega <= 0.0 {
        // Constant-in-t family: zero modulus, zero integral.
        return Ok(DiniIntegral {
            p,
            truncated: 0.0,
            tail: Some(0.0),
            value: 0.0,
            fitted_exponent: f64::INFINITY,
            fitted_amplitude: 0.0,
            verdict: DiniVerdict::Finite,
        });
    }

    // Quadrature knots: sampled lags, extended to tau with the envelope's
    // last value (the envelope is monotone by construction).
    let mut xs: Vec<f64> = lags.clone();
    let mut ys: Vec<f64> = xs
        .iter()
        .zip(omega)
        .map(|(h, w)| (w / h).powf(p))
        .collect();
    let last = *lags.last().unwrap();
    if last < tau {
        let w = *omega.last().unwrap();
        xs.push(tau);
        ys.push((w / tau).powf(p));
    }
    let truncated = crate::grid::trapezoid(&xs, &ys);

    // Power-law fit omega ~ C h^beta over the smallest sampled decade.
    let floor = 1e-13 * max_omega;
    let pts: Vec<(f64, f64)> = lags
        .iter()
        .zip(omega)
        .filter(|(_, w)| **w > floor)
        .map(|(h, w)| (h.ln(), w.ln()))
        .take(8)
        .collect();
    let (beta, amplitude) = fit_power_law(&pts);
    let h_min = lags[0];

    let q = (beta - 1.0) * p;
    if pts.len() >= 2 && q <= -1.0 + 1e-9 {
        return Ok(DiniIntegral {
            p,
            truncated,
            tail: None,
            value: truncated,
            fitted_exponent: beta,
            fitted_amplitude: amplitude,
            verdict: DiniVerdict::Diverging,
        });
    }
    // Integrable tail: integral over [0, h_min] of (C t^{beta-1})^p dt.
    let tail = if pts.len() >= 2 {
        amplitude.powf(p) * h_min.powf(q + 1.0) / (q + 1.0)
    } else {
        0.0
    };
    Ok(DiniIntegral {
        p,
        truncated,
        tail: Some(tail),
        value: truncated + tail,
        fitted_exponent: beta,
        fitted_amplitude: amplitude,
        verdict: DiniVerdict::Finite,
    })
}

/// Least-squares slope/amplitude of ln w against ln h. Returns (beta, C).
fn fit_power_law(log_pts: &[(f64, f64)]) -> (f64, f64) {
    if log_pts.len() < 2 {
        return (f64::INFINITY, 0.0);
    }
    let n = log_pts.len() as f64;
    let sx: f64 = log_pts.iter().map(|p| p.0).sum();
    let sy: f64 = log_pts.iter().map(|p| p.1).sum();
    let sxx: f64 = log_pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = log_pts.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-30 {
        return (f64::INFINITY, 0.0);
    }
    let beta = (n * sxy - sx * sy) / denom;
    let lnc = (sy - beta * sx) / n;
    (beta.clamp(-8.0, 8.0), lnc.exp())
}

/// Combined modulus report, the shape the CLI emits.
#[derive(Clone, Debug)]
pub struct DiniReport {
    pub lags: Vec<f64>,
    pub omega: Vec<f64>,
    pub eta: f64,
    pub p: f64,
    pub dini_integral: f64,
    pub verdict: DiniVerdict,
    pub fitted_exponent: f64,
    pub truncated: f64,
    pub tail: Option<f64>,
}

pub fn dini_report(f: &OperatorFamily, lags: &[f64], p: f64) -> Result<DiniReport> {
    let est = relative_modulus(f, lags)?;
    let integ = dini_integral(&est, p, f.tau())?;
    Ok(DiniReport {
        lags: est.lags,
        omega: est.omega,
        eta: est.eta,
        p,
        dini_integral: integ.value,
        verdict: integ.verdict,
        fitted_exponent: integ.fitted_exponent,
        truncated: integ.truncated,
        tail: integ.tail,
    })
}

// ── Frozen-kernel bound fit ──────────────────────────────────────────────────

/// Fit of |t-s|^alpha * op_norm2((A(t)-A(s)) e^{-(t-s)A(s)}) over lag/anchor
/// pairs. Finite c_fit backs the kernel-decay route to admissibility on
/// families whose modulus alone is too rough.
#[derive(Clone, Debug)]
pub struct HPrimeReport {
    pub alpha: f64,
    pub c_fit: f64,
    pub per_lag: Vec<(f64, f64)>,
    /// Anchor times whose frozen operator has a non-decaying mode
    /// (symmetric part not positive). Diagnostic, not a failure.
    pub unstable_frozen: Vec<f64>,
}

pub fn hprime_check(f: &OperatorFamily, lags: &[f64], alpha: f64) -> Result<HPrimeReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::BadExponent {
            what: "kernel exponent alpha",
            value: alpha,
        });
    }
    if lags.is_empty() {
        return Err(Error::EmptyInput { what: "lag grid" });
    }
    let anchors_per_lag = 9usize;
    let mut unstable = Vec::new();
    {
        let probe = modulus_anchors(f.tau(), lags[0]);
        for &s in probe.iter().take(anchors_per_lag) {
            let sym = f.eval(s).symmetric_part();
            if let Ok(dec) = spd_eig(&sym) {
                if dec.eigenvalues()[0] <= 0.0 {
                    unstable.push(s);
                }
            }
        }
    }
    let per_lag: Vec<(f64, f64)> = lags
        .par_iter()
        .map(|&h| {
            let anchors = modulus_anchors(f.tau(), h);
            let stride = (anchors.len() / anchors_per_lag).max(1);
            let worst = anchors
                .iter()
                .step_by(stride)
                .map(|&s| {
                    let a_s = f.eval(s);
                    let kernel = a_s.expm(-h).expect("frozen exponential");
                    let d = &f.eval(s + h) - &a_s;
                    h.powf(alpha) * (&d * &kernel).op_norm2()
                })
                .fold(0.0, f64::max);
            (h, worst)
        })
        .collect();
    let c_fit = per_lag.iter().map(|p| p.1).fold(0.0, f64::max);
    Ok(HPrimeReport {
        alpha,
        c_fit,
        per_lag,
        unstable_frozen: unstable,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hoelder_half() -> OperatorFamily {
        build_scalar_family(
            ScalarProfile::Hoelder {
                a0: 1.0,
                amplitude: 1.0,
                alpha: 0.5,
            },
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn scalar_hoelder_modulus_matches_closed_form() {
        // a(t) = 1 + sqrt(t), reference 1, so (I+R)^{-1} = 1/2 and the worst
        // anchor at each lag is s = 0: omega(h) = sqrt(h)/2.
        let f = hoelder_half();
        let lags = default_lag_grid(1.0, 16).unwrap();
        let est = relative_modulus(&f, &lags).unwrap();
        for (h, w) in est.lags.iter().zip(&est.omega) {
            assert!(
                (w - h.sqrt() / 2.0).abs() <= 1e-9,
                "omega({h}) = {w}, want {}",
                h.sqrt() / 2.0
            );
        }
    }

    #[test]
    fn dini_quadrature_matches_power_law_oracle() {
        // omega(t) = sqrt(t), p = 3/2: integral of t^{-3/4} over (0,1] is 4.
        let lags = log_spaced(1e-6, 1.0, 200).unwrap();
        let omega: Vec<f64> = lags.iter().map(|h| h.sqrt()).collect();
        let est = ModulusEstimate {
            lags,
            omega,
            eta: 0.0,
        };
        let integ = dini_integral(&est, 1.5, 1.0).unwrap();
        assert_eq!(integ.verdict, DiniVerdict::Finite);
        assert!(
            (integ.value - 4.0).abs() <= 0.08,
            "integral {} vs 4.0",
            integ.value
        );
        assert!((integ.fitted_exponent - 0.5).abs() < 1e-6);
    }

    #[test]
    fn dini_flags_divergence_at_critical_exponent() {
        let lags = log_spaced(1e-6, 1.0, 200).unwrap();
        let omega: Vec<f64> = lags.iter().map(|h| h.sqrt()).collect();
        let est = ModulusEstimate {
            lags,
            omega,
            eta: 0.0,
        };
        let integ = dini_integral(&est, 2.0, 1.0).unwrap();
        assert_eq!(integ.verdict, DiniVerdict::Diverging);
        assert!(integ.tail.is_none());
    }

    #[test]
    fn hoelder_families_cross_the_integrability_threshold() {
        for &alpha in &[0.3, 0.5, 0.75] {
            let f = build_scalar_family(
                ScalarProfile::Hoelder {
                    a0: 1.0,
                    amplitude: 1.0,
                    alpha,
                },
                1.0,
            )
            .unwrap();
            let lags = default_lag_grid(1.0, 48).unwrap();
            let est = relative_modulus(&f, &lags).unwrap();
            let p_ok = 0.5 * (1.0 + 1.0 / (1.0 - alpha));
            let p_bad = 1.0 / (1.0 - alpha) + 0.25;
            let fin = dini_integral(&est, p_ok, 1.0).unwrap();
            let div = dini_integral(&est, p_bad, 1.0).unwrap();
            assert_eq!(fin.verdict, DiniVerdict::Finite, "alpha={alpha}");
            assert_eq!(div.verdict, DiniVerdict::Diverging, "alpha={alpha}");
        }
    }

    #[test]
    fn jump_family_fails_relative_continuity() {
        let f = build_scalar_family(
            ScalarProfile::Jump {
                lo: 1.0,
                hi: 2.0,
                at: 0.5,
            },
            1.0,
        )
        .unwrap();
        let lags = default_lag_grid(1.0, 32).unwrap();
        let est = relative_modulus(&f, &lags).unwrap();
        // The jump keeps omega at 1/2 for every lag; any p >= 1 diverges.
        assert!(est.omega.iter().all(|w| (*w - 0.5).abs() < 1e-12));
        let integ = dini_integral(&est, 1.5, 1.0).unwrap();
        assert_eq!(integ.verdict, DiniVerdict::Diverging);
    }

    #[test]
    fn refined_lag_grid_dominates_coarse_envelope() {
        let f = hoelder_half();
        let coarse = default_lag_grid(1.0, 12).unwrap();
        let mut fine = coarse.clone();
        for w in coarse.windows(2) {
            fine.push((w[0] * w[1]).sqrt());
        }
        fine.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let est_c = relative_modulus(&f, &coarse).unwrap();
        let est_f = relative_modulus(&f, &fine).unwrap();
        for (h, w) in est_c.lags.iter().zip(&est_c.omega) {
            assert!(est_f.omega_at(*h) >= *w - 1e-12);
        }
    }

    #[test]
    fn certified_inequality_on_sampled_pairs() {
        // 1000 seeded (t, s, x) triples drawn from the measured pair lattice.
        let f3 = build_profile_matrix_family(
            ScalarProfile::Hoelder {
                a0: 1.0,
                amplitude: 0.8,
                alpha: 0.4,
            },
            Matrix::from_rows(3, &[2.0, 0.5, 0.0, 0.5, 1.5, 0.3, 0.0, 0.3, 1.0]).unwrap(),
            1.0,
        )
        .unwrap();
        let lags = default_lag_grid(1.0, 24).unwrap();
        let est = relative_modulus(&f3, &lags).unwrap();
        let dn = f3.dnorm();
        let mut rng = crate::sampling::seeded_rng(11);
        for _ in 0..1000 {
            let h = lags[(crate::sampling::uniform(&mut rng) * lags.len() as f64) as usize];
            let anchors = modulus_anchors(1.0, h);
            let s = anchors[(crate::sampling::uniform(&mut rng) * anchors.len() as f64) as usize];
            let x = crate::sampling::random_unit_vector(&mut rng, 3);
            let lhs = (&f3.eval(s + h).apply(&x) - &f3.eval(s).apply(&x)).norm();
            let rhs = est.omega_at(h) * dn.norm(&x) + est.eta * x.norm() + 1e-9;
            assert!(lhs <= rhs, "certificate broken at h={h}, s={s}");
        }
    }

    #[test]
    fn snapshot_csv_roundtrip_and_interpolation() {
        let text = "t,a_11,a_12,a_21,a_22\n0.0,1.0,0.0,0.0,1.0\n1.0,3.0,0.0,0.0,1.0\n";
        let snaps = load_snapshot_csv(text.as_bytes()).unwrap();
        let f = build_sampled_family(snaps).unwrap();
        assert_eq!(f.kind(), FamilyKind::SampledInterpolated);
        assert!((f.eval(0.5).get(0, 0) - 2.0).abs() < 1e-12);
        assert!((f.eval(2.0).get(0, 0) - 3.0).abs() < 1e-12, "clamps past end");
    }

    #[test]
    fn snapshot_csv_rejects_malformed_input() {
        assert!(load_snapshot_csv("x,a\n1,2\n".as_bytes()).is_err());
        assert!(load_snapshot_csv("t,a_11,a_12\n0,1,2\n".as_bytes()).is_err());
        let unsorted = "t,a_11\n1.0,1.0\n0.5,2.0\n";
        let snaps = load_snapshot_csv(unsorted.as_bytes()).unwrap();
        assert!(build_sampled_family(snaps).is_err());
        assert!(load_snapshot_csv("t,a_11\n0.0,nope\n".as_bytes()).is_err());
    }

    #[test]
    fn shift_is_recorded_and_applied() {
        let f = hoelder_half().shifted(2.5);
        assert!((f.shift() - 2.5).abs() < 1e-15);
        assert!((f.eval(0.0).get(0, 0) - 3.5).abs() < 1e-12);
    }

    #[test]
    fn hprime_fit_is_finite_for_smooth_families() {
        let f = hoelder_half();
        let lags = log_spaced(1e-3, 0.5, 10).unwrap();
        let rep = hprime_check(&f, &lags, 0.5).unwrap();
        assert!(rep.c_fit.is_finite() && rep.c_fit > 0.0);
        assert!(rep.unstable_frozen.is_empty());
        // Scalar oracle: |a(t)-a(s)| e^{-h a(s)} <= sqrt(h) e^{-h}, so the
        // fitted constant stays at or below 1 after the h^alpha weight.
        assert!(rep.c_fit <= 1.0 + 1e-9, "c_fit = {}", rep.c_fit);
    }
}
