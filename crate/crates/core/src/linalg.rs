//! Dense real kernels everything else is built on: symmetric eigendecomposition,
//! singular values, linear solves, the matrix exponential (spectral route for
//! symmetric input, Pade ladder with scaling and squaring otherwise), and real
//! powers of positive definite matrices.
//!
//! Complex shifts never leave this module as complex arithmetic: lambda + A is
//! handled through its 2n x 2n real block embedding, see [`complex_shift_embedding`].

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;

/// Relative tolerance deciding whether a matrix counts as symmetric.
pub const SYMMETRY_RTOL: f64 = 1e-12;
/// Orthonormality defect allowed in an eigenvector basis, max-abs of Q^T Q - I.
pub const ORTHONORMALITY_TOL: f64 = 1e-10;
/// Relative Frobenius defect allowed when a decomposition is multiplied back.
pub const RECONSTRUCTION_RTOL: f64 = 1e-9;
/// sigma_min / sigma_max below this is treated as singular by `solve`.
pub const SOLVE_SINGULAR_CUTOFF: f64 = 1e-13;
/// Relative residual bound certified by `solve`.
pub const SOLVE_RESIDUAL_RTOL: f64 = 1e-10;

/// Square dense real matrix with finite entries. The single state type for
/// operators; rectangular data (observation rows) stays `DMatrix` at call sites.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    inner: DMatrix<f64>,
}

impl Matrix {
    pub fn from_dmatrix(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(Error::NotSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteEntries);
        }
        Ok(Matrix { inner: m })
    }

    /// Row-major entries, length n*n.
    pub fn from_rows(n: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::DimensionMismatch {
                left: entries.len(),
                right: n * n,
            });
        }
        Self::from_dmatrix(DMatrix::from_row_slice(n, n, entries))
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        Self::from_dmatrix(DMatrix::from_fn(n, n, f))
    }

    pub fn zeros(n: usize) -> Self {
        Matrix {
            inner: DMatrix::zeros(n, n),
        }
    }

    pub fn identity(n: usize) -> Self {
        Matrix {
            inner: DMatrix::identity(n, n),
        }
    }

    pub fn from_diag(d: &[f64]) -> Result<Self> {
        Self::from_dmatrix(DMatrix::from_diagonal(&DVector::from_row_slice(d)))
    }

    pub fn n(&self) -> usize {
        self.inner.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.inner[(i, j)]
    }

    pub fn as_dmatrix(&self) -> &DMatrix<f64> {
        &self.inner
    }

    pub fn into_dmatrix(self) -> DMatrix<f64> {
        self.inner
    }

    pub fn max_abs(&self) -> f64 {
        self.inner.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn fro_norm(&self) -> f64 {
        self.inner.norm()
    }

    /// Max absolute column sum, used to pick the exponential scaling depth.
    pub fn one_norm(&self) -> f64 {
        let mut best = 0.0f64;
        for j in 0..self.n() {
            let s: f64 = self.inner.column(j).iter().map(|v| v.abs()).sum();
            best = best.max(s);
        }
        best
    }

    pub fn is_symmetric(&self) -> bool {
        let tol = SYMMETRY_RTOL * self.max_abs().max(1e-300);
        let n = self.n();
        for i in 0..n {
            for j in (i + 1)..n {
                if (self.inner[(i, j)] - self.inner[(j, i)]).abs() > tol {
                    return false;
                }
            }
        }
        true
    }

    pub fn transpose(&self) -> Matrix {
        Matrix {
            inner: self.inner.transpose(),
        }
    }

    /// (M + M^T) / 2.
    pub fn symmetric_part(&self) -> Matrix {
        Matrix {
            inner: (&self.inner + self.inner.transpose()).scale(0.5),
        }
    }

    pub fn scale(&self, c: f64) -> Matrix {
        Matrix {
            inner: self.inner.scale(c),
        }
    }

    /// M + r I.
    pub fn add_scaled_identity(&self, r: f64) -> Matrix {
        let mut m = self.inner.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += r;
        }
        Matrix { inner: m }
    }

    pub fn apply(&self, x: &Vector) -> Vector {
        &self.inner * x
    }

    pub fn col(&self, j: usize) -> Vector {
        self.inner.column(j).into_owned()
    }

    /// Largest singular value to 1e-8 relative.
    pub fn op_norm2(&self) -> f64 {
        singular_values(&self.inner)
            .map(|sv| sv.iter().fold(0.0f64, |m, v| m.max(*v)))
            .unwrap_or(f64::NAN)
    }

    /// Smallest singular value; 1 / ||M^{-1}|| when M is invertible.
    pub fn smallest_singular(&self) -> f64 {
        singular_values(&self.inner)
            .map(|sv| sv.iter().fold(f64::INFINITY, |m, v| m.min(*v)))
            .unwrap_or(f64::NAN)
    }

    /// Solves M x = b. Refuses systems with sigma_min <= 1e-13 sigma_max and
    /// certifies the residual against `SOLVE_RESIDUAL_RTOL * ||b||`.
    pub fn solve(&self, b: &Vector) -> Result<Vector> {
        if b.len() != self.n() {
            return Err(Error::DimensionMismatch {
                left: b.len(),
                right: self.n(),
            });
        }
        let sv = singular_values(&self.inner).ok_or(Error::SvdFailed)?;
        let smax = sv.iter().fold(0.0f64, |m, v| m.max(*v));
        let smin = sv.iter().fold(f64::INFINITY, |m, v| m.min(*v));
        let cutoff = SOLVE_SINGULAR_CUTOFF * smax;
        if !(smin > cutoff) {
            return Err(Error::SingularSystem {
                sigma_min: smin,
                cutoff,
            });
        }
        let lu = self.inner.clone().lu();
        let mut x = lu.solve(b).ok_or(Error::SingularSystem {
            sigma_min: smin,
            cutoff,
        })?;
        // One refinement pass tightens the residual when the first solve
        // lands above the certified bound.
        let bound = SOLVE_RESIDUAL_RTOL * b.norm();
        for _ in 0..2 {
            let r = b - &self.inner * &x;
            if r.norm() <= bound {
                break;
            }
            if let Some(dx) = lu.solve(&r) {
                x += dx;
            } else {
                break;
            }
        }
        let residual = (b - &self.inner * &x).norm();
        if residual > bound && residual > 1e-300 {
            return Err(Error::SolveResidual { residual, bound });
        }
        Ok(x)
    }

    /// e^{t M}. Symmetric input goes through the spectral route, anything else
    /// through the Pade ladder with scaling and squaring.
    pub fn expm(&self, t: f64) -> Result<Matrix> {
        if !t.is_finite() {
            return Err(Error::BadExponent {
                what: "expm time",
                value: t,
            });
        }
        if self.is_symmetric() {
            let dec = spd_eig(self)?;
            dec.map_eigenvalues(|lam| (t * lam).exp())
        } else {
            expm_pade(&self.scale(t))
        }
    }

    /// M^alpha for symmetric positive definite M, through the spectral map.
    pub fn frac_power(&self, alpha: f64) -> Result<Matrix> {
        if !alpha.is_finite() {
            return Err(Error::BadExponent {
                what: "frac_power alpha",
                value: alpha,
            });
        }
        let dec = spd_eig(self)?;
        let min_eig = dec.eigenvalues()[0];
        if min_eig <= 0.0 {
            return Err(Error::NotSpd { min_eig });
        }
        dec.map_eigenvalues(|lam| lam.powf(alpha))
    }
}

impl std::ops::Add for &Matrix {
    type Output = Matrix;
    fn add(self, rhs: &Matrix) -> Matrix {
        Matrix {
            inner: &self.inner + &rhs.inner,
        }
    }
}

impl std::ops::Sub for &Matrix {
    type Output = Matrix;
    fn sub(self, rhs: &Matrix) -> Matrix {
        Matrix {
            inner: &self.inner - &rhs.inner,
        }
    }
}

impl std::ops::Mul for &Matrix {
    type Output = Matrix;
    fn mul(self, rhs: &Matrix) -> Matrix {
        Matrix {
            inner: &self.inner * &rhs.inner,
        }
    }
}

/// Eigenpairs of a symmetric matrix, eigenvalues ascending, columns of `q`
/// the matching orthonormal eigenvectors.
#[derive(Clone, Debug)]
pub struct SpectralDecomposition {
    eigenvalues: Vec<f64>,
    q: Matrix,
}

impl SpectralDecomposition {
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn q(&self) -> &Matrix {
        &self.q
    }

    /// Q f(Lambda) Q^T.
    pub fn map_eigenvalues(&self, f: impl Fn(f64) -> f64) -> Result<Matrix> {
        let n = self.eigenvalues.len();
        let d = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                f(self.eigenvalues[i])
            } else {
                0.0
            }
        });
        let m = self.q.as_dmatrix() * d * self.q.as_dmatrix().transpose();
        Matrix::from_dmatrix(m)
    }

    pub fn reconstruct(&self) -> Matrix {
        self.map_eigenvalues(|lam| lam)
            .expect("reconstruction of a validated decomposition")
    }

    /// Coordinates of x in the eigenbasis, Q^T x.
    pub fn coords(&self, x: &Vector) -> Vector {
        self.q.as_dmatrix().transpose() * x
    }
}

/// Symmetric eigendecomposition with ascending eigenvalues. Positive
/// definiteness is the caller's concern; symmetry is checked here.
pub fn spd_eig(m: &Matrix) -> Result<SpectralDecomposition> {
    if !m.is_symmetric() {
        return Err(Error::NotSymmetric);
    }
    // Exact symmetrization first: the solver assumes it, and `is_symmetric`
    // only grants a relative tolerance.
    let sym = m.symmetric_part();
    let eig = nalgebra::linalg::SymmetricEigen::try_new(sym.inner.clone(), f64::EPSILON, 0)
        .ok_or(Error::EigFailed)?;
    let n = m.n();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .partial_cmp(&eig.eigenvalues[b])
            .expect("finite eigenvalues")
    });
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut q = DMatrix::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        q.set_column(col, &eig.eigenvectors.column(i));
    }
    let qtq = q.transpose() * &q;
    let mut defect = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            defect = defect.max((qtq[(i, j)] - target).abs());
        }
    }
    if defect > ORTHONORMALITY_TOL {
        return Err(Error::EigFailed);
    }
    let dec = SpectralDecomposition {
        eigenvalues,
        q: Matrix { inner: q },
    };
    let recon = dec.reconstruct();
    let scale = m.fro_norm().max(1e-300);
    if (&recon - m).fro_norm() > RECONSTRUCTION_RTOL * scale {
        return Err(Error::EigFailed);
    }
    Ok(dec)
}

// ── Pade ladder ──────────────────────────────────────────────────────────────

const THETA_3: f64 = 1.495585217958292e-2;
const THETA_5: f64 = 2.539398330063230e-1;
const THETA_7: f64 = 9.504178996162932e-1;
const THETA_9: f64 = 2.097847961257068e0;
const THETA_13: f64 = 5.371920351148152e0;

const B3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const B5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const B7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const B9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const B13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// e^M by diagonal Pade approximation, orders 3/5/7/9/13 picked from the
/// 1-norm, with scaling and squaring above the order-13 threshold.
pub fn expm_pade(m: &Matrix) -> Result<Matrix> {
    let n = m.n();
    let norm = m.one_norm();
    if !norm.is_finite() {
        return Err(Error::NonFiniteEntries);
    }
    let a: DMatrix<f64>;
    let mut squarings = 0u32;
    if norm <= THETA_13 {
        a = m.inner.clone();
    } else {
        squarings = ((norm / THETA_13).log2().ceil()).max(1.0) as u32;
        a = m.inner.scale(0.5f64.powi(squarings as i32));
    }

    let a2 = &a * &a;
    let id = DMatrix::<f64>::identity(n, n);

    // u odd part (including the leading factor A), v even part.
    let (u, v) = if norm <= THETA_3 {
        let u = &a * (a2.scale(B3[3]) + id.scale(B3[1]));
        let v = a2.scale(B3[2]) + id.scale(B3[0]);
        (u, v)
    } else if norm <= THETA_5 {
        let a4 = &a2 * &a2;
        let u = &a * (a4.scale(B5[5]) + a2.scale(B5[3]) + id.scale(B5[1]));
        let v = a4.scale(B5[4]) + a2.scale(B5[2]) + id.scale(B5[0]);
        (u, v)
    } else if norm <= THETA_7 {
        let a4 = &a2 * &a2;
        let a6 = &a4 * &a2;
        let u = &a * (a6.scale(B7[7]) + a4.scale(B7[5]) + a2.scale(B7[3]) + id.scale(B7[1]));
        let v = a6.scale(B7[6]) + a4.scale(B7[4]) + a2.scale(B7[2]) + id.scale(B7[0]);
        (u, v)
    } else if norm <= THETA_9 {
        let a4 = &a2 * &a2;
        let a6 = &a4 * &a2;
        let a8 = &a6 * &a2;
        let u = &a
            * (a8.scale(B9[9]) + a6.scale(B9[7]) + a4.scale(B9[5]) + a2.scale(B9[3])
                + id.scale(B9[1]));
        let v =
            a8.scale(B9[8]) + a6.scale(B9[6]) + a4.scale(B9[4]) + a2.scale(B9[2]) + id.scale(B9[0]);
        (u, v)
    } else {
        let a4 = &a2 * &a2;
        let a6 = &a4 * &a2;
        let u_hi = a6.scale(B13[13]) + a4.scale(B13[11]) + a2.scale(B13[9]);
        let u_lo = a6.scale(B13[7]) + a4.scale(B13[5]) + a2.scale(B13[3]) + id.scale(B13[1]);
        let u = &a * (&a6 * u_hi + u_lo);
        let v_hi = a6.scale(B13[12]) + a4.scale(B13[10]) + a2.scale(B13[8]);
        let v = &a6 * v_hi + a6.scale(B13[6]) + a4.scale(B13[4]) + a2.scale(B13[2])
            + id.scale(B13[0]);
        (u, v)
    };

    let denom = &v - &u;
    let numer = &v + &u;
    let lu = denom.lu();
    let mut r = lu.solve(&numer).ok_or(Error::SingularSystem {
        sigma_min: 0.0,
        cutoff: 0.0,
    })?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    Matrix::from_dmatrix(r)
}

// ── Complex shifts through real block form ───────────────────────────────────

/// Real 2n x 2n embedding of lambda I + A for complex lambda: acting on
/// stacked (re x, im x) coordinates,
/// [[Re(lambda) I + A, -Im(lambda) I], [Im(lambda) I, Re(lambda) I + A]].
/// Its smallest singular value equals sigma_min of lambda I + A, so
/// 1 / sigma_min is the resolvent norm at -lambda.
pub fn complex_shift_embedding(a: &Matrix, lambda: Complex64) -> Matrix {
    let n = a.n();
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let v = a.get(i, j);
            m[(i, j)] = v;
            m[(n + i, n + j)] = v;
        }
    }
    for i in 0..n {
        m[(i, i)] += lambda.re;
        m[(n + i, n + i)] += lambda.re;
        m[(i, n + i)] = -lambda.im;
        m[(n + i, i)] = lambda.im;
    }
    Matrix { inner: m }
}

fn singular_values(m: &DMatrix<f64>) -> Option<Vec<f64>> {
    nalgebra::linalg::SVD::try_new(m.clone(), false, false, f64::EPSILON, 0)
        .map(|svd| svd.singular_values.iter().copied().collect())
}
