//! Frozen-coefficient exponentials e^{-s A(t)}, uniform resolvent scans over
//! a right half-plane, and the analytic-decay constants those exponentials
//! satisfy. Scans parallelize over sample cells and reduce in index order, so
//! results never depend on thread count.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::family::OperatorFamily;
use crate::linalg::{complex_shift_embedding, Matrix, Vector};

/// Singularity cutoff for declaring (lambda + A(t)) non-invertible within a
/// scan, relative to the operator scale.
const SCAN_SINGULAR_RTOL: f64 = 1e-12;

/// e^{-s A(t)}. `t` must lie in the family's horizon and `s` must be
/// nonnegative.
pub fn frozen_semigroup(f: &OperatorFamily, t: f64, s: f64) -> Result<Matrix> {
    if !(0.0..=f.tau()).contains(&t) {
        return Err(Error::BadFamilyEval { t });
    }
    if !(s >= 0.0) {
        return Err(Error::BadHorizon { value: s });
    }
    f.eval(t).expm(-s)
}

/// Half-plane resolvent survey: per-sample values (1+|lambda|) ||(lambda +
/// A(t))^{-1}||, their supremum M0, and any singular pairs found inside the
/// scanned half-plane (a resolvent-set violation for the family).
#[derive(Clone, Debug)]
pub struct ResolventScanReport {
    pub r0: f64,
    pub lambda_samples: Vec<(f64, f64)>,
    /// Per-lambda worst case over the t grid, aligned with `lambda_samples`.
    pub bounds: Vec<f64>,
    pub m0: f64,
    /// (t, worst bound over lambda) per scanned time.
    pub per_t_breakdown: Vec<(f64, f64)>,
    /// (t, lambda) pairs where lambda + A(t) fell below the singularity
    /// cutoff; empty when the half-plane sits in the resolvent set.
    pub violations: Vec<(f64, (f64, f64))>,
    /// Every scanned cell as `(t, re_lambda, im_lambda, bound_value)`, the
    /// CSV export rows, in (t, lambda) scan order.
    pub cells: Vec<(f64, f64, f64, f64)>,
}

impl ResolventScanReport {
    pub fn violation_free(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Rectangular sample cloud covering Re lambda in [r0, r_max], |Im lambda|
/// <= r_max, symmetric about the real axis.
pub fn half_plane_samples(r0: f64, r_max: f64, n_re: usize, n_im: usize) -> Vec<(f64, f64)> {
    let n_re = n_re.max(2);
    let n_im = n_im.max(3) | 1; // odd, so the real axis is sampled
    let mut out = Vec::with_capacity(n_re * n_im);
    for i in 0..n_re {
        let re = r0 + (r_max - r0) * i as f64 / (n_re - 1) as f64;
        for j in 0..n_im {
            let im = -r_max + 2.0 * r_max * j as f64 / (n_im - 1) as f64;
            out.push((re, im));
        }
    }
    out
}

/// Evaluates (1+|lambda|) ||(lambda + A(t))^{-1}|| over the grid product,
/// through the real 2n x 2n embedding of the complex shift. Samples must all
/// satisfy Re lambda >= min(Re), which becomes the reported abscissa r0.
pub fn resolvent_scan(
    f: &OperatorFamily,
    t_grid: &[f64],
    lambda_grid: &[(f64, f64)],
) -> Result<ResolventScanReport> {
    if t_grid.is_empty() {
        return Err(Error::EmptyInput { what: "t grid" });
    }
    if lambda_grid.is_empty() {
        return Err(Error::EmptyInput {
            what: "lambda grid",
        });
    }
    for &t in t_grid {
        if !(0.0..=f.tau()).contains(&t) {
            return Err(Error::BadFamilyEval { t });
        }
    }
    let r0 = lambda_grid.iter().map(|l| l.0).fold(f64::INFINITY, f64::min);

    let cells: Vec<(usize, usize)> = (0..t_grid.len())
        .flat_map(|i| (0..lambda_grid.len()).map(move |k| (i, k)))
        .collect();
    let values: Vec<f64> = cells
        .par_iter()
        .map(|&(i, k)| {
            let a = f.eval(t_grid[i]);
            let scale = a.max_abs().max(1.0);
            let (re, im) = lambda_grid[k];
            let emb = complex_shift_embedding(&a, Complex64::new(re, im));
            let sigma = emb.smallest_singular();
            let modulus = (re * re + im * im).sqrt();
            if sigma <= SCAN_SINGULAR_RTOL * scale {
                f64::INFINITY
            } else {
                (1.0 + modulus) / sigma
            }
        })
        .collect();

    let nl = lambda_grid.len();
    let mut bounds = vec![0.0f64; nl];
    let mut per_t = Vec::with_capacity(t_grid.len());
    let mut violations = Vec::new();
    let mut cells = Vec::with_capacity(values.len());
    for (i, &t) in t_grid.iter().enumerate() {
        let mut worst_t = 0.0f64;
        for k in 0..nl {
            let v = values[i * nl + k];
            let (re, im) = lambda_grid[k];
            if v.is_infinite() {
                violations.push((t, lambda_grid[k]));
            }
            bounds[k] = bounds[k].max(v);
            worst_t = worst_t.max(v);
            cells.push((t, re, im, v));
        }
        per_t.push((t, worst_t));
    }
    let m0 = bounds.iter().fold(0.0f64, |m, v| m.max(*v));
    Ok(ResolventScanReport {
        r0,
        lambda_samples: lambda_grid.to_vec(),
        bounds,
        m0,
        per_t_breakdown: per_t,
        violations,
        cells,
    })
}

/// Uniform decay constants of the frozen exponentials: c_semigroup bounds
/// ||e^{-sA(t)}|| and c_derivative bounds s ||A(t) e^{-sA(t)}|| over the
/// scanned (t, s) grid.
#[derive(Clone, Debug)]
pub struct AnalyticBoundReport {
    pub c_semigroup: f64,
    pub c_derivative: f64,
    /// (t, sup_s ||e^{-sA(t)}||, sup_s s ||A(t) e^{-sA(t)}||).
    pub per_t: Vec<(f64, f64, f64)>,
}

pub fn analytic_bounds(
    f: &OperatorFamily,
    t_grid: &[f64],
    s_grid: &[f64],
) -> Result<AnalyticBoundReport> {
    if t_grid.is_empty() || s_grid.is_empty() {
        return Err(Error::EmptyInput { what: "scan grid" });
    }
    let s_lo = 1e-6 * f.tau();
    for &s in s_grid {
        if !(s >= s_lo * (1.0 - 1e-12)) || !(s <= f.tau() * (1.0 + 1e-12)) {
            return Err(Error::Domain {
                msg: format!("semigroup scan time {s} outside [{s_lo}, {}]", f.tau()),
            });
        }
    }
    let per_t: Vec<(f64, f64, f64)> = t_grid
        .par_iter()
        .map(|&t| {
            let a = f.eval(t);
            // ||e^{-sA}|| -> 1 as s -> 0+ for every generator, so the
            // supremum over (0, tau] is at least 1 even when the grid
            // values all decay below it.
            let mut sup_e = 1.0f64;
            let mut sup_d = 0.0f64;
            for &s in s_grid {
                let e = a.expm(-s).expect("frozen exponential");
                sup_e = sup_e.max(e.op_norm2());
                sup_d = sup_d.max(s * (&a * &e).op_norm2());
            }
            (t, sup_e, sup_d)
        })
        .collect();
    let c_semigroup = per_t.iter().map(|r| r.1).fold(0.0, f64::max);
    let c_derivative = per_t.iter().map(|r| r.2).fold(0.0, f64::max);
    Ok(AnalyticBoundReport {
        c_semigroup,
        c_derivative,
        per_t,
    })
}

/// Checks that u(t) = e^{lambda t} x solves u' + A u = f for the forcing
/// f(t) = (lambda + A) x e^{lambda t}, using the analytic derivative
/// u' = lambda u. Returns the worst residual over a fine grid on [0, 1];
/// the identity is algebraic, so anything above rounding noise indicates a
/// kernel defect.
pub fn resolvent_construction_oracle(a: &Matrix, lambda: (f64, f64), x: &Vector) -> f64 {
    let (sig, om) = lambda;
    let w = a.apply(x); // A x, shared by f and the residual
    let mut worst = 0.0f64;
    for i in 0..=100 {
        let t = i as f64 / 100.0;
        let (c, s) = ((sig * t).exp() * (om * t).cos(), (sig * t).exp() * (om * t).sin());
        // u = (c + i s) x, u' = lambda u, f = (c + i s)(lambda x + w)
        let u_re = x.scale(c);
        let u_im = x.scale(s);
        let du_re = &u_re.scale(sig) - &u_im.scale(om);
        let du_im = &u_im.scale(sig) + &u_re.scale(om);
        let f_re = &(&x.scale(sig) + &w).scale(c) - &x.scale(om * s);
        let f_im = &(&x.scale(sig) + &w).scale(s) + &x.scale(om * c);
        let r_re = &(&du_re + &a.apply(&u_re)) - &f_re;
        let r_im = &(&du_im + &a.apply(&u_im)) - &f_im;
        worst = worst.max((r_re.norm_squared() + r_im.norm_squared()).sqrt());
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::log_spaced;

    fn diag_family(mus: &[f64], tau: f64) -> OperatorFamily {
        OperatorFamily::autonomous(Matrix::from_diag(mus).unwrap(), tau).unwrap()
    }

    #[test]
    fn frozen_semigroup_diagonal_and_identity_cases() {
        let f = diag_family(&[1.0, 2.0], 1.0);
        let e = frozen_semigroup(&f, 0.5, 1.0).unwrap();
        assert!((e.get(0, 0) - (-1.0f64).exp()).abs() < 1e-14);
        assert!((e.get(1, 1) - (-2.0f64).exp()).abs() < 1e-14);
        let id = frozen_semigroup(&f, 0.0, 0.0).unwrap();
        assert!((&id - &Matrix::identity(2)).op_norm2() < 1e-15);
        assert!(frozen_semigroup(&f, 1.5, 0.1).is_err());
        assert!(frozen_semigroup(&f, 0.5, -0.1).is_err());
    }

    #[test]
    fn resolvent_scan_matches_diagonal_closed_form_on_real_axis() {
        let f = diag_family(&[0.5, 2.0], 1.0);
        let t_grid = [0.0, 0.5, 1.0];
        let lambdas: Vec<(f64, f64)> = (0..21).map(|i| (i as f64 * 0.5, 0.0)).collect();
        let rep = resolvent_scan(&f, &t_grid, &lambdas).unwrap();
        assert!(rep.violation_free());
        assert!((rep.r0 - 0.0).abs() < 1e-15);
        let want_m0 = lambdas
            .iter()
            .map(|(re, _)| (1.0 + re) / (re + 0.5))
            .fold(0.0f64, f64::max);
        assert!(
            (rep.m0 - want_m0).abs() <= 1e-8 * want_m0,
            "{} vs {}",
            rep.m0,
            want_m0
        );
        for ((re, _), b) in rep.lambda_samples.iter().zip(&rep.bounds) {
            let want = (1.0 + re) / (re + 0.5);
            assert!((b - want).abs() <= 1e-8 * want);
        }
    }

    #[test]
    fn resolvent_scan_zero_operator_and_imaginary_axis() {
        let f = OperatorFamily::autonomous(Matrix::zeros(2), 1.0).unwrap();
        let rep = resolvent_scan(&f, &[0.0], &[(1.0, 0.0)]).unwrap();
        assert!((rep.m0 - 2.0).abs() < 1e-10);

        let g = diag_family(&[2.0, 3.0], 1.0);
        let om = 1.5f64;
        let rep = resolvent_scan(&g, &[0.5], &[(0.0, om)]).unwrap();
        let want = (1.0 + om) / (4.0 + om * om).sqrt();
        assert!((rep.m0 - want).abs() <= 1e-8 * want);
    }

    #[test]
    fn resolvent_scan_flags_singular_pair() {
        let f = diag_family(&[0.0, 1.0], 1.0);
        let rep = resolvent_scan(&f, &[0.0], &[(0.0, 0.0), (1.0, 0.0)]).unwrap();
        assert_eq!(rep.violations.len(), 1);
        assert_eq!(rep.violations[0].1, (0.0, 0.0));
        assert!(rep.bounds[0].is_infinite());
        assert!(rep.bounds[1].is_finite());
    }

    #[test]
    fn analytic_bounds_spd_contraction_and_derivative_peak() {
        let f = diag_family(&[1.0, 4.0], 2.0);
        let t_grid = [0.0, 1.0, 2.0];
        let s_grid = log_spaced(1e-3, 2.0, 240).unwrap();
        let rep = analytic_bounds(&f, &t_grid, &s_grid).unwrap();
        assert!((rep.c_semigroup - 1.0).abs() <= 1e-12);
        // sup_s s mu e^{-s mu} = e^{-1}, attained near s = 1/mu for both modes.
        let want = (-1.0f64).exp();
        assert!(
            (rep.c_derivative - want).abs() <= 1e-2,
            "{} vs {}",
            rep.c_derivative,
            want
        );
        assert!(rep.c_derivative <= want + 1e-12);
    }

    #[test]
    fn analytic_bounds_zero_and_scalar_one() {
        let z = OperatorFamily::autonomous(Matrix::zeros(2), 1.0).unwrap();
        let s_grid = log_spaced(1e-5, 1.0, 40).unwrap();
        let rep = analytic_bounds(&z, &[0.0, 1.0], &s_grid).unwrap();
        assert!((rep.c_semigroup - 1.0).abs() < 1e-13);
        assert!(rep.c_derivative.abs() < 1e-13);

        let one = diag_family(&[1.0], 1.0);
        let rep = analytic_bounds(&one, &[0.5], &s_grid).unwrap();
        assert!((rep.c_semigroup - 1.0).abs() < 1e-13);

        assert!(analytic_bounds(&one, &[0.5], &[1e-9]).is_err(), "s below floor");
    }

    #[test]
    fn construction_oracle_residual_is_rounding_noise() {
        let a = Matrix::from_diag(&[1.0, 2.0]).unwrap();
        let mut rng = crate::sampling::seeded_rng(3);
        let x = crate::sampling::random_unit_vector(&mut rng, 2);
        let r = resolvent_construction_oracle(&a, (1.0, 1.0), &x);
        assert!(r <= 1e-12, "residual {r}");
        let zero = Matrix::zeros(3);
        let y = crate::sampling::random_unit_vector(&mut rng, 3);
        assert_eq!(resolvent_construction_oracle(&zero, (0.0, 0.0), &y), 0.0);
    }
}
