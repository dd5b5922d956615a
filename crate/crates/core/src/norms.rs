//! Space-time norms for trajectories and the interpolation norms attached to
//! the reference operator: the parabolic regularity norm, the quadratic
//! K-functional, and the trace-scale norm it induces.

use crate::error::{Error, Result};
use crate::family::DNorm;
use crate::grid::{log_spaced, trapezoid, Trajectory};
use crate::linalg::Vector;

/// L^p-in-time norm of the pointwise l2 norms of a trajectory.
pub fn lp_state_norm(traj: &Trajectory, p: f64) -> f64 {
    let vals: Vec<f64> = traj.states.iter().map(|u| u.norm()).collect();
    traj.grid.weighted_lp(&vals, p)
}

/// L^p-in-time norm measured in the D scale ||(I+R) u(t)||.
pub fn lp_domain_norm(traj: &Trajectory, dnorm: &DNorm, p: f64) -> f64 {
    let vals: Vec<f64> = traj.states.iter().map(|u| dnorm.norm(u)).collect();
    traj.grid.weighted_lp(&vals, p)
}

/// ||u||_{L^p} + ||u'||_{L^p}, the first-order part of the regularity norm.
/// The derivative is the trajectory's difference quotient.
pub fn w1p_norm(traj: &Trajectory, p: f64) -> f64 {
    let dvals: Vec<f64> = traj.derivative().iter().map(|u| u.norm()).collect();
    lp_state_norm(traj, p) + traj.grid.weighted_lp(&dvals, p)
}

/// Components of the parabolic regularity norm, kept separate so reports can
/// show where a trajectory's size lives.
#[derive(Clone, Copy, Debug)]
pub struct MrNorm {
    pub lp_state: f64,
    pub lp_derivative: f64,
    pub lp_domain: f64,
    pub total: f64,
}

/// ||u||_{L^p(X)} + ||u'||_{L^p(X)} + ||u||_{L^p(D)}; the additive form, so
/// each term is readable on its own.
pub fn mr_norm(traj: &Trajectory, dnorm: &DNorm, p: f64) -> MrNorm {
    let dvals: Vec<f64> = traj.derivative().iter().map(|u| u.norm()).collect();
    let lp_state = lp_state_norm(traj, p);
    let lp_derivative = traj.grid.weighted_lp(&dvals, p);
    let lp_domain = lp_domain_norm(traj, dnorm, p);
    MrNorm {
        lp_state,
        lp_derivative,
        lp_domain,
        total: lp_state + lp_derivative + lp_domain,
    }
}

/// Quadratic K-functional between the state norm and the D norm,
/// K2(t, x)^2 = min_y ( ||x - y||^2 + t^2 ||y||_D^2 ). The minimizer is
/// diagonal in the reference eigenbasis, giving the closed form
/// sum_i xhat_i^2 t^2 b_i^2 / (1 + t^2 b_i^2) with b_i = 1 + mu_i.
pub fn k2(t: f64, x: &Vector, dnorm: &DNorm) -> f64 {
    let coords = dnorm.eig().coords(x);
    let mut acc = 0.0;
    for (xh, b) in coords.iter().zip(dnorm.betas()) {
        let tb2 = (t * b) * (t * b);
        acc += xh * xh * tb2 / (1.0 + tb2);
    }
    acc.sqrt()
}

const TRACE_GRID_LO: f64 = 1e-8;
const TRACE_GRID_HI: f64 = 1e8;
const TRACE_GRID_POINTS: usize = 400;

/// Trace-scale norm of an initial value at exponent p:
/// ( integral over t>0 of (t^{-theta} K2(t, x))^p dt/t )^{1/p},
/// theta = 1 - 1/p. Quadrature runs on a fixed log grid; outside it, K2 is
/// linear in t near zero and saturates at ||x|| for large t, and both tail
/// integrals are added in closed form.
pub fn trace_norm(x: &Vector, dnorm: &DNorm, p: f64) -> Result<f64> {
    if !(p > 1.0) || !p.is_finite() {
        return Err(Error::BadExponent {
            what: "trace exponent p",
            value: p,
        });
    }
    if x.norm() == 0.0 {
        return Ok(0.0);
    }
    let theta = 1.0 - 1.0 / p;
    let ts = log_spaced(TRACE_GRID_LO, TRACE_GRID_HI, TRACE_GRID_POINTS)?;
    // Integrate in u = ln t: integrand (t^{-theta} K2)^p dt/t = g(u) du.
    let us: Vec<f64> = ts.iter().map(|t| t.ln()).collect();
    let gs: Vec<f64> = ts
        .iter()
        .map(|&t| (t.powf(-theta) * k2(t, x, dnorm)).powf(p))
        .collect();
    let body = trapezoid(&us, &gs);

    // t < lo: K2(t, x) -> t ||(I+R) x||, so the integrand is c0^p t^{p-theta*p-1}
    // = c0^p (exponent 0 in u after the dt/t): integral = c0^p lo^{(1-theta)p}/((1-theta)p).
    let c0 = dnorm.norm(x);
    let low_pow = (1.0 - theta) * p;
    let low_tail = c0.powf(p) * TRACE_GRID_LO.powf(low_pow) / low_pow;

    // t > hi: K2 -> ||x||; integral of c_inf^p t^{-theta p - 1} dt from hi.
    let cinf = x.norm();
    let high_pow = theta * p;
    let high_tail = cinf.powf(p) * TRACE_GRID_HI.powf(-high_pow) / high_pow;

    Ok((body + low_tail + high_tail).powf(1.0 / p))
}
