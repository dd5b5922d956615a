//! End-to-end acceptance checks for the whole workspace. Each criterion
//! prints exactly one PASS/FAIL line with its elapsed time; the test fails
//! if any line fails. Tolerances are pinned here, next to the check that
//! uses them.

use std::process::Command;
use std::time::Instant;

use evofam_core::admissibility::{self, GammaMethod, ObservationOp};
use evofam_core::error::{Error, Result};
use evofam_core::evolution::{self, EvolutionTable, Method};
use evofam_core::family::{self, DiniVerdict, OperatorFamily, ScalarProfile};
use evofam_core::grid::{self, TimeGrid};
use evofam_core::linalg::{spd_eig, Matrix};
use evofam_core::maxreg;
use evofam_core::pde::{self, Side};
use evofam_core::sampling;
use evofam_core::semigroup;

const PICARD: (usize, f64) = (64, 1e-10);

/// Fixed symmetric positive coupling so matrix-profile families are
/// reproducible across criteria.
fn coupling(dim: usize) -> Matrix {
    let mut rng = sampling::seeded_rng(0xBA5E);
    sampling::random_spd(&mut rng, dim, 1.0)
}

fn matrix_family(profile: ScalarProfile, dim: usize, tau: f64) -> Result<OperatorFamily> {
    family::build_profile_matrix_family(profile, coupling(dim), tau)
}

fn elliptic_potential(m: usize) -> Result<OperatorFamily> {
    let domain = pde::GridDomain::line(m, &[Side::Right])?;
    pde::elliptic_family(
        &domain,
        |t, _| 1.0 + 0.3 * t,
        |t, _| -(0.5 + 0.5 * t),
        None,
        1.0,
    )
}

fn fractional_boundary(m: usize) -> Result<(OperatorFamily, ObservationOp)> {
    let domain = pde::GridDomain::line(m, &[Side::Right])?;
    let built = pde::fractional_family(&domain, 0.3, |t| 0.5 + 0.5 * t, 1.0, false)?;
    let c = pde::boundary_trace(&domain)?;
    Ok((built.family, c))
}

fn table_for(f: &OperatorFamily, steps: usize, method: Method) -> Result<EvolutionTable> {
    let grid = TimeGrid::uniform(0.0, f.tau(), steps)?;
    match method {
        Method::OdeReference => evolution::propagate_reference(f, &grid),
        Method::FrozenProduct => evolution::propagate_frozen_product(f, &grid),
        Method::DuhamelPicard => evolution::duhamel_picard(f, &grid, 0.0, PICARD.0, PICARD.1),
    }
}

// 1. Composition defect of the two-parameter tables stays within 10x the
//    method's own error estimate, across five family types.
fn c01_cocycle() -> Result<(bool, String)> {
    let cases: Vec<(&str, OperatorFamily, Method, usize)> = vec![
        (
            "constant",
            matrix_family(ScalarProfile::Constant { a0: 1.0 }, 4, 1.0)?,
            Method::OdeReference,
            128,
        ),
        (
            "lipschitz",
            matrix_family(
                ScalarProfile::Affine {
                    a0: 1.0,
                    rate: 0.8,
                },
                4,
                1.0,
            )?,
            Method::DuhamelPicard,
            128,
        ),
        (
            "hoelder",
            matrix_family(
                ScalarProfile::Hoelder {
                    a0: 1.0,
                    amplitude: 0.5,
                    alpha: 0.5,
                },
                4,
                1.0,
            )?,
            Method::OdeReference,
            128,
        ),
        (
            "elliptic",
            elliptic_potential(10)?,
            Method::DuhamelPicard,
            128,
        ),
        (
            "fractional",
            fractional_boundary(16)?.0,
            Method::FrozenProduct,
            128,
        ),
    ];
    let mut detail = String::new();
    let mut ok = true;
    for (name, f, method, steps) in &cases {
        let table = table_for(f, *steps, *method)?;
        let defect = table.cocycle_defect(200, 0xC0C1)?;
        let cap = 10.0 * table.tolerance().max(1e-12);
        ok &= defect <= cap;
        detail.push_str(&format!("{name}={defect:.2e}/{cap:.2e} "));
    }
    Ok((ok, detail))
}

// 2. The three propagation methods agree within twice their combined error
//    estimates, and two of them hit a scalar closed form to 1e-6.
fn c02_cross_method() -> Result<(bool, String)> {
    let mut ok = true;
    let mut detail = String::new();
    let profiles = vec![
        ("constant", ScalarProfile::Constant { a0: 1.0 }),
        (
            "lipschitz",
            ScalarProfile::Affine {
                a0: 1.0,
                rate: 0.8,
            },
        ),
        (
            "hoelder",
            ScalarProfile::Hoelder {
                a0: 1.0,
                amplitude: 0.5,
                alpha: 0.5,
            },
        ),
    ];
    for (name, profile) in profiles {
        let f = matrix_family(profile, 4, 1.0)?;
        let r = table_for(&f, 256, Method::OdeReference)?;
        let z = table_for(&f, 256, Method::FrozenProduct)?;
        let p = table_for(&f, 256, Method::DuhamelPicard)?;
        let mut worst = 0.0f64;
        let pairs = [(&r, &p), (&r, &z), (&p, &z)];
        for (a, b) in pairs {
            let cap = 2.0 * (a.tolerance() + b.tolerance());
            for j in 0..=256 {
                let d = (&a.u(j, 0)? - &b.u(j, 0)?).max_abs();
                worst = worst.max(d / cap);
            }
        }
        ok &= worst <= 1.0;
        detail.push_str(&format!("{name}={worst:.2} "));
    }

    // Scalar a(t) = 1 + t integrates in closed form; the reference and the
    // fixed-point routes must land within 1e-6 absolute at 1024 steps.
    let f = family::build_scalar_family(
        ScalarProfile::Affine {
            a0: 1.0,
            rate: 1.0,
        },
        1.0,
    )?;
    let grid = TimeGrid::uniform(0.0, 1.0, 1024)?;
    let r = evolution::propagate_reference(&f, &grid)?;
    let p = evolution::duhamel_picard(&f, &grid, 0.0, PICARD.0, PICARD.1)?;
    let mut worst = 0.0f64;
    for (j, &t) in grid.nodes().iter().enumerate() {
        let exact = (-t - 0.5 * t * t).exp();
        worst = worst.max((r.u(j, 0)?.get(0, 0) - exact).abs());
        worst = worst.max((p.u(j, 0)?.get(0, 0) - exact).abs());
    }
    ok &= worst <= 1e-6;
    detail.push_str(&format!("closed_form={worst:.2e}"));
    Ok((ok, detail))
}

// 3. Modulus integral threshold: finite below the critical exponent,
//    diverging above it, with truncated integrals growing under lag-grid
//    refinement when divergent.
fn c03_dini_threshold() -> Result<(bool, String)> {
    let mut ok = true;
    let mut detail = String::new();
    for alpha in [0.3, 0.5, 0.75] {
        let f = family::build_scalar_family(
            ScalarProfile::Hoelder {
                a0: 1.0,
                amplitude: 0.5,
                alpha,
            },
            1.0,
        )?;
        let critical = 1.0 / (1.0 - alpha);
        let p_fin = 0.5 * (1.0 + critical);
        let p_div = critical + 0.25;
        let lags = family::default_lag_grid(1.0, 24)?;
        let fin = family::dini_report(&f, &lags, p_fin)?;
        let div = family::dini_report(&f, &lags, p_div)?;
        let verdicts =
            fin.verdict == DiniVerdict::Finite && div.verdict == DiniVerdict::Diverging;

        // Truncated quadrature must keep growing as the smallest lag drops;
        // each refinement shrinks it by 1e4.
        let mut grow = true;
        let mut prev = f64::NAN;
        for k in 0..3 {
            let h_min = 1e-2 * 1e-4f64.powi(k);
            let lags = grid::log_spaced(h_min, 1.0, 40)?;
            let est = family::relative_modulus(&f, &lags)?;
            let trunc = family::dini_integral(&est, p_div, 1.0)?.truncated;
            if k > 0 {
                grow &= trunc >= 1.5 * prev;
            }
            prev = trunc;
        }
        ok &= verdicts && grow;
        detail.push_str(&format!(
            "a={alpha}:{}{} ",
            if verdicts { "v" } else { "V!" },
            if grow { "g" } else { "G!" }
        ));
    }
    Ok((ok, detail))
}

// 4. Measured uniform resolvent constant matches the spectral closed form on
//    symmetric families, with an empty violation list on the closed right
//    half plane.
fn c04_resolvent() -> Result<(bool, String)> {
    let mut rng = sampling::seeded_rng(0x4E50);
    let fams: Vec<(&str, OperatorFamily)> = vec![
        (
            "random_spd",
            OperatorFamily::autonomous(sampling::random_spd(&mut rng, 8, 2.0), 1.0)?,
        ),
        (
            "lipschitz",
            matrix_family(
                ScalarProfile::Affine {
                    a0: 1.0,
                    rate: 0.8,
                },
                6,
                1.0,
            )?,
        ),
        ("elliptic", elliptic_potential(8)?),
    ];
    let mut ok = true;
    let mut detail = String::new();
    for (name, f) in &fams {
        let t_grid: Vec<f64> = TimeGrid::uniform(0.0, f.tau(), 16)?.nodes().to_vec();
        let r_max = 4.0 * (1.0 + f.sup_op_norm());
        let lambda = semigroup::half_plane_samples(0.0, r_max, 12, 9);
        let rep = semigroup::resolvent_scan(f, &t_grid, &lambda)?;
        let mut oracle = 0.0f64;
        for &t in &t_grid {
            let eig = spd_eig(&f.eval(t))?;
            for &(re, im) in &rep.lambda_samples {
                let dist = eig
                    .eigenvalues()
                    .iter()
                    .map(|&mu| ((re + mu).powi(2) + im * im).sqrt())
                    .fold(f64::INFINITY, f64::min);
                oracle = oracle.max((1.0 + (re * re + im * im).sqrt()) / dist);
            }
        }
        let gap = (rep.m0 - oracle).abs();
        let good = rep.violation_free() && gap <= 1e-6 * oracle.max(1.0);
        ok &= good;
        detail.push_str(&format!("{name}={gap:.1e}/{} ", rep.violations.len()));
    }
    Ok((ok, detail))
}

// 5. Deviation-from-frozen bound with measured constants (inflated 1.1x)
//    holds for 64 seeded unit states on every family.
fn c05_deviation() -> Result<(bool, String)> {
    let cases: Vec<(&str, OperatorFamily, Method, usize, f64)> = vec![
        (
            "constant",
            matrix_family(ScalarProfile::Constant { a0: 1.0 }, 4, 1.0)?,
            Method::OdeReference,
            256,
            2.0,
        ),
        (
            "lipschitz",
            matrix_family(
                ScalarProfile::Affine {
                    a0: 1.0,
                    rate: 0.5,
                },
                4,
                1.0,
            )?,
            Method::OdeReference,
            256,
            2.0,
        ),
        (
            "hoelder",
            matrix_family(
                ScalarProfile::Hoelder {
                    a0: 1.0,
                    amplitude: 0.5,
                    alpha: 0.5,
                },
                4,
                1.0,
            )?,
            Method::OdeReference,
            256,
            1.5,
        ),
        (
            "elliptic",
            elliptic_potential(10)?,
            Method::DuhamelPicard,
            128,
            2.0,
        ),
        (
            "fractional",
            fractional_boundary(12)?.0,
            Method::DuhamelPicard,
            128,
            2.0,
        ),
    ];
    let mut ok = true;
    let mut detail = String::new();
    for (name, f, method, steps, p) in &cases {
        let table = table_for(f, *steps, *method)?;
        let rep = maxreg::deviation_inequality_check(&table, 0.0, *p, 64, 0xDE7)?;
        ok &= rep.pass;
        detail.push_str(&format!(
            "{name}={:.2} ",
            rep.worst / (rep.rhs_unit + rep.slack)
        ));
    }
    Ok((ok, detail))
}

// 6. Zero-time trace estimate: 100 random initial value / forcing pairs on
//    an autonomous symmetric family, all inside the bound at 1.1x the
//    measured regularity constant.
fn c06_initial_value() -> Result<(bool, String)> {
    let mut rng = sampling::seeded_rng(0x60);
    let a = sampling::random_spd(&mut rng, 8, 1.5);
    let f = OperatorFamily::autonomous(a.clone(), 1.0)?;
    let grid = TimeGrid::uniform(0.0, 1.0, 256)?;
    let c_emp = maxreg::mr_constant(&f, &grid, 2.0, 16, 0x61)?.c_emp;
    let mut pass_count = 0usize;
    let mut worst = 0.0f64;
    for k in 0..100 {
        let x = sampling::random_vector(&mut rng, 8);
        let v0 = sampling::random_vector(&mut rng, 8);
        let v1 = sampling::random_vector(&mut rng, 8);
        let w = 2.0 * std::f64::consts::PI * (1.0 + (k % 5) as f64);
        let forcing = move |t: f64| &v0 * (w * t).sin() + &v1 * (w * t).cos();
        let chk = maxreg::check_initial_value_estimate(&a, &grid, 2.0, &x, &forcing, 1.1 * c_emp)?;
        if chk.pass {
            pass_count += 1;
        }
        if chk.rhs > 0.0 {
            worst = worst.max(chk.lhs / chk.rhs);
        }
    }
    Ok((
        pass_count == 100,
        format!("pass={pass_count}/100 worst_ratio={worst:.2}"),
    ))
}

// 7. Output-energy equivalence between the frozen and the time-varying
//    routes holds sample-by-sample on both boundary-value models.
fn c07_equivalence() -> Result<(bool, String)> {
    let (frac, c_frac) = fractional_boundary(64)?;
    let rep_f = admissibility::equivalence_experiment_with(
        &frac,
        &c_frac,
        2.0,
        &[0.0, 0.25, 0.5],
        8,
        42,
        128,
        PICARD,
        Method::FrozenProduct,
    )?;
    let ell = elliptic_potential(10)?;
    let domain = pde::GridDomain::line(10, &[Side::Right])?;
    let c_ell = pde::boundary_trace(&domain)?;
    let rep_e = admissibility::equivalence_experiment_with(
        &ell,
        &c_ell,
        2.0,
        &[0.0, 0.5],
        8,
        42,
        128,
        PICARD,
        Method::DuhamelPicard,
    )?;
    let finite = rep_f
        .anchors
        .iter()
        .chain(rep_e.anchors.iter())
        .all(|a| a.gamma_nonautonomous.is_finite() && a.gamma_frozen.is_finite());
    let ok = rep_f.hypothesis_ok && rep_f.all_pass && rep_e.hypothesis_ok && rep_e.all_pass && finite;
    let worst = |r: &admissibility::EquivalenceReport| {
        r.anchors
            .iter()
            .map(|a| a.worst_forward.max(a.worst_reverse))
            .fold(0.0f64, f64::max)
    };
    Ok((
        ok,
        format!(
            "fractional={}/{:.3} elliptic={}/{:.3}",
            rep_f.samples.len(),
            worst(&rep_f),
            rep_e.samples.len(),
            worst(&rep_e),
        ),
    ))
}

// 8. Singular-kernel chain: closed-form integral value and a passing chain
//    inside the admissible exponent range; demonstrable divergence outside.
fn c08_hoelder_chain() -> Result<(bool, String)> {
    let f = matrix_family(
        ScalarProfile::Hoelder {
            a0: 1.0,
            amplitude: 0.5,
            alpha: 0.75,
        },
        4,
        1.0,
    )?;
    let c = ObservationOp::identity(4);
    let in_range = admissibility::hoelder_chain_check(&f, &c, 2.0, 0.0, 0.75, 8, 42, 128, PICARD)?;
    let chain = in_range.chain.as_ref().ok_or(Error::Domain {
        msg: "chain branch missing at p = 2".into(),
    })?;
    let exact_ok = chain.singular_exact == 2.0;
    let out_range = admissibility::hoelder_chain_check(&f, &c, 8.0, 0.0, 0.75, 8, 42, 128, PICARD)?;
    let study = out_range.divergence.as_ref().ok_or(Error::Domain {
        msg: "divergence branch missing at p = 8".into(),
    })?;
    let growth_ok = study.confirmed && study.ratios.iter().all(|r| *r >= 1.5);
    Ok((
        exact_ok && chain.all_pass && growth_ok,
        format!(
            "singular={} chain={} ratios>=1.5 over {} halvings={}",
            chain.singular_exact,
            chain.all_pass,
            study.ratios.len(),
            growth_ok
        ),
    ))
}

// 9. The iterative maximizer agrees with the assembled quadratic form to 1%
//    on random operator/observation pairs.
fn c09_gramian_oracle() -> Result<(bool, String)> {
    let mut rng = sampling::seeded_rng(0xC9);
    let mut ok = true;
    let mut worst = 0.0f64;
    for k in 0..10 {
        let n = 4 + (5 * k) % 13;
        let a = sampling::random_spd(&mut rng, n, 2.0);
        let y_dim = 1 + k % 3;
        let entries = sampling::random_vector(&mut rng, y_dim * n);
        let c = ObservationOp::from_rows(y_dim, n, entries.as_slice())?;
        let grid = TimeGrid::uniform(0.0, 1.0, 256)?;
        let asc = admissibility::gamma_frozen_with(&a, &c, 1.0, 2.0, &grid, GammaMethod::Ascent)?;
        let gram = admissibility::gamma_frozen_with(&a, &c, 1.0, 2.0, &grid, GammaMethod::Gramian)?;
        let rel = (asc.gamma - gram.gamma).abs() / gram.gamma;
        worst = worst.max(rel);
        ok &= rel <= 0.01;
    }
    Ok((ok, format!("worst_rel={worst:.2e} over 10 pairs")))
}

// 10. Same config, same seed, different worker counts: every emitted CSV is
//     byte-identical between the two runs.
fn c10_determinism() -> Result<(bool, String)> {
    let bin = env!("CARGO_BIN_EXE_evofam");
    let root = std::env::temp_dir().join(format!("evofam-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&root)?;
    let cfg = root.join("showcase.cfg");
    std::fs::write(
        &cfg,
        "family.tag = fractional\ntau = 1.0\nsteps = 256\nanchors = 0, 0.25, 0.5\nsamples = 8\nseed = 42\n",
    )?;
    let mut times = Vec::new();
    for threads in ["1", "8"] {
        let out_dir = root.join(format!("out{threads}"));
        let t0 = Instant::now();
        let status = Command::new(bin)
            .args(["example-s4", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out_dir)
            .env("EVOFAM_THREADS", threads)
            .status()?;
        times.push(t0.elapsed().as_secs_f64());
        if !status.success() {
            return Ok((false, format!("run with {threads} workers exited {status}")));
        }
    }
    let mut names: Vec<String> = std::fs::read_dir(root.join("out1"))?
        .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect::<std::io::Result<_>>()?;
    names.sort();
    let mut identical = !names.is_empty();
    for name in &names {
        let a = std::fs::read(root.join("out1").join(name))?;
        let b = match std::fs::read(root.join("out8").join(name)) {
            Ok(b) => b,
            Err(_) => {
                identical = false;
                break;
            }
        };
        identical &= a == b;
    }
    let detail = format!(
        "{} files compared, runs {:.1}s/{:.1}s",
        names.len(),
        times[0],
        times[1]
    );
    let _ = std::fs::remove_dir_all(&root);
    Ok((identical, detail))
}

#[test]
fn acceptance() {
    type Criterion = fn() -> Result<(bool, String)>;
    // (name, runtime budget in seconds, check); budget overruns fail.
    let specs: Vec<(&str, f64, Criterion)> = vec![
        ("cocycle defect within method tolerance", 10.0, c01_cocycle),
        ("cross-method agreement and closed form", 10.0, c02_cross_method),
        ("modulus integral threshold and growth", 5.0, c03_dini_threshold),
        ("uniform resolvent bound vs spectral oracle", 10.0, c04_resolvent),
        ("frozen-deviation bound, measured constants", 30.0, c05_deviation),
        ("initial value estimate on random pairs", 20.0, c06_initial_value),
        ("output-energy equivalence on both models", 60.0, c07_equivalence),
        ("singular chain: closed form and divergence", 20.0, c08_hoelder_chain),
        ("iterative maximizer vs assembled form", 10.0, c09_gramian_oracle),
        ("byte-identical reruns across worker counts", 60.0, c10_determinism),
    ];
    let mut all = true;
    for (i, (name, budget, check)) in specs.iter().enumerate() {
        let t0 = Instant::now();
        let outcome = check();
        let dt = t0.elapsed().as_secs_f64();
        let (pass, detail) = match outcome {
            Ok((p, d)) => (p, d),
            Err(e) => (false, format!("error: {e}")),
        };
        let timely = dt <= *budget;
        let verdict = if pass && timely { "PASS" } else { "FAIL" };
        let overrun = if timely { "" } else { " [over budget]" };
        println!("criterion {:2}: {verdict} {name} [{dt:.1}s]{overrun} {detail}", i + 1);
        all &= pass && timely;
    }
    assert!(all, "at least one acceptance criterion failed");
}
