//! Flat `key = value` experiment configuration. Lines hold one assignment
//! each, `#` starts a comment, nested knobs use dotted keys (`family.tag`,
//! `domain.gamma1`). Parsing is pure text -> struct; file loading and family
//! construction live with the caller.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::evolution::Method;
use crate::family::ScalarProfile;
use crate::pde::Side;

pub const DEFAULT_SEED: u64 = 42;

/// Box domain request: either a spec file path or inline mesh keys.
#[derive(Clone, Debug)]
pub struct DomainConfig {
    pub file: Option<String>,
    pub dim: usize,
    pub mx: usize,
    pub my: usize,
    pub gamma1: Vec<Side>,
}

#[derive(Clone, Debug)]
pub enum FamilyConfig {
    Scalar(ScalarProfile),
    /// Scalar profile times one seeded SPD matrix of the given dimension.
    MatrixProfile { profile: ScalarProfile, dim: usize },
    Snapshot { path: String },
    /// a(t) = a0 + a1 t times the Laplacian plus potential q(t) = q0 + q1 t.
    Elliptic {
        domain: DomainConfig,
        a0: f64,
        a1: f64,
        q0: f64,
        q1: f64,
    },
    /// L + b(t) L^alpha with b(t) = b0 + b1 t.
    Fractional {
        domain: DomainConfig,
        alpha: f64,
        b0: f64,
        b1: f64,
        force: bool,
    },
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub family: FamilyConfig,
    /// Whether `family.tag` was given explicitly; commands that fix their own
    /// model reject a conflicting explicit choice but tolerate the default.
    pub family_set: bool,
    pub tau: f64,
    /// Whether `tau` was given explicitly (snapshot families otherwise adopt
    /// the horizon recorded in the data).
    pub tau_set: bool,
    pub steps: usize,
    /// Whether `steps` was given explicitly (commands with a heavier default
    /// resolution keep an explicit choice).
    pub steps_set: bool,
    /// Propagator for table-driven experiments.
    pub method: Method,
    pub anchors: Vec<f64>,
    pub p: f64,
    pub theta: f64,
    pub alpha: f64,
    pub samples: usize,
    pub probes: usize,
    pub lags: usize,
    pub picard_max_iter: usize,
    pub picard_tol: f64,
    pub seed: u64,
    pub out_dir: String,
}

fn bad(key: &str, msg: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        msg: msg.into(),
    }
}

/// Raw assignments plus consumption tracking, so leftover keys surface as
/// errors naming the key instead of being silently ignored.
struct Raw {
    map: BTreeMap<String, String>,
    used: BTreeSet<String>,
}

impl Raw {
    fn parse(text: &str) -> Result<Raw> {
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                bad(&format!("line {}", lineno + 1), "expected `key = value`")
            })?;
            let key = key.trim();
            let value = value.trim();
            if key.is_empty() {
                return Err(bad(&format!("line {}", lineno + 1), "empty key"));
            }
            if value.is_empty() {
                return Err(bad(key, "empty value"));
            }
            if map.insert(key.to_string(), value.to_string()).is_some() {
                return Err(bad(key, "duplicate assignment"));
            }
        }
        Ok(Raw {
            map,
            used: BTreeSet::new(),
        })
    }

    fn get(&mut self, key: &str) -> Option<&str> {
        match self.map.get(key) {
            Some(v) => {
                self.used.insert(key.to_string());
                Some(v.as_str())
            }
            None => None,
        }
    }

    fn has(&self, key: &str) -> bool {
        self.map.contains_key(key)
    }

    fn f64_or(&mut self, key: &str, default: f64) -> Result<f64> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => {
                let x: f64 = v
                    .parse()
                    .map_err(|_| bad(key, format!("`{v}` is not a number")))?;
                if !x.is_finite() {
                    return Err(bad(key, "must be finite"));
                }
                Ok(x)
            }
        }
    }

    fn usize_or(&mut self, key: &str, default: usize) -> Result<usize> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| bad(key, format!("`{v}` is not a non-negative integer"))),
        }
    }

    fn u64_or(&mut self, key: &str, default: u64) -> Result<u64> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| bad(key, format!("`{v}` is not a non-negative integer"))),
        }
    }

    fn bool_or(&mut self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(v) => Err(bad(key, format!("`{v}` is not `true` or `false`"))),
        }
    }

    fn string_or(&mut self, key: &str, default: &str) -> String {
        self.get(key).unwrap_or(default).to_string()
    }

    fn f64_list_or(&mut self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        match self.get(key) {
            None => Ok(default.to_vec()),
            Some(v) => {
                let mut out = Vec::new();
                for part in v.split(',') {
                    let part = part.trim();
                    let x: f64 = part
                        .parse()
                        .map_err(|_| bad(key, format!("`{part}` is not a number")))?;
                    if !x.is_finite() {
                        return Err(bad(key, "entries must be finite"));
                    }
                    out.push(x);
                }
                Ok(out)
            }
        }
    }

    fn finish(self) -> Result<()> {
        for key in self.map.keys() {
            if !self.used.contains(key) {
                return Err(bad(key, "unknown key"));
            }
        }
        Ok(())
    }
}

fn parse_sides(raw: &mut Raw, key: &str, default: &[Side]) -> Result<Vec<Side>> {
    match raw.get(key) {
        None => Ok(default.to_vec()),
        Some(v) => {
            let mut out = Vec::new();
            for part in v.split(',') {
                let part = part.trim();
                let side = Side::parse(part)
                    .ok_or_else(|| bad(key, format!("`{part}` is not a boundary side")))?;
                if out.contains(&side) {
                    return Err(bad(key, format!("side `{part}` listed twice")));
                }
                out.push(side);
            }
            Ok(out)
        }
    }
}

fn parse_domain(raw: &mut Raw) -> Result<DomainConfig> {
    let file = raw.get("domain.file").map(str::to_string);
    let dim = raw.usize_or("domain.dim", 1)?;
    if dim != 1 && dim != 2 {
        return Err(bad("domain.dim", "must be 1 or 2"));
    }
    let m = raw.usize_or("domain.m", 64)?;
    let mx = raw.usize_or("domain.mx", m)?;
    let my = raw.usize_or("domain.my", m)?;
    if mx == 0 || my == 0 {
        return Err(bad("domain.m", "mesh must have at least one interior node"));
    }
    let gamma1 = parse_sides(raw, "domain.gamma1", &[Side::Right])?;
    if dim == 1 {
        for s in &gamma1 {
            if matches!(s, Side::Bottom | Side::Top) {
                return Err(bad("domain.gamma1", "bottom/top need domain.dim = 2"));
            }
        }
    }
    Ok(DomainConfig {
        file,
        dim,
        mx,
        my,
        gamma1,
    })
}

fn parse_profile(raw: &mut Raw, tag: &str, tau: f64) -> Result<ScalarProfile> {
    let a0 = raw.f64_or("family.a0", 1.0)?;
    match tag {
        "constant" => Ok(ScalarProfile::Constant { a0 }),
        "affine" => Ok(ScalarProfile::Affine {
            a0,
            rate: raw.f64_or("family.rate", 0.5)?,
        }),
        "hoelder" => {
            let alpha = raw.f64_or("family.alpha", 0.5)?;
            if !(alpha > 0.0 && alpha <= 1.0) {
                return Err(bad("family.alpha", "must lie in (0, 1]"));
            }
            Ok(ScalarProfile::Hoelder {
                a0,
                amplitude: raw.f64_or("family.amplitude", 0.5)?,
                alpha,
            })
        }
        "jump" => {
            let lo = raw.f64_or("family.lo", 1.0)?;
            let hi = raw.f64_or("family.hi", 2.0)?;
            let at = raw.f64_or("family.at", 0.5 * tau)?;
            if !(at > 0.0 && at < tau) {
                return Err(bad("family.at", "jump time must lie inside (0, tau)"));
            }
            Ok(ScalarProfile::Jump { lo, hi, at })
        }
        _ => unreachable!("caller matched the tag"),
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut raw = Raw::parse(text)?;

    let tau_set = raw.has("tau");
    let tau = raw.f64_or("tau", 1.0)?;
    if !(tau > 0.0) {
        return Err(bad("tau", "horizon must be positive"));
    }
    let steps_set = raw.has("steps");
    let steps = raw.usize_or("steps", 128)?;
    if steps < 8 {
        return Err(bad("steps", "need at least 8 time steps"));
    }
    let anchors = raw.f64_list_or("anchors", &[0.0])?;
    for &s in &anchors {
        if !(0.0..tau).contains(&s) {
            return Err(bad("anchors", format!("anchor {s} outside [0, tau)")));
        }
    }

    let p = raw.f64_or("p", 2.0)?;
    if !(p > 1.0) {
        return Err(bad("p", "exponent must exceed 1"));
    }
    let theta = raw.f64_or("theta", 2.0)?;
    if !(theta > 1.0) {
        return Err(bad("theta", "exponent must exceed 1"));
    }
    let alpha = raw.f64_or("alpha", 0.75)?;
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(bad("alpha", "must lie in (0, 1]"));
    }

    let samples = raw.usize_or("samples", 16)?;
    if samples == 0 {
        return Err(bad("samples", "need at least one state sample"));
    }
    let probes = raw.usize_or("probes", 16)?;
    if probes < 8 {
        return Err(bad("probes", "forcing probe budget floor is 8"));
    }
    let lags = raw.usize_or("lags", 24)?;
    if lags < 4 {
        return Err(bad("lags", "need at least 4 modulus lags"));
    }
    let picard_max_iter = raw.usize_or("picard.max_iter", 64)?;
    if picard_max_iter == 0 {
        return Err(bad("picard.max_iter", "need at least one sweep"));
    }
    let picard_tol = raw.f64_or("picard.tol", 1e-10)?;
    if !(picard_tol > 0.0) {
        return Err(bad("picard.tol", "tolerance must be positive"));
    }
    let seed = raw.u64_or("seed", DEFAULT_SEED)?;
    let out_dir = raw.string_or("out", "out");
    let method = match raw.get("method") {
        None | Some("picard") => Method::DuhamelPicard,
        Some("frozen") => Method::FrozenProduct,
        Some("reference") => Method::OdeReference,
        Some(v) => {
            return Err(bad(
                "method",
                format!("`{v}` is not one of picard, frozen, reference"),
            ))
        }
    };

    let family_set = raw.has("family.tag");
    let tag = raw.string_or("family.tag", "constant");
    let family = match tag.as_str() {
        "constant" | "affine" | "hoelder" | "jump" => {
            let profile = parse_profile(&mut raw, &tag, tau)?;
            let dim = raw.usize_or("family.dim", 1)?;
            if dim == 0 {
                return Err(bad("family.dim", "state dimension must be positive"));
            }
            if dim == 1 {
                FamilyConfig::Scalar(profile)
            } else {
                FamilyConfig::MatrixProfile { profile, dim }
            }
        }
        "snapshot" => FamilyConfig::Snapshot {
            path: raw
                .get("family.snapshot")
                .map(str::to_string)
                .ok_or_else(|| bad("family.snapshot", "snapshot families need a file path"))?,
        },
        "elliptic" => FamilyConfig::Elliptic {
            domain: parse_domain(&mut raw)?,
            a0: raw.f64_or("family.a0", 1.0)?,
            a1: raw.f64_or("family.a1", 0.0)?,
            q0: raw.f64_or("family.q0", 0.0)?,
            q1: raw.f64_or("family.q1", 0.0)?,
        },
        "fractional" => {
            let falpha = raw.f64_or("family.alpha", 0.3)?;
            FamilyConfig::Fractional {
                domain: parse_domain(&mut raw)?,
                alpha: falpha,
                b0: raw.f64_or("family.b0", 0.5)?,
                b1: raw.f64_or("family.b1", 0.5)?,
                force: raw.bool_or("family.force", false)?,
            }
        }
        other => {
            return Err(bad(
                "family.tag",
                format!(
                    "`{other}` is not one of constant, affine, hoelder, jump, snapshot, elliptic, fractional"
                ),
            ))
        }
    };

    raw.finish()?;
    Ok(ExperimentConfig {
        family,
        family_set,
        tau,
        tau_set,
        steps,
        steps_set,
        method,
        anchors,
        p,
        theta,
        alpha,
        samples,
        probes,
        lags,
        picard_max_iter,
        picard_tol,
        seed,
        out_dir,
    })
}
