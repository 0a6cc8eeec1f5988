//! Double-well potentials split as `f = beta_hat + pi_hat`, with `beta` the
//! monotone (convex) part and `pi` the smooth concave perturbation, plus
//! their Yosida regularizations.
//!
//! | family      | `beta`          | `pi`         | domain of `beta` |
//! |-------------|-----------------|--------------|------------------|
//! | regular     | `r^3`           | `-r`         | all reals        |
//! | logarithmic | `2 atanh(r)`    | `-2 c1 r`    | `(-1, 1)`        |
//! | obstacle    | `d I_[-1,1]`    | `-2 c2 r`    | `[-1, 1]`        |
//!
//! The surface potential is regularized at level `eta * eps`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Regular,
    Logarithmic,
    Obstacle,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Regular => "regular",
            Family::Logarithmic => "logarithmic",
            Family::Obstacle => "obstacle",
        }
    }

    /// Whether `r` lies in the domain of the (unregularized) `beta`.
    pub fn in_domain(self, r: f64) -> bool {
        match self {
            Family::Regular => r.is_finite(),
            Family::Logarithmic => r.abs() < 1.0,
            Family::Obstacle => r.abs() <= 1.0,
        }
    }

    pub fn in_interior(self, r: f64) -> bool {
        match self {
            Family::Regular => r.is_finite(),
            Family::Logarithmic | Family::Obstacle => r.abs() < 1.0,
        }
    }

    /// Domain inclusion `D(self) ⊆ D(other)`.
    fn domain_within(self, other: Family) -> bool {
        use Family::*;
        matches!(
            (self, other),
            (_, Regular) | (Logarithmic, Logarithmic | Obstacle) | (Obstacle, Obstacle)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Bulk,
    Surface,
}

/// Bulk and surface potentials with their regularization and compatibility
/// constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PotentialSpec {
    pub bulk: Family,
    pub surface: Family,
    pub c1: f64,
    pub c2: f64,
    pub eps: f64,
    pub eta: f64,
    pub ccc: f64,
    /// Replace `beta` by its Yosida approximation on both sides.
    pub regularize: bool,
}

impl Default for PotentialSpec {
    fn default() -> Self {
        Self {
            bulk: Family::Regular,
            surface: Family::Regular,
            c1: 2.0,
            c2: 1.0,
            eps: 1e-3,
            eta: 1.0,
            ccc: 0.0,
            regularize: true,
        }
    }
}

impl PotentialSpec {
    pub fn regular() -> Self {
        Self::default()
    }

    pub fn with_families(bulk: Family, surface: Family) -> Self {
        Self {
            bulk,
            surface,
            ..Self::default()
        }
    }

    pub fn family(&self, side: Side) -> Family {
        match side {
            Side::Bulk => self.bulk,
            Side::Surface => self.surface,
        }
    }

    /// Regularization level actually used on `side`.
    pub fn eps_on(&self, side: Side) -> f64 {
        match side {
            Side::Bulk => self.eps,
            Side::Surface => self.eta * self.eps,
        }
    }

    /// Concavity constant `c` with `pi(r) = -2 c r`, or 1/2 for regular.
    fn concavity(&self, side: Side) -> f64 {
        match self.family(side) {
            Family::Regular => 0.5,
            Family::Logarithmic => self.c1,
            Family::Obstacle => self.c2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let uses = |f: Family| self.bulk == f || self.surface == f;
        if uses(Family::Logarithmic) && !(self.c1 > 1.0) {
            return Err(Error::param("c1", format!("must exceed 1, got {}", self.c1)));
        }
        if uses(Family::Obstacle) && !(self.c2 > 0.0) {
            return Err(Error::param("c2", format!("must be positive, got {}", self.c2)));
        }
        if !(self.eps > 0.0) {
            return Err(Error::param("eps", format!("must be positive, got {}", self.eps)));
        }
        if !(self.eta > 0.0) {
            return Err(Error::param("eta", format!("must be positive, got {}", self.eta)));
        }
        if !(self.ccc >= 0.0) {
            return Err(Error::param("ccc", format!("must be nonnegative, got {}", self.ccc)));
        }
        if self.regularize {
            for side in [Side::Bulk, Side::Surface] {
                if self.family(side) != Family::Regular
                    && 2.0 * self.concavity(side) * self.eps_on(side) >= 1.0
                {
                    return Err(Error::param(
                        "eps",
                        "regularized potential is unbounded below unless 2 c eps < 1",
                    ));
                }
            }
        }
        Ok(())
    }

    fn is_smooth(&self, side: Side) -> bool {
        self.regularize || self.family(side) == Family::Regular
    }

    fn outside(&self, side: Side, r: f64) -> Error {
        Error::OutsideDomain {
            family: self.family(side).name(),
            r,
        }
    }

    /// Monotone part `beta` (Yosida-regularized when `regularize` is set;
    /// minimal section otherwise).
    pub fn beta(&self, side: Side, r: f64) -> Result<f64> {
        if self.is_smooth(side) {
            return yosida(self, side, self.eps, r);
        }
        if !self.family(side).in_domain(r) {
            return Err(self.outside(side, r));
        }
        Ok(match self.family(side) {
            Family::Regular => r * r * r,
            Family::Logarithmic => 2.0 * r.atanh(),
            Family::Obstacle => 0.0,
        })
    }

    pub fn beta_prime(&self, side: Side, r: f64) -> Result<f64> {
        let fam = self.family(side);
        if fam == Family::Regular {
            return Ok(3.0 * r * r);
        }
        if self.is_smooth(side) {
            let e = self.eps_on(side);
            return Ok(match fam {
                Family::Logarithmic => {
                    let b = log_yosida(e, r);
                    let sech2 = 1.0 / (0.5 * b).cosh().powi(2);
                    1.0 / (e + 0.5 * sech2)
                }
                _ => {
                    if r.abs() > 1.0 {
                        1.0 / e
                    } else {
                        0.0
                    }
                }
            });
        }
        if !fam.in_domain(r) {
            return Err(self.outside(side, r));
        }
        Ok(match fam {
            Family::Logarithmic => 2.0 / (1.0 - r * r),
            _ => 0.0,
        })
    }

    /// Primitive of `beta` with `beta_hat(0) = 0` (Moreau envelope when
    /// regularized).
    pub fn beta_hat(&self, side: Side, r: f64) -> Result<f64> {
        let fam = self.family(side);
        if fam == Family::Regular {
            return Ok(0.25 * r.powi(4));
        }
        if self.is_smooth(side) {
            let e = self.eps_on(side);
            return Ok(match fam {
                Family::Logarithmic => {
                    let b = log_yosida(e, r);
                    log_beta_hat_at(b) + 0.5 * e * b * b
                }
                _ => {
                    let d = r - r.clamp(-1.0, 1.0);
                    d * d / (2.0 * e)
                }
            });
        }
        if !fam.in_domain(r) {
            return Err(self.outside(side, r));
        }
        Ok(match fam {
            Family::Logarithmic => {
                let xlogx = |x: f64| if x > 0.0 { x * x.ln() } else { 0.0 };
                xlogx(1.0 + r) + xlogx(1.0 - r)
            }
            _ => 0.0,
        })
    }

    pub fn pi(&self, side: Side, r: f64) -> f64 {
        -2.0 * self.concavity(side) * r
    }

    pub fn pi_prime(&self, side: Side) -> f64 {
        -2.0 * self.concavity(side)
    }

    /// `pi_hat` normalized so that the regular potential is `(r^2 - 1)^2 / 4`.
    pub fn pi_hat(&self, side: Side, r: f64) -> f64 {
        let base = -self.concavity(side) * r * r;
        if self.family(side) == Family::Regular {
            base + 0.25
        } else {
            base
        }
    }

    /// Analytic lower bound of `f` on the side.
    pub fn lower_bound(&self, side: Side) -> f64 {
        let c = self.concavity(side);
        match self.family(side) {
            Family::Regular => 0.0,
            _ if self.regularize => -c / (1.0 - 2.0 * c * self.eps_on(side)),
            _ => -c,
        }
    }
}

/// `f`, `f'` or `f''` of the potential on `side` at `r`.
pub fn eval_potential(spec: &PotentialSpec, side: Side, r: f64, order: u8) -> Result<f64> {
    match order {
        0 => Ok(spec.beta_hat(side, r)? + spec.pi_hat(side, r)),
        1 => Ok(spec.beta(side, r)? + spec.pi(side, r)),
        2 => Ok(spec.beta_prime(side, r)? + spec.pi_prime(side)),
        _ => Err(Error::param("order", format!("must be 0, 1 or 2, got {order}"))),
    }
}

/// Yosida approximation `beta_eps(r)` of the family on `side`. On the
/// surface the level is `eta * eps`. The regular family is returned
/// unchanged.
pub fn yosida(spec: &PotentialSpec, side: Side, eps: f64, r: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::param("eps", format!("must be positive, got {eps}")));
    }
    let e = match side {
        Side::Bulk => eps,
        Side::Surface => spec.eta * eps,
    };
    Ok(match spec.family(side) {
        Family::Regular => r * r * r,
        Family::Logarithmic => log_yosida(e, r),
        Family::Obstacle => (r - r.clamp(-1.0, 1.0)) / e,
    })
}

/// Solves `tanh(b/2) + e b = r` for `b = beta_e(r)` of `beta = 2 atanh`.
/// This is `s + e beta(s) = r` written in the unknown `b = beta(s)`, which
/// stays regular when the resolvent `s` approaches +-1.
fn log_yosida(e: f64, r: f64) -> f64 {
    if r == 0.0 {
        return 0.0;
    }
    let g = |b: f64| (0.5 * b).tanh() + e * b - r;
    let (mut lo, mut hi) = ((r - 1.0) / e, (r + 1.0) / e);
    // initial guess: the inner (unregularized) value when it is bracketed
    let mut b = if r.abs() < 1.0 {
        (2.0 * r.atanh()).clamp(lo, hi)
    } else {
        0.5 * (lo + hi)
    };
    for _ in 0..200 {
        let gb = g(b);
        if gb == 0.0 {
            return b;
        }
        if gb > 0.0 {
            hi = b;
        } else {
            lo = b;
        }
        let d = 0.5 / (0.5 * b).cosh().powi(2) + e;
        let mut next = b - gb / d;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - b).abs() <= 1e-12 * b.abs().max(1.0) {
            return next;
        }
        b = next;
    }
    b
}

/// `beta_hat(s)` of the logarithmic family at `s = tanh(b/2)`, stable as
/// `|s| -> 1`.
fn log_beta_hat_at(b: f64) -> f64 {
    let b = b.abs();
    let a = (-b).exp();
    let ln2 = std::f64::consts::LN_2;
    let ln1a = a.ln_1p();
    2.0 / (1.0 + a) * (ln2 - ln1a) + 2.0 * a / (1.0 + a) * (ln2 - b - ln1a)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompatibilityReport {
    /// max over samples of `|beta_bulk(r)| - eta |beta_surface(r)|`.
    pub max_excess: f64,
    pub ccc: f64,
    pub domain_ok: bool,
    pub samples_used: usize,
    pub pass: bool,
}

/// Checks `|beta°(r)| <= eta |beta_G°(r)| + C` on the samples lying in the
/// domain of the surface graph, and the inclusion `D(beta_G) ⊆ D(beta)`.
pub fn check_compatibility(spec: &PotentialSpec, samples: &[f64]) -> CompatibilityReport {
    let domain_ok = spec.surface.domain_within(spec.bulk);
    let minimal = |fam: Family, r: f64| -> f64 {
        match fam {
            Family::Regular => r * r * r,
            Family::Logarithmic => 2.0 * r.atanh(),
            Family::Obstacle => 0.0,
        }
    };
    let mut max_excess = f64::NEG_INFINITY;
    let mut used = 0;
    for &r in samples {
        if !spec.surface.in_domain(r) || !spec.bulk.in_domain(r) {
            continue;
        }
        used += 1;
        let ex = minimal(spec.bulk, r).abs() - spec.eta * minimal(spec.surface, r).abs();
        max_excess = max_excess.max(ex);
    }
    let pass = domain_ok && (used == 0 || max_excess <= spec.ccc);
    CompatibilityReport {
        max_excess,
        ccc: spec.ccc,
        domain_ok,
        samples_used: used,
        pass,
    }
}

/// Whether `m0` lies in the interior of the domain of the surface graph.
pub fn check_mean_admissible(m0: f64, spec: &PotentialSpec) -> bool {
    spec.surface.in_interior(m0)
}
