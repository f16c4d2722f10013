//! Riemannian Gaussian `μ(t, x*, x) ∝ exp(-d(x*, x)²/(2t))` with exact
//! rejection samplers on the circle, spheres and SPD matrices.

use std::f64::consts::PI;

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::manifold::{self, spd, Ambient, ManifoldKind, Point, TangentVector};
use crate::quadrature::GaussLegendre;
use crate::special::sphere_area;

/// Default cap on proposals per draw.
pub const DEFAULT_REJECTION_CAP: u64 = 1_000_000;

/// Riemannian Gaussian with center `x*` and variance parameter `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct RGaussian {
    center: Point,
    t: f64,
}

/// A draw together with the number of rejected proposals that preceded it.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub point: Point,
    pub rejections: u64,
}

impl RGaussian {
    pub fn new(center: Point, t: f64) -> Result<Self> {
        if !(t > 0.0 && t.is_finite()) {
            return Err(invalid("t", format!("variance must be positive, got {t}")));
        }
        if let ManifoldKind::Spd(m) = center.kind() {
            if t >= 12.0 / m as f64 {
                return Err(invalid(
                    "t",
                    format!("SPD({m}) sampler needs t < 12/m = {}, got {t}", 12.0 / m as f64),
                ));
            }
        }
        Ok(Self { center, t })
    }

    pub fn center(&self) -> &Point {
        &self.center
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    /// `-d(center, x)²/(2t)`.
    pub fn log_density_unnorm(&self, x: &Point) -> Result<f64> {
        let r = manifold::distance(&self.center, x)?;
        Ok(-r * r / (2.0 * self.t))
    }

    /// Normalizing constant with respect to Riemannian volume (circle and spheres).
    pub fn normalizer(&self) -> Result<f64> {
        let rule = GaussLegendre::new(512);
        radial_normalizer(self.center.kind(), self.t, &rule)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Point> {
        Ok(self.sample_counted(rng, DEFAULT_REJECTION_CAP)?.point)
    }

    /// Exact draw, reporting rejections; errors once `cap` proposals were refused.
    pub fn sample_counted<R: Rng + ?Sized>(&self, rng: &mut R, cap: u64) -> Result<Draw> {
        let mut accept_mass = 0.0;
        for attempt in 0..cap {
            let (candidate, prob) = self.propose(rng)?;
            accept_mass += prob;
            if prob > 0.0 && rng.random::<f64>() < prob {
                return Ok(Draw {
                    point: candidate.expect("positive acceptance implies a candidate"),
                    rejections: attempt,
                });
            }
        }
        Err(Error::RejectionCapExceeded {
            cap,
            acceptance: accept_mass / cap as f64,
        })
    }

    fn propose<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(Option<Point>, f64)> {
        match self.center.kind() {
            ManifoldKind::Circle | ManifoldKind::Sphere(_) => {
                let d = self.center.kind().dim() as i32;
                let v = manifold::sample_tangent_gaussian(&self.center, self.t, rng)?;
                let r = v.norm();
                if r >= PI {
                    return Ok((None, 0.0));
                }
                let prob = if r > 0.0 { (r.sin() / r).powi(d - 1) } else { 1.0 };
                Ok((Some(manifold::exp_map(&self.center, &v)?), prob))
            }
            ManifoldKind::Spd(m) => {
                let t_prop = 1.0 / (1.0 / self.t - m as f64 / 12.0);
                let v = manifold::sample_tangent_gaussian(&self.center, t_prop, rng)?;
                let prob = spd_acceptance(&v, m)?;
                Ok((Some(manifold::exp_map(&self.center, &v)?), prob))
            }
        }
    }
}

/// `Π_{i<j} sinh(u_ij)/u_ij · exp(-m r²/24)` with `u_ij = |λ_i - λ_j|/2` and
/// `λ` the eigenvalues of `X^{-1/2} v X^{-1/2}`.
fn spd_acceptance(v: &TangentVector, m: usize) -> Result<f64> {
    let (x, w) = match (&v.base, &v.vec) {
        (Point::Spd(x), Ambient::Matrix(w)) => (x, w),
        _ => return Err(Error::UnsupportedKind("SPD acceptance")),
    };
    let (_, inv_sqrt) = spd::sqrt_and_inv_sqrt(x)?;
    let lambda = spd::SymEig::new(&spd::congruence(&inv_sqrt, w)).values;
    let r2: f64 = lambda.iter().map(|l| l * l).sum();
    let mut log_j = 0.0;
    for i in 0..m {
        for j in i + 1..m {
            let u = 0.5 * (lambda[i] - lambda[j]).abs();
            if u > 1e-8 {
                log_j += (u.sinh() / u).ln();
            } else {
                log_j += u * u / 6.0;
            }
        }
    }
    let prob = (log_j - m as f64 * r2 / 24.0).exp();
    if !prob.is_finite() {
        return Err(Error::NonFinite("SPD acceptance"));
    }
    assert!(prob <= 1.0 + 1e-12, "SPD acceptance {prob} exceeds one");
    Ok(prob.min(1.0))
}

/// `∫ e^{-r²/(2t)} dV` over the whole manifold via a radial quadrature rule.
pub(crate) fn radial_normalizer(kind: ManifoldKind, t: f64, rule: &GaussLegendre) -> Result<f64> {
    match kind {
        ManifoldKind::Circle | ManifoldKind::Sphere(1) => {
            Ok(rule.integrate(-PI, PI, |r| (-r * r / (2.0 * t)).exp()))
        }
        ManifoldKind::Sphere(d) => {
            let k = (d - 1) as i32;
            let radial = rule.integrate(0.0, PI, |r| (-r * r / (2.0 * t)).exp() * r.sin().powi(k));
            Ok(sphere_area(d - 1) * radial)
        }
        ManifoldKind::Spd(_) => Err(Error::UnsupportedKind("Riemannian Gaussian normalizer")),
    }
}
