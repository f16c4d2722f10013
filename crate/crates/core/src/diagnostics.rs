//! Fréchet variance, histogram KL/TV on the circle, reference quadratures and
//! an exact von Mises–Fisher sampler.

use std::f64::consts::{PI, TAU};
use std::fmt;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::error::{invalid, Error, Result};
use crate::manifold::{self, reduce_angle, ManifoldKind, Point};
use crate::quadrature::GaussLegendre;

/// `(1/n) Σ d(x_i, x_ref)²`.
pub fn frechet_variance(samples: &[Point], x_ref: &Point) -> Result<f64> {
    Ok(frechet_variance_with_stderr(samples, x_ref)?.0)
}

/// Fréchet variance and the standard error of the mean of `d(x_i, x_ref)²`.
pub fn frechet_variance_with_stderr(samples: &[Point], x_ref: &Point) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("frechet_variance"));
    }
    let sq = samples
        .iter()
        .map(|p| manifold::distance(p, x_ref).map(|d| d * d))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_and_stderr(&sq))
}

/// Sample mean and standard error (zero for a single value).
pub fn mean_and_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Probability masses on `bins` equal arcs of `[0, 2π)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    mass: Vec<f64>,
}

impl GridDensity {
    fn check_bins(bins: usize) -> Result<()> {
        if bins == 0 {
            Err(invalid("bins", "must be at least 1"))
        } else {
            Ok(())
        }
    }

    pub fn from_masses(mass: Vec<f64>) -> Result<Self> {
        Self::check_bins(mass.len())?;
        if mass.iter().any(|m| !(*m >= 0.0) || !m.is_finite()) {
            return Err(invalid("mass", "masses must be finite and nonnegative"));
        }
        let total: f64 = mass.iter().sum();
        if !(total > 0.0) {
            return Err(invalid("mass", "total mass must be positive"));
        }
        Ok(Self {
            mass: mass.into_iter().map(|m| m / total).collect(),
        })
    }

    pub fn uniform(bins: usize) -> Result<Self> {
        Self::from_masses(vec![1.0; bins])
    }

    /// Empirical histogram of angles.
    pub fn from_angles(angles: &[f64], bins: usize) -> Result<Self> {
        Self::check_bins(bins)?;
        if angles.is_empty() {
            return Err(Error::EmptyInput("histogram"));
        }
        let mut counts = vec![0.0; bins];
        for &a in angles {
            let i = ((reduce_angle(a) / TAU) * bins as f64) as usize;
            counts[i.min(bins - 1)] += 1.0;
        }
        Self::from_masses(counts)
    }

    /// Empirical histogram of circle points.
    pub fn from_points(points: &[Point], bins: usize) -> Result<Self> {
        let angles = points
            .iter()
            .map(|p| p.as_angle().ok_or(Error::UnsupportedKind("circle histogram")))
            .collect::<Result<Vec<_>>>()?;
        Self::from_angles(&angles, bins)
    }

    /// Bin masses of an unnormalized density by a per-bin trapezoid rule.
    pub fn from_density<F: Fn(f64) -> f64>(density: F, bins: usize, nodes_per_bin: usize) -> Result<Self> {
        Self::check_bins(bins)?;
        let n = nodes_per_bin.max(1);
        let width = TAU / bins as f64;
        let h = width / n as f64;
        let mut mass = Vec::with_capacity(bins);
        for i in 0..bins {
            let a = i as f64 * width;
            let mut s = 0.5 * (density(a) + density(a + width));
            for j in 1..n {
                s += density(a + j as f64 * h);
            }
            let v = s * h;
            if !v.is_finite() || v < 0.0 {
                return Err(Error::NonFinite("grid density"));
            }
            mass.push(v);
        }
        Self::from_masses(mass)
    }

    pub fn bins(&self) -> usize {
        self.mass.len()
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// Left bin edges in `[0, 2π)`.
    pub fn edges(&self) -> Vec<f64> {
        (0..self.bins()).map(|i| TAU * i as f64 / self.bins() as f64).collect()
    }
}

/// A KL divergence that may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KlValue {
    Finite(f64),
    Infinite,
}

impl KlValue {
    pub fn as_f64(&self) -> f64 {
        match self {
            KlValue::Finite(v) => *v,
            KlValue::Infinite => f64::INFINITY,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, KlValue::Finite(_))
    }
}

impl fmt::Display for KlValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KlValue::Finite(v) => write!(f, "{v}"),
            KlValue::Infinite => write!(f, "inf"),
        }
    }
}

/// `Σ p_i log(p_i / q_i)` with `0 log 0 = 0`.
pub fn kl_between(p: &GridDensity, q: &GridDensity) -> Result<KlValue> {
    if p.bins() != q.bins() {
        return Err(Error::GridMismatch(p.bins(), q.bins()));
    }
    let mut kl = 0.0;
    for (&pi, &qi) in p.mass.iter().zip(&q.mass) {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Ok(KlValue::Infinite);
        }
        kl += pi * (pi / qi).ln();
    }
    Ok(KlValue::Finite(kl.max(0.0)))
}

/// KL from `p` to the target density discretized on the same grid.
pub fn kl_grid<F: Fn(f64) -> f64>(p: &GridDensity, target_unnorm: F) -> Result<KlValue> {
    let q = GridDensity::from_density(target_unnorm, p.bins(), 64)?;
    kl_between(p, &q)
}

/// `½ Σ |p_i - q_i|`.
pub fn tv_grid(p: &GridDensity, q: &GridDensity) -> Result<f64> {
    if p.bins() != q.bins() {
        return Err(Error::GridMismatch(p.bins(), q.bins()));
    }
    Ok(0.5 * p.mass.iter().zip(&q.mass).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Exact von Mises–Fisher draw on `S^d` with density `∝ exp(κ' ⟨μ, x⟩)` (Wood's algorithm).
pub fn vmf_oracle_sample<R: Rng + ?Sized>(
    d: usize,
    mu_direction: &DVector<f64>,
    kappa_eff: f64,
    rng: &mut R,
) -> Result<Point> {
    if d < 1 || mu_direction.len() != d + 1 {
        return Err(Error::DimensionMismatch(format!(
            "direction of length {} for S^{d}",
            mu_direction.len()
        )));
    }
    if !(kappa_eff >= 0.0 && kappa_eff.is_finite()) {
        return Err(invalid("kappa_eff", "must be finite and nonnegative"));
    }
    let mu = mu_direction.normalize();
    let w = vmf_cosine(d, kappa_eff, rng)?;
    // uniform direction orthogonal to μ
    let v = loop {
        let g = DVector::from_fn(d + 1, |_, _| manifold::normal(rng));
        let t = &g - &mu * mu.dot(&g);
        let n = t.norm();
        if n > 1e-12 {
            break t / n;
        }
    };
    Point::sphere(&mu * w + v * (1.0 - w * w).max(0.0).sqrt())
}

/// `w = ⟨μ, x⟩` with density `∝ e^{κw}(1 - w²)^{(d-2)/2}` on `[-1, 1]`.
fn vmf_cosine<R: Rng + ?Sized>(d: usize, kappa: f64, rng: &mut R) -> Result<f64> {
    let dm = d as f64;
    let b = dm / (2.0 * kappa + (4.0 * kappa * kappa + dm * dm).sqrt());
    let x0 = (1.0 - b) / (1.0 + b);
    let c = kappa * x0 + dm * (1.0 - x0 * x0).ln();
    let beta = Beta::new(dm / 2.0, dm / 2.0).map_err(|e| invalid("d", e.to_string()))?;
    const CAP: u64 = 1_000_000;
    for _ in 0..CAP {
        let z: f64 = beta.sample(rng);
        let w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
        let u: f64 = rng.random();
        if kappa * w + dm * (1.0 - x0 * w).ln() - c >= u.ln() {
            return Ok(w.clamp(-1.0, 1.0));
        }
    }
    Err(Error::RejectionCapExceeded {
        cap: CAP,
        acceptance: 0.0,
    })
}

/// `E[d²]` under a radial density `∝ exp(ℓ(r))` with respect to Riemannian
/// volume on `S^d` (`(sin r)^{d-1}` factor) or the circle.
pub fn expected_distsq_quadrature<F: Fn(f64) -> f64>(kind: ManifoldKind, radial_log_density: F) -> Result<f64> {
    expected_distsq_with_panels(kind, radial_log_density, 128)
}

/// Composite Gauss–Legendre version with `panels` 32-node panels on `[0, π]`.
pub fn expected_distsq_with_panels<F: Fn(f64) -> f64>(
    kind: ManifoldKind,
    radial_log_density: F,
    panels: usize,
) -> Result<f64> {
    let k = match kind {
        ManifoldKind::Circle => 0,
        ManifoldKind::Sphere(d) => (d - 1) as i32,
        ManifoldKind::Spd(_) => return Err(Error::UnsupportedKind("radial quadrature")),
    };
    let rule = GaussLegendre::new(32);
    let width = PI / panels as f64;
    let mut nodes = Vec::with_capacity(panels * 32);
    for p in 0..panels {
        let a = p as f64 * width;
        for (x, w) in rule.nodes.iter().zip(&rule.weights) {
            let r = a + 0.5 * width * (x + 1.0);
            nodes.push((r, 0.5 * width * w, radial_log_density(r)));
        }
    }
    let shift = nodes.iter().map(|n| n.2).fold(f64::NEG_INFINITY, f64::max);
    if !shift.is_finite() {
        return Err(Error::NonFinite("radial log density"));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (r, w, l) in nodes {
        if l.is_nan() {
            return Err(Error::NonFinite("radial log density"));
        }
        let dens = (l - shift).exp() * r.sin().powi(k) * w;
        num += r * r * dens;
        den += dens;
    }
    let v = num / den;
    if !v.is_finite() {
        return Err(Error::NonFinite("radial quadrature"));
    }
    Ok(v)
}

/// Reference Fréchet variance of vMF about its mode.
pub fn vmf_frechet_truth(d: usize, kappa_eff: f64) -> Result<f64> {
    expected_distsq_quadrature(ManifoldKind::Sphere(d), |r| kappa_eff * r.cos())
}
