//! Potentials `f` for target densities `π ∝ e^{-f}`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::manifold::{self, Ambient, ManifoldKind, Point, TangentVector};

/// A potential on a manifold together with its gradient and a Lipschitz constant.
pub trait Target: Send + Sync + fmt::Debug {
    fn kind(&self) -> ManifoldKind;

    fn value(&self, x: &Point) -> f64;

    /// Gradient in ambient coordinates; the angular derivative on the circle.
    fn euclidean_grad(&self, x: &Point) -> Ambient;

    fn riemannian_grad(&self, x: &Point) -> Result<TangentVector> {
        manifold::riemannian_grad(&self.euclidean_grad(x), x)
    }

    /// Lipschitz constant `L₁` of `f` (may be a local estimate).
    fn lipschitz(&self) -> f64;

    fn describe(&self) -> String;
}

/// Curvature-related constants of a target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryParams {
    /// Log-Sobolev constant, when known.
    pub alpha: Option<f64>,
    /// Ricci lower bound of the manifold.
    pub kappa: f64,
}

impl TheoryParams {
    pub fn for_kind(kind: ManifoldKind) -> Self {
        Self {
            alpha: None,
            kappa: kind.ricci_lower_bound(),
        }
    }
}

/// `f ≡ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Zero {
    pub kind: ManifoldKind,
}

impl Target for Zero {
    fn kind(&self) -> ManifoldKind {
        self.kind
    }

    fn value(&self, _x: &Point) -> f64 {
        0.0
    }

    fn euclidean_grad(&self, x: &Point) -> Ambient {
        x.zero_tangent().vec
    }

    fn lipschitz(&self) -> f64 {
        0.0
    }

    fn describe(&self) -> String {
        format!("zero on {}", self.kind)
    }
}

/// von Mises–Fisher potential `f(x) = -κ μᵀx` on `S^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct VonMisesFisher {
    d: usize,
    kappa: f64,
    mu: DVector<f64>,
}

impl VonMisesFisher {
    pub fn new(kappa: f64, mu: &[f64]) -> Result<Self> {
        if mu.len() < 2 {
            return Err(invalid("mu", "needs at least two components"));
        }
        if !(kappa > 0.0) {
            return Err(invalid("kappa", "must be positive"));
        }
        let mu = DVector::from_column_slice(mu);
        if !(mu.norm() > 0.0) || !mu.iter().all(|v| v.is_finite()) {
            return Err(invalid("mu", "must be finite and nonzero"));
        }
        Ok(Self {
            d: mu.len() - 1,
            kappa,
            mu,
        })
    }

    /// `κ‖μ‖`, the concentration of the normalized direction.
    pub fn kappa_eff(&self) -> f64 {
        self.kappa * self.mu.norm()
    }

    pub fn mode(&self) -> Point {
        Point::Sphere(self.mu.normalize())
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }
}

impl Target for VonMisesFisher {
    fn kind(&self) -> ManifoldKind {
        ManifoldKind::Sphere(self.d)
    }

    fn value(&self, x: &Point) -> f64 {
        match x {
            Point::Sphere(v) => -self.kappa * self.mu.dot(v),
            _ => f64::NAN,
        }
    }

    fn euclidean_grad(&self, _x: &Point) -> Ambient {
        Ambient::Vector(&self.mu * -self.kappa)
    }

    fn lipschitz(&self) -> f64 {
        self.kappa_eff()
    }

    fn describe(&self) -> String {
        let mu: Vec<String> = self.mu.iter().map(|v| v.to_string()).collect();
        format!("vmf(d={}, kappa={}, mu=[{}])", self.d, self.kappa, mu.join(", "))
    }
}

/// `f(X) = d(X, I)⁴/(2σ²)` on SPD(m).
#[derive(Debug, Clone, PartialEq)]
pub struct SpdQuartic {
    m: usize,
    sigma: f64,
    lipschitz: f64,
}

impl SpdQuartic {
    /// `lipschitz` is a user-supplied local estimate; `f` is not globally Lipschitz.
    pub fn new(m: usize, sigma: f64, lipschitz: f64) -> Result<Self> {
        if m < 2 {
            return Err(invalid("m", "matrix side must be at least 2"));
        }
        if !(sigma > 0.0) {
            return Err(invalid("sigma", "must be positive"));
        }
        if !(lipschitz > 0.0) {
            return Err(invalid("lipschitz", "must be positive"));
        }
        Ok(Self { m, sigma, lipschitz })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

impl Target for SpdQuartic {
    fn kind(&self) -> ManifoldKind {
        ManifoldKind::Spd(self.m)
    }

    fn value(&self, x: &Point) -> f64 {
        match manifold::distance(x, &Point::identity(self.m)) {
            Ok(r) => r.powi(4) / (2.0 * self.sigma * self.sigma),
            Err(_) => f64::NAN,
        }
    }

    fn euclidean_grad(&self, x: &Point) -> Ambient {
        let (Ok(g), Some(m)) = (self.riemannian_grad(x), x.as_matrix()) else {
            return Ambient::Matrix(DMatrix::from_element(self.m, self.m, f64::NAN));
        };
        let Some(inv) = m.clone().try_inverse() else {
            return Ambient::Matrix(DMatrix::from_element(self.m, self.m, f64::NAN));
        };
        match g.vec {
            Ambient::Matrix(r) => Ambient::Matrix(&inv * r * &inv),
            other => other,
        }
    }

    fn riemannian_grad(&self, x: &Point) -> Result<TangentVector> {
        let id = Point::identity(self.m);
        let r2 = manifold::distance(x, &id)?.powi(2);
        // grad d⁴ = 2 d² grad d² = -4 d² log_X(I)
        Ok(manifold::log_map(x, &id)?.scale(-2.0 * r2 / (self.sigma * self.sigma)))
    }

    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    fn describe(&self) -> String {
        format!("spd-quartic(m={}, sigma={})", self.m, self.sigma)
    }
}

/// `f(θ) = -a cos θ` on the circle.
#[derive(Debug, Clone, PartialEq)]
pub struct CircleCosine {
    pub a: f64,
}

impl Target for CircleCosine {
    fn kind(&self) -> ManifoldKind {
        ManifoldKind::Circle
    }

    fn value(&self, x: &Point) -> f64 {
        x.as_angle().map_or(f64::NAN, |t| -self.a * t.cos())
    }

    fn euclidean_grad(&self, x: &Point) -> Ambient {
        Ambient::Scalar(x.as_angle().map_or(f64::NAN, |t| self.a * t.sin()))
    }

    fn lipschitz(&self) -> f64 {
        self.a.abs()
    }

    fn describe(&self) -> String {
        format!("circle-cosine(a={})", self.a)
    }
}

type PotentialFn = dyn Fn(&Point) -> f64 + Send + Sync;
type GradFn = dyn Fn(&Point) -> Ambient + Send + Sync;

/// A user-supplied potential given as closures.
#[derive(Clone)]
pub struct TargetSpec {
    kind: ManifoldKind,
    f: Arc<PotentialFn>,
    grad: Arc<GradFn>,
    lipschitz: f64,
    description: String,
}

impl TargetSpec {
    pub fn new(
        kind: ManifoldKind,
        f: impl Fn(&Point) -> f64 + Send + Sync + 'static,
        grad: impl Fn(&Point) -> Ambient + Send + Sync + 'static,
        lipschitz: f64,
        description: impl Into<String>,
    ) -> Result<Self> {
        if !(lipschitz > 0.0 && lipschitz.is_finite()) {
            return Err(invalid("lipschitz", "must be positive and finite"));
        }
        Ok(Self {
            kind,
            f: Arc::new(f),
            grad: Arc::new(grad),
            lipschitz,
            description: description.into(),
        })
    }

    /// Checks that `f` is finite on the supplied points.
    pub fn check_finite(&self, points: &[Point]) -> Result<()> {
        if points.iter().all(|p| (self.f)(p).is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite("target potential"))
        }
    }
}

impl fmt::Debug for TargetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TargetSpec")
            .field("kind", &self.kind)
            .field("lipschitz", &self.lipschitz)
            .field("description", &self.description)
            .finish()
    }
}

impl Target for TargetSpec {
    fn kind(&self) -> ManifoldKind {
        self.kind
    }

    fn value(&self, x: &Point) -> f64 {
        (self.f)(x)
    }

    fn euclidean_grad(&self, x: &Point) -> Ambient {
        (self.grad)(x)
    }

    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    fn describe(&self) -> String {
        self.description.clone()
    }
}
