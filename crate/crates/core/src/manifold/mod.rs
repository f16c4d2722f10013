//! Geometry of the circle, the unit hyperspheres and the SPD cone.
//!
//! Points are stored in ambient coordinates: an angle in `[0, 2π)` for the
//! circle, a unit vector in `R^{d+1}` for `S^d`, and a symmetric positive
//! definite `m × m` matrix for `P_m` with the affine-invariant metric
//! `g_X(U, V) = tr(X⁻¹ U X⁻¹ V)`.

pub mod spd;

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};

/// Tolerance on `⟨x, y⟩ + 1` below which two sphere points count as antipodal.
pub const ANTIPODAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ManifoldKind {
    Circle,
    /// `S^d ⊂ R^{d+1}`, `d ≥ 1`.
    Sphere(usize),
    /// `m × m` SPD matrices, `m ≥ 2`.
    Spd(usize),
}

impl ManifoldKind {
    /// Intrinsic dimension.
    pub fn dim(&self) -> usize {
        match *self {
            ManifoldKind::Circle => 1,
            ManifoldKind::Sphere(d) => d,
            ManifoldKind::Spd(m) => m * (m + 1) / 2,
        }
    }

    /// Lower bound on Ricci curvature.
    pub fn ricci_lower_bound(&self) -> f64 {
        match *self {
            ManifoldKind::Circle => 0.0,
            ManifoldKind::Sphere(d) => d as f64 - 1.0,
            ManifoldKind::Spd(m) => -((m * (m + 1)) as f64 - 1.0) / 4.0,
        }
    }

    pub fn is_compact(&self) -> bool {
        !matches!(self, ManifoldKind::Spd(_))
    }
}

impl std::fmt::Display for ManifoldKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ManifoldKind::Circle => write!(f, "S^1"),
            ManifoldKind::Sphere(d) => write!(f, "S^{d}"),
            ManifoldKind::Spd(m) => write!(f, "P_{m}"),
        }
    }
}

/// Ambient representation shared by tangent vectors and Euclidean gradients.
#[derive(Debug, Clone, PartialEq)]
pub enum Ambient {
    Scalar(f64),
    Vector(DVector<f64>),
    Matrix(DMatrix<f64>),
}

impl Ambient {
    pub fn scale(&self, s: f64) -> Ambient {
        match self {
            Ambient::Scalar(v) => Ambient::Scalar(v * s),
            Ambient::Vector(v) => Ambient::Vector(v * s),
            Ambient::Matrix(v) => Ambient::Matrix(v * s),
        }
    }

    pub fn add(&self, other: &Ambient) -> Result<Ambient> {
        match (self, other) {
            (Ambient::Scalar(a), Ambient::Scalar(b)) => Ok(Ambient::Scalar(a + b)),
            (Ambient::Vector(a), Ambient::Vector(b)) if a.len() == b.len() => {
                Ok(Ambient::Vector(a + b))
            }
            (Ambient::Matrix(a), Ambient::Matrix(b)) if a.shape() == b.shape() => {
                Ok(Ambient::Matrix(a + b))
            }
            _ => Err(Error::DimensionMismatch("ambient addition".into())),
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Ambient::Scalar(v) => v.is_finite(),
            Ambient::Vector(v) => v.iter().all(|x| x.is_finite()),
            Ambient::Matrix(v) => v.iter().all(|x| x.is_finite()),
        }
    }
}

/// A point on one of the supported manifolds.
#[derive(Debug, Clone, PartialEq)]
pub enum Point {
    Circle(f64),
    Sphere(DVector<f64>),
    Spd(DMatrix<f64>),
}

impl Point {
    /// Circle point; the angle is reduced to `[0, 2π)`.
    pub fn circle(angle: f64) -> Point {
        Point::Circle(reduce_angle(angle))
    }

    /// Sphere point from any non-zero vector in `R^{d+1}`, `d ≥ 1`.
    pub fn sphere(v: DVector<f64>) -> Result<Point> {
        if v.len() < 2 {
            return Err(invalid("sphere point", "ambient dimension must be at least 2"));
        }
        let n = v.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(invalid("sphere point", "vector must be finite and non-zero"));
        }
        Ok(Point::Sphere(v / n))
    }

    pub fn sphere_from_slice(v: &[f64]) -> Result<Point> {
        Point::sphere(DVector::from_column_slice(v))
    }

    /// `i`-th standard basis vector of `R^{d+1}` as a point of `S^d`.
    pub fn sphere_basis(d: usize, i: usize) -> Point {
        let mut v = DVector::zeros(d + 1);
        v[i] = 1.0;
        Point::Sphere(v)
    }

    /// SPD point; symmetry defect must be at most `1e-12` (relative to the
    /// largest entry) and the smallest eigenvalue positive.
    pub fn spd(x: DMatrix<f64>) -> Result<Point> {
        if x.nrows() != x.ncols() || x.nrows() < 2 {
            return Err(invalid("spd point", "matrix must be square with side >= 2"));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("spd point"));
        }
        let scale = x.amax().max(1.0);
        if spd::symmetry_defect(&x) > 1e-12 * scale {
            return Err(invalid("spd point", "matrix is not symmetric"));
        }
        let x = spd::symmetrize(&x);
        let lo = spd::SymEig::new(&x).min();
        if !(lo > 0.0) {
            return Err(Error::NotPositiveDefinite(lo));
        }
        Ok(Point::Spd(x))
    }

    pub fn identity(m: usize) -> Point {
        Point::Spd(DMatrix::identity(m, m))
    }

    pub fn kind(&self) -> ManifoldKind {
        match self {
            Point::Circle(_) => ManifoldKind::Circle,
            Point::Sphere(v) => ManifoldKind::Sphere(v.len() - 1),
            Point::Spd(x) => ManifoldKind::Spd(x.nrows()),
        }
    }

    pub fn as_angle(&self) -> Option<f64> {
        match self {
            Point::Circle(a) => Some(*a),
            _ => None,
        }
    }

    pub fn as_vector(&self) -> Option<&DVector<f64>> {
        match self {
            Point::Sphere(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_matrix(&self) -> Option<&DMatrix<f64>> {
        match self {
            Point::Spd(x) => Some(x),
            _ => None,
        }
    }

    /// Zero tangent vector at this point.
    pub fn zero_tangent(&self) -> TangentVector {
        let vec = match self {
            Point::Circle(_) => Ambient::Scalar(0.0),
            Point::Sphere(v) => Ambient::Vector(DVector::zeros(v.len())),
            Point::Spd(x) => Ambient::Matrix(DMatrix::zeros(x.nrows(), x.ncols())),
        };
        TangentVector {
            base: self.clone(),
            vec,
        }
    }
}

/// A tangent vector together with its base point.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    pub base: Point,
    pub vec: Ambient,
}

impl TangentVector {
    /// Checked constructor; the vector must already lie in the tangent space.
    pub fn new(base: Point, vec: Ambient) -> Result<TangentVector> {
        check_shape(&base, &vec)?;
        match (&base, &vec) {
            (Point::Sphere(x), Ambient::Vector(v)) => {
                if x.dot(v).abs() > 1e-10 * v.norm().max(f64::MIN_POSITIVE) {
                    return Err(invalid("tangent vector", "not orthogonal to the base point"));
                }
            }
            (Point::Spd(_), Ambient::Matrix(v)) => {
                if spd::symmetry_defect(v) > 1e-12 * v.amax().max(1.0) {
                    return Err(invalid("tangent vector", "not symmetric"));
                }
            }
            _ => {}
        }
        Ok(TangentVector { base, vec })
    }

    /// Orthogonal projection of an ambient vector onto `T_base M`.
    pub fn project(base: &Point, vec: &Ambient) -> Result<TangentVector> {
        check_shape(base, vec)?;
        let vec = match (base, vec) {
            (Point::Sphere(x), Ambient::Vector(v)) => Ambient::Vector(v - x * x.dot(v)),
            (Point::Spd(_), Ambient::Matrix(v)) => Ambient::Matrix(spd::symmetrize(v)),
            (_, v) => v.clone(),
        };
        Ok(TangentVector {
            base: base.clone(),
            vec,
        })
    }

    pub fn scale(&self, s: f64) -> TangentVector {
        TangentVector {
            base: self.base.clone(),
            vec: self.vec.scale(s),
        }
    }

    pub fn add(&self, other: &TangentVector) -> Result<TangentVector> {
        Ok(TangentVector {
            base: self.base.clone(),
            vec: self.vec.add(&other.vec)?,
        })
    }

    /// Riemannian norm `‖v‖_g`.
    pub fn norm(&self) -> f64 {
        inner(self, self).max(0.0).sqrt()
    }
}

fn check_shape(base: &Point, vec: &Ambient) -> Result<()> {
    let ok = match (base, vec) {
        (Point::Circle(_), Ambient::Scalar(_)) => true,
        (Point::Sphere(x), Ambient::Vector(v)) => x.len() == v.len(),
        (Point::Spd(x), Ambient::Matrix(v)) => x.shape() == v.shape(),
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(format!(
            "{} point with incompatible ambient value",
            base.kind()
        )))
    }
}

fn check_same_kind(x: &Point, y: &Point) -> Result<()> {
    if x.kind() == y.kind() {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(format!("{} vs {}", x.kind(), y.kind())))
    }
}

/// Reduce an angle to `[0, 2π)`.
pub fn reduce_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Representative of an angle difference in `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = (a + PI).rem_euclid(TAU) - PI;
    if r <= -PI {
        PI
    } else {
        r
    }
}

/// Metric inner product `g_x(u, v)`.
pub fn inner(u: &TangentVector, v: &TangentVector) -> f64 {
    match (&u.base, &u.vec, &v.vec) {
        (Point::Spd(x), Ambient::Matrix(a), Ambient::Matrix(b)) => {
            // tr(X⁻¹ A X⁻¹ B) = ⟨X^{-1/2} A X^{-1/2}, X^{-1/2} B X^{-1/2}⟩_F
            let inv = match x.clone().try_inverse() {
                Some(inv) => inv,
                None => return f64::NAN,
            };
            (&inv * a * &inv * b).trace()
        }
        (_, Ambient::Scalar(a), Ambient::Scalar(b)) => a * b,
        (_, Ambient::Vector(a), Ambient::Vector(b)) => a.dot(b),
        _ => f64::NAN,
    }
}

/// Exponential map `exp_x(v)`.
pub fn exp_map(x: &Point, v: &TangentVector) -> Result<Point> {
    check_same_kind(x, &v.base)?;
    check_shape(x, &v.vec)?;
    match (x, &v.vec) {
        (Point::Circle(a), Ambient::Scalar(s)) => Ok(Point::circle(a + s)),
        (Point::Sphere(p), Ambient::Vector(u)) => {
            let r = u.norm();
            if r == 0.0 {
                return Ok(x.clone());
            }
            let y = p * r.cos() + u * (r.sin() / r);
            Point::sphere(y)
        }
        (Point::Spd(p), Ambient::Matrix(u)) => {
            let (h, hi) = spd::sqrt_and_inv_sqrt(p)?;
            let inner = spd::congruence(&hi, &spd::symmetrize(u));
            let y = spd::congruence(&h, &spd::expm_sym(&inner));
            if !y.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("spd exponential map"));
            }
            Ok(Point::Spd(y))
        }
        _ => unreachable!("shape checked above"),
    }
}

/// Logarithm map `exp_x⁻¹(y)`.
pub fn log_map(x: &Point, y: &Point) -> Result<TangentVector> {
    check_same_kind(x, y)?;
    let vec = match (x, y) {
        (Point::Circle(a), Point::Circle(b)) => Ambient::Scalar(wrap_angle(b - a)),
        (Point::Sphere(p), Point::Sphere(q)) => {
            let c = p.dot(q);
            if c + 1.0 <= ANTIPODAL_TOL {
                return Err(Error::CutLocus(format!("<x,y> = {c}")));
            }
            let mut u = q - p * c;
            u -= p * p.dot(&u);
            let n = u.norm();
            let theta = sphere_angle(p, q);
            if n == 0.0 {
                Ambient::Vector(DVector::zeros(p.len()))
            } else {
                Ambient::Vector(u * (theta / n))
            }
        }
        (Point::Spd(p), Point::Spd(q)) => {
            let (h, hi) = spd::sqrt_and_inv_sqrt(p)?;
            let inner = spd::logm_spd(&spd::congruence(&hi, q))?;
            Ambient::Matrix(spd::congruence(&h, &inner))
        }
        _ => unreachable!("kinds checked above"),
    };
    Ok(TangentVector {
        base: x.clone(),
        vec,
    })
}

fn sphere_angle(p: &DVector<f64>, q: &DVector<f64>) -> f64 {
    2.0 * (p - q).norm().atan2((p + q).norm())
}

/// Geodesic distance.
pub fn distance(x: &Point, y: &Point) -> Result<f64> {
    check_same_kind(x, y)?;
    match (x, y) {
        (Point::Circle(a), Point::Circle(b)) => Ok(wrap_angle(b - a).abs()),
        (Point::Sphere(p), Point::Sphere(q)) => Ok(sphere_angle(p, q)),
        (Point::Spd(p), Point::Spd(q)) if p == q => Ok(0.0),
        (Point::Spd(p), Point::Spd(q)) => {
            let (_, hi) = spd::sqrt_and_inv_sqrt(p)?;
            let r = spd::spd_eigenvalues(&spd::congruence(&hi, q))?;
            Ok(r.iter().map(|l| l.ln().powi(2)).sum::<f64>().sqrt())
        }
        _ => unreachable!("kinds checked above"),
    }
}

/// Riemannian gradient of `x ↦ d(x, y)²`, equal to `-2 exp_x⁻¹(y)`.
pub fn grad_dist_sq(x: &Point, y: &Point) -> Result<TangentVector> {
    Ok(log_map(x, y)?.scale(-2.0))
}

/// Convert a Euclidean (ambient) gradient into the Riemannian gradient.
///
/// Sphere: `g - ⟨g, x⟩x`. SPD: `X sym(g) X`, the Riesz representative of
/// `V ↦ ⟨g, V⟩_F` under `tr(X⁻¹ U X⁻¹ V)`. Circle: the angular derivative
/// is already the gradient.
pub fn riemannian_grad(euclidean_grad: &Ambient, x: &Point) -> Result<TangentVector> {
    check_shape(x, euclidean_grad)?;
    let vec = match (x, euclidean_grad) {
        (Point::Circle(_), Ambient::Scalar(g)) => Ambient::Scalar(*g),
        (Point::Sphere(p), Ambient::Vector(g)) => Ambient::Vector(g - p * p.dot(g)),
        (Point::Spd(p), Ambient::Matrix(g)) => {
            Ambient::Matrix(spd::symmetrize(&(p * spd::symmetrize(g) * p)))
        }
        _ => unreachable!("shape checked above"),
    };
    Ok(TangentVector {
        base: x.clone(),
        vec,
    })
}

/// Isotropic tangent Gaussian with covariance `t·Id` in the metric at `x`.
///
/// For SPD the draw is `V = X^{1/2} S X^{1/2}` with `S` symmetric, diagonal
/// entries `N(0, t)` and off-diagonal entries `N(0, t/2)`. Then
/// `g(V, V) = tr(S²) = Σ S_ii² + 2 Σ_{i<j} S_ij²`, i.e. a sum of
/// `m(m+1)/2` independent `N(0, t)` squares, one per orthonormal direction
/// `E_ii`, `(E_ij + E_ji)/√2` of the Frobenius inner product.
pub fn sample_tangent_gaussian<R: Rng + ?Sized>(
    x: &Point,
    t: f64,
    rng: &mut R,
) -> Result<TangentVector> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(invalid("t", format!("variance must be positive, got {t}")));
    }
    let s = t.sqrt();
    let vec = match x {
        Point::Circle(_) => Ambient::Scalar(s * normal(rng)),
        Point::Sphere(p) => {
            let z = DVector::from_fn(p.len(), |_, _| s * normal(rng));
            Ambient::Vector(&z - p * p.dot(&z))
        }
        Point::Spd(p) => {
            let m = p.nrows();
            let off = (t / 2.0).sqrt();
            let mut sm = DMatrix::zeros(m, m);
            for i in 0..m {
                sm[(i, i)] = s * normal(rng);
                for j in (i + 1)..m {
                    let v = off * normal(rng);
                    sm[(i, j)] = v;
                    sm[(j, i)] = v;
                }
            }
            let (h, _) = spd::sqrt_and_inv_sqrt(p)?;
            Ambient::Matrix(spd::congruence(&h, &sm))
        }
    };
    Ok(TangentVector {
        base: x.clone(),
        vec,
    })
}

pub(crate) fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Uniform draw from the circle or a sphere.
pub fn sample_uniform<R: Rng + ?Sized>(kind: ManifoldKind, rng: &mut R) -> Result<Point> {
    match kind {
        ManifoldKind::Circle => Ok(Point::circle(rng.random::<f64>() * TAU)),
        ManifoldKind::Sphere(d) => loop {
            let z = DVector::from_fn(d + 1, |_, _| normal(rng));
            if z.norm() > 1e-12 {
                return Point::sphere(z);
            }
        },
        ManifoldKind::Spd(_) => Err(Error::UnsupportedKind("uniform sampling")),
    }
}

/// Inner product `⟨x, y⟩` of two sphere points, `cos d(x, y)`.
pub(crate) fn sphere_cos(x: &Point, y: &Point) -> Result<f64> {
    match (x, y) {
        (Point::Sphere(p), Point::Sphere(q)) if p.len() == q.len() => Ok(p.dot(q).clamp(-1.0, 1.0)),
        (Point::Circle(a), Point::Circle(b)) => Ok((b - a).cos()),
        _ => Err(Error::DimensionMismatch("sphere inner product".into())),
    }
}
