//! Brownian-motion transition densities on the circle and on spheres.
//!
//! Circle: the wrapped Gaussian `Σ_n (2πt)^{-1/2} exp(-(φ + 2πn)²/(2t))`
//! truncated to `|n| ≤ n_max`.
//!
//! Sphere `S^d`, `d ≥ 2`: the Gegenbauer expansion
//! `ν_l(t, c) = Σ_{k=0}^{l} e^{-k(k+d-1)t/2} (2k+d-1)/((d-1)|S^d|) C_k^{(d-1)/2}(c)`
//! with `c = ⟨x, y⟩`.

use std::f64::consts::{PI, TAU};

use crate::error::{invalid, Error, Result};
use crate::manifold::{self, sphere_cos, wrap_angle, Ambient, ManifoldKind, Point, TangentVector};
use crate::special::{ln_gamma, ln_sphere_area};

/// Truncated kernels below this value are clamped in log-domain consumers.
pub const KERNEL_FLOOR: f64 = 1e-300;

/// Largest Gegenbauer degree `choose_truncation` will consider.
pub const MAX_LEVEL: usize = 1_000_000;

/// Smallest diffusion time for which sphere series are the default oracle.
pub const SERIES_MIN_TIME: f64 = 0.05;

fn check_time(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(invalid("t", format!("diffusion time must be positive, got {t}")))
    }
}

fn check_sphere_dim(d: usize) -> Result<()> {
    if d >= 2 {
        Ok(())
    } else {
        Err(invalid("d", "sphere series needs d >= 2; use circle_kernel for S^1"))
    }
}

/// Wrapped-Gaussian heat kernel on `S^1` at geodesic distance `phi`.
pub fn circle_kernel(t: f64, phi: f64, n_max: usize) -> f64 {
    let phi = phi.abs();
    let norm = (TAU * t).sqrt().recip();
    let n = n_max as i64;
    (-n..=n)
        .map(|k| {
            let a = phi + TAU * k as f64;
            (-a * a / (2.0 * t)).exp()
        })
        .sum::<f64>()
        * norm
}

/// `log ν` and `d/dδ log ν` of the wrapped Gaussian at signed offset `delta`,
/// computed with log-sum-exp so that tiny `t` does not underflow.
fn circle_log_and_dlog(t: f64, delta: f64, n_max: usize) -> (f64, f64) {
    let n = n_max as i64;
    let mut best = f64::NEG_INFINITY;
    for k in -n..=n {
        let a = delta + TAU * k as f64;
        best = best.max(-a * a / (2.0 * t));
    }
    let mut sum = 0.0;
    let mut dsum = 0.0;
    for k in -n..=n {
        let a = delta + TAU * k as f64;
        let w = (-a * a / (2.0 * t) - best).exp();
        sum += w;
        dsum += w * (-a / t);
    }
    (-0.5 * (TAU * t).ln() + best + sum.ln(), dsum / sum)
}

/// Smallest wrap count whose omitted terms sum below `zeta` for every `φ ∈ [0, π]`.
pub fn circle_wrap_count(t: f64, zeta: f64) -> Result<usize> {
    check_time(t)?;
    if !(zeta > 0.0) {
        return Err(invalid("zeta", "accuracy must be positive"));
    }
    let norm = (TAU * t).sqrt().recip();
    for n_max in 1..=MAX_LEVEL {
        // omitted |n| > n_max; the closest omitted image sits at π(2n-1) for φ = π
        let mut tail = 0.0;
        let mut n = n_max + 1;
        loop {
            let a = PI * (2 * n - 1) as f64;
            let term = 2.0 * norm * (-a * a / (2.0 * t)).exp();
            tail += term;
            if term <= 1e-18 * tail || term == 0.0 {
                break;
            }
            n += 1;
        }
        if tail <= zeta {
            return Ok(n_max);
        }
    }
    Err(Error::NoTruncationLevel {
        max_level: MAX_LEVEL,
        zeta,
    })
}

/// Series coefficients `e^{-k(k+d-1)t/2}(2k+d-1)/((d-1)|S^d|)`, `k = 0..=l`.
fn sphere_coefficients(d: usize, t: f64, l: usize) -> Vec<f64> {
    let df = d as f64;
    let ln_norm = (df - 1.0).ln() + ln_sphere_area(d);
    (0..=l)
        .map(|k| {
            let kf = k as f64;
            (-kf * (kf + df - 1.0) * t / 2.0 + (2.0 * kf + df - 1.0).ln() - ln_norm).exp()
        })
        .collect()
}

/// `Σ a_k C_k^α(c)` and `Σ a_k d/dc C_k^α(c)` via three-term recurrences.
///
/// `k C_k = 2(k+α-1) c C_{k-1} - (k+2α-2) C_{k-2}` and
/// `d/dc C_k^α = 2α C_{k-1}^{α+1}`.
fn gegenbauer_series(coeffs: &[f64], alpha: f64, c: f64) -> (f64, f64) {
    let mut value = coeffs[0];
    let mut deriv = 0.0;
    let (mut p_prev, mut p) = (1.0, 2.0 * alpha * c);
    let beta = alpha + 1.0;
    let (mut q_prev, mut q) = (0.0, 1.0); // C_{-1}^{α+1}, C_0^{α+1}
    for (k, &a) in coeffs.iter().enumerate().skip(1) {
        value += a * p;
        deriv += a * 2.0 * alpha * q;
        let kn = (k + 1) as f64;
        let p_next = (2.0 * (kn + alpha - 1.0) * c * p - (kn + 2.0 * alpha - 2.0) * p_prev) / kn;
        p_prev = p;
        p = p_next;
        let kq = k as f64;
        let q_next = (2.0 * (kq + beta - 1.0) * c * q - (kq + 2.0 * beta - 2.0) * q_prev) / kq;
        q_prev = q;
        q = q_next;
    }
    (value, deriv)
}

/// Truncated sphere heat kernel `ν_l(t, c)` on `S^d`.
pub fn sphere_kernel(d: usize, t: f64, c: f64, l: usize) -> Result<f64> {
    check_sphere_dim(d)?;
    check_time(t)?;
    check_cos(c)?;
    let coeffs = sphere_coefficients(d, t, l);
    Ok(gegenbauer_series(&coeffs, (d as f64 - 1.0) / 2.0, c).0)
}

/// `d/dc log ν_l(t, c)`.
pub fn sphere_kernel_grad(d: usize, t: f64, c: f64, l: usize) -> Result<f64> {
    check_sphere_dim(d)?;
    check_time(t)?;
    check_cos(c)?;
    let coeffs = sphere_coefficients(d, t, l);
    let (v, dv) = gegenbauer_series(&coeffs, (d as f64 - 1.0) / 2.0, c);
    if !(v > 0.0) {
        return Err(Error::KernelNonPositive(v));
    }
    Ok(dv / v)
}

fn check_cos(c: f64) -> Result<()> {
    if (-1.0..=1.0).contains(&c) {
        Ok(())
    } else {
        Err(invalid("c", format!("inner product must lie in [-1, 1], got {c}")))
    }
}

/// Small-time surrogate `log ν(t, x, y) ≈ -d(x, y)²/(2t)`.
pub fn varadhan_log_kernel(t: f64, x: &Point, y: &Point) -> Result<f64> {
    check_time(t)?;
    if let (Point::Sphere(p), Point::Sphere(q)) = (x, y) {
        if p.len() == q.len() && p.dot(q) + 1.0 <= manifold::ANTIPODAL_TOL {
            return Err(Error::CutLocus("varadhan kernel at antipode".into()));
        }
    }
    let r = manifold::distance(x, y)?;
    Ok(-r * r / (2.0 * t))
}

/// Uniform bound on `|ν - ν_l|` over `c ∈ [-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TailBound {
    pub level: usize,
    pub bound: f64,
    /// `M_k` for `k = level+1 ..= K`, the Gegenbauer envelopes that were summed.
    pub m_values: Vec<f64>,
}

/// Log of the Gegenbauer envelope `M_k ≥ max_{|c|≤1} |C_k^{(d-1)/2}(c)|`.
fn ln_gegenbauer_envelope(d: usize, k: usize) -> f64 {
    let df = d as f64;
    let kf = k as f64;
    let ln_a = ln_gamma((kf + df - 1.0) / 2.0) - ln_gamma((df - 1.0) / 2.0) - ln_gamma(kf / 2.0 + 1.0);
    let ln_b = ln_gamma(kf + df - 1.0) - ln_gamma(df - 1.0) - ln_gamma(kf + 1.0);
    // M = A + |B - A|: B when B ≥ A, otherwise 2A - B.
    if ln_b >= ln_a {
        ln_b
    } else {
        ln_a + (2.0 - (ln_b - ln_a).exp()).ln()
    }
}

/// `Σ_{k=l+1}^{K} e^{-k(k+d-1)t/2}(2k+d-1) M_k / ((d-1)|S^d|)`, with `K` the
/// first index past the peak whose next term is below `1e-18 · bound`.
pub fn truncation_tail_bound(d: usize, t: f64, l: usize) -> Result<TailBound> {
    check_sphere_dim(d)?;
    check_time(t)?;
    let df = d as f64;
    let ln_norm = (df - 1.0).ln() + ln_sphere_area(d);
    let k_peak = ((df + 1.0) / t).sqrt().ceil() as usize + 1;
    let mut bound = 0.0;
    let mut m_values = Vec::new();
    let mut k = l + 1;
    loop {
        let kf = k as f64;
        let ln_m = ln_gegenbauer_envelope(d, k);
        let ln_term = -kf * (kf + df - 1.0) * t / 2.0 + (2.0 * kf + df - 1.0).ln() + ln_m - ln_norm;
        let term = ln_term.exp();
        if !term.is_finite() {
            return Err(Error::NonFinite("truncation tail bound"));
        }
        if k > k_peak && (term == 0.0 || term < 1e-18 * bound) {
            break;
        }
        bound += term;
        m_values.push(ln_m.exp());
        k += 1;
    }
    Ok(TailBound {
        level: l,
        bound,
        m_values,
    })
}

/// Smallest level `l ≤ 10⁶` whose tail bound is at most `zeta`.
pub fn choose_truncation(d: usize, t: f64, zeta: f64) -> Result<usize> {
    check_sphere_dim(d)?;
    check_time(t)?;
    if !(zeta > 0.0) {
        return Err(invalid("zeta", "accuracy must be positive"));
    }
    let ok = |l: usize| -> Result<bool> { Ok(truncation_tail_bound(d, t, l)?.bound <= zeta) };
    if !ok(MAX_LEVEL)? {
        return Err(Error::NoTruncationLevel {
            max_level: MAX_LEVEL,
            zeta,
        });
    }
    let (mut lo, mut hi) = (0usize, MAX_LEVEL);
    if ok(lo)? {
        return Ok(0);
    }
    // invariant: !ok(lo), ok(hi)
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if ok(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Evaluation of `log ν_l`, with a flag when the truncated value was clamped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelEval {
    pub log_value: f64,
    pub clamped: bool,
}

/// A truncated heat kernel with precomputed series coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatKernelSpec {
    kind: ManifoldKind,
    t: f64,
    level: usize,
    coeffs: Vec<f64>,
}

impl HeatKernelSpec {
    /// Circle kernel with wrap count `n_max ≥ 1`.
    pub fn circle(t: f64, n_max: usize) -> Result<Self> {
        check_time(t)?;
        if n_max < 1 {
            return Err(invalid("n_max", "wrap count must be at least 1"));
        }
        Ok(Self {
            kind: ManifoldKind::Circle,
            t,
            level: n_max,
            coeffs: Vec::new(),
        })
    }

    /// Sphere kernel on `S^d` truncated at degree `l`.
    pub fn sphere(d: usize, t: f64, l: usize) -> Result<Self> {
        check_sphere_dim(d)?;
        check_time(t)?;
        Ok(Self {
            kind: ManifoldKind::Sphere(d),
            t,
            level: l,
            coeffs: sphere_coefficients(d, t, l),
        })
    }

    /// Kernel whose truncation error is at most `zeta`.
    pub fn for_accuracy(kind: ManifoldKind, t: f64, zeta: f64) -> Result<Self> {
        match kind {
            ManifoldKind::Circle => Self::circle(t, circle_wrap_count(t, zeta)?),
            ManifoldKind::Sphere(1) => Self::circle(t, circle_wrap_count(t, zeta)?),
            ManifoldKind::Sphere(d) => Self::sphere(d, t, choose_truncation(d, t, zeta)?),
            ManifoldKind::Spd(_) => Err(Error::UnsupportedKind("heat-kernel series")),
        }
    }

    pub fn kind(&self) -> ManifoldKind {
        self.kind
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    /// Truncation level `l` (sphere) or wrap count `n_max` (circle).
    pub fn level(&self) -> usize {
        self.level
    }

    fn alpha(&self) -> f64 {
        match self.kind {
            ManifoldKind::Sphere(d) => (d as f64 - 1.0) / 2.0,
            _ => 0.0,
        }
    }

    /// Raw truncated value at `c = ⟨x, y⟩` (sphere) or signed offset (circle).
    pub fn value(&self, arg: f64) -> f64 {
        match self.kind {
            ManifoldKind::Sphere(d) if d >= 2 => gegenbauer_series(&self.coeffs, self.alpha(), arg).0,
            _ => circle_kernel(self.t, arg, self.level),
        }
    }

    /// `log ν_l` as a function of geodesic distance `r ∈ [0, π]`.
    pub fn log_at_distance(&self, r: f64) -> KernelEval {
        match self.kind {
            ManifoldKind::Sphere(d) if d >= 2 => self.clamped_log(self.value(r.cos())),
            _ => KernelEval {
                log_value: circle_log_and_dlog(self.t, r, self.level).0,
                clamped: false,
            },
        }
    }

    fn clamped_log(&self, v: f64) -> KernelEval {
        if v > KERNEL_FLOOR {
            KernelEval {
                log_value: v.ln(),
                clamped: false,
            }
        } else {
            KernelEval {
                log_value: KERNEL_FLOOR.ln(),
                clamped: true,
            }
        }
    }

    /// `log ν_l(t, x, y)`.
    pub fn log_density(&self, x: &Point, y: &Point) -> Result<KernelEval> {
        match (self.kind, x, y) {
            (ManifoldKind::Circle, Point::Circle(a), Point::Circle(b)) => Ok(KernelEval {
                log_value: circle_log_and_dlog(self.t, wrap_angle(b - a), self.level).0,
                clamped: false,
            }),
            (ManifoldKind::Sphere(d), Point::Sphere(p), Point::Sphere(_)) if p.len() == d + 1 => {
                Ok(self.clamped_log(self.value(sphere_cos(x, y)?)))
            }
            _ => Err(Error::DimensionMismatch(format!(
                "kernel on {} evaluated at {} points",
                self.kind,
                x.kind()
            ))),
        }
    }

    /// Riemannian gradient in `x` of `log ν_l(t, x, y)`.
    pub fn grad_log_x(&self, x: &Point, y: &Point) -> Result<TangentVector> {
        match (self.kind, x, y) {
            (ManifoldKind::Circle, Point::Circle(a), Point::Circle(b)) => {
                let (_, dlog) = circle_log_and_dlog(self.t, wrap_angle(b - a), self.level);
                Ok(TangentVector {
                    base: x.clone(),
                    vec: Ambient::Scalar(-dlog),
                })
            }
            (ManifoldKind::Sphere(d), Point::Sphere(p), Point::Sphere(q)) if p.len() == d + 1 => {
                let c = p.dot(q).clamp(-1.0, 1.0);
                let (v, dv) = gegenbauer_series(&self.coeffs, self.alpha(), c);
                if !(v > 0.0) {
                    return Err(Error::KernelNonPositive(v));
                }
                Ok(TangentVector {
                    base: x.clone(),
                    vec: Ambient::Vector((q - p * c) * (dv / v)),
                })
            }
            _ => Err(Error::DimensionMismatch("kernel gradient".into())),
        }
    }
}
