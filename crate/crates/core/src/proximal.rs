//! The Riemannian proximal sampler: alternate a Brownian increment
//! `y ~ ν(η, x, ·)` (MBI) with a draw from `π(x | y) ∝ e^{-f(x)} ν(η, x, y)` (RHK).

use std::f64::consts::{PI, TAU};

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::gaussian::RGaussian;
use crate::heat_kernel::{HeatKernelSpec, SERIES_MIN_TIME};
use crate::manifold::{self, ManifoldKind, Point, TangentVector};
use crate::rng::{chain_rng, ChainRng};
use crate::targets::Target;

/// Number of low-discrepancy points used to calibrate acceptance constants.
pub const CALIBRATION_GRID: usize = 4096;
/// Local refinement iterations after the grid search.
pub const CALIBRATION_REFINEMENTS: usize = 50;
/// Tolerance on unclipped acceptance ratios when clipping is off.
pub const ACCEPTANCE_SLACK: f64 = 1e-9;

/// Sampler for `y | x`.
#[derive(Debug, Clone, PartialEq)]
pub enum MbiOracle {
    /// Rejection from `μ(t, x, ·)` against the truncated kernel; `None` picks the level from `zeta`.
    SeriesRejection { level: Option<usize> },
    /// `substeps` geodesic steps, each a tangent Gaussian of variance `η/substeps`.
    GeodesicRandomWalk { substeps: usize },
    /// Exact Riemannian Gaussian `μ(η, x, ·)`.
    RGaussianVaradhan,
}

/// Sampler for `x | y`.
#[derive(Debug, Clone, PartialEq)]
pub enum RhkOracle {
    TruncatedKernelRejection { level: Option<usize> },
    /// Rejection against `exp(-f(x) - d(x, y)²/(2η))`.
    VaradhanRejection,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProposalT {
    /// `t = sη` with `s = n/(n-1)` for intrinsic dimension `n ≥ 2` and `s = 2` on the circle.
    Auto,
    Fixed(f64),
}

/// Where the RHK proposal is centered when its constant is calibrated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProposalCenter {
    /// The minimizer `x*` of the conditional potential.
    Mode,
    /// The conditioning point `y`.
    Data,
}

/// Acceptance constant for the Varadhan RHK oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VaradhanEnvelope {
    /// Centered at `y` with offset `½L₁²/(1/η - 1/t)`; valid for `L₁`-Lipschitz `f`.
    Lipschitz,
    /// Grid-calibrated constant (circle and spheres).
    Calibrated,
    /// Centered at `x*` with `t = η` and no offset; valid for geodesically convex
    /// `f` on nonpositively curved manifolds.
    Convex,
}

/// Stopping rule for mode finding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeOptions {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for ModeOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iters: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub eta: f64,
    pub mbi: MbiOracle,
    pub rhk: RhkOracle,
    pub proposal_t: ProposalT,
    pub rejection_cap: u64,
    pub clip_acceptance: bool,
    pub zeta: f64,
    pub center: ProposalCenter,
    pub envelope: VaradhanEnvelope,
    pub mode: ModeOptions,
}

impl SamplerConfig {
    /// Exact-series oracles with auto-chosen truncation.
    pub fn new(eta: f64) -> Self {
        Self {
            eta,
            mbi: MbiOracle::SeriesRejection { level: None },
            rhk: RhkOracle::TruncatedKernelRejection { level: None },
            proposal_t: ProposalT::Auto,
            rejection_cap: 1_000_000,
            clip_acceptance: true,
            zeta: 1e-10,
            center: ProposalCenter::Mode,
            envelope: VaradhanEnvelope::Lipschitz,
            mode: ModeOptions::default(),
        }
    }

    /// Riemannian-Gaussian MBI with Varadhan RHK.
    pub fn varadhan(eta: f64, envelope: VaradhanEnvelope) -> Self {
        Self {
            mbi: MbiOracle::RGaussianVaradhan,
            rhk: RhkOracle::VaradhanRejection,
            envelope,
            ..Self::new(eta)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(invalid("eta", format!("step size must be positive, got {}", self.eta)));
        }
        if self.rejection_cap < 1 {
            return Err(invalid("rejection_cap", "must be at least 1"));
        }
        if !(self.zeta > 0.0) {
            return Err(invalid("zeta", "must be positive"));
        }
        if let MbiOracle::GeodesicRandomWalk { substeps: 0 } = self.mbi {
            return Err(invalid("substeps", "must be at least 1"));
        }
        if let ProposalT::Fixed(t) = self.proposal_t {
            if !(t > 0.0 && t.is_finite()) {
                return Err(invalid("proposal_t", "must be positive"));
            }
        }
        if !(self.mode.tol >= 0.0) || self.mode.max_iters == 0 {
            return Err(invalid("mode", "needs tol >= 0 and max_iters >= 1"));
        }
        Ok(())
    }
}

/// Parameters of the Lipschitz-envelope Varadhan sampler for a target accuracy `ε`:
/// `C = 1/ln(1/ε)`, `η = C/(L₁² n)`, `t = C/(L₁²(n-1))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzSchedule {
    pub c_eps: f64,
    pub eta: f64,
    pub t: f64,
    /// Upper-envelope variance `C/(L₁²(n+1))`.
    pub t_upper: f64,
}

impl LipschitzSchedule {
    pub fn new(l1: f64, n: usize, eps: f64) -> Result<Self> {
        if !(l1 > 0.0) {
            return Err(invalid("l1", "must be positive"));
        }
        if n < 2 {
            return Err(invalid("n", "needs intrinsic dimension >= 2"));
        }
        if !(eps > 0.0 && eps < 1.0) {
            return Err(invalid("eps", "must lie in (0, 1)"));
        }
        let c_eps = 1.0 / (1.0 / eps).ln();
        let nf = n as f64;
        let l2 = l1 * l1;
        Ok(Self {
            c_eps,
            eta: c_eps / (l2 * nf),
            t: c_eps / (l2 * (nf - 1.0)),
            t_upper: c_eps / (l2 * (nf + 1.0)),
        })
    }

    /// Offset `C/2` that bounds the acceptance ratio by one.
    pub fn offset(&self) -> f64 {
        self.c_eps / 2.0
    }
}

/// `s` in the auto rule `t = sη`.
pub fn auto_ratio(kind: ManifoldKind) -> f64 {
    let n = kind.dim() as f64;
    if n >= 2.0 {
        n / (n - 1.0)
    } else {
        2.0
    }
}

/// Per-call diagnostics accumulated by the oracles.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    pub mbi_rejections: u64,
    pub rhk_rejections: u64,
    /// Truncated kernel values clamped to the floor.
    pub kernel_clamps: u64,
    /// Proposals whose acceptance ratio exceeded one and was clipped.
    pub clipped: u64,
}

impl Counters {
    pub fn absorb(&mut self, other: &Counters) {
        self.mbi_rejections += other.mbi_rejections;
        self.rhk_rejections += other.rhk_rejections;
        self.kernel_clamps += other.kernel_clamps;
        self.clipped += other.clipped;
    }
}

/// Runs a rejection loop; returns the accepted point and the number of rejections.
fn rejection_loop<R, P, A>(
    cap: u64,
    clip: bool,
    rng: &mut R,
    clipped: &mut u64,
    mut propose: P,
    mut log_accept: A,
) -> Result<(Point, u64)>
where
    R: Rng + ?Sized,
    P: FnMut(&mut R) -> Result<Point>,
    A: FnMut(&Point) -> Result<f64>,
{
    let mut mass = 0.0;
    for attempt in 0..cap {
        let x = propose(rng)?;
        let log_v = log_accept(&x)?;
        if log_v.is_nan() {
            return Err(Error::NonFinite("acceptance ratio"));
        }
        let mut v = log_v.exp();
        if v > 1.0 {
            if clip {
                *clipped += 1;
            } else if v > 1.0 + ACCEPTANCE_SLACK {
                return Err(Error::AcceptanceExceedsOne(v));
            }
            v = 1.0;
        }
        mass += v;
        if rng.random::<f64>() < v {
            return Ok((x, attempt));
        }
    }
    Err(Error::RejectionCapExceeded {
        cap,
        acceptance: mass / cap as f64,
    })
}

fn gaussian_draw<R: Rng + ?Sized>(center: &Point, t: f64, cap: u64, rng: &mut R) -> Result<Point> {
    Ok(RGaussian::new(center.clone(), t)?.sample_counted(rng, cap)?.point)
}

/// Acceptance constant for the series MBI oracle, from a radial search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MbiPlan {
    pub t: f64,
    /// `max_r [log ν_l(η, r) - log ν_l(η, 0) + r²/(2t)]`, subtracted inside `log V`.
    pub log_max: f64,
}

impl MbiPlan {
    /// Grid of `CALIBRATION_GRID` radii on `[0, π]` followed by golden-section refinement.
    pub fn calibrate(kernel: &HeatKernelSpec, t: f64) -> Self {
        let base = kernel.log_at_distance(0.0).log_value;
        let h = |r: f64| kernel.log_at_distance(r).log_value - base + r * r / (2.0 * t);
        let n = CALIBRATION_GRID;
        let step = PI / (n - 1) as f64;
        let (mut best_i, mut best) = (0, h(0.0));
        for i in 1..n {
            let v = h(i as f64 * step);
            if v > best {
                best = v;
                best_i = i;
            }
        }
        let lo = (best_i.saturating_sub(1)) as f64 * step;
        let hi = ((best_i + 1).min(n - 1)) as f64 * step;
        best = best.max(golden_max(&h, lo, hi, CALIBRATION_REFINEMENTS));
        Self { t, log_max: best }
    }
}

fn golden_max<F: Fn(f64) -> f64>(h: &F, mut a: f64, mut b: f64, iters: usize) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (h(c), h(d));
    let mut best = fc.max(fd);
    for _ in 0..iters {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = h(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = h(d);
        }
        best = best.max(fc).max(fd);
    }
    best
}

/// Draw from `π̂(y | x) ∝ ν_l(η, x, y)` by rejection from `μ(t, x, ·)`.
pub fn mbi_series_rejection<R: Rng + ?Sized>(
    x: &Point,
    kernel: &HeatKernelSpec,
    plan: &MbiPlan,
    cfg: &SamplerConfig,
    rng: &mut R,
    counters: &mut Counters,
) -> Result<Point> {
    let base = kernel.log_at_distance(0.0).log_value;
    let mut clamps = 0;
    let (y, rej) = rejection_loop(
        cfg.rejection_cap,
        cfg.clip_acceptance,
        rng,
        &mut counters.clipped,
        |r| gaussian_draw(x, plan.t, cfg.rejection_cap, r),
        |y| {
            let e = kernel.log_density(x, y)?;
            clamps += e.clamped as u64;
            let r = manifold::distance(x, y)?;
            Ok(e.log_value - base + r * r / (2.0 * plan.t) - plan.log_max)
        },
    )?;
    counters.mbi_rejections += rej;
    counters.kernel_clamps += clamps;
    Ok(y)
}

/// Composition of `substeps` exponential-map steps with tangent Gaussians of variance `η/substeps`.
pub fn mbi_geodesic_random_walk<R: Rng + ?Sized>(
    x: &Point,
    eta: f64,
    substeps: usize,
    rng: &mut R,
) -> Result<Point> {
    if substeps == 0 {
        return Err(invalid("substeps", "must be at least 1"));
    }
    let h = eta / substeps as f64;
    let mut p = x.clone();
    for _ in 0..substeps {
        let v = manifold::sample_tangent_gaussian(&p, h, rng)?;
        p = manifold::exp_map(&p, &v)?;
    }
    Ok(p)
}

/// The conditional potential `g(x)` whose minimizer the RHK oracles need.
#[derive(Debug, Clone, Copy)]
pub enum ConditionalPotential<'a> {
    /// `g(x) = f(x) - log ν_l(η, x, y)`.
    Kernel(&'a HeatKernelSpec),
    /// `g(x) = f(x) + d(x, y)²/(2η)`.
    Varadhan { eta: f64 },
}

impl ConditionalPotential<'_> {
    fn value(&self, target: &dyn Target, x: &Point, y: &Point) -> Result<(f64, bool)> {
        let f = target.value(x);
        match self {
            ConditionalPotential::Kernel(k) => {
                let e = k.log_density(x, y)?;
                Ok((f - e.log_value, e.clamped))
            }
            ConditionalPotential::Varadhan { eta } => {
                let r = manifold::distance(x, y)?;
                Ok((f + r * r / (2.0 * eta), false))
            }
        }
    }

    fn grad(&self, target: &dyn Target, x: &Point, y: &Point) -> Result<TangentVector> {
        let gf = target.riemannian_grad(x)?;
        let gk = match self {
            ConditionalPotential::Kernel(k) => k.grad_log_x(x, y)?.scale(-1.0),
            ConditionalPotential::Varadhan { eta } => manifold::log_map(x, y)?.scale(-1.0 / eta),
        };
        gf.add(&gk)
    }
}

/// Riemannian gradient descent with Armijo backtracking.
fn descend<G, D>(start: &Point, g: G, grad: D, step0: f64, tol: f64, max_iters: usize) -> Result<Point>
where
    G: Fn(&Point) -> Result<f64>,
    D: Fn(&Point) -> Result<TangentVector>,
{
    let mut x = start.clone();
    let mut gx = g(&x)?;
    if !gx.is_finite() {
        return Err(Error::NonFinite("mode-finding objective"));
    }
    for _ in 0..max_iters {
        let d = grad(&x)?;
        let n2 = manifold::inner(&d, &d);
        if !n2.is_finite() {
            return Err(Error::NonFinite("mode-finding gradient"));
        }
        if n2.sqrt() <= tol {
            break;
        }
        let mut a = step0;
        let mut moved = false;
        for _ in 0..60 {
            let cand = manifold::exp_map(&x, &d.scale(-a))?;
            if let Ok(gc) = g(&cand) {
                if gc.is_finite() && gc <= gx - 1e-4 * a * n2 {
                    x = cand;
                    gx = gc;
                    moved = true;
                    break;
                }
            }
            a *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Ok(x)
}

/// Minimizer of the conditional potential `g`, by gradient descent started at `y`.
pub fn rhk_find_mode(
    target: &dyn Target,
    y: &Point,
    eta: f64,
    potential: ConditionalPotential<'_>,
    opts: ModeOptions,
) -> Result<Point> {
    let step0 = 1.0 / (1.0 / eta + target.lipschitz());
    descend(
        y,
        |x| Ok(potential.value(target, x, y)?.0),
        |x| potential.grad(target, x, y),
        step0,
        opts.tol,
        opts.max_iters,
    )
}

/// Deterministic low-discrepancy points: uniform angles on the circle, a
/// Fibonacci lattice on `S²` and normalized Halton–Box–Muller points on `S^d`.
pub fn calibration_grid(kind: ManifoldKind, n: usize) -> Result<Vec<Point>> {
    match kind {
        ManifoldKind::Circle | ManifoldKind::Sphere(1) => {
            Ok((0..n).map(|i| Point::circle(TAU * (i as f64 + 0.5) / n as f64)).collect())
        }
        ManifoldKind::Sphere(2) => {
            let golden = PI * (3.0 - 5f64.sqrt());
            (0..n)
                .map(|i| {
                    let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
                    let rho = (1.0 - z * z).sqrt();
                    let phi = golden * i as f64;
                    Point::sphere_from_slice(&[rho * phi.cos(), rho * phi.sin(), z])
                })
                .collect()
        }
        ManifoldKind::Sphere(d) => {
            let dims = d + 1;
            let primes = first_primes(2 * dims.div_ceil(2));
            (0..n)
                .map(|i| {
                    let mut v = Vec::with_capacity(dims + 1);
                    for pair in primes.chunks(2) {
                        let u1 = halton(i + 1, pair[0]);
                        let u2 = halton(i + 1, pair[1]);
                        let r = (-2.0 * u1.ln()).sqrt();
                        v.push(r * (TAU * u2).cos());
                        v.push(r * (TAU * u2).sin());
                    }
                    v.truncate(dims);
                    Point::sphere_from_slice(&v)
                })
                .collect()
        }
        ManifoldKind::Spd(_) => Err(Error::UnsupportedKind("calibration grid")),
    }
}

fn halton(mut i: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

fn first_primes(n: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(n);
    let mut k = 2;
    while out.len() < n {
        if (2..k).take_while(|p| p * p <= k).all(|p| k % p != 0) {
            out.push(k);
        }
        k += 1;
    }
    out
}

/// `max_x [log_target(x) + d(x, c)²/(2t)]` over the grid plus local ascent from the best point.
pub fn calibrate_log_max<L, G>(
    grid: &[Point],
    center: &Point,
    t: f64,
    step0: f64,
    log_target: L,
    grad_log_target: G,
) -> Result<f64>
where
    L: Fn(&Point) -> Result<f64>,
    G: Fn(&Point) -> Result<TangentVector>,
{
    let h = |x: &Point| -> Result<f64> {
        let r = manifold::distance(x, center)?;
        Ok(log_target(x)? + r * r / (2.0 * t))
    };
    let mut best_point = center.clone();
    let mut best = h(center)?;
    for p in grid {
        let v = h(p)?;
        if v > best {
            best = v;
            best_point = p.clone();
        }
    }
    let refined = descend(
        &best_point,
        |x| Ok(-h(x)?),
        |x| {
            let g = grad_log_target(x)?;
            // grad of d(x, c)²/(2t) is -log_x(c)/t
            g.add(&manifold::log_map(x, center)?.scale(-1.0 / t)).map(|v| v.scale(-1.0))
        },
        step0,
        0.0,
        CALIBRATION_REFINEMENTS,
    );
    if let Ok(p) = refined {
        if let Ok(v) = h(&p) {
            best = best.max(v);
        }
    }
    if !best.is_finite() {
        return Err(Error::NonFinite("acceptance calibration"));
    }
    Ok(best)
}

/// Draw from `π̂(x | y) ∝ e^{-f(x)} ν_l(η, x, y)` with a calibrated Riemannian-Gaussian envelope.
#[allow(clippy::too_many_arguments)]
pub fn rhk_truncated_rejection<R: Rng + ?Sized>(
    y: &Point,
    target: &dyn Target,
    kernel: &HeatKernelSpec,
    t: f64,
    grid: &[Point],
    cfg: &SamplerConfig,
    rng: &mut R,
    counters: &mut Counters,
) -> Result<Point> {
    let pot = ConditionalPotential::Kernel(kernel);
    let center = match cfg.center {
        ProposalCenter::Mode => rhk_find_mode(target, y, cfg.eta, pot, cfg.mode)?,
        ProposalCenter::Data => y.clone(),
    };
    calibrated_rejection(y, target, pot, &center, t, grid, cfg, rng, counters)
}

#[allow(clippy::too_many_arguments)]
fn calibrated_rejection<R: Rng + ?Sized>(
    y: &Point,
    target: &dyn Target,
    pot: ConditionalPotential<'_>,
    center: &Point,
    t: f64,
    grid: &[Point],
    cfg: &SamplerConfig,
    rng: &mut R,
    counters: &mut Counters,
) -> Result<Point> {
    let step0 = 1.0 / (1.0 / cfg.eta + target.lipschitz());
    let log_max = calibrate_log_max(
        grid,
        center,
        t,
        step0,
        |x| Ok(-pot.value(target, x, y)?.0),
        |x| Ok(pot.grad(target, x, y)?.scale(-1.0)),
    )?;
    let mut clamps = 0;
    let (x, rej) = rejection_loop(
        cfg.rejection_cap,
        cfg.clip_acceptance,
        rng,
        &mut counters.clipped,
        |r| gaussian_draw(center, t, cfg.rejection_cap, r),
        |x| {
            let (g, clamped) = pot.value(target, x, y)?;
            clamps += clamped as u64;
            let r = manifold::distance(x, center)?;
            Ok(-g + r * r / (2.0 * t) - log_max)
        },
    )?;
    counters.rhk_rejections += rej;
    counters.kernel_clamps += clamps;
    Ok(x)
}

/// Draw from `π̃(x | y) ∝ exp(-f(x) - d(x, y)²/(2η))`.
#[allow(clippy::too_many_arguments)]
pub fn rhk_varadhan_rejection<R: Rng + ?Sized>(
    y: &Point,
    target: &dyn Target,
    t: f64,
    grid: Option<&[Point]>,
    cfg: &SamplerConfig,
    rng: &mut R,
    counters: &mut Counters,
) -> Result<Point> {
    let eta = cfg.eta;
    let pot = ConditionalPotential::Varadhan { eta };
    match cfg.envelope {
        VaradhanEnvelope::Lipschitz => {
            if !(t > eta) {
                return Err(invalid("proposal_t", "Lipschitz envelope needs t > eta"));
            }
            let l1 = target.lipschitz();
            let offset = 0.5 * l1 * l1 / (1.0 / eta - 1.0 / t);
            let fy = target.value(y);
            let (x, rej) = rejection_loop(
                cfg.rejection_cap,
                cfg.clip_acceptance,
                rng,
                &mut counters.clipped,
                |r| gaussian_draw(y, t, cfg.rejection_cap, r),
                |x| {
                    let r2 = manifold::distance(x, y)?.powi(2);
                    Ok(-target.value(x) + fy - r2 / (2.0 * eta) - offset + r2 / (2.0 * t))
                },
            )?;
            counters.rhk_rejections += rej;
            Ok(x)
        }
        VaradhanEnvelope::Convex => {
            let mode = rhk_find_mode(target, y, eta, pot, cfg.mode)?;
            let g_star = pot.value(target, &mode, y)?.0;
            let (x, rej) = rejection_loop(
                cfg.rejection_cap,
                cfg.clip_acceptance,
                rng,
                &mut counters.clipped,
                |r| gaussian_draw(&mode, t, cfg.rejection_cap, r),
                |x| {
                    let g = pot.value(target, x, y)?.0;
                    let r = manifold::distance(x, &mode)?;
                    Ok(-g + g_star + r * r / (2.0 * t))
                },
            )?;
            counters.rhk_rejections += rej;
            Ok(x)
        }
        VaradhanEnvelope::Calibrated => {
            let grid = grid.ok_or(Error::UnsupportedKind("calibrated Varadhan envelope"))?;
            let center = match cfg.center {
                ProposalCenter::Mode => rhk_find_mode(target, y, eta, pot, cfg.mode)?,
                ProposalCenter::Data => y.clone(),
            };
            calibrated_rejection(y, target, pot, &center, t, grid, cfg, rng, counters)
        }
    }
}

/// Oracles resolved against a target: kernels built, constants calibrated, fallbacks applied.
#[derive(Debug, Clone)]
pub struct ProximalSampler<'a> {
    target: &'a dyn Target,
    cfg: SamplerConfig,
    mbi_kernel: Option<(HeatKernelSpec, MbiPlan)>,
    rhk_kernel: Option<HeatKernelSpec>,
    mbi_t: f64,
    rhk_t: f64,
    grid: Option<Vec<Point>>,
    warnings: u64,
}

impl<'a> ProximalSampler<'a> {
    pub fn new(target: &'a dyn Target, cfg: &SamplerConfig) -> Result<Self> {
        cfg.validate()?;
        let kind = target.kind();
        let mut cfg = cfg.clone();
        let mut warnings = 0;
        let small_sphere_time = matches!(kind, ManifoldKind::Sphere(d) if d >= 2) && cfg.eta < SERIES_MIN_TIME;
        if small_sphere_time {
            if let RhkOracle::TruncatedKernelRejection { .. } = cfg.rhk {
                cfg.rhk = RhkOracle::VaradhanRejection;
                warnings += 1;
            }
            if let MbiOracle::SeriesRejection { .. } = cfg.mbi {
                cfg.mbi = MbiOracle::RGaussianVaradhan;
                warnings += 1;
            }
        }
        let s = auto_ratio(kind);
        let auto_t = |convex: bool| match cfg.proposal_t {
            ProposalT::Fixed(t) => t,
            ProposalT::Auto if convex => cfg.eta,
            ProposalT::Auto => s * cfg.eta,
        };
        let build = |level: Option<usize>| match level {
            Some(l) => match kind {
                ManifoldKind::Circle | ManifoldKind::Sphere(1) => HeatKernelSpec::circle(cfg.eta, l.max(1)),
                ManifoldKind::Sphere(d) => HeatKernelSpec::sphere(d, cfg.eta, l),
                ManifoldKind::Spd(_) => Err(Error::UnsupportedKind("heat-kernel series")),
            },
            None => HeatKernelSpec::for_accuracy(kind, cfg.eta, cfg.zeta),
        };
        let mbi_t = auto_t(false);
        let mbi_kernel = match cfg.mbi {
            MbiOracle::SeriesRejection { level } => {
                let k = build(level)?;
                let plan = MbiPlan::calibrate(&k, mbi_t);
                Some((k, plan))
            }
            _ => None,
        };
        let convex = cfg.rhk == RhkOracle::VaradhanRejection && cfg.envelope == VaradhanEnvelope::Convex;
        let rhk_t = auto_t(convex);
        let rhk_kernel = match cfg.rhk {
            RhkOracle::TruncatedKernelRejection { level } => Some(build(level)?),
            RhkOracle::VaradhanRejection => None,
        };
        let needs_grid = rhk_kernel.is_some()
            || (cfg.rhk == RhkOracle::VaradhanRejection && cfg.envelope == VaradhanEnvelope::Calibrated);
        let grid = if needs_grid {
            Some(calibration_grid(kind, CALIBRATION_GRID)?)
        } else {
            None
        };
        if let (ManifoldKind::Spd(m), MbiOracle::RGaussianVaradhan) = (kind, &cfg.mbi) {
            if cfg.eta >= 12.0 / m as f64 {
                return Err(invalid("eta", "SPD Riemannian Gaussian needs eta < 12/m"));
            }
        }
        Ok(Self {
            target,
            cfg,
            mbi_kernel,
            rhk_kernel,
            mbi_t,
            rhk_t,
            grid,
            warnings,
        })
    }

    /// Configuration after fallbacks were applied.
    pub fn config(&self) -> &SamplerConfig {
        &self.cfg
    }

    /// Number of oracle substitutions made at construction.
    pub fn warnings(&self) -> u64 {
        self.warnings
    }

    pub fn mbi_plan(&self) -> Option<&MbiPlan> {
        self.mbi_kernel.as_ref().map(|(_, p)| p)
    }

    pub fn rhk_kernel(&self) -> Option<&HeatKernelSpec> {
        self.rhk_kernel.as_ref()
    }

    pub fn proposal_times(&self) -> (f64, f64) {
        (self.mbi_t, self.rhk_t)
    }

    pub fn mbi<R: Rng + ?Sized>(&self, x: &Point, rng: &mut R, counters: &mut Counters) -> Result<Point> {
        match (&self.cfg.mbi, &self.mbi_kernel) {
            (MbiOracle::SeriesRejection { .. }, Some((k, plan))) => {
                mbi_series_rejection(x, k, plan, &self.cfg, rng, counters)
            }
            (MbiOracle::GeodesicRandomWalk { substeps }, _) => {
                mbi_geodesic_random_walk(x, self.cfg.eta, *substeps, rng)
            }
            (MbiOracle::RGaussianVaradhan, _) => {
                let d = RGaussian::new(x.clone(), self.cfg.eta)?.sample_counted(rng, self.cfg.rejection_cap)?;
                Ok(d.point)
            }
            _ => unreachable!("series kernel built in new"),
        }
    }

    pub fn rhk<R: Rng + ?Sized>(&self, y: &Point, rng: &mut R, counters: &mut Counters) -> Result<Point> {
        match (&self.cfg.rhk, &self.rhk_kernel, &self.grid) {
            (RhkOracle::TruncatedKernelRejection { .. }, Some(k), Some(grid)) => {
                rhk_truncated_rejection(y, self.target, k, self.rhk_t, grid, &self.cfg, rng, counters)
            }
            (RhkOracle::VaradhanRejection, _, grid) => {
                rhk_varadhan_rejection(y, self.target, self.rhk_t, grid.as_deref(), &self.cfg, rng, counters)
            }
            _ => unreachable!("kernel and grid built in new"),
        }
    }

    /// One iteration: `y` from MBI at `x`, then `x_next` from RHK at `y`.
    pub fn step<R: Rng + ?Sized>(&self, x: &Point, rng: &mut R) -> Result<(Point, Point, Counters)> {
        let mut c = Counters::default();
        let y = self.mbi(x, rng, &mut c)?;
        let x_next = self.rhk(&y, rng, &mut c)?;
        Ok((y, x_next, c))
    }

    /// Chain of `n_iters` steps driven by stream `chain` of `seed`.
    pub fn run(&self, init: &Point, n_iters: usize, seed: u64, chain: u64) -> Result<ChainTrace> {
        let mut rng = chain_rng(seed, chain);
        self.run_with_rng(init, n_iters, seed, &mut rng)
    }

    pub fn run_with_rng(&self, init: &Point, n_iters: usize, seed: u64, rng: &mut ChainRng) -> Result<ChainTrace> {
        if n_iters < 1 {
            return Err(invalid("n_iters", "must be at least 1"));
        }
        if init.kind() != self.target.kind() {
            return Err(Error::DimensionMismatch(format!(
                "initial point on {} for target on {}",
                init.kind(),
                self.target.kind()
            )));
        }
        let mut trace = ChainTrace {
            states: vec![init.clone()],
            mbi_rejections: Vec::with_capacity(n_iters),
            rhk_rejections: Vec::with_capacity(n_iters),
            clamp_events: 0,
            clipped: 0,
            warnings: self.warnings,
            seed,
        };
        let mut x = init.clone();
        for _ in 0..n_iters {
            let (_, next, c) = self.step(&x, rng)?;
            trace.mbi_rejections.push(c.mbi_rejections);
            trace.rhk_rejections.push(c.rhk_rejections);
            trace.clamp_events += c.kernel_clamps;
            trace.clipped += c.clipped;
            trace.states.push(next.clone());
            x = next;
        }
        Ok(trace)
    }
}

/// One step of the proximal sampler with freshly resolved oracles.
pub fn proximal_step<R: Rng + ?Sized>(
    x: &Point,
    target: &dyn Target,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<(Point, Point, Counters)> {
    ProximalSampler::new(target, cfg)?.step(x, rng)
}

/// Runs a chain on stream 0 of `seed`.
pub fn run_chain(init: &Point, n_iters: usize, target: &dyn Target, cfg: &SamplerConfig, seed: u64) -> Result<ChainTrace> {
    ProximalSampler::new(target, cfg)?.run(init, n_iters, seed, 0)
}

/// States and per-iteration diagnostics of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainTrace {
    /// `n_iters + 1` states, starting with the initial point.
    pub states: Vec<Point>,
    pub mbi_rejections: Vec<u64>,
    pub rhk_rejections: Vec<u64>,
    pub clamp_events: u64,
    pub clipped: u64,
    pub warnings: u64,
    pub seed: u64,
}

impl ChainTrace {
    pub fn n_iters(&self) -> usize {
        self.states.len() - 1
    }

    pub fn last(&self) -> &Point {
        self.states.last().expect("trace holds the initial state")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::{CircleCosine, SpdQuartic, VonMisesFisher, Zero};

    #[test]
    fn auto_ratios() {
        assert_eq!(auto_ratio(ManifoldKind::Circle), 2.0);
        assert_eq!(auto_ratio(ManifoldKind::Sphere(2)), 2.0);
        assert!((auto_ratio(ManifoldKind::Sphere(5)) - 1.25).abs() < 1e-15);
    }

    #[test]
    fn lipschitz_schedule_offset_matches_general_form() {
        let s = LipschitzSchedule::new(100.0, 2, 1e-3).unwrap();
        let general = 0.5 * 100.0f64.powi(2) / (1.0 / s.eta - 1.0 / s.t);
        assert!((general - s.offset()).abs() < 1e-12);
        assert!(s.t_upper < s.eta && s.eta < s.t);
    }

    #[test]
    fn zero_potential_varadhan_mode_is_y() {
        let z = Zero {
            kind: ManifoldKind::Sphere(2),
        };
        let y = Point::sphere_from_slice(&[0.3, 0.4, 0.5]).unwrap();
        let m = rhk_find_mode(&z, &y, 0.1, ConditionalPotential::Varadhan { eta: 0.1 }, ModeOptions::default())
            .unwrap();
        assert!(manifold::distance(&m, &y).unwrap() < 1e-12);
    }

    #[test]
    fn quartic_mode_at_identity() {
        let t = SpdQuartic::new(3, 0.03, 278.0).unwrap();
        let id = Point::identity(3);
        let m = rhk_find_mode(&t, &id, 0.01, ConditionalPotential::Varadhan { eta: 0.01 }, ModeOptions::default())
            .unwrap();
        assert!(manifold::distance(&m, &id).unwrap() < 1e-12);
    }

    #[test]
    fn grid_sizes_and_spread() {
        for kind in [ManifoldKind::Circle, ManifoldKind::Sphere(2), ManifoldKind::Sphere(5)] {
            let g = calibration_grid(kind, 512).unwrap();
            assert_eq!(g.len(), 512);
            assert!(g.iter().all(|p| p.kind() == kind));
        }
        let g = calibration_grid(ManifoldKind::Sphere(5), 4096).unwrap();
        let mean: f64 = g.iter().map(|p| p.as_vector().unwrap()[0]).sum::<f64>() / 4096.0;
        assert!(mean.abs() < 0.02);
        assert!(calibration_grid(ManifoldKind::Spd(2), 8).is_err());
    }

    #[test]
    fn small_eta_on_sphere_switches_to_varadhan() {
        let t = VonMisesFisher::new(10.0, &[10.0, 0.1, 2.0]).unwrap();
        let s = ProximalSampler::new(&t, &SamplerConfig::new(0.01)).unwrap();
        assert_eq!(s.config().rhk, RhkOracle::VaradhanRejection);
        assert_eq!(s.warnings(), 2);
    }

    #[test]
    fn series_oracles_rejected_on_spd() {
        let t = SpdQuartic::new(3, 0.03, 278.0).unwrap();
        assert!(ProximalSampler::new(&t, &SamplerConfig::new(0.1)).is_err());
        assert!(ProximalSampler::new(&t, &SamplerConfig::varadhan(0.01, VaradhanEnvelope::Convex)).is_ok());
    }

    #[test]
    fn mbi_plan_is_nonnegative_at_zero() {
        let k = HeatKernelSpec::circle(0.2, 3).unwrap();
        let plan = MbiPlan::calibrate(&k, 0.4);
        assert!(plan.log_max >= 0.0);
    }

    #[test]
    fn run_is_deterministic() {
        let t = CircleCosine { a: 2.0 };
        let cfg = SamplerConfig::new(0.2);
        let a = run_chain(&Point::circle(PI), 3, &t, &cfg, 9).unwrap();
        let b = run_chain(&Point::circle(PI), 3, &t, &cfg, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.states.len(), 4);
        assert_eq!(a.mbi_rejections.len(), 3);
    }
}
