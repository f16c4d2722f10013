//! Fast built-in property checks, run by `sampler selftest`.

use std::f64::consts::{PI, TAU};

use nalgebra::DMatrix;
use rand::Rng;

use crate::diagnostics::{kl_between, mean_and_stderr, tv_grid, vmf_frechet_truth, vmf_oracle_sample, GridDensity};
use crate::gaussian::RGaussian;
use crate::harness::{Experiment, ExperimentConfig};
use crate::heat_kernel::{circle_kernel, sphere_kernel, truncation_tail_bound};
use crate::manifold::{self, Ambient, Point, TangentVector};
use crate::proximal::{ProximalSampler, SamplerConfig};
use crate::rng::chain_rng;
use crate::targets::{CircleCosine, VonMisesFisher};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

/// Runs every check; failures are reported, never panicked on.
pub fn run_all() -> Vec<Check> {
    let checks: [(&'static str, fn() -> Result<(bool, String), crate::Error>); 8] = [
        ("exp/log roundtrip", roundtrips),
        ("circle kernel Poisson summation", circle_poisson),
        ("S² kernel normalization", sphere_normalization),
        ("truncation tail bound", tail_bound),
        ("Riemannian Gaussian second moment", gaussian_moment),
        ("Pinsker inequality", pinsker),
        ("vMF oracle vs quadrature", vmf_oracle),
        ("determinism and config round-trip", determinism),
    ];
    checks
        .iter()
        .map(|(name, f)| match f() {
            Ok((ok, detail)) => check(name, ok, detail),
            Err(e) => check(name, false, format!("error: {e}")),
        })
        .collect()
}

fn roundtrips() -> crate::Result<(bool, String)> {
    let mut rng = chain_rng(1, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let pts = [
            Point::circle(rng.random_range(0.0..TAU)),
            Point::sphere_from_slice(&[rng.random(), rng.random(), rng.random::<f64>() + 0.1])?,
            {
                let b = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
                Point::spd(&b * b.transpose() + DMatrix::identity(3, 3) * 0.5)?
            },
        ];
        for x in &pts {
            let amb = match x {
                Point::Circle(_) => Ambient::Scalar(rng.random_range(-2.0..2.0)),
                Point::Sphere(p) => Ambient::Vector(p.map(|_| rng.random_range(-1.0..1.0))),
                Point::Spd(m) => {
                    let a = m.map(|_| rng.random_range(-0.5..0.5));
                    Ambient::Matrix((&a + a.transpose()) * 0.5)
                }
            };
            let v = TangentVector::project(x, &amb)?;
            let back = manifold::log_map(x, &manifold::exp_map(x, &v)?)?;
            worst = worst.max(back.add(&v.scale(-1.0))?.norm());
        }
    }
    Ok((worst < 1e-9, format!("max error {worst:.1e}")))
}

fn circle_poisson() -> crate::Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    for &t in &[0.1, 1.0] {
        for i in 0..=32 {
            let phi = PI * i as f64 / 32.0;
            let fourier = (1.0
                + 2.0
                    * (1..=200)
                        .map(|k| {
                            let k = k as f64;
                            (-k * k * t / 2.0).exp() * (k * phi).cos()
                        })
                        .sum::<f64>())
                / TAU;
            worst = worst.max((circle_kernel(t, phi, 10) - fourier).abs());
        }
    }
    Ok((worst < 1e-10, format!("max gap {worst:.1e}")))
}

fn sphere_normalization() -> crate::Result<(bool, String)> {
    let n = 4000;
    let h = 2.0 / n as f64;
    let mut worst: f64 = 0.0;
    for &t in &[0.1, 0.5, 1.0] {
        let mut s = sphere_kernel(2, t, -1.0, 40)? + sphere_kernel(2, t, 1.0, 40)?;
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * sphere_kernel(2, t, -1.0 + i as f64 * h, 40)?;
        }
        worst = worst.max((TAU * s * h / 3.0 - 1.0).abs());
    }
    Ok((worst < 1e-6, format!("max deviation {worst:.1e}")))
}

fn tail_bound() -> crate::Result<(bool, String)> {
    let mut ok = true;
    for &(d, t, l) in &[(2usize, 0.3, 10usize), (3, 0.2, 8), (5, 1.0, 4)] {
        let bound = truncation_tail_bound(d, t, l)?.bound;
        for i in 0..=100 {
            let c = -1.0 + i as f64 / 50.0;
            let gap = (sphere_kernel(d, t, c, 150)? - sphere_kernel(d, t, c, l)?).abs();
            ok &= gap <= bound * (1.0 + 1e-9) + 1e-15;
        }
    }
    Ok((ok, "gap within bound on 303 audit points".into()))
}

fn gaussian_moment() -> crate::Result<(bool, String)> {
    // small t: E[d²] ≈ n t on an n-dimensional manifold
    let t = 1e-3;
    let mut rng = chain_rng(2, 0);
    let mut lines = Vec::new();
    let mut ok = true;
    for x in [Point::sphere_basis(2, 0), Point::identity(2)] {
        let n = x.kind().dim() as f64;
        let g = RGaussian::new(x.clone(), t)?;
        let d2 = (0..20_000)
            .map(|_| Ok(manifold::distance(&g.sample(&mut rng)?, &x)?.powi(2)))
            .collect::<crate::Result<Vec<f64>>>()?;
        let (m, se) = mean_and_stderr(&d2);
        ok &= (m - n * t).abs() < 4.0 * se + 0.01 * n * t;
        lines.push(format!("{:?} {m:.3e} vs {:.3e}", x.kind(), n * t));
    }
    Ok((ok, lines.join(", ")))
}

fn pinsker() -> crate::Result<(bool, String)> {
    let mut rng = chain_rng(3, 0);
    let mut ok = true;
    for _ in 0..50 {
        let p = GridDensity::from_masses((0..16).map(|_| rng.random::<f64>()).collect())?;
        let q = GridDensity::from_masses((0..16).map(|_| rng.random::<f64>()).collect())?;
        let tv = tv_grid(&p, &q)?;
        ok &= kl_between(&p, &q)?.as_f64() >= 2.0 * tv * tv - 1e-12;
    }
    Ok((ok, "50 random pairs".into()))
}

fn vmf_oracle() -> crate::Result<(bool, String)> {
    let t = VonMisesFisher::new(10.0, &[10.0, 0.1, 2.0])?;
    let truth = vmf_frechet_truth(2, t.kappa_eff())?;
    let mut rng = chain_rng(4, 0);
    let d2 = (0..20_000)
        .map(|_| Ok(manifold::distance(&vmf_oracle_sample(2, t.mu(), t.kappa_eff(), &mut rng)?, &t.mode())?.powi(2)))
        .collect::<crate::Result<Vec<f64>>>()?;
    let (m, se) = mean_and_stderr(&d2);
    Ok(((m - truth).abs() < 4.0 * se, format!("{m:.5} ± {se:.1e} vs {truth:.5}")))
}

fn determinism() -> crate::Result<(bool, String)> {
    let target = CircleCosine { a: 2.0 };
    let s = ProximalSampler::new(&target, &SamplerConfig::new(0.2))?;
    let a = s.run(&Point::circle(PI), 5, 9, 1)?;
    let b = s.run(&Point::circle(PI), 5, 9, 1)?;
    let mut ok = a == b;
    for e in [
        Experiment::VmfSphere,
        Experiment::SpdQuartic,
        Experiment::CircleKl,
        Experiment::KernelTable,
    ] {
        let cfg = ExperimentConfig::preset(e, None);
        ok &= ExperimentConfig::parse(&cfg.serialize())? == cfg;
    }
    Ok((ok, "repeated chain identical; presets round-trip".into()))
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_checks_pass() {
        for c in super::run_all() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
