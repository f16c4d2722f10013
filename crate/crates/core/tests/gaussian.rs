mod common;

use std::f64::consts::PI;

use common::{ks_one_sample, ks_two_sample, mean_and_stderr, simpson, TabulatedCdf};
use nalgebra::{DMatrix, DVector};
use rps_core::manifold::distance;
use rps_core::rng::chain_rng;
use rps_core::{Point, RGaussian};

#[test]
fn sphere_radial_second_moment() {
    let t = 0.01;
    let g = RGaussian::new(Point::sphere_basis(2, 0), t).unwrap();
    let mut rng = chain_rng(11, 0);
    let mut rejections = 0;
    let r2: Vec<f64> = (0..100_000)
        .map(|_| {
            let d = g.sample_counted(&mut rng, 1_000_000).unwrap();
            rejections += d.rejections;
            distance(g.center(), &d.point).unwrap().powi(2)
        })
        .collect();
    let w = |r: f64| (-r * r / (2.0 * t)).exp() * r.sin();
    let truth = simpson(|r| r * r * w(r), 0.0, PI, 20_000) / simpson(w, 0.0, PI, 20_000);
    assert!((truth - 0.019_933_377_798_927_67).abs() < 1e-12);
    let (m, se) = mean_and_stderr(&r2);
    assert!((m - truth).abs() < 3.0 * se, "{m} vs {truth} (se {se})");
    let acceptance = 100_000.0 / (100_000.0 + rejections as f64);
    assert!(acceptance > 0.9, "acceptance {acceptance}");
}

#[test]
fn circle_matches_truncated_normal_cdf() {
    let t = 0.2;
    let g = RGaussian::new(Point::circle(0.0), t).unwrap();
    let mut rng = chain_rng(12, 0);
    let angles: Vec<f64> = (0..100_000)
        .map(|_| {
            let a = g.sample(&mut rng).unwrap().as_angle().unwrap();
            if a > PI { a - 2.0 * PI } else { a }
        })
        .collect();
    let cdf = TabulatedCdf::new(|r| (-r * r / (2.0 * t)).exp(), -PI, PI, 4000);
    let ks = ks_one_sample(&angles, |x| cdf.eval(x));
    assert!(ks < 0.01, "KS {ks}");
}

fn spd2_radial_density(r: f64, t: f64) -> f64 {
    let angular = simpson(
        |psi| (r * 2f64.sqrt() * (psi + PI / 4.0).cos().abs() / 2.0).sinh(),
        0.0,
        2.0 * PI,
        400,
    );
    (-r * r / (2.0 * t)).exp() * r * angular
}

#[test]
fn spd2_radius_matches_eigenvalue_quadrature() {
    let t = 0.1;
    let g = RGaussian::new(Point::identity(2), t).unwrap();
    let mut rng = chain_rng(13, 0);
    let radii: Vec<f64> = (0..10_000)
        .map(|_| distance(g.center(), &g.sample(&mut rng).unwrap()).unwrap())
        .collect();
    let cdf = TabulatedCdf::new(|r| spd2_radial_density(r, t), 0.0, 3.0, 3000);
    let ks = ks_one_sample(&radii, |x| cdf.eval(x));
    assert!(ks < 0.02, "KS {ks}");
}

#[test]
fn spd_off_center_radius_law_is_congruence_invariant() {
    let t = 0.2;
    let c = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.0, 0.3, 1.0, 0.1, 0.0, 0.1, 0.5]);
    let a = RGaussian::new(Point::identity(3), t).unwrap();
    let b = RGaussian::new(Point::spd(c).unwrap(), t).unwrap();
    let mut rng = chain_rng(14, 0);
    let ra: Vec<f64> = (0..5000).map(|_| distance(a.center(), &a.sample(&mut rng).unwrap()).unwrap()).collect();
    let rb: Vec<f64> = (0..5000).map(|_| distance(b.center(), &b.sample(&mut rng).unwrap()).unwrap()).collect();
    assert!(ks_two_sample(&ra, &rb) < 0.04);
}

#[test]
fn sphere_rotation_equivariance() {
    let t = 0.3;
    let e1 = Point::sphere_basis(3, 0);
    let rotated = Point::sphere(DVector::from_vec(vec![0.5, -0.5, 0.5, 0.5])).unwrap();
    let a = RGaussian::new(e1, t).unwrap();
    let b = RGaussian::new(rotated, t).unwrap();
    let mut rng = chain_rng(15, 0);
    let ra: Vec<f64> = (0..5000).map(|_| distance(a.center(), &a.sample(&mut rng).unwrap()).unwrap()).collect();
    let rb: Vec<f64> = (0..5000).map(|_| distance(b.center(), &b.sample(&mut rng).unwrap()).unwrap()).collect();
    assert!(ks_two_sample(&ra, &rb) < 0.04);
}
