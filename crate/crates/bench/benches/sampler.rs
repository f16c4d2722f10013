use std::f64::consts::PI;

use criterion::{criterion_group, criterion_main, Criterion};
use rps_core::proximal::{LipschitzSchedule, ProposalT, VaradhanEnvelope};
use rps_core::rng::chain_rng;
use rps_core::targets::{CircleCosine, SpdQuartic, VonMisesFisher};
use rps_core::{Point, ProximalSampler, SamplerConfig, Target};

fn proximal_step(c: &mut Criterion) {
    let circle = CircleCosine { a: 2.0 };
    let s = ProximalSampler::new(&circle, &SamplerConfig::new(0.2)).unwrap();
    let mut rng = chain_rng(2, 0);
    let mut x = Point::circle(PI);
    c.bench_function("proximal step circle series eta=0.2", |b| {
        b.iter(|| {
            x = s.step(&x, &mut rng).unwrap().1;
        })
    });

    let vmf = VonMisesFisher::new(10.0, &[10.0, 0.1, 2.0]).unwrap();
    let sched = LipschitzSchedule::new(vmf.lipschitz(), 2, 1e-3).unwrap();
    let cfg = SamplerConfig {
        proposal_t: ProposalT::Fixed(sched.t),
        ..SamplerConfig::varadhan(sched.eta, VaradhanEnvelope::Lipschitz)
    };
    let s = ProximalSampler::new(&vmf, &cfg).unwrap();
    let mut x = vmf.mode();
    c.bench_function("proximal step vMF S2 Varadhan", |b| {
        b.iter(|| {
            x = s.step(&x, &mut rng).unwrap().1;
        })
    });

    let quartic = SpdQuartic::new(3, 0.03, 278.0).unwrap();
    let s = ProximalSampler::new(&quartic, &SamplerConfig::varadhan(0.01, VaradhanEnvelope::Convex)).unwrap();
    let mut x = Point::identity(3);
    c.bench_function("proximal step SPD(3) quartic Varadhan", |b| {
        b.iter(|| {
            x = s.step(&x, &mut rng).unwrap().1;
        })
    });
}

criterion_group!(benches, proximal_step);
criterion_main!(benches);
