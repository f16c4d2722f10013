//! Proximal sampling on Riemannian manifolds.

pub mod baselines;
pub mod diagnostics;
pub mod error;
pub mod gaussian;
pub mod harness;
pub mod heat_kernel;
pub mod manifold;
pub mod proximal;
pub mod quadrature;
pub mod rng;
pub mod selftest;
pub mod special;
pub mod targets;

pub use error::{Error, Result};
pub use gaussian::RGaussian;
pub use manifold::{Ambient, ManifoldKind, Point, TangentVector};
pub use proximal::{ChainTrace, MbiOracle, ProximalSampler, RhkOracle, SamplerConfig};
pub use targets::{Target, TargetSpec, TheoryParams};
