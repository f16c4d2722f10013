//! Experiment configuration, parallel chain runs and long-format CSV output.
//!
//! Config files are flat `key = value` lines; `#` starts a comment and arrays
//! are comma-separated. Chains run on a rayon pool, each on its own RNG stream,
//! and results are indexed by chain id so output bytes do not depend on
//! scheduling.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::baselines::{rlmc_run, LmcConfig, Schedule};
use crate::diagnostics::{kl_grid, mean_and_stderr, tv_grid, vmf_oracle_sample, GridDensity};
use crate::error::{Error, Result};
use crate::heat_kernel::{sphere_kernel, truncation_tail_bound};
use crate::manifold::{self, Point};
use crate::proximal::{
    LipschitzSchedule, MbiOracle, ProposalCenter, ProposalT, ProximalSampler, RhkOracle, SamplerConfig,
    VaradhanEnvelope,
};
use crate::rng::{chain_rng, ChainRng};
use crate::targets::{CircleCosine, SpdQuartic, Target, VonMisesFisher};

pub const CSV_HEADER: &str = "iter,metric,value,stderr,flag";

/// Stream offsets: proximal chain `c` uses stream `c`, its Langevin twin
/// `LMC_STREAM + c`, and both start from the point drawn on `INIT_STREAM + c`.
pub const LMC_STREAM: u64 = 1 << 62;
pub const INIT_STREAM: u64 = 1 << 63;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    VmfSphere,
    SpdQuartic,
    CircleKl,
    KernelTable,
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::VmfSphere => "vmf_sphere",
            Experiment::SpdQuartic => "spd_quartic",
            Experiment::CircleKl => "circle_kl",
            Experiment::KernelTable => "kernel_table",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "vmf_sphere" => Some(Experiment::VmfSphere),
            "spd_quartic" => Some(Experiment::SpdQuartic),
            "circle_kl" => Some(Experiment::CircleKl),
            "kernel_table" => Some(Experiment::KernelTable),
            _ => None,
        }
    }
}

/// Initial law of every chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Minimizer of the potential.
    Mode,
    /// Uniform on a compact manifold.
    Uniform,
    /// Exact target draw (von Mises–Fisher only).
    Oracle,
    /// `exp_mode(ξ)` with `ξ` a tangent Gaussian of standard deviation `s` per coordinate.
    Spread(f64),
    /// Fixed angle on the circle.
    Angle(f64),
}

impl Init {
    fn to_config(self) -> String {
        match self {
            Init::Mode => "mode".into(),
            Init::Uniform => "uniform".into(),
            Init::Oracle => "oracle".into(),
            Init::Spread(s) => format!("spread:{s}"),
            Init::Angle(a) => format!("angle:{a}"),
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s.split_once(':') {
            None => match s {
                "mode" => Some(Init::Mode),
                "uniform" => Some(Init::Uniform),
                "oracle" => Some(Init::Oracle),
                _ => None,
            },
            Some(("spread", v)) => v.trim().parse().ok().filter(|s: &f64| *s >= 0.0).map(Init::Spread),
            Some(("angle", v)) => v.trim().parse().ok().filter(|a: &f64| a.is_finite()).map(Init::Angle),
            Some(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    /// `d` of `S^d`, or the matrix side `m` of SPD(m).
    pub dim: usize,
    pub kappa: f64,
    pub mu: Vec<f64>,
    pub sigma: f64,
    /// Local Lipschitz estimate of the SPD potential.
    pub lipschitz: f64,
    /// `a` in the circle potential `-a cos θ`.
    pub circle_a: f64,
    pub sampler: SamplerConfig,
    /// When set, `η` and the proposal variance follow the Lipschitz schedule at this accuracy.
    pub schedule_eps: Option<f64>,
    pub init: Init,
    pub lmc: Option<LmcConfig>,
    pub lmc_iters: usize,
    pub lmc_init: Init,
    pub chains: usize,
    pub iters: usize,
    pub seed: u64,
    /// Histogram bins for circle diagnostics.
    pub bins: usize,
    pub kernel_t: f64,
    pub levels: Vec<usize>,
    /// Append a wall-clock metadata row.
    pub timing: bool,
    pub out_path: Option<PathBuf>,
}

fn config_err(key: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        reason: reason.into(),
    }
}

impl ExperimentConfig {
    /// Defaults for an experiment; `dim` picks the matching vMF direction.
    pub fn preset(experiment: Experiment, dim: Option<usize>) -> Self {
        let base = Self {
            experiment,
            dim: 2,
            kappa: 10.0,
            mu: vec![10.0, 0.1, 2.0],
            sigma: 0.03,
            lipschitz: 278.0,
            circle_a: 2.0,
            sampler: SamplerConfig::new(0.2),
            schedule_eps: None,
            init: Init::Mode,
            lmc: None,
            lmc_iters: 200,
            lmc_init: Init::Mode,
            chains: 1000,
            iters: 30,
            seed: 7,
            bins: 64,
            kernel_t: 0.3,
            levels: vec![5, 10, 20, 40],
            timing: false,
            out_path: None,
        };
        match experiment {
            Experiment::VmfSphere => {
                let d = dim.unwrap_or(2);
                let mu = match d {
                    2 => vec![10.0, 0.1, 2.0],
                    5 => vec![5.0, 0.1, 2.0, 1.0, 1.0, 1.0],
                    _ => {
                        let mut v = vec![1.0; d + 1];
                        v[0] = 10.0;
                        v
                    }
                };
                Self {
                    dim: d,
                    mu,
                    sampler: SamplerConfig::varadhan(1e-3, VaradhanEnvelope::Lipschitz),
                    schedule_eps: Some(1e-3),
                    init: Init::Oracle,
                    chains: if d == 2 { 2000 } else { 1000 },
                    ..base
                }
            }
            Experiment::SpdQuartic => Self {
                dim: dim.unwrap_or(3),
                sampler: SamplerConfig::varadhan(0.01, VaradhanEnvelope::Convex),
                init: Init::Spread(0.3),
                lmc: Some(LmcConfig::decreasing(1e-2, 9.0)),
                chains: 500,
                iters: 40,
                ..base
            },
            Experiment::CircleKl => Self {
                dim: 1,
                init: Init::Angle(PI),
                chains: 5000,
                iters: 10,
                ..base
            },
            Experiment::KernelTable => Self {
                dim: dim.unwrap_or(2),
                chains: 1,
                iters: 1,
                ..base
            },
        }
    }

    /// Parses `key = value` text; unknown or repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| config_err(&format!("line {}", n + 1), "expected `key = value`"))?;
            let k = k.trim().to_string();
            if pairs.insert(k.clone(), v.trim().to_string()).is_some() {
                return Err(config_err(&k, "given more than once"));
            }
        }
        let exp_str = pairs.remove("experiment").ok_or_else(|| config_err("experiment", "missing"))?;
        let experiment = Experiment::parse(&exp_str)
            .ok_or_else(|| config_err("experiment", format!("unknown experiment `{exp_str}`")))?;
        let dim = match pairs.get("dim") {
            Some(v) => Some(parse_num::<usize>("dim", v)?),
            None => None,
        };
        let mut cfg = Self::preset(experiment, dim);
        for (k, v) in &pairs {
            cfg.apply(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::parse(&text)
    }

    fn apply(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "dim" => self.dim = parse_num(key, v)?,
            "kappa" => self.kappa = parse_num(key, v)?,
            "mu" => self.mu = parse_list(key, v)?,
            "sigma" => self.sigma = parse_num(key, v)?,
            "lipschitz" => self.lipschitz = parse_num(key, v)?,
            "circle_a" => self.circle_a = parse_num(key, v)?,
            "eta" => self.sampler.eta = parse_num(key, v)?,
            "eps" => {
                self.schedule_eps = match v {
                    "none" => None,
                    _ => Some(parse_num(key, v)?),
                }
            }
            "mbi" => self.sampler.mbi = parse_mbi(v).ok_or_else(|| config_err(key, format!("unknown oracle `{v}`")))?,
            "rhk" => self.sampler.rhk = parse_rhk(v).ok_or_else(|| config_err(key, format!("unknown oracle `{v}`")))?,
            "proposal_t" => {
                self.sampler.proposal_t = match v {
                    "auto" => ProposalT::Auto,
                    _ => ProposalT::Fixed(parse_num(key, v)?),
                }
            }
            "envelope" => {
                self.sampler.envelope = match v {
                    "lipschitz" => VaradhanEnvelope::Lipschitz,
                    "calibrated" => VaradhanEnvelope::Calibrated,
                    "convex" => VaradhanEnvelope::Convex,
                    _ => return Err(config_err(key, format!("unknown envelope `{v}`"))),
                }
            }
            "center" => {
                self.sampler.center = match v {
                    "mode" => ProposalCenter::Mode,
                    "data" => ProposalCenter::Data,
                    _ => return Err(config_err(key, format!("unknown center `{v}`"))),
                }
            }
            "rejection_cap" => self.sampler.rejection_cap = parse_num(key, v)?,
            "clip" => self.sampler.clip_acceptance = parse_num(key, v)?,
            "zeta" => self.sampler.zeta = parse_num(key, v)?,
            "mode_tol" => self.sampler.mode.tol = parse_num(key, v)?,
            "mode_max_iters" => self.sampler.mode.max_iters = parse_num(key, v)?,
            "init" => self.init = Init::parse(v).ok_or_else(|| config_err(key, format!("unknown init `{v}`")))?,
            "lmc" => {
                let threshold = self.lmc.as_ref().map(|l| l.divergence_threshold);
                self.lmc = parse_lmc(v).ok_or_else(|| config_err(key, format!("unknown schedule `{v}`")))?;
                if let (Some(l), Some(th)) = (self.lmc.as_mut(), threshold) {
                    l.divergence_threshold = th;
                }
            }
            "lmc_iters" => self.lmc_iters = parse_num(key, v)?,
            "lmc_init" => {
                self.lmc_init = Init::parse(v).ok_or_else(|| config_err(key, format!("unknown init `{v}`")))?
            }
            "lmc_threshold" => {
                let th = parse_num(key, v)?;
                self.lmc
                    .as_mut()
                    .ok_or_else(|| config_err(key, "needs `lmc` to be set first"))?
                    .divergence_threshold = th;
            }
            "chains" => self.chains = parse_num(key, v)?,
            "iters" => self.iters = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "bins" => self.bins = parse_num(key, v)?,
            "t" => self.kernel_t = parse_num(key, v)?,
            "levels" => self.levels = parse_list(key, v)?,
            "timing" => self.timing = parse_num(key, v)?,
            "out" => self.out_path = Some(PathBuf::from(v)),
            _ => return Err(config_err(key, "unknown key")),
        }
        Ok(())
    }

    /// Canonical text form; `parse(serialize(cfg)) == cfg`.
    pub fn serialize(&self) -> String {
        let s = &self.sampler;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("experiment", self.experiment.name().into());
        kv("dim", self.dim.to_string());
        kv("kappa", self.kappa.to_string());
        kv("mu", join(&self.mu));
        kv("sigma", self.sigma.to_string());
        kv("lipschitz", self.lipschitz.to_string());
        kv("circle_a", self.circle_a.to_string());
        kv("eta", s.eta.to_string());
        kv("eps", self.schedule_eps.map_or("none".into(), |e| e.to_string()));
        kv("mbi", mbi_name(&s.mbi));
        kv("rhk", rhk_name(&s.rhk));
        kv(
            "proposal_t",
            match s.proposal_t {
                ProposalT::Auto => "auto".into(),
                ProposalT::Fixed(t) => t.to_string(),
            },
        );
        kv(
            "envelope",
            match s.envelope {
                VaradhanEnvelope::Lipschitz => "lipschitz",
                VaradhanEnvelope::Calibrated => "calibrated",
                VaradhanEnvelope::Convex => "convex",
            }
            .into(),
        );
        kv(
            "center",
            match s.center {
                ProposalCenter::Mode => "mode",
                ProposalCenter::Data => "data",
            }
            .into(),
        );
        kv("rejection_cap", s.rejection_cap.to_string());
        kv("clip", s.clip_acceptance.to_string());
        kv("zeta", s.zeta.to_string());
        kv("mode_tol", s.mode.tol.to_string());
        kv("mode_max_iters", s.mode.max_iters.to_string());
        kv("init", self.init.to_config());
        kv("lmc", self.lmc.as_ref().map_or("none".into(), lmc_name));
        if let Some(l) = &self.lmc {
            kv("lmc_threshold", l.divergence_threshold.to_string());
        }
        kv("lmc_iters", self.lmc_iters.to_string());
        kv("lmc_init", self.lmc_init.to_config());
        kv("chains", self.chains.to_string());
        kv("iters", self.iters.to_string());
        kv("seed", self.seed.to_string());
        kv("bins", self.bins.to_string());
        kv("t", self.kernel_t.to_string());
        kv("levels", join(&self.levels));
        kv("timing", self.timing.to_string());
        if let Some(p) = &self.out_path {
            kv("out", p.display().to_string());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.chains < 1 {
            return Err(config_err("chains", "must be at least 1"));
        }
        if self.iters < 1 {
            return Err(config_err("iters", "must be at least 1"));
        }
        if self.lmc.is_some() && self.lmc_iters < 1 {
            return Err(config_err("lmc_iters", "must be at least 1"));
        }
        if let Some(l) = &self.lmc {
            l.validate().map_err(|e| config_err("lmc", e.to_string()))?;
        }
        self.sampler.validate()?;
        if let Some(eps) = self.schedule_eps {
            if !(eps > 0.0 && eps < 1.0) {
                return Err(config_err("eps", "must lie in (0, 1)"));
            }
        }
        match self.experiment {
            Experiment::VmfSphere => {
                if self.dim < 2 {
                    return Err(config_err("dim", "vMF experiment needs d >= 2"));
                }
                if self.mu.len() != self.dim + 1 {
                    return Err(config_err(
                        "mu",
                        format!("has {} components, expected d + 1 = {}", self.mu.len(), self.dim + 1),
                    ));
                }
            }
            Experiment::SpdQuartic => {
                if self.dim < 2 {
                    return Err(config_err("dim", "SPD experiment needs m >= 2"));
                }
                if self.init == Init::Uniform || self.lmc_init == Init::Uniform {
                    return Err(config_err("init", "no uniform law on SPD"));
                }
            }
            Experiment::CircleKl => {
                if self.bins < 1 {
                    return Err(config_err("bins", "must be at least 1"));
                }
                if self.schedule_eps.is_some() {
                    return Err(config_err("eps", "the Lipschitz schedule needs dimension >= 2"));
                }
            }
            Experiment::KernelTable => {
                if self.dim < 2 {
                    return Err(config_err("dim", "kernel table needs d >= 2"));
                }
                if !(self.kernel_t > 0.0) {
                    return Err(config_err("t", "must be positive"));
                }
                if self.levels.is_empty() {
                    return Err(config_err("levels", "needs at least one level"));
                }
            }
        }
        let oracle_ok = self.experiment == Experiment::VmfSphere;
        let angle_ok = self.experiment == Experiment::CircleKl;
        for (key, init) in [("init", self.init), ("lmc_init", self.lmc_init)] {
            match init {
                Init::Oracle if !oracle_ok => return Err(config_err(key, "oracle init is vMF only")),
                Init::Angle(_) if !angle_ok => return Err(config_err(key, "angle init is circle only")),
                _ => {}
            }
        }
        Ok(())
    }

    /// The potential of the experiment.
    pub fn target(&self) -> Result<Box<dyn Target>> {
        Ok(match self.experiment {
            Experiment::VmfSphere => Box::new(VonMisesFisher::new(self.kappa, &self.mu)?),
            Experiment::SpdQuartic => Box::new(SpdQuartic::new(self.dim, self.sigma, self.lipschitz)?),
            Experiment::CircleKl => Box::new(CircleCosine { a: self.circle_a }),
            Experiment::KernelTable => return Err(Error::UnsupportedKind("kernel-table target")),
        })
    }

    /// Sampler settings after applying the Lipschitz schedule, if any.
    pub fn effective_sampler(&self, target: &dyn Target) -> Result<SamplerConfig> {
        let mut s = self.sampler.clone();
        if let Some(eps) = self.schedule_eps {
            let sched = LipschitzSchedule::new(target.lipschitz(), target.kind().dim(), eps)?;
            s.eta = sched.eta;
            s.proposal_t = ProposalT::Fixed(sched.t);
        }
        Ok(s)
    }

    /// Reference point of the Fréchet variance: the mode of the target.
    pub fn mode(&self) -> Result<Point> {
        Ok(match self.experiment {
            Experiment::VmfSphere => VonMisesFisher::new(self.kappa, &self.mu)?.mode(),
            Experiment::SpdQuartic => Point::identity(self.dim),
            Experiment::CircleKl => Point::circle(if self.circle_a >= 0.0 { 0.0 } else { PI }),
            Experiment::KernelTable => return Err(Error::UnsupportedKind("kernel-table mode")),
        })
    }

    /// Draws the initial point of a chain.
    pub fn sample_init(&self, init: Init, rng: &mut ChainRng) -> Result<Point> {
        let mode = self.mode()?;
        match init {
            Init::Mode => Ok(mode),
            Init::Uniform => manifold::sample_uniform(mode.kind(), rng),
            Init::Oracle => {
                let t = VonMisesFisher::new(self.kappa, &self.mu)?;
                vmf_oracle_sample(self.dim, t.mu(), t.kappa_eff(), rng)
            }
            Init::Spread(s) => {
                if s == 0.0 {
                    return Ok(mode);
                }
                let xi = manifold::sample_tangent_gaussian(&mode, s * s, rng)?;
                manifold::exp_map(&mode, &xi)
            }
            Init::Angle(a) => Ok(Point::circle(a)),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| config_err(key, format!("cannot parse `{v}`: {e}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    v.split(',').map(|s| parse_num(key, s.trim())).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

fn parse_mbi(v: &str) -> Option<MbiOracle> {
    match v.split_once(':') {
        None => match v {
            "series" => Some(MbiOracle::SeriesRejection { level: None }),
            "rgaussian" => Some(MbiOracle::RGaussianVaradhan),
            _ => None,
        },
        Some(("series", l)) => l.trim().parse().ok().map(|l| MbiOracle::SeriesRejection { level: Some(l) }),
        Some(("grw", n)) => n.trim().parse().ok().map(|substeps| MbiOracle::GeodesicRandomWalk { substeps }),
        Some(_) => None,
    }
}

fn mbi_name(m: &MbiOracle) -> String {
    match m {
        MbiOracle::SeriesRejection { level: None } => "series".into(),
        MbiOracle::SeriesRejection { level: Some(l) } => format!("series:{l}"),
        MbiOracle::GeodesicRandomWalk { substeps } => format!("grw:{substeps}"),
        MbiOracle::RGaussianVaradhan => "rgaussian".into(),
    }
}

fn parse_rhk(v: &str) -> Option<RhkOracle> {
    match v.split_once(':') {
        None => match v {
            "truncated" => Some(RhkOracle::TruncatedKernelRejection { level: None }),
            "varadhan" => Some(RhkOracle::VaradhanRejection),
            _ => None,
        },
        Some(("truncated", l)) => l
            .trim()
            .parse()
            .ok()
            .map(|l| RhkOracle::TruncatedKernelRejection { level: Some(l) }),
        Some(_) => None,
    }
}

fn rhk_name(r: &RhkOracle) -> String {
    match r {
        RhkOracle::TruncatedKernelRejection { level: None } => "truncated".into(),
        RhkOracle::TruncatedKernelRejection { level: Some(l) } => format!("truncated:{l}"),
        RhkOracle::VaradhanRejection => "varadhan".into(),
    }
}

fn parse_lmc(v: &str) -> Option<Option<LmcConfig>> {
    let parts: Vec<&str> = v.split(':').map(str::trim).collect();
    match parts.as_slice() {
        ["none"] => Some(None),
        ["constant", h] => h.parse().ok().map(|h| Some(LmcConfig::constant(h))),
        ["decreasing", c] => c.parse().ok().map(|c| Some(LmcConfig::decreasing(c, 0.0))),
        ["decreasing", c, k0] => match (c.parse(), k0.parse()) {
            (Ok(c), Ok(k0)) => Some(Some(LmcConfig::decreasing(c, k0))),
            _ => None,
        },
        _ => None,
    }
}

fn lmc_name(l: &LmcConfig) -> String {
    match l.schedule {
        Schedule::Constant => format!("constant:{}", l.step),
        Schedule::Decreasing { c, k0 } => format!("decreasing:{c}:{k0}"),
    }
}

/// Iteration column of a CSV row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowIter {
    Step(usize),
    /// Run-level metadata.
    Meta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub iter: RowIter,
    pub metric: String,
    pub value: f64,
    pub stderr: Option<f64>,
    pub flag: String,
}

impl Row {
    fn new(iter: usize, metric: &str, value: f64, stderr: Option<f64>, flag: &str) -> Self {
        Self {
            iter: RowIter::Step(iter),
            metric: metric.to_string(),
            value,
            stderr,
            flag: flag.to_string(),
        }
    }
}

/// Result of one experiment run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub rows: Vec<Row>,
    /// Chains that stopped on an oracle error.
    pub failed_chains: usize,
    /// Langevin chains halted by the divergence check.
    pub diverged_chains: usize,
    pub warnings: u64,
    pub clipped: u64,
    pub clamp_events: u64,
    /// Final states of the proximal chains that completed.
    pub final_states: Vec<Point>,
}

impl RunReport {
    /// Rows of one metric, in iteration order.
    pub fn metric(&self, name: &str) -> Vec<&Row> {
        self.rows.iter().filter(|r| r.metric == name).collect()
    }

    /// Value of `name` at iteration `iter`.
    pub fn value(&self, name: &str, iter: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.metric == name && r.iter == RowIter::Step(iter))
            .map(|r| r.value)
    }
}

struct ChainOutcome {
    states: Vec<Point>,
    mbi: Vec<u64>,
    rhk: Vec<u64>,
    clipped: u64,
    clamps: u64,
    /// Iteration at which an oracle failed (0 for the initial draw).
    failed_at: Option<usize>,
}

fn run_proximal_chains(cfg: &ExperimentConfig, sampler: &ProximalSampler<'_>) -> Vec<ChainOutcome> {
    (0..cfg.chains as u64)
        .into_par_iter()
        .map(|c| {
            let mut out = ChainOutcome {
                states: Vec::with_capacity(cfg.iters + 1),
                mbi: Vec::with_capacity(cfg.iters),
                rhk: Vec::with_capacity(cfg.iters),
                clipped: 0,
                clamps: 0,
                failed_at: None,
            };
            let mut init_rng = chain_rng(cfg.seed, INIT_STREAM + c);
            let Ok(mut x) = cfg.sample_init(cfg.init, &mut init_rng) else {
                out.failed_at = Some(0);
                return out;
            };
            out.states.push(x.clone());
            let mut rng = chain_rng(cfg.seed, c);
            for k in 1..=cfg.iters {
                match sampler.step(&x, &mut rng) {
                    Ok((_, next, counters)) => {
                        out.mbi.push(counters.mbi_rejections);
                        out.rhk.push(counters.rhk_rejections);
                        out.clipped += counters.clipped;
                        out.clamps += counters.kernel_clamps;
                        out.states.push(next.clone());
                        x = next;
                    }
                    Err(_) => {
                        out.failed_at = Some(k);
                        break;
                    }
                }
            }
            out
        })
        .collect()
}

fn flag(failed: usize) -> String {
    if failed == 0 {
        "ok".into()
    } else {
        format!("failed={failed}")
    }
}

fn mean_se(v: &[f64]) -> (f64, Option<f64>) {
    if v.is_empty() {
        (f64::NAN, None)
    } else {
        let (m, s) = mean_and_stderr(v);
        (m, Some(s))
    }
}

fn states_at(outcomes: &[ChainOutcome], k: usize) -> Vec<&Point> {
    outcomes.iter().filter_map(|o| o.states.get(k)).collect()
}

fn failed_by(outcomes: &[ChainOutcome], k: usize) -> usize {
    outcomes.iter().filter(|o| o.failed_at.is_some_and(|f| f <= k)).count()
}

fn distance_rows(rows: &mut Vec<Row>, k: usize, prefix: &str, pts: &[&Point], mode: &Point, flag: &str, max: bool) {
    let d: Vec<f64> = pts.iter().filter_map(|p| manifold::distance(p, mode).ok()).collect();
    let d2: Vec<f64> = d.iter().map(|r| r * r).collect();
    let (m, se) = mean_se(&d2);
    rows.push(Row::new(k, &format!("{prefix}frechet_variance"), m, se, flag));
    if max {
        let mx = d.iter().copied().fold(f64::NAN, f64::max);
        rows.push(Row::new(k, &format!("{prefix}max_dist"), mx, None, flag));
    }
}

fn rejection_rows(rows: &mut Vec<Row>, k: usize, outcomes: &[ChainOutcome], flag: &str) {
    for (name, pick) in [
        ("mbi_rej_mean", (|o: &ChainOutcome| &o.mbi) as fn(&ChainOutcome) -> &Vec<u64>),
        ("rhk_rej_mean", |o: &ChainOutcome| &o.rhk),
    ] {
        if k == 0 {
            rows.push(Row::new(0, name, 0.0, Some(0.0), flag));
            continue;
        }
        let v: Vec<f64> = outcomes.iter().filter_map(|o| pick(o).get(k - 1)).map(|&r| r as f64).collect();
        let (m, se) = mean_se(&v);
        rows.push(Row::new(k, name, m, se, flag));
    }
}

/// Runs the experiment, writing the CSV when `out_path` is set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let start = Instant::now();
    let mut report = match cfg.experiment {
        Experiment::KernelTable => kernel_table_report(cfg)?,
        _ => chain_report(cfg)?,
    };
    if cfg.timing {
        report.rows.push(Row {
            iter: RowIter::Meta,
            metric: "wall_ms".into(),
            value: start.elapsed().as_secs_f64() * 1e3,
            stderr: None,
            flag: "ok".into(),
        });
    }
    if let Some(path) = &cfg.out_path {
        write_csv(path, &report.rows)?;
    }
    Ok(report)
}

fn chain_report(cfg: &ExperimentConfig) -> Result<RunReport> {
    let target = cfg.target()?;
    let scfg = cfg.effective_sampler(target.as_ref())?;
    let sampler = ProximalSampler::new(target.as_ref(), &scfg)?;
    let mode = cfg.mode()?;
    let outcomes = run_proximal_chains(cfg, &sampler);
    let mut rows = Vec::new();
    for k in 0..=cfg.iters {
        let fl = flag(failed_by(&outcomes, k));
        let pts = states_at(&outcomes, k);
        match cfg.experiment {
            Experiment::VmfSphere => distance_rows(&mut rows, k, "", &pts, &mode, &fl, false),
            Experiment::SpdQuartic => distance_rows(&mut rows, k, "", &pts, &mode, &fl, true),
            Experiment::CircleKl => {
                let owned: Vec<Point> = pts.iter().map(|p| (*p).clone()).collect();
                let a = cfg.circle_a;
                let target = |th: f64| (a * th.cos()).exp();
                match GridDensity::from_points(&owned, cfg.bins) {
                    Ok(h) => {
                        rows.push(Row::new(k, "kl", kl_grid(&h, target)?.as_f64(), None, &fl));
                        let q = GridDensity::from_density(target, cfg.bins, 64)?;
                        rows.push(Row::new(k, "tv", tv_grid(&h, &q)?, None, &fl));
                    }
                    Err(_) => {
                        rows.push(Row::new(k, "kl", f64::NAN, None, &fl));
                        rows.push(Row::new(k, "tv", f64::NAN, None, &fl));
                    }
                }
                distance_rows(&mut rows, k, "", &pts, &mode, &fl, false);
            }
            Experiment::KernelTable => unreachable!("handled by kernel_table_report"),
        }
        rejection_rows(&mut rows, k, &outcomes, &fl);
    }
    let mut diverged = 0;
    if let Some(lmc) = &cfg.lmc {
        diverged = lmc_rows(cfg, lmc, target.as_ref(), &mode, &mut rows)?;
    }
    Ok(RunReport {
        rows,
        failed_chains: outcomes.iter().filter(|o| o.failed_at.is_some()).count(),
        diverged_chains: diverged,
        warnings: sampler.warnings(),
        clipped: outcomes.iter().map(|o| o.clipped).sum(),
        clamp_events: outcomes.iter().map(|o| o.clamps).sum(),
        final_states: outcomes
            .iter()
            .filter(|o| o.failed_at.is_none())
            .filter_map(|o| o.states.last().cloned())
            .collect(),
    })
}

fn lmc_rows(
    cfg: &ExperimentConfig,
    lmc: &LmcConfig,
    target: &dyn Target,
    mode: &Point,
    rows: &mut Vec<Row>,
) -> Result<usize> {
    let lcfg = LmcConfig {
        reference: Some(lmc.reference.clone().unwrap_or_else(|| mode.clone())),
        ..lmc.clone()
    };
    let traces: Vec<Option<(Vec<Point>, Option<usize>)>> = (0..cfg.chains as u64)
        .into_par_iter()
        .map(|c| {
            let mut init_rng = chain_rng(cfg.seed, INIT_STREAM + c);
            let x0 = cfg.sample_init(cfg.lmc_init, &mut init_rng).ok()?;
            let tr = rlmc_run(&x0, cfg.lmc_iters, target, &lcfg, cfg.seed, LMC_STREAM + c).ok()?;
            let halted = match tr.status {
                crate::baselines::ChainStatus::Diverged { iter } => Some(iter),
                crate::baselines::ChainStatus::Completed => None,
            };
            Some((tr.states, halted))
        })
        .collect();
    let failed = traces.iter().filter(|t| t.is_none()).count();
    let fl = flag(failed);
    let ok: Vec<&(Vec<Point>, Option<usize>)> = traces.iter().flatten().collect();
    for k in 0..=cfg.lmc_iters {
        let pts: Vec<&Point> = ok
            .iter()
            .filter(|(_, h)| h.is_none_or(|h| k < h))
            .filter_map(|(s, _)| s.get(k))
            .collect();
        distance_rows(rows, k, "lmc_", &pts, mode, &fl, true);
        let div = ok.iter().filter(|(_, h)| h.is_some_and(|h| h <= k)).count();
        rows.push(Row::new(k, "lmc_diverged", div as f64, None, &fl));
    }
    Ok(ok.iter().filter(|(_, h)| h.is_some()).count())
}

/// One entry of the truncated-kernel table on `S^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelTableRow {
    pub level: usize,
    pub r: f64,
    pub value: f64,
    pub tail_bound: f64,
}

/// `ν_l(t, r)` at `radii` for each level, with the uniform truncation bound.
pub fn kernel_table(d: usize, t: f64, levels: &[usize], radii: &[f64]) -> Result<Vec<KernelTableRow>> {
    let mut out = Vec::with_capacity(levels.len() * radii.len());
    for &l in levels {
        let bound = truncation_tail_bound(d, t, l)?.bound;
        for &r in radii {
            out.push(KernelTableRow {
                level: l,
                r,
                value: sphere_kernel(d, t, r.cos(), l)?,
                tail_bound: bound,
            });
        }
    }
    Ok(out)
}

/// Radii `0, π/4, …, π` used by the default table.
pub fn default_radii() -> Vec<f64> {
    (0..=4).map(|i| PI * i as f64 / 4.0).collect()
}

fn kernel_table_report(cfg: &ExperimentConfig) -> Result<RunReport> {
    let table = kernel_table(cfg.dim, cfg.kernel_t, &cfg.levels, &default_radii())?;
    let mut rows = Vec::new();
    for &l in &cfg.levels {
        let entries: Vec<&KernelTableRow> = table.iter().filter(|e| e.level == l).collect();
        rows.push(Row::new(l, "tail_bound", entries[0].tail_bound, None, "ok"));
        for e in entries {
            rows.push(Row::new(l, &format!("nu_r{:.6}", e.r), e.value, None, "ok"));
        }
    }
    Ok(RunReport {
        rows,
        failed_chains: 0,
        diverged_chains: 0,
        warnings: 0,
        clipped: 0,
        clamp_events: 0,
        final_states: Vec::new(),
    })
}

fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        v.to_string()
    }
}

/// Long-format CSV text with the fixed header.
pub fn to_csv(rows: &[Row]) -> String {
    let mut s = String::with_capacity(64 * (rows.len() + 1));
    s.push_str(CSV_HEADER);
    s.push('\n');
    for r in rows {
        let iter = match r.iter {
            RowIter::Step(k) => k.to_string(),
            RowIter::Meta => "meta".into(),
        };
        let se = r.stderr.map(fmt_f64).unwrap_or_default();
        let _ = writeln!(s, "{iter},{},{},{se},{}", r.metric, fmt_f64(r.value), r.flag);
    }
    s
}

/// Writes the CSV through a sibling temp file and a rename.
pub fn write_csv(path: &Path, rows: &[Row]) -> Result<()> {
    let io = |e: std::io::Error| Error::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    };
    let mut tmp_name = path.file_name().map(|n| n.to_os_string()).unwrap_or_else(|| "out.csv".into());
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, to_csv(rows)).map_err(io)?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        io(e)
    })
}
