//! Run configuration: a strict JSON document (unknown keys rejected) with a
//! default for every field except `dims` and `task`, plus the builders that
//! turn a validated config into a model and a dataset.

use crate::baselines::{init_unsymmetric_expert, LowRankExpert};
use crate::error::{Error, Result};
use crate::experts::{
    default_centers, init_expert, BandParams, CoeffMode, IndexBias, InitPolicy,
};
use crate::matrix::RealMatrix;
use crate::model::{Head, Model};
use crate::moe::{AdapterSite, ExpertParams};
use crate::rng_util::{derive_seed, standard_normal};
use crate::router::Router;
use crate::tasks::{self, Dataset, TaskKind, TaskSpec};
use crate::train::{AdamParams, GroupLrs, TimingMode, TrainOptions};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Which adapter parameterization a run trains (the full method or one of
/// the ablation/baseline variants).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AdapterVariant {
    #[default]
    Full,
    /// "w/o imaginary part": real coefficients on the same supports.
    RealOnly,
    /// "w/o real part": imaginary coefficients only.
    ImagOnly,
    /// "w/o conjugate symmetry": free bins, truncated real reconstruction.
    Unsymmetric,
    /// "w/o frequency bias": supports sampled uniformly over non-DC bins.
    RandomIndex,
    /// Spatial low-rank contrast baseline.
    LowRank { rank: usize },
}

impl AdapterVariant {
    pub fn slug(&self) -> &'static str {
        match self {
            AdapterVariant::Full => "full",
            AdapterVariant::RealOnly => "real_only",
            AdapterVariant::ImagOnly => "imag_only",
            AdapterVariant::Unsymmetric => "unsymmetric",
            AdapterVariant::RandomIndex => "random_index",
            AdapterVariant::LowRank { .. } => "lowrank",
        }
    }
}

/// Frozen base-weight synthesis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaseKind {
    #[default]
    Zero,
    Gaussian { sigma: f64 },
}

/// Either one learning rate for everything or per-group rates.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LrSpec {
    Single(f64),
    Groups { expert: f64, router: f64, head: f64 },
}

impl LrSpec {
    pub fn to_groups(self) -> GroupLrs {
        match self {
            LrSpec::Single(lr) => GroupLrs::uniform(lr),
            LrSpec::Groups {
                expert,
                router,
                head,
            } => GroupLrs {
                expert,
                router,
                head,
            },
        }
    }
}

fn d_sites() -> usize {
    1
}
fn d_n() -> usize {
    16
}
fn d_z() -> usize {
    8
}
fn d_k() -> usize {
    2
}
fn d_eta() -> f64 {
    64.0
}
fn d_lambda() -> f64 {
    0.001
}
fn d_bandwidth() -> f64 {
    0.12
}
fn d_epochs() -> usize {
    10
}
fn d_batch() -> usize {
    32
}
fn d_warmup() -> f64 {
    0.06
}
fn d_lr() -> LrSpec {
    LrSpec::Groups {
        expert: 0.05,
        router: 2e-3,
        head: 1e-2,
    }
}
fn d_beta1() -> f64 {
    0.9
}
fn d_beta2() -> f64 {
    0.999
}
fn d_router_sigma() -> f64 {
    0.02
}
fn d_timing() -> TimingMode {
    TimingMode::Wall
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// (rows, cols) of every adapted layer.
    pub dims: (usize, usize),
    pub task: TaskSpec,
    #[serde(default = "d_sites")]
    pub sites: usize,
    /// Trainable coefficient positions per expert, counted over the full
    /// symmetric spectrum (a conjugate pair consumes 2).
    #[serde(default = "d_n")]
    pub n: usize,
    #[serde(default = "d_z")]
    pub z: usize,
    #[serde(default = "d_k")]
    pub k: usize,
    #[serde(default = "d_eta")]
    pub eta: f64,
    #[serde(default = "d_lambda")]
    pub lambda: f64,
    #[serde(default = "d_bandwidth")]
    pub bandwidth: f64,
    /// Expert band centers; defaults to `(i + 1/2)/Z`.
    #[serde(default)]
    pub centers: Option<Vec<f64>>,
    #[serde(default)]
    pub init: InitPolicy,
    #[serde(default)]
    pub variant: AdapterVariant,
    #[serde(default)]
    pub base: BaseKind,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_warmup")]
    pub warmup_ratio: f64,
    #[serde(default = "d_lr")]
    pub lr: LrSpec,
    #[serde(default = "d_beta1")]
    pub beta1: f64,
    #[serde(default = "d_beta2")]
    pub beta2: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub grad_clip: Option<f64>,
    #[serde(default)]
    pub renormalize_gates: bool,
    #[serde(default = "d_router_sigma")]
    pub router_init_sigma: f64,
    #[serde(default = "d_timing")]
    pub timing: TimingMode,
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Task spec with dims defaulted from the run dims.
    pub fn resolved_task(&self) -> TaskSpec {
        let mut t = self.task.clone();
        if t.dims.is_none() {
            t.dims = Some(self.dims);
        }
        t
    }

    pub fn validate(&self) -> Result<()> {
        let (m, n_cols) = self.dims;
        if m < 1 || n_cols < 1 {
            return Err(Error::Config("dims must be at least 1x1".into()));
        }
        if self.sites < 1 {
            return Err(Error::Config("sites must be >= 1".into()));
        }
        if self.sites > 1 && m != n_cols {
            return Err(Error::Config(
                "chained sites require square dims (output feeds input)".into(),
            ));
        }
        if self.z < 1 {
            return Err(Error::Config("z must be >= 1".into()));
        }
        if self.k < 1 || self.k > self.z {
            return Err(Error::Config(format!(
                "k must satisfy 1 <= k <= z, got k={}, z={}",
                self.k, self.z
            )));
        }
        match self.variant {
            AdapterVariant::LowRank { rank } => {
                if rank < 1 || rank > m.min(n_cols) {
                    return Err(Error::Config(format!(
                        "lowrank rank must lie in [1, min(M,N)], got {rank}"
                    )));
                }
            }
            AdapterVariant::Unsymmetric => {
                if self.n < 2 || self.n % 2 != 0 {
                    return Err(Error::Config(
                        "unsymmetric variant needs an even scalar budget n >= 2".into(),
                    ));
                }
            }
            _ => {
                if self.n < 2 || self.n % 2 != 0 {
                    return Err(Error::Config(format!(
                        "n must be even and >= 2, got {}",
                        self.n
                    )));
                }
                if self.n > m * n_cols - 1 {
                    return Err(Error::Config(format!(
                        "n = {} exceeds the {} non-DC bins",
                        self.n,
                        m * n_cols - 1
                    )));
                }
            }
        }
        if let Some(centers) = &self.centers {
            if centers.len() != self.z {
                return Err(Error::Config(format!(
                    "{} centers given for z = {}",
                    centers.len(),
                    self.z
                )));
            }
            if centers.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(Error::Config("centers must lie in [0, 1]".into()));
            }
        }
        if !(self.bandwidth > 0.0) {
            return Err(Error::Config("bandwidth must be positive".into()));
        }
        if self.lambda < 0.0 {
            return Err(Error::Config("lambda must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.warmup_ratio) {
            return Err(Error::Config("warmup_ratio must lie in [0, 1]".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("betas must lie in [0, 1)".into()));
        }
        if !self.eta.is_finite() {
            return Err(Error::Config("eta must be finite".into()));
        }
        if self.task.kind == TaskKind::TargetFit && self.sites != 1 {
            return Err(Error::Config(
                "target_fit requires a single-site model".into(),
            ));
        }
        if let Some(task_dims) = self.task.dims {
            if task_dims.1 != n_cols {
                return Err(Error::Config(format!(
                    "task input dim {} does not match layer input dim {n_cols}",
                    task_dims.1
                )));
            }
        }
        Ok(())
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lambda: self.lambda,
            lrs: self.lr.to_groups(),
            adam: AdamParams {
                beta1: self.beta1,
                beta2: self.beta2,
                epsilon: 1e-8,
                weight_decay: self.weight_decay,
            },
            warmup_ratio: self.warmup_ratio,
            grad_clip: self.grad_clip,
            timing: self.timing,
        }
    }
}

fn expert_mode(variant: AdapterVariant) -> CoeffMode {
    match variant {
        AdapterVariant::RealOnly => CoeffMode::RealOnly,
        AdapterVariant::ImagOnly => CoeffMode::ImagOnly,
        _ => CoeffMode::Complex,
    }
}

/// Builds one expert per the run's variant.
fn build_expert(
    cfg: &RunConfig,
    center: f64,
    expert_seed: u64,
) -> Result<ExpertParams> {
    let dims = cfg.dims;
    let band = IndexBias::Band(BandParams::new(center, cfg.bandwidth)?);
    match cfg.variant {
        AdapterVariant::Full | AdapterVariant::RealOnly | AdapterVariant::ImagOnly => {
            Ok(ExpertParams::Spectral(init_expert(
                dims,
                cfg.n,
                band,
                cfg.init,
                expert_mode(cfg.variant),
                expert_seed,
            )?))
        }
        AdapterVariant::RandomIndex => Ok(ExpertParams::Spectral(init_expert(
            dims,
            cfg.n,
            IndexBias::Uniform,
            cfg.init,
            CoeffMode::Complex,
            expert_seed,
        )?)),
        AdapterVariant::Unsymmetric => {
            // Same scalar budget: n scalars = n/2 free complex bins.
            Ok(ExpertParams::Unsymmetric(init_unsymmetric_expert(
                dims,
                cfg.n / 2,
                band,
                cfg.init,
                expert_seed,
            )?))
        }
        AdapterVariant::LowRank { rank } => {
            Ok(ExpertParams::LowRank(LowRankExpert::init(dims, rank, expert_seed)?))
        }
    }
}

fn build_base(cfg: &RunConfig, site_seed: u64) -> RealMatrix {
    let (m, n) = cfg.dims;
    match cfg.base {
        BaseKind::Zero => RealMatrix::zeros(m, n),
        BaseKind::Gaussian { sigma } => {
            let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(site_seed, 0xBA5E));
            RealMatrix::from_vec(
                m,
                n,
                (0..m * n).map(|_| sigma * standard_normal(&mut rng)).collect(),
            )
        }
    }
}

/// Deterministically constructs the model a config describes. The same
/// config and seed always produce bit-identical initial parameters.
pub fn build_model(cfg: &RunConfig) -> Result<Model> {
    cfg.validate()?;
    let (m, n_cols) = cfg.dims;
    let centers = cfg
        .centers
        .clone()
        .unwrap_or_else(|| default_centers(cfg.z));
    let mut sites = Vec::with_capacity(cfg.sites);
    for s in 0..cfg.sites {
        let site_seed = derive_seed(cfg.seed, 1000 + s as u64);
        let base = build_base(cfg, site_seed);
        let mut experts = Vec::with_capacity(cfg.z);
        for (i, &center) in centers.iter().enumerate() {
            experts.push(build_expert(
                cfg,
                center,
                derive_seed(site_seed, 10 + i as u64),
            )?);
        }
        let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(site_seed, 0x40076));
        let phi = RealMatrix::from_vec(
            cfg.z,
            n_cols,
            (0..cfg.z * n_cols)
                .map(|_| cfg.router_init_sigma * standard_normal(&mut rng))
                .collect(),
        );
        let router = Router::with_options(phi, cfg.k, cfg.renormalize_gates)?;
        sites.push(AdapterSite::new(base, experts, router, cfg.eta)?);
    }

    let task = cfg.resolved_task();
    let head = match task.kind {
        TaskKind::TargetFit => None,
        TaskKind::BandMultitask | TaskKind::ToyClassify => {
            let classes = task.classes;
            let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(cfg.seed, 0xEAD));
            let sigma = 1.0 / (m as f64).sqrt();
            let weight = RealMatrix::from_vec(
                classes,
                m,
                (0..classes * m)
                    .map(|_| sigma * standard_normal(&mut rng))
                    .collect(),
            );
            Some(Head::new(weight, vec![0.0; classes])?)
        }
    };
    Model::new(sites, head)
}

/// Generates the dataset the config's task describes.
pub fn build_dataset(cfg: &RunConfig) -> Result<Dataset> {
    tasks::generate(&cfg.resolved_task())
}
