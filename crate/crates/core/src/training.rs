//! Experiment configuration, fake labels and the per-seed training loop.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{stack_features, Dataset, LabeledClip};
use crate::error::{Error, Result};
use crate::model::{build_network, Architecture, GrlConfig, GrlPosition, LayerGraph, NetworkConfig, Targets, Variant};
use crate::nn::{LossWeights, Radam, RadamConfig};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FakeLabels {
    #[default]
    None,
    Scene,
    Event,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ArchSetting {
    /// `"default"`, `"fast"` or `"toy"`.
    Named(String),
    Custom(Architecture),
}

impl Default for ArchSetting {
    fn default() -> Self {
        ArchSetting::Named("default".into())
    }
}

impl ArchSetting {
    pub fn resolve(&self) -> Result<Architecture> {
        match self {
            ArchSetting::Custom(a) => Ok(a.clone()),
            ArchSetting::Named(n) => match n.as_str() {
                "default" => Ok(Architecture::default()),
                "fast" => Ok(Architecture::fast()),
                "toy" => Ok(Architecture::toy()),
                other => Err(Error::Config(format!(
                    "unknown architecture {other:?} (expected default, fast or toy)"
                ))),
            },
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_epochs() -> usize {
    100
}
fn default_batch_size() -> usize {
    16
}
fn default_lr() -> f64 {
    RadamConfig::default().lr
}
fn default_alpha() -> f64 {
    LossWeights::default().alpha
}
fn default_beta() -> f64 {
    LossWeights::default().beta
}
fn default_lambda() -> f64 {
    crate::nn::grl::DEFAULT_GRL_LAMBDA
}
fn default_threshold() -> f64 {
    crate::eval::DEFAULT_THRESHOLD
}

/// One run of one method: every field maps to a key of the TOML config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub variant: Variant,
    #[serde(default)]
    pub grl_position: Option<GrlPosition>,
    #[serde(default = "default_lambda")]
    pub grl_lambda: f64,
    #[serde(default)]
    pub fake_labels: FakeLabels,
    /// Draw new fake labels every epoch instead of once per run.
    #[serde(default)]
    pub fake_resample_per_epoch: bool,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub architecture: ArchSetting,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        toml::from_str("").expect("all experiment keys have defaults")
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config; a relative `dataset` path is resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if cfg.name.is_empty() {
            cfg.name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        }
        if let (Some(d), Some(parent)) = (cfg.dataset.as_mut(), path.parent()) {
            if d.is_relative() {
                *d = parent.join(&*d);
            }
        }
        Ok(cfg)
    }

    pub fn loss_weights(&self) -> Result<LossWeights> {
        LossWeights::new(self.alpha, self.beta)
    }

    pub fn validate(&self) -> Result<()> {
        if self.fake_labels != FakeLabels::None && self.grl_position.is_some() {
            return Err(Error::Config("fake_labels and grl_position cannot be combined in one run".into()));
        }
        if self.fake_labels == FakeLabels::Scene && !self.variant.has_scene()
            || self.fake_labels == FakeLabels::Event && !self.variant.has_event()
        {
            return Err(Error::Config(format!(
                "fake_labels = {:?} needs a head the {} variant lacks",
                self.fake_labels, self.variant
            )));
        }
        if self.grl_position.is_some() && self.variant != Variant::Mtl {
            return Err(Error::Config(format!("grl_position requires variant mtl, not {}", self.variant)));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must list at least one seed".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be >= 2 for batch normalization".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config("threshold must lie in (0, 1)".into()));
        }
        self.loss_weights()?;
        self.architecture.resolve()?.validate()
    }

    pub fn network_config(&self, n_scenes: usize, n_events: usize, n_bins: usize) -> Result<NetworkConfig> {
        let cfg = NetworkConfig {
            n_scenes,
            n_events,
            n_bins,
            variant: self.variant,
            grl: GrlConfig {
                position: self.grl_position,
                lambda: self.grl_lambda,
            },
            loss_weights: self.loss_weights()?,
            arch: self.architecture.resolve()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Applies an independent uniform random permutation to each one-hot vector.
pub fn fake_scene_labels(labels: &[Vec<f64>], rng: &mut impl Rng) -> Vec<Vec<f64>> {
    labels
        .iter()
        .map(|v| {
            let mut v = v.clone();
            v.shuffle(rng);
            v
        })
        .collect()
}

/// Permutes the class vector of every frame of a `[frames, n_events]` roll.
pub fn fake_event_labels(roll: &[u8], n_events: usize, rng: &mut impl Rng) -> Vec<u8> {
    let mut out = roll.to_vec();
    for frame in out.chunks_mut(n_events) {
        frame.shuffle(rng);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub total: f64,
    pub scene: f64,
    pub event: f64,
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub graph: LayerGraph,
    pub losses: Vec<EpochLoss>,
}

/// Per-clip training targets, possibly faked.
struct TargetSet {
    scene: Vec<Vec<f64>>,
    events: Vec<Vec<u8>>,
}

fn true_targets(clips: &[&LabeledClip], n_scenes: usize) -> TargetSet {
    TargetSet {
        scene: clips.iter().map(|c| c.scene_one_hot(n_scenes)).collect(),
        events: clips.iter().map(|c| c.events.clone()).collect(),
    }
}

fn apply_fakes(truth: &TargetSet, mode: FakeLabels, n_events: usize, rng: &mut impl Rng) -> TargetSet {
    match mode {
        FakeLabels::None => TargetSet {
            scene: truth.scene.clone(),
            events: truth.events.clone(),
        },
        FakeLabels::Scene => TargetSet {
            scene: fake_scene_labels(&truth.scene, rng),
            events: truth.events.clone(),
        },
        FakeLabels::Event => TargetSet {
            scene: truth.scene.clone(),
            events: truth.events.iter().map(|r| fake_event_labels(r, n_events, rng)).collect(),
        },
    }
}

fn batch_targets(targets: &TargetSet, idx: &[usize], frames: usize, n_scenes: usize, n_events: usize) -> Result<Targets> {
    let scene: Vec<f64> = idx.iter().flat_map(|&i| targets.scene[i].iter().copied()).collect();
    let events: Vec<f64> = idx
        .iter()
        .flat_map(|&i| targets.events[i].iter().map(|&v| f64::from(v)))
        .collect();
    Ok(Targets {
        scene: Tensor::new(vec![idx.len(), n_scenes], scene)?,
        events: Tensor::new(vec![idx.len(), frames, n_events], events)?,
    })
}

/// Trains one seed on the clips at `train_idx`.
///
/// All randomness (initial weights, fake labels, batch order) comes from one
/// ChaCha8 stream seeded with `seed`. A trailing batch of a single clip is
/// skipped since batch normalization needs two samples.
pub fn train_seed(cfg: &ExperimentConfig, data: &Dataset, train_idx: &[usize], seed: u64) -> Result<SeedRun> {
    let (frames, bins) = data.geometry()?;
    let (n_scenes, n_events) = (data.n_scenes(), data.n_events());
    let net_cfg = cfg.network_config(n_scenes, n_events, bins)?;
    if train_idx.len() < 2 {
        return Err(Error::Input("need at least two training clips".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut graph = build_network(&net_cfg, &mut rng)?;
    let clips: Vec<&LabeledClip> = train_idx.iter().map(|&i| &data.clips[i]).collect();
    let truth = true_targets(&clips, n_scenes);
    let mut targets = apply_fakes(&truth, cfg.fake_labels, n_events, &mut rng);
    let weights = cfg.loss_weights()?;
    let mut opt = Radam::new(RadamConfig {
        lr: cfg.learning_rate,
        ..RadamConfig::default()
    });
    let mut order: Vec<usize> = (0..clips.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        if epoch > 0 && cfg.fake_resample_per_epoch {
            targets = apply_fakes(&truth, cfg.fake_labels, n_events, &mut rng);
        }
        order.shuffle(&mut rng);
        let mut sum = EpochLoss {
            epoch,
            total: 0.0,
            scene: 0.0,
            event: 0.0,
        };
        let mut seen = 0usize;
        for idx in order.chunks(cfg.batch_size).filter(|b| b.len() >= 2) {
            let batch: Vec<&LabeledClip> = idx.iter().map(|&i| clips[i]).collect();
            let x = stack_features(&batch)?;
            let t = batch_targets(&targets, idx, frames, n_scenes, n_events)?;
            let l = graph.train_step(&x, &t, weights, &mut opt)?;
            let n = idx.len() as f64;
            sum.total += l.total * n;
            sum.scene += l.scene * n;
            sum.event += l.event * n;
            seen += idx.len();
        }
        let n = seen as f64;
        losses.push(EpochLoss {
            epoch,
            total: sum.total / n,
            scene: sum.scene / n,
            event: sum.event / n,
        });
    }
    Ok(SeedRun { seed, graph, losses })
}

/// Trains every seed of `cfg`, at most `workers` at a time. Each seed's
/// outcome is reported separately; a failing seed does not stop the others.
pub fn run_training(
    cfg: &ExperimentConfig,
    data: &Dataset,
    train_idx: &[usize],
    workers: usize,
) -> Result<Vec<(u64, Result<SeedRun>)>> {
    cfg.validate()?;
    if data.clips.is_empty() {
        return Err(Error::Input("dataset is empty".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    Ok(pool.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&s| (s, train_seed(cfg, data, train_idx, s)))
            .collect()
    }))
}
