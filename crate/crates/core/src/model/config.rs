use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::activation::DEFAULT_LEAKY_SLOPE;
use crate::nn::grl::DEFAULT_GRL_LAMBDA;
use crate::nn::LossWeights;

/// Which heads the network carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Shared trunk with both scene and event heads.
    #[default]
    Mtl,
    /// Shared + scene layers only (the CNN scene classifier).
    AscOnly,
    /// Shared + event layers only (the CNN-BiGRU event detector).
    SedOnly,
}

impl Variant {
    pub fn has_scene(self) -> bool {
        matches!(self, Variant::Mtl | Variant::AscOnly)
    }

    pub fn has_event(self) -> bool {
        matches!(self, Variant::Mtl | Variant::SedOnly)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Mtl => "mtl",
            Variant::AscOnly => "asc-only",
            Variant::SedOnly => "sed-only",
        })
    }
}

/// Where a gradient reversal layer sits.
///
/// `S1`/`E1` sit at the scene/event branch inputs, directly after the shared
/// trunk. `S2` sits after the scene global max pool, `E2` after the BiGRU,
/// i.e. right before each branch's fully connected stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GrlPosition {
    S1,
    S2,
    E1,
    E2,
}

impl GrlPosition {
    pub const ALL: [GrlPosition; 4] = [GrlPosition::S1, GrlPosition::S2, GrlPosition::E1, GrlPosition::E2];

    pub fn is_scene(self) -> bool {
        matches!(self, GrlPosition::S1 | GrlPosition::S2)
    }
}

impl fmt::Display for GrlPosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for GrlPosition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "S1" => Ok(GrlPosition::S1),
            "S2" => Ok(GrlPosition::S2),
            "E1" => Ok(GrlPosition::E1),
            "E2" => Ok(GrlPosition::E2),
            other => Err(Error::Config(format!("unknown GRL position {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrlConfig {
    pub position: Option<GrlPosition>,
    pub lambda: f64,
}

impl Default for GrlConfig {
    fn default() -> Self {
        GrlConfig {
            position: None,
            lambda: DEFAULT_GRL_LAMBDA,
        }
    }
}

/// Layer widths and pooling factors.
///
/// The default reproduces the full-size network: 128-channel shared convs with
/// 1x8, 1x2, 1x2 frequency pooling, 256-channel scene convs with 25x1 time
/// pooling, a 32-unit BiGRU and 32-unit FC layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub trunk_channels: usize,
    /// One shared conv block per entry, each followed by 1 x `pool` max pooling.
    pub trunk_freq_pools: Vec<usize>,
    pub scene_channels: usize,
    pub scene_time_pool: usize,
    pub gru_units: usize,
    pub fc_units: usize,
    pub leaky_slope: f64,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            trunk_channels: 128,
            trunk_freq_pools: vec![8, 2, 2],
            scene_channels: 256,
            scene_time_pool: 25,
            gru_units: 32,
            fc_units: 32,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
        }
    }
}

impl Architecture {
    /// Narrow network for 100 x 16 features; trains in seconds per epoch.
    pub fn fast() -> Self {
        Architecture {
            trunk_channels: 16,
            trunk_freq_pools: vec![4, 2, 2],
            scene_channels: 32,
            scene_time_pool: 25,
            gru_units: 16,
            fc_units: 16,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
        }
    }

    /// Tiny network for 20 x 16 inputs used by gradient checks.
    pub fn toy() -> Self {
        Architecture {
            trunk_channels: 3,
            trunk_freq_pools: vec![2, 2, 2],
            scene_channels: 4,
            scene_time_pool: 5,
            gru_units: 3,
            fc_units: 4,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.trunk_channels,
            self.scene_channels,
            self.scene_time_pool,
            self.gru_units,
            self.fc_units,
        ];
        if positive.contains(&0) || self.trunk_freq_pools.is_empty() || self.trunk_freq_pools.contains(&0) {
            return Err(Error::Config("architecture widths and pools must be positive".into()));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::Config("leaky slope must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Frequency bins left after the shared trunk for `n_bins` input bins.
    pub fn trunk_output_bins(&self, n_bins: usize) -> usize {
        self.trunk_freq_pools.iter().fold(n_bins, |d, p| d / p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub n_scenes: usize,
    pub n_events: usize,
    /// Mel bins of the input features.
    pub n_bins: usize,
    pub variant: Variant,
    pub grl: GrlConfig,
    pub loss_weights: LossWeights,
    pub arch: Architecture,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            n_scenes: 4,
            n_events: 25,
            n_bins: 64,
            variant: Variant::Mtl,
            grl: GrlConfig::default(),
            loss_weights: LossWeights::default(),
            arch: Architecture::default(),
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_scenes < 2 {
            return Err(Error::Config(format!("need at least 2 scenes, got {}", self.n_scenes)));
        }
        if self.n_events < 1 {
            return Err(Error::Config("need at least 1 event class".into()));
        }
        self.arch.validate()?;
        self.loss_weights.validate()?;
        if self.arch.trunk_output_bins(self.n_bins) == 0 {
            return Err(Error::Config(format!(
                "{} mel bins do not survive frequency pooling {:?}",
                self.n_bins, self.arch.trunk_freq_pools
            )));
        }
        if let Some(pos) = self.grl.position {
            if self.variant != Variant::Mtl {
                return Err(Error::Config(format!(
                    "GRL {pos} requires the MTL variant, not {}",
                    self.variant
                )));
            }
        }
        if !(self.grl.lambda >= 0.0 && self.grl.lambda.is_finite()) {
            return Err(Error::Config("GRL lambda must be finite and >= 0".into()));
        }
        Ok(())
    }
}
