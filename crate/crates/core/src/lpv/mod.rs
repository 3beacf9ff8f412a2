//! Affine LPV state-space predictor with a partitioned neural scheduling map.

mod affine;
mod model;
mod net;
pub(crate) mod rollout;

use serde::{Deserialize, Serialize};

pub use affine::AffineMatrixFunction;
pub use model::{spectral_radius, LpvSsModel, Normalization, SchedulingNet};
pub use net::{LpvSubnet, ModelConfig, MODEL_FORMAT, MODEL_VERSION};
pub use rollout::{PredictorStepResult, Trajectory, DIVERGENCE_LIMIT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseStructure {
    /// Noise enters the state through `K` and the output directly.
    Innovation,
    /// `K = 0`; noise only on the output.
    OutputError,
}

/// How the scheduling signal is produced during propagation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SchedulingMode {
    /// The propagated model state feeds the scheduling map.
    #[default]
    SelfScheduled,
    /// The encoder, re-run on each shifted window, feeds the scheduling map.
    External,
    /// The scheduling signal is read from the data.
    Oracle,
}

impl std::str::FromStr for SchedulingMode {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "self" | "self_scheduled" => Ok(SchedulingMode::SelfScheduled),
            "external" => Ok(SchedulingMode::External),
            "oracle" => Ok(SchedulingMode::Oracle),
            other => Err(crate::error::Error::InvalidArgument(format!(
                "unknown scheduling mode {other:?} (expected self, external or oracle)"
            ))),
        }
    }
}

impl std::fmt::Display for SchedulingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SchedulingMode::SelfScheduled => "self",
            SchedulingMode::External => "external",
            SchedulingMode::Oracle => "oracle",
        })
    }
}
