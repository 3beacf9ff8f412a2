use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{LpvSsModel, Normalization, SchedulingNet};
use super::{NoiseStructure, SchedulingMode};
use crate::diffnet::Tensor;
use crate::encoder::EncoderNet;
use crate::error::{Error, Result};
use crate::rng::child_rng;

pub const MODEL_FORMAT: &str = "lpv-subnet-model";
pub const MODEL_VERSION: u32 = 1;

/// Architecture of an [`LpvSubnet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_x: usize,
    #[serde(default = "one")]
    pub n_u: usize,
    #[serde(default = "one")]
    pub n_y: usize,
    pub n_p: usize,
    /// Scheduling channels feeding `A`, `B`, `K`.
    #[serde(default)]
    pub n_px: Option<usize>,
    /// Scheduling channels feeding `C`, `D`.
    #[serde(default)]
    pub n_py: Option<usize>,
    /// Encoder lag `n`; defaults to `n_x`.
    #[serde(default)]
    pub lag: Option<usize>,
    #[serde(default = "default_hidden")]
    pub encoder_hidden: Vec<usize>,
    #[serde(default = "default_hidden")]
    pub pnet_hidden: Vec<usize>,
    #[serde(default = "default_noise")]
    pub noise: NoiseStructure,
    #[serde(default)]
    pub mode: SchedulingMode,
}

fn one() -> usize {
    1
}

fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}

fn default_noise() -> NoiseStructure {
    NoiseStructure::OutputError
}

impl ModelConfig {
    pub fn new(n_x: usize, n_p: usize) -> Self {
        ModelConfig {
            n_x,
            n_u: 1,
            n_y: 1,
            n_p,
            n_px: None,
            n_py: None,
            lag: None,
            encoder_hidden: default_hidden(),
            pnet_hidden: default_hidden(),
            noise: default_noise(),
            mode: SchedulingMode::SelfScheduled,
        }
    }

    pub fn lag(&self) -> usize {
        self.lag.unwrap_or(self.n_x)
    }

    /// `(n_px, n_py)`; by default `n_px = ceil(n_p / 2)` and `n_py` takes
    /// the rest.
    pub fn partition(&self) -> Result<(usize, usize)> {
        let (px, py) = match (self.n_px, self.n_py) {
            (None, None) => {
                let px = self.n_p.div_ceil(2);
                (px, self.n_p - px)
            }
            (Some(px), None) => (px, self.n_p.checked_sub(px).ok_or_else(|| bad_partition(self))?),
            (None, Some(py)) => (self.n_p.checked_sub(py).ok_or_else(|| bad_partition(self))?, py),
            (Some(px), Some(py)) => (px, py),
        };
        if px + py != self.n_p {
            return Err(bad_partition(self));
        }
        Ok((px, py))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_x == 0 || self.n_u == 0 || self.n_y == 0 {
            return Err(Error::InvalidConfig("model dimensions must be positive".into()));
        }
        if self.encoder_hidden.contains(&0) || self.pnet_hidden.contains(&0) {
            return Err(Error::InvalidConfig("hidden widths must be positive".into()));
        }
        self.partition()?;
        Ok(())
    }
}

fn bad_partition(cfg: &ModelConfig) -> Error {
    Error::InvalidConfig(format!(
        "scheduling partition {:?} + {:?} does not sum to n_p = {}",
        cfg.n_px, cfg.n_py, cfg.n_p
    ))
}

/// State-space model, scheduling map and encoder trained together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpvSubnet {
    pub model: LpvSsModel,
    pub sched: SchedulingNet,
    pub encoder: EncoderNet,
    /// Scheduling mode the network was built (and trained) for.
    pub mode: SchedulingMode,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDocument {
    format: String,
    version: u32,
    network: LpvSubnet,
}

impl LpvSubnet {
    /// Fresh network; each component draws from its own child seed.
    pub fn init(cfg: &ModelConfig, norm: Normalization, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let (n_px, n_py) = cfg.partition()?;
        if norm.n_u() != cfg.n_u || norm.n_y() != cfg.n_y {
            return Err(Error::InvalidConfig("normalization dims disagree with model".into()));
        }
        let mut model = LpvSsModel::init(
            cfg.n_x,
            cfg.n_u,
            cfg.n_y,
            n_px,
            n_py,
            cfg.noise,
            &mut child_rng(seed, "init/state-space"),
        );
        model.norm = norm;
        let sched = SchedulingNet::init(
            cfg.n_x,
            cfg.n_u,
            cfg.n_y,
            n_px,
            n_py,
            &cfg.pnet_hidden,
            cfg.noise,
            &mut child_rng(seed, "init/p-net"),
        )?;
        let encoder = EncoderNet::init(
            cfg.lag(),
            cfg.n_u,
            cfg.n_y,
            cfg.n_x,
            &cfg.encoder_hidden,
            &mut child_rng(seed, "init/encoder"),
        )?;
        Ok(LpvSubnet {
            model,
            sched,
            encoder,
            mode: cfg.mode,
        })
    }

    pub fn lag(&self) -> usize {
        self.encoder.lag
    }

    pub fn noise(&self) -> NoiseStructure {
        self.model.noise
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.sched.validate()?;
        self.encoder.validate()?;
        let m = &self.model;
        let s = &self.sched;
        if s.noise != m.noise || s.n_x != m.n_x || s.n_u != m.n_u || s.n_y != m.n_y {
            return Err(Error::InvalidArgument("scheduling net disagrees with model".into()));
        }
        if s.n_px() != m.n_px || s.n_py() != m.n_py {
            return Err(Error::InvalidArgument("scheduling partition disagrees with model".into()));
        }
        if self.encoder.n_x() != m.n_x || self.encoder.n_u != m.n_u || self.encoder.n_y != m.n_y {
            return Err(Error::InvalidArgument("encoder disagrees with model".into()));
        }
        Ok(())
    }

    /// All trainable tensors: state-space matrices, then the scheduling
    /// networks, then the encoder.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = self.model.params();
        out.extend(self.sched.params());
        out.extend(self.encoder.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.model.params_mut();
        out.extend(self.sched.params_mut());
        out.extend(self.encoder.params_mut());
        out
    }

    /// Number of tensors in each of the (state-space, scheduling, encoder)
    /// groups of [`LpvSubnet::params`].
    pub fn param_groups(&self) -> (usize, usize, usize) {
        (
            self.model.params().len(),
            self.sched.params().len(),
            self.encoder.params().len(),
        )
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = ModelDocument {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            network: self.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        if doc.format != MODEL_FORMAT || doc.version != MODEL_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported model document {} v{}",
                doc.format, doc.version
            )));
        }
        doc.network.validate()?;
        Ok(doc.network)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_partition() {
        let cases = [(0, (0, 0)), (1, (1, 0)), (2, (1, 1)), (3, (2, 1))];
        for (np, want) in cases {
            assert_eq!(ModelConfig::new(2, np).partition().unwrap(), want);
        }
        let mut cfg = ModelConfig::new(2, 3);
        cfg.n_py = Some(3);
        assert_eq!(cfg.partition().unwrap(), (0, 3));
        cfg.n_px = Some(1);
        assert!(cfg.partition().is_err());
    }

    #[test]
    fn init_is_seed_deterministic_and_valid() {
        let mut cfg = ModelConfig::new(3, 2);
        cfg.encoder_hidden = vec![8];
        cfg.pnet_hidden = vec![8];
        cfg.noise = NoiseStructure::Innovation;
        let a = LpvSubnet::init(&cfg, Normalization::identity(1, 1), 4).unwrap();
        let b = LpvSubnet::init(&cfg, Normalization::identity(1, 1), 4).unwrap();
        assert_eq!(a, b);
        a.validate().unwrap();
        assert_eq!(a.encoder.input_dim(), 8);
        let (ss, pn, en) = a.param_groups();
        // A, B, C, D, K each with base + one coefficient
        assert_eq!(ss, 10);
        assert_eq!(pn, 10);
        assert_eq!(en, 5);
    }

    #[test]
    fn output_error_excludes_gain() {
        let cfg = ModelConfig::new(2, 0);
        let net = LpvSubnet::init(&cfg, Normalization::identity(1, 1), 0).unwrap();
        assert_eq!(net.param_groups().0, 4);
    }

    #[test]
    fn json_roundtrip_is_exact() {
        let mut cfg = ModelConfig::new(2, 2);
        cfg.encoder_hidden = vec![5];
        cfg.pnet_hidden = vec![5];
        let net = LpvSubnet::init(&cfg, Normalization::identity(1, 1), 99).unwrap();
        let back = LpvSubnet::from_json(&net.to_json().unwrap()).unwrap();
        assert_eq!(net, back);
    }

    #[test]
    fn rejects_foreign_documents() {
        assert!(LpvSubnet::from_json(r#"{"format":"x","version":1,"network":{}}"#).is_err());
    }
}
