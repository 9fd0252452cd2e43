//! Pruning techniques, per-channel post-training quantization, residual
//! dependency resolution, and application of a full compression plan.

mod apply;
mod deps;
pub mod prune;
pub mod quant;

pub use apply::{apply_plan, AchievedLayer, AppliedPlan, CompressConfig, Compressor};
pub use deps::{resolve_dependencies, ResolvedAction, ResolvedPlan};
pub use prune::{Granularity, PruningMask, RankNorm};
pub use quant::{quantize_layer, ActivationQuant, ChannelQuant, QuantParams};

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LayerKind, ModelGraph};

pub const MIN_BITS: u8 = 2;
pub const MAX_BITS: u8 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Technique {
    Sensitivity,
    Level,
    Splicing,
    L1Ranked,
    L2Ranked,
    Bernoulli,
    FmReconstruction,
}

impl Technique {
    pub const ALL: [Technique; 7] = [
        Technique::Sensitivity,
        Technique::Level,
        Technique::Splicing,
        Technique::L1Ranked,
        Technique::L2Ranked,
        Technique::Bernoulli,
        Technique::FmReconstruction,
    ];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Technique> {
        Technique::ALL.get(id).copied()
    }

    /// Fine-grained techniques zero individual weights; the others remove
    /// whole structures.
    pub fn is_fine_grained(self) -> bool {
        matches!(self, Technique::Sensitivity | Technique::Level | Technique::Splicing)
    }

    pub fn name(self) -> &'static str {
        match self {
            Technique::Sensitivity => "sensitivity",
            Technique::Level => "level",
            Technique::Splicing => "splicing",
            Technique::L1Ranked => "l1_ranked",
            Technique::L2Ranked => "l2_ranked",
            Technique::Bernoulli => "bernoulli",
            Technique::FmReconstruction => "fm_reconstruction",
        }
    }
}

impl fmt::Display for Technique {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Technique {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Technique::ALL
            .iter()
            .copied()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown technique {s:?}")))
    }
}

/// Per-layer compression directive: technique, sparsity `S`, and the shared
/// weight/activation precision `Q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompressionAction {
    pub layer: usize,
    pub technique: Technique,
    pub sparsity: f64,
    pub bits: u8,
}

impl CompressionAction {
    pub fn new(layer: usize, technique: Technique, sparsity: f64, bits: u8) -> Result<Self> {
        let a = CompressionAction {
            layer,
            technique,
            sparsity,
            bits,
        };
        a.validate(1.0)?;
        Ok(a)
    }

    /// S = 0 at 8 bits.
    pub fn noop(layer: usize) -> Self {
        CompressionAction {
            layer,
            technique: Technique::Level,
            sparsity: 0.0,
            bits: MAX_BITS,
        }
    }

    pub fn validate(&self, s_cap: f64) -> Result<()> {
        if !(0.0..=s_cap).contains(&self.sparsity) {
            return Err(Error::Plan(format!(
                "layer {}: sparsity {} outside [0, {}]",
                self.layer, self.sparsity, s_cap
            )));
        }
        if !(MIN_BITS..=MAX_BITS).contains(&self.bits) {
            return Err(Error::Plan(format!(
                "layer {}: bits {} outside [{}, {}]",
                self.layer, self.bits, MIN_BITS, MAX_BITS
            )));
        }
        Ok(())
    }
}

/// One action per layer, serialized as a bare JSON list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CompressionPlan {
    pub actions: Vec<CompressionAction>,
}

impl CompressionPlan {
    pub fn new(actions: Vec<CompressionAction>) -> Self {
        CompressionPlan { actions }
    }

    pub fn noop(num_layers: usize) -> Self {
        CompressionPlan {
            actions: (0..num_layers).map(CompressionAction::noop).collect(),
        }
    }

    pub fn uniform(num_layers: usize, technique: Technique, sparsity: f64, bits: u8) -> Self {
        CompressionPlan {
            actions: (0..num_layers)
                .map(|layer| CompressionAction {
                    layer,
                    technique,
                    sparsity,
                    bits,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Checks that the plan covers every layer of `model` exactly once, in
    /// order, with legal values.
    pub fn validate_for(&self, model: &ModelGraph, s_cap: f64) -> Result<()> {
        if self.actions.len() != model.num_layers() {
            return Err(Error::Plan(format!(
                "plan has {} actions, model has {} layers",
                self.actions.len(),
                model.num_layers()
            )));
        }
        for (i, a) in self.actions.iter().enumerate() {
            if a.layer != i {
                return Err(Error::Plan(format!(
                    "action {i} targets layer {}; plans must list layers in order",
                    a.layer
                )));
            }
            a.validate(s_cap)?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Granularity a technique produces on a layer of the given kind.
pub fn technique_granularity(technique: Technique, kind: LayerKind, ranked_pattern: Granularity) -> Granularity {
    match (technique.is_fine_grained(), kind) {
        (true, _) => Granularity::Element,
        (false, LayerKind::Fc) => Granularity::Row,
        (false, LayerKind::Conv) => match technique {
            Technique::L1Ranked | Technique::L2Ranked => ranked_pattern,
            Technique::Bernoulli => Granularity::Filter,
            _ => Granularity::Channel,
        },
    }
}

/// `floor(S * units)` with a small tolerance so that e.g. `S = 1/3` of three
/// units counts one unit.
pub fn unit_count(sparsity: f64, units: usize) -> usize {
    (((sparsity * units as f64) + 1e-9).floor() as usize).min(units)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_json_shape() {
        let p = CompressionPlan::new(vec![CompressionAction::new(0, Technique::L1Ranked, 0.25, 6).unwrap()]);
        let v: serde_json::Value = serde_json::from_str(&p.to_json().unwrap()).unwrap();
        assert_eq!(
            v,
            serde_json::json!([{"layer": 0, "technique": "l1_ranked", "sparsity": 0.25, "bits": 6}])
        );
        assert_eq!(CompressionPlan::from_json(&p.to_json().unwrap()).unwrap(), p);
    }

    #[test]
    fn action_bounds() {
        assert!(CompressionAction::new(0, Technique::Level, 1.2, 8).is_err());
        assert!(CompressionAction::new(0, Technique::Level, 0.5, 9).is_err());
        assert!(CompressionAction::new(0, Technique::Level, 0.5, 1).is_err());
        let a = CompressionAction::new(0, Technique::Level, 0.95, 8).unwrap();
        assert!(a.validate(0.9).is_err());
    }

    #[test]
    fn unit_count_floors() {
        assert_eq!(unit_count(1.0 / 3.0, 3), 1);
        assert_eq!(unit_count(0.5, 5), 2);
        assert_eq!(unit_count(1.0, 7), 7);
        assert_eq!(unit_count(0.0, 7), 0);
    }

    #[test]
    fn technique_ids_round_trip() {
        for t in Technique::ALL {
            assert_eq!(Technique::from_id(t.id()), Some(t));
            assert_eq!(t.name().parse::<Technique>().unwrap(), t);
        }
        assert_eq!(Technique::from_id(7), None);
    }
}
