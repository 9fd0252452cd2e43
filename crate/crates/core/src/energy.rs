//! Accelerator energy model. Each layer costs memory energy
//! `#acc * e_mem * R_mem` plus compute energy
//! `#comp * e_comp * (R_pruned + R_unpruned)`; the reduction coefficients
//! encode pruning granularity, sparsity and operand precision.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::compress::prune::Granularity;
use crate::compress::{technique_granularity, AchievedLayer, CompressionPlan, MAX_BITS, MIN_BITS};
use crate::error::{Error, Result};
use crate::model::{LayerDescriptor, ModelGraph};

/// Energy of a MAC with a zero weight operand relative to a regular one.
pub const DEFAULT_P_FG: f64 = 0.2;

const NBITS: usize = (MAX_BITS - MIN_BITS + 1) as usize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    /// MAC operations.
    pub comp: f64,
    /// Memory accesses.
    pub acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostProfile {
    pub e_comp: f64,
    pub e_mem: f64,
    pub layers: Vec<LayerCost>,
}

/// Memory accesses of a layer: every weight fetched once, every input value
/// read once and every output value written once.
pub fn analytic_accesses(d: &LayerDescriptor) -> usize {
    d.param_count() + d.in_channels * d.in_height * d.in_width + d.out_channels * d.out_height() * d.out_width()
}

pub fn analytic_cost_provider(model: &ModelGraph) -> CostProfile {
    analytic_cost_provider_with(model, 1.0, 10.0)
}

pub fn analytic_cost_provider_with(model: &ModelGraph, e_comp: f64, e_mem: f64) -> CostProfile {
    CostProfile {
        e_comp,
        e_mem,
        layers: model
            .layers
            .iter()
            .map(|l| LayerCost {
                comp: l.desc.macs() as f64,
                acc: analytic_accesses(&l.desc) as f64,
            })
            .collect(),
    }
}

#[derive(Debug, Deserialize)]
struct ProfileFile {
    e_comp: Option<f64>,
    e_mem: Option<f64>,
    #[serde(default)]
    layers: Vec<ProfileEntry>,
}

#[derive(Debug, Deserialize)]
struct ProfileEntry {
    t: usize,
    comp: f64,
    acc: f64,
}

/// Parses a cost-profile override. Layers absent from the file keep their
/// analytic counts.
pub fn parse_cost_profile(text: &str, model: &ModelGraph) -> Result<CostProfile> {
    let file: ProfileFile = serde_json::from_str(text)?;
    let mut profile = analytic_cost_provider(model);
    if let Some(e) = file.e_comp {
        profile.e_comp = e;
    }
    if let Some(e) = file.e_mem {
        profile.e_mem = e;
    }
    if profile.e_comp < 0.0 || profile.e_mem < 0.0 {
        return Err(Error::Config("negative unit energy in cost profile".into()));
    }
    let mut seen = vec![false; model.num_layers()];
    for e in file.layers {
        if e.t >= model.num_layers() {
            return Err(Error::Config(format!(
                "cost profile names layer {}, model has {}",
                e.t,
                model.num_layers()
            )));
        }
        if seen[e.t] {
            return Err(Error::Config(format!("cost profile lists layer {} twice", e.t)));
        }
        if e.comp < 0.0 || e.acc < 0.0 || !e.comp.is_finite() || !e.acc.is_finite() {
            return Err(Error::Config(format!("layer {}: counts must be non-negative", e.t)));
        }
        seen[e.t] = true;
        profile.layers[e.t] = LayerCost { comp: e.comp, acc: e.acc };
    }
    Ok(profile)
}

pub fn load_cost_profile(path: impl AsRef<Path>, model: &ModelGraph) -> Result<CostProfile> {
    parse_cost_profile(&std::fs::read_to_string(path)?, model)
}

/// Compute power of a MAC at `(Q_W, Q_A)` relative to 8/8 bits, plus the
/// zero-operand factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRatioTable {
    /// Indexed `[Q_W - 2][Q_A - 2]`.
    pub rq: [[f64; NBITS]; NBITS],
    pub p_fg: f64,
}

impl Default for PowerRatioTable {
    fn default() -> Self {
        default_rq_table()
    }
}

/// Bilinear surrogate `c0 + c1 * Q_W * Q_A / 64` through `R(8,8) = 1` and
/// `R(5,5) = 0.71`.
pub fn default_rq_table() -> PowerRatioTable {
    let c1 = 0.29 * 64.0 / 39.0;
    let c0 = 1.0 - c1;
    let mut rq = [[0.0; NBITS]; NBITS];
    for (i, row) in rq.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (qw, qa) = ((i + 2) as f64, (j + 2) as f64);
            *v = (c0 + c1 * qw * qa / 64.0).clamp(f64::MIN_POSITIVE, 1.0);
        }
    }
    rq[NBITS - 1][NBITS - 1] = 1.0;
    PowerRatioTable { rq, p_fg: DEFAULT_P_FG }
}

impl PowerRatioTable {
    pub fn ratio(&self, qw: u8, qa: u8) -> f64 {
        self.rq[(qw - MIN_BITS) as usize][(qa - MIN_BITS) as usize]
    }

    /// Shared weight/activation precision.
    pub fn ratio_shared(&self, q: u8) -> f64 {
        self.ratio(q, q)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p_fg > 0.0 && self.p_fg < 1.0) {
            return Err(Error::Config(format!("p_fg {} outside (0, 1)", self.p_fg)));
        }
        if self.rq[NBITS - 1][NBITS - 1] != 1.0 {
            return Err(Error::Config("R_Q(8,8) must be 1".into()));
        }
        for i in 0..NBITS {
            for j in 0..NBITS {
                let v = self.rq[i][j];
                if !(v > 0.0 && v <= 1.0) {
                    return Err(Error::Config(format!("R_Q entry [{i}][{j}] = {v} outside (0, 1]")));
                }
                if (i > 0 && self.rq[i - 1][j] > v) || (j > 0 && self.rq[i][j - 1] > v) {
                    return Err(Error::Config(format!("R_Q decreases at [{i}][{j}]")));
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let t: PowerRatioTable = serde_json::from_str(text)?;
        t.validate()?;
        Ok(t)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReductionCoefficients {
    pub r_mem: f64,
    pub r_pruned: f64,
    pub r_unpruned: f64,
}

impl ReductionCoefficients {
    pub const IDENTITY: ReductionCoefficients = ReductionCoefficients {
        r_mem: 1.0,
        r_pruned: 0.0,
        r_unpruned: 1.0,
    };
}

/// Coefficients for a single-granularity action of sparsity `s` at `q` bits.
pub fn reduction_coefficients(s: f64, q: u8, granularity: Granularity, table: &PowerRatioTable) -> ReductionCoefficients {
    if granularity.is_structured() {
        mixed_coefficients(s, 0.0, q, table)
    } else {
        mixed_coefficients(0.0, s, q, table)
    }
}

/// Coefficients when a fraction `coarse` of the weights is removed
/// structurally and a fraction `fine` of the remainder is zeroed
/// individually. Reduces to the single-granularity forms when either is 0.
pub fn mixed_coefficients(coarse: f64, fine: f64, q: u8, table: &PowerRatioTable) -> ReductionCoefficients {
    let keep = 1.0 - coarse;
    ReductionCoefficients {
        r_mem: keep,
        r_pruned: table.p_fg * fine * keep,
        r_unpruned: keep * (1.0 - fine) * table.ratio_shared(q),
    }
}

/// `(E_mem, E_comp)` of one layer.
pub fn layer_energy(cost: &LayerCost, e_comp: f64, e_mem: f64, c: &ReductionCoefficients) -> (f64, f64) {
    (
        cost.acc * e_mem * c.r_mem,
        cost.comp * e_comp * (c.r_pruned + c.r_unpruned),
    )
}

/// Compression state of one layer as seen by the energy model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerCompression {
    pub coarse: f64,
    pub fine: f64,
    pub bits: u8,
    /// Share of the layer's work that still has live inputs; scales both
    /// access and MAC counts.
    pub live_fraction: f64,
}

impl LayerCompression {
    pub const DENSE: LayerCompression = LayerCompression {
        coarse: 0.0,
        fine: 0.0,
        bits: MAX_BITS,
        live_fraction: 1.0,
    };

    pub fn from_achieved(a: &AchievedLayer) -> Self {
        LayerCompression {
            coarse: a.coarse_sparsity,
            fine: a.fine_sparsity,
            bits: a.bits,
            live_fraction: a.live_input_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEnergy {
    pub layer: usize,
    pub e_mem: f64,
    pub e_comp: f64,
    pub total: f64,
    pub baseline: f64,
    pub coefficients: ReductionCoefficients,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub layers: Vec<LayerEnergy>,
    pub total: f64,
    pub baseline_total: f64,
    /// `1 - total / baseline_total`.
    pub gain: f64,
}

/// Dense (S = 0, 8-bit) energy per layer.
pub fn baseline_layer_energies(profile: &CostProfile) -> Vec<f64> {
    profile
        .layers
        .iter()
        .map(|c| {
            let (m, k) = layer_energy(c, profile.e_comp, profile.e_mem, &ReductionCoefficients::IDENTITY);
            m + k
        })
        .collect()
}

pub fn total_energy(profile: &CostProfile, table: &PowerRatioTable, layers: &[LayerCompression]) -> Result<EnergyBreakdown> {
    if layers.len() != profile.layers.len() {
        return Err(Error::Plan(format!(
            "{} layer states for a {}-layer cost profile",
            layers.len(),
            profile.layers.len()
        )));
    }
    let baselines = baseline_layer_energies(profile);
    let mut out = Vec::with_capacity(layers.len());
    for (i, (lc, cost)) in layers.iter().zip(&profile.layers).enumerate() {
        let coefficients = mixed_coefficients(lc.coarse, lc.fine, lc.bits, table);
        let scaled = LayerCost {
            comp: cost.comp * lc.live_fraction,
            acc: cost.acc * lc.live_fraction,
        };
        let (e_mem, e_comp) = layer_energy(&scaled, profile.e_comp, profile.e_mem, &coefficients);
        out.push(LayerEnergy {
            layer: i,
            e_mem,
            e_comp,
            total: e_mem + e_comp,
            baseline: baselines[i],
            coefficients,
        });
    }
    let total: f64 = out.iter().map(|l| l.total).sum();
    let baseline_total: f64 = baselines.iter().sum();
    let gain = if baseline_total > 0.0 { 1.0 - total / baseline_total } else { 0.0 };
    Ok(EnergyBreakdown {
        layers: out,
        total,
        baseline_total,
        gain,
    })
}

/// Energy of a compressed model from its achieved per-layer state.
pub fn achieved_energy(profile: &CostProfile, table: &PowerRatioTable, achieved: &[AchievedLayer]) -> Result<EnergyBreakdown> {
    let layers: Vec<LayerCompression> = achieved.iter().map(LayerCompression::from_achieved).collect();
    total_energy(profile, table, &layers)
}

/// Nominal energy of a plan taken at face value: requested sparsities, no
/// junction merging or upstream effects.
pub fn plan_energy(
    model: &ModelGraph,
    plan: &CompressionPlan,
    profile: &CostProfile,
    table: &PowerRatioTable,
    ranked_pattern: Granularity,
) -> Result<EnergyBreakdown> {
    plan.validate_for(model, 1.0)?;
    let layers: Vec<LayerCompression> = plan
        .actions
        .iter()
        .map(|a| {
            let g = technique_granularity(a.technique, model.layers[a.layer].desc.kind, ranked_pattern);
            let (coarse, fine) = if g.is_structured() { (a.sparsity, 0.0) } else { (0.0, a.sparsity) };
            LayerCompression {
                coarse,
                fine,
                bits: a.bits,
                live_fraction: 1.0,
            }
        })
        .collect();
    total_energy(profile, table, &layers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LayerKind;

    fn single(comp: f64, acc: f64) -> CostProfile {
        CostProfile {
            e_comp: 1.0,
            e_mem: 10.0,
            layers: vec![LayerCost { comp, acc }],
        }
    }

    #[test]
    fn coefficient_cases() {
        let t = default_rq_table();
        for g in [Granularity::Element, Granularity::Filter] {
            assert_eq!(reduction_coefficients(0.0, 8, g, &t), ReductionCoefficients::IDENTITY);
        }
        let fine = reduction_coefficients(0.5, 8, Granularity::Element, &t);
        assert_eq!((fine.r_mem, fine.r_pruned, fine.r_unpruned), (1.0, 0.1, 0.5));
        let coarse = reduction_coefficients(1.0, 8, Granularity::Channel, &t);
        assert_eq!((coarse.r_mem, coarse.r_pruned, coarse.r_unpruned), (0.0, 0.0, 0.0));
    }

    #[test]
    fn layer_energy_hand_cases() {
        let t = default_rq_table();
        let c = LayerCost { comp: 100.0, acc: 10.0 };
        let fine = reduction_coefficients(0.5, 8, Granularity::Element, &t);
        assert_eq!(layer_energy(&c, 1.0, 10.0, &fine), (100.0, 60.0));
        let coarse = reduction_coefficients(0.5, 8, Granularity::Filter, &t);
        assert_eq!(layer_energy(&c, 1.0, 10.0, &coarse), (50.0, 50.0));
        assert_eq!(layer_energy(&c, 1.0, 10.0, &ReductionCoefficients::IDENTITY), (100.0, 100.0));
    }

    #[test]
    fn total_gain_hand_cases() {
        let t = default_rq_table();
        let p = single(100.0, 10.0);
        let run = |coarse, fine| {
            total_energy(&p, &t, &[LayerCompression { coarse, fine, bits: 8, live_fraction: 1.0 }])
                .unwrap()
                .gain
        };
        assert_eq!(run(0.0, 0.0), 0.0);
        assert!((run(0.0, 0.5) - 0.2).abs() < 1e-15);
        assert!((run(0.5, 0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn default_table_anchors() {
        let t = default_rq_table();
        assert_eq!(t.ratio(8, 8), 1.0);
        assert!((t.ratio(5, 5) - 0.71).abs() < 1e-12);
        assert!(t.ratio(2, 2) < t.ratio(5, 5));
        assert_eq!(t.p_fg, 0.2);
        t.validate().unwrap();
    }

    #[test]
    fn table_json_round_trip_and_validation() {
        let t = default_rq_table();
        let text = serde_json::to_string(&t).unwrap();
        assert_eq!(PowerRatioTable::from_json(&text).unwrap(), t);
        let mut bad = t.clone();
        bad.rq[0][1] = 0.01;
        assert!(PowerRatioTable::from_json(&serde_json::to_string(&bad).unwrap()).is_err());
        let mut bad = t;
        bad.p_fg = 1.5;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn analytic_counts() {
        let d = LayerDescriptor::conv(0, 1, 1, (1, 1), 1, 1, 0);
        assert_eq!(d.macs(), 1);
        assert_eq!(analytic_accesses(&d), 3);
        let f = LayerDescriptor::fc(0, 48, 10);
        assert_eq!(f.kind, LayerKind::Fc);
        assert_eq!(f.macs(), 480);
        assert_eq!(analytic_accesses(&f), 480 + 48 + 10);
    }
}
