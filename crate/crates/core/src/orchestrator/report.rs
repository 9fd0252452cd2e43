use serde::{Deserialize, Serialize};

use super::env::Environment;
use crate::compress::{CompressionPlan, Granularity, Technique};
use crate::dataset::Dataset;
use crate::energy::{analytic_accesses, baseline_layer_energies, layer_energy, CostProfile, ReductionCoefficients};
use crate::error::Result;
use crate::model::{evaluate_accuracy, LayerKind, ModelGraph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerMetrics {
    pub layer: usize,
    pub technique: Technique,
    pub granularity: Granularity,
    pub requested_sparsity: f64,
    pub achieved_sparsity: f64,
    pub coarse_sparsity: f64,
    pub fine_sparsity: f64,
    pub bits: u8,
    pub mirrored_from: Option<usize>,
    pub baseline_energy: f64,
    pub energy: f64,
    /// Percent of this layer's dense energy saved.
    pub energy_gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanMetrics {
    pub baseline_accuracy: f64,
    pub accuracy: f64,
    pub accuracy_loss: f64,
    pub energy_gain: f64,
    pub reward: f64,
    pub samples: usize,
    pub layers: Vec<LayerMetrics>,
}

/// Metrics of `plan` on `data`, with the no-op plan's accuracy on the same
/// data as the baseline.
pub fn evaluate_plan(env: &Environment, plan: &CompressionPlan, data: &Dataset, seed: u64) -> Result<PlanMetrics> {
    plan.validate_for(env.dense(), env.s_cap + 1e-12)?;
    let noop = env.compressor.apply(&CompressionPlan::noop(env.num_layers()), seed)?;
    let baseline_accuracy = evaluate_accuracy(&noop.model, data)?;
    let e = env.evaluate_on(plan, seed, data, baseline_accuracy)?;
    let layers = e
        .achieved
        .iter()
        .zip(&e.energy.layers)
        .map(|(a, le)| LayerMetrics {
            layer: a.layer,
            technique: a.technique,
            granularity: a.granularity,
            requested_sparsity: a.requested_sparsity,
            achieved_sparsity: a.total_sparsity,
            coarse_sparsity: a.coarse_sparsity,
            fine_sparsity: a.fine_sparsity,
            bits: a.bits,
            mirrored_from: a.mirrored_from,
            baseline_energy: le.baseline,
            energy: le.total,
            energy_gain: if le.baseline > 0.0 { (1.0 - le.total / le.baseline) * 100.0 } else { 0.0 },
        })
        .collect();
    Ok(PlanMetrics {
        baseline_accuracy,
        accuracy: e.accuracy,
        accuracy_loss: e.accuracy_loss,
        energy_gain: e.energy_gain,
        reward: e.reward,
        samples: data.len(),
        layers,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEnergyRow {
    pub layer: usize,
    pub kind: LayerKind,
    pub params: usize,
    pub macs: f64,
    pub accesses: f64,
    pub analytic_accesses: usize,
    pub e_comp: f64,
    pub e_mem: f64,
    pub total: f64,
    /// Percent of the model's dense energy.
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub e_comp: f64,
    pub e_mem: f64,
    pub total: f64,
    pub layers: Vec<LayerEnergyRow>,
}

/// Dense per-layer energy under a cost profile.
pub fn energy_report(model: &ModelGraph, profile: &CostProfile) -> EnergyReport {
    let totals = baseline_layer_energies(profile);
    let total: f64 = totals.iter().sum();
    let layers = model
        .layers
        .iter()
        .zip(&profile.layers)
        .enumerate()
        .map(|(l, (layer, cost))| {
            let (m, c) = layer_energy(cost, profile.e_comp, profile.e_mem, &ReductionCoefficients::IDENTITY);
            LayerEnergyRow {
                layer: l,
                kind: layer.desc.kind,
                params: layer.desc.param_count(),
                macs: cost.comp,
                accesses: cost.acc,
                analytic_accesses: analytic_accesses(&layer.desc),
                e_comp: c,
                e_mem: m,
                total: totals[l],
                share: if total > 0.0 { totals[l] / total * 100.0 } else { 0.0 },
            }
        })
        .collect();
    EnergyReport {
        e_comp: profile.e_comp,
        e_mem: profile.e_mem,
        total,
        layers,
    }
}
