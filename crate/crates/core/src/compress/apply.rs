//! Applies a full plan: resolve junctions, prune every layer against the
//! dense model, then quantize the surviving weights and calibrate input
//! quantizers on the pruned model.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::deps::{resolve_dependencies, ResolvedPlan};
use super::prune::{self, FmProblem, Granularity, PruningMask, RankNorm};
use super::quant::{quantize_weights, ActivationQuant, QuantParams};
use super::{unit_count, CompressionPlan, Technique};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{loss_gradients, InputTransform, LayerActivations, LayerKind, ModelGraph, Source};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompressConfig {
    /// Upper bound on per-layer sparsity.
    pub s_cap: f64,
    /// Structure removed by the norm-ranked techniques on conv layers.
    pub ranked_pattern: Granularity,
    /// Relative half-width of the splicing hysteresis band.
    pub splice_band: f64,
    /// Max im2col rows used for feature-map reconstruction.
    pub fm_rows: usize,
    /// Calibration samples for gradients, reconstruction and activation
    /// clipping.
    pub calib_samples: usize,
    pub seed: u64,
}

impl Default for CompressConfig {
    fn default() -> Self {
        CompressConfig {
            s_cap: 0.9,
            ranked_pattern: Granularity::Filter,
            splice_band: 0.1,
            fm_rows: 2048,
            calib_samples: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AchievedLayer {
    pub layer: usize,
    pub technique: Technique,
    pub bits: u8,
    pub requested_sparsity: f64,
    pub granularity: Granularity,
    pub mirrored_from: Option<usize>,
    pub removed_units: Vec<usize>,
    /// Fraction of weights removed with whole structures.
    pub coarse_sparsity: f64,
    /// Fraction of the structurally surviving weights zeroed individually.
    pub fine_sparsity: f64,
    /// Fraction of all weights that are zero-masked.
    pub total_sparsity: f64,
    /// Fraction of the layer's kept input channels that still carry data
    /// after upstream structures were removed.
    pub live_input_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct AppliedPlan {
    pub model: ModelGraph,
    pub resolved: ResolvedPlan,
    pub achieved: Vec<AchievedLayer>,
    pub quant: Vec<QuantParams>,
    pub masks: Vec<PruningMask>,
}

/// Holds a dense model with its calibration data and caches the expensive
/// per-layer analyses (gradients, reconstruction problems and refits) so
/// that many plans can be applied cheaply. Safe to share across threads.
pub struct Compressor {
    dense: ModelGraph,
    calib: Dataset,
    cfg: CompressConfig,
    grads: OnceLock<Vec<Tensor>>,
    acts: OnceLock<LayerActivations>,
    fm: Vec<OnceLock<FmProblem>>,
    fm_cache: Mutex<HashMap<(usize, usize), Arc<(PruningMask, Tensor)>>>,
}

impl Compressor {
    pub fn new(dense: ModelGraph, calib: &Dataset, cfg: CompressConfig) -> Result<Self> {
        if calib.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let calib = calib.head(cfg.calib_samples.max(1));
        let n = dense.num_layers();
        Ok(Compressor {
            dense,
            calib,
            cfg,
            grads: OnceLock::new(),
            acts: OnceLock::new(),
            fm: (0..n).map(|_| OnceLock::new()).collect(),
            fm_cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn dense(&self) -> &ModelGraph {
        &self.dense
    }

    pub fn config(&self) -> &CompressConfig {
        &self.cfg
    }

    pub fn calibration(&self) -> &Dataset {
        &self.calib
    }

    fn gradients(&self) -> Result<&[Tensor]> {
        if let Some(g) = self.grads.get() {
            return Ok(g);
        }
        let g = loss_gradients(&self.dense, &self.calib)?;
        Ok(self.grads.get_or_init(|| g))
    }

    fn activations(&self) -> Result<&LayerActivations> {
        if let Some(a) = self.acts.get() {
            return Ok(a);
        }
        let a = LayerActivations::collect(&self.dense, &self.calib)?;
        Ok(self.acts.get_or_init(|| a))
    }

    fn fm_problem(&self, l: usize) -> Result<&FmProblem> {
        if let Some(p) = self.fm[l].get() {
            return Ok(p);
        }
        let acts = self.activations()?;
        let p = FmProblem::new(&self.dense.layers[l], &acts.per_layer[l], self.cfg.fm_rows, self.cfg.seed)?;
        Ok(self.fm[l].get_or_init(|| p))
    }

    /// Prunes one layer of the dense model. Returns the mask and, for
    /// reconstruction pruning, the refit weights.
    pub fn prune_layer(
        &self,
        l: usize,
        technique: Technique,
        sparsity: f64,
        seed: u64,
    ) -> Result<(PruningMask, Option<Tensor>)> {
        let layer = &self.dense.layers[l];
        let desc = &layer.desc;
        let w = layer.weights.data();
        let fc = desc.kind == LayerKind::Fc;
        let mask = match technique {
            Technique::Level => prune::prune_level(l, w, sparsity),
            Technique::Sensitivity => prune::prune_sensitivity(l, w, self.gradients()?[l].data(), sparsity)?,
            Technique::Splicing => prune::prune_splicing(desc, w, sparsity, self.cfg.splice_band),
            Technique::L1Ranked | Technique::L2Ranked => {
                let norm = if technique == Technique::L1Ranked {
                    RankNorm::L1
                } else {
                    RankNorm::L2
                };
                let pattern = if fc { Granularity::Row } else { self.cfg.ranked_pattern };
                prune::prune_ranked(desc, w, sparsity, norm, pattern)?
            }
            Technique::Bernoulli => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (l as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                prune::prune_bernoulli(desc, sparsity, &mut rng)
            }
            Technique::FmReconstruction if fc => {
                prune::prune_fc_rows_by_output(layer, &self.activations()?.per_layer[l], sparsity)
            }
            Technique::FmReconstruction => {
                let count = unit_count(sparsity, desc.in_channels);
                let key = (l, count);
                if let Some(hit) = self.fm_cache.lock().unwrap().get(&key) {
                    return Ok((hit.0.clone(), Some(hit.1.clone())));
                }
                let (mask, refit) = prune::prune_fm_reconstruction(layer, self.fm_problem(l)?, sparsity)?;
                self.fm_cache
                    .lock()
                    .unwrap()
                    .insert(key, Arc::new((mask.clone(), refit.clone())));
                return Ok((mask, Some(refit)));
            }
        };
        Ok((mask, None))
    }

    /// Compresses a fresh copy of the dense model according to `plan`.
    /// `seed` drives the random techniques.
    pub fn apply(&self, plan: &CompressionPlan, seed: u64) -> Result<AppliedPlan> {
        plan.validate_for(&self.dense, self.cfg.s_cap + 1e-12)?;
        let resolved = resolve_dependencies(&self.dense, plan, self.cfg.ranked_pattern)?;
        let n = self.dense.num_layers();

        let mut own: Vec<Option<(PruningMask, Option<Tensor>)>> = vec![None; n];
        for (l, ra) in resolved.actions.iter().enumerate() {
            if ra.mirror.is_none() {
                own[l] = Some(self.prune_layer(l, ra.action.technique, ra.action.sparsity, seed)?);
            }
        }
        let mirrored: Vec<Option<PruningMask>> = resolved
            .actions
            .iter()
            .enumerate()
            .map(|(l, ra)| {
                ra.mirror.map(|src| {
                    let (m, _) = own[src].as_ref().expect("mirror source pruned");
                    PruningMask::structured(&self.dense.layers[l].desc, m.granularity, m.removed_units.clone())
                })
            })
            .collect();
        let mut masks = Vec::with_capacity(n);
        let mut refits = Vec::with_capacity(n);
        for (l, m) in mirrored.into_iter().enumerate() {
            match m {
                Some(m) => {
                    masks.push(m);
                    refits.push(None);
                }
                None => {
                    let (m, r) = own[l].take().expect("layer pruned");
                    masks.push(m);
                    refits.push(r);
                }
            }
        }

        let mut model = self.dense.clone();
        for (l, layer) in model.layers.iter_mut().enumerate() {
            if let Some(r) = refits[l].take() {
                layer.weights = r;
            }
            let m = &masks[l];
            for (w, &k) in layer.weights.data_mut().iter_mut().zip(&m.keep) {
                if !k {
                    *w = 0.0;
                }
            }
            layer.dead_outputs = if m.granularity.removes_outputs() && !m.removed_units.is_empty() {
                let mut dead = vec![false; layer.desc.out_channels];
                for &u in &m.removed_units {
                    dead[u] = true;
                }
                Some(dead)
            } else {
                None
            };
            layer.input_quant = None;
        }

        let acts = LayerActivations::collect(&model, &self.calib)?;
        let mut quant = Vec::with_capacity(n);
        for (l, layer) in model.layers.iter_mut().enumerate() {
            let bits = resolved.actions[l].action.bits;
            let (channels, w) = quantize_weights(&layer.weights, Some(&masks[l].keep), bits)?;
            let flat: Vec<f32> = acts.per_layer[l].iter().flatten().copied().collect();
            let activation = ActivationQuant::calibrate(&flat, bits)?;
            layer.weights = w;
            layer.input_quant = activation;
            quant.push(QuantParams {
                bits,
                channels,
                activation,
            });
        }

        let achieved = achieved_layers(&model, &resolved, &masks);
        Ok(AppliedPlan {
            model,
            resolved,
            achieved,
            quant,
            masks,
        })
    }
}

/// One-off application of a plan (no caching across calls).
pub fn apply_plan(
    model: &ModelGraph,
    plan: &CompressionPlan,
    calib: &Dataset,
    cfg: &CompressConfig,
    seed: u64,
) -> Result<AppliedPlan> {
    Compressor::new(model.clone(), calib, cfg.clone())?.apply(plan, seed)
}

/// Output channels of each layer that are identically zero.
pub fn dead_output_channels(model: &ModelGraph) -> Vec<Vec<bool>> {
    let mut dead: Vec<Vec<bool>> = Vec::with_capacity(model.num_layers());
    for (l, layer) in model.layers.iter().enumerate() {
        let mut d = layer
            .dead_outputs
            .clone()
            .unwrap_or_else(|| vec![false; layer.desc.out_channels]);
        if let Some(j) = model.junction_into(l) {
            for (c, v) in d.iter_mut().enumerate() {
                *v = *v && dead[j.producer][c];
            }
        }
        dead.push(d);
    }
    dead
}

/// Per input channel (conv) or input feature (fc): does it carry data?
pub fn live_inputs(model: &ModelGraph, dead: &[Vec<bool>], l: usize) -> Vec<bool> {
    let layer = &model.layers[l];
    let n = layer.desc.in_channels;
    let Source::Layer(src) = layer.source else {
        return vec![true; n];
    };
    let src_dead = &dead[src];
    match layer.transform {
        InputTransform::Identity | InputTransform::GlobalAvgPool => (0..n).map(|i| !src_dead[i]).collect(),
        InputTransform::Flatten => {
            let per = (n / src_dead.len()).max(1);
            (0..n).map(|i| !src_dead[i / per]).collect()
        }
    }
}

fn achieved_layers(model: &ModelGraph, resolved: &ResolvedPlan, masks: &[PruningMask]) -> Vec<AchievedLayer> {
    let dead = dead_output_channels(model);
    resolved
        .actions
        .iter()
        .enumerate()
        .map(|(l, ra)| {
            let desc = &model.layers[l].desc;
            let m = &masks[l];
            let total = m.sparsity();
            let units = prune::unit_total(desc, m.granularity);
            let coarse = if m.granularity.is_structured() && units > 0 {
                m.removed_units.len() as f64 / units as f64
            } else {
                0.0
            };
            let fine = if m.granularity.is_structured() || total == 0.0 {
                0.0
            } else {
                total
            };
            let live = live_inputs(model, &dead, l);
            let kept: Vec<usize> = if matches!(m.granularity, Granularity::Channel | Granularity::Row) {
                (0..desc.in_channels).filter(|c| !m.removed_units.contains(c)).collect()
            } else {
                (0..desc.in_channels).collect()
            };
            let live_input_fraction = if kept.is_empty() {
                0.0
            } else {
                kept.iter().filter(|&&c| live[c]).count() as f64 / kept.len() as f64
            };
            AchievedLayer {
                layer: l,
                technique: ra.action.technique,
                bits: ra.action.bits,
                requested_sparsity: ra.action.sparsity,
                granularity: m.granularity,
                mirrored_from: ra.mirror,
                removed_units: m.removed_units.clone(),
                coarse_sparsity: coarse,
                fine_sparsity: fine,
                total_sparsity: total,
                live_input_fraction,
            }
        })
        .collect()
}
