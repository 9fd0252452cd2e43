use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::agents::StateEncoder;
use crate::compress::{
    technique_granularity, AchievedLayer, CompressionAction, CompressionPlan, Compressor,
};
use crate::dataset::{load_dataset, Dataset, Split};
use crate::energy::{
    achieved_energy, analytic_cost_provider, baseline_layer_energies, layer_energy, load_cost_profile,
    reduction_coefficients, CostProfile, EnergyBreakdown, PowerRatioTable,
};
use crate::error::{Error, Result};
use crate::model::{evaluate_accuracy, load_model, ModelGraph};
use crate::reward::{build_lut, RewardLUT};

/// The three splits of a dataset root.
#[derive(Debug, Clone)]
pub struct DataSplits {
    pub calibration: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

impl DataSplits {
    pub fn load(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        let calibration = load_dataset(root.join("calibration"), None, Split::TrainCalib)?;
        let k = calibration.num_classes();
        Ok(DataSplits {
            validation: load_dataset(root.join("validation"), Some(k), Split::Validation)?,
            test: load_dataset(root.join("test"), Some(k), Split::Test)?,
            calibration,
        })
    }
}

/// Everything measured for one compression plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub plan: CompressionPlan,
    pub accuracy: f64,
    /// Percentage points below the baseline accuracy.
    pub accuracy_loss: f64,
    /// Percent of the dense energy saved.
    pub energy_gain: f64,
    pub reward: f64,
    pub energy: EnergyBreakdown,
    pub achieved: Vec<AchievedLayer>,
}

/// Shared evaluator for every searcher: compress, measure accuracy on the
/// validation subset, price the energy, look up the reward.
pub struct Environment {
    pub compressor: Compressor,
    pub validation: Dataset,
    pub profile: CostProfile,
    pub table: PowerRatioTable,
    pub lut: RewardLUT,
    pub baseline_accuracy: f64,
    pub encoder: StateEncoder,
    pub s_cap: f64,
    baseline_energy: Vec<f64>,
}

impl Environment {
    /// `validation` is the full split; the subset is drawn from it once.
    pub fn new(
        model: ModelGraph,
        calibration: &Dataset,
        validation: &Dataset,
        profile: CostProfile,
        table: PowerRatioTable,
        lut: RewardLUT,
        cfg: &RunConfig,
    ) -> Result<Self> {
        table.validate()?;
        if profile.layers.len() != model.num_layers() {
            return Err(Error::Config(format!(
                "cost profile has {} layers, model has {}",
                profile.layers.len(),
                model.num_layers()
            )));
        }
        let subset = validation.sample_fraction(cfg.validation_fraction, cfg.seed)?;
        let baseline_energy = baseline_layer_energies(&profile);
        let encoder = StateEncoder::new(&model, &baseline_energy);
        let compressor = Compressor::new(model, calibration, cfg.compress_config())?;
        let mut env = Environment {
            compressor,
            validation: subset,
            profile,
            table,
            lut,
            baseline_accuracy: 0.0,
            encoder,
            s_cap: cfg.s_cap,
            baseline_energy,
        };
        let noop = CompressionPlan::noop(env.num_layers());
        let applied = env.compressor.apply(&noop, cfg.seed)?;
        env.baseline_accuracy = evaluate_accuracy(&applied.model, &env.validation)?;
        Ok(env)
    }

    /// Loads model, data, cost profile, power table and reward table from
    /// the configured paths.
    pub fn from_config(cfg: &RunConfig) -> Result<(Self, DataSplits)> {
        let model_path = cfg.paths.model.as_ref().ok_or_else(|| Error::Config("paths.model is not set".into()))?;
        let data_path = cfg.paths.dataset.as_ref().ok_or_else(|| Error::Config("paths.dataset is not set".into()))?;
        let model = load_model(model_path)?;
        let data = DataSplits::load(data_path)?;
        let (profile, table) = load_energy_inputs(&model, cfg.paths.cost_profile.as_deref(), cfg.paths.rq_table.as_deref())?;
        let lut = match &cfg.paths.lut {
            Some(p) => RewardLUT::load_csv(p, &cfg.lut)?,
            None => build_lut(&cfg.lut)?,
        };
        let env = Environment::new(model, &data.calibration, &data.validation, profile, table, lut, cfg)?;
        Ok((env, data))
    }

    pub fn num_layers(&self) -> usize {
        self.compressor.dense().num_layers()
    }

    pub fn dense(&self) -> &ModelGraph {
        self.compressor.dense()
    }

    pub fn baseline_energy(&self) -> &[f64] {
        &self.baseline_energy
    }

    pub fn evaluate(&self, plan: &CompressionPlan, seed: u64) -> Result<Evaluation> {
        self.evaluate_on(plan, seed, &self.validation, self.baseline_accuracy)
    }

    /// Evaluates on `data`, measuring loss against `baseline`.
    pub fn evaluate_on(&self, plan: &CompressionPlan, seed: u64, data: &Dataset, baseline: f64) -> Result<Evaluation> {
        let applied = self.compressor.apply(plan, seed)?;
        let accuracy = evaluate_accuracy(&applied.model, data)?;
        let energy = achieved_energy(&self.profile, &self.table, &applied.achieved)?;
        let accuracy_loss = (baseline - accuracy) * 100.0;
        let energy_gain = energy.gain * 100.0;
        let reward = self.lut.lookup(accuracy_loss, energy_gain)?;
        Ok(Evaluation {
            plan: plan.clone(),
            accuracy,
            accuracy_loss,
            energy_gain,
            reward,
            energy,
            achieved: applied.achieved,
        })
    }

    /// Energy a requested action is expected to save on its layer, before
    /// dependency resolution.
    pub fn estimated_reduction(&self, action: &CompressionAction) -> f64 {
        let l = action.layer;
        let kind = self.dense().layers[l].desc.kind;
        let g = technique_granularity(action.technique, kind, self.compressor.config().ranked_pattern);
        let c = reduction_coefficients(action.sparsity, action.bits, g, &self.table);
        let (m, k) = layer_energy(&self.profile.layers[l], self.profile.e_comp, self.profile.e_mem, &c);
        self.baseline_energy[l] - (m + k)
    }
}

/// Cost profile (analytic when `None`) and power table (default when
/// `None`).
pub fn load_energy_inputs(
    model: &ModelGraph,
    cost_profile: Option<&Path>,
    rq_table: Option<&Path>,
) -> Result<(CostProfile, PowerRatioTable)> {
    let profile = match cost_profile {
        Some(p) => load_cost_profile(p, model)?,
        None => analytic_cost_provider(model),
    };
    let table = match rq_table {
        Some(p) => PowerRatioTable::load(p)?,
        None => PowerRatioTable::default(),
    };
    table.validate()?;
    Ok((profile, table))
}
