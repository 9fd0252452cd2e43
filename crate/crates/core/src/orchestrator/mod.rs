//! Run configuration, the shared evaluator, the agent, random and genetic
//! searches, plan evaluation and the built-in experiments.

mod config;
mod env;
mod experiments;
mod report;
mod search;

pub use config::{GaConfig, Paths, RewardMode, RunConfig, SEED_ENV};
pub use env::{load_energy_inputs, DataSplits, Environment, Evaluation};
pub use experiments::{
    precision_front, pruning_sweep, sweep_csv, uniform_vs_mixed, weakly_dominates, PrecisionPoint, SweepPoint,
    UniformVsMixed,
};
pub use report::{energy_report, evaluate_plan, EnergyReport, LayerEnergyRow, LayerMetrics, PlanMetrics};
pub use search::{
    build_agent, pareto_front, run_episode, run_ga_search, run_random_search, run_search, EpisodeRecord, ParetoPoint,
    ProbeSet, SearchReport, Searcher,
};

use crate::error::{Error, Result};

/// Seed for item `index` of an independent random stream.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03))
        .wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs `f` on a pool of `threads` workers (0: the global pool).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    if threads == 0 {
        return f();
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?
        .install(f)
}
