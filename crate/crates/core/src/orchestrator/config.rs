use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::AgentConfig;
use crate::compress::CompressConfig;
use crate::error::{Error, Result};
use crate::nsga2::Nsga2Config;
use crate::reward::LutConfig;

pub const SEED_ENV: &str = "CFORGE_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// Intermediate steps get 0, the last step gets the episode reward.
    #[default]
    TerminalOnly,
    /// Every step is rewarded from a partial plan evaluated on a small
    /// probe subset; the last step uses the full validation subset.
    Probe,
    /// Every step carries the episode reward as a terminal one-step
    /// transition.
    Broadcast,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Model container directory.
    pub model: Option<PathBuf>,
    /// Dataset root holding `calibration/`, `validation/` and `test/`.
    pub dataset: Option<PathBuf>,
    pub cost_profile: Option<PathBuf>,
    pub rq_table: Option<PathBuf>,
    /// CSV overriding the generated reward table.
    pub lut: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaConfig {
    pub population: usize,
    pub eta_c: f64,
    pub eta_m: f64,
    pub crossover_rate: f64,
    pub mutation_rate: Option<f64>,
}

impl Default for GaConfig {
    fn default() -> Self {
        let n = Nsga2Config::default();
        GaConfig {
            population: n.population,
            eta_c: n.eta_c,
            eta_m: n.eta_m,
            crossover_rate: n.crossover_rate,
            mutation_rate: n.mutation_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Evaluation budget shared by every searcher.
    pub episodes: usize,
    pub warmup: usize,
    pub validation_fraction: f64,
    pub seed: u64,
    pub s_cap: f64,
    pub reward_mode: RewardMode,
    pub probe_samples: usize,
    /// Worker threads for parallel evaluation; 0 picks the machine default.
    pub threads: usize,
    /// Save an agent checkpoint every this many episodes; 0 saves only the
    /// final agent.
    pub checkpoint_every: usize,
    pub agent: AgentConfig,
    pub compress: CompressConfig,
    pub ga: GaConfig,
    pub lut: LutConfig,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            episodes: 1100,
            warmup: 100,
            validation_fraction: 0.10,
            seed: 0,
            s_cap: 0.9,
            reward_mode: RewardMode::TerminalOnly,
            probe_samples: 64,
            threads: 0,
            checkpoint_every: 0,
            agent: AgentConfig::default(),
            compress: CompressConfig::default(),
            ga: GaConfig::default(),
            lut: LutConfig::default(),
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a TOML file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(base) = path.parent() {
            cfg.paths.rebase(base);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies a seed override given as text (the value of `CFORGE_SEED`).
    pub fn override_seed(&mut self, value: Option<&str>) -> Result<()> {
        if let Some(v) = value {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn apply_env(&mut self) -> Result<()> {
        let v = std::env::var(SEED_ENV).ok();
        self.override_seed(v.as_deref())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.episodes == 0 {
            return bad("episodes must be positive".into());
        }
        if self.warmup >= self.episodes {
            return bad(format!("warmup {} must be below episodes {}", self.warmup, self.episodes));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction <= 1.0) {
            return bad(format!("validation_fraction {} outside (0, 1]", self.validation_fraction));
        }
        if !(self.s_cap > 0.0 && self.s_cap <= 1.0) {
            return bad(format!("s_cap {} outside (0, 1]", self.s_cap));
        }
        if self.reward_mode == RewardMode::Probe && self.probe_samples == 0 {
            return bad("probe mode needs probe_samples > 0".into());
        }
        if self.ga.population == 0 {
            return bad("ga.population must be positive".into());
        }
        Ok(())
    }

    /// Agent settings with the run-level warm-up and annealing horizon.
    pub fn agent_config(&self) -> AgentConfig {
        AgentConfig {
            warmup: self.warmup,
            beta_episodes: self.episodes,
            bootstrap: self.reward_mode != RewardMode::Broadcast,
            ..self.agent.clone()
        }
    }

    pub fn compress_config(&self) -> CompressConfig {
        CompressConfig {
            s_cap: self.s_cap,
            seed: self.seed,
            ..self.compress.clone()
        }
    }

    /// GA settings spending exactly `episodes` evaluations.
    pub fn nsga2_config(&self) -> Result<Nsga2Config> {
        let pop = self.ga.population;
        if self.episodes % pop != 0 {
            return Err(Error::Config(format!(
                "episodes {} is not a multiple of ga.population {pop}",
                self.episodes
            )));
        }
        Ok(Nsga2Config {
            population: pop,
            generations: self.episodes / pop,
            eta_c: self.ga.eta_c,
            eta_m: self.ga.eta_m,
            crossover_rate: self.ga.crossover_rate,
            mutation_rate: self.ga.mutation_rate,
        })
    }
}

impl Paths {
    fn rebase(&mut self, base: &Path) {
        for p in [
            &mut self.model,
            &mut self.dataset,
            &mut self.cost_profile,
            &mut self.rq_table,
            &mut self.lut,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}
