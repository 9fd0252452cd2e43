use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{RewardMode, RunConfig};
use super::env::{Environment, Evaluation};
use super::{derive_seed, with_threads};
use crate::agents::{map_actions, CompositeAgent, Step};
use crate::compress::{CompressionAction, CompressionPlan, Technique};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::evaluate_accuracy;
use crate::nsga2::{decode_genome, evolve, fast_nondominated_sort, GENES_PER_LAYER};

const STREAM_RL: u64 = 1;
const STREAM_RANDOM: u64 = 2;
const STREAM_GA: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Searcher {
    Rl,
    Random,
    Nsga2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub plan: CompressionPlan,
    pub accuracy: f64,
    pub accuracy_loss: f64,
    pub energy_gain: f64,
    pub reward: f64,
    /// Exploration noise used for this episode (agent searches only).
    pub sigma: Option<f64>,
    pub warmup: bool,
    /// Technique agent unlocked after this episode.
    pub unlocked: bool,
    /// This episode's reward triggered the unlock.
    pub unlock_event: bool,
}

impl EpisodeRecord {
    fn from_evaluation(episode: usize, e: Evaluation) -> Self {
        EpisodeRecord {
            episode,
            plan: e.plan,
            accuracy: e.accuracy,
            accuracy_loss: e.accuracy_loss,
            energy_gain: e.energy_gain,
            reward: e.reward,
            sigma: None,
            warmup: false,
            unlocked: false,
            unlock_event: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub episode: usize,
    pub accuracy_loss: f64,
    pub energy_gain: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub searcher: Searcher,
    pub seed: u64,
    pub baseline_accuracy: f64,
    pub best: EpisodeRecord,
    pub pareto: Vec<ParetoPoint>,
    pub unlocked_at: Option<usize>,
    pub records: Vec<EpisodeRecord>,
    pub elapsed_secs: f64,
}

impl SearchReport {
    fn new(searcher: Searcher, seed: u64, baseline_accuracy: f64, records: Vec<EpisodeRecord>, started: Instant) -> Result<Self> {
        let best = records
            .iter()
            .fold(None::<&EpisodeRecord>, |acc, r| match acc {
                Some(b) if b.reward >= r.reward => Some(b),
                _ => Some(r),
            })
            .ok_or_else(|| Error::InvalidArgument("search produced no records".into()))?
            .clone();
        Ok(SearchReport {
            searcher,
            seed,
            baseline_accuracy,
            best,
            pareto: pareto_front(&records),
            unlocked_at: records.iter().find(|r| r.unlock_event).map(|r| r.episode),
            records,
            elapsed_secs: started.elapsed().as_secs_f64(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per record with the running best reward.
    pub fn curve_csv(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Row {
            episode: usize,
            accuracy_loss: f64,
            energy_gain: f64,
            reward: f64,
            best_reward: f64,
            sigma: Option<f64>,
            unlocked: bool,
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut best = f64::NEG_INFINITY;
        for r in &self.records {
            best = best.max(r.reward);
            w.serialize(Row {
                episode: r.episode,
                accuracy_loss: r.accuracy_loss,
                energy_gain: r.energy_gain,
                reward: r.reward,
                best_reward: best,
                sigma: r.sigma,
                unlocked: r.unlocked,
            })?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Non-dominated (low loss, high gain) records, sorted by loss. Duplicate
/// points keep their first episode.
pub fn pareto_front(records: &[EpisodeRecord]) -> Vec<ParetoPoint> {
    let objs: Vec<Vec<f64>> = records.iter().map(|r| vec![r.accuracy_loss, -r.energy_gain]).collect();
    let Some(front) = fast_nondominated_sort(&objs).into_iter().next() else {
        return Vec::new();
    };
    let mut pts: Vec<ParetoPoint> = Vec::new();
    for i in front {
        let r = &records[i];
        if pts.iter().any(|p| p.accuracy_loss == r.accuracy_loss && p.energy_gain == r.energy_gain) {
            continue;
        }
        pts.push(ParetoPoint {
            episode: r.episode,
            accuracy_loss: r.accuracy_loss,
            energy_gain: r.energy_gain,
            reward: r.reward,
        });
    }
    pts.sort_by(|a, b| a.accuracy_loss.total_cmp(&b.accuracy_loss).then(a.energy_gain.total_cmp(&b.energy_gain)));
    pts
}

/// Small subset rewarding intermediate steps in probe mode.
#[derive(Debug, Clone)]
pub struct ProbeSet {
    pub data: Dataset,
    pub baseline_accuracy: f64,
}

impl ProbeSet {
    pub fn new(env: &Environment, samples: usize, seed: u64) -> Result<Self> {
        let data = env.validation.head(samples);
        let noop = env.compressor.apply(&CompressionPlan::noop(env.num_layers()), seed)?;
        let baseline_accuracy = evaluate_accuracy(&noop.model, &data)?;
        Ok(ProbeSet { data, baseline_accuracy })
    }
}

/// Agent with its value support matched to the reward table.
pub fn build_agent(cfg: &RunConfig, env: &Environment) -> CompositeAgent {
    let mut ac = cfg.agent_config();
    let scale = match cfg.reward_mode {
        RewardMode::TerminalOnly | RewardMode::Broadcast => 1.0,
        RewardMode::Probe => ac.rainbow.n_step as f64,
    };
    ac.rainbow.v_min = env.lut.min_cell().min(-1.0) * scale;
    ac.rainbow.v_max = env.lut.max_cell().max(0.0) * scale;
    CompositeAgent::new(ac, derive_seed(cfg.seed, STREAM_RL, u64::MAX))
}

/// One pass over the layers followed by compression, evaluation and the
/// agent's end-of-episode update. `probe` is required in probe mode.
pub fn run_episode(
    agent: &mut CompositeAgent,
    env: &Environment,
    episode: usize,
    seed: u64,
    mode: RewardMode,
    probe: Option<&ProbeSet>,
) -> Result<EpisodeRecord> {
    let probe = match (mode, probe) {
        (RewardMode::Probe, None) => return Err(Error::Config("probe mode needs a probe set".into())),
        (RewardMode::Probe, p) => p,
        _ => None,
    };
    let n = env.num_layers();
    let mut steps: Vec<Step> = Vec::with_capacity(n);
    let mut actions: Vec<CompressionAction> = Vec::with_capacity(n);
    let mut e_red = 0.0;
    let mut prev = 0.0;
    let eval_seed = derive_seed(seed, STREAM_RL, episode as u64);
    for t in 0..n {
        let state = env.encoder.state(t, e_red, prev);
        let d = agent.decide(&state, true);
        let (sparsity, bits) = map_actions(d.action[0], d.action[1], env.s_cap);
        let action = CompressionAction {
            layer: t,
            technique: Technique::ALL[d.technique],
            sparsity,
            bits,
        };
        e_red += env.estimated_reduction(&action);
        prev = d.action[0];
        actions.push(action);
        let reward = match probe {
            Some(p) if t + 1 < n => {
                let partial: Vec<CompressionAction> = (0..n)
                    .map(|l| if l <= t { actions[l] } else { CompressionAction::noop(l) })
                    .collect();
                env.evaluate_on(&CompressionPlan::new(partial), eval_seed, &p.data, p.baseline_accuracy)
                    .map_err(|e| Error::Plan(format!("episode {episode}, probe step {t}: {e}")))?
                    .reward
            }
            _ => 0.0,
        };
        steps.push(Step {
            state: state.normalized,
            action: d.action,
            technique: d.technique,
            reward,
        });
    }
    let plan = CompressionPlan::new(actions);
    let eval = env
        .evaluate(&plan, eval_seed)
        .map_err(|e| Error::Plan(format!("episode {episode}: {e}")))?;
    if mode == RewardMode::Broadcast {
        for s in &mut steps {
            s.reward = eval.reward;
        }
    } else if let Some(last) = steps.last_mut() {
        last.reward = eval.reward;
    }
    let sigma = agent.ddpg.sigma;
    let warmup = agent.in_warmup();
    let was_unlocked = agent.monitor.is_unlocked();
    agent.end_episode(&steps, eval.reward)?;
    let unlocked = agent.monitor.is_unlocked();
    Ok(EpisodeRecord {
        sigma: Some(sigma),
        warmup,
        unlocked,
        unlock_event: unlocked && !was_unlocked,
        ..EpisodeRecord::from_evaluation(episode, eval)
    })
}

/// Runs the agent search. `on_episode` sees every record and the agent
/// after its update (checkpointing, progress).
pub fn run_search(
    cfg: &RunConfig,
    env: &Environment,
    mut on_episode: impl FnMut(&EpisodeRecord, &CompositeAgent) -> Result<()>,
) -> Result<(SearchReport, CompositeAgent)> {
    cfg.validate()?;
    let started = Instant::now();
    let mut agent = build_agent(cfg, env);
    let probe = match cfg.reward_mode {
        RewardMode::Probe => Some(ProbeSet::new(env, cfg.probe_samples, cfg.seed)?),
        RewardMode::TerminalOnly | RewardMode::Broadcast => None,
    };
    let mut records = Vec::with_capacity(cfg.episodes);
    for e in 0..cfg.episodes {
        let rec = run_episode(&mut agent, env, e, cfg.seed, cfg.reward_mode, probe.as_ref())?;
        on_episode(&rec, &agent)?;
        records.push(rec);
    }
    let report = SearchReport::new(Searcher::Rl, cfg.seed, env.baseline_accuracy, records, started)?;
    Ok((report, agent))
}

fn evaluate_genomes(env: &Environment, genomes: &[Vec<f64>], seed: u64, stream: u64, first: usize) -> Result<Vec<Evaluation>> {
    genomes
        .par_iter()
        .enumerate()
        .map(|(i, g)| {
            let plan = decode_genome(g, env.s_cap)?;
            env.evaluate(&plan, derive_seed(seed, stream, (first + i) as u64))
        })
        .collect()
}

fn random_genomes(len: usize, count: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..count).map(|_| (0..len).map(|_| rng.random::<f64>()).collect()).collect()
}

/// Uniform-random policy: `episodes` independent plans.
pub fn run_random_search(cfg: &RunConfig, env: &Environment) -> Result<SearchReport> {
    cfg.validate()?;
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_RANDOM, u64::MAX));
    let genomes = random_genomes(env.num_layers() * GENES_PER_LAYER, cfg.episodes, &mut rng);
    let evals = with_threads(cfg.threads, || evaluate_genomes(env, &genomes, cfg.seed, STREAM_RANDOM, 0))?;
    let records = evals
        .into_iter()
        .enumerate()
        .map(|(i, e)| EpisodeRecord::from_evaluation(i, e))
        .collect();
    SearchReport::new(Searcher::Random, cfg.seed, env.baseline_accuracy, records, started)
}

/// NSGA-II on the same evaluator and budget as the agent search.
pub fn run_ga_search(cfg: &RunConfig, env: &Environment) -> Result<SearchReport> {
    cfg.validate()?;
    let ga = cfg.nsga2_config()?;
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_GA, u64::MAX));
    let mut records: Vec<EpisodeRecord> = Vec::with_capacity(cfg.episodes);
    with_threads(cfg.threads, || {
        evolve(env.num_layers() * GENES_PER_LAYER, &ga, &mut rng, |genomes| {
            let first = records.len();
            let evals = evaluate_genomes(env, genomes, cfg.seed, STREAM_GA, first)?;
            let rewards = evals.iter().map(|e| e.reward).collect();
            records.extend(
                evals
                    .into_iter()
                    .enumerate()
                    .map(|(i, e)| EpisodeRecord::from_evaluation(first + i, e)),
            );
            Ok(rewards)
        })
    })?;
    SearchReport::new(Searcher::Nsga2, cfg.seed, env.baseline_accuracy, records, started)
}
